// Successive halving over sampled margins, dropout rates, learning rates and
// loss weights.
//
// cargo run --release --example tune_hyperparams

use polytuplet::data::{generate_synthetic, Difficulty};
use polytuplet::training::{tune, SearchSpace, TuneConfig, TuneResult};
use polytuplet::{ModelConfig, TrainConfig};

pub fn run_example(n_train: usize, n_test: usize, budget: usize) -> polytuplet::Result<TuneResult> {
    let train_set = generate_synthetic(n_train, 64, 4, Difficulty::Noisy, 5)?;
    let test_set = generate_synthetic(n_test, 64, 4, Difficulty::Noisy, 6)?;
    let base = TrainConfig {
        model: ModelConfig {
            hidden: 32,
            dim: 16,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let tc = TuneConfig {
        n_configs: 9,
        budget,
        eta: 3.0,
        seed: 0,
    };
    let result = tune(&train_set, &test_set, &base, &SearchSpace::standard(), &tc)?;
    println!("rungs {:?}, epochs {:?}", result.rung_sizes, result.rung_epochs);
    for row in &result.leaderboard {
        println!(
            "rung {} trial {} epochs {:>2}  acc {:.3}  margin {:.3}  lr {:.2e}  dropout {:.2}",
            row.rung,
            row.trial,
            row.epochs,
            row.test_accuracy,
            row.config.loss.margin,
            row.config.learning_rate,
            row.config.model.dropout_rate,
        );
    }
    println!("best trial {}", result.best_trial);
    Ok(result)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example(400, 100, 9).map(|_| ())
}
