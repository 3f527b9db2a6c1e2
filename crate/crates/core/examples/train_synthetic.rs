// Trains the dual encoder with the hybrid objective on separable synthetic
// data and prints the per-epoch report.
//
// cargo run --release --example train_synthetic

use polytuplet::data::{generate_synthetic, Difficulty};
use polytuplet::training::train;
use polytuplet::{TrainConfig, TrainReport};

pub fn run_example(n_train: usize, n_test: usize, epochs: usize) -> polytuplet::Result<TrainReport> {
    let train_set = generate_synthetic(n_train, 64, 4, Difficulty::Separable, 1)?;
    let test_set = generate_synthetic(n_test, 64, 4, Difficulty::Separable, 2)?;
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let (_params, report) = train(&train_set, &test_set, &cfg)?;
    println!("initial test accuracy {:.3}", report.initial_test_accuracy);
    for e in &report.epochs {
        println!(
            "epoch {:>2}  loss {:.4} (poly {:.4}, cce {:.4})  train {:.3}  test {:.3}  hard/semi/easy {}/{}/{}",
            e.epoch,
            e.loss_total,
            e.loss_polytuplet.unwrap_or(0.0),
            e.loss_cce,
            e.train_accuracy,
            e.test_accuracy,
            e.mining.hard,
            e.mining.semi_hard,
            e.mining.easy,
        );
    }
    println!(
        "best test accuracy {:.3} at epoch {} in {:.1}s",
        report.best_test_accuracy, report.best_epoch, report.wall_clock_seconds
    );
    Ok(report)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example(2000, 500, 30).map(|_| ())
}
