// CCE-only versus hybrid training on the same data and seed.
//
// cargo run --release --example compare_baseline

use polytuplet::data::{generate_synthetic, Difficulty};
use polytuplet::training::{compare_modes, Comparison};
use polytuplet::TrainConfig;

pub fn run_example(n_train: usize, n_test: usize, epochs: usize) -> polytuplet::Result<Comparison> {
    let train_set = generate_synthetic(n_train, 64, 4, Difficulty::Noisy, 11)?;
    let test_set = generate_synthetic(n_test, 64, 4, Difficulty::Noisy, 12)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let cmp = compare_modes(&train_set, &test_set, &cfg)?;
    print!("{}", cmp.table());
    Ok(cmp)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example(1000, 300, 10).map(|_| ())
}
