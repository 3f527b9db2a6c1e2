// Compares every analytic gradient against central finite differences.
//
// cargo run --release --example gradient_check

use polytuplet::gradcheck::{run_all, ComponentResult, GradCheckOptions};

pub fn run_example() -> polytuplet::Result<Vec<ComponentResult>> {
    let opts = GradCheckOptions {
        trials: 10,
        ..GradCheckOptions::default()
    };
    let results = run_all(&opts)?;
    for r in &results {
        println!(
            "{:<18} trials {:>3}  max rel err {:.2e}  {}",
            r.component,
            r.trials,
            r.max_relative_error,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(results)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example().map(|_| ())
}
