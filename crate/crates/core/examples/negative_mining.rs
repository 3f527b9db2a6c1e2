// Hard, semi-hard and easy negatives, and how their weights change the loss.
//
// cargo run --example negative_mining

use polytuplet::loss::polytuplet_loss;
use polytuplet::mining::{classify_negatives, MiningCounts};
use polytuplet::{Embedding, EmbeddingBatch, PolytupletConfig};

pub fn run_example() -> polytuplet::Result<MiningCounts> {
    let angle = |deg: f64| {
        let r = deg.to_radians();
        Embedding(vec![r.cos(), r.sin()])
    };
    // Positive at 60°; one negative closer (hard), one a little farther
    // (semi-hard), one opposite (easy).
    let batch = EmbeddingBatch::new(
        vec![angle(0.0)],
        vec![vec![angle(60.0), angle(30.0), angle(80.0), angle(180.0)]],
        vec![0],
    )?;
    let margin = 1.0;
    let report = classify_negatives(&batch, margin)?;
    println!("categories {:?}", report.mask[0]);
    println!("counts     {:?}", report.counts);

    for (w_hard, w_semi) in [(1.0, 1.0), (2.0, 1.0), (1.0, 0.0)] {
        let cfg = PolytupletConfig {
            margin,
            w_hard,
            w_semi,
            ..PolytupletConfig::default()
        };
        let loss = polytuplet_loss(&batch, &cfg)?;
        println!("w_hard {w_hard} w_semi {w_semi}: loss {:.4}", loss.value);
    }
    Ok(report.counts)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example().map(|_| ())
}
