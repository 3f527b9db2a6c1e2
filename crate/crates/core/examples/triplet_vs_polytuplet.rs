// With two answers per question the polytuplet loss is the triplet loss with
// `alpha = margin`; with more answers it sums one hinge per distractor.
//
// cargo run --example triplet_vs_polytuplet

use polytuplet::loss::{polytuplet_loss, triplet_loss};
use polytuplet::{Embedding, EmbeddingBatch, PolytupletConfig, TripletConfig};

fn e(x: f64, y: f64) -> Embedding {
    Embedding(vec![x, y])
}

pub fn run_example() -> polytuplet::Result<(f64, f64, f64)> {
    let anchor = e(1.0, 0.0);
    let positive = e(0.6, 0.8);
    let negative = e(0.0, 1.0);
    let cfg = PolytupletConfig {
        margin: 1.5,
        ..PolytupletConfig::default()
    };

    let tri = triplet_loss(&anchor, &positive, &negative, &TripletConfig { alpha: cfg.margin })?;
    let pair = EmbeddingBatch::new(
        vec![anchor.clone()],
        vec![vec![positive.clone(), negative.clone()]],
        vec![0],
    )?;
    let poly2 = polytuplet_loss(&pair, &cfg)?;
    println!("triplet            {:.6}", tri.value);
    println!("polytuplet, N = 2  {:.6}", poly2.value);

    let four = EmbeddingBatch::new(
        vec![anchor],
        vec![vec![positive, negative, e(0.8, 0.6), e(-1.0, 0.0)]],
        vec![0],
    )?;
    let poly4 = polytuplet_loss(&four, &cfg)?;
    println!("polytuplet, N = 4  {:.6}", poly4.value);
    println!("context gradient   {:?}", poly4.grad_context[0]);
    Ok((tri.value, poly2.value, poly4.value))
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example().map(|_| ())
}
