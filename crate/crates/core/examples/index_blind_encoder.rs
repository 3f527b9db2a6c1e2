// Answers are encoded as independent rows, so shuffling them only shuffles
// their embeddings and the predicted index follows the correct answer.
//
// cargo run --example index_blind_encoder

use polytuplet::data::{generate_synthetic, Difficulty};
use polytuplet::encoder::{embed, EncoderParams};
use polytuplet::training::predict;
use polytuplet::{ModelConfig, Mode};

pub fn run_example() -> polytuplet::Result<bool> {
    let params = EncoderParams::init(ModelConfig::default(), 1)?;
    let inst = generate_synthetic(1, 64, 4, Difficulty::Separable, 3)?.remove(0);

    let mut reversed = inst.clone();
    reversed.answers.reverse();
    let n = inst.answers.len();

    let a = embed(std::slice::from_ref(&inst), &params, Mode::Eval, 0)?;
    let b = embed(std::slice::from_ref(&reversed), &params, Mode::Eval, 0)?;
    let same_context = a.context[0] == b.context[0];
    let mirrored = (0..n).all(|j| a.results[0][j] == b.results[0][n - 1 - j]);
    let pa = predict(&inst, &params)?.index;
    let pb = predict(&reversed, &params)?.index;

    println!("context embedding unchanged: {same_context}");
    println!("result embeddings reversed:  {mirrored}");
    println!("prediction {pa} -> {pb} (expected {})", n - 1 - pa);
    Ok(same_context && mirrored && pb == n - 1 - pa)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example().map(|_| ())
}
