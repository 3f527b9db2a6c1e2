// Loads ReClor-format JSON, prints the label histogram and makes a stratified
// split. Pass a directory holding `train.json` and `val.json`; without one, a
// small file in the same format is written and loaded instead.
//
// cargo run --example reclor_ingest -- /path/to/reclor

use std::path::PathBuf;

use polytuplet::data::{
    generate_synthetic, label_histogram, load_reclor_json, save_dataset_json, split_dataset,
    Difficulty,
};

pub fn run_example(dir: Option<PathBuf>) -> polytuplet::Result<Vec<usize>> {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let files = match dir {
        Some(dir) => vec![dir.join("train.json"), dir.join("val.json")],
        None => {
            let path = scratch.path().join("sample.json");
            save_dataset_json(&path, &generate_synthetic(40, 64, 4, Difficulty::Noisy, 0)?)?;
            vec![path]
        }
    };
    let mut corpus = Vec::new();
    for f in &files {
        let part = load_reclor_json(f)?;
        println!("{}: {} instances", f.display(), part.len());
        corpus.extend(part);
    }
    let hist = label_histogram(&corpus);
    println!("total {} instances, labels {:?}", corpus.len(), hist);

    let split = split_dataset(&corpus, 0.1, 0)?;
    println!(
        "split: {} train / {} test, test labels {:?}",
        split.train.len(),
        split.test.len(),
        label_histogram(&split.test)
    );
    Ok(hist)
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example(std::env::args_os().nth(1).map(PathBuf::from)).map(|_| ())
}
