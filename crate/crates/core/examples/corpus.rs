//! Character vocabulary, train/validation split and batch sampling.
//!
//! ```text
//! cargo run --example corpus -- [path]
//! ```

use std::path::PathBuf;

use mlvc::data::{load_corpus, Dataset, Split, TextMode};

fn main() -> mlvc::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("data/shakespeare.txt"), PathBuf::from);
    let corpus = load_corpus(&path, TextMode::Utf8, 64)?;
    let data = Dataset::new(&corpus);
    println!(
        "{}: {} chars, sha256 {}",
        path.display(),
        corpus.chars(),
        corpus.sha256
    );
    println!(
        "vocab {} symbols (id {} is unknown)",
        data.vocab.size(),
        data.vocab.unk()
    );
    println!(
        "train tokens {:?}, validation tokens {:?}",
        data.range(Split::Train),
        data.range(Split::Val)
    );
    let batch = data.stream(2, 48, 0)?.next().expect("stream is infinite");
    for r in 0..batch.batch {
        let row = &batch.inputs[r * batch.seq..(r + 1) * batch.seq];
        println!(
            "offset {:>7}: {:?}",
            batch.offsets[r],
            data.vocab.decode(row)
        );
    }
    Ok(())
}
