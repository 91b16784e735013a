//! Loads a text file as a character-level token stream with train, valid
//! and test splits, and exports a few generated task samples as records.
//!
//! `cargo run --example text_corpus -- path/to/file.txt`

use std::path::PathBuf;

use topk_attention::tasks::{load_text_corpus, write_records, CopyTask, Split, SplitRatios, Task, VocabMode};

fn main() -> topk_attention::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("topk_attention_corpus.txt");
            let text: String = (1..=40).map(|i| format!("{i}. It was the best of times.\n")).collect();
            std::fs::write(&p, text)?;
            p
        }
    };
    let corpus = load_text_corpus(&path, VocabMode::Char, SplitRatios::default())?;
    println!("{}: {} tokens, vocabulary {}", path.display(), corpus.tokens().len(), corpus.vocab_size());
    for split in [Split::Train, Split::Valid, Split::Test] {
        let part = corpus.split(split);
        let head = corpus.detokenize(&part[..part.len().min(30)])?;
        println!("{split:?}: {} tokens, starts {:?}", part.len(), String::from_utf8_lossy(&head));
    }

    let task = CopyTask::new(3, 5, 8);
    let stdout = std::io::stdout();
    write_records(&mut stdout.lock(), 0, &task.samples(0, 3))?;
    Ok(())
}
