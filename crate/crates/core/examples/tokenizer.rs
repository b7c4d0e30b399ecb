// Train a byte-level BPE vocabulary with language tags, then encode and
// decode with both framings.

use mtlab::tokenizer::{train_bpe, Framing, Vocab};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = [
        "ñuqaqa wasiyman risaq",
        "ñuqaqa mikhuyta munani",
        "wasiyman kutimusaq",
        "jiwasanakax wasinakar sarapxta",
        "Asháninka, Hñähñu, Wixárika",
    ];
    let vocab = train_bpe(&corpus, 300, &["quy", "aym"])?;
    println!("{} symbols, {} merges, tags for {:?}", vocab.len(), vocab.merges().len(), vocab.languages());

    let text = "ñuqaqa wasiyman kutimusaq";
    let src = vocab.encode(text, Framing::Source("quy"))?;
    let tgt = vocab.encode(text, Framing::Target)?;
    println!("source ids {src:?}");
    println!("target ids {tgt:?}");
    let pieces: Vec<String> = src[1..src.len() - 1]
        .iter()
        .map(|&id| String::from_utf8_lossy(vocab.symbol_bytes(id).unwrap_or_default()).into_owned())
        .collect();
    println!("pieces {pieces:?}");
    assert_eq!(vocab.decode(&src)?, text);

    // Unseen bytes fall back to single-byte symbols, so nothing is lost.
    let odd = "e\u{301} ☃ \u{1F600}";
    assert_eq!(vocab.decode(&vocab.encode(odd, Framing::Target)?)?, odd);

    // The vocabulary is saved as plain text.
    let back = Vocab::from_text(&vocab.to_text())?;
    assert_eq!(back, vocab);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
