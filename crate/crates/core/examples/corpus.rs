// Synthetic related languages, the replica suite, file round trips and the
// corpus statistics table.

use mtlab::corpus::{
    generate_synth_pair, load_corpus, make_shared_task_replica, stats, template_sentences, Manifest, PairId, Split, SynthLangSpec,
};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let sentences = template_sentences();
    let root = SynthLangSpec::random("xa", 7);
    let near = SynthLangSpec::related(&root, 0.8, "xb", 8);
    let far = SynthLangSpec::related(&root, 0.2, "xc", 9);
    println!("lexicon overlap with xa: xb {}, xc {}", near.shared_entries(&root), far.shared_entries(&root));
    for s in sentences.iter().take(2) {
        println!("es: {}", s.text());
        for l in [&root, &near, &far] {
            println!("  {}: {}", l.code, l.translate(s));
        }
    }

    let pair = generate_synth_pair(&near, &sentences, (20, 5, 5))?;
    let dir = tempfile::tempdir()?;
    let (src, tgt) = (dir.path().join("train.es"), dir.path().join("train.xb"));
    pair.write_split(Split::Train, &src, &tgt)?;
    let back = load_corpus(&src, &tgt, PairId::new("es", "xb")?, Split::Train)?;
    assert_eq!(back.pairs(Split::Train), pair.pairs(Split::Train));

    println!("\n{}", stats(&make_shared_task_replica(1)).render());
    println!("{}", Manifest::americasnlp_2023().stats()?.render());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
