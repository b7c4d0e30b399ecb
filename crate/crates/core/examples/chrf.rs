// Segment- and corpus-level chrF2.

use mtlab::metrics::{chrf_corpus, chrf_segment, ngram_stats, ChrFConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ChrFConfig::default();
    let hyps = ["the cat sat on the mat", "a dog barked", ""];
    let refs = ["the cat sat on a mat", "the dog barked loudly", "silence"];
    for (h, r) in hyps.iter().zip(&refs) {
        println!("{:>6.2}  {h:?} vs {r:?}", chrf_segment(h, r, &cfg));
    }
    // Micro-averaged: n-gram statistics are summed before the F-score.
    println!("corpus {:.2}", chrf_corpus(&hyps, &refs, &cfg)?);

    let two = ChrFConfig { max_order: 2, ..cfg };
    let s = ngram_stats("ab", "abc", &two);
    for (n, o) in s.orders.iter().enumerate() {
        println!("n={} matched={} hyp={} ref={}", n + 1, o.matched, o.hyp_total, o.ref_total);
    }
    println!("chrF2(ab, abc; N=2) = {:.2}", chrf_segment("ab", "abc", &two));
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
