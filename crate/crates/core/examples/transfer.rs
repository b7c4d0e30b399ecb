// The four ways of building a low-resource model, at toy scale: direct
// fine-tuning of a multilingual base, an intermediate all-pairs stage,
// bilingual transfer, and training from scratch.

use mtlab::corpus::{make_multilingual_pretraining_pairs, make_shared_task_replica, ParallelCorpus, Row, Split};
use mtlab::model::ModelConfig;
use mtlab::training::{
    build_intermediate, build_shared_vocab, finetune_direct, finetune_from_intermediate, pretrain_base, BaseKind, Model,
    TrainConfig,
};

fn head(c: &ParallelCorpus, train: usize, eval: usize) -> ParallelCorpus {
    let keep = |s: Split, n: usize| c.split(s).take(n).cloned().collect::<Vec<Row>>();
    let mut rows = keep(Split::Train, train);
    rows.extend(keep(Split::Dev, eval));
    ParallelCorpus { pair: c.pair.clone(), rows }
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let replica = make_shared_task_replica(1);
    let en = head(&replica[0], 600, 20);
    let pt = head(&make_multilingual_pretraining_pairs(1)[1], 600, 20);
    let low: Vec<ParallelCorpus> = replica[1..4].iter().map(|c| head(c, 120, 20)).collect();

    let mut all: Vec<&ParallelCorpus> = vec![&en, &pt];
    all.extend(&low);
    let vocab = build_shared_vocab(&all, &[], 400)?;
    let mc = ModelConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 32,
        d_ff: 64,
        max_seq_len: 64,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let cfg = |epochs, seed| TrainConfig {
        epochs,
        learning_rate: 3e-3,
        seed,
        ..TrainConfig::default()
    };

    let (multi, log) = pretrain_base(BaseKind::Multilingual, &[en.clone(), pt.clone()], &vocab, &mc, &cfg(2, 1))?;
    println!("multilingual base: losses {:.3?}, en dev chrF2 {:.1}", log.losses(), multi.score(&en, Split::Dev)?);
    let (bi, _) = pretrain_base(BaseKind::Bilingual, std::slice::from_ref(&en), &vocab, &mc, &cfg(2, 2))?;
    let (inter, _) = build_intermediate(&multi, &low, &cfg(1, 3))?;

    println!("{:<5} {:>8} {:>8} {:>8} {:>8}", "pair", "direct", "inter", "bi", "scratch");
    for pair in &low {
        let code = &pair.pair.target;
        let (m1, _) = finetune_direct(&multi, pair, &cfg(3, 4))?;
        let (m2, _) = finetune_from_intermediate(&inter, pair, &cfg(3, 4))?;
        let (m4, _) = finetune_direct(&bi, pair, &cfg(3, 4))?;
        let init = Model::init(vocab.clone(), &mc, 5)?;
        let (sc, _) = finetune_direct(&init, pair, &cfg(3, 4))?;
        let s = |m: &Model| m.score(pair, Split::Dev);
        println!("{code:<5} {:>8.2} {:>8.2} {:>8.2} {:>8.2}", s(&m1)?, s(&m2)?, s(&m4)?, s(&sc)?);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
