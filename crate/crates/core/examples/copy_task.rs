// Teacher-forced training of the default model on a small copy task, then
// batched greedy decoding.

use mtlab::corpus::{generate_synth_pair, template_sentences, SynthLangSpec};
use mtlab::model::ModelConfig;
use mtlab::tokenizer::train_bpe;
use mtlab::training::{corpus_examples, evaluate_loss, train, Model, TrainConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let sentences = template_sentences();
    let corpus = generate_synth_pair(&SynthLangSpec::identity("cp"), &sentences, (32, 0, 0))?;
    let pool: Vec<String> = sentences.iter().map(|s| s.text()).collect();
    let vocab = train_bpe(&pool, 512, &["cp"])?;
    let model = Model::init(vocab, &ModelConfig::default(), 1)?;
    println!("{} parameters", model.params.param_count());

    let cfg = TrainConfig {
        epochs: 100,
        learning_rate: 3e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let (examples, _) = corpus_examples(&model.vocab, &corpus, &cfg, 64)?;
    let (params, log) = train(&model.params, &examples, &cfg)?;
    for e in log.epochs.iter().filter(|e| e.epoch % 20 == 0 || e.epoch == 1) {
        println!("epoch {:>3}: mean loss {:.4}", e.epoch, e.mean_loss);
    }
    println!("eval loss {:.4} after {} steps", evaluate_loss(&params, &examples, 16)?, log.steps);

    let trained = Model { vocab: model.vocab, params };
    let sources: Vec<&str> = corpus.rows.iter().map(|r| r.source.as_str()).collect();
    let out = trained.translate(&sources, "cp", 64)?;
    let exact = out.iter().zip(&sources).filter(|(h, s)| h.as_str() == **s).count();
    println!("{exact}/{} copied exactly; e.g. {:?}", sources.len(), out[0]);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
