//! Deterministic synthetic languages.
//!
//! Source sentences come from a small slot grammar
//! (`subject verb object [time]`, each noun phrase `det noun [adj]`). A target
//! language is a transducer over those sentences: word-by-word lexicon
//! substitution, a suffix glued onto the last word of selected chunks, and a
//! permutation of the chunk order.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{CorpusError, PairId, ParallelCorpus, Row, Split};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Subject,
    Verb,
    Object,
    Time,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Subject, Role::Verb, Role::Object, Role::Time];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chunk {
    pub role: Role,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceSentence {
    pub chunks: Vec<Chunk>,
}

impl SourceSentence {
    pub fn text(&self) -> String {
        let words: Vec<&str> = self
            .chunks
            .iter()
            .flat_map(|c| c.words.iter().map(String::as_str))
            .collect();
        words.join(" ")
    }
}

const DETERMINERS: [&str; 4] = ["el", "la", "un", "una"];
const SUBJECTS: [&str; 16] = [
    "perro", "gato", "niño", "niña", "mujer", "hombre", "maestro", "abuela", "pájaro", "caballo", "vecino",
    "doctora", "granjero", "pescador", "hermano", "amiga",
];
const VERBS: [&str; 16] = [
    "come", "ve", "busca", "lleva", "compra", "vende", "cocina", "lava", "pinta", "encuentra", "toma", "trae",
    "quiere", "limpia", "mira", "guarda",
];
const OBJECTS: [&str; 20] = [
    "manzana", "pan", "agua", "libro", "casa", "mesa", "camisa", "pescado", "maíz", "papa", "flor", "carta",
    "piedra", "cesta", "sombrero", "leña", "olla", "semilla", "fruta", "tela",
];
const ADJECTIVES: [&str; 10] = [
    "roja", "grande", "pequeña", "nueva", "vieja", "blanca", "negra", "bonita", "verde", "dulce",
];
const TIMES: [&str; 8] = ["hoy", "ayer", "mañana", "siempre", "ahora", "temprano", "tarde", "nunca"];

/// Number of packaged template sentences.
pub const TEMPLATE_COUNT: usize = 8000;

/// Every word the grammar can produce, sorted.
pub fn source_vocabulary() -> Vec<String> {
    let set: BTreeSet<&str> = DETERMINERS
        .iter()
        .chain(&SUBJECTS)
        .chain(&VERBS)
        .chain(&OBJECTS)
        .chain(&ADJECTIVES)
        .chain(&TIMES)
        .copied()
        .collect();
    set.into_iter().map(String::from).collect()
}

/// The packaged list of distinct template sentences, identical on every
/// platform.
pub fn template_sentences() -> Vec<SourceSentence> {
    let mut rng = SplitMix64::new(0x7E3B_1A7E_5EED_0001);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(TEMPLATE_COUNT);
    let np = |rng: &mut SplitMix64, nouns: &[&str], role| {
        let mut words = vec![rng.choose(&DETERMINERS).to_string(), rng.choose(nouns).to_string()];
        if rng.below(3) == 0 {
            words.push(rng.choose(&ADJECTIVES).to_string());
        }
        Chunk { role, words }
    };
    while out.len() < TEMPLATE_COUNT {
        let mut chunks = vec![
            np(&mut rng, &SUBJECTS, Role::Subject),
            Chunk {
                role: Role::Verb,
                words: vec![rng.choose(&VERBS).to_string()],
            },
            np(&mut rng, &OBJECTS, Role::Object),
        ];
        if rng.below(2) == 0 {
            chunks.push(Chunk {
                role: Role::Time,
                words: vec![rng.choose(&TIMES).to_string()],
            });
        }
        let s = SourceSentence { chunks };
        if seen.insert(s.text()) {
            out.push(s);
        }
    }
    out
}

const CONSONANTS: [&str; 16] = ["p", "t", "k", "m", "n", "s", "r", "w", "y", "h", "ch", "q", "l", "ts", "x", "ñ"];
const VOWELS: [&str; 9] = ["a", "e", "i", "o", "u", "ä", "ë", "ɨ", "á"];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Phonology {
    consonants: Vec<&'static str>,
    vowels: Vec<&'static str>,
}

impl Phonology {
    fn random(rng: &mut SplitMix64) -> Self {
        let mut c = CONSONANTS.to_vec();
        rng.shuffle(&mut c);
        c.truncate(8 + rng.below(5));
        let mut v = VOWELS[..5].to_vec();
        // Optional marked vowels and diacritics.
        for extra in &VOWELS[5..] {
            if rng.below(3) == 0 {
                v.push(extra);
            }
        }
        Phonology { consonants: c, vowels: v }
    }

    fn word(&self, rng: &mut SplitMix64, max_syllables: usize) -> String {
        let n = 1 + rng.below(max_syllables);
        (0..n)
            .map(|_| format!("{}{}", rng.choose(&self.consonants), rng.choose(&self.vowels)))
            .collect()
    }
}

/// Parameters of one synthetic target language.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLangSpec {
    pub code: String,
    pub seed: u64,
    /// Source word → target word.
    pub lexicon: BTreeMap<String, String>,
    /// Marker glued to the last word of a chunk with this role.
    pub suffixes: BTreeMap<Role, String>,
    /// Output order of chunks; roles absent from a sentence are skipped.
    pub order: Vec<Role>,
    /// Fraction of lexicon entries shared with the parent language (1 for a root).
    pub relatedness: f64,
}

impl SynthLangSpec {
    pub fn vocab_size(&self) -> usize {
        self.lexicon.len()
    }

    /// Source order, no suffixes, every word maps to itself.
    pub fn identity(code: &str) -> Self {
        SynthLangSpec {
            code: code.to_string(),
            seed: 0,
            lexicon: source_vocabulary().into_iter().map(|w| (w.clone(), w)).collect(),
            suffixes: BTreeMap::new(),
            order: Role::ALL.to_vec(),
            relatedness: 1.0,
        }
    }

    /// A fresh language with its own lexicon, chunk order and suffixes.
    pub fn random(code: &str, seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, code);
        let phon = Phonology::random(&mut rng);
        let lexicon = fresh_lexicon(&mut rng, &phon, &source_vocabulary(), &HashSet::new(), &HashSet::new());
        let (order, suffixes) = random_grammar(&mut rng, &phon);
        SynthLangSpec {
            code: code.to_string(),
            seed,
            lexicon,
            suffixes,
            order,
            relatedness: 1.0,
        }
    }

    /// A language sharing exactly `⌈rho · |lexicon|⌉` entries with `parent`;
    /// the remaining entries use words absent from the parent's lexicon.
    /// Word order and suffixes are drawn independently.
    pub fn related(parent: &SynthLangSpec, rho: f64, code: &str, seed: u64) -> Self {
        let rho = rho.clamp(0.0, 1.0);
        let mut rng = SplitMix64::derive(seed, code);
        let phon = Phonology::random(&mut rng);
        let mut words: Vec<String> = parent.lexicon.keys().cloned().collect();
        rng.shuffle(&mut words);
        let shared = (rho * words.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        let (keep, redraw) = words.split_at(shared.min(words.len()));
        let banned: HashSet<String> = parent.lexicon.values().cloned().collect();
        let kept: HashSet<String> = keep.iter().map(|w| parent.lexicon[w].clone()).collect();
        let mut lexicon = fresh_lexicon(&mut rng, &phon, redraw, &banned, &kept);
        for w in keep {
            lexicon.insert(w.clone(), parent.lexicon[w].clone());
        }
        let (order, suffixes) = random_grammar(&mut rng, &phon);
        SynthLangSpec {
            code: code.to_string(),
            seed,
            lexicon,
            suffixes,
            order,
            relatedness: rho,
        }
    }

    pub fn translate(&self, sentence: &SourceSentence) -> String {
        let mut out: Vec<String> = Vec::new();
        for role in &self.order {
            for chunk in sentence.chunks.iter().filter(|c| c.role == *role) {
                let n = chunk.words.len();
                for (i, w) in chunk.words.iter().enumerate() {
                    let mut t = self.lexicon.get(w).cloned().unwrap_or_else(|| w.clone());
                    if i + 1 == n {
                        if let Some(s) = self.suffixes.get(role) {
                            t.push_str(s);
                        }
                    }
                    out.push(t);
                }
            }
        }
        out.join(" ")
    }

    /// Number of source words mapped to the same target word by both specs.
    pub fn shared_entries(&self, other: &SynthLangSpec) -> usize {
        self.lexicon
            .iter()
            .filter(|(k, v)| other.lexicon.get(*k) == Some(v))
            .count()
    }
}

fn fresh_lexicon(
    rng: &mut SplitMix64,
    phon: &Phonology,
    words: &[String],
    banned: &HashSet<String>,
    taken: &HashSet<String>,
) -> BTreeMap<String, String> {
    let mut used: HashSet<String> = taken.clone();
    let mut sorted = words.to_vec();
    sorted.sort();
    sorted
        .into_iter()
        .map(|w| {
            let mut attempt = 0;
            let t = loop {
                let cand = phon.word(rng, 2 + attempt / 20);
                attempt += 1;
                if !banned.contains(&cand) && !used.contains(&cand) {
                    break cand;
                }
            };
            used.insert(t.clone());
            (w, t)
        })
        .collect()
}

fn random_grammar(rng: &mut SplitMix64, phon: &Phonology) -> (Vec<Role>, BTreeMap<Role, String>) {
    let mut core = vec![Role::Subject, Role::Verb, Role::Object];
    rng.shuffle(&mut core);
    let order = if rng.below(2) == 0 {
        [vec![Role::Time], core].concat()
    } else {
        [core, vec![Role::Time]].concat()
    };
    let mut suffixes = BTreeMap::new();
    for role in Role::ALL {
        if rng.below(2) == 0 {
            suffixes.insert(role, phon.word(rng, 1));
        }
    }
    (order, suffixes)
}

/// Draws `train + dev + test` distinct source sentences (seeded by the spec)
/// and translates them. Splits are disjoint by construction.
pub fn generate_synth_pair(
    spec: &SynthLangSpec,
    source_sentences: &[SourceSentence],
    sizes: (usize, usize, usize),
) -> Result<ParallelCorpus, CorpusError> {
    let pair = PairId::new("es", &spec.code)?;
    let mut seen = HashSet::new();
    let mut pool: Vec<&SourceSentence> = source_sentences
        .iter()
        .filter(|s| seen.insert(s.text()))
        .collect();
    let needed = sizes.0 + sizes.1 + sizes.2;
    if pool.len() < needed {
        return Err(CorpusError::Size {
            needed,
            available: pool.len(),
        });
    }
    let mut rng = SplitMix64::derive(spec.seed, &format!("draw:{}", spec.code));
    rng.shuffle(&mut pool);
    let splits = std::iter::repeat_n(Split::Train, sizes.0)
        .chain(std::iter::repeat_n(Split::Dev, sizes.1))
        .chain(std::iter::repeat_n(Split::Test, sizes.2));
    let rows = pool
        .into_iter()
        .zip(splits)
        .map(|(s, split)| Row {
            source: s.text(),
            target: spec.translate(s),
            split,
        })
        .collect();
    Ok(ParallelCorpus { pair, rows })
}
