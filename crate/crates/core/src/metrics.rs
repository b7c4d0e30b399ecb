//! Character n-gram F-score (chrF), segment and corpus level.
//!
//! For each order `n` in `1..=N`, clipped matches are counted between the
//! character n-gram multisets of hypothesis and reference. Precision and
//! recall are averaged over orders, then combined as
//! `100 · (1+β²)·P·R / (β²·P + R)`.
//!
//! Orders where *both* strings are shorter than `n` carry no information and
//! are left out of the averages. An order where only one side has n-grams
//! contributes 0 to both precision and recall. A segment with no usable
//! order at all (e.g. two empty strings) scores 0.

use std::collections::HashMap;
use std::ops::AddAssign;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("hypotheses and references differ in length: {hyps} vs {refs}")]
    Alignment { hyps: usize, refs: usize },
    #[error("no segments to score")]
    Empty,
    #[error("invalid chrF config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChrFConfig {
    pub max_order: usize,
    pub beta: f64,
    pub strip_whitespace: bool,
}

impl Default for ChrFConfig {
    /// chrF2: orders 1..=6, β = 2, whitespace removed.
    fn default() -> Self {
        ChrFConfig {
            max_order: 6,
            beta: 2.0,
            strip_whitespace: true,
        }
    }
}

impl ChrFConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.max_order == 0 {
            return Err(MetricError::Config("max_order must be at least 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(MetricError::Config("beta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OrderStats {
    pub matched: u64,
    pub hyp_total: u64,
    pub ref_total: u64,
}

/// Sufficient statistics; summing them over segments gives the corpus score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramStats {
    pub orders: Vec<OrderStats>,
}

impl NGramStats {
    pub fn zero(max_order: usize) -> Self {
        NGramStats {
            orders: vec![OrderStats::default(); max_order],
        }
    }

    /// F-score in `[0, 100]` from these totals.
    pub fn score(&self, beta: f64) -> f64 {
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        let mut used = 0usize;
        for o in &self.orders {
            if o.hyp_total == 0 && o.ref_total == 0 {
                continue;
            }
            used += 1;
            if o.hyp_total > 0 {
                p_sum += o.matched as f64 / o.hyp_total as f64;
            }
            if o.ref_total > 0 {
                r_sum += o.matched as f64 / o.ref_total as f64;
            }
        }
        if used == 0 {
            return 0.0;
        }
        let p = p_sum / used as f64;
        let r = r_sum / used as f64;
        if p == 0.0 && r == 0.0 {
            return 0.0;
        }
        let b2 = beta * beta;
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

impl AddAssign<&NGramStats> for NGramStats {
    fn add_assign(&mut self, rhs: &NGramStats) {
        if self.orders.len() < rhs.orders.len() {
            self.orders.resize(rhs.orders.len(), OrderStats::default());
        }
        for (a, b) in self.orders.iter_mut().zip(&rhs.orders) {
            a.matched += b.matched;
            a.hyp_total += b.hyp_total;
            a.ref_total += b.ref_total;
        }
    }
}

fn chars(s: &str, strip_whitespace: bool) -> Vec<char> {
    s.chars()
        .filter(|c| !(strip_whitespace && c.is_whitespace()))
        .collect()
}

fn counts(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for g in chars.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

pub fn ngram_stats(hyp: &str, reference: &str, config: &ChrFConfig) -> NGramStats {
    let h = chars(hyp, config.strip_whitespace);
    let r = chars(reference, config.strip_whitespace);
    let orders = (1..=config.max_order)
        .map(|n| {
            let hc = counts(&h, n);
            let rc = counts(&r, n);
            let matched = hc
                .iter()
                .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
                .sum();
            OrderStats {
                matched,
                hyp_total: hc.values().sum(),
                ref_total: rc.values().sum(),
            }
        })
        .collect();
    NGramStats { orders }
}

pub fn chrf_segment(hyp: &str, reference: &str, config: &ChrFConfig) -> f64 {
    ngram_stats(hyp, reference, config).score(config.beta)
}

/// Micro-averaged corpus chrF: statistics are summed over all segments and
/// the F formula is applied once.
pub fn chrf_corpus<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    config: &ChrFConfig,
) -> Result<f64, MetricError> {
    config.validate()?;
    if hyps.len() != refs.len() {
        return Err(MetricError::Alignment {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = NGramStats::zero(config.max_order);
    for (h, r) in hyps.iter().zip(refs) {
        total += &ngram_stats(h.as_ref(), r.as_ref(), config);
    }
    Ok(total.score(config.beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize) -> ChrFConfig {
        ChrFConfig {
            max_order: n,
            ..ChrFConfig::default()
        }
    }

    fn triple(s: &NGramStats, n: usize) -> (u64, u64, u64) {
        let o = s.orders[n - 1];
        (o.matched, o.hyp_total, o.ref_total)
    }

    #[test]
    fn identical_strings_stats() {
        let s = ngram_stats("abc", "abc", &cfg(2));
        assert_eq!(triple(&s, 1), (3, 3, 3));
        assert_eq!(triple(&s, 2), (2, 2, 2));
    }

    #[test]
    fn empty_hypothesis_stats() {
        let s = ngram_stats("", "abc", &cfg(6));
        assert!(s.orders.iter().all(|o| o.hyp_total == 0 && o.matched == 0));
        assert_eq!(chrf_segment("", "abc", &cfg(6)), 0.0);
        assert_eq!(chrf_segment("", "", &cfg(6)), 0.0);
    }

    #[test]
    fn prefix_case() {
        let s = ngram_stats("ab", "abc", &cfg(2));
        assert_eq!(triple(&s, 1), (2, 2, 3));
        assert_eq!(triple(&s, 2), (1, 1, 2));
        let expected = 100.0 * 5.0 * (7.0 / 12.0) / (4.0 + 7.0 / 12.0);
        assert!((chrf_segment("ab", "abc", &cfg(2)) - expected).abs() < 1e-12);
        assert_eq!(format!("{:.2}", expected), "63.64");
    }

    #[test]
    fn identical_and_disjoint() {
        let c = ChrFConfig::default();
        assert_eq!(chrf_segment("hola mundo", "hola mundo", &c), 100.0);
        assert_eq!(chrf_segment("ab", "ab", &c), 100.0);
        assert_eq!(chrf_segment("abc", "xyz", &c), 0.0);
    }

    #[test]
    fn whitespace_flag() {
        let c = ChrFConfig::default();
        assert_eq!(chrf_segment("a b c", "abc", &c), 100.0);
        let keep = ChrFConfig {
            strip_whitespace: false,
            ..c
        };
        assert!(chrf_segment("a b c", "abc", &keep) < 100.0);
    }

    #[test]
    fn beta_moves_toward_recall() {
        // P = 1, R = 7/12 for the prefix case.
        let r = 100.0 * 7.0 / 12.0;
        let mut prev = f64::INFINITY;
        for beta in [0.5, 1.0, 2.0, 4.0, 16.0] {
            let c = ChrFConfig {
                max_order: 2,
                beta,
                strip_whitespace: true,
            };
            let s = chrf_segment("ab", "abc", &c);
            assert!((s - r).abs() < (prev - r).abs());
            prev = s;
        }
    }

    #[test]
    fn garbage_suffix_lowers_score() {
        let c = ChrFConfig::default();
        let reference = "the cat sat on the mat";
        let perfect = chrf_segment(reference, reference, &c);
        let worse = chrf_segment(&format!("{reference} qzx"), reference, &c);
        assert!(worse < perfect);
    }

    #[test]
    fn corpus_is_micro_average() {
        let c = ChrFConfig::default();
        let hyps = ["abcdefgh", "x"];
        let refs = ["abcdefgh", "yyyyyyyyyyyy"];
        let micro = chrf_corpus(&hyps, &refs, &c).unwrap();
        let macro_avg = (chrf_segment(hyps[0], refs[0], &c) + chrf_segment(hyps[1], refs[1], &c)) / 2.0;
        let mut total = ngram_stats(hyps[0], refs[0], &c);
        total += &ngram_stats(hyps[1], refs[1], &c);
        assert_eq!(micro, total.score(2.0));
        assert!((micro - macro_avg).abs() > 1.0);
    }

    #[test]
    fn corpus_errors_and_identities() {
        let c = ChrFConfig::default();
        assert_eq!(
            chrf_corpus(&["a"], &["a", "b"], &c).unwrap_err(),
            MetricError::Alignment { hyps: 1, refs: 2 }
        );
        assert_eq!(chrf_corpus::<&str, &str>(&[], &[], &c).unwrap_err(), MetricError::Empty);
        let one = chrf_corpus(&["kaypi wasi"], &["kaypi wasikuna"], &c).unwrap();
        assert_eq!(one, chrf_segment("kaypi wasi", "kaypi wasikuna", &c));
        let hyps = ["abc d", "efg", "hij k"];
        let refs = ["abd c", "egf", "hjk"];
        let base = chrf_corpus(&hyps, &refs, &c).unwrap();
        let h2: Vec<_> = hyps.iter().chain(&hyps).collect();
        let r2: Vec<_> = refs.iter().chain(&refs).collect();
        let h2: Vec<&str> = h2.into_iter().copied().collect();
        let r2: Vec<&str> = r2.into_iter().copied().collect();
        assert_eq!(chrf_corpus(&h2, &r2, &c).unwrap(), base);
    }

    proptest! {
        #[test]
        fn bounded_and_matched_le_totals(h in "[a-e ]{0,20}", r in "[a-e ]{0,20}") {
            let c = ChrFConfig::default();
            let s = ngram_stats(&h, &r, &c);
            for o in &s.orders {
                prop_assert!(o.matched <= o.hyp_total.min(o.ref_total));
            }
            let score = s.score(c.beta);
            prop_assert!((0.0..=100.0).contains(&score));
        }
    }
}
