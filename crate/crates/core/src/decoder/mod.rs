//! CTC prefix beam search with hotword shallow fusion, and n-best
//! rescoring through a pluggable sequence scorer.

mod rescore;
mod trie;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biasing::Posteriorgram;
use crate::num::{log_add, Real};
use crate::tokenizer::TokenId;

pub use rescore::{attention_rescore, BigramPromptScorer, Rescored, SequenceScorer};
pub use trie::{build_context_trie, ContextState, ContextTrie, ROOT};

pub const DEFAULT_BEAM: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_CTC_WEIGHT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("beam width must be at least 1")]
    InvalidBeam,
    #[error("posteriorgram has no frames")]
    EmptyPosteriorgram,
    #[error("biasing weight {0} must be finite and non-negative")]
    InvalidLambda(f64),
    #[error("hotword with no tokens")]
    EmptyPhrase,
    #[error("ctc weight {0} outside [0, 1]")]
    InvalidWeight(f64),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<S> {
    /// Collapsed label sequence (no blanks).
    pub tokens: Vec<TokenId>,
    /// Acoustic log-probability plus `accumulated_bonus`.
    pub log_score: S,
    /// Total log-probability of all alignments of `tokens` kept by the search.
    pub acoustic: S,
    /// Committed hotword bonus.
    pub accumulated_bonus: S,
    pub trie_state: usize,
}

/// n-best exchange record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbestEntry {
    pub tokens: Vec<TokenId>,
    pub log_score: f64,
    pub bonus: f64,
}

impl<S: Real> From<&Hypothesis<S>> for NbestEntry {
    fn from(h: &Hypothesis<S>) -> Self {
        Self {
            tokens: h.tokens.clone(),
            log_score: h.log_score.as_f64(),
            bonus: h.accumulated_bonus.as_f64(),
        }
    }
}

impl<S: Real> From<&NbestEntry> for Hypothesis<S> {
    fn from(e: &NbestEntry) -> Self {
        Self {
            tokens: e.tokens.clone(),
            log_score: S::lit(e.log_score),
            acoustic: S::lit(e.log_score - e.bonus),
            accumulated_bonus: S::lit(e.bonus),
            trie_state: ROOT,
        }
    }
}

#[derive(Clone, Debug)]
struct Beam<S> {
    blank: S,
    non_blank: S,
    context: ContextState<S>,
}

impl<S: Real> Beam<S> {
    fn acoustic(&self) -> S {
        log_add(self.blank, self.non_blank)
    }
}

/// Descending score, then ascending token ids.
fn rank<S: Real>(a: (&[TokenId], S), b: (&[TokenId], S)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

/// CTC prefix beam search.
///
/// Hypotheses are ranked by acoustic log-probability plus hotword bonus.
/// Pass [`ContextTrie::empty`] for unbiased decoding. Returns at most
/// `beam` hypotheses, best first; uncommitted bonuses are dropped at the
/// end.
pub fn ctc_prefix_beam_search<S: Real>(
    pg: &Posteriorgram<S>,
    beam: usize,
    trie: &ContextTrie<S>,
) -> Result<Vec<Hypothesis<S>>> {
    if beam == 0 {
        return Err(DecodeError::InvalidBeam);
    }
    if pg.frames() == 0 {
        return Err(DecodeError::EmptyPosteriorgram);
    }
    let blank = pg.blank();
    let neg_inf = S::neg_infinity();
    let mut beams: Vec<(Vec<TokenId>, Beam<S>)> = vec![(
        Vec::new(),
        Beam { blank: S::zero(), non_blank: neg_inf, context: ContextState::root() },
    )];

    for t in 0..pg.frames() {
        let row = pg.row(t);
        let mut next: HashMap<Vec<TokenId>, Beam<S>> = HashMap::with_capacity(beams.len() * 4);
        for (prefix, b) in &beams {
            let total = b.acoustic();
            let last = prefix.last().copied();

            let stay = next.entry(prefix.clone()).or_insert_with(|| Beam {
                blank: neg_inf,
                non_blank: neg_inf,
                context: b.context,
            });
            stay.blank = log_add(stay.blank, total + row[blank as usize]);
            if let Some(l) = last {
                // Repeated label without an intervening blank collapses.
                stay.non_blank = log_add(stay.non_blank, b.non_blank + row[l as usize]);
            }

            for (c, &p) in row.iter().enumerate() {
                let c = c as TokenId;
                if c == blank || p == neg_inf {
                    continue;
                }
                let from = if Some(c) == last { b.blank } else { total };
                if from == neg_inf {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                let entry = next.entry(extended).or_insert_with(|| Beam {
                    blank: neg_inf,
                    non_blank: neg_inf,
                    context: trie.advance(b.context, c),
                });
                entry.non_blank = log_add(entry.non_blank, from + p);
            }
        }
        let mut ranked: Vec<(Vec<TokenId>, Beam<S>)> = next.into_iter().collect();
        ranked.sort_by(|a, b| {
            rank(
                (&a.0, a.1.acoustic() + a.1.context.bonus()),
                (&b.0, b.1.acoustic() + b.1.context.bonus()),
            )
        });
        ranked.truncate(beam);
        beams = ranked;
    }

    let mut out: Vec<Hypothesis<S>> = beams
        .into_iter()
        .map(|(tokens, b)| {
            let ctx = trie.finalize(b.context);
            let acoustic = b.acoustic();
            Hypothesis {
                tokens,
                log_score: acoustic + ctx.committed,
                acoustic,
                accumulated_bonus: ctx.committed,
                trie_state: ctx.node,
            }
        })
        .collect();
    out.sort_by(|a, b| rank((&a.tokens, a.log_score), (&b.tokens, b.log_score)));
    Ok(out)
}

/// Frame-wise argmax with blank/repeat collapsing.
pub fn greedy_decode<S: Real>(pg: &Posteriorgram<S>) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..pg.frames() {
        let row = pg.row(t);
        let best = (0..row.len())
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a)))
            .unwrap() as TokenId;
        if best != pg.blank() && Some(best) != prev {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pg(rows: &[Vec<f64>]) -> Posteriorgram<f64> {
        Posteriorgram::from_probs(rows, 0).unwrap()
    }

    #[test]
    fn two_frame_single_label() {
        // Paths: aa, a-, -a collapse to "a"; -- to "".
        let p = pg(&[vec![0.1, 0.9], vec![0.1, 0.9]]);
        let out = ctc_prefix_beam_search(&p, 4, &ContextTrie::empty()).unwrap();
        assert_eq!(out[0].tokens, vec![1]);
        let want = (0.81f64 + 0.09 + 0.09).ln();
        assert!((out[0].log_score - want).abs() < 1e-12);
        assert_eq!(out[1].tokens, Vec::<TokenId>::new());
        assert!((out[1].log_score - 0.01f64.ln()).abs() < 1e-12);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn repeats_need_blank_between() {
        let p = pg(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = ctc_prefix_beam_search(&p, 5, &ContextTrie::empty()).unwrap();
        assert_eq!(out[0].tokens, vec![1, 1]);
        assert!(out[0].log_score.abs() < 1e-12);
        assert_eq!(greedy_decode(&p), vec![1, 1]);
    }

    #[test]
    fn zero_lambda_matches_unbiased() {
        let p = Posteriorgram::from_logits(
            &[vec![0.1, 1.0, 0.3, -0.2], vec![0.5, 0.2, 1.1, 0.0], vec![1.0, 0.0, 0.4, 0.9]],
            0,
        )
        .unwrap();
        let trie = ContextTrie::from_sequences([&[2, 3][..], &[1][..]], 0.0).unwrap();
        let a = ctc_prefix_beam_search(&p, 6, &ContextTrie::empty()).unwrap();
        let b = ctc_prefix_beam_search(&p, 6, &trie).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.log_score, y.log_score);
        }
    }

    #[test]
    fn bonus_flips_close_call() {
        // Frame k prefers token 1/3 slightly over hotword tokens 2/4.
        let rows = vec![vec![0.02, 0.50, 0.48, 0.0, 0.0], vec![0.02, 0.0, 0.0, 0.50, 0.48]];
        let p = pg(&rows);
        let none = ctc_prefix_beam_search(&p, 8, &ContextTrie::empty()).unwrap();
        assert_eq!(none[0].tokens, vec![1, 3]);
        let trie = ContextTrie::from_sequences([&[2, 4][..]], 0.5).unwrap();
        let biased = ctc_prefix_beam_search(&p, 8, &trie).unwrap();
        assert_eq!(biased[0].tokens, vec![2, 4]);
        assert_eq!(biased[0].accumulated_bonus, 1.0);
        assert_eq!(biased[0].trie_state, ROOT);
        assert!((biased[0].log_score - biased[0].acoustic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_hotword_gets_no_final_bonus() {
        let p = pg(&[vec![0.1, 0.9, 0.0]]);
        let trie = ContextTrie::from_sequences([&[1, 2][..]], 2.0).unwrap();
        let out = ctc_prefix_beam_search(&p, 3, &trie).unwrap();
        assert_eq!(out[0].tokens, vec![1]);
        assert_eq!(out[0].accumulated_bonus, 0.0);
        assert!((out[0].log_score - 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beam_zero_rejected() {
        let p = pg(&[vec![0.5, 0.5]]);
        assert_eq!(
            ctc_prefix_beam_search(&p, 0, &ContextTrie::empty()).unwrap_err(),
            DecodeError::InvalidBeam
        );
    }

    #[test]
    fn nbest_entry_round_trip() {
        let h = Hypothesis { tokens: vec![3, 4], log_score: -1.0, acoustic: -2.0, accumulated_bonus: 1.0, trie_state: 0 };
        let e = NbestEntry::from(&h);
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"tokens":[3,4],"log_score":-1.0,"bonus":1.0}"#);
        assert_eq!(Hypothesis::<f64>::from(&e), h);
    }
}
