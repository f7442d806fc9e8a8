//! n-best rescoring with a sequence scorer conditioned on a prompt prefix.

use std::collections::HashSet;

use super::{DecodeError, Hypothesis, Result};
use crate::num::Real;
use crate::tokenizer::TokenId;

/// Scores a candidate continuation of a decoder prefix (e.g. a hotword
/// prompt). Implementations must be deterministic.
pub trait SequenceScorer<S> {
    fn score(&self, prefix: &[TokenId], candidate: &[TokenId]) -> S;
}

impl<S, F> SequenceScorer<S> for F
where
    F: Fn(&[TokenId], &[TokenId]) -> S,
{
    fn score(&self, prefix: &[TokenId], candidate: &[TokenId]) -> S {
        self(prefix, candidate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rescored<S> {
    pub hypothesis: Hypothesis<S>,
    pub attention_score: S,
    pub combined: S,
}

/// Re-ranks `nbest` by `w * log_score + (1 - w) * scorer(prompt, tokens)`.
/// The sort is stable, so ties keep their input order.
pub fn attention_rescore<S: Real, Sc: SequenceScorer<S> + ?Sized>(
    nbest: &[Hypothesis<S>],
    scorer: &Sc,
    prompt: &[TokenId],
    ctc_weight: S,
) -> Result<Vec<Rescored<S>>> {
    if !(ctc_weight >= S::zero() && ctc_weight <= S::one()) {
        return Err(DecodeError::InvalidWeight(ctc_weight.as_f64()));
    }
    let mut out: Vec<Rescored<S>> = nbest
        .iter()
        .map(|h| {
            let attention_score = scorer.score(prompt, &h.tokens);
            // Skip zero-weighted terms so -inf never meets 0.
            let combined = if ctc_weight == S::one() {
                h.log_score
            } else if ctc_weight == S::zero() {
                attention_score
            } else {
                ctc_weight * h.log_score + (S::one() - ctc_weight) * attention_score
            };
            Rescored { hypothesis: h.clone(), attention_score, combined }
        })
        .collect();
    out.sort_by(|a, b| b.combined.partial_cmp(&a.combined).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Reference scorer: seeded pseudo-random bigram log-probabilities plus a
/// bonus for every candidate token covered by a bigram that also occurs in
/// the prompt body.
#[derive(Clone, Debug)]
pub struct BigramPromptScorer<S> {
    pub seed: u64,
    /// Bigram log-probabilities are drawn from `[floor, ceil]`.
    pub floor: S,
    pub ceil: S,
    pub prompt_bonus: S,
    /// Prompt delimiters; tokens outside them are ignored when matching.
    pub delimiters: Option<(TokenId, TokenId)>,
}

impl<S: Real> BigramPromptScorer<S> {
    pub fn new(seed: u64, prompt_bonus: S, delimiters: Option<(TokenId, TokenId)>) -> Self {
        Self { seed, floor: S::lit(-4.0), ceil: S::lit(-0.5), prompt_bonus, delimiters }
    }

    fn bigram(&self, prev: u64, tok: TokenId) -> S {
        let u = (splitmix(self.seed ^ splitmix(prev.wrapping_mul(0x1_0000_0001) ^ tok as u64)) >> 11) as f64
            / (1u64 << 53) as f64;
        self.floor + (self.ceil - self.floor) * S::lit(u)
    }

    fn prompt_body<'a>(&self, prefix: &'a [TokenId]) -> &'a [TokenId] {
        match self.delimiters {
            None => prefix,
            Some((start, end)) => {
                let Some(s) = prefix.iter().position(|&t| t == start) else {
                    return &[];
                };
                let rest = &prefix[s + 1..];
                let e = rest.iter().position(|&t| t == end).unwrap_or(rest.len());
                &rest[..e]
            }
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl<S: Real> SequenceScorer<S> for BigramPromptScorer<S> {
    fn score(&self, prefix: &[TokenId], candidate: &[TokenId]) -> S {
        let mut prev = u64::MAX;
        let mut total = S::zero();
        for &tok in candidate {
            total += self.bigram(prev, tok);
            prev = tok as u64;
        }
        let body = self.prompt_body(prefix);
        let pairs: HashSet<(TokenId, TokenId)> = body.windows(2).map(|w| (w[0], w[1])).collect();
        let mut covered = vec![false; candidate.len()];
        for (i, w) in candidate.windows(2).enumerate() {
            if pairs.contains(&(w[0], w[1])) {
                covered[i] = true;
                covered[i + 1] = true;
            }
        }
        let hits = covered.iter().filter(|&&c| c).count();
        total + self.prompt_bonus * S::lit(hits as f64)
    }
}
