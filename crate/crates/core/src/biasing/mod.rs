//! Hotword machinery: two-stage phrase filtering over posteriorgrams,
//! prompt construction and the attention-based context fusion layer.
//!
//! Filtering runs a cheap order-agnostic screen first (phrase score
//! confidence, PSC) and a monotone-alignment score second (sequence order
//! confidence, SOC). Both are mean per-token log-posteriors, so
//! `SOC <= PSC` always holds.

mod fusion;
mod posteriorgram;
mod prompt;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::tokenizer::{TokenId, TokenizerError, TokenizerModel};

pub use fusion::{attention_weights, context_fuse, ContextFusionParams, Matrix};
pub use posteriorgram::{Posteriorgram, POSTERIOR_MAGIC, POSTERIOR_VERSION};
pub use prompt::{build_prompt, inference_prompt, Prompt, PromptConfig};

pub const DEFAULT_FILTER_THRESHOLD: f64 = -4.0;
pub const DEFAULT_PROMPT_THRESHOLD: f64 = -2.0;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("hotword {0:?} encodes to no tokens")]
    EmptyPhrase(String),
    #[error("duplicate hotword {0:?}")]
    DuplicatePhrase(String),
    #[error("invalid posteriorgram: {0}")]
    InvalidPosteriorgram(String),
    #[error("malformed posteriorgram file: {0}")]
    BadFormat(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tokenizer has no prompt delimiter tokens")]
    PromptTokensMissing,
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BiasError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hotword {
    pub text: String,
    pub tokens: Vec<TokenId>,
}

/// Ordered list of distinct, non-empty hotwords.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotwordList {
    phrases: Vec<Hotword>,
}

impl HotwordList {
    pub fn new(phrases: Vec<Hotword>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &phrases {
            if p.tokens.is_empty() {
                return Err(BiasError::EmptyPhrase(p.text.clone()));
            }
            if !seen.insert(p.text.as_str()) {
                return Err(BiasError::DuplicatePhrase(p.text.clone()));
            }
        }
        Ok(Self { phrases })
    }

    /// Encodes each phrase with `model`.
    pub fn from_texts<I, T>(texts: I, model: &TokenizerModel) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let phrases = texts
            .into_iter()
            .map(|t| Hotword {
                text: t.as_ref().to_owned(),
                tokens: model.encode(t.as_ref()).ids,
            })
            .collect();
        Self::new(phrases)
    }

    /// One phrase per line; surrounding whitespace and blank lines are
    /// ignored, repeated phrases keep their first occurrence.
    pub fn read_file(path: impl AsRef<Path>, model: &TokenizerModel) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_texts(parse_hotword_lines(&text), model)
    }

    pub fn phrases(&self) -> &[Hotword] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.phrases.iter().map(|p| p.text.as_str()).collect()
    }

    pub fn token_sequences(&self) -> Vec<&[TokenId]> {
        self.phrases.iter().map(|p| p.tokens.as_slice()).collect()
    }

    /// Keeps phrases whose index satisfies `keep`, preserving order.
    pub fn retain_indices(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            phrases: self
                .phrases
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, p)| p.clone())
                .collect(),
        }
    }
}

pub fn parse_hotword_lines(text: &str) -> Vec<&str> {
    let mut seen = HashSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && seen.insert(*l))
        .collect()
}

fn check_phrase<S: Real>(pg: &Posteriorgram<S>, phrase: &[TokenId]) -> Result<()> {
    if phrase.is_empty() {
        return Err(BiasError::EmptyPhrase(String::new()));
    }
    phrase.iter().try_for_each(|&t| pg.check_token(t))
}

/// Phrase score confidence: mean over phrase tokens of the token's best
/// frame log-posterior. Ignores token order.
pub fn phrase_score_confidence<S: Real>(pg: &Posteriorgram<S>, phrase: &[TokenId]) -> Result<S> {
    check_phrase(pg, phrase)?;
    let total = phrase.iter().fold(S::zero(), |acc, &tok| {
        let best = (0..pg.frames()).map(|t| pg.get(t, tok)).fold(S::neg_infinity(), S::max);
        acc + best
    });
    Ok(total / S::lit(phrase.len() as f64))
}

/// Sequence order confidence: mean log-posterior of the best strictly
/// increasing frame assignment `t_1 < ... < t_m`; `-inf` when the phrase has
/// more tokens than there are frames.
pub fn sequence_order_confidence<S: Real>(pg: &Posteriorgram<S>, phrase: &[TokenId]) -> Result<S> {
    check_phrase(pg, phrase)?;
    let frames = pg.frames();
    let m = phrase.len();
    if frames < m {
        return Ok(S::neg_infinity());
    }
    // best_upto[t]: best score of the tokens so far with the last one placed
    // at a frame <= t.
    let mut best_upto = vec![S::zero(); frames];
    for (k, &tok) in phrase.iter().enumerate() {
        let mut next = vec![S::neg_infinity(); frames];
        let mut running = S::neg_infinity();
        for t in k..frames {
            let before = if k == 0 { S::zero() } else { best_upto[t - 1] };
            running = running.max(before + pg.get(t, tok));
            next[t] = running;
        }
        best_upto = next;
    }
    Ok(best_upto[frames - 1] / S::lit(m as f64))
}

/// How PSC/SOC are compared against the thresholds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreScale {
    /// Mean per-token log-score.
    #[default]
    PerToken,
    /// Summed log-score over the whole phrase.
    Phrase,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig<S> {
    pub psc_threshold: S,
    pub soc_threshold: S,
    pub scale: ScoreScale,
}

impl<S: Real> Default for FilterConfig<S> {
    fn default() -> Self {
        Self::uniform(S::lit(DEFAULT_FILTER_THRESHOLD))
    }
}

impl<S: Real> FilterConfig<S> {
    /// Same threshold for both stages.
    pub fn uniform(threshold: S) -> Self {
        Self {
            psc_threshold: threshold,
            soc_threshold: threshold,
            scale: ScoreScale::PerToken,
        }
    }

    fn scaled(&self, score: S, len: usize) -> S {
        match self.scale {
            ScoreScale::PerToken => score,
            ScoreScale::Phrase => score * S::lit(len as f64),
        }
    }
}

/// Per-phrase filtering trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhraseDecision<S> {
    pub text: String,
    pub psc: S,
    /// `None` when stage one already rejected the phrase.
    pub soc: Option<S>,
    pub kept: bool,
}

/// Runs both stages and reports every phrase's scores.
pub fn filter_with_trace<S: Real>(
    pg: &Posteriorgram<S>,
    list: &HotwordList,
    cfg: &FilterConfig<S>,
) -> Result<Vec<PhraseDecision<S>>> {
    list.phrases()
        .iter()
        .map(|p| {
            let psc = phrase_score_confidence(pg, &p.tokens)?;
            let mut decision = PhraseDecision { text: p.text.clone(), psc, soc: None, kept: false };
            if cfg.scaled(psc, p.tokens.len()) >= cfg.psc_threshold {
                let soc = sequence_order_confidence(pg, &p.tokens)?;
                decision.soc = Some(soc);
                decision.kept = cfg.scaled(soc, p.tokens.len()) >= cfg.soc_threshold;
            }
            Ok(decision)
        })
        .collect()
}

/// Keeps phrases with `PSC >= psc_threshold` and then `SOC >= soc_threshold`.
pub fn two_stage_filter<S: Real>(
    pg: &Posteriorgram<S>,
    list: &HotwordList,
    cfg: &FilterConfig<S>,
) -> Result<HotwordList> {
    let trace = filter_with_trace(pg, list, cfg)?;
    Ok(list.retain_indices(|i| trace[i].kept))
}
