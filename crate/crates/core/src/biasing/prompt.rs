//! Hotword prompts: phrases wrapped in prompt delimiter tokens and used as
//! a decoder prefix.

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

use super::{BiasError, HotwordList, Result};
use crate::rng::SeededRng;
use crate::tokenizer::{TokenId, TokenizerModel};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PromptConfig {
    pub n_distractors: usize,
    /// Token inserted between consecutive phrases; none by default.
    pub separator: Option<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Prompt {
    pub ids: Vec<TokenId>,
    /// Indices into the source list, in prompt order.
    pub phrases: Vec<usize>,
    /// Indices of phrases found in the transcript.
    pub present: Vec<usize>,
}

fn assemble(list: &HotwordList, order: &[usize], separator: Option<TokenId>, start: TokenId, end: TokenId) -> Vec<TokenId> {
    let mut ids = vec![start];
    for (k, &i) in order.iter().enumerate() {
        if k > 0 {
            ids.extend(separator);
        }
        ids.extend_from_slice(&list.phrases()[i].tokens);
    }
    ids.push(end);
    ids
}

/// Training-style prompt: every phrase occurring in `transcript` plus up to
/// `n_distractors` absent phrases, shuffled with `seed`.
pub fn build_prompt(
    transcript: &str,
    list: &HotwordList,
    cfg: &PromptConfig,
    seed: u64,
    model: &TokenizerModel,
) -> Result<Prompt> {
    let (start, end) = model.prompt_delimiters().ok_or(BiasError::PromptTokensMissing)?;
    let transcript: String = transcript.nfc().collect();
    let (present, mut absent): (Vec<usize>, Vec<usize>) = (0..list.len()).partition(|&i| {
        let text: String = list.phrases()[i].text.nfc().collect();
        transcript.contains(&text)
    });

    let mut rng = SeededRng::new(seed);
    let k = cfg.n_distractors.min(absent.len());
    // Partial Fisher-Yates: the first k slots become a uniform sample.
    for i in 0..k {
        let j = i + rng.below((absent.len() - i) as u64) as usize;
        absent.swap(i, j);
    }
    let mut phrases: Vec<usize> = present.iter().copied().chain(absent[..k].iter().copied()).collect();
    rng.shuffle(&mut phrases);

    Ok(Prompt {
        ids: assemble(list, &phrases, cfg.separator, start, end),
        phrases,
        present,
    })
}

/// Inference prompt: all phrases of an already filtered list, in order.
pub fn inference_prompt(list: &HotwordList, separator: Option<TokenId>, model: &TokenizerModel) -> Result<Prompt> {
    let (start, end) = model.prompt_delimiters().ok_or(BiasError::PromptTokensMissing)?;
    let phrases: Vec<usize> = (0..list.len()).collect();
    Ok(Prompt {
        ids: assemble(list, &phrases, separator, start, end),
        phrases,
        present: Vec::new(),
    })
}
