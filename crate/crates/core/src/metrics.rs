//! Edit-distance alignment and hotword-aware error rates.
//!
//! Tokens are compared by equality only, so the same code scores token ids
//! and normalized text units (see [`EvalUnits`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::tokenizer::CjkRanges;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("reference is empty; error rate undefined")]
    EmptyReference,
    #[error("baseline error rate {0} must be positive")]
    ZeroBaseline(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// One step of an alignment. Deletions have no `hyp_pos`, insertions no
/// `ref_pos`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub ref_pos: Option<usize>,
    pub hyp_pos: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn errors(&self) -> usize {
        self.ops.iter().filter(|o| o.kind != EditKind::Match).count()
    }

    /// Rebuilds the hypothesis from `reference` and the hypothesis tokens
    /// named by the ops.
    pub fn replay<T: Clone>(&self, reference: &[T], hyp: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(hyp.len());
        for op in &self.ops {
            match op.kind {
                EditKind::Match => out.push(reference[op.ref_pos.unwrap()].clone()),
                EditKind::Substitute | EditKind::Insert => out.push(hyp[op.hyp_pos.unwrap()].clone()),
                EditKind::Delete => {}
            }
        }
        out
    }
}

/// Minimal edit script from `reference` to `hyp`. On equal cost the
/// backtrace prefers match, then substitution, deletion, insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if reference[i - 1] == hyp[j - 1] && cur == diag {
                ops.push(EditOp { kind: EditKind::Match, ref_pos: Some(i - 1), hyp_pos: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
            if reference[i - 1] != hyp[j - 1] && cur == diag + 1 {
                ops.push(EditOp { kind: EditKind::Substitute, ref_pos: Some(i - 1), hyp_pos: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cur == d[(i - 1) * w + j] + 1 {
            ops.push(EditOp { kind: EditKind::Delete, ref_pos: Some(i - 1), hyp_pos: None });
            i -= 1;
        } else {
            ops.push(EditOp { kind: EditKind::Insert, ref_pos: None, hyp_pos: Some(j - 1) });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

/// Marks every reference position covered by an occurrence of some
/// hotword. Overlapping occurrences union; empty hotwords match nothing.
pub fn tag_biased<T: PartialEq, H: AsRef<[T]>>(reference: &[T], hotwords: &[H]) -> Vec<bool> {
    let mut mask = vec![false; reference.len()];
    for hw in hotwords {
        let hw = hw.as_ref();
        if hw.is_empty() || hw.len() > reference.len() {
            continue;
        }
        for start in 0..=reference.len() - hw.len() {
            if &reference[start..start + hw.len()] == hw {
                mask[start..start + hw.len()].iter_mut().for_each(|b| *b = true);
            }
        }
    }
    mask
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn add(&mut self, kind: EditKind) {
        match kind {
            EditKind::Substitute => self.substitutions += 1,
            EditKind::Delete => self.deletions += 1,
            EditKind::Insert => self.insertions += 1,
            EditKind::Match => {}
        }
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub ref_tokens: usize,
    pub biased_ref_tokens: usize,
    pub unbiased_ref_tokens: usize,
    pub biased_errors: ErrorCounts,
    pub unbiased_errors: ErrorCounts,
}

impl EvalCounts {
    pub fn total_errors(&self) -> usize {
        self.biased_errors.total() + self.unbiased_errors.total()
    }
}

impl std::ops::AddAssign for EvalCounts {
    fn add_assign(&mut self, o: Self) {
        self.ref_tokens += o.ref_tokens;
        self.biased_ref_tokens += o.biased_ref_tokens;
        self.unbiased_ref_tokens += o.unbiased_ref_tokens;
        self.biased_errors += o.biased_errors;
        self.unbiased_errors += o.unbiased_errors;
    }
}

/// Error rates in percent. `bwer`/`uwer` are `None` when their reference
/// subset is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub bwer: Option<f64>,
    pub uwer: Option<f64>,
    pub counts: EvalCounts,
}

fn percent(errors: usize, denom: usize) -> Option<f64> {
    (denom > 0).then(|| 100.0 * errors as f64 / denom as f64)
}

impl EvalReport {
    pub fn from_counts(counts: EvalCounts) -> Result<Self> {
        let wer = percent(counts.total_errors(), counts.ref_tokens).ok_or(MetricsError::EmptyReference)?;
        Ok(Self {
            wer,
            bwer: percent(counts.biased_errors.total(), counts.biased_ref_tokens),
            uwer: percent(counts.unbiased_errors.total(), counts.unbiased_ref_tokens),
            counts,
        })
    }

    /// `WER (BWER | UWER)` with two decimals; missing rates print as `n/a`.
    pub fn table(&self) -> String {
        let f = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        format!("{:.2} ({} | {})", self.wer, f(self.bwer), f(self.uwer))
    }
}

/// Per-utterance counts; insertions are biased iff the inserted token
/// occurs in some hotword.
pub fn count_errors<T: PartialEq, H: AsRef<[T]>>(reference: &[T], hyp: &[T], hotwords: &[H]) -> EvalCounts {
    let mask = tag_biased(reference, hotwords);
    let biased_ref = mask.iter().filter(|&&b| b).count();
    let mut counts = EvalCounts {
        ref_tokens: reference.len(),
        biased_ref_tokens: biased_ref,
        unbiased_ref_tokens: reference.len() - biased_ref,
        ..Default::default()
    };
    for op in align(reference, hyp).ops {
        let biased = match (op.kind, op.ref_pos, op.hyp_pos) {
            (EditKind::Match, ..) => continue,
            (EditKind::Insert, _, Some(j)) => hotwords.iter().any(|h| h.as_ref().contains(&hyp[j])),
            (_, Some(i), _) => mask[i],
            _ => unreachable!("edit op without position"),
        };
        if biased {
            counts.biased_errors.add(op.kind);
        } else {
            counts.unbiased_errors.add(op.kind);
        }
    }
    counts
}

pub fn evaluate<T: PartialEq, H: AsRef<[T]>>(reference: &[T], hyp: &[T], hotwords: &[H]) -> Result<EvalReport> {
    EvalReport::from_counts(count_errors(reference, hyp, hotwords))
}

/// Pools counts over utterances before dividing. Empty references are
/// allowed per utterance as long as the corpus total is non-empty.
pub fn evaluate_corpus<'a, T, H, I>(pairs: I, hotwords: &[H]) -> Result<EvalReport>
where
    T: PartialEq + 'a,
    H: AsRef<[T]>,
    I: IntoIterator<Item = (&'a [T], &'a [T])>,
{
    let mut total = EvalCounts::default();
    for (r, h) in pairs {
        total += count_errors(r, h, hotwords);
    }
    EvalReport::from_counts(total)
}

/// Relative error reduction in percent.
pub fn rer(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0) || !before.is_finite() {
        return Err(MetricsError::ZeroBaseline(before));
    }
    Ok(100.0 * (before - after) / before)
}

/// Splits text into scoring units: NFC + lowercase, whitespace words, with
/// every CJK character its own unit.
#[derive(Clone, Debug, Default)]
pub struct EvalUnits {
    pub cjk: CjkRanges,
}

impl EvalUnits {
    pub fn new(cjk: CjkRanges) -> Self {
        Self { cjk }
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        let norm: String = text.nfc().collect::<String>().to_lowercase();
        let mut out = Vec::new();
        for word in norm.split_whitespace() {
            let mut run = String::new();
            for c in word.chars() {
                if self.cjk.contains(c) {
                    if !run.is_empty() {
                        out.push(std::mem::take(&mut run));
                    }
                    out.push(c.to_string());
                } else {
                    run.push(c);
                }
            }
            if !run.is_empty() {
                out.push(run);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn identical_is_all_match() {
        let a = align(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!(a.errors(), 0);
        assert!(a.ops.iter().all(|o| o.kind == EditKind::Match));
    }

    #[test]
    fn one_substitution() {
        let a = align(&["a", "b", "c"], &["a", "x", "c"]);
        assert_eq!(a.errors(), 1);
        assert_eq!(a.ops[1], EditOp { kind: EditKind::Substitute, ref_pos: Some(1), hyp_pos: Some(1) });
    }

    #[test]
    fn tie_prefers_substitution_then_deletion() {
        // "ab" -> "b": delete a, match b.
        let a = align(&chars("ab"), &chars("b"));
        let kinds: Vec<_> = a.ops.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![EditKind::Delete, EditKind::Match]);
        // "a" -> "bc": equal cost either way; backtrace from the end takes sub on c.
        let a = align(&chars("a"), &chars("bc"));
        let kinds: Vec<_> = a.ops.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![EditKind::Insert, EditKind::Substitute]);
        assert_eq!(a.replay(&chars("a"), &chars("bc")), chars("bc"));
    }

    #[test]
    fn empty_sides() {
        assert_eq!(align::<u32>(&[], &[]).ops.len(), 0);
        assert!(align(&[1, 2], &[]).ops.iter().all(|o| o.kind == EditKind::Delete));
        assert!(align(&[], &[1, 2]).ops.iter().all(|o| o.kind == EditKind::Insert));
    }

    #[test]
    fn mask_examples() {
        let r = chars("我爱北京");
        assert_eq!(tag_biased(&r, &[chars("北京")]), vec![false, false, true, true]);
        assert_eq!(tag_biased(&r, &[chars("上海")]), vec![false; 4]);
        assert_eq!(tag_biased(&chars("abc"), &[chars("ab"), chars("bc")]), vec![true; 3]);
    }

    #[test]
    fn worked_example() {
        let rep = evaluate(&chars("我爱北京"), &chars("我爱南京"), &[chars("北京")]).unwrap();
        assert_eq!(rep.wer, 25.0);
        assert_eq!(rep.bwer, Some(50.0));
        assert_eq!(rep.uwer, Some(0.0));
        assert_eq!(rep.table(), "25.00 (50.00 | 0.00)");
    }

    #[test]
    fn no_hotwords() {
        let none: &[Vec<char>] = &[];
        let rep = evaluate(&chars("abcd"), &chars("abxde"), none).unwrap();
        assert_eq!(rep.bwer, None);
        assert_eq!(rep.uwer, Some(rep.wer));
        assert_eq!(rep.table(), "50.00 (n/a | 50.00)");
    }

    #[test]
    fn insertion_attribution() {
        let hw = [chars("xy")];
        let c = count_errors(&chars("ab"), &chars("axb"), &hw);
        assert_eq!(c.biased_errors.insertions, 1);
        let c = count_errors(&chars("ab"), &chars("azb"), &hw);
        assert_eq!(c.unbiased_errors.insertions, 1);
    }

    #[test]
    fn empty_reference_rejected() {
        let none: &[Vec<u32>] = &[];
        assert_eq!(evaluate(&[], &[1u32], none).unwrap_err(), MetricsError::EmptyReference);
    }

    #[test]
    fn rer_examples() {
        assert!((rer(1.94, 1.64).unwrap() - 15.5).abs() < 0.05);
        assert!((rer(18.76, 6.42).unwrap() - 65.8).abs() < 0.05);
        assert!((rer(1.48, 1.51).unwrap() + 2.0).abs() < 0.05);
        assert_eq!(rer(3.3, 3.3).unwrap(), 0.0);
        assert!(rer(0.0, 1.0).is_err());
    }

    #[test]
    fn units_split_cjk_and_words() {
        let u = EvalUnits::default();
        assert_eq!(u.split("我爱 Hello World北京"), vec!["我", "爱", "hello", "world", "北", "京"]);
        assert_eq!(u.split("  "), Vec::<String>::new());
    }

    #[test]
    fn corpus_pools_counts() {
        let hw = [chars("北京")];
        let pairs = [(chars("我爱北京"), chars("我爱南京")), (chars("你好"), chars("你好"))];
        let rep = evaluate_corpus(pairs.iter().map(|(a, b)| (a.as_slice(), b.as_slice())), &hw).unwrap();
        assert!((rep.wer - 100.0 / 6.0).abs() < 1e-12);
        assert_eq!(rep.bwer, Some(50.0));
    }
}
