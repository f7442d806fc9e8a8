//! Script classification and pre-segmentation of raw text.

use serde::{Deserialize, Serialize};

/// Inclusive codepoint ranges treated as CJK ideographs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CjkRanges(pub Vec<[u32; 2]>);

impl Default for CjkRanges {
    fn default() -> Self {
        // Unified Ideographs and Extension A.
        Self(vec![[0x4E00, 0x9FFF], [0x3400, 0x4DBF]])
    }
}

impl CjkRanges {
    pub fn contains(&self, c: char) -> bool {
        let cp = c as u32;
        self.0.iter().any(|&[lo, hi]| lo <= cp && cp <= hi)
    }
}

/// Characters that can be joined into a BPE word.
pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// A maximal run of text of one kind.
#[derive(Debug, PartialEq, Eq)]
pub(crate) enum Piece<'a> {
    /// One CJK character.
    Cjk(&'a str),
    /// A run of word characters, subject to BPE.
    Word(&'a str),
    /// A single non-word, non-CJK character (space, punctuation).
    Other(&'a str),
}

/// Splits plain (special-free) text into CJK characters, words and single
/// separator characters. Concatenating the pieces yields the input.
pub(crate) fn pieces<'a>(text: &'a str, cjk: &CjkRanges) -> Vec<Piece<'a>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let end = i + c.len_utf8();
        let cjk_char = cjk.contains(c);
        if !cjk_char && is_word_char(c) {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(Piece::Word(&text[s..i]));
        }
        if cjk_char {
            out.push(Piece::Cjk(&text[i..end]));
        } else {
            out.push(Piece::Other(&text[i..end]));
        }
    }
    if let Some(s) = word_start {
        out.push(Piece::Word(&text[s..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ranges() {
        let r = CjkRanges::default();
        assert!(r.contains('你'));
        assert!(r.contains('\u{3400}'));
        assert!(!r.contains('a'));
        assert!(!r.contains('、'));
    }

    #[test]
    fn mixed_segmentation() {
        let r = CjkRanges::default();
        let p = pieces("你好 world, ok", &r);
        assert_eq!(
            p,
            vec![
                Piece::Cjk("你"),
                Piece::Cjk("好"),
                Piece::Other(" "),
                Piece::Word("world"),
                Piece::Other(","),
                Piece::Other(" "),
                Piece::Word("ok"),
            ]
        );
        assert!(pieces("", &r).is_empty());
    }
}
