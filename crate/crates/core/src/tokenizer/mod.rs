//! Hybrid tokenizer: one token per CJK character, BPE subwords for
//! alphabetic text, an explicit special-token registry and a pool of
//! pre-allocated dialect slots that can be bound after training.
//!
//! Vocabulary layout (ids are dense from 0):
//!
//! ```text
//! [blank][unk][task..][eos..][timestamp..][dialect..][prompt..]
//! [reserved dialect slots]
//! [base alphabet][CJK singletons][BPE merges]
//! ```

mod bpe;
mod script;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use script::CjkRanges;

use bpe::MergeRanks;
use script::Piece;

pub type TokenId = u32;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TARGET_VOCAB: usize = 18_173;
pub const DEFAULT_RESERVED_DIALECTS: usize = 80;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary budget exhausted: {required} fixed tokens exceed target size {target}")]
    BudgetExhausted { required: usize, target: usize },
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("all {0} reserved dialect slots are in use")]
    PoolExhausted(usize),
    #[error("token {0} is already registered")]
    DuplicateName(String),
    #[error("invalid dialect token {0:?}: expected <UPPERCASE>")]
    InvalidDialectName(String),
    #[error("invalid special token {0:?}")]
    InvalidSpecial(String),
    #[error("invalid tokenizer model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

/// Special-token registry, grouped by purpose.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialTokens {
    pub blank: String,
    pub unk: String,
    pub task: Vec<String>,
    pub eos: Vec<String>,
    pub timestamp: Vec<String>,
    pub dialect: Vec<String>,
    /// `[start, end]` delimiters for hotword prompts.
    pub prompt: Vec<String>,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            blank: "<blank>".into(),
            unk: "<unk>".into(),
            task: vec!["<asr>".into()],
            eos: vec!["<eos>".into()],
            timestamp: Vec::new(),
            dialect: vec!["<MANDARIN>".into(), "<ANHUI>".into()],
            prompt: vec!["<PROMPT_START>".into(), "<PROMPT_END>".into()],
        }
    }
}

impl SpecialTokens {
    /// All names in vocabulary order.
    pub fn ordered(&self) -> Vec<&str> {
        let mut v = vec![self.blank.as_str(), self.unk.as_str()];
        for group in [&self.task, &self.eos, &self.timestamp, &self.dialect, &self.prompt] {
            v.extend(group.iter().map(String::as_str));
        }
        v
    }

    fn to_map(&self) -> BTreeMap<String, Vec<String>> {
        BTreeMap::from([
            ("blank".into(), vec![self.blank.clone()]),
            ("unk".into(), vec![self.unk.clone()]),
            ("task".into(), self.task.clone()),
            ("eos".into(), self.eos.clone()),
            ("timestamp".into(), self.timestamp.clone()),
            ("dialect".into(), self.dialect.clone()),
            ("prompt".into(), self.prompt.clone()),
        ])
    }

    fn from_map(map: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        let single = |key: &str| -> Result<String> {
            match map.get(key).map(Vec::as_slice) {
                Some([one]) => Ok(one.clone()),
                _ => Err(TokenizerError::InvalidModel(format!(
                    "specials.{key} must hold exactly one token"
                ))),
            }
        };
        let group = |key: &str| map.get(key).cloned().unwrap_or_default();
        if let Some(unknown) = map.keys().find(|k| {
            !["blank", "unk", "task", "eos", "timestamp", "dialect", "prompt"].contains(&k.as_str())
        }) {
            return Err(TokenizerError::InvalidModel(format!(
                "unknown special category {unknown:?}"
            )));
        }
        Ok(Self {
            blank: single("blank")?,
            unk: single("unk")?,
            task: group("task"),
            eos: group("eos"),
            timestamp: group("timestamp"),
            dialect: group("dialect"),
            prompt: group("prompt"),
        })
    }
}

fn is_special_form(s: &str) -> bool {
    s.len() >= 3 && s.starts_with('<') && s.ends_with('>') && !s[1..s.len() - 1].contains(['<', '>'])
}

fn is_dialect_form(s: &str) -> bool {
    let Some(inner) = s.strip_prefix('<').and_then(|s| s.strip_suffix('>')) else {
        return false;
    };
    let mut chars = inner.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn slot_placeholder(i: usize) -> String {
    format!("<DIALECT_SLOT_{i}>")
}

#[derive(Clone, Debug)]
pub struct TokenizerConfig {
    pub target_vocab_size: usize,
    pub reserved_dialect_count: usize,
    pub specials: SpecialTokens,
    pub cjk_ranges: CjkRanges,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            target_vocab_size: DEFAULT_TARGET_VOCAB,
            reserved_dialect_count: DEFAULT_RESERVED_DIALECTS,
            specials: SpecialTokens::default(),
            cjk_ranges: CjkRanges::default(),
        }
    }
}

/// Where a token in an encoded sequence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    CjkChar,
    Bpe,
    Special,
    Unk,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub kinds: Vec<TokenKind>,
}

impl TokenSequence {
    fn push(&mut self, id: TokenId, kind: TokenKind) {
        self.ids.push(id);
        self.kinds.push(kind);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Pre-allocated ids that dialect names can be bound to after training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReservedPool {
    start: TokenId,
    size: usize,
    used: Vec<String>,
}

impl ReservedPool {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn used(&self) -> &[String] {
        &self.used
    }

    pub fn free(&self) -> usize {
        self.size - self.used.len()
    }

    pub fn first_id(&self) -> TokenId {
        self.start
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id >= self.start && ((id - self.start) as usize) < self.size
    }
}

/// Vocabulary composition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VocabBreakdown {
    pub specials: usize,
    pub reserved: usize,
    pub base_alphabet: usize,
    pub cjk_singletons: usize,
    pub bpe: usize,
}

#[derive(Clone, Debug)]
pub struct TokenizerModel {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    merges: Vec<(String, String)>,
    merge_ranks: MergeRanks,
    specials: SpecialTokens,
    reserved: ReservedPool,
    cjk: CjkRanges,
    /// Matchable specials, longest first. Excludes blank.
    matchers: Vec<(String, TokenId)>,
    blank_id: TokenId,
    unk_id: TokenId,
    breakdown: VocabBreakdown,
}

/// Printable ASCII plus tab and newline; always part of the vocabulary.
fn default_alphabet() -> BTreeSet<char> {
    let mut s: BTreeSet<char> = (0x20u8..=0x7E).map(char::from).collect();
    s.insert('\t');
    s.insert('\n');
    s
}

impl TokenizerModel {
    /// Trains a tokenizer on a line corpus.
    pub fn build<I, S>(corpus: I, config: &TokenizerConfig) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let specials = &config.specials;
        let special_names = specials.ordered();
        validate_specials(specials)?;

        let mut alphabet = default_alphabet();
        let mut cjk_chars = BTreeSet::new();
        let mut words: BTreeMap<String, u64> = BTreeMap::new();
        let mut matchers: Vec<&str> = special_names[1..].to_vec();
        matchers.sort_by_key(|s| std::cmp::Reverse(s.len()));

        for line in corpus {
            let line: String = line.as_ref().nfc().collect();
            for span in split_specials(&line, &matchers) {
                let SpecialSplit::Text(text) = span else { continue };
                for piece in script::pieces(text, &config.cjk_ranges) {
                    match piece {
                        Piece::Cjk(c) => {
                            cjk_chars.insert(c.chars().next().unwrap());
                        }
                        Piece::Word(w) => {
                            alphabet.extend(w.chars());
                            *words.entry(w.to_owned()).or_default() += 1;
                        }
                        Piece::Other(o) => alphabet.extend(o.chars()),
                    }
                }
            }
        }

        let fixed =
            special_names.len() + config.reserved_dialect_count + alphabet.len() + cjk_chars.len();
        if fixed > config.target_vocab_size {
            return Err(TokenizerError::BudgetExhausted {
                required: fixed,
                target: config.target_vocab_size,
            });
        }

        let mut vocab: Vec<String> = special_names.iter().map(|s| s.to_string()).collect();
        vocab.extend((0..config.reserved_dialect_count).map(slot_placeholder));
        vocab.extend(alphabet.iter().map(|c| c.to_string()));
        vocab.extend(cjk_chars.iter().map(|c| c.to_string()));
        let mut known: HashSet<String> = vocab.iter().cloned().collect();
        let merges = bpe::learn_merges(&words, &known, config.target_vocab_size - fixed);
        for (l, r) in &merges {
            let m = format!("{l}{r}");
            if known.insert(m.clone()) {
                vocab.push(m);
            }
        }

        Self::assemble(
            vocab,
            merges,
            specials.clone(),
            config.reserved_dialect_count,
            Vec::new(),
            config.cjk_ranges.clone(),
        )
    }

    fn assemble(
        vocab: Vec<String>,
        merges: Vec<(String, String)>,
        specials: SpecialTokens,
        reserved_size: usize,
        used: Vec<String>,
        cjk: CjkRanges,
    ) -> Result<Self> {
        validate_specials(&specials)?;
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(TokenizerError::InvalidModel(format!("duplicate token {tok:?}")));
            }
        }
        let lookup = |s: &str| {
            index.get(s).copied().ok_or_else(|| {
                TokenizerError::InvalidModel(format!("token {s:?} missing from vocabulary"))
            })
        };

        let special_names = specials.ordered();
        for (i, name) in special_names.iter().enumerate() {
            if lookup(name)? as usize != i {
                return Err(TokenizerError::InvalidModel(format!(
                    "special {name:?} must have id {i}"
                )));
            }
        }
        let start = special_names.len();
        for i in 0..reserved_size {
            if vocab.get(start + i) != Some(&slot_placeholder(i)) {
                return Err(TokenizerError::InvalidModel(format!("reserved slot {i} missing")));
            }
        }
        if used.len() > reserved_size {
            return Err(TokenizerError::InvalidModel("more bound dialects than slots".into()));
        }

        let mut merge_ranks = MergeRanks::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let key = (lookup(l)?, lookup(r)?);
            let merged = lookup(&format!("{l}{r}"))?;
            merge_ranks.entry(key).or_insert((rank, merged));
        }

        let mut breakdown = VocabBreakdown {
            specials: special_names.len(),
            reserved: reserved_size,
            ..Default::default()
        };
        for tok in &vocab[start + reserved_size..] {
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if cjk.contains(c) => breakdown.cjk_singletons += 1,
                (Some(_), None) => breakdown.base_alphabet += 1,
                _ => breakdown.bpe += 1,
            }
        }

        let mut model = Self {
            blank_id: 0,
            unk_id: 1,
            vocab,
            index,
            merges,
            merge_ranks,
            specials,
            reserved: ReservedPool {
                start: start as TokenId,
                size: reserved_size,
                used: Vec::new(),
            },
            cjk,
            matchers: Vec::new(),
            breakdown,
        };
        model.rebuild_matchers();
        for name in used {
            model.register_dialect(&name)?;
        }
        Ok(model)
    }

    fn rebuild_matchers(&mut self) {
        let mut m: Vec<(String, TokenId)> = self
            .specials
            .ordered()
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, s)| (s.to_string(), i as TokenId))
            .collect();
        m.extend(
            self.reserved
                .used
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), self.reserved.start + i as TokenId)),
        );
        m.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        self.matchers = m;
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn reserved(&self) -> &ReservedPool {
        &self.reserved
    }

    pub fn cjk_ranges(&self) -> &CjkRanges {
        &self.cjk
    }

    pub fn breakdown(&self) -> VocabBreakdown {
        self.breakdown
    }

    pub fn blank_id(&self) -> TokenId {
        self.blank_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    /// Id of a registered special or bound dialect token.
    pub fn special_id(&self, name: &str) -> Option<TokenId> {
        if name == self.specials.blank {
            return Some(self.blank_id);
        }
        self.matchers.iter().find(|(s, _)| s == name).map(|&(_, id)| id)
    }

    /// `(start, end)` prompt delimiter ids, when registered.
    pub fn prompt_delimiters(&self) -> Option<(TokenId, TokenId)> {
        match self.specials.prompt.as_slice() {
            [start, end] => Some((self.special_id(start)?, self.special_id(end)?)),
            _ => None,
        }
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Surface string of a token; bound dialect slots render their name.
    pub fn token_str(&self, id: TokenId) -> Result<&str> {
        if self.reserved.contains(id) {
            if let Some(name) = self.reserved.used.get((id - self.reserved.start) as usize) {
                return Ok(name);
            }
        }
        self.vocab
            .get(id as usize)
            .map(String::as_str)
            .ok_or(TokenizerError::IdOutOfRange { id, size: self.vocab.len() })
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let text: String = text.nfc().collect();
        let mut out = TokenSequence::default();
        let matchers: Vec<&str> = self.matchers.iter().map(|(s, _)| s.as_str()).collect();
        for span in split_specials(&text, &matchers) {
            match span {
                SpecialSplit::Special(i) => out.push(self.matchers[i].1, TokenKind::Special),
                SpecialSplit::Text(t) => self.encode_plain(t, &mut out),
            }
        }
        out
    }

    fn encode_plain(&self, text: &str, out: &mut TokenSequence) {
        for piece in script::pieces(text, &self.cjk) {
            match piece {
                Piece::Cjk(c) => match self.index.get(c) {
                    Some(&id) => out.push(id, TokenKind::CjkChar),
                    None => out.push(self.unk_id, TokenKind::Unk),
                },
                Piece::Other(c) => match self.index.get(c) {
                    Some(&id) => out.push(id, TokenKind::Bpe),
                    None => out.push(self.unk_id, TokenKind::Unk),
                },
                Piece::Word(w) => self.encode_word(w, out),
            }
        }
    }

    fn encode_word(&self, word: &str, out: &mut TokenSequence) {
        let mut run = Vec::new();
        let mut buf = [0u8; 4];
        for c in word.chars() {
            match self.index.get(&*c.encode_utf8(&mut buf)) {
                Some(&id) => run.push(id),
                None => {
                    for id in bpe::merge_ids(std::mem::take(&mut run), &self.merge_ranks) {
                        out.push(id, TokenKind::Bpe);
                    }
                    out.push(self.unk_id, TokenKind::Unk);
                }
            }
        }
        for id in bpe::merge_ids(run, &self.merge_ranks) {
            out.push(id, TokenKind::Bpe);
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            s.push_str(self.token_str(id)?);
        }
        Ok(s)
    }

    /// Binds a dialect name to the next free reserved slot.
    pub fn register_dialect(&mut self, name: &str) -> Result<TokenId> {
        if !is_dialect_form(name) {
            return Err(TokenizerError::InvalidDialectName(name.to_owned()));
        }
        if self.special_id(name).is_some() || self.index.contains_key(name) {
            return Err(TokenizerError::DuplicateName(name.to_owned()));
        }
        if self.reserved.free() == 0 {
            return Err(TokenizerError::PoolExhausted(self.reserved.size));
        }
        let id = self.reserved.start + self.reserved.used.len() as TokenId;
        self.reserved.used.push(name.to_owned());
        self.rebuild_matchers();
        Ok(id)
    }

    pub fn to_file_repr(&self) -> ModelFile {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            vocab: self.vocab.clone(),
            merges: self.merges.iter().map(|(l, r)| [l.clone(), r.clone()]).collect(),
            specials: self.specials.to_map(),
            reserved: ReservedFile {
                size: self.reserved.size,
                used: self.reserved.used.clone(),
            },
            cjk_ranges: Some(self.cjk.clone()),
        }
    }

    pub fn from_file_repr(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FORMAT_VERSION {
            return Err(TokenizerError::InvalidModel(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let specials = SpecialTokens::from_map(&file.specials)?;
        Self::assemble(
            file.vocab,
            file.merges.into_iter().map(|[l, r]| (l, r)).collect(),
            specials,
            file.reserved.size,
            file.reserved.used,
            file.cjk_ranges.unwrap_or_default(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file_repr())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file_repr(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn validate_specials(specials: &SpecialTokens) -> Result<()> {
    let names = specials.ordered();
    let mut seen = HashSet::new();
    for name in &names {
        if !is_special_form(name) {
            return Err(TokenizerError::InvalidSpecial(name.to_string()));
        }
        if !seen.insert(*name) {
            return Err(TokenizerError::DuplicateName(name.to_string()));
        }
    }
    if !(specials.prompt.is_empty() || specials.prompt.len() == 2) {
        return Err(TokenizerError::InvalidSpecial(
            "prompt category needs exactly [start, end]".into(),
        ));
    }
    Ok(())
}

/// On-disk JSON layout of a tokenizer model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub vocab: Vec<String>,
    pub merges: Vec<[String; 2]>,
    pub specials: BTreeMap<String, Vec<String>>,
    pub reserved: ReservedFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cjk_ranges: Option<CjkRanges>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReservedFile {
    pub size: usize,
    pub used: Vec<String>,
}

enum SpecialSplit<'a> {
    Special(usize),
    Text(&'a str),
}

/// Splits `text` at occurrences of `matchers` (ordered longest first).
fn split_specials<'a>(text: &'a str, matchers: &[&str]) -> Vec<SpecialSplit<'a>> {
    let mut out = Vec::new();
    let mut plain_start = 0;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with('<') {
            if let Some(k) = matchers.iter().position(|m| rest.starts_with(m)) {
                if plain_start < i {
                    out.push(SpecialSplit::Text(&text[plain_start..i]));
                }
                out.push(SpecialSplit::Special(k));
                i += matchers[k].len();
                plain_start = i;
                continue;
            }
        }
        i += rest.chars().next().map_or(1, char::len_utf8);
    }
    if plain_start < text.len() {
        out.push(SpecialSplit::Text(&text[plain_start..]));
    }
    out
}
