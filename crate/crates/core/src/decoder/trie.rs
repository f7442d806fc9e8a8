//! Prefix trie over hotword token sequences for shallow fusion.

use std::collections::BTreeMap;

use super::{DecodeError, Result};
use crate::biasing::HotwordList;
use crate::num::Real;
use crate::tokenizer::TokenId;

pub const ROOT: usize = 0;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    /// A hotword ends here.
    end: bool,
}

/// Hotword prefix trie with a per-edge bonus `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTrie<S> {
    nodes: Vec<Node>,
    lambda: S,
    phrases: usize,
}

/// Biasing state carried by a hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextState<S> {
    pub node: usize,
    /// Bonus of the hotword prefix currently being matched; rolled back if
    /// the match fails.
    pub partial: S,
    /// Bonus of completed hotwords.
    pub committed: S,
}

impl<S: Real> ContextState<S> {
    pub fn root() -> Self {
        Self { node: ROOT, partial: S::zero(), committed: S::zero() }
    }

    pub fn bonus(&self) -> S {
        self.committed + self.partial
    }
}

impl<S: Real> ContextTrie<S> {
    pub fn empty() -> Self {
        Self { nodes: vec![Node::default()], lambda: S::zero(), phrases: 0 }
    }

    pub fn from_sequences<'a, I>(sequences: I, lambda: S) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        if !(lambda >= S::zero()) || !lambda.is_finite() {
            return Err(DecodeError::InvalidLambda(lambda.as_f64()));
        }
        let mut trie = Self { lambda, ..Self::empty() };
        for seq in sequences {
            if seq.is_empty() {
                return Err(DecodeError::EmptyPhrase);
            }
            let mut node = ROOT;
            for &tok in seq {
                node = match trie.nodes[node].children.get(&tok) {
                    Some(&child) => child,
                    None => {
                        trie.nodes.push(Node::default());
                        let child = trie.nodes.len() - 1;
                        trie.nodes[node].children.insert(tok, child);
                        child
                    }
                };
            }
            if !trie.nodes[node].end {
                trie.nodes[node].end = true;
                trie.phrases += 1;
            }
        }
        Ok(trie)
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    /// Node count including the root.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases
    }

    pub fn is_empty(&self) -> bool {
        self.phrases == 0
    }

    pub fn child(&self, node: usize, token: TokenId) -> Option<usize> {
        self.nodes[node].children.get(&token).copied()
    }

    pub fn is_end(&self, node: usize) -> bool {
        self.nodes[node].end
    }

    pub fn contains(&self, seq: &[TokenId]) -> bool {
        let mut node = ROOT;
        for &tok in seq {
            match self.child(node, tok) {
                Some(c) => node = c,
                None => return false,
            }
        }
        self.nodes[node].end
    }

    /// Extends `state` by one emitted token.
    ///
    /// Following an edge adds `lambda`. Leaving the trie rolls the partial
    /// bonus back and retries the token from the root. Reaching a hotword
    /// end commits the partial bonus; at a leaf the state returns to root.
    pub fn advance(&self, state: ContextState<S>, token: TokenId) -> ContextState<S> {
        let mut s = state;
        match self.child(s.node, token) {
            Some(child) => {
                s.node = child;
                s.partial += self.lambda;
            }
            None => {
                s.partial = S::zero();
                s.node = ROOT;
                if let Some(child) = self.child(ROOT, token) {
                    s.node = child;
                    s.partial = self.lambda;
                }
            }
        }
        if self.nodes[s.node].end {
            s.committed += s.partial;
            s.partial = S::zero();
            if self.nodes[s.node].children.is_empty() {
                s.node = ROOT;
            }
        }
        s
    }

    /// Drops any uncommitted bonus at the end of decoding.
    pub fn finalize(&self, state: ContextState<S>) -> ContextState<S> {
        ContextState { partial: S::zero(), ..state }
    }
}

/// Trie over the token sequences of `list`.
pub fn build_context_trie<S: Real>(list: &HotwordList, lambda: S) -> Result<ContextTrie<S>> {
    ContextTrie::from_sequences(list.token_sequences(), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trie(seqs: &[&[TokenId]], lambda: f64) -> ContextTrie<f64> {
        ContextTrie::from_sequences(seqs.iter().copied(), lambda).unwrap()
    }

    #[test]
    fn shared_prefix() {
        let t = trie(&[&[1, 2], &[1, 3]], 0.5);
        assert_eq!(t.node_count(), 4);
        let a = t.child(ROOT, 1).unwrap();
        assert!(t.is_end(t.child(a, 2).unwrap()));
        assert!(t.is_end(t.child(a, 3).unwrap()));
        assert!(t.contains(&[1, 3]));
        assert!(!t.contains(&[1]));
    }

    #[test]
    fn empty_and_errors() {
        let t = ContextTrie::<f64>::empty();
        assert!(t.is_empty());
        assert_eq!(t.node_count(), 1);
        assert!(matches!(
            ContextTrie::<f64>::from_sequences([&[][..]], 0.5),
            Err(DecodeError::EmptyPhrase)
        ));
        assert!(matches!(
            ContextTrie::<f64>::from_sequences([&[1][..]], -0.1),
            Err(DecodeError::InvalidLambda(_))
        ));
    }

    #[test]
    fn completion_commits_and_resets() {
        let t = trie(&[&[1, 2]], 0.5);
        let s = t.advance(ContextState::root(), 1);
        assert_eq!((s.partial, s.committed), (0.5, 0.0));
        let s = t.advance(s, 2);
        assert_eq!((s.node, s.partial, s.committed), (ROOT, 0.0, 1.0));
    }

    #[test]
    fn falling_off_rolls_back() {
        let t = trie(&[&[1, 2, 3]], 0.5);
        let mut s = ContextState::root();
        for tok in [1, 2] {
            s = t.advance(s, tok);
        }
        assert_eq!(s.bonus(), 1.0);
        let s = t.advance(s, 9);
        assert_eq!((s.node, s.bonus()), (ROOT, 0.0));
        // restart from the failing token
        let s = t.advance(t.advance(ContextState::root(), 1), 1);
        assert_eq!(s.bonus(), 0.5);
        assert_eq!(t.finalize(s).bonus(), 0.0);
    }

    #[test]
    fn nested_hotwords() {
        let t = trie(&[&[1, 2], &[1, 2, 3]], 1.0);
        let mut s = ContextState::root();
        for tok in [1, 2] {
            s = t.advance(s, tok);
        }
        assert_eq!(s.committed, 2.0);
        assert_ne!(s.node, ROOT);
        let s = t.advance(s, 3);
        assert_eq!((s.node, s.committed), (ROOT, 3.0));
    }
}
