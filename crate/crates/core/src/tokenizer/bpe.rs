//! Byte-pair-encoding merge learning and greedy application.

use std::collections::{BTreeMap, HashMap, HashSet};

/// Learns merges over a word-frequency table.
///
/// Each iteration merges the most frequent adjacent symbol pair; equal counts
/// go to the lexicographically smallest `(left, right)`. Learning stops once
/// `new_token_budget` previously unseen strings have been created or no pair
/// remains. `known` holds strings already in the vocabulary.
pub(crate) fn learn_merges(
    words: &BTreeMap<String, u64>,
    known: &HashSet<String>,
    new_token_budget: usize,
) -> Vec<(String, String)> {
    let mut corpus: Vec<(Vec<String>, u64)> = words
        .iter()
        .map(|(w, &n)| (w.chars().map(String::from).collect(), n))
        .collect();
    let mut seen: HashSet<String> = known.clone();
    let mut merges = Vec::new();
    let mut added = 0usize;

    while added < new_token_budget {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, n) in &corpus {
            for pair in symbols.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += n;
            }
        }
        let Some(((l, r), _)) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (left, right) = (l.to_owned(), r.to_owned());
        let merged = format!("{left}{right}");
        for (symbols, _) in corpus.iter_mut() {
            apply_merge(symbols, &left, &right, &merged);
        }
        if seen.insert(merged) {
            added += 1;
        }
        merges.push((left, right));
    }
    merges
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    if symbols.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(merged.to_owned());
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

/// Merge table keyed by token-id pair: value is `(rank, merged id)`.
pub(crate) type MergeRanks = HashMap<(u32, u32), (usize, u32)>;

/// Greedy lowest-rank-first merging of a symbol id sequence.
pub(crate) fn merge_ids(mut ids: Vec<u32>, ranks: &MergeRanks) -> Vec<u32> {
    loop {
        let best = ids
            .windows(2)
            .filter_map(|w| ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
            .min_by_key(|&(rank, ..)| rank);
        let Some((_, l, r, merged)) = best else {
            return ids;
        };
        let mut out = Vec::with_capacity(ids.len());
        let mut i = 0;
        while i < ids.len() {
            if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
                out.push(merged);
                i += 2;
            } else {
                out.push(ids[i]);
                i += 1;
            }
        }
        ids = out;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_worked_single_word() {
        // All pairs of "world" occur once; ties resolve to the smallest pair:
        // (l,d) -> (o,r) -> (or,ld) -> (w,orld).
        let words = BTreeMap::from([("world".to_owned(), 1)]);
        let merges = learn_merges(&words, &HashSet::new(), 100);
        let expect: Vec<(String, String)> = [("l", "d"), ("o", "r"), ("or", "ld"), ("w", "orld")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(merges, expect);
    }

    #[test]
    fn frequency_wins_over_order() {
        let words = BTreeMap::from([("ab".to_owned(), 1), ("zy".to_owned(), 5)]);
        let merges = learn_merges(&words, &HashSet::new(), 1);
        assert_eq!(merges, vec![("z".to_owned(), "y".to_owned())]);
    }

    #[test]
    fn budget_counts_new_strings_only() {
        let words = BTreeMap::from([("aaaa".to_owned(), 1)]);
        let merges = learn_merges(&words, &HashSet::new(), 1);
        assert_eq!(merges, vec![("a".to_owned(), "a".to_owned())]);
        assert!(learn_merges(&words, &HashSet::new(), 0).is_empty());
    }
}
