//! Subword tokenization with word-to-token alignment.
//!
//! The vocabulary is learned by greedy pair merging over a corpus: every
//! character of the corpus alphabet is a piece, plus up to `merges` merged
//! pieces. Tokenization is greedy longest-match within each word, so a word
//! never fails to tokenize and pieces never cross word boundaries. Word-level
//! labels are projected onto token positions with first-subword labeling.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tags::{NcTag, PunctTag};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Sentinel label id stored at positions excluded from the loss.
pub const LABEL_IGNORE: u32 = u32::MAX;

const VOCAB_MAGIC: &str = "itn-vocab v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("label length mismatch: {words} words but {labels} labels")]
    LabelMismatch { words: usize, labels: usize },
    #[error("bad vocab file: {0}")]
    BadVocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable subword vocabulary. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    piece_to_id: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocab {
    fn from_pieces(pieces: Vec<String>) -> Vocab {
        let piece_to_id = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        let max_piece_chars = pieces
            .iter()
            .skip(SPECIALS.len())
            .map(|p| p.chars().count())
            .max()
            .unwrap_or(1);
        Vocab {
            pieces,
            piece_to_id,
            max_piece_chars,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    /// One piece per line, specials first; line number = id.
    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut out = String::with_capacity(self.pieces.len() * 8);
        out.push_str(VOCAB_MAGIC);
        out.push('\n');
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, TokenizerError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(VOCAB_MAGIC) => {}
            other => {
                return Err(TokenizerError::BadVocabFile(format!(
                    "expected header {VOCAB_MAGIC:?}, got {other:?}"
                )))
            }
        }
        let pieces: Vec<String> = lines.map(str::to_string).collect();
        if pieces.len() < SPECIALS.len()
            || SPECIALS.iter().zip(&pieces).any(|(s, p)| s != p)
        {
            return Err(TokenizerError::BadVocabFile(
                "missing special pieces".to_string(),
            ));
        }
        Ok(Vocab::from_pieces(pieces))
    }
}

/// Token ids with word alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordSequence {
    pub token_ids: Vec<u32>,
    /// `word_ids[i]` is the index of the source word of token i; non-decreasing,
    /// starts at 0, increments by at most 1.
    pub word_ids: Vec<usize>,
    /// Token i is the first subword of its word.
    pub is_first: Vec<bool>,
}

impl SubwordSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_ids.last().map_or(0, |w| w + 1)
    }

    /// Token index of the first subword of each word.
    pub fn first_token_of_words(&self) -> Vec<usize> {
        let mut firsts = Vec::with_capacity(self.word_count());
        for (i, &f) in self.is_first.iter().enumerate() {
            if f {
                firsts.push(i);
            }
        }
        firsts
    }
}

/// Token-level labels with the loss mask over first-subword positions.
#[derive(Debug, Clone)]
pub struct TokenLabels {
    pub nc: Vec<u32>,
    pub punct: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl TokenLabels {
    pub fn loss_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// Learn a vocabulary by greedy pair merging.
///
/// Deterministic given corpus order and `merges`: at each step the most
/// frequent adjacent piece pair is merged, ties broken by lexicographic order
/// of the pair. Pairs occurring fewer than twice are never merged.
pub fn build_vocab(corpus: &[Vec<String>], merges: usize) -> Result<Vocab, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    // Word frequency table; words are lowercased.
    let mut word_freq: HashMap<String, u64> = HashMap::new();
    for sentence in corpus {
        for word in sentence {
            *word_freq.entry(word.to_lowercase()).or_default() += 1;
        }
    }
    let mut alphabet: Vec<String> = {
        let mut chars: Vec<char> = word_freq
            .keys()
            .flat_map(|w| w.chars())
            .collect::<std::collections::BTreeSet<char>>()
            .into_iter()
            .collect();
        chars.sort_unstable();
        chars.into_iter().map(String::from).collect()
    };

    // Each distinct word as a sequence of pieces, with its frequency. Sorted
    // for run-to-run determinism.
    let mut words: Vec<(Vec<String>, u64)> = {
        let mut v: Vec<(String, u64)> = word_freq.into_iter().collect();
        v.sort_unstable();
        v.into_iter()
            .map(|(w, n)| (w.chars().map(String::from).collect(), n))
            .collect()
    };

    let mut merged_pieces: Vec<String> = Vec::new();
    for _ in 0..merges {
        let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
        for (pieces, n) in &words {
            for pair in pieces.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_default() += n;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|&(_, n)| n >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((left, right), _)) = best else {
            break;
        };
        let merged = format!("{left}{right}");
        for (pieces, _) in &mut words {
            let mut i = 0;
            while i + 1 < pieces.len() {
                if pieces[i] == left && pieces[i + 1] == right {
                    pieces[i] = merged.clone();
                    pieces.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
        merged_pieces.push(merged);
    }

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.append(&mut alphabet);
    pieces.append(&mut merged_pieces);
    // A merge can reproduce a piece that already exists (never happens with
    // the count-2 threshold, but keep ids unique regardless).
    let mut seen = std::collections::HashSet::new();
    pieces.retain(|p| seen.insert(p.clone()));
    Ok(Vocab::from_pieces(pieces))
}

/// Greedy longest-match segmentation, per word.
///
/// Characters outside the vocab alphabet map to UNK and consume one char.
pub fn tokenize<W: AsRef<str>>(words: &[W], vocab: &Vocab) -> SubwordSequence {
    let mut token_ids = Vec::with_capacity(words.len());
    let mut word_ids = Vec::with_capacity(words.len());
    let mut is_first = Vec::with_capacity(words.len());
    for (w, word) in words.iter().enumerate() {
        let lower = word.as_ref().to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        debug_assert!(!chars.is_empty(), "words must be non-empty");
        let mut pos = 0;
        let mut first = true;
        while pos < chars.len() {
            let mut take = chars.len().min(pos + vocab.max_piece_chars) - pos;
            let mut id = None;
            while take > 0 {
                let cand: String = chars[pos..pos + take].iter().collect();
                if let Some(found) = vocab.id(&cand) {
                    id = Some(found);
                    break;
                }
                take -= 1;
            }
            let (id, consumed) = match id {
                Some(id) => (id, take),
                None => (UNK_ID, 1),
            };
            token_ids.push(id);
            word_ids.push(w);
            is_first.push(first);
            first = false;
            pos += consumed;
        }
    }
    SubwordSequence {
        token_ids,
        word_ids,
        is_first,
    }
}

/// Project word-level tags onto token positions.
///
/// First-subword positions carry the word's tags with `loss_mask = true`;
/// every other position carries [`LABEL_IGNORE`] and `loss_mask = false`.
pub fn project_labels(
    word_nc: &[NcTag],
    word_punct: &[PunctTag],
    seq: &SubwordSequence,
) -> Result<TokenLabels, TokenizerError> {
    let words = seq.word_count();
    if word_nc.len() != words || word_punct.len() != words {
        return Err(TokenizerError::LabelMismatch {
            words,
            labels: word_nc.len().min(word_punct.len()),
        });
    }
    let n = seq.len();
    let mut labels = TokenLabels {
        nc: vec![LABEL_IGNORE; n],
        punct: vec![LABEL_IGNORE; n],
        loss_mask: vec![false; n],
    };
    for i in 0..n {
        if seq.is_first[i] {
            let w = seq.word_ids[i];
            labels.nc[i] = word_nc[w].id() as u32;
            labels.punct[i] = word_punct[w].id() as u32;
            labels.loss_mask[i] = true;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::Category;
    use proptest::prelude::*;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            build_vocab(&[], 0),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn character_fallback_vocab() {
        let vocab = build_vocab(&[words(&["welcome"])], 0).unwrap();
        for c in ["w", "e", "l", "c", "o", "m"] {
            assert!(vocab.id(c).is_some(), "missing char piece {c}");
        }
        assert_eq!(vocab.len(), SPECIALS.len() + 6);
    }

    #[test]
    fn welcome_splits_into_wel_come() {
        // "wel" and "come" are frequent in their own right, while "welcome"
        // itself is too rare for the full-word merge to fire within budget.
        let mut corpus = Vec::new();
        for _ in 0..20 {
            corpus.push(words(&["come", "income", "outcome"]));
            corpus.push(words(&["weld", "welsh", "welfare"]));
        }
        corpus.push(words(&["welcome"]));
        let vocab = build_vocab(&corpus, 8).unwrap();
        let seq = tokenize(&["welcome"], &vocab);
        let pieces: Vec<&str> = seq.token_ids.iter().map(|&id| vocab.piece(id)).collect();
        assert_eq!(pieces, vec!["wel", "come"]);
        assert_eq!(seq.word_ids, vec![0, 0]);
        assert_eq!(seq.is_first, vec![true, false]);
    }

    #[test]
    fn build_vocab_deterministic() {
        let corpus = vec![words(&["three", "point", "five"]), words(&["three", "two"])];
        let a = build_vocab(&corpus, 16).unwrap();
        let b = build_vocab(&corpus, 16).unwrap();
        assert_eq!(a.pieces, b.pieces);
    }

    #[test]
    fn single_char_word() {
        let vocab = build_vocab(&[words(&["a", "ab"])], 0).unwrap();
        let seq = tokenize(&["a"], &vocab);
        assert_eq!(seq.token_ids.len(), 1);
        assert_eq!(seq.word_ids, vec![0]);
        assert_eq!(seq.is_first, vec![true]);
    }

    #[test]
    fn word_id_runs_partition() {
        let corpus = vec![words(&["three", "point", "five", "threepoint"])];
        let vocab = build_vocab(&corpus, 4).unwrap();
        let seq = tokenize(&["three", "point", "five"], &vocab);
        assert_eq!(seq.word_count(), 3);
        // word_ids form 3 maximal constant runs
        let mut runs = 1;
        for w in seq.word_ids.windows(2) {
            assert!(w[1] == w[0] || w[1] == w[0] + 1);
            if w[1] != w[0] {
                runs += 1;
            }
        }
        assert_eq!(runs, 3);
        assert_eq!(seq.is_first.iter().filter(|&&f| f).count(), 3);
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let vocab = build_vocab(&[words(&["abc"])], 0).unwrap();
        let seq = tokenize(&["axb"], &vocab);
        assert_eq!(seq.token_ids[1], UNK_ID);
        assert_eq!(seq.word_count(), 1);
    }

    #[test]
    fn project_first_subword_only() {
        let corpus = vec![words(&["welcome", "wel", "come"]); 8];
        let vocab = build_vocab(&corpus, 5).unwrap();
        let seq = tokenize(&["welcome"], &vocab);
        assert_eq!(seq.len(), 2, "expected a 2-token word");
        let nc = [NcTag::Begin(Category::Number)];
        let punct = [PunctTag::None];
        let labels = project_labels(&nc, &punct, &seq).unwrap();
        assert_eq!(labels.nc[0], NcTag::Begin(Category::Number).id() as u32);
        assert_eq!(labels.nc[1], LABEL_IGNORE);
        assert_eq!(labels.loss_mask, vec![true, false]);
    }

    #[test]
    fn project_length_mismatch() {
        let vocab = build_vocab(&[words(&["ab"])], 0).unwrap();
        let seq = tokenize(&["ab"], &vocab);
        let err = project_labels(&[], &[], &seq);
        assert!(matches!(err, Err(TokenizerError::LabelMismatch { .. })));
    }

    #[test]
    fn loss_mask_counts_words() {
        let corpus = vec![words(&["alpha", "beta", "gamma", "al", "pha", "gam", "ma"]); 6];
        let vocab = build_vocab(&corpus, 8).unwrap();
        let seq = tokenize(&["alpha", "beta", "gamma"], &vocab);
        let nc = vec![NcTag::Outside; 3];
        let punct = vec![PunctTag::None; 3];
        let labels = project_labels(&nc, &punct, &seq).unwrap();
        assert_eq!(labels.loss_count(), 3);
    }

    proptest! {
        // Round-trip: concatenating tokenized pieces reproduces the word, and
        // alignment invariants hold, for any words over the training alphabet.
        #[test]
        fn round_trip_and_alignment(ws in proptest::collection::vec("[a-h]{1,12}", 1..6),
                                    merges in 0usize..24) {
            let corpus = vec![ws.clone()];
            let vocab = build_vocab(&corpus, merges).unwrap();
            let seq = tokenize(&ws, &vocab);
            prop_assert_eq!(seq.word_count(), ws.len());
            prop_assert_eq!(seq.is_first.iter().filter(|&&f| f).count(), ws.len());
            prop_assert_eq!(seq.word_ids[0], 0);
            for w in 0..ws.len() {
                let rebuilt: String = seq.token_ids.iter().zip(&seq.word_ids)
                    .filter(|&(_, &wid)| wid == w)
                    .map(|(&id, _)| vocab.piece(id))
                    .collect();
                prop_assert_eq!(&rebuilt, &ws[w]);
            }
        }
    }
}
