//! Context-aware attention masks built from word-level chunk schedules.
//!
//! A schedule partitions a sentence into chunks with per-chunk right context
//! and a shared left context bound. Word w may attend to word v iff
//! `v >= w - l + 1` and `v <= end(chunk(w)) + r_chunk(w)`. The token-level
//! mask is the lift of this word relation through the word alignment, so all
//! subwords of a word share identical mask rows and columns.

use rand::Rng;
use thiserror::Error;

use crate::tokenizer::SubwordSequence;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("schedule covers {schedule} words but sequence has {sequence}")]
    WordCountMismatch { schedule: usize, sequence: usize },
}

/// Word-level chunk partition of one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSchedule {
    pub chunk_sizes: Vec<usize>,
    /// One right-context word count per chunk.
    pub right_contexts: Vec<usize>,
    /// Left context bound in words, `None` = unbounded.
    pub left_context: Option<usize>,
}

impl ChunkSchedule {
    pub fn word_count(&self) -> usize {
        self.chunk_sizes.iter().sum()
    }

    /// One chunk covering all words, unbounded context on both sides.
    pub fn full(num_words: usize) -> ChunkSchedule {
        ChunkSchedule {
            chunk_sizes: vec![num_words],
            right_contexts: vec![0],
            left_context: None,
        }
    }

    /// Chunk index of each word.
    fn chunk_of_words(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.word_count());
        for (k, &size) in self.chunk_sizes.iter().enumerate() {
            out.extend(std::iter::repeat(k).take(size));
        }
        out
    }

    /// Last word index of each chunk.
    fn chunk_ends(&self) -> Vec<usize> {
        let mut ends = Vec::with_capacity(self.chunk_sizes.len());
        let mut total = 0;
        for &size in &self.chunk_sizes {
            total += size;
            ends.push(total - 1);
        }
        ends
    }
}

/// Sample a schedule: chunk sizes uniform from `chunk_range` (the last chunk
/// truncated to fit), one right context per chunk uniform from `rc_range`.
pub fn sample_schedule(
    num_words: usize,
    chunk_range: (usize, usize),
    rc_range: (usize, usize),
    left_context: Option<usize>,
    rng: &mut impl Rng,
) -> ChunkSchedule {
    assert!(num_words >= 1, "num_words must be >= 1");
    assert!(
        chunk_range.0 >= 1 && chunk_range.0 <= chunk_range.1,
        "bad chunk range"
    );
    assert!(rc_range.0 <= rc_range.1, "bad right-context range");
    let mut chunk_sizes = Vec::new();
    let mut right_contexts = Vec::new();
    let mut covered = 0;
    while covered < num_words {
        let size = rng.gen_range(chunk_range.0..=chunk_range.1);
        let size = size.min(num_words - covered);
        let rc = rng.gen_range(rc_range.0..=rc_range.1);
        chunk_sizes.push(size);
        right_contexts.push(rc);
        covered += size;
    }
    ChunkSchedule {
        chunk_sizes,
        right_contexts,
        left_context,
    }
}

/// Token-by-token visibility matrix: `visible(i, j)` means token i may attend
/// to token j. Not symmetric in general.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    pub fn all_true(n: usize) -> AttentionMask {
        AttentionMask {
            n,
            visible: vec![true; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn visible(&self, i: usize, j: usize) -> bool {
        self.visible[i * self.n + j]
    }

    /// Row i as a slice of length `len()`.
    #[inline]
    pub fn row(&self, i: usize) -> &[bool] {
        &self.visible[i * self.n..(i + 1) * self.n]
    }

    pub fn is_all_true(&self) -> bool {
        self.visible.iter().all(|&v| v)
    }
}

/// Lift a word-level visibility relation to tokens through the alignment.
fn lift_to_tokens(
    word_visible: impl Fn(usize, usize) -> bool,
    seq: &SubwordSequence,
) -> AttentionMask {
    let n = seq.len();
    let mut visible = vec![false; n * n];
    for i in 0..n {
        let wi = seq.word_ids[i];
        for j in 0..n {
            visible[i * n + j] = word_visible(wi, seq.word_ids[j]);
        }
    }
    AttentionMask { n, visible }
}

/// Compile a schedule into the token-level training mask.
pub fn build_composite_mask(
    schedule: &ChunkSchedule,
    seq: &SubwordSequence,
) -> Result<AttentionMask, MaskError> {
    let words = seq.word_count();
    if schedule.word_count() != words {
        return Err(MaskError::WordCountMismatch {
            schedule: schedule.word_count(),
            sequence: words,
        });
    }
    let chunk_of = schedule.chunk_of_words();
    let ends = schedule.chunk_ends();
    let l = schedule.left_context;
    Ok(lift_to_tokens(
        |w, v| {
            let left_ok = match l {
                None => true,
                Some(l) => v + l >= w + 1, // v >= w - l + 1 without underflow
            };
            let k = chunk_of[w];
            left_ok && v <= ends[k] + schedule.right_contexts[k]
        },
        seq,
    ))
}

/// Training view with duplicated right-context positions.
///
/// In the plain composite mask, a chunk's right-context words keep their own
/// chunk's visibility, so at depth >= 2 a chunk's representation leaks
/// information from beyond its serving horizon that streaming inference never
/// has. For training, each chunk's right-context words are instead appended
/// as duplicated tokens whose visibility is clipped to the serving chunk's
/// horizon, matching inference at every layer. Duplicated tokens reuse their
/// source word's index (so they share its positional encoding), carry
/// `is_first = false` (so they never receive loss), and are visible only to
/// tokens served by the same chunk.
pub fn build_training_view(
    schedule: &ChunkSchedule,
    seq: &SubwordSequence,
) -> Result<(SubwordSequence, AttentionMask), MaskError> {
    let words = seq.word_count();
    if schedule.word_count() != words {
        return Err(MaskError::WordCountMismatch {
            schedule: schedule.word_count(),
            sequence: words,
        });
    }
    let ends = schedule.chunk_ends();

    // Token ranges per word.
    let mut word_tokens: Vec<std::ops::Range<usize>> = Vec::with_capacity(words);
    let mut start = 0;
    for w in 0..words {
        let mut end = start;
        while end < seq.len() && seq.word_ids[end] == w {
            end += 1;
        }
        word_tokens.push(start..end);
        start = end;
    }

    let mut token_ids = Vec::with_capacity(seq.len() * 2);
    let mut word_ids = Vec::with_capacity(seq.len() * 2);
    let mut is_first = Vec::with_capacity(seq.len() * 2);
    let mut serving: Vec<usize> = Vec::with_capacity(seq.len() * 2);
    let mut is_copy: Vec<bool> = Vec::with_capacity(seq.len() * 2);
    for (k, &end) in ends.iter().enumerate() {
        let chunk_start = if k == 0 { 0 } else { ends[k - 1] + 1 };
        for w in chunk_start..=end {
            for t in word_tokens[w].clone() {
                token_ids.push(seq.token_ids[t]);
                word_ids.push(w);
                is_first.push(seq.is_first[t]);
                serving.push(k);
                is_copy.push(false);
            }
        }
        let look_end = (end + schedule.right_contexts[k]).min(words.saturating_sub(1));
        for w in end + 1..=look_end {
            for t in word_tokens[w].clone() {
                token_ids.push(seq.token_ids[t]);
                word_ids.push(w);
                is_first.push(false);
                serving.push(k);
                is_copy.push(true);
            }
        }
    }

    let n = token_ids.len();
    let mut visible = vec![false; n * n];
    let l = schedule.left_context;
    for i in 0..n {
        let wi = word_ids[i];
        let k = serving[i];
        let horizon = ends[k];
        for j in 0..n {
            let wj = word_ids[j];
            let left_ok = match l {
                None => true,
                Some(l) => wj + l >= wi + 1,
            };
            let target_ok = if is_copy[j] {
                serving[j] == k
            } else {
                wj <= horizon
            };
            visible[i * n + j] = left_ok && target_ok;
        }
    }
    let ext = SubwordSequence {
        token_ids,
        word_ids,
        is_first,
    };
    Ok((ext, AttentionMask { n, visible }))
}

/// Inference window mask for `[cache | chunk | right-context]` treated as one
/// input: the window itself already encodes the context bounds, so every
/// position attends to the full window.
pub fn build_window_mask(
    cache_words: usize,
    chunk_words: usize,
    rc_words: usize,
    seq: &SubwordSequence,
) -> AttentionMask {
    assert!(chunk_words >= 1, "chunk_words must be >= 1");
    assert_eq!(
        cache_words + chunk_words + rc_words,
        seq.word_count(),
        "window word counts must cover the sequence"
    );
    AttentionMask::all_true(seq.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One synthetic token per word.
    fn seq_of_words(n: usize) -> SubwordSequence {
        SubwordSequence {
            token_ids: vec![0; n],
            word_ids: (0..n).collect(),
            is_first: vec![true; n],
        }
    }

    #[test]
    fn forced_single_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_schedule(4, (4, 4), (0, 0), None, &mut rng);
        assert_eq!(s.chunk_sizes, vec![4]);
        assert_eq!(s.right_contexts, vec![0]);
    }

    #[test]
    fn truncation_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_schedule(7, (3, 3), (1, 1), None, &mut rng);
        assert_eq!(s.chunk_sizes, vec![3, 3, 1]);
        assert_eq!(s.right_contexts, vec![1, 1, 1]);
    }

    #[test]
    fn sampling_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let sa = sample_schedule(20, (3, 7), (1, 2), Some(16), &mut a);
        let sb = sample_schedule(20, (3, 7), (1, 2), Some(16), &mut b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn full_context_is_all_true() {
        let seq = seq_of_words(4);
        let mask = build_composite_mask(&ChunkSchedule::full(4), &seq).unwrap();
        assert!(mask.is_all_true());
    }

    #[test]
    fn two_chunk_visibility_by_hand() {
        // 4 words, chunks [2,2], r=1 each, l unbounded:
        // words {0,1} see {0,1,2}; words {2,3} see {0,1,2,3}.
        let seq = seq_of_words(4);
        let schedule = ChunkSchedule {
            chunk_sizes: vec![2, 2],
            right_contexts: vec![1, 1],
            left_context: None,
        };
        let mask = build_composite_mask(&schedule, &seq).unwrap();
        for w in 0..2 {
            assert_eq!(mask.row(w), &[true, true, true, false]);
        }
        for w in 2..4 {
            assert_eq!(mask.row(w), &[true, true, true, true]);
        }
        // Visibility is not symmetric: word 1 cannot see 3, but 3 sees 1.
        assert!(!mask.visible(1, 3));
        assert!(mask.visible(3, 1));
    }

    #[test]
    fn multi_token_word_rows_identical() {
        // word 0 split into 2 tokens
        let seq = SubwordSequence {
            token_ids: vec![0, 0, 0],
            word_ids: vec![0, 0, 1],
            is_first: vec![true, false, true],
        };
        let schedule = ChunkSchedule {
            chunk_sizes: vec![1, 1],
            right_contexts: vec![0, 0],
            left_context: Some(1),
        };
        let mask = build_composite_mask(&schedule, &seq).unwrap();
        assert_eq!(mask.row(0), mask.row(1));
        // columns for the two subwords also identical
        for i in 0..3 {
            assert_eq!(mask.visible(i, 0), mask.visible(i, 1));
        }
    }

    #[test]
    fn schedule_mismatch_is_error() {
        let seq = seq_of_words(3);
        let err = build_composite_mask(&ChunkSchedule::full(4), &seq);
        assert!(matches!(err, Err(MaskError::WordCountMismatch { .. })));
    }

    #[test]
    fn window_mask_all_true() {
        let seq = seq_of_words(6);
        let mask = build_window_mask(2, 3, 1, &seq);
        assert!(mask.is_all_true());
        let seq1 = seq_of_words(1);
        assert!(build_window_mask(0, 1, 0, &seq1).is_all_true());
    }

    fn random_subwords(words: usize, rng: &mut impl rand::Rng) -> SubwordSequence {
        let mut word_ids = Vec::new();
        let mut is_first = Vec::new();
        for w in 0..words {
            let toks = rng.gen_range(1..=3);
            for t in 0..toks {
                word_ids.push(w);
                is_first.push(t == 0);
            }
        }
        SubwordSequence {
            token_ids: vec![0; word_ids.len()],
            word_ids,
            is_first,
        }
    }

    #[test]
    fn training_view_without_rc_matches_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let words = rng.gen_range(1..=10);
            let seq = random_subwords(words, &mut rng);
            let schedule = sample_schedule(words, (1, 4), (0, 0), Some(4), &mut rng);
            let (ext, mask) = build_training_view(&schedule, &seq).unwrap();
            assert_eq!(ext, seq, "r=0 adds no copies");
            let composite = build_composite_mask(&schedule, &seq).unwrap();
            assert_eq!(mask, composite, "r=0 view equals the composite mask");
        }
    }

    #[test]
    fn training_view_clips_copies_to_serving_horizon() {
        // 6 words, chunks [3,3], r=[2,2], l unbounded. Chunk 0 tokens must see
        // copies of words 3,4 but no original beyond word 2.
        let seq = seq_of_words(6);
        let schedule = ChunkSchedule {
            chunk_sizes: vec![3, 3],
            right_contexts: vec![2, 2],
            left_context: None,
        };
        let (ext, mask) = build_training_view(&schedule, &seq).unwrap();
        // layout: w0 w1 w2 | copies w3 w4 | w3 w4 w5 (chunk 1 has no copies
        // past the sentence end)
        assert_eq!(ext.word_ids, vec![0, 1, 2, 3, 4, 3, 4, 5]);
        assert_eq!(
            ext.is_first,
            vec![true, true, true, false, false, true, true, true]
        );
        // token 0 (word 0, chunk 0): sees originals 0..=2 and copies (3,4).
        assert_eq!(
            mask.row(0),
            &[true, true, true, true, true, false, false, false]
        );
        // copy token 3 (word 3 serving chunk 0): same horizon.
        assert_eq!(
            mask.row(3),
            &[true, true, true, true, true, false, false, false]
        );
        // token 5 (original word 3, chunk 1): sees originals 0..=5, not the
        // chunk-0 copies.
        assert_eq!(
            mask.row(5),
            &[true, true, true, false, false, true, true, true]
        );
        // Copies never receive loss: project a label set and check.
        let nc = vec![crate::tags::NcTag::Outside; 6];
        let punct = vec![crate::tags::PunctTag::None; 6];
        let labels = crate::tokenizer::project_labels(&nc, &punct, &ext).unwrap();
        assert_eq!(labels.loss_count(), 6);
        assert!(!labels.loss_mask[3] && !labels.loss_mask[4]);
    }

    #[test]
    fn training_view_left_bound_applies_to_copies() {
        let seq = seq_of_words(6);
        let schedule = ChunkSchedule {
            chunk_sizes: vec![3, 3],
            right_contexts: vec![2, 2],
            left_context: Some(2),
        };
        let (_, mask) = build_training_view(&schedule, &seq).unwrap();
        // token 7 (word 5, chunk 1, l=2): sees words >= 4 only, and never the
        // chunk-0 copies, so just originals 4 and 5.
        assert_eq!(
            mask.row(7),
            &[false, false, false, false, false, false, true, true]
        );
        // token 0 (word 0): the left bound never restricts forward
        // visibility, so it sees its whole serving horizon including copies.
        assert_eq!(
            mask.row(0),
            &[true, true, true, true, true, false, false, false]
        );
    }

    proptest! {
        // Every row has a true entry; rows/columns are word-aligned; growing
        // any r_k or l never removes a visible pair.
        #[test]
        fn mask_invariants(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let words = rng.gen_range(1..=12);
            let seq = random_subwords(words, &mut rng);
            let l = if rng.gen_bool(0.5) { None } else { Some(rng.gen_range(1..=8)) };
            let schedule = sample_schedule(words, (1, 4), (0, 2), l, &mut rng);
            let mask = build_composite_mask(&schedule, &seq).unwrap();

            for i in 0..mask.len() {
                prop_assert!(mask.row(i).iter().any(|&v| v));
                prop_assert!(mask.visible(i, i), "token sees its own word");
            }
            for i in 0..mask.len() {
                for j in 0..mask.len() {
                    if seq.word_ids[i] == seq.word_ids[j] {
                        prop_assert_eq!(mask.row(i), mask.row(j));
                    }
                }
            }

            // Monotonicity: bump one r_k and relax l.
            let mut grown = schedule.clone();
            let k = rng.gen_range(0..grown.right_contexts.len());
            grown.right_contexts[k] += 1;
            grown.left_context = None;
            let grown_mask = build_composite_mask(&grown, &seq).unwrap();
            for i in 0..mask.len() {
                for j in 0..mask.len() {
                    if mask.visible(i, j) {
                        prop_assert!(grown_mask.visible(i, j));
                    }
                }
            }
        }
    }
}
