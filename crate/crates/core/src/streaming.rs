//! Incremental inference engine.
//!
//! A session accepts raw text fragments that may begin or end mid-word. The
//! trailing fragment of each push is held in a carry buffer and prepended to
//! the next fragment, so words broken across pushes are reassembled before
//! tagging. Complete words wait in a pending queue until `right_context`
//! complete words exist to their right (or the stream is flushed), then are
//! tagged, transduced span by span, punctuated, and committed.
//!
//! Finalization tags each word from its own canonical window: the last
//! `left_context` words before it, the word, and its `right_context`
//! followers. The window depends only on the utterance content and the word
//! index, never on how the stream was fragmented, which is what makes the
//! finalized output invariant to fragmentation. A span that straddles the
//! confirmed frontier defers finalization until the whole span is
//! confirmable, so transduction always sees complete spans.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{forward, predict_raw_tags, ModelParams};
use crate::masking::build_window_mask;
use crate::scalar::Scalar;
use crate::tags::{Category, NcTag, PunctTag};
use crate::tokenizer::{tokenize, Vocab};
use crate::wfst::grammar::{transduce, GrammarSet};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad stream config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Words of left context visible to each tagging window.
    pub left_context: usize,
    /// Complete words required to a word's right before it finalizes.
    pub right_context: usize,
    /// Upper bound on words held back by span deferral; longer spans are
    /// split here. Also bounds session memory.
    pub max_provisional: usize,
}

impl Default for StreamConfig {
    fn default() -> StreamConfig {
        StreamConfig {
            left_context: 16,
            right_context: 1,
            max_provisional: 32,
        }
    }
}

/// One finalized word with the tags it was committed under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedWord {
    pub spoken: String,
    pub nc: NcTag,
    pub punct: PunctTag,
}

/// Result of one push or flush.
#[derive(Debug, Clone, Default)]
pub struct ChunkResult {
    /// Newly committed written text (delta; concatenating all deltas yields
    /// the full output).
    pub finalized: String,
    /// Current revisable tail, rendered with the best tags available.
    pub provisional: String,
    pub finalized_words: Vec<TaggedWord>,
    /// Complete words consumed from the input this call.
    pub words_processed: usize,
    /// Words still awaiting right context after this call.
    pub words_deferred: usize,
}

/// Written-text assembler: spacing, capitalization after sentence-final
/// marks, and punctuation attachment.
#[derive(Debug, Clone)]
struct Emitter {
    out: String,
    cap_next: bool,
}

impl Emitter {
    fn new() -> Emitter {
        Emitter {
            out: String::new(),
            cap_next: true,
        }
    }

    fn emit(&mut self, chunk: &str, mark: Option<char>) {
        if !self.out.is_empty() {
            self.out.push(' ');
        }
        if self.cap_next {
            let mut chars = chunk.chars();
            if let Some(c) = chars.next() {
                self.out.extend(c.to_uppercase());
                self.out.push_str(chars.as_str());
            }
        } else {
            self.out.push_str(chunk);
        }
        if let Some(m) = mark {
            self.out.push(m);
        }
        self.cap_next = matches!(m_of(mark), Some(t) if t.ends_sentence());
    }
}

fn m_of(mark: Option<char>) -> Option<PunctTag> {
    match mark {
        Some(',') => Some(PunctTag::Comma),
        Some('!') => Some(PunctTag::Exclamation),
        Some('.') => Some(PunctTag::Period),
        Some('?') => Some(PunctTag::Question),
        _ => None,
    }
}

fn title_case_span(words: &[&str]) -> String {
    words
        .iter()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Render one span into its written chunk.
fn render_span<S: Scalar>(words: &[&str], category: Category, grammars: &GrammarSet<S>) -> String {
    match grammars.for_category(category) {
        Some(grammar) => transduce(words, grammar).text,
        None => title_case_span(words),
    }
}

/// Convert tagged words to written text: spans transduced (Case title-cased),
/// punctuation appended after its word, sentence starts capitalized.
pub fn postprocess<S: Scalar, W: AsRef<str>>(
    words: &[W],
    nc_tags: &[NcTag],
    punct_tags: &[PunctTag],
    grammars: &GrammarSet<S>,
) -> String {
    assert_eq!(words.len(), nc_tags.len());
    assert_eq!(words.len(), punct_tags.len());
    let mut emitter = Emitter::new();
    let mut i = 0;
    while i < words.len() {
        match nc_tags[i] {
            NcTag::Outside => {
                emitter.emit(words[i].as_ref(), punct_tags[i].mark());
                i += 1;
            }
            NcTag::Begin(cat) | NcTag::Inside(cat) => {
                let mut end = i + 1;
                while end < words.len() && nc_tags[end] == NcTag::Inside(cat) {
                    end += 1;
                }
                let span: Vec<&str> = words[i..end].iter().map(|w| w.as_ref()).collect();
                let chunk = render_span(&span, cat, grammars);
                // The span renders as one unit; it carries its last word's mark.
                emitter.emit(&chunk, punct_tags[end - 1].mark());
                i = end;
            }
        }
    }
    emitter.out
}

#[derive(Debug, Clone)]
struct PendingWord {
    spoken: String,
    /// Canonical raw tags, memoized once computed with full right context.
    tags: Option<(NcTag, PunctTag)>,
}

/// Per-stream mutable state. One session per logical stream; distinct
/// sessions may run in parallel over shared immutable model and grammars.
pub struct StreamSession<'a, S: Scalar> {
    model: &'a ModelParams<S>,
    vocab: &'a Vocab,
    grammars: &'a GrammarSet<S>,
    config: StreamConfig,
    /// Last `left_context` finalized spoken words.
    cache: VecDeque<String>,
    pending: Vec<PendingWord>,
    carry: String,
    emitter: Emitter,
    /// Tag of the last finalized word, for IOB repair across windows.
    last_nc: NcTag,
}

pub fn open_session<'a, S: Scalar>(
    model: &'a ModelParams<S>,
    vocab: &'a Vocab,
    grammars: &'a GrammarSet<S>,
    config: StreamConfig,
) -> Result<StreamSession<'a, S>, StreamError> {
    if config.left_context < 1 {
        return Err(StreamError::BadConfig("left_context must be >= 1".into()));
    }
    if config.max_provisional < 1 {
        return Err(StreamError::BadConfig(
            "max_provisional must be >= 1".into(),
        ));
    }
    let window_words = config.left_context + config.max_provisional + config.right_context + 1;
    if window_words > model.config.max_positions {
        return Err(StreamError::BadConfig(format!(
            "window of {window_words} words exceeds model max_positions {}",
            model.config.max_positions
        )));
    }
    Ok(StreamSession {
        model,
        vocab,
        grammars,
        config,
        cache: VecDeque::new(),
        pending: Vec::new(),
        carry: String::new(),
        emitter: Emitter::new(),
        last_nc: NcTag::Outside,
    })
}

impl<'a, S: Scalar> StreamSession<'a, S> {
    /// Raw argmax tags for the words of `focus` within a window of
    /// `left ++ focus_words ++ right`, positions window-relative.
    fn tag_words(&self, window: &[&str], focus_start: usize, focus_len: usize) -> Vec<(NcTag, PunctTag)> {
        let seq = tokenize(window, self.vocab);
        let mask = build_window_mask(focus_start, focus_len, window.len() - focus_start - focus_len, &seq);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(self.model, &seq, &mask, false, 0, &mut rng)
            .expect("window sizes validated at open_session");
        let (nc, punct) = predict_raw_tags(&out.nc_logits, &out.punct_logits, &seq);
        (focus_start..focus_start + focus_len)
            .map(|w| (nc[w], punct[w]))
            .collect()
    }

    /// Canonical raw tags of pending word `idx`: window = last `l` words of
    /// history, the word, and its `r` followers (truncated only at stream
    /// end). Memoized when computed with full right context.
    fn canonical_tags(&mut self, idx: usize) -> (NcTag, PunctTag) {
        if let Some(tags) = self.pending[idx].tags {
            return tags;
        }
        let l = self.config.left_context;
        let r = self.config.right_context;
        let mut left: Vec<&str> = Vec::with_capacity(l);
        let before_pending = idx.min(l);
        let from_cache = l - before_pending;
        for w in self.cache.iter().skip(self.cache.len().saturating_sub(from_cache)) {
            left.push(w);
        }
        for w in &self.pending[idx - before_pending..idx] {
            left.push(&w.spoken);
        }
        let right_end = (idx + 1 + r).min(self.pending.len());
        let mut window: Vec<&str> = left;
        window.push(&self.pending[idx].spoken);
        for w in &self.pending[idx + 1..right_end] {
            window.push(&w.spoken);
        }
        let focus_start = window.len() - 1 - (right_end - idx - 1);
        let tags = self.tag_words(&window, focus_start, 1)[0];
        if right_end == idx + 1 + r {
            self.pending[idx].tags = Some(tags);
        }
        tags
    }

    /// IOB repair relative to the previously finalized word.
    fn repaired(&self, raw: NcTag) -> NcTag {
        if let NcTag::Inside(cat) = raw {
            let ok = match self.last_nc {
                NcTag::Begin(p) | NcTag::Inside(p) => p == cat,
                NcTag::Outside => false,
            };
            if !ok {
                return NcTag::Begin(cat);
            }
        }
        raw
    }

    fn finalize_word_into_cache(&mut self, spoken: String) {
        self.cache.push_back(spoken);
        while self.cache.len() > self.config.left_context {
            self.cache.pop_front();
        }
    }

    /// Finalize pending words left to right while their tags are confirmable.
    /// `confirmed` = number of leading pending words with full right context
    /// (all of them at flush). Emitted words are drained from the pending
    /// queue immediately, so `cache ++ pending` is always the clean history
    /// and later windows in the same call see each word exactly once.
    fn process(&mut self, confirmed: usize, at_flush: bool, result: &mut ChunkResult) {
        let mut remaining = confirmed;
        while remaining > 0 {
            let raw = self.canonical_tags(0);
            let nc = self.repaired(raw.0);
            let end = match nc {
                NcTag::Outside => 1,
                NcTag::Begin(cat) | NcTag::Inside(cat) => {
                    // Scan the span; every member's tag must be confirmable.
                    let mut end = 1;
                    loop {
                        if end >= self.config.max_provisional {
                            break; // split over-long spans at the cap
                        }
                        if end >= remaining {
                            if at_flush {
                                break; // stream over: span ends here
                            }
                            // Span straddles the frontier: defer whole span.
                            return;
                        }
                        if self.canonical_tags(end).0 == NcTag::Inside(cat) {
                            end += 1;
                        } else {
                            break;
                        }
                    }
                    end
                }
            };
            let punct_tags: Vec<PunctTag> =
                (0..end).map(|k| self.canonical_tags(k).1).collect();
            let span_words: Vec<String> = self
                .pending
                .drain(..end)
                .map(|w| w.spoken)
                .collect();
            remaining -= end;
            let span_refs: Vec<&str> = span_words.iter().map(|w| w.as_str()).collect();
            match nc {
                NcTag::Outside => {
                    self.emitter.emit(span_refs[0], punct_tags[0].mark());
                    self.last_nc = NcTag::Outside;
                }
                NcTag::Begin(cat) | NcTag::Inside(cat) => {
                    let chunk = render_span(&span_refs, cat, self.grammars);
                    self.emitter.emit(&chunk, punct_tags[end - 1].mark());
                    self.last_nc = if end == 1 {
                        NcTag::Begin(cat)
                    } else {
                        NcTag::Inside(cat)
                    };
                }
            }
            for (k, word) in span_words.iter().enumerate() {
                let word_nc = match nc {
                    NcTag::Outside => NcTag::Outside,
                    NcTag::Begin(cat) | NcTag::Inside(cat) => {
                        if k == 0 {
                            NcTag::Begin(cat)
                        } else {
                            NcTag::Inside(cat)
                        }
                    }
                };
                result.finalized_words.push(TaggedWord {
                    spoken: word.clone(),
                    nc: word_nc,
                    punct: punct_tags[k],
                });
            }
            for word in span_words {
                self.finalize_word_into_cache(word);
            }
        }
    }

    /// Render the revisable tail from memoized tags where available and a
    /// single whole-tail window otherwise.
    fn render_provisional(&mut self) -> String {
        if self.pending.is_empty() {
            return String::new();
        }
        let missing: Vec<usize> = (0..self.pending.len())
            .filter(|&i| self.pending[i].tags.is_none())
            .collect();
        let fresh: Vec<(NcTag, PunctTag)> = if missing.is_empty() {
            Vec::new()
        } else {
            let mut window: Vec<&str> = self.cache.iter().map(|w| w.as_str()).collect();
            let cache_len = window.len();
            window.extend(self.pending.iter().map(|w| w.spoken.as_str()));
            self.tag_words(&window, cache_len, self.pending.len())
        };
        let mut nc_tags = Vec::with_capacity(self.pending.len());
        let mut punct_tags = Vec::with_capacity(self.pending.len());
        for (i, w) in self.pending.iter().enumerate() {
            let (nc, punct) = w.tags.unwrap_or(fresh[i]);
            nc_tags.push(nc);
            punct_tags.push(punct);
        }
        // Repair the first tag against committed history, the rest in order.
        nc_tags[0] = self.repaired(nc_tags[0]);
        crate::tags::repair_iob(&mut nc_tags);
        let words: Vec<&str> = self.pending.iter().map(|w| w.spoken.as_str()).collect();
        let mut emitter = self.emitter.clone();
        emitter.out = String::new();
        let mut i = 0;
        while i < words.len() {
            match nc_tags[i] {
                NcTag::Outside => {
                    emitter.emit(words[i], punct_tags[i].mark());
                    i += 1;
                }
                NcTag::Begin(cat) | NcTag::Inside(cat) => {
                    let mut end = i + 1;
                    while end < words.len() && nc_tags[end] == NcTag::Inside(cat) {
                        end += 1;
                    }
                    let chunk = render_span(&words[i..end], cat, self.grammars);
                    emitter.emit(&chunk, punct_tags[end - 1].mark());
                    i = end;
                }
            }
        }
        emitter.out
    }

    /// Feed a fragment (possibly empty, possibly mid-word on either side).
    pub fn push(&mut self, fragment: &str) -> ChunkResult {
        let mut combined = std::mem::take(&mut self.carry);
        combined.push_str(fragment);
        let ends_complete = combined
            .chars()
            .last()
            .is_some_and(|c| c.is_whitespace());
        let mut words: Vec<String> = combined.split_whitespace().map(str::to_string).collect();
        if !ends_complete {
            if let Some(last) = words.pop() {
                self.carry = last;
            }
        }
        let mut result = ChunkResult {
            words_processed: words.len(),
            ..Default::default()
        };
        self.pending
            .extend(words.into_iter().map(|spoken| PendingWord { spoken, tags: None }));
        let before = self.emitter.out.len();
        let confirmed = self
            .pending
            .len()
            .saturating_sub(self.config.right_context);
        self.process(confirmed, false, &mut result);
        result.finalized = self.emitter.out[before..].to_string();
        result.words_deferred = self.pending.len();
        result.provisional = self.render_provisional();
        result
    }

    /// Promote the carry buffer to a complete word, finalize everything, and
    /// reset the session to empty.
    pub fn flush(&mut self) -> ChunkResult {
        let carry = std::mem::take(&mut self.carry);
        let mut result = ChunkResult::default();
        if !carry.trim().is_empty() {
            result.words_processed = 1;
            self.pending.push(PendingWord {
                spoken: carry.trim().to_string(),
                tags: None,
            });
        }
        let before = self.emitter.out.len();
        self.process(self.pending.len(), true, &mut result);
        result.finalized = self.emitter.out[before..].to_string();
        debug_assert!(self.pending.is_empty());
        self.cache.clear();
        self.emitter = Emitter::new();
        self.last_nc = NcTag::Outside;
        result
    }

    /// Full committed output so far (append-only until flush resets it).
    pub fn committed(&self) -> &str {
        &self.emitter.out
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }
}
