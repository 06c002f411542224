//! Training loop and evaluation orchestration.
//!
//! Decoupled-weight-decay adaptive-moment optimization with per-batch dynamic
//! context mask sampling. Training is deterministic given the seed: data
//! order, schedules, dropout, and position offsets all derive from per-item
//! seed streams, and gradients are reduced in a fixed order even when batch
//! items run in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Corpus;
use crate::encoder::{
    backward, forward, init_params, loss, predict_raw_tags, predict_tags, EncoderError,
    ModelConfig, ModelParams, ParamSet,
};
use crate::masking::{build_window_mask, sample_schedule, AttentionMask};
use crate::metrics::{
    bootstrap_ci, itn_wer, punct_f1, span_counts, Ci, EvalReport, ItnWerCounts, Prf,
    SentenceSpanCounts, SpanCounts,
};
use crate::scalar::Scalar;
use crate::tags::{repair_iob, NcTag, PunctTag};
use crate::tokenizer::{project_labels, tokenize, SubwordSequence, TokenLabels, Vocab};
use crate::wfst::grammar::GrammarSet;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: loss is not finite at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    /// Full bidirectional context (non-streaming regime).
    Full,
    /// Random chunks, no right context.
    Chunk,
    /// Random chunks and right contexts.
    Dynamic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Exponential decay factor applied per epoch.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub mask_mode: MaskMode,
    pub chunk_range: (usize, usize),
    pub rc_range: (usize, usize),
    pub left_context: usize,
    pub seed: u64,
    /// Early-stopping patience on validation span F1, in epochs.
    pub patience: usize,
    pub clip_norm: f64,
    /// Training draws a random word-position offset in [0, this] per
    /// sentence so inference windows can index positions window-relative.
    pub position_offset_max: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 2e-4,
            lr_decay: 0.999875,
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 200,
            mask_mode: MaskMode::Dynamic,
            chunk_range: (3, 7),
            rc_range: (1, 2),
            left_context: 16,
            seed: 1,
            patience: 20,
            clip_norm: 1.0,
            position_offset_max: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
}

/// Adam with decoupled weight decay: decay multiplies the weights directly
/// and never touches the gradient.
pub struct AdamW<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    eps: f64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(len: usize, beta1: f64, beta2: f64, weight_decay: f64) -> AdamW<S> {
        AdamW {
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            step: 0,
            beta1,
            beta2,
            weight_decay,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1 = S::from_f64_c(self.beta1);
        let b2 = S::from_f64_c(self.beta2);
        let one = S::one();
        let bias1 = S::from_f64_c(1.0 - self.beta1.powi(self.step as i32));
        let bias2 = S::from_f64_c(1.0 - self.beta2.powi(self.step as i32));
        let lr_s = S::from_f64_c(lr);
        let eps = S::from_f64_c(self.eps);
        let decay = S::from_f64_c(1.0 - lr * self.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mhat = self.m[i] / bias1;
            let vhat = self.v[i] / bias2;
            params[i] = params[i] * decay - lr_s * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Pre-tokenized sentence ready for the encoder.
struct Prepared {
    seq: SubwordSequence,
    labels: TokenLabels,
    nc_tags: Vec<NcTag>,
    punct_tags: Vec<PunctTag>,
    words: usize,
}

fn prepare(corpus: &Corpus, vocab: &Vocab) -> Result<Vec<Prepared>, TrainError> {
    corpus
        .sentences
        .iter()
        .map(|s| {
            let seq = tokenize(&s.spoken, vocab);
            let labels = project_labels(&s.nc_tags, &s.punct_tags, &seq)?;
            Ok(Prepared {
                words: seq.word_count(),
                seq,
                labels,
                nc_tags: s.nc_tags.clone(),
                punct_tags: s.punct_tags.clone(),
            })
        })
        .collect()
}

/// One training instance: the (possibly extended) token view, its mask, and
/// labels projected onto that view. Chunk and dynamic modes train on the
/// duplicated right-context view so every layer sees exactly the visibility
/// streaming inference will have.
fn view_for(
    mode: MaskMode,
    cfg: &TrainConfig,
    item: &Prepared,
    rng: &mut ChaCha8Rng,
) -> (SubwordSequence, AttentionMask, TokenLabels) {
    let rc_range = match mode {
        MaskMode::Full => {
            let mask = AttentionMask::all_true(item.seq.len());
            return (item.seq.clone(), mask, item.labels.clone());
        }
        MaskMode::Chunk => (0, 0),
        MaskMode::Dynamic => cfg.rc_range,
    };
    let schedule = sample_schedule(
        item.words,
        cfg.chunk_range,
        rc_range,
        Some(cfg.left_context),
        rng,
    );
    let (seq, mask) =
        crate::masking::build_training_view(&schedule, &item.seq).expect("schedule covers sentence");
    let labels =
        project_labels(&item.nc_tags, &item.punct_tags, &seq).expect("word counts match");
    (seq, mask, labels)
}

fn item_seed(seed: u64, epoch: usize, batch: usize, slot: usize) -> u64 {
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add((batch as u64).wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add((slot as u64).wrapping_mul(0x94D049BB133111EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Train a model, returning the checkpoint with the best validation span F1.
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train_corpus: &Corpus,
    val_corpus: &Corpus,
    vocab: &Vocab,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<ModelParams<S>, TrainError> {
    if train_corpus.is_empty() || val_corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let train_items = prepare(train_corpus, vocab)?;
    let val_items = prepare(val_corpus, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params::<S>(model_cfg, &mut rng);
    let flat_len = params.set.flat_len();
    let mut optimizer = AdamW::new(flat_len, cfg.beta1, cfg.beta2, cfg.weight_decay);

    let mut best: Option<(f64, ModelParams<S>, usize)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, epoch, usize::MAX, 0));
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.gen_range(0..=i));
        }

        let mut epoch_loss_sum = 0.0f64;
        let mut epoch_loss_count = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Forward/backward each sentence; fixed-order reduction keeps
            // results identical whether or not items run in parallel.
            let results: Result<Vec<(ParamSet<S>, f64, usize)>, TrainError> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    let item = &train_items[idx];
                    let mut item_rng =
                        ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, epoch, batch_idx, slot));
                    let (seq, mask, labels) = view_for(cfg.mask_mode, cfg, item, &mut item_rng);
                    let offset_cap = cfg
                        .position_offset_max
                        .min(model_cfg.max_positions.saturating_sub(item.words));
                    let offset = item_rng.gen_range(0..=offset_cap);
                    let out = forward(&params, &seq, &mask, true, offset, &mut item_rng)?;
                    let item_loss = loss(&out.nc_logits, &out.punct_logits, &labels)?;
                    let grads = backward(&params, &out.trace, &labels)?;
                    Ok((grads, item_loss.to_f64().unwrap(), labels.loss_count()))
                })
                .collect();
            let results = results?;

            let total_count: usize = results.iter().map(|(_, _, c)| c).sum();
            let mut batch_grads = ParamSet::<S>::zeros(model_cfg);
            let mut batch_loss = 0.0f64;
            for (grads, item_loss, count) in &results {
                let w = *count as f64 / total_count as f64;
                batch_grads.add_scaled(grads, S::from_f64_c(w));
                batch_loss += item_loss * w;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss_sum += batch_loss * total_count as f64;
            epoch_loss_count += total_count;

            let norm = batch_grads.l2_norm().to_f64().unwrap();
            if norm > cfg.clip_norm {
                batch_grads.scale(S::from_f64_c(cfg.clip_norm / norm));
            }
            let mut theta = Vec::with_capacity(flat_len);
            params.set.append_flat(&mut theta);
            let mut g = Vec::with_capacity(flat_len);
            batch_grads.append_flat(&mut g);
            optimizer.step(&mut theta, &g, lr);
            params.set.assign_from_flat(&theta);
            params.bump_version();
        }

        let val_f1 = validation_f1(&params, &val_items, val_corpus)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss_sum / epoch_loss_count.max(1) as f64,
            val_f1,
            lr,
        };
        on_epoch(&record);
        let improved = best.as_ref().is_none_or(|(f, _, _)| val_f1 > *f);
        if improved {
            best = Some((val_f1, params.clone(), epoch));
        } else if let Some((_, _, best_epoch)) = best {
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }
    Ok(best.expect("at least one epoch ran").1)
}

/// Full-context span micro F1 used for checkpoint selection.
fn validation_f1<S: Scalar>(
    params: &ModelParams<S>,
    items: &[Prepared],
    corpus: &Corpus,
) -> Result<f64, TrainError> {
    let counts: Result<Vec<SentenceSpanCounts>, TrainError> = items
        .par_iter()
        .zip(&corpus.sentences)
        .map(|(item, sentence)| {
            let mask = AttentionMask::all_true(item.seq.len());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = forward(params, &item.seq, &mask, false, 0, &mut rng)?;
            let (nc, _) = predict_tags(&out.nc_logits, &out.punct_logits, &item.seq);
            Ok(span_counts(&sentence.nc_tags, &nc).expect("lengths match"))
        })
        .collect();
    let mut total = SentenceSpanCounts::default();
    for c in counts? {
        total.add(&c);
    }
    Ok(total.micro().f1())
}

#[derive(Debug, Clone)]
pub enum EvalMode {
    Full,
    Streaming {
        chunk_range: (usize, usize),
        rc_range: (usize, usize),
        left_context: usize,
        runs: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct CiConfig {
    pub iterations: usize,
    pub confidence: f64,
}

impl Default for CiConfig {
    fn default() -> CiConfig {
        CiConfig {
            iterations: 10_000,
            confidence: 0.95,
        }
    }
}

/// Per-sentence statistics accumulated over runs; the unit the bootstrap
/// resamples.
#[derive(Debug, Clone, Default)]
pub struct SentenceStats {
    pub spans: SentenceSpanCounts,
    pub wer: ItnWerCounts,
}

/// Simulate chunked streaming inference over one sentence: each chunk is
/// tagged from a window of `l` left words, the chunk, and its sampled right
/// context, with window-relative positions.
fn predict_streaming_sentence<S: Scalar>(
    params: &ModelParams<S>,
    vocab: &Vocab,
    spoken: &[String],
    chunk_range: (usize, usize),
    rc_range: (usize, usize),
    left_context: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<NcTag>, Vec<PunctTag>), TrainError> {
    let schedule = sample_schedule(spoken.len(), chunk_range, rc_range, Some(left_context), rng);
    let mut nc = Vec::with_capacity(spoken.len());
    let mut punct = Vec::with_capacity(spoken.len());
    let mut start = 0usize;
    for (k, &size) in schedule.chunk_sizes.iter().enumerate() {
        let end = start + size;
        let rc = schedule.right_contexts[k];
        let left = start.saturating_sub(left_context);
        let look_end = (end + rc).min(spoken.len());
        let window = &spoken[left..look_end];
        let seq = tokenize(window, vocab);
        let mask = build_window_mask(start - left, size, look_end - end, &seq);
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(params, &seq, &mask, false, 0, &mut fwd_rng)?;
        let (w_nc, w_punct) = predict_raw_tags(&out.nc_logits, &out.punct_logits, &seq);
        for w in (start - left)..(start - left + size) {
            nc.push(w_nc[w]);
            punct.push(w_punct[w]);
        }
        start = end;
    }
    repair_iob(&mut nc);
    Ok((nc, punct))
}

/// Evaluate a checkpoint, optionally with bootstrap confidence intervals.
/// Streaming mode averages each metric over `runs` independent simulations.
pub fn evaluate<S: Scalar>(
    params: &ModelParams<S>,
    vocab: &Vocab,
    grammars: &GrammarSet<S>,
    corpus: &Corpus,
    mode: &EvalMode,
    seed: u64,
    ci: Option<CiConfig>,
) -> Result<EvalReport, TrainError> {
    let items = prepare(corpus, vocab)?;
    let runs = match mode {
        EvalMode::Full => 1,
        EvalMode::Streaming { runs, .. } => (*runs).max(1),
    };

    let mut per_sentence: Vec<SentenceStats> = vec![SentenceStats::default(); corpus.len()];
    let mut run_micro: Vec<Prf> = Vec::with_capacity(runs);
    let mut run_per_class: Vec<std::collections::HashMap<String, Prf>> = Vec::new();
    let mut run_punct: Vec<std::collections::HashMap<String, f64>> = Vec::new();
    let mut run_iwer: Vec<f64> = Vec::with_capacity(runs);
    let mut run_niwer: Vec<f64> = Vec::with_capacity(runs);

    for run in 0..runs {
        let run_seed = seed.wrapping_add(run as u64);
        let preds: Result<Vec<(Vec<NcTag>, Vec<PunctTag>)>, TrainError> = match mode {
            EvalMode::Full => items
                .par_iter()
                .map(|item| {
                    let mask = AttentionMask::all_true(item.seq.len());
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = forward(params, &item.seq, &mask, false, 0, &mut rng)?;
                    Ok(predict_tags(&out.nc_logits, &out.punct_logits, &item.seq))
                })
                .collect(),
            EvalMode::Streaming {
                chunk_range,
                rc_range,
                left_context,
                ..
            } => corpus
                .sentences
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(run_seed, 1, 0, i));
                    predict_streaming_sentence(
                        params,
                        vocab,
                        &s.spoken,
                        *chunk_range,
                        *rc_range,
                        *left_context,
                        &mut rng,
                    )
                })
                .collect(),
        };
        let preds = preds?;

        let mut run_span_total = SentenceSpanCounts::default();
        let mut run_wer_total = ItnWerCounts::default();
        let mut gold_punct: Vec<Vec<PunctTag>> = Vec::with_capacity(corpus.len());
        let mut pred_punct: Vec<Vec<PunctTag>> = Vec::with_capacity(corpus.len());
        for (i, (sentence, (nc, punct))) in corpus.sentences.iter().zip(&preds).enumerate() {
            let sc = span_counts(&sentence.nc_tags, nc).expect("lengths match");
            run_span_total.add(&sc);
            per_sentence[i].spans.add(&sc);
            let hypothesis = crate::streaming::postprocess(&sentence.spoken, nc, punct, grammars);
            let ref_words: Vec<&str> = sentence.written.split_whitespace().collect();
            let hyp_words: Vec<&str> = hypothesis.split_whitespace().collect();
            let wc = itn_wer(&ref_words, &sentence.itn_flags, &hyp_words)
                .expect("flag lengths verified at load");
            run_wer_total.add(&wc);
            per_sentence[i].wer.add(&wc);
            gold_punct.push(sentence.punct_tags.clone());
            pred_punct.push(punct.clone());
        }
        run_micro.push(Prf::from(run_span_total.micro()));
        run_per_class.push(
            run_span_total
                .per_class
                .iter()
                .map(|(cat, &c)| (cat.name().to_string(), Prf::from(c)))
                .collect(),
        );
        run_punct.push(punct_f1(&gold_punct, &pred_punct).expect("aligned"));
        run_iwer.push(run_wer_total.i_wer());
        run_niwer.push(run_wer_total.ni_wer());
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let micro = Prf {
        precision: mean(&run_micro.iter().map(|p| p.precision).collect::<Vec<_>>()),
        recall: mean(&run_micro.iter().map(|p| p.recall).collect::<Vec<_>>()),
        f1: mean(&run_micro.iter().map(|p| p.f1).collect::<Vec<_>>()),
    };
    let mut per_class = std::collections::HashMap::new();
    for cat in crate::tags::CATEGORIES {
        let name = cat.name().to_string();
        per_class.insert(
            name.clone(),
            Prf {
                precision: mean(&run_per_class.iter().map(|m| m[&name].precision).collect::<Vec<_>>()),
                recall: mean(&run_per_class.iter().map(|m| m[&name].recall).collect::<Vec<_>>()),
                f1: mean(&run_per_class.iter().map(|m| m[&name].f1).collect::<Vec<_>>()),
            },
        );
    }
    let mut punct = std::collections::HashMap::new();
    for tag in crate::tags::PUNCT_TAGS.iter().filter(|t| !matches!(t, PunctTag::None)) {
        let name = tag.label().to_string();
        punct.insert(
            name.clone(),
            mean(&run_punct.iter().map(|m| m[&name]).collect::<Vec<_>>()),
        );
    }

    let (f1_ci, i_wer_ci, ni_wer_ci) = match ci {
        None => (None, None, None),
        Some(c) => {
            let f1_ci = bootstrap_ci(
                &per_sentence,
                |xs| {
                    let mut total = SpanCounts::default();
                    for s in xs {
                        total.add(&s.spans.micro());
                    }
                    total.f1()
                },
                c.iterations,
                c.confidence,
                seed ^ 0xF1,
            );
            let i_ci = bootstrap_ci(
                &per_sentence,
                |xs| {
                    let mut total = ItnWerCounts::default();
                    for s in xs {
                        total.add(&s.wer);
                    }
                    total.i_wer()
                },
                c.iterations,
                c.confidence,
                seed ^ 0x1E,
            );
            let ni_ci = bootstrap_ci(
                &per_sentence,
                |xs| {
                    let mut total = ItnWerCounts::default();
                    for s in xs {
                        total.add(&s.wer);
                    }
                    total.ni_wer()
                },
                c.iterations,
                c.confidence,
                seed ^ 0x2E,
            );
            (Some(f1_ci), Some(i_ci), Some(ni_ci))
        }
    };

    Ok(EvalReport {
        per_class,
        micro,
        punct_f1: punct,
        i_wer: mean(&run_iwer),
        ni_wer: mean(&run_niwer),
        f1_ci,
        i_wer_ci,
        ni_wer_ci,
    })
}

/// Paired bootstrap for a metric difference between two per-sentence stat
/// vectors over the same test set.
pub fn paired_gap_ci(
    a: &[SentenceStats],
    b: &[SentenceStats],
    iterations: usize,
    confidence: f64,
    seed: u64,
) -> Ci {
    assert_eq!(a.len(), b.len());
    let paired: Vec<(SentenceStats, SentenceStats)> = a
        .iter()
        .cloned()
        .zip(b.iter().cloned())
        .collect();
    bootstrap_ci(
        &paired,
        |xs| {
            let mut ta = SpanCounts::default();
            let mut tb = SpanCounts::default();
            for (sa, sb) in xs {
                ta.add(&sa.spans.micro());
                tb.add(&sb.spans.micro());
            }
            ta.f1() - tb.f1()
        },
        iterations,
        confidence,
        seed,
    )
}

/// Per-sentence span/WER statistics for one evaluation protocol, summed over
/// runs. Used by the ablation comparison and its paired bootstrap.
pub fn sentence_stats<S: Scalar>(
    params: &ModelParams<S>,
    vocab: &Vocab,
    grammars: &GrammarSet<S>,
    corpus: &Corpus,
    mode: &EvalMode,
    seed: u64,
) -> Result<Vec<SentenceStats>, TrainError> {
    let items = prepare(corpus, vocab)?;
    let runs = match mode {
        EvalMode::Full => 1,
        EvalMode::Streaming { runs, .. } => (*runs).max(1),
    };
    let mut per_sentence: Vec<SentenceStats> = vec![SentenceStats::default(); corpus.len()];
    for run in 0..runs {
        let run_seed = seed.wrapping_add(run as u64);
        let preds: Result<Vec<(Vec<NcTag>, Vec<PunctTag>)>, TrainError> = match mode {
            EvalMode::Full => items
                .par_iter()
                .map(|item| {
                    let mask = AttentionMask::all_true(item.seq.len());
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = forward(params, &item.seq, &mask, false, 0, &mut rng)?;
                    Ok(predict_tags(&out.nc_logits, &out.punct_logits, &item.seq))
                })
                .collect(),
            EvalMode::Streaming {
                chunk_range,
                rc_range,
                left_context,
                ..
            } => corpus
                .sentences
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(run_seed, 1, 0, i));
                    predict_streaming_sentence(
                        params,
                        vocab,
                        &s.spoken,
                        *chunk_range,
                        *rc_range,
                        *left_context,
                        &mut rng,
                    )
                })
                .collect(),
        };
        for (i, (sentence, (nc, punct))) in corpus.sentences.iter().zip(&preds?).enumerate() {
            per_sentence[i]
                .spans
                .add(&span_counts(&sentence.nc_tags, nc).expect("lengths match"));
            let hypothesis = crate::streaming::postprocess(&sentence.spoken, nc, punct, grammars);
            let ref_words: Vec<&str> = sentence.written.split_whitespace().collect();
            let hyp_words: Vec<&str> = hypothesis.split_whitespace().collect();
            per_sentence[i].wer.add(
                &itn_wer(&ref_words, &sentence.itn_flags, &hyp_words).expect("flags aligned"),
            );
        }
    }
    Ok(per_sentence)
}
