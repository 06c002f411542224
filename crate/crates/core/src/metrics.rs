//! Tagging and text-quality metrics: exact-match span precision/recall/F1,
//! word error rate with a deterministic alignment, ITN-region error rates,
//! and percentile-bootstrap confidence intervals.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tags::{Category, NcTag, PunctTag, CATEGORIES, PUNCT_TAGS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty reference with non-empty hypothesis: rate undefined")]
    EmptyReference,
}

/// One labeled span: [start, end) word range plus category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: Category,
}

/// Decode IOB tags into spans. An I continuing a span of the same category
/// extends it; anything else closes the open span.
pub fn spans_of(tags: &[NcTag]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            NcTag::Begin(cat) => {
                if let Some(s) = open.take() {
                    spans.push(s);
                }
                open = Some(Span {
                    start: i,
                    end: i + 1,
                    category: cat,
                });
            }
            NcTag::Inside(cat) => match open {
                Some(ref mut s) if s.category == cat && s.end == i => {
                    s.end = i + 1;
                }
                _ => {
                    // Unrepaired leading I: treat as a new span.
                    if let Some(s) = open.take() {
                        spans.push(s);
                    }
                    open = Some(Span {
                        start: i,
                        end: i + 1,
                        category: cat,
                    });
                }
            },
            NcTag::Outside => {
                if let Some(s) = open.take() {
                    spans.push(s);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(s);
    }
    spans
}

/// True/false positives and false negatives for exact span matching.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SpanCounts {
    pub fn add(&mut self, other: &SpanCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Per-sentence exact-match span counts, overall and per category.
pub fn span_counts(gold: &[NcTag], pred: &[NcTag]) -> Result<SentenceSpanCounts, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "gold has {} tags, pred has {}",
            gold.len(),
            pred.len()
        )));
    }
    let gold_spans = spans_of(gold);
    let pred_spans = spans_of(pred);
    let gold_set: std::collections::HashSet<Span> = gold_spans.iter().copied().collect();
    let mut per_class: HashMap<Category, SpanCounts> = HashMap::new();
    for &cat in &CATEGORIES {
        per_class.insert(cat, SpanCounts::default());
    }
    for p in &pred_spans {
        let c = per_class.get_mut(&p.category).unwrap();
        if gold_set.contains(p) {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    let pred_set: std::collections::HashSet<Span> = pred_spans.iter().copied().collect();
    for g in &gold_spans {
        if !pred_set.contains(g) {
            per_class.get_mut(&g.category).unwrap().fn_ += 1;
        }
    }
    Ok(SentenceSpanCounts { per_class })
}

#[derive(Debug, Clone, Default)]
pub struct SentenceSpanCounts {
    pub per_class: HashMap<Category, SpanCounts>,
}

impl SentenceSpanCounts {
    pub fn micro(&self) -> SpanCounts {
        let mut total = SpanCounts::default();
        for c in self.per_class.values() {
            total.add(c);
        }
        total
    }

    pub fn add(&mut self, other: &SentenceSpanCounts) {
        for (&cat, counts) in &other.per_class {
            self.per_class.entry(cat).or_default().add(counts);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<SpanCounts> for Prf {
    fn from(c: SpanCounts) -> Prf {
        Prf {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

/// Exact-match span scoring over a corpus of tag sequences.
pub fn span_prf(
    gold: &[Vec<NcTag>],
    pred: &[Vec<NcTag>],
) -> Result<(HashMap<Category, Prf>, Prf), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "gold has {} sentences, pred has {}",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = SentenceSpanCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        total.add(&span_counts(g, p)?);
    }
    let per_class = total
        .per_class
        .iter()
        .map(|(&cat, &c)| (cat, Prf::from(c)))
        .collect();
    Ok((per_class, Prf::from(total.micro())))
}

// ---------------------------------------------------------------------------
// Word error rate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WerResult {
    pub rate: f64,
    pub errors: usize,
    pub reference_len: usize,
    pub ops: Vec<EditOp>,
}

/// Levenshtein alignment with unit costs. Tie-break during backtrace prefers
/// match > sub > del > ins, which makes the alignment deterministic.
pub fn wer<W: AsRef<str>, V: AsRef<str>>(
    reference: &[W],
    hypothesis: &[V],
) -> Result<WerResult, MetricsError> {
    if reference.is_empty() && !hypothesis.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let eq = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = d[i - 1][j - 1] + usize::from(!eq);
            let del = d[i - 1][j] + 1;
            let ins = d[i][j - 1] + 1;
            d[i][j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = d[i][j];
        let eq = i > 0 && j > 0 && reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
        if eq && d[i - 1][j - 1] == cur {
            ops.push(EditOp::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i - 1][j - 1] + 1 == cur {
            ops.push(EditOp::Sub);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i - 1][j] + 1 == cur {
            ops.push(EditOp::Del);
            i -= 1;
        } else {
            ops.push(EditOp::Ins);
            j -= 1;
        }
    }
    ops.reverse();
    let errors = ops.iter().filter(|&&op| op != EditOp::Match).count();
    let rate = if n == 0 { 0.0 } else { errors as f64 / n as f64 };
    Ok(WerResult {
        rate,
        errors,
        reference_len: n,
        ops,
    })
}

/// Word error split by ITN-region membership of the aligned reference word.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ItnWerCounts {
    pub itn_errors: usize,
    pub itn_ref_words: usize,
    pub non_itn_errors: usize,
    pub non_itn_ref_words: usize,
}

impl ItnWerCounts {
    pub fn add(&mut self, other: &ItnWerCounts) {
        self.itn_errors += other.itn_errors;
        self.itn_ref_words += other.itn_ref_words;
        self.non_itn_errors += other.non_itn_errors;
        self.non_itn_ref_words += other.non_itn_ref_words;
    }

    pub fn i_wer(&self) -> f64 {
        if self.itn_ref_words == 0 {
            0.0
        } else {
            self.itn_errors as f64 / self.itn_ref_words as f64
        }
    }

    pub fn ni_wer(&self) -> f64 {
        if self.non_itn_ref_words == 0 {
            0.0
        } else {
            self.non_itn_errors as f64 / self.non_itn_ref_words as f64
        }
    }
}

/// I-WER / NI-WER over written words.
///
/// Substitutions and deletions are attributed to the region of their aligned
/// reference word; insertions to the region of the nearest preceding
/// reference word, with sentence-initial insertions counted as non-ITN.
pub fn itn_wer<W: AsRef<str>, V: AsRef<str>>(
    reference: &[W],
    itn_flags: &[bool],
    hypothesis: &[V],
) -> Result<ItnWerCounts, MetricsError> {
    if reference.len() != itn_flags.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "reference has {} words but {} flags",
            reference.len(),
            itn_flags.len()
        )));
    }
    let alignment = wer(reference, hypothesis)?;
    let mut counts = ItnWerCounts {
        itn_ref_words: itn_flags.iter().filter(|&&f| f).count(),
        non_itn_ref_words: itn_flags.iter().filter(|&&f| !f).count(),
        ..Default::default()
    };
    let mut ref_pos = 0usize; // reference words consumed so far
    for op in &alignment.ops {
        match op {
            EditOp::Match => ref_pos += 1,
            EditOp::Sub | EditOp::Del => {
                if itn_flags[ref_pos] {
                    counts.itn_errors += 1;
                } else {
                    counts.non_itn_errors += 1;
                }
                ref_pos += 1;
            }
            EditOp::Ins => {
                let itn = ref_pos > 0 && itn_flags[ref_pos - 1];
                if itn {
                    counts.itn_errors += 1;
                } else {
                    counts.non_itn_errors += 1;
                }
            }
        }
    }
    debug_assert_eq!(
        counts.itn_errors + counts.non_itn_errors,
        alignment.errors,
        "region errors must partition total errors"
    );
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Bootstrap confidence intervals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    /// Metric on the original set (not the resample mean).
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile bootstrap over per-sentence items.
///
/// Draws `iterations` resamples with replacement, recomputes the aggregate
/// per resample, and reports the `confidence` interval by linear-interpolated
/// percentiles. Deterministic given the seed.
pub fn bootstrap_ci<T, F: Fn(&[&T]) -> f64>(
    items: &[T],
    aggregate: F,
    iterations: usize,
    confidence: f64,
    seed: u64,
) -> Ci {
    assert!(!items.is_empty(), "bootstrap needs at least one item");
    assert!((0.0..1.0).contains(&confidence));
    let all: Vec<&T> = items.iter().collect();
    let mean = aggregate(&all);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(iterations);
    let mut sample: Vec<&T> = Vec::with_capacity(items.len());
    for _ in 0..iterations {
        sample.clear();
        for _ in 0..items.len() {
            sample.push(&items[rng.gen_range(0..items.len())]);
        }
        values.push(aggregate(&sample));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - confidence) / 2.0;
    Ci {
        mean,
        lower: percentile(&values, alpha),
        upper: percentile(&values, 1.0 - alpha),
    }
}

/// Linear-interpolated percentile of sorted values (`p` in [0, 1]).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

/// Full evaluation output; serializes as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keyed by category name.
    pub per_class: HashMap<String, Prf>,
    pub micro: Prf,
    /// Keyed by punctuation label.
    pub punct_f1: HashMap<String, f64>,
    pub i_wer: f64,
    pub ni_wer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_ci: Option<Ci>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_wer_ci: Option<Ci>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ni_wer_ci: Option<Ci>,
}

impl EvalReport {
    /// One table-style row: Precision / Recall / F1 / I_WER / NI_WER,
    /// error rates scaled by 100 for presentation.
    pub fn render_row(&self, label: &str) -> String {
        let ci = |v: f64, ci: &Option<Ci>| match ci {
            Some(c) => format!("{:.4}[{:.4},{:.4}]", v, c.lower, c.upper),
            None => format!("{v:.4}"),
        };
        format!(
            "{label}\tP={:.4}\tR={:.4}\tF1={}\tI_WER={}\tNI_WER={}",
            self.micro.precision,
            self.micro.recall,
            ci(self.micro.f1, &self.f1_ci),
            ci(self.i_wer * 100.0, &self.i_wer_ci.map(|c| Ci {
                mean: c.mean * 100.0,
                lower: c.lower * 100.0,
                upper: c.upper * 100.0,
            })),
            ci(self.ni_wer * 100.0, &self.ni_wer_ci.map(|c| Ci {
                mean: c.mean * 100.0,
                lower: c.lower * 100.0,
                upper: c.upper * 100.0,
            })),
        )
    }
}

/// Punctuation scored per mark at word level: a word's predicted trailing
/// mark against its gold trailing mark.
pub fn punct_f1(
    gold: &[Vec<PunctTag>],
    pred: &[Vec<PunctTag>],
) -> Result<HashMap<String, f64>, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(
            "punct sentence counts differ".to_string(),
        ));
    }
    let mut tp: HashMap<PunctTag, usize> = HashMap::new();
    let mut fp: HashMap<PunctTag, usize> = HashMap::new();
    let mut fn_: HashMap<PunctTag, usize> = HashMap::new();
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(MetricsError::LengthMismatch(
                "punct word counts differ".to_string(),
            ));
        }
        for (&gt, &pt) in g.iter().zip(p) {
            if gt == pt {
                *tp.entry(gt).or_default() += 1;
            } else {
                *fp.entry(pt).or_default() += 1;
                *fn_.entry(gt).or_default() += 1;
            }
        }
    }
    let mut out = HashMap::new();
    for &tag in PUNCT_TAGS.iter().filter(|&&t| t != PunctTag::None) {
        let tp = *tp.get(&tag).unwrap_or(&0) as f64;
        let fp = *fp.get(&tag).unwrap_or(&0) as f64;
        let fn_ = *fn_.get(&tag).unwrap_or(&0) as f64;
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        out.insert(tag.label().to_string(), f1);
    }
    Ok(out)
}
