//! Concurrent-session latency benchmark.
//!
//! Simulates N independent streams fed fixed-size word chunks at an ASR-like
//! cadence. Each batch step pushes one chunk into every session (sessions run
//! in parallel) and measures wall-clock processing time; the real-time factor
//! is that time divided by the simulated chunk duration.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, GenConfig};
use crate::encoder::ModelParams;
use crate::scalar::Scalar;
use crate::streaming::{open_session, StreamConfig, StreamError};
use crate::tokenizer::Vocab;
use crate::wfst::grammar::GrammarSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub chunk_words: usize,
    pub mean_latency_ms: f64,
    pub p50_latency_ms: f64,
    pub p95_latency_ms: f64,
    /// Mean batch-step wall time divided by the simulated chunk duration.
    pub rtf: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub sessions: usize,
    pub cadence_ms: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "sessions={} cadence={}ms\nchunk\tmean_ms\tp50_ms\tp95_ms\tRTF\n",
            self.sessions, self.cadence_ms
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}{}\n",
                r.chunk_words,
                r.mean_latency_ms,
                r.p50_latency_ms,
                r.p95_latency_ms,
                r.rtf,
                if r.rtf < 1.0 { " (real-time)" } else { "" }
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sessions: usize,
    pub chunk_sizes: Vec<usize>,
    pub cadence_ms: f64,
    pub steps: usize,
    pub seed: u64,
    pub stream: StreamConfig,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            sessions: 100,
            chunk_sizes: vec![3, 4, 5],
            cadence_ms: 400.0,
            steps: 20,
            seed: 7,
            stream: StreamConfig::default(),
        }
    }
}

fn percentile_ms(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank]
}

/// Run the benchmark. Word streams are generated deterministically, but the
/// reported timings are wall-clock measurements.
pub fn run_bench<S: Scalar>(
    model: &ModelParams<S>,
    vocab: &Vocab,
    grammars: &GrammarSet<S>,
    config: &BenchConfig,
) -> Result<BenchReport, StreamError> {
    let mut rows = Vec::with_capacity(config.chunk_sizes.len());
    for &chunk_words in &config.chunk_sizes {
        // Per-session word streams, long enough for all steps.
        let words_needed = chunk_words * config.steps + 4;
        let streams: Vec<Vec<String>> = (0..config.sessions)
            .map(|s| {
                let corpus = generate(&GenConfig {
                    sentences: words_needed / 6 + 4,
                    seed: config
                        .seed
                        .wrapping_mul(1_000_003)
                        .wrapping_add(s as u64 * 31 + chunk_words as u64),
                    ..GenConfig::default()
                })
                .expect("bench generation config is valid");
                corpus
                    .sentences
                    .iter()
                    .flat_map(|s| s.spoken.iter().cloned())
                    .take(words_needed)
                    .collect()
            })
            .collect();

        let mut sessions = Vec::with_capacity(config.sessions);
        for _ in 0..config.sessions {
            sessions.push(open_session(model, vocab, grammars, config.stream.clone())?);
        }

        let mut step_wall_ms = Vec::with_capacity(config.steps);
        let mut latencies_ms: Vec<f64> = Vec::with_capacity(config.steps * config.sessions);
        for step in 0..config.steps {
            let t0 = Instant::now();
            let step_latencies: Vec<f64> = sessions
                .par_iter_mut()
                .zip(&streams)
                .map(|(session, stream)| {
                    let lo = step * chunk_words;
                    let hi = ((step + 1) * chunk_words).min(stream.len());
                    let mut fragment = stream[lo..hi].join(" ");
                    fragment.push(' ');
                    let t = Instant::now();
                    let _ = session.push(&fragment);
                    t.elapsed().as_secs_f64() * 1e3
                })
                .collect();
            step_wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            latencies_ms.extend(step_latencies);
        }

        latencies_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean_wall = step_wall_ms.iter().sum::<f64>() / step_wall_ms.len() as f64;
        rows.push(BenchRow {
            chunk_words,
            mean_latency_ms: latencies_ms.iter().sum::<f64>() / latencies_ms.len() as f64,
            p50_latency_ms: percentile_ms(&latencies_ms, 0.50),
            p95_latency_ms: percentile_ms(&latencies_ms, 0.95),
            rtf: mean_wall / config.cadence_ms,
            steps: config.steps,
        });
    }
    Ok(BenchReport {
        sessions: config.sessions,
        cadence_ms: config.cadence_ms,
        rows,
    })
}
