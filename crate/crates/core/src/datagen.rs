//! Deterministic synthetic corpus generator.
//!
//! Sentences embed Number/Date/Phone/Case spans in filler text, with gold IOB
//! tags, punctuation tags, a written-form reference, and per-written-word ITN
//! region flags. Entity verbalization walks the tables in [`crate::verbal`],
//! the same tables the WFST grammars are compiled from; the written reference
//! is rendered directly here, independently of the transducers, so
//! postprocessing the gold tags against the reference is a real end-to-end
//! check.
//!
//! Tag determinism: every surface form has exactly one gold reading. Words
//! that belong to entity vocabularies never appear as fillers, with two
//! deliberate ambiguities that need context to resolve: "may"/"march" are
//! months only when followed by an ordinal day, and "mark"/"bill"/"grace"
//! are names only when preceded by a title word. Phone numbers and short
//! digit-run numbers share a surface vocabulary and differ only in run
//! length.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tags::{Category, NcTag, PunctTag};
use crate::verbal::{
    spoken_cardinal, spoken_digit_string, spoken_ordinal_day, DAYS_IN_MONTH_LEAP, MONTHS,
    MONTHS_WRITTEN,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad corpus file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const FILLERS: &[&str] = &[
    "the", "a", "we", "you", "i", "they", "he", "she", "it", "to", "go", "going", "see", "look",
    "take", "send", "pay", "meet", "at", "in", "on", "for", "with", "now", "today", "tomorrow",
    "please", "thanks", "ok", "fine", "good", "great", "room", "price", "total", "order", "about",
    "back", "home", "again", "soon", "later", "right", "here", "there",
];

const CONNECTORS: &[&str] = &["and", "but", "so", "then", "because"];
const QUESTION_OPENERS: &[&str] = &[
    "what", "where", "when", "why", "how", "do", "does", "did", "is", "are", "can", "could",
    "will",
];
const EXCLAIM_OPENERS: &[&str] = &["wow", "oh"];

/// Words that are always names.
const NAMES: &[&str] = &[
    "peter", "mary", "anna", "john", "david", "sarah", "tom", "lucy", "henry", "alice", "emma",
    "oliver",
];
/// Names only when preceded by a title; fillers otherwise.
const AMBIG_NAMES: &[&str] = &["mark", "bill", "grace"];
const TITLES: &[&str] = &["mister", "miss"];
/// Month words that double as ordinary fillers when no ordinal day follows.
const AMBIG_MONTHS: &[&str] = &["may", "march"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Category weights for each embedded entity: Case, Number, Date, Phone.
    pub entity_mix: [f64; 4],
    /// Probabilities of a sentence containing 0, 1, 2 or 3 entities.
    pub entity_count_probs: [f64; 4],
    pub question_prob: f64,
    pub exclaim_prob: f64,
    /// Probabilities of a sentence having 1, 2 or 3 clauses.
    pub clause_count_probs: [f64; 3],
    /// Sentence length target range in words.
    pub length_range: (usize, usize),
    pub fillers: Vec<String>,
}

impl Default for GenConfig {
    fn default() -> GenConfig {
        GenConfig {
            sentences: 1000,
            seed: 1,
            entity_mix: [0.25, 0.3, 0.3, 0.15],
            entity_count_probs: [0.15, 0.40, 0.30, 0.15],
            question_prob: 0.25,
            exclaim_prob: 0.15,
            clause_count_probs: [0.55, 0.30, 0.15],
            length_range: (7, 18),
            fillers: FILLERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), DatagenError> {
        let err = |m: &str| Err(DatagenError::InvalidConfig(m.to_string()));
        if self.sentences == 0 {
            return err("sentences must be > 0");
        }
        for p in self
            .entity_count_probs
            .iter()
            .chain(self.clause_count_probs.iter())
            .chain([&self.question_prob, &self.exclaim_prob])
        {
            if !(0.0..=1.0).contains(p) {
                return err("probabilities must lie in [0, 1]");
            }
        }
        if self.question_prob + self.exclaim_prob > 1.0 {
            return err("question_prob + exclaim_prob must be <= 1");
        }
        if self.entity_mix.iter().any(|&w| w < 0.0) || self.entity_mix.iter().sum::<f64>() <= 0.0 {
            return err("entity_mix must be non-negative weights with positive sum");
        }
        if self.fillers.is_empty() {
            return err("filler vocabulary must be non-empty");
        }
        if self.length_range.0 < 4 || self.length_range.0 > self.length_range.1 {
            return err("bad length range");
        }
        Ok(())
    }
}

/// One labeled sentence. `itn_flags` align with `written.split_whitespace()`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sentence {
    pub spoken: Vec<String>,
    pub nc_tags: Vec<NcTag>,
    pub punct_tags: Vec<PunctTag>,
    pub written: String,
    pub itn_flags: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// One JSON record per line.
    pub fn save(&self, path: &Path) -> Result<(), DatagenError> {
        let mut f = fs::File::create(path)?;
        for s in &self.sentences {
            serde_json::to_writer(&mut f, s).map_err(|e| DatagenError::BadFile(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Corpus, DatagenError> {
        let f = fs::File::open(path)?;
        let mut sentences = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(&line)
                .map_err(|e| DatagenError::BadFile(format!("line {}: {e}", i + 1)))?;
            if s.spoken.len() != s.nc_tags.len()
                || s.spoken.len() != s.punct_tags.len()
                || s.written.split_whitespace().count() != s.itn_flags.len()
            {
                return Err(DatagenError::BadFile(format!(
                    "line {}: inconsistent field lengths",
                    i + 1
                )));
            }
            sentences.push(s);
        }
        Ok(Corpus { sentences })
    }

    /// Deterministic 80/10/10 split.
    pub fn split(&self) -> (Corpus, Corpus, Corpus) {
        let n = self.sentences.len();
        let train_end = n * 8 / 10;
        let val_end = train_end + n / 10;
        let slice = |r: std::ops::Range<usize>| Corpus {
            sentences: self.sentences[r].to_vec(),
        };
        (
            slice(0..train_end),
            slice(train_end..val_end),
            slice(val_end..n),
        )
    }
}

/// One realized entity: spoken words plus the written chunk they become.
#[derive(Debug, Clone)]
struct Entity {
    category: Category,
    spoken: Vec<String>,
    written: String,
}

fn weighted_choice(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut dart = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        dart -= w;
        if dart < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn pick<'a>(items: &'a [&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn uppercase_first(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn realize_number(rng: &mut ChaCha8Rng) -> Entity {
    let kind = weighted_choice(&[0.40, 0.25, 0.10, 0.05, 0.20], rng);
    let (spoken, written): (Vec<&str>, String) = match kind {
        0 => {
            // Plain cardinal; mixed magnitudes, biased small.
            let digits = rng.gen_range(1..=6);
            let n = if digits == 1 {
                rng.gen_range(0..=9u64)
            } else {
                let lo = 10u64.pow(digits - 1);
                rng.gen_range(lo..(lo * 10))
            };
            (spoken_cardinal(n), n.to_string())
        }
        1 => {
            // Decimal: int part 0..=999, 1-3 fraction digits.
            let int = rng.gen_range(0..=999u64);
            let frac_len = rng.gen_range(1..=3);
            let frac: Vec<u8> = (0..frac_len).map(|_| rng.gen_range(0..=9)).collect();
            let mut spoken = spoken_cardinal(int);
            spoken.push(crate::verbal::POINT);
            spoken.extend(spoken_digit_string(&frac));
            let frac_str: String = frac.iter().map(|d| d.to_string()).collect();
            (spoken, format!("{int}.{frac_str}"))
        }
        2 => {
            // Decimal plus magnitude word kept in written form.
            let int = rng.gen_range(0..=99u64);
            let frac = rng.gen_range(0..=9u8);
            let magnitude = if rng.gen_bool(0.5) {
                crate::verbal::THOUSAND
            } else {
                crate::verbal::MILLION
            };
            let mut spoken = spoken_cardinal(int);
            spoken.push(crate::verbal::POINT);
            spoken.push(crate::verbal::DIGITS[frac as usize]);
            spoken.push(magnitude);
            (spoken, format!("{int}.{frac} {magnitude}"))
        }
        3 => {
            // Cardinal millions.
            let n = rng.gen_range(1..=999u64);
            let mut spoken = spoken_cardinal(n);
            spoken.push(crate::verbal::MILLION);
            (spoken, format!("{n} million"))
        }
        _ => {
            // Short digit run, e.g. a room code: "three zero five" -> "3 0 5".
            let len = rng.gen_range(2..=4);
            let digits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=9)).collect();
            let written = digits
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            (spoken_digit_string(&digits), written)
        }
    };
    Entity {
        category: Category::Number,
        spoken: spoken.into_iter().map(str::to_string).collect(),
        written,
    }
}

fn realize_date(rng: &mut ChaCha8Rng) -> Entity {
    // Bias toward the ambiguous months so right context genuinely matters.
    let month = if rng.gen_bool(0.6) {
        let name = pick(AMBIG_MONTHS, rng);
        MONTHS.iter().position(|&m| m == name).unwrap()
    } else {
        rng.gen_range(0..12)
    };
    let day = rng.gen_range(1..=DAYS_IN_MONTH_LEAP[month]);
    let mut spoken: Vec<&str> = vec![MONTHS[month]];
    spoken.extend(spoken_ordinal_day(day));
    let mut written = format!("{} {}", MONTHS_WRITTEN[month], day);
    if rng.gen_bool(0.6) {
        let year = rng.gen_range(1900..=2099u64);
        spoken.extend(spoken_cardinal(year));
        written.push_str(&format!(", {year}"));
    }
    Entity {
        category: Category::Date,
        spoken: spoken.into_iter().map(str::to_string).collect(),
        written,
    }
}

fn realize_phone(rng: &mut ChaCha8Rng) -> Entity {
    let len = rng.gen_range(9..=11);
    let mut digits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=9)).collect();
    if rng.gen_bool(0.5) {
        digits[0] = 0;
    }
    let written: String = digits.iter().map(|d| d.to_string()).collect();
    Entity {
        category: Category::Phone,
        spoken: spoken_digit_string(&digits)
            .into_iter()
            .map(str::to_string)
            .collect(),
        written,
    }
}

/// A Case span; the optional leading title word is a filler, not span
/// content, and is returned separately.
fn realize_case(rng: &mut ChaCha8Rng) -> (Option<String>, Entity) {
    if rng.gen_bool(0.3) {
        // Ambiguous name: requires the title to be readable as a name.
        let title = pick(TITLES, rng).to_string();
        let name = pick(AMBIG_NAMES, rng).to_string();
        let written = uppercase_first(&name);
        (
            Some(title),
            Entity {
                category: Category::Case,
                spoken: vec![name],
                written,
            },
        )
    } else {
        let count = if rng.gen_bool(0.3) { 2 } else { 1 };
        let mut spoken = Vec::with_capacity(count);
        while spoken.len() < count {
            let name = pick(NAMES, rng).to_string();
            if !spoken.contains(&name) {
                spoken.push(name);
            }
        }
        let written = spoken
            .iter()
            .map(|w| uppercase_first(w))
            .collect::<Vec<_>>()
            .join(" ");
        let title = rng.gen_bool(0.4).then(|| pick(TITLES, rng).to_string());
        (
            title,
            Entity {
                category: Category::Case,
                spoken,
                written,
            },
        )
    }
}

#[derive(Debug, Clone)]
enum Item {
    Filler(String),
    Entity(Entity),
}

fn draw_filler(config: &GenConfig, rng: &mut ChaCha8Rng) -> String {
    // Occasional ambiguous words used in their filler reading.
    if rng.gen_bool(0.08) {
        return pick(AMBIG_MONTHS, rng).to_string();
    }
    if rng.gen_bool(0.06) {
        return pick(AMBIG_NAMES, rng).to_string();
    }
    config.fillers[rng.gen_range(0..config.fillers.len())].clone()
}

fn generate_sentence(config: &GenConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let stype = {
        let dart: f64 = rng.gen();
        if dart < config.question_prob {
            PunctTag::Question
        } else if dart < config.question_prob + config.exclaim_prob {
            PunctTag::Exclamation
        } else {
            PunctTag::Period
        }
    };
    let n_clauses = 1 + weighted_choice(&config.clause_count_probs, rng);
    let mut n_entities = weighted_choice(&config.entity_count_probs, rng);
    let mut entities: Vec<(Option<String>, Entity)> = Vec::new();
    for _ in 0..n_entities {
        let cat = crate::tags::CATEGORIES[weighted_choice(&config.entity_mix, rng)];
        let realized = match cat {
            Category::Number => (None, realize_number(rng)),
            Category::Date => (None, realize_date(rng)),
            Category::Phone => (None, realize_phone(rng)),
            Category::Case => realize_case(rng),
        };
        entities.push(realized);
    }
    // A phone span is long; keep at most two entities alongside one.
    if entities
        .iter()
        .any(|(_, e)| e.category == Category::Phone)
        && entities.len() > 2
    {
        let phone_at = entities
            .iter()
            .position(|(_, e)| e.category == Category::Phone)
            .unwrap();
        let keep_phone = entities.remove(phone_at);
        entities.truncate(1);
        entities.push(keep_phone);
    }
    n_entities = entities.len();

    let entity_words: usize = entities
        .iter()
        .map(|(t, e)| e.spoken.len() + usize::from(t.is_some()))
        .sum();
    let opener_words = usize::from(stype != PunctTag::Period);
    let connector_words = n_clauses - 1;
    let target = rng.gen_range(config.length_range.0..=config.length_range.1);
    // At least two fillers per clause keeps entities separable.
    let filler_budget = target
        .saturating_sub(entity_words + opener_words + connector_words)
        .max(2 * n_clauses)
        .max(n_entities + n_clauses);

    // Distribute fillers across clauses.
    let mut clause_fillers: Vec<Vec<String>> = Vec::with_capacity(n_clauses);
    let base = filler_budget / n_clauses;
    let mut rem = filler_budget % n_clauses;
    for _ in 0..n_clauses {
        let extra = usize::from(rem > 0);
        rem = rem.saturating_sub(1);
        let count = base + extra;
        clause_fillers.push((0..count).map(|_| draw_filler(config, rng)).collect());
    }

    // Lead words: sentence opener for the first clause, connectors afterwards.
    let mut clause_leads: Vec<Option<String>> = vec![None; n_clauses];
    match stype {
        PunctTag::Question => clause_leads[0] = Some(pick(QUESTION_OPENERS, rng).to_string()),
        PunctTag::Exclamation => clause_leads[0] = Some(pick(EXCLAIM_OPENERS, rng).to_string()),
        _ => {}
    }
    for lead in clause_leads.iter_mut().skip(1) {
        *lead = Some(pick(CONNECTORS, rng).to_string());
    }

    // Place each entity at a distinct gap (after filler g) of a random clause.
    let mut placements: Vec<(usize, usize, usize)> = Vec::new(); // clause, gap, entity idx
    for (idx, _) in entities.iter().enumerate() {
        let mut attempts = 0;
        loop {
            let clause = rng.gen_range(0..n_clauses);
            let gaps = clause_fillers[clause].len();
            if gaps >= 1 {
                let gap = rng.gen_range(1..=gaps);
                if !placements.iter().any(|&(c, g, _)| c == clause && g == gap) {
                    placements.push((clause, gap, idx));
                    break;
                }
            }
            attempts += 1;
            if attempts > 50 {
                // Out of distinct gaps: grow the clause by one filler.
                let clause = rng.gen_range(0..n_clauses);
                clause_fillers[clause].push(draw_filler(config, rng));
            }
        }
    }
    placements.sort_by_key(|&(c, g, _)| (c, g));

    // Assemble item streams per clause.
    let mut clause_items: Vec<Vec<Item>> = Vec::with_capacity(n_clauses);
    for (c, fillers) in clause_fillers.iter().enumerate() {
        let mut items: Vec<Item> = Vec::new();
        if let Some(lead) = &clause_leads[c] {
            items.push(Item::Filler(lead.clone()));
        }
        for (g, filler) in fillers.iter().enumerate() {
            items.push(Item::Filler(filler.clone()));
            for &(pc, pg, idx) in &placements {
                if pc == c && pg == g + 1 {
                    let (title, entity) = &entities[idx];
                    if let Some(t) = title {
                        items.push(Item::Filler(t.clone()));
                    }
                    items.push(Item::Entity(entity.clone()));
                }
            }
        }
        clause_items.push(items);
    }

    // Flatten into words, tags, and the written reference.
    let mut spoken: Vec<String> = Vec::new();
    let mut nc_tags: Vec<NcTag> = Vec::new();
    let mut punct_tags: Vec<PunctTag> = Vec::new();
    let mut written_tokens: Vec<String> = Vec::new();
    let mut itn_flags: Vec<bool> = Vec::new();
    for (c, items) in clause_items.iter().enumerate() {
        for item in items {
            match item {
                Item::Filler(w) => {
                    spoken.push(w.clone());
                    nc_tags.push(NcTag::Outside);
                    punct_tags.push(PunctTag::None);
                    written_tokens.push(w.clone());
                    itn_flags.push(false);
                }
                Item::Entity(e) => {
                    for (i, w) in e.spoken.iter().enumerate() {
                        spoken.push(w.clone());
                        nc_tags.push(if i == 0 {
                            NcTag::Begin(e.category)
                        } else {
                            NcTag::Inside(e.category)
                        });
                        punct_tags.push(PunctTag::None);
                    }
                    for tok in e.written.split_whitespace() {
                        written_tokens.push(tok.to_string());
                        itn_flags.push(true);
                    }
                }
            }
        }
        // Clause-final punctuation.
        let mark = if c + 1 == n_clauses { stype } else { PunctTag::Comma };
        *punct_tags.last_mut().expect("clause is non-empty") = mark;
        let last = written_tokens.last_mut().expect("clause is non-empty");
        last.push(mark.mark().expect("clause marks always render"));
    }
    // Sentence-initial capitalization.
    written_tokens[0] = uppercase_first(&written_tokens[0]);

    Sentence {
        spoken,
        nc_tags,
        punct_tags,
        written: written_tokens.join(" "),
        itn_flags,
    }
}

fn sentence_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    // splitmix64 over a combined key
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(attempt.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Generate a labeled corpus. Deterministic given the config; sentences are
/// pairwise distinct so corpus splits never share a sentence string.
pub fn generate(config: &GenConfig) -> Result<Corpus, DatagenError> {
    config.validate()?;
    let mut sentences = Vec::with_capacity(config.sentences);
    let mut seen: HashSet<String> = HashSet::new();
    for i in 0..config.sentences {
        let mut attempt = 0u64;
        loop {
            let mut rng = ChaCha8Rng::seed_from_u64(sentence_seed(config.seed, i as u64, attempt));
            let s = generate_sentence(config, &mut rng);
            let key = s.spoken.join(" ");
            if seen.insert(key) {
                sentences.push(s);
                break;
            }
            attempt += 1;
            assert!(
                attempt < 1000,
                "could not generate a distinct sentence after 1000 attempts"
            );
        }
    }
    Ok(Corpus { sentences })
}
