//! Weighted finite-state transducers over the tropical semiring
//! (min as addition, + as multiplication, 0 as identity).
//!
//! Supports the rational operations (union, concatenation, closure),
//! composition with an epsilon filter, and single-source shortest path with
//! deterministic lexicographic tie-breaking on the output sequence. Weights
//! in compiled grammars are dyadic rationals, so path sums are exact and
//! equality tests in the shortest-path backtrace are reliable.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::scalar::Scalar;

/// Reserved epsilon symbol id.
pub const EPSILON: u32 = 0;

#[derive(Debug, Error)]
pub enum WfstError {
    #[error("no accepting path")]
    NoParse,
    #[error("alphabet mismatch: left output alphabet {left} vs right input alphabet {right}")]
    AlphabetMismatch { left: usize, right: usize },
    #[error("bad fst file: {0}")]
    BadFile(String),
}

/// Bidirectional map between symbol strings and dense ids; id 0 is epsilon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    syms: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> SymbolTable {
        let mut t = SymbolTable {
            syms: Vec::new(),
            ids: HashMap::new(),
        };
        t.add("<eps>");
        t
    }

    pub fn add(&mut self, sym: &str) -> u32 {
        if let Some(&id) = self.ids.get(sym) {
            return id;
        }
        let id = self.syms.len() as u32;
        self.syms.push(sym.to_string());
        self.ids.insert(sym.to_string(), id);
        id
    }

    pub fn id(&self, sym: &str) -> Option<u32> {
        self.ids.get(sym).copied()
    }

    pub fn sym(&self, id: u32) -> &str {
        &self.syms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.syms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syms.is_empty()
    }
}

impl Default for SymbolTable {
    fn default() -> Self {
        SymbolTable::new()
    }
}

/// One transition: input symbol, output symbol (0 = epsilon), weight, target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc<S> {
    pub ilabel: u32,
    pub olabel: u32,
    pub weight: S,
    pub nextstate: usize,
}

/// Weighted transducer with dense state ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Fst<S> {
    start: usize,
    arcs: Vec<Vec<Arc<S>>>,
    finals: Vec<Option<S>>,
    /// Declared alphabet sizes, used only for composition compatibility
    /// checks. `None` means unspecified.
    pub input_alphabet: Option<usize>,
    pub output_alphabet: Option<usize>,
}

impl<S: Scalar> Fst<S> {
    pub fn new() -> Fst<S> {
        let mut f = Fst {
            start: 0,
            arcs: Vec::new(),
            finals: Vec::new(),
            input_alphabet: None,
            output_alphabet: None,
        };
        f.add_state();
        f
    }

    pub fn add_state(&mut self) -> usize {
        self.arcs.push(Vec::new());
        self.finals.push(None);
        self.arcs.len() - 1
    }

    pub fn add_arc(&mut self, from: usize, arc: Arc<S>) {
        debug_assert!(arc.nextstate < self.arcs.len(), "arc targets a valid state");
        debug_assert!(arc.weight.is_finite(), "weights are finite");
        self.arcs[from].push(arc);
    }

    pub fn set_start(&mut self, s: usize) {
        self.start = s;
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn set_final(&mut self, s: usize, weight: S) {
        self.finals[s] = Some(weight);
    }

    pub fn clear_final(&mut self, s: usize) {
        self.finals[s] = None;
    }

    pub fn final_weight(&self, s: usize) -> Option<S> {
        self.finals[s]
    }

    pub fn num_states(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.iter().map(Vec::len).sum()
    }

    pub fn arcs(&self, s: usize) -> &[Arc<S>] {
        &self.arcs[s]
    }

    pub fn finals(&self) -> impl Iterator<Item = (usize, S)> + '_ {
        self.finals
            .iter()
            .enumerate()
            .filter_map(|(s, w)| w.map(|w| (s, w)))
    }

    /// Copy `other`'s states into `self`, returning the state id offset.
    fn absorb(&mut self, other: &Fst<S>) -> usize {
        let offset = self.num_states();
        for state_arcs in &other.arcs {
            let mut shifted = state_arcs.clone();
            for a in &mut shifted {
                a.nextstate += offset;
            }
            self.arcs.push(shifted);
        }
        self.finals.extend(other.finals.iter().copied());
        offset
    }
}

impl<S: Scalar> Default for Fst<S> {
    fn default() -> Self {
        Fst::new()
    }
}

fn merge_alphabet(a: Option<usize>, b: Option<usize>) -> Option<usize> {
    match (a, b) {
        (Some(x), Some(y)) => {
            debug_assert_eq!(x, y, "rational operations require a shared symbol table");
            Some(x)
        }
        (x, None) => x,
        (None, y) => y,
    }
}

/// Chain automaton accepting exactly `tokens`, all weights 0.
pub fn linear_acceptor<S: Scalar>(tokens: &[u32]) -> Fst<S> {
    let mut f = Fst::new();
    let mut cur = f.start();
    for &t in tokens {
        let next = f.add_state();
        f.add_arc(
            cur,
            Arc {
                ilabel: t,
                olabel: t,
                weight: S::zero(),
                nextstate: next,
            },
        );
        cur = next;
    }
    f.set_final(cur, S::zero());
    f
}

/// Accepts `L(a) ∪ L(b)`.
pub fn union<S: Scalar>(a: &Fst<S>, b: &Fst<S>) -> Fst<S> {
    let mut f = Fst::new();
    let oa = f.absorb(a);
    let ob = f.absorb(b);
    for target in [oa + a.start(), ob + b.start()] {
        f.add_arc(
            0,
            Arc {
                ilabel: EPSILON,
                olabel: EPSILON,
                weight: S::zero(),
                nextstate: target,
            },
        );
    }
    f.input_alphabet = merge_alphabet(a.input_alphabet, b.input_alphabet);
    f.output_alphabet = merge_alphabet(a.output_alphabet, b.output_alphabet);
    f
}

/// Accepts `L(a) · L(b)`.
pub fn concat<S: Scalar>(a: &Fst<S>, b: &Fst<S>) -> Fst<S> {
    let mut f = Fst::new();
    let oa = f.absorb(a);
    let ob = f.absorb(b);
    f.add_arc(
        0,
        Arc {
            ilabel: EPSILON,
            olabel: EPSILON,
            weight: S::zero(),
            nextstate: oa + a.start(),
        },
    );
    for (s, w) in a.finals() {
        f.clear_final(oa + s);
        f.add_arc(
            oa + s,
            Arc {
                ilabel: EPSILON,
                olabel: EPSILON,
                weight: w,
                nextstate: ob + b.start(),
            },
        );
    }
    f.input_alphabet = merge_alphabet(a.input_alphabet, b.input_alphabet);
    f.output_alphabet = merge_alphabet(a.output_alphabet, b.output_alphabet);
    f
}

/// Accepts `L(a)*`, including the empty sequence.
pub fn closure<S: Scalar>(a: &Fst<S>) -> Fst<S> {
    let mut f = Fst::new();
    let oa = f.absorb(a);
    f.set_final(0, S::zero());
    f.add_arc(
        0,
        Arc {
            ilabel: EPSILON,
            olabel: EPSILON,
            weight: S::zero(),
            nextstate: oa + a.start(),
        },
    );
    for (s, w) in a.finals() {
        f.clear_final(oa + s);
        f.add_arc(
            oa + s,
            Arc {
                ilabel: EPSILON,
                olabel: EPSILON,
                weight: w,
                nextstate: 0,
            },
        );
    }
    f.input_alphabet = a.input_alphabet;
    f.output_alphabet = a.output_alphabet;
    f
}

/// Relation composition with tropical weights added along matched paths.
///
/// Epsilon moves are sequenced with a two-state filter: between real matches,
/// all left-side epsilon moves must precede right-side epsilon moves. Since
/// left moves touch only the left state and right moves only the right state,
/// every interleaving is equivalent to that canonical order, so the filter
/// removes duplicate epsilon paths without losing any composed pair.
pub fn compose<S: Scalar>(a: &Fst<S>, b: &Fst<S>) -> Result<Fst<S>, WfstError> {
    if let (Some(left), Some(right)) = (a.output_alphabet, b.input_alphabet) {
        if left != right {
            return Err(WfstError::AlphabetMismatch { left, right });
        }
    }
    let mut f: Fst<S> = Fst::new();
    let mut index: HashMap<(usize, usize, u8), usize> = HashMap::new();
    let key0 = (a.start(), b.start(), 0u8);
    index.insert(key0, 0);
    let mut stack = vec![key0];
    while let Some(key @ (qa, qb, filter)) = stack.pop() {
        let id = index[&key];
        if let (Some(wa), Some(wb)) = (a.final_weight(qa), b.final_weight(qb)) {
            f.set_final(id, wa + wb);
        }
        let push = |f: &mut Fst<S>,
                        index: &mut HashMap<(usize, usize, u8), usize>,
                        stack: &mut Vec<(usize, usize, u8)>,
                        target: (usize, usize, u8)| {
            *index.entry(target).or_insert_with(|| {
                stack.push(target);
                f.add_state()
            })
        };
        for arc_a in a.arcs(qa) {
            if arc_a.olabel == EPSILON {
                // Left-side epsilon move, blocked after a right-side one.
                if filter == 0 {
                    let t = push(&mut f, &mut index, &mut stack, (arc_a.nextstate, qb, 0));
                    f.add_arc(
                        id,
                        Arc {
                            ilabel: arc_a.ilabel,
                            olabel: EPSILON,
                            weight: arc_a.weight,
                            nextstate: t,
                        },
                    );
                }
            } else {
                for arc_b in b.arcs(qb) {
                    if arc_b.ilabel == arc_a.olabel {
                        let t = push(
                            &mut f,
                            &mut index,
                            &mut stack,
                            (arc_a.nextstate, arc_b.nextstate, 0),
                        );
                        f.add_arc(
                            id,
                            Arc {
                                ilabel: arc_a.ilabel,
                                olabel: arc_b.olabel,
                                weight: arc_a.weight + arc_b.weight,
                                nextstate: t,
                            },
                        );
                    }
                }
            }
        }
        for arc_b in b.arcs(qb) {
            if arc_b.ilabel == EPSILON {
                let t = push(&mut f, &mut index, &mut stack, (qa, arc_b.nextstate, 1));
                f.add_arc(
                    id,
                    Arc {
                        ilabel: EPSILON,
                        olabel: arc_b.olabel,
                        weight: arc_b.weight,
                        nextstate: t,
                    },
                );
            }
        }
    }
    f.input_alphabet = a.input_alphabet;
    f.output_alphabet = b.output_alphabet;
    Ok(f)
}

/// Minimum over accepting completions from each state: arc relaxation to the
/// fixpoint of `d[q] = min(final(q), min_arc w + d[next])`.
fn completion_distances<S: Scalar>(f: &Fst<S>) -> Vec<S> {
    let n = f.num_states();
    let mut incoming: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
    for q in 0..n {
        for a in f.arcs(q) {
            incoming[a.nextstate].push((q, a.weight));
        }
    }
    let mut dist = vec![S::infinity(); n];
    let mut queue: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut queued = vec![false; n];
    for (s, w) in f.finals() {
        dist[s] = w;
        queue.push_back(s);
        queued[s] = true;
    }
    // Bounded relaxation; cycles with negative total weight never occur in
    // tropical grammars built here (all weights >= 0).
    let mut budget = (n as u64 + 1) * (f.num_arcs() as u64 + 1);
    while let Some(q) = queue.pop_front() {
        queued[q] = false;
        for &(p, w) in &incoming[q] {
            let cand = w + dist[q];
            if cand < dist[p] {
                dist[p] = cand;
                if !queued[p] {
                    queued[p] = true;
                    queue.push_back(p);
                }
                if budget == 0 {
                    return dist;
                }
                budget -= 1;
            }
        }
    }
    dist
}

/// Minimum-weight accepting path. Ties are broken by lexicographic order of
/// the output sequence (epsilon outputs dropped).
pub fn shortest_path<S: Scalar>(f: &Fst<S>) -> Result<(Vec<u32>, S), WfstError> {
    let dist = completion_distances(f);
    let total = dist[f.start()];
    if !total.is_finite() {
        return Err(WfstError::NoParse);
    }

    // Among locally optimal moves (those achieving d[q]), pick the
    // lexicographically smallest output suffix, memoized per state.
    let n = f.num_states();
    let mut memo: Vec<Option<Option<Vec<u32>>>> = vec![None; n];
    let mut in_progress = vec![false; n];

    fn suffix<S: Scalar>(
        q: usize,
        f: &Fst<S>,
        dist: &[S],
        memo: &mut Vec<Option<Option<Vec<u32>>>>,
        in_progress: &mut Vec<bool>,
    ) -> Option<Vec<u32>> {
        if let Some(cached) = &memo[q] {
            return cached.clone();
        }
        if in_progress[q] {
            // Optimal-subgraph cycle (all-zero-weight loop): taking it cannot
            // produce a lexicographically smaller finite output.
            return None;
        }
        in_progress[q] = true;
        let mut best: Option<Vec<u32>> = None;
        if f.final_weight(q) == Some(dist[q]) {
            best = Some(Vec::new());
        }
        for a in f.arcs(q) {
            if dist[a.nextstate].is_finite() && a.weight + dist[a.nextstate] == dist[q] {
                if let Some(rest) = suffix(a.nextstate, f, dist, memo, in_progress) {
                    let mut cand = Vec::with_capacity(rest.len() + 1);
                    if a.olabel != EPSILON {
                        cand.push(a.olabel);
                    }
                    cand.extend(rest);
                    if best.as_ref().is_none_or(|b| cand < *b) {
                        best = Some(cand);
                    }
                }
            }
        }
        in_progress[q] = false;
        memo[q] = Some(best.clone());
        best
    }

    let out = suffix(f.start(), f, &dist, &mut memo, &mut in_progress)
        .ok_or(WfstError::NoParse)?;
    Ok((out, total))
}

// ---------------------------------------------------------------------------
// Versioned text format
// ---------------------------------------------------------------------------

const FST_MAGIC: &str = "itn-fst v1";

impl<S: Scalar> Fst<S> {
    /// One arc per line (src, dst, in, out, weight), finals section.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FST_MAGIC}");
        let _ = writeln!(out, "states {}", self.num_states());
        let _ = writeln!(out, "start {}", self.start);
        let alpha = |a: Option<usize>| a.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(out, "in-alphabet {}", alpha(self.input_alphabet));
        let _ = writeln!(out, "out-alphabet {}", alpha(self.output_alphabet));
        let _ = writeln!(out, "arcs");
        for (src, arcs) in self.arcs.iter().enumerate() {
            for a in arcs {
                let _ = writeln!(
                    out,
                    "{src} {} {} {} {}",
                    a.nextstate,
                    a.ilabel,
                    a.olabel,
                    a.weight.to_f64().unwrap()
                );
            }
        }
        let _ = writeln!(out, "finals");
        for (s, w) in self.finals() {
            let _ = writeln!(out, "{s} {}", w.to_f64().unwrap());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Fst<S>, WfstError> {
        let bad = |msg: &str| WfstError::BadFile(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(FST_MAGIC) {
            return Err(bad("missing header"));
        }
        let field = |line: Option<&str>, name: &str| -> Result<String, WfstError> {
            let line = line.ok_or_else(|| bad("truncated file"))?;
            line.strip_prefix(name)
                .and_then(|v| v.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| WfstError::BadFile(format!("expected `{name}` line")))
        };
        let states: usize = field(lines.next(), "states")?
            .parse()
            .map_err(|_| bad("bad states count"))?;
        let start: usize = field(lines.next(), "start")?
            .parse()
            .map_err(|_| bad("bad start"))?;
        let parse_alpha = |v: String| -> Result<Option<usize>, WfstError> {
            if v == "-" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| bad("bad alphabet size"))
            }
        };
        let input_alphabet = parse_alpha(field(lines.next(), "in-alphabet")?)?;
        let output_alphabet = parse_alpha(field(lines.next(), "out-alphabet")?)?;
        if lines.next() != Some("arcs") {
            return Err(bad("expected `arcs` section"));
        }
        let mut f = Fst {
            start,
            arcs: vec![Vec::new(); states],
            finals: vec![None; states],
            input_alphabet,
            output_alphabet,
        };
        if start >= states {
            return Err(bad("start state out of range"));
        }
        let mut in_finals = false;
        for line in lines {
            if line == "finals" {
                in_finals = true;
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if in_finals {
                if parts.len() != 2 {
                    return Err(bad("bad final line"));
                }
                let s: usize = parts[0].parse().map_err(|_| bad("bad final state"))?;
                let w: f64 = parts[1].parse().map_err(|_| bad("bad final weight"))?;
                if s >= states {
                    return Err(bad("final state out of range"));
                }
                f.finals[s] = Some(S::from_f64_c(w));
            } else {
                if parts.len() != 5 {
                    return Err(bad("bad arc line"));
                }
                let src: usize = parts[0].parse().map_err(|_| bad("bad arc src"))?;
                let dst: usize = parts[1].parse().map_err(|_| bad("bad arc dst"))?;
                let ilabel: u32 = parts[2].parse().map_err(|_| bad("bad arc ilabel"))?;
                let olabel: u32 = parts[3].parse().map_err(|_| bad("bad arc olabel"))?;
                let w: f64 = parts[4].parse().map_err(|_| bad("bad arc weight"))?;
                if src >= states || dst >= states {
                    return Err(bad("arc state out of range"));
                }
                f.arcs[src].push(Arc {
                    ilabel,
                    olabel,
                    weight: S::from_f64_c(w),
                    nextstate: dst,
                });
            }
        }
        Ok(f)
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn acceptor_paths(f: &Fst<f64>, depth: usize) -> Vec<Vec<u32>> {
        let mut inputs: Vec<Vec<u32>> = enumerate_paths(f, depth)
            .into_iter()
            .map(|(i, _, _)| i)
            .collect();
        inputs.sort();
        inputs.dedup();
        inputs
    }

    #[test]
    fn empty_linear_acceptor() {
        let f: Fst<f64> = linear_acceptor(&[]);
        assert_eq!(f.num_states(), 1);
        assert_eq!(f.final_weight(f.start()), Some(0.0));
    }

    #[test]
    fn two_token_acceptor() {
        let f: Fst<f64> = linear_acceptor(&[1, 2]);
        assert_eq!(f.num_states(), 3);
        assert_eq!(f.num_arcs(), 2);
        assert_eq!(acceptor_paths(&f, 5), vec![vec![1, 2]]);
    }

    #[test]
    fn union_idempotent_language() {
        let a: Fst<f64> = linear_acceptor(&[1, 2]);
        let u = union(&a, &a);
        assert_eq!(acceptor_paths(&u, 8), vec![vec![1, 2]]);
    }

    #[test]
    fn concat_with_epsilon_is_identity_language() {
        let eps: Fst<f64> = linear_acceptor(&[]);
        let a: Fst<f64> = linear_acceptor(&[3, 4]);
        let c = concat(&eps, &a);
        assert_eq!(acceptor_paths(&c, 8), vec![vec![3, 4]]);
    }

    #[test]
    fn closure_accepts_empty_and_repeats() {
        let a: Fst<f64> = linear_acceptor(&[7]);
        let c = closure(&a);
        let langs = acceptor_paths(&c, 12);
        assert!(langs.contains(&vec![]));
        assert!(langs.contains(&vec![7]));
        assert!(langs.contains(&vec![7, 7, 7]));
    }

    /// x -> x at weight 0 for every symbol in 1..n.
    fn identity_transducer(n: u32) -> Fst<f64> {
        let mut f = Fst::new();
        f.set_final(0, 0.0);
        for sym in 1..=n {
            f.add_arc(
                0,
                Arc {
                    ilabel: sym,
                    olabel: sym,
                    weight: 0.0,
                    nextstate: 0,
                },
            );
        }
        f
    }

    #[test]
    fn compose_with_identity() {
        let x: Fst<f64> = linear_acceptor(&[1, 2, 3]);
        let id = identity_transducer(5);
        let c = compose(&x, &id).unwrap();
        let paths = enumerate_paths(&c, 10);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0], (vec![1, 2, 3], vec![1, 2, 3], 0.0));
        let (out, w) = shortest_path(&c).unwrap();
        assert_eq!(out, vec![1, 2, 3]);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn compose_adds_weights_along_paths() {
        // a: 1 -> 2 at weight 1.5 ; b: 2 -> 3 at weight 0.25
        let mut a: Fst<f64> = Fst::new();
        let s1 = a.add_state();
        a.add_arc(0, Arc { ilabel: 1, olabel: 2, weight: 1.5, nextstate: s1 });
        a.set_final(s1, 0.5);
        let mut b: Fst<f64> = Fst::new();
        let t1 = b.add_state();
        b.add_arc(0, Arc { ilabel: 2, olabel: 3, weight: 0.25, nextstate: t1 });
        b.set_final(t1, 0.125);
        let c = compose(&a, &b).unwrap();
        let paths = enumerate_paths(&c, 4);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0], (vec![1], vec![3], 1.5 + 0.25 + 0.5 + 0.125));
    }

    #[test]
    fn compose_alphabet_mismatch() {
        let mut a: Fst<f64> = linear_acceptor(&[1]);
        a.output_alphabet = Some(4);
        let mut b = identity_transducer(5);
        b.input_alphabet = Some(6);
        assert!(matches!(
            compose(&a, &b),
            Err(WfstError::AlphabetMismatch { left: 4, right: 6 })
        ));
    }

    fn random_transducer(
        states: usize,
        arcs: usize,
        max_sym: u32,
        eps_prob: f64,
        acyclic: bool,
        rng: &mut ChaCha8Rng,
    ) -> Fst<f64> {
        let mut f: Fst<f64> = Fst::new();
        for _ in 1..states {
            f.add_state();
        }
        for _ in 0..arcs {
            let (src, dst) = if acyclic {
                let a = rng.gen_range(0..states - 1);
                let b = rng.gen_range(a + 1..states);
                (a, b)
            } else {
                (rng.gen_range(0..states), rng.gen_range(0..states))
            };
            let ilabel = if rng.gen_bool(eps_prob) { 0 } else { rng.gen_range(1..=max_sym) };
            let olabel = if rng.gen_bool(eps_prob) { 0 } else { rng.gen_range(1..=max_sym) };
            // Dyadic weights so path sums are exact.
            let weight = rng.gen_range(0..=16) as f64 * 0.125;
            f.add_arc(src, Arc { ilabel, olabel, weight, nextstate: dst });
        }
        for s in 0..states {
            if rng.gen_bool(0.3) {
                f.set_final(s, rng.gen_range(0..=8) as f64 * 0.125);
            }
        }
        if f.finals().next().is_none() {
            f.set_final(states - 1, 0.0);
        }
        f
    }

    #[test]
    fn compose_matches_brute_force_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            let a = random_transducer(3, 5, 3, 0.25, true, &mut rng);
            let b = random_transducer(3, 5, 3, 0.25, true, &mut rng);
            let composed = compose(&a, &b).unwrap();
            // Oracle: join the path relations on the middle sequence.
            let paths_a = enumerate_paths(&a, 10);
            let paths_b = enumerate_paths(&b, 10);
            let mut expected: HashMap<(Vec<u32>, Vec<u32>), f64> = HashMap::new();
            for (ia, oa, wa) in &paths_a {
                for (ib, ob, wb) in &paths_b {
                    if oa == ib {
                        let key = (ia.clone(), ob.clone());
                        let w = wa + wb;
                        expected
                            .entry(key)
                            .and_modify(|cur| *cur = cur.min(w))
                            .or_insert(w);
                    }
                }
            }
            let got = min_weight_relation(&enumerate_paths(&composed, 10));
            assert_eq!(got.len(), expected.len(), "relation size differs");
            for (k, w) in &expected {
                assert_eq!(got.get(k), Some(w), "weight differs for {k:?}");
            }
        }
    }

    #[test]
    fn shortest_path_single_and_two_path() {
        let single: Fst<f64> = linear_acceptor(&[4, 5]);
        let (out, w) = shortest_path(&single).unwrap();
        assert_eq!((out, w), (vec![4, 5], 0.0));

        // Two paths, weights 1.0 and 2.0.
        let mut f: Fst<f64> = Fst::new();
        let e = f.add_state();
        f.add_arc(0, Arc { ilabel: 1, olabel: 10, weight: 2.0, nextstate: e });
        f.add_arc(0, Arc { ilabel: 2, olabel: 20, weight: 1.0, nextstate: e });
        f.set_final(e, 0.0);
        let (out, w) = shortest_path(&f).unwrap();
        assert_eq!((out, w), (vec![20], 1.0));
    }

    #[test]
    fn shortest_path_lexicographic_tie_break() {
        let mut f: Fst<f64> = Fst::new();
        let e = f.add_state();
        f.add_arc(0, Arc { ilabel: 1, olabel: 7, weight: 1.0, nextstate: e });
        f.add_arc(0, Arc { ilabel: 2, olabel: 3, weight: 1.0, nextstate: e });
        f.set_final(e, 0.0);
        let (out, _) = shortest_path(&f).unwrap();
        assert_eq!(out, vec![3]);

        // Shorter output is a lexicographic prefix, hence smaller.
        let mut g: Fst<f64> = Fst::new();
        let e = g.add_state();
        g.add_arc(0, Arc { ilabel: 1, olabel: 3, weight: 1.0, nextstate: e });
        let mid = g.add_state();
        g.add_arc(0, Arc { ilabel: 2, olabel: 3, weight: 0.5, nextstate: mid });
        g.add_arc(mid, Arc { ilabel: 3, olabel: 4, weight: 0.5, nextstate: e });
        g.set_final(e, 0.0);
        let (out, _) = shortest_path(&g).unwrap();
        assert_eq!(out, vec![3]);
    }

    #[test]
    fn shortest_path_no_parse() {
        let mut f: Fst<f64> = Fst::new();
        let s1 = f.add_state();
        f.add_arc(0, Arc { ilabel: 1, olabel: 1, weight: 0.0, nextstate: s1 });
        // no finals reachable
        let g: Fst<f64> = f.clone();
        assert!(matches!(shortest_path(&g), Err(WfstError::NoParse)));
    }

    #[test]
    fn shortest_path_matches_brute_force_on_random_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..80 {
            let f = random_transducer(20, 40, 4, 0.2, true, &mut rng);
            let paths = enumerate_paths(&f, 25);
            let expected = paths
                .iter()
                .map(|(_, o, w)| (*w, o.clone()))
                .min_by(|a, b| a.partial_cmp(b).unwrap());
            match shortest_path(&f) {
                Ok((out, w)) => {
                    let (ew, eo) = expected.expect("oracle found no path");
                    assert_eq!(w, ew, "weight mismatch");
                    assert_eq!(out, eo, "output mismatch");
                }
                Err(WfstError::NoParse) => assert!(expected.is_none()),
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn composition_associativity_on_shortest_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        for _ in 0..80 {
            let a = random_transducer(3, 6, 3, 0.2, true, &mut rng);
            let b = random_transducer(3, 6, 3, 0.2, true, &mut rng);
            let c = random_transducer(3, 6, 3, 0.2, true, &mut rng);
            let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
            let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
            match (shortest_path(&left), shortest_path(&right)) {
                (Ok((_, wl)), Ok((_, wr))) => {
                    assert_eq!(wl, wr, "associativity broke min weight");
                    checked += 1;
                }
                (Err(WfstError::NoParse), Err(WfstError::NoParse)) => {}
                (l, r) => panic!("parse disagreement: {l:?} vs {r:?}"),
            }
        }
        assert!(checked > 5, "too few non-empty compositions to be meaningful");
    }

    #[test]
    fn dump_parse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = random_transducer(6, 10, 4, 0.2, false, &mut rng);
        f.input_alphabet = Some(5);
        let text = f.dump();
        let g: Fst<f64> = Fst::parse(&text).unwrap();
        assert_eq!(f, g);
        assert_eq!(text.lines().next(), Some(FST_MAGIC));
    }

    #[test]
    fn symbol_table_bijective() {
        let mut t = SymbolTable::new();
        assert_eq!(t.id("<eps>"), Some(EPSILON));
        let a = t.add("three");
        let b = t.add("point");
        assert_eq!(t.add("three"), a);
        assert_eq!(t.sym(a), "three");
        assert_eq!(t.sym(b), "point");
        assert_eq!(t.len(), 3);
    }
}

pub mod grammar;
