//! Compiled ITN grammars: spoken-form word sequences to written-form
//! character sequences.
//!
//! Grammars are compiled programmatically from the verbalization tables in
//! [`crate::verbal`], the same tables the data generator uses, so the
//! transducers invert the verbalizers exactly. Ambiguous parses are resolved
//! by weights: fewer segments win, and a magnitude suffix costs extra so the
//! merged cardinal reading of e.g. "five thousand" is preferred.

use std::fmt::Write as _;

use crate::scalar::Scalar;
use crate::tags::Category;
use crate::verbal::{
    spoken_ordinal_day, DIGITS, HUNDRED, MILLION, MONTHS, MONTHS_WRITTEN, POINT, TEENS, TENS,
    THOUSAND,
};
use crate::wfst::{
    closure, compose, concat, linear_acceptor, shortest_path, union, Arc, Fst, SymbolTable,
    WfstError, EPSILON,
};

/// A compiled grammar plus the symbol tables it is defined over: words on the
/// input side, characters on the output side.
#[derive(Debug, Clone)]
pub struct Grammar<S> {
    pub category: Category,
    pub fst: Fst<S>,
    pub input_syms: SymbolTable,
    pub output_syms: SymbolTable,
}

/// Result of transducing one span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transduction {
    pub text: String,
    /// False when the span had no parse and was passed through verbatim.
    pub parsed: bool,
}

struct Builder<S> {
    isyms: SymbolTable,
    osyms: SymbolTable,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> Builder<S> {
    fn new() -> Builder<S> {
        Builder {
            isyms: SymbolTable::new(),
            osyms: SymbolTable::new(),
            _marker: std::marker::PhantomData,
        }
    }

    /// Transducer accepting exactly `words`, emitting `written`. All output
    /// characters ride on the first arc's chain.
    fn phrase(&mut self, words: &[&str], written: &str) -> Fst<S> {
        assert!(!words.is_empty());
        let mut f = Fst::new();
        let mut cur = f.start();
        let mut chars: Vec<u32> = written.chars().map(|c| self.osyms.add(&c.to_string())).collect();
        chars.reverse();
        for (i, w) in words.iter().enumerate() {
            let ilabel = self.isyms.add(w);
            let next = f.add_state();
            f.add_arc(
                cur,
                Arc {
                    ilabel,
                    olabel: chars.pop().unwrap_or(EPSILON),
                    weight: S::zero(),
                    nextstate: next,
                },
            );
            cur = next;
            // Flush remaining output before consuming the next word.
            let flush_all = i == words.len() - 1;
            while let Some(o) = if flush_all || chars.len() > words.len() - 1 - i {
                chars.pop()
            } else {
                None
            } {
                let next = f.add_state();
                f.add_arc(
                    cur,
                    Arc {
                        ilabel: EPSILON,
                        olabel: o,
                        weight: S::zero(),
                        nextstate: next,
                    },
                );
                cur = next;
            }
        }
        f.set_final(cur, S::zero());
        f
    }

    fn word(&mut self, word: &str, written: &str) -> Fst<S> {
        self.phrase(&[word], written)
    }

    /// Pure emission: consumes nothing, outputs `written`.
    fn emit(&mut self, written: &str) -> Fst<S> {
        let mut f = Fst::new();
        let mut cur = f.start();
        for c in written.chars() {
            let olabel = self.osyms.add(&c.to_string());
            let next = f.add_state();
            f.add_arc(
                cur,
                Arc {
                    ilabel: EPSILON,
                    olabel,
                    weight: S::zero(),
                    nextstate: next,
                },
            );
            cur = next;
        }
        f.set_final(cur, S::zero());
        f
    }

    fn union_all(&self, parts: Vec<Fst<S>>) -> Fst<S> {
        let mut parts = parts.into_iter();
        let first = parts.next().expect("union of at least one part");
        parts.fold(first, |acc, p| union(&acc, &p))
    }

    // -- number pieces ------------------------------------------------------

    /// Digit words 1..=9 emitting their digit, optionally zero-padded.
    fn digits_nonzero(&mut self, pad: usize) -> Fst<S> {
        let parts = (1..=9u64)
            .map(|d| self.word(DIGITS[d as usize], &format!("{d:0pad$}")))
            .collect();
        self.union_all(parts)
    }

    /// Values 1..=99 emitted zero-padded to `pad` digits (pad >= 2 pads the
    /// single-digit values; 10..=99 are two digits plus any extra padding).
    fn sub_100(&mut self, pad: usize) -> Fst<S> {
        let mut parts = vec![self.digits_nonzero(pad)];
        for (i, teen) in TEENS.iter().enumerate() {
            parts.push(self.word(teen, &format!("{:0pad$}", 10 + i)));
        }
        for (i, tens) in TENS.iter().enumerate() {
            let value = 10 * (i + 2);
            parts.push(self.word(tens, &format!("{value:0pad$}")));
            // Compound: tens word emits all but the unit digit, the unit
            // word emits its own digit.
            let prefix = self.word(tens, &format!("{:0width$}", value / 10, width = pad.saturating_sub(1).max(1)));
            let unit = self.digits_nonzero(1);
            parts.push(concat(&prefix, &unit));
        }
        self.union_all(parts)
    }

    /// Values 1..=999 emitted zero-padded to `pad` digits.
    fn sub_1000(&mut self, pad: usize) -> Fst<S> {
        let hundreds_digit = self.digits_nonzero(pad.saturating_sub(2).max(1));
        let hundred_word = self.word(HUNDRED, "");
        let tail = {
            let empty = self.emit("00");
            let rest = self.sub_100(2);
            union(&empty, &rest)
        };
        let hundreds = concat(&concat(&hundreds_digit, &hundred_word), &tail);
        let small = self.sub_100(pad);
        union(&hundreds, &small)
    }

    /// Cardinals 0..=999_999 emitting their decimal digits.
    fn cardinal(&mut self) -> Fst<S> {
        let zero = self.word(DIGITS[0], "0");
        let below_1000 = self.sub_1000(1);
        let thousands = {
            let multiplier = self.sub_1000(1);
            let thousand_word = self.word(THOUSAND, "");
            let tail = {
                let empty = self.emit("000");
                let rest = self.sub_1000(3);
                union(&empty, &rest)
            };
            concat(&concat(&multiplier, &thousand_word), &tail)
        };
        self.union_all(vec![zero, below_1000, thousands])
    }

    /// `cardinal "point" digit+` emitting `INT.DDD`.
    fn decimal(&mut self) -> Fst<S> {
        let int_part = self.cardinal();
        let point = self.word(POINT, ".");
        let digit = {
            let parts = (0..=9u64)
                .map(|d| self.word(DIGITS[d as usize], &d.to_string()))
                .collect();
            self.union_all(parts)
        };
        let digits_plus = concat(&digit, &closure(&digit));
        concat(&concat(&int_part, &point), &digits_plus)
    }

    /// Magnitude suffix kept as a written word: " thousand" or " million".
    fn magnitude(&mut self) -> Fst<S> {
        let t = self.word(THOUSAND, " thousand");
        let m = self.word(MILLION, " million");
        union(&t, &m)
    }
}

/// Add `w` to every final weight (tropical scaling of the whole language).
fn add_weight<S: Scalar>(mut f: Fst<S>, w: S) -> Fst<S> {
    let finals: Vec<(usize, S)> = f.finals().collect();
    for (s, fw) in finals {
        f.set_final(s, fw + w);
    }
    f
}

fn build_number<S: Scalar>(b: &mut Builder<S>) -> Fst<S> {
    let unit_cost = S::from_f64_c(1.0);
    let magnitude_cost = S::from_f64_c(1.5);
    let cardinal = b.cardinal();
    let decimal = b.decimal();
    let magnitude = b.magnitude();
    let unit = b.union_all(vec![
        add_weight(cardinal.clone(), unit_cost),
        add_weight(decimal.clone(), unit_cost),
        add_weight(concat(&cardinal, &magnitude), magnitude_cost),
        add_weight(concat(&decimal, &magnitude), magnitude_cost),
    ]);
    let sep = b.emit(" ");
    concat(&unit, &closure(&concat(&sep, &unit)))
}

fn build_date<S: Scalar>(b: &mut Builder<S>) -> Fst<S> {
    let month = {
        let parts = MONTHS
            .iter()
            .zip(MONTHS_WRITTEN.iter())
            .map(|(m, w)| b.word(m, w))
            .collect();
        b.union_all(parts)
    };
    let day = {
        let parts = (1..=31u32)
            .map(|d| {
                let words = spoken_ordinal_day(d);
                b.phrase(&words, &d.to_string())
            })
            .collect();
        b.union_all(parts)
    };
    let space = b.emit(" ");
    let year = {
        let comma = b.emit(", ");
        let value = b.cardinal();
        let with_year = concat(&comma, &value);
        let without: Fst<S> = linear_acceptor(&[]);
        union(&with_year, &without)
    };
    concat(&concat(&concat(&month, &space), &day), &year)
}

fn build_phone<S: Scalar>(b: &mut Builder<S>) -> Fst<S> {
    let digit = {
        let parts = (0..=9u64)
            .map(|d| b.word(DIGITS[d as usize], &d.to_string()))
            .collect();
        b.union_all(parts)
    };
    let optional = union(&digit, &linear_acceptor(&[]));
    let mut f = digit.clone();
    for _ in 1..9 {
        f = concat(&f, &digit);
    }
    concat(&concat(&f, &optional), &optional)
}

/// Compile the grammar for one transducible category.
///
/// Case is postprocessed (title-cased), not transduced; asking for its
/// grammar is a programming error.
pub fn build_grammar<S: Scalar>(category: Category) -> Grammar<S> {
    let mut b: Builder<S> = Builder::new();
    let mut fst = match category {
        Category::Number => build_number(&mut b),
        Category::Date => build_date(&mut b),
        Category::Phone => build_phone(&mut b),
        Category::Case => panic!("Case spans are postprocessed, not transduced"),
    };
    fst.input_alphabet = Some(b.isyms.len());
    fst.output_alphabet = Some(b.osyms.len());
    Grammar {
        category,
        fst,
        input_syms: b.isyms,
        output_syms: b.osyms,
    }
}

/// All three compiled grammars. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct GrammarSet<S> {
    pub number: Grammar<S>,
    pub date: Grammar<S>,
    pub phone: Grammar<S>,
}

impl<S: Scalar> GrammarSet<S> {
    pub fn build() -> GrammarSet<S> {
        GrammarSet {
            number: build_grammar(Category::Number),
            date: build_grammar(Category::Date),
            phone: build_grammar(Category::Phone),
        }
    }

    pub fn for_category(&self, category: Category) -> Option<&Grammar<S>> {
        match category {
            Category::Number => Some(&self.number),
            Category::Date => Some(&self.date),
            Category::Phone => Some(&self.phone),
            Category::Case => None,
        }
    }
}

/// Shortest-path transduction of one span; out-of-grammar spans pass through
/// verbatim with `parsed = false`.
pub fn transduce<S: Scalar, W: AsRef<str>>(span: &[W], grammar: &Grammar<S>) -> Transduction {
    let fallback = || Transduction {
        text: span
            .iter()
            .map(|w| w.as_ref())
            .collect::<Vec<_>>()
            .join(" "),
        parsed: false,
    };
    let ids: Option<Vec<u32>> = span
        .iter()
        .map(|w| grammar.input_syms.id(w.as_ref()))
        .collect();
    let Some(ids) = ids else {
        return fallback();
    };
    if ids.is_empty() {
        return fallback();
    }
    let mut acceptor: Fst<S> = linear_acceptor(&ids);
    acceptor.output_alphabet = Some(grammar.input_syms.len());
    let composed = match compose(&acceptor, &grammar.fst) {
        Ok(f) => f,
        Err(_) => return fallback(),
    };
    match shortest_path(&composed) {
        Ok((out, _weight)) => Transduction {
            text: out.iter().map(|&id| grammar.output_syms.sym(id)).collect(),
            parsed: true,
        },
        Err(WfstError::NoParse) => fallback(),
        Err(_) => fallback(),
    }
}

const GRAMMAR_MAGIC: &str = "itn-grammar v1";

impl<S: Scalar> Grammar<S> {
    /// Versioned text dump: symbol tables (JSON-escaped, one per line), then
    /// the FST in its own text format.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{GRAMMAR_MAGIC}");
        let _ = writeln!(out, "category {}", self.category.name());
        for (name, table) in [("isyms", &self.input_syms), ("osyms", &self.output_syms)] {
            let _ = writeln!(out, "{name} {}", table.len());
            for id in 0..table.len() {
                let _ = writeln!(
                    out,
                    "{}",
                    serde_json::to_string(table.sym(id as u32)).expect("string serializes")
                );
            }
        }
        out.push_str(&self.fst.dump());
        out
    }

    pub fn parse(text: &str) -> Result<Grammar<S>, WfstError> {
        let bad = |m: &str| WfstError::BadFile(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(GRAMMAR_MAGIC) {
            return Err(bad("missing grammar header"));
        }
        let cat_line = lines.next().ok_or_else(|| bad("truncated"))?;
        let cat_name = cat_line
            .strip_prefix("category ")
            .ok_or_else(|| bad("expected category"))?;
        let category = crate::tags::CATEGORIES
            .iter()
            .copied()
            .find(|c| c.name() == cat_name)
            .ok_or_else(|| bad("unknown category"))?;
        let read_table = |name: &str,
                              lines: &mut std::str::Lines<'_>|
         -> Result<SymbolTable, WfstError> {
            let head = lines.next().ok_or_else(|| bad("truncated"))?;
            let count: usize = head
                .strip_prefix(name)
                .and_then(|v| v.strip_prefix(' '))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| WfstError::BadFile(format!("expected `{name} <n>`")))?;
            let mut table = SymbolTable::new();
            for id in 0..count {
                let line = lines.next().ok_or_else(|| bad("truncated symbol table"))?;
                let sym: String =
                    serde_json::from_str(line).map_err(|_| bad("bad symbol encoding"))?;
                if id == 0 {
                    if sym != "<eps>" {
                        return Err(bad("symbol 0 must be <eps>"));
                    }
                    continue;
                }
                table.add(&sym);
            }
            Ok(table)
        };
        let input_syms = read_table("isyms", &mut lines)?;
        let output_syms = read_table("osyms", &mut lines)?;
        let rest: String = lines.collect::<Vec<_>>().join("\n");
        let fst = Fst::parse(&rest)?;
        Ok(Grammar {
            category,
            fst,
            input_syms,
            output_syms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verbal::{spoken_cardinal, spoken_digit_string, DAYS_IN_MONTH_LEAP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn number() -> Grammar<f64> {
        build_grammar(Category::Number)
    }

    #[test]
    fn number_fixtures() {
        let g = number();
        assert_eq!(transduce(&["five"], &g).text, "5");
        assert_eq!(transduce(&["three", "point", "five"], &g).text, "3.5");
        assert_eq!(transduce(&["twenty", "twenty"], &g).text, "20 20");
        assert_eq!(transduce(&["twenty", "one"], &g).text, "21");
        assert_eq!(transduce(&["five", "thousand"], &g).text, "5000");
        assert_eq!(
            transduce(&["three", "point", "five", "million"], &g).text,
            "3.5 million"
        );
        assert_eq!(transduce(&["seven", "million"], &g).text, "7 million");
        assert_eq!(
            transduce(&["three", "point", "one", "four"], &g).text,
            "3.14"
        );
        assert_eq!(transduce(&["zero", "point", "five"], &g).text, "0.5");
        assert_eq!(
            transduce(&["zero", "zero", "seven"], &g).text,
            "0 0 7"
        );
    }

    #[test]
    fn out_of_grammar_falls_back_verbatim() {
        let g = number();
        let t = transduce(&["hello"], &g);
        assert_eq!(t.text, "hello");
        assert!(!t.parsed);
        // Known words in an unparseable order also fall back verbatim.
        let t = transduce(&["point", "five", "three", "point"], &g);
        assert_eq!(t.text, "point five three point");
        assert!(!t.parsed);
    }

    #[test]
    fn cardinal_inverse_exhaustive_0_to_2000() {
        let g = number();
        for n in 0..=2000u64 {
            let spoken = spoken_cardinal(n);
            let t = transduce(&spoken, &g);
            assert!(t.parsed, "{spoken:?} failed to parse");
            assert_eq!(t.text, n.to_string(), "wrong inverse for {spoken:?}");
        }
    }

    #[test]
    fn cardinal_inverse_random_large() {
        let g = number();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..400 {
            let n = rng.gen_range(0..=999_999u64);
            let t = transduce(&spoken_cardinal(n), &g);
            assert_eq!(t.text, n.to_string(), "wrong inverse for {n}");
        }
    }

    #[test]
    fn date_fixtures_and_leap_year() {
        let g: Grammar<f64> = build_grammar(Category::Date);
        let mut words = vec!["march", "fifth"];
        words.extend(spoken_cardinal(2021));
        assert_eq!(transduce(&words, &g).text, "March 5, 2021");
        assert_eq!(transduce(&["march", "fifth"], &g).text, "March 5");
        assert_eq!(
            transduce(&["february", "twenty", "ninth"], &g).text,
            "February 29"
        );
        // All 366 month/day pairs of a leap year, with a year attached.
        let year_words = spoken_cardinal(2020);
        let mut count = 0;
        for (m, &days) in DAYS_IN_MONTH_LEAP.iter().enumerate() {
            for d in 1..=days {
                let mut words: Vec<&str> = vec![MONTHS[m]];
                words.extend(spoken_ordinal_day(d));
                words.extend(year_words.iter().copied());
                let t = transduce(&words, &g);
                assert!(t.parsed, "{words:?} failed");
                assert_eq!(t.text, format!("{} {}, 2020", MONTHS_WRITTEN[m], d));
                count += 1;
            }
        }
        assert_eq!(count, 366);
    }

    #[test]
    fn phone_fixtures() {
        let g: Grammar<f64> = build_grammar(Category::Phone);
        let digits: Vec<u8> = vec![0, 3, 1, 9, 6, 7, 8, 1, 1, 6];
        let spoken = spoken_digit_string(&digits);
        let t = transduce(&spoken, &g);
        assert!(t.parsed);
        assert_eq!(t.text, "0319678116");
        assert_eq!(t.text.len(), 10);
        // 9 and 11 digits also parse; 8 falls back.
        assert!(transduce(&spoken_digit_string(&[1; 9]), &g).parsed);
        assert!(transduce(&spoken_digit_string(&[1; 11]), &g).parsed);
        let eight = transduce(&spoken_digit_string(&[1; 8]), &g);
        assert!(!eight.parsed);
        assert_eq!(eight.text, "one one one one one one one one");
    }

    #[test]
    fn phone_random_inverse() {
        let g: Grammar<f64> = build_grammar(Category::Phone);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let len = rng.gen_range(9..=11);
            let digits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=9)).collect();
            let expect: String = digits.iter().map(|d| d.to_string()).collect();
            assert_eq!(transduce(&spoken_digit_string(&digits), &g).text, expect);
        }
    }

    #[test]
    fn fallback_never_reorders() {
        let g = number();
        let span = ["five", "hello", "three"];
        let t = transduce(&span, &g);
        assert_eq!(t.text, "five hello three");
        assert!(!t.parsed);
    }

    #[test]
    fn grammar_dump_round_trip_and_golden_header() {
        let g: Grammar<f64> = build_grammar(Category::Phone);
        let text = g.dump();
        let parsed: Grammar<f64> = Grammar::parse(&text).unwrap();
        assert_eq!(parsed.category, Category::Phone);
        assert_eq!(parsed.fst, g.fst);
        assert_eq!(parsed.input_syms, g.input_syms);
        assert_eq!(parsed.output_syms, g.output_syms);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("itn-grammar v1"));
        assert_eq!(lines.next(), Some("category PHONE"));
        assert_eq!(lines.next(), Some("isyms 11"));
    }
}
