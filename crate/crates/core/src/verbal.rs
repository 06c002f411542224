//! Verbalization tables for the synthetic spoken-form language.
//!
//! Single source of truth shared by the data generator and the compiled ITN
//! grammars: the generator walks these tables to produce spoken forms, and
//! the grammars are built from the same tables, so the transducers are exact
//! inverses of the verbalizers by construction.

pub const DIGITS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

pub const TEENS: [&str; 10] = [
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];

/// Index 0 = twenty.
pub const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

pub const HUNDRED: &str = "hundred";
pub const THOUSAND: &str = "thousand";
pub const MILLION: &str = "million";
pub const POINT: &str = "point";

pub const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

pub const MONTHS_WRITTEN: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

const ORDINAL_UNITS: [&str; 9] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth",
];

const ORDINAL_TEENS: [&str; 10] = [
    "tenth",
    "eleventh",
    "twelfth",
    "thirteenth",
    "fourteenth",
    "fifteenth",
    "sixteenth",
    "seventeenth",
    "eighteenth",
    "nineteenth",
];

/// Month lengths of a leap year.
pub const DAYS_IN_MONTH_LEAP: [u32; 12] = [31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Largest value [`spoken_cardinal`] covers.
pub const MAX_CARDINAL: u64 = 999_999;

fn push_sub_100(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!((1..=99).contains(&n));
    if n < 10 {
        out.push(DIGITS[n as usize]);
    } else if n < 20 {
        out.push(TEENS[(n - 10) as usize]);
    } else {
        out.push(TENS[(n / 10 - 2) as usize]);
        if n % 10 != 0 {
            out.push(DIGITS[(n % 10) as usize]);
        }
    }
}

fn push_sub_1000(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!((1..=999).contains(&n));
    if n >= 100 {
        out.push(DIGITS[(n / 100) as usize]);
        out.push(HUNDRED);
    }
    if n % 100 != 0 {
        push_sub_100(n % 100, out);
    }
}

/// Spoken form of a cardinal in `0..=999_999`, e.g.
/// `321_456` → "three hundred twenty one thousand four hundred fifty six".
pub fn spoken_cardinal(n: u64) -> Vec<&'static str> {
    assert!(n <= MAX_CARDINAL, "cardinal {n} out of range");
    if n == 0 {
        return vec![DIGITS[0]];
    }
    let mut out = Vec::new();
    if n >= 1000 {
        push_sub_1000(n / 1000, &mut out);
        out.push(THOUSAND);
        if n % 1000 != 0 {
            push_sub_1000(n % 1000, &mut out);
        }
    } else {
        push_sub_1000(n, &mut out);
    }
    out
}

/// Spoken ordinal of a day of the month, 1..=31.
pub fn spoken_ordinal_day(day: u32) -> Vec<&'static str> {
    assert!((1..=31).contains(&day), "day {day} out of range");
    match day {
        1..=9 => vec![ORDINAL_UNITS[(day - 1) as usize]],
        10..=19 => vec![ORDINAL_TEENS[(day - 10) as usize]],
        20 => vec!["twentieth"],
        30 => vec!["thirtieth"],
        21..=29 => vec![TENS[0], ORDINAL_UNITS[(day - 21) as usize]],
        _ => vec![TENS[1], ORDINAL_UNITS[0]], // 31
    }
}

/// Spoken digit sequence, one word per digit.
pub fn spoken_digit_string(digits: &[u8]) -> Vec<&'static str> {
    digits.iter().map(|&d| DIGITS[d as usize]).collect()
}
