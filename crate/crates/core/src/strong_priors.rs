//! Synthetic corpus and instance catalog for the strong-local-priors
//! benchmark.
//!
//! The corpus trains the toy n-gram backend so that every benchmark prompt
//! puts an instruction at odds with the surrounding text statistics:
//!
//! * Heavily weighted plain lines (alphabet runs, counting runs, two-symbol
//!   alternations) make the obvious continuation dominate whenever only the
//!   data part of a prompt is in the context window.
//! * For each instruction, a line that ignores it (weight [`PRIOR_WEIGHT`])
//!   and a line that follows it (weight [`ANSWER_WEIGHT`]) share the full
//!   prompt as a prefix. With the task in view the model still prefers the
//!   prior continuation by ln(96/3) = ln 32 in log space, so the baseline
//!   argmax is wrong, but the gap is small enough that extrapolating away
//!   from the data-only distribution flips it.
//!
//! Geometry that keeps the construction sound, given the order-16 model:
//!
//! * Every data part is at most 13 tokens, so the last 15 tokens of the full
//!   prompt always include task tokens. Stripping the task then genuinely
//!   changes the context.
//! * Task lines embed the data with a leading space (`" Output"`), while
//!   plain lines and stripped prompts start at `"Output"`. Data-only
//!   contexts therefore match plain lines exactly and reach task lines only
//!   through damped back-off.
//! * Families use disjoint surface forms (spaced letters, comma-separated
//!   digits, comma-separated letters) so their full-window contexts never
//!   collide. Where windows do collide within a family (e.g. the list bound
//!   sits outside the window), every colliding line pair contributes the
//!   same 96:3 ratio, so aggregation preserves the gap.
//!
//! The control instance reverses the two line weights, making the full
//! prompt strongly favor the instructed continuation. Its data-only and
//! full-prompt distributions are then far apart, which is exactly what the
//! strong-prior detector should report as "not a strong prior".

use crate::backend::ngram::{ngram_train_weighted, NGramModel, ToyBackend};

/// Context length + 1 of the toy model.
pub const ORDER: usize = 16;
/// Add-k smoothing constant for the toy model.
pub const SMOOTHING_K: f64 = 0.01;
/// Weight of plain continuation lines (no instruction in sight).
pub const PLAIN_WEIGHT: u64 = 20_000;
/// Weight of instruction lines whose output ignores the instruction.
pub const PRIOR_WEIGHT: u64 = 96;
/// Weight of instruction lines whose output follows the instruction.
pub const ANSWER_WEIGHT: u64 = 3;
/// Longest data part, in toy-tokenizer tokens, that keeps task tokens
/// inside the order-16 window of the full prompt.
pub const MAX_DATA_TOKENS: usize = ORDER - 3;

/// One benchmark prompt: an instruction, the data prefix it is paired with,
/// and the two competing single-token continuations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub id: String,
    pub task: String,
    pub data: String,
    /// Continuation the plain corpus statistics favor.
    pub prior_class: String,
    /// Continuation the instruction asks for.
    pub answer_class: String,
}

impl CatalogEntry {
    pub fn full_prompt(&self) -> String {
        format!("{} {}", self.task, self.data)
    }
}

fn letter(index: usize, upper: bool) -> char {
    let base = if upper { b'A' } else { b'a' };
    (base + index as u8) as char
}

/// "Output: A B ... Z", optionally skipping one letter.
fn alphabet_line(upper: bool, skip: Option<usize>) -> String {
    let letters: Vec<String> = (0..26)
        .filter(|i| Some(*i) != skip)
        .map(|i| letter(i, upper).to_string())
        .collect();
    format!("Output: {}", letters.join(" "))
}

fn alphabet_task(upper: bool, skip: usize) -> String {
    format!(
        "Task: Write out the English alphabet in {} case, skipping the letter {}.",
        if upper { "upper" } else { "lower" },
        letter(skip, true)
    )
}

/// Data prefix ending just before the skipped letter.
fn alphabet_data(upper: bool, skip: usize) -> String {
    let letters: Vec<String> = (0..skip).map(|i| letter(i, upper).to_string()).collect();
    format!("Output: {}", letters.join(" "))
}

fn alphabet_entry(upper: bool, skip: usize) -> CatalogEntry {
    let case = if upper { "upper" } else { "lower" };
    CatalogEntry {
        id: format!("alphabet-{case}-skip-{}", letter(skip, true)),
        task: alphabet_task(upper, skip),
        data: alphabet_data(upper, skip),
        prior_class: format!(" {}", letter(skip, upper)),
        answer_class: format!(" {}", letter(skip + 1, upper)),
    }
}

/// Skipped letters C through K: far enough in for a non-trivial prefix,
/// early enough that the data part stays under [`MAX_DATA_TOKENS`].
const ALPHABET_SKIPS: std::ops::RangeInclusive<usize> = 2..=10;

const NUMBER_PHRASES: [(&str, &str); 3] = [
    ("except", "except multiples of"),
    ("excluding", "excluding multiples of"),
    ("leaving-out", "leaving out multiples of"),
];

/// "Output: 1, 2, ..., bound", optionally skipping multiples of m.
fn numbers_line(skip_multiples_of: Option<u32>, bound: u32) -> String {
    let values: Vec<String> = (1..=bound)
        .filter(|v| skip_multiples_of.is_none_or(|m| v % m != 0))
        .map(|v| v.to_string())
        .collect();
    format!("Output: {}", values.join(", "))
}

fn numbers_task(phrase: &str, m: u32, bound: u32) -> String {
    format!("Task: Write all the numbers up to {bound} {phrase} {m}, and nothing else.")
}

/// Data prefix ending with the comma before the first multiple of m.
fn numbers_data(m: u32) -> String {
    let values: Vec<String> = (1..m).map(|v| v.to_string()).collect();
    format!("Output: {},", values.join(", "))
}

/// Builds a numbers-except-multiples entry for arbitrary parameters. The
/// shipped catalog keeps m small so data prefixes fit the context window,
/// but the template itself works for any m ≥ 2.
pub fn numbers_entry(phrase_key: &str, m: u32, bound: u32) -> Option<CatalogEntry> {
    let (key, phrase) = NUMBER_PHRASES.iter().find(|(k, _)| *k == phrase_key)?;
    if m < 2 || bound <= m {
        return None;
    }
    Some(CatalogEntry {
        id: format!("numbers-{key}-m{m}-to{bound}"),
        task: numbers_task(phrase, m, bound),
        data: numbers_data(m),
        prior_class: format!(" {m}"),
        answer_class: format!(" {}", m + 1),
    })
}

/// List bounds 13..=22: long enough that the bound token never fits in the
/// window alongside the data prefix, so bound variation multiplies
/// instances without splitting contexts.
const NUMBER_BOUNDS: std::ops::RangeInclusive<u32> = 13..=22;
const NUMBER_DIVISORS: [u32; 2] = [3, 4];
/// Counting lines run past every bound so each data prefix has a plain
/// continuation.
const PLAIN_NUMBERS_BOUND: u32 = 25;

/// Symbol pairs for the alternation family, spaced out so consecutive
/// pairs and their replacement letters never overlap.
const PATTERN_PAIRS: [(char, char); 8] = [
    ('A', 'B'),
    ('D', 'E'),
    ('G', 'H'),
    ('J', 'K'),
    ('M', 'N'),
    ('P', 'Q'),
    ('S', 'T'),
    ('V', 'W'),
];
const PATTERN_COUNT_WORDS: [&str; 2] = ["6", "six"];
/// Plain alternation lines are this many symbols long.
const PLAIN_PATTERN_SYMBOLS: usize = 12;

fn alternation(first: char, second: char, len: usize) -> Vec<char> {
    (0..len)
        .map(|i| if i % 2 == 0 { first } else { second })
        .collect()
}

fn join_symbols(symbols: &[char]) -> String {
    let parts: Vec<String> = symbols.iter().map(|c| c.to_string()).collect();
    parts.join(", ")
}

fn pattern_line(first: char, second: char) -> String {
    format!(
        "Output: {}",
        join_symbols(&alternation(first, second, PLAIN_PATTERN_SYMBOLS))
    )
}

fn pattern_task(count_word: &str, first: char, second: char, replacement: char) -> String {
    format!(
        "Task: Write {count_word} symbols alternating between {first} and {second}, \
ending with {replacement} instead of the final {second}."
    )
}

/// Data prefix: the first five of six symbols, comma still open.
fn pattern_data(first: char, second: char) -> String {
    format!("Output: {},", join_symbols(&alternation(first, second, 5)))
}

/// Replacement symbol for a pair: the letter after the pair's second
/// letter, shared by both directions so each pair teaches one replacement.
fn pattern_replacement(pair: (char, char)) -> char {
    (pair.1 as u8 + 1) as char
}

fn pattern_entry(pair: (char, char), reversed: bool, count_word: &str) -> CatalogEntry {
    let (first, second) = if reversed { (pair.1, pair.0) } else { pair };
    let replacement = pattern_replacement(pair);
    CatalogEntry {
        id: format!("pattern-{first}{second}-{count_word}"),
        task: pattern_task(count_word, first, second, replacement),
        data: pattern_data(first, second),
        prior_class: format!(" {second}"),
        answer_class: format!(" {replacement}"),
    }
}

/// The six-symbol output with the final symbol kept (prior) or replaced
/// (answer).
fn pattern_output(first: char, second: char, replacement: Option<char>) -> String {
    let mut symbols = alternation(first, second, 6);
    if let Some(r) = replacement {
        symbols[5] = r;
    }
    format!("Output: {}", join_symbols(&symbols))
}

/// All benchmark entries, in a fixed order: 18 alphabet, 60 numbers, 32
/// alternation.
pub fn catalog() -> Vec<CatalogEntry> {
    let mut entries = Vec::new();
    for upper in [true, false] {
        for skip in ALPHABET_SKIPS {
            entries.push(alphabet_entry(upper, skip));
        }
    }
    for (key, _) in NUMBER_PHRASES {
        for m in NUMBER_DIVISORS {
            for bound in NUMBER_BOUNDS {
                let entry = numbers_entry(key, m, bound)
                    .expect("catalog parameters are in range");
                entries.push(entry);
            }
        }
    }
    for pair in PATTERN_PAIRS {
        for reversed in [false, true] {
            for count_word in PATTERN_COUNT_WORDS {
                entries.push(pattern_entry(pair, reversed, count_word));
            }
        }
    }
    entries
}

/// Instance whose corpus lines have the weights swapped, so the full
/// prompt already favors the instructed continuation. Ships with every
/// generated set as a negative example for the strong-prior detector.
pub fn control_entry() -> CatalogEntry {
    CatalogEntry {
        id: "control-skip-B".to_owned(),
        task: alphabet_task(true, 1),
        data: alphabet_data(true, 1),
        prior_class: " B".to_owned(),
        answer_class: " C".to_owned(),
    }
}

/// The two instruction lines for an entry: (ignores instruction, follows
/// instruction).
fn entry_lines(entry: &CatalogEntry) -> (String, String) {
    let task = &entry.task;
    if entry.id.starts_with("alphabet-") || entry.id.starts_with("control-") {
        let upper = !entry.data.contains(" a");
        let skip = entry
            .data
            .split_whitespace()
            .count()
            .saturating_sub(1);
        (
            format!("{task} {}", alphabet_line(upper, None)),
            format!("{task} {}", alphabet_line(upper, Some(skip))),
        )
    } else if entry.id.starts_with("numbers-") {
        let m: u32 = entry.prior_class.trim().parse().expect("numeric class");
        let bound: u32 = entry
            .id
            .rsplit_once("-to")
            .expect("numbers id carries bound")
            .1
            .parse()
            .expect("numeric bound");
        (
            format!("{task} {}", numbers_line(None, bound)),
            format!("{task} {}", numbers_line(Some(m), bound)),
        )
    } else {
        let first = entry.data.chars().nth(8).expect("pattern data symbol");
        let second = entry.data.chars().nth(11).expect("pattern data symbol");
        let replacement = entry.answer_class.trim().chars().next().expect("class");
        (
            format!("{task} {}", pattern_output(first, second, None)),
            format!("{task} {}", pattern_output(first, second, Some(replacement))),
        )
    }
}

/// The full weighted training corpus: plain lines, then per-entry
/// instruction lines, then the weight-swapped control lines.
pub fn corpus() -> Vec<(String, u64)> {
    let mut lines = Vec::new();
    for upper in [true, false] {
        lines.push((alphabet_line(upper, None), PLAIN_WEIGHT));
    }
    lines.push((numbers_line(None, PLAIN_NUMBERS_BOUND), PLAIN_WEIGHT));
    for pair in PATTERN_PAIRS {
        lines.push((pattern_line(pair.0, pair.1), PLAIN_WEIGHT));
        lines.push((pattern_line(pair.1, pair.0), PLAIN_WEIGHT));
    }
    for entry in catalog() {
        let (prior_line, answer_line) = entry_lines(&entry);
        lines.push((prior_line, PRIOR_WEIGHT));
        lines.push((answer_line, ANSWER_WEIGHT));
    }
    let control = control_entry();
    let (prior_line, answer_line) = entry_lines(&control);
    lines.push((prior_line, ANSWER_WEIGHT));
    lines.push((answer_line, PRIOR_WEIGHT));
    lines
}

/// Trains the shipped toy model from the corpus.
pub fn toy_model() -> NGramModel {
    ngram_train_weighted(&corpus(), ORDER, SMOOTHING_K)
        .expect("the shipped corpus is non-empty and parameters are valid")
}

pub fn toy_backend() -> ToyBackend {
    ToyBackend::new(toy_model(), "toy")
}
