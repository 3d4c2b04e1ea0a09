use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Em,
    F1,
}

impl Metric {
    pub fn score(self, prediction: &str, golds: &[String]) -> f64 {
        match self {
            Metric::Em => em_score(prediction, golds),
            Metric::F1 => f1_score(prediction, golds),
        }
    }
}

const NUMERIC_REL_TOLERANCE: f64 = 1e-4;

/// Lowercases, removes punctuation and the articles a/an/the, and collapses
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token F1 against the best-matching gold answer.
pub fn f1_score(prediction: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(prediction, g)).fold(0.0, f64::max)
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *bag.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(n) = bag.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([-+−])?\s*[$€£¥]?\s*([-+−])?\s*(\d[\d,]*(?:\.\d+)?|\.\d+)").unwrap())
}

/// Parses the numeral at the start of `text`, ignoring currency symbols and
/// thousands separators. Anything after the numeral (`%`, units) is ignored.
pub fn parse_leading_number(text: &str) -> Option<f64> {
    let caps = number_re().captures(text)?;
    let negative = caps.get(1).or(caps.get(2)).is_some_and(|m| m.as_str() != "+");
    let digits = caps[3].replace(',', "");
    let value: f64 = digits.parse().ok()?;
    Some(if negative { -value } else { value })
}

fn numbers_match(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= NUMERIC_REL_TOLERANCE * a.abs().max(b.abs())
}

/// 1.0 when the prediction matches any gold answer. Two numerals compare
/// with a relative tolerance; otherwise normalized strings must be equal.
pub fn em_score(prediction: &str, golds: &[String]) -> f64 {
    let pred_num = parse_leading_number(prediction);
    let pred_norm = normalize_answer(prediction);
    let hit = golds.iter().any(|g| match (pred_num, parse_leading_number(g)) {
        (Some(p), Some(q)) => numbers_match(p, q),
        _ => pred_norm == normalize_answer(g),
    });
    if hit {
        1.0
    } else {
        0.0
    }
}
