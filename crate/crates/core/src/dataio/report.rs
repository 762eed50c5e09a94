use std::fmt::Write as _;

use crate::evalviz::EvalResult;
use crate::model::BranchName;
use crate::{Error, Result};

/// Keys of one result block, in output order.
pub const RESULT_KEYS: [&str; 7] = [
    "accuracy",
    "f1",
    "auc",
    "confusion.tp",
    "confusion.fp",
    "confusion.tn",
    "confusion.fn",
];

/// Metrics of every head on one split. The top-level block repeats the
/// fusion head, which is the model's final output.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub n: usize,
    /// One entry per head in [`BranchName::ALL`] order.
    pub heads: Vec<EvalResult>,
}

fn block(out: &mut String, r: &EvalResult) {
    let auc = r.auc.map_or_else(|| "none".to_string(), |a| format!("{a:.6}"));
    let c = &r.confusion;
    for (k, v) in RESULT_KEYS.iter().zip([
        format!("{:.6}", r.accuracy),
        format!("{:.6}", r.f1),
        auc,
        c.tp.to_string(),
        c.fp.to_string(),
        c.tn.to_string(),
        c.fn_.to_string(),
    ]) {
        writeln!(out, "{k} = {v}").unwrap();
    }
}

impl MetricsReport {
    pub fn new(split: impl Into<String>, heads: Vec<EvalResult>) -> Result<Self> {
        if heads.len() != BranchName::ALL.len() {
            return Err(Error::Validation(format!("report needs 4 head results, got {}", heads.len())));
        }
        let n = heads[0].labels.len();
        Ok(MetricsReport {
            split: split.into(),
            n,
            heads,
        })
    }

    pub fn fusion(&self) -> &EvalResult {
        &self.heads[BranchName::Fusion.index()]
    }

    pub fn head(&self, b: BranchName) -> &EvalResult {
        &self.heads[b.index()]
    }

    /// Fixed key order, six decimals, `\n` line endings.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "split = {}", self.split).unwrap();
        writeln!(out, "n = {}", self.n).unwrap();
        block(&mut out, self.fusion());
        for b in BranchName::ALL {
            writeln!(out, "\n[{b}]").unwrap();
            block(&mut out, self.head(b));
        }
        out
    }
}

/// Parsed `(section, key, value)` triples; the top-level section is `""`.
pub fn parse_report(text: &str) -> Result<Vec<(String, String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Validation(format!("report line {}: expected `key = value`", i + 1)))?;
        out.push((section.clone(), k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Checks key order, section order and value ranges, and that the counts
/// in every block add up to `n`.
pub fn validate_report(text: &str) -> Result<()> {
    let bad = |m: String| Error::Validation(format!("metrics report: {m}"));
    let entries = parse_report(text)?;
    let mut expected: Vec<(String, String)> = vec![("".into(), "split".into()), ("".into(), "n".into())];
    let sections = std::iter::once(String::new()).chain(BranchName::ALL.iter().map(|b| b.to_string()));
    for s in sections {
        expected.extend(RESULT_KEYS.iter().map(|k| (s.clone(), k.to_string())));
    }
    let got: Vec<(String, String)> = entries.iter().map(|(s, k, _)| (s.clone(), k.clone())).collect();
    if got != expected {
        return Err(bad(format!("keys out of order or missing: {got:?}")));
    }
    let n: usize = entries[1].2.parse().map_err(|_| bad("n is not an integer".into()))?;
    for chunk in entries[2..].chunks(RESULT_KEYS.len()) {
        let sec = if chunk[0].0.is_empty() { "top level" } else { chunk[0].0.as_str() };
        for (_, k, v) in &chunk[..3] {
            if k == "auc" && v == "none" {
                continue;
            }
            let x: f64 = v.parse().map_err(|_| bad(format!("{sec} {k} `{v}` is not a number")))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(bad(format!("{sec} {k} {x} outside [0,1]")));
            }
        }
        let mut total = 0usize;
        for (_, k, v) in &chunk[3..] {
            total += v
                .parse::<usize>()
                .map_err(|_| bad(format!("{sec} {k} `{v}` is not a count")))?;
        }
        if total != n {
            return Err(bad(format!("{sec} confusion sums to {total}, n = {n}")));
        }
    }
    Ok(())
}
