//! Accuracy over exact matches, token-level precision/recall/F1, and
//! report assembly with per-question-type breakdowns.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::Route;
use crate::datasets::QaRecord;
use crate::error::{Error, Result};
use crate::text::{normalize, tokenize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Score {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// True when the normalized prediction equals any normalized gold.
pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> bool {
    let p = normalize(prediction);
    golds.iter().any(|g| normalize(g.as_ref()) == p)
}

/// Precision and recall over the multiset intersection of tokens.
pub fn token_f1(prediction: &str, gold: &str) -> Result<F1Score> {
    let gold_tokens = tokenize(gold);
    if gold_tokens.is_empty() {
        return Err(Error::Contract("token F1 against an empty gold answer".into()));
    }
    let pred_tokens = tokenize(prediction);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut correct = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                correct += 1;
            }
        }
    }
    let precision = if pred_tokens.is_empty() {
        0.0
    } else {
        correct as f64 / pred_tokens.len() as f64
    };
    Ok(F1Score::from_pr(precision, correct as f64 / gold_tokens.len() as f64))
}

/// Highest-F1 score over several golds (the first wins ties).
pub fn best_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> Result<F1Score> {
    let mut best: Option<F1Score> = None;
    for g in golds {
        let s = token_f1(prediction, g.as_ref())?;
        if best.is_none_or(|b| s.f1 > b.f1) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::Contract("F1 against an empty gold list".into()))
}

pub fn accuracy(matches: &[bool]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::Contract("accuracy of an empty list".into()));
    }
    Ok(matches.iter().filter(|&&m| m).count() as f64 / matches.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Closed-vocabulary answers: accuracy only.
    Classification,
    /// Free-length answers: accuracy and mean F1.
    Freeform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Contextual,
    Visual,
    Both,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::Contextual, Slice::Visual, Slice::Both];

    pub fn contains(self, route: Route) -> bool {
        match self {
            Slice::Contextual => route == Route::Contextual,
            Slice::Visual => route == Route::Visual,
            Slice::Both => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slice::Contextual => "contextual",
            Slice::Visual => "visual",
            Slice::Both => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub module: String,
    pub dataset: String,
    pub slice: Slice,
    pub correct: usize,
    pub total: usize,
    /// `None` for an empty slice.
    pub accuracy: Option<f64>,
    pub f1: Option<F1Score>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub module: String,
    pub dataset: String,
    pub mode: EvalMode,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub f1: Option<F1Score>,
    pub rows: Vec<BreakdownRow>,
    pub fingerprint: String,
    pub seed: u64,
    pub assumptions: Vec<String>,
}

pub const ASSUMPTIONS: &[&str] = &[
    "a prediction is correct when its normalized form equals any normalized gold answer",
    "F1 uses multiset token overlap and keeps stop-words; with several golds the best F1 counts",
    "normalization lowercases and splits punctuation into separate tokens",
];

/// SHA-256 of a configuration's canonical text.
pub fn fingerprint(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

fn mean_f1(scores: &[F1Score]) -> Option<F1Score> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(F1Score {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

/// Scores `predictions` against `records` (aligned by position) with a
/// breakdown row per question-type slice.
pub fn evaluate_module<S: AsRef<str>>(
    module: &str,
    dataset: &str,
    predictions: &[S],
    records: &[QaRecord],
    mode: EvalMode,
    fingerprint: &str,
    seed: u64,
) -> Result<EvalReport> {
    if predictions.len() != records.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::Contract("evaluation over no records".into()));
    }
    let mut hits = Vec::with_capacity(records.len());
    let mut f1s = Vec::with_capacity(records.len());
    for (p, r) in predictions.iter().zip(records) {
        hits.push(exact_match(p.as_ref(), &r.answers));
        if mode == EvalMode::Freeform {
            f1s.push(best_f1(p.as_ref(), &r.answers)?);
        }
    }
    let rows = Slice::ALL
        .iter()
        .map(|&slice| {
            let idx: Vec<usize> = (0..records.len()).filter(|&i| slice.contains(records[i].route)).collect();
            let correct = idx.iter().filter(|&&i| hits[i]).count();
            let f1 = match mode {
                EvalMode::Freeform => mean_f1(&idx.iter().map(|&i| f1s[i]).collect::<Vec<_>>()),
                EvalMode::Classification => None,
            };
            BreakdownRow {
                module: module.to_string(),
                dataset: dataset.to_string(),
                slice,
                correct,
                total: idx.len(),
                accuracy: (!idx.is_empty()).then(|| correct as f64 / idx.len() as f64),
                f1,
            }
        })
        .collect();
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(EvalReport {
        module: module.to_string(),
        dataset: dataset.to_string(),
        mode,
        correct,
        total: records.len(),
        accuracy: accuracy(&hits)?,
        f1: mean_f1(&f1s),
        rows,
        fingerprint: fingerprint.to_string(),
        seed,
        assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
    })
}

/// Classifier accuracy report (predicted vs gold route per record).
pub fn evaluate_routes(
    dataset: &str,
    predicted: &[Route],
    records: &[QaRecord],
    fingerprint: &str,
    seed: u64,
) -> Result<EvalReport> {
    let as_text: Vec<&str> = predicted.iter().map(|r| r.as_str()).collect();
    let golds: Vec<QaRecord> = records
        .iter()
        .map(|r| QaRecord {
            answers: vec![r.route.as_str().to_string()],
            ..r.clone()
        })
        .collect();
    evaluate_module("classifier", dataset, &as_text, &golds, EvalMode::Classification, fingerprint, seed)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Checks that slice totals add up and accuracies match their counts.
    pub fn check_invariants(&self) -> Result<()> {
        let get = |s: Slice| self.rows.iter().find(|r| r.slice == s);
        let (Some(c), Some(v), Some(b)) = (get(Slice::Contextual), get(Slice::Visual), get(Slice::Both)) else {
            return Err(Error::Contract("report is missing a slice row".into()));
        };
        if c.total + v.total != b.total || b.total != self.total || c.correct + v.correct != b.correct {
            return Err(Error::Contract("slice counts do not add up".into()));
        }
        if (self.accuracy - self.correct as f64 / self.total as f64).abs() > 1e-12 {
            return Err(Error::Contract("accuracy does not match counts".into()));
        }
        Ok(())
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Table with one row per report and the overall accuracy, in the layout of
/// a classifier accuracy table.
pub fn render_accuracy_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<24} {:<20} {:>8} {:>8}", "Model", "Dataset", "N", "Accuracy").expect("write");
    for r in reports {
        writeln!(out, "{:<24} {:<20} {:>8} {:>8.3}", r.module, r.dataset, r.total, r.accuracy).expect("write");
    }
    out
}

/// Per-slice table: accuracy and F1 for contextual, visual and both.
pub fn render_breakdown_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    write!(out, "{:<16} {:<14}", "Model", "Dataset").expect("write");
    for s in Slice::ALL {
        write!(out, " {:>12} {:>8}", format!("{} acc", s.as_str()), "F1").expect("write");
    }
    out.push('\n');
    for r in reports {
        write!(out, "{:<16} {:<14}", r.module, r.dataset).expect("write");
        for s in Slice::ALL {
            let row = r.rows.iter().find(|x| x.slice == s);
            let acc = row.and_then(|x| x.accuracy);
            let f1 = row.and_then(|x| x.f1).map(|f| f.f1);
            write!(out, " {:>12} {:>8}", cell(acc), cell(f1)).expect("write");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, answers: &[&str], route: Route) -> QaRecord {
        QaRecord {
            id: id.into(),
            artwork_id: "a".into(),
            question: "q ?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            route,
            split: None,
        }
    }

    #[test]
    fn exact_match_examples() {
        assert!(exact_match("Red", &["red"]));
        assert!(exact_match("oil on canvas", &["oil on canvas", "oil"]));
        assert!(!exact_match("dog", &["cat"]));
    }

    #[test]
    fn f1_examples() {
        let s = token_f1("the virgin mary", "the virgin mary").unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = token_f1("the virgin mary and child", "virgin mary").unwrap();
        assert!((s.precision - 0.4).abs() < 1e-12);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.5714).abs() < 1e-4);
        let s = token_f1("a b", "c d").unwrap();
        assert_eq!(s.f1, 0.0);
        assert!(matches!(token_f1("x", " "), Err(Error::Contract(_))));
        assert_eq!(token_f1("", "x").unwrap().f1, 0.0);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(accuracy(&[true; 3]).unwrap(), 1.0);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn module_report() {
        let recs = vec![
            rec("1", &["leonardo da vinci"], Route::Contextual),
            rec("2", &["red"], Route::Visual),
            rec("3", &["1503"], Route::Contextual),
        ];
        let r = evaluate_module("qa", "t", &["leonardo da vinci", "blue", "1504"], &recs, EvalMode::Freeform, "fp", 3)
            .unwrap();
        r.check_invariants().unwrap();
        assert_eq!(r.correct, 1);
        let ctx = &r.rows[0];
        assert_eq!((ctx.correct, ctx.total), (1, 2));
        assert_eq!(ctx.f1.unwrap().f1, 0.5);
        assert!(evaluate_module("qa", "t", &["x"], &recs, EvalMode::Freeform, "", 0).is_err());

        let single = evaluate_module("qa", "t", &["red"], &recs[1..2], EvalMode::Freeform, "", 0).unwrap();
        assert_eq!(single.accuracy, 1.0);
        assert_eq!(single.f1.unwrap().f1, 1.0);
        assert_eq!(single.rows[0].accuracy, None);
        let table = render_breakdown_table(&[r]);
        assert!(table.contains("contextual acc"));
    }

    #[test]
    fn classification_mode_has_no_f1() {
        let recs = vec![rec("1", &["red"], Route::Visual)];
        let r = evaluate_module("vqa", "t", &["red"], &recs, EvalMode::Classification, "", 0).unwrap();
        assert!(r.f1.is_none());
        assert!(r.rows.iter().all(|x| x.f1.is_none()));
    }
}
