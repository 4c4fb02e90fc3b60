//! VQA-v2 / OK-VQA style question pools and the balanced classifier set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::QaRecord;
use crate::classifier::Route;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolFormat {
    /// Visual questions.
    Vqa2,
    /// Questions needing outside knowledge, treated as contextual.
    OkVqa,
}

impl PoolFormat {
    pub fn route(self) -> Route {
        match self {
            PoolFormat::Vqa2 => Route::Visual,
            PoolFormat::OkVqa => Route::Contextual,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            PoolFormat::Vqa2 => "vqa2",
            PoolFormat::OkVqa => "okvqa",
        }
    }
}

#[derive(Deserialize)]
struct QuestionFile {
    questions: Vec<NativeQuestion>,
}

#[derive(Deserialize)]
struct NativeQuestion {
    question_id: u64,
    image_id: u64,
    question: String,
}

#[derive(Deserialize)]
struct AnnotationFile {
    annotations: Vec<NativeAnnotation>,
}

#[derive(Deserialize)]
struct NativeAnnotation {
    question_id: u64,
    answers: Vec<NativeAnswer>,
}

#[derive(Deserialize)]
struct NativeAnswer {
    answer: String,
}

fn find_file(dir: &Path, needle: &str) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().contains(needle))
        })
        .collect();
    hits.sort();
    match hits.len() {
        1 => Ok(hits.remove(0)),
        0 => Err(Error::Data(format!("no *{needle}*.json file in {}", dir.display()))),
        _ => Err(Error::Data(format!(
            "several *{needle}*.json files in {}",
            dir.display()
        ))),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            path.display().to_string(),
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// Joins a `*questions*.json` and an `*annotations*.json` file from `dir`.
/// Image ids become artwork ids; they are not resolved against artworks.
pub fn load_question_pool(dir: &Path, format: PoolFormat) -> Result<Vec<QaRecord>> {
    let questions: QuestionFile = read_json(&find_file(dir, "questions")?)?;
    let annotations: AnnotationFile = read_json(&find_file(dir, "annotations")?)?;
    let answers: BTreeMap<u64, Vec<String>> = annotations
        .annotations
        .into_iter()
        .map(|a| (a.question_id, a.answers.into_iter().map(|x| x.answer).collect()))
        .collect();
    let mut out = Vec::with_capacity(questions.questions.len());
    for q in questions.questions {
        let golds = answers.get(&q.question_id).cloned().ok_or_else(|| {
            Error::Data(format!("question {} has no annotation", q.question_id))
        })?;
        let rec = QaRecord {
            id: format!("{}-{}", format.prefix(), q.question_id),
            artwork_id: q.image_id.to_string(),
            question: q.question,
            answers: golds,
            route: format.route(),
            split: None,
        };
        rec.validate()?;
        out.push(rec);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Every contextual question plus an equally large seeded sample (without
/// replacement, pool order kept) of visual ones.
pub fn build_balanced_classifier_set(
    visual: &[QaRecord],
    contextual: &[QaRecord],
    seed: u64,
) -> Result<Vec<QaRecord>> {
    if visual.len() < contextual.len() {
        return Err(Error::Data(format!(
            "visual pool of {} cannot balance {} contextual questions",
            visual.len(),
            contextual.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, visual.len(), contextual.len()).into_vec();
    picked.sort_unstable();
    let mut out: Vec<QaRecord> = contextual
        .iter()
        .cloned()
        .map(|mut r| {
            r.route = Route::Contextual;
            r
        })
        .collect();
    out.extend(picked.into_iter().map(|i| {
        let mut r = visual[i].clone();
        r.route = Route::Visual;
        r
    }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pool(n: usize, route: Route) -> Vec<QaRecord> {
        (0..n)
            .map(|i| QaRecord {
                id: format!("{route}-{i}"),
                artwork_id: i.to_string(),
                question: format!("question {i} ?"),
                answers: vec!["x".into()],
                route,
                split: None,
            })
            .collect()
    }

    #[test]
    fn balanced_counts() {
        let out = build_balanced_classifier_set(&pool(10, Route::Visual), &pool(3, Route::Contextual), 1).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out.iter().filter(|r| r.route == Route::Visual).count(), 3);
    }

    #[test]
    fn insufficient_visual_pool() {
        let r = build_balanced_classifier_set(&pool(2, Route::Visual), &pool(3, Route::Contextual), 1);
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn seeded_sample() {
        let v = pool(500, Route::Visual);
        let c = pool(20, Route::Contextual);
        let a = build_balanced_classifier_set(&v, &c, 7).unwrap();
        assert_eq!(a, build_balanced_classifier_set(&v, &c, 7).unwrap());
        assert_ne!(a, build_balanced_classifier_set(&v, &c, 8).unwrap());
    }

    #[test]
    fn native_pool_join() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("OpenEnded_mscoco_train2014_questions.json"),
            r#"{"questions":[{"question_id":5,"image_id":42,"question":"What is this?"}]}"#,
        )
        .unwrap();
        fs::write(
            dir.path().join("mscoco_train2014_annotations.json"),
            r#"{"annotations":[{"question_id":5,"image_id":42,"answers":[{"answer":"dog","answer_id":1}]}]}"#,
        )
        .unwrap();
        let recs = load_question_pool(dir.path(), PoolFormat::OkVqa).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "okvqa-5");
        assert_eq!(recs[0].artwork_id, "42");
        assert_eq!(recs[0].route, Route::Contextual);
        assert_eq!(recs[0].answers, vec!["dog"]);
    }
}
