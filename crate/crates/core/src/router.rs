//! Classify, then dispatch to exactly one answering branch. Also holds the
//! stub-driven composition simulator used to check routing arithmetic.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, Route, RouteLabel};
use crate::error::{Error, Result};
use crate::qa::{QaModel, Span};
use crate::vqa::{AnswerDistribution, RegionFeatures, VqaModel};

pub trait QuestionClassifier: Send + Sync {
    fn classify(&self, question: &str) -> Result<RouteLabel>;
}

pub trait VisualAnswerer: Send + Sync {
    fn answer_visual(&self, question: &str, regions: &RegionFeatures) -> Result<(String, AnswerDistribution)>;
}

pub trait ContextualAnswerer: Send + Sync {
    fn select_description(&self, sentences: &[String], question: &str) -> Result<(usize, Span)>;
}

impl QuestionClassifier for ClassifierModel {
    fn classify(&self, question: &str) -> Result<RouteLabel> {
        ClassifierModel::classify(self, question)
    }
}

impl VisualAnswerer for VqaModel {
    fn answer_visual(&self, question: &str, regions: &RegionFeatures) -> Result<(String, AnswerDistribution)> {
        VqaModel::answer_visual(self, question, regions)
    }
}

impl ContextualAnswerer for QaModel {
    fn select_description(&self, sentences: &[String], question: &str) -> Result<(usize, Span)> {
        QaModel::select_description(self, sentences, question)
    }
}

/// Always returns the same label; for tests and dry runs.
#[derive(Clone, Copy, Debug)]
pub struct FixedClassifier(pub Route);

impl QuestionClassifier for FixedClassifier {
    fn classify(&self, _question: &str) -> Result<RouteLabel> {
        Ok(RouteLabel {
            label: self.0,
            confidence: 1.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "vqa")]
    Vqa,
    #[serde(rename = "qa")]
    Qa,
}

impl Branch {
    pub fn for_route(route: Route) -> Branch {
        match route {
            Route::Visual => Branch::Vqa,
            Route::Contextual => Branch::Qa,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classify,
    Vqa,
    Qa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub micros: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Evidence {
    Visual {
        distribution: AnswerDistribution,
        boxes: Option<Vec<[f64; 4]>>,
    },
    Contextual {
        sentence_index: usize,
        span: Span,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutedAnswer {
    pub question: String,
    pub route: RouteLabel,
    pub branch: Branch,
    pub answer: String,
    pub evidence: Evidence,
    pub timings: Vec<StageTiming>,
}

/// What the router needs to know about one artwork.
#[derive(Clone, Copy, Debug)]
pub struct ArtworkAssets<'a> {
    pub id: &'a str,
    pub contextual_sentences: &'a [String],
    pub regions: Option<&'a RegionFeatures>,
}

#[derive(Clone)]
pub struct Pipeline {
    pub classifier: Arc<dyn QuestionClassifier>,
    pub visual: Arc<dyn VisualAnswerer>,
    pub contextual: Arc<dyn ContextualAnswerer>,
}

fn elapsed_micros(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_micros()).unwrap_or(u64::MAX)
}

impl Pipeline {
    pub fn new(
        classifier: Arc<dyn QuestionClassifier>,
        visual: Arc<dyn VisualAnswerer>,
        contextual: Arc<dyn ContextualAnswerer>,
    ) -> Self {
        Self {
            classifier,
            visual,
            contextual,
        }
    }

    pub fn answer(&self, question: &str, artwork: ArtworkAssets<'_>) -> Result<RoutedAnswer> {
        let t = Instant::now();
        let route = self.classifier.classify(question)?;
        let mut timings = vec![StageTiming {
            stage: Stage::Classify,
            micros: elapsed_micros(t),
        }];
        let branch = Branch::for_route(route.label);
        let t = Instant::now();
        let (answer, evidence, stage) = match branch {
            Branch::Vqa => {
                let regions = artwork.regions.ok_or_else(|| {
                    Error::Data(format!("artwork {} has no region features", artwork.id))
                })?;
                let (answer, distribution) = self.visual.answer_visual(question, regions)?;
                let boxes = regions.boxes.clone();
                (answer, Evidence::Visual { distribution, boxes }, Stage::Vqa)
            }
            Branch::Qa => {
                if artwork.contextual_sentences.is_empty() {
                    return Err(Error::Data(format!(
                        "artwork {} has no contextual sentences",
                        artwork.id
                    )));
                }
                let (sentence_index, span) = self
                    .contextual
                    .select_description(artwork.contextual_sentences, question)?;
                (
                    span.text.clone(),
                    Evidence::Contextual {
                        sentence_index,
                        span,
                    },
                    Stage::Qa,
                )
            }
        };
        timings.push(StageTiming {
            stage,
            micros: elapsed_micros(t),
        });
        Ok(RoutedAnswer {
            question: question.to_string(),
            route,
            branch,
            answer,
            evidence,
            timings,
        })
    }
}

// ---------------------------------------------------------------------------
// Composition simulator

/// Stub pipeline description. Index 0 is visual, 1 contextual, for both
/// question types and routes; branch rows are `[VQA, QA]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubSpec {
    /// `confusion[type][route]`, rows sum to 1.
    pub confusion: [[f64; 2]; 2],
    /// `accuracy[branch][type]`.
    pub accuracy: [[f64; 2]; 2],
    pub seed: u64,
}

impl StubSpec {
    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.confusion.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "confusion row {t} must be a probability distribution, got {row:?}"
                )));
            }
        }
        if self.accuracy.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("branch accuracies must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Expected accuracy for a mix with `visual_share` visual questions.
    pub fn analytic_accuracy(&self, visual_share: f64) -> f64 {
        let mix = [visual_share, 1.0 - visual_share];
        (0..2)
            .map(|t| mix[t] * (0..2).map(|r| self.confusion[t][r] * self.accuracy[r][t]).sum::<f64>())
            .sum()
    }

    /// Accuracy of one branch answering every question of the mix.
    pub fn single_branch_accuracy(&self, branch: Branch, visual_share: f64) -> f64 {
        let b = match branch {
            Branch::Vqa => 0,
            Branch::Qa => 1,
        };
        visual_share * self.accuracy[b][0] + (1.0 - visual_share) * self.accuracy[b][1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    pub analytic: f64,
    pub measured: f64,
    /// Binomial standard error of the measured value around `analytic`.
    pub sigma: f64,
    pub questions: usize,
    pub correct: usize,
}

impl CompositionResult {
    pub fn within_sigmas(&self, k: f64) -> bool {
        (self.measured - self.analytic).abs() <= k * self.sigma
    }
}

/// Monte Carlo over routing with `n_per_type` questions of each type.
pub fn simulate_composition(spec: &StubSpec, n_per_type: usize) -> Result<CompositionResult> {
    spec.validate()?;
    if n_per_type == 0 {
        return Err(Error::Config("simulation needs at least one question per type".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut correct = 0usize;
    for t in 0..2 {
        for _ in 0..n_per_type {
            let route = usize::from(rng.gen::<f64>() >= spec.confusion[t][0]);
            if rng.gen::<f64>() < spec.accuracy[route][t] {
                correct += 1;
            }
        }
    }
    let n = 2 * n_per_type;
    let analytic = spec.analytic_accuracy(0.5);
    Ok(CompositionResult {
        analytic,
        measured: correct as f64 / n as f64,
        sigma: (analytic * (1.0 - analytic) / n as f64).sqrt(),
        questions: n,
        correct,
    })
}
