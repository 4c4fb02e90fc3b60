//! Visual-vs-contextual question classifier: summed token/segment/position
//! embeddings over `[START] question [SEP]`, an encoder stack, and a 2-way
//! head on the start-token row.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::neural::{layers, ops, Gradients, ParamSet, Tape, Tensor, Var};
use crate::text::{tokenize, Vocabulary, SEQ_SEP, SEQ_START};
use crate::train::{fit, History, TrainConfig};
use crate::transformer::{self, EncoderConfig};

const HEAD: &str = "head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Visual,
    Contextual,
}

impl Route {
    /// Output index of the head.
    pub fn index(self) -> usize {
        match self {
            Route::Visual => 0,
            Route::Contextual => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Route> {
        match i {
            0 => Some(Route::Visual),
            1 => Some(Route::Contextual),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Visual => "visual",
            Route::Contextual => "contextual",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Route::Visual),
            "contextual" => Ok(Route::Contextual),
            other => Err(Error::Input(format!("unknown question type `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteLabel {
    pub label: Route,
    /// Larger of the two softmax outputs.
    pub confidence: f64,
}

impl RouteLabel {
    /// Exact ties go to `Contextual`.
    pub fn from_probabilities(p: [f64; 2]) -> Self {
        if p[1] >= p[0] {
            RouteLabel {
                label: Route::Contextual,
                confidence: p[1],
            }
        } else {
            RouteLabel {
                label: Route::Visual,
                confidence: p[0],
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuestion {
    pub text: String,
    pub route: Route,
}

impl LabeledQuestion {
    pub fn new(text: impl Into<String>, route: Route) -> Self {
        Self {
            text: text.into(),
            route,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub encoder: EncoderConfig,
    /// Question tokens kept before the boundary tokens are added.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            max_len: 40,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("classifier max_len must be positive".into()));
        }
        self.encoder.validate()
    }
}

#[derive(Debug)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    truncated: AtomicUsize,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(config.seed);
        transformer::init_encoder(
            &mut params,
            &config.encoder,
            vocab.len(),
            1,
            config.max_len + 2,
        )?;
        layers::init_linear(&mut params, HEAD, config.encoder.width, 2)?;
        Ok(Self::from_parts(config, vocab, params))
    }

    pub fn from_parts(config: ClassifierConfig, vocab: Vocabulary, params: ParamSet) -> Self {
        Self {
            config,
            vocab,
            params,
            truncated: AtomicUsize::new(0),
        }
    }

    /// Number of inputs cut to `max_len` so far.
    pub fn truncations(&self) -> usize {
        self.truncated.load(Ordering::Relaxed)
    }

    /// `[SEQ_START] + ids + [SEQ_SEP]`, truncating `ids` to `max_len`.
    pub fn input_ids(&self, ids: &[usize]) -> Vec<usize> {
        if ids.len() > self.config.max_len {
            self.truncated.fetch_add(1, Ordering::Relaxed);
        }
        let kept = &ids[..ids.len().min(self.config.max_len)];
        let mut out = Vec::with_capacity(kept.len() + 2);
        out.push(SEQ_START);
        out.extend_from_slice(kept);
        out.push(SEQ_SEP);
        out
    }

    /// The `(L+2)×d` summed embedding fed to the encoder.
    pub fn embed_input<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tensor> {
        let ids = self.input_ids(&self.vocab.encode(tokens));
        transformer::embed_values(&self.params, &ids, &vec![0; ids.len()])
    }

    pub fn encode_text(&self, question: &str) -> Result<Vec<usize>> {
        let tokens = tokenize(question);
        if tokens.is_empty() {
            return Err(Error::Input("empty question".into()));
        }
        Ok(self.input_ids(&self.vocab.encode(&tokens)))
    }

    pub fn probabilities(&self, question: &str) -> Result<[f64; 2]> {
        let ids = self.encode_text(question)?;
        probabilities_for(&self.params, &self.config, &ids)
    }

    pub fn classify(&self, question: &str) -> Result<RouteLabel> {
        Ok(RouteLabel::from_probabilities(self.probabilities(question)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, &self.vocab, &self.config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, vocab, config): (_, _, ClassifierConfig) = load_checkpoint(dir)?;
        config.validate()?;
        Ok(Self::from_parts(config, vocab, params))
    }
}

/// `1×2` logits for an already framed id sequence.
pub fn logits_on_tape<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    cfg: &ClassifierConfig,
    ids: &[usize],
) -> Result<Var> {
    let out = transformer::encode(tape, params, &cfg.encoder, ids, &vec![0; ids.len()])?;
    let first = tape.slice_rows(out.hidden, 0, 1)?;
    layers::linear(tape, params, HEAD, first)
}

fn probabilities_for(params: &ParamSet, cfg: &ClassifierConfig, ids: &[usize]) -> Result<[f64; 2]> {
    let mut tape = Tape::new();
    let logits = logits_on_tape(&mut tape, params, cfg, ids)?;
    let p = ops::softmax(tape.value(logits).data())?;
    Ok([p[0], p[1]])
}

/// Cross-entropy of one framed example; adds its gradient into `grads`.
pub fn example_loss(
    params: &ParamSet,
    cfg: &ClassifierConfig,
    ids: &[usize],
    route: Route,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = logits_on_tape(&mut tape, params, cfg, ids)?;
    let loss = tape.cross_entropy(logits, route.index())?;
    if let Some(g) = grads {
        tape.accumulate_gradients(loss, g)?;
    }
    tape.value(loss).item()
}

/// Fraction of `set` classified correctly.
pub fn accuracy_on(model: &ClassifierModel, set: &[LabeledQuestion]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Contract("accuracy over an empty set".into()));
    }
    let mut correct = 0usize;
    for q in set {
        if model.classify(&q.text)?.label == q.route {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Trains `model` in place. Validation accuracy (on `train` when `val` is
/// empty) picks the checkpoint kept.
pub fn train_classifier(
    model: &mut ClassifierModel,
    train: &[LabeledQuestion],
    val: &[LabeledQuestion],
    cfg: &TrainConfig,
) -> Result<History> {
    let has = |r: Route| train.iter().any(|q| q.route == r);
    if !has(Route::Visual) || !has(Route::Contextual) {
        return Err(Error::Config(
            "classifier training set must contain both question types".into(),
        ));
    }
    let frame = |m: &ClassifierModel, set: &[LabeledQuestion]| -> Result<Vec<(Vec<usize>, Route)>> {
        set.iter()
            .map(|q| Ok((m.encode_text(&q.text)?, q.route)))
            .collect()
    };
    let train_ids = frame(model, train)?;
    let val_ids = if val.is_empty() {
        train_ids.clone()
    } else {
        frame(model, val)?
    };
    let mcfg = model.config.clone();
    fit(
        &mut model.params,
        &train_ids,
        cfg,
        |p, (ids, route), g| example_loss(p, &mcfg, ids, *route, Some(g)),
        |p| {
            let mut correct = 0usize;
            for (ids, route) in &val_ids {
                let label = RouteLabel::from_probabilities(probabilities_for(p, &mcfg, ids)?);
                correct += usize::from(label.label == *route);
            }
            Ok(correct as f64 / val_ids.len() as f64)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{POSITION_EMB, SEGMENT_EMB, TOKEN_EMB};

    fn small_cfg() -> ClassifierConfig {
        ClassifierConfig {
            encoder: EncoderConfig {
                width: 8,
                depth: 1,
                heads: 2,
                ffn: 16,
            },
            max_len: 40,
            seed: 5,
        }
    }

    fn vocab() -> Vocabulary {
        let corpus = [
            tokenize("what color is her dress ?"),
            tokenize("who painted this portrait ?"),
        ];
        Vocabulary::build(corpus.iter().map(Vec::as_slice), 1).unwrap()
    }

    fn zero(model: &mut ClassifierModel, name: &str) {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.update(name, Tensor::zeros(&shape)).unwrap();
    }

    #[test]
    fn zero_segment_and_position_tables_give_token_rows() {
        let mut m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        zero(&mut m, SEGMENT_EMB);
        zero(&mut m, POSITION_EMB);
        let toks = ["who", "painted"];
        let e = m.embed_input(&toks).unwrap();
        let table = m.params.get(TOKEN_EMB).unwrap();
        let ids = m.input_ids(&m.vocab.encode(&toks));
        for (r, &id) in ids.iter().enumerate() {
            assert_eq!(e.row(r), table.row(id));
        }
    }

    #[test]
    fn repeated_token_rows_differ_by_position() {
        let m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        let e = m.embed_input(&["who", "is", "who"]).unwrap();
        assert_ne!(e.row(1), e.row(3));
    }

    #[test]
    fn output_length_is_l_plus_two() {
        let m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        for l in [1, 10, 40] {
            let toks = vec!["who"; l];
            assert_eq!(m.embed_input(&toks).unwrap().rows(), l + 2);
        }
        assert_eq!(m.truncations(), 0);
        m.embed_input(&vec!["who"; 41]).unwrap();
        assert_eq!(m.truncations(), 1);
    }

    #[test]
    fn zero_head_ties_to_contextual() {
        let mut m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        zero(&mut m, "head.w");
        zero(&mut m, "head.b");
        let r = m.classify("what color is her dress ?").unwrap();
        assert_eq!(r.label, Route::Contextual);
        assert_eq!(r.confidence, 0.5);
    }

    #[test]
    fn empty_question_is_an_input_error() {
        let m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        assert!(matches!(m.classify("  "), Err(Error::Input(_))));
    }

    #[test]
    fn single_class_training_set_is_a_config_error() {
        let mut m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        let train = vec![LabeledQuestion::new("who painted this ?", Route::Contextual)];
        let cfg = TrainConfig::new(1, 1, crate::neural::OptimConfig::adam(0.01), 0);
        assert!(matches!(
            train_classifier(&mut m, &train, &[], &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn learns_two_questions_with_history_per_epoch() {
        let mut m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        let train = vec![
            LabeledQuestion::new("what color is her dress ?", Route::Visual),
            LabeledQuestion::new("who painted this portrait ?", Route::Contextual),
        ];
        let cfg = TrainConfig::new(40, 2, crate::neural::OptimConfig::adam(0.01), 1);
        let h = train_classifier(&mut m, &train, &train, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 40);
        assert_eq!(accuracy_on(&m, &train).unwrap(), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ClassifierModel::new(small_cfg(), vocab()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = ClassifierModel::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
        let q = "who painted this portrait ?";
        assert_eq!(back.classify(q).unwrap(), m.classify(q).unwrap());
        let missing = ClassifierModel::load(&dir.path().join("nope"));
        assert!(matches!(missing, Err(Error::ModelNotLoaded(_))));
    }
}
