//! Question-guided attention over region descriptors, fused with the GRU
//! question descriptor by an element-wise product, classified over a closed
//! answer vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::regions::RegionFeatures;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::neural::{argmax, layers, ops, Gradients, Init, ParamSet, Tape, Tensor, Var};
use crate::text::encoder::encode_on_tape;
use crate::text::{normalize, tokenize, EmbeddingTable, Vocabulary};
use crate::train::{fit, History, TrainConfig};

pub const WORD_EMB: &str = "word.emb";
const GRU: &str = "gru";
const ATT_HIDDEN: &str = "att.gt";
const ATT_SCORE: &str = "att.w";
const PROJ_Q: &str = "proj.q";
const PROJ_V: &str = "proj.v";
const HEAD_HIDDEN: &str = "head.hidden";
const HEAD_OUT: &str = "head.out";
pub const ANSWERS_FILE: &str = "answers.txt";
pub const MAX_ANSWER_TOKENS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    pub fn from_answers(answers: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            let n = tokenize(a).len();
            if n == 0 || n > MAX_ANSWER_TOKENS {
                return Err(Error::Data(format!("answer `{a}` must have 1 to 3 tokens")));
            }
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate answer `{a}`")));
            }
        }
        if answers.is_empty() {
            return Err(Error::Data("empty answer vocabulary".into()));
        }
        Ok(Self { answers, index })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// Id of the normalized form of `answer`.
    pub fn id(&self, answer: &str) -> Option<usize> {
        self.index.get(&normalize(answer)).copied()
    }

    pub fn answer(&self, id: usize) -> Option<&str> {
        self.answers.get(id).map(String::as_str)
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.answers.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_answers(text.lines().filter(|l| !l.is_empty()).map(String::from).collect())
    }
}

/// Normalizes answers, keeps those of at most three tokens and takes the
/// `top_n` most frequent (ties alphabetical).
pub fn build_answer_vocab<I, S>(answers: I, top_n: usize) -> Result<AnswerVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if top_n == 0 {
        return Err(Error::Config("answer vocabulary top_n must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for a in answers {
        let tokens = tokenize(a.as_ref());
        if (1..=MAX_ANSWER_TOKENS).contains(&tokens.len()) {
            *counts.entry(tokens.join(" ")).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("no answers of one to three tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    AnswerVocab::from_answers(ranked.into_iter().map(|(a, _)| a).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaConfig {
    pub embed_dim: usize,
    /// GRU state width.
    pub hidden: usize,
    /// Region descriptor width `D`.
    pub region_dim: usize,
    pub attention_dim: usize,
    /// Common space width `c`.
    pub common_dim: usize,
    pub head_dim: usize,
    pub seed: u64,
}

impl Default for VqaConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            hidden: 128,
            region_dim: 128,
            attention_dim: 128,
            common_dim: 256,
            head_dim: 256,
            seed: 0,
        }
    }
}

impl VqaConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("region_dim", self.region_dim),
            ("attention_dim", self.attention_dim),
            ("common_dim", self.common_dim),
            ("head_dim", self.head_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("vqa {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Probabilities over the answer vocabulary and attention over regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub probabilities: Vec<f64>,
    pub attention: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VqaModel {
    pub config: VqaConfig,
    pub vocab: Vocabulary,
    pub answers: AnswerVocab,
    pub params: ParamSet,
}

pub struct AttentionOutput {
    /// `1×K`.
    pub weights: Var,
    /// `1×D`.
    pub pooled: Var,
}

/// `score_k = w · gated_tanh([q ; v_k])`, softmaxed over regions; the pooled
/// vector is the weighted sum of region rows.
pub fn top_down_attention<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    q: Var,
    regions: Var,
) -> Result<AttentionOutput> {
    let k = tape.value(regions).rows();
    let qs = tape.repeat_rows(q, k)?;
    let joint = tape.concat_cols(&[qs, regions])?;
    let hidden = layers::gated_tanh(tape, params, ATT_HIDDEN, joint)?;
    let w = tape.param(params, ATT_SCORE)?;
    let scores = tape.matmul(hidden, w)?;
    let scores = tape.transpose(scores);
    let weights = tape.softmax_rows(scores);
    let pooled = tape.matmul(weights, regions)?;
    Ok(AttentionOutput { weights, pooled })
}

/// `logits = head_out(gt(gt(W_q q) ⊙ gt(W_v pooled)))`.
pub fn fuse_and_answer<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    q: Var,
    pooled: Var,
) -> Result<Var> {
    let pq = layers::gated_tanh(tape, params, PROJ_Q, q)?;
    let pv = layers::gated_tanh(tape, params, PROJ_V, pooled)?;
    let joint = tape.mul(pq, pv)?;
    let hidden = layers::gated_tanh(tape, params, HEAD_HIDDEN, joint)?;
    layers::linear(tape, params, HEAD_OUT, hidden)
}

pub struct Forward {
    pub logits: Var,
    pub weights: Var,
}

/// Full forward pass from question ids and a `K×D` region matrix.
pub fn forward<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    question: &[usize],
    regions: &Tensor,
) -> Result<Forward> {
    let q = encode_on_tape(tape, params, WORD_EMB, GRU, question)?;
    let v = tape.constant(regions.clone());
    let att = top_down_attention(tape, params, q, v)?;
    let logits = fuse_and_answer(tape, params, q, att.pooled)?;
    Ok(Forward {
        logits,
        weights: att.weights,
    })
}

pub fn example_loss(
    params: &ParamSet,
    question: &[usize],
    regions: &Tensor,
    answer: usize,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let f = forward(&mut tape, params, question, regions)?;
    let loss = tape.cross_entropy(f.logits, answer)?;
    if let Some(g) = grads {
        tape.accumulate_gradients(loss, g)?;
    }
    tape.value(loss).item()
}

fn distribution(params: &ParamSet, question: &[usize], regions: &Tensor) -> Result<AnswerDistribution> {
    let mut tape = Tape::new();
    let f = forward(&mut tape, params, question, regions)?;
    Ok(AnswerDistribution {
        probabilities: ops::softmax(tape.value(f.logits).data())?,
        attention: tape.value(f.weights).data().to_vec(),
    })
}

impl VqaModel {
    /// Word embeddings start from `embedding` when given, else seeded random.
    pub fn new(
        config: VqaConfig,
        vocab: Vocabulary,
        answers: AnswerVocab,
        embedding: Option<EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let table = match embedding {
            Some(t) => {
                if t.rows() != vocab.len() || t.dim() != c.embed_dim {
                    return Err(Error::dim(
                        "word embedding",
                        t.table.shape(),
                        &[vocab.len(), c.embed_dim],
                    ));
                }
                t
            }
            None => EmbeddingTable::random(vocab.len(), c.embed_dim, c.seed),
        };
        let mut params = ParamSet::new(c.seed);
        params.insert(WORD_EMB, table.table)?;
        layers::init_gru(&mut params, GRU, c.embed_dim, c.hidden)?;
        layers::init_gated_tanh(&mut params, ATT_HIDDEN, c.hidden + c.region_dim, c.attention_dim)?;
        params.init(ATT_SCORE, &[c.attention_dim, 1], Init::Xavier)?;
        layers::init_gated_tanh(&mut params, PROJ_Q, c.hidden, c.common_dim)?;
        layers::init_gated_tanh(&mut params, PROJ_V, c.region_dim, c.common_dim)?;
        layers::init_gated_tanh(&mut params, HEAD_HIDDEN, c.common_dim, c.head_dim)?;
        layers::init_linear(&mut params, HEAD_OUT, c.head_dim, answers.len())?;
        Ok(Self {
            config,
            vocab,
            answers,
            params,
        })
    }

    pub fn question_ids(&self, question: &str) -> Result<Vec<usize>> {
        let tokens = tokenize(question);
        if tokens.is_empty() {
            return Err(Error::Input("empty question".into()));
        }
        Ok(self.vocab.encode(&tokens))
    }

    fn check_regions(&self, regions: &RegionFeatures) -> Result<()> {
        if regions.dim() != self.config.region_dim {
            return Err(Error::dim(
                "region features",
                regions.values.shape(),
                &[regions.count(), self.config.region_dim],
            ));
        }
        Ok(())
    }

    pub fn distribution(&self, question: &str, regions: &RegionFeatures) -> Result<AnswerDistribution> {
        self.check_regions(regions)?;
        distribution(&self.params, &self.question_ids(question)?, &regions.values)
    }

    /// Argmax answer (lowest id on ties) and the full distribution.
    pub fn answer_visual(
        &self,
        question: &str,
        regions: &RegionFeatures,
    ) -> Result<(String, AnswerDistribution)> {
        let dist = self.distribution(question, regions)?;
        let id = argmax(&dist.probabilities);
        let answer = self.answers.answer(id).expect("head width equals vocabulary").to_string();
        Ok((answer, dist))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, &self.vocab, &self.config)?;
        self.answers.save(&dir.join(ANSWERS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, vocab, config): (_, _, VqaConfig) = load_checkpoint(dir)?;
        config.validate()?;
        let path = dir.join(ANSWERS_FILE);
        if !path.is_file() {
            return Err(Error::ModelNotLoaded(format!("missing {}", path.display())));
        }
        let answers = AnswerVocab::load(&path)?;
        Ok(Self {
            config,
            vocab,
            answers,
            params,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqaExample {
    pub id: String,
    pub question: String,
    pub regions: Tensor,
    pub answer: String,
}

type Prepared<'a> = (Vec<usize>, &'a Tensor, usize);

fn prepare<'a>(model: &VqaModel, set: &'a [VqaExample]) -> Result<(Vec<Prepared<'a>>, usize)> {
    let mut kept = Vec::new();
    let mut dropped = 0;
    for ex in set {
        if ex.regions.cols() != model.config.region_dim {
            return Err(Error::Data(format!(
                "record {}: region width {} differs from configured {}",
                ex.id,
                ex.regions.cols(),
                model.config.region_dim
            )));
        }
        match model.answers.id(&ex.answer) {
            Some(a) => kept.push((model.question_ids(&ex.question)?, &ex.regions, a)),
            None => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// Trains in place. Examples whose gold answer is outside the answer
/// vocabulary are dropped and counted in `History::dropped`. Validation
/// metric is argmax accuracy (on the kept training set when `val` is empty).
pub fn train_vqa(
    model: &mut VqaModel,
    train: &[VqaExample],
    val: &[VqaExample],
    cfg: &TrainConfig,
) -> Result<History> {
    let (train_p, dropped) = prepare(model, train)?;
    if train_p.is_empty() {
        return Err(Error::Data("no training example has an in-vocabulary answer".into()));
    }
    let val_p = if val.is_empty() { train_p.clone() } else { prepare(model, val)?.0 };
    let mut history = fit(
        &mut model.params,
        &train_p,
        cfg,
        |p, (q, r, a), g| example_loss(p, q, r, *a, Some(g)),
        |p| {
            if val_p.is_empty() {
                return Ok(0.0);
            }
            let mut hits = 0usize;
            for (q, r, a) in &val_p {
                hits += usize::from(argmax(&distribution(p, q, r)?.probabilities) == *a);
            }
            Ok(hits as f64 / val_p.len() as f64)
        },
    )?;
    history.dropped = dropped;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vqa::regions::RegionSource;

    fn tiny(seed: u64) -> VqaModel {
        let corpus = [tokenize("what color is the sky ?")];
        let vocab = Vocabulary::build(corpus.iter().map(Vec::as_slice), 1).unwrap();
        let answers = build_answer_vocab(["blue", "red", "green"], 10).unwrap();
        let cfg = VqaConfig {
            embed_dim: 4,
            hidden: 5,
            region_dim: 6,
            attention_dim: 4,
            common_dim: 4,
            head_dim: 4,
            seed,
        };
        VqaModel::new(cfg, vocab, answers, None).unwrap()
    }

    fn regions(rows: Vec<Vec<f64>>) -> RegionFeatures {
        RegionFeatures::new("a", Tensor::from_rows(&rows).unwrap(), None, RegionSource::File).unwrap()
    }

    #[test]
    fn answer_vocab_ordering_rules() {
        let v = build_answer_vocab(["red", "red", "Red", "blue"], 2).unwrap();
        assert_eq!(v.answers(), ["red", "blue"]);
        let v = build_answer_vocab(["one two three four", "cat"], 5).unwrap();
        assert_eq!(v.answers(), ["cat"]);
        let v = build_answer_vocab(["pear", "apple", "fig"], 3).unwrap();
        assert_eq!(v.answers(), ["apple", "fig", "pear"]);
        assert!(matches!(build_answer_vocab(["a b c d"], 1), Err(Error::Data(_))));
    }

    #[test]
    fn single_region_attention_is_one() {
        let m = tiny(1);
        let r = regions(vec![vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]]);
        let d = m.distribution("what color is the sky ?", &r).unwrap();
        assert_eq!(d.attention, vec![1.0]);
        let s: f64 = d.probabilities.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_regions_give_uniform_weights() {
        let m = tiny(2);
        let row = vec![0.3, -0.1, 0.2, 0.0, 0.5, 0.9];
        let r = regions(vec![row.clone(); 4]);
        let mut tape = Tape::new();
        let ids = m.question_ids("what color ?").unwrap();
        let q = encode_on_tape(&mut tape, &m.params, WORD_EMB, GRU, &ids).unwrap();
        let v = tape.constant(r.values.clone());
        let att = top_down_attention(&mut tape, &m.params, q, v).unwrap();
        for w in tape.value(att.weights).data() {
            assert!((w - 0.25).abs() < 1e-12);
        }
        for (p, x) in tape.value(att.pooled).data().iter().zip(&row) {
            assert!((p - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_question_projection_and_head_give_uniform() {
        let mut m = tiny(3);
        let names: Vec<String> = m
            .params
            .names()
            .filter(|n| n.starts_with(PROJ_Q) || n.starts_with(HEAD_OUT))
            .map(String::from)
            .collect();
        for n in names {
            let shape = m.params.get(&n).unwrap().shape().to_vec();
            m.params.update(&n, Tensor::zeros(&shape)).unwrap();
        }
        let r = regions(vec![vec![0.5; 6], vec![-0.5; 6]]);
        let d = m.distribution("what color is the sky ?", &r).unwrap();
        for p in &d.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let (answer, _) = m.answer_visual("what color is the sky ?", &r).unwrap();
        assert_eq!(answer, "blue");
    }

    #[test]
    fn wrong_region_width_and_empty_question_rejected() {
        let m = tiny(4);
        assert!(m.distribution("what ?", &regions(vec![vec![0.0; 5]])).is_err());
        assert!(matches!(
            m.answer_visual("", &regions(vec![vec![0.0; 6]])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn dropped_answers_are_counted() {
        let mut m = tiny(5);
        let r = Tensor::full(&[2, 6], 0.1);
        let ex = |id: &str, a: &str| VqaExample {
            id: id.into(),
            question: "what color is the sky ?".into(),
            regions: r.clone(),
            answer: a.into(),
        };
        let train = vec![ex("1", "blue"), ex("2", "purple"), ex("3", "mauve"), ex("4", "Red")];
        let cfg = TrainConfig::new(2, 2, crate::neural::OptimConfig::adam(0.01), 0);
        let h = train_vqa(&mut m, &train, &[], &cfg).unwrap();
        assert_eq!(h.dropped, 2);
        let only_bad = vec![ex("5", "purple")];
        assert!(matches!(train_vqa(&mut m, &only_bad, &[], &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(6);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = VqaModel::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.answers, m.answers);
    }
}
