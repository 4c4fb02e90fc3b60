//! Extractive question answering over a description: the packed pair
//! `[START] question [SEP] description [SEP]` goes through the shared
//! encoder and a per-position start/end head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::neural::{layers, Gradients, ParamSet, Tape, Var};
use crate::text::{tokenize, tokenize_with_offsets, TokenSpan, Vocabulary, SEQ_SEP, SEQ_START};
use crate::train::{fit, History, TrainConfig};
use crate::transformer::{self, EncoderConfig};

const HEAD: &str = "span";
const QUESTION_SEGMENT: usize = 0;
const DESCRIPTION_SEGMENT: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaConfig {
    pub encoder: EncoderConfig,
    /// Packed length including the three special tokens.
    pub max_len: usize,
    pub max_answer: usize,
    pub seed: u64,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            max_len: 160,
            max_answer: 30,
            seed: 0,
        }
    }
}

impl QaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 5 {
            return Err(Error::Config("qa max_len must be at least 5".into()));
        }
        if self.max_answer == 0 {
            return Err(Error::Config("qa max_answer must be positive".into()));
        }
        self.encoder.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packed {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// Index of the first description token in `ids`.
    pub desc_offset: usize,
    /// Description tokens kept after truncation.
    pub desc_len: usize,
}

/// Packs a question/description pair, truncating the description only.
pub fn pack_qa_input(question: &[usize], description: &[usize], max_len: usize) -> Result<Packed> {
    if question.is_empty() || description.is_empty() {
        return Err(Error::Input("question and description must be nonempty".into()));
    }
    if question.len() + 3 >= max_len {
        return Err(Error::Input(format!(
            "question of {} tokens leaves no room for a description within {max_len}",
            question.len()
        )));
    }
    let desc_len = description.len().min(max_len - question.len() - 3);
    let desc_offset = question.len() + 2;
    let mut ids = Vec::with_capacity(desc_offset + desc_len + 1);
    ids.push(SEQ_START);
    ids.extend_from_slice(question);
    ids.push(SEQ_SEP);
    ids.extend_from_slice(&description[..desc_len]);
    ids.push(SEQ_SEP);
    let mut segments = vec![QUESTION_SEGMENT; desc_offset];
    segments.resize(ids.len(), DESCRIPTION_SEGMENT);
    Ok(Packed {
        ids,
        segments,
        desc_offset,
        desc_len,
    })
}

/// Answer span over description token indices (both ends inclusive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
    /// `start_logit + end_logit`.
    pub score: f64,
    /// Byte offsets of the span in the description text.
    pub char_start: usize,
    pub char_end: usize,
}

/// Best `(start, end)` with `start ≤ end < start + max_answer`. Scans starts
/// and then ends in increasing order and only replaces on a strictly higher
/// score, so ties go to the earlier start and then the shorter span.
pub fn best_span(start_logits: &[f64], end_logits: &[f64], max_answer: usize) -> (usize, usize, f64) {
    let n = start_logits.len().min(end_logits.len());
    let mut best = (0, 0, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i..n.min(i + max_answer) {
            let s = start_logits[i] + end_logits[j];
            if s > best.2 {
                best = (i, j, s);
            }
        }
    }
    best
}

/// First occurrence of `answer` as a contiguous token run in `context`.
pub fn locate_span<S: AsRef<str>, T: AsRef<str>>(context: &[S], answer: &[T]) -> Option<(usize, usize)> {
    if answer.is_empty() || answer.len() > context.len() {
        return None;
    }
    (0..=context.len() - answer.len())
        .find(|&i| {
            answer
                .iter()
                .zip(&context[i..])
                .all(|(a, c)| a.as_ref() == c.as_ref())
        })
        .map(|i| (i, i + answer.len() - 1))
}

/// One training triple with its gold span in description tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub description: String,
    pub start: usize,
    pub end: usize,
}

impl QaExample {
    /// Locates `answer` in `description`; `None` when it does not occur.
    pub fn from_answer(
        id: impl Into<String>,
        question: impl Into<String>,
        description: impl Into<String>,
        answer: &str,
    ) -> Option<Self> {
        let description = description.into();
        let (start, end) = locate_span(&tokenize(&description), &tokenize(answer))?;
        Some(Self {
            id: id.into(),
            question: question.into(),
            description,
            start,
            end,
        })
    }
}

#[derive(Clone, Debug)]
pub struct QaModel {
    pub config: QaConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet,
}

struct Prepared {
    id: String,
    packed: Packed,
    start: usize,
    end: usize,
}

impl QaModel {
    pub fn new(config: QaConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(config.seed);
        transformer::init_encoder(&mut params, &config.encoder, vocab.len(), 2, config.max_len)?;
        layers::init_linear(&mut params, HEAD, config.encoder.width, 2)?;
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn pack(&self, question: &str, description_tokens: &[TokenSpan]) -> Result<Packed> {
        let q = self.vocab.encode(&tokenize(question));
        let d: Vec<usize> = description_tokens
            .iter()
            .map(|t| self.vocab.id(&t.text))
            .collect();
        pack_qa_input(&q, &d, self.config.max_len)
    }

    /// Start and end logits over the kept description tokens.
    pub fn span_logits(&self, packed: &Packed) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (s, e) = span_logits_on_tape(&mut tape, &self.params, &self.config, packed)?;
        Ok((
            tape.value(s).data().to_vec(),
            tape.value(e).data().to_vec(),
        ))
    }

    pub fn predict_span(&self, question: &str, description: &str) -> Result<Span> {
        let tokens = tokenize_with_offsets(description);
        let packed = self.pack(question, &tokens)?;
        let (s, e) = self.span_logits(&packed)?;
        let (start, end, score) = best_span(&s, &e, self.config.max_answer);
        let (char_start, char_end) = (tokens[start].start, tokens[end].end);
        Ok(Span {
            start,
            end,
            text: description[char_start..char_end].to_string(),
            score,
            char_start,
            char_end,
        })
    }

    /// Runs [`QaModel::predict_span`] on every sentence and keeps the highest
    /// score; the earliest sentence wins ties.
    pub fn select_description<S: AsRef<str>>(
        &self,
        sentences: &[S],
        question: &str,
    ) -> Result<(usize, Span)> {
        let mut best: Option<(usize, Span)> = None;
        for (i, s) in sentences.iter().enumerate() {
            if tokenize(s.as_ref()).is_empty() {
                continue;
            }
            let span = self.predict_span(question, s.as_ref())?;
            if best.as_ref().is_none_or(|(_, b)| span.score > b.score) {
                best = Some((i, span));
            }
        }
        best.ok_or_else(|| Error::Data("no contextual sentence to answer from".into()))
    }

    fn prepare(&self, ex: &QaExample) -> Result<Prepared> {
        let tokens = tokenize_with_offsets(&ex.description);
        let packed = self.pack(&ex.question, &tokens)?;
        if ex.start > ex.end || ex.end >= packed.desc_len {
            return Err(Error::Data(format!(
                "record {}: gold span {}..={} outside description of {} kept tokens",
                ex.id, ex.start, ex.end, packed.desc_len
            )));
        }
        Ok(Prepared {
            id: ex.id.clone(),
            packed,
            start: ex.start,
            end: ex.end,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, &self.vocab, &self.config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, vocab, config): (_, _, QaConfig) = load_checkpoint(dir)?;
        config.validate()?;
        Ok(Self {
            config,
            vocab,
            params,
        })
    }
}

/// `1×n` start and end logit rows over the description part of `packed`.
pub fn span_logits_on_tape<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    cfg: &QaConfig,
    packed: &Packed,
) -> Result<(Var, Var)> {
    let out = transformer::encode(tape, params, &cfg.encoder, &packed.ids, &packed.segments)?;
    let logits = layers::linear(tape, params, HEAD, out.hidden)?;
    let desc = tape.slice_rows(logits, packed.desc_offset, packed.desc_len)?;
    let by_kind = tape.transpose(desc);
    let start = tape.slice_rows(by_kind, 0, 1)?;
    let end = tape.slice_rows(by_kind, 1, 1)?;
    Ok((start, end))
}

/// Summed start and end cross-entropy of one packed example.
pub fn example_loss(
    params: &ParamSet,
    cfg: &QaConfig,
    packed: &Packed,
    start: usize,
    end: usize,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (s, e) = span_logits_on_tape(&mut tape, params, cfg, packed)?;
    let ls = tape.cross_entropy(s, start)?;
    let le = tape.cross_entropy(e, end)?;
    let loss = tape.add(ls, le)?;
    if let Some(g) = grads {
        tape.accumulate_gradients(loss, g)?;
    }
    tape.value(loss).item()
}

/// Trains in place; the validation metric is the fraction of exactly
/// reproduced gold spans (on `train` when `val` is empty).
pub fn train_qa(
    model: &mut QaModel,
    train: &[QaExample],
    val: &[QaExample],
    cfg: &TrainConfig,
) -> Result<History> {
    let prep = |set: &[QaExample]| set.iter().map(|ex| model.prepare(ex)).collect::<Result<Vec<_>>>();
    let train_p = prep(train)?;
    let val_p = if val.is_empty() { prep(train)? } else { prep(val)? };
    let mcfg = model.config.clone();
    fit(
        &mut model.params,
        &train_p,
        cfg,
        |p, ex, g| example_loss(p, &mcfg, &ex.packed, ex.start, ex.end, Some(g)),
        |p| {
            let mut hits = 0usize;
            for ex in &val_p {
                let mut tape = Tape::new();
                let (s, e) = span_logits_on_tape(&mut tape, p, &mcfg, &ex.packed)
                    .map_err(|err| Error::Data(format!("record {}: {err}", ex.id)))?;
                let (i, j, _) = best_span(tape.value(s).data(), tape.value(e).data(), mcfg.max_answer);
                hits += usize::from(i == ex.start && j == ex.end);
            }
            Ok(hits as f64 / val_p.len() as f64)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn model() -> QaModel {
        let corpus = [tokenize("who painted the portrait ? leonardo painted it in florence .")];
        let vocab = Vocabulary::build(corpus.iter().map(Vec::as_slice), 1).unwrap();
        let cfg = QaConfig {
            encoder: EncoderConfig {
                width: 8,
                depth: 1,
                heads: 2,
                ffn: 16,
            },
            max_len: 40,
            max_answer: 30,
            seed: 9,
        };
        QaModel::new(cfg, vocab).unwrap()
    }

    #[test]
    fn packing_layout() {
        let p = pack_qa_input(&[9; 5], &[8; 7], 160).unwrap();
        assert_eq!(p.ids.len(), 15);
        assert_eq!(p.segments, [vec![0; 7], vec![1; 8]].concat());
        assert_eq!(p.ids[0], SEQ_START);
        assert_eq!(p.ids[6], SEQ_SEP);
        assert_eq!(p.ids[14], SEQ_SEP);
    }

    #[test]
    fn description_truncated_to_fit() {
        let p = pack_qa_input(&[9; 5], &[8; 20], 16).unwrap();
        assert_eq!(p.desc_len, 8);
        assert_eq!(p.ids.len(), 16);
    }

    #[test]
    fn overlong_question_rejected() {
        assert!(matches!(pack_qa_input(&[9; 13], &[8; 2], 16), Err(Error::Input(_))));
        assert!(pack_qa_input(&[9; 12], &[8; 2], 16).is_ok());
    }

    #[test]
    fn single_token_description_is_the_span() {
        let m = model();
        let s = m.predict_span("who painted the portrait ?", "Leonardo").unwrap();
        assert_eq!((s.start, s.end, s.text.as_str()), (0, 0, "Leonardo"));
    }

    #[test]
    fn zero_logits_give_first_token() {
        let mut m = model();
        for n in ["span.w", "span.b"] {
            let shape = m.params.get(n).unwrap().shape().to_vec();
            m.params.update(n, Tensor::zeros(&shape)).unwrap();
        }
        let s = m.predict_span("who painted it ?", "Leonardo painted it in Florence.").unwrap();
        assert_eq!((s.start, s.end), (0, 0));
        assert_eq!((s.char_start, s.char_end), (0, 8));
    }

    #[test]
    fn best_span_respects_length_and_ties() {
        assert_eq!(best_span(&[0.0, 5.0, 0.0], &[0.0, 0.0, 5.0], 30), (1, 2, 10.0));
        assert_eq!(best_span(&[5.0, 0.0, 0.0], &[0.0, 0.0, 5.0], 2), (0, 0, 5.0));
        assert_eq!(best_span(&[1.0, 1.0], &[1.0, 1.0], 30), (0, 0, 2.0));
    }

    #[test]
    fn locate_first_exact_match() {
        let ctx = tokenize("the dog and the dog");
        assert_eq!(locate_span(&ctx, &tokenize("the dog")), Some((0, 1)));
        assert_eq!(locate_span(&ctx, &tokenize("a cat")), None);
    }

    #[test]
    fn select_description_first_sentence_wins_ties() {
        let m = model();
        let q = "who painted the portrait ?";
        let sents = ["Leonardo painted it.", "Leonardo painted it."];
        let (i, s) = m.select_description(&sents, q).unwrap();
        assert_eq!(i, 0);
        assert_eq!(s, m.predict_span(q, sents[0]).unwrap());
        let none: [&str; 0] = [];
        assert!(matches!(m.select_description(&none, q), Err(Error::Data(_))));
    }

    #[test]
    fn out_of_range_gold_is_a_data_error() {
        let mut m = model();
        let ex = QaExample {
            id: "q7".into(),
            question: "who ?".into(),
            description: "leonardo".into(),
            start: 0,
            end: 3,
        };
        let cfg = TrainConfig::new(1, 1, crate::neural::OptimConfig::adam(0.01), 0);
        let err = train_qa(&mut m, &[ex], &[], &cfg).unwrap_err();
        assert!(err.to_string().contains("q7"));
    }
}
