//! Command implementations shared by the binary, the service and tests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use artqa_core::classifier::{self, ClassifierModel, LabeledQuestion, Route};
use artqa_core::datasets::templates::{generate_templated, TemplatePart};
use artqa_core::datasets::{
    self, build_balanced_classifier_set, import_artpedia, load_question_pool, split_artworks, ArtworkRecord,
    Dataset, DatasetSplit, PoolFormat, QaRecord, SplitName,
};
use artqa_core::metrics::{self, EvalMode, EvalReport};
use artqa_core::qa::{self, QaExample, QaModel};
use artqa_core::router::{simulate_composition, ArtworkAssets, Branch, CompositionResult, Pipeline, StubSpec};
use artqa_core::text::{load_word_vectors, normalize, tokenize, Vocabulary};
use artqa_core::train::History;
use artqa_core::vqa::{
    self, build_answer_vocab, extract_grid_features, load_regions, save_regions, Raster, RegionFeatures, VqaExample,
    VqaModel,
};
use artqa_core::Error;
use serde::Serialize;

use crate::config::{QuestionSource, Settings};
use crate::error::{CliError, CliResult};

pub const CLASSIFIER_DIR: &str = "classifier";
pub const QA_DIR: &str = "qa";
pub const VQA_DIR: &str = "vqa";
pub const HISTORY_FILE: &str = "history.json";
pub const FEATURES_EXT: &str = "aqrf";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SourceFormat {
    Artpedia,
    Vqa2,
    Okvqa,
    Canonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Module {
    Classifier,
    Qa,
    Vqa,
}

impl Module {
    pub fn dir_name(self) -> &'static str {
        match self {
            Module::Classifier => CLASSIFIER_DIR,
            Module::Qa => QA_DIR,
            Module::Vqa => VQA_DIR,
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// The most frequent normalized gold answer; the earliest wins ties.
pub fn primary_answer(record: &QaRecord) -> String {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order = Vec::new();
    for a in &record.answers {
        let n = normalize(a);
        if n.is_empty() {
            continue;
        }
        let c = counts.entry(n.clone()).or_insert(0);
        if *c == 0 {
            order.push(n);
        }
        *c += 1;
    }
    let mut best: Option<&String> = None;
    for a in &order {
        if best.is_none_or(|b| counts[a] > counts[b]) {
            best = Some(a);
        }
    }
    best.cloned().unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Data

pub struct Workspace {
    pub name: String,
    pub dataset: Dataset,
    pub split: DatasetSplit,
}

fn split_over_questions(questions: &[QaRecord], ratios: [f64; 3], seed: u64) -> CliResult<DatasetSplit> {
    let ids: Vec<&str> = questions.iter().map(|q| q.artwork_id.as_str()).collect();
    Ok(split_artworks(&ids, ratios, seed)?)
}

fn record_split(split: &DatasetSplit, q: &QaRecord) -> Option<SplitName> {
    match q.split.as_deref() {
        Some("train") => Some(SplitName::Train),
        Some("val") => Some(SplitName::Val),
        Some("test") => Some(SplitName::Test),
        _ => split.assign(&q.artwork_id),
    }
}

impl Workspace {
    pub fn load(s: &Settings) -> CliResult<Self> {
        s.require_data()?;
        let dataset = Dataset::read_canonical(&s.data_dir)?;
        let seed = s.seed()?;
        let split = if dataset.artworks.is_empty() {
            split_over_questions(&dataset.questions, s.config.split.ratios, seed)?
        } else {
            let ids: Vec<&str> = dataset.artworks.iter().map(|a| a.id.as_str()).collect();
            split_artworks(&ids, s.config.split.ratios, seed)?
        };
        let name = s
            .data_dir
            .file_name()
            .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self { name, dataset, split })
    }

    pub fn questions(&self, split: SplitName, route: Option<Route>) -> Vec<&QaRecord> {
        self.dataset
            .questions
            .iter()
            .filter(|q| record_split(&self.split, q) == Some(split) && route.is_none_or(|r| q.route == r))
            .collect()
    }

    pub fn artwork(&self, id: &str) -> CliResult<&ArtworkRecord> {
        self.dataset
            .artwork(id)
            .ok_or_else(|| Error::Data(format!("unknown artwork {id}")).into())
    }
}

pub fn features_path(dir: &Path, artwork_id: &str) -> PathBuf {
    dir.join(format!("{artwork_id}.{FEATURES_EXT}"))
}

/// Region features for one artwork, `None` when no file exists.
pub fn load_artwork_regions(dir: &Path, artwork_id: &str) -> CliResult<Option<RegionFeatures>> {
    let path = features_path(dir, artwork_id);
    if !path.is_file() {
        return Ok(None);
    }
    let records = load_regions(&path)?;
    let found = records.iter().position(|r| r.artwork_id == artwork_id).unwrap_or(0);
    Ok(records.into_iter().nth(found))
}

fn require_regions(dir: &Path, artwork_id: &str) -> CliResult<RegionFeatures> {
    load_artwork_regions(dir, artwork_id)?.ok_or_else(|| {
        Error::Data(format!(
            "artwork {artwork_id} has no region features at {} (run `artqa features`)",
            features_path(dir, artwork_id).display()
        ))
        .into()
    })
}

// ---------------------------------------------------------------------------
// import / sample / features

#[derive(Debug, Serialize)]
pub struct ImportSummary {
    pub artworks: usize,
    pub visual_sentences: usize,
    pub contextual_sentences: usize,
    pub visual_questions: usize,
    pub contextual_questions: usize,
    pub out: PathBuf,
}

impl ImportSummary {
    fn of(ds: &Dataset, out: &Path) -> Self {
        let totals = datasets::ArtpediaTotals::of(&ds.artworks);
        let visual = ds.questions.iter().filter(|q| q.route == Route::Visual).count();
        Self {
            artworks: totals.artworks,
            visual_sentences: totals.visual_sentences,
            contextual_sentences: totals.contextual_sentences,
            visual_questions: visual,
            contextual_questions: ds.questions.len() - visual,
            out: out.to_path_buf(),
        }
    }
}

pub fn import(format: SourceFormat, input: &Path, out: &Path) -> CliResult<ImportSummary> {
    if !input.exists() {
        return Err(CliError::Usage(format!("input {} does not exist", input.display())));
    }
    let ds = match format {
        SourceFormat::Artpedia => import_artpedia(input, out)?.0,
        SourceFormat::Vqa2 | SourceFormat::Okvqa => {
            let pool = if format == SourceFormat::Vqa2 { PoolFormat::Vqa2 } else { PoolFormat::OkVqa };
            let ds = Dataset {
                artworks: Vec::new(),
                questions: load_question_pool(input, pool)?,
            };
            ds.write_canonical(out)?;
            ds
        }
        SourceFormat::Canonical => {
            let ds = Dataset::read_canonical(input)?;
            ds.write_canonical(out)?;
            ds
        }
    };
    Ok(ImportSummary::of(&ds, out))
}

/// Region features for every artwork with an image; returns (written, skipped).
pub fn features(s: &Settings) -> CliResult<(usize, usize)> {
    s.require_data()?;
    let ds = Dataset::read_canonical(&s.data_dir)?;
    let (grid, dim) = (s.config.vqa.grid, s.config.vqa.region_dim);
    fs::create_dir_all(&s.features_dir).map_err(|e| Error::io(&s.features_dir, e))?;
    let (mut written, mut skipped) = (0, 0);
    for a in &ds.artworks {
        let Some(image) = &a.image else {
            skipped += 1;
            continue;
        };
        let raster = Raster::load(&s.data_dir.join(image))?;
        let r = extract_grid_features(&a.id, &raster, grid, dim)?;
        save_regions(&features_path(&s.features_dir, &a.id), &[r])?;
        written += 1;
    }
    Ok((written, skipped))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub module: &'static str,
    pub checkpoint: PathBuf,
    pub examples: usize,
    /// Records left out (no locatable span, or answer outside the vocabulary).
    pub excluded: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl TrainSummary {
    fn new(module: &'static str, checkpoint: PathBuf, examples: usize, excluded: usize, h: &History) -> Self {
        Self {
            module,
            checkpoint,
            examples,
            excluded,
            epochs: h.epochs.len(),
            best_epoch: h.best_epoch,
            best_metric: h.best_metric,
        }
    }
}

fn finish(dir: &Path, history: &History, split: Option<&DatasetSplit>) -> CliResult<()> {
    write_file(&dir.join(HISTORY_FILE), &history.to_json())?;
    if let Some(split) = split {
        write_file(&dir.join(datasets::SPLITS_FILE), &split.to_json())?;
    }
    Ok(())
}

/// Labeled questions for the classifier: `[train, val, test]`.
pub fn classifier_sets(s: &Settings) -> CliResult<[Vec<LabeledQuestion>; 3]> {
    let seed = s.seed()?;
    let c = &s.config.classifier;
    match c.source {
        QuestionSource::Templated => Ok([
            generate_templated(c.templated_train, seed, TemplatePart::Train),
            generate_templated(c.templated_heldout, seed.wrapping_add(1), TemplatePart::HeldOut),
            generate_templated(c.templated_heldout, seed.wrapping_add(2), TemplatePart::HeldOut),
        ]),
        QuestionSource::Dataset => {
            let ws = Workspace::load(s)?;
            let pick = |n| ws.questions(n, None).into_iter().map(QaRecord::labeled).collect();
            Ok([pick(SplitName::Train), pick(SplitName::Val), pick(SplitName::Test)])
        }
        QuestionSource::Pools => {
            let pool = |field: &str, p: &Option<PathBuf>| -> CliResult<Vec<QaRecord>> {
                let dir = p
                    .as_ref()
                    .ok_or_else(|| CliError::Usage(format!("{field}: required when classifier.source = \"pools\"")))?;
                s.require_dir(field, dir)?;
                Ok(Dataset::read_canonical(dir)?.questions)
            };
            let visual = pool("paths.vqa2", &s.config.paths.vqa2)?;
            let contextual = pool("paths.okvqa", &s.config.paths.okvqa)?;
            let all = build_balanced_classifier_set(&visual, &contextual, seed)?;
            let split = split_over_questions(&all, s.config.split.ratios, seed)?;
            let pick = |n| {
                all.iter()
                    .filter(|q| split.assign(&q.artwork_id) == Some(n))
                    .map(QaRecord::labeled)
                    .collect()
            };
            Ok([pick(SplitName::Train), pick(SplitName::Val), pick(SplitName::Test)])
        }
    }
}

fn vocab_of<'a>(texts: impl Iterator<Item = &'a str>) -> CliResult<Vocabulary> {
    let corpus: Vec<Vec<String>> = texts.map(tokenize).collect();
    Ok(Vocabulary::build(corpus.iter().map(Vec::as_slice), 1)?)
}

pub fn train_classifier(s: &Settings) -> CliResult<TrainSummary> {
    let seed = s.seed()?;
    let [train, val, _] = classifier_sets(s)?;
    if train.is_empty() {
        return Err(Error::Data("classifier training set is empty".into()).into());
    }
    let vocab = vocab_of(train.iter().map(|q| q.text.as_str()))?;
    let mut model = ClassifierModel::new(s.config.classifier_config(seed), vocab)?;
    let cfg = s.config.classifier.training.to_train_config(seed);
    let history = classifier::train_classifier(&mut model, &train, &val, &cfg)?;
    let dir = s.checkpoint_dir.join(CLASSIFIER_DIR);
    model.save(&dir)?;
    finish(&dir, &history, None)?;
    Ok(TrainSummary::new("classifier", dir, train.len(), 0, &history))
}

/// Gold span for a contextual record: the first locatable gold (primary
/// answer first) in the first sentence that contains it.
pub fn qa_example(record: &QaRecord, sentences: &[String]) -> Option<QaExample> {
    let primary = primary_answer(record);
    let golds = std::iter::once(primary.as_str()).chain(record.answers.iter().map(String::as_str));
    for gold in golds {
        for sentence in sentences {
            if let Some(ex) = QaExample::from_answer(&record.id, &record.question, sentence, gold) {
                return Some(ex);
            }
        }
    }
    None
}

fn qa_examples(ws: &Workspace, split: SplitName) -> CliResult<(Vec<QaExample>, usize)> {
    let mut out = Vec::new();
    let mut excluded = 0;
    for q in ws.questions(split, Some(Route::Contextual)) {
        let art = ws.artwork(&q.artwork_id)?;
        match qa_example(q, &art.contextual_sentences) {
            Some(ex) => out.push(ex),
            None => excluded += 1,
        }
    }
    Ok((out, excluded))
}

pub fn train_qa(s: &Settings) -> CliResult<TrainSummary> {
    let seed = s.seed()?;
    let ws = Workspace::load(s)?;
    let (train, excluded) = qa_examples(&ws, SplitName::Train)?;
    if train.is_empty() {
        return Err(Error::Data("no contextual training question has a locatable answer".into()).into());
    }
    let (val, _) = qa_examples(&ws, SplitName::Val)?;
    let train_artworks: Vec<&ArtworkRecord> = ws
        .split
        .train
        .iter()
        .filter_map(|id| ws.dataset.artwork(id))
        .collect();
    let texts = train
        .iter()
        .map(|e| e.question.as_str())
        .chain(train_artworks.iter().flat_map(|a| a.contextual_sentences.iter().map(String::as_str)));
    let vocab = vocab_of(texts)?;
    let mut model = QaModel::new(s.config.qa_config(seed), vocab)?;
    let cfg = s.config.qa.training.to_train_config(seed);
    let history = qa::train_qa(&mut model, &train, &val, &cfg)?;
    let dir = s.checkpoint_dir.join(QA_DIR);
    model.save(&dir)?;
    finish(&dir, &history, Some(&ws.split))?;
    Ok(TrainSummary::new("qa", dir, train.len(), excluded, &history))
}

fn vqa_examples(s: &Settings, ws: &Workspace, split: SplitName) -> CliResult<Vec<VqaExample>> {
    let mut cache: BTreeMap<String, RegionFeatures> = BTreeMap::new();
    let mut out = Vec::new();
    for q in ws.questions(split, Some(Route::Visual)) {
        if !cache.contains_key(&q.artwork_id) {
            cache.insert(q.artwork_id.clone(), require_regions(&s.features_dir, &q.artwork_id)?);
        }
        out.push(VqaExample {
            id: q.id.clone(),
            question: q.question.clone(),
            regions: cache[&q.artwork_id].values.clone(),
            answer: primary_answer(q),
        });
    }
    Ok(out)
}

pub fn train_vqa(s: &Settings) -> CliResult<TrainSummary> {
    let seed = s.seed()?;
    let ws = Workspace::load(s)?;
    let train = vqa_examples(s, &ws, SplitName::Train)?;
    if train.is_empty() {
        return Err(Error::Data("no visual training questions".into()).into());
    }
    let val = vqa_examples(s, &ws, SplitName::Val)?;
    let vocab = vocab_of(train.iter().map(|e| e.question.as_str()))?;
    let answers = build_answer_vocab(train.iter().map(|e| e.answer.as_str()), s.config.vqa.top_answers)?;
    let cfg = s.config.vqa_config(seed);
    let embedding = match &s.config.paths.word_vectors {
        Some(p) => Some(load_word_vectors(p, &vocab, cfg.embed_dim, seed)?),
        None => None,
    };
    let mut model = VqaModel::new(cfg, vocab, answers, embedding)?;
    let tcfg = s.config.vqa.training.to_train_config(seed);
    let history = vqa::train_vqa(&mut model, &train, &val, &tcfg)?;
    let dir = s.checkpoint_dir.join(VQA_DIR);
    model.save(&dir)?;
    finish(&dir, &history, Some(&ws.split))?;
    Ok(TrainSummary::new("vqa", dir, train.len(), history.dropped, &history))
}

pub fn train(s: &Settings, module: Module) -> CliResult<TrainSummary> {
    match module {
        Module::Classifier => train_classifier(s),
        Module::Qa => train_qa(s),
        Module::Vqa => train_vqa(s),
    }
}

// ---------------------------------------------------------------------------
// Models and the pipeline

fn model_dir(s: &Settings, module: Module) -> PathBuf {
    s.checkpoint_dir.join(module.dir_name())
}

pub fn load_classifier(s: &Settings) -> CliResult<ClassifierModel> {
    Ok(ClassifierModel::load(&model_dir(s, Module::Classifier))?)
}

pub fn load_qa(s: &Settings) -> CliResult<QaModel> {
    Ok(QaModel::load(&model_dir(s, Module::Qa))?)
}

pub fn load_vqa(s: &Settings) -> CliResult<VqaModel> {
    Ok(VqaModel::load(&model_dir(s, Module::Vqa))?)
}

pub fn load_pipeline(s: &Settings) -> CliResult<Pipeline> {
    Ok(Pipeline::new(
        Arc::new(load_classifier(s)?),
        Arc::new(load_vqa(s)?),
        Arc::new(load_qa(s)?),
    ))
}

pub fn ask(s: &Settings, artwork_id: &str, question: &str) -> CliResult<artqa_core::router::RoutedAnswer> {
    if question.trim().is_empty() {
        return Err(CliError::Usage("question must not be empty".into()));
    }
    s.require_data()?;
    let ds = Dataset::read_canonical(&s.data_dir)?;
    let art = ds
        .artwork(artwork_id)
        .ok_or_else(|| Error::Data(format!("unknown artwork {artwork_id}")))?;
    let pipeline = load_pipeline(s)?;
    let regions = load_artwork_regions(&s.features_dir, artwork_id)?;
    Ok(pipeline.answer(
        question,
        ArtworkAssets {
            id: &art.id,
            contextual_sentences: &art.contextual_sentences,
            regions: regions.as_ref(),
        },
    )?)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub table: String,
    /// Questions a branch could not answer for lack of assets (scored wrong).
    pub unanswerable: usize,
    pub files: Vec<PathBuf>,
}

fn save_reports(s: &Settings, name: &str, reports: Vec<EvalReport>, table: String, unanswerable: usize) -> CliResult<EvalOutput> {
    let dir = s.report_dir();
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
    let files = vec![dir.join(format!("{name}.json")), dir.join(format!("{name}.txt"))];
    write_file(&files[0], &json)?;
    write_file(&files[1], &table)?;
    Ok(EvalOutput {
        reports,
        table,
        unanswerable,
        files,
    })
}

fn route_records(set: &[LabeledQuestion], prefix: &str) -> Vec<QaRecord> {
    set.iter()
        .enumerate()
        .map(|(i, q)| QaRecord {
            id: format!("{prefix}-{i}"),
            artwork_id: String::new(),
            question: q.text.clone(),
            answers: vec![q.route.as_str().to_string()],
            route: q.route,
            split: Some("test".into()),
        })
        .collect()
}

pub fn eval_classifier(s: &Settings) -> CliResult<EvalOutput> {
    let seed = s.seed()?;
    let model = load_classifier(s)?;
    let fp = s.fingerprint();
    let mut reports = Vec::new();
    let [_, _, test] = classifier_sets(s)?;
    let source = match s.config.classifier.source {
        QuestionSource::Templated => "templated-heldout",
        QuestionSource::Dataset => "dataset-test",
        QuestionSource::Pools => "pools-test",
    };
    let mut sets = vec![(source.to_string(), route_records(&test, source))];
    if s.config.classifier.source != QuestionSource::Dataset && s.data_dir.join(datasets::QUESTIONS_FILE).is_file() {
        let ws = Workspace::load(s)?;
        let recs: Vec<QaRecord> = ws.questions(SplitName::Test, None).into_iter().cloned().collect();
        if !recs.is_empty() {
            sets.push((ws.name.clone(), recs));
        }
    }
    for (name, recs) in sets {
        if recs.is_empty() {
            return Err(Error::Data(format!("no {name} questions to evaluate")).into());
        }
        let predicted = recs
            .iter()
            .map(|r| Ok(model.classify(&r.question)?.label))
            .collect::<CliResult<Vec<_>>>()?;
        reports.push(metrics::evaluate_routes(&name, &predicted, &recs, &fp, seed)?);
    }
    let table = metrics::render_accuracy_table(&reports);
    save_reports(s, "classifier", reports, table, 0)
}

/// Sentences the QA module reads in stand-alone evaluation. Whether the
/// visual sentences belong in its context is left open, so both are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SentencePool {
    Contextual,
    All,
}

impl SentencePool {
    fn module(self) -> &'static str {
        match self {
            SentencePool::Contextual => "qa",
            SentencePool::All => "qa-all",
        }
    }

    fn sentences(self, art: &ArtworkRecord) -> Vec<String> {
        match self {
            SentencePool::Contextual => art.contextual_sentences.clone(),
            SentencePool::All => art.contextual_sentences.iter().chain(&art.visual_sentences).cloned().collect(),
        }
    }
}

/// A branch failing for lack of assets scores as an empty answer.
fn or_unanswerable(r: artqa_core::Result<String>, misses: &mut usize) -> CliResult<String> {
    match r {
        Ok(a) => Ok(a),
        Err(Error::Data(_)) => {
            *misses += 1;
            Ok(String::new())
        }
        Err(e) => Err(e.into()),
    }
}

struct TestSet<'a> {
    ws: &'a Workspace,
    records: Vec<QaRecord>,
}

impl<'a> TestSet<'a> {
    fn new(ws: &'a Workspace) -> CliResult<Self> {
        let records: Vec<QaRecord> = ws.questions(SplitName::Test, None).into_iter().cloned().collect();
        if records.is_empty() {
            return Err(Error::Data(format!("{}: test split has no questions", ws.name)).into());
        }
        Ok(Self { ws, records })
    }
}

fn qa_predictions(t: &TestSet, model: &QaModel, pool: SentencePool, misses: &mut usize) -> CliResult<Vec<String>> {
    t.records
        .iter()
        .map(|r| {
            let art = t.ws.artwork(&r.artwork_id)?;
            let sentences = pool.sentences(art);
            or_unanswerable(model.select_description(&sentences, &r.question).map(|(_, sp)| sp.text), misses)
        })
        .collect()
}

fn vqa_predictions(s: &Settings, t: &TestSet, model: &VqaModel, misses: &mut usize) -> CliResult<Vec<String>> {
    let mut out = Vec::with_capacity(t.records.len());
    for r in &t.records {
        let answer = match load_artwork_regions(&s.features_dir, &r.artwork_id)? {
            Some(regions) => model.answer_visual(&r.question, &regions).map(|(a, _)| a)?,
            None => or_unanswerable(
                Err(Error::Data(format!("artwork {} has no region features", r.artwork_id))),
                misses,
            )?,
        };
        out.push(answer);
    }
    Ok(out)
}

fn pipeline_predictions(s: &Settings, t: &TestSet, p: &Pipeline, misses: &mut usize) -> CliResult<Vec<String>> {
    let mut out = Vec::with_capacity(t.records.len());
    for r in &t.records {
        let art = t.ws.artwork(&r.artwork_id)?;
        let regions = load_artwork_regions(&s.features_dir, &r.artwork_id)?;
        let assets = ArtworkAssets {
            id: &art.id,
            contextual_sentences: &art.contextual_sentences,
            regions: regions.as_ref(),
        };
        out.push(or_unanswerable(p.answer(&r.question, assets).map(|a| a.answer), misses)?);
    }
    Ok(out)
}

/// One QA report per sentence pool, contextual-only first.
fn qa_reports(
    ws: &Workspace,
    t: &TestSet,
    model: &QaModel,
    fp: &str,
    seed: u64,
    misses: &mut usize,
) -> CliResult<Vec<EvalReport>> {
    [SentencePool::Contextual, SentencePool::All]
        .into_iter()
        .map(|pool| {
            let preds = qa_predictions(t, model, pool, misses)?;
            Ok(metrics::evaluate_module(pool.module(), &ws.name, &preds, &t.records, EvalMode::Freeform, fp, seed)?)
        })
        .collect()
}

pub fn eval_branch(s: &Settings, module: Module) -> CliResult<EvalOutput> {
    let seed = s.seed()?;
    let ws = Workspace::load(s)?;
    let t = TestSet::new(&ws)?;
    let fp = s.fingerprint();
    let mut misses = 0;
    let reports = match module {
        Module::Qa => qa_reports(&ws, &t, &load_qa(s)?, &fp, seed, &mut misses)?,
        Module::Vqa => {
            let preds = vqa_predictions(s, &t, &load_vqa(s)?, &mut misses)?;
            vec![metrics::evaluate_module("vqa", &ws.name, &preds, &t.records, EvalMode::Classification, &fp, seed)?]
        }
        Module::Classifier => return eval_classifier(s),
    };
    let table = metrics::render_breakdown_table(&reports);
    save_reports(s, module.dir_name(), reports, table, misses)
}

/// Both branches on every test question, then the routed pipeline.
pub fn eval_pipeline(s: &Settings) -> CliResult<EvalOutput> {
    let seed = s.seed()?;
    let ws = Workspace::load(s)?;
    let t = TestSet::new(&ws)?;
    let fp = s.fingerprint();
    let (classifier, qa_model, vqa_model) = (load_classifier(s)?, load_qa(s)?, load_vqa(s)?);
    let mut misses = 0;
    let mut reports = qa_reports(&ws, &t, &qa_model, &fp, seed, &mut misses)?;
    let vqa_preds = vqa_predictions(s, &t, &vqa_model, &mut misses)?;
    let pipeline = Pipeline::new(Arc::new(classifier), Arc::new(vqa_model), Arc::new(qa_model));
    let full_preds = pipeline_predictions(s, &t, &pipeline, &mut misses)?;
    reports.push(metrics::evaluate_module("vqa", &ws.name, &vqa_preds, &t.records, EvalMode::Classification, &fp, seed)?);
    reports.push(metrics::evaluate_module("pipeline", &ws.name, &full_preds, &t.records, EvalMode::Freeform, &fp, seed)?);
    for r in &reports {
        r.check_invariants()?;
    }
    let table = metrics::render_breakdown_table(&reports);
    save_reports(s, "pipeline", reports, table, misses)
}

/// Reference branch accuracies with a perfect classifier.
pub fn reference_stub(seed: u64) -> StubSpec {
    StubSpec {
        confusion: [[1.0, 0.0], [0.0, 1.0]],
        accuracy: [[0.524, 0.000], [0.176, 0.684]],
        seed,
    }
}

#[derive(Debug, Serialize)]
pub struct StubOutput {
    pub spec: StubSpec,
    pub result: CompositionResult,
    pub single_branch: BTreeMap<&'static str, f64>,
    pub fingerprint: String,
    pub table: String,
    pub files: Vec<PathBuf>,
}

pub fn eval_stub(s: &Settings, spec_path: Option<&Path>, per_type: usize) -> CliResult<StubOutput> {
    let seed = s.seed()?;
    let spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("stub {}: {e}", p.display())))?;
            let spec: StubSpec =
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("stub {}: {e}", p.display())))?;
            spec
        }
        None => reference_stub(seed),
    };
    spec.validate().map_err(|e| CliError::Usage(format!("stub: {e}")))?;
    let result = simulate_composition(&spec, per_type)?;
    let single_branch = BTreeMap::from([
        ("qa", spec.single_branch_accuracy(Branch::Qa, 0.5)),
        ("vqa", spec.single_branch_accuracy(Branch::Vqa, 0.5)),
    ]);
    let mut table = format!("{:<12} {:>10} {:>10} {:>10} {:>8}\n", "Model", "analytic", "measured", "sigma", "N");
    table += &format!(
        "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>8}\n",
        "pipeline", result.analytic, result.measured, result.sigma, result.questions
    );
    for (name, acc) in &single_branch {
        table += &format!("{name:<12} {acc:>10.4} {:>10} {:>10} {:>8}\n", "-", "-", "-");
    }
    let mut out = StubOutput {
        spec,
        result,
        single_branch,
        fingerprint: s.fingerprint(),
        table,
        files: Vec::new(),
    };
    let dir = s.report_dir();
    let files = vec![dir.join("pipeline-stub.json"), dir.join("pipeline-stub.txt")];
    write_file(&files[0], &(serde_json::to_string_pretty(&out).expect("serializes") + "\n"))?;
    write_file(&files[1], &out.table)?;
    out.files = files;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(answers: &[&str]) -> QaRecord {
        QaRecord {
            id: "q".into(),
            artwork_id: "a".into(),
            question: "who ?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            route: Route::Contextual,
            split: None,
        }
    }

    #[test]
    fn primary_answer_by_frequency() {
        assert_eq!(primary_answer(&rec(&["Red", "blue", "blue", "red", "blue"])), "blue");
        assert_eq!(primary_answer(&rec(&["x", "y"])), "x");
        assert_eq!(primary_answer(&rec(&["", "Two Dogs"])), "two dogs");
    }

    #[test]
    fn qa_example_falls_back_to_other_golds() {
        let r = rec(&["Aldo Voss", "Voss"]);
        let sentences = vec!["Nothing here.".to_string(), "Painted by Voss in 1650.".to_string()];
        let ex = qa_example(&r, &sentences).unwrap();
        assert_eq!((ex.start, ex.end), (2, 2));
        assert!(qa_example(&rec(&["nobody"]), &sentences).is_none());
    }

    #[test]
    fn reference_stub_arithmetic() {
        let s = reference_stub(1);
        assert!((s.analytic_accuracy(0.5) - 0.604).abs() < 1e-12);
        assert!((s.single_branch_accuracy(Branch::Qa, 0.5) - 0.43).abs() < 1e-12);
    }
}
