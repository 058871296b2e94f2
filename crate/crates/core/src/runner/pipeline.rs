use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{ensure_dir, ScoreCache};
use super::config::{EmbeddingSource, EvalSplit, ExperimentConfig, LabelWords};
use super::report::{render_grid_report, GridCell, GridResults, ENSEMBLE_ID};
use crate::corpus::{
    label_distribution, load_dataset, stratified_split, write_json, write_jsonl, ConversationRecord, Dataset,
    LabelCatalog, SplitAssignment,
};
use crate::embeddings::{fetch_embeddings, load_embeddings, EmbeddingMatrix};
use crate::ensembling::{combine_distributions, expand_grid, predict_label, GridSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::evaluation::{EvaluationReport, Prediction};
use crate::prompting::{default_templates, detailed_template, load_templates, render_prompt, FilledPrompt, Template};
use crate::sampling::{allocate_counts, sample_active, sample_random, DistanceMetric, Strategy};
use crate::scoring::{
    chat_classify, toy_fit, BackendConfig, BackendKind, ChatClient, LogitServerBackend, MockBackend, ParsedLabel,
    ScoringBackend, ToyModel, TrainingPair,
};
use crate::verbalizing::{aggregate_scores, default_verbalizers, load_verbalizers, LabelDistribution, Verbalizer};

/// Id under which the detailed zero-shot template is registered.
pub const DETAILED_TEMPLATE_ID: &str = "5";

static LEAKAGE_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of times the training-data leakage guard has fired in this
/// process.
pub fn leakage_violations() -> u64 {
    LEAKAGE_VIOLATIONS.load(Ordering::SeqCst)
}

/// First id that is outside train/dev.
pub fn find_leak<'a>(split: &SplitAssignment, ids: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    ids.into_iter()
        .find(|id| !split.train_dev.contains(*id) || split.validation.contains(*id) || split.test.contains(*id))
}

/// Fails, and counts a violation, if any id is outside train/dev.
pub fn check_leakage<'a>(split: &SplitAssignment, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    match find_leak(split, ids) {
        Some(id) => {
            LEAKAGE_VIOLATIONS.fetch_add(1, Ordering::SeqCst);
            Err(Error::Leakage(id.to_string()))
        }
        None => Ok(()),
    }
}

/// A config with its dataset, registries and embeddings resolved.
#[derive(Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    dataset: Dataset,
    templates: BTreeMap<String, Template>,
    verbalizers: BTreeMap<String, Verbalizer>,
    embeddings: Option<EmbeddingMatrix>,
    split: Option<SplitAssignment>,
}

impl Experiment {
    /// Loads the catalog, dataset and any embeddings file named by `config`.
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let catalog = match &config.catalog {
            Some(path) => LabelCatalog::load(path)?,
            None => LabelCatalog::retail_default(),
        };
        let dataset = load_dataset(&config.dataset, &catalog)?;
        let embeddings = match &config.embeddings {
            Some(EmbeddingSource::File(path)) => Some(load_embeddings(path)?),
            _ => None,
        };
        Self::new(config, dataset, embeddings)
    }

    /// Builds an experiment around an in-memory dataset. `config.dataset`
    /// is not read.
    pub fn new(mut config: ExperimentConfig, dataset: Dataset, embeddings: Option<EmbeddingMatrix>) -> Result<Self> {
        config.validate_with(embeddings.is_some())?;
        config.backend = config.backend.clone().resolve()?;
        let catalog = dataset.catalog();

        let mut templates: BTreeMap<String, Template> = default_templates()
            .into_iter()
            .map(|t| (t.id().to_string(), t))
            .collect();
        templates.insert(
            DETAILED_TEMPLATE_ID.into(),
            detailed_template(DETAILED_TEMPLATE_ID, catalog)?,
        );
        if let Some(path) = &config.template_file {
            templates.extend(load_templates(path)?.into_iter().map(|t| (t.id().to_string(), t)));
        }
        let mut verbalizers: BTreeMap<String, Verbalizer> = BTreeMap::new();
        let builtin = default_verbalizers();
        if builtin.first().is_some_and(|v| v.n_labels() == catalog.len()) {
            verbalizers.extend(builtin.into_iter().map(|v| (v.id().to_string(), v)));
        }
        if let Some(path) = &config.verbalizer_file {
            verbalizers.extend(
                load_verbalizers(path, catalog.len())?
                    .into_iter()
                    .map(|v| (v.id().to_string(), v)),
            );
        }

        for id in &config.templates {
            let template = templates.get(id).ok_or_else(|| Error::UnknownId {
                kind: "template",
                id: id.clone(),
            })?;
            if let Some(max_chars) = config.max_chars {
                if max_chars <= template.fixed_len() {
                    return Err(Error::BudgetTooSmall {
                        template: id.clone(),
                        needed: template.fixed_len() + 1,
                        max_chars,
                    });
                }
            }
        }
        if config.backend.kind != BackendKind::Chat {
            for id in &config.verbalizers {
                if !verbalizers.contains_key(id) {
                    return Err(Error::UnknownId {
                        kind: "verbalizer",
                        id: id.clone(),
                    });
                }
            }
            GridSpec {
                template_ids: config.templates.clone(),
                verbalizer_ids: config.verbalizers.clone(),
                backend_id: config.backend.backend_id(),
            }
            .validate()?;
        }

        let split = match &config.split.file {
            Some(path) => {
                let split = SplitAssignment::load(path)?;
                split.validate_against(&dataset)?;
                Some(split)
            }
            None => None,
        };
        Ok(Self {
            config,
            dataset,
            templates,
            verbalizers,
            embeddings,
            split,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn catalog(&self) -> &LabelCatalog {
        self.dataset.catalog()
    }

    pub fn template(&self, id: &str) -> Result<&Template> {
        self.templates.get(id).ok_or_else(|| Error::UnknownId {
            kind: "template",
            id: id.to_string(),
        })
    }

    pub fn verbalizer(&self, id: &str) -> Result<&Verbalizer> {
        self.verbalizers.get(id).ok_or_else(|| Error::UnknownId {
            kind: "verbalizer",
            id: id.to_string(),
        })
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            template_ids: self.config.templates.clone(),
            verbalizer_ids: self.config.verbalizers.clone(),
            backend_id: self.config.backend.backend_id(),
        }
    }

    /// The configured split file, or the seeded stratified split.
    pub fn split(&self) -> Result<Cow<'_, SplitAssignment>> {
        match &self.split {
            Some(split) => Ok(Cow::Borrowed(split)),
            None => Ok(Cow::Owned(stratified_split(
                &self.dataset,
                &self.config.split.ratios,
                self.config.sampling.seed,
            )?)),
        }
    }

    /// Labeled records of the configured evaluation split, in dataset order.
    pub fn eval_records(&self) -> Result<Vec<&ConversationRecord>> {
        let records: Vec<&ConversationRecord> = match self.config.eval_split {
            EvalSplit::All => self.dataset.records().iter().collect(),
            which => {
                let split = self.split()?;
                let ids = match which {
                    EvalSplit::TrainDev => &split.train_dev,
                    EvalSplit::Validation => &split.validation,
                    _ => &split.test,
                };
                self.dataset.records().iter().filter(|r| ids.contains(&r.id)).collect()
            }
        };
        if records.is_empty() {
            return Err(Error::EmptySplit);
        }
        if let Some(r) = records.iter().find(|r| r.label.is_none()) {
            return Err(Error::Unlabeled(r.id.clone()));
        }
        Ok(records)
    }

    pub fn render(&self, template_id: &str, record: &ConversationRecord) -> Result<FilledPrompt> {
        render_prompt(self.template(template_id)?, record, self.config.max_chars)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub pred: Option<usize>,
    pub gold: usize,
    pub parse_failure: bool,
}

impl PredictionRow {
    pub fn prediction(&self) -> Prediction {
        match self.pred {
            Some(label) if !self.parse_failure => Prediction::Label(label),
            _ => Prediction::ParseFailure,
        }
    }
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

pub fn evaluate_rows(rows: &[PredictionRow], n_labels: usize) -> Result<EvaluationReport> {
    let preds: Vec<Prediction> = rows.iter().map(PredictionRow::prediction).collect();
    let gold: Vec<usize> = rows.iter().map(|r| r.gold).collect();
    EvaluationReport::evaluate(&preds, &gold, n_labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub complete: bool,
    pub records_done: usize,
    pub records_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How a few-shot training set was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: Strategy,
    pub proportion: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<DistanceMetric>,
    pub label_words: LabelWords,
    pub split_sizes: [usize; 3],
    pub selected: Vec<String>,
    pub n_training_pairs: usize,
    pub members: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: EvaluationReport,
    pub predictions: Vec<PredictionRow>,
    pub provenance: Option<Provenance>,
}

impl RunOutcome {
    /// Writes predictions, report, status and provenance under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        write_jsonl(&dir.join("predictions.jsonl"), &self.predictions)?;
        self.report.save(dir.join("report.json"))?;
        let status = RunStatus {
            complete: true,
            records_done: self.predictions.len(),
            records_total: self.predictions.len(),
            error: None,
        };
        write_json(&dir.join("status.json"), &status)?;
        if let Some(provenance) = &self.provenance {
            write_json(&dir.join("provenance.json"), provenance)?;
        }
        Ok(())
    }
}

fn save_incomplete(dir: &Path, rows: &[PredictionRow], total: usize, error: &Error) -> Result<()> {
    ensure_dir(dir)?;
    write_jsonl(&dir.join("predictions.jsonl"), rows)?;
    let status = RunStatus {
        complete: false,
        records_done: rows.len(),
        records_total: total,
        error: Some(error.to_string()),
    };
    write_json(&dir.join("status.json"), &status)
}

/// Applies `f` to every record on the pool. Returns the results of the
/// longest successful prefix and the first error in record order. After a
/// failure, records not yet started are skipped.
fn process<T: Send>(
    pool: &rayon::ThreadPool,
    records: &[&ConversationRecord],
    f: impl Fn(&ConversationRecord) -> Result<T> + Sync,
) -> (Vec<T>, Option<Error>) {
    let abort = AtomicBool::new(false);
    let results: Vec<Option<Result<T>>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                if abort.load(Ordering::Relaxed) {
                    return None;
                }
                let out = f(r);
                if out.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                Some(out)
            })
            .collect()
    });
    let mut done = Vec::with_capacity(results.len());
    let mut error = None;
    let mut stopped = false;
    for result in results {
        match result {
            Some(Ok(value)) if !stopped => done.push(value),
            Some(Err(e)) if error.is_none() => {
                error = Some(e);
                stopped = true;
            }
            _ => stopped = true,
        }
    }
    if stopped {
        return (done, Some(error.unwrap_or_else(|| Error::Config("run aborted".into()))));
    }
    (done, None)
}

/// Per-record label distributions of every grid member, members in
/// [`expand_grid`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberScores {
    pub members: Vec<ModelSpec>,
    pub record_ids: Vec<String>,
    pub gold: Vec<usize>,
    /// `dists[record][member]`.
    pub dists: Vec<Vec<LabelDistribution>>,
}

impl MemberScores {
    /// Ensemble predictions over the members `keep` accepts.
    pub fn ensemble(&self, keep: impl Fn(&ModelSpec) -> bool) -> Result<Vec<usize>> {
        let chosen: Vec<usize> = (0..self.members.len()).filter(|&k| keep(&self.members[k])).collect();
        if chosen.is_empty() {
            return Err(Error::Config("no grid member selected".into()));
        }
        self.dists
            .iter()
            .map(|row| {
                let picked: Vec<LabelDistribution> = chosen.iter().map(|&k| row[k].clone()).collect();
                Ok(predict_label(&combine_distributions(&picked, None)?))
            })
            .collect()
    }

    pub fn report(&self, keep: impl Fn(&ModelSpec) -> bool, n_labels: usize) -> Result<EvaluationReport> {
        let preds: Vec<Prediction> = self.ensemble(keep)?.into_iter().map(Prediction::Label).collect();
        EvaluationReport::evaluate(&preds, &self.gold, n_labels)
    }

    fn rows(&self, preds: &[usize]) -> Vec<PredictionRow> {
        self.record_ids
            .iter()
            .zip(&self.gold)
            .zip(preds)
            .map(|((id, &gold), &pred)| PredictionRow {
                id: id.clone(),
                pred: Some(pred),
                gold,
                parse_failure: false,
            })
            .collect()
    }
}

fn member_scores(
    exp: &Experiment,
    records: &[&ConversationRecord],
    dists: Vec<Vec<LabelDistribution>>,
) -> MemberScores {
    let n = dists.len();
    MemberScores {
        members: expand_grid(&exp.grid()),
        record_ids: records[..n].iter().map(|r| r.id.clone()).collect(),
        gold: records[..n]
            .iter()
            .map(|r| r.label.expect("eval records are labeled"))
            .collect(),
        dists,
    }
}

/// Candidate union of `verbalizers`, first occurrence order.
fn candidate_union(verbalizers: &[&Verbalizer]) -> Vec<String> {
    let mut seen = HashSet::new();
    verbalizers
        .iter()
        .flat_map(|v| v.candidates())
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

/// Zero-shot member scores. Each (template, record) costs at most one
/// backend call: the candidates are the union over all verbalizers.
fn zero_shot_dists(
    exp: &Experiment,
    backend: &dyn ScoringBackend,
    cache: &ScoreCache,
    records: &[&ConversationRecord],
) -> Result<(Vec<Vec<LabelDistribution>>, Option<Error>)> {
    let verbalizers: Vec<&Verbalizer> = exp
        .config
        .verbalizers
        .iter()
        .map(|id| exp.verbalizer(id))
        .collect::<Result<_>>()?;
    let union = candidate_union(&verbalizers);
    let pool = exp.pool()?;
    Ok(process(&pool, records, |record| {
        let mut row = Vec::with_capacity(exp.config.templates.len() * verbalizers.len());
        for t in &exp.config.templates {
            let prompt = exp.render(t, record)?;
            let probs = cache.get_or_score(backend, &prompt, &union)?.probabilities()?;
            for v in &verbalizers {
                row.push(aggregate_scores(&probs, v)?);
            }
        }
        Ok(row)
    }))
}

/// Builds the backend named by the config. Chat has no candidate scores and
/// a toy backend needs a fitted state.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ScoringBackend>> {
    let id = config.backend_id();
    match config.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend::new(id))),
        BackendKind::LogitServer => {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("logit server needs an endpoint".into()))?;
            Ok(Box::new(LogitServerBackend::new(id, endpoint, config.http_client())))
        }
        BackendKind::Toy => {
            let path = config
                .state
                .as_ref()
                .ok_or_else(|| Error::Config("toy backend has no fitted state; run a few-shot experiment".into()))?;
            Ok(Box::new(ToyModel::load(path)?))
        }
        BackendKind::Chat => Err(Error::Config(
            "the chat backend returns labels, not candidate scores".into(),
        )),
    }
}

fn chat_client(config: &BackendConfig) -> Result<ChatClient> {
    let endpoint = config
        .endpoint
        .clone()
        .ok_or_else(|| Error::Config("chat backend needs an endpoint".into()))?;
    let model = config
        .model
        .clone()
        .ok_or_else(|| Error::Config("chat backend needs a model name".into()))?;
    Ok(ChatClient::new(
        config.backend_id(),
        endpoint,
        model,
        config.http_client(),
    ))
}

/// Zero-shot run with the configured backend: mock, logit server, fitted
/// toy state or chat. On backend failure the finished prefix is written
/// with an incomplete status before the error is returned.
pub fn run_zero_shot(exp: &Experiment, cache: &ScoreCache, out: Option<&Path>) -> Result<RunOutcome> {
    if exp.config.backend.kind == BackendKind::Chat {
        return run_chat(exp, &chat_client(&exp.config.backend)?, out);
    }
    let backend = build_backend(&exp.config.backend)?;
    run_zero_shot_with(exp, backend.as_ref(), cache, out)
}

pub fn run_zero_shot_with(
    exp: &Experiment,
    backend: &dyn ScoringBackend,
    cache: &ScoreCache,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let records = exp.eval_records()?;
    let (dists, error) = zero_shot_dists(exp, backend, cache, &records)?;
    cache.persist()?;
    finish(exp, &records, dists, error, None, out)
}

fn finish(
    exp: &Experiment,
    records: &[&ConversationRecord],
    dists: Vec<Vec<LabelDistribution>>,
    error: Option<Error>,
    provenance: Option<Provenance>,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let scores = member_scores(exp, records, dists);
    let preds = scores.ensemble(|_| true)?;
    let rows = scores.rows(&preds);
    if let Some(error) = error {
        if let Some(dir) = out {
            save_incomplete(dir, &rows, records.len(), &error)?;
        }
        return Err(error);
    }
    let outcome = RunOutcome {
        report: evaluate_rows(&rows, exp.catalog().len())?,
        predictions: rows,
        provenance,
    };
    if let Some(dir) = out {
        outcome.save(dir)?;
    }
    Ok(outcome)
}

/// Zero-shot run through a chat model that answers with a label index.
pub fn run_chat(exp: &Experiment, client: &ChatClient, out: Option<&Path>) -> Result<RunOutcome> {
    let records = exp.eval_records()?;
    let template = &exp.config.templates[0];
    let pool = exp.pool()?;
    let (parsed, error) = process(&pool, &records, |record| {
        chat_classify(client, &exp.render(template, record)?, exp.catalog())
    });
    let rows: Vec<PredictionRow> = records
        .iter()
        .zip(&parsed)
        .map(|(record, p)| PredictionRow {
            id: record.id.clone(),
            pred: p.index(),
            gold: record.label.expect("eval records are labeled"),
            parse_failure: *p == ParsedLabel::Failure,
        })
        .collect();
    if let Some(error) = error {
        if let Some(dir) = out {
            save_incomplete(dir, &rows, records.len(), &error)?;
        }
        return Err(error);
    }
    let outcome = RunOutcome {
        report: evaluate_rows(&rows, exp.catalog().len())?,
        predictions: rows,
        provenance: None,
    };
    if let Some(dir) = out {
        outcome.save(dir)?;
    }
    Ok(outcome)
}

/// Training ids chosen from train/dev, plus the split they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub split: SplitAssignment,
    pub selected: Vec<String>,
}

/// Allocates per-label counts over train/dev and samples them with the
/// configured strategy.
pub fn select_training(exp: &Experiment) -> Result<Selection> {
    let split = exp.split()?.into_owned();
    let train = exp.dataset.subset(&split.train_dev);
    let plan = allocate_counts(&label_distribution(&train), exp.config.sampling.proportion)?;
    let selected = match exp.config.sampling.strategy {
        Strategy::Random => sample_random(&train, &plan, exp.config.sampling.seed)?,
        Strategy::Active => {
            let fetched;
            let embeddings = match (&exp.embeddings, &exp.config.embeddings) {
                (Some(m), _) => m,
                (None, Some(EmbeddingSource::Endpoint(url))) => {
                    let server = LogitServerBackend::new("embed", url.clone(), exp.config.backend.http_client());
                    fetched = fetch_embeddings(&server, train.records(), exp.config.backend.concurrency)?;
                    &fetched
                }
                _ => return Err(Error::Config("active sampling needs an embeddings source".into())),
            };
            sample_active(&train, embeddings, &plan, exp.config.sampling.metric)?
        }
    };
    check_leakage(&split, selected.iter().map(String::as_str))?;
    Ok(Selection { split, selected })
}

/// One pair per label word of the gold label (or only the first word),
/// per selected record.
pub fn training_pairs(
    exp: &Experiment,
    selection: &Selection,
    template_id: &str,
    verbalizer_id: &str,
) -> Result<Vec<TrainingPair>> {
    let verbalizer = exp.verbalizer(verbalizer_id)?;
    let selected: HashSet<&str> = selection.selected.iter().map(String::as_str).collect();
    let records: Vec<&ConversationRecord> = exp
        .dataset
        .records()
        .iter()
        .filter(|r| selected.contains(r.id.as_str()))
        .collect();
    check_leakage(&selection.split, records.iter().map(|r| r.id.as_str()))?;
    let mut pairs = Vec::new();
    for record in records {
        let label = record.label.ok_or_else(|| Error::Unlabeled(record.id.clone()))?;
        let prompt = exp.render(template_id, record)?;
        let words = verbalizer.words(label);
        let words = match exp.config.sampling.label_words {
            LabelWords::All => words,
            LabelWords::First => &words[..1],
        };
        pairs.extend(words.iter().map(|w| TrainingPair::new(prompt.text.clone(), w.clone())));
    }
    Ok(pairs)
}

/// Fitted toy models, one per grid member, with the selection behind them.
#[derive(Debug, Clone)]
pub struct FewShotModels {
    pub selection: Selection,
    pub models: Vec<ToyModel>,
    pub n_training_pairs: usize,
}

pub fn fit_members(exp: &Experiment) -> Result<FewShotModels> {
    if exp.config.backend.kind != BackendKind::Toy {
        return Err(Error::Config("few-shot training needs the toy backend".into()));
    }
    if exp.config.eval_split == EvalSplit::TrainDev || exp.config.eval_split == EvalSplit::All {
        log::warn!("few-shot evaluation includes the training pool");
    }
    let selection = select_training(exp)?;
    let mut models = Vec::new();
    let mut n_training_pairs = 0;
    for spec in expand_grid(&exp.grid()) {
        let pairs = training_pairs(exp, &selection, &spec.template_id, &spec.verbalizer_id)?;
        n_training_pairs += pairs.len();
        let name = format!("{}:{}:{}", spec.backend_id, spec.template_id, spec.verbalizer_id);
        models.push(toy_fit(&name, &pairs, exp.config.backend.alpha)?);
    }
    Ok(FewShotModels {
        selection,
        models,
        n_training_pairs,
    })
}

fn few_shot_dists(
    exp: &Experiment,
    fitted: &FewShotModels,
    records: &[&ConversationRecord],
) -> Result<(Vec<Vec<LabelDistribution>>, Option<Error>)> {
    let verbalizers: Vec<(&Verbalizer, Vec<String>)> = exp
        .config
        .verbalizers
        .iter()
        .map(|id| exp.verbalizer(id).map(|v| (v, v.candidates())))
        .collect::<Result<_>>()?;
    let pool = exp.pool()?;
    Ok(process(&pool, records, |record| {
        let mut row = Vec::with_capacity(fitted.models.len());
        let mut models = fitted.models.iter();
        for t in &exp.config.templates {
            let prompt = exp.render(t, record)?;
            for (v, candidates) in &verbalizers {
                let model = models.next().expect("one model per grid member");
                let probs = model.score_candidates(&prompt, candidates)?.probabilities()?;
                row.push(aggregate_scores(&probs, v)?);
            }
        }
        Ok(row)
    }))
}

fn provenance(exp: &Experiment, fitted: &FewShotModels) -> Provenance {
    let s = &exp.config.sampling;
    let split = &fitted.selection.split;
    Provenance {
        strategy: s.strategy,
        proportion: s.proportion,
        seed: s.seed,
        metric: (s.strategy == Strategy::Active).then_some(s.metric),
        label_words: s.label_words,
        split_sizes: [split.train_dev.len(), split.validation.len(), split.test.len()],
        selected: fitted.selection.selected.clone(),
        n_training_pairs: fitted.n_training_pairs,
        members: expand_grid(&exp.grid()),
    }
}

/// Samples, fits one toy model per grid member, evaluates their ensemble
/// and, with `out`, saves the fitted models under `out/models`.
pub fn run_few_shot(exp: &Experiment, out: Option<&Path>) -> Result<RunOutcome> {
    let fitted = fit_members(exp)?;
    let records = exp.eval_records()?;
    let (dists, error) = few_shot_dists(exp, &fitted, &records)?;
    let outcome = finish(exp, &records, dists, error, Some(provenance(exp, &fitted)), out)?;
    if let Some(dir) = out {
        let models_dir = dir.join("models");
        ensure_dir(&models_dir)?;
        for (spec, model) in expand_grid(&exp.grid()).iter().zip(&fitted.models) {
            model.save(models_dir.join(format!("{}__{}.json", spec.template_id, spec.verbalizer_id)))?;
        }
    }
    Ok(outcome)
}

/// Member scores of the configured grid: trained toy models for few-shot
/// configs, the configured backend otherwise.
pub fn grid_scores(exp: &Experiment, cache: &ScoreCache) -> Result<MemberScores> {
    let records = exp.eval_records()?;
    let (dists, error) = if exp.config.is_few_shot() {
        few_shot_dists(exp, &fit_members(exp)?, &records)?
    } else {
        let backend = build_backend(&exp.config.backend)?;
        let scored = zero_shot_dists(exp, backend.as_ref(), cache, &records)?;
        cache.persist()?;
        scored
    };
    if let Some(error) = error {
        return Err(error);
    }
    Ok(member_scores(exp, &records, dists))
}

/// Every grid cell plus row, column and joint ensembles.
pub fn grid_results(scores: &MemberScores, grid: &GridSpec, n_labels: usize) -> Result<GridResults> {
    let any = ENSEMBLE_ID;
    let rows = grid.template_ids.iter().map(String::as_str).chain([any]);
    let mut cells = Vec::new();
    for t in rows {
        let cols = grid.verbalizer_ids.iter().map(String::as_str).chain([any]);
        for v in cols {
            let report = scores.report(
                |m| (t == any || m.template_id == t) && (v == any || m.verbalizer_id == v),
                n_labels,
            )?;
            cells.push(GridCell {
                template: t.to_string(),
                verbalizer: v.to_string(),
                report,
            });
        }
    }
    Ok(GridResults {
        template_ids: grid.template_ids.clone(),
        verbalizer_ids: grid.verbalizer_ids.clone(),
        cells,
    })
}

/// Grid experiment. With `out`, writes `grid.json` and `grid.md`.
pub fn run_grid(exp: &Experiment, cache: &ScoreCache, out: Option<&Path>) -> Result<GridResults> {
    let scores = grid_scores(exp, cache)?;
    let results = grid_results(&scores, &exp.grid(), exp.catalog().len())?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("grid.json"), &results)?;
        let report = render_grid_report(&results);
        fs::write(dir.join("grid.md"), &report.markdown).map_err(|e| Error::io(dir.join("grid.md"), e))?;
    }
    Ok(results)
}
