//! File-based pipeline stages behind the command line. Every stage reads and
//! writes only the files listed on its function, so any stage can be rerun
//! on its own.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answering::LabelSpace;
use crate::config::{PrecisionDenominator, RunConfig};
use crate::corpus::{
    corpus_stats, extract_request, filter_rare_tags, parse_dump, read_requests, split, write_requests, CorpusStats,
    DumpFormat, DumpStats, FilterStats, Necessity, Request,
};
use crate::dfg::{build_request_dfg, detect_language, Language, RequestGraph};
use crate::error::{Error, Result};
use crate::eval::{random_ranking_expectation, render_report, MetricSet, NecessityEvalRecord, TagEvalRecord, TagMetrics};
use crate::model::train::{self, make_examples, TrainOptions, TrainReport, BEST_DIR};
use crate::model::{build_tokenizer, AblationSpec, PredictionRecord, UnifiedModel};

/// Tag and request counts of the reference corpus (2011–2023 snapshot, θ = 50).
pub const REFERENCE_TAGS: usize = 424;
pub const REFERENCE_REQUESTS: usize = 76_161;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const LOCK_FILE: &str = ".unipcr.lock";
pub const RUN_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.json";
pub const STATS_FILE: &str = "stats.json";
pub const DFG_SUMMARY_FILE: &str = "summary.json";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Default directory layout of one working directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn graphs(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn model(&self, spec: AblationSpec) -> PathBuf {
        self.root.join("model").join(spec.as_str())
    }

    pub fn checkpoint(&self, spec: AblationSpec) -> PathBuf {
        self.model(spec).join(BEST_DIR)
    }

    pub fn predictions(&self, spec: AblationSpec) -> PathBuf {
        self.root.join("predictions").join(format!("{}.jsonl", spec.as_str()))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(h.finalize()))
}

/// Content hashes of the corpus files plus the request ids of every split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
    pub ids: BTreeMap<String, Vec<u64>>,
    pub hash: String,
}

impl Manifest {
    fn build(dir: &Path, names: &[&str], ids: BTreeMap<String, Vec<u64>>) -> Result<Self> {
        let mut files = BTreeMap::new();
        for n in names {
            files.insert(n.to_string(), sha256_file(&dir.join(n))?);
        }
        let mut h = Sha256::new();
        for (n, d) in &files {
            h.update(format!("{n}:{d}\n"));
        }
        Ok(Self { files, ids, hash: hex::encode(h.finalize()) })
    }

    pub fn load(corpus_dir: &Path) -> Result<Self> {
        read_json(&corpus_dir.join(MANIFEST_FILE))
    }
}

/// Metadata written by every stage, enough to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config: String,
    pub config_hash: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub necessity_rule: String,
    pub code_version: String,
    pub inputs: Vec<String>,
    pub details: serde_json::Value,
}

impl StageRecord {
    pub fn new(stage: &str, config: &RunConfig, manifest_hash: &str, inputs: &[&Path], details: serde_json::Value) -> Self {
        Self {
            stage: stage.to_string(),
            config: config.to_toml(),
            config_hash: config.model_hash(),
            manifest_hash: manifest_hash.to_string(),
            seed: config.corpus.seed,
            necessity_rule: config.corpus.necessity_rule.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            details,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(RUN_FILE), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn load_labels(corpus_dir: &Path) -> Result<LabelSpace> {
    read_json(&corpus_dir.join(LABELS_FILE))
}

pub fn split_path(corpus_dir: &Path, split: &str) -> PathBuf {
    corpus_dir.join(format!("{split}.jsonl"))
}

/// Result of `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dump: DumpStats,
    pub filter: FilterStats,
    pub stats: CorpusStats,
    pub manifest_hash: String,
    /// Set when the cleaned counts differ from the reference corpus.
    pub divergence: Option<String>,
}

pub fn divergence_note(n_tags: usize, n_requests: usize) -> Option<String> {
    if n_tags == REFERENCE_TAGS && n_requests == REFERENCE_REQUESTS {
        return None;
    }
    Some(format!(
        "snapshot diverges from the reference corpus: {n_tags} tags / {n_requests} requests \
         (reference {REFERENCE_TAGS} tags / {REFERENCE_REQUESTS} requests)"
    ))
}

/// Parse a dump, clean it and write `{train,val,test}.jsonl`, `labels.json`,
/// `stats.json`, `manifest.json` and `run.json` into `out`.
pub fn ingest(config: &RunConfig, dump: &Path, out: &Path) -> Result<IngestReport> {
    let file = File::open(dump).map_err(|e| Error::io(dump, e))?;
    let mut reader = parse_dump(BufReader::new(file), DumpFormat::from_path(dump));
    let rule = config.corpus.necessity_rule;
    let mut requests = Vec::new();
    for post in reader.by_ref() {
        requests.push(extract_request(&post?, rule));
    }
    let dump_stats = reader.stats();
    let (requests, labels, filter) = filter_rare_tags(requests, config.corpus.theta);
    let splits = split(requests, config.corpus.split_ratios, config.corpus.seed)?;
    let stats = corpus_stats(&splits, &labels);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut ids = BTreeMap::new();
    for (name, reqs) in splits.named() {
        write_requests(&split_path(out, name), reqs)?;
        ids.insert(name.to_string(), reqs.iter().map(|r| r.id).collect());
    }
    write_json(&out.join(LABELS_FILE), &labels)?;
    write_json(&out.join(STATS_FILE), &stats)?;
    let names = ["train.jsonl", "val.jsonl", "test.jsonl", LABELS_FILE];
    let manifest = Manifest::build(out, &names, ids)?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    let report = IngestReport {
        dump: dump_stats,
        filter,
        divergence: divergence_note(stats.n_tags, stats.n_requests),
        stats,
        manifest_hash: manifest.hash.clone(),
    };
    if let Some(note) = &report.divergence {
        log::warn!("{note}");
    }
    StageRecord::new(
        "ingest",
        config,
        &manifest.hash,
        &[dump],
        serde_json::json!({ "theta": config.corpus.theta, "report": &report }),
    )
    .write(out)?;
    Ok(report)
}

fn allowed_langs(config: &RunConfig) -> Result<Vec<Language>> {
    config.dfg.langs.iter().map(|l| l.parse()).collect()
}

/// Graph of a request, restricted to the configured languages. Code in any
/// other language keeps its token stream but gets an empty graph.
pub fn request_graph(request: &Request, langs: &[Language]) -> RequestGraph {
    let lang = detect_language(&request.code.join("\n"), &request.tags);
    let lang = if langs.contains(&lang) { lang } else { Language::Unknown };
    build_request_dfg(request.id, &request.code, lang)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LangCoverage {
    pub requests: usize,
    pub with_graph: usize,
    pub parse_failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DfgSummary {
    pub requests: usize,
    pub with_code: usize,
    pub parse_failures: usize,
    pub parse_failure_rate: f64,
    pub per_language: BTreeMap<String, LangCoverage>,
}

/// Build graphs for every split in `corpus_dir`, writing `{split}.jsonl`
/// (one request graph per line) and `summary.json` into `out`.
pub fn build_graphs(config: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<DfgSummary> {
    let langs = allowed_langs(config)?;
    let manifest = Manifest::load(corpus_dir)?;
    let mut summary = DfgSummary::default();
    for name in SPLITS {
        let reqs = read_requests(&split_path(corpus_dir, name))?;
        let mut graphs = Vec::with_capacity(reqs.len());
        for r in &reqs {
            summary.requests += 1;
            if r.code.is_empty() {
                continue;
            }
            summary.with_code += 1;
            let g = request_graph(r, &langs);
            let cov = summary.per_language.entry(g.graph.lang.as_str().to_string()).or_default();
            cov.requests += 1;
            if !g.graph.is_empty() {
                cov.with_graph += 1;
            }
            if g.graph.lang != Language::Unknown && !g.diagnostics.is_empty() {
                cov.parse_failures += 1;
                summary.parse_failures += 1;
            }
            graphs.push(g);
        }
        write_jsonl(&split_path(out, name), &graphs)?;
    }
    summary.parse_failure_rate = if summary.with_code == 0 {
        0.0
    } else {
        summary.parse_failures as f64 / summary.with_code as f64
    };
    write_json(&out.join(DFG_SUMMARY_FILE), &summary)?;
    StageRecord::new("build-dfg", config, &manifest.hash, &[corpus_dir], serde_json::to_value(&summary)?).write(out)?;
    Ok(summary)
}

pub fn load_graphs(graphs_dir: &Path, split: &str) -> Result<HashMap<u64, RequestGraph>> {
    let path = split_path(graphs_dir, split);
    let graphs: Vec<RequestGraph> = read_jsonl(&path)?;
    Ok(graphs.into_iter().map(|g| (g.request_id, g)).collect())
}

fn graphs_or_empty(graphs_dir: Option<&Path>, split: &str) -> Result<HashMap<u64, RequestGraph>> {
    match graphs_dir {
        Some(d) => load_graphs(d, split),
        None => Ok(HashMap::new()),
    }
}

/// Train one ablation variant on the corpus in `corpus_dir`. Writes the
/// training log, periodic checkpoints and `best/` into `out`.
pub fn train_stage(
    config: &RunConfig,
    spec: AblationSpec,
    corpus_dir: &Path,
    graphs_dir: Option<&Path>,
    out: &Path,
) -> Result<TrainReport> {
    let manifest = Manifest::load(corpus_dir)?;
    let labels = load_labels(corpus_dir)?;
    let train_reqs = read_requests(&split_path(corpus_dir, "train"))?;
    let val_reqs = read_requests(&split_path(corpus_dir, "val"))?;
    let train_graphs = graphs_or_empty(graphs_dir, "train")?;
    let val_graphs = graphs_or_empty(graphs_dir, "val")?;
    let tokenizer = build_tokenizer(&train_reqs, &labels, config);
    let mut model = UnifiedModel::new(config, spec, tokenizer, labels, &Device::Cpu)?;
    model.init_shared_prefix(&train_reqs, &train_graphs)?;
    let train_ex = make_examples(&model, &train_reqs, &train_graphs)?;
    let val_ex = make_examples(&model, &val_reqs, &val_graphs)?;
    let mut meta = train::default_meta(&model);
    meta.manifest_hash = manifest.hash.clone();
    let opts = TrainOptions { out_dir: Some(out.to_path_buf()), meta: Some(meta) };
    let report = train::train(&model, &train_ex, &val_ex, &opts)?;
    let mut inputs = vec![corpus_dir];
    inputs.extend(graphs_dir);
    StageRecord::new(
        "train",
        config,
        &manifest.hash,
        &inputs,
        serde_json::json!({
            "ablation": spec,
            "steps": report.steps,
            "final_loss": report.losses.last(),
            "best_val_loss": report.best_val_loss,
            "best_step": report.best_step,
        }),
    )
    .write(out)?;
    Ok(report)
}

/// Request read for prediction: only the id and title are required.
#[derive(Debug, Clone, Deserialize)]
struct InputRequest {
    id: u64,
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    code: Vec<String>,
    #[serde(default)]
    tags: Vec<String>,
}

impl From<InputRequest> for Request {
    fn from(r: InputRequest) -> Self {
        Request {
            id: r.id,
            title: r.title,
            description: r.description,
            code: r.code,
            tags: r.tags,
            necessity: Necessity::Unnecessary,
        }
    }
}

pub fn read_input_requests(path: &Path) -> Result<Vec<Request>> {
    let raw: Vec<InputRequest> = read_jsonl(path)?;
    Ok(raw.into_iter().map(Request::from).collect())
}

/// Predict every request in `input` (line-delimited requests) with the
/// checkpoint in `checkpoint`, writing one prediction record per line to
/// `out`. Refuses a config whose model hash differs from the checkpoint's.
pub fn predict_stage(config: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<Vec<PredictionRecord>> {
    let (model, meta) = UnifiedModel::load_checkpoint(checkpoint, &Device::Cpu)?;
    if meta.config_hash != config.model_hash() {
        return Err(Error::Config(format!(
            "config does not match checkpoint {} (model hash {} vs {})",
            checkpoint.display(),
            config.model_hash(),
            meta.config_hash
        )));
    }
    let langs = allowed_langs(config)?;
    let requests = read_input_requests(input)?;
    let prepared = requests
        .iter()
        .map(|r| {
            let g = request_graph(r, &langs);
            model.prepare(r, Some(&g))
        })
        .collect::<Result<Vec<_>>>()?;
    let records = model.predict(&prepared, &config.answering)?;
    write_jsonl(out, &records)?;
    Ok(records)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

/// Join predictions with truth by request id. Requests without a
/// prediction count as empty rankings and are left out of necessity scoring.
pub fn eval_records(preds: &[PredictionRecord], truth: &[Request]) -> (Vec<TagEvalRecord>, Vec<NecessityEvalRecord>) {
    let by_id: HashMap<u64, &PredictionRecord> = preds.iter().map(|p| (p.id, p)).collect();
    let mut tags = Vec::with_capacity(truth.len());
    let mut nec = Vec::with_capacity(truth.len());
    for r in truth {
        let p = by_id.get(&r.id);
        tags.push(TagEvalRecord {
            id: r.id,
            truth: r.tags.clone(),
            predicted: p.map(|p| p.tags.clone()).unwrap_or_default(),
        });
        if let Some(p) = p {
            nec.push(NecessityEvalRecord { id: r.id, truth: r.necessity, predicted: p.necessity });
        }
    }
    (tags, nec)
}

/// Score a prediction file against truth requests and write
/// `report.txt`, `report.csv` and `metrics.json` into `out`.
pub fn evaluate_stage(
    name: &str,
    pred: &Path,
    truth: &Path,
    ks: &[usize],
    denom: PrecisionDenominator,
    out: &Path,
) -> Result<MetricSet> {
    let preds = read_predictions(pred)?;
    let truth_reqs = read_requests(truth)?;
    let (tags, nec) = eval_records(&preds, &truth_reqs);
    let set = MetricSet::evaluate(name, &tags, &nec, ks, denom)?;
    let report = render_report(std::slice::from_ref(&set));
    write_report(out, "report", &report.text, &report.csv)?;
    write_json(&out.join("metrics.json"), &set)?;
    Ok(set)
}

fn write_report(out: &Path, stem: &str, text: &str, csv: &str) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let t = out.join(format!("{stem}.txt"));
    std::fs::write(&t, text).map_err(|e| Error::io(&t, e))?;
    let c = out.join(format!("{stem}.csv"));
    std::fs::write(&c, csv).map_err(|e| Error::io(&c, e))
}

/// Expected tag metrics of a uniformly random ranking over `n_labels` tags,
/// averaged over the truth sets of `requests`.
pub fn random_baseline(requests: &[Request], n_labels: usize, k: usize, denom: PrecisionDenominator) -> TagMetrics {
    let mut out = TagMetrics::default();
    if requests.is_empty() {
        return out;
    }
    for r in requests {
        let m = random_ranking_expectation(n_labels, r.tags.len().min(n_labels), k, denom);
        out.precision += m.precision;
        out.recall += m.recall;
        out.f1 += m.f1;
    }
    let n = requests.len() as f64;
    TagMetrics { precision: out.precision / n, recall: out.recall / n, f1: out.f1 / n }
}

pub fn row_name(spec: AblationSpec) -> &'static str {
    match spec {
        AblationSpec::Full => "Full",
        AblationSpec::NoCodePrefix => "W/O Code Prefix",
        AblationSpec::FineTune => "W/O Text & Code Prompt",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub sets: Vec<MetricSet>,
    /// Random-ranking F1 at each K over the reference label-space size.
    pub random_reference: BTreeMap<usize, f64>,
    /// Random-ranking F1 at each K over this corpus's label space.
    pub random_own: BTreeMap<usize, f64>,
    pub n_labels: usize,
    pub text: String,
    pub csv: String,
}

/// Train, predict and evaluate every variant in `specs` on a workspace whose
/// corpus and graphs are already built. Reports land in `reports/`.
pub fn ablate(config: &RunConfig, ws: &Workspace, specs: &[AblationSpec]) -> Result<AblationReport> {
    let corpus = ws.corpus();
    let graphs = ws.graphs();
    let graphs_dir = graphs.join(DFG_SUMMARY_FILE).exists().then_some(graphs.as_path());
    let test_path = split_path(&corpus, "test");
    let test = read_requests(&test_path)?;
    let labels = load_labels(&corpus)?;
    let denom = config.eval.precision_denominator;
    let mut sets = Vec::new();
    for &spec in specs {
        log::info!("ablation: training {spec}");
        train_stage(config, spec, &corpus, graphs_dir, &ws.model(spec))?;
        let pred = ws.predictions(spec);
        predict_stage(config, &ws.checkpoint(spec), &test_path, &pred)?;
        let set = evaluate_stage(
            row_name(spec),
            &pred,
            &test_path,
            &config.eval.ks,
            denom,
            &ws.reports().join(spec.as_str()),
        )?;
        sets.push(set);
    }
    let rendered = render_report(&sets);
    let mut random_reference = BTreeMap::new();
    let mut random_own = BTreeMap::new();
    let mut text = rendered.text;
    text.push_str(&format!("Random ranking baseline (precision denominator: {})\n", denom.label()));
    for &k in &config.eval.ks {
        let r = random_baseline(&test, REFERENCE_TAGS, k, denom).f1;
        let o = random_baseline(&test, labels.len(), k, denom).f1;
        random_reference.insert(k, r);
        random_own.insert(k, o);
        text.push_str(&format!(
            "F1@{k}: {r:.4} over {REFERENCE_TAGS} tags, {o:.4} over {} tags\n",
            labels.len()
        ));
    }
    let report = AblationReport {
        sets,
        random_reference,
        random_own,
        n_labels: labels.len(),
        text,
        csv: rendered.csv,
    };
    write_report(&ws.reports(), "ablation", &report.text, &report.csv)?;
    let manifest = Manifest::load(&corpus)?;
    StageRecord::new(
        "ablate",
        config,
        &manifest.hash,
        &[&corpus],
        serde_json::json!({
            "specs": specs,
            "random_reference": &report.random_reference,
            "random_own": &report.random_own,
        }),
    )
    .write(&ws.reports())?;
    Ok(report)
}
