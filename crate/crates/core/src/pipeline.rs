//! End-to-end orchestration: ingest, pretrain, compress, train, evaluate,
//! plus the ratio sweep and the method comparison table.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::info;
use thiserror::Error;

use crate::config::{ConfigError, Method, RunConfig};
use crate::dataset::{
    item_frequency, oversample_tail, parse_interactions, parse_side_features, sample_uniform, split_leave_last_two,
    undersample_head, DatasetError, Interaction, InteractionDataset, SplitDataset,
};
use crate::embedding_file::{fnv1a64, load_embeddings, save_embeddings, EmbeddingFileError};
use crate::eval::{self, format_with_degradation, metrics_csv, EvalError, MetricsReport};
use crate::mf::{train_mf, train_mf_mlp, MfConfig, MfError, PretrainedEmbeddings};
use crate::nn::{AdamConfig, Matrix};
use crate::ttnn::{
    build_ttnn, train_ttnn, IntegrationStrategy, StrategyKind, TowerScorer, TtnnConfig, TtnnError, TtnnModel,
    TtnnTrainConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mf(#[from] MfError),
    #[error(transparent)]
    Ttnn(#[from] TtnnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    EmbeddingFile(#[from] EmbeddingFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid sweep ratio {0}: must be at least 1")]
    SweepRatio(f64),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Which pretraining model produces the id embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PretrainVariant {
    Mf,
    MfMlp,
}

impl PretrainVariant {
    pub fn for_method(method: Method) -> Self {
        if method == Method::CadcMlp {
            Self::MfMlp
        } else {
            Self::Mf
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Self::Mf => "mf",
            Self::MfMlp => "mf-mlp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub tables: PretrainedEmbeddings<f32>,
    /// Wall-clock of the training run that produced the tables, also when
    /// they were loaded from the cache.
    pub seconds: f64,
}

/// Training subset plus the optional sampling distribution for LogQ.
#[derive(Debug, Clone)]
pub struct Selection {
    pub d_sel: Vec<Interaction>,
    pub logq: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub model: TtnnModel<f32>,
}

/// A loaded and split dataset shared by every run of one command.
#[derive(Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub split: SplitDataset,
    pub dataset_hash: u64,
    pretrained: Mutex<HashMap<PretrainVariant, Arc<Pretrained>>>,
}

/// Stable fingerprint of interactions and features.
pub fn dataset_hash(ds: &InteractionDataset) -> u64 {
    let mut bytes = Vec::with_capacity(ds.interactions().len() * 20 + 16);
    bytes.extend_from_slice(&(ds.n_users() as u64).to_le_bytes());
    bytes.extend_from_slice(&(ds.n_items() as u64).to_le_bytes());
    for it in ds.interactions() {
        bytes.extend_from_slice(&it.user.to_le_bytes());
        bytes.extend_from_slice(&it.item.to_le_bytes());
        bytes.extend_from_slice(&it.timestamp.to_le_bytes());
        bytes.push(it.label);
    }
    for (table, n) in [(ds.user_features(), ds.n_users()), (ds.item_features(), ds.n_items())] {
        bytes.extend_from_slice(&(table.dim() as u64).to_le_bytes());
        if table.dim() > 0 {
            for r in 0..n {
                table.row(r).iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
            }
        }
    }
    fnv1a64(&bytes)
}

pub fn load_dataset(config: &RunConfig) -> Result<InteractionDataset> {
    let ds = parse_interactions(&config.ratings, config.format)?;
    Ok(parse_side_features(
        ds,
        config.users.as_deref(),
        config.items.as_deref(),
        config.schema,
    )?)
}

impl Experiment {
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let ds = load_dataset(config)?;
        Self::from_dataset(config, Arc::new(ds))
    }

    pub fn from_dataset(config: &RunConfig, dataset: Arc<InteractionDataset>) -> Result<Self> {
        config.validate()?;
        let dataset_hash = dataset_hash(&dataset);
        let split = split_leave_last_two(dataset)?;
        info!(
            "{}: {} users, {} items, train {} / validation {} / test {}",
            config.dataset_name,
            split.parent.n_users(),
            split.parent.n_items(),
            split.train.len(),
            split.validation.len(),
            split.test.len()
        );
        Ok(Self {
            config: config.clone(),
            split,
            dataset_hash,
            pretrained: Mutex::new(HashMap::new()),
        })
    }

    pub fn dataset(&self) -> &InteractionDataset {
        &self.split.parent
    }

    fn mf_config(&self) -> MfConfig {
        MfConfig {
            dim: self.config.emb_dim,
            epochs: self.config.pretrain_epochs,
            batch_size: self.config.batch_size,
            negatives_per_positive: self.config.negatives,
            adam: AdamConfig {
                lr: self.config.pretrain_lr,
                ..AdamConfig::default()
            },
            seed: self.config.seed,
        }
    }

    fn cache_stem(&self, variant: PretrainVariant) -> PathBuf {
        let c = self.mf_config();
        let key = format!(
            "{}|{}|{}|{}|{}|{}|{}",
            variant.tag(),
            c.dim,
            c.epochs,
            c.batch_size,
            c.negatives_per_positive,
            c.adam.lr,
            c.seed
        );
        self.config.out.join("cache").join(format!(
            "{}-{:016x}-{:016x}",
            variant.tag(),
            self.dataset_hash,
            fnv1a64(key.as_bytes())
        ))
    }

    fn load_cached(&self, stem: &Path) -> Option<Pretrained> {
        let user = load_embeddings(&stem.with_extension("user.emb")).ok()?;
        let item = load_embeddings(&stem.with_extension("item.emb")).ok()?;
        let seconds = fs::read_to_string(stem.with_extension("seconds")).ok()?.trim().parse().ok()?;
        let width = self.config.emb_dim;
        if user.shape() != (self.dataset().n_users(), width) || item.shape() != (self.dataset().n_items(), width) {
            return None;
        }
        Some(Pretrained {
            tables: PretrainedEmbeddings { user, item },
            seconds,
        })
    }

    /// Pretrains on the train split, reusing in-process results and the
    /// on-disk cache under `out/cache`.
    pub fn pretrain(&self, variant: PretrainVariant) -> Result<Arc<Pretrained>> {
        let mut memo = self.pretrained.lock().expect("pretrain cache lock");
        if let Some(p) = memo.get(&variant) {
            return Ok(Arc::clone(p));
        }
        let stem = self.cache_stem(variant);
        let pretrained = match self.load_cached(&stem) {
            Some(p) => {
                info!("reusing cached {} embeddings from {}", variant.tag(), stem.display());
                p
            }
            None => {
                let config = self.mf_config();
                let (tables, seconds) = match variant {
                    PretrainVariant::Mf => {
                        let t = train_mf(&self.split.train, self.dataset(), &config)?;
                        (t.model.export_embeddings(), t.seconds)
                    }
                    PretrainVariant::MfMlp => {
                        let t = train_mf_mlp(&self.split.train, self.dataset(), &config)?;
                        (t.model.export_embeddings(), t.seconds)
                    }
                };
                let dir = stem.parent().expect("cache stem has a parent");
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                save_embeddings(&tables.user, &stem.with_extension("user.emb"))?;
                save_embeddings(&tables.item, &stem.with_extension("item.emb"))?;
                write_file(&stem.with_extension("seconds"), &format!("{seconds}\n"))?;
                Pretrained { tables, seconds }
            }
        };
        let pretrained = Arc::new(pretrained);
        memo.insert(variant, Arc::clone(&pretrained));
        Ok(pretrained)
    }

    /// The training subset for `method` at fraction `ratio` of the train
    /// split. Gold standard always uses the whole train split.
    pub fn select(&self, method: Method, ratio: f64) -> Result<Selection> {
        let seed = self.config.seed;
        let train = &self.split.train;
        if method == Method::GoldStandard {
            return Ok(Selection {
                d_sel: train.clone(),
                logq: None,
            });
        }
        let sample = sample_uniform(train, ratio, seed)?;
        if sample.is_empty() {
            return Err(DatasetError::Empty.into());
        }
        if matches!(method, Method::Over | Method::Under) {
            info!("{method}: median-targeted stand-in for the long-tail resampling baseline");
        }
        Ok(match method {
            Method::Over => Selection {
                d_sel: oversample_tail(&sample, seed)?,
                logq: None,
            },
            Method::Under => Selection {
                d_sel: undersample_head(&sample, seed)?,
                logq: None,
            },
            Method::Logq => Selection {
                logq: Some(item_frequency(&sample, self.dataset().n_items())),
                d_sel: sample,
            },
            _ => Selection {
                d_sel: sample,
                logq: None,
            },
        })
    }

    /// Builds and trains the two-tower model; no evaluation.
    pub fn train(&self, method: Method, ratio: f64, strategy: StrategyKind) -> Result<(TtnnModel<f32>, f64, f64)> {
        let ratio = if method == Method::GoldStandard { 1.0 } else { ratio };
        let selection = self.select(method, ratio)?;
        let (integration, pretrain_seconds) = if strategy.needs_pretrained() {
            let p = self.pretrain(PretrainVariant::for_method(method))?;
            (IntegrationStrategy::pretrained(strategy, p.tables.clone()), p.seconds)
        } else {
            (IntegrationStrategy::random(), 0.0)
        };
        let model_config = TtnnConfig {
            tower_hidden: self.config.tower_hidden.clone(),
            emb_dim: self.config.emb_dim,
            seed: self.config.seed,
        };
        let mut model = build_ttnn(self.dataset(), integration, &model_config)?;
        let train_config = TtnnTrainConfig {
            epochs: self.config.epochs,
            batch_size: self.config.batch_size,
            negatives_per_positive: self.config.negatives,
            adam: AdamConfig {
                lr: self.config.lr,
                ..AdamConfig::default()
            },
            seed: self.config.seed,
            logq: selection.logq,
        };
        info!(
            "training {method} ({strategy}) on {} interactions",
            selection.d_sel.len()
        );
        let report = train_ttnn(&mut model, &selection.d_sel, self.dataset(), &train_config)?;
        Ok((model, pretrain_seconds, report.seconds))
    }

    /// One full run: select, optionally pretrain, train, evaluate.
    pub fn run(&self, method: Method, ratio: f64, strategy: StrategyKind) -> Result<RunOutcome> {
        let ratio = if method == Method::GoldStandard { 1.0 } else { ratio };
        let (model, pretrain_seconds, train_seconds) = self.train(method, ratio, strategy)?;
        let metrics = eval::evaluate(&model.scorer(), &self.split, 10)?;
        let report = MetricsReport {
            method: method.to_string(),
            dataset: self.config.dataset_name.clone(),
            ratio,
            seed: self.config.seed,
            hr_at_10: metrics.hr,
            ndcg_at_10: metrics.ndcg,
            pretrain_seconds,
            train_seconds,
        };
        info!("{}", report.csv_row());
        Ok(RunOutcome { report, model })
    }

    /// A run of the configured method, ratio and strategy.
    pub fn run_configured(&self) -> Result<RunOutcome> {
        self.run(self.config.method, self.config.ratio, self.config.effective_strategy())
    }
}

fn write_metrics(out: &Path, reports: &[MetricsReport]) -> Result<()> {
    write_file(&out.join("metrics.csv"), &metrics_csv(reports))
}

/// Loads the dataset, runs the configured method and writes `metrics.csv`.
pub fn cmd_pipeline(config: &RunConfig) -> Result<MetricsReport> {
    let exp = Experiment::load(config)?;
    pipeline_on(&exp)
}

pub fn pipeline_on(exp: &Experiment) -> Result<MetricsReport> {
    let report = exp.run_configured()?.report;
    write_metrics(&exp.config.out, std::slice::from_ref(&report))?;
    Ok(report)
}

/// Converts a full-to-selected ratio (10 means 10% kept) to a fraction.
pub fn sweep_ratio_to_fraction(ratio: f64) -> Result<f64> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(PipelineError::SweepRatio(ratio));
    }
    Ok(1.0 / ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Full-to-selected ratio as given on the command line.
    pub ratio: f64,
    pub report: MetricsReport,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,fraction,hr10,ndcg10\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4}",
            r.ratio, r.report.ratio, r.report.hr_at_10, r.report.ndcg_at_10
        );
    }
    out
}

/// One run per full-to-selected ratio, sorted ascending. Writes
/// `sweep.csv` and `metrics.csv`.
pub fn cmd_sweep(config: &RunConfig, ratios: &[f64]) -> Result<Vec<SweepRow>> {
    let exp = Experiment::load(config)?;
    sweep_on(&exp, ratios)
}

pub fn sweep_on(exp: &Experiment, ratios: &[f64]) -> Result<Vec<SweepRow>> {
    let mut sorted = ratios.to_vec();
    for &r in &sorted {
        sweep_ratio_to_fraction(r)?;
    }
    sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(sorted.len());
    for ratio in sorted {
        let fraction = sweep_ratio_to_fraction(ratio)?;
        let method = exp.config.method;
        let report = exp.run(method, fraction, exp.config.effective_strategy())?.report;
        rows.push(SweepRow { ratio, report });
    }
    write_file(&exp.config.out.join("sweep.csv"), &sweep_csv(&rows))?;
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.report.clone()).collect();
    write_metrics(&exp.config.out, &reports)?;
    Ok(rows)
}

fn format_time(r: &MetricsReport) -> String {
    if r.pretrain_seconds > 0.0 {
        format!("{:.0}+{:.0}", r.pretrain_seconds, r.train_seconds)
    } else {
        format!("{:.0}", r.train_seconds)
    }
}

/// Comparison table: HR@10 and NDCG@10 with relative loss against the gold
/// standard in parentheses, and `pretrain+train` seconds.
pub fn table1_csv(reports: &[MetricsReport]) -> String {
    let gold = reports.iter().find(|r| r.method == Method::GoldStandard.as_str());
    let mut out = String::from("method,hr10,ndcg10,time_s\n");
    for r in reports {
        let (hr, ndcg) = match gold {
            Some(g) => (
                format_with_degradation(r.hr_at_10, g.hr_at_10),
                format_with_degradation(r.ndcg_at_10, g.ndcg_at_10),
            ),
            None => (format!("{:.2}", r.hr_at_10), format!("{:.2}", r.ndcg_at_10)),
        };
        let _ = writeln!(out, "{},{hr},{ndcg},{}", r.method, format_time(r));
    }
    out
}

/// Every method on one split and seed. Writes `table1.csv` and
/// `metrics.csv`.
pub fn cmd_table1(config: &RunConfig) -> Result<Vec<MetricsReport>> {
    let exp = Experiment::load(config)?;
    table1_on(&exp)
}

pub fn table1_on(exp: &Experiment) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::with_capacity(Method::TABLE1.len());
    for method in Method::TABLE1 {
        let strategy = if method.is_cadc() {
            exp.config.strategy.unwrap_or(StrategyKind::InitFrz)
        } else {
            StrategyKind::Random
        };
        reports.push(exp.run(method, exp.config.ratio, strategy)?.report);
    }
    write_file(&exp.config.out.join("table1.csv"), &table1_csv(&reports))?;
    write_metrics(&exp.config.out, &reports)?;
    Ok(reports)
}

fn interactions_tsv(rows: &[Interaction]) -> String {
    let mut out = String::from("user\titem\ttimestamp\n");
    for it in rows {
        let _ = writeln!(out, "{}\t{}\t{}", it.user, it.item, it.timestamp);
    }
    out
}

/// Parses and splits the dataset; writes the three splits as TSV with dense
/// ids and returns a short summary.
pub fn cmd_ingest(config: &RunConfig) -> Result<String> {
    let exp = Experiment::load(config)?;
    let split_dir = config.out.join("split");
    write_file(&split_dir.join("train.tsv"), &interactions_tsv(&exp.split.train))?;
    write_file(&split_dir.join("validation.tsv"), &interactions_tsv(&exp.split.validation))?;
    write_file(&split_dir.join("test.tsv"), &interactions_tsv(&exp.split.test))?;
    let ds = exp.dataset();
    let summary = format!(
        "dataset = {}\nhash = {:016x}\nusers = {}\nitems = {}\ninteractions = {}\nuser_features = {}\nitem_features = {}\ntrain = {}\nvalidation = {}\ntest = {}\n",
        config.dataset_name,
        exp.dataset_hash,
        ds.n_users(),
        ds.n_items(),
        ds.interactions().len(),
        ds.user_features().dim(),
        ds.item_features().dim(),
        exp.split.train.len(),
        exp.split.validation.len(),
        exp.split.test.len()
    );
    write_file(&config.out.join("dataset.txt"), &summary)?;
    Ok(summary)
}

/// Pretrains the embeddings used by the configured method (MF-MLP for
/// cadc-mlp, MF otherwise) and writes `pretrained_{user,item}.emb`.
pub fn cmd_pretrain(config: &RunConfig) -> Result<Arc<Pretrained>> {
    let exp = Experiment::load(config)?;
    let p = exp.pretrain(PretrainVariant::for_method(config.method))?;
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    save_embeddings(&p.tables.user, &config.out.join("pretrained_user.emb"))?;
    save_embeddings(&p.tables.item, &config.out.join("pretrained_item.emb"))?;
    Ok(p)
}

/// Writes the configured method's training subset to `d_sel.tsv`.
pub fn cmd_compress(config: &RunConfig) -> Result<Selection> {
    let exp = Experiment::load(config)?;
    let selection = exp.select(config.method, config.ratio)?;
    write_file(&config.out.join("d_sel.tsv"), &interactions_tsv(&selection.d_sel))?;
    Ok(selection)
}

pub const USER_TOWER_FILE: &str = "user_tower.emb";
pub const ITEM_TOWER_FILE: &str = "item_tower.emb";
const TRAIN_TIMING_FILE: &str = "train_timing.txt";

/// Trains the configured model and writes every user and item tower output
/// as embedding files, which is all scoring needs.
pub fn cmd_train(config: &RunConfig) -> Result<TtnnModel<f32>> {
    let exp = Experiment::load(config)?;
    let ratio = if config.method == Method::GoldStandard { 1.0 } else { config.ratio };
    let (model, pretrain_s, train_s) = exp.train(config.method, ratio, config.effective_strategy())?;
    let scorer = model.scorer();
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    save_embeddings(&scorer.users, &config.out.join(USER_TOWER_FILE))?;
    save_embeddings(&scorer.items, &config.out.join(ITEM_TOWER_FILE))?;
    write_file(
        &config.out.join(TRAIN_TIMING_FILE),
        &format!("pretrain_s = {pretrain_s}\ntrain_s = {train_s}\n"),
    )?;
    Ok(model)
}

fn read_timing(path: &Path) -> (f64, f64) {
    let mut t = (0.0, 0.0);
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines() {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim().parse::<f64>())) {
                Some(("pretrain_s", Ok(v))) => t.0 = v,
                Some(("train_s", Ok(v))) => t.1 = v,
                _ => {}
            }
        }
    }
    t
}

/// Scores the test split with tower outputs saved by [`cmd_train`] in
/// `config.out` and writes `metrics.csv`.
pub fn cmd_evaluate(config: &RunConfig) -> Result<MetricsReport> {
    let exp = Experiment::load(config)?;
    let users: Matrix<f32> = load_embeddings(&config.out.join(USER_TOWER_FILE))?;
    let items: Matrix<f32> = load_embeddings(&config.out.join(ITEM_TOWER_FILE))?;
    let ds = exp.dataset();
    if users.rows() != ds.n_users() || items.rows() != ds.n_items() || users.cols() != items.cols() {
        return Err(ConfigError::Invalid(format!(
            "tower outputs {:?} / {:?} do not match {} users x {} items",
            users.shape(),
            items.shape(),
            ds.n_users(),
            ds.n_items()
        ))
        .into());
    }
    let metrics = eval::evaluate(&TowerScorer { users, items }, &exp.split, 10)?;
    let (pretrain_seconds, train_seconds) = read_timing(&config.out.join(TRAIN_TIMING_FILE));
    let report = MetricsReport {
        method: config.method.to_string(),
        dataset: config.dataset_name.clone(),
        ratio: if config.method == Method::GoldStandard { 1.0 } else { config.ratio },
        seed: config.seed,
        hr_at_10: metrics.hr,
        ndcg_at_10: metrics.ndcg,
        pretrain_seconds,
        train_seconds,
    };
    write_metrics(&config.out, std::slice::from_ref(&report))?;
    Ok(report)
}
