//! Experiment configuration as flat `key = value` text with `#` comments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::{FeatureSchema, InteractionFormat};
use crate::ttnn::StrategyKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// How the training subset is produced and whether pretraining is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GoldStandard,
    Random,
    Over,
    Under,
    Logq,
    Cadc,
    CadcMlp,
}

impl Method {
    /// Row order of the comparison table.
    pub const TABLE1: [Method; 7] = [
        Method::Random,
        Method::Over,
        Method::Under,
        Method::Logq,
        Method::CadcMlp,
        Method::Cadc,
        Method::GoldStandard,
    ];

    pub fn is_cadc(self) -> bool {
        matches!(self, Method::Cadc | Method::CadcMlp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GoldStandard => "gold-standard",
            Method::Random => "random",
            Method::Over => "over",
            Method::Under => "under",
            Method::Logq => "logq",
            Method::Cadc => "cadc",
            Method::CadcMlp => "cadc-mlp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::TABLE1
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Every experiment knob. Defaults reproduce the reference setup: 10% of
/// the train split, 100 epochs, width-96 embeddings, frozen MF init.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ratings: PathBuf,
    pub users: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub format: InteractionFormat,
    pub schema: FeatureSchema,
    /// Label written to the metrics CSV.
    pub dataset_name: String,
    pub method: Method,
    /// Only meaningful for the cadc methods; `None` means init-frz there.
    pub strategy: Option<StrategyKind>,
    /// Fraction of the train split kept, in (0, 1].
    pub ratio: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub emb_dim: usize,
    pub tower_hidden: Vec<usize>,
    pub batch_size: usize,
    pub negatives: usize,
    pub lr: f64,
    pub pretrain_lr: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ratings: PathBuf::from("ratings.dat"),
            users: None,
            items: None,
            format: InteractionFormat::MovielensDat,
            schema: FeatureSchema::None,
            dataset_name: "dataset".into(),
            method: Method::Cadc,
            strategy: None,
            ratio: 0.1,
            epochs: 100,
            pretrain_epochs: 100,
            emb_dim: 96,
            tower_hidden: vec![128],
            batch_size: 1024,
            negatives: 1,
            lr: 1e-3,
            pretrain_lr: 1e-3,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

const KEYS: [&str; 19] = [
    "ratings",
    "users",
    "items",
    "format",
    "schema",
    "dataset_name",
    "method",
    "strategy",
    "ratio",
    "epochs",
    "pretrain_epochs",
    "emb_dim",
    "tower_hidden",
    "batch_size",
    "negatives",
    "lr",
    "pretrain_lr",
    "seed",
    "out",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// The strategy actually used: init-frz by default for cadc methods,
    /// random id tables otherwise.
    pub fn effective_strategy(&self) -> StrategyKind {
        match (self.method.is_cadc(), self.strategy) {
            (true, Some(s)) => s,
            (true, None) => StrategyKind::InitFrz,
            (false, _) => StrategyKind::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(ConfigError::Invalid(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if let Some(s) = self.strategy {
            if !self.method.is_cadc() && s != StrategyKind::Random {
                return Err(ConfigError::Invalid(format!(
                    "strategy `{s}` requires a cadc method, got `{}`",
                    self.method
                )));
            }
            if self.method.is_cadc() && !s.needs_pretrained() {
                return Err(ConfigError::Invalid(format!(
                    "method `{}` needs a pretrained strategy, got `{s}`",
                    self.method
                )));
            }
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("emb_dim", self.emb_dim),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.method.is_cadc() && self.pretrain_epochs == 0 {
            return Err(ConfigError::Invalid("pretrain_epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.pretrain_lr > 0.0) {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "ratings" => self.ratings = PathBuf::from(value),
            "users" => self.users = optional_path(value),
            "items" => self.items = optional_path(value),
            "format" => self.format = parse_value(key, value)?,
            "schema" => self.schema = parse_value(key, value)?,
            "dataset_name" => self.dataset_name = value.into(),
            "method" => self.method = parse_value(key, value)?,
            "strategy" => {
                self.strategy = if value.is_empty() {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "ratio" => self.ratio = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "emb_dim" => self.emb_dim = parse_value(key, value)?,
            "tower_hidden" => {
                self.tower_hidden = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<_>>()?
            }
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "negatives" => self.negatives = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Parses config text over the defaults. Blank lines and `#` comments
    /// are ignored; keys may appear at most once. Does not validate.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey { line, key: key.into() });
            }
            config.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                other => other,
            })?;
            seen.push(key.to_string());
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Every key, one per line, in a fixed order. `parse` inverts this.
    pub fn serialize(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let hidden: Vec<String> = self.tower_hidden.iter().map(usize::to_string).collect();
        let values = [
            self.ratings.display().to_string(),
            path(&self.users),
            path(&self.items),
            self.format.to_string(),
            self.schema.to_string(),
            self.dataset_name.clone(),
            self.method.to_string(),
            self.strategy.map(|s| s.to_string()).unwrap_or_default(),
            self.ratio.to_string(),
            self.epochs.to_string(),
            self.pretrain_epochs.to_string(),
            self.emb_dim.to_string(),
            hidden.join(","),
            self.batch_size.to_string(),
            self.negatives.to_string(),
            self.lr.to_string(),
            self.pretrain_lr.to_string(),
            self.seed.to_string(),
            self.out.display().to_string(),
        ];
        let mut out = String::new();
        for (key, value) in KEYS.iter().zip(values) {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}
