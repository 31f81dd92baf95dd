//! Two-tower model over `[id embedding; side features]`.
//!
//! Each tower is an MLP ending in an `emb_dim`-wide vector; the score is the
//! sigmoid of the dot product of the two tower outputs. How the id
//! embeddings relate to pretrained MF tables is set by [`StrategyKind`].

mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::{DatasetError, FeatureTable, InteractionDataset};
use crate::mf::PretrainedEmbeddings;
use crate::nn::{dot, sigmoid, Matrix, Mlp, MlpBatchCache, MlpCache, MlpGrads, NnError, Scalar};
use crate::rng::{stream, streams};

pub use train::{train_ttnn, ttnn_loss_and_grads, TtnnGrads, TtnnTrainConfig, TtnnTrainReport};

/// Width of tower outputs and id embeddings.
pub const EMBEDDING_WIDTH: usize = 96;
/// Hidden width of the linear/MLP adapters' middle layer.
pub const ADAPTER_HIDDEN: usize = 128;

#[derive(Debug, Error)]
pub enum TtnnError {
    #[error("strategy '{0}' requires pretrained embedding tables")]
    MissingPretrained(StrategyKind),
    #[error("pretrained {which} table is {got:?}, expected {expected:?}")]
    PretrainedShape {
        which: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("user {user} / item {item} out of range for {n_users} users and {n_items} items")]
    IndexOutOfRange {
        user: u32,
        item: u32,
        n_users: usize,
        n_items: usize,
    },
    #[error("no training interactions")]
    EmptyInput,
    #[error("non-finite loss in epoch {epoch} (batch {batch})")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("logQ correction needs q in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("logQ vector has {got} entries for {expected} items")]
    LogqLength { expected: usize, got: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, TtnnError>;

/// How pretrained MF embeddings enter the id-embedding tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Xavier-initialized, fully trainable ids; no pretraining.
    Random,
    /// First two-thirds of the columns copied from MF and frozen, the rest trainable.
    Hybrid,
    /// Copied from MF, fully trainable.
    Init,
    /// Copied from MF and frozen.
    InitFrz,
    /// Frozen MF ids passed through a trainable linear layer.
    Linear,
    /// Frozen MF ids passed through a trainable two-layer MLP.
    Mlp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Random,
        StrategyKind::Hybrid,
        StrategyKind::Init,
        StrategyKind::InitFrz,
        StrategyKind::Linear,
        StrategyKind::Mlp,
    ];

    pub fn needs_pretrained(self) -> bool {
        self != StrategyKind::Random
    }

    /// Number of leading id columns that never change during training.
    pub fn frozen_columns(self, width: usize) -> usize {
        match self {
            StrategyKind::Random | StrategyKind::Init => 0,
            StrategyKind::Hybrid => width * 2 / 3,
            StrategyKind::InitFrz | StrategyKind::Linear | StrategyKind::Mlp => width,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Random => "random",
            StrategyKind::Hybrid => "hybrid",
            StrategyKind::Init => "init",
            StrategyKind::InitFrz => "init-frz",
            StrategyKind::Linear => "linear",
            StrategyKind::Mlp => "mlp",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown integration strategy '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationStrategy<T: Scalar = f32> {
    pub kind: StrategyKind,
    pub pretrained: Option<PretrainedEmbeddings<T>>,
}

impl<T: Scalar> IntegrationStrategy<T> {
    pub fn random() -> Self {
        Self {
            kind: StrategyKind::Random,
            pretrained: None,
        }
    }

    pub fn pretrained(kind: StrategyKind, tables: PretrainedEmbeddings<T>) -> Self {
        Self {
            kind,
            pretrained: Some(tables),
        }
    }
}

/// Id-embedding table whose first `frozen_cols` columns are never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct IdEmbedding<T: Scalar = f32> {
    pub table: Matrix<T>,
    pub frozen_cols: usize,
}

impl<T: Scalar> IdEmbedding<T> {
    pub fn width(&self) -> usize {
        self.table.cols()
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.frozen_cols >= self.table.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtnnConfig {
    pub tower_hidden: Vec<usize>,
    pub emb_dim: usize,
    pub seed: u64,
}

impl Default for TtnnConfig {
    fn default() -> Self {
        Self {
            tower_hidden: vec![128],
            emb_dim: EMBEDDING_WIDTH,
            seed: 0,
        }
    }
}

/// One side (user or item) of the two-tower model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower<T: Scalar = f32> {
    pub ids: IdEmbedding<T>,
    pub adapter: Option<Mlp<T>>,
    pub mlp: Mlp<T>,
    pub features: Matrix<T>,
}

/// Activations of one tower pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct TowerCache<T: Scalar = f32> {
    adapter: MlpCache<T>,
    input: Vec<T>,
    mlp: MlpCache<T>,
}

impl<T: Scalar> TowerCache<T> {
    pub fn output(&self) -> &[T] {
        self.mlp.output()
    }
}

impl<T: Scalar> Tower<T> {
    pub fn len(&self) -> usize {
        self.ids.table.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward_cached(&self, row: usize, cache: &mut TowerCache<T>) {
        let id = self.ids.table.row(row);
        cache.input.clear();
        match &self.adapter {
            Some(adapter) => {
                adapter
                    .forward_cached(id, &mut cache.adapter)
                    .expect("adapter input width equals id width");
                cache.input.extend_from_slice(cache.adapter.output());
            }
            None => cache.input.extend_from_slice(id),
        }
        cache.input.extend_from_slice(self.features.row(row));
        self.mlp
            .forward_cached(&cache.input, &mut cache.mlp)
            .expect("tower input width equals id + feature width");
    }

    pub fn forward(&self, row: usize) -> Vec<T> {
        let mut cache = TowerCache::default();
        self.forward_cached(row, &mut cache);
        cache.output().to_vec()
    }

    /// Output vectors for every row.
    pub fn embed_all(&self) -> Matrix<T> {
        const CHUNK: usize = 1024;
        let width = self.mlp.out_dim();
        let mut out = Matrix::zeros(self.len(), width);
        let mut cache = TowerBatchCache::default();
        let rows: Vec<usize> = (0..self.len()).collect();
        for chunk in rows.chunks(CHUNK) {
            self.forward_batch(chunk, &mut cache);
            let y = cache.output();
            for (i, &r) in chunk.iter().enumerate() {
                out.row_mut(r).copy_from_slice(y.row(i));
            }
        }
        out
    }

    /// Forward pass for `rows`, one output row each, in order.
    pub(crate) fn forward_batch(&self, rows: &[usize], cache: &mut TowerBatchCache<T>) {
        let id_width = self.ids.width();
        let mut ids = Matrix::zeros(rows.len(), id_width);
        for (i, &r) in rows.iter().enumerate() {
            ids.row_mut(i).copy_from_slice(self.ids.table.row(r));
        }
        let embed_width = self.adapter.as_ref().map_or(id_width, Mlp::out_dim);
        let feat = self.features.cols();
        let mut input = Matrix::zeros(rows.len(), embed_width + feat);
        match &self.adapter {
            Some(adapter) => {
                adapter
                    .forward_batch(ids, &mut cache.adapter)
                    .expect("adapter input width equals id width");
                let out = cache.adapter.output();
                for i in 0..rows.len() {
                    input.row_mut(i)[..embed_width].copy_from_slice(out.row(i));
                }
            }
            None => {
                for i in 0..rows.len() {
                    input.row_mut(i)[..embed_width].copy_from_slice(ids.row(i));
                }
            }
        }
        if feat > 0 {
            for (i, &r) in rows.iter().enumerate() {
                input.row_mut(i)[embed_width..].copy_from_slice(self.features.row(r));
            }
        }
        self.mlp
            .forward_batch(input, &mut cache.mlp)
            .expect("tower input width equals id + feature width");
    }

    /// Accumulates gradients for the rows of the last `forward_batch`, given
    /// `grad_out` with one row per forwarded row. Frozen id columns and
    /// frozen layers receive nothing.
    pub(crate) fn backward_batch(
        &self,
        rows: &[usize],
        cache: &TowerBatchCache<T>,
        grad_out: Matrix<T>,
        grads: &mut TowerGrads<T>,
    ) {
        let id_width = self.ids.width();
        let needs_id_grad = !self.ids.is_fully_frozen();
        let needs_input_grad = needs_id_grad || self.adapter.is_some();
        let mut grad_input = Matrix::zeros(0, 0);
        self.mlp
            .backward_batch(
                &cache.mlp,
                grad_out,
                &mut grads.mlp,
                needs_input_grad.then_some(&mut grad_input),
            )
            .expect("gradient shape equals tower output shape");
        if !needs_input_grad {
            return;
        }
        let embed_width = self.adapter.as_ref().map_or(id_width, Mlp::out_dim);
        let grad_embed = grad_input.columns(0, embed_width);
        let grad_id = match (&self.adapter, grads.adapter.as_mut()) {
            (Some(adapter), Some(adapter_grads)) => {
                let mut grad_id = Matrix::zeros(0, 0);
                adapter
                    .backward_batch(
                        &cache.adapter,
                        grad_embed,
                        adapter_grads,
                        needs_id_grad.then_some(&mut grad_id),
                    )
                    .expect("adapter gradient shape");
                grad_id
            }
            _ => grad_embed,
        };
        if needs_id_grad {
            let from = self.ids.frozen_cols;
            for (i, &r) in rows.iter().enumerate() {
                let src = grad_id.row(i);
                let dst = grads.ids.row_mut(r);
                for c in from..id_width {
                    dst[c] += src[c];
                }
            }
        }
    }
}

/// Batched activations of one tower.
#[derive(Debug, Clone, Default)]
pub(crate) struct TowerBatchCache<T: Scalar = f32> {
    adapter: MlpBatchCache<T>,
    mlp: MlpBatchCache<T>,
}

impl<T: Scalar> TowerBatchCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.mlp.output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrads<T: Scalar = f32> {
    pub ids: Matrix<T>,
    pub adapter: Option<MlpGrads<T>>,
    pub mlp: MlpGrads<T>,
}

impl<T: Scalar> TowerGrads<T> {
    pub fn zeros_like(tower: &Tower<T>) -> Self {
        Self {
            ids: Matrix::zeros(tower.ids.table.rows(), tower.ids.table.cols()),
            adapter: tower.adapter.as_ref().map(MlpGrads::zeros_like),
            mlp: MlpGrads::zeros_like(&tower.mlp),
        }
    }
}

/// The two-tower recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct TtnnModel<T: Scalar = f32> {
    pub user: Tower<T>,
    pub item: Tower<T>,
    pub kind: StrategyKind,
}

fn features_to_matrix<T: Scalar>(table: &FeatureTable, rows: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, table.dim());
    if table.dim() > 0 {
        for r in 0..rows {
            for (dst, &src) in m.row_mut(r).iter_mut().zip(table.row(r)) {
                *dst = T::cast(src as f64);
            }
        }
    }
    m
}

fn build_ids<T: Scalar>(
    kind: StrategyKind,
    pretrained: Option<&Matrix<T>>,
    rows: usize,
    width: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> IdEmbedding<T> {
    let frozen_cols = kind.frozen_columns(width);
    let table = match (kind, pretrained) {
        (StrategyKind::Random, _) | (_, None) => Matrix::xavier_uniform(rows, width, rng),
        (StrategyKind::Hybrid, Some(p)) => {
            let mut t = Matrix::xavier_uniform(rows, width, rng);
            for r in 0..rows {
                t.row_mut(r)[..frozen_cols].copy_from_slice(&p.row(r)[..frozen_cols]);
            }
            t
        }
        (_, Some(p)) => p.clone(),
    };
    IdEmbedding { table, frozen_cols }
}

fn build_adapter<T: Scalar>(kind: StrategyKind, width: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Option<Mlp<T>> {
    match kind {
        StrategyKind::Linear => Some(Mlp::new(&[width, width], rng)),
        StrategyKind::Mlp => Some(Mlp::new(&[width, ADAPTER_HIDDEN, width], rng)),
        _ => None,
    }
}

/// Assembles a two-tower model for `dataset` under `strategy`.
///
/// Towers are `[id_width + feature_dim, tower_hidden..., emb_dim]` with
/// ReLU between layers. Id tables, adapters and towers draw from separate
/// random streams, so towers are identical across strategies for a seed.
pub fn build_ttnn<T: Scalar>(
    dataset: &InteractionDataset,
    strategy: IntegrationStrategy<T>,
    config: &TtnnConfig,
) -> Result<TtnnModel<T>> {
    let kind = strategy.kind;
    let width = config.emb_dim;
    let (n_users, n_items) = (dataset.n_users(), dataset.n_items());
    if kind.needs_pretrained() {
        let tables = strategy
            .pretrained
            .as_ref()
            .ok_or(TtnnError::MissingPretrained(kind))?;
        for (which, table, rows) in [("user", &tables.user, n_users), ("item", &tables.item, n_items)] {
            if table.shape() != (rows, width) {
                return Err(TtnnError::PretrainedShape {
                    which,
                    expected: (rows, width),
                    got: table.shape(),
                });
            }
        }
    }
    let pre_user = strategy.pretrained.as_ref().map(|p| &p.user);
    let pre_item = strategy.pretrained.as_ref().map(|p| &p.item);

    let mut id_rng = stream(config.seed, streams::INIT);
    let user_ids = build_ids(kind, pre_user, n_users, width, &mut id_rng);
    let item_ids = build_ids(kind, pre_item, n_items, width, &mut id_rng);

    let mut adapter_rng = stream(config.seed, streams::INIT + 16);
    let user_adapter = build_adapter(kind, width, &mut adapter_rng);
    let item_adapter = build_adapter(kind, width, &mut adapter_rng);

    let mut tower_rng = stream(config.seed, streams::INIT + 32);
    let tower_dims = |feat: usize| {
        let mut dims = vec![width + feat];
        dims.extend_from_slice(&config.tower_hidden);
        dims.push(config.emb_dim);
        dims
    };
    let user_feat = features_to_matrix(dataset.user_features(), n_users);
    let item_feat = features_to_matrix(dataset.item_features(), n_items);
    let user_mlp = Mlp::new(&tower_dims(user_feat.cols()), &mut tower_rng);
    let item_mlp = Mlp::new(&tower_dims(item_feat.cols()), &mut tower_rng);

    Ok(TtnnModel {
        user: Tower {
            ids: user_ids,
            adapter: user_adapter,
            mlp: user_mlp,
            features: user_feat,
        },
        item: Tower {
            ids: item_ids,
            adapter: item_adapter,
            mlp: item_mlp,
            features: item_feat,
        },
        kind,
    })
}

impl<T: Scalar> TtnnModel<T> {
    pub fn n_users(&self) -> usize {
        self.user.len()
    }

    pub fn n_items(&self) -> usize {
        self.item.len()
    }

    fn check(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.n_users() || item as usize >= self.n_items() {
            return Err(TtnnError::IndexOutOfRange {
                user,
                item,
                n_users: self.n_users(),
                n_items: self.n_items(),
            });
        }
        Ok(())
    }

    /// Dot product of the two tower outputs.
    pub fn logit(&self, user: u32, item: u32) -> Result<f64> {
        self.check(user, item)?;
        Ok(dot(&self.user.forward(user as usize), &self.item.forward(item as usize)))
    }

    /// Relevance probability `σ(T_user(F_user) · T_item(F_item))`.
    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        Ok(sigmoid(self.logit(user, item)?))
    }

    /// Precomputes every tower output for fast full-catalog scoring.
    pub fn scorer(&self) -> TowerScorer<T> {
        TowerScorer {
            users: self.user.embed_all(),
            items: self.item.embed_all(),
        }
    }
}

/// Cached tower outputs; scores are dot-product logits, which rank
/// identically to the sigmoid probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerScorer<T: Scalar = f32> {
    pub users: Matrix<T>,
    pub items: Matrix<T>,
}

impl<T: Scalar> TowerScorer<T> {
    #[inline]
    pub fn logit(&self, user: u32, item: u32) -> f64 {
        dot(self.users.row(user as usize), self.items.row(item as usize))
    }
}

/// Subtracts `ln q` from a logit.
pub fn logq_correct(logit: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(TtnnError::InvalidProbability(q));
    }
    Ok(logit - q.ln())
}
