//! Matrix-factorization pretraining of user and item embeddings.
//!
//! Each table row is `[latent..., bias]`: the latent prefix takes part in
//! the dot product and the last column is the per-entity bias. Together
//! with a global bias this gives
//! `ŷ(u, i) = σ(u′·v′ + u_bias + v_bias + b)`.
//!
//! Training alternates at epoch granularity: even epochs update the user
//! table, odd epochs the item table, and the global bias moves every epoch.

mod mlp;

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::dataset::{DatasetError, Interaction, InteractionDataset, NegativeSampler, NegativeSet};
use crate::nn::{bce_grad_logit, bce_loss, dot, sigmoid, AdamConfig, AdamState, Matrix, NnError, Scalar};
use crate::rng::{stream, streams};

pub use mlp::{mf_mlp_loss_and_grads, train_mf_mlp, MfMlpGrads, MfMlpModel, MfMlpTrained, MF_MLP_HIDDEN};

#[derive(Debug, Error)]
pub enum MfError {
    #[error("embedding width must be at least 2 (one latent column plus the bias), got {0}")]
    InvalidDim(usize),
    #[error("user {user} / item {item} out of range for {n_users} x {n_items} tables")]
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
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, MfError>;

/// User and item tables handed from pretraining to the two-tower model.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings<T: Scalar = f32> {
    pub user: Matrix<T>,
    pub item: Matrix<T>,
}

impl<T: Scalar> PretrainedEmbeddings<T> {
    pub fn width(&self) -> usize {
        self.user.cols()
    }

    pub fn cast<U: Scalar>(&self) -> PretrainedEmbeddings<U> {
        PretrainedEmbeddings {
            user: self.user.cast(),
            item: self.item.cast(),
        }
    }
}

/// Biased matrix-factorization model.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel<T: Scalar = f32> {
    pub user_table: Matrix<T>,
    pub item_table: Matrix<T>,
    pub global_bias: T,
}

impl<T: Scalar> MfModel<T> {
    /// Latent columns ~ N(0, 0.01²); bias column and global bias start at 0.
    pub fn new(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(MfError::InvalidDim(dim));
        }
        let mut rng = stream(seed, streams::INIT);
        let mut user_table = Matrix::normal(n_users, dim, 0.01, &mut rng);
        let mut item_table = Matrix::normal(n_items, dim, 0.01, &mut rng);
        for table in [&mut user_table, &mut item_table] {
            for r in 0..table.rows() {
                table.set(r, dim - 1, T::zero());
            }
        }
        Ok(Self {
            user_table,
            item_table,
            global_bias: T::zero(),
        })
    }

    pub fn from_parts(user_table: Matrix<T>, item_table: Matrix<T>, global_bias: T) -> Result<Self> {
        if user_table.cols() < 2 {
            return Err(MfError::InvalidDim(user_table.cols()));
        }
        if user_table.cols() != item_table.cols() {
            return Err(NnError::DimensionMismatch {
                expected: user_table.cols(),
                got: item_table.cols(),
            }
            .into());
        }
        Ok(Self {
            user_table,
            item_table,
            global_bias,
        })
    }

    /// Total row width including the bias column.
    pub fn dim(&self) -> usize {
        self.user_table.cols()
    }

    pub fn n_users(&self) -> usize {
        self.user_table.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_table.rows()
    }

    fn check(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.n_users() || item as usize >= self.n_items() {
            return Err(MfError::IndexOutOfRange {
                user,
                item,
                n_users: self.n_users(),
                n_items: self.n_items(),
            });
        }
        Ok(())
    }

    /// Pre-sigmoid score. Panics on out-of-range indices.
    #[inline]
    pub fn logit(&self, user: u32, item: u32) -> f64 {
        let d = self.dim();
        let u = self.user_table.row(user as usize);
        let v = self.item_table.row(item as usize);
        dot(&u[..d - 1], &v[..d - 1]) + u[d - 1].wide() + v[d - 1].wide() + self.global_bias.wide()
    }

    pub fn predict(&self, user: u32, item: u32) -> Result<f64> {
        self.check(user, item)?;
        Ok(sigmoid(self.logit(user, item)))
    }

    pub fn export_embeddings(&self) -> PretrainedEmbeddings<T> {
        PretrainedEmbeddings {
            user: self.user_table.clone(),
            item: self.item_table.clone(),
        }
    }
}

/// Unnormalized BCE: `-Σ_pos log ŷ - Σ_neg log(1 - ŷ)`.
pub fn mf_loss<T: Scalar>(model: &MfModel<T>, positives: &[(u32, u32)], negatives: &NegativeSet) -> f64 {
    let pos: f64 = positives
        .iter()
        .map(|&(u, i)| bce_loss(sigmoid(model.logit(u, i)), 1.0))
        .sum();
    let neg: f64 = negatives
        .pairs
        .iter()
        .map(|&(u, i)| bce_loss(sigmoid(model.logit(u, i)), 0.0))
        .sum();
    pos + neg
}

/// Dense gradients of the summed BCE loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MfGrads<T: Scalar = f32> {
    pub user: Matrix<T>,
    pub item: Matrix<T>,
    pub global_bias: f64,
}

/// Summed loss over labelled `(user, item, label)` examples and its
/// gradient with respect to every parameter.
pub fn mf_loss_and_grads<T: Scalar>(model: &MfModel<T>, examples: &[(u32, u32, f64)]) -> (f64, MfGrads<T>) {
    let mut grads = MfGrads {
        user: Matrix::zeros(model.n_users(), model.dim()),
        item: Matrix::zeros(model.n_items(), model.dim()),
        global_bias: 0.0,
    };
    let loss = accumulate(model, examples, 1.0, &mut grads, true, true);
    (loss, grads)
}

/// Adds `scale`-weighted gradients into `grads` and returns the summed loss.
fn accumulate<T: Scalar>(
    model: &MfModel<T>,
    examples: &[(u32, u32, f64)],
    scale: f64,
    grads: &mut MfGrads<T>,
    users: bool,
    items: bool,
) -> f64 {
    let d = model.dim();
    let mut loss = 0.0;
    for &(u, i, y) in examples {
        let z = model.logit(u, i);
        loss += bce_loss(sigmoid(z), y);
        let g = bce_grad_logit(z, y) * scale;
        grads.global_bias += g;
        let gt = T::cast(g);
        if users {
            let v = model.item_table.row(i as usize);
            let gu = grads.user.row_mut(u as usize);
            for k in 0..d - 1 {
                gu[k] += gt * v[k];
            }
            gu[d - 1] += gt;
        }
        if items {
            let uu = model.user_table.row(u as usize);
            let gv = grads.item.row_mut(i as usize);
            for k in 0..d - 1 {
                gv[k] += gt * uu[k];
            }
            gv[d - 1] += gt;
        }
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfConfig {
    /// Row width including the bias column.
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            dim: 96,
            epochs: 100,
            batch_size: 1024,
            negatives_per_positive: 1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Which table an epoch updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Users,
    Items,
}

impl Phase {
    pub fn of_epoch(epoch: usize) -> Self {
        if epoch.is_multiple_of(2) {
            Phase::Users
        } else {
            Phase::Items
        }
    }
}

/// Epoch-by-epoch MF trainer; [`train_mf`] drives it to completion.
pub struct MfTrainer<'a, T: Scalar = f32> {
    pub model: MfModel<T>,
    config: MfConfig,
    positives: &'a [Interaction],
    sampler: NegativeSampler,
    user_adam: AdamState<T>,
    item_adam: AdamState<T>,
    bias_adam: AdamState<f64>,
    grads: MfGrads<T>,
}

impl<'a, T: Scalar> MfTrainer<'a, T> {
    pub fn new(positives: &'a [Interaction], dataset: &InteractionDataset, config: MfConfig) -> Result<Self> {
        if positives.is_empty() {
            return Err(MfError::EmptyInput);
        }
        let model = MfModel::new(dataset.n_users(), dataset.n_items(), config.dim, config.seed)?;
        Ok(Self::with_model(model, positives, dataset, config))
    }

    pub fn with_model(
        model: MfModel<T>,
        positives: &'a [Interaction],
        dataset: &InteractionDataset,
        config: MfConfig,
    ) -> Self {
        let grads = MfGrads {
            user: Matrix::zeros(model.n_users(), model.dim()),
            item: Matrix::zeros(model.n_items(), model.dim()),
            global_bias: 0.0,
        };
        Self {
            user_adam: AdamState::for_matrix(&model.user_table, config.adam),
            item_adam: AdamState::for_matrix(&model.item_table, config.adam),
            bias_adam: AdamState::new(1, config.adam),
            sampler: NegativeSampler::new(dataset),
            model,
            config,
            positives,
            grads,
        }
    }

    /// Runs one epoch and returns its mean per-example loss.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<f64> {
        let epoch_seed = self.config.seed ^ epoch as u64;
        let negatives = self
            .sampler
            .sample(self.positives, self.config.negatives_per_positive, epoch_seed)?;
        let mut examples: Vec<(u32, u32, f64)> = self
            .positives
            .iter()
            .map(|p| (p.user, p.item, 1.0))
            .chain(negatives.pairs.iter().map(|&(u, i)| (u, i, 0.0)))
            .collect();
        examples.shuffle(&mut stream(epoch_seed, streams::SHUFFLE));

        let phase = Phase::of_epoch(epoch);
        let d = self.model.dim();
        let mut total = 0.0;
        let mut touched = Vec::new();
        let mut marked = vec![
            false;
            match phase {
                Phase::Users => self.model.n_users(),
                Phase::Items => self.model.n_items(),
            }
        ];
        for (b, batch) in examples.chunks(self.config.batch_size.max(1)).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            self.grads.global_bias = 0.0;
            let loss = accumulate(
                &self.model,
                batch,
                scale,
                &mut self.grads,
                phase == Phase::Users,
                phase == Phase::Items,
            );
            if !loss.is_finite() {
                return Err(MfError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss;

            touched.clear();
            for &(u, i, _) in batch {
                let r = match phase {
                    Phase::Users => u,
                    Phase::Items => i,
                } as usize;
                if !marked[r] {
                    marked[r] = true;
                    touched.push(r);
                }
            }
            let (table, grads, adam) = match phase {
                Phase::Users => (&mut self.model.user_table, &mut self.grads.user, &mut self.user_adam),
                Phase::Items => (&mut self.model.item_table, &mut self.grads.item, &mut self.item_adam),
            };
            adam.step_rows(table, grads, &touched, 0..d)?;
            for &r in &touched {
                grads.row_mut(r).iter_mut().for_each(|g| *g = T::zero());
                marked[r] = false;
            }
            let mut b_param = [self.model.global_bias.wide()];
            self.bias_adam.step(&mut b_param, &[self.grads.global_bias])?;
            self.model.global_bias = T::cast(b_param[0]);
        }
        Ok(total / examples.len() as f64)
    }

    pub fn into_model(self) -> MfModel<T> {
        self.model
    }
}

/// Result of a full MF training run.
#[derive(Debug, Clone)]
pub struct MfTrained<T: Scalar = f32> {
    pub model: MfModel<T>,
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Trains biased MF with alternating Adam on `positives` plus freshly
/// sampled negatives each epoch.
pub fn train_mf(
    positives: &[Interaction],
    dataset: &InteractionDataset,
    config: &MfConfig,
) -> Result<MfTrained<f32>> {
    let start = Instant::now();
    let mut trainer = MfTrainer::<f32>::new(positives, dataset, config.clone())?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = trainer.run_epoch(epoch)?;
        debug!("mf epoch {epoch}: loss {loss:.5}");
        epoch_losses.push(loss);
    }
    let seconds = start.elapsed().as_secs_f64();
    info!(
        "mf pretraining: {} epochs in {seconds:.1}s, final loss {:.5}",
        config.epochs,
        epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(MfTrained {
        model: trainer.into_model(),
        epoch_losses,
        seconds,
    })
}
