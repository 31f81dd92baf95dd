//! Pretraining variant whose interaction function is an MLP over the
//! concatenated user and item embeddings instead of a biased dot product.
//! All parameters update jointly every epoch.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;

use super::{MfConfig, MfError, PretrainedEmbeddings, Result};
use crate::dataset::{Interaction, InteractionDataset, NegativeSampler};
use crate::nn::{
    bce_grad_logit, bce_loss, sigmoid, AdamState, Matrix, Mlp, MlpAdam, MlpBatchCache, MlpCache, MlpGrads, Scalar,
};
use crate::rng::{stream, streams};

/// Hidden widths of the interaction MLP; the output is a single logit.
pub const MF_MLP_HIDDEN: [usize; 2] = [128, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct MfMlpModel<T: Scalar = f32> {
    pub user_table: Matrix<T>,
    pub item_table: Matrix<T>,
    pub interaction: Mlp<T>,
}

impl<T: Scalar> MfMlpModel<T> {
    pub fn new(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(n_users, n_items, dim, &MF_MLP_HIDDEN, seed)
    }

    pub fn with_hidden(n_users: usize, n_items: usize, dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(MfError::InvalidDim(dim));
        }
        let mut rng = stream(seed, streams::INIT);
        let user_table = Matrix::normal(n_users, dim, 0.01, &mut rng);
        let item_table = Matrix::normal(n_items, dim, 0.01, &mut rng);
        let mut dims = vec![2 * dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let interaction = Mlp::new(&dims, &mut rng);
        Ok(Self {
            user_table,
            item_table,
            interaction,
        })
    }

    pub fn dim(&self) -> usize {
        self.user_table.cols()
    }

    pub fn n_users(&self) -> usize {
        self.user_table.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_table.rows()
    }

    fn input(&self, user: u32, item: u32, buf: &mut Vec<T>) {
        buf.clear();
        buf.extend_from_slice(self.user_table.row(user as usize));
        buf.extend_from_slice(self.item_table.row(item as usize));
    }

    pub fn logit(&self, user: u32, item: u32) -> f64 {
        let mut x = Vec::with_capacity(2 * self.dim());
        self.input(user, item, &mut x);
        let mut cache = MlpCache::default();
        self.interaction
            .forward_cached(&x, &mut cache)
            .expect("input width is 2·dim by construction");
        cache.output()[0].wide()
    }

    pub fn predict(&self, user: u32, item: u32) -> Result<f64> {
        if user as usize >= self.n_users() || item as usize >= self.n_items() {
            return Err(MfError::IndexOutOfRange {
                user,
                item,
                n_users: self.n_users(),
                n_items: self.n_items(),
            });
        }
        Ok(sigmoid(self.logit(user, item)))
    }

    /// Raw embedding rows (no bias column in this variant).
    pub fn export_embeddings(&self) -> PretrainedEmbeddings<T> {
        PretrainedEmbeddings {
            user: self.user_table.clone(),
            item: self.item_table.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfMlpGrads<T: Scalar = f32> {
    pub user: Matrix<T>,
    pub item: Matrix<T>,
    pub interaction: MlpGrads<T>,
}

impl<T: Scalar> MfMlpGrads<T> {
    fn zeros_like(model: &MfMlpModel<T>) -> Self {
        Self {
            user: Matrix::zeros(model.n_users(), model.dim()),
            item: Matrix::zeros(model.n_items(), model.dim()),
            interaction: MlpGrads::zeros_like(&model.interaction),
        }
    }
}

fn accumulate<T: Scalar>(
    model: &MfMlpModel<T>,
    examples: &[(u32, u32, f64)],
    scale: f64,
    cache: &mut MlpBatchCache<T>,
    grads: &mut MfMlpGrads<T>,
) -> f64 {
    let d = model.dim();
    let mut x = Matrix::zeros(examples.len(), 2 * d);
    for (r, &(u, i, _)) in examples.iter().enumerate() {
        let row = x.row_mut(r);
        row[..d].copy_from_slice(model.user_table.row(u as usize));
        row[d..].copy_from_slice(model.item_table.row(i as usize));
    }
    model
        .interaction
        .forward_batch(x, cache)
        .expect("input width is 2·dim by construction");
    let mut loss = 0.0;
    let mut g = Matrix::zeros(examples.len(), 1);
    for (r, &(_, _, y)) in examples.iter().enumerate() {
        let z = cache.output().get(r, 0).wide();
        loss += bce_loss(sigmoid(z), y);
        g.set(r, 0, T::cast(bce_grad_logit(z, y) * scale));
    }
    let mut grad_x = Matrix::zeros(0, 0);
    model
        .interaction
        .backward_batch(cache, g, &mut grads.interaction, Some(&mut grad_x))
        .expect("gradient shape matches output");
    for (r, &(u, i, _)) in examples.iter().enumerate() {
        let src = grad_x.row(r);
        for (dst, &v) in grads.user.row_mut(u as usize).iter_mut().zip(&src[..d]) {
            *dst += v;
        }
        for (dst, &v) in grads.item.row_mut(i as usize).iter_mut().zip(&src[d..]) {
            *dst += v;
        }
    }
    loss
}

/// Summed BCE loss and dense gradients over labelled examples.
pub fn mf_mlp_loss_and_grads<T: Scalar>(model: &MfMlpModel<T>, examples: &[(u32, u32, f64)]) -> (f64, MfMlpGrads<T>) {
    let mut grads = MfMlpGrads::zeros_like(model);
    let loss = accumulate(model, examples, 1.0, &mut MlpBatchCache::default(), &mut grads);
    (loss, grads)
}

#[derive(Debug, Clone)]
pub struct MfMlpTrained<T: Scalar = f32> {
    pub model: MfMlpModel<T>,
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

pub fn train_mf_mlp(
    positives: &[Interaction],
    dataset: &InteractionDataset,
    config: &MfConfig,
) -> Result<MfMlpTrained<f32>> {
    if positives.is_empty() {
        return Err(MfError::EmptyInput);
    }
    let start = Instant::now();
    let mut model = MfMlpModel::<f32>::new(dataset.n_users(), dataset.n_items(), config.dim, config.seed)?;
    let sampler = NegativeSampler::new(dataset);
    let mut grads = MfMlpGrads::zeros_like(&model);
    let mut cache = MlpBatchCache::default();
    let mut user_adam = AdamState::for_matrix(&model.user_table, config.adam);
    let mut item_adam = AdamState::for_matrix(&model.item_table, config.adam);
    let mut mlp_adam = MlpAdam::new(&model.interaction, config.adam);
    let mut user_mark = vec![false; model.n_users()];
    let mut item_mark = vec![false; model.n_items()];
    let (mut users, mut items) = (Vec::new(), Vec::new());
    let d = model.dim();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_seed = config.seed ^ epoch as u64;
        let negatives = sampler.sample(positives, config.negatives_per_positive, epoch_seed)?;
        let mut examples: Vec<(u32, u32, f64)> = positives
            .iter()
            .map(|p| (p.user, p.item, 1.0))
            .chain(negatives.pairs.iter().map(|&(u, i)| (u, i, 0.0)))
            .collect();
        examples.shuffle(&mut stream(epoch_seed, streams::SHUFFLE));

        let mut total = 0.0;
        for (b, batch) in examples.chunks(config.batch_size.max(1)).enumerate() {
            grads.interaction.zero();
            let loss = accumulate(&model, batch, 1.0 / batch.len() as f64, &mut cache, &mut grads);
            if !loss.is_finite() {
                return Err(MfError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss;
            users.clear();
            items.clear();
            for &(u, i, _) in batch {
                if !std::mem::replace(&mut user_mark[u as usize], true) {
                    users.push(u as usize);
                }
                if !std::mem::replace(&mut item_mark[i as usize], true) {
                    items.push(i as usize);
                }
            }
            mlp_adam.step(&mut model.interaction, &grads.interaction)?;
            user_adam.step_rows(&mut model.user_table, &grads.user, &users, 0..d)?;
            item_adam.step_rows(&mut model.item_table, &grads.item, &items, 0..d)?;
            for &r in &users {
                grads.user.row_mut(r).iter_mut().for_each(|g| *g = 0.0);
                user_mark[r] = false;
            }
            for &r in &items {
                grads.item.row_mut(r).iter_mut().for_each(|g| *g = 0.0);
                item_mark[r] = false;
            }
        }
        let mean = total / examples.len() as f64;
        debug!("mf-mlp epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    let seconds = start.elapsed().as_secs_f64();
    info!("mf-mlp pretraining: {} epochs in {seconds:.1}s", config.epochs);
    Ok(MfMlpTrained {
        model,
        epoch_losses,
        seconds,
    })
}
