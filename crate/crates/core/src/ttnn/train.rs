use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;

use super::{logq_correct, Result, Tower, TowerBatchCache, TowerGrads, TtnnError, TtnnModel};
use crate::dataset::{Interaction, InteractionDataset, NegativeSampler};
use crate::nn::{bce_grad_logit, bce_loss, dot, sigmoid, AdamConfig, AdamState, Matrix, MlpAdam, Scalar};
use crate::rng::{stream, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct TtnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Per-item sampling probabilities; when set, training logits become
    /// `logit - ln q[item]`. Scoring is never corrected.
    pub logq: Option<Vec<f64>>,
}

impl Default for TtnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1024,
            negatives_per_positive: 1,
            adam: AdamConfig::default(),
            seed: 0,
            logq: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtnnTrainReport {
    pub seconds: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtnnGrads<T: Scalar = f32> {
    pub user: TowerGrads<T>,
    pub item: TowerGrads<T>,
}

impl<T: Scalar> TtnnGrads<T> {
    pub fn zeros_like(model: &TtnnModel<T>) -> Self {
        Self {
            user: TowerGrads::zeros_like(&model.user),
            item: TowerGrads::zeros_like(&model.item),
        }
    }
}

/// Deduplicates entities within a batch so each tower row runs forward and
/// backward once, with output gradients summed over its examples.
struct SideWorkspace<T: Scalar> {
    slot_of: Vec<u32>,
    rows: Vec<usize>,
    cache: TowerBatchCache<T>,
    grad_out: Vec<f64>,
    width: usize,
}

impl<T: Scalar> SideWorkspace<T> {
    fn new(tower: &Tower<T>) -> Self {
        Self {
            slot_of: vec![0; tower.len()],
            rows: Vec::new(),
            cache: TowerBatchCache::default(),
            grad_out: Vec::new(),
            width: tower.mlp.out_dim(),
        }
    }

    fn slot(&mut self, row: usize) -> usize {
        if self.slot_of[row] == 0 {
            self.rows.push(row);
            self.slot_of[row] = self.rows.len() as u32;
        }
        self.slot_of[row] as usize - 1
    }

    fn forward(&mut self, tower: &Tower<T>) {
        tower.forward_batch(&self.rows, &mut self.cache);
        self.grad_out.clear();
        self.grad_out.resize(self.rows.len() * self.width, 0.0);
    }

    fn backward(&self, tower: &Tower<T>, grads: &mut TowerGrads<T>) {
        let g = self.grad_out.iter().map(|&v| T::cast(v)).collect();
        let g = Matrix::from_vec(self.rows.len(), self.width, g).expect("one gradient row per slot");
        tower.backward_batch(&self.rows, &self.cache, g, grads);
    }

    fn reset(&mut self) {
        for &row in &self.rows {
            self.slot_of[row] = 0;
        }
        self.rows.clear();
    }
}

struct Workspace<T: Scalar> {
    user: SideWorkspace<T>,
    item: SideWorkspace<T>,
    slots: Vec<(usize, usize)>,
}

impl<T: Scalar> Workspace<T> {
    fn new(model: &TtnnModel<T>) -> Self {
        Self {
            user: SideWorkspace::new(&model.user),
            item: SideWorkspace::new(&model.item),
            slots: Vec::new(),
        }
    }
}

/// Adds `scale`-weighted gradients of the BCE loss over `examples` into
/// `grads`; returns the summed loss. Leaves the batch's unique rows in `ws`.
fn accumulate<T: Scalar>(
    model: &TtnnModel<T>,
    examples: &[(u32, u32, f64)],
    log_q: Option<&[f64]>,
    scale: f64,
    ws: &mut Workspace<T>,
    grads: &mut TtnnGrads<T>,
) -> f64 {
    ws.slots.clear();
    for &(u, i, _) in examples {
        let su = ws.user.slot(u as usize);
        let si = ws.item.slot(i as usize);
        ws.slots.push((su, si));
    }
    ws.user.forward(&model.user);
    ws.item.forward(&model.item);

    let width = ws.user.width;
    let mut loss = 0.0;
    for (&(_, i, y), &(su, si)) in examples.iter().zip(&ws.slots) {
        let uo = ws.user.cache.output().row(su);
        let io = ws.item.cache.output().row(si);
        let mut z = dot(uo, io);
        if let Some(lq) = log_q {
            z -= lq[i as usize];
        }
        loss += bce_loss(sigmoid(z), y);
        let g = bce_grad_logit(z, y) * scale;
        let gu = &mut ws.user.grad_out[su * width..(su + 1) * width];
        for (dst, &v) in gu.iter_mut().zip(io) {
            *dst += g * v.wide();
        }
        let gi = &mut ws.item.grad_out[si * width..(si + 1) * width];
        for (dst, &v) in gi.iter_mut().zip(uo) {
            *dst += g * v.wide();
        }
    }
    ws.user.backward(&model.user, &mut grads.user);
    ws.item.backward(&model.item, &mut grads.item);
    loss
}

fn log_probabilities(logq: Option<&[f64]>, n_items: usize) -> Result<Option<Vec<f64>>> {
    let Some(q) = logq else {
        return Ok(None);
    };
    if q.len() != n_items {
        return Err(TtnnError::LogqLength {
            expected: n_items,
            got: q.len(),
        });
    }
    // ln q per item; logq_correct(0, q) = -ln q also validates q
    q.iter()
        .map(|&p| logq_correct(0.0, p).map(|neg| -neg))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Summed training loss over labelled `(user, item, label)` examples and
/// the gradient with respect to every trainable parameter.
pub fn ttnn_loss_and_grads<T: Scalar>(
    model: &TtnnModel<T>,
    examples: &[(u32, u32, f64)],
    logq: Option<&[f64]>,
) -> Result<(f64, TtnnGrads<T>)> {
    for &(u, i, _) in examples {
        if u as usize >= model.n_users() || i as usize >= model.n_items() {
            return Err(TtnnError::IndexOutOfRange {
                user: u,
                item: i,
                n_users: model.n_users(),
                n_items: model.n_items(),
            });
        }
    }
    let log_q = log_probabilities(logq, model.n_items())?;
    let mut ws = Workspace::new(model);
    let mut grads = TtnnGrads::zeros_like(model);
    let loss = accumulate(model, examples, log_q.as_deref(), 1.0, &mut ws, &mut grads);
    Ok((loss, grads))
}

/// Adam states for one tower; `None` where parameters are frozen.
struct TowerOptim<T: Scalar> {
    ids: Option<AdamState<T>>,
    adapter: Option<MlpAdam<T>>,
    mlp: MlpAdam<T>,
}

impl<T: Scalar> TowerOptim<T> {
    fn new(tower: &Tower<T>, config: AdamConfig) -> Self {
        Self {
            ids: (!tower.ids.is_fully_frozen()).then(|| AdamState::for_matrix(&tower.ids.table, config)),
            adapter: tower.adapter.as_ref().map(|a| MlpAdam::new(a, config)),
            mlp: MlpAdam::new(&tower.mlp, config),
        }
    }

    fn step(&mut self, tower: &mut Tower<T>, grads: &mut TowerGrads<T>, rows: &[usize]) -> Result<()> {
        self.mlp.step(&mut tower.mlp, &grads.mlp)?;
        grads.mlp.zero();
        if let (Some(opt), Some(adapter), Some(g)) = (&mut self.adapter, &mut tower.adapter, &mut grads.adapter) {
            opt.step(adapter, g)?;
            g.zero();
        }
        if let Some(opt) = &mut self.ids {
            let cols = tower.ids.frozen_cols..tower.ids.width();
            opt.step_rows(&mut tower.ids.table, &grads.ids, rows, cols)?;
            for &r in rows {
                grads.ids.row_mut(r).iter_mut().for_each(|g| *g = T::zero());
            }
        }
        Ok(())
    }
}

/// Trains on `d_sel` positives plus freshly sampled negatives every epoch.
/// Frozen id columns and frozen layers are never written.
pub fn train_ttnn<T: Scalar>(
    model: &mut TtnnModel<T>,
    d_sel: &[Interaction],
    dataset: &InteractionDataset,
    config: &TtnnTrainConfig,
) -> Result<TtnnTrainReport> {
    if d_sel.is_empty() {
        return Err(TtnnError::EmptyInput);
    }
    let log_q = log_probabilities(config.logq.as_deref(), model.n_items())?;
    let start = Instant::now();
    let sampler = NegativeSampler::new(dataset);
    let mut ws = Workspace::new(model);
    let mut grads = TtnnGrads::zeros_like(model);
    let mut user_opt = TowerOptim::new(&model.user, config.adam);
    let mut item_opt = TowerOptim::new(&model.item, config.adam);

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_seed = config.seed ^ epoch as u64;
        let negatives = sampler.sample(d_sel, config.negatives_per_positive, epoch_seed)?;
        let mut examples: Vec<(u32, u32, f64)> = d_sel
            .iter()
            .map(|p| (p.user, p.item, 1.0))
            .chain(negatives.pairs.iter().map(|&(u, i)| (u, i, 0.0)))
            .collect();
        examples.shuffle(&mut stream(epoch_seed, streams::SHUFFLE));

        let mut total = 0.0;
        for (b, batch) in examples.chunks(config.batch_size.max(1)).enumerate() {
            let loss = accumulate(
                model,
                batch,
                log_q.as_deref(),
                1.0 / batch.len() as f64,
                &mut ws,
                &mut grads,
            );
            if !loss.is_finite() {
                return Err(TtnnError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss;
            user_opt.step(&mut model.user, &mut grads.user, &ws.user.rows)?;
            item_opt.step(&mut model.item, &mut grads.item, &ws.item.rows)?;
            ws.user.reset();
            ws.item.reset();
        }
        let mean = total / examples.len() as f64;
        debug!("ttnn epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    let seconds = start.elapsed().as_secs_f64();
    info!(
        "ttnn ({}) trained {} epochs on {} interactions in {seconds:.1}s",
        model.kind,
        config.epochs,
        d_sel.len()
    );
    Ok(TtnnTrainReport { seconds, epoch_losses })
}
