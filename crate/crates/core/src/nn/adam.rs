use std::ops::Range;

use super::{check_len, LinearGrads, LinearLayer, Matrix, Mlp, MlpGrads, NnError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter tensor.
///
/// Entries whose gradient is exactly zero are skipped: their parameter and
/// both moments stay untouched. This makes a zero-gradient step a no-op for
/// any state and lets embedding tables update only the rows a batch touched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            config,
        }
    }

    pub fn for_matrix(m: &Matrix<T>, config: AdamConfig) -> Self {
        Self::new(m.rows() * m.cols(), config)
    }

    fn corrections(&mut self) -> (f64, f64) {
        self.t += 1;
        let t = self.t as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }

    #[inline]
    fn update_entry(&mut self, idx: usize, param: &mut T, g: T, c1: f64, c2: f64) {
        if g == T::zero() {
            return;
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let g = g.wide();
        let m = beta1 * self.m[idx].wide() + (1.0 - beta1) * g;
        let v = beta2 * self.v[idx].wide() + (1.0 - beta2) * g * g;
        self.m[idx] = T::cast(m);
        self.v[idx] = T::cast(v);
        let m_hat = m / c1;
        let v_hat = v / c2;
        *param = T::cast(param.wide() - lr * m_hat / (v_hat.sqrt() + eps));
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(params.len(), grads.len())?;
        let (c1, c2) = self.corrections();
        for (idx, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_entry(idx, p, g, c1, c2);
        }
        Ok(())
    }

    /// One step restricted to `rows × cols` of a matrix-shaped parameter.
    /// Equivalent to [`AdamState::step`] when every other entry has zero gradient.
    pub fn step_rows(
        &mut self,
        params: &mut Matrix<T>,
        grads: &Matrix<T>,
        rows: &[usize],
        cols: Range<usize>,
    ) -> Result<()> {
        if params.shape() != grads.shape() {
            return Err(NnError::ShapeMismatch {
                expected: params.shape(),
                got: grads.shape(),
            });
        }
        check_len(self.m.len(), params.rows() * params.cols())?;
        let width = params.cols();
        let (c1, c2) = self.corrections();
        for &r in rows {
            for c in cols.clone() {
                let idx = r * width + c;
                let g = grads.as_slice()[idx];
                let p = &mut params.as_mut_slice()[idx];
                self.update_entry(idx, p, g, c1, c2);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to `params` in place and increments `state.t`.
pub fn adam_step<T: Scalar>(
    params: &mut Matrix<T>,
    grads: &Matrix<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(NnError::ShapeMismatch {
            expected: params.shape(),
            got: grads.shape(),
        });
    }
    state.step(params.as_mut_slice(), grads.as_slice())
}

/// Adam state for a linear layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdam<T: Scalar = f32> {
    pub weight: AdamState<T>,
    pub bias: AdamState<T>,
}

impl<T: Scalar> LayerAdam<T> {
    pub fn new(layer: &LinearLayer<T>, config: AdamConfig) -> Self {
        Self {
            weight: AdamState::for_matrix(&layer.weight, config),
            bias: AdamState::new(layer.bias.len(), config),
        }
    }

    pub fn step(&mut self, layer: &mut LinearLayer<T>, grads: &LinearGrads<T>) -> Result<()> {
        if !layer.trainable {
            return Err(NnError::Frozen);
        }
        adam_step(&mut layer.weight, &grads.weight, &mut self.weight)?;
        self.bias.step(&mut layer.bias, &grads.bias)
    }
}

/// Adam state for every layer of an [`Mlp`]; frozen layers are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAdam<T: Scalar = f32> {
    layers: Vec<LayerAdam<T>>,
}

impl<T: Scalar> MlpAdam<T> {
    pub fn new(mlp: &Mlp<T>, config: AdamConfig) -> Self {
        Self {
            layers: mlp.layers.iter().map(|l| LayerAdam::new(l, config)).collect(),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp<T>, grads: &MlpGrads<T>) -> Result<()> {
        for ((state, layer), g) in self.layers.iter_mut().zip(&mut mlp.layers).zip(&grads.layers) {
            if layer.trainable {
                state.step(layer, g)?;
            }
        }
        Ok(())
    }
}
