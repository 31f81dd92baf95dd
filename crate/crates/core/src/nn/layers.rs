use rand::Rng;

use super::gemm::{gemm, View};
use super::{check_len, dot, Matrix, NnError, Result, Scalar};

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Passes `grad_out` through where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(x: &[T], grad_out: &[T]) -> Result<Vec<T>> {
    check_len(x.len(), grad_out.len())?;
    Ok(x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect())
}

/// Affine map `weight · x + bias` with `weight` stored as (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T: Scalar = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T: Scalar = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearGrads<T> {
    pub fn zeros_like(layer: &LinearLayer<T>) -> Self {
        Self {
            weight: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![T::zero(); layer.out_dim()],
        }
    }

    pub fn zero(&mut self) {
        self.weight.fill(T::zero());
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        check_len(weight.rows(), bias.len())?;
        Ok(Self {
            weight,
            bias,
            trainable: true,
        })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::xavier_uniform(out_dim, in_dim, rng),
            bias: vec![T::zero(); out_dim],
            trainable: true,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: vec![T::zero(); n],
            trainable: true,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        check_len(self.in_dim(), x.len())?;
        let mut out = vec![T::zero(); self.out_dim()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    #[inline]
    pub(crate) fn forward_into(&self, x: &[T], out: &mut [T]) {
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = T::cast(self.bias[o].wide() + dot(self.weight.row(o), x));
        }
    }

    /// Gradients of a scalar loss given `grad_out = dL/d(output)`.
    pub fn backward(&self, x: &[T], grad_out: &[T]) -> Result<(Vec<T>, Matrix<T>, Vec<T>)> {
        check_len(self.in_dim(), x.len())?;
        check_len(self.out_dim(), grad_out.len())?;
        let mut grads = LinearGrads::zeros_like(self);
        let mut grad_x = vec![T::zero(); self.in_dim()];
        self.backward_accumulate(x, grad_out, Some(&mut grads), Some(&mut grad_x));
        Ok((grad_x, grads.weight, grads.bias))
    }

    /// Adds this sample's parameter gradients into `acc` and writes the
    /// input gradient into `grad_x` when requested.
    pub(crate) fn backward_accumulate(
        &self,
        x: &[T],
        grad_out: &[T],
        acc: Option<&mut LinearGrads<T>>,
        grad_x: Option<&mut [T]>,
    ) {
        if let Some(acc) = acc {
            for (o, &g) in grad_out.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                acc.bias[o] += g;
                for (w, &xi) in acc.weight.row_mut(o).iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
        }
        if let Some(grad_x) = grad_x {
            let mut wide = vec![0.0f64; self.in_dim()];
            for (o, &g) in grad_out.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let g = g.wide();
                for (a, &w) in wide.iter_mut().zip(self.weight.row(o)) {
                    *a += w.wide() * g;
                }
            }
            for (dst, a) in grad_x.iter_mut().zip(wide) {
                *dst = T::cast(a);
            }
        }
    }
}

impl<T: Scalar> LinearLayer<T> {
    /// `out = x · weightᵀ + bias` for a batch of row vectors.
    pub(crate) fn forward_batch_into(&self, x: &Matrix<T>, out: &mut Matrix<T>) {
        let (n, d_in, d_out) = (x.rows(), self.in_dim(), self.out_dim());
        out.reset(n, d_out);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(
            n,
            d_in,
            d_out,
            View::rows(x.as_slice(), d_in),
            View::transposed(self.weight.as_slice(), d_in),
            T::one(),
            out.as_mut_slice(),
        );
    }

    /// Batched [`LinearLayer::backward_accumulate`]: `acc += gᵀ·x` and
    /// `grad_x = g·weight`.
    pub(crate) fn backward_batch(
        &self,
        x: &Matrix<T>,
        g: &Matrix<T>,
        acc: Option<&mut LinearGrads<T>>,
        grad_x: Option<&mut Matrix<T>>,
    ) {
        let (n, d_in, d_out) = (x.rows(), self.in_dim(), self.out_dim());
        if let Some(acc) = acc {
            gemm(
                d_out,
                n,
                d_in,
                View::transposed(g.as_slice(), d_out),
                View::rows(x.as_slice(), d_in),
                T::one(),
                acc.weight.as_mut_slice(),
            );
            for r in 0..n {
                for (b, &v) in acc.bias.iter_mut().zip(g.row(r)) {
                    *b += v;
                }
            }
        }
        if let Some(gx) = grad_x {
            gx.reset(n, d_in);
            gemm(
                n,
                d_out,
                d_in,
                View::rows(g.as_slice(), d_out),
                View::rows(self.weight.as_slice(), d_in),
                T::zero(),
                gx.as_mut_slice(),
            );
        }
    }
}

/// Stack of linear layers with ReLU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    pub layers: Vec<LinearLayer<T>>,
}

/// Per-sample activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone, Default)]
pub struct MlpCache<T: Scalar = f32> {
    /// Input fed to each layer (post-activation of the previous one).
    inputs: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<T>>,
}

/// Activations of a whole batch, one row per sample.
#[derive(Debug, Clone)]
pub struct MlpBatchCache<T: Scalar = f32> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
}

impl<T: Scalar> Default for MlpBatchCache<T> {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            pre: Vec::new(),
        }
    }
}

impl<T: Scalar> MlpBatchCache<T> {
    /// Final-layer output, `batch × out_dim`.
    pub fn output(&self) -> &Matrix<T> {
        self.pre.last().expect("forward_batch ran")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T: Scalar = f32> {
    pub layers: Vec<LinearGrads<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            layers: mlp.layers.iter().map(LinearGrads::zeros_like).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.layers.iter_mut().for_each(LinearGrads::zero);
    }
}

impl<T: Scalar> Mlp<T> {
    /// Builds `dims.len() - 1` Xavier-initialized layers, `dims[0]` being the input width.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least an input and an output width");
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::xavier(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<LinearLayer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            check_len(pair[0].out_dim(), pair[1].in_dim())?;
        }
        if layers.is_empty() {
            return Err(NnError::DimensionMismatch { expected: 1, got: 0 });
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.layers.iter_mut().for_each(|l| l.trainable = trainable);
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    pub fn forward_cached(&self, x: &[T], cache: &mut MlpCache<T>) -> Result<()> {
        check_len(self.in_dim(), x.len())?;
        let n = self.layers.len();
        cache.inputs.resize_with(n, Vec::new);
        cache.pre.resize_with(n, Vec::new);
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = &mut cache.pre[l];
            pre.clear();
            pre.resize(layer.out_dim(), T::zero());
            layer.forward_into(&cache.inputs[l], pre);
            if l + 1 < n {
                let next = relu(&cache.pre[l]);
                cache.inputs[l + 1] = next;
            }
        }
        Ok(())
    }

    /// Backpropagates `grad_out` through the activations in `cache`.
    /// Frozen layers contribute no parameter gradients but still pass
    /// gradients to their input.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        grad_out: &[T],
        grads: &mut MlpGrads<T>,
        grad_input: Option<&mut [T]>,
    ) -> Result<()> {
        check_len(self.out_dim(), grad_out.len())?;
        let n = self.layers.len();
        let mut grad = grad_out.to_vec();
        let mut grad_input = grad_input;
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let acc = if layer.trainable {
                Some(&mut grads.layers[l])
            } else {
                None
            };
            if l == 0 {
                layer.backward_accumulate(&cache.inputs[0], &grad, acc, grad_input.as_deref_mut());
            } else {
                let mut gx = vec![T::zero(); layer.in_dim()];
                layer.backward_accumulate(&cache.inputs[l], &grad, acc, Some(&mut gx));
                grad = relu_backward(&cache.pre[l - 1], &gx)?;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Mlp<T> {
    /// Forward pass over every row of `x` at once.
    pub fn forward_batch(&self, x: Matrix<T>, cache: &mut MlpBatchCache<T>) -> Result<()> {
        check_len(self.in_dim(), x.cols())?;
        let n = self.layers.len();
        cache.inputs.resize_with(n, || Matrix::zeros(0, 0));
        cache.pre.resize_with(n, || Matrix::zeros(0, 0));
        cache.inputs[0] = x;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_batch_into(&cache.inputs[l], &mut cache.pre[l]);
            if l + 1 < n {
                let pre = &cache.pre[l];
                let next = &mut cache.inputs[l + 1];
                next.reset(pre.rows(), pre.cols());
                for (dst, &v) in next.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *dst = if v > T::zero() { v } else { T::zero() };
                }
            }
        }
        Ok(())
    }

    /// Batched [`Mlp::backward`]; `grad_out` is `batch × out_dim` and
    /// parameter gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        cache: &MlpBatchCache<T>,
        grad_out: Matrix<T>,
        grads: &mut MlpGrads<T>,
        mut grad_input: Option<&mut Matrix<T>>,
    ) -> Result<()> {
        let batch = cache.inputs.first().map_or(0, Matrix::rows);
        if grad_out.shape() != (batch, self.out_dim()) {
            return Err(NnError::ShapeMismatch {
                expected: (batch, self.out_dim()),
                got: grad_out.shape(),
            });
        }
        let mut grad = grad_out;
        let mut gx = Matrix::zeros(0, 0);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let acc = if layer.trainable {
                Some(&mut grads.layers[l])
            } else {
                None
            };
            if l == 0 {
                layer.backward_batch(&cache.inputs[0], &grad, acc, grad_input.as_deref_mut());
            } else {
                layer.backward_batch(&cache.inputs[l], &grad, acc, Some(&mut gx));
                for (g, &p) in gx.as_mut_slice().iter_mut().zip(cache.pre[l - 1].as_slice()) {
                    if p <= T::zero() {
                        *g = T::zero();
                    }
                }
                std::mem::swap(&mut grad, &mut gx);
            }
        }
        Ok(())
    }
}

impl<T: Scalar> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}
