//! Multilayer perceptron with explicit forward and backward passes.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Floating-point element type for network math.
pub trait Scalar: ndarray::NdFloat + rand::distr::uniform::SampleUniform {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Probabilities below this floor are clamped before taking logs.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Row-wise softmax; only valid on the output layer, and only trained
    /// through the fused cross-entropy path.
    Softmax,
}

impl Activation {
    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
            Activation::Identity => {}
            Activation::Softmax => {
                for mut row in z.axis_iter_mut(Axis(0)) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }

    /// d(activation)/d(pre-activation), expressed via the post-activation
    /// value. Softmax has no elementwise form and must go through
    /// [`cross_entropy_loss_and_delta`].
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
            Activation::Softmax => {
                panic!("softmax gradient must use the fused cross-entropy path")
            }
        }
    }
}

/// Fully connected network. Layer `l` computes
/// `a[l+1] = act[l](a[l] . w[l] + b[l])` with `a[0]` the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub(crate) weights: Vec<Array2<T>>,
    pub(crate) biases: Vec<Array1<T>>,
    pub(crate) activations: Vec<Activation>,
}

/// Post-activation values of every layer, input included.
pub struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[l+1]` is layer `l`'s output.
    pub activations: Vec<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.activations.last().expect("cache holds the input")
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub d_weights: Vec<Array2<T>>,
    pub d_biases: Vec<Array1<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Builds a network with Glorot-uniform weights and zero biases.
    /// `dims` lists layer widths input-first; every hidden layer uses
    /// `hidden`, the last layer uses `output`.
    pub fn glorot(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp<T>> {
        if dims.len() < 2 {
            return Err(domain("network needs at least input and output widths"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(domain("layer widths must all be >= 1"));
        }
        if hidden == Activation::Softmax {
            return Err(domain("softmax is only valid as the output activation"));
        }
        let n_layers = dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut activations = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let limit = T::from_f64((6.0 / (n_in + n_out) as f64).sqrt());
            let data: Vec<T> = (0..n_in * n_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(Array2::from_shape_vec((n_in, n_out), data).expect("sized above"));
            biases.push(Array1::zeros(n_out));
            activations.push(if l + 1 == n_layers { output } else { hidden });
        }
        Ok(Mlp {
            weights,
            biases,
            activations,
        })
    }

    /// Rebuilds a network from its architecture and a flat parameter vector.
    pub fn from_parts(
        dims: &[usize],
        activations: &[Activation],
        params: &[T],
    ) -> Result<Mlp<T>> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(domain(format!(
                "architecture mismatch: {} widths with {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(domain("layer widths must all be >= 1"));
        }
        let mut mlp = Mlp {
            weights: dims
                .windows(2)
                .map(|w| Array2::zeros((w[0], w[1])))
                .collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
            activations: activations.to_vec(),
        };
        mlp.set_params_flat(params)?;
        Ok(mlp)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].ncols()
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.weights.iter().map(Array2::ncols));
        dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>()
            + self.biases.iter().map(Array1::len).sum::<usize>()
    }

    /// All parameters as one vector: per layer, row-major weights then bias.
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`Mlp::params_flat`].
    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(domain(format!(
                "parameter count mismatch: expected {}, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = *it.next().expect("length checked");
            }
            for v in b.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Forward pass over a batch of rows.
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        assert_eq!(
            x.ncols(),
            self.input_dim(),
            "input width {} does not match network input {}",
            x.ncols(),
            self.input_dim()
        );
        let mut a = x.clone();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = a.dot(w) + b;
            act.apply(&mut z);
            a = z;
        }
        a
    }

    /// Forward pass that keeps every layer's output for backpropagation.
    pub fn forward_cached(&self, x: &Array2<T>) -> ForwardCache<T> {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.n_layers() + 1);
        activations.push(x.clone());
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = activations.last().expect("nonempty").dot(w) + b;
            act.apply(&mut z);
            activations.push(z);
        }
        ForwardCache { activations }
    }

    /// Backpropagates from `dL/d(output activation)`. The output layer must
    /// not be softmax. Returns parameter gradients and `dL/d(input)`.
    pub fn backward_from_output_grad(
        &self,
        cache: &ForwardCache<T>,
        dloss_doutput: &Array2<T>,
    ) -> (Gradients<T>, Array2<T>) {
        let last = self.n_layers() - 1;
        let out_act = self.activations[last];
        let mut delta = dloss_doutput.clone();
        Zip::from(&mut delta)
            .and(&cache.activations[last + 1])
            .for_each(|d, &a| *d = *d * out_act.derivative_from_output(a));
        self.backprop(cache, delta)
    }

    /// Backpropagates from `dL/d(output pre-activation)`, the form produced
    /// by the fused softmax cross-entropy loss.
    pub fn backward_from_logit_grad(
        &self,
        cache: &ForwardCache<T>,
        dloss_dlogits: &Array2<T>,
    ) -> (Gradients<T>, Array2<T>) {
        self.backprop(cache, dloss_dlogits.clone())
    }

    fn backprop(&self, cache: &ForwardCache<T>, mut delta: Array2<T>) -> (Gradients<T>, Array2<T>) {
        assert_eq!(
            cache.activations.len(),
            self.n_layers() + 1,
            "cache does not match network depth"
        );
        let mut d_weights: Vec<Array2<T>> = Vec::with_capacity(self.n_layers());
        let mut d_biases: Vec<Array1<T>> = Vec::with_capacity(self.n_layers());
        for l in (0..self.n_layers()).rev() {
            let a_prev = &cache.activations[l];
            d_weights.push(a_prev.t().dot(&delta));
            d_biases.push(delta.sum_axis(Axis(0)));
            let mut da = delta.dot(&self.weights[l].t());
            if l > 0 {
                let act = self.activations[l - 1];
                Zip::from(&mut da)
                    .and(&cache.activations[l])
                    .for_each(|g, &a| *g = *g * act.derivative_from_output(a));
            }
            delta = da;
        }
        d_weights.reverse();
        d_biases.reverse();
        (
            Gradients {
                d_weights,
                d_biases,
            },
            delta,
        )
    }
}

/// Mean squared error over all elements, with its gradient with respect to
/// the predictions. The loss is accumulated in f64.
pub fn mse_loss_and_grad<T: Scalar>(
    pred: &Array2<T>,
    target: &Array2<T>,
) -> (f64, Array2<T>) {
    assert_eq!(pred.dim(), target.dim(), "prediction/target shape mismatch");
    assert!(pred.len() > 0, "empty batch");
    let mut loss = 0.0f64;
    Zip::from(pred).and(target).for_each(|&p, &t| {
        let e = (p - t).to_f64();
        loss += e * e;
    });
    let n = pred.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut grad = pred - target;
    grad.mapv_inplace(|g| g * scale);
    (loss / n, grad)
}

/// Cross-entropy of row-wise class probabilities against integer class
/// targets, with the gradient with respect to the logits
/// (`(p - onehot) / batch`). Probabilities are floored before the log.
pub fn cross_entropy_loss_and_delta<T: Scalar>(
    probs: &Array2<T>,
    classes: &[usize],
) -> (f64, Array2<T>) {
    let batch = probs.nrows();
    assert_eq!(batch, classes.len(), "probability/target count mismatch");
    assert!(batch > 0, "empty batch");
    let n_classes = probs.ncols();
    let mut loss = 0.0f64;
    let mut delta = probs.clone();
    let inv_b = T::from_f64(1.0 / batch as f64);
    for (i, &c) in classes.iter().enumerate() {
        assert!(c < n_classes, "class {c} out of range for {n_classes} classes");
        let p = probs[[i, c]].to_f64().max(LOG_PROB_FLOOR);
        loss -= p.ln();
        delta[[i, c]] = delta[[i, c]] - T::one();
    }
    delta.mapv_inplace(|d| d * inv_b);
    (loss / batch as f64, delta)
}
