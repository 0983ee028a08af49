//! Adam optimizer with bias correction.

use ndarray::{Array1, Array2, Zip};

use super::mlp::{Gradients, Mlp, Scalar};

/// Adam state for one network. Moment buffers are shaped like the network
/// they were created for; `step` panics if applied to a different shape.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m_w: Vec<Array2<T>>,
    v_w: Vec<Array2<T>>,
    m_b: Vec<Array1<T>>,
    v_b: Vec<Array1<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Creates an optimizer with zeroed moments and the usual defaults
    /// (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn new(mlp: &Mlp<T>, lr: f64) -> Adam<T> {
        Adam {
            lr: T::from_f64(lr),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            m_w: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Changes the learning rate mid-run; moments and step count carry over.
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::from_f64(lr);
    }

    pub fn lr(&self) -> f64 {
        self.lr.to_f64()
    }

    /// Applies one update to `mlp` in place.
    pub fn step(&mut self, mlp: &mut Mlp<T>, grads: &Gradients<T>) {
        assert_eq!(grads.d_weights.len(), self.m_w.len(), "gradient shape mismatch");
        self.t += 1;
        let one = T::one();
        let c1 = one / (one - self.beta1.powi(self.t));
        let c2 = one / (one - self.beta2.powi(self.t));
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);

        let apply = |p: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - lr * (*m * c1) / ((*v * c2).sqrt() + eps);
        };
        for l in 0..mlp.weights.len() {
            Zip::from(&mut mlp.weights[l])
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grads.d_weights[l])
                .for_each(|p, m, v, &g| apply(p, m, v, g));
            Zip::from(&mut mlp.biases[l])
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grads.d_biases[l])
                .for_each(|p, m, v, &g| apply(p, m, v, g));
        }
    }
}
