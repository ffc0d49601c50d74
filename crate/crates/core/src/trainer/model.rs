//! Softmax classifier `z = W h(x) + b` with an optional ReLU hidden layer
//! `h(x) = max(0, W_h x + b_h)`; without it `h(x) = x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::loss::{cross_entropy_from_logits, softmax};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// `p × d`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Classifier, `C × p`.
    pub w: Matrix,
    pub b: Vec<f64>,
    pub hidden: Option<HiddenLayer>,
}

/// Activations of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// Hidden pre-activation; empty without a hidden layer.
    pub pre: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Seeded `U(−1/√fan_in, 1/√fan_in)` weights and zero biases.
    /// `hidden_dim = 0` gives a linear model on the raw inputs.
    pub fn init(input_dim: usize, hidden_dim: usize, class_count: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || class_count < 2 {
            return Err(Error::domain(format!(
                "model needs input_dim >= 1 and at least 2 classes, got d={input_dim}, C={class_count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = (hidden_dim > 0).then(|| HiddenLayer {
            w: uniform_matrix(&mut rng, hidden_dim, input_dim),
            b: vec![0.0; hidden_dim],
        });
        let p = if hidden_dim > 0 { hidden_dim } else { input_dim };
        Ok(ModelParams {
            w: uniform_matrix(&mut rng, class_count, p),
            b: vec![0.0; class_count],
            hidden,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
            hidden: self.hidden.as_ref().map(|h| HiddenLayer {
                w: Matrix::zeros(h.w.rows(), h.w.cols()),
                b: vec![0.0; h.b.len()],
            }),
        }
    }

    pub fn class_count(&self) -> usize {
        self.w.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.w.cols(), |h| h.w.cols())
    }

    /// Parameter blocks in a fixed order: `W, b, W_h, b_h`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v = vec![self.w.data(), self.b.as_slice()];
        if let Some(h) = &self.hidden {
            v.push(h.w.data());
            v.push(h.b.as_slice());
        }
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.w.data_mut(), self.b.as_mut_slice()];
        if let Some(h) = &mut self.hidden {
            v.push(h.w.data_mut());
            v.push(h.b.as_mut_slice());
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `h(x)`, plus the hidden pre-activation.
    pub fn features(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(match &self.hidden {
            Some(layer) => {
                let mut pre = layer.w.mul_vec(x)?;
                pre.iter_mut().zip(&layer.b).for_each(|(a, b)| *a += b);
                let h = pre.iter().map(|&v| v.max(0.0)).collect();
                (pre, h)
            }
            None => (Vec::new(), x.to_vec()),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let (pre, h) = self.features(x)?;
        let mut z = self.w.mul_vec(&h)?;
        z.iter_mut().zip(&self.b).for_each(|(a, b)| *a += b);
        let p = softmax(&z);
        Ok(Forward { pre, h, z, p })
    }

    /// Index of the largest logit; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let f = self.forward(x)?;
        Ok(argmax(&f.z))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `−log p_target` computed from the logits.
pub fn ce_loss(forward: &Forward, target: usize) -> f64 {
    cross_entropy_from_logits(&forward.z, target)
}

/// `∂ CE / ∂z = p − e_y`.
pub fn ce_logit_grad(forward: &Forward, target: usize) -> Vec<f64> {
    let mut g = forward.p.clone();
    g[target] -= 1.0;
    g
}

/// Accumulate the gradient of `Σ_i (⟨dz_i, z_i⟩ + ⟨dh_i, h_i⟩)` with the
/// upstream vectors held constant. Callers pre-scale `dz`/`dh` by the batch
/// weights and `1/m`.
pub fn backward_from(
    params: &ModelParams,
    inputs: &[&[f64]],
    forwards: &[Forward],
    dz: &[Vec<f64>],
    dh: Option<&[Vec<f64>]>,
) -> Result<ModelParams> {
    if inputs.len() != forwards.len() || dz.len() != forwards.len() {
        return Err(Error::dim("backward: inputs, activations and upstream gradients differ in length"));
    }
    if let Some(dh) = dh {
        if dh.len() != forwards.len() {
            return Err(Error::dim("backward: feature gradients misaligned with batch"));
        }
    }
    let (c, p) = (params.class_count(), params.feature_dim());
    let mut grads = params.zeros_like();
    for (i, (f, g)) in forwards.iter().zip(dz).enumerate() {
        if g.len() != c {
            return Err(Error::dim(format!("logit gradient has {} entries, expected {c}", g.len())));
        }
        for k in 0..c {
            axpy(g[k], &f.h, grads.w.row_mut(k));
            grads.b[k] += g[k];
        }
        if let Some(gl) = grads.hidden.as_mut() {
            // δ = (Wᵀ dz + dh) ⊙ 1[pre > 0]
            let mut delta = params.w.tr_mul_vec(g)?;
            if let Some(dh) = dh {
                axpy(1.0, &dh[i], &mut delta);
            }
            for (d, &pre) in delta.iter_mut().zip(&f.pre) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            for (j, &dj) in delta.iter().enumerate().take(p) {
                if dj != 0.0 {
                    axpy(dj, inputs[i], gl.w.row_mut(j));
                    gl.b[j] += dj;
                }
            }
        }
    }
    Ok(grads)
}

/// Gradient of `(1/m) Σ w_i CE_i` over a batch. Weight decay is not
/// included; it is applied in [`sgd_step`].
pub fn backward(params: &ModelParams, inputs: &[&[f64]], targets: &[usize], weights: &[f64]) -> Result<ModelParams> {
    if inputs.len() != targets.len() || inputs.len() != weights.len() {
        return Err(Error::dim(format!(
            "batch of {} inputs, {} targets, {} weights",
            inputs.len(),
            targets.len(),
            weights.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let m = inputs.len() as f64;
    let forwards = inputs.iter().map(|x| params.forward(x)).collect::<Result<Vec<_>>>()?;
    let dz: Vec<Vec<f64>> = forwards
        .iter()
        .zip(targets.iter().zip(weights))
        .map(|(f, (&y, &w))| ce_logit_grad(f, y).into_iter().map(|g| g * w / m).collect())
        .collect();
    backward_from(params, inputs, &forwards, &dz, None)
}

/// `(1/m) Σ w_i CE_i`.
pub fn weighted_ce(params: &ModelParams, inputs: &[&[f64]], targets: &[usize], weights: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for ((x, &y), &w) in inputs.iter().zip(targets).zip(weights) {
        total += w * ce_loss(&params.forward(x)?, y);
    }
    Ok(total / inputs.len() as f64)
}

/// `v ← μ v + (g + λ θ)`, `θ ← θ − η v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    velocity: &mut ModelParams,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let shapes = |m: &ModelParams| m.blocks().iter().map(|b| b.len()).collect::<Vec<_>>();
    if shapes(params) != shapes(grads) || shapes(params) != shapes(velocity) {
        return Err(Error::dim("parameter, gradient and velocity shapes differ"));
    }
    for ((theta, g), v) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(velocity.blocks_mut())
    {
        for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *t;
            *t -= lr * *vi;
        }
    }
    Ok(())
}

/// `⟨a, b⟩` over all parameter blocks.
pub fn params_dot(a: &ModelParams, b: &ModelParams) -> f64 {
    a.blocks().iter().zip(b.blocks()).map(|(x, y)| dot(x, y)).sum()
}
