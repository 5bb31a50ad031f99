//! The learned target-value function.
//!
//! A single-hidden-layer network with rectified-linear units maps each
//! target's feature row to a scalar attractiveness. Outputs are mean-centered
//! (the attacker model is shift-invariant, so the centered gauge is the
//! canonical representative). Forward, reverse, and optimizer passes are
//! written out by hand: the KKT differentiation downstream needs exact
//! double-precision gradients rather than an autodiff graph.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Attractiveness;
use crate::seeding::rng_for;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Feature-to-attractiveness network plus the fixed coverage weight of the
/// attacker model it feeds. The coverage weight is known, not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `hidden_dim` rows of `input_dim` weights.
    pub weights_in: Vec<Vec<f64>>,
    pub bias_in: Vec<f64>,
    pub weights_out: Vec<f64>,
    pub bias_out: f64,
    pub w_coverage: f64,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub weights_in: Vec<Vec<f64>>,
    pub bias_in: Vec<f64>,
    pub weights_out: Vec<f64>,
    pub bias_out: f64,
}

impl ParamGradients {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        ParamGradients {
            weights_in: vec![vec![0.0; input_dim]; hidden_dim],
            bias_in: vec![0.0; hidden_dim],
            weights_out: vec![0.0; hidden_dim],
            bias_out: 0.0,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.weights_in {
            for v in row {
                *v *= factor;
            }
        }
        for v in &mut self.bias_in {
            *v *= factor;
        }
        for v in &mut self.weights_out {
            *v *= factor;
        }
        self.bias_out *= factor;
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = self.bias_out.abs();
        for row in &self.weights_in {
            for v in row {
                m = m.max(v.abs());
            }
        }
        for v in self.bias_in.iter().chain(&self.weights_out) {
            m = m.max(v.abs());
        }
        m
    }
}

/// Which hidden units a training step keeps; survivors are rescaled by
/// `1 / (1 - rate)` so the expected activation is unchanged.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub scale: f64,
}

impl DropoutMask {
    pub fn sample(hidden_dim: usize, rate: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param("dropout_rate", "must lie in [0, 1)"));
        }
        let keep: Vec<bool> = (0..hidden_dim).map(|_| rng.gen::<f64>() >= rate).collect();
        Ok(DropoutMask {
            keep,
            scale: 1.0 / (1.0 - rate),
        })
    }

    fn factor(&self, unit: usize) -> f64 {
        if self.keep[unit] {
            self.scale
        } else {
            0.0
        }
    }
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_model(input_dim: usize, hidden_dim: usize, w_coverage: f64, seed: u64) -> Result<ValueModel> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(Error::param("dims", "input and hidden dims must be positive"));
    }
    if !(w_coverage < 0.0) {
        return Err(Error::param("w_coverage", "must be negative"));
    }
    let mut rng = rng_for(seed, &[0x1417_u64]);
    let bound_in = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
    let weights_in: Vec<Vec<f64>> = (0..hidden_dim)
        .map(|_| (0..input_dim).map(|_| rng.gen_range(-bound_in..=bound_in)).collect())
        .collect();
    let bound_out = (6.0 / (hidden_dim + 1) as f64).sqrt();
    let weights_out: Vec<f64> = (0..hidden_dim)
        .map(|_| rng.gen_range(-bound_out..=bound_out))
        .collect();
    Ok(ValueModel {
        input_dim,
        hidden_dim,
        weights_in,
        bias_in: vec![0.0; hidden_dim],
        weights_out,
        bias_out: 0.0,
        w_coverage,
    })
}

/// A model whose output layer is zeroed: it predicts `phi = 0` on any input,
/// which is exactly the no-information baseline.
pub fn zero_output_model(input_dim: usize, hidden_dim: usize, w_coverage: f64) -> Result<ValueModel> {
    let mut model = init_model(input_dim, hidden_dim, w_coverage, 0)?;
    model.weights_out = vec![0.0; hidden_dim];
    model.bias_out = 0.0;
    Ok(model)
}

fn hidden_pre_activations(model: &ValueModel, features: &[f64]) -> Vec<f64> {
    model
        .weights_in
        .iter()
        .zip(&model.bias_in)
        .map(|(row, &b)| row.iter().zip(features).map(|(&w, &y)| w * y).sum::<f64>() + b)
        .collect()
}

/// Per-target attractiveness, mean-centered. A dropout mask (training only)
/// zeroes hidden units consistently across the targets of one forward pass.
pub fn forward(
    model: &ValueModel,
    features: &[Vec<f64>],
    dropout: Option<&DropoutMask>,
) -> Result<Attractiveness> {
    if features.is_empty() {
        return Err(Error::param("features", "no targets"));
    }
    if let Some(mask) = dropout {
        if mask.keep.len() != model.hidden_dim {
            return Err(Error::dim("dropout mask", model.hidden_dim, mask.keep.len()));
        }
    }
    let mut raw = Vec::with_capacity(features.len());
    for row in features {
        if row.len() != model.input_dim {
            return Err(Error::dim("features", model.input_dim, row.len()));
        }
        let z = hidden_pre_activations(model, row);
        let mut out = model.bias_out;
        for (j, &zj) in z.iter().enumerate() {
            let mut h = zj.max(0.0);
            if let Some(mask) = dropout {
                h *= mask.factor(j);
            }
            out += model.weights_out[j] * h;
        }
        raw.push(out);
    }
    Attractiveness::new(raw)
}

/// Gradients of `<grad_phi, phi(y)>` with respect to every parameter.
///
/// The centering step in `forward` contributes the projection
/// `(I - 11^T/|T|)` applied to `grad_phi`; a constant `grad_phi` therefore
/// produces zero gradients. The mask must match the forward pass being
/// differentiated.
pub fn backward(
    model: &ValueModel,
    features: &[Vec<f64>],
    grad_phi: &[f64],
    dropout: Option<&DropoutMask>,
) -> Result<ParamGradients> {
    if grad_phi.len() != features.len() {
        return Err(Error::dim("grad_phi", features.len(), grad_phi.len()));
    }
    if let Some(mask) = dropout {
        if mask.keep.len() != model.hidden_dim {
            return Err(Error::dim("dropout mask", model.hidden_dim, mask.keep.len()));
        }
    }
    let t = features.len() as f64;
    let mean = grad_phi.iter().sum::<f64>() / t;
    let mut grads = ParamGradients::zeros(model.input_dim, model.hidden_dim);

    for (row, &g_raw) in features.iter().zip(grad_phi) {
        if row.len() != model.input_dim {
            return Err(Error::dim("features", model.input_dim, row.len()));
        }
        let g = g_raw - mean;
        let z = hidden_pre_activations(model, row);
        grads.bias_out += g;
        for j in 0..model.hidden_dim {
            let factor = dropout.map_or(1.0, |m| m.factor(j));
            let h = z[j].max(0.0) * factor;
            grads.weights_out[j] += g * h;
            if z[j] > 0.0 && factor != 0.0 {
                let dz = g * model.weights_out[j] * factor;
                grads.bias_in[j] += dz;
                for (wg, &y) in grads.weights_in[j].iter_mut().zip(row) {
                    *wg += dz * y;
                }
            }
        }
    }
    Ok(grads)
}

/// Adam accumulators: first/second moments per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    step: u64,
    m: ParamGradients,
    v: ParamGradients,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(model: &ValueModel) -> Self {
        OptimizerState {
            step: 0,
            m: ParamGradients::zeros(model.input_dim, model.hidden_dim),
            v: ParamGradients::zeros(model.input_dim, model.hidden_dim),
        }
    }
}

fn adam_scalar(theta: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, bc1: f64, bc2: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
}

/// One adaptive-moment descent step. Minimizes: pass the gradient of a loss,
/// or a negated ascent gradient.
pub fn apply_update(
    model: &ValueModel,
    gradients: &ParamGradients,
    state: &OptimizerState,
    learning_rate: f64,
) -> Result<(ValueModel, OptimizerState)> {
    if gradients.weights_in.len() != model.hidden_dim
        || gradients.weights_out.len() != model.hidden_dim
    {
        return Err(Error::dim("gradients", model.hidden_dim, gradients.weights_in.len()));
    }
    let mut model = model.clone();
    let mut state = state.clone();
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for j in 0..model.hidden_dim {
        for f in 0..model.input_dim {
            adam_scalar(
                &mut model.weights_in[j][f],
                gradients.weights_in[j][f],
                &mut state.m.weights_in[j][f],
                &mut state.v.weights_in[j][f],
                learning_rate,
                bc1,
                bc2,
            );
        }
        adam_scalar(
            &mut model.bias_in[j],
            gradients.bias_in[j],
            &mut state.m.bias_in[j],
            &mut state.v.bias_in[j],
            learning_rate,
            bc1,
            bc2,
        );
        adam_scalar(
            &mut model.weights_out[j],
            gradients.weights_out[j],
            &mut state.m.weights_out[j],
            &mut state.v.weights_out[j],
            learning_rate,
            bc1,
            bc2,
        );
    }
    adam_scalar(
        &mut model.bias_out,
        gradients.bias_out,
        &mut state.m.bias_out,
        &mut state.v.bias_out,
        learning_rate,
        bc1,
        bc2,
    );
    Ok((model, state))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    weights_in: Vec<Vec<f64>>,
    bias_in: Vec<f64>,
    weights_out: Vec<f64>,
    bias_out: f64,
    w_coverage: f64,
}

/// Writes the model as a versioned JSON document. Floats are serialized with
/// shortest-round-trip precision, so save -> load -> save is byte-identical.
pub fn save_model(model: &ValueModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        input_dim: model.input_dim,
        hidden_dim: model.hidden_dim,
        weights_in: model.weights_in.clone(),
        bias_in: model.bias_in.clone(),
        weights_out: model.weights_out.clone(),
        bias_out: model.bias_out,
        w_coverage: model.w_coverage,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("checkpoint serialization");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ValueModel> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: file.schema_version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    if file.weights_in.len() != file.hidden_dim
        || file.weights_in.iter().any(|r| r.len() != file.input_dim)
        || file.bias_in.len() != file.hidden_dim
        || file.weights_out.len() != file.hidden_dim
    {
        return Err(Error::param("checkpoint", "parameter shapes disagree with dims"));
    }
    if !(file.w_coverage < 0.0) {
        return Err(Error::param("checkpoint", "w_coverage must be negative"));
    }
    Ok(ValueModel {
        input_dim: file.input_dim,
        hidden_dim: file.hidden_dim,
        weights_in: file.weights_in,
        bias_in: file.bias_in,
        weights_out: file.weights_out,
        bias_out: file.bias_out,
        w_coverage: file.w_coverage,
    })
}
