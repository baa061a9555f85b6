//! Feed-forward heads with hand-derived backward passes, the unit-norm
//! projection used for contrastive embeddings, Adam with L2 penalty and
//! checkpoint files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_container, write_container};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, rng, standard_normal, Matrix};

/// Fully connected layer `y = x·W + b`, `W` is `in × out`, `b` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Matrix,
    pub input: Matrix,
}

impl Linear {
    /// He-normal weights (std `sqrt(2 / in_dim)`), zero bias.
    pub fn he_init(in_dim: usize, out_dim: usize, seed: u64, stream: u64) -> Self {
        let mut r = rng(seed, stream);
        let std = (2.0 / in_dim.max(1) as f64).sqrt();
        Linear {
            weight: Matrix::filled_with(in_dim, out_dim, || standard_normal(&mut r) * std),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = matmul(x, &self.weight)?;
        y.add_row_vector(self.bias.data())?;
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, d_out: &Matrix) -> Result<LinearGrads> {
        if d_out.shape() != (x.rows(), self.out_dim()) {
            return Err(Error::shape(
                "Linear::backward",
                format!("d_out {:?} for input {:?}", d_out.shape(), x.shape()),
            ));
        }
        Ok(LinearGrads {
            weight: matmul_tn(x, d_out)?,
            bias: Matrix::new(1, self.out_dim(), d_out.column_sums())?,
            input: matmul_nt(d_out, &self.weight)?,
        })
    }
}

/// One-hidden-layer ReLU network: `ReLU(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnHead {
    pub name: String,
    pub hidden: Linear,
    pub output: Linear,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct FfnCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub hidden: Matrix,
}

#[derive(Debug, Clone)]
pub struct FfnGrads {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub input: Matrix,
}

impl FfnGrads {
    pub fn tensors(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

impl FfnHead {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: usize, out: usize, seed: u64, stream: u64) -> Self {
        FfnHead {
            name: name.into(),
            hidden: Linear::he_init(in_dim, hidden, seed, stream.wrapping_mul(2)),
            output: Linear::he_init(hidden, out, seed, stream.wrapping_mul(2) + 1),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FfnCache)> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "ffn_forward",
                format!("head {} expects {} inputs, got {}", self.name, self.in_dim(), x.cols()),
            ));
        }
        let pre = self.hidden.forward(x)?;
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let out = self.output.forward(&act)?;
        Ok((
            out,
            FfnCache {
                input: x.clone(),
                pre_activation: pre,
                hidden: act,
            },
        ))
    }

    /// Backpropagates `d_out` (and optionally an extra gradient arriving at
    /// the post-ReLU hidden activations, e.g. from a projection head).
    pub fn backward(&self, cache: &FfnCache, d_out: &Matrix, d_hidden: Option<&Matrix>) -> Result<FfnGrads> {
        let out_grads = self.output.backward(&cache.hidden, d_out)?;
        let mut d_act = out_grads.input;
        if let Some(extra) = d_hidden {
            d_act.add_assign(extra)?;
        }
        for (g, &z) in d_act.data_mut().iter_mut().zip(cache.pre_activation.data()) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        let hidden_grads = self.hidden.backward(&cache.input, &d_act)?;
        Ok(FfnGrads {
            w1: hidden_grads.weight,
            b1: hidden_grads.bias,
            w2: out_grads.weight,
            b2: out_grads.bias,
            input: hidden_grads.input,
        })
    }

    pub fn params(&self) -> [&Matrix; 4] {
        [&self.hidden.weight, &self.hidden.bias, &self.output.weight, &self.output.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    pub fn param_names(&self) -> [String; 4] {
        ["w1", "b1", "w2", "b2"].map(|p| format!("{}.{p}", self.name))
    }
}

/// Linear map followed by row-wise L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub name: String,
    pub linear: Linear,
}

const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    input: Matrix,
    norms: Vec<f64>,
    output: Matrix,
}

impl ProjectionHead {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, seed: u64, stream: u64) -> Self {
        ProjectionHead {
            name: name.into(),
            linear: Linear::he_init(in_dim, out_dim, seed, stream),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ProjectionCache)> {
        let mut z = self.linear.forward(x)?;
        let mut norms = Vec::with_capacity(z.rows());
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(MIN_NORM);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok((
            z.clone(),
            ProjectionCache {
                input: x.clone(),
                norms,
                output: z,
            },
        ))
    }

    /// Returns `(grads for W, grads for b, gradient w.r.t. the input)`.
    pub fn backward(&self, cache: &ProjectionCache, d_out: &Matrix) -> Result<LinearGrads> {
        // d/dz of z/|z| applied to d_out: (d − y(y·d)) / |z|
        let mut dz = d_out.clone();
        for r in 0..dz.rows() {
            let n = cache.norms[r];
            if n <= MIN_NORM {
                // a zero row has no direction; treat it as constant
                dz.row_mut(r).iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let y = cache.output.row(r);
            let proj: f64 = y.iter().zip(d_out.row(r)).map(|(a, b)| a * b).sum();
            for (g, &yv) in dz.row_mut(r).iter_mut().zip(y) {
                *g = (*g - yv * proj) / n;
            }
        }
        self.linear.backward(&cache.input, &dz)
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.linear.weight, &mut self.linear.bias]
    }

    pub fn params(&self) -> [&Matrix; 2] {
        [&self.linear.weight, &self.linear.bias]
    }

    pub fn param_names(&self) -> [String; 2] {
        ["w", "b"].map(|p| format!("{}.{p}", self.name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamOptions {
    pub lr: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply the L2 term as decoupled weight decay instead of adding
    /// `l2·θ` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamOptions {
    fn default() -> Self {
        AdamOptions {
            lr: 1e-5,
            l2: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decoupled: false,
        }
    }
}

/// First/second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        AdamState { m, v, t: 0 }
    }
}

/// One Adam update over parallel slices of parameters, gradients and names.
///
/// Every gradient is checked for finiteness before any parameter moves.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[&Matrix],
    names: &[String],
    state: &mut AdamState,
    opts: &AdamOptions,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || names.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} names, {} moment slots",
                params.len(),
                grads.len(),
                names.len(),
                state.m.len()
            ),
        ));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{name}: {:?} vs {:?}", p.shape(), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - opts.beta1.powi(t);
    let bc2 = 1.0 - opts.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (theta, &grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let g_eff = if opts.decoupled { grad } else { grad + opts.l2 * *theta };
            m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * g_eff;
            v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * g_eff * g_eff;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            if opts.decoupled {
                *theta -= opts.lr * opts.l2 * *theta;
            }
            *theta -= opts.lr * m_hat / (v_hat.sqrt() + opts.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointIndex {
    adam_step: u64,
    tensors: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

/// Tensors recovered from a checkpoint directory. Values pass through
/// `f32` on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub adam_step: u64,
    pub tensors: BTreeMap<String, Matrix>,
}

pub const CHECKPOINT_INDEX: &str = "index.json";

/// Writes one container per tensor plus `index.json`. Adam moments are
/// stored as `<name>.adam_m` / `<name>.adam_v`.
pub fn save_checkpoint(dir: &Path, tensors: &[(String, &Matrix)], adam: Option<&AdamState>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut write = |name: String, m: &Matrix| -> Result<()> {
        let file = format!("{:03}.mceb", entries.len());
        let data: Vec<f32> = m.data().iter().map(|&v| v as f32).collect();
        write_container(&dir.join(&file), m.cols().max(1), &data)?;
        entries.push(CheckpointEntry {
            name,
            rows: m.rows(),
            cols: m.cols(),
            file,
        });
        Ok(())
    };
    for (name, m) in tensors {
        write(name.clone(), m)?;
    }
    if let Some(state) = adam {
        for (i, (name, _)) in tensors.iter().enumerate() {
            if let (Some(m), Some(v)) = (state.m.get(i), state.v.get(i)) {
                write(format!("{name}.adam_m"), m)?;
                write(format!("{name}.adam_v"), v)?;
            }
        }
    }
    let index = CheckpointIndex {
        adam_step: adam.map_or(0, |s| s.t),
        tensors: entries,
    };
    let path = dir.join(CHECKPOINT_INDEX);
    fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(CHECKPOINT_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    let mut tensors = BTreeMap::new();
    for entry in index.tensors {
        let file = dir.join(&entry.file);
        let (_, data) = read_container(&file)?;
        let m = Matrix::new(entry.rows, entry.cols, data.into_iter().map(f64::from).collect())
            .map_err(|_| Error::Format {
                path: file,
                detail: format!("{} does not match {}x{}", entry.name, entry.rows, entry.cols),
            })?;
        tensors.insert(entry.name, m);
    }
    Ok(Checkpoint {
        adam_step: index.adam_step,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, log_softmax, softmax};

    fn identity_head() -> FfnHead {
        FfnHead {
            name: "id".into(),
            hidden: Linear {
                weight: Matrix::identity(2),
                bias: Matrix::zeros(1, 2),
            },
            output: Linear {
                weight: Matrix::identity(2),
                bias: Matrix::zeros(1, 2),
            },
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let head = FfnHead {
            name: "z".into(),
            hidden: Linear::zeros(3, 5),
            output: Linear::zeros(5, 2),
        };
        let (out, _) = head.forward(&Matrix::from_rows(&[[1.0, -2.0, 3.0]])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_clips_negative_inputs() {
        let (out, _) = identity_head().forward(&Matrix::from_rows(&[[-1.0, 2.0]])).unwrap();
        assert_eq!(out, Matrix::from_rows(&[[0.0, 2.0]]));
    }

    #[test]
    fn empty_batch() {
        let (out, cache) = identity_head().forward(&Matrix::zeros(0, 2)).unwrap();
        assert_eq!(out.shape(), (0, 2));
        let g = identity_head().backward(&cache, &out, None).unwrap();
        assert_eq!(g.w1.frobenius_sq(), 0.0);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        assert!(identity_head().forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let head = FfnHead::new("h", 4, 6, 2, 1, 0);
        let x = Matrix::from_rows(&[[0.3, -0.2, 1.0, 0.5], [1.0, 1.0, -1.0, 0.2]]);
        let (_, cache) = head.forward(&x).unwrap();
        let g = head.backward(&cache, &Matrix::zeros(2, 2), None).unwrap();
        for t in g.tensors() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    /// With every pre-activation positive the head is affine, so the
    /// gradient of ½‖f(x) − y‖² has closed form through the composite map.
    #[test]
    fn linear_regime_matches_closed_form() {
        let mut head = FfnHead::new("lin", 2, 3, 1, 5, 0);
        head.hidden.bias = Matrix::from_rows(&[[10.0, 10.0, 10.0]]);
        let x = Matrix::from_rows(&[[0.5, -0.25], [1.0, 0.75], [-0.5, 0.1]]);
        let y = [1.0, -2.0, 0.5];
        let (out, cache) = head.forward(&x).unwrap();
        assert!(cache.pre_activation.data().iter().all(|&z| z > 0.0));
        let resid: Vec<f64> = (0..3).map(|i| out.get(i, 0) - y[i]).collect();
        let d_out = Matrix::new(3, 1, resid.clone()).unwrap();
        let g = head.backward(&cache, &d_out, None).unwrap();

        // f(x) = x·(W1·W2) + (b1·W2 + b2); dL/dW2 = Hᵀ r, dL/dW1 = Xᵀ r W2ᵀ
        let w2: Vec<f64> = head.output.weight.data().to_vec();
        for a in 0..2 {
            for h in 0..3 {
                let expected: f64 = (0..3).map(|i| x.get(i, a) * resid[i] * w2[h]).sum();
                assert!((g.w1.get(a, h) - expected).abs() < 1e-12);
            }
        }
        for h in 0..3 {
            let expected: f64 = (0..3).map(|i| cache.hidden.get(i, h) * resid[i]).sum();
            assert!((g.w2.get(h, 0) - expected).abs() < 1e-12);
            assert!((g.b1.get(0, h) - resid.iter().sum::<f64>() * w2[h]).abs() < 1e-12);
        }
        assert!((g.b2.get(0, 0) - resid.iter().sum::<f64>()).abs() < 1e-12);
    }

    fn flatten(head: &FfnHead) -> Vec<f64> {
        head.params().iter().flat_map(|m| m.data().to_vec()).collect()
    }

    fn unflatten(head: &mut FfnHead, theta: &[f64]) {
        let mut offset = 0;
        for m in head.params_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        }
    }

    fn mean_ce(logits: &Matrix, labels: &[usize]) -> f64 {
        let lp = log_softmax(logits);
        -labels.iter().enumerate().map(|(i, &y)| lp.get(i, y)).sum::<f64>() / labels.len() as f64
    }

    #[test]
    fn backward_passes_finite_difference_check() {
        for seed in 0..5u64 {
            let head = FfnHead::new("g", 3, 5, 2, seed, 0);
            let mut r = rng(seed, 99);
            let x = Matrix::filled_with(4, 3, || standard_normal(&mut r));
            let labels = [0usize, 1, 1, 0];
            let (logits, cache) = head.forward(&x).unwrap();
            if cache.pre_activation.data().iter().any(|z| z.abs() < 1e-3) {
                continue;
            }
            let mut d = softmax(&logits);
            for (i, &y) in labels.iter().enumerate() {
                d.set(i, y, d.get(i, y) - 1.0);
            }
            d.scale(0.25);
            let g = head.backward(&cache, &d, None).unwrap();
            let analytic: Vec<f64> = g.tensors().iter().flat_map(|m| m.data().to_vec()).collect();
            let theta = flatten(&head);
            let mut probe = head.clone();
            let err = grad_check(
                |t| {
                    unflatten(&mut probe, t);
                    mean_ce(&probe.forward(&x).unwrap().0, &labels)
                },
                &theta,
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let proj = ProjectionHead::new("p", 3, 4, 11, 0);
        let mut r = rng(11, 5);
        let x = Matrix::filled_with(3, 3, || standard_normal(&mut r));
        let weights = Matrix::filled_with(3, 4, || standard_normal(&mut r));
        let loss = |p: &ProjectionHead| -> f64 {
            let (y, _) = p.forward(&x).unwrap();
            y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = proj.forward(&x).unwrap();
        let g = proj.backward(&cache, &weights).unwrap();
        let analytic: Vec<f64> = g.weight.data().iter().chain(g.bias.data()).copied().collect();
        let theta: Vec<f64> = proj.params().iter().flat_map(|m| m.data().to_vec()).collect();
        let mut probe = proj.clone();
        let err = grad_check(
            |t| {
                let n = probe.linear.weight.data().len();
                probe.linear.weight.data_mut().copy_from_slice(&t[..n]);
                probe.linear.bias.data_mut().copy_from_slice(&t[n..]);
                loss(&probe)
            },
            &theta,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn projection_rows_are_unit_norm() {
        let proj = ProjectionHead::new("p", 5, 7, 2, 0);
        let mut r = rng(2, 1);
        let x = Matrix::filled_with(6, 5, || standard_normal(&mut r));
        let (y, _) = proj.forward(&x).unwrap();
        for i in 0..y.rows() {
            let n: f64 = y.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_projection_row_has_zero_gradient() {
        let proj = ProjectionHead::new("p", 3, 4, 0, 0);
        let x = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]]);
        let (y, cache) = proj.forward(&x).unwrap();
        assert!(y.row(0).iter().all(|&v| v == 0.0));
        let d = Matrix::filled_with(2, 4, || 1.0);
        let g = proj.backward(&cache, &d).unwrap();
        assert!(g.weight.is_finite() && g.bias.is_finite());
        assert!(g.input.row(0).iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn same_seed_same_init() {
        assert_eq!(FfnHead::new("a", 8, 16, 2, 42, 3), FfnHead::new("a", 8, 16, 2, 42, 3));
        assert_ne!(FfnHead::new("a", 8, 16, 2, 42, 3), FfnHead::new("a", 8, 16, 2, 43, 3));
    }

    fn step_once(theta: f64, g: f64, lr: f64, l2: f64, state: &mut AdamState) -> f64 {
        let mut p = Matrix::from_rows(&[[theta]]);
        let grad = Matrix::from_rows(&[[g]]);
        let opts = AdamOptions { lr, l2, ..Default::default() };
        adam_step(&mut [&mut p], &[&grad], &["p".into()], state, &opts).unwrap();
        p.get(0, 0)
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut s = AdamState::new([&Matrix::zeros(1, 1)]);
        let theta = step_once(0.0, 1.0, 1e-3, 0.0, &mut s);
        assert!((theta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((theta + 9.99999990e-4).abs() < 1e-12);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_l2_decays_toward_zero() {
        let mut s = AdamState::new([&Matrix::zeros(1, 1)]);
        let theta = step_once(1.0, 0.0, 1e-3, 0.01, &mut s);
        assert!(theta < 1.0);
        assert!((s.m[0].get(0, 0) - 0.1 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_match_hand_unrolled() {
        let (lr, g, b1, b2, eps) = (0.01, 0.5, 0.9, 0.999, 1e-8);
        let mut s = AdamState::new([&Matrix::zeros(1, 1)]);
        let t1 = step_once(2.0, g, lr, 0.0, &mut s);
        let t2 = step_once(t1, g, lr, 0.0, &mut s);

        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let e1 = 2.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let e2 = e1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((t1 - e1).abs() < 1e-12);
        assert!((t2 - e2).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient_by_name() {
        let mut p = Matrix::from_rows(&[[1.0, 2.0]]);
        let g = Matrix::from_rows(&[[f64::NAN, 0.0]]);
        let mut s = AdamState::new([&p]);
        let err = adam_step(&mut [&mut p], &[&g], &["text.w1".into()], &mut s, &AdamOptions::default()).unwrap_err();
        assert!(err.to_string().contains("text.w1"));
        assert_eq!(p, Matrix::from_rows(&[[1.0, 2.0]]));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient_coupling() {
        let mut p = Matrix::from_rows(&[[1.0]]);
        let g = Matrix::from_rows(&[[0.0]]);
        let mut s = AdamState::new([&p]);
        let opts = AdamOptions { lr: 0.1, l2: 0.5, decoupled: true, ..Default::default() };
        adam_step(&mut [&mut p], &[&g], &["p".into()], &mut s, &opts).unwrap();
        assert!((p.get(0, 0) - 0.95).abs() < 1e-12);
        assert_eq!(s.m[0].get(0, 0), 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let head = FfnHead::new("text", 3, 4, 2, 1, 0);
        let mut state = AdamState::new(head.params());
        state.t = 7;
        let names = head.param_names();
        let tensors: Vec<(String, &Matrix)> = names.iter().cloned().zip(head.params()).collect();
        save_checkpoint(dir.path(), &tensors, Some(&state)).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.adam_step, 7);
        assert_eq!(ck.tensors.len(), 12);
        let w1 = &ck.tensors["text.w1"];
        for (a, b) in w1.data().iter().zip(head.hidden.weight.data()) {
            assert_eq!(*a, (*b as f32) as f64);
        }
    }
}
