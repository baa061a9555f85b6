//! Finite-difference verification of every analytic gradient in the
//! training objective.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, Modality, SynthConfig};
use crate::error::Result;
use crate::losses::{cross_entropy, poe_backward, poe_fuse, supcon_loss_raw, SupConVariant};
use crate::numerics::{grad_check, rng, standard_normal, Matrix, Rng};
use crate::training::{BatchInputs, ExperimentConfig, Fusion, FusionModel};

pub const TOLERANCE: f64 = 1e-5;
pub const POINTS: usize = 5;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub check: String,
    /// Largest relative error over the random points.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckTable {
    pub seed: u64,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckTable {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<22} {:>14}  status\n", "check", "max_rel_error");
        for r in &self.rows {
            let status = if r.passed { "ok" } else { "FAIL" };
            s.push_str(&format!("{:<22} {:>14.3e}  {status}\n", r.check, r.max_rel_error));
        }
        s
    }
}

fn unit_rows(r: &mut Rng, n: usize, dim: usize) -> Matrix {
    let mut h = Matrix::filled_with(n, dim, || standard_normal(r));
    for i in 0..n {
        let row = h.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    h
}

fn flatten(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().iter().copied()).collect()
}

/// Draws one random point and returns its max relative error.
type Case = Box<dyn Fn(&mut Rng) -> Result<f64>>;

/// Corrupting perturbs the first analytic coordinate of every check, which
/// must then fail.
pub fn run_gradcheck(seed: u64, corrupt: bool) -> Result<GradcheckTable> {
    let skew = if corrupt { 1e-3 } else { 0.0 };
    let mut cases: Vec<(&str, Case)> = Vec::new();

    cases.push((
        "cross_entropy",
        Box::new(move |r| {
            let n = r.random_range(2..=8);
            let logits = Matrix::filled_with(n, 2, || 2.0 * standard_normal(r));
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
            let (_, mut g) = cross_entropy(&logits, &labels)?;
            g.data_mut()[0] += skew;
            grad_check(
                |x| cross_entropy(&Matrix::new(n, 2, x.to_vec()).unwrap(), &labels).unwrap().0,
                logits.data(),
                g.data(),
                EPS,
            )
        }),
    ));

    for (name, variant) in [
        ("supcon_standard", SupConVariant::StandardSupCon),
        ("supcon_paper_literal", SupConVariant::PaperLiteral),
    ] {
        cases.push((
            name,
            Box::new(move |r| {
                let (n, dim) = (8, 4);
                let h = unit_rows(r, n, dim);
                let ids: Vec<u8> = (0..n).map(|_| r.random_range(1..=3)).collect();
                let (_, mut g) = supcon_loss_raw(&h, &ids, 0.5, variant)?;
                g.data_mut()[0] += skew;
                grad_check(
                    |x| supcon_loss_raw(&Matrix::new(n, dim, x.to_vec()).unwrap(), &ids, 0.5, variant).unwrap().0,
                    h.data(),
                    g.data(),
                    EPS,
                )
            }),
        ));
    }

    cases.push((
        "poe_cross_entropy",
        Box::new(move |r| {
            let (n, experts) = (6, 3);
            let zs: Vec<Matrix> = (0..experts).map(|_| Matrix::filled_with(n, 2, || standard_normal(r))).collect();
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
            let loss = |ms: &[Matrix]| -> Result<f64> {
                let refs: Vec<&Matrix> = ms.iter().collect();
                Ok(cross_entropy(&poe_fuse(&refs)?.summed, &labels)?.0)
            };
            let refs: Vec<&Matrix> = zs.iter().collect();
            let fused = poe_fuse(&refs)?;
            let (_, d) = cross_entropy(&fused.summed, &labels)?;
            let mut analytic = flatten(&poe_backward(&fused, &d)?);
            analytic[0] += skew;
            grad_check(
                |x| {
                    let ms: Vec<Matrix> = x.chunks(n * 2).map(|c| Matrix::new(n, 2, c.to_vec()).unwrap()).collect();
                    loss(&ms).unwrap()
                },
                &flatten(&zs),
                &analytic,
                EPS,
            )
        }),
    ));

    for (name, fusion) in [("pipeline_concat", Fusion::Concat), ("pipeline_poe", Fusion::Poe)] {
        cases.push((
            name,
            Box::new(move |r| {
                let dims: BTreeMap<Modality, usize> = Modality::ALL.into_iter().map(|m| (m, 3)).collect();
                let cfg = ExperimentConfig {
                    fusion,
                    use_cl: true,
                    use_image: true,
                    aux_modality_ce: fusion == Fusion::Poe,
                    hidden: 5,
                    projection_dim: 3,
                    tau: 0.5,
                    ..Default::default()
                };
                // Redraw until no ReLU sits near its kink and no projection
                // input is near zero.
                let (model, batch) = loop {
                    let ds = generate_synthetic(&SynthConfig {
                        dims: dims.clone(),
                        n_participants: 8,
                        en_participants: 4,
                        mci_participants: 4,
                        en_mci_participants: 2,
                        mci_male_participants: 2,
                        nc_male_participants: 2,
                        seed: r.random(),
                        ..Default::default()
                    })?;
                    let model = FusionModel::new(&cfg, &dims, r.random())?;
                    let positions: Vec<usize> = (0..ds.len()).step_by(2).collect();
                    let batch = BatchInputs::from_dataset(&ds, &positions, &cfg.effective_modalities())?;
                    let s = model.smoothness(&batch)?;
                    if s.relu_margin > 1e-2 && s.min_projection_norm > 0.1 {
                        break (model, batch);
                    }
                };
                let mut analytic = flatten(&model.loss_and_grads(&batch)?.grads);
                analytic[0] += skew;
                let mut probe = model.clone();
                grad_check(
                    |x| {
                        probe.set_flat_params(x).unwrap();
                        probe.loss_and_grads(&batch).unwrap().total
                    },
                    &model.flat_params(),
                    &analytic,
                    EPS,
                )
            }),
        ));
    }

    let rows = cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut r = rng(seed, 0x6c_0000 + i as u64);
            let mut worst = 0.0f64;
            for _ in 0..POINTS {
                worst = worst.max(case(&mut r)?);
            }
            Ok(GradcheckRow {
                check: name.to_string(),
                max_rel_error: worst,
                passed: worst < TOLERANCE,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckTable { seed, rows })
}
