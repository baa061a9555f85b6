//! Browser bindings for three small interactive views over the core crate.

use std::collections::BTreeMap;

use wasm_bindgen::prelude::*;

use poe_supcon::dataset::{generate_synthetic, CognitiveLabel, Modality, SynthConfig};
use poe_supcon::evaluation::picture_separability;
use poe_supcon::losses::{poe_fuse, supcon_loss_raw, SupConVariant};
use poe_supcon::numerics::{matmul_tn, Matrix};

const P_FLOOR: f64 = 1e-6;

/// Fused P(MCI) from each expert's P(MCI).
#[wasm_bindgen]
pub fn poe_fuse_probs(p_mci: &[f64]) -> f64 {
    if p_mci.is_empty() {
        return 0.5;
    }
    let experts: Vec<Matrix> = p_mci
        .iter()
        .map(|&p| {
            let p = p.clamp(P_FLOOR, 1.0 - P_FLOOR);
            let mut row = [0.0; 2];
            row[CognitiveLabel::MCI.index()] = p.ln();
            row[CognitiveLabel::NC.index()] = (1.0 - p).ln();
            Matrix::from_rows(&[row])
        })
        .collect();
    let refs: Vec<&Matrix> = experts.iter().collect();
    poe_fuse(&refs).map(|f| f.fused.get(0, CognitiveLabel::MCI.index()).exp()).unwrap_or(f64::NAN)
}

/// Contrastive loss of a four-sample batch on the unit circle, two samples
/// per picture. Each pair is `spread_deg` wide; the second pair's centre
/// sweeps from 0° to 180° away from the first over `points` steps.
#[wasm_bindgen]
pub fn supcon_curve(spread_deg: f64, tau: f64, literal: bool, points: usize) -> Vec<f64> {
    let variant = if literal { SupConVariant::PaperLiteral } else { SupConVariant::StandardSupCon };
    let half = spread_deg.to_radians() / 2.0;
    let steps = points.max(2);
    (0..steps)
        .map(|i| {
            let gap = std::f64::consts::PI * i as f64 / (steps - 1) as f64;
            let h = Matrix::from_rows(&[-half, half, gap - half, gap + half].map(|a| [a.cos(), a.sin()]));
            supcon_loss_raw(&h, &[1, 1, 2, 2], tau, variant).map(|(l, _)| l).unwrap_or(f64::NAN)
        })
        .collect()
}

/// Synthetic text embeddings projected on their two leading principal axes.
#[wasm_bindgen]
pub struct PictureScatter {
    xy: Vec<f64>,
    pictures: Vec<u8>,
    silhouette: f64,
}

#[wasm_bindgen]
impl PictureScatter {
    /// Interleaved x, y coordinates.
    pub fn xy(&self) -> Vec<f64> {
        self.xy.clone()
    }

    pub fn pictures(&self) -> Vec<u8> {
        self.pictures.clone()
    }

    /// Mean silhouette of picture clusters in the full embedding space.
    pub fn silhouette(&self) -> f64 {
        self.silhouette
    }
}

#[wasm_bindgen]
pub fn picture_scatter(strength: f64, seed: u32) -> Result<PictureScatter, JsError> {
    scatter(strength, seed).map_err(|e| JsError::new(&e.to_string()))
}

fn scatter(strength: f64, seed: u32) -> poe_supcon::Result<PictureScatter> {
    let cfg = SynthConfig {
        picture_signal_strength: strength,
        dims: BTreeMap::from([(Modality::Text, 16)]),
        spurious_modalities: vec![],
        seed: u64::from(seed),
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let x = ds.features(Modality::Text, &all)?;
    let pictures: Vec<u8> = ds.samples().iter().map(|s| s.picture_id).collect();
    let silhouette = picture_separability(&x, &pictures)?;
    let xy = project_2d(&x)?;
    Ok(PictureScatter { xy, pictures, silhouette })
}

/// Centres the rows and projects them on the top two eigenvectors of the
/// covariance, found by power iteration with deflation.
fn project_2d(x: &Matrix) -> poe_supcon::Result<Vec<f64>> {
    let (n, d) = x.shape();
    let means: Vec<f64> = x.column_sums().iter().map(|s| s / n as f64).collect();
    let mut c = x.clone();
    for r in 0..n {
        c.row_mut(r).iter_mut().zip(&means).for_each(|(v, m)| *v -= m);
    }
    let mut cov = matmul_tn(&c, &c)?;
    let mut axes = Vec::new();
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 0.01).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w: Vec<f64> = (0..d).map(|i| cov.row(i).iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm;
            v = w.into_iter().map(|a| a / norm).collect();
        }
        for i in 0..d {
            for j in 0..d {
                cov.set(i, j, cov.get(i, j) - lambda * v[i] * v[j]);
            }
        }
        axes.push(v);
    }
    let mut xy = Vec::with_capacity(2 * n);
    for r in 0..n {
        for a in &axes {
            xy.push(c.row(r).iter().zip(a).map(|(p, q)| p * q).sum());
        }
    }
    Ok(xy)
}
