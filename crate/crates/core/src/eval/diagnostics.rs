//! Posterior variance per latent dimension and a 2D linear projection of
//! the latent means.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::nn::VaeWeights;

/// Dimensions whose mean posterior variance falls below this are active.
pub const ACTIVE_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub pc1: f64,
    pub pc2: f64,
    pub stance_id: u8,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDiagnostics {
    pub posterior_variance: Vec<f64>,
    pub active_dims: Vec<usize>,
    /// Variance of the latent means captured by the two projection axes.
    pub explained_variance: [f64; 2],
    pub projection: Vec<ProjectedPoint>,
}

impl LatentDiagnostics {
    pub fn active_count(&self) -> usize {
        self.active_dims.len()
    }
}

pub fn latent_diagnostics(weights: &VaeWeights, samples: &[Sample]) -> Result<LatentDiagnostics> {
    if samples.len() < 2 {
        return Err(Error::BadInput("need at least two samples".into()));
    }
    let stats = &weights.meta.stats;
    let d = stats.dim();
    let mut x = Array2::zeros((samples.len(), d));
    for (i, s) in samples.iter().enumerate() {
        if s.x.0.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "sample {i} has {} features, model expects {d}",
                s.x.0.len()
            )));
        }
        x.row_mut(i)
            .assign(&ndarray::ArrayView1::from(&stats.normalise(&s.x.0)));
    }
    let (mu, logvar) = weights.encode(&x)?;
    let n = samples.len() as f64;
    let posterior_variance: Vec<f64> = logvar
        .columns()
        .into_iter()
        .map(|c| c.mapv(f64::exp).sum() / n)
        .collect();
    let active_dims = (0..posterior_variance.len())
        .filter(|&j| posterior_variance[j] < ACTIVE_VARIANCE)
        .collect();

    let mean = mu.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centred = &mu - &mean;
    let k = mu.ncols();
    let m = DMatrix::from_fn(samples.len(), k, |i, j| centred[[i, j]]);
    let cov = (m.transpose() * &m) / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |r: usize| {
        let mut v = eig.eigenvectors.column(order[r]).clone_owned();
        // Fix the sign so the largest component is positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        v
    };
    let (a1, a2) = (axis(0), axis(1.min(k - 1)));
    let projection = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let row = m.row(i);
            ProjectedPoint {
                pc1: row.dot(&a1.transpose()),
                pc2: if k > 1 { row.dot(&a2.transpose()) } else { 0.0 },
                stance_id: s.stance_id.id(),
                stable: s.y,
            }
        })
        .collect();
    Ok(LatentDiagnostics {
        posterior_variance,
        active_dims,
        explained_variance: [
            eig.eigenvalues[order[0]],
            if k > 1 { eig.eigenvalues[order[1]] } else { 0.0 },
        ],
        projection,
    })
}
