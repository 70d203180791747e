use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-component projection of a set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub components: [Vec<f64>; 2],
    pub projected: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    /// Set when the covariance has rank below 2. Components whose eigenvalue
    /// vanishes are zero-filled and report zero variance.
    pub degenerate: bool,
}

/// Top two principal components of `embeddings` (sample covariance,
/// `n - 1` denominator). The largest-magnitude entry of each component is
/// made positive.
pub fn pca_embed(embeddings: &[Vec<f64>]) -> Result<PcaResult> {
    let n = embeddings.len();
    let e = embeddings.first().map_or(0, Vec::len);
    if n < 3 || e < 2 {
        return Err(Error::PcaInput { n, width: e });
    }
    if let Some(bad) = embeddings.iter().find(|v| v.len() != e) {
        return Err(Error::DimensionMismatch(format!(
            "embedding of width {} among width {e}",
            bad.len()
        )));
    }

    let mut mean = vec![0.0; e];
    for v in embeddings {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, e, |i, j| embeddings[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let tol = 1e-10 * trace.max(0.0);
    let mut components = [vec![0.0; e], vec![0.0; e]];
    let mut explained_variance = [0.0; 2];
    let mut degenerate = false;
    for (slot, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > tol) {
            degenerate = true;
            continue;
        }
        let mut c: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.iter_mut().for_each(|v| *v /= norm);
        let lead = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i);
        if c[lead] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components[slot] = c;
        explained_variance[slot] = lambda;
    }

    let projected = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut out = [0.0; 2];
            for (k, c) in components.iter().enumerate() {
                out[k] = row.iter().zip(c).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect();

    Ok(PcaResult {
        components,
        projected,
        explained_variance,
        degenerate,
    })
}
