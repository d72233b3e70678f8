use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm_matmul, softmax_in_place, Tensor};

/// Default match threshold on P.
pub const DEFAULT_TAU: f64 = 0.1;
/// Fixed temperature dividing S before both softmaxes.
pub const SIMILARITY_TEMPERATURE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

/// Dual-softmax soft assignment and the hard matches read from it.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub n: usize,
    pub m: usize,
    /// Row-major `n × m` similarity.
    pub scores: Vec<f64>,
    pub row_softmax: Vec<f64>,
    pub col_softmax: Vec<f64>,
    /// Elementwise product of the two factors.
    pub p: Vec<f64>,
    pub matches: Vec<Match>,
    pub tau: f64,
}

impl AssignmentMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.m + j]
    }

    /// Same soft assignment, hard matches re-read at another threshold.
    pub fn with_tau(&self, tau: f64) -> Self {
        Self {
            matches: mutual_matches(&self.p, self.n, self.m, tau),
            tau,
            ..self.clone()
        }
    }
}

/// Entries that are the strict maximum of both their row and column and
/// reach `tau`, ordered by row.
pub fn mutual_matches(p: &[f64], n: usize, m: usize, tau: f64) -> Vec<Match> {
    let mut col_best = vec![(f64::NEG_INFINITY, usize::MAX, false); m];
    for i in 0..n {
        for j in 0..m {
            let v = p[i * m + j];
            let c = &mut col_best[j];
            if v > c.0 {
                *c = (v, i, true);
            } else if v == c.0 {
                c.2 = false;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        let row = &p[i * m..(i + 1) * m];
        let mut best = (f64::NEG_INFINITY, usize::MAX, false);
        for (j, &v) in row.iter().enumerate() {
            if v > best.0 {
                best = (v, j, true);
            } else if v == best.0 {
                best.2 = false;
            }
        }
        let (v, j, unique) = best;
        if !unique || v < tau {
            continue;
        }
        let (cv, ci, cunique) = col_best[j];
        if cunique && ci == i && cv == v {
            out.push(Match { i, j, score: v });
        }
    }
    out
}

/// Dual-softmax assignment of a raw `n × m` score matrix.
pub fn assign_scores(scores: Vec<f64>, n: usize, m: usize, tau: f64) -> Result<AssignmentMatrix> {
    if scores.len() != n * m {
        return Err(Error::Dimension {
            op: "assign",
            lhs: vec![scores.len()],
            rhs: vec![n, m],
        });
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric {
            op: "assign",
            detail: "NaN in similarity matrix".into(),
        });
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / SIMILARITY_TEMPERATURE).collect();
    let mut row_softmax = scaled.clone();
    if m > 0 {
        row_softmax.chunks_mut(m).for_each(softmax_in_place);
    }
    let mut cols = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cols[j * n + i] = scaled[i * m + j];
        }
    }
    if n > 0 {
        cols.chunks_mut(n).for_each(softmax_in_place);
    }
    let mut col_softmax = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            col_softmax[i * m + j] = cols[j * n + i];
        }
    }
    let p: Vec<f64> = row_softmax.iter().zip(&col_softmax).map(|(a, b)| a * b).collect();
    let matches = mutual_matches(&p, n, m, tau);
    Ok(AssignmentMatrix {
        n,
        m,
        scores,
        row_softmax,
        col_softmax,
        p,
        matches,
        tau,
    })
}

/// `S = D̃ₐ·D̃ᵦᵀ`, then [`assign_scores`].
pub fn assign(da: &Tensor, db: &Tensor, tau: f64) -> Result<AssignmentMatrix> {
    if da.shape().len() != 2 || db.shape().len() != 2 || da.cols() != db.cols() || da.cols() == 0 {
        return Err(Error::Dimension {
            op: "assign",
            lhs: da.shape().to_vec(),
            rhs: db.shape().to_vec(),
        });
    }
    let (n, m, d) = (da.rows(), db.rows(), da.cols());
    let mut s = vec![0.0; n * m];
    gemm_matmul(n, d, m, da.data(), false, db.data(), true, &mut s);
    assign_scores(s, n, m, tau)
}
