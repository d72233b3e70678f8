use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub const INFONCE_TEMPERATURE: f64 = 0.07;

fn gt_index(gt: &[(usize, usize)], n: usize, m: usize) -> Result<Arc<Vec<Option<usize>>>> {
    if let Some(&(i, j)) = gt.iter().find(|&&(i, j)| i >= n || j >= m) {
        return Err(Error::contract(format!("GT match ({i}, {j}) outside {n}×{m}")));
    }
    Ok(Arc::new(gt.iter().map(|&(i, j)| Some(i * m + j)).collect()))
}

/// Row-wise and column-wise log-softmax of an `n × m` score matrix, summed.
fn dual_log_softmax(tape: &mut Tape, s: Var) -> Result<Var> {
    let rows = tape.log_softmax_rows(s)?;
    let t = tape.transpose(s);
    let cols = tape.log_softmax_rows(t)?;
    let cols = tape.transpose(cols);
    tape.add(rows, cols)
}

/// Symmetric InfoNCE: every GT pair is classified against all keypoints of
/// the other image, in both directions. Zero GT matches give a constant 0.
pub fn descriptor_loss(tape: &mut Tape, da: Var, db: Var, gt: &[(usize, usize)]) -> Result<Var> {
    if gt.is_empty() {
        return tape.constant(vec![], vec![0.0]);
    }
    let (n, m) = (tape.dims(da).0, tape.dims(db).0);
    let idx = gt_index(gt, n, m)?;
    let bt = tape.transpose(db);
    let s = tape.matmul(da, bt)?;
    let s = tape.scale(s, 1.0 / INFONCE_TEMPERATURE);
    let both = dual_log_softmax(tape, s)?;
    let picked = tape.gather(both, idx, &[gt.len()])?;
    let mean = tape.reduce_mean(picked);
    Ok(tape.scale(mean, -0.5))
}

/// `−mean log P_ij` over GT pairs, with `log P = log_softmax_rows(S) +
/// log_softmax_cols(S)`, plus the KL divergence from uniform of the row
/// (column) softmax of every A (B) keypoint without a GT partner. Without
/// the second term nothing teaches the matcher to leave distractors
/// unmatched; it vanishes when those rows and columns are flat.
pub fn matcher_loss(tape: &mut Tape, scores: Var, gt: &[(usize, usize)]) -> Result<Var> {
    let (n, m) = tape.dims(scores);
    let idx = gt_index(gt, n, m)?;
    let mut terms = Vec::new();
    if !gt.is_empty() {
        let logp = dual_log_softmax(tape, scores)?;
        let picked = tape.gather(logp, idx, &[gt.len()])?;
        let mean = tape.reduce_mean(picked);
        terms.push(tape.scale(mean, -1.0));
    }
    let mut matched_a = vec![false; n];
    let mut matched_b = vec![false; m];
    for &(i, j) in gt {
        matched_a[i] = true;
        matched_b[j] = true;
    }
    let rows = tape.log_softmax_rows(scores)?;
    if let Some(t) = uniform_kl(tape, rows, &matched_a, m)? {
        terms.push(t);
    }
    let st = tape.transpose(scores);
    let cols = tape.log_softmax_rows(st)?;
    if let Some(t) = uniform_kl(tape, cols, &matched_b, n)? {
        terms.push(t);
    }
    match terms.split_first() {
        None => tape.constant(vec![], vec![0.0]),
        Some((&first, rest)) => rest.iter().try_fold(first, |acc, &t| tape.add(acc, t)),
    }
}

/// Mean over the unmatched rows of `KL(uniform ‖ softmax)`, given the
/// row-wise log-softmax of a matrix with `width` columns.
fn uniform_kl(tape: &mut Tape, log_sm: Var, matched: &[bool], width: usize) -> Result<Option<Var>> {
    let idx: Vec<Option<usize>> = matched
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .flat_map(|(i, _)| (0..width).map(move |j| Some(i * width + j)))
        .collect();
    if idx.is_empty() || width == 0 {
        return Ok(None);
    }
    let len = idx.len();
    let picked = tape.gather(log_sm, Arc::new(idx), &[len])?;
    let mean = tape.reduce_mean(picked);
    let neg = tape.scale(mean, -1.0);
    Ok(Some(tape.add_scalar(neg, -(width as f64).ln())))
}

/// The GT term of [`matcher_loss`] evaluated directly on a soft assignment `P`.
pub fn matcher_loss_from_p(p: &[f64], m: usize, gt: &[(usize, usize)]) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    -gt.iter().map(|&(i, j)| p[i * m + j].ln()).sum::<f64>() / gt.len() as f64
}

/// Similarity scores `S = d̃ₐ·d̃ᵦᵀ` on the tape.
pub fn similarity(tape: &mut Tape, da: Var, db: Var) -> Result<Var> {
    let bt = tape.transpose(db);
    tape.matmul(da, bt)
}
