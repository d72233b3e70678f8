//! Central finite-difference gradient checking.
//!
//! Only the forward values of a tape are used to form the numerical
//! gradient, so the check is independent of every backward rule.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Step used by the gradient checks throughout the crate.
pub const STEP: f64 = 1e-5;

/// Analytic and numerical gradients of a scalar function of `inputs`.
#[derive(Debug, Clone)]
pub struct GradComparison {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradComparison {
    /// `‖analytic − numeric‖ / max(‖numeric‖, ‖analytic‖, 1e-12)` over all inputs.
    pub fn relative_error(&self) -> f64 {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for (a, n) in self.analytic.iter().zip(&self.numeric) {
            for (x, y) in a.iter().zip(n) {
                diff += (x - y) * (x - y);
                na += x * x;
                nn += y * y;
            }
        }
        diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
    }
}

/// Builds the function on a fresh tape for every evaluation. Every input is
/// treated as differentiable.
pub fn compare<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradComparison>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let params: Vec<Tensor> = inputs.iter().map(|t| t.clone().trainable()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic = vars
        .iter()
        .zip(&params)
        .map(|(&v, t)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }
    Ok(GradComparison { analytic, numeric })
}
