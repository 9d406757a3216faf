//! Central finite-difference checking of [`Tape::backward`].

use super::{Result, Tape, Tensor, Var};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding do not produce spurious failures.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, element)` of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares analytic gradients of the scalar `f(inputs)` against central
/// differences with step `eps`, for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars = ts
            .iter()
            .map(|t| tape.leaf(t))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_grad()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for e in 0..inputs[k].numel() {
            let orig = inputs[k].values()[e];
            work[k].values_mut()[e] = orig + eps;
            let up = eval(&work)?;
            work[k].values_mut()[e] = orig - eps;
            let down = eval(&work)?;
            work[k].values_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let abs = (numeric - analytic[e]).abs();
            let rel = abs / numeric.abs().max(analytic[e].abs()).max(REL_ERROR_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, e);
            }
            report.max_abs_error = report.max_abs_error.max(abs);
            report.checked += 1;
        }
    }
    Ok(report)
}
