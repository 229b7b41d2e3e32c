//! Central finite-difference checks of tape gradients.

use crate::error::Result;

use super::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { step: 1e-3, rel: 1e-3, abs: 1e-5 }
    }
}

/// Worst disagreement found by [`check`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub failures: Vec<Mismatch>,
    pub max_rel_error: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares backward gradients of a scalar function of `inputs` against
/// central differences. `build` records the function on a fresh tape each
/// call; the inputs arrive as variables in the same order.
///
/// `limit` caps the number of elements probed per input (spread evenly).
pub fn check<T, F>(inputs: &[Tensor<T>], tol: Tolerance, limit: Option<usize>, build: F) -> Result<Report>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0].as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![T::zero(); t.numel()], <[T]>::to_vec))
        .collect();

    let mut report = Report::default();
    let mut probe = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let stride = limit.map_or(1, |l| n.div_ceil(l.max(1)));
        for j in (0..n).step_by(stride) {
            let orig = t.data()[j];
            let h = T::from_f64_lossy(tol.step);
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            // divide by the step actually taken in T
            let taken = (orig + h).as_f64() - (orig - h).as_f64();
            let numeric = (up - down) / taken;
            let a = analytic[i][j].as_f64();
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if scale > 0.0 {
                report.max_rel_error = report.max_rel_error.max(err / scale);
            }
            report.checked += 1;
            if err > tol.abs + tol.rel * scale {
                report.failures.push(Mismatch { input: i, element: j, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}
