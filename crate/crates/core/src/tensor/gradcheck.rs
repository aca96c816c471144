//! Central finite-difference verification of analytic gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Gradient magnitudes below this are compared in absolute terms, which
/// keeps near-zero derivatives from inflating the relative error.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Set when the function itself failed to evaluate.
    pub error: Option<String>,
}

impl GradcheckReport {
    fn failed(tol: f64, msg: String) -> Self {
        Self {
            entries: Vec::new(),
            max_rel_err: f64::INFINITY,
            tol,
            passed: false,
            error: Some(msg),
        }
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], with_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), with_grad))
        .collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

fn scalar_value<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = eval(f, inputs, false)?;
    tape.value(out).item()
}

/// Compares the tape's gradient of scalar `f` against central differences
/// with step `eps` for every element of every input. Never fails: problems
/// evaluating `f` are reported through [`GradcheckReport::error`].
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> GradcheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = match eval(&f, inputs, true).and_then(|(mut tape, vars, out)| {
        tape.backward(out)?;
        Ok(vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect::<Vec<_>>())
    }) {
        Ok(g) => g,
        Err(e) => return GradcheckReport::failed(tol, e.to_string()),
    };

    let mut entries = Vec::new();
    let mut probe = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for i in 0..probe[k].numel() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = scalar_value(&f, &probe);
            probe[k].data_mut()[i] = orig - eps;
            let minus = scalar_value(&f, &probe);
            probe[k].data_mut()[i] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => return GradcheckReport::failed(tol, e.to_string()),
            };
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[i];
            entries.push(GradEntry {
                input: k,
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    let max_rel_err = entries
        .iter()
        .map(|e| e.rel_err)
        .fold(0.0, |m: f64, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
    GradcheckReport {
        passed: max_rel_err < tol,
        entries,
        max_rel_err,
        tol,
        error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_passes() {
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, -0.25, 1.5]).unwrap();
        let report = gradcheck(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-3,
            1e-6,
        );
        assert!(report.passed, "{report:?}");
        assert_eq!(report.entries.len(), 6);
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let report = gradcheck(
            |t, v| {
                let src = t.value(v[0]).clone();
                let sq = Tensor::from_fn(src.shape(), |i| src.data()[i] * src.data()[i]);
                // wrong on purpose: d(x^2)/dx reported as x
                let y = t.custom(&[v[0]], sq, |ins, _, g| {
                    vec![ins[0].data().iter().zip(g).map(|(x, g)| x * g).collect()]
                });
                Ok(t.sum(y))
            },
            &[x],
            1e-3,
            1e-4,
        );
        assert!(!report.passed);
        assert!(report.max_rel_err > 0.1);
    }

    #[test]
    fn evaluation_errors_are_reported_not_raised() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let report = gradcheck(|t, v| Ok(v[0]).and_then(|x| t.backward(x).map(|_| x)), &[x], 1e-3, 1e-4);
        assert!(!report.passed);
        assert!(report.error.is_some());
    }
}
