use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so gradients that are zero up to
/// round-off do not report huge relative errors.
const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, flat element index) of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn eval<F>(f: &F, xs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Compares analytic gradients of scalar `f` against central differences for
/// every element of every input.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tolerance,
    };
    let mut probe = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        let zeros = vec![0.0; x.numel()];
        let analytic = g.grad(vars[ti]).unwrap_or(&zeros).to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = x.data()[j];
            probe[ti].data_mut()[j] = orig + step;
            let up = eval(&f, &probe)?;
            probe[ti].data_mut()[j] = orig - step;
            let down = eval(&f, &probe)?;
            probe[ti].data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * step);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (ti, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), step, tolerance)
}
