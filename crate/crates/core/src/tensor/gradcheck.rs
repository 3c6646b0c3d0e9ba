use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Checks the gradient of a scalar-valued graph at `inputs` (64-bit).
///
/// Per element the error is `|a - n| / max(|a|, |n|, 1e-3 * s)` where `s` is
/// the largest numeric gradient magnitude of that input tensor, so entries
/// that are tiny relative to their tensor are judged against its scale.
pub fn grad_check<Fun>(inputs: &[Tensor<f64>], step: f64, build: Fun) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |point: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::shape("grad_check", "output", "a scalar", g.shape(out)));
        }
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut point: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[ti].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for e in 0..inputs[ti].numel() {
            let orig = inputs[ti].data()[e];
            point[ti].data_mut()[e] = orig + step;
            let plus = eval(&point)?;
            point[ti].data_mut()[e] = orig - step;
            let minus = eval(&point)?;
            point[ti].data_mut()[e] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (e, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-3 * scale);
            let err = if denom == 0.0 { 0.0 } else { (a - n).abs() / denom };
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst: (ti, e),
                    analytic: a,
                    numeric: n,
                };
            }
        }
    }
    Ok(report)
}
