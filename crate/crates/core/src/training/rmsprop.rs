use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real};

/// Plain RMSProp: no momentum, no centering.
///
/// `v <- rho * v + (1 - rho) * g^2`, `theta <- theta - lr * g / (sqrt(v) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<F> {
    pub rho: f64,
    pub eps: f64,
    pub steps: u64,
    /// Running mean of squared gradients, keyed by parameter name.
    pub square_avg: IndexMap<String, Vec<F>>,
}

impl<F: Real> RmsProp<F> {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            steps: 0,
            square_avg: IndexMap::new(),
        }
    }

    /// Updates every parameter that holds a gradient. Parameters without a
    /// gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        for (name, p) in store.iter() {
            if let Some(g) = p.tensor.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("gradient of parameter {name:?} at element {i}"),
                    });
                }
            }
        }
        let (rho, one_minus_rho) = (F::of(self.rho), F::of(1.0 - self.rho));
        let (eps, lr) = (F::of(self.eps), F::of(lr));
        for (name, p) in store.iter_mut() {
            let Some(g) = p.tensor.grad().map(<[F]>::to_vec) else { continue };
            let v = self
                .square_avg
                .entry(name.to_string())
                .or_insert_with(|| vec![F::zero(); g.len()]);
            for ((theta, vi), &gi) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *vi = rho * *vi + one_minus_rho * gi * gi;
                *theta = *theta - lr * gi / (vi.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, ParamKind, Tensor};

    fn store_with_grad(theta: f64, grad: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert("theta", ParamKind::Scalar, Tensor::scalar(theta)).unwrap();
        store.get_mut("theta").unwrap().accumulate_grad(&[grad]);
        store
    }

    #[test]
    fn gradient_from_graph() {
        let mut store = ParamStore::new();
        store.insert("theta", ParamKind::Scalar, Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let t = g.param(&store, "theta").unwrap();
        let y = g.scale(t, 3.0);
        g.backward(y).unwrap();
        g.accumulate_param_grads(&mut store);
        let mut opt = RmsProp::new(0.5, 0.0);
        opt.step(&mut store, 1.0).unwrap();
        // v = 0.5 * 9, step = 3 / sqrt(4.5)
        let expected = 2.0 - 3.0 / 4.5f64.sqrt();
        assert!((store.get("theta").unwrap().item() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_scalar_update() {
        let mut store = store_with_grad(1.0, 1.0);
        let mut opt = RmsProp::new(0.99, 1e-8);
        opt.step(&mut store, 0.1).unwrap();
        assert!((opt.square_avg["theta"][0] - 0.01).abs() < 1e-15);
        let expected = 1.0 - 0.1 / (0.1 + 1e-8);
        assert!((store.get("theta").unwrap().item() - expected).abs() < 1e-15);
        assert!(store.get("theta").unwrap().item().abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = store_with_grad(0.75, 0.0);
        let mut opt = RmsProp::new(0.99, 1e-8);
        opt.step(&mut store, 0.1).unwrap();
        assert_eq!(store.get("theta").unwrap().item(), 0.75);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = store_with_grad(1.0, f64::NAN);
        let err = RmsProp::new(0.99, 1e-8).step(&mut store, 0.1).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
    }
}
