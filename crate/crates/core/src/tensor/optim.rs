use super::ParamSet;
use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-8;

/// RMSProp with one mean-square accumulator per parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self::with_constants(params, lr, DEFAULT_RHO, DEFAULT_EPS)
    }

    pub fn with_constants(params: &ParamSet, lr: f64, rho: f64, eps: f64) -> Self {
        debug_assert!(rho > 0.0 && rho < 1.0);
        Self {
            rho,
            eps,
            lr,
            acc: params.ids().map(|id| vec![0.0; params.get(id).len()]).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.acc
    }

    /// `acc ← ρ·acc + (1−ρ)·g²; p ← p − lr·g/(√acc + ε)`
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.acc.len() {
            return Err(Error::shape(
                "rmsprop",
                format!("{} gradients for {} parameters", grads.len(), self.acc.len()),
            ));
        }
        let ids: Vec<_> = params.ids().collect();
        for ((id, acc), g) in ids.into_iter().zip(&mut self.acc).zip(grads) {
            if g.len() != acc.len() {
                return Err(Error::shape(
                    "rmsprop",
                    format!("{}: {} vs {}", params.name(id), g.len(), acc.len()),
                ));
            }
            if g.iter().all(|&v| v == 0.0) && acc.iter().all(|&v| v == 0.0) {
                continue;
            }
            let p = params.get_mut(id).data_mut();
            for ((pv, a), &gv) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a = self.rho * *a + (1.0 - self.rho) * gv * gv;
                *pv -= self.lr * gv / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_relative_eq;

    fn scalar_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("p", Tensor::vector(vec![v]));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_param(1.0);
        let before = p.bit_snapshot();
        let mut opt = RmsProp::new(&p, 0.1);
        opt.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(p.bit_snapshot(), before);
    }

    #[test]
    fn single_update_by_hand() {
        let mut p = scalar_param(1.0);
        let mut opt = RmsProp::new(&p, 0.1);
        opt.step(&mut p, &[vec![1.0]]).unwrap();
        assert_relative_eq!(opt.accumulators()[0][0], 0.1, epsilon = 1e-15);
        let expected = 1.0 - 0.1 / (0.1f64.sqrt() + 1e-8);
        assert_relative_eq!(p.get(p.id("p").unwrap()).data()[0], expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.68377, epsilon = 1e-5);
    }

    #[test]
    fn accumulator_grows_under_constant_gradient() {
        let mut p = scalar_param(0.0);
        let mut opt = RmsProp::new(&p, 0.01);
        opt.step(&mut p, &[vec![0.5]]).unwrap();
        let a1 = opt.accumulators()[0][0];
        opt.step(&mut p, &[vec![0.5]]).unwrap();
        assert!(opt.accumulators()[0][0] > a1);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);
        clip_global_norm(&mut g, 1.0);
        assert_relative_eq!(g[0][0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(g[1][0], 0.8, epsilon = 1e-15);
    }
}
