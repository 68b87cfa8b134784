use super::{Graph, ParamSet, Tensor, Var};
use crate::error::Result;

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item()
}

/// Compares autodiff against central differences for a scalar function of
/// one tensor and returns the largest relative error over coordinates.
pub fn gradient_check<F>(f: F, x: &Tensor, delta: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(xv)
        .map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(t);
        let out = f(&mut g, v)?;
        Ok(eval_scalar(&g, out))
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += delta;
        let mut minus = x.clone();
        minus.data_mut()[i] -= delta;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * delta);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// As [`gradient_check`], over every value of every tensor in `params`.
pub fn gradient_check_params<F>(f: F, params: &ParamSet, delta: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let grads = g.backward(out)?;
    let analytic = g.param_grads(&grads, params);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        Ok(eval_scalar(&g, out))
    };

    let mut worst = 0.0f64;
    let mut work = params.clone();
    for id in params.ids() {
        for (i, &orig) in params.get(id).data().iter().enumerate() {
            work.get_mut(id).data_mut()[i] = orig + delta;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - delta;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * delta);
            worst = worst.max(relative_error(analytic[id.index()][i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::vector((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let err = gradient_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 2.0) > 0.3);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }

    #[test]
    fn params_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = ParamSet::new();
        let w = p.add_uniform("w", &[3, 2], 0.5, &mut rng);
        let b = p.add_uniform("b", &[2], 0.5, &mut rng);
        let x = Tensor::vector(vec![0.3, -0.1, 0.8]);
        let err = gradient_check_params(
            |g, p| {
                let xv = g.constant(x.clone());
                let wv = g.param(p, w);
                let bv = g.param(p, b);
                let h = g.matmul(xv, wv)?;
                let h = g.add(h, bv)?;
                let y = g.softmax(h)?;
                g.nll_loss(y, 1)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
