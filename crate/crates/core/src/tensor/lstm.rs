use rand::Rng;

use super::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub const LSTM_INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

/// One LSTM step given the input projection `x·Wx + b` (width 4H) and the
/// recurrent matrix `Wh` (`H × 4H`). Gate blocks are ordered `[i | f | g | o]`.
pub fn lstm_step(g: &mut Graph, x_proj: Var, wh: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let hidden = g.shape(h_prev).first().copied().unwrap_or(0);
    if g.shape(x_proj) != [4 * hidden] || g.shape(c_prev) != [hidden] {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "projection {:?}, h {:?}, c {:?}",
                g.shape(x_proj),
                g.shape(h_prev),
                g.shape(c_prev)
            ),
        ));
    }
    let rec = g.matmul(h_prev, wh)?;
    let z = g.add(x_proj, rec)?;
    let zi = g.slice(z, 0, hidden)?;
    let zf = g.slice(z, hidden, hidden)?;
    let zg = g.slice(z, 2 * hidden, hidden)?;
    let zo = g.slice(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Parameters of one LSTM direction, stored in a shared [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    /// Uniform `±0.08` weights, forget-gate bias 1.
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = params.add_uniform(format!("{prefix}.wx"), &[input, 4 * hidden], LSTM_INIT_SCALE, rng);
        let wh = params.add_uniform(format!("{prefix}.wh"), &[hidden, 4 * hidden], LSTM_INIT_SCALE, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(FORGET_BIAS);
        let b = params.add(format!("{prefix}.b"), Tensor::vector(bias));
        Self { input, hidden, wx, wh, b }
    }

    pub fn zeros(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize) -> Self {
        let wx = params.add_zeros(format!("{prefix}.wx"), &[input, 4 * hidden]);
        let wh = params.add_zeros(format!("{prefix}.wh"), &[hidden, 4 * hidden]);
        let b = params.add_zeros(format!("{prefix}.b"), &[4 * hidden]);
        Self { input, hidden, wx, wh, b }
    }

    /// Runs the cell over the rows of `xs` (`T × input`) from zero state.
    /// With `reverse` the sequence is consumed last row first; outputs are
    /// always returned in row order.
    pub fn run(&self, g: &mut Graph, params: &ParamSet, xs: Var, reverse: bool) -> Result<Vec<Var>> {
        let shape = g.shape(xs).to_vec();
        if shape.len() != 2 || shape[1] != self.input || shape[0] == 0 {
            return Err(Error::shape(
                "lstm",
                format!("input {shape:?}, expected [T, {}]", self.input),
            ));
        }
        let wx = g.param(params, self.wx);
        let wh = g.param(params, self.wh);
        let b = g.param(params, self.b);
        let proj = g.matmul(xs, wx)?;
        let proj = g.add(proj, b)?;
        let mut h = g.constant(Tensor::zeros(&[self.hidden]));
        let mut c = h;
        let steps = shape[0];
        let mut out = vec![h; steps];
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let xp = g.row(proj, t)?;
            (h, c) = lstm_step(g, xp, wh, h, c)?;
            out[t] = h;
        }
        Ok(out)
    }
}
