//! Small layers shared by the recurrent models.

use rand::Rng;

use crate::autodiff::{dropout_mask, Graph, Tensor, Var};
use crate::error::Result;

/// `x · w + b` with `x` `[n, in]`, `w` `[in, out]`, `b` `[out]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Plain LSTM step with a fused `[in + H, 4H]` weight (gate order f, i, o, c).
pub fn lstm_step(g: &mut Graph, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<(Var, Var)> {
    let hidden = g.shape(h)[1];
    let xh = g.concat(&[x, h], 1)?;
    let z = linear(g, xh, w, b)?;
    let f = g.slice(z, 1, 0, hidden)?;
    let f = g.sigmoid(f);
    let i = g.slice(z, 1, hidden, 2 * hidden)?;
    let i = g.sigmoid(i);
    let o = g.slice(z, 1, 2 * hidden, 3 * hidden)?;
    let o = g.sigmoid(o);
    let u = g.slice(z, 1, 3 * hidden, 4 * hidden)?;
    let u = g.tanh(u);
    let fc = g.mul(f, c)?;
    let iu = g.mul(i, u)?;
    let c_new = g.add(fc, iu)?;
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// A `[batch, dim]` dropout mask tiled `steps` times along the rows, so every
/// timestep of a window sees the same mask (variational / locked dropout).
pub fn locked_mask<R: Rng>(steps: usize, batch: usize, dim: usize, p: f64, rng: &mut R) -> Tensor {
    let one = dropout_mask(&[batch, dim], p, rng);
    let mut data = Vec::with_capacity(steps * batch * dim);
    for _ in 0..steps {
        data.extend_from_slice(one.data());
    }
    Tensor::new(vec![steps * batch, dim], data).expect("tiled mask shape")
}

/// Rows of `x` from `start` to `end` (axis 0).
pub fn rows(g: &mut Graph, x: Var, start: usize, end: usize) -> Result<Var> {
    g.slice(x, 0, start, end)
}
