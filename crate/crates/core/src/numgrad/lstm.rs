use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Weights of one LSTM cell bound into a graph.
///
/// `w` is `[4·d_h × (d_in + d_h)]` acting on `concat(x, h_prev)`, `b` is
/// `[4·d_h]`. Gate blocks are stacked in the order input, forget, cell
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
}

pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weights: LstmWeights,
) -> Result<(Var, Var)> {
    let d_h = g.value(h_prev).len();
    let ws = g.value(weights.w).shape().to_vec();
    let d_in = g.value(x).len();
    if ws.len() != 2 || ws[0] != 4 * d_h || ws[1] != d_in + d_h {
        return Err(Error::shape("lstm_cell", &ws, &[4 * d_h, d_in + d_h]));
    }
    if g.value(c_prev).len() != d_h || g.value(weights.b).len() != 4 * d_h {
        return Err(Error::shape(
            "lstm_cell",
            g.value(c_prev).shape(),
            g.value(weights.b).shape(),
        ));
    }

    let xh = g.concat(&[x, h_prev])?;
    let wx = g.matvec(weights.w, xh)?;
    let z = g.add(wx, weights.b)?;

    let zi = g.slice(z, 0, d_h)?;
    let zf = g.slice(z, d_h, d_h)?;
    let zg = g.slice(z, 2 * d_h, d_h)?;
    let zo = g.slice(z, 3 * d_h, d_h)?;
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
