//! Shared-weight layer: a one-layer bidirectional LSTM whose two directions
//! are averaged per timestamp, followed by single-head self-attention.
//!
//! Windows are time-major: a batch is `[B, d, N]`, row `s` of each window
//! holding all `N` sensors at one timestamp. The LSTM hidden size equals `N`
//! so the layer maps `[B, d, N]` to `[B, d, N]`.

use crate::error::{Error, Result};
use crate::numgrad::{concat, Bound, ParamSpec, Partition, Var};

/// Tag under which the shared output is registered on the tape.
pub const Z_TAG: &str = "Z";

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

pub fn param_specs(n: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for dir in DIRECTIONS {
        specs.push(ParamSpec::weight(
            Partition::Shared,
            format!("shared.lstm.{dir}.w_ih"),
            &[n, 4 * n],
            n,
        ));
        specs.push(ParamSpec::weight(
            Partition::Shared,
            format!("shared.lstm.{dir}.w_hh"),
            &[n, 4 * n],
            n,
        ));
        specs.push(ParamSpec::bias(
            Partition::Shared,
            format!("shared.lstm.{dir}.b"),
            4 * n,
        ));
    }
    for m in ["w_q", "w_k", "w_v"] {
        specs.push(ParamSpec::weight(
            Partition::Shared,
            format!("shared.attn.{m}"),
            &[n, n],
            n,
        ));
    }
    specs
}

fn check_window(x: Var<'_>, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.shape().as_slice() {
        &[b, d, n] if d >= 1 => Ok((b, d, n)),
        other => Err(Error::shape(
            op,
            format!("expected [B, d, N] with d >= 1, got {other:?}"),
        )),
    }
}

struct Cell<'t> {
    w_ih: Var<'t>,
    w_hh: Var<'t>,
    b: Var<'t>,
}

impl<'t> Cell<'t> {
    fn bind(p: &Bound<'t>, dir: &str) -> Result<Self> {
        Ok(Cell {
            w_ih: p.get(&format!("shared.lstm.{dir}.w_ih"))?,
            w_hh: p.get(&format!("shared.lstm.{dir}.w_hh"))?,
            b: p.get(&format!("shared.lstm.{dir}.b"))?,
        })
    }

    /// One LSTM step; `state` is `None` for the zero initial state.
    /// Gate column order: input, forget, candidate, output.
    fn step(&self, x: Var<'t>, state: Option<(Var<'t>, Var<'t>)>, n: usize) -> Result<(Var<'t>, Var<'t>)> {
        let mut gates = x.matmul(self.w_ih)?;
        if let Some((h, _)) = state {
            gates = gates.add(h.matmul(self.w_hh)?)?;
        }
        let gates = gates.add(self.b)?;
        let i = gates.narrow(1, 0, n)?.sigmoid()?;
        let f = gates.narrow(1, n, n)?.sigmoid()?;
        let g = gates.narrow(1, 2 * n, n)?.tanh()?;
        let o = gates.narrow(1, 3 * n, n)?.sigmoid()?;
        let c = match state {
            Some((_, c_prev)) => f.mul(c_prev)?.add(i.mul(g)?)?,
            None => i.mul(g)?,
        };
        let h = o.mul(c.tanh()?)?;
        Ok((h, c))
    }
}

/// Bi-LSTM over each window; row `s` of the output is the mean of the
/// forward and backward hidden states at step `s`.
pub fn bilstm_forward<'t>(x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
    let (b, d, n) = check_window(x, "bilstm")?;
    let w_ih_shape = p.get("shared.lstm.fwd.w_ih")?.shape();
    if w_ih_shape != [n, 4 * n] {
        return Err(Error::shape(
            "bilstm",
            format!("window has {n} sensors but input weights are {w_ih_shape:?}"),
        ));
    }
    let steps: Vec<Var<'t>> = (0..d)
        .map(|s| x.narrow(1, s, 1)?.reshape(&[b, n]))
        .collect::<Result<_>>()?;

    let run = |cell: &Cell<'t>, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Option<Var<'t>>>> {
        let mut out = vec![None; d];
        let mut state = None;
        for s in order {
            let next = cell.step(steps[s], state, n)?;
            out[s] = Some(next.0);
            state = Some(next);
        }
        Ok(out)
    };
    let fwd = run(&Cell::bind(p, "fwd")?, &mut (0..d))?;
    let bwd = run(&Cell::bind(p, "bwd")?, &mut (0..d).rev())?;

    let rows: Vec<Var<'t>> = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, b_)| {
            let (f, b_) = (f.expect("filled"), b_.expect("filled"));
            f.add(b_)?.scale(0.5)?.reshape(&[b, 1, n])
        })
        .collect::<Result<_>>()?;
    concat(&rows, 1)
}

/// Scaled dot-product self-attention over timestamps. Returns the output and
/// the `[B, d, d]` attention weights (rows sum to one).
pub fn self_attention<'t>(seq: Var<'t>, p: &Bound<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let (_, _, n) = check_window(seq, "self_attention")?;
    let (wq, wk, wv) = (
        p.get("shared.attn.w_q")?,
        p.get("shared.attn.w_k")?,
        p.get("shared.attn.w_v")?,
    );
    if wq.shape() != [n, n] {
        return Err(Error::shape(
            "self_attention",
            format!("sequence has {n} features, projections are {:?}", wq.shape()),
        ));
    }
    let q = seq.matmul(wq)?;
    let k = seq.matmul(wk)?;
    let v = seq.matmul(wv)?;
    let weights = q.matmul(k.transpose()?)?.scale(1.0 / (n as f64).sqrt())?.softmax()?;
    Ok((weights.matmul(v)?, weights))
}

/// `Z = self_attention(bilstm(x))`, tagged [`Z_TAG`].
pub fn shared_forward<'t>(x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
    let (z, _) = self_attention(bilstm_forward(x, p)?, p)?;
    z.tape().tag(Z_TAG, z);
    Ok(z)
}
