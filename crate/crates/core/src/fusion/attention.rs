//! Multi-head spatial and graph attention and the gated fusion that merges
//! them.
//!
//! Hidden states have shape `[G, N, D]`. Each head projects the
//! `2D`-wide concatenation `h ‖ e` of a state and its embedding to queries
//! and keys of width `d`, and the state alone to values. The projections of
//! all heads are stored side by side in one `[_, M·d]` matrix, so head `m`
//! owns columns `m·d .. (m+1)·d`.

use crate::autodiff::{Array, Binding, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Dense, Rng};

/// Query, key and value projections of one attention module, all heads
/// packed together.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_heads(d_model, heads, head_dim)?;
        Ok(Self {
            query: Dense::new(store, &format!("{name}.query"), 2 * d_model, d_model, true, rng),
            key: Dense::new(store, &format!("{name}.key"), 2 * d_model, d_model, true, rng),
            value: Dense::new(store, &format!("{name}.value"), d_model, d_model, true, rng),
            heads,
            head_dim,
        })
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }
}

pub(crate) fn check_heads(d_model: usize, heads: usize, head_dim: usize) -> Result<()> {
    if heads == 0 || head_dim == 0 || heads * head_dim != d_model {
        return Err(Error::Config(format!(
            "heads ({heads}) x head dim ({head_dim}) must equal the model width ({d_model})"
        )));
    }
    Ok(())
}

/// Gate parameters `W_z1`, `W_z2` (both `D x D`) and bias `b_z`.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub spatial: Dense,
    pub graph: Dense,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, rng: &mut Rng) -> Self {
        Self {
            spatial: Dense::new(store, &format!("{name}.spatial"), d_model, d_model, false, rng),
            graph: Dense::new(store, &format!("{name}.graph"), d_model, d_model, true, rng),
        }
    }
}

/// Attention output together with its weights.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `[A, S, D]`, the same layout as the inputs.
    pub output: Var,
    /// `[A·M, S, S]`: for each group `a` and head `m`, row `i` holds the
    /// weights that query `i` puts on every key.
    pub weights: Var,
}

/// Scaled dot-product attention along axis 1 of `[A, S, _]` inputs.
fn attend(
    tape: &mut Tape,
    bind: &Binding,
    qk_in: Var,
    v_in: Var,
    p: &AttentionParams,
    mask: Option<Var>,
) -> Result<Attended> {
    let shape = tape.shape(v_in).to_vec();
    let (a, s, dm) = (shape[0], shape[1], shape[2]);
    if dm != p.d_model() {
        return Err(Error::Shape {
            op: "attention",
            lhs: shape,
            rhs: vec![p.d_model()],
        });
    }
    let (m, d) = (p.heads, p.head_dim);

    let q = p.query.apply(tape, bind, qk_in)?;
    let q = tape.relu(q);
    let k = p.key.apply(tape, bind, qk_in)?;
    let k = tape.relu(k);
    let v = p.value.apply(tape, bind, v_in)?;
    let v = tape.relu(v);

    let split = |tape: &mut Tape, x: Var| -> Result<Var> {
        let x = tape.reshape(x, &[a, s, m, d])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[a * m, s, d])
    };
    let qh = split(tape, q)?;
    let kh = split(tape, k)?;
    let vh = split(tape, v)?;

    let kt = tape.transpose(kh)?;
    let scores = tape.bmm(qh, kt)?;
    let mut scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    if let Some(mask) = mask {
        scores = tape.add(scores, mask)?;
    }
    let weights = tape.softmax(scores, 2)?;
    let out = tape.bmm(weights, vh)?;
    let out = tape.reshape(out, &[a, m, s, d])?;
    let out = tape.permute(out, &[0, 2, 1, 3])?;
    let output = tape.reshape(out, &[a, s, m * d])?;
    Ok(Attended { output, weights })
}

/// Attention among the nodes of each graph slice.
///
/// With `exclude_self` a node's own key is masked out, leaving attention
/// over the other `N - 1` nodes; this needs `N >= 2`.
pub fn spatial_attention(
    tape: &mut Tape,
    bind: &Binding,
    h: Var,
    mgse: Var,
    p: &AttentionParams,
    exclude_self: bool,
) -> Result<Attended> {
    let x = tape.concat(&[h, mgse], 2)?;
    let mask = if exclude_self {
        let n = tape.shape(h)[1];
        if n < 2 {
            return Err(Error::Config("excluding self-attention needs at least 2 nodes".into()));
        }
        let mut m = Array::zeros(vec![n, n]);
        for i in 0..n {
            m.set(&[i, i], -1e30);
        }
        Some(tape.constant(m))
    } else {
        None
    };
    attend(tape, bind, x, h, p, mask)
}

/// Attention of each node across its own slices in the different graphs.
///
/// The returned weights have shape `[N·M, G, G]`; the output is laid out
/// like `h`.
pub fn graph_attention(
    tape: &mut Tape,
    bind: &Binding,
    h: Var,
    mgse: Var,
    p: &AttentionParams,
) -> Result<Attended> {
    let x = tape.concat(&[h, mgse], 2)?;
    let xt = tape.permute(x, &[1, 0, 2])?;
    let ht = tape.permute(h, &[1, 0, 2])?;
    let att = attend(tape, bind, xt, ht, p, None)?;
    let output = tape.permute(att.output, &[1, 0, 2])?;
    Ok(Attended {
        output,
        weights: att.weights,
    })
}

/// `z = sigmoid(H_S W_z1 + H_G W_z2 + b_z)`, `H = z ⊙ H_S + (1 - z) ⊙ H_G`.
/// Returns `(H, z)`.
pub fn gated_fusion(
    tape: &mut Tape,
    bind: &Binding,
    hs: Var,
    hg: Var,
    gate: &GateParams,
) -> Result<(Var, Var)> {
    let a = gate.spatial.apply(tape, bind, hs)?;
    let b = gate.graph.apply(tape, bind, hg)?;
    let pre = tape.add(a, b)?;
    let z = tape.sigmoid(pre);
    let diff = tape.sub(hs, hg)?;
    let mixed = tape.mul(z, diff)?;
    let h = tape.add(hg, mixed)?;
    Ok((h, z))
}
