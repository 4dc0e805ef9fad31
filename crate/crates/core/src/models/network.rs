//! Forward passes on the tape.

use std::sync::Arc;

use super::features::{batch_tensor, EncodedData};
use super::shapes::{gamlp_head_widths, mlp_image_widths, s2p_widths, GATES};
use super::spec::*;
use crate::numcore::{BlockEdges, BnLayout, ParameterStore, Tape, Tensor2, Var};
use crate::prior_graph::{split_directional, PriorGraph};

/// Graph-derived constants shared by every batch.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub k: usize,
    pub outgoing: Arc<BlockEdges>,
    pub incoming: Arc<BlockEdges>,
    /// Per privacy node: 1 where the object is linked to it, else 0.
    pub attention_mask: [Vec<f64>; 2],
}

impl GraphInputs {
    pub fn from_graph(g: &PriorGraph) -> Self {
        let k_o = g.k_o();
        let (outgoing, incoming) = split_directional(g).edges();
        let mask = |j: usize| -> Vec<f64> {
            (0..k_o)
                .map(|i| if g.get(k_o + j, i) != 0.0 || g.get(i, k_o + j) != 0.0 { 1.0 } else { 0.0 })
                .collect()
        };
        Self { k: g.k, outgoing, incoming, attention_mask: [mask(0), mask(1)] }
    }

    /// No edges at all.
    pub fn empty(k_o: usize) -> Self {
        let k = k_o + 2;
        let e = Arc::new(BlockEdges { block: k, edges: Vec::new() });
        Self { k, outgoing: Arc::clone(&e), incoming: e, attention_mask: [vec![0.0; k_o], vec![0.0; k_o]] }
    }
}

fn lin(tape: &mut Tape, store: &ParameterStore, x: Var, prefix: &str) -> Var {
    let w = tape.param(store, &format!("{prefix}.w"));
    let b = tape.param(store, &format!("{prefix}.b"));
    tape.linear(x, w, Some(b))
}

fn bn(tape: &mut Tape, store: &ParameterStore, x: Var, key: &str, layout: BnLayout) -> Var {
    let g = tape.param(store, &format!("{key}.gamma"));
    let b = tape.param(store, &format!("{key}.beta"));
    let rm = store.value(&format!("{key}.running_mean")).map(|t| t.data().to_vec()).unwrap_or_default();
    let rv = store.value(&format!("{key}.running_var")).map(|t| t.data().to_vec()).unwrap_or_default();
    tape.batchnorm(x, g, b, layout, (&rm, &rv), key)
}

/// Scene logits → two privacy logits.
pub fn s2p_logits(spec: &ModelSpec, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
    tape.set_scope("s2p");
    let n = s2p_widths(spec).len();
    let mut h = x;
    for i in 0..n {
        h = lin(tape, store, h, &format!("s2p.l{i}"));
        if i + 1 < n {
            h = tape.relu(h);
            h = tape.dropout(h, spec.dropout);
        }
    }
    h
}

pub fn mlp_logits(spec: &ModelSpec, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
    tape.set_scope("mlp");
    let mut h = x;
    for i in 0..spec.depth {
        h = lin(tape, store, h, &format!("mlp.l{i}"));
        if spec.batchnorm {
            h = bn(tape, store, h, &format!("mlp.bn{i}"), BnLayout::PerColumn);
        }
        h = tape.relu(h);
        h = tape.dropout(h, spec.dropout);
    }
    lin(tape, store, h, "mlp.out")
}

pub fn mlp_image_logits(spec: &ModelSpec, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
    tape.set_scope("mlp-image");
    let n = mlp_image_widths(spec).len();
    let mut h = x;
    for i in 0..n {
        h = lin(tape, store, h, &format!("mlpi.l{i}"));
        if i + 1 < n {
            h = tape.relu(h);
            h = tape.dropout(h, spec.dropout);
        }
    }
    h
}

/// Per-node blocks with shared weights, sum pooling over nodes, halving head.
pub fn gamlp_logits(spec: &ModelSpec, tape: &mut Tape, store: &ParameterStore, x: Var, batch: usize) -> Var {
    tape.set_scope("gamlp");
    let k = spec.k();
    let mut h = tape.reshape(x, batch * k, spec.features_per_node());
    h = tape.dropout(h, spec.dropout);
    if spec.transform > 0 {
        h = lin(tape, store, h, "gamlp.trans");
    }
    for i in 0..spec.depth {
        h = lin(tape, store, h, &format!("gamlp.block{i}"));
        if spec.batchnorm {
            h = bn(tape, store, h, &format!("gamlp.bn{i}"), BnLayout::PerNode(k));
        }
        h = tape.relu(h);
        h = tape.dropout(h, spec.dropout);
    }
    let mut h = tape.sum_blocks(h, k);
    let n = gamlp_head_widths(spec).len();
    for i in 0..n {
        h = lin(tape, store, h, &format!("gamlp.head{i}"));
        if i + 1 < n {
            h = tape.relu(h);
            h = tape.dropout(h, spec.dropout);
        }
    }
    h
}

/// Gated propagation over both edge directions with weights shared
/// across steps. `x` holds `batch · K` node rows.
pub fn ggnn(tape: &mut Tape, store: &ParameterStore, x: Var, graph: &GraphInputs, steps: usize) -> Var {
    tape.set_scope("grm.ggnn");
    let gate = |tape: &mut Tape, g: &str| {
        let w = (tape.param(store, &format!("grm.gate_{g}.w.w")), tape.param(store, &format!("grm.gate_{g}.w.b")));
        let u = (tape.param(store, &format!("grm.gate_{g}.u.w")), tape.param(store, &format!("grm.gate_{g}.u.b")));
        (w, u)
    };
    let [(zw, zu), (rw, ru), (cw, cu)] = GATES.map(|g| gate(tape, g));
    let mut h = x;
    for _ in 0..steps {
        let ao = tape.aggregate(h, &graph.outgoing);
        let ai = tape.aggregate(h, &graph.incoming);
        let a = tape.concat_cols(&[ao, ai]);
        let pre = |tape: &mut Tape, w: (Var, Var), u: (Var, Var), state: Var| {
            let p = tape.linear(a, w.0, Some(w.1));
            let q = tape.linear(state, u.0, Some(u.1));
            tape.add(p, q)
        };
        let z = pre(tape, zw, zu, h);
        let z = tape.sigmoid(z);
        let r = pre(tape, rw, ru, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let c = pre(tape, cw, cu, rh);
        let c = tape.tanh(c);
        let delta = tape.sub(c, h);
        let step = tape.mul(z, delta);
        h = tape.add(h, step);
    }
    h
}

/// `tanh(W [h_T, h_0] + b)` per node.
pub fn grm_output(tape: &mut Tape, store: &ParameterStore, h_t: Var, h_0: Var) -> Var {
    tape.set_scope("grm.output");
    let x = tape.concat_cols(&[h_t, h_0]);
    let y = lin(tape, store, x, "grm.out");
    tape.tanh(y)
}

fn object_rows(batch: usize, k: usize, k_o: usize) -> Vec<usize> {
    (0..batch).flat_map(|b| (0..k_o).map(move |i| b * k + i)).collect()
}

/// Attention of each privacy node over the objects: `(batch · K_o) × 1`
/// per privacy node, zero where the graph has no link.
pub fn attention(tape: &mut Tape, store: &ParameterStore, h: Var, graph: &GraphInputs, batch: usize) -> [Var; 2] {
    tape.set_scope("grm.attention");
    let k = graph.k;
    let k_o = k - 2;
    let hobj = tape.gather_rows(h, &object_rows(batch, k, k_o));
    let o = lin(tape, store, hobj, "grm.att.wi");
    let o = tape.tanh(o);
    [0, 1].map(|j| {
        let rows: Vec<usize> = (0..batch).map(|b| b * k + k_o + j).collect();
        let hp = tape.gather_rows(h, &rows);
        let p = lin(tape, store, hp, "grm.att.wj");
        let p = tape.tanh(p);
        let expand: Vec<usize> = (0..batch).flat_map(|b| std::iter::repeat(b).take(k_o)).collect();
        let p = tape.gather_rows(p, &expand);
        let po = tape.mul(p, o);
        let e = lin(tape, store, po, "grm.att.a");
        let s = tape.sigmoid(e);
        let mask: Vec<f64> = (0..batch).flat_map(|_| graph.attention_mask[j].iter().copied()).collect();
        let m = tape.constant(Tensor2::from_vec(batch * k_o, 1, mask).expect("sized"));
        tape.mul(s, m)
    })
}

/// Own output vector followed by the attention-weighted object outputs.
pub fn privacy_vectors(tape: &mut Tape, out: Var, alpha: &[Var; 2], graph: &GraphInputs, batch: usize) -> [Var; 2] {
    let k = graph.k;
    let k_o = k - 2;
    let o = tape.value(out).cols();
    let outobj = tape.gather_rows(out, &object_rows(batch, k, k_o));
    [0, 1].map(|j| {
        let rows: Vec<usize> = (0..batch).map(|b| b * k + k_o + j).collect();
        let own = tape.gather_rows(out, &rows);
        let weighted = tape.scale_rows(outobj, alpha[j]);
        let weighted = tape.reshape(weighted, batch, k_o * o);
        tape.concat_cols(&[own, weighted])
    })
}

/// Initial node states for a batch, with learned privacy values written in.
pub fn grm_inputs(
    spec: &ModelSpec,
    tape: &mut Tape,
    store: &ParameterStore,
    data: &EncodedData,
    idx: &[usize],
) -> Var {
    let k = spec.k();
    let k_o = spec.objects;
    let b = idx.len();
    let base = batch_tensor(&data.nodes, idx);
    let base = Tensor2::from_vec(b * k, spec.node_dim(), base.into_data()).expect("node rows");
    let x = tape.constant(base);
    let priv_rows: Vec<usize> = (0..b).flat_map(|i| [i * k + k_o, i * k + k_o + 1]).collect();
    match spec.privacy {
        PrivacySource::Scene => {
            let s = tape.constant(batch_tensor(&data.scene, idx));
            let logits = s2p_logits(spec, tape, store, s);
            let col = tape.reshape(logits, 2 * b, 1);
            tape.scatter_add(x, col, &priv_rows, spec.privacy_col())
        }
        PrivacySource::Image => {
            tape.set_scope("align");
            let f = tape.constant(batch_tensor(&data.image, idx));
            let g = lin(tape, store, f, "align");
            let twice: Vec<usize> = (0..b).flat_map(|i| [i, i]).collect();
            let g = tape.gather_rows(g, &twice);
            tape.scatter_add(x, g, &priv_rows, spec.privacy_col())
        }
        PrivacySource::Zeros | PrivacySource::Random => x,
    }
}

/// Shared per-privacy-node scorer: one logit per row.
pub fn classifier(spec: &ModelSpec, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
    tape.set_scope("classifier");
    let mut h = tape.dropout(x, spec.dropout);
    if spec.reshape {
        h = lin(tape, store, h, "reshape");
        h = tape.dropout(h, spec.dropout);
    }
    h = lin(tape, store, h, "cls.fc1");
    h = tape.relu(h);
    h = tape.dropout(h, spec.dropout);
    lin(tape, store, h, "cls.fc2")
}

pub fn grm_logits(
    spec: &ModelSpec,
    tape: &mut Tape,
    store: &ParameterStore,
    data: &EncodedData,
    graph: &GraphInputs,
    idx: &[usize],
) -> Var {
    let b = idx.len();
    let x = grm_inputs(spec, tape, store, data, idx);
    let h = ggnn(tape, store, x, graph, spec.steps);
    let out = grm_output(tape, store, h, x);
    let alpha = attention(tape, store, h, graph, b);
    let [v0, v1] = privacy_vectors(tape, out, &alpha, graph, b);
    let l0 = classifier(spec, tape, store, v0);
    let l1 = classifier(spec, tape, store, v1);
    tape.concat_cols(&[l0, l1])
}

/// Unnormalised class scores `[public, private]` for the records `idx`.
pub fn logits(
    spec: &ModelSpec,
    tape: &mut Tape,
    store: &ParameterStore,
    data: &EncodedData,
    graph: Option<&GraphInputs>,
    idx: &[usize],
) -> Var {
    match spec.kind {
        ModelKind::S2p => {
            let x = tape.constant(batch_tensor(&data.scene, idx));
            s2p_logits(spec, tape, store, x)
        }
        ModelKind::Mlp => {
            let x = tape.constant(batch_tensor(&data.flat, idx));
            mlp_logits(spec, tape, store, x)
        }
        ModelKind::MlpImage => {
            let x = tape.constant(batch_tensor(&data.flat, idx));
            mlp_image_logits(spec, tape, store, x)
        }
        ModelKind::Gamlp => {
            let x = tape.constant(batch_tensor(&data.flat, idx));
            gamlp_logits(spec, tape, store, x, idx.len())
        }
        ModelKind::Grm => {
            let empty;
            let g = match graph {
                Some(g) => g,
                None => {
                    empty = GraphInputs::empty(spec.objects);
                    &empty
                }
            };
            grm_logits(spec, tape, store, data, g, idx)
        }
    }
}

/// Class probabilities `[public, private]` for the records `idx`.
pub fn forward(
    spec: &ModelSpec,
    tape: &mut Tape,
    store: &ParameterStore,
    data: &EncodedData,
    graph: Option<&GraphInputs>,
    idx: &[usize],
) -> Var {
    let z = logits(spec, tape, store, data, graph, idx);
    tape.set_scope("softmax");
    tape.softmax(z)
}

/// Private only when strictly more likely than public.
pub fn predict_label(p: &[f64]) -> usize {
    usize::from(p[1] > p[0])
}
