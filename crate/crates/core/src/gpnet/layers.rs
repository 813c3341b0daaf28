//! Graph builders for the network's layers. Each builder registers the
//! parameters it needs together with their initializer.

use std::collections::HashMap;

use crate::geometry::IDENTITY_ROW;
use crate::grad::{DenseArray, GradError, Graph, NodeId, ParamStore};

#[derive(Clone, Debug)]
enum Init {
    Uniform(usize),
    Value(DenseArray),
}

/// A graph under construction plus the parameter initializers it needs.
#[derive(Default)]
pub struct NetBuilder {
    pub graph: Graph,
    specs: Vec<(String, Vec<usize>, Init)>,
    nodes: HashMap<String, NodeId>,
}

type R = Result<NodeId, GradError>;

impl NetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn param_with(&mut self, name: &str, shape: &[usize], init: Init) -> NodeId {
        if let Some(id) = self.nodes.get(name) {
            return *id;
        }
        let id = self.graph.param(name, shape);
        self.specs.push((name.to_string(), shape.to_vec(), init));
        self.nodes.insert(name.to_string(), id);
        id
    }

    /// Parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn param_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> NodeId {
        self.param_with(name, shape, Init::Uniform(fan_in))
    }

    /// Parameter with a fixed initial value.
    pub fn param_value(&mut self, name: &str, value: DenseArray) -> NodeId {
        let shape = value.shape().to_vec();
        self.param_with(name, &shape, Init::Value(value))
    }

    /// Registers every parameter of this graph in `store` (existing entries are kept).
    pub fn init_params(&self, store: &mut ParamStore) {
        for (name, shape, init) in &self.specs {
            match init {
                Init::Uniform(fan_in) => store.init_uniform(name, shape, *fan_in),
                Init::Value(v) => store.init_value(name, v.clone()),
            }
        }
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// `x W + b` over the last axis of `x`.
    pub fn linear(&mut self, name: &str, x: NodeId, din: usize, dout: usize) -> R {
        let w = self.param_uniform(&format!("{name}.w"), &[din, dout], din);
        let b = self.param_uniform(&format!("{name}.b"), &[dout], din);
        self.graph.push_scope(name);
        let y = self.graph.matmul(x, w).and_then(|y| self.graph.add_bias(y, b));
        self.graph.pop_scope();
        y
    }

    /// `x W + b` with caller-chosen initial values.
    pub fn linear_init(&mut self, name: &str, x: NodeId, w: DenseArray, b: DenseArray) -> R {
        let w = self.param_value(&format!("{name}.w"), w);
        let b = self.param_value(&format!("{name}.b"), b);
        self.graph.push_scope(name);
        let y = self.graph.matmul(x, w).and_then(|y| self.graph.add_bias(y, b));
        self.graph.pop_scope();
        y
    }
}

/// Shared per-point encoder with a pooled context: for clouds `P` of shape
/// `[k, n, 3]`, `H = GELU(P W1 + b1)` and `Q = P + [H | mean_n(H)] W2 + b2`.
pub fn point_encoder(b: &mut NetBuilder, name: &str, clouds: NodeId, hidden: usize) -> R {
    let shape = b.graph.shape(clouds).to_vec();
    let (k, n) = (shape[0], shape[1]);
    let pre = b.linear(&format!("{name}.l1"), clouds, 3, hidden)?;
    let h = b.graph.gelu(pre);
    let g = &mut b.graph;
    let ctx = g.mean(h, Some(1))?;
    let ctx = g.reshape(ctx, &[k, 1, hidden])?;
    let ctx = g.repeat(ctx, 1, n)?;
    let cat = g.concat(&[h, ctx], 2)?;
    let delta = b.linear(&format!("{name}.l2"), cat, 2 * hidden, 3)?;
    b.graph.add(clouds, delta)
}

/// Mean-pooled token embeddings mapped to `d_text`. `bow` is `[1, V]` holding
/// token counts divided by the prompt length.
pub fn text_encoder(b: &mut NetBuilder, bow: NodeId, vocab: usize, d_embed: usize, d_text: usize) -> R {
    let emb = b.param_uniform("text.embed", &[vocab, d_embed], 1);
    let pooled = b.graph.matmul(bow, emb)?;
    b.linear("text.proj", pooled, d_embed, d_text)
}

/// Multi-head attention of `queries` (`[r, dq]`) over `kv` (`[e, dkv]`).
/// `key_bias` (`[1, e]`) is added to every score row.
pub fn multihead(
    b: &mut NetBuilder,
    name: &str,
    queries: NodeId,
    kv: NodeId,
    d_model: usize,
    heads: usize,
    key_bias: NodeId,
) -> R {
    let dq = *b.graph.shape(queries).last().expect("rank >= 1");
    let dkv = *b.graph.shape(kv).last().expect("rank >= 1");
    let r = b.graph.shape(queries)[0];
    let e = b.graph.shape(kv)[0];
    let q = b.linear(&format!("{name}.q"), queries, dq, d_model)?;
    let k = b.linear(&format!("{name}.k"), kv, dkv, d_model)?;
    let v = b.linear(&format!("{name}.v"), kv, dkv, d_model)?;
    let dh = d_model / heads;
    let g = &mut b.graph;
    g.push_scope(name);
    let bias = g.broadcast(key_bias, &[r, e])?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * dh, dh)?;
        let kh = g.slice(k, 1, h * dh, dh)?;
        let vh = g.slice(v, 1, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, 1.0 / (dh as f64).sqrt());
        let s = g.add(s, bias)?;
        let a = g.softmax(s)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = g.concat(&outs, 1)?;
    g.pop_scope();
    b.linear(&format!("{name}.o"), cat, d_model, d_model)
}

/// Per-entity tokens: per-point projection of `Q` (`[e, n, 3]`), mean over points.
pub fn entity_tokens(b: &mut NetBuilder, q: NodeId, d_v: usize) -> R {
    let p = b.linear("tokens.proj", q, 3, d_v)?;
    let p = b.graph.gelu(p);
    b.graph.mean(p, Some(1))
}

/// Pre-norm self-attention plus MLP block over entity tokens `[e, d]`.
pub fn entity_block(b: &mut NetBuilder, name: &str, u: NodeId, heads: usize, key_bias: NodeId) -> R {
    let d = b.graph.shape(u)[1];
    let n1 = b.graph.layer_norm(u, 1e-5)?;
    let att = multihead(b, &format!("{name}.attn"), n1, n1, d, heads, key_bias)?;
    let u = b.graph.add(u, att)?;
    let n2 = b.graph.layer_norm(u, 1e-5)?;
    let h = b.linear(&format!("{name}.mlp1"), n2, d, 2 * d)?;
    let h = b.graph.gelu(h);
    let h = b.linear(&format!("{name}.mlp2"), h, 2 * d, d)?;
    b.graph.add(u, h)
}

/// Output of [`attend_translations`].
pub struct Translations {
    /// `[1, e]` entity weights.
    pub w: NodeId,
    /// `[e, 3]` translations.
    pub v: NodeId,
    /// `[e, d_v]` attended entity features.
    pub z: NodeId,
}

/// Text-keyed attention over entity tokens `u` (`[e, d_v]`). Scores are
/// `q_i . k / sqrt(d_head)` per head with `k` from the text embedding `e'`;
/// `w` is the softmax across entities of the head-averaged scores, `z_i`
/// combines each head's entity-softmax weight with the entity's value, and
/// `v_i = MLP([e' | z_i])`.
pub fn attend_translations(
    b: &mut NetBuilder,
    text: NodeId,
    u: NodeId,
    heads: usize,
    hidden: usize,
    key_bias: NodeId,
) -> Result<Translations, GradError> {
    let e = b.graph.shape(u)[0];
    let d_v = b.graph.shape(u)[1];
    let d_text = b.graph.shape(text)[1];
    let dh = d_v / heads;
    let q = b.linear("translate.q", u, d_v, d_v)?;
    let k = b.linear("translate.k", text, d_text, d_v)?;
    let vals = b.linear("translate.v", u, d_v, d_v)?;
    let g = &mut b.graph;
    g.push_scope("translate");
    let kb = g.broadcast(k, &[e, d_v])?;
    let prod = g.mul(q, kb)?;
    let prod = g.reshape(prod, &[e, heads, dh])?;
    let scores = g.sum(prod, Some(2))?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    // w: head-averaged scores, softmax across entities.
    let avg = g.mean(scores, Some(1))?;
    let avg = g.reshape(avg, &[1, e])?;
    let avg = g.add(avg, key_bias)?;
    let w = g.softmax(avg)?;
    // Per-head entity weights scale each entity's value.
    let st = g.transpose(scores)?;
    let hb = g.broadcast(key_bias, &[heads, e])?;
    let st = g.add(st, hb)?;
    let a = g.softmax(st)?;
    let a = g.transpose(a)?;
    let a = g.reshape(a, &[e, heads, 1])?;
    let a = g.repeat(a, 2, dh)?;
    let vr = g.reshape(vals, &[e, heads, dh])?;
    let z = g.mul(a, vr)?;
    let z = g.reshape(z, &[e, d_v])?;
    g.pop_scope();
    let z = b.linear("translate.o", z, d_v, d_v)?;
    let te = b.graph.repeat(text, 0, e)?;
    let cat = b.graph.concat(&[te, z], 1)?;
    let h = b.linear("translate.mlp1", cat, d_text + d_v, hidden)?;
    let h = b.graph.gelu(h);
    let v = b.linear("translate.mlp2", h, hidden, 3)?;
    Ok(Translations { w, v, z })
}

/// Per-point transform rows `[e, n, 12]`: per-point queries from `Q` (plus
/// optional fixed per-point features `[e, n, k]`) attend
/// over keys/values `[v_m | u_m]`, followed by a two-layer head whose output
/// bias starts at the identity row.
pub fn attend_transforms(
    b: &mut NetBuilder,
    q: NodeId,
    features: Option<NodeId>,
    v: NodeId,
    u: NodeId,
    d_f: usize,
    heads: usize,
    key_bias: NodeId,
) -> R {
    let shape = b.graph.shape(q).to_vec();
    let (e, n) = (shape[0], shape[1]);
    let d_v = b.graph.shape(u)[1];
    let (src, width) = match features {
        Some(ff) => {
            let width = 3 + b.graph.shape(ff)[2];
            (b.graph.concat(&[q, ff], 2)?, width)
        }
        None => (q, 3),
    };
    let pq = b.linear("transform.query", src, width, d_f)?;
    let pq = b.graph.gelu(pq);
    let pq = b.graph.reshape(pq, &[e * n, d_f])?;
    let kv = b.graph.concat(&[v, u], 1)?;
    debug_assert_eq!(b.graph.shape(kv)[1], 3 + d_v);
    let att = multihead(b, "transform.attn", pq, kv, d_f, heads, key_bias)?;
    let fp = b.graph.add(pq, att)?;
    let h = b.linear("transform.out1", fp, d_f, d_f)?;
    let h = b.graph.gelu(h);
    let w2 = b.param_uniform("transform.out2.w", &[d_f, 12], d_f);
    let b2 = b.param_value(
        "transform.out2.b",
        DenseArray::new(vec![12], IDENTITY_ROW.to_vec()).expect("12 entries"),
    );
    let g = &mut b.graph;
    g.push_scope("transform.out2");
    let f = g.matmul(h, w2)?;
    let f = g.add_bias(f, b2)?;
    g.pop_scope();
    g.reshape(f, &[e, n, 12])
}

/// Applies per-point rows `f` (`[e, n, 12]`) to clouds `p` (`[e, n, 3]`) and
/// mixes entities with `w` (`[1, e]`). Returns `(S_bar, S_tilde)`.
pub fn compose_guiding_points(g: &mut Graph, f: NodeId, p: NodeId, w: NodeId) -> Result<(NodeId, NodeId), GradError> {
    let shape = g.shape(p).to_vec();
    let (e, n) = (shape[0], shape[1]);
    g.push_scope("compose");
    let mut acc = g.slice(f, 2, 9, 3)?;
    for axis in 0..3 {
        let coef = g.slice(f, 2, 3 * axis, 3)?;
        let coord = g.slice(p, 2, axis, 1)?;
        let coord = g.repeat(coord, 2, 3)?;
        let term = g.mul(coef, coord)?;
        acc = g.add(acc, term)?;
    }
    let flat = g.reshape(acc, &[e, n * 3])?;
    let mixed = g.matmul(w, flat)?;
    let s_tilde = g.reshape(mixed, &[n, 3])?;
    g.pop_scope();
    Ok((acc, s_tilde))
}

/// Rows `[I | v_i]` for every point of entity `i`: `S_bar_i = P_i + v_i`.
pub fn shared_translation(g: &mut Graph, p: NodeId, v: NodeId, w: NodeId) -> Result<(NodeId, NodeId), GradError> {
    let shape = g.shape(p).to_vec();
    let (e, n) = (shape[0], shape[1]);
    g.push_scope("compose");
    let vr = g.reshape(v, &[e, 1, 3])?;
    let vr = g.repeat(vr, 1, n)?;
    let s_bar = g.add(p, vr)?;
    let flat = g.reshape(s_bar, &[e, n * 3])?;
    let mixed = g.matmul(w, flat)?;
    let s_tilde = g.reshape(mixed, &[n, 3])?;
    g.pop_scope();
    Ok((s_bar, s_tilde))
}

/// `[I_3; 0]`: passes the coordinates through and ignores `extra` time features.
fn coord_identity(extra: usize) -> DenseArray {
    let mut w = DenseArray::zeros(&[3 + extra, 3]);
    for k in 0..3 {
        w.data_mut()[k * 3 + k] = 1.0;
    }
    w
}

/// One denoising step: `t' = Repeat(GELU(Linear(emb(t))))`,
/// `x' = Linear_a([x | t'])`, `y = x' + S_tilde`,
/// `x0_hat = Linear_b([y | t']) + y * G_y(t') + x * G_x(t')`. Both linear
/// stages start as coordinate pass-throughs and the time gates at zero, so
/// the initial step is `x + S_tilde`.
pub fn denoise_step(b: &mut NetBuilder, x: NodeId, t_emb: NodeId, s_tilde: NodeId, d_time: usize) -> R {
    let n = b.graph.shape(x)[0];
    let d_sin = b.graph.shape(t_emb)[1];
    let t = b.linear("denoise.time", t_emb, d_sin, d_time)?;
    let t = b.graph.gelu(t);
    let gy = b.param_value("denoise.gate_y", DenseArray::zeros(&[d_time, 3]));
    let gx = b.param_value("denoise.gate_x", DenseArray::zeros(&[d_time, 3]));
    let tt = b.graph.repeat(t, 0, n)?;
    let xa = b.graph.concat(&[x, tt], 1)?;
    let xp = b.linear_init("denoise.in", xa, coord_identity(d_time), DenseArray::zeros(&[3]))?;
    let y = b.graph.add(xp, s_tilde)?;
    let ya = b.graph.concat(&[y, tt], 1)?;
    let out = b.linear_init("denoise.out", ya, coord_identity(d_time), DenseArray::zeros(&[3]))?;
    let g = &mut b.graph;
    g.push_scope("denoise.gates");
    let gyv = g.matmul(t, gy)?;
    let gyv = g.repeat(gyv, 0, n)?;
    let gxv = g.matmul(t, gx)?;
    let gxv = g.repeat(gxv, 0, n)?;
    let sy = g.mul(y, gyv)?;
    let sx = g.mul(x, gxv)?;
    let out = g.add(out, sy)?;
    let out = g.add(out, sx)?;
    g.pop_scope();
    Ok(out)
}

/// Sinusoidal features of a timestep: `[sin(t w_k), cos(t w_k)]` with
/// `w_k = 10000^(-k / (dim/2))`.
pub fn timestep_embedding(t: usize, dim: usize) -> DenseArray {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for k in 0..half {
        let w = 10000f64.powf(-(k as f64) / half as f64);
        data[k] = (t as f64 * w).sin();
        data[half + k] = (t as f64 * w).cos();
    }
    DenseArray::new(vec![1, dim], data).expect("dim entries")
}
