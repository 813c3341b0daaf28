//! The guiding-points network: entity and text encoders, attention that
//! yields entity weights `w` and translations `v`, per-point transforms `F`,
//! the composite guiding points `S~ = sum_i w_i S_bar_i` and the denoiser
//! they are added into.

pub mod layers;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::diffusion::{inpaint_loop, make_schedule, p_sample_loop, q_sample, DiffusionError, NoiseSchedule, ScheduleKind};
use crate::geometry::{centroid, AffineRow, Point};
use crate::grad::{
    checkpoint_hash, gradcheck, load_checkpoint, save_checkpoint, Bindings, DenseArray, GradCheckOptions,
    GradCheckReport, GradError, Gradients, Graph, NodeId, ParamStore,
};
use crate::metrics::SceneFrame;
use crate::synth::Vocabulary;

use layers::NetBuilder;

/// Largest number of entities (human plus objects) a scene may have.
pub const MAX_ENTITIES: usize = 9;
/// Frame units per metre of the normalized scene frame.
pub const FRAME_SCALE: f64 = 0.5;
/// Attention bias that removes an entity.
const MASKED: f64 = -1e4;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("prompt has no tokens")]
    EmptyPrompt,
    #[error("scene has {0} entities, expected 1..={MAX_ENTITIES}")]
    EntityCount(usize),
    #[error("entity {index} has {got} points, model expects {expected}")]
    PointCount { index: usize, got: usize, expected: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Points per cloud (N).
    pub points: usize,
    pub d_text: usize,
    /// Token embedding width before projection to `d_text`.
    pub d_embed: usize,
    /// Width of encoder and translation MLP hidden layers.
    pub d_hidden: usize,
    pub d_v: usize,
    pub d_f: usize,
    pub d_time: usize,
    pub heads: usize,
    /// Self-attention blocks over entity tokens.
    pub attn_layers: usize,
    /// Random Fourier frequencies of the raw entity coordinates fed to the
    /// transform queries; 0 disables them.
    pub fourier: usize,
    /// Standard deviation of the Fourier frequencies (radians per frame unit).
    pub fourier_scale: f64,
    /// Diffusion steps (T).
    pub steps: usize,
    pub schedule: ScheduleKind,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            points: 256,
            d_text: 128,
            d_embed: 32,
            d_hidden: 32,
            d_v: 32,
            d_f: 32,
            d_time: 32,
            heads: 4,
            attn_layers: 1,
            fourier: 32,
            fourier_scale: 6.0,
            steps: 100,
            schedule: ScheduleKind::Cosine,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("points", self.points),
            ("d_text", self.d_text),
            ("d_embed", self.d_embed),
            ("d_hidden", self.d_hidden),
            ("d_v", self.d_v),
            ("d_f", self.d_f),
            ("d_time", self.d_time),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Hyper(format!("{name} must be positive")));
        }
        if self.d_v % self.heads != 0 || self.d_f % self.heads != 0 {
            return Err(ModelError::Hyper(format!(
                "heads ({}) must divide d_v ({}) and d_f ({})",
                self.heads, self.d_v, self.d_f
            )));
        }
        if self.d_time % 2 != 0 {
            return Err(ModelError::Hyper("d_time must be even".into()));
        }
        if self.steps < 2 {
            return Err(ModelError::Hyper("steps must be at least 2".into()));
        }
        Ok(())
    }
}

/// Which parts of the conditioning path are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// No guiding points: `S~ = 0`.
    NoV,
    /// One shared translation per entity: `F_i = [I | v_i]`.
    NoF,
    /// Human masked out of attention.
    ObjectsOnly,
    /// Only the human is attended (`w_0 = 1`).
    HumanOnly,
    /// Text embedding replaced by a learned constant.
    NoText,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoV,
        Ablation::NoF,
        Ablation::ObjectsOnly,
        Ablation::HumanOnly,
        Ablation::NoText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoV => "no_v",
            Ablation::NoF => "no_f",
            Ablation::ObjectsOnly => "objects_only",
            Ablation::HumanOnly => "human_only",
            Ablation::NoText => "no_text",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown ablation `{s}`"))
    }
}

/// Model inputs in the normalized scene frame: entity 0 is the human.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditions {
    pub entities: Vec<Vec<Point>>,
    pub prompt: String,
}

impl Conditions {
    /// Moves world-space entities into the frame centred on the human
    /// centroid (scaled by [`FRAME_SCALE`]) and resamples each to `n` points.
    pub fn from_world(entities: &[Vec<Point>], prompt: &str, n: usize) -> Result<(SceneFrame, Conditions), ModelError> {
        if entities.is_empty() || entities.len() > MAX_ENTITIES {
            return Err(ModelError::EntityCount(entities.len()));
        }
        if let Some(index) = entities.iter().position(Vec::is_empty) {
            return Err(ModelError::PointCount {
                index,
                got: 0,
                expected: n,
            });
        }
        let frame = SceneFrame {
            center: centroid(&entities[0]).expect("non-empty human cloud"),
            scale: FRAME_SCALE,
        };
        let entities = entities
            .iter()
            .map(|e| frame.cloud_to_frame(&resample(e, n)))
            .collect();
        Ok((
            frame,
            Conditions {
                entities,
                prompt: prompt.to_string(),
            },
        ))
    }
}

/// Picks `n` points by evenly strided indices (cycling if `n` exceeds the size).
pub fn resample(points: &[Point], n: usize) -> Vec<Point> {
    if points.len() == n {
        return points.to_vec();
    }
    (0..n).map(|i| points[(i * points.len() / n.max(1)) % points.len()]).collect()
}

/// Everything the conditioning path produces for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidingPoints {
    pub w: Vec<f64>,
    pub v: Vec<Point>,
    /// Per-entity, per-point transform rows; empty when transforms are not used.
    pub f: Vec<Vec<AffineRow>>,
    pub s_bar: Vec<Vec<Point>>,
    pub s_tilde: Vec<Point>,
    /// Encoded entity features `Q`.
    pub q: Vec<Vec<Point>>,
    pub text: Vec<f64>,
    pub unknown_tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum GraphKind {
    Condition,
    Denoise,
    Train,
}

struct Built {
    graph: Graph,
    loss: Option<NodeId>,
}

struct CondNodes {
    q: NodeId,
    text: NodeId,
    w: NodeId,
    v: NodeId,
    f: Option<NodeId>,
    s_bar: Option<NodeId>,
    s_tilde: NodeId,
}

/// The network plus its parameters and diffusion schedule.
pub struct GpNet {
    hyper: HyperParams,
    ablation: Ablation,
    vocab: Vocabulary,
    params: ParamStore,
    schedule: NoiseSchedule,
    cache: Mutex<HashMap<(GraphKind, usize), Arc<Built>>>,
}

impl Clone for GpNet {
    fn clone(&self) -> Self {
        Self {
            hyper: self.hyper.clone(),
            ablation: self.ablation,
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            schedule: self.schedule.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl fmt::Debug for GpNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GpNet")
            .field("hyper", &self.hyper)
            .field("ablation", &self.ablation)
            .field("params", &self.params.size())
            .finish()
    }
}

fn build_condition(
    b: &mut NetBuilder,
    hyper: &HyperParams,
    ablation: Ablation,
    e: usize,
    vocab: usize,
) -> Result<CondNodes, GradError> {
    let n = hyper.points;
    let entities = b.graph.input("entities", &[e, n, 3]);
    let key_bias = b.graph.input("key_bias", &[1, e]);

    let human = b.graph.slice(entities, 0, 0, 1)?;
    let qh = layers::point_encoder(b, "human_enc", human, hyper.d_hidden)?;
    let q = if e > 1 {
        let objects = b.graph.slice(entities, 0, 1, e - 1)?;
        let qo = layers::point_encoder(b, "object_enc", objects, hyper.d_hidden)?;
        b.graph.concat(&[qh, qo], 0)?
    } else {
        qh
    };

    let text = if ablation == Ablation::NoText {
        b.param_uniform("text.null", &[1, hyper.d_text], hyper.d_text)
    } else {
        let bow = b.graph.input("bow", &[1, vocab]);
        layers::text_encoder(b, bow, vocab, hyper.d_embed, hyper.d_text)?
    };

    let mut u = layers::entity_tokens(b, q, hyper.d_v)?;
    for l in 0..hyper.attn_layers {
        u = layers::entity_block(b, &format!("entity{l}"), u, hyper.heads, key_bias)?;
    }
    let tr = layers::attend_translations(b, text, u, hyper.heads, hyper.d_hidden, key_bias)?;
    let (f, s_bar, s_tilde) = match ablation {
        Ablation::NoV => {
            let zeros = b.graph.constant(DenseArray::zeros(&[n, 3]));
            (None, None, zeros)
        }
        Ablation::NoF => {
            let (s_bar, s_tilde) = layers::shared_translation(&mut b.graph, entities, tr.v, tr.w)?;
            (None, Some(s_bar), s_tilde)
        }
        _ => {
            let ff = (hyper.fourier > 0).then(|| b.graph.input("fourier", &[e, n, 2 * hyper.fourier]));
            let f = layers::attend_transforms(b, q, ff, tr.v, u, hyper.d_f, hyper.heads, key_bias)?;
            let (s_bar, s_tilde) = layers::compose_guiding_points(&mut b.graph, f, entities, tr.w)?;
            (Some(f), Some(s_bar), s_tilde)
        }
    };
    Ok(CondNodes {
        q,
        text,
        w: tr.w,
        v: tr.v,
        f,
        s_bar,
        s_tilde,
    })
}

fn build(hyper: &HyperParams, ablation: Ablation, kind: GraphKind, e: usize, vocab: usize) -> Result<(NetBuilder, Option<NodeId>), GradError> {
    let n = hyper.points;
    let mut b = NetBuilder::new();
    let s_tilde = if kind == GraphKind::Denoise {
        b.graph.input("s_tilde", &[n, 3])
    } else {
        let c = build_condition(&mut b, hyper, ablation, e, vocab)?;
        let g = &mut b.graph;
        g.mark_output("q", c.q);
        g.mark_output("text", c.text);
        g.mark_output("w", c.w);
        g.mark_output("v", c.v);
        if let Some(f) = c.f {
            g.mark_output("f", f);
        }
        if let Some(s) = c.s_bar {
            g.mark_output("s_bar", s);
        }
        g.mark_output("s_tilde", c.s_tilde);
        c.s_tilde
    };
    if kind == GraphKind::Condition {
        return Ok((b, None));
    }
    let x = b.graph.input("x_t", &[n, 3]);
    let t_emb = b.graph.input("t_emb", &[1, hyper.d_time]);
    let x0_hat = layers::denoise_step(&mut b, x, t_emb, s_tilde, hyper.d_time)?;
    b.graph.mark_output("x0_hat", x0_hat);
    if kind == GraphKind::Denoise {
        return Ok((b, None));
    }
    let x0 = b.graph.input("x0", &[n, 3]);
    let g = &mut b.graph;
    let diff = g.sub(x0_hat, x0)?;
    let loss = g.sum_squares(diff, n as f64)?;
    g.mark_output("loss", loss);
    Ok((b, Some(loss)))
}

/// Fixed frequency vectors, a function of `k` and `scale` only.
pub fn fourier_frequencies(k: usize, scale: f64) -> Vec<Point> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xf0_u64);
    let normal = Normal::new(0.0, scale.max(f64::MIN_POSITIVE)).expect("positive scale");
    (0..k).map(|_| [0, 1, 2].map(|_| normal.sample(&mut rng))).collect()
}

fn points_array(points: &[Point], n: usize) -> Result<DenseArray, GradError> {
    DenseArray::new(vec![n, 3], points.iter().flatten().copied().collect())
}

impl GpNet {
    /// A freshly initialized network.
    pub fn new(hyper: HyperParams, ablation: Ablation, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        hyper.validate()?;
        let schedule = make_schedule(hyper.schedule, hyper.steps)?;
        let mut params = ParamStore::new(seed);
        let (b, _) = build(&hyper, ablation, GraphKind::Train, 2, vocab.len())?;
        b.init_params(&mut params);
        Ok(Self {
            hyper,
            ablation,
            vocab,
            params,
            schedule,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn graph(&self, kind: GraphKind, e: usize) -> Result<Arc<Built>, ModelError> {
        let key = (kind, if kind == GraphKind::Denoise { 0 } else { e });
        let mut cache = self.cache.lock().expect("graph cache lock");
        if let Some(b) = cache.get(&key) {
            return Ok(b.clone());
        }
        let (b, loss) = build(&self.hyper, self.ablation, kind, e, self.vocab.len())?;
        let built = Arc::new(Built {
            graph: b.into_graph(),
            loss,
        });
        cache.insert(key, built.clone());
        Ok(built)
    }

    /// Bag-of-words vector (`[1, V]`, counts over length) and unknown tokens.
    pub fn encode_prompt(&self, prompt: &str) -> Result<(DenseArray, Vec<String>), ModelError> {
        let (ids, unknown) = self.vocab.encode(prompt);
        if ids.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        if !unknown.is_empty() {
            tracing::warn!(?unknown, "prompt tokens outside the vocabulary map to <unk>");
        }
        let mut bow = vec![0.0; self.vocab.len()];
        for id in &ids {
            bow[*id] += 1.0 / ids.len() as f64;
        }
        Ok((DenseArray::new(vec![1, self.vocab.len()], bow)?, unknown))
    }

    fn key_bias(&self, e: usize) -> DenseArray {
        let data = (0..e)
            .map(|i| match self.ablation {
                Ablation::ObjectsOnly if i == 0 && e > 1 => MASKED,
                Ablation::HumanOnly if i > 0 => MASKED,
                _ => 0.0,
            })
            .collect();
        DenseArray::new(vec![1, e], data).expect("e entries")
    }

    fn bind_conditions(&self, cond: &Conditions) -> Result<(Bindings, Vec<String>), ModelError> {
        let e = cond.entities.len();
        if e == 0 || e > MAX_ENTITIES {
            return Err(ModelError::EntityCount(e));
        }
        let n = self.hyper.points;
        let mut flat = Vec::with_capacity(e * n * 3);
        for (index, ent) in cond.entities.iter().enumerate() {
            if ent.len() != n {
                return Err(ModelError::PointCount {
                    index,
                    got: ent.len(),
                    expected: n,
                });
            }
            flat.extend(ent.iter().flatten());
        }
        let (bow, unknown) = self.encode_prompt(&cond.prompt)?;
        let mut bind = Bindings::new();
        bind.insert("entities".into(), DenseArray::new(vec![e, n, 3], flat)?);
        bind.insert("bow".into(), bow);
        bind.insert("key_bias".into(), self.key_bias(e));
        if self.hyper.fourier > 0 {
            bind.insert("fourier".into(), self.fourier_features(&cond.entities)?);
        }
        Ok((bind, unknown))
    }

    /// `[sin(p B), cos(p B)]` per point with a fixed Gaussian frequency matrix `B`.
    fn fourier_features(&self, entities: &[Vec<Point>]) -> Result<DenseArray, ModelError> {
        let k = self.hyper.fourier;
        let n = self.hyper.points;
        let freqs = fourier_frequencies(k, self.hyper.fourier_scale);
        let mut data = Vec::with_capacity(entities.len() * n * 2 * k);
        for ent in entities {
            for p in ent {
                let phases: Vec<f64> = freqs.iter().map(|f| f[0] * p[0] + f[1] * p[1] + f[2] * p[2]).collect();
                data.extend(phases.iter().map(|a| a.sin()));
                data.extend(phases.iter().map(|a| a.cos()));
            }
        }
        Ok(DenseArray::new(vec![entities.len(), n, 2 * k], data)?)
    }

    fn bind_step(&self, bind: &mut Bindings, x: &[Point], timestep: usize) -> Result<(), ModelError> {
        let n = self.hyper.points;
        if x.len() != n {
            return Err(ModelError::PointCount {
                index: 0,
                got: x.len(),
                expected: n,
            });
        }
        bind.insert("x_t".into(), points_array(x, n)?);
        bind.insert("t_emb".into(), layers::timestep_embedding(timestep, self.hyper.d_time));
        Ok(())
    }

    /// Runs the conditioning path: weights, translations, transforms and guiding points.
    pub fn guiding_points(&self, cond: &Conditions) -> Result<GuidingPoints, ModelError> {
        let e = cond.entities.len();
        let n = self.hyper.points;
        let (bind, unknown_tokens) = self.bind_conditions(cond)?;
        let built = self.graph(GraphKind::Condition, e)?;
        let eval = built.graph.evaluate(&bind, &self.params)?;
        let out = eval.outputs(&built.graph);
        let rows = |a: &DenseArray| -> Vec<Point> { a.to_points() };
        let per_entity = |a: &DenseArray| -> Vec<Vec<Point>> { a.to_points().chunks(n).map(<[Point]>::to_vec).collect() };
        let f = out
            .get("f")
            .map(|a| {
                a.data()
                    .chunks_exact(12)
                    .map(|c| {
                        let mut row = [0.0; 12];
                        row.copy_from_slice(c);
                        row
                    })
                    .collect::<Vec<AffineRow>>()
                    .chunks(n)
                    .map(<[AffineRow]>::to_vec)
                    .collect()
            })
            .unwrap_or_default();
        Ok(GuidingPoints {
            w: out["w"].data().to_vec(),
            v: rows(&out["v"]),
            f,
            s_bar: out.get("s_bar").map(per_entity).unwrap_or_default(),
            s_tilde: rows(&out["s_tilde"]),
            q: per_entity(&out["q"]),
            text: out["text"].data().to_vec(),
            unknown_tokens,
        })
    }

    /// Predicts x0 from `x` at 1-based `timestep` given guiding points.
    pub fn denoise(&self, x: &[Point], timestep: usize, s_tilde: &[Point]) -> Result<Vec<Point>, ModelError> {
        let n = self.hyper.points;
        let mut bind = Bindings::new();
        self.bind_step(&mut bind, x, timestep)?;
        bind.insert("s_tilde".into(), points_array(s_tilde, n)?);
        let built = self.graph(GraphKind::Denoise, 0)?;
        let eval = built.graph.evaluate(&bind, &self.params)?;
        Ok(eval.output(&built.graph, "x0_hat").expect("x0_hat output").to_points())
    }

    /// Full ancestral sampling of a target cloud (normalized frame).
    pub fn sample(&self, cond: &Conditions, seed: u64) -> Result<(Vec<Point>, GuidingPoints), ModelError> {
        let gp = self.guiding_points(cond)?;
        let denoiser = |x: &[Point], t: usize| self.denoise(x, t, &gp.s_tilde).map_err(|e| e.to_string());
        let pts = p_sample_loop(&denoiser, self.hyper.points, &self.schedule, seed)?;
        Ok((pts, gp))
    }

    /// Sampling with the rows flagged in `mask` held to `known`.
    pub fn inpaint(
        &self,
        cond: &Conditions,
        mask: &[bool],
        known: &[Point],
        seed: u64,
    ) -> Result<(Vec<Point>, GuidingPoints), ModelError> {
        let gp = self.guiding_points(cond)?;
        let denoiser = |x: &[Point], t: usize| self.denoise(x, t, &gp.s_tilde).map_err(|e| e.to_string());
        let pts = inpaint_loop(&denoiser, &self.schedule, mask, known, seed)?;
        Ok((pts, gp))
    }

    fn train_bindings(
        &self,
        cond: &Conditions,
        x0: &[Point],
        t: usize,
        noise: &[Point],
    ) -> Result<Bindings, ModelError> {
        let n = self.hyper.points;
        let (mut bind, _) = self.bind_conditions(cond)?;
        let xt = q_sample(x0, t, noise, &self.schedule)?;
        self.bind_step(&mut bind, &xt, t + 1)?;
        if x0.len() != n {
            return Err(ModelError::PointCount {
                index: cond.entities.len(),
                got: x0.len(),
                expected: n,
            });
        }
        bind.insert("x0".into(), points_array(x0, n)?);
        Ok(bind)
    }

    /// Loss `mean_j |x0_j - x0_hat_j|^2` for schedule index `t` and fixed noise.
    pub fn loss(&self, cond: &Conditions, x0: &[Point], t: usize, noise: &[Point]) -> Result<f64, ModelError> {
        let bind = self.train_bindings(cond, x0, t, noise)?;
        let built = self.graph(GraphKind::Train, cond.entities.len())?;
        let eval = built.graph.evaluate(&bind, &self.params)?;
        Ok(eval.value(built.loss.expect("train graph has a loss")).item())
    }

    /// Loss and parameter gradients for one example.
    pub fn loss_and_gradients(
        &self,
        cond: &Conditions,
        x0: &[Point],
        t: usize,
        noise: &[Point],
    ) -> Result<(f64, Gradients), ModelError> {
        let bind = self.train_bindings(cond, x0, t, noise)?;
        let built = self.graph(GraphKind::Train, cond.entities.len())?;
        let loss = built.loss.expect("train graph has a loss");
        let (eval, grads) = built.graph.gradients(loss, &bind, &self.params)?;
        Ok((eval.value(loss).item(), grads))
    }

    /// Finite-difference check of the end-to-end training loss.
    pub fn gradcheck_loss(
        &self,
        cond: &Conditions,
        x0: &[Point],
        t: usize,
        noise: &[Point],
        opts: &GradCheckOptions,
    ) -> Result<GradCheckReport, ModelError> {
        let bind = self.train_bindings(cond, x0, t, noise)?;
        let built = self.graph(GraphKind::Train, cond.entities.len())?;
        Ok(gradcheck(&built.graph, built.loss.expect("train graph has a loss"), &bind, &self.params, opts)?)
    }

    fn meta(&self) -> BTreeMap<String, String> {
        let h = &self.hyper;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("model", "gpnet".into());
        put("ablation", self.ablation.to_string());
        put("points", h.points.to_string());
        put("d_text", h.d_text.to_string());
        put("d_embed", h.d_embed.to_string());
        put("d_hidden", h.d_hidden.to_string());
        put("d_v", h.d_v.to_string());
        put("d_f", h.d_f.to_string());
        put("d_time", h.d_time.to_string());
        put("heads", h.heads.to_string());
        put("attn_layers", h.attn_layers.to_string());
        put("fourier", h.fourier.to_string());
        put("fourier_scale", format!("{:e}", h.fourier_scale));
        put("steps", h.steps.to_string());
        put("schedule", h.schedule.to_string());
        put("vocab", self.vocab.tokens()[1..].join(" "));
        m
    }

    /// Writes a checkpoint and switches to the stored (f32-rounded) values so
    /// that the in-memory model matches what a later load returns.
    pub fn save(&mut self, dir: &Path) -> Result<String, ModelError> {
        self.params = save_checkpoint(dir, &self.meta(), &self.params)?;
        Ok(checkpoint_hash(dir)?)
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let ck = load_checkpoint(dir)?;
        let meta = &ck.meta;
        let get = |k: &str| -> Result<&String, ModelError> {
            meta.get(k)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing metadata `{k}` in {}", dir.display())))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?
                .parse()
                .map_err(|_| ModelError::Checkpoint(format!("metadata `{k}` is not a count")))
        };
        if get("model")? != "gpnet" {
            return Err(ModelError::Checkpoint("not a gpnet checkpoint".into()));
        }
        let hyper = HyperParams {
            points: num("points")?,
            d_text: num("d_text")?,
            d_embed: num("d_embed")?,
            d_hidden: num("d_hidden")?,
            d_v: num("d_v")?,
            d_f: num("d_f")?,
            d_time: num("d_time")?,
            heads: num("heads")?,
            attn_layers: num("attn_layers")?,
            fourier: num("fourier")?,
            fourier_scale: get("fourier_scale")?
                .parse()
                .map_err(|_| ModelError::Checkpoint("metadata `fourier_scale` is not a number".into()))?,
            steps: num("steps")?,
            schedule: get("schedule")?.parse().map_err(ModelError::Checkpoint)?,
        };
        let ablation: Ablation = get("ablation")?.parse().map_err(ModelError::Checkpoint)?;
        let vocab = Vocabulary::from_tokens(get("vocab")?.split_whitespace().map(str::to_string).collect());
        let fresh = GpNet::new(hyper, ablation, vocab, 0)?;
        for (name, value) in fresh.params.iter() {
            match ck.params.get(name) {
                Some(v) if v.shape() == value.shape() => {}
                Some(v) => {
                    return Err(ModelError::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        v.shape(),
                        value.shape()
                    )))
                }
                None => return Err(ModelError::Checkpoint(format!("missing parameter `{name}`"))),
            }
        }
        Ok(Self {
            params: ck.params,
            ..fresh
        })
    }
}
