use lsdm_core::geometry::{apply_transform, to_matrix, Point, IDENTITY_ROW};
use lsdm_core::gpnet::layers::{self, NetBuilder};
use lsdm_core::gpnet::{Ablation, Conditions, GpNet, HyperParams, ModelError};
use lsdm_core::grad::{gradcheck, Bindings, DenseArray, GradCheckOptions, Graph, NodeId, ParamStore};
use lsdm_core::synth::{gen_interaction, SynthConfig, Vocabulary};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 16;

fn hyper() -> HyperParams {
    HyperParams {
        points: N,
        d_text: 8,
        d_embed: 8,
        d_hidden: 8,
        d_v: 8,
        d_f: 8,
        d_time: 8,
        heads: 2,
        fourier: 4,
        steps: 10,
        ..HyperParams::default()
    }
}

fn conditions(seed: u64) -> Conditions {
    let cfg = SynthConfig {
        points: N,
        ..SynthConfig::default()
    };
    let item = gen_interaction(seed, &cfg).unwrap();
    Conditions::from_world(&item.entity_clouds(), &item.prompt, N).unwrap().1
}

fn jitter(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        for v in store.get_mut(&name).unwrap().data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

fn model(ablation: Ablation, seed: u64) -> GpNet {
    let mut m = GpNet::new(hyper(), ablation, Vocabulary::grammar(), seed).unwrap();
    jitter(m.params_mut(), 0.2, seed + 1);
    m
}

fn random_array(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseArray {
    let len = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so every output entry matters.
fn probe(g: &mut Graph, out: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.shape(out).to_vec();
    let c = g.constant(random_array(&shape, rng));
    let m = g.mul(out, c).unwrap();
    g.sum(m, None).unwrap()
}

fn check_layer(build: impl FnOnce(&mut NetBuilder, &mut ChaCha8Rng) -> (NodeId, Bindings)) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut b = NetBuilder::new();
    let (out, bind) = build(&mut b, &mut rng);
    let loss = probe(&mut b.graph, out, &mut rng);
    let mut store = ParamStore::new(5);
    b.init_params(&mut store);
    jitter(&mut store, 0.3, 6);
    let graph = b.into_graph();
    let opts = GradCheckOptions {
        seed: 3,
        ..GradCheckOptions::default()
    };
    let report = gradcheck(&graph, loss, &bind, &store, &opts).unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

fn bind(pairs: Vec<(&str, DenseArray)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn conditioning_outputs_have_expected_shapes() {
    let m = model(Ablation::Full, 1);
    let cond = conditions(3);
    let e = cond.entities.len();
    let gp = m.guiding_points(&cond).unwrap();
    assert_eq!(gp.w.len(), e);
    assert!((gp.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(gp.w.iter().all(|w| *w > 0.0));
    assert_eq!(gp.v.len(), e);
    assert_eq!(gp.f.len(), e);
    assert!(gp.f.iter().all(|rows| rows.len() == N));
    assert_eq!(gp.s_bar.len(), e);
    assert_eq!(gp.s_tilde.len(), N);
    assert_eq!(gp.q.len(), e);
    assert_eq!(gp.text.len(), hyper().d_text);
}

#[test]
fn guiding_points_match_homogeneous_oracle() {
    let m = model(Ablation::Full, 2);
    let cond = conditions(4);
    let gp = m.guiding_points(&cond).unwrap();
    let mut s_tilde = vec![[0.0; 3]; N];
    for (i, ent) in cond.entities.iter().enumerate() {
        for (j, p) in ent.iter().enumerate() {
            let mat = to_matrix(&gp.f[i][j]);
            let h = [p[0], p[1], p[2], 1.0];
            let q: Vec<f64> = (0..3).map(|r| (0..4).map(|c| mat[r][c] * h[c]).sum()).collect();
            for k in 0..3 {
                assert!((gp.s_bar[i][j][k] - q[k]).abs() < 1e-12);
                s_tilde[j][k] += gp.w[i] * q[k];
            }
            assert!((apply_transform(&gp.f[i][j], *p)[0] - q[0]).abs() < 1e-12);
        }
    }
    for (a, b) in s_tilde.iter().zip(&gp.s_tilde) {
        assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-12));
    }
}

#[test]
fn zero_head_weights_give_identity_transforms() {
    let mut m = model(Ablation::Full, 3);
    let w = m.params_mut().get_mut("transform.out2.w").unwrap();
    w.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let b = m.params_mut().get_mut("transform.out2.b").unwrap();
    b.data_mut().copy_from_slice(&IDENTITY_ROW);
    let cond = conditions(5);
    let gp = m.guiding_points(&cond).unwrap();
    assert!(gp.f.iter().flatten().all(|row| *row == IDENTITY_ROW));
    for (i, ent) in cond.entities.iter().enumerate() {
        assert_eq!(&gp.s_bar[i], ent);
    }
    for j in 0..N {
        for k in 0..3 {
            let mix: f64 = (0..cond.entities.len()).map(|i| gp.w[i] * cond.entities[i][j][k]).sum();
            assert!((gp.s_tilde[j][k] - mix).abs() < 1e-12);
        }
    }
}

#[test]
fn shared_translation_variant_adds_v() {
    let m = model(Ablation::NoF, 4);
    let cond = conditions(6);
    let gp = m.guiding_points(&cond).unwrap();
    assert!(gp.f.is_empty());
    for (i, ent) in cond.entities.iter().enumerate() {
        for (s, p) in gp.s_bar[i].iter().zip(ent) {
            assert!((0..3).all(|k| (s[k] - p[k] - gp.v[i][k]).abs() < 1e-12));
        }
    }
}

#[test]
fn ablations_shape_the_weights() {
    let cond = conditions(7);
    let gp = model(Ablation::NoV, 5).guiding_points(&cond).unwrap();
    assert!(gp.s_tilde.iter().all(|p| *p == [0.0; 3]));
    assert!(gp.s_bar.is_empty());
    let gp = model(Ablation::ObjectsOnly, 5).guiding_points(&cond).unwrap();
    assert!(gp.w[0] < 1e-9);
    let gp = model(Ablation::HumanOnly, 5).guiding_points(&cond).unwrap();
    assert!((gp.w[0] - 1.0).abs() < 1e-9);
    let a = model(Ablation::NoText, 5).guiding_points(&cond).unwrap();
    let other = Conditions {
        prompt: "place a lamp behind me".into(),
        ..cond.clone()
    };
    let b = model(Ablation::NoText, 5).guiding_points(&other).unwrap();
    assert_eq!(a.s_tilde, b.s_tilde);
}

#[test]
fn fresh_denoiser_adds_guiding_points() {
    let m = GpNet::new(hyper(), Ablation::Full, Vocabulary::grammar(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<Point> = (0..N).map(|_| [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0))).collect();
    let s: Vec<Point> = (0..N).map(|_| [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0))).collect();
    for t in [1, 5, 10] {
        let out = m.denoise(&x, t, &s).unwrap();
        for j in 0..N {
            assert_eq!(out[j], [0, 1, 2].map(|k| x[j][k] + s[j][k]));
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    let e = 3;
    let errors = [
        check_layer(|b, rng| {
            let c = b.graph.input("c", &[e, N, 3]);
            (layers::point_encoder(b, "enc", c, 8).unwrap(), bind(vec![("c", random_array(&[e, N, 3], rng))]))
        }),
        check_layer(|b, rng| {
            let bow = b.graph.input("bow", &[1, 6]);
            (layers::text_encoder(b, bow, 6, 4, 8).unwrap(), bind(vec![("bow", random_array(&[1, 6], rng))]))
        }),
        check_layer(|b, rng| {
            let u = b.graph.input("u", &[e, 8]);
            let kb = b.graph.input("kb", &[1, e]);
            let out = layers::entity_block(b, "blk", u, 2, kb).unwrap();
            (out, bind(vec![("u", random_array(&[e, 8], rng)), ("kb", DenseArray::zeros(&[1, e]))]))
        }),
        check_layer(|b, rng| {
            let text = b.graph.input("text", &[1, 8]);
            let u = b.graph.input("u", &[e, 8]);
            let kb = b.graph.input("kb", &[1, e]);
            let tr = layers::attend_translations(b, text, u, 2, 8, kb).unwrap();
            let wf = b.graph.reshape(tr.w, &[e, 1]).unwrap();
            let out = b.graph.concat(&[tr.v, wf], 1).unwrap();
            let vals = bind(vec![
                ("text", random_array(&[1, 8], rng)),
                ("u", random_array(&[e, 8], rng)),
                ("kb", DenseArray::zeros(&[1, e])),
            ]);
            (out, vals)
        }),
        check_layer(|b, rng| {
            let q = b.graph.input("q", &[e, N, 3]);
            let ff = b.graph.input("ff", &[e, N, 4]);
            let v = b.graph.input("v", &[e, 3]);
            let u = b.graph.input("u", &[e, 8]);
            let kb = b.graph.input("kb", &[1, e]);
            let f = layers::attend_transforms(b, q, Some(ff), v, u, 8, 2, kb).unwrap();
            let p = b.graph.input("p", &[e, N, 3]);
            let w = b.graph.input("w", &[1, e]);
            let (_, s) = layers::compose_guiding_points(&mut b.graph, f, p, w).unwrap();
            let vals = bind(vec![
                ("q", random_array(&[e, N, 3], rng)),
                ("ff", random_array(&[e, N, 4], rng)),
                ("v", random_array(&[e, 3], rng)),
                ("u", random_array(&[e, 8], rng)),
                ("kb", DenseArray::zeros(&[1, e])),
                ("p", random_array(&[e, N, 3], rng)),
                ("w", DenseArray::new(vec![1, e], vec![0.2, 0.5, 0.3]).unwrap()),
            ]);
            (s, vals)
        }),
        check_layer(|b, rng| {
            let x = b.graph.input("x", &[N, 3]);
            let t = b.graph.input("t", &[1, 8]);
            let s = b.graph.input("s", &[N, 3]);
            let out = layers::denoise_step(b, x, t, s, 8).unwrap();
            let vals = bind(vec![
                ("x", random_array(&[N, 3], rng)),
                ("t", layers::timestep_embedding(7, 8)),
                ("s", random_array(&[N, 3], rng)),
            ]);
            (out, vals)
        }),
    ];
    for (i, err) in errors.iter().enumerate() {
        assert!(*err < 1e-4, "layer {i}: {err:e}");
    }
}

#[test]
fn end_to_end_loss_gradients_match_finite_differences() {
    for ablation in [Ablation::Full, Ablation::NoF, Ablation::ObjectsOnly] {
        let m = model(ablation, 11);
        let cond = conditions(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0: Vec<Point> = (0..N).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let noise: Vec<Point> = (0..N).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let report = m
            .gradcheck_loss(&cond, &x0, 4, &noise, &GradCheckOptions::default())
            .unwrap();
        assert!(report.max_rel_error < 1e-4, "{ablation}: {report:?}");
    }
}

#[test]
fn world_translation_leaves_conditions_unchanged() {
    let cfg = SynthConfig {
        points: N,
        ..SynthConfig::default()
    };
    let item = gen_interaction(10, &cfg).unwrap();
    let clouds = item.entity_clouds();
    let shifted: Vec<Vec<Point>> = clouds
        .iter()
        .map(|c| c.iter().map(|p| [p[0] + 3.0, p[1] - 1.5, p[2] + 0.25]).collect())
        .collect();
    let (fa, a) = Conditions::from_world(&clouds, &item.prompt, N).unwrap();
    let (fb, b) = Conditions::from_world(&shifted, &item.prompt, N).unwrap();
    for (ea, eb) in a.entities.iter().zip(&b.entities) {
        for (p, q) in ea.iter().zip(eb) {
            assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-12));
        }
    }
    let back = fb.to_world(b.entities[1][0]);
    let orig = fa.to_world(a.entities[1][0]);
    assert!((back[0] - orig[0] - 3.0).abs() < 1e-12);
}

#[test]
fn invalid_inputs_are_reported() {
    let m = model(Ablation::Full, 1);
    let mut cond = conditions(1);
    cond.entities[1].pop();
    assert!(matches!(m.guiding_points(&cond), Err(ModelError::PointCount { index: 1, .. })));
    let cond = Conditions {
        entities: vec![],
        prompt: "a chair".into(),
    };
    assert!(matches!(m.guiding_points(&cond), Err(ModelError::EntityCount(0))));
    let mut cond = conditions(1);
    cond.prompt = "   ".into();
    assert!(matches!(m.guiding_points(&cond), Err(ModelError::EmptyPrompt)));
    let bad = HyperParams {
        heads: 3,
        ..hyper()
    };
    assert!(GpNet::new(bad, Ablation::Full, Vocabulary::grammar(), 0).is_err());
}

#[test]
fn unknown_tokens_are_reported() {
    let m = model(Ablation::Full, 1);
    let mut cond = conditions(2);
    cond.prompt = format!("{} quickly", cond.prompt);
    let gp = m.guiding_points(&cond).unwrap();
    assert_eq!(gp.unknown_tokens, vec!["quickly".to_string()]);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let mut m = model(Ablation::NoF, 12);
    let dir = tempfile::tempdir().unwrap();
    let hash = m.save(dir.path()).unwrap();
    let loaded = GpNet::load(dir.path()).unwrap();
    assert_eq!(loaded.hyper(), m.hyper());
    assert_eq!(loaded.ablation(), Ablation::NoF);
    let cond = conditions(3);
    assert_eq!(m.sample(&cond, 5).unwrap(), loaded.sample(&cond, 5).unwrap());
    assert_eq!(lsdm_core::grad::checkpoint_hash(dir.path()).unwrap(), hash);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn weights_form_a_distribution(seed in 0u64..200, scene in 0u64..50) {
        let gp = model(Ablation::Full, seed).guiding_points(&conditions(scene)).unwrap();
        prop_assert!((gp.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(gp.w.iter().all(|w| *w >= 0.0));
        prop_assert!(gp.s_tilde.iter().flatten().all(|v| v.is_finite()));
    }
}
