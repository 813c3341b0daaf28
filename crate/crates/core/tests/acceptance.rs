//! End-to-end acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line per criterion, then fails if any criterion failed.
//!
//! The desk-scale training dominates the runtime (roughly an hour on one core).

use std::io::Write;
use std::time::Instant;

use lsdm_core::diffusion::{gaussian_points, make_schedule, q_sample, ScheduleKind};
use lsdm_core::edit::{build_replacement_gt, edit, lowest_z_mask, EditOp, EditRequest};
use lsdm_core::geometry::{centroid, dist2, IcpOptions, Point};
use lsdm_core::gpnet::layers::{self, NetBuilder};
use lsdm_core::gpnet::{Ablation, Conditions, GpNet, HyperParams};
use lsdm_core::grad::{gradcheck, Bindings, DenseArray, GradCheckOptions, Graph, NodeId, ParamStore};
use lsdm_core::metrics::{chamfer, emd, f1, ip_3d, EmdMode};
use lsdm_core::synth::{
    gen_dataset, gen_interaction, relation_projection, relation_satisfied, Interaction, PromptSpec, Relation,
    SynthConfig, Vocabulary, ADJECTIVES,
};
use lsdm_core::theory::{
    chi2_check, containment_prob, corollary_grid, prop1_discrete_check, prop2_mc, unit_cube_hull, ConcentrationConfig,
    ContainmentMode, DiscreteChainSpec,
};
use lsdm_core::train::{evaluate, grid_loss, heldout_guiding_mse, overfit, prepare, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, name: &'static str, passed: bool, detail: String) {
    // Written straight to the process stdout so the lines survive test output capture.
    let line = format!("{} {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(line.as_bytes()).unwrap();
    stdout.flush().unwrap();
    out.push(Outcome { name, passed, detail });
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn uniform_cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect()
}

fn prop1(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20 {
        let r = prop1_discrete_check(&DiscreteChainSpec::random(5, 3, 3, seed)).unwrap();
        worst = worst.max(r.max_deviation);
        checked += r.checked;
    }
    let s = secs(t);
    report(
        out,
        "reverse-kernel identity",
        worst < 1e-10 && s < 5.0,
        format!("max deviation {worst:.3e} over {checked} tuples in 20 chains, {s:.2}s"),
    );
}

fn forward_convergence(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let schedule = make_schedule(ScheduleKind::Cosine, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0: Vec<Point> = (0..10_000).map(|_| [0, 1, 2].map(|_| rng.gen_range(-0.5..0.5))).collect();
    let noise = gaussian_points(x0.len(), &mut rng);
    let xt = q_sample(&x0, 99, &noise, &schedule).unwrap();
    let n = xt.len() as f64;
    let mean = [0, 1, 2].map(|k| xt.iter().map(|p| p[k]).sum::<f64>() / n);
    let var = [0, 1, 2].map(|k| xt.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n);
    let s = secs(t);
    let ok = mean.iter().all(|m| m.abs() < 0.05) && var.iter().all(|v| (v - 1.0).abs() < 0.1) && s < 2.0;
    report(out, "forward-process convergence", ok, format!("mean {mean:.4?} variance {var:.4?}, {s:.2}s"));
}

fn prop2(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let cube = unit_cube_hull();
    let mut ok = true;
    let mut cells = Vec::new();
    for c in [0.05, 0.1, 0.25] {
        let cfg = ConcentrationConfig {
            hull: cube.clone(),
            mu0: [0.0; 3],
            sigma0: c * 0.5,
            samples: 1000,
            trials: 10_000,
        };
        let r = prop2_mc(&cfg, 7);
        ok &= r.hull_rate >= r.chi3_bound_sigma - 3.0 * r.hull_se;
        cells.push(format!(
            "sigma0/d0={c}: rate {:.7} chi3 {:.7} erf {:.7} se {:.1e}",
            r.hull_rate, r.chi3_bound_sigma, r.erf_bound_sigma, r.hull_se
        ));
    }
    let s = secs(t);
    report(out, "containment bound", ok && s < 30.0, format!("{}; {s:.1}s", cells.join("; ")));
}

fn chi_squared(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let r = chi2_check(64, 1.0, 1, 10_000, 1.0, 11);
    let tail = chi2_check(21, 1.0, 1, 10, 1.0, 12);
    let s = secs(t);
    let ok = r.ks_p_value > 0.01 && tail.tail_probability > 1.0 - 1e-9 && s < 10.0;
    report(
        out,
        "chi-squared concentration",
        ok,
        format!(
            "KS D {:.4} p {:.3}; Pr(chi2_21 > 1) = 1 - {:.3e} vs claimed > 1 - 1e-9; {s:.2}s",
            r.ks_statistic, r.ks_p_value, tail.tail_complement
        ),
    );
}

fn corollary(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let grid = corollary_grid(50, 10.0, ContainmentMode::ExactChi3);
    let monotone = grid.windows(2).all(|w| w[1].1 >= w[0].1);
    let high: Vec<&(f64, f64)> = grid.iter().filter(|(r, _)| *r > 5.0).collect();
    let saturated = !high.is_empty() && high.iter().all(|(_, p)| *p > 0.999);
    let at5 = containment_prob(5.0, 1.0, ContainmentMode::ExactChi3);
    let s = secs(t);
    report(
        out,
        "containment limit",
        monotone && saturated && s < 1.0,
        format!("monotone {monotone}, {} grid points past ratio 5 all > 0.999: {saturated} (value at 5: {at5:.8}), {s:.3}s", high.len()),
    );
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn metric_oracles(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let perms = permutations(6);
    let mut emd_ok = 0;
    for _ in 0..50 {
        let a = uniform_cloud(6, &mut rng);
        let b = uniform_cloud(6, &mut rng);
        let brute = perms
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, j)| dist2(a[i], b[*j]).sqrt()).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / 6.0;
        emd_ok += (emd(&a, &b, EmdMode::Exact).unwrap().value == brute) as usize;
    }
    let emd_secs = secs(t);

    let mut cd_err: f64 = 0.0;
    let mut f1_err: f64 = 0.0;
    for _ in 0..20 {
        let a = uniform_cloud(200, &mut rng);
        let b = uniform_cloud(200, &mut rng);
        let nearest = |x: &[Point], y: &[Point]| -> Vec<f64> {
            x.iter().map(|p| y.iter().map(|q| dist2(*p, *q)).fold(f64::INFINITY, f64::min)).collect()
        };
        let (ab, ba) = (nearest(&a, &b), nearest(&b, &a));
        let cd = ab.iter().sum::<f64>() / 200.0 + ba.iter().sum::<f64>() / 200.0;
        let tau = 0.1;
        let share = |d: &[f64]| d.iter().filter(|v| **v <= tau * tau).count() as f64 / d.len() as f64;
        let (p, r) = (share(&ab), share(&ba));
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        cd_err = cd_err.max((chamfer(&a, &b) - cd).abs());
        f1_err = f1_err.max((f1(&a, &b, tau) - f).abs());
    }
    report(
        out,
        "assignment and distance oracles",
        emd_ok == 50 && emd_secs < 5.0 && cd_err < 1e-12 && f1_err < 1e-12,
        format!("EMD exact match {emd_ok}/50 in {emd_secs:.2}s; CD max error {cd_err:.1e}; F1 max error {f1_err:.1e}"),
    );
}

const GC_N: usize = 64;

fn gc_hyper() -> HyperParams {
    HyperParams {
        points: GC_N,
        ..HyperParams::default()
    }
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

fn random_array(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseArray {
    let len = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bind(pairs: Vec<(&str, DenseArray)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn layer_error(build: impl FnOnce(&mut NetBuilder, &mut ChaCha8Rng) -> (NodeId, Bindings)) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut b = NetBuilder::new();
    let (out, vals) = build(&mut b, &mut rng);
    let g: &mut Graph = &mut b.graph;
    let shape = g.shape(out).to_vec();
    let w = g.constant(random_array(&shape, &mut rng));
    let m = g.mul(out, w).unwrap();
    let loss = g.sum(m, None).unwrap();
    let mut store = ParamStore::new(5);
    b.init_params(&mut store);
    jitter(&mut store, 0.3, 6);
    let graph = b.into_graph();
    let opts = GradCheckOptions {
        seed: 3,
        ..GradCheckOptions::default()
    };
    gradcheck(&graph, loss, &vals, &store, &opts).unwrap().max_rel_error
}

fn two_object_scene() -> Interaction {
    let cfg = SynthConfig {
        points: GC_N,
        ..SynthConfig::default()
    };
    (0..)
        .map(|s| gen_interaction(s, &cfg).unwrap())
        .find(|it| it.entities.len() == 3)
        .unwrap()
}

fn gradients(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let h = gc_hyper();
    let (n, e) = (GC_N, 3);
    let vocab = Vocabulary::grammar().len();
    let zeros_bias = || DenseArray::zeros(&[1, e]);
    let layers: Vec<(&str, f64)> = vec![
        (
            "point encoder",
            layer_error(|b, rng| {
                let c = b.graph.input("c", &[e, n, 3]);
                (layers::point_encoder(b, "enc", c, h.d_hidden).unwrap(), bind(vec![("c", random_array(&[e, n, 3], rng))]))
            }),
        ),
        (
            "text encoder",
            layer_error(|b, rng| {
                let bow = b.graph.input("bow", &[1, vocab]);
                let out = layers::text_encoder(b, bow, vocab, h.d_embed, h.d_text).unwrap();
                (out, bind(vec![("bow", random_array(&[1, vocab], rng))]))
            }),
        ),
        (
            "entity tokens",
            layer_error(|b, rng| {
                let q = b.graph.input("q", &[e, n, 3]);
                (layers::entity_tokens(b, q, h.d_v).unwrap(), bind(vec![("q", random_array(&[e, n, 3], rng))]))
            }),
        ),
        (
            "entity attention block",
            layer_error(|b, rng| {
                let u = b.graph.input("u", &[e, h.d_v]);
                let kb = b.graph.input("kb", &[1, e]);
                let out = layers::entity_block(b, "blk", u, h.heads, kb).unwrap();
                (out, bind(vec![("u", random_array(&[e, h.d_v], rng)), ("kb", zeros_bias())]))
            }),
        ),
        (
            "translation attention",
            layer_error(|b, rng| {
                let text = b.graph.input("text", &[1, h.d_text]);
                let u = b.graph.input("u", &[e, h.d_v]);
                let kb = b.graph.input("kb", &[1, e]);
                let tr = layers::attend_translations(b, text, u, h.heads, h.d_hidden, kb).unwrap();
                let wf = b.graph.reshape(tr.w, &[e, 1]).unwrap();
                let out = b.graph.concat(&[tr.v, wf], 1).unwrap();
                let vals = bind(vec![
                    ("text", random_array(&[1, h.d_text], rng)),
                    ("u", random_array(&[e, h.d_v], rng)),
                    ("kb", zeros_bias()),
                ]);
                (out, vals)
            }),
        ),
        (
            "transform attention and composition",
            layer_error(|b, rng| {
                let q = b.graph.input("q", &[e, n, 3]);
                let ff = b.graph.input("ff", &[e, n, 2 * h.fourier]);
                let v = b.graph.input("v", &[e, 3]);
                let u = b.graph.input("u", &[e, h.d_v]);
                let kb = b.graph.input("kb", &[1, e]);
                let f = layers::attend_transforms(b, q, Some(ff), v, u, h.d_f, h.heads, kb).unwrap();
                let p = b.graph.input("p", &[e, n, 3]);
                let w = b.graph.input("w", &[1, e]);
                let (_, s) = layers::compose_guiding_points(&mut b.graph, f, p, w).unwrap();
                let vals = bind(vec![
                    ("q", random_array(&[e, n, 3], rng)),
                    ("ff", random_array(&[e, n, 2 * h.fourier], rng)),
                    ("v", random_array(&[e, 3], rng)),
                    ("u", random_array(&[e, h.d_v], rng)),
                    ("kb", zeros_bias()),
                    ("p", random_array(&[e, n, 3], rng)),
                    ("w", DenseArray::new(vec![1, e], vec![0.2, 0.5, 0.3]).unwrap()),
                ]);
                (s, vals)
            }),
        ),
        (
            "shared translation",
            layer_error(|b, rng| {
                let p = b.graph.input("p", &[e, n, 3]);
                let v = b.graph.input("v", &[e, 3]);
                let w = b.graph.input("w", &[1, e]);
                let (_, s) = layers::shared_translation(&mut b.graph, p, v, w).unwrap();
                let vals = bind(vec![
                    ("p", random_array(&[e, n, 3], rng)),
                    ("v", random_array(&[e, 3], rng)),
                    ("w", random_array(&[1, e], rng)),
                ]);
                (s, vals)
            }),
        ),
        (
            "denoiser",
            layer_error(|b, rng| {
                let x = b.graph.input("x", &[n, 3]);
                let t = b.graph.input("t", &[1, h.d_time]);
                let s = b.graph.input("s", &[n, 3]);
                let out = layers::denoise_step(b, x, t, s, h.d_time).unwrap();
                let vals = bind(vec![
                    ("x", random_array(&[n, 3], rng)),
                    ("t", layers::timestep_embedding(37, h.d_time)),
                    ("s", random_array(&[n, 3], rng)),
                ]);
                (out, vals)
            }),
        ),
    ];

    let item = two_object_scene();
    let (_, cond) = Conditions::from_world(&item.entity_clouds(), &item.prompt, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = uniform_cloud(n, &mut rng);
    let noise = gaussian_points(n, &mut rng);
    let mut end_to_end = Vec::new();
    for ablation in [Ablation::Full, Ablation::NoF] {
        let mut model = GpNet::new(h.clone(), ablation, Vocabulary::grammar(), 11).unwrap();
        jitter(model.params_mut(), 0.2, 12);
        let r = model.gradcheck_loss(&cond, &x0, 40, &noise, &GradCheckOptions::default()).unwrap();
        end_to_end.push((ablation, r.max_rel_error, r.checked));
    }
    let s = secs(t);
    let worst = layers
        .iter()
        .map(|(_, e)| *e)
        .chain(end_to_end.iter().map(|(_, e, _)| *e))
        .fold(0.0, f64::max);
    let detail: Vec<String> = layers
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .chain(end_to_end.iter().map(|(a, e, c)| format!("loss[{a}] {e:.1e} over {c} entries")))
        .collect();
    report(
        out,
        "gradient check",
        worst < 1e-4 && s < 60.0,
        format!("N={n}, M=2: {}; {s:.1}s", detail.join(", ")),
    );
}

fn overfit_one(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let item = gen_interaction(0, &SynthConfig::default()).unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let ex = prepare(std::slice::from_ref(&item), cfg.hyper.points).unwrap().remove(0);
    let grid: Vec<usize> = (0..cfg.hyper.steps).collect();
    let fresh = GpNet::new(cfg.hyper.clone(), cfg.ablation, Vocabulary::grammar(), cfg.seed).unwrap();
    let before = grid_loss(&fresh, &ex, &grid, 1).unwrap();
    let (model, steps) = overfit(&ex, &cfg, Vocabulary::grammar(), 500).unwrap();
    let after = grid_loss(&model, &ex, &grid, 1).unwrap();
    let (pred, _) = model.sample(&ex.cond, 0).unwrap();
    let cd = chamfer(&ex.frame.cloud_to_world(&pred), &ex.target_world);
    let s = secs(t);
    let ratio = after / before;
    report(
        out,
        "single-scene overfit",
        ratio < 0.01 && cd < 0.05 && s < 300.0,
        format!(
            "loss over all {} timesteps {before:.4} -> {after:.5} ({:.2}% of initial; last step loss {:.5}); sample CD {cd:.4} m^2; {s:.1}s",
            grid.len(),
            100.0 * ratio,
            steps.last().copied().unwrap_or(f64::NAN)
        ),
    );
}

struct Run {
    cd: f64,
    gmse: f64,
    reduction: f64,
}

fn desk_scale(out: &mut Vec<Outcome>) -> GpNet {
    let t = Instant::now();
    let synth = SynthConfig::default();
    let train_set = gen_dataset(0, 180, &synth).unwrap();
    let test_set = gen_dataset(180, 20, &synth).unwrap();
    let base = TrainConfig::default();
    let train_ex = prepare(&train_set, base.hyper.points).unwrap();
    let test_ex = prepare(&test_set, base.hyper.points).unwrap();
    let mut first_full = None;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let run = |ablation: Ablation| {
            let cfg = TrainConfig {
                ablation,
                seed,
                ..base.clone()
            };
            let (model, log) = train(&train_ex, &cfg, Vocabulary::grammar(), None).unwrap();
            let eval = evaluate(&model, &test_ex, seed).unwrap();
            let run = Run {
                cd: eval.mean.cd,
                gmse: heldout_guiding_mse(&model, &test_ex).unwrap(),
                reduction: log.loss_reduction().unwrap(),
            };
            (model, run)
        };
        let (full_model, full) = run(Ablation::Full);
        let (_, no_v) = run(Ablation::NoV);
        let (_, no_f) = run(Ablation::NoF);
        let line = format!(
            "seed {seed}: full CD {:.4} gmse {:.4} loss down {:.1}% | no_v CD {:.4} | no_F gmse {:.4} [{:.0}s]\n",
            full.cd,
            full.gmse,
            100.0 * full.reduction,
            no_v.cd,
            no_f.gmse,
            secs(t)
        );
        std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
        if first_full.is_none() {
            first_full = Some(full_model);
        }
        rows.push((full, no_v, no_f));
    }
    let s = secs(t);
    let within_time = s <= 7200.0;
    let reduced = rows.iter().filter(|(f, _, _)| f.reduction >= 0.8).count();
    let beats_no_v = rows.iter().filter(|(f, v, _)| f.cd < v.cd).count();
    let beats_no_f = rows.iter().filter(|(f, _, nf)| f.gmse < nf.gmse).count();
    let min_reduction = rows.iter().map(|(f, _, _)| f.reduction).fold(f64::INFINITY, f64::min);
    report(
        out,
        "desk-scale loss reduction",
        reduced == rows.len() && within_time,
        format!("full model epoch loss down >= 80% in {reduced}/5 seeds (min {:.1}%)", 100.0 * min_reduction),
    );
    report(
        out,
        "desk-scale guiding points help",
        beats_no_v >= 4 && within_time,
        format!("full CD < no_v CD in {beats_no_v}/5 seeds"),
    );
    report(
        out,
        "desk-scale per-point transforms help",
        beats_no_f >= 4 && within_time,
        format!("full guiding MSE < no_F guiding MSE in {beats_no_f}/5 seeds; 15 trainings in {:.0} min", s / 60.0),
    );
    first_full.unwrap()
}

fn editing(out: &mut Vec<Outcome>, model: &GpNet) {
    let held_out = gen_dataset(180, 60, &SynthConfig::default()).unwrap();

    let mut exact = true;
    let mut fixed = 0;
    for (i, item) in held_out.iter().take(5).enumerate() {
        let mut spec = item.prompt_spec();
        spec.adjective = ADJECTIVES.iter().find(|a| **a != spec.adjective).unwrap().to_string();
        let req = EditRequest {
            op: EditOp::AlterShape,
            prompt: spec.render(),
            target_id: "target".into(),
        };
        let res = edit(model, item, &req, i as u64).unwrap();
        let mask = lowest_z_mask(&item.target.points, 0.25);
        for ((p, o), keep) in res.points.iter().zip(&item.target.points).zip(&mask) {
            if *keep {
                fixed += 1;
                exact &= p.map(f64::to_bits) == o.map(f64::to_bits);
            }
        }
    }
    report(
        out,
        "shape alternation keeps fixed points",
        exact && fixed > 0,
        format!("{fixed} fixed points over 5 edits, bit-exact: {exact}"),
    );

    let cases: Vec<&Interaction> = held_out.iter().filter(|i| i.meta.relation != Relation::LeftOf).take(20).collect();
    let mut projected = 0;
    let mut strict = 0;
    for (seed, item) in cases.iter().enumerate() {
        let a = item.meta.anchors[0];
        let spec = PromptSpec {
            relation: Relation::LeftOf,
            anchors: vec![item.anchor_ref(a)],
            ..item.prompt_spec()
        };
        let req = EditRequest {
            op: EditOp::Displace,
            prompt: spec.render(),
            target_id: "target".into(),
        };
        let res = edit(model, item, &req, seed as u64).unwrap();
        let c = centroid(&res.points).unwrap();
        let anchor = &item.entities[a].solid;
        projected += (relation_projection(Relation::LeftOf, anchor, c).unwrap() > 0.0) as usize;
        strict += relation_satisfied(Relation::LeftOf, std::slice::from_ref(anchor), c) as usize;
    }
    report(
        out,
        "displacement follows the new relation",
        cases.len() == 20 && projected * 5 >= cases.len() * 4,
        format!(
            "left-of projection positive in {projected}/{} runs ({strict} also clear the anchor's face)",
            cases.len()
        ),
    );

    let mut ok = true;
    let mut worst_mse: f64 = 0.0;
    for item in held_out.iter().take(10) {
        let (_, r) = build_replacement_gt(&item.target.points, &item.target.points, &IcpOptions::default()).unwrap();
        ok &= r.fitness == 1.0 && r.inlier_mse < 1e-10;
        worst_mse = worst_mse.max(r.inlier_mse);
    }
    report(
        out,
        "replacement ground truth self-alignment",
        ok,
        format!("10 targets aligned onto themselves: fitness 1.0 and worst inlier MSE {worst_mse:.1e}"),
    );
}

fn interpenetration(out: &mut Vec<Outcome>) {
    let scenes = gen_dataset(0, 200, &SynthConfig::default()).unwrap();
    let probe = scenes[0].entity_clouds();
    let far: Vec<Point> = scenes[0].target.points.iter().map(|p| [p[0] + 100.0, p[1], p[2]]).collect();
    let disjoint = ip_3d(&far, &probe).value;
    let worst = scenes
        .iter()
        .map(|it| ip_3d(&it.target.points, &it.entity_clouds()).value)
        .fold(0.0, f64::max);
    report(
        out,
        "interpenetration sanity",
        disjoint == 0.0 && worst == 0.0,
        format!("disjoint prediction {disjoint}; largest value over 200 generated targets {worst}"),
    );
}

#[test]
fn acceptance() {
    std::io::stdout().lock().write_all(b"\nacceptance criteria\n").unwrap();
    let mut out = Vec::new();
    prop1(&mut out);
    forward_convergence(&mut out);
    prop2(&mut out);
    chi_squared(&mut out);
    corollary(&mut out);
    metric_oracles(&mut out);
    gradients(&mut out);
    overfit_one(&mut out);
    interpenetration(&mut out);
    let model = desk_scale(&mut out);
    editing(&mut out, &model);
    let failed: Vec<String> = out
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
