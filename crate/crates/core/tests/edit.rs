use lsdm_core::edit::{
    build_replacement_gt, edit, edit_scene, evaluate_editing_with, lowest_z_mask, make_case, EditError, EditOp,
    EditRequest,
};
use lsdm_core::geometry::{centroid, sample_interior, IcpOptions, Point, Solid};
use lsdm_core::gpnet::{Ablation, GpNet, HyperParams};
use lsdm_core::synth::{gen_dataset, gen_interaction, relation_satisfied, Interaction, PromptSpec, SynthConfig, Vocabulary};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 32;

fn item(seed: u64) -> Interaction {
    let cfg = SynthConfig {
        points: N,
        ..SynthConfig::default()
    };
    gen_interaction(seed, &cfg).unwrap()
}

fn dense_item(seed: u64) -> Interaction {
    gen_interaction(seed, &SynthConfig::default()).unwrap()
}

fn model() -> GpNet {
    let hyper = HyperParams {
        points: N,
        d_text: 8,
        d_embed: 8,
        d_hidden: 8,
        d_v: 8,
        d_f: 8,
        d_time: 8,
        heads: 2,
        fourier: 4,
        steps: 8,
        ..HyperParams::default()
    };
    GpNet::new(hyper, Ablation::Full, Vocabulary::grammar(), 2).unwrap()
}

fn reshape_request(item: &Interaction) -> EditRequest {
    let mut spec = item.prompt_spec();
    spec.adjective = if spec.adjective == "tall" { "wide" } else { "tall" }.into();
    EditRequest {
        op: EditOp::AlterShape,
        prompt: spec.render(),
        target_id: "target".into(),
    }
}

#[test]
fn mask_picks_the_lowest_quarter() {
    let pts: Vec<Point> = (0..8).map(|i| [0.0, 0.0, [5.0, 1.0, 3.0, 0.0, 7.0, 2.0, 6.0, 4.0][i]]).collect();
    let mask = lowest_z_mask(&pts, 0.25);
    assert_eq!(mask, vec![false, true, false, true, false, false, false, false]);
    let ties = vec![[0.0; 3]; 8];
    assert_eq!(lowest_z_mask(&ties, 0.25), vec![true, true, false, false, false, false, false, false]);
    assert_eq!(lowest_z_mask(&ties, 1.0).iter().filter(|m| **m).count(), 7);
    assert!(lowest_z_mask(&ties[..1], 0.25).iter().all(|m| !m));
    assert!(lowest_z_mask(&[], 0.25).is_empty());
}

#[test]
fn alter_shape_keeps_fixed_rows_bit_exact() {
    let m = model();
    for seed in 0..4 {
        let it = item(seed);
        let req = reshape_request(&it);
        let out = edit(&m, &it, &req, seed).unwrap();
        let mask = out.mask.clone().unwrap();
        assert_eq!(mask.iter().filter(|b| **b).count(), N / 4);
        for ((p, o), keep) in out.points.iter().zip(&it.target.points).zip(&mask) {
            if *keep {
                assert_eq!(p.map(f64::to_bits), o.map(f64::to_bits));
            }
        }
        assert!(out.points.iter().zip(&it.target.points).zip(&mask).any(|((p, o), k)| !k && p != o));
    }
}

#[test]
fn edits_are_deterministic_and_pure() {
    let m = model();
    let it = item(5);
    let before = it.clone();
    let req = reshape_request(&it);
    let a = edit(&m, &it, &req, 1).unwrap();
    let b = edit(&m, &it, &req, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(it, before);
}

#[test]
fn requests_are_validated() {
    let m = model();
    let it = item(6);
    let same = EditRequest {
        op: EditOp::Replace,
        prompt: it.prompt.clone(),
        target_id: "target".into(),
    };
    assert!(matches!(edit(&m, &it, &same, 0), Err(EditError::InvalidPrompt { op: EditOp::Replace, .. })));
    let moved = EditRequest {
        op: EditOp::Displace,
        ..same.clone()
    };
    assert!(matches!(edit(&m, &it, &moved, 0), Err(EditError::InvalidPrompt { .. })));
    let unknown = EditRequest {
        target_id: "obj99".into(),
        ..reshape_request(&it)
    };
    assert!(matches!(edit(&m, &it, &unknown, 0), Err(EditError::UnknownObject(id)) if id == "obj99"));
    assert!(matches!(edit_scene(&it, "obj0"), Err(EditError::UnknownObject(_))));
    assert!(matches!(edit_scene(&it, "chair"), Err(EditError::UnknownObject(_))));
    let free_form = EditRequest {
        op: EditOp::Replace,
        prompt: "something else entirely".into(),
        target_id: "target".into(),
    };
    assert!(edit(&m, &it, &free_form, 0).is_ok());
}

#[test]
fn editing_an_existing_object_keeps_the_target_in_the_scene() {
    let it = item(7);
    let scene = edit_scene(&it, "obj1").unwrap();
    assert_eq!(scene.entities.len(), it.entities.len());
    assert_eq!(scene.entities[0], it.entities[0].points);
    assert_eq!(scene.entities.last().unwrap(), &it.target.points);
    assert_eq!(scene.object, it.entities[1].points);
    assert_eq!(scene.label, it.entities[1].label);
}

#[test]
fn self_alignment_is_perfect() {
    let it = item(8);
    let (aligned, report) = build_replacement_gt(&it.target.points, &it.target.points, &IcpOptions::default()).unwrap();
    assert_eq!(report.fitness, 1.0);
    assert!(report.inlier_mse < 1e-10);
    for (a, b) in aligned.iter().zip(&it.target.points) {
        assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-9));
    }
}

#[test]
fn outliers_lower_fitness_proportionally() {
    let solid = Solid::cuboid([0.4, 0.3, 0.2], [1.0, 1.0, 0.2]);
    let original = sample_interior(&solid, 200, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let candidate: Vec<Point> = original
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 5 == 0 {
                [rng.gen_range(0.4..1.6), rng.gen_range(0.55..1.45), rng.gen_range(-0.1..0.5)]
            } else {
                *p
            }
        })
        .collect();
    let (_, report) = build_replacement_gt(&original, &candidate, &IcpOptions::default()).unwrap();
    assert!(report.fitness > 0.7, "{report:?}");
}

#[test]
fn disjoint_candidates_are_rejected() {
    let tiny = sample_interior(&Solid::cuboid([0.05; 3], [0.0; 3]), 50, 1).unwrap();
    let ring: Vec<Point> = (0..40)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 40.0;
            [5.0 * a.cos(), 5.0 * a.sin(), 0.0]
        })
        .collect();
    assert!(matches!(build_replacement_gt(&tiny, &ring, &IcpOptions::default()), Err(EditError::Rejected)));
    assert!(matches!(build_replacement_gt(&[], &ring, &IcpOptions::default()), Err(EditError::GroundTruth(_))));
}

#[test]
fn constructed_cases_follow_their_contracts() {
    for seed in 0..10 {
        let it = dense_item(seed);
        for op in EditOp::ALL {
            let case = make_case(&it, op, seed).unwrap();
            assert_eq!(case.truth.len(), it.target.points.len());
            let spec = PromptSpec::parse(&case.request.prompt).unwrap();
            let scene = edit_scene(&it, &case.request.target_id).unwrap();
            match op {
                EditOp::Replace => assert_ne!(spec.noun, it.meta.noun),
                EditOp::AlterShape => {
                    assert_eq!(spec.noun, it.meta.noun);
                    assert_ne!(spec.adjective, it.meta.adjective);
                }
                EditOp::Displace => {
                    assert_ne!(spec.relation, it.meta.relation);
                    let anchor = it.entities[it.meta.anchors[0]].solid.clone();
                    let c = centroid(&case.truth).unwrap();
                    assert!(relation_satisfied(spec.relation, &[anchor], c), "seed {seed}");
                }
            }
            assert!(scene.entities.len() == it.entities.len());
        }
    }
}

#[test]
fn oracle_generator_scores_perfectly() {
    let items = gen_dataset(100, 4, &SynthConfig::default()).unwrap();
    let rows = evaluate_editing_with(&items, 3, |_, case| Ok(case.truth.clone())).unwrap();
    assert_eq!(rows.len(), 3);
    for (op, r) in rows {
        assert_eq!(r.cd, 0.0, "{op}");
        assert_eq!(r.emd, 0.0);
        assert_eq!(r.f1, 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_selects_a_lower_set(zs in prop::collection::vec(-5.0f64..5.0, 1..80)) {
        let pts: Vec<Point> = zs.iter().map(|z| [0.0, 0.0, *z]).collect();
        let mask = lowest_z_mask(&pts, 0.25);
        let count = mask.iter().filter(|m| **m).count();
        prop_assert_eq!(count, ((zs.len() as f64 * 0.25).round() as usize).min(zs.len() - 1));
        let kept_max = pts.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| p[2]).fold(f64::NEG_INFINITY, f64::max);
        let free_min = pts.iter().zip(&mask).filter(|(_, m)| !**m).map(|(p, _)| p[2]).fold(f64::INFINITY, f64::min);
        prop_assert!(kept_max <= free_min);
    }
}
