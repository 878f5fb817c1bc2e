//! End-to-end checks across synthetic data, IK pseudo labels and the
//! regressor testbed.

mod common;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::angle_between;
use rotokin::ik::{generate_pseudo_labels, solve_sequence, IkConfig, PSEUDO_LABEL_PROVENANCE};
use rotokin::kinematics::{
    forward_kinematics, BodyShape, Flip, KinematicTree, Pose3D, PoseSequence, WeakPerspective,
};
use rotokin::metrics::{mpjae, mpjpe, MetricAccumulator, MetricReport, RotationFrame};
use rotokin::so3::{LossKind, Representation};
use rotokin::testbed::{
    generate_synthetic, run_grid, standard_grid, train_regressor, Head, Regressor,
    RegressorConfig, Sample, SyntheticSpec,
};

fn dataset(sequences: usize, frames: usize, seed: u64) -> (KinematicTree, Vec<PoseSequence>) {
    let spec = SyntheticSpec {
        num_sequences: sequences,
        frames_per_sequence: frames,
        seed,
        ..SyntheticSpec::default()
    };
    (spec.tree().unwrap(), generate_synthetic(&spec).unwrap())
}

fn targets(seq: &PoseSequence) -> Vec<Pose3D> {
    seq.frames.iter().map(|f| f.pose3d.clone().unwrap()).collect()
}

#[test]
fn pseudo_labels_match_positions_but_not_twist() {
    let (tree, data) = dataset(3, 8, 21);
    let shape = BodyShape::uniform(tree.len());
    let labels = generate_pseudo_labels(&tree, &shape, &data, &IkConfig::default()).unwrap();
    let all: Vec<usize> = (0..tree.len()).collect();
    let mut angular = 0.0;
    for (truth, labelled) in data.iter().zip(&labels) {
        assert_eq!(truth.len(), labelled.len());
        for (t, l) in truth.frames.iter().zip(&labelled.frames) {
            assert_eq!(l.provenance.as_deref(), Some(PSEUDO_LABEL_PROVENANCE));
            assert!(l.ik.unwrap().converged);
            let rotations = l.rotations.as_ref().unwrap();
            let fit = forward_kinematics(&tree, &shape, rotations).unwrap().positions;
            assert!(mpjpe(&fit, t.pose3d.as_ref().unwrap(), &all).unwrap() < 1.0);
            angular += mpjae(rotations, t.rotations.as_ref().unwrap(), &all).unwrap();
        }
    }
    // Positions leave the twist about each bone unobserved.
    assert!(angular / 24.0 > 1.0, "mean MPJAE {}", angular / 24.0);
}

#[test]
fn empty_sequence_gives_empty_labels() {
    let tree = KinematicTree::body22();
    let shape = BodyShape::uniform(tree.len());
    let empty = PoseSequence::default();
    let out = generate_pseudo_labels(&tree, &shape, &[empty], &IkConfig::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert!(out[0].is_empty());
}

#[test]
fn shuffled_frames_remove_the_warm_start_advantage() {
    let (tree, data) = dataset(4, 40, 5);
    let shape = BodyShape::uniform(tree.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mean = |targets: &[Pose3D], warm_start: bool| {
        let cfg = IkConfig {
            warm_start,
            prior_weight: 0.0,
            ..IkConfig::default()
        };
        let res = solve_sequence(&tree, &shape, targets, &cfg).unwrap();
        res.iter().map(|r| r.iterations_used as f64).sum::<f64>() / res.len() as f64
    };
    let (mut smooth, mut shuffled, mut cold) = (0.0, 0.0, 0.0);
    for seq in &data {
        let ordered = targets(seq);
        let mut mixed = ordered.clone();
        mixed.shuffle(&mut rng);
        smooth += mean(&ordered, true);
        shuffled += mean(&mixed, true);
        cold += mean(&ordered, false);
    }
    let ratio = shuffled / cold;
    assert!(smooth < 0.5 * cold, "smooth {smooth} cold {cold}");
    assert!((0.7..1.3).contains(&ratio), "shuffled/cold ratio {ratio}");
}

#[test]
fn synthetic_frames_follow_the_geodesic_between_keyframes() {
    // 13 frames and 4 keyframes place keyframes on frames 0, 4, 8, 12.
    let spec = SyntheticSpec {
        num_sequences: 2,
        frames_per_sequence: 13,
        keyframe_count: 4,
        seed: 31,
        ..SyntheticSpec::default()
    };
    let mut worst: f64 = 0.0;
    for seq in generate_synthetic(&spec).unwrap() {
        let rot = |t: usize| seq.frames[t].rotations.clone().unwrap();
        for segment in 0..3 {
            let (a, b) = (rot(4 * segment), rot(4 * segment + 4));
            for t in 4 * segment + 1..4 * segment + 4 {
                let m = rot(t);
                for k in 0..a.len() {
                    let (ra, rm, rb) = (a[k].matrix(), m[k].matrix(), b[k].matrix());
                    let gap = angle_between(ra, rm) + angle_between(rm, rb) - angle_between(ra, rb);
                    worst = worst.max(gap.abs());
                }
            }
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn synthetic_noise_is_seeded_and_only_touches_2d() {
    let spec = SyntheticSpec {
        num_sequences: 2,
        frames_per_sequence: 5,
        noise_std_2d: 0.01,
        camera: WeakPerspective::new(2.0, [0.5, 0.5]),
        seed: 8,
        ..SyntheticSpec::default()
    };
    let noisy = generate_synthetic(&spec).unwrap();
    assert_eq!(noisy, generate_synthetic(&spec).unwrap());
    let clean = generate_synthetic(&SyntheticSpec {
        noise_std_2d: 0.0,
        ..spec.clone()
    })
    .unwrap();
    for (n, c) in noisy.iter().zip(&clean) {
        for (fn_, fc) in n.frames.iter().zip(&c.frames) {
            assert_eq!(fn_.pose3d, fc.pose3d);
            assert_eq!(fn_.rotations, fc.rotations);
            assert_eq!(fc.pose2d, spec.camera.project(fc.pose3d.as_ref().unwrap()));
            assert_ne!(fn_.pose2d, fc.pose2d);
        }
    }
}

fn evaluate(model: &Regressor, samples: &[Sample]) -> MetricReport {
    let n = model.tree().len();
    let mut acc = MetricAccumulator::new((0..n).collect(), RotationFrame::ParentRelative).unwrap();
    for s in samples {
        let (rotations, positions) = model.predict(&s.pose2d).unwrap();
        acc.add_positions(&positions, &s.positions).unwrap();
        acc.add_rotations(model.tree(), &rotations, &s.rotations).unwrap();
        acc.end_frame();
    }
    acc.finish()
}

#[test]
fn flip_equivariant_model_scores_the_same_on_flipped_data() {
    let (tree, data) = dataset(2, 10, 41);
    // An FK-head model whose only non-zero parameters are the rotation biases
    // predicts the rest pose for every input. The rest pose of a symmetric
    // tree is its own mirror image, so the model commutes with flipping.
    let mut model = Regressor::new(&tree, Representation::Quaternion, Head::Fk, 16, 3);
    let head = model.rotation_head();
    let bias_start = head.end - tree.len() * 4;
    for (i, p) in model.parameters_mut().iter_mut().enumerate() {
        if i < bias_start {
            *p = 0.0;
        }
    }
    let samples: Vec<Sample> = data
        .iter()
        .flat_map(|s| &s.frames)
        .map(|f| Sample::from_frame(f).unwrap())
        .collect();
    let flipped: Vec<Sample> = samples.iter().map(|s| s.flipped(&tree)).collect();
    for (s, f) in samples.iter().zip(&flipped) {
        let (r, p) = model.predict(&s.pose2d).unwrap();
        let (rf, pf) = model.predict(&f.pose2d).unwrap();
        assert_eq!(r.flipped(&tree), rf);
        assert_eq!(p.flipped(&tree), pf);
    }
    let (a, b) = (evaluate(&model, &samples), evaluate(&model, &flipped));
    assert!((a.mpjpe_mm.unwrap() - b.mpjpe_mm.unwrap()).abs() < 1e-9);
    assert!((a.mpjae_deg.unwrap() - b.mpjae_deg.unwrap()).abs() < 1e-9);
}

fn memorization() -> (KinematicTree, Vec<PoseSequence>) {
    let spec = SyntheticSpec {
        num_sequences: 1,
        frames_per_sequence: 2,
        keyframe_count: 1,
        seed: 7,
        ..SyntheticSpec::default()
    };
    (spec.tree().unwrap(), generate_synthetic(&spec).unwrap())
}

#[test]
fn memorization_loss_drops_below_a_fifth_for_every_cell() {
    let (tree, data) = memorization();
    let base = RegressorConfig {
        epochs: 6000,
        learning_rate: 0.015,
        batch_size: 2,
        ..RegressorConfig::default()
    };
    for head in [Head::Naive, Head::Fk] {
        let grid = standard_grid(&RegressorConfig { head, ..base.clone() });
        let report = run_grid(&tree, &data, &[], &grid).unwrap();
        for cell in report.cells.iter().filter(|c| !c.diverged) {
            assert!(cell.preflight_passed, "{} preflight {}", cell.model_code, cell.preflight_max_rel_error);
            assert!(
                cell.final_loss < 0.2 * cell.initial_loss,
                "{}: {} -> {}",
                cell.model_code,
                cell.initial_loss,
                cell.final_loss
            );
        }
    }
}

#[test]
fn grid_of_one_is_a_single_training_run() {
    let (tree, data) = dataset(2, 6, 51);
    let cfg = RegressorConfig {
        representation: Representation::AxisAngle,
        loss: LossKind::Mse,
        wba: true,
        epochs: 3,
        batch_size: 4,
        ..RegressorConfig::default()
    };
    let single = train_regressor(&tree, &data[..1], &data[1..], &cfg).unwrap();
    let grid = run_grid(&tree, &data[..1], &data[1..], std::slice::from_ref(&cfg)).unwrap();
    assert_eq!(grid.cells, vec![single.clone()]);
    assert_eq!(grid.table().lines().count(), 3);
    assert!(grid.table().contains(&single.model_code));
}

#[test]
fn pseudo_labels_train_like_ground_truth() {
    let (tree, data) = dataset(2, 6, 61);
    let shape = BodyShape::uniform(tree.len());
    let labels = generate_pseudo_labels(&tree, &shape, &data, &IkConfig::default()).unwrap();
    let cfg = RegressorConfig {
        epochs: 2,
        batch_size: 4,
        ..RegressorConfig::default()
    };
    let report = train_regressor(&tree, &labels, &data, &cfg).unwrap();
    assert!(!report.diverged);
    assert_eq!(report.validation.frames, 12);
}

#[test]
fn trained_model_is_deterministic_and_flip_consistent_in_shape() {
    let (tree, data) = dataset(1, 8, 71);
    let cfg = RegressorConfig {
        head: Head::Fk,
        wba: true,
        epochs: 2,
        batch_size: 4,
        ..RegressorConfig::default()
    };
    let a = train_regressor(&tree, &data, &data, &cfg).unwrap();
    let b = train_regressor(&tree, &data, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.loss_curve.len(), 2);
}
