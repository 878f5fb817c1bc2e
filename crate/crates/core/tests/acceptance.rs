//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use rotokin::bench::{run_bench, BenchConfig, BenchMode};
use rotokin::ik::{position_jacobian, solve_frame, solve_sequence, IkConfig};
use rotokin::kinematics::{
    build_wba_batch, fk_backprop, forward_kinematics, BodyShape, Flip, KinematicTree, Pose,
    Pose2D, Pose3D, WbaPairing,
};
use rotokin::metrics::{mpjae, mpjpe};
use rotokin::so3::{
    geodesic_distance, geodesic_loss, loss_gradients, loss_value, random_rotation_within,
    svd_orthogonalize, AxisAngle, JointRotations, LossKind, RawMatrix, Representation, RotMatrix,
    Rotation, GUARD_BAND,
};
use rotokin::testbed::{
    generate_synthetic, run_grid, standard_grid, Head, Regressor, RegressorConfig, SyntheticSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_pose(rng: &mut ChaCha8Rng, joints: usize, max_angle: f64) -> JointRotations {
    (0..joints)
        .map(|k| {
            if k == 0 {
                uniform_rotation(rng)
            } else {
                random_rotation_within(rng, max_angle).to_rotation()
            }
        })
        .collect()
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let paths: Vec<(Representation, Representation)> = Representation::ALL
        .iter()
        .flat_map(|&a| Representation::ALL.iter().map(move |&b| (a, b)))
        .filter(|(a, b)| a != b)
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let r = uniform_rotation(&mut rng);
        for &(a, b) in &paths {
            let src = Rotation::Matrix(r).convert(a);
            let back = src.convert(b).convert(a);
            worst = worst.max(angle_between(src.to_matrix().matrix(), back.to_matrix().matrix()));
        }
    }
    let mut worst_pi: f64 = 0.0;
    for i in 0..1000 {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let angle = PI - 10f64.powi(-(4 + (i % 8) as i32));
        let r = RotMatrix::from_matrix_unchecked(rodrigues(&axis, angle));
        let src_aa = Rotation::AxisAngle(AxisAngle::from_axis_angle(&axis.normalize(), angle));
        for src in [Rotation::Matrix(r), src_aa] {
            for &(a, b) in &paths {
                let from = src.convert(a);
                let back = from.convert(b).convert(a);
                worst_pi =
                    worst_pi.max(angle_between(from.to_matrix().matrix(), back.to_matrix().matrix()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-9 && worst_pi < 1e-7 && secs < 10.0,
        format!("max {worst:.2e} rad, near-pi max {worst_pi:.2e} rad, {secs:.2} s"),
    )
}

fn procrustes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut violations = 0usize;
    let mut eig_worst: f64 = 0.0;
    for _ in 0..100 {
        let a = gaussian_matrix(&mut rng);
        let p = svd_orthogonalize(&RawMatrix(a));
        let r = *p.rotation.matrix();

        // Idempotence.
        let again = svd_orthogonalize(&RawMatrix(r));
        violations += usize::from((again.rotation.matrix() - r).norm() > 1e-12);
        // Positive scaling.
        let c = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled = svd_orthogonalize(&RawMatrix(a * c));
        violations += usize::from((scaled.rotation.matrix() - r).norm() > 1e-10);
        // Proper rotation.
        violations += usize::from(
            ((r.determinant() - 1.0).abs() > 1e-9) || (r.transpose() * r - Matrix3::identity()).norm() > 1e-9,
        );
        // Minimality against random candidates.
        let best = (a - r).norm();
        for _ in 0..1000 {
            let q = uniform_rotation(&mut rng);
            violations += usize::from(best > (a - q.matrix()).norm() + 1e-12);
        }
        // Independent eigen-solution of the same problem.
        let (r_eig, gap) = nearest_rotation_by_eigen(&a);
        if gap > 1e-6 {
            eig_worst = eig_worst.max((r_eig - r).norm());
        }
    }
    let mut neg = 0usize;
    for _ in 0..100 {
        let mut a = gaussian_matrix(&mut rng);
        if a.determinant() > 0.0 {
            a.set_column(0, &-a.column(0));
        }
        neg += 1;
        let r = *svd_orthogonalize(&RawMatrix(a)).rotation.matrix();
        violations += usize::from((r.determinant() - 1.0).abs() > 1e-9);
        let (r_eig, gap) = nearest_rotation_by_eigen(&a);
        if gap > 1e-6 {
            eig_worst = eig_worst.max((r_eig - r).norm());
        }
    }
    violations += usize::from(eig_worst > 1e-9);
    outcome(
        violations == 0,
        format!("{violations} violations (100 raw matrices x 1000 candidates, {neg} negative-det inputs), eigen oracle max diff {eig_worst:.2e}"),
    )
}

fn chordal_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = uniform_rotation(&mut rng);
        let b = uniform_rotation(&mut rng);
        let phi = geodesic_distance(&a, &b);
        let chord = (a.matrix() - b.matrix()).norm();
        worst = worst.max((chord - 2.0 * 2f64.sqrt() * (phi / 2.0).sin()).abs());
    }
    outcome(worst < 1e-9, format!("max deviation {worst:.2e} over 10^4 pairs"))
}

fn metric_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..30);
        let pred: JointRotations = (0..k).map(|_| uniform_rotation(&mut rng)).collect();
        let gt: JointRotations = (0..k).map(|_| uniform_rotation(&mut rng)).collect();
        let mut subset: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.6)).collect();
        if subset.is_empty() {
            subset.push(0);
        }
        let m = mpjae(&pred, &gt, &subset).unwrap();
        let p: JointRotations = subset.iter().map(|&j| pred[j]).collect();
        let g: JointRotations = subset.iter().map(|&j| gt[j]).collect();
        let l = geodesic_loss(&g, &p).unwrap();
        worst = worst.max((m - l.to_degrees()).abs());
    }
    let ident = JointRotations::identity(4);
    let zero = mpjae(&ident, &ident, &[0, 1, 2, 3]).unwrap();
    let mut one_off = ident.clone();
    one_off.as_mut_slice()[2] = RotMatrix::from_matrix_unchecked(rodrigues(&Vector3::x(), PI / 2.0));
    let quarter = mpjae(&one_off, &ident, &[0, 1, 2, 3]).unwrap();
    outcome(
        worst < 1e-12 && zero == 0.0 && (quarter - 22.5).abs() < 1e-12,
        format!("max |MPJAE - 180/pi*L_geo| {worst:.2e}; worked cases {zero} deg, {quarter} deg"),
    )
}

fn raw_prediction(rng: &mut ChaCha8Rng, repr: Representation, gt: &RotMatrix) -> Vec<f64> {
    match repr {
        Representation::Matrix => {
            let noise = gaussian_matrix(rng) * 0.7;
            let m = gt.matrix() * rng.random_range(0.5..2.0) + noise;
            (0..9).map(|i| m[(i / 3, i % 3)]).collect()
        }
        Representation::Quaternion => {
            (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()
        }
        Representation::AxisAngle => {
            let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let v = v.normalize() * rng.random_range(0.01..PI - 0.01);
            v.iter().copied().collect()
        }
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let h = 1e-6;
    let joints = 3;
    let mut lines = Vec::new();
    let mut pass = true;
    for repr in Representation::ALL {
        for kind in [LossKind::Mse, LossKind::Geodesic] {
            let mut worst: f64 = 0.0;
            let mut configs = 0;
            while configs < 100 {
                let gt: JointRotations = (0..joints).map(|_| uniform_rotation(&mut rng)).collect();
                let raw: Vec<f64> = gt
                    .iter()
                    .flat_map(|g| raw_prediction(&mut rng, repr, g))
                    .collect();
                let decoded: Vec<RotMatrix> = raw
                    .chunks(repr.dim())
                    .map(|c| repr.decode(c))
                    .collect();
                // Stay inside the guard band and away from projection
                // degeneracies where finite differences are meaningless.
                let inside = decoded.iter().zip(gt.iter()).all(|(d, g)| {
                    let phi = angle_between(d.matrix(), g.matrix());
                    phi > 10.0 * GUARD_BAND && phi < PI - 10.0 * GUARD_BAND
                });
                if !inside {
                    continue;
                }
                configs += 1;
                let analytic = loss_gradients(kind, repr, &raw, &gt).unwrap().gradient;
                let numeric = central_difference(|x| loss_value(kind, repr, x, &gt).unwrap(), &raw, h);
                worst = worst.max(relative_error(&analytic, &numeric));
            }
            pass &= worst < 1e-4;
            lines.push(format!("{}/{}: {worst:.1e}", repr.code(), kind.label()));
        }
    }

    let tree = KinematicTree::body22();
    let n = tree.len();
    let mut jac_worst: f64 = 0.0;
    let mut vjp_worst: f64 = 0.0;
    for _ in 0..100 {
        let shape = BodyShape::new((0..n).map(|_| rng.random_range(0.7..1.3)).collect()).unwrap();
        let rotations = random_pose(&mut rng, n, 2.0);
        let jac = position_jacobian(&tree, &shape, &rotations, false).unwrap();
        // Jacobian of positions with respect to right increments R_k·exp(δ).
        for k in 0..n {
            for axis in 0..3 {
                let column = |sign: f64| {
                    let mut r = rotations.clone();
                    let mut delta = Vector3::zeros();
                    delta[axis] = sign * h;
                    let inc = rodrigues(&delta, delta.norm());
                    r.as_mut_slice()[k] = RotMatrix::from_matrix_unchecked(rotations[k].matrix() * inc);
                    forward_kinematics(&tree, &shape, &r).unwrap().positions
                };
                let (up, down) = (column(1.0), column(-1.0));
                let fd: Vec<f64> = up
                    .positions
                    .iter()
                    .zip(&down.positions)
                    .flat_map(|(a, b)| ((a - b) / (2.0 * h)).iter().copied().collect::<Vec<_>>())
                    .collect();
                let an: Vec<f64> = jac.column(3 * k + axis).iter().copied().collect();
                if fd.iter().any(|x| x.abs() > 0.0) {
                    jac_worst = jac_worst.max(relative_error(&an, &fd));
                }
            }
        }
        // Backpropagation through FK onto raw matrix entries, for a random
        // linear functional of the positions.
        let weights: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let fk = forward_kinematics(&tree, &shape, &rotations).unwrap();
        let grads = fk_backprop(&tree, &shape, &rotations, &fk.global_rotations, &weights);
        let k = rng.random_range(0..n);
        let entries: Vec<f64> = rotations[k].matrix().iter().copied().collect();
        let objective = |x: &[f64]| {
            let mut r = rotations.clone();
            r.as_mut_slice()[k] = RotMatrix::from_matrix_unchecked(Matrix3::from_column_slice(x));
            let p = forward_kinematics(&tree, &shape, &r).unwrap().positions;
            p.positions.iter().zip(&weights).map(|(a, w)| a.dot(w)).sum::<f64>()
        };
        let fd = central_difference(objective, &entries, h);
        let an: Vec<f64> = grads[k].iter().copied().collect();
        if fd.iter().any(|x| x.abs() > 0.0) {
            vjp_worst = vjp_worst.max(relative_error(&an, &fd));
        }
    }
    pass &= jac_worst < 1e-4 && vjp_worst < 1e-4;
    lines.push(format!("FK Jacobian: {jac_worst:.1e}, FK backprop: {vjp_worst:.1e}"));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    outcome(pass, format!("max rel. error {}; {secs:.1} s", lines.join(", ")))
}

fn ik_round_trip() -> Outcome {
    let tree = KinematicTree::body22();
    let shape = BodyShape::uniform(tree.len());
    let cfg = IkConfig {
        prior_weight: 0.0,
        ..IkConfig::default()
    };
    let prior_cfg = IkConfig::default();
    let all: Vec<usize> = (0..tree.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut worst_mpjpe, mut non_monotone, mut worst_equi_mm, mut worst_equi_rad) =
        (0.0f64, 0usize, 0.0f64, 0.0f64);
    let rest = Pose::rest(tree.len());
    for _ in 0..50 {
        let truth = random_pose(&mut rng, tree.len(), 2.0 * PI / 3.0);
        let targets = forward_kinematics(&tree, &shape, &truth).unwrap().positions;
        let res = solve_frame(&tree, &shape, &targets, &rest, &cfg).unwrap();
        let fit = forward_kinematics(&tree, &shape, &res.pose.rotations).unwrap().positions;
        worst_mpjpe = worst_mpjpe.max(mpjpe(&fit, &targets, &all).unwrap());
        non_monotone += res
            .objective_trace
            .windows(2)
            .filter(|w| w[1] > w[0])
            .count();

        // Rotating the targets and the initial root by Q rotates the
        // solution. Without a prior twist is free, so only positions are
        // compared; with the prior the rotations are determined too.
        let q = uniform_rotation(&mut rng);
        let rotated = Pose3D::new(targets.positions.iter().map(|p| q.rotate(p)).collect());
        let mut init = rest.clone();
        init.rotations.as_mut_slice()[0] = q;
        let res_q = solve_frame(&tree, &shape, &rotated, &init, &cfg).unwrap();
        let fit_q = forward_kinematics(&tree, &shape, &res_q.pose.rotations).unwrap().positions;
        for (a, b) in fit.positions.iter().zip(&fit_q.positions) {
            worst_equi_mm = worst_equi_mm.max((q.rotate(a) - b).norm() * 1000.0);
        }
        let base = solve_frame(&tree, &shape, &targets, &rest, &prior_cfg).unwrap();
        let turned = solve_frame(&tree, &shape, &rotated, &init, &prior_cfg).unwrap();
        let mut expected = base.pose.rotations.clone();
        expected.as_mut_slice()[0] = q * base.pose.rotations[0];
        for (a, b) in expected.iter().zip(turned.pose.rotations.iter()) {
            worst_equi_rad = worst_equi_rad.max(angle_between(a.matrix(), b.matrix()));
        }
    }
    let tol_mm = cfg.position_tolerance * 1000.0;
    outcome(
        worst_mpjpe < 1.0 && non_monotone == 0 && worst_equi_mm < 2.0 * tol_mm,
        format!(
            "max MPJPE {worst_mpjpe:.2e} mm, {non_monotone} objective increases, equivariance max {worst_equi_mm:.2e} mm (prior 0), {worst_equi_rad:.2e} rad (default prior)"
        ),
    )
}

fn warm_start_ordering() -> Outcome {
    let spec = SyntheticSpec {
        num_sequences: 10,
        frames_per_sequence: 100,
        keyframe_count: 4,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let tree = spec.tree().unwrap();
    let shape = BodyShape::uniform(tree.len());
    let mean_iterations = |warm_start: bool| {
        let cfg = IkConfig {
            warm_start,
            ..IkConfig::default()
        };
        let (mut total, mut frames) = (0usize, 0usize);
        for seq in &data {
            let targets: Vec<Pose3D> = seq.frames.iter().map(|f| f.pose3d.clone().unwrap()).collect();
            for r in solve_sequence(&tree, &shape, &targets, &cfg).unwrap() {
                total += r.iterations_used;
                frames += 1;
            }
        }
        total as f64 / frames as f64
    };
    let (warm, cold) = (mean_iterations(true), mean_iterations(false));
    let model = Regressor::new(&tree, Representation::Matrix, Head::Naive, 64, 0);
    let report = run_bench(&tree, &shape, &data[0], &model, &BenchConfig::default()).unwrap();
    let t = |m| report.get(m).unwrap().mean_ms;
    let (tw, tc, tr) = (t(BenchMode::IkWarm), t(BenchMode::IkCold), t(BenchMode::Regress));
    outcome(
        warm < cold && tr < tw && tw < tc,
        format!(
            "iterations warm {warm:.1} vs cold {cold:.1}; ms/frame regress {tr:.4} < ik-warm {tw:.3} < ik-cold {tc:.3} ({} samples)",
            report.get(BenchMode::IkWarm).unwrap().samples
        ),
    )
}

fn testbed_grid() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec {
        num_sequences: 1,
        frames_per_sequence: 2,
        keyframe_count: 1,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let tree = spec.tree().unwrap();
    let base = RegressorConfig {
        epochs: 20_000,
        learning_rate: 0.015,
        batch_size: 2,
        ..RegressorConfig::default()
    };
    let grid = standard_grid(&base);
    let first = run_grid(&tree, &data, &data, &grid).unwrap();
    let second = run_grid(&tree, &data, &data, &grid).unwrap();
    let table = first.table();
    let rows = table.lines().count() - 2;
    let identical = serde_json::to_string(&first).unwrap() == serde_json::to_string(&second).unwrap()
        && table == second.table();
    let worst = first
        .cells
        .iter()
        .map(|c| c.validation.mpjae_deg.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rows == 12 && identical && worst < 1.0 && secs < 300.0,
        format!(
            "{rows} rows, reruns identical: {identical}, worst memorization MPJAE {worst:.3} deg, {secs:.0} s for two runs"
        ),
    )
}

fn flip_suite() -> Outcome {
    let tree = KinematicTree::body22();
    let n = tree.len();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut violations = 0usize;
    let mut poses = Vec::new();
    for _ in 0..1000 {
        let shape_scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.2)).collect();
        let shape = BodyShape::new(shape_scales).unwrap();
        let pose = Pose::new(random_pose(&mut rng, n, PI));
        let p3 = forward_kinematics(&tree, &shape, &pose.rotations).unwrap().positions;
        let p2 = Pose2D::new(p3.positions.iter().map(|p| p.xy()).collect());

        violations += usize::from(pose.flipped(&tree).flipped(&tree) != pose);
        violations += usize::from(p3.flipped(&tree).flipped(&tree) != p3);
        violations += usize::from(p2.flipped(&tree).flipped(&tree) != p2);

        let f3 = p3.flipped(&tree);
        for i in 0..n {
            for j in (i + 1)..n {
                let (mi, mj) = (tree.mirror(i), tree.mirror(j));
                let before = (p3.positions[mi] - p3.positions[mj]).norm();
                let after = (f3.positions[i] - f3.positions[j]).norm();
                violations += usize::from((before - after).abs() > 1e-12);
            }
        }

        let flipped = pose.flipped(&tree);
        for r in flipped.rotations.iter() {
            let m = r.matrix();
            violations += usize::from(
                (m.determinant() - 1.0).abs() > 1e-12
                    || (m.transpose() * m - Matrix3::identity()).norm() > 1e-12,
            );
        }
        let fk_of_flip = forward_kinematics(&tree, &shape.flipped(&tree), &flipped.rotations)
            .unwrap()
            .positions;
        for (a, b) in fk_of_flip.positions.iter().zip(&f3.positions) {
            violations += usize::from((a - b).norm() > 1e-12);
        }
        poses.push(pose);
    }
    for chunk in poses.chunks(10) {
        let half = chunk.len() / 2;
        for pairing in [WbaPairing::Duplicate, WbaPairing::FlipDistinct] {
            let batch = build_wba_batch(&tree, chunk, pairing).unwrap();
            let offset = if pairing == WbaPairing::Duplicate { 0 } else { half };
            for i in 0..half {
                violations += usize::from(batch[i] != chunk[i]);
                violations += usize::from(batch[half + i] != chunk[offset + i].flipped(&tree));
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over 1000 poses"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("rotation round trip", round_trip),
        ("procrustes projection", procrustes),
        ("chordal-geodesic identity", chordal_identity),
        ("metric equivalence", metric_equivalence),
        ("gradient checks", gradient_suite),
        ("ik round trip", ik_round_trip),
        ("warm-start ordering", warm_start_ordering),
        ("testbed grid", testbed_grid),
        ("flip and wba", flip_suite),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let result = check();
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!("{status} {name}: {}", result.detail);
        failed += usize::from(!result.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
