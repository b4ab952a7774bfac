// Loop diagnostics against the policies saved by the scratch experiment.

use tacrefine_core::dataset::{draw_pair, Dataset};
use tacrefine_core::eval::{sample_contact_pose, EvalEnv};
use tacrefine_core::math::Pose6;
use tacrefine_core::net::{forward, load_params, PolicyInput};
use tacrefine_core::refine::{demonstrate_target, refine_loop, RefineConfig};
use tacrefine_core::rng::DetRng;
use tacrefine_core::tacsim::{render_hand, HandConfig, SensorParams, WristPose};

#[test]
#[ignore]
fn loop_diagnostics() {
    let policy_file = std::env::var("SCRATCH_POLICY").unwrap_or_else(|_| "/tmp/scratch_b.tacw".into());
    let (policy, _) = load_params(std::path::Path::new(&policy_file)).unwrap();
    println!("policy: {policy_file}");
    let sim = Dataset::load(std::path::Path::new("/tmp/scratch_sim.tacd")).unwrap();
    let nominal = SensorParams::nominal();
    let hand = HandConfig::default();
    let env = EvalEnv::new(nominal.clone());

    // 1. Open-loop accuracy on training-record pairs, split by delta size.
    let mut rng = DetRng::new(1);
    let mut small = Vec::new();
    let mut large = Vec::new();
    for _ in 0..300 {
        let pair = draw_pair(&sim.records, &mut rng);
        let input = PolicyInput {
            current: pair.current.images.clone(),
            target: pair.target.images.clone(),
            joints: pair.current.joints,
        };
        let pred = forward(&policy, &input).unwrap();
        let err: Vec<f64> = (0..6).map(|i| (pred[i] - pair.delta[i]).abs()).collect();
        let mag: f64 = pair.delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        if mag < 0.05 {
            small.push(err);
        } else {
            large.push(err);
        }
    }
    let mean_err = |v: &Vec<Vec<f64>>| -> Vec<f64> {
        let mut m = vec![0.0; 6];
        for e in v {
            for i in 0..6 {
                m[i] += e[i];
            }
        }
        m.iter().map(|x| x / v.len().max(1) as f64).collect()
    };
    println!("open-loop on records, small deltas ({}): {:?}", small.len(), mean_err(&small));
    println!("open-loop on records, large deltas ({}): {:?}", large.len(), mean_err(&large));

    // 2. Open-loop accuracy on OFF-GRID pose pairs (fresh renders).
    let mut rng2 = DetRng::new(2);
    let mut offgrid = Vec::new();
    let mut offgrid_small = Vec::new();
    for k in 0..100 {
        let a = sample_contact_pose(&env, &mut rng2).unwrap();
        let b = if k % 2 == 0 {
            sample_contact_pose(&env, &mut rng2).unwrap()
        } else {
            // small offset pose
            let mut p = a;
            p.0[1] += rng2.uniform(-0.004, 0.004);
            p.0[2] += rng2.uniform(-0.004, 0.004);
            p.0[3] += rng2.uniform(-0.02, 0.02);
            p.0[4] += rng2.uniform(-0.02, 0.02);
            p
        };
        let (sa, ia) = match render_hand(&WristPose::from_pose6(&a), &env.object, &hand, &nominal, 1) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let (_sb, ib) = match render_hand(&WristPose::from_pose6(&b), &env.object, &hand, &nominal, 2) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let delta = Pose6::delta_from(&b, &a);
        let input = PolicyInput { current: ia, target: ib, joints: sa.joints };
        let pred = forward(&policy, &input).unwrap();
        let err: Vec<f64> = (0..6).map(|i| (pred[i] - delta[i]).abs()).collect();
        let mag: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        if mag < 0.05 {
            offgrid_small.push(err);
        } else {
            offgrid.push(err);
        }
    }
    println!(
        "open-loop off-grid, small deltas ({}): {:?}",
        offgrid_small.len(),
        mean_err(&offgrid_small)
    );
    println!("open-loop off-grid, large deltas ({}): {:?}", offgrid.len(), mean_err(&offgrid));

    // 2a'. Information probe: nearest-neighbor (y, z) decoding from raw
    // target images over the dataset. If this is accurate, the signal exists
    // and any residual policy error is a fitting problem.
    let mut rng_nn = DetRng::new(31);
    let mut nn_y = 0.0;
    let mut nn_z = 0.0;
    let nn_n = 60;
    for _ in 0..nn_n {
        let q = sample_contact_pose(&env, &mut rng_nn).unwrap();
        let (_s, imgs) =
            match render_hand(&WristPose::from_pose6(&q), &env.object, &hand, &nominal, 3) {
                Ok(v) => v,
                Err(_) => continue,
            };
        let mut best = (f64::INFINITY, 0usize);
        for (idx, rec) in sim.records.iter().enumerate() {
            let mut d = 0.0f64;
            for f in 0..3 {
                for (a, b) in imgs[f].values.iter().zip(rec.images[f].values.iter()) {
                    let diff = *a as f64 - *b as f64;
                    d += diff * diff;
                }
            }
            if d < best.0 {
                best = (d, idx);
            }
        }
        let rec = &sim.records[best.1];
        nn_y += (rec.pose.0[1] - q.0[1]).abs();
        nn_z += (rec.pose.0[2] - q.0[2]).abs();
    }
    println!(
        "nearest-neighbor image decode: mean |y err| {:.4}, |z err| {:.4} (grid spacing y {:.4})",
        nn_y / nn_n as f64,
        nn_z / nn_n as f64,
        (sim.bounds.y.upper - sim.bounds.y.lower) / (sim.bounds.y.steps - 1).max(1) as f64
    );

    // 2a''. Self-pair drift field: prediction magnitude when current equals
    // target exactly (should be ~0 everywhere).
    let mut rng_d = DetRng::new(77);
    let mut drift_small = 0usize;
    let mut drift_all: Vec<(f64, Pose6)> = Vec::new();
    for _ in 0..50 {
        let p = sample_contact_pose(&env, &mut rng_d).unwrap();
        let (s, i) = match render_hand(&WristPose::from_pose6(&p), &env.object, &hand, &nominal, 4)
        {
            Ok(v) => v,
            Err(_) => continue,
        };
        let scaled: Vec<_> =
            i.iter().map(|img| tacrefine_core::dataset::scale_image(img, 0.75)).collect();
        let input = PolicyInput {
            current: [scaled[0].clone(), scaled[1].clone(), scaled[2].clone()],
            target: i,
            joints: s.joints,
        };
        let pred = forward(&policy, &input).unwrap();
        let pos_norm = (pred[1] * pred[1] + pred[2] * pred[2]).sqrt();
        if pos_norm < 0.003 {
            drift_small += 1;
        }
        drift_all.push((pos_norm, p));
    }
    drift_all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!(
        "self-pair drift: {}/{} below 3mm; worst 5:",
        drift_small,
        drift_all.len()
    );
    for (n, p) in drift_all.iter().take(5) {
        println!("  |drift|={:.4} at y={:+.4} z={:+.4} roll={:+.3} pitch={:+.3}", n, p.0[1], p.0[2], p.0[3], p.0[4]);
    }

    // 2a'''. Drift at grid nodes vs cell centers (memorization probe).
    let bounds = sim.bounds;
    let node = |ip: u32, ir: u32, iy: u32, iz: u32| -> Pose6 {
        Pose6([
            0.0,
            bounds.y.lower + (bounds.y.upper - bounds.y.lower) * iy as f64 / (bounds.y.steps - 1) as f64,
            bounds.z.lower + (bounds.z.upper - bounds.z.lower) * iz as f64 / (bounds.z.steps - 1) as f64,
            bounds.roll.lower + (bounds.roll.upper - bounds.roll.lower) * ir as f64 / (bounds.roll.steps - 1) as f64,
            bounds.pitch.lower + (bounds.pitch.upper - bounds.pitch.lower) * ip as f64 / (bounds.pitch.steps - 1) as f64,
            0.0,
        ])
    };
    let drift_at = |p: &Pose6| -> Option<f64> {
        let (s, i) = render_hand(&WristPose::from_pose6(p), &env.object, &hand, &nominal, 4).ok()?;
        let input = PolicyInput { current: i.clone(), target: i, joints: s.joints };
        let pred = forward(&policy, &input).ok()?;
        Some((pred[1] * pred[1] + pred[2] * pred[2]).sqrt())
    };
    let mut rng_m = DetRng::new(99);
    let (mut node_acc, mut center_acc, mut n_m) = (0.0, 0.0, 0);
    for _ in 0..40 {
        let ip = rng_m.below(bounds.pitch.steps as usize - 1) as u32;
        let ir = rng_m.below(bounds.roll.steps as usize - 1) as u32;
        let iy = rng_m.below(bounds.y.steps as usize - 1) as u32;
        let iz = rng_m.below(bounds.z.steps as usize - 1) as u32;
        let at_node = node(ip, ir, iy, iz);
        let neighbor = node(ip + 1, ir + 1, iy + 1, iz + 1);
        let mut center = at_node;
        for d in 0..6 {
            center.0[d] = 0.5 * (at_node.0[d] + neighbor.0[d]);
        }
        if let (Some(a), Some(b)) = (drift_at(&at_node), drift_at(&center)) {
            node_acc += a;
            center_acc += b;
            n_m += 1;
        }
    }
    println!(
        "drift at grid nodes {:.4} vs cell centers {:.4} ({} samples)",
        node_acc / n_m as f64,
        center_acc / n_m as f64,
        n_m
    );

    // Drift vs current-image scale factor.
    for scale in [0.55, 0.75, 0.9, 1.0] {
        let mut rng_sc = DetRng::new(55);
        let mut acc = 0.0;
        let mut n_sc = 0;
        for _ in 0..30 {
            let p = sample_contact_pose(&env, &mut rng_sc).unwrap();
            if let Ok((s, i)) =
                render_hand(&WristPose::from_pose6(&p), &env.object, &hand, &nominal, 4)
            {
                let scaled: Vec<_> = i
                    .iter()
                    .map(|img| tacrefine_core::dataset::scale_image(img, scale))
                    .collect();
                let input = PolicyInput {
                    current: [scaled[0].clone(), scaled[1].clone(), scaled[2].clone()],
                    target: i,
                    joints: s.joints,
                };
                let pred = forward(&policy, &input).unwrap();
                acc += (pred[1] * pred[1] + pred[2] * pred[2]).sqrt();
                n_sc += 1;
            }
        }
        println!("self-pair drift at current scale {scale}: {:.4}", acc / n_sc as f64);
    }

    // Weight magnitude check.
    let max_w = policy.flat().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let l2 = (policy.flat().iter().map(|w| w * w).sum::<f64>() / policy.flat().len() as f64).sqrt();
    println!("weights: max |w| {:.2}, rms {:.4}", max_w, l2);

    // 2b. Scatter of predicted vs true per dim on near-target pairs.
    let mut rng_s = DetRng::new(7);
    println!("scatter (true_dy pred_dy | true_dz pred_dz | true_droll pred_droll):");
    for _ in 0..15 {
        let a = sample_contact_pose(&env, &mut rng_s).unwrap();
        let mut b = a;
        b.0[1] += rng_s.uniform(-0.006, 0.006);
        b.0[2] += rng_s.uniform(-0.006, 0.006);
        b.0[3] += rng_s.uniform(-0.03, 0.03);
        b.0[4] += rng_s.uniform(-0.03, 0.03);
        let (sa, ia) =
            match render_hand(&WristPose::from_pose6(&a), &env.object, &hand, &nominal, 1) {
                Ok(v) => v,
                Err(_) => continue,
            };
        let (_sb, ib) =
            match render_hand(&WristPose::from_pose6(&b), &env.object, &hand, &nominal, 2) {
                Ok(v) => v,
                Err(_) => continue,
            };
        let delta = Pose6::delta_from(&b, &a);
        let input = PolicyInput { current: ia, target: ib, joints: sa.joints };
        let pred = forward(&policy, &input).unwrap();
        println!(
            "  {:+.4} {:+.4} | {:+.4} {:+.4} | {:+.3} {:+.3}",
            delta[1], pred[1], delta[2], pred[2], delta[3], pred[3]
        );
    }

    // 2c. Per-dim final errors over 20 closed-loop trials.
    let mut rng_f = DetRng::new(555);
    let mut dims_acc = [0.0f64; 6];
    let mut n_acc = 0.0;
    for trial in 0..20u64 {
        let init = sample_contact_pose(&env, &mut rng_f).unwrap();
        let target = sample_contact_pose(&env, &mut rng_f).unwrap();
        let demo = demonstrate_target(
            &WristPose::from_pose6(&target),
            &env.object,
            &hand,
            &nominal,
            9,
        )
        .unwrap();
        let config = RefineConfig { seed: trial, ..Default::default() };
        let traj = refine_loop(
            &WristPose::from_pose6(&init),
            &demo,
            &policy,
            &env.object,
            &hand,
            &nominal,
            &config,
        )
        .unwrap();
        if let Some(last) = traj.steps.last() {
            let err = Pose6::delta_from(&target, &last.pose);
            for i in 0..6 {
                dims_acc[i] += err[i].abs();
            }
            n_acc += 1.0;
        }
    }
    println!(
        "closed-loop mean |final err| per dim: {:?}",
        dims_acc.iter().map(|v| v / n_acc).collect::<Vec<_>>()
    );

    // 3. Step-by-step trajectory printouts.
    let mut rng3 = DetRng::new(555);
    for trial in 0..3 {
        let init = sample_contact_pose(&env, &mut rng3).unwrap();
        let target = sample_contact_pose(&env, &mut rng3).unwrap();
        let demo =
            demonstrate_target(&WristPose::from_pose6(&target), &env.object, &hand, &nominal, 9)
                .unwrap();
        let config = RefineConfig { seed: trial as u64, ..Default::default() };
        let traj = refine_loop(
            &WristPose::from_pose6(&init),
            &demo,
            &policy,
            &env.object,
            &hand,
            &nominal,
            &config,
        )
        .unwrap();
        println!("--- trial {trial}: target {:?}", target.0);
        for s in &traj.steps {
            let true_delta = Pose6::delta_from(&target, &s.pose);
            println!(
                "  s{} pose[{:+.4} {:+.4} {:+.3} {:+.3}] dpos {:.4} drot {:.3} | pred[{:+.4} {:+.4} {:+.3} {:+.3}] true[{:+.4} {:+.4} {:+.3} {:+.3}]",
                s.step,
                s.pose.0[1], s.pose.0[2], s.pose.0[3], s.pose.0[4],
                s.delta_pos, s.delta_rot,
                s.predicted[1], s.predicted[2], s.predicted[3], s.predicted[4],
                true_delta[1], true_delta[2], true_delta[3], true_delta[4],
            );
        }
    }
}
