// Capacity / data-balance probe: custom training loops against the datasets
// saved by the scratch experiment. Not part of the final suite.

use tacrefine_core::dataset::{augment, draw_pair, AugmentationConfig, Dataset, PairedExample};
use tacrefine_core::eval::{sample_contact_pose, EvalEnv};
use tacrefine_core::net::{
    backward, forward, init_params_with, optimizer_step, AdamHyper, AdamState, ArchMeta,
    PolicyInput, PolicyParams,
};
use tacrefine_core::rng::DetRng;
use tacrefine_core::tacsim::{render_hand, HandConfig, SensorParams, WristPose};

fn pair_ex(p: &PairedExample) -> (PolicyInput, [f64; 6]) {
    (
        PolicyInput {
            current: p.current.images.clone(),
            target: p.target.images.clone(),
            joints: p.current.joints,
        },
        p.delta,
    )
}

fn train_custom(
    sim: &Dataset,
    meta: ArchMeta,
    steps: u64,
    local_frac: f64,
    seed: u64,
) -> PolicyParams {
    let mut params = init_params_with(meta, seed);
    let mut opt = AdamState::new(params.num_params());
    let mut rng = DetRng::new(seed ^ 0x77);
    let aug = AugmentationConfig::default();
    let n = sim.records.len();
    // Cheap neighbor table over the (y, z, roll, pitch) lattice via record_id.
    let dims = [
        sim.bounds.pitch.steps as u64,
        sim.bounds.roll.steps as u64,
        sim.bounds.y.steps as u64,
        sim.bounds.z.steps as u64,
    ];
    let by_id: std::collections::HashMap<u64, usize> =
        sim.records.iter().enumerate().map(|(i, r)| (r.record_id, i)).collect();
    for step in 0..steps {
        let mut batch = Vec::with_capacity(64);
        for _ in 0..64 {
            let pair = if rng.next_f64() < local_frac {
                let b = rng.below(n);
                let id = sim.records[b].record_id;
                let iz = id % dims[3];
                let iy = (id / dims[3]) % dims[2];
                let ir = (id / (dims[3] * dims[2])) % dims[1];
                let ip = id / (dims[3] * dims[2] * dims[1]);
                let mut c = [ip as i64, ir as i64, iy as i64, iz as i64];
                for (d, v) in c.iter_mut().enumerate() {
                    *v = (*v + rng.below(5) as i64 - 2).clamp(0, dims[d] as i64 - 1);
                }
                let nid = ((c[0] as u64 * dims[1] + c[1] as u64) * dims[2] + c[2] as u64)
                    * dims[3]
                    + c[3] as u64;
                match by_id.get(&nid) {
                    Some(&t) => {
                        PairedExample::new(sim.records[b].clone(), sim.records[t].clone())
                    }
                    None => draw_pair(&sim.records, &mut rng),
                }
            } else {
                draw_pair(&sim.records, &mut rng)
            };
            let pair = augment(&pair, &aug, rng.next_u64());
            batch.push(pair_ex(&pair));
        }
        let (_, grads) = backward(&params, &batch).unwrap();
        let frac = step as f64 / steps as f64;
        let lr = 1e-3 * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac).cos()));
        optimizer_step(&mut params, &grads, &mut opt, &AdamHyper::with_lr(lr));
    }
    params
}

fn self_pair_drift(policy: &PolicyParams) -> f64 {
    let nominal = SensorParams::nominal();
    let hand = HandConfig::default();
    let env = EvalEnv::new(nominal.clone());
    let mut rng = DetRng::new(77);
    let mut acc = 0.0;
    let mut n = 0;
    for _ in 0..40 {
        let p = sample_contact_pose(&env, &mut rng).unwrap();
        if let Ok((s, i)) = render_hand(&WristPose::from_pose6(&p), &env.object, &hand, &nominal, 4)
        {
            let input = PolicyInput { current: i.clone(), target: i, joints: s.joints };
            let pred = forward(policy, &input).unwrap();
            acc += (pred[1] * pred[1] + pred[2] * pred[2]).sqrt();
            n += 1;
        }
    }
    acc / n as f64
}

#[test]
#[ignore]
fn capacity_and_balance_probe() {
    let sim = Dataset::load(std::path::Path::new("/tmp/scratch_sim.tacd")).unwrap();
    println!("dataset: {} records", sim.records.len());

    let narrow = ArchMeta::default();
    let wide = ArchMeta {
        enc_hidden: 128,
        feature_dim: 48,
        fusion_dim: 192,
        head_hidden: [96, 48],
        ..Default::default()
    };

    let p1 = train_custom(&sim, narrow, 12_000, 0.5, 1);
    println!("standard width, local 0.5, 12k steps: drift {:.4}", self_pair_drift(&p1));

    let p2 = train_custom(&sim, narrow, 12_000, 0.95, 2);
    println!("standard width, local 0.95, 12k steps: drift {:.4}", self_pair_drift(&p2));

    let p3 = train_custom(&sim, wide, 12_000, 0.5, 3);
    println!("wide net, local 0.5, 12k steps: drift {:.4}", self_pair_drift(&p3));
}
