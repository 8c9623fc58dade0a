//! With one local step, plain SGD, and alpha = |B_s| / (|B_s| + N), the
//! aggregated two-node update is algebraically identical to the centralized
//! oversampled update. Both paths share the seeded batch/augmentation streams
//! here, so their parameter trajectories must agree to float accumulation
//! error.

use isonet::data::{generate, ApplyOn, AugmentPolicy, SyntheticConfig};
use isonet::isolation::{run_centralized, CentralizedConfig, ConvergenceConfig, RunSeeds};
use isonet::nn::{init_params, HeadKind, NetworkSpec, OptimizerKind};
use isonet::protocol::{
    run_dison_inproc, AggregationWeights, MisclassMode, NodeConfig, RoundPlan,
};

const ROUNDS: usize = 20;
const BATCH: usize = 16;
const REPLICATION: usize = 4;
const TOL: f32 = 1e-5;

fn setup() -> (NetworkSpec, isonet::ParameterVector, isonet::data::Dataset) {
    let data_cfg = SyntheticConfig { train_per_class: 32, id_test: 4, ood_test: 4, ..Default::default() };
    let (train, _, _) = generate(&data_cfg).unwrap();
    let spec = NetworkSpec {
        input_dim: train.input_dim(),
        hidden_widths: vec![12],
        use_instance_norm: true,
        num_classes: 2,
        seed: 17,
    };
    let pretrained = init_params(&spec, HeadKind::Multiclass).unwrap();
    (spec, pretrained, train)
}

fn compare_trajectories(augment: AugmentPolicy, seeds: RunSeeds) {
    let (spec, pretrained, train) = setup();
    let alpha = BATCH as f32 / (BATCH + REPLICATION) as f32;
    assert!((alpha - 0.8).abs() < 1e-7);

    // force the full 20 rounds: the stability window cannot fill earlier
    let conv = ConvergenceConfig {
        e_stab: ROUNDS,
        tau: 1.0,
        max_rounds: ROUNDS,
        source_eval_subsample: None,
    };

    let central_cfg = CentralizedConfig {
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.05,
        batch_size: BATCH,
        replication: REPLICATION,
        augment: augment.clone(),
        record_params: true,
    };
    let x_t = train.samples[5].pixels.clone();
    let central =
        run_centralized(&spec, &pretrained, &train, &x_t, &conv, &central_cfg, seeds).unwrap();

    let node_cfg = NodeConfig {
        spec: spec.clone(),
        plan: RoundPlan {
            local_steps: 1,
            max_rounds: ROUNDS,
            weights: AggregationWeights::new(alpha).unwrap(),
            class_conditional: false,
            misclass_mode: MisclassMode::None,
        },
        conv,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.05,
        batch_size: BATCH,
        augment,
        seeds,
        record_params: true,
        scramble_class: false,
    };
    let decentralized = run_dison_inproc(&node_cfg, &pretrained, &train, &x_t).unwrap();

    assert_eq!(central.rounds.len(), ROUNDS);
    assert_eq!(decentralized.rounds.len(), ROUNDS);
    for (c, d) in central.rounds.iter().zip(&decentralized.rounds) {
        let cp = c.global_params.as_ref().unwrap();
        let dp = d.global_params.as_ref().unwrap();
        assert_eq!(cp.len(), dp.len());
        let max_abs = cp
            .iter()
            .zip(dp)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(
            max_abs <= TOL,
            "round {}: max-abs parameter gap {max_abs:.3e} exceeds {TOL:.0e}",
            c.round
        );
    }
    assert_eq!(central.score, decentralized.score);
}

#[test]
fn trajectories_agree_without_augmentation() {
    compare_trajectories(AugmentPolicy::disabled(), RunSeeds { head: 1, source: 2, target: 3 });
}

#[test]
fn trajectories_agree_with_augmentation_on_both_nodes() {
    let augment = AugmentPolicy { enabled: true, apply_on: ApplyOn::Both, ..Default::default() };
    compare_trajectories(augment, RunSeeds { head: 4, source: 5, target: 6 });
}

#[test]
fn trajectories_agree_across_multiple_seeds() {
    for base in [10u64, 20, 30] {
        compare_trajectories(
            AugmentPolicy::disabled(),
            RunSeeds { head: base, source: base + 1, target: base + 2 },
        );
    }
}
