//! Microbenchmarks for the hot paths: forward/backward passes, the wire
//! codec, parameter aggregation, and one full protocol round in-process.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isonet::data::{generate, AugmentPolicy, SyntheticConfig};
use isonet::isolation::{ConvergenceConfig, RunSeeds};
use isonet::nn::{
    forward_binary, gradient_binary, init_params, HeadKind, NetworkSpec, OptimizerKind,
};
use isonet::protocol::{
    aggregate, run_dison_inproc, AggregationWeights, MisclassMode, NodeConfig, RoundPlan,
};
use isonet::transport::{decode, encode, RoundMessage};

fn bench_spec() -> NetworkSpec {
    NetworkSpec {
        input_dim: 256,
        hidden_widths: vec![32],
        use_instance_norm: true,
        num_classes: 2,
        seed: 7,
    }
}

fn forward_backward(c: &mut Criterion) {
    let spec = bench_spec();
    let params = init_params(&spec, HeadKind::Binary).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f32> = (0..spec.input_dim).map(|_| rng.random::<f32>()).collect();
    let batch: Vec<Vec<f32>> = (0..16)
        .map(|_| (0..spec.input_dim).map(|_| rng.random::<f32>()).collect())
        .collect();
    let labeled: Vec<(&[f32], bool)> = batch.iter().map(|v| (v.as_slice(), false)).collect();

    c.bench_function("forward_binary_256x32", |b| {
        b.iter(|| forward_binary(&spec, &params, black_box(&x)).unwrap())
    });
    c.bench_function("gradient_binary_batch16", |b| {
        b.iter(|| gradient_binary(&spec, &params, black_box(&labeled)).unwrap())
    });
}

fn wire_codec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params: Vec<f32> = (0..10_000).map(|_| rng.random::<f32>()).collect();
    let msg = RoundMessage::LocalParams { round: 1, params };
    let bytes = encode(&msg);

    let mut group = c.benchmark_group("wire");
    group.throughput(Throughput::Bytes(bytes.len() as u64));
    group.bench_function("encode_10k_params", |b| b.iter(|| encode(black_box(&msg))));
    group.bench_function("decode_10k_params", |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let spec = bench_spec();
    let a = init_params(&spec, HeadKind::Binary).unwrap();
    let b_params = {
        let mut s = spec.clone();
        s.seed = 8;
        init_params(&s, HeadKind::Binary).unwrap()
    };
    let w = AggregationWeights::new(0.8).unwrap();
    c.bench_function("aggregate_weighted_sum", |b| {
        b.iter(|| aggregate(black_box(&a), black_box(&b_params), w).unwrap())
    });
}

fn protocol_round(c: &mut Criterion) {
    let data_cfg =
        SyntheticConfig { train_per_class: 50, id_test: 2, ood_test: 2, ..Default::default() };
    let (train, _, ood) = generate(&data_cfg).unwrap();
    let spec = NetworkSpec {
        input_dim: train.input_dim(),
        hidden_widths: vec![32],
        use_instance_norm: true,
        num_classes: 2,
        seed: 7,
    };
    let pretrained = init_params(&spec, HeadKind::Multiclass).unwrap();
    let cfg = NodeConfig {
        spec,
        plan: RoundPlan {
            local_steps: 10,
            max_rounds: 5,
            weights: AggregationWeights::new(0.8).unwrap(),
            class_conditional: false,
            misclass_mode: MisclassMode::None,
        },
        conv: ConvergenceConfig {
            e_stab: 5,
            tau: 1.0, // unreachable: always runs the full 5 rounds
            max_rounds: 5,
            source_eval_subsample: Some(64),
        },
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.02,
        batch_size: 16,
        augment: AugmentPolicy::disabled(),
        seeds: RunSeeds::derive(0, 0),
        record_params: false,
        scramble_class: false,
    };
    let x_t = ood.samples[0].pixels.clone();
    c.bench_function("protocol_5_rounds_inproc", |b| {
        b.iter_batched(
            || (),
            |_| run_dison_inproc(&cfg, &pretrained, &train, &x_t).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, forward_backward, wire_codec, aggregation, protocol_round);
criterion_main!(benches);
