use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpvqa::fixtures::{
    block_atlas, random_blob, sphere_voxels, study_from_synthetic, stub_descriptors, synthetic_label_names,
    synthetic_studies, STUDY_DIMS,
};
use mpvqa::moe::{model_loss, moe_forward, Model, ModalityTokens, MoeConfig, MoeParams, Sample, TaskTargets};
use mpvqa::morphology::connected_components;
use mpvqa::qagen::{compute_descriptors, generate_records, LabelConfig, TemplateBank};
use mpvqa::shape::{marching_cubes, metrics_from_voxels};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prompt(d_t: usize, rng: &mut impl Rng) -> Array1<f64> {
    (0..d_t).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn geometry(c: &mut Criterion) {
    let sphere = sphere_voxels([16, 16, 16], 14.0);
    c.bench_function("marching_cubes/sphere_r14", |b| {
        b.iter(|| marching_cubes(black_box(&sphere), [1.0; 3]).unwrap())
    });
    c.bench_function("shape_metrics/sphere_r14", |b| {
        b.iter(|| metrics_from_voxels(black_box(&sphere), [1.0; 3]).unwrap())
    });
    let mut group = c.benchmark_group("connected_components");
    for side in [16usize, 32, 64] {
        let blob = random_blob(7, side, side * side * side / 6);
        group.bench_with_input(BenchmarkId::from_parameter(side), &blob, |b, m| b.iter(|| connected_components(m)));
    }
    group.finish();
}

fn dataset(c: &mut Criterion) {
    let names = synthetic_label_names();
    let config = LabelConfig::new(names.clone().into_iter().collect());
    let atlas = block_atlas(STUDY_DIMS, [1.0; 3]);
    let study = study_from_synthetic(&synthetic_studies(1, 3)[0], &names);
    c.bench_function("describe/synthetic_study", |b| {
        b.iter(|| compute_descriptors(black_box(&study), &atlas, &config).unwrap())
    });

    let bank = TemplateBank::canonical();
    let descriptors = stub_descriptors(100, &["ET", "NETC", "SNFH", "RC"], 1);
    c.bench_function("generate/400_labels", |b| {
        b.iter(|| generate_records(black_box(&descriptors), &bank, 9, None).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut group = c.benchmark_group("moe_forward");
    for n in [4usize, 16] {
        let cfg = MoeConfig {
            n_experts: n,
            ..MoeConfig::default()
        };
        let params = MoeParams::init(&cfg, &mut rng).unwrap();
        let tokens = ModalityTokens::random(8, cfg.n_modalities, cfg.d_i, &mut rng);
        let t = prompt(cfg.d_t, &mut rng);
        group.bench_with_input(BenchmarkId::new("experts", n), &n, |b, _| {
            b.iter(|| moe_forward(black_box(&tokens), &t, &params).unwrap())
        });
    }
    group.finish();

    let cfg = MoeConfig::default();
    let model = Model::init(&cfg, 8, &mut rng).unwrap();
    let sample = Sample {
        tokens: ModalityTokens::random(2, cfg.n_modalities, cfg.d_i, &mut rng),
        prompt: prompt(cfg.d_t, &mut rng),
        targets: TaskTargets {
            next_token: Some(1),
            volume: Some(0),
            region: None,
            shape: Some(2),
            spread: Some(1),
            oos: Some(0),
        },
    };
    c.bench_function("model_loss/default", |b| b.iter(|| model_loss(black_box(&model), &sample).unwrap()));
}

criterion_group!(benches, geometry, dataset, fusion);
criterion_main!(benches);
