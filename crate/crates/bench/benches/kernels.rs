use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use etp_core::field::{crop, cross_correlate};
use etp_core::nn::{AdamConfig, GConvLayer, GConvSpec};
use etp_core::ravens::{episode, Task};
use etp_core::rng::CounterRng;
use etp_core::transporter::{place_forward, ModelConfig, Optimizers, PlaceHead, Transporter};
use etp_core::{FeatureField, FieldType, Kernel};
use std::hint::black_box;

fn noise(rng: &mut CounterRng, ftype: FieldType, size: usize) -> FeatureField<f32> {
    FeatureField::from_fn(ftype, size, size, |_, _, _| rng.symmetric(1.0) as f32)
}

fn correlation(c: &mut Criterion) {
    let mut rng = CounterRng::new(0, 1);
    let mut group = c.benchmark_group("cross_correlate");
    for (cin, r) in [(16, 3), (16, 25)] {
        let f = noise(&mut rng, FieldType::trivial(4, cin).unwrap(), 64);
        let k = Kernel::new(8, cin, r, (0..8 * cin * r * r).map(|_| rng.symmetric(1.0) as f32).collect()).unwrap();
        group.bench_function(BenchmarkId::new(format!("64x64 cin={cin}"), r), |b| {
            b.iter(|| cross_correlate(&k, black_box(&f), r / 2).unwrap())
        });
    }
    group.finish();
}

fn gconv(c: &mut Criterion) {
    let mut rng = CounterRng::new(0, 2);
    let mut group = c.benchmark_group("gconv_regular");
    for n in [4, 8] {
        let t = FieldType::regular(n, 2).unwrap();
        let layer = GConvLayer::<f32>::random(GConvSpec::new(n, t, t, 3), &mut rng).unwrap();
        let x = noise(&mut rng, t, 32);
        group.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| layer.forward(black_box(&x)).unwrap()));
    }
    group.finish();
}

fn place(c: &mut Criterion) {
    let demo = episode(Task::InsertL, 0).demo;
    let mut group = c.benchmark_group("place_forward");
    group.sample_size(10);
    for head in [PlaceHead::Equivariant, PlaceHead::Baseline] {
        let model = Transporter::<f32>::new(
            ModelConfig {
                place_head: head,
                ..ModelConfig::default()
            },
            0,
        )
        .unwrap();
        let at = (demo.pick.u as i64, demo.pick.v as i64);
        let crop = crop(&demo.observation, at, model.config.place_crop).unwrap();
        group.bench_function(format!("{head:?}"), |b| {
            b.iter(|| place_forward(head, &model.place_crop, &model.place_scene, &crop, &demo.observation, model.config.n).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let demo = episode(Task::InsertL, 0).demo;
    let mut group = c.benchmark_group("training_step");
    group.sample_size(10);
    for head in [PlaceHead::Equivariant, PlaceHead::Baseline] {
        let mut model = Transporter::<f32>::new(
            ModelConfig {
                place_head: head,
                ..ModelConfig::default()
            },
            0,
        )
        .unwrap();
        let mut opt = Optimizers::new(AdamConfig::default(), &model);
        group.bench_function(format!("{head:?}"), |b| b.iter(|| model.training_step(&mut opt, &demo).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, correlation, gconv, place, training_step);
criterion_main!(benches);
