//! Sequential vs rayon execution of the clip-parallel stages.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use macaron_sed::cnmf::{extract_event_dictionary, CnmfConfig, FrameMask};
use macaron_sed::data::{toy_clip, ClassMap, ToySpec};
use macaron_sed::frontend::{compute_mel, FrontendConfig, MelSpectrogram};
use macaron_sed::losses::Phase;
use macaron_sed::model::{init_params, ModelConfig, Variant};
use macaron_sed::parallel::{self, Execution};
use macaron_sed::train::{
    compose_epoch, schedule_at, train_step, LabeledClip, Models, Optimizers, TrainConfig, TrainSet,
};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn mel_extraction(c: &mut Criterion) {
    let spec = ToySpec::default();
    let waves: Vec<_> = (0..4)
        .map(|i| toy_clip(&spec, "strong", i).unwrap().0)
        .collect();
    let cfg = FrontendConfig::default();
    let mut g = c.benchmark_group("mel_4_clips");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| parallel::try_map(exec, &waves, |w| compute_mel(w, &cfg)).unwrap())
        });
    }
    g.finish();
}

fn dictionary_extraction(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clips: Vec<(MelSpectrogram, FrameMask)> = (0..4)
        .map(|_| {
            let values = Array2::from_shape_fn((128, 32), |_| rng.random_range(0.0..1.0));
            (
                MelSpectrogram {
                    values,
                    is_log: false,
                },
                FrameMask::span(128, 16, 112),
            )
        })
        .collect();
    let cfg = CnmfConfig {
        iterations: 30,
        ..CnmfConfig::default()
    };
    let mut g = c.benchmark_group("cnmf_dictionary_4_clips");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| extract_event_dictionary("x", black_box(&clips), &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let flm_cfg = ModelConfig {
        variant: Variant::Flm,
        n_frames: 64,
        n_mels: 16,
        filters: vec![8, 8],
        pools: vec![(1, 4), (1, 4)],
        layers: 1,
        heads: 2,
        n_classes: 3,
        positional_encoding: true,
        half_step: 0.5,
    };
    let clm_cfg = ModelConfig {
        variant: Variant::Clm,
        filters: vec![8, 8, 16],
        pools: vec![(2, 4), (2, 4), (2, 1)],
        ..flm_cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clip = |i: usize| {
        let x = Array2::from_shape_fn((64, 16), |_| rng.random_range(-1.0..1.0));
        let mut y = Array2::zeros((64, 3));
        y.slice_mut(ndarray::s![10..40, i % 3]).fill(1.0);
        LabeledClip::from_frames(format!("c{i}"), x, y)
    };
    let synthetic = (0..8).map(&mut clip).collect();
    let pseudo = (8..16).map(&mut clip).collect();
    let unlabeled = (16..24).map(|i| clip(i).features).collect();
    let data = TrainSet {
        classes: ClassMap::new(vec!["a".into(), "b".into(), "c".into()]).unwrap(),
        synthetic,
        pseudo,
        unlabeled,
        validation: Vec::new(),
    };
    let cfg = TrainConfig::default();
    let batch = compose_epoch(&data.pools(), Phase::Tuning, 16, 0, 0)
        .unwrap()
        .remove(0);
    let sched = schedule_at(&cfg, Phase::Tuning, 0, 100, 0);
    let models = Models {
        flm: init_params(&flm_cfg, 1).unwrap(),
        clm: init_params(&clm_cfg, 2).unwrap(),
    };
    let mut g = c.benchmark_group("train_step_batch_16");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || (models.clone(), Optimizers::new(&models)),
                |(mut m, mut o)| {
                    train_step(&cfg, &data, &batch, &mut m, &mut o, &sched, exec).unwrap()
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    mel_extraction,
    dictionary_extraction,
    training_step
);
criterion_main!(benches);
