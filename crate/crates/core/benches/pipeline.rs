//! Hot kernels of the pipeline. Run once per build mode and compare with
//! criterion baselines:
//!
//! ```text
//! cargo bench -p strokeid --no-default-features -- --save-baseline sequential
//! cargo bench -p strokeid -- --baseline sequential
//! ```

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use strokeid::framing::{fit_normalizer, frame_strokes, FramingConfig};
use strokeid::fusion::{Trial, TrialSet};
use strokeid::ingest::{filter_and_classify, segment_strokes, UserIndex};
use strokeid::linalg::affine;
use strokeid::metrics::det_curve;
use strokeid::net::{init_model, DEFAULT_HIDDEN};
use strokeid::par;
use strokeid::synthgen::{generate, SynthSpec};

const BATCH: usize = 128;

fn kernels(c: &mut Criterion) {
    eprintln!("build mode: {}", if par::is_parallel() { "parallel" } else { "sequential" });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let framing = FramingConfig::default();
    let input = framing.input_dim();
    let x: Vec<f64> = (0..BATCH * input).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let w: Vec<f64> = (0..512 * input).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let b = vec![0.0; 512];
    c.bench_function("affine 128x35 -> 512", |bench| {
        bench.iter(|| affine(black_box(&x), input, &w, &b))
    });

    let model = init_model(input, &DEFAULT_HIDDEN, 10, 0).unwrap();
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 10).collect();
    let weights = vec![1.0; 10];
    c.bench_function("loss_and_grad batch 128", |bench| {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        bench.iter(|| model.loss_and_grad(black_box(&x), &labels, &weights, &mut r).unwrap())
    });

    let records = generate(&SynthSpec::default()).unwrap();
    let strokes = filter_and_classify(segment_strokes(&records).strokes);
    let users = UserIndex::from_strokes(&strokes);
    let stats = fit_normalizer(&strokes, &framing).unwrap();
    c.bench_function("frame_strokes 10 users x 200", |bench| {
        bench.iter(|| frame_strokes(black_box(&strokes), &users, &framing, &stats).unwrap())
    });

    let trials = TrialSet {
        trials: (0..20_000)
            .map(|i| Trial {
                claimed_user: i % 10,
                score: rng.gen(),
                genuine: i % 10 == 0,
            })
            .collect(),
        n_strokes: 1,
    };
    c.bench_function("det_curve 20k trials", |bench| {
        bench.iter(|| det_curve(black_box(&trials)).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
