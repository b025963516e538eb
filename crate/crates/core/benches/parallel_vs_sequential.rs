use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use editrefiner_core::backends::mock::{MockConfig, MockProvider};
use editrefiner_core::batch::run_batch;
use editrefiner_core::gt::{build_gt_map_with, GtBuildConfig};
use editrefiner_core::metrics::{evaluate_corpus, FixationSet, SaliencyCase};
use editrefiner_core::refine::{LoopConfig, SessionInput};
use editrefiner_core::{Disk, Exec, ImageRef, SaliencyMap};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn gt_build(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (512, 512);
    let disks: Vec<Disk> = (0..12)
        .map(|_| Disk::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), 26.0))
        .collect();
    let cfg = GtBuildConfig::default();
    let mut g = c.benchmark_group("gt_build_512");
    for (name, exec) in STRATEGIES {
        g.bench_function(name, |b| {
            b.iter(|| build_gt_map_with(black_box(&disks), w, h, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn corpus_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = |rng: &mut ChaCha8Rng| {
        let values = (0..128 * 128).map(|_| rng.random::<f64>()).collect();
        SaliencyMap::new(128, 128, values).unwrap()
    };
    let cases: Vec<SaliencyCase> = (0..64)
        .map(|i| SaliencyCase {
            id: format!("img{i}"),
            pred: map(&mut rng),
            gt: map(&mut rng),
            fixations: FixationSet::new((0..8).map(|_| (rng.random_range(0..128), rng.random_range(0..128))).collect()),
        })
        .collect();
    let mut g = c.benchmark_group("evaluate_corpus_64x128px");
    for (name, exec) in STRATEGIES {
        g.bench_function(name, |b| b.iter(|| evaluate_corpus(black_box(&cases), exec)));
    }
    g.finish();
}

fn batch_sessions(c: &mut Criterion) {
    let inputs: Vec<SessionInput> = (0..16)
        .map(|i| {
            let img = |v: u8| RgbImage::from_fn(96, 96, move |x, y| Rgb([v, (x + y) as u8, (i * 9) as u8]));
            SessionInput {
                session_id: format!("s{i:02}"),
                source: ImageRef::from_rgb(format!("src{i}"), &img(30)),
                edited: ImageRef::from_rgb(format!("edit{i}"), &img(140)),
                instruction: "add a red scarf".into(),
            }
        })
        .collect();
    let mut mc = MockConfig::with_seed(3);
    mc.default_schedule = Some(
        [50.0, 55.0, 60.0, 65.0, 70.0]
            .iter()
            .map(|&s| editrefiner_core::objectives::DimensionScores::uniform(s))
            .collect(),
    );
    let provider = MockProvider::new(mc);
    let cfg = LoopConfig::default();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let mut g = c.benchmark_group("batch_16_sessions");
    g.sample_size(10);
    for (name, p) in [("sequential", 1), ("parallel", threads)] {
        g.bench_with_input(BenchmarkId::new(name, p), &p, |b, &p| {
            b.iter(|| run_batch(black_box(&inputs), &provider, &cfg, p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, gt_build, corpus_metrics, batch_sessions);
criterion_main!(benches);
