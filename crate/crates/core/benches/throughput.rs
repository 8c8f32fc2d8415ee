//! Throughput of the data-parallel stages, all cores vs one worker.
//!
//! Build with `--no-default-features` to measure the pure sequential
//! fallback (the `threads=1` rows then match the `all` rows).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use turbseg::cues::{CueContext, CueSources};
use turbseg::fusion::{self, FusionConfig};
use turbseg::motion::{self, FlowConfig};
use turbseg::par;
use turbseg::proposal::{self, Connectivity};
use turbseg::synth::{self, SynthConfig};
use turbseg::vibe::{self, VibeParams};

const MODES: [(&str, usize); 2] = [("all", 0), ("threads=1", 1)];

fn bench_stages(c: &mut Criterion) {
    let seq = synth::generate(&SynthConfig { width: 256, height: 192, frames: 24, ..Default::default() });
    let frames = &seq.frames;
    let flow_cfg = FlowConfig::default();
    let ctx = CueContext::new(
        frames,
        &CueSources::default(),
        flow_cfg,
        Default::default(),
        Default::default(),
        Default::default(),
    )
    .unwrap();
    let bundles = turbseg::cues::assemble_all(&CueSources::default(), &ctx).unwrap();
    let fusion_cfg = FusionConfig::default();
    let masks: Vec<_> = bundles.iter().map(|b| fusion::binarize(&fusion::score(b, &fusion_cfg), 0.2)).collect();

    let mut g = c.benchmark_group("stages");
    g.sample_size(10);
    for (mode, threads) in MODES {
        g.bench_function(BenchmarkId::new("flow_pair", mode), |b| {
            b.iter(|| par::with_threads(threads, || motion::estimate_flow(&frames[0], &frames[1], &flow_cfg).unwrap()))
        });
        g.bench_function(BenchmarkId::new("vibe_sequence", mode), |b| {
            b.iter(|| par::with_threads(threads, || vibe::run_sequence(frames, VibeParams::default()).unwrap()))
        });
        g.bench_function(BenchmarkId::new("fusion_all_frames", mode), |b| {
            b.iter(|| par::with_threads(threads, || par::map_slice(&bundles, |bd| fusion::score(bd, &fusion_cfg))))
        });
        g.bench_function(BenchmarkId::new("components_all_frames", mode), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    par::map_slice(&masks, |m| proposal::connected_components(m, Connectivity::Eight))
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_stages);
criterion_main!(benches);
