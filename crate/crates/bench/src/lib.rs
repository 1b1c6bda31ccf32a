//! Shared fixtures for the pipeline benchmarks.

use residual_flow::calibrate::{FeatureMatrix, FeatureRow};
use residual_flow::rng::SplitMix64;
use residual_flow::synth::SynthConfig;

/// Noisy regression instance sized like one backtest training slice.
pub fn bench_matrix(rows: usize, seed: u64) -> FeatureMatrix {
    let mut rng = SplitMix64::stream(seed, 64);
    let rows: Vec<FeatureRow> = (0..rows)
        .map(|i| {
            let v = 1_000.0 + 250.0 * rng.next_normal();
            let oi = 50_000.0 + 1_500.0 * rng.next_normal();
            let sigma = 0.2 + 0.02 * rng.next_normal();
            let delta_r = rng.next_normal();
            FeatureRow {
                bar_start_ns: i as i64 * 60_000_000_000,
                v,
                oi,
                sigma,
                delta_r,
                target: 0.0016 * delta_r + 0.004 * rng.next_normal(),
            }
        })
        .collect();
    FeatureMatrix::new(rows).expect("valid matrix")
}

/// Default generator config shrunk to a benchmark-friendly size.
pub fn bench_synth(n_bars: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_bars,
        seed,
        ..SynthConfig::default()
    }
}
