//! Randomized property tests for the numerical core.

use proptest::prelude::*;

use residual_flow::calibrate::{fit_ols, predict, FeatureMatrix, FeatureRow, FeatureVector};
use residual_flow::impliedvol::{
    bs_price, implied_vol, ImpliedVolRequest, OptionRight, PricingInputs,
};
use residual_flow::marketdata::parse::{parse_trades, write_trades_csv};
use residual_flow::marketdata::TradeTick;

proptest! {
    /// Round trip σ → price → σ̂ across the supported domain.
    #[test]
    fn implied_vol_round_trips(
        vol in 0.05f64..1.0,
        moneyness in 0.8f64..1.25,
        t in 0.05f64..2.0,
        rate in -0.01f64..0.05,
    ) {
        let spot = 100.0 * moneyness;
        let strike = 100.0;
        let right = if spot <= strike { OptionRight::Call } else { OptionRight::Put };
        let price = bs_price(&PricingInputs {
            spot, strike, rate, time_to_expiry: t, vol, right,
        }).unwrap();
        let recovered = implied_vol(&ImpliedVolRequest {
            observed_price: price, spot, strike, rate, time_to_expiry: t, right,
        }).unwrap();
        prop_assert!((recovered - vol).abs() <= 1e-6, "recovered {recovered} for {vol}");
    }

    /// Price is non-decreasing in volatility.
    #[test]
    fn bs_price_monotone_in_vol(
        vol in 0.05f64..0.95,
        moneyness in 0.85f64..1.2,
        t in 0.1f64..2.0,
    ) {
        let inputs = |v: f64| PricingInputs {
            spot: 100.0 * moneyness,
            strike: 100.0,
            rate: 0.01,
            time_to_expiry: t,
            vol: v,
            right: OptionRight::Call,
        };
        let low = bs_price(&inputs(vol)).unwrap();
        let high = bs_price(&inputs(vol + 0.05)).unwrap();
        prop_assert!(high >= low - 1e-12);
    }

    /// predict(a) + predict(b) − predict(origin) = predict(a + b − origin)
    /// where origin is the scaler means with ΔR = 0.
    #[test]
    fn prediction_is_affine(
        seed in 0u64..1000,
        av in 500f64..1500.0, aoi in 40_000f64..60_000.0, as_ in 0.1f64..0.4, adr in -3f64..3.0,
        bv in 500f64..1500.0, boi in 40_000f64..60_000.0, bs_ in 0.1f64..0.4, bdr in -3f64..3.0,
    ) {
        let x = noisy_matrix(seed);
        let model = fit_ols(&x, 0..x.len(), &[]).unwrap();
        let a = FeatureVector { v: av, oi: aoi, sigma: as_, delta_r: adr };
        let b = FeatureVector { v: bv, oi: boi, sigma: bs_, delta_r: bdr };
        let origin = FeatureVector {
            v: model.scaler.means[0],
            oi: model.scaler.means[1],
            sigma: model.scaler.means[2],
            delta_r: 0.0,
        };
        let combined = FeatureVector {
            v: a.v + b.v - origin.v,
            oi: a.oi + b.oi - origin.oi,
            sigma: a.sigma + b.sigma - origin.sigma,
            delta_r: a.delta_r + b.delta_r - origin.delta_r,
        };
        let lhs = predict(&model, &a) + predict(&model, &b) - predict(&model, &origin);
        let rhs = predict(&model, &combined);
        prop_assert!((lhs - rhs).abs() <= 1e-10, "affinity violated: {lhs} vs {rhs}");
    }

    /// CSV writer and parser are inverse on valid trades.
    #[test]
    fn trade_csv_round_trips(
        ts in 0i64..i64::MAX / 2,
        price in 0.0001f64..1e6,
        size in 1u64..1_000_000,
        venue in proptest::option::of("[A-Z]{1,6}"),
    ) {
        let trade = TradeTick {
            ts_ns: ts,
            instrument_id: "OPT".into(),
            price,
            size,
            venue,
        };
        let mut buf = Vec::new();
        write_trades_csv(&mut buf, std::slice::from_ref(&trade)).unwrap();
        let report = parse_trades(std::io::Cursor::new(buf)).unwrap();
        prop_assert!(report.issues.is_empty());
        prop_assert_eq!(report.records, vec![trade]);
    }
}

/// Small deterministic matrix with mild noise for the affine property.
fn noisy_matrix(seed: u64) -> FeatureMatrix {
    use residual_flow::rng::SplitMix64;
    let mut rng = SplitMix64::stream(seed, 31);
    let rows: Vec<FeatureRow> = (0..80)
        .map(|i| {
            let v = 1000.0 + 200.0 * rng.next_normal();
            let oi = 50_000.0 + 1_000.0 * rng.next_normal();
            let sigma = 0.2 + 0.02 * rng.next_normal();
            let delta_r = rng.next_normal();
            FeatureRow {
                bar_start_ns: i,
                v,
                oi,
                sigma,
                delta_r,
                target: 0.001 * v / 1000.0 - 0.002 * sigma + 0.0005 * delta_r
                    + 0.0001 * rng.next_normal(),
            }
        })
        .collect();
    FeatureMatrix::new(rows).unwrap()
}
