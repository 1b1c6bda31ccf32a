//! Model calibration: aligned feature matrix, standardization, OLS / Ridge /
//! Lasso fits, walk-forward penalty selection and point prediction.
//!
//! The model is linear in four per-bar inputs — volume, open interest,
//! implied vol and the residual z-score ΔR — against the next bar's option
//! return. Volume, open interest and implied vol are level quantities and are
//! standardized against training-slice statistics so their coefficients are
//! comparable and penalties act uniformly; ΔR is already a z-score by
//! construction and enters raw, which keeps its fitted coefficient directly
//! comparable to a planted signal strength.


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::marketdata::MarketBar;
use crate::residual::ResidualPoint;

/// Fixed feature column order.
pub const COLUMN_ORDER: [&str; 4] = ["v", "oi", "sigma", "delta_r"];

const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 10_000;
/// Minimum training rows per design column.
const ROWS_PER_COLUMN: usize = 5;
/// Relative std below which a column counts as constant and is excluded.
const VARIANCE_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("no feature row qualifies (need residual, implied vol and a successor bar)")]
    EmptyMatrix,
    #[error("{rows} training rows, need at least {need}")]
    TooFewRows { rows: usize, need: usize },
    #[error("standardized design is rank deficient; consider ridge")]
    RankDeficient,
    #[error("lasso did not converge after {sweeps} sweeps (max coefficient change {last_change:e})")]
    NoConvergence {
        sweeps: usize,
        last_change: f64,
        last_coefficients: Vec<f64>,
    },
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    V,
    Oi,
    Sigma,
    DeltaR,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::V, Feature::Oi, Feature::Sigma, Feature::DeltaR];

    pub fn index(self) -> usize {
        match self {
            Feature::V => 0,
            Feature::Oi => 1,
            Feature::Sigma => 2,
            Feature::DeltaR => 3,
        }
    }

    pub fn name(self) -> &'static str {
        COLUMN_ORDER[self.index()]
    }
}

impl std::str::FromStr for Feature {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "v" => Ok(Feature::V),
            "oi" => Ok(Feature::Oi),
            "sigma" => Ok(Feature::Sigma),
            "delta_r" => Ok(Feature::DeltaR),
            other => Err(format!(
                "unknown feature {other:?}, expected one of {COLUMN_ORDER:?}"
            )),
        }
    }
}

/// Which per-bar volume feeds the model's V_t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeSource {
    Option,
    Underlying,
}

impl std::str::FromStr for VolumeSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "option" => Ok(VolumeSource::Option),
            "underlying" => Ok(VolumeSource::Underlying),
            other => Err(format!("unknown volume source {other:?}")),
        }
    }
}

/// Definition of the prediction target P_{t+1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// ln(option_mid_{t+1} / option_mid_t) — the default.
    LogReturn,
    /// option_mid_{t+1} − option_mid_t.
    PriceChange,
}

impl std::str::FromStr for TargetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log_return" => Ok(TargetKind::LogReturn),
            "price_change" => Ok(TargetKind::PriceChange),
            other => Err(format!("unknown target kind {other:?}")),
        }
    }
}

/// Feature values without a target, as fed to [`predict`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub v: f64,
    pub oi: f64,
    pub sigma: f64,
    pub delta_r: f64,
}

impl FeatureVector {
    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::V => self.v,
            Feature::Oi => self.oi,
            Feature::Sigma => self.sigma,
            Feature::DeltaR => self.delta_r,
        }
    }
}

/// One aligned regression row: features from bar t, target from bar t+1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub bar_start_ns: i64,
    pub v: f64,
    pub oi: f64,
    pub sigma: f64,
    pub delta_r: f64,
    pub target: f64,
}

impl FeatureRow {
    pub fn vector(&self) -> FeatureVector {
        FeatureVector {
            v: self.v,
            oi: self.oi,
            sigma: self.sigma,
            delta_r: self.delta_r,
        }
    }
}

/// Ordered, validated collection of feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<FeatureRow>) -> Result<Self, CalibrateError> {
        if rows.is_empty() {
            return Err(CalibrateError::EmptyMatrix);
        }
        for pair in rows.windows(2) {
            if pair[1].bar_start_ns <= pair[0].bar_start_ns {
                return Err(CalibrateError::InvalidMatrix(format!(
                    "rows not strictly increasing at {}",
                    pair[1].bar_start_ns
                )));
            }
        }
        for r in &rows {
            let values = [r.v, r.oi, r.sigma, r.delta_r, r.target];
            if values.iter().any(|x| !x.is_finite()) {
                return Err(CalibrateError::InvalidMatrix(format!(
                    "non-finite value in row at {}",
                    r.bar_start_ns
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Canonical CSV form; the backtest input digest hashes these bytes.
    pub fn canonical_csv(&self) -> String {
        let mut out = String::from("bar_start_ns,v,oi,sigma,delta_r,target\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.bar_start_ns, r.v, r.oi, r.sigma, r.delta_r, r.target
            ));
        }
        out
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        w.write_all(self.canonical_csv().as_bytes())
    }
}

/// Builds the aligned feature matrix from bars and their residual series.
///
/// A row is emitted for every bar that has a residual point, a present
/// implied vol and a successor bar in the series; the target comes from the
/// successor.
pub fn build_features(
    bars: &[MarketBar],
    residuals: &[ResidualPoint],
    volume_source: VolumeSource,
    target_kind: TargetKind,
) -> Result<FeatureMatrix, CalibrateError> {
    let by_ns: std::collections::HashMap<i64, &ResidualPoint> =
        residuals.iter().map(|p| (p.bar_start_ns, p)).collect();

    let mut rows = Vec::new();
    for t in 0..bars.len().saturating_sub(1) {
        let bar = &bars[t];
        let next = &bars[t + 1];
        let (Some(point), Some(sigma)) = (by_ns.get(&bar.bar_start_ns), bar.implied_vol) else {
            continue;
        };
        let target = match target_kind {
            TargetKind::LogReturn => (next.option_mid / bar.option_mid).ln(),
            TargetKind::PriceChange => next.option_mid - bar.option_mid,
        };
        let v = match volume_source {
            VolumeSource::Option => bar.option_volume as f64,
            VolumeSource::Underlying => bar.underlying_volume as f64,
        };
        let row = FeatureRow {
            bar_start_ns: bar.bar_start_ns,
            v,
            oi: bar.open_interest as f64,
            sigma,
            delta_r: point.delta_r,
            target,
        };
        if [row.v, row.oi, row.sigma, row.delta_r, row.target]
            .iter()
            .all(|x| x.is_finite())
        {
            rows.push(row);
        }
    }
    FeatureMatrix::new(rows)
}

/// Per-column standardization frozen from a training slice.
///
/// `delta_r` is already a z-score and keeps an identity entry (mean 0,
/// std 1). Columns with no variation over the slice are recorded in
/// `excluded` and standardize to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub excluded: Vec<usize>,
}

impl Scaler {
    fn fit(rows: &[FeatureRow], user_excluded: &[Feature]) -> Self {
        let n = rows.len() as f64;
        let mut means = vec![0.0; 4];
        let mut stds = vec![0.0; 4];
        let mut excluded: Vec<usize> = user_excluded.iter().map(|f| f.index()).collect();

        for feature in Feature::ALL {
            let j = feature.index();
            let mut sum = 0.0;
            for r in rows {
                sum += r.vector().get(feature);
            }
            let mean = sum / n;
            let mut var = 0.0;
            for r in rows {
                let d = r.vector().get(feature) - mean;
                var += d * d;
            }
            let std = (var / n).sqrt();
            if std <= VARIANCE_RTOL * mean.abs().max(1.0) && !excluded.contains(&j) {
                excluded.push(j);
            }
            if feature == Feature::DeltaR {
                means[j] = 0.0;
                stds[j] = 1.0;
            } else {
                means[j] = mean;
                stds[j] = std;
            }
        }
        excluded.sort_unstable();
        excluded.dedup();
        Self {
            means,
            stds,
            excluded,
        }
    }

    pub fn is_excluded(&self, feature: Feature) -> bool {
        self.excluded.contains(&feature.index())
    }

    /// Standardized value of one feature; excluded columns map to zero.
    pub fn standardize(&self, feature: Feature, raw: f64) -> f64 {
        let j = feature.index();
        if self.is_excluded(feature) || self.stds[j] <= 0.0 {
            0.0
        } else {
            (raw - self.means[j]) / self.stds[j]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Ridge,
    Lasso,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::Lasso => "lasso",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ols" => Ok(Method::Ols),
            "ridge" => Ok(Method::Ridge),
            "lasso" => Ok(Method::Lasso),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRange {
    pub first_ns: i64,
    pub last_ns: i64,
}

/// Fitted model: coefficients live on standardized features (raw ΔR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    pub method: Method,
    pub penalty: f64,
    pub intercept: f64,
    /// Coefficient on standardized V.
    pub alpha: f64,
    /// Coefficient on standardized OI.
    pub beta: f64,
    /// Coefficient on standardized σ.
    pub gamma: f64,
    /// Coefficient on raw ΔR.
    pub lambda: f64,
    /// Standard deviation of training residuals (the ε scale).
    pub epsilon_scale: f64,
    pub scaler: Scaler,
    pub training_range: TrainingRange,
    pub column_order: Vec<String>,
}

impl CalibratedModel {
    pub fn coefficient(&self, feature: Feature) -> f64 {
        match feature {
            Feature::V => self.alpha,
            Feature::Oi => self.beta,
            Feature::Sigma => self.gamma,
            Feature::DeltaR => self.lambda,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write_json(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        w.write_all(self.to_json_pretty().as_bytes())?;
        writeln!(w)
    }
}

/// Point prediction: intercept plus coefficients on standardized features.
pub fn predict(model: &CalibratedModel, features: &FeatureVector) -> f64 {
    let mut acc = model.intercept;
    for feature in Feature::ALL {
        acc += model.coefficient(feature)
            * model.scaler.standardize(feature, features.get(feature));
    }
    acc
}

/// Standardized, centered design over a training slice.
struct Design {
    active: Vec<Feature>,
    scaler: Scaler,
    /// Column-major centered model inputs.
    columns: Vec<Vec<f64>>,
    /// Mean of each model-input column before centering.
    column_means: Vec<f64>,
    y_centered: Vec<f64>,
    y_mean: f64,
}

fn build_design(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    excluded: &[Feature],
    enforce_row_minimum: bool,
) -> Result<Design, CalibrateError> {
    let rows = x
        .rows()
        .get(train.clone())
        .ok_or_else(|| CalibrateError::InvalidMatrix(format!("train slice {train:?} out of range")))?;
    if rows.is_empty() {
        return Err(CalibrateError::TooFewRows {
            rows: 0,
            need: ROWS_PER_COLUMN * Feature::ALL.len(),
        });
    }
    if enforce_row_minimum {
        let need = ROWS_PER_COLUMN * Feature::ALL.len();
        if rows.len() < need {
            return Err(CalibrateError::TooFewRows {
                rows: rows.len(),
                need,
            });
        }
    }

    let scaler = Scaler::fit(rows, excluded);
    let active: Vec<Feature> = Feature::ALL
        .into_iter()
        .filter(|f| !scaler.is_excluded(*f))
        .collect();

    let n = rows.len() as f64;
    let mut columns = Vec::with_capacity(active.len());
    let mut column_means = Vec::with_capacity(active.len());
    for &feature in &active {
        let raw: Vec<f64> = rows
            .iter()
            .map(|r| scaler.standardize(feature, r.vector().get(feature)))
            .collect();
        let mean = raw.iter().sum::<f64>() / n;
        columns.push(raw.iter().map(|v| v - mean).collect());
        column_means.push(mean);
    }
    let y_mean = rows.iter().map(|r| r.target).sum::<f64>() / n;
    let y_centered: Vec<f64> = rows.iter().map(|r| r.target - y_mean).collect();

    Ok(Design {
        active,
        scaler,
        columns,
        column_means,
        y_centered,
        y_mean,
    })
}

fn assemble_model(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    design: &Design,
    slopes: &[f64],
    method: Method,
    penalty: f64,
) -> CalibratedModel {
    let intercept = design.y_mean
        - slopes
            .iter()
            .zip(&design.column_means)
            .map(|(w, m)| w * m)
            .sum::<f64>();

    let mut coef = [0.0f64; 4];
    for (w, feature) in slopes.iter().zip(&design.active) {
        coef[feature.index()] = *w;
    }

    let rows = &x.rows()[train.clone()];
    let model = CalibratedModel {
        method,
        penalty,
        intercept,
        alpha: coef[0],
        beta: coef[1],
        gamma: coef[2],
        lambda: coef[3],
        epsilon_scale: 0.0,
        scaler: design.scaler.clone(),
        training_range: TrainingRange {
            first_ns: rows.first().expect("non-empty train").bar_start_ns,
            last_ns: rows.last().expect("non-empty train").bar_start_ns,
        },
        column_order: COLUMN_ORDER.iter().map(|s| s.to_string()).collect(),
    };
    let mut sse = 0.0;
    for r in rows {
        let e = r.target - predict(&model, &r.vector());
        sse += e * e;
    }
    CalibratedModel {
        epsilon_scale: (sse / rows.len() as f64).sqrt(),
        ..model
    }
}

/// Ordinary least squares on the standardized design.
pub fn fit_ols(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    excluded: &[Feature],
) -> Result<CalibratedModel, CalibrateError> {
    let design = build_design(x, train.clone(), excluded, true)?;
    let fit = linalg::lstsq(&design.columns, &design.y_centered);
    if fit.rank < design.columns.len() {
        return Err(CalibrateError::RankDeficient);
    }
    Ok(assemble_model(x, train, &design, &fit.coefficients, Method::Ols, 0.0))
}

/// Ridge regression minimizing SSE + penalty·n·‖slopes‖²; the intercept is
/// unpenalized. Solved as an augmented least-squares problem.
pub fn fit_ridge(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    penalty: f64,
    excluded: &[Feature],
) -> Result<CalibratedModel, CalibrateError> {
    assert!(penalty >= 0.0, "ridge penalty must be non-negative");
    let design = build_design(x, train.clone(), excluded, true)?;
    let k = design.columns.len();
    let n = design.y_centered.len();
    let tau = (penalty * n as f64).sqrt();

    let mut columns = Vec::with_capacity(k);
    for (j, col) in design.columns.iter().enumerate() {
        let mut extended = col.clone();
        extended.extend((0..k).map(|i| if i == j { tau } else { 0.0 }));
        columns.push(extended);
    }
    let mut y = design.y_centered.clone();
    y.resize(design.y_centered.len() + k, 0.0);

    let fit = linalg::lstsq(&columns, &y);
    if penalty == 0.0 && fit.rank < k {
        return Err(CalibrateError::RankDeficient);
    }
    Ok(assemble_model(x, train, &design, &fit.coefficients, Method::Ridge, penalty))
}

fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

/// Lasso minimizing (1/2n)·SSE + penalty·‖slopes‖₁ by cyclic coordinate
/// descent with soft thresholding; the intercept is unpenalized.
pub fn fit_lasso(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    penalty: f64,
    excluded: &[Feature],
) -> Result<CalibratedModel, CalibrateError> {
    assert!(penalty >= 0.0, "lasso penalty must be non-negative");
    let design = build_design(x, train.clone(), excluded, false)?;
    let k = design.columns.len();
    let n = design.y_centered.len() as f64;

    let col_norms: Vec<f64> = design
        .columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();

    let mut w = vec![0.0f64; k];
    let mut residual = design.y_centered.clone();
    let mut last_change = f64::INFINITY;
    for _sweep in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..k {
            if col_norms[j] == 0.0 {
                continue;
            }
            let col = &design.columns[j];
            let rho = col
                .iter()
                .zip(&residual)
                .map(|(c, r)| c * r)
                .sum::<f64>()
                / n
                + col_norms[j] * w[j];
            let updated = soft_threshold(rho, penalty) / col_norms[j];
            let delta = updated - w[j];
            if delta != 0.0 {
                for (r, c) in residual.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                w[j] = updated;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < LASSO_TOL {
            return Ok(assemble_model(x, train, &design, &w, Method::Lasso, penalty));
        }
        last_change = max_change;
    }
    Err(CalibrateError::NoConvergence {
        sweeps: LASSO_MAX_SWEEPS,
        last_change,
        last_coefficients: w,
    })
}

/// Fits `method` at a given penalty (OLS ignores the penalty).
pub fn fit_with_method(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    method: Method,
    penalty: f64,
    excluded: &[Feature],
) -> Result<CalibratedModel, CalibrateError> {
    match method {
        Method::Ols => fit_ols(x, train, excluded),
        Method::Ridge => fit_ridge(x, train, penalty, excluded),
        Method::Lasso => fit_lasso(x, train, penalty, excluded),
    }
}

/// Default search grid: {0} ∪ 13 log-spaced points in [1e-4, 1e1].
pub fn default_penalty_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for i in 0..13 {
        grid.push(10f64.powf(-4.0 + 5.0 * i as f64 / 12.0));
    }
    grid
}

/// Mean out-of-fold MSE for one candidate penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub penalty: f64,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelection {
    pub penalty: f64,
    pub scores: Vec<GridScore>,
}

/// Picks the grid penalty minimizing mean out-of-fold MSE under expanding
/// walk-forward folds inside `train`; ties break toward the larger penalty.
pub fn select_penalty(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    method: Method,
    grid: &[f64],
    folds: usize,
) -> Result<PenaltySelection, CalibrateError> {
    select_penalty_excluding(x, train, method, grid, folds, &[])
}

/// [`select_penalty`] with feature exclusions applied to every inner fit.
pub fn select_penalty_excluding(
    x: &FeatureMatrix,
    train: std::ops::Range<usize>,
    method: Method,
    grid: &[f64],
    folds: usize,
    excluded: &[Feature],
) -> Result<PenaltySelection, CalibrateError> {
    assert!(!grid.is_empty(), "penalty grid must be non-empty");
    assert!(folds >= 1, "need at least one validation fold");
    let n = train.len();

    // Expanding-window cut points: fold k trains on [0, cuts[k+1]) and
    // validates on [cuts[k+1], cuts[k+2]).
    let cuts: Vec<usize> = (0..=folds + 1).map(|i| i * n / (folds + 1)).collect();
    let min_first_train = ROWS_PER_COLUMN * Feature::ALL.len();
    if cuts[1] < min_first_train || cuts.windows(2).any(|w| w[1] == w[0]) {
        return Err(CalibrateError::TooFewRows {
            rows: n,
            need: (folds + 1) * min_first_train,
        });
    }

    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite penalties"));
    sorted.dedup();

    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None; // (mean_mse, penalty)
    for &penalty in &sorted {
        let mut fold_mse = Vec::with_capacity(folds);
        for k in 0..folds {
            let inner_train = train.start..train.start + cuts[k + 1];
            let validate = train.start + cuts[k + 1]..train.start + cuts[k + 2];
            let model = fit_with_method(x, inner_train, method, penalty, excluded)?;
            let mse = x.rows()[validate]
                .iter()
                .map(|r| {
                    let e = r.target - predict(&model, &r.vector());
                    e * e
                })
                .sum::<f64>()
                / (cuts[k + 2] - cuts[k + 1]) as f64;
            fold_mse.push(mse);
        }
        let mean_mse = fold_mse.iter().sum::<f64>() / folds as f64;
        // `<=` so an exact tie prefers the larger (later) penalty.
        if best.is_none_or(|(best_mse, _)| mean_mse <= best_mse) {
            best = Some((mean_mse, penalty));
        }
        scores.push(GridScore {
            penalty,
            fold_mse,
            mean_mse,
        });
    }

    Ok(PenaltySelection {
        penalty: best.expect("non-empty grid").1,
        scores,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Synthetic matrix with known standardized coefficients; targets are
    /// built from the same population statistics the scaler will compute.
    pub(crate) fn known_coefficient_matrix(
        n: usize,
        seed: u64,
        coef: [f64; 4],
        intercept: f64,
        noise: f64,
    ) -> FeatureMatrix {
        let mut rng = SplitMix64::stream(seed, 90);
        let mut raw = Vec::with_capacity(n);
        for i in 0..n {
            let v = 1000.0 + 300.0 * rng.next_normal();
            let oi = 50_000.0 + 2_000.0 * rng.next_normal();
            let sigma = 0.2 + 0.03 * rng.next_normal();
            let delta_r = rng.next_normal();
            raw.push((i as i64 * 60_000_000_000, v, oi, sigma, delta_r));
        }
        let n_f = n as f64;
        let mut means = [0.0f64; 3];
        let mut stds = [0.0f64; 3];
        for j in 0..3 {
            let mean = raw.iter().map(|r| [r.1, r.2, r.3][j]).sum::<f64>() / n_f;
            let var = raw
                .iter()
                .map(|r| {
                    let d = [r.1, r.2, r.3][j] - mean;
                    d * d
                })
                .sum::<f64>()
                / n_f;
            means[j] = mean;
            stds[j] = var.sqrt();
        }
        let rows: Vec<FeatureRow> = raw
            .iter()
            .map(|&(ns, v, oi, sigma, delta_r)| {
                let target = intercept
                    + coef[0] * (v - means[0]) / stds[0]
                    + coef[1] * (oi - means[1]) / stds[1]
                    + coef[2] * (sigma - means[2]) / stds[2]
                    + coef[3] * delta_r
                    + noise * ((ns % 97) as f64 / 97.0 - 0.5);
                FeatureRow {
                    bar_start_ns: ns,
                    v,
                    oi,
                    sigma,
                    delta_r,
                    target,
                }
            })
            .collect();
        FeatureMatrix::new(rows).unwrap()
    }

    #[test]
    fn ols_recovers_known_standardized_coefficients() {
        let truth = [0.5, -0.2, 0.1, 0.8];
        let x = known_coefficient_matrix(400, 7, truth, 0.003, 0.0);
        let model = fit_ols(&x, 0..400, &[]).unwrap();
        assert!((model.alpha - truth[0]).abs() < 1e-8, "alpha {}", model.alpha);
        assert!((model.beta - truth[1]).abs() < 1e-8);
        assert!((model.gamma - truth[2]).abs() < 1e-8);
        assert!((model.lambda - truth[3]).abs() < 1e-8);
        assert!((model.intercept - 0.003).abs() < 1e-8);
        assert!(model.epsilon_scale < 1e-10);
    }

    #[test]
    fn prediction_matches_generating_equation_on_held_out_row() {
        let truth = [0.5, -0.2, 0.1, 0.8];
        let x = known_coefficient_matrix(401, 7, truth, 0.003, 0.0);
        let model = fit_ols(&x, 0..400, &[]).unwrap();
        let held_out = x.rows()[400];
        let got = predict(&model, &held_out.vector());
        // Held-out target was generated from full-sample statistics while the
        // model standardizes with slice statistics; both express the same
        // affine map, so predictions agree.
        assert!(
            (got - held_out.target).abs() < 1e-6,
            "prediction {got} vs target {}",
            held_out.target
        );
    }

    #[test]
    fn constant_target_fits_pure_intercept() {
        let x = known_coefficient_matrix(100, 3, [0.0; 4], 0.42, 0.0);
        let model = fit_ols(&x, 0..100, &[]).unwrap();
        assert!((model.intercept - 0.42).abs() < 1e-10);
        for f in Feature::ALL {
            assert!(model.coefficient(f).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let base = known_coefficient_matrix(60, 11, [0.5, -0.2, 0.1, 0.8], 0.0, 0.0);
        let rows: Vec<FeatureRow> = base
            .rows()
            .iter()
            .map(|r| FeatureRow { oi: r.v, ..*r })
            .collect();
        let x = FeatureMatrix::new(rows).unwrap();
        assert!(matches!(
            fit_ols(&x, 0..60, &[]),
            Err(CalibrateError::RankDeficient)
        ));
    }

    #[test]
    fn too_few_rows_is_reported() {
        let x = known_coefficient_matrix(30, 1, [0.1; 4], 0.0, 0.0);
        assert!(matches!(
            fit_ols(&x, 0..10, &[]),
            Err(CalibrateError::TooFewRows { rows: 10, need: 20 })
        ));
    }

    #[test]
    fn ridge_at_zero_penalty_reduces_to_ols() {
        let x = known_coefficient_matrix(300, 5, [0.5, -0.2, 0.1, 0.8], 0.01, 0.2);
        let ols = fit_ols(&x, 0..300, &[]).unwrap();
        let ridge = fit_ridge(&x, 0..300, 0.0, &[]).unwrap();
        for f in Feature::ALL {
            assert!((ols.coefficient(f) - ridge.coefficient(f)).abs() < 1e-8);
        }
        assert!((ols.intercept - ridge.intercept).abs() < 1e-8);
    }

    #[test]
    fn huge_ridge_penalty_shrinks_slopes_to_zero() {
        let x = known_coefficient_matrix(200, 9, [0.5, -0.2, 0.1, 0.8], 0.01, 0.1);
        let model = fit_ridge(&x, 0..200, 1e9, &[]).unwrap();
        for f in Feature::ALL {
            assert!(model.coefficient(f).abs() < 1e-6, "{f:?}");
        }
        let y_mean = x.rows().iter().map(|r| r.target).sum::<f64>() / 200.0;
        assert!((model.intercept - y_mean).abs() < 1e-6);
    }

    #[test]
    fn single_feature_ridge_matches_closed_form() {
        let x = known_coefficient_matrix(150, 13, [0.7, 0.0, 0.0, 0.0], 0.0, 0.3);
        let n = 150usize;
        let penalty = 0.37;
        let excluded = [Feature::Oi, Feature::Sigma, Feature::DeltaR];
        let model = fit_ridge(&x, 0..n, penalty, &excluded).unwrap();

        // Closed form on the standardized, centered feature.
        let rows = x.rows();
        let mean_v = rows.iter().map(|r| r.v).sum::<f64>() / n as f64;
        let std_v = (rows.iter().map(|r| (r.v - mean_v).powi(2)).sum::<f64>() / n as f64).sqrt();
        let z: Vec<f64> = rows.iter().map(|r| (r.v - mean_v) / std_v).collect();
        let zm = z.iter().sum::<f64>() / n as f64;
        let ym = rows.iter().map(|r| r.target).sum::<f64>() / n as f64;
        let num: f64 = z
            .iter()
            .zip(rows)
            .map(|(zi, r)| (zi - zm) * (r.target - ym))
            .sum();
        let den: f64 = z.iter().map(|zi| (zi - zm).powi(2)).sum::<f64>() + penalty * n as f64;
        assert!(
            (model.alpha - num / den).abs() < 1e-10,
            "slope {} vs closed form {}",
            model.alpha,
            num / den
        );
    }

    #[test]
    fn lasso_at_zero_penalty_matches_ols() {
        let x = known_coefficient_matrix(250, 17, [0.5, -0.2, 0.1, 0.8], 0.01, 0.15);
        let ols = fit_ols(&x, 0..250, &[]).unwrap();
        let lasso = fit_lasso(&x, 0..250, 0.0, &[]).unwrap();
        for f in Feature::ALL {
            assert!(
                (ols.coefficient(f) - lasso.coefficient(f)).abs() < 1e-6,
                "{f:?}: {} vs {}",
                ols.coefficient(f),
                lasso.coefficient(f)
            );
        }
    }

    #[test]
    fn lasso_above_lambda_max_zeroes_every_slope_exactly() {
        let x = known_coefficient_matrix(120, 19, [0.5, -0.2, 0.1, 0.8], 0.0, 0.2);
        let lambda_max = lasso_lambda_max(&x, 0..120);
        let model = fit_lasso(&x, 0..120, lambda_max, &[]).unwrap();
        for f in Feature::ALL {
            assert_eq!(model.coefficient(f), 0.0, "{f:?}");
        }
    }

    /// max_j |(1/n)·x̃cᵀ·y_c| over standardized centered columns.
    pub(crate) fn lasso_lambda_max(x: &FeatureMatrix, train: std::ops::Range<usize>) -> f64 {
        let design = build_design(x, train, &[], false).unwrap();
        let n = design.y_centered.len() as f64;
        design
            .columns
            .iter()
            .map(|col| {
                (col.iter()
                    .zip(&design.y_centered)
                    .map(|(c, y)| c * y)
                    .sum::<f64>()
                    / n)
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn lasso_satisfies_soft_threshold_fixed_point() {
        let x = known_coefficient_matrix(200, 23, [0.5, -0.2, 0.1, 0.8], 0.0, 0.3);
        let penalty = 0.05;
        let model = fit_lasso(&x, 0..200, penalty, &[]).unwrap();
        let design = build_design(&x, 0..200, &[], false).unwrap();
        let n = design.y_centered.len() as f64;
        let slopes: Vec<f64> = design
            .active
            .iter()
            .map(|f| model.coefficient(*f))
            .collect();
        let mut residual = design.y_centered.clone();
        for (j, col) in design.columns.iter().enumerate() {
            for (r, c) in residual.iter_mut().zip(col) {
                *r -= slopes[j] * c;
            }
        }
        for (j, col) in design.columns.iter().enumerate() {
            let norm = col.iter().map(|v| v * v).sum::<f64>() / n;
            let rho = col.iter().zip(&residual).map(|(c, r)| c * r).sum::<f64>() / n
                + norm * slopes[j];
            let fixed_point = soft_threshold(rho, penalty) / norm;
            assert!(
                (slopes[j] - fixed_point).abs() < 1e-6,
                "column {j}: {} vs {fixed_point}",
                slopes[j]
            );
        }
    }

    #[test]
    fn select_penalty_singleton_grid_is_trivial() {
        let x = known_coefficient_matrix(120, 29, [0.5, 0.0, 0.0, 0.3], 0.0, 0.2);
        let sel = select_penalty(&x, 0..120, Method::Ridge, &[0.0], 2).unwrap();
        assert_eq!(sel.penalty, 0.0);
        assert_eq!(sel.scores.len(), 1);
    }

    #[test]
    fn select_penalty_breaks_ties_toward_larger() {
        // A target identically zero scores 0 MSE at every ridge penalty.
        let base = known_coefficient_matrix(120, 31, [0.0; 4], 0.0, 0.0);
        let rows: Vec<FeatureRow> = base
            .rows()
            .iter()
            .map(|r| FeatureRow { target: 0.0, ..*r })
            .collect();
        let x = FeatureMatrix::new(rows).unwrap();
        let sel = select_penalty(&x, 0..120, Method::Ridge, &[0.0, 0.1, 10.0], 2).unwrap();
        assert_eq!(sel.penalty, 10.0);
    }

    #[test]
    fn select_penalty_needs_enough_rows() {
        let x = known_coefficient_matrix(30, 37, [0.1; 4], 0.0, 0.1);
        assert!(matches!(
            select_penalty(&x, 0..30, Method::Ridge, &[0.0, 0.1], 2),
            Err(CalibrateError::TooFewRows { .. })
        ));
    }

    #[test]
    fn predict_is_constant_when_all_coefficients_are_zero() {
        let x = known_coefficient_matrix(100, 41, [0.0; 4], 0.003, 0.0);
        let model = fit_ols(&x, 0..100, &[]).unwrap();
        let f = FeatureVector {
            v: 123.0,
            oi: 456.0,
            sigma: 0.7,
            delta_r: -2.0,
        };
        assert!((predict(&model, &f) - 0.003).abs() < 1e-9);
    }

    #[test]
    fn predict_zeroes_at_scaler_means_with_zero_delta_r() {
        let x = known_coefficient_matrix(100, 43, [0.5, -0.2, 0.1, 0.8], 0.0, 0.1);
        let mut model = fit_ols(&x, 0..100, &[]).unwrap();
        model.intercept = 0.0;
        model.alpha = 1.0;
        model.beta = 1.0;
        model.gamma = 1.0;
        model.lambda = 1.0;
        let f = FeatureVector {
            v: model.scaler.means[0],
            oi: model.scaler.means[1],
            sigma: model.scaler.means[2],
            delta_r: 0.0,
        };
        assert_eq!(predict(&model, &f), 0.0);
    }

    #[test]
    fn prediction_is_affine_in_standardized_features() {
        let x = known_coefficient_matrix(150, 47, [0.5, -0.2, 0.1, 0.8], 0.01, 0.2);
        let model = fit_ols(&x, 0..150, &[]).unwrap();
        let a = FeatureVector {
            v: 1200.0,
            oi: 51_000.0,
            sigma: 0.25,
            delta_r: 1.5,
        };
        let b = FeatureVector {
            v: 900.0,
            oi: 49_000.0,
            sigma: 0.18,
            delta_r: -0.7,
        };
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
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn model_json_has_exact_schema() {
        let x = known_coefficient_matrix(100, 53, [0.5, -0.2, 0.1, 0.8], 0.0, 0.1);
        let model = fit_ols(&x, 0..100, &[]).unwrap();
        let json = model.to_json_pretty();
        // Field order is part of the document format; check it on the text.
        let expected_order = [
            "\"method\"",
            "\"penalty\"",
            "\"intercept\"",
            "\"alpha\"",
            "\"beta\"",
            "\"gamma\"",
            "\"lambda\"",
            "\"epsilon_scale\"",
            "\"scaler\"",
            "\"means\"",
            "\"stds\"",
            "\"excluded\"",
            "\"training_range\"",
            "\"first_ns\"",
            "\"last_ns\"",
            "\"column_order\"",
        ];
        let mut cursor = 0;
        for key in expected_order {
            let pos = json[cursor..]
                .find(key)
                .unwrap_or_else(|| panic!("{key} missing or out of order"));
            cursor += pos + key.len();
        }
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            value["column_order"],
            serde_json::json!(["v", "oi", "sigma", "delta_r"])
        );
        let round_trip = CalibratedModel::from_json(&json).unwrap();
        assert_eq!(round_trip, model);
    }

    #[test]
    fn build_features_aligns_and_excludes() {
        use crate::marketdata::MarketBar;
        let bar = |i: i64, sigma: Option<f64>, mid: f64| MarketBar {
            bar_start_ns: i * 60_000_000_000,
            interval_ns: 60_000_000_000,
            option_volume: 10,
            signed_option_volume: 2,
            buy_volume: 6,
            sell_volume: 4,
            unclassified_volume: 0,
            buy_trades: 1,
            sell_trades: 1,
            unclassified_trades: 0,
            open_interest: 100,
            implied_vol: sigma,
            option_mid: mid,
            underlying_mid: 100.0,
            underlying_log_return: 0.0,
            underlying_volume: 50,
        };
        let point = |i: i64| ResidualPoint {
            bar_start_ns: i * 60_000_000_000,
            expected_hedging_volume: 0.0,
            raw_residual: 1.0,
            delta_r: 0.5,
        };
        // Residuals on bars 1 and 2 (of 0,1,2): only bar 1 has a successor.
        let bars = vec![
            bar(0, Some(0.2), 4.0),
            bar(1, Some(0.2), 4.2),
            bar(2, Some(0.2), 4.1),
        ];
        let residuals = vec![point(1), point(2)];
        let x = build_features(&bars, &residuals, VolumeSource::Option, TargetKind::LogReturn)
            .unwrap();
        assert_eq!(x.len(), 1);
        assert_eq!(x.rows()[0].bar_start_ns, 60_000_000_000);
        assert!((x.rows()[0].target - (4.1f64 / 4.2).ln()).abs() < 1e-15);

        // Absent sigma on bar 1 excludes it; nothing remains.
        let bars2 = vec![bar(0, Some(0.2), 4.0), bar(1, None, 4.2), bar(2, Some(0.2), 4.1)];
        assert!(matches!(
            build_features(&bars2, &residuals, VolumeSource::Option, TargetKind::LogReturn),
            Err(CalibrateError::EmptyMatrix)
        ));

        // Constant mid makes every target zero.
        let bars3 = vec![bar(0, Some(0.2), 4.0), bar(1, Some(0.2), 4.0), bar(2, Some(0.2), 4.0)];
        let x3 = build_features(&bars3, &residuals, VolumeSource::Option, TargetKind::LogReturn)
            .unwrap();
        assert_eq!(x3.rows()[0].target, 0.0);
    }

    #[test]
    fn shifted_targets_destroy_noiseless_recovery() {
        let truth = [0.5, -0.2, 0.1, 0.8];
        let x = known_coefficient_matrix(300, 59, truth, 0.0, 0.0);
        let mut rows = x.rows().to_vec();
        for i in 0..rows.len() - 1 {
            rows[i].target = rows[i + 1].target;
        }
        rows.pop();
        let shifted = FeatureMatrix::new(rows).unwrap();
        let model = fit_ols(&shifted, 0..shifted.len(), &[]).unwrap();
        // Residual scale jumps from ~0 to the target's own scale.
        assert!(
            model.epsilon_scale > 0.1,
            "epsilon_scale {} suspiciously small",
            model.epsilon_scale
        );
        assert!((model.lambda - truth[3]).abs() > 0.05);
    }

    #[test]
    fn excluded_feature_has_zero_coefficient() {
        let x = known_coefficient_matrix(200, 61, [0.5, -0.2, 0.1, 0.8], 0.0, 0.1);
        let model = fit_ols(&x, 0..200, &[Feature::DeltaR]).unwrap();
        assert_eq!(model.lambda, 0.0);
        assert!(model.scaler.is_excluded(Feature::DeltaR));
        assert!(model.alpha.abs() > 0.1);
    }
}
