//! Walk-forward evaluation with strict no-lookahead guarantees.
//!
//! Folds roll forward through the feature matrix; penalties, scalers and
//! coefficients are derived inside each fold's training slice only, and the
//! fold is scored on the rows immediately after it. Reports are a pure
//! function of rows at or before each fold's test range, serialized
//! deterministically.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibrate::{
    self, CalibrateError, Feature, FeatureMatrix, Method,
};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("{rows} rows cannot host a fold of {need} (train + test)")]
    TooFewRows { rows: usize, need: usize },
    #[error("predictions ({predictions}) and actuals ({actuals}) differ in length")]
    LengthMismatch { predictions: usize, actuals: usize },
    #[error("cannot score an empty prediction set")]
    Empty,
    #[error("invalid split plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
}

/// Rolling-origin split geometry, in rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_len: usize,
    pub test_len: usize,
    pub step: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_len: 500,
            test_len: 50,
            step: 50,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.train_len == 0 || self.test_len == 0 || self.step == 0 {
            return Err(BacktestError::InvalidPlan(
                "train_len, test_len and step must all be positive".into(),
            ));
        }
        if self.step > self.test_len {
            return Err(BacktestError::InvalidPlan(format!(
                "step {} > test_len {} would leave unevaluated gaps",
                self.step, self.test_len
            )));
        }
        Ok(())
    }
}

/// One walk-forward fold; ranges index feature-matrix rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Enumerates folds: fold k trains on [k·step, k·step + train_len) and tests
/// on the following test_len rows. The final fold's test slice is truncated
/// at the end of the data when fewer than test_len rows remain.
pub fn plan_splits(n_rows: usize, plan: &SplitPlan) -> Result<Vec<Fold>, BacktestError> {
    plan.validate()?;
    let need = plan.train_len + 1;
    if n_rows < need {
        return Err(BacktestError::TooFewRows { rows: n_rows, need });
    }
    let mut folds = Vec::new();
    let mut k = 0usize;
    loop {
        let train_start = k * plan.step;
        let train_end = train_start + plan.train_len;
        if train_end >= n_rows {
            break;
        }
        let test_end = (train_end + plan.test_len).min(n_rows);
        folds.push(Fold {
            index: k,
            train: train_start..train_end,
            test: train_end..test_end,
        });
        k += 1;
    }
    Ok(folds)
}

/// Out-of-sample metric set for one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub directional_accuracy: f64,
    pub spearman_ic: f64,
}

/// Scores predictions against realized targets.
///
/// Directional accuracy compares signums, so a zero prediction only matches
/// a zero actual. The information coefficient is a Spearman rank correlation
/// with average ranks on ties; it is defined as 0 when either side has no
/// rank variation.
pub fn score(predictions: &[f64], actuals: &[f64]) -> Result<Metrics, BacktestError> {
    if predictions.len() != actuals.len() {
        return Err(BacktestError::LengthMismatch {
            predictions: predictions.len(),
            actuals: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(BacktestError::Empty);
    }
    let n = predictions.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut sign_hits = 0usize;
    for (p, a) in predictions.iter().zip(actuals) {
        let e = p - a;
        se += e * e;
        ae += e.abs();
        // f64::signum maps 0.0 to 1.0; treat exact zeros separately.
        let sp = if *p == 0.0 { 0i8 } else if *p > 0.0 { 1 } else { -1 };
        let sa = if *a == 0.0 { 0i8 } else if *a > 0.0 { 1 } else { -1 };
        if sp == sa {
            sign_hits += 1;
        }
    }
    Ok(Metrics {
        mse: se / n,
        mae: ae / n,
        directional_accuracy: sign_hits as f64 / n,
        spearman_ic: spearman(predictions, actuals),
    })
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return 0.0;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// How the penalty is chosen for penalized methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    /// Use this penalty in every fold.
    Fixed(f64),
    /// Select per fold from this grid inside the fold's training slice.
    Grid(Vec<f64>),
}

/// Full model-and-plan configuration of one backtest run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub method: Method,
    pub penalty: PenaltyChoice,
    /// Features excluded from the fit (used for restricted baselines).
    pub excluded: Vec<Feature>,
    pub plan: SplitPlan,
    /// Inner walk-forward folds for penalty selection.
    pub select_folds: usize,
    /// Echoed into the report; the evaluation itself is deterministic.
    pub seed: u64,
}

impl BacktestConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            penalty: PenaltyChoice::Grid(calibrate::default_penalty_grid()),
            excluded: Vec::new(),
            plan: SplitPlan::default(),
            select_folds: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_start: usize,
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
    pub train_first_ns: i64,
    pub test_last_ns: i64,
    pub mse: f64,
    pub mae: f64,
    pub directional_accuracy: f64,
    pub spearman_ic: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> MetricSummary {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mse: MetricSummary,
    pub mae: MetricSummary,
    pub directional_accuracy: MetricSummary,
    pub spearman_ic: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub input_digest: String,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub aggregate: AggregateReport,
}

impl BacktestReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write_json(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        w.write_all(self.to_json_pretty().as_bytes())?;
        writeln!(w)
    }

    /// Flat CSV, one row per fold.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "fold,train_start,train_end,test_start,test_end,mse,mae,directional_accuracy,spearman_ic,penalty"
        )?;
        for f in &self.folds {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                f.fold,
                f.train_start,
                f.train_end,
                f.test_start,
                f.test_end,
                f.mse,
                f.mae,
                f.directional_accuracy,
                f.spearman_ic,
                f.penalty
            )?;
        }
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        format!(
            "folds={} mse={:.6e} dir_acc={:.4} ic={:.4}",
            self.folds.len(),
            self.aggregate.mse.mean,
            self.aggregate.directional_accuracy.mean,
            self.aggregate.spearman_ic.mean
        )
    }
}

/// SHA-256 of the feature matrix's canonical CSV serialization.
pub fn feature_matrix_digest(x: &FeatureMatrix) -> String {
    let mut hasher = Sha256::new();
    hasher.update(x.canonical_csv().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the full walk-forward evaluation.
///
/// Per fold: the penalty (when searched) is selected by an inner walk-forward
/// inside the fold's training slice, the model is fit on that slice, and the
/// fold is scored on its test slice.
pub fn run_backtest(
    x: &FeatureMatrix,
    config: &BacktestConfig,
) -> Result<BacktestReport, BacktestError> {
    let folds = plan_splits(x.len(), &config.plan)?;

    let mut fold_reports = Vec::with_capacity(folds.len());
    for fold in &folds {
        let penalty = match (&config.method, &config.penalty) {
            (Method::Ols, _) => 0.0,
            (_, PenaltyChoice::Fixed(p)) => *p,
            (_, PenaltyChoice::Grid(grid)) => {
                calibrate::select_penalty_excluding(
                    x,
                    fold.train.clone(),
                    config.method,
                    grid,
                    config.select_folds,
                    &config.excluded,
                )?
                .penalty
            }
        };
        let model = calibrate::fit_with_method(
            x,
            fold.train.clone(),
            config.method,
            penalty,
            &config.excluded,
        )?;
        let test_rows = &x.rows()[fold.test.clone()];
        let predictions: Vec<f64> = test_rows
            .iter()
            .map(|r| calibrate::predict(&model, &r.vector()))
            .collect();
        let actuals: Vec<f64> = test_rows.iter().map(|r| r.target).collect();
        let metrics = score(&predictions, &actuals)?;
        fold_reports.push(FoldReport {
            fold: fold.index,
            train_start: fold.train.start,
            train_end: fold.train.end,
            test_start: fold.test.start,
            test_end: fold.test.end,
            train_first_ns: x.rows()[fold.train.start].bar_start_ns,
            test_last_ns: x.rows()[fold.test.end - 1].bar_start_ns,
            mse: metrics.mse,
            mae: metrics.mae,
            directional_accuracy: metrics.directional_accuracy,
            spearman_ic: metrics.spearman_ic,
            penalty,
        });
    }

    let aggregate = AggregateReport {
        mse: summarize(fold_reports.iter().map(|f| f.mse)),
        mae: summarize(fold_reports.iter().map(|f| f.mae)),
        directional_accuracy: summarize(fold_reports.iter().map(|f| f.directional_accuracy)),
        spearman_ic: summarize(fold_reports.iter().map(|f| f.spearman_ic)),
    };

    Ok(BacktestReport {
        config: config.clone(),
        input_digest: feature_matrix_digest(x),
        seed: config.seed,
        folds: fold_reports,
        aggregate,
    })
}
