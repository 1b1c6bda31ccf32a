//! Black–Scholes pricing, delta and implied-volatility inversion.
//!
//! These supply the per-bar implied volatility and the hedging-delta proxy
//! used by the residual baseline. European exercise, zero dividend yield.
//!
//! The normal CDF is evaluated through Cody's rational Chebyshev
//! approximations of erf/erfc (W. J. Cody, "Rational Chebyshev approximation
//! for the error function", Math. Comp. 23, 1969; coefficients as in the
//! SPECFUN `calerf` routine). Absolute error is below 1e-15 in double
//! precision, comfortably inside the 1e-12 budget the calibration relies on.

#![allow(clippy::excessive_precision)] // frozen reference values and published coefficient tables

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest volatility the inversion will report, per √year.
pub const VOL_LOWER: f64 = 1e-4;
/// Highest volatility the inversion will report, per √year.
pub const VOL_UPPER: f64 = 5.0;

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("pricing input out of domain: {0}")]
    Domain(String),
    #[error("price {price} violates no-arbitrage bounds [{lower}, {upper}]")]
    ArbitrageBound { price: f64, lower: f64, upper: f64 },
    #[error("implied vol did not converge after {iterations} iterations (last σ = {last})")]
    NoConvergence { iterations: usize, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionRight {
    Call,
    Put,
}

/// Inputs for one European option valuation.
#[derive(Debug, Clone, Copy)]
pub struct PricingInputs {
    pub spot: f64,
    pub strike: f64,
    /// Continuously compounded rate per year.
    pub rate: f64,
    /// Time to expiry in years.
    pub time_to_expiry: f64,
    /// Volatility per √year.
    pub vol: f64,
    pub right: OptionRight,
}

impl PricingInputs {
    fn validate(&self) -> Result<(), PricingError> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(PricingError::Domain(format!("spot {} must be > 0", self.spot)));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(PricingError::Domain(format!(
                "strike {} must be > 0",
                self.strike
            )));
        }
        if !(self.time_to_expiry > 0.0 && self.time_to_expiry.is_finite()) {
            return Err(PricingError::Domain(format!(
                "time to expiry {} must be > 0",
                self.time_to_expiry
            )));
        }
        if !(self.vol >= 0.0 && self.vol.is_finite()) {
            return Err(PricingError::Domain(format!("vol {} must be ≥ 0", self.vol)));
        }
        if !self.rate.is_finite() {
            return Err(PricingError::Domain("rate must be finite".into()));
        }
        Ok(())
    }
}

/// Black–Scholes value of a European option.
pub fn bs_price(inputs: &PricingInputs) -> Result<f64, PricingError> {
    inputs.validate()?;
    let PricingInputs {
        spot,
        strike,
        rate,
        time_to_expiry: t,
        vol,
        right,
    } = *inputs;
    let df_strike = strike * (-rate * t).exp();
    let total_vol = vol * t.sqrt();
    if total_vol == 0.0 {
        // Deterministic limit: discounted intrinsic on the forward.
        return Ok(match right {
            OptionRight::Call => (spot - df_strike).max(0.0),
            OptionRight::Put => (df_strike - spot).max(0.0),
        });
    }
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * t) / total_vol;
    let d2 = d1 - total_vol;
    Ok(match right {
        OptionRight::Call => spot * norm_cdf(d1) - df_strike * norm_cdf(d2),
        OptionRight::Put => df_strike * norm_cdf(-d2) - spot * norm_cdf(-d1),
    })
}

/// Black–Scholes delta: ∂price/∂spot.
pub fn bs_delta(inputs: &PricingInputs) -> Result<f64, PricingError> {
    inputs.validate()?;
    let PricingInputs {
        spot,
        strike,
        rate,
        time_to_expiry: t,
        vol,
        right,
    } = *inputs;
    let total_vol = vol * t.sqrt();
    let call_delta = if total_vol == 0.0 {
        let forward_moneyness = spot - strike * (-rate * t).exp();
        if forward_moneyness > 0.0 {
            1.0
        } else if forward_moneyness < 0.0 {
            0.0
        } else {
            0.5
        }
    } else {
        let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * t) / total_vol;
        norm_cdf(d1)
    };
    Ok(match right {
        OptionRight::Call => call_delta,
        OptionRight::Put => call_delta - 1.0,
    })
}

/// Black–Scholes vega: ∂price/∂vol, identical for calls and puts.
pub fn bs_vega(inputs: &PricingInputs) -> Result<f64, PricingError> {
    inputs.validate()?;
    let PricingInputs {
        spot,
        strike,
        rate,
        time_to_expiry: t,
        vol,
        ..
    } = *inputs;
    let total_vol = vol * t.sqrt();
    if total_vol == 0.0 {
        return Ok(0.0);
    }
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * t) / total_vol;
    Ok(spot * norm_pdf(d1) * t.sqrt())
}

/// Everything `implied_vol` needs except the volatility itself.
#[derive(Debug, Clone, Copy)]
pub struct ImpliedVolRequest {
    pub observed_price: f64,
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub time_to_expiry: f64,
    pub right: OptionRight,
}

impl ImpliedVolRequest {
    fn inputs(&self, vol: f64) -> PricingInputs {
        PricingInputs {
            spot: self.spot,
            strike: self.strike,
            rate: self.rate,
            time_to_expiry: self.time_to_expiry,
            vol,
            right: self.right,
        }
    }
}

/// Inverts the Black–Scholes price for volatility.
///
/// Newton from a Brenner–Subrahmanyam starting point, falling back to
/// bisection whenever a step would leave the current bracket or vega
/// underflows; every fourth iteration bisects unconditionally so the bracket
/// provably shrinks. Prices outside what volatilities in
/// [`VOL_LOWER`, `VOL_UPPER`] can produce are rejected as arbitrage-bound
/// violations.
pub fn implied_vol(request: &ImpliedVolRequest) -> Result<f64, PricingError> {
    let probe = request.inputs(1.0);
    probe.validate()?;
    let observed = request.observed_price;
    if !observed.is_finite() {
        return Err(PricingError::Domain("observed price must be finite".into()));
    }

    let df_strike = request.strike * (-request.rate * request.time_to_expiry).exp();
    let (lower_bound, upper_bound) = match request.right {
        OptionRight::Call => ((request.spot - df_strike).max(0.0), request.spot),
        OptionRight::Put => ((df_strike - request.spot).max(0.0), df_strike),
    };
    if observed <= lower_bound || observed >= upper_bound {
        return Err(PricingError::ArbitrageBound {
            price: observed,
            lower: lower_bound,
            upper: upper_bound,
        });
    }

    let price_at = |vol: f64| bs_price(&request.inputs(vol));
    let tol = 1e-10 * observed.max(1.0);

    let mut lo = VOL_LOWER;
    let mut hi = VOL_UPPER;
    let f_lo = price_at(lo)? - observed;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let f_hi = price_at(hi)? - observed;
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        // In-bounds price, but no volatility in the supported range matches it.
        return Err(PricingError::ArbitrageBound {
            price: observed,
            lower: lower_bound,
            upper: upper_bound,
        });
    }

    // Brenner–Subrahmanyam at-the-money estimate.
    let guess = (2.0 * std::f64::consts::PI / request.time_to_expiry).sqrt() * observed
        / request.spot;
    let mut sigma = guess.clamp(lo * 1.0001, hi * 0.9999);

    for iteration in 0..MAX_ITERATIONS {
        let diff = price_at(sigma)? - observed;
        if diff > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        // Converged when the price matches and the bracket pins σ tightly.
        if diff.abs() <= tol && (hi - lo) <= 1e-9 * sigma.max(VOL_LOWER) {
            return Ok(sigma);
        }
        if hi - lo <= f64::EPSILON * sigma.max(VOL_LOWER) {
            // Bracket exhausted at double precision; cannot do better.
            return Ok(sigma);
        }

        let mut next = f64::NAN;
        if iteration % 4 != 3 {
            let vega = bs_vega(&request.inputs(sigma))?;
            if vega > 1e-12 {
                let candidate = sigma - diff / vega;
                if candidate.is_finite() && candidate > lo && candidate < hi {
                    next = candidate;
                }
            }
        }
        sigma = if next.is_finite() { next } else { 0.5 * (lo + hi) };
    }

    Err(PricingError::NoConvergence {
        iterations: MAX_ITERATIONS,
        last: sigma,
    })
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, Φ(x) = erfc(−x/√2)/2.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

// Cody/SPECFUN coefficient sets.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERFC_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERFC_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERFC_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERFC_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const ONE_OVER_SQRT_PI: f64 = 5.6418958354775628695e-1;

/// Error function via Cody's rational approximations.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else if x > 0.0 {
        1.0 - erfc(x)
    } else {
        erfc(-x) - 1.0
    }
}

/// Complementary error function via Cody's rational approximations.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf(x);
    }
    let result = if y <= 4.0 {
        let mut num = ERFC_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * y;
            den = (den + ERFC_D[i]) * y;
        }
        scaled_exp(y) * (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else if y < 26.543 {
        let z = 1.0 / (y * y);
        let mut num = ERFC_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * z;
            den = (den + ERFC_Q[i]) * z;
        }
        let tail = z * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        scaled_exp(y) * (ONE_OVER_SQRT_PI - tail) / y
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// exp(−y²) split as exp(−⌊16y⌋²/256)·exp(−(y−⌊16y⌋/16)(y+⌊16y⌋/16)) to keep
/// the argument of each factor small (Cody's trick for accurate tails).
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}
