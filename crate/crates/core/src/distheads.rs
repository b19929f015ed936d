//! Zero-inflated count distributions and the link from the additive
//! predictor to their parameters.
//!
//! The count mean is `λ = exp(η + offset)` with `offset = log(population)`,
//! so `η` models the log-rate. The excess-zero probability is tied to the
//! same predictor through `π = exp(−λ·e^ζ)` with a single scalar `ζ`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Bound applied to `η + offset` before exponentiation.
pub const LOG_MEAN_CLAMP: f64 = 30.0;

/// Count component of the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountFamily {
    Poisson,
    /// Mean-parameterized negative binomial with `Var = λ + λ²/χ`.
    NegBin,
}

/// Distribution family of a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Zero-inflated Poisson; auxiliary `[χ]`, `π = exp(−λe^χ)`.
    Zip,
    /// Zero-inflated negative binomial; auxiliary `[log χ, ζ]`,
    /// dispersion `χ`, `π = exp(−λe^ζ)`.
    Zinb,
    /// Plain negative binomial; auxiliary `[log χ]`.
    Nb,
}

impl Family {
    pub fn count_family(self) -> CountFamily {
        match self {
            Family::Zip => CountFamily::Poisson,
            Family::Zinb | Family::Nb => CountFamily::NegBin,
        }
    }

    /// Number of trainable scalar parameters besides the predictor.
    pub fn n_aux(self) -> usize {
        match self {
            Family::Zip | Family::Nb => 1,
            Family::Zinb => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Zip => "zip",
            Family::Zinb => "zinb",
            Family::Nb => "nb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zip" => Ok(Family::Zip),
            "zinb" => Ok(Family::Zinb),
            "nb" => Ok(Family::Nb),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }

    /// Maps a predictor (`η + offset`) and auxiliary scalars to parameters.
    pub fn params(self, log_mean: f64, aux: &[f64]) -> ZeroInflatedParams {
        let s = log_mean.clamp(-LOG_MEAN_CLAMP, LOG_MEAN_CLAMP);
        let lambda = s.exp();
        match self {
            Family::Zip => ZeroInflatedParams {
                lambda,
                pi: (-(aux[0] + s).exp()).exp(),
                chi: aux[0],
            },
            Family::Zinb => ZeroInflatedParams {
                lambda,
                pi: (-(aux[1] + s).exp()).exp(),
                chi: aux[0].exp(),
            },
            Family::Nb => ZeroInflatedParams {
                lambda,
                pi: 0.0,
                chi: aux[0].exp(),
            },
        }
    }
}

/// Parameters of one zero-inflated count distribution.
///
/// For a Poisson count component `chi` records the link scalar and does not
/// enter the pmf; for the negative binomial it is the dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedParams {
    pub lambda: f64,
    pub pi: f64,
    pub chi: f64,
}

impl ZeroInflatedParams {
    pub fn validate(&self, family: CountFamily) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::InvalidArgument(format!(
                "pi must be in [0,1], got {}",
                self.pi
            )));
        }
        if family == CountFamily::NegBin && !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "NB dispersion must be positive, got {}",
                self.chi
            )));
        }
        Ok(())
    }
}

/// ZIP link: `λ = exp(η + offset)`, `π = exp(−exp(χ + log λ))`.
pub fn link_zip(eta: f64, offset: f64, chi: f64) -> ZeroInflatedParams {
    Family::Zip.params(eta + offset, &[chi])
}

/// `log f_C(y)` with its partial derivatives in `λ` and (NB only) `χ`.
fn count_log_pmf(y: u64, lambda: f64, chi: f64, family: CountFamily) -> (f64, f64, f64) {
    let yf = y as f64;
    match family {
        CountFamily::Poisson => {
            let lp = if y == 0 {
                -lambda
            } else {
                yf * lambda.ln() - lambda - ln_gamma(yf + 1.0)
            };
            (lp, yf / lambda - 1.0, 0.0)
        }
        CountFamily::NegBin => {
            let k = chi;
            let log_k_l = (k + lambda).ln();
            let lp = ln_gamma(yf + k) - ln_gamma(k) - ln_gamma(yf + 1.0) - k * (lambda / k).ln_1p()
                + if y == 0 {
                    0.0
                } else {
                    yf * (lambda.ln() - log_k_l)
                };
            let d_lambda = yf / lambda - (yf + k) / (k + lambda);
            let d_k = digamma(yf + k) - digamma(k) - (lambda / k).ln_1p() + lambda / (k + lambda)
                - yf / (k + lambda);
            (lp, d_lambda, d_k)
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(a - b).abs()).exp().ln_1p()
}

pub fn zi_log_pmf(y: u64, params: &ZeroInflatedParams, family: CountFamily) -> f64 {
    let (lf, _, _) = count_log_pmf(y, params.lambda, params.chi, family);
    if params.pi <= 0.0 {
        return lf;
    }
    let log_one_minus = (-params.pi).ln_1p();
    if y == 0 {
        log_add_exp(params.pi.ln(), log_one_minus + lf)
    } else {
        log_one_minus + lf
    }
}

/// `π·1[y=0] + (1−π)·f_C(y)`.
pub fn zi_pmf(y: u64, params: &ZeroInflatedParams, family: CountFamily) -> Result<f64> {
    params.validate(family)?;
    Ok(zi_log_pmf(y, params, family).exp())
}

/// Log-likelihood of one observation and its gradient with respect to the
/// predictor and the family's auxiliary scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsLogLik {
    pub value: f64,
    pub d_log_mean: f64,
    pub d_aux: [f64; 2],
}

pub fn log_lik(family: Family, y: u64, log_mean: f64, aux: &[f64]) -> ObsLogLik {
    let clamped = !(-LOG_MEAN_CLAMP..=LOG_MEAN_CLAMP).contains(&log_mean);
    let s = log_mean.clamp(-LOG_MEAN_CLAMP, LOG_MEAN_CLAMP);
    let lambda = s.exp();
    let mut out = ObsLogLik {
        value: 0.0,
        d_log_mean: 0.0,
        d_aux: [0.0; 2],
    };
    let (count, chi, zi_shift) = match family {
        Family::Zip => (CountFamily::Poisson, 0.0, Some(aux[0])),
        Family::Zinb => (CountFamily::NegBin, aux[0].exp(), Some(aux[1])),
        Family::Nb => (CountFamily::NegBin, aux[0].exp(), None),
    };
    let (lf, dlf_dl, dlf_dk) = count_log_pmf(y, lambda, chi, count);
    // derivative in the inflation rate a = λ·e^ζ, in λ (through f_C) and in χ
    let (value, d_a, d_l, d_k, a) = match zi_shift {
        None => (lf, 0.0, dlf_dl, dlf_dk, 0.0),
        Some(zeta) => {
            let a = (s + zeta).exp();
            let log_pi = -a;
            let log_one_minus = (-(-a).exp_m1()).ln();
            let d_one_minus = 1.0 / a.exp_m1();
            if y == 0 {
                let total = log_add_exp(log_pi, log_one_minus + lf);
                let w_pi = (log_pi - total).exp();
                let w_c = (log_one_minus + lf - total).exp();
                (
                    total,
                    -w_pi + w_c * d_one_minus,
                    w_c * dlf_dl,
                    w_c * dlf_dk,
                    a,
                )
            } else {
                (log_one_minus + lf, d_one_minus, dlf_dl, dlf_dk, a)
            }
        }
    };
    out.value = value;
    if !clamped {
        out.d_log_mean = d_l * lambda + d_a * a;
    }
    match family {
        Family::Zip => out.d_aux[0] = d_a * a,
        Family::Zinb => {
            out.d_aux[0] = d_k * chi;
            out.d_aux[1] = d_a * a;
        }
        Family::Nb => out.d_aux[0] = d_k * chi,
    }
    out
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// `−Σ log pmf` over a batch.
pub fn zi_nll(batch: &[(u64, ZeroInflatedParams)], family: CountFamily) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let terms = batch
        .iter()
        .map(|(y, p)| {
            p.validate(family)?;
            let lp = zi_log_pmf(*y, p, family);
            if lp.is_finite() {
                Ok(-lp)
            } else {
                Err(Error::Numerical(format!(
                    "zero probability for y = {y} under {p:?}"
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Mean and variance of the mixture via the law of total variance.
pub fn zi_moments(params: &ZeroInflatedParams, family: CountFamily) -> (f64, f64) {
    let l = params.lambda;
    let keep = 1.0 - params.pi;
    let count_var = match family {
        CountFamily::Poisson => l,
        CountFamily::NegBin => l + l * l / params.chi,
    };
    let mean = keep * l;
    let var = keep * (count_var + l * l) - mean * mean;
    (mean, var.max(0.0))
}
