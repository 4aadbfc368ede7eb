//! Microscopic and scaling parameters of the weakly asymmetric Atlas model.
//!
//! A single [`ModelParams`] value carries the four free amplitudes/exponents,
//! the scaling parameter `n`, and every quantity derived from them. All other
//! modules take it by value (it is `Copy`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error(
        "asymmetry exponent alpha = {alpha} lies in the excluded regime (0, 1): with c_n of order one \
         the scaling forces gamma - beta = 1 + alpha/2 < 3/2 and the initial field explodes"
    )]
    ExcludedAsymmetryRegime { alpha: f64 },
    #[error("fugacity deficit b = {b} must satisfy 0 < b < n^beta = {bound}")]
    FugacityOutOfRange { b: f64, bound: f64 },
    #[error("left jump bias alpha_n = {alpha_n} must be < 1 so that q_n > 0")]
    NonPositiveRightRate { alpha_n: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    Invalid {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// All model parameters together with the derived finite-`n` constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Asymmetry amplitude.
    pub a: f64,
    /// Fugacity-deficit amplitude.
    pub b: f64,
    /// Asymmetry decay exponent (`f64::INFINITY` is accepted and means no asymmetry).
    pub alpha: f64,
    /// Fugacity decay exponent.
    pub beta: f64,
    pub n: u32,
    /// `1 - b / n^beta`.
    pub lambda_n: f64,
    /// `b / n^beta`, kept separately to avoid cancellation in `1 - lambda_n`.
    pub one_minus_lambda: f64,
    /// `a / n^alpha` (zero when `a == 0`).
    pub alpha_n: f64,
    /// Left jump probability `(1 + alpha_n) / 2`.
    pub p_n: f64,
    /// Right jump probability `(1 - alpha_n) / 2`.
    pub q_n: f64,
    /// Mean site occupancy under the geometric product measure.
    pub rho_n: f64,
    /// Time acceleration exponent `2 + 2 beta`.
    pub theta: f64,
    /// Field scaling exponent `beta + 3/2`.
    pub gamma: f64,
    /// Drift constant `b^2 alpha_n n^(theta - 2 beta - 1)`.
    pub c_n: f64,
    /// Diffusion constant `(b^2 / 2) n^(theta - 2 beta - 2) (1 + alpha_n)`.
    pub d_n: f64,
}

impl ModelParams {
    /// Validates the inputs and computes every derived quantity.
    pub fn derive(a: f64, b: f64, alpha: f64, beta: f64, n: u32) -> Result<Self, ParamError> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(ParamError::Invalid {
                name: "a",
                value: a,
                reason: "must be finite and nonnegative",
            });
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ParamError::Invalid {
                name: "beta",
                value: beta,
                reason: "must be finite and positive",
            });
        }
        if !(alpha > 0.0) {
            return Err(ParamError::Invalid {
                name: "alpha",
                value: alpha,
                reason: "must be positive",
            });
        }
        if n == 0 {
            return Err(ParamError::Invalid {
                name: "n",
                value: 0.0,
                reason: "must be a positive integer",
            });
        }
        // a = 0 stands for alpha = infinity, so any exponent is acceptable then.
        if a > 0.0 && alpha < 1.0 {
            return Err(ParamError::ExcludedAsymmetryRegime { alpha });
        }
        let nf = f64::from(n);
        let bound = nf.powf(beta);
        if !(b > 0.0 && b < bound) {
            return Err(ParamError::FugacityOutOfRange { b, bound });
        }
        let alpha_n = if a == 0.0 { 0.0 } else { a / nf.powf(alpha) };
        if alpha_n >= 1.0 {
            return Err(ParamError::NonPositiveRightRate { alpha_n });
        }

        let one_minus_lambda = b / bound;
        let lambda_n = 1.0 - one_minus_lambda;
        let theta = 2.0 + 2.0 * beta;
        let gamma = beta + 1.5;
        // p_n lies in [1/2, 1), so 1 - p_n is exact and p_n + q_n == 1 bit for bit.
        let p_n = (1.0 + alpha_n) / 2.0;
        Ok(Self {
            a,
            b,
            alpha,
            beta,
            n,
            lambda_n,
            one_minus_lambda,
            alpha_n,
            p_n,
            q_n: 1.0 - p_n,
            rho_n: lambda_n / one_minus_lambda,
            theta,
            gamma,
            c_n: b * b * alpha_n * nf.powf(theta - 2.0 * beta - 1.0),
            d_n: 0.5 * b * b * nf.powf(theta - 2.0 * beta - 2.0) * (1.0 + alpha_n),
        })
    }

    /// `n` as a float.
    #[inline]
    pub fn nf(&self) -> f64 {
        f64::from(self.n)
    }

    /// Time acceleration `n^theta`.
    #[inline]
    pub fn time_scale(&self) -> f64 {
        self.nf().powf(self.theta)
    }

    /// Mean drift of every bond current per unit macroscopic time, `n^theta alpha_n lambda_n`.
    ///
    /// Under the invariant measure `E[J_t(x)] = -drift_velocity() * t`.
    #[inline]
    pub fn drift_velocity(&self) -> f64 {
        self.time_scale() * self.alpha_n * self.lambda_n
    }

    /// Boltzmann-Gibbs projection coefficient `(1 + rho_n)^-2`, equal to `b^2 / n^(2 beta)`.
    #[inline]
    pub fn bg_coefficient(&self) -> f64 {
        self.one_minus_lambda * self.one_minus_lambda
    }

    /// Single-site occupation variance `lambda / (1 - lambda)^2`.
    #[inline]
    pub fn site_variance(&self) -> f64 {
        self.lambda_n / (self.one_minus_lambda * self.one_minus_lambda)
    }

    /// Robin coefficient for which the border term of the closed martingale problem vanishes.
    #[inline]
    pub fn matched_robin_kappa(&self) -> f64 {
        2.0 * self.a
    }

    /// Returns a copy with `n` replaced, re-validating everything.
    pub fn with_n(&self, n: u32) -> Result<Self, ParamError> {
        Self::derive(self.a, self.b, self.alpha, self.beta, n)
    }
}
