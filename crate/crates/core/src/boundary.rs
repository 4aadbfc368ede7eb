//! Boundary current: variance growth, Hurst scaling and the mollifier comparison.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FlagChange;
use crate::dynamics::{lattice_length, Event, Observer, SimOptions, SimState};
use crate::fields::{self, FieldError, TestFnError, TestFunction};
use crate::params::ModelParams;
use crate::replica::run_replicas;
use crate::stats::{self, fit_power_law, log_weights, Estimate, PowerFit, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryError {
    #[error("mollifier scale {eps} spans {cells:.2} lattice sites at n = {n}; at least {min} required")]
    Unresolved { eps: f64, n: u32, cells: f64, min: f64 },
    #[error("time grid must be positive and increasing")]
    BadTimeGrid,
    #[error("need at least {0} replicas")]
    TooFewReplicas(usize),
    #[error("Hurst fit needs the time grid to span a decade, got a ratio of {0:.2}")]
    NarrowTimeGrid(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
}

/// `phi_eps(x) = phi(x/eps)/eps` and its tail integral `h_eps(x) = int_x^inf phi_eps`.
#[derive(Debug, Clone)]
pub struct MollifierFamily {
    eps: f64,
    phi: TestFunction,
}

impl MollifierFamily {
    pub fn new(eps: f64) -> Result<Self, BoundaryError> {
        Ok(Self {
            eps,
            phi: TestFunction::mollifier(eps)?,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn phi(&self) -> &TestFunction {
        &self.phi
    }

    pub fn phi_at(&self, x: f64) -> f64 {
        self.phi.f(x)
    }

    pub fn h(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            -self.phi.antiderivative(x)
        }
    }

    /// Number of lattice sites covered by the support at scale `n`.
    pub fn resolution(&self, n: u32) -> f64 {
        f64::from(n) * self.eps
    }

    pub fn check_resolution(&self, n: u32, min: f64) -> Result<(), BoundaryError> {
        let cells = self.resolution(n);
        if cells < min {
            Err(BoundaryError::Unresolved {
                eps: self.eps,
                n,
                cells,
                min,
            })
        } else {
            Ok(())
        }
    }
}

/// Records `Jbar_t(0)` at scheduled times.
#[derive(Debug, Clone)]
pub struct BoundaryCurrentObserver {
    schedule: Vec<f64>,
    next: usize,
    pub samples: Vec<f64>,
}

impl BoundaryCurrentObserver {
    pub fn new(schedule: Vec<f64>) -> Self {
        let samples = Vec::with_capacity(schedule.len());
        Self {
            schedule,
            next: 0,
            samples,
        }
    }

    fn sample_until(&mut self, state: &SimState, t1: f64) {
        let v = state.params.drift_velocity();
        let j = state.ledger.get(0) as f64;
        while self.next < self.schedule.len() && self.schedule[self.next] <= t1 {
            self.samples.push(j + v * self.schedule[self.next]);
            self.next += 1;
        }
    }
}

impl Observer for BoundaryCurrentObserver {
    fn start(&mut self, state: &SimState) {
        self.sample_until(state, state.t);
    }

    fn advance(&mut self, state: &SimState, _t0: f64, t1: f64) {
        self.sample_until(state, t1);
    }

    fn event(&mut self, _state: &SimState, _event: &Event, _change: &FlagChange) {}
}

fn check_grid(times: &[f64]) -> Result<(), BoundaryError> {
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[0] >= w[1]) {
        Err(BoundaryError::BadTimeGrid)
    } else {
        Ok(())
    }
}

/// Lattice long enough that the reservoir at the far end is out of reach by time `t`.
///
/// The macroscopic diffusion constant is `b^2/2`, so four standard deviations are `4 b sqrt(t)`.
pub fn current_lattice_len(params: &ModelParams, t: f64, margin: f64) -> usize {
    lattice_length(params.n, 4.0 * params.b * t.sqrt(), margin)
}

/// `Jbar(0)` paths at `times`, one row per replica.
pub fn boundary_current_paths(
    params: &ModelParams,
    times: &[f64],
    len: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, BoundaryError> {
    check_grid(times)?;
    let horizon = *times.last().expect("nonempty grid");
    let opts = SimOptions::default();
    Ok(run_replicas(replicas, seed, |_, s| {
        let mut obs = BoundaryCurrentObserver::new(times.to_vec());
        crate::dynamics::simulate(*params, len, horizon, s, &opts, &mut obs);
        obs.samples
    }))
}

/// Per-time ensemble summary of `Jbar_t(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentMoments {
    pub t: f64,
    pub mean: Estimate,
    pub variance: Estimate,
}

pub fn moments_from_paths(times: &[f64], paths: &[Vec<f64>], scale: f64) -> Vec<CurrentMoments> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col: Vec<f64> = paths.iter().map(|p| scale * p[k]).collect();
            CurrentMoments {
                t,
                mean: Estimate::mean_of(&col),
                variance: Estimate::variance_of(&col),
            }
        })
        .collect()
}

/// Monte Carlo mean and variance of `Jbar_t(0)` on a time grid, from equilibrium.
pub fn boundary_current_variance(
    params: &ModelParams,
    times: &[f64],
    len: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<CurrentMoments>, BoundaryError> {
    if replicas < 4 {
        return Err(BoundaryError::TooFewReplicas(4));
    }
    let paths = boundary_current_paths(params, times, len, replicas, seed)?;
    Ok(moments_from_paths(times, &paths, 1.0))
}

/// Small-time Poisson approximation `2 n^theta lambda_n q_n t` of `Var[J_t(0)]`.
pub fn poisson_variance(params: &ModelParams, t: f64) -> f64 {
    2.0 * params.time_scale() * params.lambda_n * params.q_n * t
}

/// Variance-versus-time fit; the slope estimates `2H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstFit {
    pub moments: Vec<CurrentMoments>,
    pub fit: PowerFit,
}

impl HurstFit {
    pub fn hurst(&self) -> f64 {
        0.5 * self.fit.exponent
    }
}

/// Fits `log Var` against `log t` from sampled paths, skipping `t = 0`.
pub fn hurst_from_samples(times: &[f64], paths: &[Vec<f64>], scale: f64) -> Result<HurstFit, BoundaryError> {
    check_grid(times)?;
    let moments: Vec<CurrentMoments> = moments_from_paths(times, paths, scale)
        .into_iter()
        .filter(|m| m.t > 0.0)
        .collect();
    let ts: Vec<f64> = moments.iter().map(|m| m.t).collect();
    if let (Some(first), Some(last)) = (ts.first(), ts.last()) {
        if last / first < 10.0 - 1e-9 {
            return Err(BoundaryError::NarrowTimeGrid(last / first));
        }
    }
    let vars: Vec<Estimate> = moments.iter().map(|m| m.variance.clone()).collect();
    let ys: Vec<f64> = vars.iter().map(|e| e.value).collect();
    let w = log_weights(&vars);
    let fit = fit_power_law(&ts, &ys, Some(&w))?;
    Ok(HurstFit { moments, fit })
}

/// Hurst fit of `n^(1-gamma) Jbar_t(0)` for the particle system.
pub fn hurst_scaling(
    params: &ModelParams,
    times: &[f64],
    len: usize,
    replicas: usize,
    seed: u64,
) -> Result<HurstFit, BoundaryError> {
    if replicas < 4 {
        return Err(BoundaryError::TooFewReplicas(4));
    }
    let paths = boundary_current_paths(params, times, len, replicas, seed)?;
    hurst_from_samples(times, &paths, params.nf().powf(1.0 - params.gamma))
}

/// `Cov(B_s, B_t) = (s^2H + t^2H - |t - s|^2H) / 2`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
}

/// Exact fractional Brownian paths on a positive time grid via a Cholesky factor.
pub fn synthetic_fbm(hurst: f64, times: &[f64], replicas: usize, seed: u64) -> Result<Vec<Vec<f64>>, BoundaryError> {
    check_grid(times)?;
    if times[0] <= 0.0 {
        return Err(BoundaryError::BadTimeGrid);
    }
    let k = times.len();
    let cov = DMatrix::from_fn(k, k, |i, j| fbm_covariance(hurst, times[i], times[j]));
    let chol = cov.cholesky().ok_or(BoundaryError::BadTimeGrid)?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..replicas)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            (&l * z).iter().copied().collect()
        })
        .collect())
}

/// Empirical against fractional-Brownian correlation for every pair of grid times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCheck {
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub expected: f64,
}

impl CorrelationCheck {
    pub fn relative_error(&self) -> f64 {
        ((self.empirical - self.expected) / self.expected).abs()
    }
}

/// Correlations are compared rather than covariances, which removes the unknown amplitude.
pub fn fbm_correlation_check(times: &[f64], paths: &[Vec<f64>], hurst: f64) -> Vec<CorrelationCheck> {
    let cols: Vec<Vec<f64>> = (0..times.len()).map(|k| paths.iter().map(|p| p[k]).collect()).collect();
    let var: Vec<f64> = cols.iter().map(|c| stats::sample_variance(c)).collect();
    let mut out = Vec::new();
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            if times[i] <= 0.0 {
                continue;
            }
            let c = stats::covariance(&cols[i], &cols[j]);
            out.push(CorrelationCheck {
                s: times[i],
                t: times[j],
                empirical: c / (var[i] * var[j]).sqrt(),
                expected: fbm_covariance(hurst, times[i], times[j])
                    / (fbm_covariance(hurst, times[i], times[i]) * fbm_covariance(hurst, times[j], times[j])).sqrt(),
            });
        }
    }
    out
}

/// Pathwise decomposition of `n^(1-gamma) Jbar_t(0) - X_t(phi_eps)`.
///
/// With `Err_n = n^-gamma sum_{x>=1} Jbar_t(x) (grad_x h_eps + phi_eps(x/n))`, summation by parts
/// against the continuity relation gives
/// `gap = n^(1-gamma) sum_{x>=1} etabar_t(x) h_eps(x/n) - Err_n + n^(1-gamma) (1 - h_eps(1/n)) Jbar_t(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTerms {
    pub current: f64,
    pub field: f64,
    pub density: f64,
    pub err: f64,
    pub boundary: f64,
}

impl GapTerms {
    pub fn gap(&self) -> f64 {
        self.current - self.field
    }

    /// `gap - (density - err + boundary)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.gap() - (self.density - self.err + self.boundary)
    }
}

pub fn gap_terms(state: &SimState, family: &MollifierFamily) -> Result<GapTerms, BoundaryError> {
    let p = &state.params;
    let nf = p.nf();
    let phi = family.phi();
    let k = fields::check_support(phi, p.n, state.len())?;
    let s = nf.powf(1.0 - p.gamma);
    let j0 = state.centered_current(0);
    let field = fields::eval_x(&state.ledger, &state.initial, p, state.t, phi)?;
    let density = s * fields::eval_density_field(&state.config, p, k, |u| family.h(u));
    let err = nf.powf(-p.gamma)
        * (1..=k)
            .map(|x| {
                let grad = fields::discrete_gradient(|u| family.h(u), nf, x as i64);
                state.centered_current(x) * (grad + family.phi_at(x as f64 / nf))
            })
            .sum::<f64>();
    Ok(GapTerms {
        current: s * j0,
        field,
        density,
        err,
        boundary: s * (1.0 - family.h(1.0 / nf)) * j0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub eps: f64,
    pub gap_second_moment: Estimate,
    pub err_second_moment: Estimate,
    pub max_identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub t: f64,
    pub rows: Vec<GapRow>,
    pub fit: PowerFit,
}

/// `E[(n^(1-gamma) Jbar_t(0) - X_t(phi_eps))^2]` over an `eps` grid, all from the same paths.
pub fn current_field_gap(
    params: &ModelParams,
    eps_grid: &[f64],
    t: f64,
    len: usize,
    replicas: usize,
    seed: u64,
    min_resolution: f64,
) -> Result<GapStudy, BoundaryError> {
    if replicas < 4 {
        return Err(BoundaryError::TooFewReplicas(4));
    }
    let families = eps_grid
        .iter()
        .map(|&e| {
            let fam = MollifierFamily::new(e)?;
            fam.check_resolution(params.n, min_resolution)?;
            fields::check_support(fam.phi(), params.n, len)?;
            Ok(fam)
        })
        .collect::<Result<Vec<_>, BoundaryError>>()?;
    let opts = SimOptions::default();
    let per_replica = run_replicas(replicas, seed, |_, s| {
        let out = crate::dynamics::simulate(*params, len, t, s, &opts, &mut ());
        families
            .iter()
            .map(|f| gap_terms(&out.state, f).expect("supports checked"))
            .collect::<Vec<_>>()
    });
    let rows: Vec<GapRow> = families
        .iter()
        .enumerate()
        .map(|(i, fam)| {
            let terms: Vec<GapTerms> = per_replica.iter().map(|r| r[i]).collect();
            let gaps: Vec<f64> = terms.iter().map(GapTerms::gap).collect();
            let errs: Vec<f64> = terms.iter().map(|g| g.err).collect();
            GapRow {
                eps: fam.eps(),
                gap_second_moment: Estimate::second_moment_of(&gaps),
                err_second_moment: Estimate::second_moment_of(&errs),
                max_identity_residual: terms
                    .iter()
                    .map(|g| g.identity_residual().abs() / g.current.abs().max(g.field.abs()).max(1.0))
                    .fold(0.0, f64::max),
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let est: Vec<Estimate> = rows.iter().map(|r| r.gap_second_moment.clone()).collect();
    let ys: Vec<f64> = est.iter().map(|e| e.value).collect();
    let fit = fit_power_law(&xs, &ys, Some(&log_weights(&est)))?;
    Ok(GapStudy { t, rows, fit })
}
