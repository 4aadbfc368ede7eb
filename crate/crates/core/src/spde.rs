//! Reference integrator for the linear stochastic heat equation on a half-line.
//!
//! The equation is understood through its martingale problem: for admissible `f`,
//! `X_t(f) + A int X_s(f') ds - B int X_s(f'') ds` is a martingale with bracket
//! `2 t int f^2`. In strong form this is `dX = (A X' + B X'') dt + sqrt(2) dW`, so a
//! positive `A` transports mass toward the origin.
//!
//! The grid is cell-centred, `x_i = (i + 1/2) h` for `i < M/h`. The origin carries a
//! ghost cell `X_{-1} = g X_0`, the far end a reflecting ghost `X_N = X_{N-1}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{BcClass, FieldTrace, TestFunction};
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpdeError {
    #[error("invalid SPDE parameter {name} = {value}: {reason}")]
    Invalid {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("Robin ghost cell degenerates: |kappa h| = {product} must stay below 1")]
    GhostDegenerate { product: f64 },
    #[error("drift CFL violated: |A| tau / h = {courant} exceeds 1")]
    Courant { courant: f64 },
    #[error("initial field has {got} cells, grid has {expected}")]
    GridMismatch { got: usize, expected: usize },
    #[error("solution blew up at step {step} (t = {t}): max |X| = {norm:e}")]
    BlowUp { step: usize, t: f64, norm: f64 },
    #[error("test function {name} reaches {support} beyond the domain length {domain}")]
    SupportOutsideDomain {
        name: String,
        support: f64,
        domain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResidualError {
    #[error("trace {name} has ragged channels")]
    MissingChannel { name: String },
}

/// Boundary condition imposed on the field at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpdeBc {
    /// `X'(0) = 0`.
    Neumann,
    /// `X'(0) = kappa X(0)`.
    Robin(f64),
}

impl SpdeBc {
    /// Strong-form condition making `f` of class `class` admissible for drift `a` and diffusion `b`.
    ///
    /// Integrating the weak form by parts leaves the boundary term
    /// `f(0) (A X(0) + B X'(0)) - B X(0) f'(0)`, which vanishes for `f'(0) = k f(0)` when
    /// `X'(0) = (k - A/B) X(0)`.
    pub fn matched(class: BcClass, a: f64, b: f64) -> Option<SpdeBc> {
        let k = match class {
            BcClass::Neumann => 0.0,
            BcClass::Robin(k) => k,
            BcClass::Unconstrained => return None,
        };
        let kappa = k - a / b;
        Some(if kappa == 0.0 { SpdeBc::Neumann } else { SpdeBc::Robin(kappa) })
    }

    fn kappa(self) -> f64 {
        match self {
            SpdeBc::Neumann => 0.0,
            SpdeBc::Robin(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeParams {
    /// Drift coefficient `A`.
    pub a: f64,
    /// Diffusion coefficient `B`.
    pub b: f64,
    pub bc: SpdeBc,
    /// Cell width.
    pub h: f64,
    /// Domain length.
    pub m: f64,
    /// Time step.
    pub tau: f64,
}

impl SpdeParams {
    /// Limit coefficients for the particle system: `A = a b^2` when `alpha = 1`, else 0; `B = b^2/2`.
    ///
    /// The boundary condition is left Neumann and should be matched to the test function.
    pub fn limit_of(model: &ModelParams, h: f64, m: f64, tau: f64) -> Self {
        let a = if model.alpha == 1.0 { model.a * model.b * model.b } else { 0.0 };
        Self {
            a,
            b: 0.5 * model.b * model.b,
            bc: SpdeBc::Neumann,
            h,
            m,
            tau,
        }
    }

    pub fn cells(&self) -> usize {
        (self.m / self.h).round() as usize
    }

    /// Cell centre `(i + 1/2) h`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    /// Ghost factor `g` in `X_{-1} = g X_0`.
    ///
    /// Centred differences at the cell face `x = 0` give `(1 - kappa h/2) / (1 + kappa h/2)`.
    pub fn ghost_factor(&self) -> f64 {
        let kh = 0.5 * self.bc.kappa() * self.h;
        (1.0 - kh) / (1.0 + kh)
    }

    pub fn validate(&self) -> Result<(), SpdeError> {
        let positive = |name, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(SpdeError::Invalid {
                    name,
                    value,
                    reason: "must be finite and positive",
                })
            }
        };
        positive("h", self.h)?;
        positive("m", self.m)?;
        positive("tau", self.tau)?;
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(SpdeError::Invalid {
                name: "b",
                value: self.b,
                reason: "must be finite and nonnegative",
            });
        }
        if !self.a.is_finite() {
            return Err(SpdeError::Invalid {
                name: "a",
                value: self.a,
                reason: "must be finite",
            });
        }
        if self.cells() < 2 {
            return Err(SpdeError::Invalid {
                name: "m",
                value: self.m,
                reason: "domain must hold at least two cells",
            });
        }
        let product = (self.bc.kappa() * self.h).abs();
        if !(product < 1.0) {
            return Err(SpdeError::GhostDegenerate { product });
        }
        let courant = self.a.abs() * self.tau / self.h;
        if courant > 1.0 {
            return Err(SpdeError::Courant { courant });
        }
        Ok(())
    }
}

/// Tridiagonal matrix stored by diagonals; `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * x[i + 1];
            }
            out[i] = v;
        }
    }
}

/// Second differences with the boundary ghosts, `(Delta_h X)_i`.
pub fn laplacian(params: &SpdeParams) -> Result<Tridiagonal, SpdeError> {
    params.validate()?;
    let n = params.cells();
    let s = 1.0 / (params.h * params.h);
    let mut op = Tridiagonal::zeros(n);
    for i in 0..n {
        op.lower[i] = s;
        op.upper[i] = s;
        op.diag[i] = -2.0 * s;
    }
    op.diag[0] += params.ghost_factor() * s;
    op.diag[n - 1] += s;
    Ok(op)
}

/// Upwind first differences for transport at velocity `-A`.
pub fn upwind_gradient(params: &SpdeParams) -> Result<Tridiagonal, SpdeError> {
    params.validate()?;
    let n = params.cells();
    let s = 1.0 / params.h;
    let mut op = Tridiagonal::zeros(n);
    if params.a >= 0.0 {
        // forward difference; the far ghost equals the last cell
        for i in 0..n - 1 {
            op.diag[i] = -s;
            op.upper[i] = s;
        }
    } else {
        for i in 0..n {
            op.diag[i] = s;
            op.lower[i] = -s;
        }
        op.diag[0] -= params.ghost_factor() * s;
    }
    Ok(op)
}

/// Full generator `B Delta_h + A nabla_h` with the drift upwinded.
pub fn build_operator(params: &SpdeParams) -> Result<Tridiagonal, SpdeError> {
    let lap = laplacian(params)?;
    let grad = upwind_gradient(params)?;
    let n = lap.len();
    let mut op = Tridiagonal::zeros(n);
    for i in 0..n {
        op.lower[i] = params.b * lap.lower[i] + params.a * grad.lower[i];
        op.diag[i] = params.b * lap.diag[i] + params.a * grad.diag[i];
        op.upper[i] = params.b * lap.upper[i] + params.a * grad.upper[i];
    }
    Ok(op)
}

/// Pre-factored Thomas solver for a fixed tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct ThomasSolver {
    lower: Vec<f64>,
    upper_star: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl ThomasSolver {
    pub fn new(m: &Tridiagonal) -> Self {
        let n = m.len();
        let mut upper_star = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = m.diag[i] - if i > 0 { m.lower[i] * prev } else { 0.0 };
            inv_pivot[i] = 1.0 / pivot;
            upper_star[i] = if i + 1 < n { m.upper[i] * inv_pivot[i] } else { 0.0 };
            prev = upper_star[i];
        }
        Self {
            lower: m.lower.clone(),
            upper_star,
            inv_pivot,
        }
    }

    /// Solves in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_star[i] * rhs[i + 1];
        }
    }
}

/// Cell values of the field at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub t: f64,
    pub h: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(params: &SpdeParams) -> Self {
        Self {
            t: 0.0,
            h: params.h,
            values: vec![0.0; params.cells()],
        }
    }

    /// Samples `u` at cell centres.
    pub fn from_fn<U: Fn(f64) -> f64>(params: &SpdeParams, u: U) -> Self {
        Self {
            t: 0.0,
            h: params.h,
            values: (0..params.cells()).map(|i| u(params.center(i))).collect(),
        }
    }

    /// Independent cell values of variance `1/h`, the grid version of unit white noise.
    pub fn white_noise(params: &SpdeParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = params.h.recip().sqrt();
        Self {
            t: 0.0,
            h: params.h,
            values: (0..params.cells())
                .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect(),
        }
    }

    /// Midpoint pairing `h sum X_i w_i`.
    pub fn pair(&self, weights: &[f64]) -> f64 {
        self.h * self.values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct SheOptions {
    /// Multiplier on the `sqrt(2)` noise; 0 gives the deterministic flow.
    pub noise: f64,
    /// Record field traces every this many steps.
    pub record_every: usize,
    /// Snapshot times of the full grid field.
    pub snapshots: Vec<f64>,
    pub functions: Vec<TestFunction>,
    /// Abort once `max |X|` exceeds this value.
    pub blowup: f64,
}

impl Default for SheOptions {
    fn default() -> Self {
        Self {
            noise: 1.0,
            record_every: 1,
            snapshots: Vec::new(),
            functions: Vec::new(),
            blowup: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SheRun {
    pub field: GridField,
    pub steps: usize,
    pub traces: Vec<FieldTrace>,
    pub snapshots: Vec<GridField>,
}

struct Tracker {
    w: [Vec<f64>; 3],
    // discrete bracket rate 2 noise^2 h sum f_i^2
    qv_rate: f64,
    trace: FieldTrace,
    i1: f64,
    i2: f64,
}

impl Tracker {
    fn record(&mut self, x: &GridField) {
        let tr = &mut self.trace;
        tr.times.push(x.t);
        tr.x.push(x.pair(&self.w[0]));
        tr.x1.push(x.pair(&self.w[1]));
        tr.x2.push(x.pair(&self.w[2]));
        tr.i1.push(self.i1);
        tr.i2.push(self.i2);
        tr.bracket.push(self.qv_rate * x.t);
    }
}

/// Semi-implicit Euler-Maruyama: `(I - tau B Delta_h) X^{k+1} = X^k + tau A nabla_h X^k + sqrt(2 tau / h) xi`.
///
/// Traces accumulate `int X(f')` with the explicit state and `int X(f'')` with the implicit one,
/// so the residual of the scheme is exactly a martingale when the weights are the discrete adjoint.
pub fn integrate_she(
    params: &SpdeParams,
    x0: &GridField,
    horizon: f64,
    seed: u64,
    opts: &SheOptions,
) -> Result<SheRun, SpdeError> {
    params.validate()?;
    let n = params.cells();
    if x0.values.len() != n {
        return Err(SpdeError::GridMismatch {
            got: x0.values.len(),
            expected: n,
        });
    }
    for f in &opts.functions {
        if f.support_right() > params.m {
            return Err(SpdeError::SupportOutsideDomain {
                name: f.name().to_string(),
                support: f.support_right(),
                domain: params.m,
            });
        }
    }
    let steps = (horizon / params.tau).round() as usize;
    let lap = laplacian(params)?;
    let grad = upwind_gradient(params)?;
    let mut implicit = Tridiagonal::zeros(n);
    for i in 0..n {
        implicit.lower[i] = -params.tau * params.b * lap.lower[i];
        implicit.diag[i] = 1.0 - params.tau * params.b * lap.diag[i];
        implicit.upper[i] = -params.tau * params.b * lap.upper[i];
    }
    let solver = ThomasSolver::new(&implicit);
    let noise_sd = opts.noise * (2.0 * params.tau / params.h).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut trackers: Vec<Tracker> = opts
        .functions
        .iter()
        .map(|f| {
            let w = [0, 1, 2].map(|d| (0..n).map(|i| f.derivatives(params.center(i))[d]).collect::<Vec<_>>());
            let qv_rate = 2.0 * opts.noise * opts.noise * params.h * w[0].iter().map(|v| v * v).sum::<f64>();
            Tracker {
                w,
                qv_rate,
                trace: FieldTrace {
                    name: f.name().to_string(),
                    ..FieldTrace::default()
                },
                i1: 0.0,
                i2: 0.0,
            }
        })
        .collect();

    let mut x = GridField {
        t: 0.0,
        h: params.h,
        values: x0.values.clone(),
    };
    let mut snaps = Vec::new();
    let mut next_snap = 0;
    let take_snaps = |x: &GridField, next: &mut usize, out: &mut Vec<GridField>| {
        while *next < opts.snapshots.len() && opts.snapshots[*next] <= x.t + 0.5 * params.tau {
            out.push(x.clone());
            *next += 1;
        }
    };
    for tr in &mut trackers {
        tr.record(&x);
    }
    take_snaps(&x, &mut next_snap, &mut snaps);

    let mut drift = vec![0.0; n];
    let every = opts.record_every.max(1);
    for step in 1..=steps {
        grad.apply(&x.values, &mut drift);
        for tr in &mut trackers {
            tr.i1 += params.tau * x.pair(&tr.w[1]);
        }
        for (v, d) in x.values.iter_mut().zip(&drift) {
            *v += params.tau * params.a * d;
            if noise_sd != 0.0 {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sd * xi;
            }
        }
        solver.solve(&mut x.values);
        x.t = step as f64 * params.tau;
        for tr in &mut trackers {
            tr.i2 += params.tau * x.pair(&tr.w[2]);
        }
        let norm = x.max_abs();
        if !(norm <= opts.blowup) {
            return Err(SpdeError::BlowUp { step, t: x.t, norm });
        }
        if step % every == 0 || step == steps {
            for tr in &mut trackers {
                tr.record(&x);
            }
        }
        take_snaps(&x, &mut next_snap, &mut snaps);
    }
    Ok(SheRun {
        field: x,
        steps,
        traces: trackers.into_iter().map(|t| t.trace).collect(),
        snapshots: snaps,
    })
}

/// `R_t = X_t(f) - X_0(f) + A I'(t) - B I''(t)`.
pub fn martingale_residual(trace: &FieldTrace, a: f64, b: f64) -> Result<Vec<f64>, ResidualError> {
    let k = trace.times.len();
    if [trace.x.len(), trace.x1.len(), trace.x2.len(), trace.i1.len(), trace.i2.len()]
        .iter()
        .any(|&l| l != k)
    {
        return Err(ResidualError::MissingChannel {
            name: trace.name.clone(),
        });
    }
    Ok(trace.residual(a, b))
}

/// Particle residual with the exact finite-`n` constants `c_n`, `d_n`.
pub fn particle_residual(trace: &FieldTrace, params: &ModelParams) -> Result<Vec<f64>, ResidualError> {
    martingale_residual(trace, params.c_n, params.d_n)
}

/// Ensemble summary of the residual at the final sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualQv {
    pub t: f64,
    /// Ensemble variance of `R_t`.
    pub variance: crate::stats::Estimate,
    /// Mean realized quadratic variation `sum (dR)^2`.
    pub realized: crate::stats::Estimate,
    /// Mean predictable bracket.
    pub bracket: crate::stats::Estimate,
}

/// Variance, realized and predictable quadratic variation of residuals at the last common sample.
pub fn residual_qv(residuals: &[Vec<f64>], brackets: &[f64], t: f64) -> ResidualQv {
    use crate::stats::Estimate;
    let finals: Vec<f64> = residuals.iter().map(|r| r.last().copied().unwrap_or(0.0)).collect();
    let realized: Vec<f64> = residuals
        .iter()
        .map(|r| r.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum())
        .collect();
    ResidualQv {
        t,
        variance: Estimate::variance_of(&finals),
        realized: Estimate::mean_of(&realized),
        bracket: Estimate::mean_of(brackets),
    }
}

/// Runs `replicas` independent SPDE paths from zero and summarizes the residual of `f`.
pub fn spde_residual_qv(
    params: &SpdeParams,
    f: &TestFunction,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<ResidualQv, SpdeError> {
    if replicas < 4 {
        return Err(SpdeError::Invalid {
            name: "replicas",
            value: replicas as f64,
            reason: "need at least 4 replicas for a variance error",
        });
    }
    let opts = SheOptions {
        functions: vec![f.clone()],
        ..SheOptions::default()
    };
    let x0 = GridField::zeros(params);
    let runs = crate::replica::run_replicas(replicas, seed, |_, s| integrate_she(params, &x0, horizon, s, &opts));
    let mut residuals = Vec::with_capacity(replicas);
    let mut brackets = Vec::with_capacity(replicas);
    for run in runs {
        let tr = run?.traces.pop().expect("one trace per function");
        brackets.push(*tr.bracket.last().unwrap_or(&0.0));
        residuals.push(martingale_residual(&tr, params.a, params.b).expect("integrator fills every channel"));
    }
    Ok(residual_qv(&residuals, &brackets, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn neumann(h: f64, m: f64, tau: f64) -> SpdeParams {
        SpdeParams {
            a: 0.0,
            b: 0.5,
            bc: SpdeBc::Neumann,
            h,
            m,
            tau,
        }
    }

    #[test]
    fn constant_is_in_the_kernel() {
        let p = neumann(0.05, 2.0, 1e-3);
        let op = build_operator(&p).unwrap();
        let x = vec![3.0; p.cells()];
        let mut out = vec![0.0; x.len()];
        op.apply(&x, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn robin_zero_is_bitwise_neumann() {
        let mut p = neumann(0.01, 3.0, 1e-4);
        p.a = 0.7;
        let a = build_operator(&p).unwrap();
        p.bc = SpdeBc::Robin(0.0);
        assert_eq!(a, build_operator(&p).unwrap());
        p.a = -0.7;
        let c = build_operator(&p).unwrap();
        p.bc = SpdeBc::Neumann;
        assert_eq!(c, build_operator(&p).unwrap());
    }

    #[test]
    fn degenerate_ghost_rejected() {
        let mut p = neumann(0.1, 2.0, 1e-3);
        p.bc = SpdeBc::Robin(10.0);
        assert!(matches!(build_operator(&p), Err(SpdeError::GhostDegenerate { .. })));
        p.bc = SpdeBc::Robin(9.9);
        assert!(build_operator(&p).is_ok());
    }

    #[test]
    fn courant_checked() {
        let mut p = neumann(0.01, 1.0, 0.1);
        p.a = 1.0;
        assert!(matches!(p.validate(), Err(SpdeError::Courant { .. })));
    }

    #[test]
    fn cosine_is_an_eigenvector() {
        let m = 2.0;
        for h in [0.04, 0.02, 0.01] {
            let p = neumann(h, m, 1e-3);
            let op = build_operator(&p).unwrap();
            let k = 3.0 * PI / m;
            let x: Vec<f64> = (0..p.cells()).map(|i| (k * p.center(i)).cos()).collect();
            let mut out = vec![0.0; x.len()];
            op.apply(&x, &mut out);
            let exact = -p.b * k * k;
            let mut worst: f64 = 0.0;
            for (o, v) in out.iter().zip(&x) {
                if v.abs() > 0.2 {
                    worst = worst.max((o / v - exact).abs() / exact.abs());
                }
            }
            // symbol -(4/h^2) sin^2(kh/2) = -k^2 (1 - k^2 h^2 / 12 + ...)
            assert!(worst < 0.1 * k * k * h * h, "h {h}: {worst}");
        }
    }

    #[test]
    fn robin_eigenmode_converges_at_second_order() {
        // X = cos(k (M - x)) with k tan(k M) = kappa is an eigenfunction of B d^2 with X'(0) = kappa X(0)
        let (m, kappa) = (1.0, 0.8);
        let mut lo = 0.0;
        let mut hi = PI / (2.0 * m) - 1e-12;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (mid * m).tan() < kappa {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = 0.5 * (lo + hi);
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&h| {
                let mut p = neumann(h, m, 1e-3);
                p.bc = SpdeBc::Robin(kappa);
                let mut op = laplacian(&p).unwrap();
                for v in op.lower.iter_mut().chain(&mut op.diag).chain(&mut op.upper) {
                    *v = -*v;
                }
                // inverse iteration for the smallest eigenvalue of -Delta_h
                let solver = ThomasSolver::new(&op);
                let mut v = vec![1.0; op.len()];
                let mut mu = 0.0;
                for _ in 0..200 {
                    let mut w = v.clone();
                    solver.solve(&mut w);
                    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                    mu = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
                    v = w.iter().map(|x| x / norm).collect();
                }
                (1.0 / mu - k * k).abs()
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn thomas_matches_dense_product() {
        let p = SpdeParams {
            a: 0.3,
            b: 0.5,
            bc: SpdeBc::Robin(0.4),
            h: 0.1,
            m: 1.0,
            tau: 0.01,
        };
        let mut m = build_operator(&p).unwrap();
        for d in &mut m.diag {
            *d = 1.0 - 0.01 * *d;
        }
        for v in m.lower.iter_mut().chain(m.upper.iter_mut()) {
            *v *= -0.01;
        }
        let x: Vec<f64> = (0..m.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut rhs = vec![0.0; x.len()];
        m.apply(&x, &mut rhs);
        ThomasSolver::new(&m).solve(&mut rhs);
        for (a, b) in rhs.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_constant_is_conserved() {
        let p = neumann(0.05, 2.0, 1e-3);
        let x0 = GridField::from_fn(&p, |_| 1.7);
        let opts = SheOptions {
            noise: 0.0,
            ..SheOptions::default()
        };
        let run = integrate_she(&p, &x0, 0.5, 1, &opts).unwrap();
        assert!(run.field.values.iter().all(|v| (v - 1.7).abs() < 1e-12));
    }

    #[test]
    fn cosine_mode_decays_at_heat_rate() {
        let m = 2.0;
        let p = neumann(0.01, m, 1e-4);
        let k = 2.0 * PI / m;
        let x0 = GridField::from_fn(&p, |x| (k * x).cos());
        let t = 0.2;
        let opts = SheOptions {
            noise: 0.0,
            ..SheOptions::default()
        };
        let run = integrate_she(&p, &x0, t, 1, &opts).unwrap();
        let amp = run.field.pair(&x0.values) / x0.pair(&x0.values);
        let exact = (-p.b * k * k * t).exp();
        assert!((amp / exact - 1.0).abs() < 0.01, "{amp} vs {exact}");
    }

    #[test]
    fn noise_only_cell_variance() {
        let p = SpdeParams {
            a: 0.0,
            b: 0.0,
            bc: SpdeBc::Neumann,
            h: 0.1,
            m: 20.0,
            tau: 0.01,
        };
        let t = 0.3;
        let run = integrate_she(&p, &GridField::zeros(&p), t, 9, &SheOptions::default()).unwrap();
        let v = crate::stats::Estimate::second_moment_of(&run.field.values);
        let expected = 2.0 * t / p.h;
        assert!(v.within_sigmas(expected, 3.0), "{v:?} vs {expected}");
    }

    #[test]
    fn deterministic_given_seed() {
        let p = neumann(0.05, 2.0, 1e-3);
        let x0 = GridField::zeros(&p);
        let a = integrate_she(&p, &x0, 0.05, 4, &SheOptions::default()).unwrap();
        let b = integrate_she(&p, &x0, 0.05, 4, &SheOptions::default()).unwrap();
        let c = integrate_she(&p, &x0, 0.05, 5, &SheOptions::default()).unwrap();
        assert_eq!(a.field, b.field);
        assert_ne!(a.field, c.field);
    }

    #[test]
    fn blowup_is_reported() {
        let p = neumann(0.05, 2.0, 1e-3);
        let x0 = GridField::from_fn(&p, |_| 10.0);
        let opts = SheOptions {
            noise: 0.0,
            blowup: 1.0,
            ..SheOptions::default()
        };
        assert!(matches!(integrate_she(&p, &x0, 0.01, 1, &opts), Err(SpdeError::BlowUp { step: 1, .. })));
    }

    #[test]
    fn deterministic_residual_is_discretization_small() {
        let f = TestFunction::bump(1.0, 0.6).unwrap();
        let p = SpdeParams {
            a: 0.5,
            b: 0.5,
            bc: SpdeBc::Neumann,
            h: 0.01,
            m: 3.0,
            tau: 1e-4,
        };
        let x0 = GridField::from_fn(&p, |x| (-(x - 1.2f64).powi(2) * 4.0).exp());
        let opts = SheOptions {
            noise: 0.0,
            functions: vec![f],
            ..SheOptions::default()
        };
        let run = integrate_she(&p, &x0, 0.2, 1, &opts).unwrap();
        let r = martingale_residual(&run.traces[0], p.a, p.b).unwrap();
        assert_eq!(r[0], 0.0);
        let scale = run.traces[0].x[0].abs();
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 5e-3 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn matched_condition_moves_robin_by_drift() {
        assert_eq!(SpdeBc::matched(BcClass::Neumann, 0.0, 0.5), Some(SpdeBc::Neumann));
        assert_eq!(SpdeBc::matched(BcClass::Robin(2.0), 1.0, 0.5), Some(SpdeBc::Neumann));
        assert_eq!(SpdeBc::matched(BcClass::Robin(1.0), 0.0, 0.5), Some(SpdeBc::Robin(1.0)));
        assert_eq!(SpdeBc::matched(BcClass::Unconstrained, 0.0, 0.5), None);
    }

    #[test]
    fn robin_residual_vanishes_under_matched_drift() {
        // Robin f with kappa = 2a, A = a b^2, B = b^2/2: the field satisfies a Neumann condition
        let (a, b) = (0.5, 1.0);
        let f = TestFunction::robin(2.0 * a, 1.5).unwrap();
        let sp = SpdeParams {
            a: a * b * b,
            b: 0.5 * b * b,
            bc: SpdeBc::matched(f.bc_class(), a * b * b, 0.5 * b * b).unwrap(),
            h: 0.01,
            m: 4.0,
            tau: 1e-4,
        };
        let x0 = GridField::from_fn(&sp, |x| 1.0 + 0.5 * (x * 1.3).cos());
        let opts = SheOptions {
            noise: 0.0,
            functions: vec![f],
            ..SheOptions::default()
        };
        let run = integrate_she(&sp, &x0, 0.1, 1, &opts).unwrap();
        let r = martingale_residual(&run.traces[0], sp.a, sp.b).unwrap();
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 5e-3 * run.traces[0].x[0].abs(), "{worst}");
    }

    #[test]
    fn ragged_trace_rejected() {
        let mut tr = FieldTrace {
            times: vec![0.0, 1.0],
            x: vec![0.0; 2],
            x1: vec![0.0; 2],
            x2: vec![0.0; 2],
            i1: vec![0.0; 2],
            i2: vec![0.0],
            ..FieldTrace::default()
        };
        assert!(martingale_residual(&tr, 1.0, 1.0).is_err());
        tr.i2.push(0.0);
        assert_eq!(martingale_residual(&tr, 1.0, 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn residual_qv_matches_bracket() {
        let f = TestFunction::bump(1.0, 0.6).unwrap();
        let p = neumann(0.02, 3.0, 1e-3);
        let q = spde_residual_qv(&p, &f, 0.1, 400, 17).unwrap();
        let target = 2.0 * 0.1 * f.l2_norm_sq();
        assert!((q.bracket.value / target - 1.0).abs() < 0.01);
        assert!((q.realized.value / target - 1.0).abs() < 0.03, "{q:?}");
        assert!(q.variance.within_sigmas(target, 4.0), "{q:?}");
    }
}
