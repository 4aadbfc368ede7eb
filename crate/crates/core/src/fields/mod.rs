//! Current and corrected fluctuation fields.
//!
//! For a test function `f`,
//! `Z_t(f) = n^-gamma sum_{x>=0} Jbar_t(x) f(x/n)` and
//! `X_t(f) = Z_t(f) + n^(1-gamma) sum_{x>=1} (eta_0(x) - rho_n) F(x/n)`.
//! [`FieldObserver`] tracks `X_t(f)`, `X_t(f')`, `X_t(f'')`, their exact running
//! time integrals and the predictable bracket of the current martingale.

pub mod jet;
pub mod testfn;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Configuration, FlagChange};
use crate::dynamics::{CurrentLedger, Event, Observer, SimState};
use crate::params::ModelParams;

pub use testfn::{BcClass, Shape, TestFnError, TestFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("test function support reaches site {needed} but the lattice ends at {len}")]
    SupportViolation { needed: usize, len: usize },
    #[error("sample time {time} lies beyond the horizon {horizon}")]
    ScheduleBeyondHorizon { time: f64, horizon: f64 },
}

/// `n [f((x+1)/n) - f(x/n)]`.
#[inline]
pub fn discrete_gradient<F: Fn(f64) -> f64>(f: F, n: f64, x: i64) -> f64 {
    n * (f((x + 1) as f64 / n) - f(x as f64 / n))
}

/// `n^2 [f((x+1)/n) - 2 f(x/n) + f((x-1)/n)]`.
#[inline]
pub fn discrete_laplacian<F: Fn(f64) -> f64>(f: F, n: f64, x: i64) -> f64 {
    n * n * (f((x + 1) as f64 / n) - 2.0 * f(x as f64 / n) + f((x - 1) as f64 / n))
}

/// Last site carrying a nonzero weight, `ceil(n * support_right)`.
pub fn support_sites(f: &TestFunction, n: u32) -> usize {
    (f64::from(n) * f.support_right()).ceil() as usize
}

/// Checks that the support stays strictly inside the lattice `{1, ..., len}`.
pub fn check_support(f: &TestFunction, n: u32, len: usize) -> Result<usize, FieldError> {
    let needed = support_sites(f, n);
    if needed + 1 > len {
        Err(FieldError::SupportViolation { needed, len })
    } else {
        Ok(needed)
    }
}

/// `Z_t(f)` from scratch.
pub fn eval_z(
    ledger: &CurrentLedger,
    params: &ModelParams,
    t: f64,
    f: &TestFunction,
) -> Result<f64, FieldError> {
    let k = check_support(f, params.n, ledger.lattice_len())?;
    let nf = params.nf();
    let v = params.drift_velocity();
    let s: f64 = (0..=k)
        .map(|x| (ledger.get(x) as f64 + v * t) * f.f(x as f64 / nf))
        .sum();
    Ok(s * nf.powf(-params.gamma))
}

/// Initial-field correction `n^(1-gamma) sum_{x>=1} (eta_0(x) - rho_n) H(x/n)` for a given antiderivative `H`.
pub fn initial_term<H: Fn(f64) -> f64>(
    config0: &Configuration,
    params: &ModelParams,
    last_site: usize,
    antiderivative: H,
) -> f64 {
    let nf = params.nf();
    let s: f64 = (1..=last_site.min(config0.len()))
        .map(|x| (config0.get(x) as f64 - params.rho_n) * antiderivative(x as f64 / nf))
        .sum();
    s * nf.powf(1.0 - params.gamma)
}

/// `X_0(f)`: the initial-field term alone.
pub fn eval_x0(config0: &Configuration, params: &ModelParams, f: &TestFunction) -> Result<f64, FieldError> {
    let k = check_support(f, params.n, config0.len())?;
    Ok(initial_term(config0, params, k, |u| f.antiderivative(u)))
}

/// `X_t(f)` from scratch.
pub fn eval_x(
    ledger: &CurrentLedger,
    config0: &Configuration,
    params: &ModelParams,
    t: f64,
    f: &TestFunction,
) -> Result<f64, FieldError> {
    Ok(eval_z(ledger, params, t, f)? + eval_x0(config0, params, f)?)
}

/// Unscaled density pairing `sum_{x>=1} (eta(x) - rho_n) f(x/n)`.
pub fn eval_density_field<F: Fn(f64) -> f64>(config: &Configuration, params: &ModelParams, last_site: usize, f: F) -> f64 {
    let nf = params.nf();
    (1..=last_site.min(config.len()))
        .map(|x| (config.get(x) as f64 - params.rho_n) * f(x as f64 / nf))
        .sum()
}

/// Border coefficient `d_n grad_0 f - c_n f(1/n)` multiplying the boundary current.
pub fn border_coefficient(params: &ModelParams, f: &TestFunction) -> f64 {
    let nf = params.nf();
    params.d_n * discrete_gradient(|u| f.f(u), nf, 0) - params.c_n * f.f(1.0 / nf)
}

/// A bond-weighted current sum `sum_x J(x) w(x)` maintained in O(1) per event.
#[derive(Debug, Clone)]
pub struct CurrentSum {
    weights: Vec<f64>,
    weight_total: f64,
    sum: f64,
}

impl CurrentSum {
    /// Weights `w(x)` for bonds `0..weights.len()`; bonds beyond carry zero weight.
    pub fn new(weights: Vec<f64>, ledger: &CurrentLedger) -> Self {
        let sum = weights
            .iter()
            .enumerate()
            .map(|(x, w)| ledger.get(x) as f64 * w)
            .sum();
        Self {
            weight_total: weights.iter().sum(),
            weights,
            sum,
        }
    }

    #[inline]
    pub fn record(&mut self, bond: usize, sign: i64) {
        if let Some(w) = self.weights.get(bond) {
            self.sum += sign as f64 * w;
        }
    }

    /// `sum_x Jbar_t(x) w(x)` given the drift velocity.
    #[inline]
    pub fn centered(&self, drift: f64, t: f64) -> f64 {
        self.sum + drift * t * self.weight_total
    }

    /// `int_{t0}^{t1} sum_x Jbar_s(x) w(x) ds` on a stretch without events.
    #[inline]
    pub fn integral(&self, drift: f64, t0: f64, t1: f64) -> f64 {
        self.sum * (t1 - t0) + drift * self.weight_total * 0.5 * (t1 * t1 - t0 * t0)
    }
}

#[derive(Debug, Clone)]
struct Channel {
    current: CurrentSum,
    init: f64,
    integral: f64,
}

impl Channel {
    fn value(&self, scale: f64, drift: f64, t: f64) -> f64 {
        scale * self.current.centered(drift, t) + self.init
    }

    fn accumulate(&mut self, scale: f64, drift: f64, t0: f64, t1: f64) {
        self.integral += scale * self.current.integral(drift, t0, t1) + self.init * (t1 - t0);
    }
}

/// Sampled field values and running integrals for one test function.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldTrace {
    pub name: String,
    pub times: Vec<f64>,
    /// `X_t(f)`.
    pub x: Vec<f64>,
    /// `X_t(f')`.
    pub x1: Vec<f64>,
    /// `X_t(f'')`.
    pub x2: Vec<f64>,
    /// `int_0^t X_s(f') ds`.
    pub i1: Vec<f64>,
    /// `int_0^t X_s(f'') ds`.
    pub i2: Vec<f64>,
    /// `<M(f)>_t`.
    pub bracket: Vec<f64>,
}

impl FieldTrace {
    /// `R_t = X_t(f) - X_0(f) + A int X(f') - B int X(f'')` at every sample.
    pub fn residual(&self, a: f64, b: f64) -> Vec<f64> {
        let x0 = self.x.first().copied().unwrap_or(0.0);
        (0..self.times.len())
            .map(|k| self.x[k] - x0 + a * self.i1[k] - b * self.i2[k])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Tracked {
    f: TestFunction,
    channels: [Channel; 3],
    // bracket integrand: n^(theta-2gamma) (q lambda f(0)^2 + sum_{x>=1} g(x) w(x))
    site_weights: Vec<f64>,
    boundary_weight: f64,
    occupied_weight: f64,
    bracket: f64,
    trace: FieldTrace,
}

/// Exact incremental observer of `X(f), X(f'), X(f'')`, their integrals and the bracket.
#[derive(Debug, Clone)]
pub struct FieldObserver {
    functions: Vec<TestFunction>,
    schedule: Vec<f64>,
    next: usize,
    cursor: f64,
    scale: f64,
    drift: f64,
    bracket_scale: f64,
    tracked: Vec<Tracked>,
}

impl FieldObserver {
    /// `schedule` must be nondecreasing; samples are recorded when time reaches them.
    pub fn new(functions: Vec<TestFunction>, schedule: Vec<f64>) -> Self {
        assert!(
            schedule.windows(2).all(|w| w[0] <= w[1]),
            "schedule must be sorted"
        );
        Self {
            functions,
            schedule,
            next: 0,
            cursor: 0.0,
            scale: 0.0,
            drift: 0.0,
            bracket_scale: 0.0,
            tracked: Vec::new(),
        }
    }

    /// Rejects schedules extending past the simulation horizon.
    pub fn check_schedule(&self, horizon: f64) -> Result<(), FieldError> {
        match self.schedule.iter().find(|&&s| s > horizon) {
            Some(&time) => Err(FieldError::ScheduleBeyondHorizon { time, horizon }),
            None => Ok(()),
        }
    }

    /// Checks every registered support against a lattice length.
    pub fn check_supports(&self, n: u32, len: usize) -> Result<(), FieldError> {
        for f in &self.functions {
            check_support(f, n, len)?;
        }
        Ok(())
    }

    pub fn traces(&self) -> Vec<&FieldTrace> {
        self.tracked.iter().map(|t| &t.trace).collect()
    }

    pub fn into_traces(self) -> Vec<FieldTrace> {
        self.tracked.into_iter().map(|t| t.trace).collect()
    }

    fn integrate_to(&mut self, t1: f64) {
        let t0 = self.cursor;
        if t1 > t0 {
            for tr in &mut self.tracked {
                for ch in &mut tr.channels {
                    ch.accumulate(self.scale, self.drift, t0, t1);
                }
                tr.bracket += self.bracket_scale * (tr.boundary_weight + tr.occupied_weight) * (t1 - t0);
            }
            self.cursor = t1;
        }
    }

    fn record(&mut self, s: f64) {
        for tr in &mut self.tracked {
            let [c0, c1, c2] = &tr.channels;
            tr.trace.times.push(s);
            tr.trace.x.push(c0.value(self.scale, self.drift, s));
            tr.trace.x1.push(c1.value(self.scale, self.drift, s));
            tr.trace.x2.push(c2.value(self.scale, self.drift, s));
            tr.trace.i1.push(c1.integral);
            tr.trace.i2.push(c2.integral);
            tr.trace.bracket.push(tr.bracket);
        }
    }

    fn sample_until(&mut self, t1: f64) {
        while self.next < self.schedule.len() && self.schedule[self.next] <= t1 {
            let s = self.schedule[self.next].max(self.cursor);
            self.integrate_to(s);
            self.record(s);
            self.next += 1;
        }
        self.integrate_to(t1);
    }
}

impl Observer for FieldObserver {
    fn start(&mut self, state: &SimState) {
        let p = &state.params;
        let nf = p.nf();
        let len = state.len();
        self.scale = nf.powf(-p.gamma);
        self.drift = p.drift_velocity();
        self.bracket_scale = nf.powf(p.theta - 2.0 * p.gamma);
        self.cursor = state.t;
        self.next = self.schedule.partition_point(|&s| s < state.t);
        self.tracked = self
            .functions
            .iter()
            .map(|f| {
                let k = check_support(f, p.n, len).unwrap_or_else(|e| panic!("{e}"));
                let bond_weights = |d: usize| -> Vec<f64> {
                    (0..=k).map(|x| f.derivatives(x as f64 / nf)[d]).collect()
                };
                let inits = [
                    initial_term(&state.initial, p, k, |u| f.antiderivative(u)),
                    initial_term(&state.initial, p, k, |u| f.f(u)),
                    initial_term(&state.initial, p, k, |u| f.df(u)),
                ];
                let channels = [0, 1, 2].map(|d| Channel {
                    current: CurrentSum::new(bond_weights(d), &state.ledger),
                    init: inits[d],
                    integral: 0.0,
                });
                let f2 = |x: usize| f.f(x as f64 / nf).powi(2);
                let site_weights: Vec<f64> = (0..=k + 1)
                    .map(|x| if x == 0 { 0.0 } else { p.q_n * f2(x) + p.p_n * f2(x - 1) })
                    .collect();
                let occupied_weight = (1..site_weights.len())
                    .filter(|&x| state.config.is_occupied(x))
                    .map(|x| site_weights[x])
                    .sum();
                Tracked {
                    f: f.clone(),
                    channels,
                    boundary_weight: p.q_n * p.lambda_n * f2(0),
                    site_weights,
                    occupied_weight,
                    bracket: 0.0,
                    trace: FieldTrace {
                        name: f.name().to_string(),
                        ..FieldTrace::default()
                    },
                }
            })
            .collect();
    }

    fn advance(&mut self, _state: &SimState, _t0: f64, t1: f64) {
        self.sample_until(t1);
    }

    fn event(&mut self, state: &SimState, event: &Event, change: &FlagChange) {
        let (bond, sign) = event.kind.bond(state.len());
        for tr in &mut self.tracked {
            for ch in &mut tr.channels {
                ch.current.record(bond, sign);
            }
            if let Some(x) = change.filled {
                if let Some(w) = tr.site_weights.get(x) {
                    tr.occupied_weight += w;
                }
            }
            if let Some(x) = change.emptied {
                if let Some(w) = tr.site_weights.get(x) {
                    tr.occupied_weight -= w;
                }
            }
        }
    }

    fn finish(&mut self, state: &SimState) {
        self.sample_until(state.t);
        for tr in &self.tracked {
            debug_assert!(tr.f.support_right() >= 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{apply_event, next_event, simulate, EventKind, SimOptions};

    fn params(a: f64, n: u32) -> ModelParams {
        ModelParams::derive(a, 1.0, 1.0, 1.0, n).unwrap()
    }

    #[test]
    fn gradient_and_laplacian_on_polynomials() {
        let n = 7.0;
        for x in 1..20 {
            assert!((discrete_gradient(|u| u, n, x) - 1.0).abs() < 1e-12);
            let g = discrete_gradient(|u| u * u, n, x);
            assert!((g - (2 * x + 1) as f64 / n).abs() < 1e-12);
            let l = discrete_laplacian(|u| u * u, n, x);
            assert!((l - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_taylor_remainder_bound() {
        let f = TestFunction::bump(0.6, 0.4).unwrap();
        let n = 64.0;
        let bound = f.sup_second_derivative() / (2.0 * n);
        for x in 0..80 {
            let err = (discrete_gradient(|u| f.f(u), n, x) - f.df(x as f64 / n)).abs();
            assert!(err <= bound * (1.0 + 1e-9), "x={x}: {err} > {bound}");
        }
    }

    #[test]
    fn zero_function_and_zero_time() {
        let p = params(1.0, 8);
        let s = SimState::equilibrium(p, 40, 3);
        let z = TestFunction::zero();
        assert_eq!(eval_z(&s.ledger, &p, 0.7, &z).unwrap(), 0.0);
        assert_eq!(eval_x(&s.ledger, &s.initial, &p, 0.7, &z).unwrap(), 0.0);
        let f = TestFunction::bump(1.0, 0.5).unwrap();
        assert_eq!(eval_z(&s.ledger, &p, 0.0, &f).unwrap(), 0.0);
    }

    #[test]
    fn injected_mean_density_gives_zero_initial_field() {
        // rho_n is an integer at b = 1, beta = 1, n = 10
        let p = params(0.0, 10);
        let c = Configuration::from_occupancies(&vec![9; 40]);
        let f = TestFunction::bump(1.0, 0.8).unwrap();
        assert!(eval_x0(&c, &p, &f).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_create_left_hand_computation() {
        let p = params(1.0, 8);
        let mut s = SimState::new(p, Configuration::empty(40), 1);
        apply_event(
            &mut s,
            &Event {
                kind: EventKind::CreateLeft,
                time_increment: 0.001,
            },
        );
        let t = 0.002;
        let f = TestFunction::robin(2.0, 1.5).unwrap();
        let nf = p.nf();
        let v = p.drift_velocity();
        let tail: f64 = (1..=12).map(|x| f.f(x as f64 / nf)).sum();
        let expect = nf.powf(-p.gamma) * ((1.0 + v * t) * f.f(0.0) + v * t * tail);
        let got = eval_z(&s.ledger, &p, t, &f).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.abs());
    }

    #[test]
    fn support_violation_is_rejected() {
        let p = params(1.0, 8);
        let s = SimState::equilibrium(p, 10, 3);
        let f = TestFunction::bump(1.0, 0.5).unwrap();
        assert!(matches!(
            eval_z(&s.ledger, &p, 0.0, &f),
            Err(FieldError::SupportViolation { .. })
        ));
    }

    #[test]
    fn density_identity_holds_along_a_trajectory() {
        let p = params(1.0, 8);
        let f = TestFunction::robin(2.0, 1.5).unwrap();
        let mut s = SimState::equilibrium(p, 40, 17);
        let nf = p.nf();
        let k = support_sites(&f, p.n);
        for step in 0..20_000 {
            let ev = next_event(&mut s);
            apply_event(&mut s, &ev);
            if step % 997 == 0 {
                let lhs = eval_density_field(&s.config, &p, k + 1, |u| f.f(u));
                let init = eval_density_field(&s.initial, &p, k + 1, |u| f.f(u));
                let grad: f64 = (1..=k)
                    .map(|x| s.centered_current(x) * discrete_gradient(|u| f.f(u), nf, x as i64))
                    .sum::<f64>()
                    / nf;
                let rhs = init + grad + f.f(1.0 / nf) * s.centered_current(0);
                assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn density_field_matches_brute_force() {
        let p = params(0.0, 8);
        let c = crate::config::sample_equilibrium(&p, 30, 5);
        let f = |u: f64| (u * 3.0).sin();
        let mut brute = 0.0;
        for (i, &k) in c.sites().iter().enumerate() {
            brute += (k as f64 - p.rho_n) * f((i + 1) as f64 / 8.0);
        }
        assert!((eval_density_field(&c, &p, 30, f) - brute).abs() < 1e-9);
    }

    #[test]
    fn observer_agrees_with_recomputation_and_riemann_sums() {
        let p = params(1.0, 8);
        let f = TestFunction::robin(2.0, 1.5).unwrap();
        let horizon = 0.02;
        let schedule: Vec<f64> = (0..=8).map(|k| horizon * k as f64 / 8.0).collect();
        let mut obs = FieldObserver::new(vec![f.clone()], schedule.clone());
        let out = simulate(p, 40, horizon, 9, &SimOptions::default(), &mut obs);
        let trace = &obs.traces()[0];
        assert_eq!(trace.times, schedule);
        let last = trace.len() - 1;
        let scratch = eval_x(&out.state.ledger, &out.state.initial, &p, horizon, &f).unwrap();
        assert!((trace.x[last] - scratch).abs() <= 1e-9 * scratch.abs().max(1.0));
        assert_eq!(trace.i1[0], 0.0);
        assert_eq!(trace.bracket[0], 0.0);
        assert!(out.state.event_count > 1000);
    }

    #[derive(Default)]
    struct Riemann {
        f: Option<TestFunction>,
        substeps: usize,
        i1: f64,
    }

    impl Observer for Riemann {
        fn advance(&mut self, s: &SimState, t0: f64, t1: f64) {
            let f = self.f.as_ref().unwrap();
            let h = (t1 - t0) / self.substeps as f64;
            for j in 0..self.substeps {
                let tm = t0 + (j as f64 + 0.5) * h;
                let z: f64 = (0..=support_sites(f, s.params.n))
                    .map(|x| centered_at(s, x, tm) * f.df(x as f64 / s.params.nf()))
                    .sum::<f64>()
                    * s.params.nf().powf(-s.params.gamma);
                let init = initial_term(&s.initial, &s.params, support_sites(f, s.params.n), |u| f.f(u));
                self.i1 += (z + init) * h;
            }
        }
    }

    fn centered_at(s: &SimState, x: usize, t: f64) -> f64 {
        s.ledger.get(x) as f64 + s.params.drift_velocity() * t
    }

    #[test]
    fn exact_integral_matches_midpoint_refinement() {
        let p = params(1.0, 4);
        let f = TestFunction::robin(2.0, 1.5).unwrap();
        let horizon = 0.01;
        let mut obs = FieldObserver::new(vec![f.clone()], vec![horizon]);
        let mut riemann = Riemann {
            f: Some(f),
            substeps: 1000,
            i1: 0.0,
        };
        simulate(p, 20, horizon, 2, &SimOptions::default(), &mut (&mut obs, &mut riemann));
        let exact = obs.traces()[0].i1[0];
        // the integrand is linear on each stretch, so the midpoint rule is exact up to rounding
        assert!((exact - riemann.i1).abs() < 1e-9 * exact.abs().max(1e-3));
    }

    #[test]
    fn zero_event_stretch_integrates_constant() {
        let p = params(1.0, 8);
        let f = TestFunction::robin(2.0, 1.5).unwrap();
        let s = SimState::equilibrium(p, 40, 1);
        let mut obs = FieldObserver::new(vec![f.clone()], vec![0.0, 1e-6]);
        obs.start(&s);
        obs.advance(&s, 0.0, 1e-6);
        let tr = obs.traces()[0].clone();
        let x1_0 = tr.x1[0];
        let x1_1 = tr.x1[1];
        let expect = 0.5 * (x1_0 + x1_1) * 1e-6;
        assert!((tr.i1[1] - expect).abs() < 1e-15 + 1e-12 * expect.abs());
    }

    #[test]
    fn frozen_all_occupied_bracket() {
        let p = params(1.0, 8);
        let f = TestFunction::robin(2.0, 1.5).unwrap();
        let s = SimState::new(p, Configuration::from_occupancies(&vec![1; 40]), 1);
        let mut obs = FieldObserver::new(vec![f.clone()], vec![0.5]);
        obs.start(&s);
        obs.advance(&s, 0.0, 0.5);
        let nf = p.nf();
        let k = support_sites(&f, p.n);
        let sum_f2: f64 = (0..=k).map(|x| f.f(x as f64 / nf).powi(2)).sum();
        // q lambda f(0)^2 replaces q f(0)^2 at the virtual site 0
        let correction = p.q_n * (p.lambda_n - 1.0) * f.f(0.0).powi(2);
        let expect = nf.powf(p.theta - 2.0 * p.gamma) * (sum_f2 + correction) * 0.5;
        let got = obs.traces()[0].bracket[0];
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn border_coefficient_vanishes_for_matched_robin() {
        // c_n f(1/n) ~ d_n grad_0 f when f'(0) = 2a f(0)
        let coeffs: Vec<f64> = [16u32, 64, 256]
            .iter()
            .map(|&n| {
                let p = params(1.0, n);
                border_coefficient(&p, &TestFunction::robin(2.0, 1.5).unwrap()).abs()
            })
            .collect();
        assert!(coeffs[1] < coeffs[0] && coeffs[2] < coeffs[1]);
    }
}
