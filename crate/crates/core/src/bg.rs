//! Block averages and Monte Carlo checks of the first-order Boltzmann-Gibbs principle.
//!
//! The error integrand is `V(eta) = sum_{x>=1} {g(x) - lambda_n - (1+rho_n)^-2 (eta(x) - rho_n)} F_n(x)`.
//! With blocks `B(x) = {x+1, ..., x+l}` it splits telescopically as
//!
//! ```text
//! g(x+1) - g^l(x)  +  g^l(x) - psi^l(x)  +  psi^l(x) - lambda - c (eta^l(x) - rho)  +  c (eta^l(x) - eta(x+1))
//! ```
//!
//! each weighted by `F_n(x+1)`, where `psi^l = S / (S + l - 1)` is the conditional
//! expectation of `g(eta(x+1))` given the block sum `S`.

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{sample_product_geometric, Configuration, FlagChange, Move};
use crate::dynamics::{simulate, Event, Observer, SimOptions, SimState};
use crate::fields::{discrete_gradient, support_sites, TestFunction};
use crate::params::ModelParams;
use crate::replica::run_replicas;
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BgError {
    #[error("block {x}+1..={x}+{l} overruns the lattice of length {len}")]
    BlockOverrun { x: usize, l: usize, len: usize },
    #[error("block length must be positive")]
    ZeroBlock,
    #[error("{replicas} replicas give relative error {achieved:.3}, above the requested {target:.3}")]
    InsufficientReplicas {
        replicas: usize,
        achieved: f64,
        target: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub l: usize,
    /// `S(x) = sum_{y=1}^{l} eta(x+y)`.
    pub sum: u64,
    pub g_block: f64,
    pub eta_block: f64,
}

/// Block averages over the sites `x+1, ..., x+l`.
pub fn block_averages(config: &Configuration, x: usize, l: usize) -> Result<BlockStats, BgError> {
    if l == 0 {
        return Err(BgError::ZeroBlock);
    }
    if x + l > config.len() {
        return Err(BgError::BlockOverrun {
            x,
            l,
            len: config.len(),
        });
    }
    let (mut sum, mut occ) = (0u64, 0usize);
    for y in x + 1..=x + l {
        let k = config.get(y);
        sum += k;
        occ += usize::from(k > 0);
    }
    Ok(BlockStats {
        l,
        sum,
        g_block: occ as f64 / l as f64,
        eta_block: sum as f64 / l as f64,
    })
}

/// `E[g(eta_1) | eta_1 + ... + eta_l = S]` under any product geometric law: `S / (S + l - 1)`.
#[inline]
pub fn psi_closed_form(sum: u64, l: usize) -> f64 {
    assert!(l >= 1, "block length must be positive");
    if sum == 0 {
        return 0.0;
    }
    sum as f64 / (sum as f64 + l as f64 - 1.0)
}

/// The closed form as an exact fraction.
pub fn psi_closed_form_exact(sum: u64, l: usize) -> Ratio<u128> {
    if sum == 0 {
        return Ratio::from_integer(0);
    }
    Ratio::new(sum as u128, sum as u128 + l as u128 - 1)
}

/// Conditional expectation of `g(eta_1)` given the block sum by exhaustive enumeration
/// of all compositions, each weighted by its geometric(`lambda`) probability.
pub fn psi_brute_force(sum: u64, l: usize, lambda: Ratio<u128>) -> Ratio<u128> {
    assert!(l >= 1);
    let one = Ratio::from_integer(1u128);
    let mut num = Ratio::from_integer(0u128);
    let mut den = Ratio::from_integer(0u128);
    let mut parts = vec![0u64; l];
    fn visit(
        parts: &mut [u64],
        idx: usize,
        left: u64,
        weight: Ratio<u128>,
        lambda: Ratio<u128>,
        one: Ratio<u128>,
        num: &mut Ratio<u128>,
        den: &mut Ratio<u128>,
    ) {
        let l = parts.len();
        if idx == l - 1 {
            parts[idx] = left;
            let w = weight * (one - lambda) * pow(lambda, left);
            *den += w;
            if parts[0] > 0 {
                *num += w;
            }
            return;
        }
        for k in 0..=left {
            parts[idx] = k;
            let w = weight * (one - lambda) * pow(lambda, k);
            visit(parts, idx + 1, left - k, w, lambda, one, num, den);
        }
    }
    fn pow(r: Ratio<u128>, k: u64) -> Ratio<u128> {
        (0..k).fold(Ratio::from_integer(1), |acc, _| acc * r)
    }
    visit(&mut parts, 0, sum, one, lambda, one, &mut num, &mut den);
    num / den
}

/// Weight sequences `F_n(x)`, `x >= 1`, paired with the error integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BgWeight {
    /// `grad^n_{x-1} f`.
    Gradient,
    /// `f(x/n)`.
    Value,
}

impl BgWeight {
    /// `F_n(x)` for `x = 0..=last` (index 0 unused and zero).
    pub fn table(self, f: &TestFunction, n: u32) -> Vec<f64> {
        let nf = f64::from(n);
        let last = support_sites(f, n) + 1;
        (0..=last)
            .map(|x| match (self, x) {
                (_, 0) => 0.0,
                (BgWeight::Gradient, x) => discrete_gradient(|u| f.f(u), nf, x as i64 - 1),
                (BgWeight::Value, x) => f.f(x as f64 / nf),
            })
            .collect()
    }
}

/// `(1/n) sum_x F_n(x)^2`.
pub fn weight_normalization(weights: &[f64], n: u32) -> f64 {
    weights.iter().map(|w| w * w).sum::<f64>() / f64::from(n)
}

/// Per-replica time integrals of the error integrand and, optionally, of its four terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BgIntegrals {
    pub total: f64,
    pub terms: Option<[f64; 4]>,
}

#[derive(Debug, Clone)]
struct Terms {
    l: usize,
    // term values per block start x, for x in 0..weights.len()-1
    values: Vec<[f64; 4]>,
    sums: [f64; 4],
    integrals: [f64; 4],
}

/// Exact event-wise accumulation of `int_0^t V(eta_s) ds`.
#[derive(Debug, Clone)]
pub struct BgObserver {
    weights: Vec<f64>,
    lambda: f64,
    rho: f64,
    c: f64,
    site_values: Vec<f64>,
    value: f64,
    integral: f64,
    terms: Option<Terms>,
}

impl BgObserver {
    /// `weights[x] = F_n(x)`; `block` enables the four-term decomposition.
    pub fn new(weights: Vec<f64>, params: &ModelParams, block: Option<usize>) -> Self {
        Self {
            weights,
            lambda: params.lambda_n,
            rho: params.rho_n,
            c: params.bg_coefficient(),
            site_values: Vec::new(),
            value: 0.0,
            integral: 0.0,
            terms: block.map(|l| {
                assert!(l >= 1, "block length must be positive");
                Terms {
                    l,
                    values: Vec::new(),
                    sums: [0.0; 4],
                    integrals: [0.0; 4],
                }
            }),
        }
    }

    /// Lattice sites needed so that every weighted block fits.
    pub fn required_len(&self) -> usize {
        self.weights.len() + self.terms.as_ref().map_or(0, |t| t.l)
    }

    #[inline]
    fn site_value(&self, config: &Configuration, x: usize) -> f64 {
        let k = config.get(x);
        let g = if k > 0 { 1.0 } else { 0.0 };
        (g - self.lambda - self.c * (k as f64 - self.rho)) * self.weights[x]
    }

    fn block_terms(&self, config: &Configuration, x: usize, l: usize) -> [f64; 4] {
        let w = self.weights.get(x + 1).copied().unwrap_or(0.0);
        if w == 0.0 {
            return [0.0; 4];
        }
        let b = block_averages(config, x, l).expect("block within lattice");
        let k = config.get(x + 1);
        let g1 = if k > 0 { 1.0 } else { 0.0 };
        let psi = psi_closed_form(b.sum, l);
        [
            (g1 - b.g_block) * w,
            (b.g_block - psi) * w,
            (psi - self.lambda - self.c * (b.eta_block - self.rho)) * w,
            self.c * (b.eta_block - k as f64) * w,
        ]
    }

    fn refresh_site(&mut self, config: &Configuration, z: usize, old: &mut [f64; 4]) {
        let Some(terms) = self.terms.as_ref() else {
            return;
        };
        let l = terms.l;
        let lo = z.saturating_sub(l);
        let hi = z.min(terms.values.len());
        for x in lo..hi {
            let fresh = self.block_terms(config, x, l);
            let terms = self.terms.as_mut().unwrap();
            for k in 0..4 {
                old[k] += fresh[k] - terms.values[x][k];
            }
            terms.values[x] = fresh;
        }
    }

    pub fn result(&self) -> BgIntegrals {
        BgIntegrals {
            total: self.integral,
            terms: self.terms.as_ref().map(|t| t.integrals),
        }
    }

    /// Current value of the integrand, and the four term values.
    pub fn current(&self) -> (f64, Option<[f64; 4]>) {
        (self.value, self.terms.as_ref().map(|t| t.sums))
    }
}

impl Observer for BgObserver {
    fn start(&mut self, state: &SimState) {
        let config = &state.config;
        assert!(
            config.len() >= self.required_len(),
            "lattice too short for the weighted blocks"
        );
        self.site_values = (0..self.weights.len())
            .map(|x| if x == 0 { 0.0 } else { self.site_value(config, x) })
            .collect();
        self.value = self.site_values.iter().sum();
        self.integral = 0.0;
        if let Some(l) = self.terms.as_ref().map(|t| t.l) {
            let values: Vec<[f64; 4]> = (0..self.weights.len() - 1)
                .map(|x| self.block_terms(config, x, l))
                .collect();
            let mut sums = [0.0; 4];
            for v in &values {
                for k in 0..4 {
                    sums[k] += v[k];
                }
            }
            let t = self.terms.as_mut().unwrap();
            t.values = values;
            t.sums = sums;
            t.integrals = [0.0; 4];
        }
    }

    fn advance(&mut self, _state: &SimState, t0: f64, t1: f64) {
        let dt = t1 - t0;
        self.integral += self.value * dt;
        if let Some(t) = self.terms.as_mut() {
            for k in 0..4 {
                t.integrals[k] += t.sums[k] * dt;
            }
        }
    }

    fn event(&mut self, state: &SimState, event: &Event, _change: &FlagChange) {
        let reach = self.weights.len() + self.terms.as_ref().map_or(0, |t| t.l);
        let touched: [Option<usize>; 2] = match event.kind.to_move() {
            Move::Hop { from, to } => [Some(from), Some(to)],
            Move::CreateLeft | Move::AnnihilateLeft => [Some(1), None],
            Move::CreateRight | Move::ExitRight => [Some(state.len()), None],
        };
        for z in touched.into_iter().flatten() {
            if z >= reach {
                continue;
            }
            if z < self.weights.len() {
                let fresh = self.site_value(&state.config, z);
                self.value += fresh - self.site_values[z];
                self.site_values[z] = fresh;
            }
            if self.terms.is_some() {
                let mut sums = self.terms.as_ref().unwrap().sums;
                self.refresh_site(&state.config, z, &mut sums);
                self.terms.as_mut().unwrap().sums = sums;
            }
        }
    }
}

/// One replica: equilibrium start, run to `t`, return the integrals.
pub fn bg_replica(
    params: ModelParams,
    weights: &[f64],
    block: Option<usize>,
    len: usize,
    t: f64,
    seed: u64,
) -> BgIntegrals {
    let mut obs = BgObserver::new(weights.to_vec(), &params, block);
    let len = len.max(obs.required_len() + 1);
    simulate(params, len, t, seed, &SimOptions::default(), &mut obs);
    obs.result()
}

/// `E[(int_0^t V ds)^2]` over replicas, with an optional relative-error target.
pub fn bg_error_second_moment(
    params: ModelParams,
    f: &TestFunction,
    weight: BgWeight,
    t: f64,
    len: usize,
    replicas: usize,
    master_seed: u64,
    target_rel_error: Option<f64>,
) -> Result<Estimate, BgError> {
    let weights = weight.table(f, params.n);
    let samples: Vec<f64> = run_replicas(replicas, master_seed, |_, seed| {
        bg_replica(params, &weights, None, len, t, seed).total
    });
    let est = Estimate::second_moment_of(&samples);
    if let Some(target) = target_rel_error {
        let achieved = est.stderr / est.value.abs();
        if achieved > target {
            return Err(BgError::InsufficientReplicas {
                replicas,
                achieved,
                target,
            });
        }
    }
    Ok(est)
}

/// Second moments of the time-integrated four terms, in decomposition order.
pub fn bg_term_moments(
    params: ModelParams,
    f: &TestFunction,
    weight: BgWeight,
    t: f64,
    l: usize,
    len: usize,
    replicas: usize,
    master_seed: u64,
) -> [Estimate; 4] {
    let weights = weight.table(f, params.n);
    let samples: Vec<[f64; 4]> = run_replicas(replicas, master_seed, |_, seed| {
        bg_replica(params, &weights, Some(l), len, t, seed)
            .terms
            .expect("terms requested")
    });
    std::array::from_fn(|k| {
        let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        Estimate::second_moment_of(&col)
    })
}

/// Block length `max(1, round(n^delta))`.
pub fn block_length(n: u32, delta: f64) -> usize {
    (f64::from(n).powf(delta).round() as usize).max(1)
}

/// Static checks under the invariant measure, from `samples` independent blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticBgChecks {
    /// `E[g(eta)]`, expected `lambda_n`.
    pub mean_g: Estimate,
    /// `E[g^l - psi^l]`, expected zero.
    pub tower_gap: Estimate,
    /// `Var[(1 + eta^l(0)) (eta^l(0) - eta(1))]`.
    pub fourth_variance: Estimate,
}

pub fn static_checks(params: &ModelParams, l: usize, samples: usize, seed: u64) -> StaticBgChecks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Vec::with_capacity(samples);
    let mut tower = Vec::with_capacity(samples);
    let mut fourth = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c = sample_product_geometric(&mut rng, params.lambda_n, l);
        let b = block_averages(&c, 0, l).expect("block fits");
        g.push(if c.get(1) > 0 { 1.0 } else { 0.0 });
        tower.push(b.g_block - psi_closed_form(b.sum, l));
        fourth.push((1.0 + b.eta_block) * (b.eta_block - c.get(1) as f64));
    }
    StaticBgChecks {
        mean_g: Estimate::mean_of(&g),
        tower_gap: Estimate::mean_of(&tower),
        fourth_variance: Estimate::variance_of(&fourth),
    }
}
