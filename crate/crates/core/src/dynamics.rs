//! Event-driven simulation of the accelerated generator `n^theta L_n` on `{1, ..., L}`.
//!
//! Channels per occupied site `x` (all rates multiplied by `n^theta`):
//! right hop at rate `q_n`, left hop at rate `p_n`. At the boundaries a particle
//! is created at site 1 at rate `lambda_n q_n` and a left hop from site 1 removes
//! the particle. At the right end the lattice is closed by a reservoir of
//! fugacity `lambda_n`: particles are injected at site `L` at rate
//! `lambda_n p_n` and right hops from `L` leave the system. With these rates the
//! restricted product geometric measure is exactly invariant.
//!
//! Channel selection is `O(1)`: one uniform draw picks either a boundary creation
//! (total weight `lambda_n`) or a uniformly chosen occupied site from a dense
//! index plus the hop direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::config::{sample_product_geometric, Configuration, FlagChange, Move};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Hop `x -> x + 1` with `x < L`.
    BulkRight(usize),
    /// Hop `x -> x - 1` with `x > 1`.
    BulkLeft(usize),
    CreateLeft,
    AnnihilateLeft,
    CreateRight,
    ExitRight,
}

impl EventKind {
    /// The configuration move realising this event on a lattice of length `len`.
    #[inline]
    pub fn to_move(self) -> Move {
        match self {
            EventKind::BulkRight(x) => Move::Hop { from: x, to: x + 1 },
            EventKind::BulkLeft(x) => Move::Hop { from: x, to: x - 1 },
            EventKind::CreateLeft => Move::CreateLeft,
            EventKind::AnnihilateLeft => Move::AnnihilateLeft,
            EventKind::CreateRight => Move::CreateRight,
            EventKind::ExitRight => Move::ExitRight,
        }
    }

    /// The single bond whose current changes, and the sign of the change.
    #[inline]
    pub fn bond(self, len: usize) -> (usize, i64) {
        match self {
            EventKind::BulkRight(x) => (x, 1),
            EventKind::BulkLeft(x) => (x - 1, -1),
            EventKind::CreateLeft => (0, 1),
            EventKind::AnnihilateLeft => (0, -1),
            EventKind::ExitRight => (len, 1),
            EventKind::CreateRight => (len, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    /// Waiting time before the event, in macroscopic time units.
    pub time_increment: f64,
}

/// Signed cumulative currents `J(x)` across bonds `{x, x+1}`, `x = 0..=L`.
///
/// `J(0)` counts creations minus annihilations at site 1 and `J(L)` counts exits
/// minus injections at the right reservoir.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentLedger {
    j: Vec<i64>,
}

impl CurrentLedger {
    pub fn new(len: usize) -> Self {
        Self { j: vec![0; len + 1] }
    }

    #[inline]
    pub fn get(&self, bond: usize) -> i64 {
        self.j[bond]
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.j
    }

    /// Number of lattice sites `L` (bonds run over `0..=L`).
    pub fn lattice_len(&self) -> usize {
        self.j.len() - 1
    }

    #[inline]
    fn record(&mut self, bond: usize, sign: i64) {
        self.j[bond] += sign;
    }

    /// Checks `J(x-1) - J(x) = eta_t(x) - eta_0(x)` at every site; returns the first
    /// violating site.
    pub fn check_continuity(
        &self,
        initial: &Configuration,
        current: &Configuration,
    ) -> Result<(), usize> {
        for x in 1..=current.len() {
            let lhs = self.j[x - 1] - self.j[x];
            let rhs = current.get(x) as i64 - initial.get(x) as i64;
            if lhs != rhs {
                return Err(x);
            }
        }
        Ok(())
    }
}

/// Dense index of occupied sites supporting O(1) insert, remove and uniform pick.
#[derive(Debug, Clone)]
struct OccupiedIndex {
    sites: Vec<u32>,
    // slot[x] = position of x in `sites` plus one, zero when absent
    slot: Vec<u32>,
}

impl OccupiedIndex {
    fn build(config: &Configuration) -> Self {
        let mut idx = Self {
            sites: Vec::with_capacity(config.len()),
            slot: vec![0; config.len() + 1],
        };
        for x in 1..=config.len() {
            if config.is_occupied(x) {
                idx.insert(x);
            }
        }
        idx
    }

    #[inline]
    fn insert(&mut self, x: usize) {
        debug_assert_eq!(self.slot[x], 0);
        self.sites.push(x as u32);
        self.slot[x] = self.sites.len() as u32;
    }

    #[inline]
    fn remove(&mut self, x: usize) {
        let pos = self.slot[x] as usize - 1;
        let last = self.sites.pop().expect("remove from empty index");
        if pos < self.sites.len() {
            self.sites[pos] = last;
            self.slot[last as usize] = pos as u32 + 1;
        }
        self.slot[x] = 0;
    }

    #[inline]
    fn len(&self) -> usize {
        self.sites.len()
    }

    #[inline]
    fn nth(&self, i: usize) -> usize {
        self.sites[i] as usize
    }
}

/// Complete state of one trajectory.
#[derive(Debug, Clone)]
pub struct SimState {
    pub params: ModelParams,
    pub config: Configuration,
    /// Configuration at time zero.
    pub initial: Configuration,
    pub ledger: CurrentLedger,
    /// Macroscopic time.
    pub t: f64,
    pub event_count: u64,
    rng: ChaCha8Rng,
    index: OccupiedIndex,
    time_scale: f64,
}

impl SimState {
    /// Starts from a given configuration; `seed` drives all subsequent randomness.
    pub fn new(params: ModelParams, config: Configuration, seed: u64) -> Self {
        Self::with_rng(params, config, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Samples the initial configuration from the invariant measure with the same
    /// generator that then drives the dynamics.
    pub fn equilibrium(params: ModelParams, len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = sample_product_geometric(&mut rng, params.lambda_n, len);
        Self::with_rng(params, config, rng)
    }

    fn with_rng(params: ModelParams, config: Configuration, rng: ChaCha8Rng) -> Self {
        let len = config.len();
        Self {
            params,
            index: OccupiedIndex::build(&config),
            initial: config.clone(),
            config,
            ledger: CurrentLedger::new(len),
            t: 0.0,
            event_count: 0,
            rng,
            time_scale: params.time_scale(),
        }
    }

    pub fn len(&self) -> usize {
        self.config.len()
    }

    pub fn is_empty(&self) -> bool {
        self.config.is_empty()
    }

    /// Centered current `J(x) + n^theta alpha_n lambda_n t` at the current time.
    #[inline]
    pub fn centered_current(&self, bond: usize) -> f64 {
        centered_current(&self.ledger, &self.params, self.t, bond)
    }
}

/// Total jump rate `n^theta (K + lambda_n)` where `K` is the number of occupied sites.
#[inline]
pub fn total_rate(state: &SimState) -> f64 {
    state.time_scale * (state.index.len() as f64 + state.params.lambda_n)
}

/// Draws the waiting time and the channel of the next event.
#[inline]
pub fn next_event(state: &mut SimState) -> Event {
    let rate = total_rate(state);
    let wait: f64 = Exp1.sample(&mut state.rng);
    let time_increment = wait / rate;

    let lambda = state.params.lambda_n;
    let q = state.params.q_n;
    let occupied = state.index.len();
    let u = state.rng.random::<f64>() * (occupied as f64 + lambda);
    let kind = if u < lambda {
        if u < lambda * q {
            EventKind::CreateLeft
        } else {
            EventKind::CreateRight
        }
    } else {
        let r = u - lambda;
        let i = (r as usize).min(occupied - 1);
        let frac = r - i as f64;
        let x = state.index.nth(i);
        if frac < q {
            if x == state.config.len() {
                EventKind::ExitRight
            } else {
                EventKind::BulkRight(x)
            }
        } else if x == 1 {
            EventKind::AnnihilateLeft
        } else {
            EventKind::BulkLeft(x)
        }
    };
    Event {
        kind,
        time_increment,
    }
}

/// Applies an event drawn from the same state, advancing time by its increment.
#[inline]
pub fn apply_event(state: &mut SimState, event: &Event) -> FlagChange {
    let change = state.config.apply_move(event.kind.to_move());
    if let Some(x) = change.emptied {
        state.index.remove(x);
    }
    if let Some(x) = change.filled {
        state.index.insert(x);
    }
    let (bond, sign) = event.kind.bond(state.config.len());
    state.ledger.record(bond, sign);
    state.t += event.time_increment;
    state.event_count += 1;
    change
}

/// `J(x) + n^theta alpha_n lambda_n t`.
#[inline]
pub fn centered_current(ledger: &CurrentLedger, params: &ModelParams, t: f64, bond: usize) -> f64 {
    ledger.get(bond) as f64 + params.drift_velocity() * t
}

/// Hooks called by the event loop.
///
/// Between consecutive events the configuration and the ledger are constant;
/// `advance` is called for each such stretch `[t0, t1)` before the event at `t1`
/// is applied, and once more for the final clamped stretch ending at the horizon.
pub trait Observer {
    fn start(&mut self, _state: &SimState) {}
    fn advance(&mut self, _state: &SimState, _t0: f64, _t1: f64) {}
    fn event(&mut self, _state: &SimState, _event: &Event, _change: &FlagChange) {}
    fn finish(&mut self, _state: &SimState) {}
}

impl Observer for () {}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn start(&mut self, state: &SimState) {
        (**self).start(state)
    }
    fn advance(&mut self, state: &SimState, t0: f64, t1: f64) {
        (**self).advance(state, t0, t1)
    }
    fn event(&mut self, state: &SimState, event: &Event, change: &FlagChange) {
        (**self).event(state, event, change)
    }
    fn finish(&mut self, state: &SimState) {
        (**self).finish(state)
    }
}

impl<O: Observer> Observer for [O] {
    fn start(&mut self, state: &SimState) {
        self.iter_mut().for_each(|o| o.start(state))
    }
    fn advance(&mut self, state: &SimState, t0: f64, t1: f64) {
        self.iter_mut().for_each(|o| o.advance(state, t0, t1))
    }
    fn event(&mut self, state: &SimState, event: &Event, change: &FlagChange) {
        self.iter_mut().for_each(|o| o.event(state, event, change))
    }
    fn finish(&mut self, state: &SimState) {
        self.iter_mut().for_each(|o| o.finish(state))
    }
}

impl<O: Observer> Observer for Vec<O> {
    fn start(&mut self, state: &SimState) {
        self.as_mut_slice().start(state)
    }
    fn advance(&mut self, state: &SimState, t0: f64, t1: f64) {
        self.as_mut_slice().advance(state, t0, t1)
    }
    fn event(&mut self, state: &SimState, event: &Event, change: &FlagChange) {
        self.as_mut_slice().event(state, event, change)
    }
    fn finish(&mut self, state: &SimState) {
        self.as_mut_slice().finish(state)
    }
}

macro_rules! tuple_observer {
    ($($name:ident $idx:tt),+) => {
        impl<$($name: Observer),+> Observer for ($($name,)+) {
            fn start(&mut self, state: &SimState) {
                $(self.$idx.start(state);)+
            }
            fn advance(&mut self, state: &SimState, t0: f64, t1: f64) {
                $(self.$idx.advance(state, t0, t1);)+
            }
            fn event(&mut self, state: &SimState, event: &Event, change: &FlagChange) {
                $(self.$idx.event(state, event, change);)+
            }
            fn finish(&mut self, state: &SimState) {
                $(self.$idx.finish(state);)+
            }
        }
    };
}

tuple_observer!(A 0, B 1);
tuple_observer!(A 0, B 1, C 2);
tuple_observer!(A 0, B 1, C 2, D 3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Stop early (and flag the result) after this many events.
    pub max_events: Option<u64>,
    /// Verify the continuity relation every this many events; panics on violation.
    pub continuity_check_every: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_events: None,
            continuity_check_every: if cfg!(debug_assertions) {
                Some(10_000)
            } else {
                None
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub state: SimState,
    /// True when the event budget ran out before the horizon.
    pub budget_exhausted: bool,
}

/// Runs the event loop from `state` until time `horizon`.
///
/// The final waiting time is clamped so that observers integrate exactly up to
/// `horizon`. Returns `false` if the event budget ran out first.
pub fn run_until<O: Observer + ?Sized>(
    state: &mut SimState,
    horizon: f64,
    options: &SimOptions,
    observer: &mut O,
) -> bool {
    assert!(horizon >= 0.0, "negative horizon");
    observer.start(state);
    let mut completed = true;
    while state.t < horizon {
        if options.max_events.is_some_and(|m| state.event_count >= m) {
            completed = false;
            break;
        }
        let event = next_event(state);
        let t_next = state.t + event.time_increment;
        if t_next >= horizon {
            observer.advance(state, state.t, horizon);
            state.t = horizon;
            break;
        }
        observer.advance(state, state.t, t_next);
        let change = apply_event(state, &event);
        observer.event(state, &event, &change);
        if let Some(every) = options.continuity_check_every {
            if state.event_count.is_multiple_of(every) {
                if let Err(x) = state.ledger.check_continuity(&state.initial, &state.config) {
                    panic!("continuity relation violated at site {x}");
                }
                assert_eq!(state.config.occupied_count(), state.config.recount_occupied());
            }
        }
    }
    observer.finish(state);
    completed
}

/// Samples an equilibrium start on `{1, ..., len}` and runs it to `horizon`.
pub fn simulate<O: Observer + ?Sized>(
    params: ModelParams,
    len: usize,
    horizon: f64,
    seed: u64,
    options: &SimOptions,
    observer: &mut O,
) -> SimOutcome {
    let mut state = SimState::equilibrium(params, len, seed);
    let completed = run_until(&mut state, horizon, options, observer);
    SimOutcome {
        state,
        budget_exhausted: !completed,
    }
}

/// Lattice length `ceil(n (support + margin))` covering the given macroscopic extent.
pub fn lattice_length(n: u32, support_right: f64, margin: f64) -> usize {
    let len = (f64::from(n) * (support_right + margin)).ceil() as usize;
    len.max(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, n: u32) -> ModelParams {
        ModelParams::derive(a, 1.0, 1.0, 1.0, n).unwrap()
    }

    #[test]
    fn total_rate_counts_occupied_sites_plus_fugacity() {
        let p = params(1.0, 8);
        let s = SimState::new(p, Configuration::empty(10), 1);
        assert_eq!(total_rate(&s), p.time_scale() * p.lambda_n);
        let s = SimState::new(p, Configuration::from_occupancies(&[3, 0, 1, 0, 7]), 1);
        assert_eq!(total_rate(&s), p.time_scale() * (3.0 + p.lambda_n));
        let sym = params(0.0, 8);
        let s2 = SimState::new(sym, Configuration::from_occupancies(&[3, 0, 1, 0, 7]), 1);
        assert_eq!(total_rate(&s2), total_rate(&s));
    }

    #[test]
    fn empty_configuration_only_creates() {
        let p = params(1.0, 4);
        let mut s = SimState::new(p, Configuration::empty(5), 2);
        for _ in 0..1000 {
            let ev = next_event(&mut s);
            assert!(matches!(ev.kind, EventKind::CreateLeft | EventKind::CreateRight));
        }
    }

    fn channel_counts(a: f64, draws: usize) -> (ModelParams, [usize; 4]) {
        let p = params(a, 10);
        let mut occ = vec![0u64; 9];
        occ[4] = 1; // single particle at x = 5
        let mut s = SimState::new(p, Configuration::from_occupancies(&occ), 11);
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            match next_event(&mut s).kind {
                EventKind::BulkRight(5) => counts[0] += 1,
                EventKind::BulkLeft(5) => counts[1] += 1,
                EventKind::CreateLeft => counts[2] += 1,
                EventKind::CreateRight => counts[3] += 1,
                other => panic!("impossible channel {other:?}"),
            }
        }
        (p, counts)
    }

    #[test]
    fn channel_frequencies_match_rates() {
        for a in [0.0, 1.0] {
            let draws = 1_000_000;
            let (p, counts) = channel_counts(a, draws);
            let total = 1.0 + p.lambda_n;
            let probs = [
                p.q_n / total,
                p.p_n / total,
                p.lambda_n * p.q_n / total,
                p.lambda_n * p.p_n / total,
            ];
            for (c, pr) in counts.iter().zip(probs) {
                let mean = draws as f64 * pr;
                let sd = (draws as f64 * pr * (1.0 - pr)).sqrt();
                assert!((*c as f64 - mean).abs() < 4.0 * sd, "a={a} count {c} vs {mean}");
            }
            if a == 0.0 {
                let diff = counts[0] as f64 - counts[1] as f64;
                let sd = ((counts[0] + counts[1]) as f64).sqrt();
                assert!(diff.abs() < 4.0 * sd);
            } else {
                let ratio = counts[1] as f64 / counts[0] as f64;
                assert!((ratio - 0.55 / 0.45).abs() < 0.02, "left/right {ratio}");
            }
        }
    }

    #[test]
    fn waiting_times_are_exponential_with_total_rate() {
        let p = params(1.0, 4);
        let mut s = SimState::new(p, Configuration::from_occupancies(&[2, 1, 0, 4]), 5);
        let rate = total_rate(&s);
        let m = 200_000;
        let mean: f64 = (0..m).map(|_| next_event(&mut s).time_increment).sum::<f64>() / m as f64;
        let se = 1.0 / rate / (m as f64).sqrt();
        assert!((mean - 1.0 / rate).abs() < 4.0 * se);
    }

    #[test]
    fn create_left_updates_site_and_bond_zero() {
        let p = params(1.0, 4);
        let mut s = SimState::new(p, Configuration::from_occupancies(&[2, 0, 1]), 1);
        let ev = Event {
            kind: EventKind::CreateLeft,
            time_increment: 0.25,
        };
        apply_event(&mut s, &ev);
        assert_eq!(s.config.get(1), 3);
        assert_eq!(s.ledger.as_slice(), &[1, 0, 0, 0]);
        assert_eq!(s.t, 0.25);
    }

    #[test]
    fn bulk_left_decrements_the_left_bond() {
        let p = params(1.0, 4);
        let mut s = SimState::new(p, Configuration::from_occupancies(&[0, 0, 2, 0]), 1);
        apply_event(
            &mut s,
            &Event {
                kind: EventKind::BulkLeft(3),
                time_increment: 0.1,
            },
        );
        assert_eq!(s.ledger.get(2), -1);
        assert_eq!(s.config.sites(), &[0, 1, 1, 0]);
        assert_eq!(s.ledger.as_slice().iter().filter(|&&j| j != 0).count(), 1);
    }

    #[test]
    fn right_reservoir_bookkeeping() {
        let p = params(0.0, 4);
        let mut s = SimState::new(p, Configuration::from_occupancies(&[0, 0, 1]), 1);
        let ev = |kind| Event {
            kind,
            time_increment: 0.0,
        };
        apply_event(&mut s, &ev(EventKind::ExitRight));
        assert_eq!(s.ledger.get(3), 1);
        apply_event(&mut s, &ev(EventKind::CreateRight));
        apply_event(&mut s, &ev(EventKind::CreateRight));
        assert_eq!(s.ledger.get(3), -1);
        assert_eq!(s.config.get(3), 2);
    }

    #[test]
    fn continuity_relation_holds_exactly_along_a_long_trajectory() {
        let p = params(1.0, 8);
        let mut s = SimState::equilibrium(p, 40, 77);
        let before: u64 = s.config.total_particles();
        let mut net_boundary = 0i64;
        for _ in 0..100_000 {
            let ev = next_event(&mut s);
            match ev.kind {
                EventKind::CreateLeft | EventKind::CreateRight => net_boundary += 1,
                EventKind::AnnihilateLeft | EventKind::ExitRight => net_boundary -= 1,
                _ => {}
            }
            apply_event(&mut s, &ev);
        }
        s.ledger.check_continuity(&s.initial, &s.config).unwrap();
        assert_eq!(s.config.occupied_count(), s.config.recount_occupied());
        assert_eq!(s.config.total_particles() as i64 - before as i64, net_boundary);
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let p = params(1.0, 8);
        let out = simulate(p, 30, 0.0, 4, &SimOptions::default(), &mut ());
        assert_eq!(out.state.config, out.state.initial);
        assert_eq!(out.state.event_count, 0);
        assert_eq!(out.state.t, 0.0);
        assert!(out.state.ledger.as_slice().iter().all(|&j| j == 0));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = params(1.0, 8);
        let a = simulate(p, 50, 0.002, 99, &SimOptions::default(), &mut ());
        let b = simulate(p, 50, 0.002, 99, &SimOptions::default(), &mut ());
        assert_eq!(a.state.ledger, b.state.ledger);
        assert_eq!(a.state.config, b.state.config);
        assert_eq!(a.state.event_count, b.state.event_count);
        assert!(a.state.event_count > 100);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let p = params(1.0, 8);
        let opts = SimOptions {
            max_events: Some(50),
            continuity_check_every: None,
        };
        let out = simulate(p, 50, 1.0, 1, &opts, &mut ());
        assert!(out.budget_exhausted);
        assert_eq!(out.state.event_count, 50);
        assert!(out.state.t < 1.0);
    }

    #[test]
    fn centered_current_trivial_cases() {
        let p = params(1.0, 8);
        let mut ledger = CurrentLedger::new(4);
        ledger.record(2, 5);
        assert_eq!(centered_current(&ledger, &p, 0.0, 2), 5.0);
        let sym = params(0.0, 8);
        assert_eq!(centered_current(&ledger, &sym, 3.0, 2), 5.0);
        let v = p.time_scale() * p.alpha_n * p.lambda_n;
        assert!((centered_current(&ledger, &p, 0.5, 2) - (5.0 + 0.5 * v)).abs() < 1e-12);
    }

    #[derive(Default)]
    struct StretchRecorder {
        covered: f64,
        events: u64,
        finished_at: f64,
    }

    impl Observer for StretchRecorder {
        fn advance(&mut self, _s: &SimState, t0: f64, t1: f64) {
            assert!(t1 >= t0);
            self.covered += t1 - t0;
        }
        fn event(&mut self, _s: &SimState, _e: &Event, _c: &FlagChange) {
            self.events += 1;
        }
        fn finish(&mut self, s: &SimState) {
            self.finished_at = s.t;
        }
    }

    #[test]
    fn observers_cover_the_horizon_exactly() {
        let p = params(1.0, 8);
        let mut rec = StretchRecorder::default();
        let out = simulate(p, 30, 0.003, 5, &SimOptions::default(), &mut rec);
        assert!((rec.covered - 0.003).abs() < 1e-15);
        assert_eq!(rec.events, out.state.event_count);
        assert_eq!(rec.finished_at, 0.003);
    }
}
