//! Occupation-number configurations on the truncated half-line `{1, ..., L}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::ModelParams;

/// A single configuration move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    /// One particle hops between nearest neighbours `from -> to`.
    Hop { from: usize, to: usize },
    /// A particle enters site 1 from the source.
    CreateLeft,
    /// A particle at site 1 leaves through the origin.
    AnnihilateLeft,
    /// A particle enters site `L` from the right reservoir.
    CreateRight,
    /// A particle at site `L` leaves into the right reservoir.
    ExitRight,
}

/// Sites whose emptiness flag flipped during a move.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlagChange {
    /// Site that went from empty to occupied.
    pub filled: Option<usize>,
    /// Site that went from occupied to empty.
    pub emptied: Option<usize>,
}

/// Occupation numbers `eta(x)` for `x` in `1..=L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    // index 0 is a permanently empty sentinel, so occ[x] is eta(x)
    occ: Vec<u64>,
    occupied: usize,
}

impl Configuration {
    pub fn empty(len: usize) -> Self {
        assert!(len >= 1, "lattice length must be positive");
        Self {
            occ: vec![0; len + 1],
            occupied: 0,
        }
    }

    /// Builds a configuration from `eta(1), ..., eta(L)`.
    pub fn from_occupancies(sites: &[u64]) -> Self {
        assert!(!sites.is_empty(), "lattice length must be positive");
        let mut occ = Vec::with_capacity(sites.len() + 1);
        occ.push(0);
        occ.extend_from_slice(sites);
        let occupied = sites.iter().filter(|&&k| k > 0).count();
        Self { occ, occupied }
    }

    /// Truncation length `L`.
    #[inline]
    pub fn len(&self) -> usize {
        self.occ.len() - 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    /// `eta(x)` for `1 <= x <= L`; zero outside.
    #[inline]
    pub fn get(&self, x: usize) -> u64 {
        self.occ.get(x).copied().unwrap_or(0)
    }

    /// `g(eta(x)) = 1{eta(x) >= 1}`.
    #[inline]
    pub fn is_occupied(&self, x: usize) -> bool {
        self.get(x) > 0
    }

    /// Cached number of occupied sites.
    #[inline]
    pub fn occupied_count(&self) -> usize {
        self.occupied
    }

    /// Occupation numbers of sites `1..=L`.
    pub fn sites(&self) -> &[u64] {
        &self.occ[1..]
    }

    pub fn total_particles(&self) -> u64 {
        self.sites().iter().sum()
    }

    /// Recounts occupied sites from scratch.
    pub fn recount_occupied(&self) -> usize {
        self.sites().iter().filter(|&&k| k > 0).count()
    }

    #[inline]
    fn remove_one(&mut self, x: usize, change: &mut FlagChange) {
        let k = &mut self.occ[x];
        assert!(*k >= 1, "move from empty site {x}");
        *k -= 1;
        if *k == 0 {
            self.occupied -= 1;
            change.emptied = Some(x);
        }
    }

    #[inline]
    fn add_one(&mut self, x: usize, change: &mut FlagChange) {
        let k = &mut self.occ[x];
        *k = k.checked_add(1).expect("occupation overflow");
        if *k == 1 {
            self.occupied += 1;
            change.filled = Some(x);
        }
    }

    /// Applies a move in place and reports which emptiness flags flipped.
    ///
    /// Moving a particle out of an empty site is a caller bug and panics.
    #[inline]
    pub fn apply_move(&mut self, mv: Move) -> FlagChange {
        let mut change = FlagChange::default();
        let last = self.len();
        match mv {
            Move::Hop { from, to } => {
                debug_assert!(from.abs_diff(to) == 1 && (1..=last).contains(&to));
                self.remove_one(from, &mut change);
                self.add_one(to, &mut change);
            }
            Move::CreateLeft => self.add_one(1, &mut change),
            Move::AnnihilateLeft => self.remove_one(1, &mut change),
            Move::CreateRight => self.add_one(last, &mut change),
            Move::ExitRight => self.remove_one(last, &mut change),
        }
        change
    }
}

/// Draws one geometric variable `P(k) = (1 - lambda) lambda^k` by inversion.
///
/// The formula is `floor(ln U / ln lambda)` with `U` uniform on `(0, 1]`, where
/// `U = 1 - V` for the generator's standard `V` in `[0, 1)`.
#[inline]
pub fn sample_geometric<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    debug_assert!((0.0..1.0).contains(&lambda));
    let u: f64 = 1.0 - rng.random::<f64>();
    if lambda <= 0.0 {
        return 0;
    }
    let k = (u.ln() / lambda.ln()).floor();
    assert!(k < 1.8e19, "geometric sample overflows u64");
    k as u64
}

/// I.i.d. geometric(`lambda`) occupations on `{1, ..., len}`.
pub fn sample_product_geometric<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: f64,
    len: usize,
) -> Configuration {
    let sites: Vec<u64> = (0..len).map(|_| sample_geometric(rng, lambda)).collect();
    Configuration::from_occupancies(&sites)
}

/// Samples the invariant product measure restricted to `{1, ..., len}`.
pub fn sample_equilibrium(params: &ModelParams, len: usize, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_product_geometric(&mut rng, params.lambda_n, len)
}
