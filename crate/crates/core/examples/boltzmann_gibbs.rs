//! Block conditional expectations and the decay of the Boltzmann-Gibbs error in `n`.
//!
//! `cargo run --release --example boltzmann_gibbs`

use atlas_zrp::bg::{bg_error_second_moment, block_length, psi_brute_force, psi_closed_form_exact, BgWeight};
use atlas_zrp::dynamics::lattice_length;
use atlas_zrp::fields::TestFunction;
use atlas_zrp::stats::{fit_power_law, log_weights};
use atlas_zrp::ModelParams;
use num_rational::Ratio;

fn main() {
    for (s, l) in [(0, 3), (1, 1), (5, 4), (9, 3)] {
        let closed = psi_closed_form_exact(s, l);
        let brute = psi_brute_force(s, l, Ratio::new(2, 3));
        println!("psi(S = {s}, l = {l}) = {closed} (brute force {brute})");
    }

    let f = TestFunction::bump(1.0, 0.6).unwrap();
    let ns = [4u32, 8, 16];
    for w in [BgWeight::Gradient, BgWeight::Value] {
        let ests: Vec<_> = ns
            .iter()
            .map(|&n| {
                let p = ModelParams::derive(0.0, 1.0, 1.0, 1.0, n).unwrap();
                let len = lattice_length(n, f.support_right(), 0.5);
                bg_error_second_moment(p, &f, w, 0.01, len, 200, 11, None).unwrap()
            })
            .collect();
        for (n, e) in ns.iter().zip(&ests) {
            println!("{w:?} n = {n:>2} (block {}): E[V^2] = {:.4e} +- {:.1e}", block_length(*n, 0.5), e.value, e.stderr);
        }
        let xs: Vec<f64> = ns.iter().map(|&n| f64::from(n)).collect();
        let ys: Vec<f64> = ests.iter().map(|e| e.value).collect();
        let fit = fit_power_law(&xs, &ys, Some(&log_weights(&ests))).unwrap();
        println!("{w:?}: slope {:.3}, 95% CI [{:.3}, {:.3}]", fit.exponent, fit.ci.0, fit.ci.1);
    }
}
