//! Boundary current at the origin: variance in `t`, Hurst exponent, and the mollified-field gap.
//!
//! `cargo run --release --example boundary_current`

use atlas_zrp::boundary::{current_field_gap, current_lattice_len, fbm_correlation_check, hurst_from_samples, boundary_current_paths};
use atlas_zrp::dynamics::lattice_length;
use atlas_zrp::ModelParams;

fn main() {
    let p = ModelParams::derive(0.0, 4.0, 1.0, 1.0, 16).unwrap();
    let times: Vec<f64> = (0..7).map(|k| 1e-3 * 10f64.powf(k as f64 / 3.0)).collect();
    let len = current_lattice_len(&p, *times.last().unwrap(), 0.5);
    let paths = boundary_current_paths(&p, &times, len, 300, 1).unwrap();
    let scale = p.nf().powf(1.0 - p.gamma);
    let fit = hurst_from_samples(&times, &paths, scale).unwrap();
    for m in &fit.moments {
        println!("t = {:.4}: Var = {:.4e}", m.t, m.variance.value);
    }
    println!("log-log slope {:.3}, Hurst estimate {:.3}", fit.fit.exponent, fit.hurst());

    let scaled: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().map(|j| scale * j).collect()).collect();
    for c in fbm_correlation_check(&times, &scaled, 0.25).iter().take(3) {
        println!("corr({:.4}, {:.4}) = {:.3} vs {:.3}", c.s, c.t, c.empirical, c.expected);
    }

    let p = ModelParams::derive(0.0, 1.0, 1.0, 1.0, 32).unwrap();
    let eps = [0.4, 0.2, 0.1];
    let len = lattice_length(32, 0.4 + 4.0 * 0.1, 0.5);
    let study = current_field_gap(&p, &eps, 0.01, len, 200, 2, 3.0).unwrap();
    for r in &study.rows {
        println!("eps = {}: gap {:.4} (identity residual {:.1e})", r.eps, r.gap_second_moment.value, r.max_identity_residual);
    }
    println!("gap slope in eps: {:.3}", study.fit.exponent);
}
