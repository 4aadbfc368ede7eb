//! Tracks `X_t(f)` for a Neumann and a matched Robin test function and prints the martingale residual.
//!
//! `cargo run --release --example fluctuation_field`

use atlas_zrp::dynamics::lattice_length;
use atlas_zrp::fields::{border_coefficient, FieldObserver, TestFunction};
use atlas_zrp::spde::particle_residual;
use atlas_zrp::{simulate, ModelParams, SimOptions};

fn main() {
    let n = 16;
    let schedule: Vec<f64> = (0..=5).map(|k| 0.01 * k as f64).collect();
    let cases = [
        (0.0, TestFunction::bump(0.0, 1.0).unwrap()),
        (1.0, TestFunction::robin(2.0, 1.5).unwrap()),
    ];
    for (a, f) in cases {
        let p = ModelParams::derive(a, 1.0, 1.0, 1.0, n).unwrap();
        let len = lattice_length(n, f.support_right(), 0.5);
        let mut obs = FieldObserver::new(vec![f.clone()], schedule.clone());
        simulate(p, len, *schedule.last().unwrap(), 3, &SimOptions::default(), &mut obs);
        let trace = obs.into_traces().pop().unwrap();
        let r = particle_residual(&trace, &p).unwrap();

        println!("{} at a = {a}: int f^2 = {:.4}, border coefficient {:.3e}", f.name(), f.l2_norm_sq(), border_coefficient(&p, &f));
        println!("{:>6} {:>10} {:>10} {:>10}", "t", "X_t(f)", "R_t", "<M>_t");
        for k in 0..trace.len() {
            println!("{:>6.3} {:>10.4} {:>10.4} {:>10.5}", trace.times[k], trace.x[k], r[k], trace.bracket[k]);
        }
    }
}
