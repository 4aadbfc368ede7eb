//! Event-driven simulation from the invariant measure: continuity, mean current and occupation.
//!
//! `cargo run --release --example simulate -- [n] [t]`

use atlas_zrp::dynamics::lattice_length;
use atlas_zrp::{simulate, ModelParams, SimOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let n: u32 = args.next().map_or(16, |s| s.parse().expect("n"));
    let t: f64 = args.next().map_or(0.05, |s| s.parse().expect("t"));

    let p = ModelParams::derive(1.0, 1.0, 1.0, 1.0, n).expect("valid parameters");
    let len = lattice_length(n, 2.0, 0.5);
    println!(
        "n = {n}: lambda_n = {:.4}, p_n = {:.4}, theta = {}, gamma = {}, L = {len}",
        p.lambda_n, p.p_n, p.theta, p.gamma
    );

    let out = simulate(p, len, t, 7, &SimOptions::default(), &mut ());
    let st = &out.state;
    println!("{} events up to t = {t}", st.event_count);
    match st.ledger.check_continuity(&st.initial, &st.config) {
        Ok(()) => println!("continuity holds at all {len} sites"),
        Err(x) => println!("continuity violated at site {x}"),
    }

    let expected = -p.drift_velocity() * t;
    for bond in [1, len / 2, len - 1] {
        println!(
            "J_t({bond}) = {:>6} (ensemble mean {expected:.1}), centered {:>8.1}",
            st.ledger.get(bond),
            st.centered_current(bond)
        );
    }
    let mass = st.config.total_particles() as f64 / len as f64;
    println!("mean occupation {mass:.2} vs rho_n = {:.2}", p.rho_n);
}
