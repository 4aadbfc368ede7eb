//! Reference stochastic heat equation with a Robin boundary matched to the test function.
//!
//! `cargo run --release --example heat_equation`

use atlas_zrp::fields::TestFunction;
use atlas_zrp::spde::{integrate_she, spde_residual_qv, GridField, SheOptions, SpdeBc, SpdeParams};

fn main() {
    let base = SpdeParams {
        a: 0.0,
        b: 0.5,
        bc: SpdeBc::Neumann,
        h: 0.02,
        m: 3.0,
        tau: 1e-3,
    };

    let k = 2.0 * std::f64::consts::PI / base.m;
    let x0 = GridField::from_fn(&base, |x| (k * x).cos());
    let quiet = SheOptions {
        noise: 0.0,
        ..SheOptions::default()
    };
    let run = integrate_she(&base, &x0, 0.2, 0, &quiet).unwrap();
    let amp = run.field.pair(&x0.values) / x0.pair(&x0.values);
    println!("cosine mode after t = 0.2: {amp:.6} vs exp(-B k^2 t) = {:.6}", (-base.b * k * k * 0.2).exp());

    let f = TestFunction::robin(2.0, 1.5).unwrap();
    let a = 1.0;
    let bc = SpdeBc::matched(f.bc_class(), a, base.b).unwrap();
    let params = SpdeParams { a, bc, ..base };
    println!("{} with drift A = {a}: boundary {bc:?}, ghost factor {:.4}", f.name(), params.ghost_factor());
    let qv = spde_residual_qv(&params, &f, 0.1, 400, 5).unwrap();
    println!(
        "Var[R_t] = {:.4} +- {:.4}, realized QV {:.4}, 2t int f^2 = {:.4}",
        qv.variance.value,
        qv.variance.stderr,
        qv.realized.value,
        2.0 * 0.1 * f.l2_norm_sq()
    );
}
