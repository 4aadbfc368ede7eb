use num_rational::Ratio;
use serde_json::{json, Value};

use super::{ExperimentConfig, ExperimentId, HarnessError, RunDir, Verdict};
use crate::bg::{self, BgWeight};
use crate::boundary::{self, current_lattice_len};
use crate::config::FlagChange;
use crate::dynamics::{lattice_length, run_until, simulate, Event, Observer, SimOptions, SimState};
use crate::fields::{self, BcClass, FieldObserver, TestFunction};
use crate::params::ModelParams;
use crate::replica::{derive_replica_seed, run_replicas};
use crate::spde::{self, GridField, SheOptions, SpdeBc, SpdeParams};
use crate::stats::{self, chi_square_sf, fit_power_law, log_weights, Estimate};

type Outcome = Result<(Vec<Verdict>, Value), HarnessError>;

/// Two-sided tail probability of a 3-sigma normal deviation.
const THREE_SIGMA_TAIL: f64 = 0.002_699_796_063_260_2;

pub(super) fn dispatch(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    use ExperimentId::*;
    match cfg.experiment {
        Continuity => continuity(cfg, dir),
        Stationarity => stationarity(cfg, dir),
        MeanCurrent => mean_current(cfg, dir),
        QvConvergence => qv_convergence(cfg, dir),
        InitialField => initial_field(cfg, dir),
        BgTerms => bg_terms(cfg, dir),
        BgDecay => bg_decay(cfg, dir),
        BoundaryVariance => boundary_variance(cfg, dir),
        Hurst => hurst(cfg, dir),
        MollifierGap => mollifier_gap(cfg, dir),
        MartingaleResidual => martingale_residual(cfg, dir),
        SpdeSelftest => spde_selftest(cfg, dir),
    }
}

fn fail(cfg: &ExperimentConfig, message: impl ToString) -> HarnessError {
    HarnessError::Experiment {
        experiment: cfg.experiment,
        message: message.to_string(),
    }
}

/// Master seed of sub-stream `tag`, taken from the top of the replica index range.
fn stream(cfg: &ExperimentConfig, tag: u64) -> u64 {
    derive_replica_seed(cfg.seed, u64::MAX - tag)
}

fn lattice(cfg: &ExperimentConfig, n: u32, reach: f64) -> usize {
    if cfg.len > 0 {
        cfg.len
    } else {
        lattice_length(n, reach, cfg.margin)
    }
}

fn reach(functions: &[TestFunction]) -> f64 {
    functions.iter().map(TestFunction::support_right).fold(0.0, f64::max)
}

fn s(x: f64) -> String {
    x.to_string()
}

fn est(e: &Estimate) -> Value {
    json!({ "value": e.value, "stderr": e.stderr, "replicas": e.replicas, "method": e.method })
}

/// Counts events and checks the continuity relation every `every` events.
struct ContinuityProbe {
    every: u64,
    checks: u64,
    violation: Option<usize>,
}

impl Observer for ContinuityProbe {
    fn event(&mut self, state: &SimState, _event: &Event, _change: &FlagChange) {
        if state.event_count.is_multiple_of(self.every) {
            self.checks += 1;
            if let Err(x) = state.ledger.check_continuity(&state.initial, &state.config) {
                self.violation.get_or_insert(x);
            }
        }
    }
}

fn continuity(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let mut table = dir.csv(
        "replicas.csv",
        &["n", "replica", "events", "checks", "final_check", "first_violation"],
    )?;
    let min_events = cfg.tol("min_events");
    let mut ok = true;
    let mut fewest = u64::MAX;
    let mut rows = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let p = cfg.params(n)?;
        let len = lattice(cfg, n, reach(&fns));
        let results = run_replicas(cfg.replicas, stream(cfg, i as u64), |_, seed| {
            let mut state = SimState::equilibrium(p, len, seed);
            let mut probe = ContinuityProbe {
                every: 10_000,
                checks: 0,
                violation: None,
            };
            let opts = SimOptions {
                max_events: None,
                continuity_check_every: None,
            };
            run_until(&mut state, cfg.t, &opts, &mut probe);
            let last = state.ledger.check_continuity(&state.initial, &state.config);
            (state.event_count, probe.checks + 1, last.is_ok(), probe.violation.or(last.err()))
        });
        for (r, (events, checks, last_ok, violation)) in results.into_iter().enumerate() {
            table.row([
                n.to_string(),
                r.to_string(),
                events.to_string(),
                checks.to_string(),
                last_ok.to_string(),
                violation.map_or(String::new(), |x| x.to_string()),
            ])?;
            ok &= violation.is_none();
            fewest = fewest.min(events);
            rows.push(json!({ "n": n, "replica": r, "events": events, "violation": violation }));
        }
    }
    let passed = ok && fewest as f64 >= min_events;
    let v = Verdict::new(
        Some(1),
        "pathwise continuity J(x-1) - J(x) = eta_t(x) - eta_0(x)",
        passed,
        format!(
            "{} at every bond and check point; fewest events per replica {fewest} (need >= {min_events})",
            if ok { "exact equality" } else { "VIOLATED" }
        ),
    );
    Ok((vec![v], json!({ "replicas": rows, "fewest_events": fewest })))
}

fn stationarity(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let alpha = cfg.tol("significance");
    let min = cfg.tol("min_site_samples") as usize;
    let mut raw = dir.csv("occupancies.csv", &["n", "replica", "site", "occupancy"])?;
    let mut sites_csv = dir.csv("sites.csv", &["n", "site", "statistic", "dof", "p_value"])?;
    let mut verdicts = Vec::new();
    let mut summary = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let p = cfg.params(n)?;
        let len = lattice(cfg, n, reach(&cfg.test_functions()?));
        let finals = run_replicas(cfg.replicas, stream(cfg, i as u64), |_, seed| {
            simulate(p, len, cfg.t, seed, &SimOptions::default(), &mut ()).state.config
        });
        for (r, c) in finals.iter().enumerate() {
            for x in 1..=len {
                raw.row([n.to_string(), r.to_string(), x.to_string(), c.get(x).to_string()])?;
            }
        }
        let mut pvals = Vec::with_capacity(len);
        for x in 1..=len {
            let col: Vec<u64> = finals.iter().map(|c| c.get(x)).collect();
            let res = stats::chi_square_geometric_with_min(&col, p.lambda_n, min).map_err(|e| fail(cfg, e))?;
            sites_csv.row([n.to_string(), x.to_string(), s(res.statistic), res.dof.to_string(), s(res.p_value)])?;
            pvals.push(res.p_value);
        }
        let fisher = stats::fisher_combine(&pvals);
        let (ks, ks_p) = stats::ks_uniform(&pvals);
        verdicts.push(Verdict::new(
            Some(2),
            "stationarity of the geometric product measure",
            fisher >= alpha,
            format!(
                "n = {n}, L = {len}, T = {}, {} replicas: Fisher-combined p = {fisher:.4} over {len} sites (need >= {alpha})",
                cfg.t, cfg.replicas
            ),
        ));
        summary.push(json!({ "n": n, "len": len, "fisher_p": fisher, "ks_of_site_p_values": ks, "ks_p": ks_p }));
    }
    Ok((verdicts, json!({ "per_n": summary })))
}

fn mean_current(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let k_sigma = cfg.tol("sigmas");
    let mut raw = dir.csv("currents.csv", &["n", "replica", "bond", "current"])?;
    let mut all_ok = true;
    let mut details = Vec::new();
    let mut summary = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let p = cfg.params(n)?;
        let edge = fns
            .first()
            .map_or((cfg.margin * f64::from(n)) as usize, |f| fields::support_sites(f, n));
        let len = lattice(cfg, n, reach(&fns));
        let bonds = [1, (edge / 2).max(1), edge.saturating_sub(1).max(1)];
        let currents = run_replicas(cfg.replicas, stream(cfg, i as u64), |_, seed| {
            let st = simulate(p, len, cfg.t, seed, &SimOptions::default(), &mut ()).state;
            bonds.map(|b| st.ledger.get(b))
        });
        for (r, js) in currents.iter().enumerate() {
            for (b, j) in bonds.iter().zip(js) {
                raw.row([n.to_string(), r.to_string(), b.to_string(), j.to_string()])?;
            }
        }
        let target = -p.drift_velocity() * cfg.t;
        for (k, &b) in bonds.iter().enumerate() {
            let col: Vec<f64> = currents.iter().map(|js| js[k] as f64).collect();
            let e = Estimate::mean_of(&col);
            let ok = e.within_sigmas(target, k_sigma);
            all_ok &= ok;
            details.push(format!("n={n} x={b}: {:.2} +- {:.2} vs {target:.2}", e.value, e.stderr));
            summary.push(json!({ "n": n, "bond": b, "mean": est(&e), "target": target, "ok": ok }));
        }
    }
    let v = Verdict::new(
        Some(3),
        "mean current E[J_t(x)] = -n^theta alpha_n lambda_n t",
        all_ok,
        format!("{} (tolerance {k_sigma} standard errors)", details.join("; ")),
    );
    Ok((vec![v], json!({ "bonds": summary })))
}

/// `E[<M(f)>_t]` under the invariant measure, summed exactly over the lattice.
fn bracket_expectation(p: &ModelParams, f: &TestFunction, t: f64) -> f64 {
    let nf = p.nf();
    let k = fields::support_sites(f, p.n);
    let f2 = |x: usize| f.f(x as f64 / nf).powi(2);
    let sum: f64 = (1..=k + 1).map(|y| p.lambda_n * (p.q_n * f2(y) + p.p_n * f2(y - 1))).sum();
    t * nf.powf(p.theta - 2.0 * p.gamma) * (p.q_n * p.lambda_n * f2(0) + sum)
}

fn qv_convergence(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let f = fns.first().ok_or_else(|| fail(cfg, "needs a test function"))?.clone();
    let target = 2.0 * cfg.t * f.l2_norm_sq();
    let mut raw = dir.csv("brackets.csv", &["n", "replica", "bracket", "x_t"])?;
    let mut ratios = Vec::new();
    let mut rows = Vec::new();
    let mut generator_ok = true;
    for (i, &n) in cfg.n.iter().enumerate() {
        let p = cfg.params(n)?;
        let len = lattice(cfg, n, f.support_right());
        let traces = run_replicas(cfg.replicas, stream(cfg, i as u64), |_, seed| {
            let mut obs = FieldObserver::new(vec![f.clone()], vec![cfg.t]);
            simulate(p, len, cfg.t, seed, &SimOptions::default(), &mut obs);
            obs.into_traces().pop().expect("one trace")
        });
        let mut b = Vec::with_capacity(traces.len());
        for (r, tr) in traces.iter().enumerate() {
            let bracket = *tr.bracket.last().expect("sampled at t");
            raw.row([n.to_string(), r.to_string(), s(bracket), s(*tr.x.last().unwrap())])?;
            b.push(bracket);
        }
        let e = Estimate::mean_of(&b);
        let exact = bracket_expectation(&p, &f, cfg.t);
        let ok = e.within_sigmas(exact, 3.0) || e.relative_error(exact) < 1e-3;
        generator_ok &= ok;
        ratios.push(e.value / target);
        rows.push(json!({
            "n": n,
            "mean_bracket": est(&e),
            "ratio_to_2t_int_f2": e.value / target,
            "generator_expectation": exact,
            "ratio_to_t_int_f2": e.value / (0.5 * target),
        }));
    }
    let gaps: Vec<f64> = ratios.iter().map(|r| (1.0 - r).abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let last_gap = *gaps.last().unwrap();
    let max_gap = cfg.tol("max_gap");
    let table: Vec<String> = cfg
        .n
        .iter()
        .zip(&ratios)
        .map(|(n, r)| format!("n={n}: {r:.4}"))
        .collect();
    let v = Verdict::new(
        Some(4),
        "E<M(f)>_t / (2t int f^2) -> 1",
        monotone && last_gap <= max_gap,
        format!(
            "{}; gap {} monotone, final gap {last_gap:.3} (need <= {max_gap})",
            table.join(", "),
            if monotone { "is" } else { "is not" }
        ),
    )
    .explained(
        "the rate-1 generator gives E<M(f)>_t = lambda_n t int f^2 + O(1/n); the measured mean bracket matches the exact lattice expectation within 3 standard errors".into(),
        generator_ok,
    );
    Ok((vec![v], json!({ "per_n": rows, "gaps": gaps })))
}

fn initial_field(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let f = fns.first().ok_or_else(|| fail(cfg, "needs a test function"))?.clone();
    let k_sigma = cfg.tol("sigmas");
    let tol = cfg.tol("variance");
    let alpha = cfg.tol("significance");
    let mut raw = dir.csv("x0.csv", &["n", "replica", "x0"])?;
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let p = cfg.params(n)?;
        let len = lattice(cfg, n, f.support_right());
        fields::check_support(&f, n, len).map_err(|e| fail(cfg, e))?;
        let xs = run_replicas(cfg.replicas, stream(cfg, i as u64), |_, seed| {
            let c = crate::config::sample_equilibrium(&p, len, seed);
            fields::eval_x0(&c, &p, &f).expect("support checked")
        });
        for (r, x) in xs.iter().enumerate() {
            raw.row([n.to_string(), r.to_string(), s(*x)])?;
        }
        let mean = Estimate::mean_of(&xs);
        let var = Estimate::variance_of(&xs);
        let target = f.antiderivative_norm_sq() / (p.b * p.b);
        let nf = p.nf();
        let lattice_var = nf.powf(2.0 - 2.0 * p.gamma)
            * p.site_variance()
            * (1..=fields::support_sites(&f, n))
                .map(|x| f.antiderivative(x as f64 / nf).powi(2))
                .sum::<f64>();
        let jb = stats::jarque_bera(&xs);
        let weights: Vec<f64> = (1..=fields::support_sites(&f, n))
            .map(|x| f.antiderivative(x as f64 / p.nf()))
            .collect();
        let (skew, kurt) = geometric_sum_shape(p.lambda_n, &weights);
        let shape_ok = (jb.skewness - skew).abs() <= 3.0 * (6.0 / xs.len() as f64).sqrt()
            && (jb.excess_kurtosis - kurt).abs() <= 3.0 * (24.0 / xs.len() as f64).sqrt();
        let rel = var.relative_error(target);
        let ok = mean.within_sigmas(0.0, k_sigma) && rel <= tol && jb.p_value >= alpha;
        verdicts.push(Verdict::new(
            Some(5),
            "Gaussian initial field X_0(f)",
            ok,
            format!(
                "n = {n}: mean {:.4} +- {:.4}; variance {:.4} vs (1/b^2) int F^2 = {target:.4} (rel. error {rel:.3}, need <= {tol}); Jarque-Bera p = {:.3} (need >= {alpha})",
                mean.value, mean.stderr, var.value, jb.p_value
            ),
        ).explained(
            format!(
                "X_0(f) is a finite weighted sum of geometric occupations with exact skewness {skew:.3} and excess kurtosis {kurt:.3}; measured {:.3} and {:.3} agree within 3 standard errors",
                jb.skewness, jb.excess_kurtosis
            ),
            shape_ok,
        ));
        rows.push(json!({
            "n": n, "mean": est(&mean), "variance": est(&var), "target": target,
            "lattice_variance": lattice_var, "jarque_bera": jb,
            "exact_skewness": skew, "exact_excess_kurtosis": kurt,
        }));
    }
    Ok((verdicts, json!({ "per_n": rows })))
}

/// Skewness and excess kurtosis of `sum_x w_x eta(x)` under independent geometric(`lambda`) sites.
fn geometric_sum_shape(lambda: f64, w: &[f64]) -> (f64, f64) {
    let m = 1.0 - lambda;
    let k2 = lambda / (m * m);
    let k3 = lambda * (1.0 + lambda) / m.powi(3);
    let k4 = lambda * (1.0 + 4.0 * lambda + lambda * lambda) / m.powi(4);
    let sum = |k: i32| w.iter().map(|v| v.powi(k)).sum::<f64>();
    let var = k2 * sum(2);
    (k3 * sum(3) / var.powf(1.5), k4 * sum(4) / (var * var))
}

fn bg_terms(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let max_size = cfg.tol("psi_max_size") as u64;
    let mut psi_csv = dir.csv("psi.csv", &["sum", "block", "closed_form", "brute_force_lambda_1_2", "brute_force_lambda_7_8"])?;
    let mut mismatches = 0;
    let mut cases = 0;
    for l in 1..max_size {
        for sum in 0..=max_size - l {
            let closed = bg::psi_closed_form_exact(sum, l as usize);
            let b1 = bg::psi_brute_force(sum, l as usize, Ratio::new(1, 2));
            let b2 = bg::psi_brute_force(sum, l as usize, Ratio::new(7, 8));
            cases += 1;
            if closed != b1 || closed != b2 {
                mismatches += 1;
            }
            psi_csv.row([sum.to_string(), l.to_string(), closed.to_string(), b1.to_string(), b2.to_string()])?;
        }
    }
    let mut verdicts = vec![Verdict::new(
        Some(6),
        "block conditional expectation psi = S / (S + l - 1)",
        mismatches == 0,
        format!("{cases} cases with S + l <= {max_size}, exact rational comparison at two fugacities: {mismatches} mismatches"),
    )];

    let fns = cfg.test_functions()?;
    let f = fns.first().ok_or_else(|| fail(cfg, "needs a test function"))?.clone();
    let mut terms_csv = dir.csv(
        "terms.csv",
        &["n", "delta", "block", "weight", "term", "second_moment", "stderr"],
    )?;
    let mut rows = Vec::new();
    let mut tag = 0;
    for &n in &cfg.n {
        let p = cfg.params(n)?;
        for &delta in &cfg.delta {
            let l = bg::block_length(n, delta);
            let len = lattice(cfg, n, f.support_right() + l as f64 / f64::from(n));
            let st = bg::static_checks(&p, l, 20_000, stream(cfg, 1000 + tag));
            for w in [BgWeight::Gradient, BgWeight::Value] {
                tag += 1;
                let m = bg::bg_term_moments(p, &f, w, cfg.t, l, len, cfg.replicas, stream(cfg, tag));
                for (k, e) in m.iter().enumerate() {
                    terms_csv.row([
                        n.to_string(),
                        s(delta),
                        l.to_string(),
                        format!("{w:?}"),
                        (k + 1).to_string(),
                        s(e.value),
                        s(e.stderr),
                    ])?;
                }
                rows.push(json!({
                    "n": n, "delta": delta, "block": l, "weight": format!("{w:?}"),
                    "terms": m.iter().map(est).collect::<Vec<_>>(),
                }));
            }
            let tower_ok = st.tower_gap.within_sigmas(0.0, 4.0) && st.mean_g.within_sigmas(p.lambda_n, 4.0);
            verdicts.push(Verdict::new(
                None,
                "static block identities under the invariant measure",
                tower_ok,
                format!(
                    "n = {n}, l = {l}: E[g] = {:.4} (lambda {:.4}), E[g^l - psi^l] = {:.2e} +- {:.1e}",
                    st.mean_g.value, p.lambda_n, st.tower_gap.value, st.tower_gap.stderr
                ),
            ));
        }
    }
    Ok((verdicts, json!({ "psi_cases": cases, "psi_mismatches": mismatches, "terms": rows })))
}

fn bg_decay(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let f = fns.first().ok_or_else(|| fail(cfg, "needs a test function"))?.clone();
    let max_slope = cfg.tol("max_slope");
    let mut raw = dir.csv("moments.csv", &["weight", "n", "second_moment", "stderr"])?;
    let mut ok = true;
    let mut details = Vec::new();
    let mut rows = Vec::new();
    for (wi, w) in [BgWeight::Gradient, BgWeight::Value].into_iter().enumerate() {
        let mut ests = Vec::new();
        for (i, &n) in cfg.n.iter().enumerate() {
            let p = cfg.params(n)?;
            let len = lattice(cfg, n, f.support_right());
            let e = bg::bg_error_second_moment(p, &f, w, cfg.t, len, cfg.replicas, stream(cfg, (wi * 100 + i) as u64), None)
                .map_err(|e| fail(cfg, e))?;
            raw.row([format!("{w:?}"), n.to_string(), s(e.value), s(e.stderr)])?;
            ests.push(e);
        }
        let xs: Vec<f64> = cfg.n.iter().map(|&n| f64::from(n)).collect();
        let ys: Vec<f64> = ests.iter().map(|e| e.value).collect();
        let fit = fit_power_law(&xs, &ys, Some(&log_weights(&ests))).map_err(|e| fail(cfg, e))?;
        let decreasing = ys.windows(2).all(|v| v[1] < v[0]);
        ok &= decreasing && fit.ci.1 < max_slope;
        details.push(format!(
            "{w:?}: slope {:.3}, 95% CI [{:.3}, {:.3}], {}",
            fit.exponent,
            fit.ci.0,
            fit.ci.1,
            if decreasing { "decreasing" } else { "not decreasing" }
        ));
        rows.push(json!({ "weight": format!("{w:?}"), "moments": ests.iter().map(est).collect::<Vec<_>>(), "fit": fit }));
    }
    let v = Verdict::new(
        Some(7),
        "Boltzmann-Gibbs error decays in n",
        ok,
        format!("{} (CI upper end must be < {max_slope})", details.join("; ")),
    );
    Ok((vec![v], json!({ "weights": rows })))
}

fn boundary_variance(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let k_sigma = cfg.tol("sigmas");
    let mut raw = dir.csv("jbar0.csv", &["n", "replica", "t", "jbar0"])?;
    let mut ests = Vec::new();
    let mut rows = Vec::new();
    let mut zero_ok = true;
    let mut mean_ok = true;
    let mut theta = 0.0;
    for (i, &n) in cfg.n.iter().enumerate() {
        let p = cfg.params(n)?;
        theta = p.theta;
        let len = if cfg.len > 0 { cfg.len } else { current_lattice_len(&p, cfg.t, cfg.margin) };
        let times = [0.0, cfg.t];
        let paths =
            boundary::boundary_current_paths(&p, &times, len, cfg.replicas, stream(cfg, i as u64)).map_err(|e| fail(cfg, e))?;
        for (r, path) in paths.iter().enumerate() {
            for (t, j) in times.iter().zip(path) {
                raw.row([n.to_string(), r.to_string(), s(*t), s(*j)])?;
            }
        }
        let m = boundary::moments_from_paths(&times, &paths, 1.0);
        zero_ok &= m[0].variance.value == 0.0;
        mean_ok &= m[1].mean.within_sigmas(0.0, k_sigma);
        rows.push(json!({
            "n": n, "len": len, "mean": est(&m[1].mean), "variance": est(&m[1].variance),
            "poisson_small_t": boundary::poisson_variance(&p, cfg.t),
        }));
        ests.push(m[1].variance.clone());
    }
    let xs: Vec<f64> = cfg.n.iter().map(|&n| f64::from(n)).collect();
    let ys: Vec<f64> = ests.iter().map(|e| e.value).collect();
    let fit = fit_power_law(&xs, &ys, Some(&log_weights(&ests))).map_err(|e| fail(cfg, e))?;
    let bound = theta - 1.0 + cfg.tol("slack");
    let verdicts = vec![
        Verdict::new(
            Some(8),
            "boundary-current variance growth in n",
            fit.exponent <= bound,
            format!(
                "t = {}: fitted exponent {:.3} (95% CI [{:.3}, {:.3}]), bound theta - 1 + {} = {bound:.2}",
                cfg.t,
                fit.exponent,
                fit.ci.0,
                fit.ci.1,
                cfg.tol("slack")
            ),
        ),
        Verdict::new(None, "Var[Jbar_0(0)] = 0", zero_ok, "exact at t = 0".into()),
        Verdict::new(
            None,
            "centered boundary current has mean zero",
            mean_ok,
            format!("within {k_sigma} standard errors at every n"),
        ),
    ];
    Ok((verdicts, json!({ "per_n": rows, "fit": fit, "bound": bound })))
}

fn hurst(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let n = cfg.n[0];
    let p = cfg.params(n)?;
    let times = if cfg.t_grid.is_empty() { vec![cfg.t] } else { cfg.t_grid.clone() };
    let horizon = *times.last().unwrap();
    let len = if cfg.len > 0 { cfg.len } else { current_lattice_len(&p, horizon, cfg.margin) };
    let paths = boundary::boundary_current_paths(&p, &times, len, cfg.replicas, stream(cfg, 0)).map_err(|e| fail(cfg, e))?;
    let scale = p.nf().powf(1.0 - p.gamma);
    let mut raw = dir.csv("paths.csv", &["replica", "t", "scaled_jbar0"])?;
    for (r, path) in paths.iter().enumerate() {
        for (t, j) in times.iter().zip(path) {
            raw.row([r.to_string(), s(*t), s(scale * j)])?;
        }
    }
    let fit = boundary::hurst_from_samples(&times, &paths, scale).map_err(|e| fail(cfg, e))?;
    let scaled: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().map(|j| scale * j).collect()).collect();
    let target_h = 0.5 * cfg.tol("target");
    let corr = boundary::fbm_correlation_check(&times, &scaled, target_h);
    let worst = corr.iter().map(|c| c.relative_error()).fold(0.0, f64::max);
    let (target, width) = (cfg.tol("target"), cfg.tol("width"));
    let verdicts = vec![
        Verdict::new(
            Some(9),
            "Hurst scaling Var[n^(1-gamma) Jbar_t(0)] ~ t^(1/2)",
            (fit.fit.exponent - target).abs() <= width,
            format!(
                "n = {n}, t in [{:.0e}, {:.0e}]: slope {:.3} (95% CI [{:.3}, {:.3}]), need {target} +- {width}",
                times[0], horizon, fit.fit.exponent, fit.fit.ci.0, fit.fit.ci.1
            ),
        ),
        Verdict::new(
            None,
            "two-time correlations of fractional Brownian motion",
            worst <= cfg.tol("correlation"),
            format!("largest relative deviation {worst:.3} (tolerance {})", cfg.tol("correlation")),
        ),
    ];
    Ok((
        verdicts,
        json!({
            "n": n, "len": len, "fit": fit.fit,
            "moments": fit.moments.iter().map(|m| json!({"t": m.t, "variance": est(&m.variance), "mean": est(&m.mean)})).collect::<Vec<_>>(),
            "correlations": corr,
        }),
    ))
}

fn mollifier_gap(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let n = cfg.n[0];
    let p = cfg.params(n)?;
    let max_eps = cfg.eps.iter().copied().fold(0.0, f64::max);
    let len = if cfg.len > 0 {
        cfg.len
    } else {
        lattice_length(n, max_eps + 4.0 * p.b * cfg.t.sqrt(), cfg.margin)
    };
    let study = boundary::current_field_gap(&p, &cfg.eps, cfg.t, len, cfg.replicas, stream(cfg, 0), cfg.min_resolution)
        .map_err(|e| fail(cfg, e))?;
    let mut raw = dir.csv(
        "gap.csv",
        &["eps", "n", "t", "gap_second_moment", "stderr", "err_second_moment", "max_identity_residual"],
    )?;
    for r in &study.rows {
        raw.row([
            s(r.eps),
            n.to_string(),
            s(cfg.t),
            s(r.gap_second_moment.value),
            s(r.gap_second_moment.stderr),
            s(r.err_second_moment.value),
            s(r.max_identity_residual),
        ])?;
    }
    let mut sorted: Vec<_> = study.rows.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let decreasing = sorted
        .windows(2)
        .all(|w| w[1].gap_second_moment.value < w[0].gap_second_moment.value);
    let min_slope = cfg.tol("min_slope");
    let identity = study.rows.iter().map(|r| r.max_identity_residual).fold(0.0, f64::max);
    let table: Vec<String> = sorted
        .iter()
        .map(|r| format!("eps={}: {:.4}", r.eps, r.gap_second_moment.value))
        .collect();
    let verdicts = vec![
        Verdict::new(
            Some(10),
            "current-field gap E[(n^(1-gamma) Jbar_t(0) - X_t(phi_eps))^2] = O(eps)",
            decreasing && study.fit.exponent >= min_slope,
            format!(
                "n = {n}, t = {}: {}; slope {:.3} (95% CI [{:.3}, {:.3}]), need >= {min_slope}",
                cfg.t,
                table.join(", "),
                study.fit.exponent,
                study.fit.ci.0,
                study.fit.ci.1
            ),
        ),
        Verdict::new(
            None,
            "pathwise mollifier decomposition",
            identity <= cfg.tol("identity"),
            format!("largest relative residual {identity:.2e}"),
        ),
    ];
    Ok((verdicts, json!({ "n": n, "len": len, "study": study })))
}

/// Family-wise test that standardized means are all zero: `sum z^2` against chi-square.
fn z_family(zs: &[f64]) -> f64 {
    chi_square_sf(zs.iter().map(|z| z * z).sum(), zs.len())
}

fn z_of(samples: &[f64]) -> f64 {
    let e = Estimate::mean_of(samples);
    e.value / e.stderr
}

fn martingale_residual(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let k_sigma = cfg.tol("sigmas");
    let tail = if k_sigma == 3.0 {
        THREE_SIGMA_TAIL
    } else {
        statrs::function::erf::erfc(k_sigma / std::f64::consts::SQRT_2)
    };
    let tol = cfg.tol("variance");
    let mut schedule = vec![0.0];
    schedule.extend(if cfg.t_grid.is_empty() { vec![cfg.t] } else { cfg.t_grid.clone() });
    let horizon = *schedule.last().unwrap();
    let mut raw = dir.csv("residuals.csv", &["function", "n", "replica", "t", "residual", "bracket"])?;
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    let mut all_ok = true;
    let mut explained = true;
    let mut details = Vec::new();
    for (fi, f) in fns.iter().enumerate() {
        let a = match f.bc_class() {
            BcClass::Neumann => 0.0,
            BcClass::Robin(kappa) => {
                if (kappa - 2.0 * cfg.a).abs() > 1e-12 {
                    return Err(fail(cfg, format!("{} needs kappa = 2a = {}", f.name(), 2.0 * cfg.a)));
                }
                cfg.a
            }
            BcClass::Unconstrained => return Err(fail(cfg, format!("{} has no admissible boundary class", f.name()))),
        };
        for (i, &n) in cfg.n.iter().enumerate() {
            let p = ModelParams::derive(a, cfg.b, cfg.alpha, cfg.beta, n).map_err(|e| fail(cfg, e))?;
            let len = lattice(cfg, n, f.support_right());
            let traces = run_replicas(cfg.replicas, stream(cfg, (fi * 100 + i) as u64), |_, seed| {
                let mut obs = FieldObserver::new(vec![f.clone()], schedule.clone());
                simulate(p, len, horizon, seed, &SimOptions::default(), &mut obs);
                obs.into_traces().pop().expect("one trace")
            });
            let res: Vec<Vec<f64>> = traces
                .iter()
                .map(|tr| spde::particle_residual(tr, &p).map_err(|e| fail(cfg, e)))
                .collect::<Result<_, _>>()?;
            for (r, (tr, rs)) in traces.iter().zip(&res).enumerate() {
                for ((t, x), b) in tr.times.iter().zip(rs).zip(&tr.bracket) {
                    raw.row([f.name().to_string(), n.to_string(), r.to_string(), s(*t), s(*x), s(*b)])?;
                }
            }
            let kmax = schedule.len() - 1;
            let incr = |k: usize| -> Vec<f64> { res.iter().map(|r| r[k] - r[k - 1]).collect() };
            let mean_z: Vec<f64> = (1..=kmax).map(|k| z_of(&incr(k))).collect();
            let corr_z: Vec<f64> = (2..=kmax)
                .map(|k| {
                    let prod: Vec<f64> = res.iter().map(|r| (r[k] - r[k - 1]) * r[k - 1]).collect();
                    z_of(&prod)
                })
                .collect();
            let p_mean = z_family(&mean_z);
            let p_corr = if corr_z.is_empty() { 1.0 } else { z_family(&corr_z) };
            let finals: Vec<f64> = res.iter().map(|r| r[kmax]).collect();
            let var = Estimate::variance_of(&finals);
            let brackets: Vec<f64> = traces.iter().map(|t| t.bracket[kmax]).collect();
            let bracket = Estimate::mean_of(&brackets);
            let target = 2.0 * horizon * f.l2_norm_sq();
            let rel = var.relative_error(target);
            let ok = p_mean >= tail && p_corr >= tail && rel <= tol;
            let ito = var.relative_error(bracket.value);
            all_ok &= ok;
            explained &= p_mean >= tail && p_corr >= tail && ito <= tol;
            details.push(format!(
                "{} at a = {a}, n = {n}: increment-mean p = {p_mean:.3}, increment-past p = {p_corr:.3}, Var[R_T]/(2T int f^2) = {:.3}",
                f.name(),
                var.value / target
            ));
            rows.push(json!({
                "function": f.name(), "a": a, "n": n, "mean_z": mean_z, "corr_z": corr_z,
                "p_mean": p_mean, "p_corr": p_corr, "variance": est(&var), "target": target,
                "mean_bracket": est(&bracket), "ito_relative_error": ito,
            }));
        }
    }
    verdicts.push(
        Verdict::new(
            Some(11),
            "martingale residual with exact c_n, d_n",
            all_ok,
            format!(
                "{} (family-wise {k_sigma}-sigma level p >= {tail:.4}; variance tolerance {tol})",
                details.join("; ")
            ),
        )
        .explained(
            format!("increments pass and Var[R_T] agrees with the mean predictable bracket E<M(f)>_T within {tol}; the bracket itself equals lambda_n T int f^2 under the rate-1 generator"),
            explained,
        ),
    );

    // border coefficient for Neumann functions at a = 0
    let neumann: Vec<&TestFunction> = fns.iter().filter(|f| f.bc_class() == BcClass::Neumann).collect();
    let f = neumann
        .iter()
        .find(|f| f.f(0.0) != 0.0)
        .or(neumann.first())
        .ok_or_else(|| fail(cfg, "border table needs a Neumann test function"))?;
    let mut border_csv = dir.csv("border.csv", &["function", "n", "coefficient"])?;
    let mut coeffs = Vec::new();
    for &n in &cfg.n_border {
        let p = ModelParams::derive(0.0, cfg.b, cfg.alpha, cfg.beta, n).map_err(|e| fail(cfg, e))?;
        let c = fields::border_coefficient(&p, f).abs();
        border_csv.row([f.name().to_string(), n.to_string(), s(c)])?;
        coeffs.push(c);
    }
    let xs: Vec<f64> = cfg.n_border.iter().map(|&n| f64::from(n)).collect();
    let (slope, width) = (cfg.tol("border_slope"), cfg.tol("border_width"));
    let border = match fit_power_law(&xs, &coeffs, None) {
        Ok(fit) => Verdict::new(
            Some(13),
            "border coefficient |d_n grad_0 f - c_n f(1/n)| order",
            (fit.exponent - slope).abs() <= width,
            format!(
                "{} at a = 0, n in {:?}: slope {:.3}, need {slope} +- {width}",
                f.name(),
                cfg.n_border,
                fit.exponent
            ),
        ),
        Err(e) => Verdict::new(Some(13), "border coefficient order", false, format!("fit failed: {e}")),
    };
    verdicts.push(border);
    Ok((verdicts, json!({ "residuals": rows, "border": { "function": f.name(), "n": cfg.n_border, "coefficients": coeffs } })))
}

fn spde_selftest(cfg: &ExperimentConfig, dir: &RunDir) -> Outcome {
    let fns = cfg.test_functions()?;
    let big_b = 0.5 * cfg.b * cfg.b;
    let base = SpdeParams {
        a: 0.0,
        b: big_b,
        bc: SpdeBc::Neumann,
        h: cfg.spde_h,
        m: cfg.spde_m,
        tau: cfg.spde_tau,
    };
    let err = |e: spde::SpdeError| fail(cfg, e);

    let k = 2.0 * std::f64::consts::PI / base.m;
    let x0 = GridField::from_fn(&base, |x| (k * x).cos());
    let quiet = SheOptions {
        noise: 0.0,
        ..SheOptions::default()
    };
    let run = spde::integrate_she(&base, &x0, cfg.t, 0, &quiet).map_err(err)?;
    let amp = run.field.pair(&x0.values) / x0.pair(&x0.values);
    let exact = (-big_b * k * k * cfg.t).exp();
    let decay_err = (amp / exact - 1.0).abs();

    let noise_params = SpdeParams {
        a: 0.0,
        b: 0.0,
        ..base
    };
    let noise_reps = (cfg.replicas / 10).max(2);
    let cells: Vec<Vec<f64>> = run_replicas(noise_reps, stream(cfg, 1), |_, seed| {
        spde::integrate_she(&noise_params, &GridField::zeros(&noise_params), cfg.t, seed, &SheOptions::default())
            .map(|r| r.field.values)
    })
    .into_iter()
    .collect::<Result<_, _>>()
    .map_err(err)?;
    let flat: Vec<f64> = cells.into_iter().flatten().collect();
    let cell_var = Estimate::second_moment_of(&flat);
    let noise_target = 2.0 * cfg.t / base.h;
    let noise_err = cell_var.relative_error(noise_target);

    let mut raw = dir.csv(
        "qv.csv",
        &["function", "drift", "diffusion", "bc", "variance", "stderr", "realized", "bracket", "target"],
    )?;
    let mut qv_ok = true;
    let mut qv_details = Vec::new();
    let mut qv_rows = Vec::new();
    for (i, f) in fns.iter().enumerate() {
        let a = match f.bc_class() {
            BcClass::Robin(kappa) => 0.5 * kappa * cfg.b * cfg.b,
            _ => 0.0,
        };
        let bc = SpdeBc::matched(f.bc_class(), a, big_b).ok_or_else(|| fail(cfg, "unconstrained test function"))?;
        let sp = SpdeParams { a, bc, ..base };
        let q = spde::spde_residual_qv(&sp, f, cfg.t, cfg.replicas, stream(cfg, 10 + i as u64)).map_err(err)?;
        let target = 2.0 * cfg.t * f.l2_norm_sq();
        let rel = q.variance.relative_error(target);
        qv_ok &= rel <= cfg.tol("qv");
        raw.row([
            f.name().to_string(),
            s(a),
            s(big_b),
            format!("{bc:?}"),
            s(q.variance.value),
            s(q.variance.stderr),
            s(q.realized.value),
            s(q.bracket.value),
            s(target),
        ])?;
        qv_details.push(format!("{} (A = {a}): {:.4} vs {target:.4} (rel. {rel:.3})", f.name(), q.variance.value));
        qv_rows.push(json!({ "function": f.name(), "a": a, "bc": format!("{bc:?}"), "qv": q, "target": target }));
    }
    let (td, tn, tq) = (cfg.tol("decay"), cfg.tol("noise"), cfg.tol("qv"));
    let ok = decay_err <= td && noise_err <= tn && qv_ok;
    let v = Verdict::new(
        Some(12),
        "stochastic heat equation reference self-tests",
        ok,
        format!(
            "cosine decay rel. error {decay_err:.2e} (<= {td}); noise-only cell variance {:.3} vs 2t/h = {noise_target:.3} (rel. {noise_err:.3}, <= {tn}); residual variance {} (<= {tq})",
            cell_var.value,
            qv_details.join(", ")
        ),
    );
    Ok((
        vec![v],
        json!({
            "decay": { "measured": amp, "exact": exact, "relative_error": decay_err },
            "noise": { "variance": est(&cell_var), "target": noise_target },
            "qv": qv_rows,
        }),
    ))
}
