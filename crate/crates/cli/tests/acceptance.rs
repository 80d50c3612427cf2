//! Acceptance gate: one line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rdlab::recursion::{delta_lambda, IterDirection, Schedule, SpectralGap};
use rdlab_cli::{run_scenario, AuditId, RunOutput, Scenario, Status};
use serde_json::Value;

struct Gate {
    lines: Vec<(usize, bool, String, String)>,
}

impl Gate {
    fn check(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        println!("criterion {n:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, name.into(), detail));
    }
}

fn run(name: &str) -> RunOutput {
    let sc = Scenario::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
    run_scenario(&sc).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn metrics<'a>(out: &'a RunOutput, id: AuditId) -> (&'a Value, Status) {
    let a = out.report.audit(id).unwrap_or_else(|| panic!("{} missing from {}", id.name(), out.report.scenario));
    (&a.metrics, a.status)
}

fn seconds(out: &RunOutput, id: AuditId) -> f64 {
    out.timings.iter().filter(|t| t.id == id).map(|t| t.seconds).sum()
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default()
}

/// Period map of `y' = (2 + 0.5 cos 2πt) y - y³` by classical RK4.
fn scalar_period_map(y0: f64) -> f64 {
    let f = |t: f64, y: f64| (2.0 + 0.5 * (2.0 * PI * t).cos()) * y - y * y * y;
    let steps = 20_000;
    let h = 1.0 / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

fn scalar_positive_fixed_point() -> f64 {
    let g = |y: f64| scalar_period_map(y) - y;
    let (mut a, mut b) = (0.5, 3.0);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if g(a).signum() == g(m).signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `sup_n Σ_k ‖S^{n-k} Q R_{k-1}‖ + Σ_k ‖S^{n-k} P R_{k-1}‖` for
/// `S = diag(2, 1/2)`, `R_n = 0.01 I` on `0 ≤ n < 10`, written out per entry.
fn delta_by_hand() -> f64 {
    let r = |n: i64| if (0..10).contains(&n) { 0.01 } else { 0.0 };
    (0..=40i64)
        .map(|n| {
            let slow: f64 = (1..=n).map(|k| 0.5f64.powi((n - k) as i32) * r(k - 1)).sum();
            let fast: f64 = (n + 1..n + 400).map(|k| 0.5f64.powi((k - n) as i32) * r(k - 1)).sum();
            slow + fast
        })
        .fold(0.0, f64::max)
}

fn main() -> ExitCode {
    let mut g = Gate { lines: Vec::new() };

    let heat = run("heat");
    let chafee = run("chafee2");
    let forced = run("forced-chafee");
    let free = run("gradient-free");
    let diss = run("dissipativity");
    let rec = run("recursion-suite");

    // 1
    {
        let (m, st) = metrics(&heat, AuditId::FloquetOracle);
        let t = heat.report.resolution.period;
        let computed: Vec<f64> = m["computed"]
            .as_array()
            .map(|a| a.iter().map(|c| f64s(c)[0].hypot(f64s(c)[1])).collect())
            .unwrap_or_default();
        let exact: Vec<f64> = [0, 1, 1, 2, 2, 3, 3, 4, 4].iter().map(|&k: &i32| (-(k * k) as f64 * t).exp()).collect();
        let worst = if computed.len() == 9 {
            computed.iter().zip(&exact).map(|(c, e)| (c - e).abs() / e).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let pass = st == Status::Pass
            && heat.report.resolution.points == 128
            && t == 0.5
            && worst <= 1e-6
            && heat.wall_seconds < 10.0;
        g.check(1, "floquet oracle", pass, format!("max rel err {worst:.2e} (≤ 1e-6), {:.2} s (< 10 s)", heat.wall_seconds));
    }

    // 2
    {
        let mut pass = true;
        let mut detail = Vec::new();
        for out in [&heat, &chafee, &forced] {
            let (m, st) = metrics(out, AuditId::LadderRigidity);
            let mut ok = st == Status::Pass;
            for fp in m["fixed_points"].as_array().into_iter().flatten() {
                let levels = fp["level_zero_counts"].as_array().cloned().unwrap_or_default();
                ok &= levels.len() >= 5;
                for level in levels.iter().take(5) {
                    let j = level[0].as_f64().unwrap_or(f64::NAN);
                    let counts = f64s(&level[1]);
                    ok &= !counts.is_empty() && counts.iter().all(|&z| z == 2.0 * j);
                }
                ok &= fp["zeros_ok"] == Value::Bool(true);
            }
            pass &= ok;
            detail.push(format!("{} {}", out.report.scenario, if ok { "ok" } else { "broken" }));
        }
        g.check(2, "ladder and zero rigidity", pass, detail.join(", "));
    }

    // 3
    {
        let mut pass = true;
        let mut total = 0u64;
        let mut secs = 0.0;
        for out in [&chafee, &forced] {
            let (m, st) = metrics(out, AuditId::ZeroMonotonicity);
            pass &= st == Status::Pass && m["unexplained_increases"].as_u64() == Some(0) && m["trajectories"].as_u64() == Some(500);
            total += m["trajectories"].as_u64().unwrap_or(0);
            let s = seconds(out, AuditId::ZeroMonotonicity);
            pass &= s < 120.0;
            secs = f64::max(secs, s);
        }
        g.check(3, "zero-number monotonicity", pass, format!("{total} trajectories, slowest sweep {secs:.1} s (< 120 s)"));
    }

    // 4
    {
        let (m, st) = metrics(&forced, AuditId::Census);
        let p = scalar_positive_fixed_point();
        let mut means = f64s(&m["records"].as_array().map(|r| Value::from(r.iter().map(|x| x["mean"].clone()).collect::<Vec<_>>())).unwrap_or_default());
        means.sort_by(f64::total_cmp);
        let mut indices: Vec<u64> = m["morse_indices"].as_array().into_iter().flatten().filter_map(Value::as_u64).collect();
        indices.sort_unstable();
        let oracle_err = if means.len() == 3 {
            [(means[0] + p).abs(), means[1].abs(), (means[2] - p).abs()].into_iter().fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let defect = m["max_homogeneity_defect"].as_f64().unwrap_or(f64::INFINITY);
        let mut parity_ok = true;
        for out in [&chafee, &forced, &free] {
            let (cm, _) = metrics(out, AuditId::Census);
            for r in cm["records"].as_array().into_iter().flatten() {
                if r["hyperbolic"] == Value::Bool(true) {
                    let k = r["morse_index"].as_u64().unwrap_or(2);
                    parity_ok &= k == 0 || k % 2 == 1;
                }
            }
        }
        let pass = st == Status::Pass && means.len() == 3 && defect < 1e-8 && indices == [0, 0, 3] && oracle_err <= 1e-6 && parity_ok;
        g.check(
            4,
            "hyperbolic rigidity",
            pass,
            format!("{} points, indices {indices:?}, homogeneity defect {defect:.1e}, scalar oracle err {oracle_err:.1e}, parity {parity_ok}", means.len()),
        );
    }

    // 5
    {
        let mut pass = true;
        let mut found = 0;
        let mut homoclinic = 0;
        for out in [&chafee, &forced] {
            let (m, st) = metrics(out, AuditId::Connections);
            pass &= st == Status::Pass;
            for c in m["connections"].as_array().into_iter().flatten() {
                found += 1;
                pass &= c["source_index"].as_u64() > c["target_index"].as_u64();
            }
            for h in m["homoclinic_sweeps"].as_array().into_iter().flatten() {
                pass &= h["shots"].as_u64() == Some(64) && h["error"].is_null();
                homoclinic += h["arrivals"].as_u64().unwrap_or(u64::MAX);
            }
        }
        pass &= found > 0 && homoclinic == 0;
        g.check(5, "index drop and homoclinic exclusion", pass, format!("{found} connections, {homoclinic} homoclinic arrivals"));
    }

    // 6
    {
        let mut pass = true;
        let mut checked = 0;
        for out in [&chafee, &forced] {
            let (m, st) = metrics(out, AuditId::ZeroBounds);
            pass &= st == Status::Pass;
            for c in m["connections"].as_array().into_iter().flatten() {
                checked += c["checked"].as_u64().unwrap_or(0);
                pass &= c["max_count"].as_u64() == Some(0);
            }
            for fp in m["linearized"].as_array().into_iter().flatten() {
                for l in fp["levels"].as_array().into_iter().flatten() {
                    let j = l["level"].as_u64().unwrap_or(0);
                    pass &= j < 2 || l["min_count"].as_u64() == Some(2 * j);
                }
            }
        }
        g.check(6, "zero-number bounds", pass && checked > 0, format!("{checked} orbit points checked"));
    }

    // 7
    {
        let (m, st) = metrics(&forced, AuditId::Filtration);
        let defects: Vec<f64> = m["convergence"].as_array().into_iter().flatten().filter_map(|c| c["defect_at_20"].as_f64()).collect();
        let mut worst_rate = 0.0f64;
        for r in m["rates"].as_array().into_iter().flatten() {
            let (rate, exact) = (r["rate"].as_f64().unwrap_or(f64::NAN), r["exact"].as_f64().unwrap_or(f64::NAN));
            worst_rate = worst_rate.max(((rate - exact) / exact).abs());
        }
        let exact: Vec<f64> = (0..4).map(|k: i32| ((2.0 - (k * k) as f64) * 1.0).exp()).collect();
        let ladder_ok = f64s(&m["exact_ladder"]).iter().zip(&exact).all(|(a, b)| ((a - b) / b).abs() < 1e-12);
        let violations = m["violations"].as_array().map_or(usize::MAX, Vec::len);
        let pass = st == Status::Pass
            && !defects.is_empty()
            && defects.iter().all(|&d| d < 1e-4)
            && worst_rate <= 1e-3
            && ladder_ok
            && violations == 0;
        g.check(
            7,
            "filtration audits",
            pass,
            format!(
                "max defect at n=20 {:.1e}, max rate err {worst_rate:.1e}, {} zero-number samples, {violations} violations",
                defects.iter().copied().fold(0.0, f64::max),
                m["zero_number_checked"]
            ),
        );
    }

    // 8
    {
        let (m, st) = metrics(&chafee, AuditId::Transversality);
        let mut pass = st == Status::Pass;
        let mut verdicts = Vec::new();
        for c in m["connections"].as_array().into_iter().flatten() {
            let v = c["report"]["verdict"]["verdict"].as_str().unwrap_or("").to_string();
            pass &= v.starts_with("transversal") && c["report"]["codim_stable"].as_u64() == Some(0);
            verdicts.push(v);
        }
        for p in m["partitions"].as_array().into_iter().flatten() {
            let r = &p["report"];
            pass &= r["fast_samples"].as_u64() == Some(200)
                && r["slow_samples"].as_u64() == Some(200)
                && r["fast_max_zeros"].as_u64().is_some_and(|z| z <= 2)
                && r["slow_min_zeros"].as_u64().is_some_and(|z| z >= 4);
        }
        pass &= !verdicts.is_empty() && m["partitions"].as_array().is_some_and(|p| !p.is_empty());
        g.check(8, "transversality", pass, format!("verdicts {verdicts:?}"));
    }

    // 9
    {
        let (m, st) = metrics(&chafee, AuditId::MorseSmale);
        let (om, _) = metrics(&chafee, AuditId::OmegaCensus);
        let pass = st == Status::Pass
            && m["verdict"] == "yes"
            && m["fixed_points"].as_u64() == Some(3)
            && om["seeds"].as_u64() == Some(64)
            && om["fixed_points"].as_u64() == Some(64)
            && chafee.report.resolution.points == 64
            && chafee.wall_seconds < 600.0;
        g.check(
            9,
            "morse-smale verdict",
            pass,
            format!("verdict {}, {}/64 seeds on fixed points, {:.1} s (< 600 s)", m["verdict"], om["fixed_points"], chafee.wall_seconds),
        );
    }

    // 10
    {
        let (m, st) = metrics(&rec, AuditId::RecursionSuite);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 0.5]));
        let gap = SpectralGap::at(&s, 1.0).expect("gap at 1");
        let sched: Schedule = Arc::new(|n| DMatrix::identity(2, 2) * if (0..10).contains(&n) { 0.01 } else { 0.0 });
        let computed = delta_lambda(&gap, &sched, 1.0, IterDirection::Forward, 40).map(|d| d.value).unwrap_or(f64::NAN);
        let delta_err = (computed - delta_by_hand()).abs();
        let pass = st == Status::Pass
            && m["trials"].as_u64() == Some(100)
            && m["passed"].as_u64() == Some(100)
            && m["forward_dims_ok"].as_u64() == Some(100)
            && m["backward_dims_ok"].as_u64() == Some(100)
            && m["max_rate_error"].as_f64().is_some_and(|e| e <= 1e-3)
            && delta_err <= 1e-12
            && rec.wall_seconds < 60.0;
        g.check(
            10,
            "recursion suite",
            pass,
            format!("max rate err {}, δ err {delta_err:.1e}, {:.1} s (< 60 s)", m["max_rate_error"], rec.wall_seconds),
        );
    }

    // 11
    {
        let (m, st) = metrics(&diss, AuditId::Dissipativity);
        let seeds = m["seeds"].as_array().cloned().unwrap_or_default();
        let mut pass = st == Status::Pass && seeds.len() == 50 && m["tol"].as_f64() == Some(0.01) && m["horizon"].as_f64() == Some(20.0);
        for s in &seeds {
            pass &= s["initial_sup"].as_f64().is_some_and(|x| x <= 5.0)
                && s["final_sup"].as_f64().is_some_and(|x| x <= 0.6 + 0.01)
                && s["bound_holds"] == Value::Bool(true);
            if let Some(z) = s["fitted_rate"].as_f64() {
                pass &= z > 0.0;
            }
        }
        g.check(
            11,
            "dissipativity",
            pass,
            format!("{} seeds, max final sup {}, min fitted rate {}", seeds.len(), m["max_final_sup"], m["min_fitted_rate"]),
        );
    }

    // 12
    {
        let mut pass = true;
        let mut names = Vec::new();
        for first in [&heat, &free, &diss, &rec] {
            let again = run(&first.report.scenario);
            let a = serde_json::to_string_pretty(&first.report).expect("serialize");
            let b = serde_json::to_string_pretty(&again.report).expect("serialize");
            pass &= a == b;
            names.push(first.report.scenario.clone());
        }
        g.check(12, "determinism", pass, format!("identical report.json for {names:?}"));
    }

    let failed = g.lines.iter().filter(|l| !l.1).count();
    println!("{} of {} criteria pass", g.lines.len() - failed, g.lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
