//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p splitmove-core --test acceptance`; pass criterion
//! numbers as arguments to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use splitmove_core::doe::{build_doe, expected_doe_calls, DoeConfig};
use splitmove_core::limit_state::{toy_ideal_state, ToyKind};
use splitmove_core::mover::{ideal_descend, Stop};
use splitmove_core::probability::{run_probability_with, t_mc, t_par, t_par_expected, CostModel, ProbConfig, Sampling};
use splitmove_core::quantile::{choose_m0, run_quantile, QuantileConfig, QuantileMode};
use splitmove_core::rng::stream;
use splitmove_core::stats::{boxplot_summary, chi2_poisson_test, ks2_test, mean, quantile_sorted, variance};
use splitmove_core::{Benchmark, KernelConfig, ProbEstimate};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn c1_poisson_law() -> Outcome {
    let start = Instant::now();
    let (_, hazard) = toy_ideal_state(ToyKind::Uniform01);
    let mut rng = stream(101, 0, 0);
    let counts: Vec<u64> = (0..10_000)
        .map(|_| ideal_descend(&hazard, 1, Stop::Level(0.99), &mut rng).unwrap().total_moves)
        .collect();
    let lambda = 100f64.ln();
    let p = chi2_poisson_test(&counts, lambda).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        p > 0.01 && secs < 10.0,
        format!("chi2 p={p:.3}, mean moves {:.4} vs {lambda:.4}, {secs:.2}s", mean(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())),
    )
}

fn c2_additivity() -> Outcome {
    let (_, hazard) = toy_ideal_state(ToyKind::Exponential1);
    let stop = Stop::Level(1e4f64.ln());
    let mut rng = stream(202, 0, 0);
    let joint: Vec<f64> = (0..500)
        .map(|_| ideal_descend(&hazard, 100, stop, &mut rng).unwrap().total_moves as f64)
        .collect();
    let split: Vec<f64> = (0..500)
        .map(|_| {
            (0..100)
                .map(|_| ideal_descend(&hazard, 1, stop, &mut rng).unwrap().total_moves)
                .sum::<u64>() as f64
        })
        .collect();
    let p = ks2_test(&joint, &split).unwrap();
    outcome(
        p > 0.01,
        format!("KS p={p:.3}, means {:.1} / {:.1} vs {:.1}", mean(&joint), mean(&split), 100.0 * 1e4f64.ln()),
    )
}

/// 10³ ideal estimates on toy-exp at p = 1e-4 with 10 workers of 100 particles.
fn ideal_prob_runs() -> Vec<ProbEstimate> {
    let (ls, _) = toy_ideal_state(ToyKind::Exponential1);
    (0..1000)
        .map(|rep| {
            let cfg = ProbConfig {
                n: 100,
                n_c: 10,
                sampling: Sampling::Ideal,
                alpha: 0.05,
                seed: 303,
                rep,
                parallel: false,
                ..ProbConfig::default()
            };
            run_probability_with(&ls, &cfg).unwrap()
        })
        .collect()
}

fn c3_unbiased(runs: &[ProbEstimate]) -> Outcome {
    let p: f64 = 1e-4;
    let est: Vec<f64> = runs.iter().map(|r| r.p_hat).collect();
    let r = est.len() as f64;
    let var_theory = p * p * (p.powf(-1.0 / 1000.0) - 1.0);
    let m = mean(&est);
    let v = variance(&est);
    let bias_ok = (m - p).abs() < 3.0 * (var_theory / r).sqrt();
    let var_ok = (v / var_theory - 1.0).abs() < 0.15;
    outcome(
        bias_ok && var_ok,
        format!("mean {m:.4e} (bound {:.2e}), var ratio {:.3}", 3.0 * (var_theory / r).sqrt(), v / var_theory),
    )
}

fn c6_coverage(runs: &[ProbEstimate]) -> Outcome {
    let p = 1e-4;
    let hits = runs.iter().filter(|r| r.ci[0] <= p && p <= r.ci[1]).count();
    let cov = hits as f64 / runs.len() as f64;
    outcome((0.93..=0.97).contains(&cov), format!("coverage {cov:.3}"))
}

/// 100 watermark estimates per layout.
fn watermark_prob_runs() -> Vec<((usize, usize), Vec<ProbEstimate>)> {
    let ls = Benchmark::Watermark.limit_state();
    [(10, 100), (100, 10)]
        .into_iter()
        .map(|(k, n)| {
            let runs = (0..100)
                .map(|rep| {
                    let cfg = ProbConfig {
                        n,
                        n_c: k,
                        sampling: Sampling::Mcmc(KernelConfig::default()),
                        seed: 404,
                        rep,
                        parallel: false,
                        ..ProbConfig::default()
                    };
                    run_probability_with(&ls, &cfg).unwrap()
                })
                .collect();
            ((k, n), runs)
        })
        .collect()
}

fn c4_watermark(runs: &[((usize, usize), Vec<ProbEstimate>)]) -> Outcome {
    let p = Benchmark::Watermark.reference_probability();
    let mut pass = true;
    let mut parts = Vec::new();
    for ((k, n), rs) in runs {
        let s = sorted(&rs.iter().map(|r| r.p_hat).collect::<Vec<_>>());
        let (lo, med, hi) = (quantile_sorted(&s, 0.05), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.95));
        let ok = lo <= p && p <= hi && med / p < 3.0 && p / med < 3.0;
        pass &= ok;
        parts.push(format!("{k}x{n}: q05 {lo:.2e} med {med:.2e} q95 {hi:.2e}"));
    }
    outcome(pass, format!("p={p:.4e}; {}", parts.join("; ")))
}

fn c5_calls(runs: &[((usize, usize), Vec<ProbEstimate>)]) -> Outcome {
    let p = Benchmark::Watermark.reference_probability();
    let t = KernelConfig::default().burn_in as f64;
    let mut pass = true;
    let mut parts = Vec::new();
    for ((k, n), rs) in runs {
        let total_pred = -t * (*k * *n) as f64 * p.ln();
        let total = mean(&rs.iter().map(|r| r.n_calls as f64).collect::<Vec<_>>());
        let n_tot = (*k * *n) as f64;
        let cm = CostModel {
            p,
            delta: (-p.ln() / n_tot).sqrt(),
            n_c: *k,
            burn_in: t as usize,
            p0: 0.1,
        };
        let eff_pred = t_par_expected(&cm);
        let eff = mean(&rs.iter().map(|r| r.effective_calls() as f64).collect::<Vec<_>>());
        let ok = (total / total_pred - 1.0).abs() < 0.10 && (eff / eff_pred - 1.0).abs() < 0.10;
        pass &= ok;
        parts.push(format!(
            "{k}x{n}: calls {total:.0} vs {total_pred:.0}, effective {eff:.0} vs {eff_pred:.0}"
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c7_quantile_ideal() -> Outcome {
    let (ls, _) = toy_ideal_state(ToyKind::Exponential1);
    let p: f64 = 1e-6;
    let q_true = -p.ln();
    let qs: Vec<f64> = (0..10_000)
        .map(|rep| {
            let cfg = QuantileConfig {
                p,
                n: 10,
                n_c: 100,
                mode: QuantileMode::TwoPass,
                sampling: Sampling::Ideal,
                seed: 707,
                rep,
                parallel: false,
                ..QuantileConfig::default()
            };
            run_quantile(&ls, &cfg).unwrap().q_hat.expect("top-up yields an estimate")
        })
        .collect();
    let m = mean(&qs);
    let sd = variance(&qs).sqrt();
    let se = sd / (qs.len() as f64).sqrt();
    let sd_theory = (-p.ln() / 1000.0).sqrt();
    let bias_ok = (m - q_true).abs() <= 0.5 / 1000.0 + 2.0 * se;
    let sd_ok = (sd / sd_theory - 1.0).abs() < 0.05;
    outcome(
        bias_ok && sd_ok,
        format!("mean {m:.5} vs {q_true:.5} (tol {:.5}), sd {sd:.5} vs {sd_theory:.5}", 0.5 / 1000.0 + 2.0 * se),
    )
}

fn c8_quantile_watermark() -> Outcome {
    let ls = Benchmark::Watermark.limit_state();
    let runs: Vec<_> = (0..100)
        .map(|rep| {
            let cfg = QuantileConfig {
                p: 4.704e-11,
                n: 100,
                n_c: 10,
                mode: QuantileMode::TwoPass,
                sampling: Sampling::Mcmc(KernelConfig::default()),
                alpha_risk: 0.05,
                seed: 808,
                rep,
                parallel: false,
                ..QuantileConfig::default()
            };
            run_quantile(&ls, &cfg).unwrap()
        })
        .collect();
    let qs: Vec<f64> = runs.iter().filter_map(|r| r.q_hat).collect();
    let short = runs.iter().filter(|r| r.shortfall).count();
    let b = boxplot_summary(&qs, &[]).unwrap();
    let brackets = b.whiskers.0 <= 0.95 && 0.95 <= b.whiskers.1;
    outcome(
        brackets && short <= 8 && qs.len() == runs.len(),
        format!(
            "whiskers [{:.4}, {:.4}], quartiles ({:.4}, {:.4}, {:.4}), shortfalls {short}/100",
            b.whiskers.0, b.whiskers.1, b.quartiles.0, b.quartiles.1, b.quartiles.2
        ),
    )
}

/// Root of `α = exp(−exp(−√(2 log n_c)(Nt/√m − √m − b)))` in `m`, found by bisection.
fn m0_root(n: usize, n_c: usize, p: f64, alpha: f64) -> f64 {
    let l = (n_c as f64).ln();
    let a = (2.0 * l).sqrt();
    let b = a - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * a);
    let nt = -(n as f64) * p.ln();
    let risk = |m: f64| (-(-a * (nt / m.sqrt() - m.sqrt() - b)).exp()).exp() - alpha;
    // decreasing in m
    let (mut lo, mut hi) = (1e-9, 4.0 * nt + 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if risk(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c9_m0() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for n in [50, 100, 500] {
        for n_c in [4, 10, 100] {
            for p in [1e-3, 1e-6, 1e-11] {
                for alpha in [0.02, 0.05, 0.1] {
                    let closed = choose_m0(n, n_c, p, alpha).unwrap() as f64;
                    let root = m0_root(n, n_c, p, alpha).ceil();
                    let diff = (closed - root).abs();
                    if diff > worst {
                        worst = diff;
                        at = format!(" at N={n}, n_c={n_c}, p={p:e}, α={alpha}");
                    }
                }
            }
        }
    }
    outcome(worst <= 1.0, format!("max |closed − root| = {worst}{at}"))
}

fn c10_doe() -> Outcome {
    let rows = [
        Benchmark::Waarts,
        Benchmark::Parabolic,
        Benchmark::Concave2,
        Benchmark::Concave20,
        Benchmark::Concave50,
        Benchmark::Oscillator15,
        Benchmark::Oscillator21_5,
        Benchmark::Oscillator27_5,
        Benchmark::Watermark,
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for b in rows {
        let ls = b.limit_state();
        let calls: Vec<f64> = (0..20)
            .map(|seed| match build_doe(&ls, &DoeConfig::default(), 1000 + seed) {
                Ok(r) => r.n_calls as f64,
                Err(_) => f64::INFINITY,
            })
            .collect();
        let med = quantile_sorted(&sorted(&calls), 0.5);
        let expected = expected_doe_calls(b.dim(), 10, b.doe_table_probability());
        let ratio = med / expected;
        pass &= (0.5..=2.0).contains(&ratio);
        parts.push(format!("{b} {med:.0}/{expected:.1}"));
    }
    outcome(pass, format!("median/expected: {}", parts.join(", ")))
}

fn c11_crossover() -> Outcome {
    let ratio = |p: f64| {
        let cm = CostModel {
            p,
            delta: 0.1,
            n_c: 1,
            burn_in: 20,
            p0: 0.1,
        };
        t_par(&cm) / t_mc(&cm)
    };
    let (lo, hi) = (ratio(1e-3), ratio(1e-2));
    let analytic = 20.0 * 1e-3 * 1e-3f64.ln().powi(2);
    outcome(
        lo < 1.0 && hi > 1.0 && (lo / analytic - 1.0).abs() < 0.01,
        format!("t_par/t_MC = {lo:.3} at 1e-3 (analytic {analytic:.3}), {hi:.3} at 1e-2"),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: u32| wanted.is_empty() || wanted.contains(&c);
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut record = |c: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if want(c) {
            let t = Instant::now();
            let o = f();
            let secs = t.elapsed().as_secs_f64();
            println!("criterion {c:>2} {}: {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((c, name, o, secs));
        }
    };
    record(1, "Poisson law of single-particle moves", &mut c1_poisson_law);
    record(2, "marked-process additivity", &mut c2_additivity);
    let ideal = if want(3) || want(6) { ideal_prob_runs() } else { Vec::new() };
    record(3, "unbiasedness and variance", &mut || c3_unbiased(&ideal));
    let wm = if want(4) || want(5) { watermark_prob_runs() } else { Vec::new() };
    record(4, "watermark probability end-to-end", &mut || c4_watermark(&wm));
    record(5, "call accounting", &mut || c5_calls(&wm));
    record(6, "confidence interval coverage", &mut || c6_coverage(&ideal));
    record(7, "quantile accuracy with exact sampling", &mut c7_quantile_ideal);
    record(8, "watermark quantile end-to-end", &mut c8_quantile_watermark);
    record(9, "m0 closed form", &mut c9_m0);
    record(10, "first design call counts", &mut c10_doe);
    record(11, "cost-model crossover", &mut c11_crossover);
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
