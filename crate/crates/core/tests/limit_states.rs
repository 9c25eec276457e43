use rand_distr::{Distribution, StandardNormal};
use splitmove_core::limit_state::{toy_ideal_state, watermark_analytic_p, ToyKind};
use splitmove_core::rng::stream;
use splitmove_core::stats::ks_test;
use splitmove_core::Benchmark;

fn integrated_hazards(b: Benchmark, n: usize, seed: u64) -> Vec<f64> {
    let ls = b.limit_state();
    let hazard = ls.hazard().expect("analytic law");
    let mut rng = stream(seed, 0, 0);
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..ls.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            hazard.lambda(ls.eval(&x).unwrap())
        })
        .collect()
}

#[test]
fn integrated_hazard_of_a_draw_is_exp1() {
    for b in [Benchmark::Watermark, Benchmark::ToyUniform, Benchmark::ToyExp] {
        let t = integrated_hazards(b, 20_000, 8);
        let p = ks_test(&t, |x| 1.0 - (-x).exp()).unwrap();
        assert!(p > 0.001, "{b}: KS p {p}");
    }
}

#[test]
fn watermark_tail_matches_monte_carlo() {
    let ls = Benchmark::Watermark.limit_state().with_threshold(0.5);
    let mut rng = stream(9, 0, 0);
    let n = 200_000;
    let hits = (0..n)
        .filter(|_| {
            let x: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
            ls.is_failure(ls.eval(&x).unwrap())
        })
        .count();
    let p = watermark_analytic_p(20, 0.5);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se, "{hits} vs {p}");
}

#[test]
fn toy_hazards_are_closed_form() {
    let (_, u) = toy_ideal_state(ToyKind::Uniform01);
    assert!((u.lambda(0.9) - 10f64.ln()).abs() < 1e-12);
    let (_, e) = toy_ideal_state(ToyKind::Exponential1);
    assert_eq!(e.inverse_lambda(3.5), Some(3.5));
}

#[test]
fn every_benchmark_id_round_trips() {
    for b in Benchmark::ALL {
        let parsed: Benchmark = b.id().parse().unwrap();
        assert_eq!(parsed, b);
        let ls = b.limit_state();
        assert_eq!(ls.dim(), b.dim());
        assert_eq!(ls.call_count(), 0);
        let _ = ls.eval(&vec![0.0; b.dim()]).unwrap();
        assert_eq!(ls.call_count(), 1);
    }
    assert!("oscillator99".parse::<Benchmark>().is_err());
}

#[test]
fn calls_are_counted_across_threads() {
    use rayon::prelude::*;
    let ls = Benchmark::Waarts.limit_state();
    (0..1000).into_par_iter().for_each(|i| {
        ls.eval(&[i as f64 * 1e-3, 0.5]).unwrap();
    });
    assert_eq!(ls.call_count(), 1000);
}
