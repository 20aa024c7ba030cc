use lacuna::analysis::{MassSpectrum, TimeSampledField};
use lacuna::construction::*;
use lacuna::duhamel::duhamel_trajectory_with;
use lacuna::packets::PacketField;
use lacuna::remainder::*;

#[test]
fn single_interval_for_unit_amplitude() {
    let p = InitialDataParams::lacunary(1.0, 3, 7);
    let d = time_step_schedule(&p).unwrap();
    assert_eq!(d.beta, 1);
    assert_eq!(d.r_alpha, vec![3, 0]);
    assert_eq!(d.breakpoints, vec![2f64.powi(-68), 2f64.powi(-14)]);
    assert!(d.warnings.is_empty());
}

#[test]
fn division_example_q2_r16() {
    let p = InitialDataParams::lacunary(2.0, 16, 4);
    let d = time_step_schedule(&p).unwrap();
    assert_eq!(d.beta, 8);
    let want: Vec<usize> = (0..=8).map(|a| 16 - 2 * a).collect();
    assert_eq!(d.r_alpha, want);
    assert!(d.breakpoints.windows(2).all(|w| w[1] > w[0]));
    // T_beta = |k_0|^-2 = 2^{-2 m0}.
    assert_eq!(*d.breakpoints.last().unwrap(), 2f64.powi(-8));
    // j_16 = 17 * 24 / 2 = 204.
    assert_eq!(d.breakpoints[0], 2f64.powi(-408));
}

#[test]
fn division_collapses_repeated_indices() {
    let p = InitialDataParams::lacunary(2.0, 2, 7);
    let d = time_step_schedule(&p).unwrap();
    assert_eq!(d.beta, 8);
    assert!(d.r_alpha.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(d.r_alpha.first(), Some(&2));
    assert_eq!(d.r_alpha.last(), Some(&0));
    assert!(!d.warnings.is_empty());
    assert!(matches!(time_step_schedule(&InitialDataParams::lacunary(30.0, 2, 7)), Err(RemainderError::TooManySteps(_))));
}

#[test]
fn picard_grid_shape() {
    let g = picard_grid(2f64.powi(-8), 1e4, 2.0);
    assert_eq!(g[0], 0.0);
    assert!(g.len() >= 17);
    assert_eq!(*g.last().unwrap(), 2f64.powi(-8));
    assert!(g.windows(2).all(|w| w[1] > w[0]));
    assert!(g[1] <= 0.25 / 1e4);
    for w in g[1..].windows(2) {
        assert!((w[1] / w[0] - 2.0).abs() < 1e-12);
    }
}

#[test]
fn zero_data_gives_zero_remainder() {
    let horizon = 2f64.powi(-8);
    let times = picard_grid(horizon, 1.0, 2.0);
    let z = TimeSampledField::zero(horizon);
    let state = picard_remainder(&z, &z, &times, &PicardConfig::with_tol(1e-4)).unwrap();
    assert!(state.converged);
    assert_eq!(state.n, 1);
    assert_eq!(state.log[0].et_diff_upper, 0.0);
    assert!(state.y.value_at(horizon).is_empty());

    let mut p = InitialDataParams::explicit(0.0, vec![3, 5]);
    p.h = 0.125;
    let rep = remainder_bound_report(&state, &p, &time_step_schedule(&p).unwrap(), 4.0).unwrap();
    assert_eq!(rep.y_final_upper, 0.0);
    assert!(rep.per_alpha.iter().all(|r| r.2 == 0.0));
    assert!(matches!(
        picard_remainder(&z, &z, &[0.1, 0.2], &PicardConfig::with_tol(1e-4)),
        Err(RemainderError::Grid(_))
    ));
}

fn small_problem(q: f64) -> (InitialDataParams, TimeSampledField, TimeSampledField, Vec<f64>) {
    let mut p = InitialDataParams::explicit(q, vec![3, 5, 7]);
    p.h = 0.125;
    let u0 = build_initial_data(&p).unwrap();
    let horizon = 2f64.powi(-8);
    let times = picard_grid(horizon, MassSpectrum::of(&u0).max_rate(), 2.0);
    let u1 = TimeSampledField::heat_flow(u0, horizon);
    let u2 = duhamel_trajectory_with(&u1, &u1, &times, false).unwrap();
    (p, u1, u2, times)
}

fn max_divergence_ratio(f: &PacketField) -> f64 {
    let scale = f.max_abs();
    let mut worst: f64 = 0.0;
    for p in f.packets() {
        for i in 0..p.envelope.num_points() {
            let xi = p.xi(i);
            let v = p.envelope.sample(i);
            let vn = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let xn = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if xn == 0.0 || vn <= 1e-14 * scale {
                continue;
            }
            worst = worst.max((v[0] * xi[0] + v[1] * xi[1] + v[2] * xi[2]).norm() / (xn * vn));
        }
    }
    worst
}

#[test]
fn small_data_contracts_and_solves() {
    let (p, u1, u2, times) = small_problem(0.5);
    let tol = 1e-6;
    let cfg = PicardConfig::with_tol(tol);
    let state = picard_remainder(&u1, &u2, &times, &cfg).unwrap();
    assert!(state.converged, "{:?}", state.log);
    for r in state.ratios() {
        assert!(r <= 0.5, "ratio {r}");
    }
    for &t in &times[1..] {
        assert!(max_divergence_ratio(&state.y.value_at(t)) <= 1e-10);
    }
    let fp = fixed_point_residual(&u1, &u2, &state, &cfg).unwrap();
    assert!(fp <= 2.0 * tol, "fixed-point residual {fp}");
    let horizon = *times.last().unwrap();
    let (mild, at) = mild_residual(&u1, &u2, &state, &[horizon / 8.0, horizon / 2.0, horizon], &cfg).unwrap();
    assert!(mild <= 5.0 * tol, "mild residual {mild}");
    assert_eq!(at.len(), 3);

    let div = time_step_schedule(&p.with_q(2.0)).unwrap();
    let rep = remainder_bound_report(&state, &p, &div, 4.0).unwrap();
    assert!(rep.y_final_upper > 0.0);
    let xs: Vec<f64> = rep.per_alpha.iter().map(|r| r.2).collect();
    assert!(xs.windows(2).all(|w| w[1] >= w[0]), "{xs:?}");
    assert!((rep.y_final_over_q2 - rep.y_final_upper / 0.25).abs() <= 1e-12 * rep.y_final_over_q2);
}

#[test]
fn remainder_scales_faster_than_amplitude() {
    // y starts at cubic order in the data, so halving Q shrinks y(T) by well over 4.
    let run = |q: f64| {
        let (p, u1, u2, times) = small_problem(q);
        let s = picard_remainder(&u1, &u2, &times, &PicardConfig::with_tol(1e-6)).unwrap();
        remainder_bound_report(&s, &p, &time_step_schedule(&p).unwrap(), 4.0).unwrap().y_final_upper
    };
    let (a, b) = (run(0.5), run(0.25));
    assert!(a > 0.0 && b > 0.0 && a / b > 4.0, "{a} {b}");
}

#[test]
fn config_round_trip() {
    let c = PicardConfig::with_tol(1e-4);
    assert_eq!(c.max_iter, 30);
    assert_eq!(c.prune_eps, 1e-6);
    let s = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<PicardConfig>(&s).unwrap(), c);
    let none = PicardConfig { prune_eps: 0.0, sample_budget: 0.0, ..c };
    assert!(none.node_prune().is_none());
}
