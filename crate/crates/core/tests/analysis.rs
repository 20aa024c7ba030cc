use lacuna::analysis::*;
use lacuna::construction::*;
use lacuna::packets::{self, make_packet, Envelope, FrequencyCenter, PacketField};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

/// `psi` in the first component, modulated to `center`.
fn psi_packet(center: FrequencyCenter, h: f64) -> PacketField {
    let psi = make_psi(h).unwrap();
    let env = Envelope::from_fn(h, PSI_RADIUS, 3, |eta, o| o[0] = C64::new(psi.value(eta), 0.0));
    PacketField::from_packets(3, vec![make_packet(center, env).unwrap()]).unwrap()
}

fn u0(q: f64, js: Vec<u32>) -> (InitialDataParams, PacketField) {
    let mut p = InitialDataParams::explicit(q, js);
    p.h = 1.0 / 8.0;
    let u = build_initial_data(&p).unwrap();
    (p, u)
}

#[test]
fn filter_plateau_support_partition() {
    let f = LPFilter::default();
    assert_eq!(f.phi(1.0), 1.0);
    assert_eq!(f.phi(0.5), 0.0);
    assert_eq!(f.phi(0.875), 1.0);
    assert_eq!(f.phi(1.25), 1.0);
    assert_eq!(f.phi(0.62), 0.0);
    assert_eq!(f.phi(1.76), 0.0);
    let s: f64 = (-3..=3).map(|j| f.phi(2f64.powi(-j) * 1.3)).sum();
    assert!((s - 1.0).abs() <= 1e-10);
    for &(rho, v) in &f.profile {
        assert!((0.0..=1.0).contains(&v), "phi({rho}) = {v}");
    }
    assert!(f.partition_residual <= 1e-10);
    assert!(lp_filter_build(0.0).is_err());
    assert!(lp_filter_build(f64::NAN).is_err());
}

proptest! {
    #[test]
    fn partition_of_unity_on_rays(x in -8.0f64..8.0, dir in prop::array::uniform3(-1.0f64..1.0)) {
        let n = packets::norm3(dir);
        prop_assume!(n > 1e-3);
        let f = LPFilter::default();
        let rho = 2f64.powf(x);
        let xi = [rho * dir[0] / n, rho * dir[1] / n, rho * dir[2] / n];
        let s: f64 = (-20..=20).map(|j| f.block_symbol(j, xi)).sum();
        prop_assert!((s - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn lp_block_examples() {
    let filter = LPFilter::default();
    let p = InitialDataParams::lacunary(1.0, 2, 7);
    let sched = frequency_schedule(&p).unwrap();
    let psi = make_psi(p.h).unwrap();
    for e in &sched[1..] {
        let f = summand(e, &psi, Part::Full).unwrap();
        let b = lp_block(&f, e.j as i32, &filter);
        let d = packets::sub(&b, &f).unwrap();
        assert_eq!(d.mass(), 0.0, "summand s = {} altered by its own block", e.s);
        for j in [e.j as i32 - 5, e.j as i32 - 2, e.j as i32 + 2, e.j as i32 + 3] {
            assert!(lp_block(&b, j, &filter).is_empty());
        }
    }
    assert!(lp_block(&PacketField::zero(3), 4, &filter).is_empty());
}

#[test]
fn triebel_single_block_is_q_independent() {
    let j = 10;
    let f = psi_packet(FrequencyCenter::new(0, 1 << j, 0), 1.0 / 16.0);
    let dec = vec![(j, f)];
    let want = 2f64.powi(-j);
    for q in [2.0, 3.0, 4.0, f64::INFINITY] {
        let b = triebel_upper_norm(&dec, q, &default_probes()).unwrap();
        assert!((b.upper - want).abs() <= 1e-12 * want, "q={q} upper {}", b.upper);
        assert!((b.lower - want).abs() <= 1e-12 * want, "q={q} lower {}", b.lower);
    }
}

#[test]
fn triebel_rejects_bad_input() {
    let (_, u) = u0(1.0, vec![4, 6, 8]);
    let dec = canonical_decomposition(&u, &LPFilter::default());
    assert!(matches!(triebel_upper_norm(&dec, 1.0, &[]), Err(AnalysisError::InvalidQ(_))));
    assert!(matches!(triebel_upper_norm(&dec, 0.5, &[]), Err(AnalysisError::InvalidQ(_))));
    let f = psi_packet(FrequencyCenter::new(0, 1 << 10, 0), 1.0 / 8.0);
    assert!(matches!(triebel_upper_norm(&[(4, f)], 2.0, &[]), Err(AnalysisError::IncompatibleBlock { .. })));
}

#[test]
fn triebel_monotone_and_homogeneous() {
    let (p, u) = u0(1.0, vec![4, 7, 10, 13]);
    let filter = LPFilter::default();
    let probes = default_probes();
    for dec in [canonical_decomposition(&u, &filter), block_decomposition(&u, &p, &filter).unwrap().representation()] {
        let mut prev = f64::INFINITY;
        for q in [1.5, 2.0, 3.0, 4.0, f64::INFINITY] {
            let b = triebel_upper_norm(&dec, q, &probes).unwrap();
            assert!(b.lower <= b.upper);
            assert!(b.upper <= prev * (1.0 + 1e-14));
            prev = b.upper;
        }
        let lam = -2.75;
        let scaled: Vec<(i32, PacketField)> = dec.iter().map(|(l, f)| (*l, f.scaled(lam))).collect();
        let a = triebel_upper_norm(&dec, 4.0, &probes).unwrap();
        let b = triebel_upper_norm(&scaled, 4.0, &probes).unwrap();
        assert!((b.upper - lam.abs() * a.upper).abs() <= 1e-12 * b.upper);
        assert!((b.lower - lam.abs() * a.lower).abs() <= 1e-12 * b.upper);
    }
}

#[test]
fn canonical_blocks_reproduce_field() {
    let (_, u) = u0(1.0, vec![4, 6, 9]);
    let filter = LPFilter::default();
    let dec = canonical_decomposition(&u, &filter);
    // sum_k Delta_k f_k = sum_k Delta_k f, since Delta_k (Delta_{k-1} + Delta_k + Delta_{k+1}) = Delta_k.
    let mut recon = PacketField::zero(3);
    for (k, fk) in &dec {
        recon = packets::add(&recon, &lp_block(fk, *k, &filter)).unwrap();
    }
    for x in default_probes().into_iter().take(10) {
        assert!(field_distance_at(&recon, &u, x) <= 1e-10 * u.mass());
    }
}

#[test]
fn besov_single_packet_matches_scan_oracle() {
    let mut cs = Vec::new();
    for j in [9, 15] {
        let kappa = 2f64.powi(j);
        let f = psi_packet(FrequencyCenter::new(0, 1i128 << j, 0), 1.0 / 16.0);
        let b = besov_norm(&f, &besov_grid(&f), &default_probes()).unwrap();
        // psi^ >= 0 peaks the heat flow at x = 0 with value e^{-t |kappa|^2} up to O(1/|kappa|).
        let oracle = 1.0 / ((2.0 * std::f64::consts::E).sqrt() * kappa);
        assert!(b.lower <= oracle * (1.0 + 1e-2) && b.upper >= oracle * (1.0 - 1e-2), "j={j} {b:?} vs {oracle}");
        assert!(b.upper <= 1.1 * b.lower, "bracket too loose at j={j}: {b:?}");
        let c = b.upper * kappa;
        assert!((0.1..=1.0).contains(&c));
        cs.push(c);
    }
    assert!((cs[0] / cs[1] - 1.0).abs() < 0.05);
}

#[test]
fn besov_zero_empty_and_homogeneous() {
    let z = besov_norm(&PacketField::zero(3), &[1.0], &default_probes()).unwrap();
    assert_eq!((z.lower, z.upper), (0.0, 0.0));
    let (_, u) = u0(1.0, vec![4, 6]);
    assert!(matches!(besov_norm(&u, &[], &default_probes()), Err(AnalysisError::EmptyGrid)));
    let g = besov_grid(&u);
    let a = besov_norm(&u, &g, &default_probes()).unwrap();
    let b = besov_norm(&u.scaled(3.0), &g, &default_probes()).unwrap();
    assert!((b.upper - 3.0 * a.upper).abs() <= 1e-12 * b.upper);
    assert!((b.lower - 3.0 * a.lower).abs() <= 1e-12 * b.upper);
}

#[test]
fn low_frequency_bracket() {
    let z = low_freq_linfty_lower(&PacketField::zero(3), &default_probes()).unwrap();
    assert_eq!((z.lower, z.upper), (0.0, 0.0));
    let far = psi_packet(FrequencyCenter::new(0, 1 << 15, 0), 1.0 / 8.0);
    match low_freq_linfty_lower(&far, &default_probes()) {
        Err(AnalysisError::OutsideLowBall { center, .. }) => assert_eq!(center, FrequencyCenter::new(0, 1 << 15, 0)),
        other => panic!("expected support error, got {other:?}"),
    }
    let near = psi_packet(FrequencyCenter::new(8, 0, 0), 1.0 / 8.0);
    let b = low_freq_linfty_lower(&near, &default_probes()).unwrap();
    assert!((b.lower - 1.0).abs() < 1e-12 && (b.upper - 1.0).abs() < 1e-12);
}

#[test]
fn maximal_function_small_ball_limit() {
    let f = psi_packet(FrequencyCenter::new(0, 0, 0), 1.0 / 16.0);
    let v0 = packets::vec_norm(&packets::evaluate(&f, [0.0; 3]));
    let m = maximal_function(&f, [0.0; 3], &[1e-3]);
    assert!(m >= v0 * (1.0 - 1e-5) && m <= v0 * (1.0 + 1e-12));
    let mut radii = vec![1e-3];
    let one = maximal_function(&f, [0.0; 3], &radii);
    radii.push(2.0);
    assert!(maximal_function(&f, [0.0; 3], &radii) >= one);
}

#[test]
fn carleson_zero_and_refinement() {
    let z = bmo_carleson_norm(&PacketField::zero(3), &BallGrid::dyadic(-2, 2)).unwrap();
    assert_eq!((z.lower, z.upper), (0.0, 0.0));
    let f = psi_packet(FrequencyCenter::new(0, 0, 0), 1.0 / 8.0);
    let coarse = bmo_carleson_norm(&f, &BallGrid::dyadic(-1, 5)).unwrap();
    let mut fine = BallGrid::dyadic(-1, 5);
    fine.radii = (-2..=10).map(|k| 2f64.powf(k as f64 / 2.0)).collect();
    let fine = bmo_carleson_norm(&f, &fine).unwrap();
    // The xi = 0 sample never decays, so the L1-mass upper end is infinite; the quadrature end is not.
    assert!(coarse.lower.is_finite() && coarse.lower > 0.0);
    assert!(coarse.lower <= coarse.upper && fine.lower <= fine.upper);
    assert!((fine.lower - coarse.lower).abs() <= 0.1 * fine.lower, "{coarse:?} {fine:?}");
    let off = psi_packet(FrequencyCenter::new(1, 0, 0), 1.0 / 8.0);
    let b = bmo_carleson_norm(&off, &BallGrid::dyadic(-2, 4)).unwrap();
    assert!(b.upper.is_finite() && b.lower > 0.0 && b.lower <= b.upper, "{b:?}");
}

#[test]
fn trajectory_norms() {
    let z = TimeSampledField::zero(1e-2);
    let balls = BallGrid::dyadic(-8, -3);
    let x = xt_norm(&z, 1e-2, &balls).unwrap();
    assert_eq!((x.lower, x.upper), (0.0, 0.0));
    let e = et_norm(&z, 1e-2, &default_probes(), &balls).unwrap();
    assert_eq!((e.lower, e.upper), (0.0, 0.0));

    let (_, u) = u0(1.0, vec![4, 6]);
    let horizon = 2f64.powi(-6);
    let flow = TimeSampledField::heat_flow(u, horizon);
    let x = xt_norm(&flow, horizon, &balls).unwrap();
    let e = et_norm(&flow, horizon, &default_probes(), &balls).unwrap();
    assert!(x.lower > 0.0 && x.lower <= x.upper);
    assert!(e.lower >= x.lower && e.upper >= x.upper);
    assert!((et_upper(&flow, horizon) - e.upper).abs() <= 1e-12 * e.upper);
    assert!((xt_upper(&flow, horizon) - x.upper).abs() <= 1e-12 * x.upper);
    assert!(xt_norm(&flow, 2.0 * horizon, &balls).is_err());
}

#[test]
fn sampled_trajectory_validation_and_interpolation() {
    let (_, u) = u0(1.0, vec![4, 6]);
    let f = |t: f64| packets::apply_multiplier(&u, &packets::MultiplierSpec::Heat { t }).unwrap();
    let times = vec![0.0, 1e-3, 3e-3];
    let fields: Vec<PacketField> = times.iter().map(|&t| f(t)).collect();
    assert!(TimeSampledField::sampled(times.clone(), fields[..2].to_vec(), Interpolation::HeatFromLeft, vec![0.0; 3]).is_err());
    assert!(TimeSampledField::sampled(vec![1e-4, 1e-3, 3e-3], fields.clone(), Interpolation::HeatFromLeft, vec![0.0; 3]).is_err());
    assert!(TimeSampledField::sampled(times.clone(), fields.clone(), Interpolation::HeatFromLeft, vec![0.0, -1.0, 0.0]).is_err());
    let s = TimeSampledField::sampled(times.clone(), fields.clone(), Interpolation::HeatFromLeft, vec![0.0; 3]).unwrap();
    // Heat-from-left is exact for a heat flow between nodes.
    for t in [5e-4, 1e-3, 2e-3, 3e-3] {
        let d = packets::sub(&s.value_at(t), &f(t)).unwrap().mass();
        assert!(d <= 1e-12 * u.mass(), "t={t} defect {d}");
    }
    let c = TimeSampledField::sampled(times, fields.clone(), Interpolation::ConstantLeft, vec![0.0; 3]).unwrap();
    assert_eq!(packets::sub(&c.value_at(2e-3), &fields[2]).unwrap().mass(), 0.0);
    assert_eq!(s.horizon(), 3e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn brackets_are_ordered_and_homogeneous(q in 1.0f64..4.0, lam in -5.0f64..5.0, qi in 1.2f64..6.0) {
        prop_assume!(lam.abs() > 1e-3);
        let (_, u) = u0(q, vec![4, 6, 9]);
        let dec = canonical_decomposition(&u, &LPFilter::default());
        let probes = default_probes();
        let a = triebel_upper_norm(&dec, qi, &probes).unwrap();
        prop_assert!(a.lower <= a.upper);
        let sdec: Vec<(i32, PacketField)> = dec.iter().map(|(l, f)| (*l, f.scaled(lam))).collect();
        let b = triebel_upper_norm(&sdec, qi, &probes).unwrap();
        prop_assert!((b.upper - lam.abs() * a.upper).abs() <= 1e-12 * b.upper);
        prop_assert!((b.lower - lam.abs() * a.lower).abs() <= 1e-12 * b.upper);
    }
}
