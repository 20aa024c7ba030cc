use lacuna::analysis::LPFilter;
use lacuna::construction::*;
use lacuna::packets::{FrequencyCenter, PacketField};
use proptest::prelude::*;

fn max_divergence_ratio(f: &PacketField) -> f64 {
    let mut worst: f64 = 0.0;
    for p in f.packets() {
        let e = &p.envelope;
        for i in 0..e.num_points() {
            let xi = p.xi(i);
            let v = e.sample(i);
            let vn = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let xn = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if vn == 0.0 || xn == 0.0 {
                continue;
            }
            let dot = v[0] * xi[0] + v[1] * xi[1] + v[2] * xi[2];
            worst = worst.max(dot.norm() / (xn * vn));
        }
    }
    worst
}

fn conjugate_symmetric(f: &PacketField, tol: f64) -> bool {
    let scale = f.packets().iter().map(|p| p.envelope.max_abs()).fold(0.0, f64::max);
    for p in f.packets() {
        let Some(q) = f.get(&-p.center) else { return false };
        let e = &p.envelope;
        for i in 0..e.num_points() {
            let l = e.lattice(i);
            let j = match q.envelope.index_of([-l[0], -l[1], -l[2]]) {
                Some(j) => j,
                None => {
                    if e.sample_norm(i) > tol * scale {
                        return false;
                    }
                    continue;
                }
            };
            for (a, b) in e.sample(i).iter().zip(q.envelope.sample(j)) {
                if (a - b.conj()).norm() > tol * scale {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn lacunary_schedule_examples() {
    let p = InitialDataParams::lacunary(1.0, 3, 7);
    let s = frequency_schedule(&p).unwrap();
    assert_eq!(s.len(), 4);
    assert_eq!(s[0].j, 7);
    assert_eq!(s[0].k_norm(), 128.0);
    assert_eq!(s[1].j, 15);
    assert_eq!(s[1].k, FrequencyCenter::new(0, 32768, 0));
    assert_eq!(s[1].k_prime, FrequencyCenter::new(8, -32768, 0));
    assert_eq!(s[2].j, 24);
    assert_eq!(s[3].j, 34);
    for e in &s {
        assert_eq!(e.k.checked_add(&e.k_prime), Some(NU));
    }
}

#[test]
fn schedule_guards() {
    let big = InitialDataParams::lacunary(1.0, 16, 7);
    assert!(matches!(frequency_schedule(&big), Err(ConstructionError::ScheduleOverflow { .. })));
    let dense = InitialDataParams::explicit(1.0, vec![4, 5]);
    assert!(matches!(frequency_schedule(&dense), Err(ConstructionError::ScheduleTooDense(0))));
    let mut short = InitialDataParams::explicit(1.0, vec![4, 6, 8]);
    short.r = 3;
    assert!(matches!(frequency_schedule(&short), Err(ConstructionError::ScheduleLength { .. })));
    let mut zero = InitialDataParams::lacunary(1.0, 1, 7);
    zero.r = 0;
    assert!(frequency_schedule(&zero).is_err());
}

#[test]
fn psi_normalization_and_moment() {
    let psi = make_psi(1.0 / 16.0).unwrap();
    let e = &psi.envelope;
    let h3 = psi.h.powi(3);
    let mass: f64 = (0..e.num_points()).map(|i| e.sample(i)[0].re).sum::<f64>() * h3;
    assert!((mass - 1.0).abs() <= 1e-10, "mass {mass}");
    let m1 = psi.first_moment();
    assert!(m1 > 0.1 && m1 < 0.25, "first moment {m1}");
    let origin = e.index_of([0, 0, 0]).unwrap();
    assert!((e.sample(origin)[0].re - psi.c * (-1.0f64).exp()).abs() <= 1e-15 * psi.c);
    for i in 0..e.num_points() {
        let v = e.sample(i)[0];
        assert!(v.re >= 0.0 && v.im == 0.0);
        let o = e.offset(i);
        if (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt() >= PSI_RADIUS {
            assert_eq!(v.re, 0.0);
        }
    }
    assert!(make_psi(0.3).is_err());
    assert!(make_psi(0.0).is_err());
}

#[test]
fn bump_is_radial_profile() {
    assert!((bump(0.0) - (-1.0f64).exp()).abs() < 1e-16);
    assert_eq!(bump(0.25), 0.0);
    assert_eq!(bump(0.3), 0.0);
    assert!(bump(0.1) > bump(0.2));
}

#[test]
fn datum_divergence_free_and_real() {
    let p = InitialDataParams::lacunary(1.5, 3, 7);
    let u0 = build_initial_data(&p).unwrap();
    assert!(max_divergence_ratio(&u0) <= 1e-12);
    assert!(u0.divergence_defect() <= 1e-12);
    assert!(u0.is_real_valued());
    assert!(conjugate_symmetric(&u0, 1e-15));
}

#[test]
fn single_mode_centers_and_support() {
    let p = InitialDataParams::lacunary(1.0, 1, 7);
    let u0 = build_initial_data(&p).unwrap();
    let k = 1i128 << 15;
    let mut got = u0.centers();
    got.sort_by_key(|c| c.as_array());
    let mut want = vec![
        FrequencyCenter::new(0, k, 0),
        FrequencyCenter::new(0, -k, 0),
        FrequencyCenter::new(8, -k, 0),
        FrequencyCenter::new(-8, k, 0),
    ];
    want.sort_by_key(|c| c.as_array());
    assert_eq!(got, want);
    for pk in u0.packets() {
        assert!(pk.envelope.occupied_radius() <= PSI_RADIUS);
    }
}

#[test]
fn summand_parts_add_up() {
    let p = InitialDataParams::lacunary(1.0, 1, 7);
    let e = &frequency_schedule(&p).unwrap()[1];
    let psi = make_psi(p.h).unwrap();
    let full = summand(e, &psi, Part::Full).unwrap();
    let cos = summand(e, &psi, Part::Cosine).unwrap();
    let sin = summand(e, &psi, Part::Sine).unwrap();
    // Full = Cosine - |k| Sine, by the sign conventions of the four terms.
    let rebuilt = lacuna::packets::add(&cos, &sin.scaled(e.k_norm())).unwrap();
    let d = lacuna::packets::sub(&rebuilt, &full).unwrap();
    assert!(d.mass() <= 1e-12 * full.mass(), "{}", d.mass() / full.mass());
    let plus = summand(e, &psi, Part::PlusPair).unwrap();
    let minus = summand(e, &psi, Part::MinusPair).unwrap();
    assert_eq!(plus.len(), 2);
    assert_eq!(minus.len(), 2);
    // sin(a) = (e^{ia} - e^{-ia}) / 2i, so Sine = (PlusPair - MinusPair) / 2i restricted to Psi2, Psi4.
    let diff = lacuna::packets::sub(&plus, &minus).unwrap();
    let s = diff.scaled_complex(num_complex::Complex64::new(0.0, -0.5));
    let d = lacuna::packets::sub(&s, &sin).unwrap();
    assert!(d.mass() <= 1e-12 * sin.mass());
}

#[test]
fn amplitude_scaling_is_exact() {
    let p = InitialDataParams::lacunary(0.75, 2, 7);
    let a = build_initial_data(&p).unwrap();
    let b = build_initial_data(&p.with_q(1.5)).unwrap();
    let a2 = a.scaled(2.0);
    assert_eq!(a2.len(), b.len());
    for (x, y) in a2.packets().iter().zip(b.packets()) {
        assert_eq!(x.center, y.center);
        assert_eq!(x.envelope.data(), y.envelope.data());
    }
}

#[test]
fn block_decomposition_levels() {
    let filter = LPFilter::default();
    let p = InitialDataParams::lacunary(2.0, 3, 7);
    let u0 = build_initial_data(&p).unwrap();
    let d = block_decomposition(&u0, &p, &filter).unwrap();
    let levels: Vec<i32> = d.levels.iter().map(|(l, _)| *l).collect();
    assert_eq!(levels, vec![15, 24, 34]);
    assert!((d.scale - 2.0 / 3f64.sqrt()).abs() < 1e-15);
    let rep = d.representation();
    let sum = lacuna::packets::sum_all(3, rep.iter().map(|(_, f)| f)).unwrap();
    let defect = lacuna::packets::sub(&sum, &u0).unwrap().mass();
    assert!(defect <= 1e-12 * u0.mass());

    let p1 = InitialDataParams::lacunary(1.0, 1, 7);
    let u1 = build_initial_data(&p1).unwrap();
    assert_eq!(block_decomposition(&u1, &p1, &filter).unwrap().levels.len(), 1);
}

#[test]
fn block_decomposition_rejects_overlapping_blocks() {
    let p = InitialDataParams::explicit(1.0, vec![1, 3]);
    let u0 = build_initial_data(&p).unwrap();
    assert!(block_decomposition(&u0, &p, &LPFilter::default()).is_err());
}

#[test]
fn params_json_round_trip() {
    let p = InitialDataParams::explicit(2.5, vec![4, 6, 8]);
    let s = serde_json::to_string(&p).unwrap();
    let back: InitialDataParams = serde_json::from_str(&s).unwrap();
    assert_eq!(back, p);
    let bad = r#"{"q":1.0,"r":1,"m0":7,"schedule":"lacunary","extra":1}"#;
    assert!(serde_json::from_str::<InitialDataParams>(bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn explicit_schedules_stay_solenoidal(start in 3u32..20, gaps in proptest::collection::vec(2u32..9, 1..4), q in 0.1f64..4.0) {
        let mut js = vec![start];
        for g in gaps {
            let n = js.last().unwrap() + g;
            js.push(n);
        }
        let mut p = InitialDataParams::explicit(q, js);
        p.h = 1.0 / 8.0;
        let u0 = build_initial_data(&p).unwrap();
        prop_assert!(max_divergence_ratio(&u0) <= 1e-12);
        prop_assert!(conjugate_symmetric(&u0, 1e-15));
        prop_assert_eq!(u0.len(), 4 * p.r);
    }
}
