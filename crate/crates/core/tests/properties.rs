use std::f64::consts::PI;

use holograting::cwt::{self, build_system, propagate_fixed, thin_grating};
use holograting::instrument::{
    convolved_efficiencies, peak_fwhm, reduce_frame, rocking_scan, DetectorFrame, Region, SolverSettings, Spot,
};
use holograting::model::{bragg_angle, effective_thickness, index_modulation, Beam, Grating, MaterialModulation};
use holograting::zernike::{axial_shift, solve_layout, ThreeBeamField};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;

const NM: f64 = 1e-9;
const UM: f64 = 1e-6;

/// Exact propagator: the coupling matrix is real symmetric, so
/// `A(d) = V exp(i Λ d) Vᵀ e₀`.
fn eigen_efficiencies(g: &Grating, lambda: f64, theta: f64, max_order: usize) -> Vec<f64> {
    let sys = build_system(g, lambda, theta, max_order).unwrap();
    let n = 2 * max_order + 1;
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = sys.dephasing[i];
        if i + 1 < n {
            h[(i, i + 1)] = sys.coupling;
            h[(i + 1, i)] = sys.coupling;
        }
    }
    let eig = SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    (0..n)
        .map(|m| {
            let mut a = Complex64::default();
            for j in 0..n {
                let phase = Complex64::from_polar(1.0, eig.eigenvalues[j] * sys.depth);
                a += v[(m, j)] * v[(max_order, j)] * phase;
            }
            a.norm_sqr()
        })
        .collect()
}

fn grating_strategy() -> impl Strategy<Value = (Grating, f64)> {
    (0.3f64..3.0, 20.0f64..300.0, 0.0f64..4e-5, 0.0f64..1.2, 1.0f64..10.0).prop_map(|(sp, d, dn, tilt, lam)| {
        let g = Grating::new(sp * UM, d * UM, dn).unwrap().with_tilt(tilt).unwrap();
        (g, lam * NM)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn effective_thickness_is_even_and_grows_with_tilt(d in 1e-6f64..1e-3, a in 0.0f64..1.5, b in 0.0f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e_lo = effective_thickness(d, lo).unwrap();
        let e_hi = effective_thickness(d, hi).unwrap();
        prop_assert!(e_lo <= e_hi);
        prop_assert!(e_lo >= d);
        prop_assert_eq!(effective_thickness(d, -a).unwrap(), effective_thickness(d, a).unwrap());
    }

    #[test]
    fn index_modulation_is_quadratic_in_wavelength(sld in 1e12f64..1e15, lam in 0.1f64..20.0) {
        let m = MaterialModulation::from_sld(sld).unwrap();
        let one = index_modulation(lam * NM, &m).unwrap();
        let two = index_modulation(2.0 * lam * NM, &m).unwrap();
        prop_assert!((two / one - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bragg_angle_orders(l1 in 0.1f64..10.0, l2 in 0.1f64..10.0, sp in 0.2f64..5.0) {
        let (a, b) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        prop_assert!(bragg_angle(a * NM, sp * UM).unwrap() <= bragg_angle(b * NM, sp * UM).unwrap());
        prop_assert!(bragg_angle(a * NM, sp * UM).unwrap() >= bragg_angle(a * NM, 2.0 * sp * UM).unwrap());
    }

    #[test]
    fn energy_is_conserved((g, lam) in grating_strategy(), t in -3.0f64..3.0) {
        let theta = t * bragg_angle(lam, g.spacing).unwrap();
        let e = cwt::solve(&g, lam, theta, 4, cwt::DEFAULT_STEPS).unwrap();
        prop_assert!((e.total() - 1.0).abs() < 1e-6, "total {}", e.total());
        prop_assert!(e.values.iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)));
    }

    #[test]
    fn normal_incidence_is_symmetric((g, lam) in grating_strategy()) {
        let e = cwt::solve(&g, lam, 0.0, 4, cwt::DEFAULT_STEPS).unwrap();
        for m in 1..=4 {
            prop_assert!((e.get(m) - e.get(-m)).abs() < 1e-9);
        }
    }

    #[test]
    fn reciprocity((g, lam) in grating_strategy(), t in -3.0f64..3.0) {
        let theta = t * bragg_angle(lam, g.spacing).unwrap();
        let plus = cwt::solve(&g, lam, theta, 4, cwt::DEFAULT_STEPS).unwrap();
        let minus = cwt::solve(&g, lam, -theta, 4, cwt::DEFAULT_STEPS).unwrap();
        for m in -4..=4 {
            prop_assert!((plus.get(m) - minus.get(-m)).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_matches_exact_propagator((g, lam) in grating_strategy(), t in -2.0f64..2.0) {
        let theta = t * bragg_angle(lam, g.spacing).unwrap();
        let exact = eigen_efficiencies(&g, lam, theta, 4);
        let e = cwt::solve(&g, lam, theta, 4, cwt::DEFAULT_STEPS).unwrap();
        for (m, want) in (-4..=4).zip(&exact) {
            prop_assert!((e.get(m) - want).abs() < 1e-7, "order {m}: {} vs {want}", e.get(m));
        }
    }

    #[test]
    fn truncation_is_stable_for_the_splitter(dn in 2.50e-6f64..2.58e-6, t in -5.0f64..5.0) {
        let g = Grating::new(UM, 91.15 * UM, dn).unwrap().with_tilt(56f64.to_radians()).unwrap();
        let a = cwt::solve(&g, 1.7 * NM, t * 1e-3, 4, cwt::DEFAULT_STEPS).unwrap();
        let b = cwt::solve(&g, 1.7 * NM, t * 1e-3, 6, cwt::DEFAULT_STEPS).unwrap();
        for m in -2..=2 {
            prop_assert!((a.get(m) - b.get(m)).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_reduction_ignores_constant_offset(c in 0u64..500, net in prop::collection::vec(1u64..400, 5)) {
        let (rows, cols) = (4, 30);
        let mut counts = vec![0u64; rows * cols];
        let spots: Vec<Spot> = (-2..=2)
            .enumerate()
            .map(|(i, m)| Spot { order: m, region: Region::new(5 * i, 0, 5 * i + 2, 2) })
            .collect();
        for (s, &n) in spots.iter().zip(&net) {
            counts[s.region.x0] = n;
        }
        let frame = |offset: u64| DetectorFrame {
            rows,
            cols,
            pixel_pitch: 1e-3,
            counts: counts.iter().map(|v| v + offset).collect(),
            spots: spots.clone(),
            background: Region::new(26, 0, 30, 4),
        };
        let a = reduce_frame(&frame(0)).unwrap();
        let b = reduce_frame(&frame(c)).unwrap();
        for (m, v) in &a {
            prop_assert!((v - b[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_step_translates_along_z(
        dphi in -10.0f64..10.0,
        phi in 0.0f64..6.3,
        x in -5.0f64..5.0,
        z in 0.0f64..1e-3,
        w in prop::array::uniform3(0.1f64..1.0),
    ) {
        let lam = 8.0 * NM;
        let alpha = 4e-3;
        let amps = w.map(|v| Complex64::new(v, 0.0));
        let f = ThreeBeamField::normalized(amps, phi, alpha, lam).unwrap();
        let dz = axial_shift(dphi, lam, alpha).unwrap();
        let shifted = f.with_phase(phi + dphi).intensity(x * UM, z);
        prop_assert!((shifted - f.intensity(x * UM, z + dz)).abs() < 1e-9);
    }

    #[test]
    fn global_phase_is_invisible(gamma in 0.0f64..6.3, x in -5.0f64..5.0, z in 0.0f64..1e-3) {
        let f = ThreeBeamField::equal_split(PI / 2.0, 4e-3, 8.0 * NM).unwrap();
        let rot = Complex64::from_polar(1.0, gamma);
        let g = ThreeBeamField::new(f.amplitudes.map(|a| a * rot), f.phase, f.half_angle, f.wavelength).unwrap();
        prop_assert!((f.intensity(x * UM, z) - g.intensity(x * UM, z)).abs() < 1e-12);
    }

    #[test]
    fn pattern_is_periodic_in_x(x in -5.0f64..5.0, z in 0.0f64..1e-3, phi in 0.0f64..6.3) {
        let f = ThreeBeamField::equal_split(phi, 4e-3, 8.0 * NM).unwrap();
        let p = 8.0 * NM / (2.0 * (4e-3f64).sin());
        prop_assert!((f.intensity(x * UM, z) - f.intensity(x * UM + 2.0 * p, z)).abs() < 1e-9);
        // with the central beam in quadrature the period halves
        let q = ThreeBeamField::equal_split(PI / 2.0, 4e-3, 8.0 * NM).unwrap();
        prop_assert!((q.intensity(x * UM, 0.0) - q.intensity(x * UM + p, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn layout_is_self_consistent(
        lam in 1.0f64..20.0,
        sp in 0.2f64..2.0,
        s in 2.0f64..50.0,
        p in 0.1f64..5.0,
    ) {
        prop_assume!(lam * NM < sp * UM && p * UM > lam * NM);
        let l = solve_layout(lam * NM, sp * UM, s * 1e-3, 1e-3, p * UM).unwrap();
        prop_assert!((l.splitter_to_mirror * l.first_order_angle.tan() / (s * 1e-3) - 1.0).abs() < 1e-12);
        prop_assert!((l.mirror_to_detector * l.half_angle.tan() / (s * 1e-3) - 1.0).abs() < 1e-12);
        prop_assert!((l.fringe_period() / (p * UM) - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn convolution_preserves_total(dn in 1e-6f64..4e-6, t in -4.0f64..4.0) {
        let g = Grating::new(UM, 91.15 * UM, dn).unwrap().with_tilt(56f64.to_radians()).unwrap();
        let beam = Beam::new(1.7 * NM, 0.1, 1e-3).unwrap();
        let e = convolved_efficiencies(&g, &beam, t * 1e-3, &SolverSettings::default()).unwrap();
        prop_assert!((e.total() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn thin_limit_matches_bessel(dn in 0.0f64..4e-4, lam in 1.0f64..10.0) {
        // Q = 2πλd/Λ² stays below 0.01
        let g = Grating::new(10.0 * UM, 0.5 * UM, dn).unwrap();
        let q = 2.0 * PI * lam * NM * g.thickness / (g.spacing * g.spacing);
        prop_assume!(q < 0.01);
        let e = cwt::solve(&g, lam * NM, 0.0, 6, cwt::DEFAULT_STEPS).unwrap();
        let j = thin_grating(&g, lam * NM, 6).unwrap();
        for m in -2..=2 {
            prop_assert!((e.get(m) - j.get(m)).abs() < 1e-4);
        }
    }
}

#[test]
fn fixed_step_matches_eigen_oracle_at_the_splitter_point() {
    let g = Grating::new(UM, 91.15 * UM, 2.54e-6).unwrap().with_tilt(56f64.to_radians()).unwrap();
    for t in [-2e-3, -0.85e-3, 0.0, 0.4e-3, 3e-3] {
        let exact = eigen_efficiencies(&g, 1.7 * NM, t, 4);
        let sys = build_system(&g, 1.7 * NM, t, 4).unwrap();
        let e = cwt::efficiencies(&propagate_fixed(&sys, 4096));
        for (m, want) in (-4..=4).zip(&exact) {
            assert!((e.get(m) - want).abs() < 1e-9, "theta {t} order {m}");
        }
    }
}

#[test]
fn deep_pendelloesung_period() {
    // η₁ at Bragg returns to zero after a thickness λ cosθ_B / Δn
    let lam = 8.0 * NM;
    let dn = 1e-5;
    let g = Grating::new(0.25 * UM, 10.0 * UM, dn).unwrap();
    let tb = bragg_angle(lam, g.spacing).unwrap();
    let period = lam * tb.cos() / dn;
    let n = 801;
    let ds: Vec<f64> = (0..n).map(|i| 0.6 * period + 0.8 * period * i as f64 / (n - 1) as f64).collect();
    let eta: Vec<f64> = ds
        .iter()
        .map(|&d| cwt::solve(&g.with_thickness(d).unwrap(), lam, tb, 4, cwt::DEFAULT_STEPS).unwrap().get(1))
        .collect();
    let (imin, _) = eta.iter().enumerate().fold((0, f64::MAX), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    assert!((ds[imin] / period - 1.0).abs() < 0.01, "{} vs {period}", ds[imin]);
}

fn scan_column(g: &Grating, beam: &Beam, lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let c = rocking_scan(g, beam, lo, hi, n, &SolverSettings::default()).unwrap();
    let y = c.column(1).unwrap();
    (c.theta, y)
}

#[test]
fn convolution_lowers_and_widens_the_bragg_peak() {
    let lam = 1.7 * NM;
    let g = Grating::new(UM, 150.0 * UM, 2.0e-6).unwrap();
    let tb = bragg_angle(lam, g.spacing).unwrap();
    let sharp = Beam::monochromatic(lam).unwrap();
    let broad = Beam::new(lam, 0.05, 0.5e-3).unwrap();
    let (x, y0) = scan_column(&g, &sharp, tb - 12e-3, tb + 12e-3, 241);
    let (_, y1) = scan_column(&g, &broad, tb - 12e-3, tb + 12e-3, 241);
    let p0 = (0..y0.len()).max_by(|&a, &b| y0[a].total_cmp(&y0[b])).unwrap();
    let p1 = (0..y1.len()).max_by(|&a, &b| y1[a].total_cmp(&y1[b])).unwrap();
    assert!(y1[p1] < y0[p0]);
    assert!(peak_fwhm(&x, &y1, p1).unwrap() > peak_fwhm(&x, &y0, p0).unwrap());
}

#[test]
fn divergence_flattens_the_bragg_peak() {
    // brute-force oracle: average the monochromatic curve over a fine Gaussian grid
    let lam = 1.7 * NM;
    let g = Grating::new(UM, 150.0 * UM, 2.0e-6).unwrap();
    let tb = bragg_angle(lam, g.spacing).unwrap();
    let window: Vec<f64> = (0..21).map(|i| tb - 3e-3 + 6e-3 * i as f64 / 20.0).collect();
    let mut last = f64::INFINITY;
    for div in [0.25e-3, 0.5e-3, 1e-3, 2e-3] {
        let beam = Beam::new(lam, 0.0, div).unwrap();
        let settings = SolverSettings { nodes: 9, ..SolverSettings::default() };
        let model: Vec<f64> = window
            .iter()
            .map(|&t| convolved_efficiencies(&g, &beam, t, &settings).unwrap().get(1))
            .collect();
        let sigma = div / (8.0 * 2f64.ln()).sqrt();
        let brute: Vec<f64> = window
            .iter()
            .map(|&t| {
                let (mut s, mut w) = (0.0, 0.0);
                for k in -400..=400 {
                    let u = k as f64 / 100.0;
                    let wt = (-0.5 * u * u).exp();
                    s += wt * cwt::solve(&g, lam, t + u * sigma, 4, cwt::DEFAULT_STEPS).unwrap().get(1);
                    w += wt;
                }
                s / w
            })
            .collect();
        for (a, b) in model.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-3, "divergence {div}: {a} vs {b}");
        }
        let max = model.iter().copied().fold(f64::MIN, f64::max);
        let min = model.iter().copied().fold(f64::MAX, f64::min);
        let ratio = max / min;
        assert!(ratio < last, "divergence {div}: ratio {ratio} not below {last}");
        last = ratio;
    }
}
