use num_complex::Complex64;
use proptest::prelude::*;
use tdks_core::observables::{bound_population, ion_probabilities, AnalysisBox};
use tdks_core::propagation::{Absorber, AbsorberSpec};
use tdks_core::{Grid, GridSpec};

/// Sum over all 2ⁿ bound/escaped assignments with exactly `k` escaped.
fn charge_state(n: &[f64], k: u32) -> f64 {
    (0u32..1 << n.len())
        .filter(|m| m.count_ones() == k)
        .map(|m| {
            n.iter()
                .enumerate()
                .map(|(j, &nj)| if m >> j & 1 == 1 { 1.0 - nj } else { nj })
                .product::<f64>()
        })
        .sum()
}

fn grid() -> Grid {
    Grid::new(GridSpec::new(61, 0.3, 10, 0.5)).unwrap()
}

fn packet(g: &Grid, z0: f64, width: f64, k: f64) -> ndarray::Array2<Complex64> {
    g.sample(|z, r| {
        let a = (-((z - z0) / width).powi(2) - (r / width).powi(2)).exp();
        Complex64::from_polar(a, k * z)
    })
}

proptest! {
    #[test]
    fn probabilities_match_enumeration(n in prop::collection::vec(0.0f64..=1.0, 1..11)) {
        let p = ion_probabilities(&n).unwrap();
        prop_assert!((p.p0 - charge_state(&n, 0)).abs() < 1e-13);
        prop_assert!((p.p1 - charge_state(&n, 1)).abs() < 1e-13);
        prop_assert!((p.p0 + p.p1 + p.p2plus - 1.0).abs() < 1e-14);
        prop_assert!(p.p2plus >= -1e-14);
    }

    #[test]
    fn probabilities_ignore_orbital_order(
        (n, perm) in prop::collection::vec(0.0f64..=1.0, 1..16)
            .prop_flat_map(|n| { let len = n.len(); (Just(n), Just((0..len).collect::<Vec<_>>()).prop_shuffle()) })
    ) {
        let a = ion_probabilities(&n).unwrap();
        let shuffled: Vec<f64> = perm.iter().map(|&i| n[i]).collect();
        let b = ion_probabilities(&shuffled).unwrap();
        prop_assert!((a.p0 - b.p0).abs() < 1e-14);
        prop_assert!((a.p1 - b.p1).abs() < 1e-14);
    }

    #[test]
    fn bound_population_grows_with_the_box(
        z0 in -5.0f64..5.0, width in 0.8f64..4.0, k in -2.0f64..2.0,
        zh in 1.0f64..8.0, rh in 0.5f64..4.0, grow in 1.0f64..1.1,
    ) {
        let g = grid();
        let psi = packet(&g, z0, width, k);
        let small = AnalysisBox::new(zh, rh);
        let big = small.scaled(grow);
        let a = bound_population(&psi, &small, &g).unwrap();
        let b = bound_population(&psi, &big, &g).unwrap();
        prop_assert!(a <= b + 1e-15);
        prop_assert!(b <= g.norm_sqr(&psi) + 1e-12);
    }

    #[test]
    fn absorber_removes_exactly_what_it_reports(
        z0 in -8.0f64..8.0, width in 0.5f64..3.0, k in -3.0f64..3.0,
        onset in 2.0f64..4.0, fraction in 0.05f64..0.4, exponent in 0.05f64..1.0,
    ) {
        let g = grid();
        let spec = AbsorberSpec { enabled: true, z_fraction: fraction, rho_onset: onset, exponent };
        let ab = Absorber::new(&spec, &g).unwrap();
        let psi = packet(&g, z0, width, k);
        let before = g.norm_sqr(&psi);
        let mut flat: Vec<Complex64> = psi.iter().copied().collect();
        let removed = ab.apply(&mut flat);
        let after = g.norm_sqr(&ndarray::Array2::from_shape_vec(g.shape(), flat).unwrap());
        prop_assert!(removed >= 0.0);
        prop_assert!(after <= before);
        prop_assert!((before - after - removed).abs() <= 1e-12 * before);
    }
}
