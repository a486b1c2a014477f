//! Values cross-checked against an independent dense-linear-algebra
//! calculation (numpy `eigh` and explicit determinants over every
//! configuration), plus closed forms.

use cgge_core::fit::{fit_cgge, fit_gge, CggeModel, CggeOptions};
use cgge_core::fock::distribution::{de_distribution, de_entropy, de_summary};
use cgge_core::fock::{wick_moments, DEFAULT_BUDGET};
use cgge_core::lattice::{build_hamiltonian, diagonalize, FermiRule, Quench, QuenchParams};

const SPECTRUM_30_J12: [f64; 30] = [
    -10.777657751553496, -10.777553025556383, -10.77755302555638, -10.777343528495518, -10.777343528495512,
    -10.777238757420244, -8.788843617427842, -8.788689387662066, -8.78868938766206, -8.788380970178128,
    -8.788380970178126, -8.78822678244834, 3.5419185251484153, 3.544592211031336, 3.5445922110313424,
    3.550124320994106, 3.550124320994107, 3.55299182450347, 3.7772387574202466, 3.7800849430981693,
    3.7800849430981747, 3.785574415897487, 3.7855744158974907, 3.7882267824483438, 12.235739226405084,
    12.235767368805679, 12.235767368805679, 12.2358236520653, 12.235823652065305, 12.235851792924375,
];

#[test]
fn superlattice_spectrum_n30() {
    let basis = diagonalize(&build_hamiltonian(&QuenchParams::half_filled(30, 12.0, 5)).unwrap()).unwrap();
    for (e, want) in basis.energies.iter().zip(SPECTRUM_30_J12) {
        assert!((e - want).abs() < 1e-10, "{e} vs {want}");
    }
}

fn quench(n: usize, j: f64) -> Quench {
    Quench::from_params(&QuenchParams::half_filled(n, j, 5), FermiRule::Error).unwrap()
}

#[test]
fn entropies_n10() {
    for (j, s_de, s_gge) in [(4.0, 2.5521492642875443, 4.857307001592447), (12.0, 2.9065031705380355, 5.486962394736606)] {
        let q = quench(10, j);
        let d = de_distribution(&q.overlap, DEFAULT_BUDGET).unwrap();
        assert!((de_entropy(&d) - s_de).abs() < 1e-10);
        let summary = de_summary(&q.overlap, &q.post, None).unwrap();
        assert!((summary.entropy - s_de).abs() < 1e-10);
        assert!((fit_gge(&wick_moments(&q.correlations)).entropy - s_gge).abs() < 1e-10);
    }
}

#[test]
fn quench_energy_is_the_ring_ground_energy() {
    // the superlattice averages to zero over a period, so <H_J> = E_0(J = 0)
    // = -2 (1 + 2 cos(pi/5) + 2 cos(2 pi/5)) for ten sites at half filling
    let want = -2.0 * (1.0 + 2.0 * (std::f64::consts::PI / 5.0).cos() + 2.0 * (2.0 * std::f64::consts::PI / 5.0).cos());
    for j in [4.0, 12.0] {
        assert!((quench(10, j).energy() - want).abs() < 1e-12);
    }
}

#[test]
fn cgge_matches_the_diagonal_ensemble_entropy() {
    // the reduced support makes the pairwise model exact at this size
    let q = quench(10, 12.0);
    let fit = fit_cgge(&wick_moments(&q.correlations), &CggeOptions::default()).unwrap();
    assert!((fit.entropy - 2.9065031705380355).abs() < 1e-7);
}

#[test]
fn model_file_round_trips_through_json() {
    let q = quench(10, 4.0);
    let fit = fit_cgge(&wick_moments(&q.correlations), &CggeOptions::default()).unwrap();
    let text = serde_json::to_string(&fit.model.to_file()).unwrap();
    let back = CggeModel::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, fit.model);
}
