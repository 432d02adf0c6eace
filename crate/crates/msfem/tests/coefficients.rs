use msfem::fem::sample_operator;
use msfem::mesh::{build_coarse, refine_nested, Meshes};
use msfem::offline::{BasisStore, Flavor, OfflineOptions};
use msfem::problem::{Matrix2, Problem};

fn store(p: &Problem, n: usize, levels: usize, flavors: &[Flavor]) -> (Meshes, BasisStore) {
    let meshes = refine_nested(&build_coarse(p.dim, n).unwrap(), levels).unwrap();
    let sample = sample_operator(&meshes, &p.fields);
    let mut st = BasisStore::new(p, &meshes, &sample, OfflineOptions::default()).unwrap();
    for f in flavors {
        st.ensure(*f, &meshes, &sample).unwrap();
    }
    (meshes, st)
}

fn min_eig_sym(m: Matrix2) -> f64 {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
}

#[test]
fn effective_advection_equals_constant_field() {
    let b = [0.6, -0.8];
    let p = Problem::testcase_2d_moderate(2f64.powi(-3), 2f64.powi(-3)).unwrap().with_advection("const", move |_| b);
    let (_, st) = store(&p, 4, 4, &[Flavor::Diffusion, Flavor::Weak]);
    for e in &st.elements {
        let s = &e.scalars;
        for bb in [s.b_bar_p1, s.b_bar.unwrap(), s.b_bar_msfem_lin.unwrap()] {
            assert!((bb[0] - b[0]).abs() < 1e-10 && (bb[1] - b[1]).abs() < 1e-10, "{bb:?}");
        }
    }
}

#[test]
fn effective_advection_tracks_the_mean_for_smooth_fields() {
    // only approximately: the corrector perturbs the mean when b varies inside K
    let p = Problem::testcase_2d_moderate(2f64.powi(-3), 2f64.powi(-4)).unwrap();
    let (_, st) = store(&p, 4, 4, &[Flavor::Weak]);
    for e in &st.elements {
        let (m, w) = (e.scalars.b_bar_p1, e.scalars.b_bar.unwrap());
        assert!((m[0] - w[0]).abs() < 0.05 && (m[1] - w[1]).abs() < 0.05, "{m:?} vs {w:?}");
    }
}

#[test]
fn multiscale_diffusion_lies_below_the_average() {
    // Voigt bound: the energy-minimizing effective tensor is dominated by the arithmetic mean
    let p = Problem::testcase_2d_moderate(0.5, 2f64.powi(-3)).unwrap().with_advection("zero", |_| [0.0, 0.0]);
    let (_, st) = store(&p, 4, 4, &[Flavor::Diffusion]);
    for e in &st.elements {
        let (avg, lin) = (e.scalars.a_bar_p1, e.scalars.a_bar_msfem_lin.unwrap());
        let diff = [[avg[0][0] - lin[0][0], avg[0][1] - lin[0][1]], [avg[1][0] - lin[1][0], avg[1][1] - lin[1][1]]];
        assert!(min_eig_sym(diff) > -1e-12, "{diff:?}");
        assert!(min_eig_sym(lin) > 0.0);
    }
}

#[test]
fn bubble_parameter_is_below_supg_in_2d() {
    let s = 0.5f64.sqrt();
    let p = Problem::constant(2, 1e-3, [s, s], 1.0).unwrap();
    let (_, st) = store(&p, 4, 5, &[Flavor::Strong]);
    for e in &st.elements {
        let (tb, t) = (e.scalars.tau_b.unwrap(), e.scalars.tau);
        assert!(tb > 0.0 && tb < t, "tau_b {tb} vs tau {t}");
    }
}

#[test]
fn bubble_parameter_is_supg_in_1d() {
    // one dimension, constant coefficients: tau^B is the optimal SUPG value up to the fine-mesh error
    let p = Problem::constant(1, 0.01, [1.0, 0.0], 1.0).unwrap();
    let (_, st) = store(&p, 8, 10, &[Flavor::Strong]);
    for e in &st.elements {
        let (tb, t) = (e.scalars.tau_b.unwrap(), e.scalars.tau);
        assert!(((tb - t) / t).abs() < 1e-3, "tau_b {tb} vs tau {t}");
    }
}
