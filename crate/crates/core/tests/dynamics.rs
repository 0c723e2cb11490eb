mod common;

use std::time::Instant;

use common::reference_fit;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use spinbath::bath::{BathSpec, CorrelationFit, ExpTerm};
use spinbath::dynamics::{
    build_initial, equilibrate, gibbs_state, integrate, rhs, DriveSpec, EquilibrationControls, ExtendedState,
    InitialStateKind, Propagator,
};
use spinbath::integrator::OdeControls;
use spinbath::operators::{trace_norm_half, QubitOperator};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

type M2 = [[Complex64; 2]; 2];

fn mat(op: &QubitOperator) -> M2 {
    op.m
}

/// Row-major vectorization helpers, written out independently of the library.
fn vec_of(m: &M2) -> DVector<Complex64> {
    DVector::from_vec(vec![m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn unvec(v: &DVector<Complex64>) -> QubitOperator {
    QubitOperator::new(v[0], v[1], v[2], v[3])
}

/// Matrix of `K ↦ −i(HK − KH) + γK` acting on row-major vec(K).
fn shifted_liouvillian(h: &M2, gamma: Complex64) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(4, 4);
    let mi = c(0.0, -1.0);
    for i in 0..2 {
        for j in 0..2 {
            let row = 2 * i + j;
            for k in 0..2 {
                // (HK)_{ij} = Σ_k H_ik K_kj ; (KH)_{ij} = Σ_k K_ik H_kj
                m[(row, 2 * k + j)] += mi * h[i][k];
                m[(row, 2 * i + k)] -= mi * h[k][j];
            }
            m[(row, row)] += gamma;
        }
    }
    m
}

fn sigma_x_times(rho: &M2) -> M2 {
    [[rho[1][0], rho[1][1]], [rho[0][0], rho[0][1]]]
}

/// Stationary K for fixed ρ: (L + γ)K = iα σ_x ρ.
fn stationary_aux(fit: &CorrelationFit, rho: &QubitOperator) -> Vec<QubitOperator> {
    let h = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
    let b = vec_of(&sigma_x_times(&mat(rho)));
    fit.terms
        .iter()
        .map(|t| {
            let m = shifted_liouvillian(&h, t.gamma);
            let rhs = b.map(|z| z * c(0.0, 1.0) * t.alpha);
            unvec(&m.lu().solve(&rhs).expect("nonsingular"))
        })
        .collect()
}

/// Residual dρ/dt of the field-free equation once K is slaved to ρ.
fn slaved_rho_rate(fit: &CorrelationFit, rho: &QubitOperator) -> M2 {
    let aux = stationary_aux(fit, rho);
    let r = mat(rho);
    let mut s = [[c(0.0, 0.0); 2]; 2];
    for k in &aux {
        let k = mat(k);
        for i in 0..2 {
            for j in 0..2 {
                s[i][j] += k[i][j] + k[j][i].conj();
            }
        }
    }
    let mi = c(0.0, -1.0);
    // −i[σ_z, ρ] − i[σ_x, S]
    let mut out = [[c(0.0, 0.0); 2]; 2];
    let sz = [1.0, -1.0];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = mi * (sz[i] - sz[j]) * r[i][j] + mi * (s[1 - i][j] - s[i][1 - j]);
        }
    }
    out
}

/// Stationary ρ by solving the affine 3×3 system in (p, Re c, Im c), then its slaved K.
fn stationary_oracle(fit: &CorrelationFit) -> (QubitOperator, Vec<QubitOperator>) {
    let build = |x: &Vector3<f64>| QubitOperator::new(c(x[0], 0.0), c(x[1], x[2]), c(x[1], -x[2]), c(1.0 - x[0], 0.0));
    let eqs = |x: &Vector3<f64>| {
        let d = slaved_rho_rate(fit, &build(x));
        Vector3::new(d[0][0].re, d[0][1].re, d[0][1].im)
    };
    let base = eqs(&Vector3::zeros());
    let mut a = Matrix3::zeros();
    for j in 0..3 {
        let mut e = Vector3::zeros();
        e[j] = 1.0;
        a.set_column(j, &(eqs(&e) - base));
    }
    let x = a.lu().solve(&(-base)).expect("unique stationary state");
    let rho = build(&x);
    let aux = stationary_aux(fit, &rho);
    (rho, aux)
}

fn reference_equilibrium() -> &'static spinbath::dynamics::Equilibrium {
    static EQ: std::sync::OnceLock<spinbath::dynamics::Equilibrium> = std::sync::OnceLock::new();
    EQ.get_or_init(|| {
        let start = Instant::now();
        let eq = equilibrate(reference_fit(), 10.0, &EquilibrationControls::default(), &OdeControls::default()).unwrap();
        println!("equilibrated after t = {} in {:?}", eq.horizon, start.elapsed());
        eq
    })
}

fn sz(rho: &QubitOperator) -> f64 {
    (rho.m[0][0] - rho.m[1][1]).re
}

#[test]
fn closed_system_pi_pulse_rwa() {
    let fit = CorrelationFit::uncoupled();
    for amp in [0.03, 0.2, 1.0, 4.0] {
        let duration = std::f64::consts::PI / amp;
        let drive = DriveSpec::resonant(amp, true, duration);
        let s = ExtendedState::factorized(QubitOperator::ground(), 1, 0.0);
        let out = Propagator::new(&fit, drive, OdeControls::default())
            .unwrap()
            .run(&s, duration, &[], |_| {})
            .unwrap();
        assert!((1.0 - out.rho.m[0][0].re) < 1e-6, "amp {amp}: {:?}", out.rho);
        assert!(out.rho.m[0][1].norm() < 1e-6);
    }
}

#[test]
fn stationary_aux_matches_linear_solve() {
    let fit = CorrelationFit {
        terms: vec![ExpTerm {
            alpha: c(0.3, -0.1),
            gamma: c(-0.8, 0.4),
        }],
        residual: 0.0,
        sample_horizon: 1.0,
    };
    let rho = gibbs_state(2.0);
    let aux = stationary_aux(&fit, &rho);
    let s = ExtendedState { rho, aux, t: 0.0 };
    let d = rhs(&s, &fit, &DriveSpec::off()).unwrap();
    assert!(d.aux[0].max_abs() < 1e-14, "{:?}", d.aux[0]);
}

#[test]
fn equilibrium_matches_stationary_oracle() {
    let fit = reference_fit();
    let eq = reference_equilibrium();
    let (rho, aux) = stationary_oracle(fit);
    println!("oracle ρ: {rho:?}\nequilibrated ρ: {:?}", eq.state.rho);
    assert!((eq.state.rho - rho).max_abs() < 1e-6);
    for (k, o) in eq.state.aux.iter().zip(&aux) {
        assert!((*k - *o).max_abs() < 1e-6, "{k:?} vs {o:?}");
    }
    // the spin-boson symmetry keeps second-order corrections to ρ_s small
    let d = trace_norm_half(&(eq.state.rho - gibbs_state(10.0)));
    println!("D(ρ_eq, ρ_s^eq) = {d:e}");
    assert!(d < 5e-3);
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let fit = reference_fit();
    let eq = reference_equilibrium();
    let prop = Propagator::new(fit, DriveSpec::off(), OdeControls::default()).unwrap();
    let later = prop.run(&eq.state, 20.0, &[], |_| {}).unwrap();
    assert!(later.max_abs_diff(&eq.state) < 20.0 * 1e-10);
    let mut max_dev: f64 = 0.0;
    let grid: Vec<f64> = (0..=200).map(|i| 0.1 * i as f64).collect();
    let s0 = sz(&eq.state.rho);
    prop.run(&eq.state, 20.0, &grid, |s| max_dev = max_dev.max((sz(&s.rho) - s0).abs())).unwrap();
    assert!(max_dev < 1e-6, "{max_dev:e}");
}

#[test]
fn uncoupled_equilibration_is_immediate() {
    let eq = equilibrate(&CorrelationFit::uncoupled(), 10.0, &EquilibrationControls::default(), &OdeControls::default()).unwrap();
    assert_eq!(eq.horizon, 0.0);
    assert_eq!(eq.state.rho, gibbs_state(10.0));
    assert!(eq.state.aux.iter().all(|k| *k == QubitOperator::zero()));
}

#[test]
fn equilibration_reports_non_convergence() {
    let eq = EquilibrationControls {
        t_max: 1.0,
        ..Default::default()
    };
    let res = equilibrate(reference_fit(), 10.0, &eq, &OdeControls::default());
    assert!(matches!(res, Err(spinbath::dynamics::DynamicsError::NotConverged { .. })));
}

#[test]
fn driven_open_evolution_stays_physical() {
    let fit = reference_fit();
    let eq = reference_equilibrium();
    let drive = DriveSpec::resonant(0.7, false, 6.0);
    let grid: Vec<f64> = (0..=100).map(|i| 0.1 * i as f64).collect();
    let snaps = integrate(&eq.state, fit, &drive, 10.0, &OdeControls::default(), &grid).unwrap();
    assert_eq!(snaps.len(), grid.len());
    for s in &snaps {
        assert!(s.rho.hermiticity_defect() < 1e-10);
        assert!((s.rho.trace() - 1.0).norm() < 1e-8);
    }
}

#[test]
fn weak_coupling_driven_evolution_stays_positive() {
    // at ξ = 0.1 the decay rate exceeds the Rabi frequency of this pulse and the
    // second-order generator loses positivity by ~2%; at ξ = 0.03 it does not
    let fit = reference_fit().scaled(0.3);
    let drive = DriveSpec::resonant(0.2, false, std::f64::consts::PI / 0.2);
    let s0 = build_initial(&InitialStateKind::C, &fit, 10.0, None).unwrap();
    let grid: Vec<f64> = (0..=400).map(|i| 0.1 * i as f64).collect();
    for s in integrate(&s0, &fit, &drive, 40.0, &OdeControls::default(), &grid).unwrap() {
        let (lo, _) = s.rho.hermitian_eigenvalues();
        assert!(lo > -1e-8, "t = {}: eigenvalue {lo}", s.t);
    }
}

#[test]
fn weak_coupling_decay_follows_golden_rule() {
    let spec = BathSpec::reference().with_xi(0.01);
    let fit = reference_fit().scaled(0.1);
    let n = 1.0 / ((2.0 * spec.beta).exp() - 1.0);
    let j2 = 0.5 * spec.xi * 2.0 * (-2.0 / spec.omega_c).exp();
    let golden = 2.0 * std::f64::consts::PI * j2 * (n + 1.0);
    let (t1, t2) = (2.0 / golden, 4.0 / golden);
    let s0 = ExtendedState::factorized(QubitOperator::excited(), fit.len(), 0.0);
    let snaps = integrate(&s0, &fit, &DriveSpec::off(), t2, &OdeControls::default(), &[t1, t2]).unwrap();
    let rate = (snaps[0].rho.m[0][0].re / snaps[1].rho.m[0][0].re).ln() / (t2 - t1);
    assert!((rate / golden - 1.0).abs() < 0.02, "rate {rate} vs {golden}");
}

#[test]
fn propagation_is_linear() {
    let fit = reference_fit();
    let eq = reference_equilibrium();
    let drive = DriveSpec::resonant(1.5, false, 3.0);
    let prop = Propagator::new(fit, drive, OdeControls::default()).unwrap();
    let s1 = eq.state.clone();
    let s2 = build_initial(&InitialStateKind::D(QubitOperator::from_bloch(0.6, 0.0, 0.8)), fit, 10.0, None).unwrap();
    let (a, b) = (0.7, -1.3);
    let mixed = s1.combine(a, &s2, b);
    let r1 = prop.run(&s1, 5.0, &[], |_| {}).unwrap();
    let r2 = prop.run(&s2, 5.0, &[], |_| {}).unwrap();
    let rm = prop.run(&mixed, 5.0, &[], |_| {}).unwrap();
    assert!(rm.max_abs_diff(&r1.combine(a, &r2, b)) < 1e-8);
}

#[test]
fn halving_tolerances_is_self_consistent() {
    let fit = reference_fit();
    let eq = reference_equilibrium();
    let drive = DriveSpec::resonant(2.0, false, 1.0);
    let loose = OdeControls::default();
    let tight = loose.scaled(0.5);
    let a = integrate(&eq.state, fit, &drive, 4.0, &loose, &[4.0]).unwrap();
    let b = integrate(&eq.state, fit, &drive, 4.0, &tight, &[4.0]).unwrap();
    assert!(a[0].max_abs_diff(&b[0]) < 10.0 * loose.rtol);
}
