mod common;

use std::f64::consts::PI;
use std::path::Path;

use spinbath::bath::CorrelationFit;
use spinbath::dynamics::{derivative_norms, DriveSpec, EquilibrationControls, ExtendedState, Propagator};
use spinbath::integrator::OdeControls;
use spinbath::io::{write_snapshot, FileError};
use spinbath::observables::{preparation_error, sigma_z_expectation, trace_distance};
use spinbath::operators::QubitOperator;
use spinbath::scenarios::*;

fn scenario(text: &str) -> Scenario {
    Scenario::from_toml_str(text, Path::new(".")).unwrap()
}

fn session(text: &str) -> Session {
    Session::with_fit(scenario(text), common::reference_fit().clone())
}

#[test]
fn weak_coupling_equilibrium_is_rescaled_exactly() {
    let fit = common::reference_fit();
    let c = OdeControls::default();
    let eq_controls = EquilibrationControls::default();
    let strong = equilibrium_at(fit, 0.1, 10.0, &eq_controls, &c).unwrap();
    let weak_fit = fit.scaled(1e-2);
    let weak = equilibrium_at(&weak_fit, 1e-3, 10.0, &eq_controls, &c).unwrap();
    assert!((weak.state.rho - strong.state.rho).max_abs() < 1e-14);
    // stationary under the weak kernel itself
    let (rho_rate, aux_rate) = derivative_norms(&weak.state, &weak_fit, &DriveSpec::off()).unwrap();
    assert!(rho_rate < 1e-12 && aux_rate < 1e-12, "{rho_rate:e} {aux_rate:e}");
    // and the same state a direct relaxation reaches
    let direct = spinbath::dynamics::equilibrate(
        &weak_fit,
        10.0,
        &EquilibrationControls {
            t_max: 6000.0,
            chunk: 50.0,
            ..eq_controls
        },
        &c,
    )
    .unwrap();
    let gap = direct.state.max_abs_diff(&weak.state);
    // the direct run stops on a rate threshold, so it sits ~rate/ξ away
    assert!(gap < 1e-7, "{gap:e}");
}

#[test]
fn closed_system_distances_are_constant() {
    let text = "[bath]\nxi = 0.0\nomega_c = 7.5\nbeta = 10.0\n[drive]\namplitude = 1.7\nduration = 3.0\n\
                [[initial]]\nkind = \"ground\"\n[[initial]]\nkind = \"D\"\nbloch = [0.3, -0.2, 0.5]\n\
                [[initial]]\nkind = \"C\"\n[output]\nt_end = 8.0\nsamples = 200\n";
    let run = Session::with_fit(scenario(text), CorrelationFit::uncoupled()).run().unwrap();
    for name in ["D_ground_D", "D_ground_C", "D_D_C"] {
        let d = run.series.column(name).unwrap();
        for v in d {
            assert!((v - d[0]).abs() < 1e-8, "{name}");
        }
    }
}

#[test]
fn identical_configs_give_identical_csv() {
    let text = "[drive]\namplitude = 1.0\nduration = 1.5\n[[initial]]\nkind = \"A\"\n[[initial]]\nkind = \"C\"\n\
                [output]\nt_end = 4.0\nsamples = 50\n";
    let a = session(text).run().unwrap().series.to_csv_string();
    let b = session(text).run().unwrap().series.to_csv_string();
    assert_eq!(a, b);
    let header = a.lines().next().unwrap();
    assert!(header.starts_with("t,A_sigma_z,A_bloch_x"));
    assert!(header.ends_with("C_error,C_fidelity,D_A_C"));
}

#[test]
fn pulse_end_distance_is_the_prepared_start() {
    let mut prep = session("[drive]\namplitude = 1.0\nduration = 3.0\n");
    let prepared = prep.prepare().unwrap();
    let (pa, pc) = (prepared.get("Prepared-A").unwrap(), prepared.get("Prepared-C").unwrap());
    assert_eq!(pa.t, 3.0);
    let run = session(
        "[drive]\namplitude = 1.0\nduration = 3.0\n[[initial]]\nkind = \"A\"\n[[initial]]\nkind = \"C\"\n\
         [output]\nt_end = 3.0\nsamples = 31\n",
    )
    .run()
    .unwrap();
    let d = *run.series.column("D_A_C").unwrap().last().unwrap();
    assert!((d - trace_distance(&pa.rho, &pc.rho)).abs() < 1e-12);

    let a1 = prepared.get("Prepared-A1").unwrap();
    assert_eq!(a1.rho, pa.rho);
    assert!(a1.aux.iter().all(|k| k.max_abs() == 0.0));
    assert_eq!(preparation_error(&prepared.get("Prepared-D").unwrap().rho), 0.0);
}

#[test]
fn prepared_snapshots_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("[drive]\namplitude = 40.0\nduration = 0.04\n");
    let fit = common::reference_fit().clone();
    let mut session = Session::with_fit(s, fit.clone());
    let prepared = session.prepare().unwrap();
    for (label, state) in &prepared.states {
        write_snapshot(&dir.path().join(format!("{label}.toml")), label, state, &fit).unwrap();
    }
    let text = "[[initial]]\nkind = \"snapshot\"\nsnapshot = \"Prepared-A.toml\"\n\
                [[initial]]\nkind = \"factorized_snapshot\"\nsnapshot = \"Prepared-A.toml\"\n\
                [output]\nspan = 5.0\nsamples = 51\n";
    let sc = Scenario::from_toml_str(text, dir.path()).unwrap();
    let run = Session::with_fit(sc.clone(), fit.clone()).run().unwrap();
    assert_eq!(run.series.times[0], 0.04);
    let d = run.series.column("D_Prepared-A_Prepared-A_factorized").unwrap();
    assert_eq!(d[0], 0.0);
    assert!(d.iter().copied().fold(0.0, f64::max) > 1e-4);

    let err = Session::with_fit(sc, fit.scaled(0.5)).run().unwrap_err();
    assert!(matches!(err, ScenarioError::File(FileError::FingerprintMismatch { .. })));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn first_maximum_is_not_the_best_duration() {
    // closed system, Ω_R = 2.4Ω without RWA
    let fit = CorrelationFit::uncoupled();
    let amp = 2.4;
    let c = OdeControls::default();
    let start = ExtendedState::factorized(QubitOperator::ground(), 1, 0.0);
    let t_end = 3.0 * PI / amp;
    let prop = Propagator::new(&fit, DriveSpec::resonant(amp, false, t_end), c).unwrap();
    let times: Vec<f64> = (0..=3000).map(|k| t_end * k as f64 / 3000.0).collect();
    let mut sz = Vec::new();
    prop.run(&start, t_end, &times, |s| sz.push(sigma_z_expectation(&s.rho))).unwrap();
    let k = (1..sz.len() - 1).find(|&k| sz[k] > sz[k - 1] && sz[k] >= sz[k + 1]).unwrap();
    let (_, first) = pulse_error(&fit, &start, DriveSpec::resonant(amp, false, 0.0), times[k], &c).unwrap();
    let first = preparation_error(&first.rho);
    let search = PulseSearch {
        window: (0.25, 3.0),
        ..PulseSearch::new(OptimizeMode::OpenSystem, amp)
    };
    let best = optimize_duration(&fit, &start, amp, 2.0, false, &c, &search).unwrap();
    assert!(best.error < first, "best {} vs first maximum {}", best.error, first);
    assert!(best.duration > times[k]);
}

#[test]
fn scan_trends_at_weak_coupling() {
    let plan = ScanPlan::from_toml_str(
        "[scan]\namplitudes = [0.012, 0.035, 0.109]\nxi = [1e-4, 1e-3]\nmode = \"open_system\"\n",
        Path::new("."),
    )
    .unwrap();
    let grid = run_scan(&plan, common::reference_fit());
    assert!(grid.cells.iter().all(|c| c.status == CellStatus::Ok));
    for r in 0..2 {
        let e: Vec<f64> = (0..3).map(|j| grid.cell(r, j).error).collect();
        assert!(e[0] > e[1] && e[1] > e[2], "row {r}: {e:?}");
    }
    let best = grid.cells.iter().map(|c| c.error).fold(f64::INFINITY, f64::min);
    assert!(best < 1e-2, "{:?}", grid.cells);
    // durations tuned for the open system beat or match the unitary ones
    let unitary = ScanPlan {
        mode: OptimizeMode::UnitaryReference,
        ..plan.clone()
    };
    let ugrid = run_scan(&unitary, common::reference_fit());
    for (o, u) in grid.cells.iter().zip(&ugrid.cells) {
        assert!(o.error <= u.error + 1e-9);
    }
}

#[test]
fn scan_marks_excluded_band_and_writes_csv() {
    let mut plan = ScanPlan::from_toml_str(
        "[scan]\namplitudes = [2.0]\nxi = [1e-3]\nmode = \"unitary_reference\"\ncomparison = \"initial_c\"\n",
        Path::new("."),
    )
    .unwrap();
    let grid = run_scan(&plan, common::reference_fit());
    assert_eq!(grid.cells[0].status, CellStatus::Excluded);
    let mut buf = Vec::new();
    grid.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("amplitude,xi,status,duration,error,reference_error,difference\n"));
    assert!(text.contains(",excluded,"));

    plan.allow_excluded_band = true;
    let grid = run_scan(&plan, common::reference_fit());
    let cell = &grid.cells[0];
    assert_ne!(cell.status, CellStatus::Excluded);
    if cell.status == CellStatus::Ok {
        assert!((cell.difference - (cell.error - cell.reference_error)).abs() < 1e-15);
    }
}

#[test]
fn scan_grid_is_deterministic_and_rectangular() {
    let plan = ScanPlan::from_toml_str(
        "[scan]\namplitudes = { min = 0.05, max = 0.5, count = 3 }\nxi = [1e-4, 1e-2]\nmode = \"unitary_reference\"\n\
         comparison = \"rwa\"\n",
        Path::new("."),
    )
    .unwrap();
    let a = run_scan(&plan, common::reference_fit());
    let b = run_scan(&plan, common::reference_fit());
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), 6);
    for (r, xi) in a.xis.iter().enumerate() {
        for (j, amp) in a.amplitudes.iter().enumerate() {
            assert_eq!((a.cell(r, j).xi, a.cell(r, j).amplitude), (*xi, *amp));
        }
    }
}
