//! Physics checks that need the bundled cases.

use tsa_cli::case_file::load_case;
use tsa_core::dynamics::{
    assess_trajectory, prepare_dynamics, simulate, FaultSpec, LineEnd, SimOptions, Topology,
};
use tsa_core::grid::build_ybus;
use tsa_core::powerflow::solve_power_flow;

#[test]
fn bundled_39_bus_power_flow_converges_quickly() {
    let case = load_case("ieee39").unwrap();
    let sol = solve_power_flow(&case, 1e-8, 20).unwrap();
    assert!(sol.iterations <= 10, "took {} iterations", sol.iterations);
    assert!(sol.max_mismatch < 1e-8);
    // sane voltage profile
    for v in &sol.v_mag {
        assert!(*v > 0.85 && *v < 1.15, "voltage {v} out of range");
    }
    // generation balances load plus losses computed line by line
    let ybus = build_ybus(&case);
    let total_injection: f64 = sol.p_inj.iter().sum();
    let mut line_losses = 0.0;
    for line in &case.lines {
        let vf = tsa_core::num_complex::Complex64::from_polar(sol.v_mag[line.from_bus], sol.v_ang[line.from_bus]);
        let vt = tsa_core::num_complex::Complex64::from_polar(sol.v_mag[line.to_bus], sol.v_ang[line.to_bus]);
        let i = (vf - vt) * line.series_admittance();
        line_losses += i.norm_sqr() * line.r;
    }
    let _ = ybus;
    assert!(
        (total_injection - line_losses).abs() < 1e-6,
        "injections {total_injection} vs line losses {line_losses}"
    );
}

#[test]
fn bundled_9_bus_power_flow_matches_published_angles() {
    // classic WSCC solution: V2 angle ~ 9.3 deg, V5 ~ -4.0 deg
    let case = load_case("wscc9").unwrap();
    let sol = solve_power_flow(&case, 1e-10, 20).unwrap();
    let deg = |b: usize| sol.v_ang[b].to_degrees();
    assert!((deg(1) - 9.3).abs() < 0.5, "bus 2 angle {}", deg(1));
    assert!((deg(4) - -4.0).abs() < 0.5, "bus 5 angle {}", deg(4));
    assert!((sol.v_mag[4] - 0.996).abs() < 0.01, "bus 5 voltage {}", sol.v_mag[4]);
}

#[test]
fn equilibrium_holds_on_39_bus() {
    let case = load_case("ieee39").unwrap();
    let pf = solve_power_flow(&case, 1e-10, 20).unwrap();
    let model = prepare_dynamics(&case, &pf, None).unwrap();
    let pe = model.electrical_power(Topology::Prefault, &model.delta0);
    for (k, (&p, &pm)) in pe.iter().zip(&model.p_mech).enumerate() {
        assert!((p - pm).abs() < 1e-8, "machine {k}: {p} vs {pm}");
    }
    let traj = simulate(
        &model,
        &SimOptions {
            clear_time: 0.0,
            horizon: 2.0,
            dt: 0.005,
            early_exit: false,
        },
    );
    for step in &traj.delta {
        for (k, d) in step.iter().enumerate() {
            assert!((d - model.delta0[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn halving_dt_barely_moves_stable_39_bus_run() {
    let case = load_case("ieee39").unwrap();
    let pf = solve_power_flow(&case, 1e-10, 20).unwrap();
    let fault = FaultSpec {
        line_index: 0, // line 1-2, meshed corridor
        faulted_end: LineEnd::From,
        clear_time: 0.05,
    };
    let model = prepare_dynamics(&case, &pf, Some(&fault)).unwrap();
    let run = |dt: f64| {
        simulate(
            &model,
            &SimOptions {
                clear_time: 0.05,
                horizon: 10.0,
                dt,
                early_exit: false,
            },
        )
    };
    let coarse = run(0.005);
    let fine = run(0.0025);
    let verdictc = assess_trajectory(&coarse);
    assert_eq!(verdictc.label, 1, "fixture fault should be stable");
    let last_c = coarse.delta.last().unwrap();
    let last_f = fine.delta.last().unwrap();
    for (a, b) in last_c.iter().zip(last_f) {
        assert!(
            (a - b).abs() < 1e-4,
            "dt-halving moved final angle by {}",
            (a - b).abs()
        );
    }
}

#[test]
fn fault_on_radial_transformer_branch_islands() {
    let case = load_case("ieee39").unwrap();
    let pf = solve_power_flow(&case, 1e-8, 20).unwrap();
    // line index 4 is the 2-30 step-up branch of the bundled case
    let line = case
        .lines
        .iter()
        .position(|l| (l.from_bus, l.to_bus) == (1, 29) || (l.from_bus, l.to_bus) == (29, 1))
        .expect("2-30 branch present");
    let fault = FaultSpec {
        line_index: line,
        faulted_end: LineEnd::From,
        clear_time: 0.1,
    };
    assert!(matches!(
        prepare_dynamics(&case, &pf, Some(&fault)),
        Err(tsa_core::dynamics::DynamicsError::Islanded(_))
    ));
}

#[test]
fn severe_fault_with_late_clearing_goes_unstable() {
    let case = load_case("ieee39").unwrap();
    let pf = solve_power_flow(&case, 1e-8, 20).unwrap();
    // bolted fault right next to generator 38's step-up bus, cleared late
    let line = case
        .lines
        .iter()
        .position(|l| (l.from_bus, l.to_bus) == (25, 28) || (l.from_bus, l.to_bus) == (28, 25))
        .expect("26-29 branch present");
    let fault = FaultSpec {
        line_index: line,
        faulted_end: LineEnd::To,
        clear_time: 0.3,
    };
    let model = prepare_dynamics(&case, &pf, Some(&fault)).unwrap();
    let traj = simulate(
        &model,
        &SimOptions {
            clear_time: 0.3,
            horizon: 10.0,
            dt: 0.005,
            early_exit: true,
        },
    );
    let verdict = assess_trajectory(&traj);
    assert_eq!(verdict.label, 0);
    assert!(verdict.tsi <= 0.0);
}
