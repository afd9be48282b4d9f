use calmed_mhdb::calming::{CalmingFamily, CalmingSpec};
use calmed_mhdb::diagnostics::{check_gronwall, record, EnergyRecord};
use calmed_mhdb::dynamics::{builtin_initial_data, max_current, simulate, PhysParams, State, StepperConfig};
use calmed_mhdb::spectral::Grid;

const PARAMS: PhysParams = PhysParams {
    nu: 0.05,
    mu: 0.05,
    kappa: 0.05,
    g: 1.0,
    alpha: 1.0,
};

fn run_to(grid: &Grid, initial: &State, spec: &CalmingSpec, dt: f64, t_final: f64) -> Vec<State> {
    let mut states = Vec::new();
    let mut keep = |s: &State, _: bool| {
        states.push(s.clone());
        Ok(())
    };
    simulate(grid, initial, &PARAMS, spec, &StepperConfig::new(dt, t_final), &mut [&mut keep]).unwrap();
    states
}

fn distance(grid: &Grid, a: &State, b: &State) -> f64 {
    let du = grid.vector_norms(&a.u.sub(&b.u));
    let db = grid.vector_norms(&a.b.sub(&b.b));
    let dt = grid.norms(&a.theta.sub(&b.theta));
    (du.h1 * du.h1 + db.h1 * db.h1 + dt.l2 * dt.l2).sqrt()
}

#[test]
fn second_order_in_time() {
    let grid = Grid::new(32).unwrap();
    let s0 = builtin_initial_data("orszag-tang-like+gaussian-theta", &grid, 0).unwrap();
    let spec = CalmingSpec::new(CalmingFamily::Rational1, 0.1).unwrap();
    let t = 0.1;
    let finals: Vec<State> = [4e-3, 2e-3, 1e-3, 5e-4]
        .iter()
        .map(|&dt| run_to(&grid, &s0, &spec, dt, t).pop().unwrap())
        .collect();
    let diffs: Vec<f64> = finals.windows(2).map(|w| distance(&grid, &w[0], &w[1])).collect();
    for w in diffs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "observed order {order} from {diffs:?}");
    }
}

#[test]
fn runs_are_deterministic() {
    let grid = Grid::new(32).unwrap();
    let s0 = builtin_initial_data("random-smooth", &grid, 42).unwrap();
    let spec = CalmingSpec::new(CalmingFamily::Arctan, 0.05).unwrap();
    let a = run_to(&grid, &s0, &spec, 2e-3, 0.05);
    let b = run_to(&grid, &s0, &spec, 2e-3, 0.05);
    assert_eq!(a, b);
}

#[test]
fn calmed_run_stays_bounded() {
    let grid = Grid::new(64).unwrap();
    let s0 = builtin_initial_data("taylor-green+gaussian-theta", &grid, 0).unwrap();
    let spec = CalmingSpec::new(CalmingFamily::Rational1, 0.1).unwrap();
    let m_eps = spec.constants().unwrap().m_eps;
    let states = run_to(&grid, &s0, &spec, 2e-3, 0.5);
    let first: EnergyRecord = record(&grid, &states[0], &PARAMS, &spec);
    for s in &states {
        assert!(s.is_finite());
        s.check_invariants(&grid, 1e-10).unwrap();
        let rec = record(&grid, s, &PARAMS, &spec);
        assert!(check_gronwall(&first, &rec, &PARAMS, m_eps).passed, "t={}", s.t);
    }
}

#[test]
fn saturating_inside_window_reproduces_uncalmed_run() {
    let grid = Grid::new(32).unwrap();
    let s0 = builtin_initial_data("taylor-green+gaussian-theta", &grid, 0).unwrap();
    let eps = 0.1;
    let reference = run_to(&grid, &s0, &CalmingSpec::identity(), 5e-3, 0.1);
    assert!(reference.iter().all(|s| max_current(&grid, &s.b) < 1.0 / eps));
    let calmed = run_to(&grid, &s0, &CalmingSpec::new(CalmingFamily::Saturating, eps).unwrap(), 5e-3, 0.1);
    assert_eq!(reference, calmed);
}

#[test]
fn vanishing_epsilon_approaches_uncalmed_run() {
    let grid = Grid::new(32).unwrap();
    let s0 = builtin_initial_data("orszag-tang-like", &grid, 0).unwrap();
    let reference = run_to(&grid, &s0, &CalmingSpec::identity(), 2e-3, 0.05).pop().unwrap();
    let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&e| {
            let spec = CalmingSpec::new(CalmingFamily::Rational2, e).unwrap();
            distance(&grid, &reference, &run_to(&grid, &s0, &spec, 2e-3, 0.05).pop().unwrap())
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn mean_temperature_never_decreases() {
    let grid = Grid::new(32).unwrap();
    let mut s0 = builtin_initial_data("orszag-tang-like", &grid, 0).unwrap();
    // no flow: the only change in the mean comes from Ohmic heating
    s0.u = s0.u.scaled(0.0);
    let spec = CalmingSpec::new(CalmingFamily::Arctan, 0.2).unwrap();
    let states = run_to(&grid, &s0, &spec, 2e-3, 0.1);
    let means: Vec<f64> = states.iter().map(|s| s.theta.mean()).collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
}
