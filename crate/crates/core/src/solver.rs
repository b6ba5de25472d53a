//! Fixed-step implicit integration of `F(t, x, ẋ) = 0` with damped Newton
//! iterations, operating-point initialization and an energy audit.

use std::fmt::Write as _;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("Newton iteration failed at t = {t:e} after {iterations} iterations (scaled residual {residual:e})")]
    NewtonDivergence { t: f64, iterations: usize, residual: f64 },
    #[error("singular Jacobian at t = {t:e} (condition estimate {condition:e})")]
    SingularJacobian { t: f64, condition: f64 },
    #[error("step failed at t = {t:e} after {halvings} halvings of dt")]
    StepFailure { t: f64, halvings: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Circuit quantities at one instant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Potentials of the ungrounded nodes.
    pub potentials: Vec<f64>,
    pub edge_voltages: Vec<f64>,
    pub edge_currents: Vec<f64>,
    /// Stored energy `H`.
    pub energy: f64,
    /// Power delivered by the sources into the network.
    pub source_power: f64,
    /// Power dissipated in the resistive elements.
    pub dissipation: f64,
}

/// Residual form `F(t, x, ẋ) = 0` of a circuit DAE.
pub trait DaeProblem {
    fn dim(&self) -> usize;

    fn residual(&self, t: f64, x: &[f64], xdot: &[f64]) -> DVector<f64>;

    /// `(∂F/∂x, ∂F/∂ẋ)` when available analytically.
    fn jacobian(&self, _t: f64, _x: &[f64], _xdot: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// Coordinates whose rates enter `F`.
    fn differential(&self) -> Vec<bool>;

    fn observe(&self, t: f64, x: &[f64], xdot: &[f64]) -> Observation;

    fn node_names(&self) -> Vec<String>;

    fn edge_names(&self) -> Vec<String>;

    /// Values of the differential coordinates for a start from initial conditions.
    fn initial_differential_values(&self) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BackwardEuler,
    Trapezoidal,
}

impl std::str::FromStr for Method {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self, SolverError> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "be" | "backward_euler" | "euler" => Ok(Method::BackwardEuler),
            "trap" | "trapezoidal" => Ok(Method::Trapezoidal),
            other => Err(SolverError::BadConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    /// Start from the problem's initial conditions instead of the operating point.
    pub uic: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::BackwardEuler,
            dt: 1e-6,
            newton_tol: 1e-10,
            max_newton: 25,
            max_halvings: 10,
            uic: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::BadConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(SolverError::BadConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Final scaled residual (∞-norm).
    pub residual: f64,
}

const MIN_DAMPING: f64 = 1.0 / 1048576.0;
/// Operating points whose Jacobian has `σ_min < RANK_TOL·σ_max` are reported singular.
const RANK_TOL: f64 = 1e-13;

/// Minimum-norm least-squares solution of `J d = b`, ignoring singular values below
/// `ε·max(rows, cols)·σ_max`. Returns the solution and the condition estimate.
pub fn solve_least_squares(j: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let eps = f64::EPSILON * j.nrows().max(j.ncols()) as f64 * smax;
    let d = svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(j.ncols()));
    (d, cond)
}

pub fn condition_estimate(j: &DMatrix<f64>) -> f64 {
    if j.nrows() == 0 {
        return 1.0;
    }
    let s = j.clone().svd(false, false).singular_values;
    let smin = s.min();
    if smin > 0.0 {
        s.max() / smin
    } else {
        f64::INFINITY
    }
}

/// Damped Newton iteration with Armijo halving on the row-scaled residual.
///
/// Rows are scaled by `max(1, |F_i(x₀)|)`. After convergence one extra, uncounted
/// polishing step is taken and kept if it does not increase the residual.
pub fn newton(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    jac: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
    t: f64,
) -> Result<NewtonOutcome, SolverError> {
    let f0 = f(&x0);
    let scale: DVector<f64> = f0.map(|v| v.abs().max(1.0));
    let scaled = |r: &DVector<f64>| r.component_div(&scale);
    let norm = |r: &DVector<f64>| {
        let s = scaled(r).amax();
        if r.iter().any(|v| !v.is_finite()) {
            f64::INFINITY
        } else {
            s
        }
    };
    let mut x = x0;
    let mut r = f0;
    let mut rn = norm(&r);
    let mut iterations = 0;
    while rn > tol {
        if iterations == max_iter {
            return Err(SolverError::NewtonDivergence { t, iterations, residual: rn });
        }
        let j = jac(&x);
        let js = DMatrix::from_fn(j.nrows(), j.ncols(), |a, b| j[(a, b)] / scale[a]);
        let (dx, _) = solve_least_squares(&js, &(-scaled(&r)));
        let mut lambda = 1.0;
        loop {
            let trial = &x + &dx * lambda;
            let rt = f(&trial);
            let nt = norm(&rt);
            if nt <= (1.0 - 1e-4 * lambda) * rn || nt <= tol {
                x = trial;
                r = rt;
                rn = nt;
                break;
            }
            lambda *= 0.5;
            if lambda < MIN_DAMPING {
                return Err(SolverError::NewtonDivergence { t, iterations, residual: rn });
            }
        }
        iterations += 1;
    }
    if iterations >= 1 && rn > 0.0 {
        let j = jac(&x);
        let js = DMatrix::from_fn(j.nrows(), j.ncols(), |a, b| j[(a, b)] / scale[a]);
        let (dx, _) = solve_least_squares(&js, &(-scaled(&r)));
        let trial = &x + dx;
        let rt = f(&trial);
        let nt = norm(&rt);
        if nt <= rn {
            x = trial;
            rn = nt;
        }
    }
    Ok(NewtonOutcome { x, iterations, residual: rn })
}

/// Forward-difference Jacobian with a per-coordinate step.
pub fn forward_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let f0 = f(x);
    let mut j = DMatrix::zeros(f0.len(), x.len());
    let mut y = x.clone();
    for c in 0..x.len() {
        let h = 1.5e-8 * x[c].abs().max(1.0);
        y[c] = x[c] + h;
        let fc = f(&y);
        y[c] = x[c];
        j.set_column(c, &((fc - &f0) / h));
    }
    j
}

fn problem_jacobians(p: &dyn DaeProblem, t: f64, x: &DVector<f64>, xdot: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    if let Some(j) = p.jacobian(t, x.as_slice(), xdot.as_slice()) {
        return j;
    }
    let jx = forward_jacobian(&|y| p.residual(t, y.as_slice(), xdot.as_slice()), x);
    let jd = forward_jacobian(&|y| p.residual(t, x.as_slice(), y.as_slice()), xdot);
    (jx, jd)
}

/// Solves `F(0, x, 0) = 0` from `guess` (zero if absent).
pub fn dc_operating_point(
    problem: &dyn DaeProblem,
    guess: Option<DVector<f64>>,
    cfg: &IntegratorConfig,
) -> Result<NewtonOutcome, SolverError> {
    let n = problem.dim();
    let zero = DVector::zeros(n);
    let x0 = guess.unwrap_or_else(|| DVector::zeros(n));
    let f = |x: &DVector<f64>| problem.residual(0.0, x.as_slice(), zero.as_slice());
    let jac = |x: &DVector<f64>| problem_jacobians(problem, 0.0, x, &zero).0;
    let out = newton(&f, &jac, x0, cfg.newton_tol, cfg.max_newton, 0.0);
    let singular = |x: &DVector<f64>| {
        let condition = condition_estimate(&jac(x));
        (condition * RANK_TOL >= 1.0).then_some(SolverError::SingularJacobian { t: 0.0, condition })
    };
    match out {
        Ok(o) => match singular(&o.x) {
            Some(e) => Err(e),
            None => Ok(o),
        },
        Err(e) => Err(singular(&DVector::zeros(n)).unwrap_or(e)),
    }
}

/// Consistent start with the differential coordinates fixed: solves for the
/// algebraic coordinates and the rates of the differential ones.
pub fn initial_from_conditions(
    problem: &dyn DaeProblem,
    values: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
    let n = problem.dim();
    let mask = problem.differential();
    let diff: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let alg: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    if values.len() != diff.len() {
        return Err(SolverError::BadConfig(format!(
            "{} initial values for {} differential coordinates",
            values.len(),
            diff.len()
        )));
    }
    let unpack = |y: &DVector<f64>| {
        let mut x = DVector::zeros(n);
        let mut xd = DVector::zeros(n);
        for (k, &i) in diff.iter().enumerate() {
            x[i] = values[k];
            xd[i] = y[alg.len() + k];
        }
        for (k, &i) in alg.iter().enumerate() {
            x[i] = y[k];
        }
        (x, xd)
    };
    let f = |y: &DVector<f64>| {
        let (x, xd) = unpack(y);
        problem.residual(0.0, x.as_slice(), xd.as_slice())
    };
    let jac = |y: &DVector<f64>| {
        let (x, xd) = unpack(y);
        let (jx, jd) = problem_jacobians(problem, 0.0, &x, &xd);
        let mut j = DMatrix::zeros(n, n);
        for (k, &i) in alg.iter().enumerate() {
            j.set_column(k, &jx.column(i));
        }
        for (k, &i) in diff.iter().enumerate() {
            j.set_column(alg.len() + k, &jd.column(i));
        }
        j
    };
    let out = newton(&f, &jac, DVector::zeros(n), cfg.newton_tol, cfg.max_newton, 0.0)?;
    Ok(unpack(&out.x))
}

fn rates(method: Method, x_new: &DVector<f64>, x: &DVector<f64>, xdot: &DVector<f64>, dt: f64) -> DVector<f64> {
    match method {
        Method::BackwardEuler => (x_new - x) / dt,
        Method::Trapezoidal => (x_new - x) * (2.0 / dt) - xdot,
    }
}

/// One implicit step from `(t, x, ẋ)`; returns the new state, rates and Newton count.
///
/// Newton solves for the new rates of the differential coordinates and the new
/// values of the algebraic ones, so rates that enter `F` are not formed by
/// differencing nearly equal states.
pub fn step(
    problem: &dyn DaeProblem,
    cfg: &IntegratorConfig,
    t: f64,
    dt: f64,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, usize), SolverError> {
    let t1 = t + dt;
    let mask = problem.differential();
    // x₁ = x + a·v + b·ẋ on differential coordinates
    let (a, b, coef) = match cfg.method {
        Method::BackwardEuler => (dt, 0.0, 1.0 / dt),
        Method::Trapezoidal => (0.5 * dt, 0.5 * dt, 2.0 / dt),
    };
    let unpack = |y: &DVector<f64>| {
        let mut x1 = y.clone();
        let mut xd1 = y.clone();
        for i in 0..y.len() {
            if mask[i] {
                x1[i] = x[i] + a * y[i] + b * xdot[i];
            }
        }
        let alg = rates(cfg.method, &x1, x, xdot, dt);
        for i in 0..y.len() {
            if !mask[i] {
                xd1[i] = alg[i];
            }
        }
        (x1, xd1)
    };
    let f = |y: &DVector<f64>| {
        let (x1, xd1) = unpack(y);
        problem.residual(t1, x1.as_slice(), xd1.as_slice())
    };
    let jac = |y: &DVector<f64>| {
        let (x1, xd1) = unpack(y);
        let (jx, jd) = problem_jacobians(problem, t1, &x1, &xd1);
        let mut j = &jx + &jd * coef;
        for (i, _) in mask.iter().enumerate().filter(|(_, d)| **d) {
            j.set_column(i, &(jx.column(i) * a + jd.column(i)));
        }
        j
    };
    let y0 = DVector::from_fn(x.len(), |i, _| if mask[i] { -b / a * xdot[i] } else { x[i] });
    let out = newton(&f, &jac, y0, cfg.newton_tol, cfg.max_newton, t1)?;
    let (x1, xd1) = unpack(&out.x);
    Ok((x1, xd1, out.iterations))
}

/// Advances by `dt`, halving on Newton failure.
fn advance(
    problem: &dyn DaeProblem,
    cfg: &IntegratorConfig,
    t: f64,
    dt: f64,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    depth: usize,
) -> Result<(DVector<f64>, DVector<f64>, usize), SolverError> {
    match step(problem, cfg, t, dt, x, xdot) {
        Ok(r) => Ok(r),
        Err(e) if depth >= cfg.max_halvings => {
            debug!("giving up at t = {t:e}: {e}");
            Err(SolverError::StepFailure { t, halvings: depth })
        }
        Err(e) => {
            debug!("halving dt at t = {t:e}: {e}");
            let h = 0.5 * dt;
            let (xm, xdm, n1) = advance(problem, cfg, t, h, x, xdot, depth + 1)?;
            let (x1, xd1, n2) = advance(problem, cfg, t + h, h, &xm, &xdm, depth + 1)?;
            Ok((x1, xd1, n1 + n2))
        }
    }
}

/// Energy bookkeeping at one accepted step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub energy: f64,
    pub source_power: f64,
    pub dissipation: f64,
    /// `H(t) − H(0) − ∫(P_S − D)`.
    pub balance_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: Method,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub rates: Vec<DVector<f64>>,
    pub observations: Vec<Observation>,
    pub audit: Vec<AuditEntry>,
    /// Newton iterations spent on each step (zero for the initial point).
    pub newton_iterations: Vec<usize>,
    pub node_names: Vec<String>,
    pub edge_names: Vec<String>,
}

/// Balance error with the quadrature matching the method: right-endpoint rectangles
/// for backward Euler, trapezoids for the trapezoidal rule.
pub fn energy_audit(times: &[f64], observations: &[Observation], method: Method) -> Vec<AuditEntry> {
    let mut out = Vec::with_capacity(observations.len());
    let mut integral = 0.0;
    for (k, o) in observations.iter().enumerate() {
        if k > 0 {
            let dt = times[k] - times[k - 1];
            let now = o.source_power - o.dissipation;
            let prev = observations[k - 1].source_power - observations[k - 1].dissipation;
            integral += match method {
                Method::BackwardEuler => dt * now,
                Method::Trapezoidal => 0.5 * dt * (now + prev),
            };
        }
        out.push(AuditEntry {
            energy: o.energy,
            source_power: o.source_power,
            dissipation: o.dissipation,
            balance_error: o.energy - observations[0].energy - integral,
        });
    }
    out
}

/// Fixed-step march over `round(tstop/dt)` steps, `t_k = k·dt`.
pub fn simulate(problem: &dyn DaeProblem, cfg: &IntegratorConfig, tstop: f64) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    if !(tstop >= 0.0 && tstop.is_finite()) {
        return Err(SolverError::BadConfig(format!("tstop must be nonnegative, got {tstop}")));
    }
    let n = problem.dim();
    let (mut x, mut xdot) = match (cfg.uic, problem.initial_differential_values()) {
        (true, Some(values)) => initial_from_conditions(problem, &values, cfg)?,
        (true, None) => return Err(SolverError::BadConfig("this formulation has no initial-condition start".into())),
        (false, _) => (dc_operating_point(problem, None, cfg)?.x, DVector::zeros(n)),
    };
    let steps = (tstop / cfg.dt).round() as usize;
    let mut times = vec![0.0];
    let mut observations = vec![problem.observe(0.0, x.as_slice(), xdot.as_slice())];
    let mut states = vec![x.clone()];
    let mut all_rates = vec![xdot.clone()];
    let mut iterations = vec![0];
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let (x1, xd1, its) = advance(problem, cfg, t, cfg.dt, &x, &xdot, 0)?;
        x = x1;
        xdot = xd1;
        let t1 = (k + 1) as f64 * cfg.dt;
        times.push(t1);
        observations.push(problem.observe(t1, x.as_slice(), xdot.as_slice()));
        states.push(x.clone());
        all_rates.push(xdot.clone());
        iterations.push(its);
    }
    let audit = energy_audit(&times, &observations, cfg.method);
    Ok(Trajectory {
        method: cfg.method,
        times,
        states,
        rates: all_rates,
        observations,
        audit,
        newton_iterations: iterations,
        node_names: problem.node_names(),
        edge_names: problem.edge_names(),
    })
}

impl Trajectory {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend(self.node_names.iter().map(|n| format!("phi({n})")));
        cols.extend(self.edge_names.iter().map(|e| format!("u({e})")));
        cols.extend(self.edge_names.iter().map(|e| format!("i({e})")));
        cols.extend(["H", "P_S", "D", "balance_err"].map(String::from));
        cols.join(",")
    }

    /// Header plus one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = self.csv_header();
        s.push('\n');
        for (k, o) in self.observations.iter().enumerate() {
            let a = &self.audit[k];
            let mut row: Vec<f64> = vec![self.times[k]];
            row.extend(&o.potentials);
            row.extend(&o.edge_voltages);
            row.extend(&o.edge_currents);
            row.extend([a.energy, a.source_power, a.dissipation, a.balance_error]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }

    pub fn edge_index(&self, name: &str) -> Option<usize> {
        self.edge_names.iter().position(|e| e == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `ẋ + x = 0`.
    struct Decay;

    impl DaeProblem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, _t: f64, x: &[f64], xdot: &[f64]) -> DVector<f64> {
            DVector::from_vec(vec![xdot[0] + x[0]])
        }
        fn jacobian(&self, _t: f64, _x: &[f64], _xdot: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
            Some((DMatrix::identity(1, 1), DMatrix::identity(1, 1)))
        }
        fn differential(&self) -> Vec<bool> {
            vec![true]
        }
        fn observe(&self, _t: f64, x: &[f64], _xdot: &[f64]) -> Observation {
            Observation { energy: 0.5 * x[0] * x[0], ..Default::default() }
        }
        fn node_names(&self) -> Vec<String> {
            vec![]
        }
        fn edge_names(&self) -> Vec<String> {
            vec![]
        }
        fn initial_differential_values(&self) -> Option<Vec<f64>> {
            Some(vec![1.0])
        }
    }

    /// `x₁ = 1`, `x₂ = 2` contradicting `x₁ = x₂`.
    struct Contradiction;

    impl DaeProblem for Contradiction {
        fn dim(&self) -> usize {
            2
        }
        fn residual(&self, _t: f64, x: &[f64], _xdot: &[f64]) -> DVector<f64> {
            DVector::from_vec(vec![x[0] - 1.0, x[0] - 2.0 + 0.0 * x[1]])
        }
        fn differential(&self) -> Vec<bool> {
            vec![false, false]
        }
        fn observe(&self, _t: f64, _x: &[f64], _xdot: &[f64]) -> Observation {
            Observation::default()
        }
        fn node_names(&self) -> Vec<String> {
            vec![]
        }
        fn edge_names(&self) -> Vec<String> {
            vec![]
        }
    }

    #[test]
    fn backward_euler_step() {
        let cfg = IntegratorConfig { dt: 0.1, ..Default::default() };
        let x = DVector::from_vec(vec![1.0]);
        let xd = DVector::from_vec(vec![-1.0]);
        let (x1, _, its) = step(&Decay, &cfg, 0.0, 0.1, &x, &xd).unwrap();
        assert_relative_eq!(x1[0], 1.0 / 1.1, max_relative = 1e-14);
        assert_eq!(its, 1);
    }

    #[test]
    fn trapezoidal_step() {
        let cfg = IntegratorConfig { dt: 0.1, method: Method::Trapezoidal, ..Default::default() };
        let x = DVector::from_vec(vec![1.0]);
        let xd = DVector::from_vec(vec![-1.0]);
        let (x1, _, _) = step(&Decay, &cfg, 0.0, 0.1, &x, &xd).unwrap();
        assert_relative_eq!(x1[0], 19.0 / 21.0, max_relative = 1e-14);
    }

    #[test]
    fn contradictory_constraints_fail() {
        let cfg = IntegratorConfig { dt: 0.1, max_halvings: 3, ..Default::default() };
        let x = DVector::zeros(2);
        let err = advance(&Contradiction, &cfg, 0.0, 0.1, &x, &x, 0).unwrap_err();
        assert_eq!(err, SolverError::StepFailure { t: 0.0, halvings: 3 });
    }

    #[test]
    fn uic_start_and_audit() {
        let cfg = IntegratorConfig { dt: 0.01, uic: true, ..Default::default() };
        let tr = simulate(&Decay, &cfg, 0.1).unwrap();
        assert_eq!(tr.times.len(), 11);
        assert_relative_eq!(tr.rates[0][0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(tr.states[10][0], 1.01f64.powi(-10), max_relative = 1e-12);
        assert_eq!(tr.audit[0].balance_error, 0.0);
    }

    #[test]
    fn zero_operating_point() {
        let cfg = IntegratorConfig::default();
        let op = dc_operating_point(&Decay, None, &cfg).unwrap();
        assert_eq!(op.x[0], 0.0);
        assert_eq!(op.iterations, 0);
    }

    #[test]
    fn singular_operating_point() {
        struct Floating;
        impl DaeProblem for Floating {
            fn dim(&self) -> usize {
                2
            }
            fn residual(&self, _t: f64, x: &[f64], _xdot: &[f64]) -> DVector<f64> {
                DVector::from_vec(vec![x[0] - 1.0, 0.0])
            }
            fn differential(&self) -> Vec<bool> {
                vec![false, false]
            }
            fn observe(&self, _t: f64, _x: &[f64], _xdot: &[f64]) -> Observation {
                Observation::default()
            }
            fn node_names(&self) -> Vec<String> {
                vec![]
            }
            fn edge_names(&self) -> Vec<String> {
                vec![]
            }
        }
        let err = dc_operating_point(&Floating, None, &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(err, SolverError::SingularJacobian { .. }));
    }

    #[test]
    fn audit_quadratures() {
        let obs: Vec<Observation> = [1.0, 3.0]
            .iter()
            .map(|&p| Observation { source_power: p, ..Default::default() })
            .collect();
        let be = energy_audit(&[0.0, 0.5], &obs, Method::BackwardEuler);
        assert_eq!(be[1].balance_error, -1.5);
        let tr = energy_audit(&[0.0, 0.5], &obs, Method::Trapezoidal);
        assert_eq!(tr[1].balance_error, -1.0);
    }

    #[test]
    fn method_names() {
        assert_eq!("trapezoidal".parse::<Method>().unwrap(), Method::Trapezoidal);
        assert_eq!("backward-euler".parse::<Method>().unwrap(), Method::BackwardEuler);
        assert!("rk4".parse::<Method>().is_err());
    }
}
