//! Invariant suites shared by the `verify` command and the test suites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{
    assemble_with, circuit_blocks, kirchhoff_dirac, loop_kirchhoff_dirac, negated, ph_mna_equivalence, to_mna_cf,
    AssemblyError,
};
use crate::components::{standard_dirac, Role};
use crate::graph::{verify_cutset_cycle_duality, IntMatrix};
use crate::netlist::{build_graph, Netlist};
use crate::ph_core::{is_dirac, DiracKernel, Port, PortKind};
use crate::solver::{simulate, IntegratorConfig, Trajectory};

/// Worst relative violations of the circuit laws along a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LawViolations {
    /// `max ‖A·i‖∞ / ‖i‖∞`.
    pub kcl: f64,
    /// `max ‖u − Aᵀφ‖∞ / ‖u‖∞`.
    pub kvl: f64,
    /// `max |Σ u_e i_e| / Σ |u_e i_e|`.
    pub tellegen: f64,
}

impl LawViolations {
    pub fn within(&self, tol: f64) -> bool {
        self.kcl <= tol && self.kvl <= tol && self.tellegen <= tol
    }
}

/// Quantities below this are treated as exact zeros when forming relative errors.
pub const ZERO_FLOOR: f64 = 1e-18;

fn ratio(num: f64, den: f64) -> f64 {
    num / den.max(ZERO_FLOOR)
}

pub fn trajectory_laws(a: &IntMatrix, tr: &Trajectory) -> LawViolations {
    let af = a.to_f64();
    let mut out = LawViolations::default();
    for o in &tr.observations {
        let i = DVector::from_column_slice(&o.edge_currents);
        let u = DVector::from_column_slice(&o.edge_voltages);
        let phi = DVector::from_column_slice(&o.potentials);
        out.kcl = out.kcl.max(ratio((&af * &i).amax(), i.amax()));
        out.kvl = out.kvl.max(ratio((&u - af.transpose() * phi).amax(), u.amax()));
        let power: Vec<f64> = u.iter().zip(i.iter()).map(|(a, b)| a * b).collect();
        let total: f64 = power.iter().sum();
        let gross: f64 = power.iter().map(|p| p.abs()).sum();
        out.tellegen = out.tellegen.max(ratio(total.abs(), gross));
    }
    out
}

/// Energy bookkeeping summary of a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergySummary {
    pub max_balance_error: f64,
    /// `10·dt·max|P_S|`.
    pub bound: f64,
    pub min_dissipation: f64,
    /// Largest single-step increase of `H`.
    pub max_energy_increase: f64,
}

impl EnergySummary {
    pub fn balanced(&self) -> bool {
        self.max_balance_error <= self.bound
    }
}

pub fn energy_summary(tr: &Trajectory) -> EnergySummary {
    let dt = if tr.times.len() > 1 { tr.times[1] - tr.times[0] } else { 0.0 };
    let max_ps = tr.audit.iter().map(|a| a.source_power.abs()).fold(0.0, f64::max);
    EnergySummary {
        max_balance_error: tr.audit.iter().map(|a| a.balance_error.abs()).fold(0.0, f64::max),
        bound: 10.0 * dt * max_ps,
        min_dissipation: tr.audit.iter().map(|a| a.dissipation).fold(f64::INFINITY, f64::min),
        max_energy_increase: tr.audit.windows(2).map(|w| w[1].energy - w[0].energy).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Largest `|eᵀf| / (1 + ‖f‖‖e‖)` over random members of the subspace.
pub fn random_member_pairing(d: &DiracKernel, count: usize, rng: &mut impl Rng) -> f64 {
    let basis = d.basis();
    let n = d.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let c = DVector::from_fn(basis.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let v = &basis * c;
        let f = v.rows(0, n);
        let e = v.rows(n, n);
        worst = worst.max(e.dot(&f).abs() / (1.0 + f.norm() * e.norm()));
    }
    worst
}

/// Random Dirac structure on `n` coordinates: `{(f, e) : K f + L e = 0}` with
/// `K = M`, `L = M J` for invertible `M` and skew `J`, then a random subset of
/// coordinates with flow and effort exchanged.
pub fn random_dirac(n: usize, layout: Vec<Port>, rng: &mut impl Rng) -> DiracKernel {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(n, n) * 2.0;
    let j0 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let j = &j0 - j0.transpose();
    let mut k = m.clone();
    let mut l = &m * j;
    for c in 0..n {
        if rng.random_bool(0.3) {
            let kc = k.column(c).clone_owned();
            k.set_column(c, &l.column(c).clone_owned());
            l.set_column(c, &kc);
        }
    }
    DiracKernel::new(k, l, layout).expect("shapes agree")
}

/// Pass counts of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), passed: 0, total: 0, failures: Vec::new() }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

/// Knobs of [`verify_netlist`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub members: usize,
    pub equivalence_samples: usize,
    /// Step budget of the short transient.
    pub steps: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, members: 100, equivalence_samples: 20, steps: 200 }
    }
}

const DIRAC_TOL: f64 = 1e-10;
const LAW_TOL: f64 = 1e-9;

/// Runs the structural, Dirac, equivalence, Kirchhoff and energy suites on a netlist.
pub fn verify_netlist(netlist: &Netlist, opts: &VerifyOptions) -> Result<Vec<SuiteResult>, AssemblyError> {
    let cg = build_graph(netlist).map_err(|e| AssemblyError::Unsupported(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let blocks = circuit_blocks(&cg)?;

    let mut graph = SuiteResult::new("graph");
    graph.record(verify_cutset_cycle_duality(&blocks.a, &blocks.b), || "cutset/cycle duality".into());
    graph.record(blocks.a.rank() == blocks.a.nrows(), || "reduced incidence lacks full row rank".into());

    let mut dirac = SuiteResult::new("dirac");
    for lp in 1..=4 {
        let d = standard_dirac(lp)?;
        dirac.record(is_dirac(d.k(), d.l(), DIRAC_TOL)?, || format!("standard_dirac({lp})"));
    }
    let kd = kirchhoff_dirac(&cg.graph, &cg.grounds)?.system;
    let ld = loop_kirchhoff_dirac(&cg.graph)?.system;
    let node = assemble_with(&cg, Role::Node, false)?;
    let looped = assemble_with(&cg, Role::Loop, false)?;
    for (name, sys) in [("kirchhoff", &kd), ("loop kirchhoff", &ld), ("assembled", &node), ("assembled loop", &looped)] {
        let d = sys.dirac();
        dirac.record(is_dirac(d.k(), d.l(), DIRAC_TOL)?, || format!("{name} is not Dirac"));
        let worst = random_member_pairing(d, opts.members, &mut rng);
        dirac.record(worst <= DIRAC_TOL, || format!("{name}: |eᵀf| ratio {worst:e}"));
    }

    let mut equivalence = SuiteResult::new("equivalence");
    let regularized = assemble_with(&cg, Role::Node, true)?;
    let mna = to_mna_cf(&cg, &blocks, &netlist.initial_conditions())?;
    let report = ph_mna_equivalence(&cg, &regularized, &mna, opts.equivalence_samples, rng.random())?;
    equivalence.record(report.witness() <= LAW_TOL, || format!("witness {:e}", report.witness()));
    if blocks.capacitive.a.rank() > 0 {
        let mut flipped = blocks.clone();
        flipped.capacitive.a = negated(&flipped.capacitive.a);
        let bad = to_mna_cf(&cg, &flipped, &[])?;
        let rejected = ph_mna_equivalence(&cg, &regularized, &bad, 3, rng.random())
            .map(|r| r.witness() > 1e3 * LAW_TOL)
            .unwrap_or(true);
        equivalence.record(rejected, || "flipped capacitor incidence was not detected".into());
    }

    let mut kirchhoff = SuiteResult::new("kirchhoff");
    let mut energy = SuiteResult::new("energy");
    let tran = netlist.tran();
    let dt = tran.map_or(1e-6, |t| t.dt);
    let cfg = IntegratorConfig { dt, uic: tran.is_some_and(|t| t.uic), ..Default::default() };
    let tstop = tran.map_or(dt * opts.steps as f64, |t| t.tstop.min(dt * opts.steps as f64));
    match simulate(&mna, &cfg, tstop) {
        Ok(tr) => {
            let laws = trajectory_laws(&blocks.a, &tr);
            kirchhoff.record(laws.kcl <= LAW_TOL, || format!("‖A·i‖ ratio {:e}", laws.kcl));
            kirchhoff.record(laws.kvl <= LAW_TOL, || format!("‖u − Aᵀφ‖ ratio {:e}", laws.kvl));
            kirchhoff.record(laws.tellegen <= LAW_TOL, || format!("Tellegen ratio {:e}", laws.tellegen));
            let e = energy_summary(&tr);
            energy.record(e.min_dissipation >= -1e-12, || format!("dissipation {:e}", e.min_dissipation));
            if e.bound > 0.0 {
                energy.record(e.balanced(), || format!("balance error {:e} > {:e}", e.max_balance_error, e.bound));
            } else {
                energy.record(e.max_energy_increase <= 1e-15, || format!("H rose by {:e}", e.max_energy_increase));
            }
        }
        Err(err) => {
            kirchhoff.record(false, || format!("simulation failed: {err}"));
            energy.record(false, || format!("simulation failed: {err}"));
        }
    }
    Ok(vec![graph, dirac, equivalence, kirchhoff, energy])
}

/// External ports labelled `p0, p1, …`.
pub fn plain_layout(n: usize, kind: PortKind) -> Vec<Port> {
    (0..n).map(|i| Port::new(kind, format!("p{i}"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse;

    #[test]
    fn random_dirac_is_dirac() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let d = random_dirac(n, plain_layout(n, PortKind::External), &mut rng);
            assert!(is_dirac(d.k(), d.l(), 1e-10).unwrap());
            assert!(random_member_pairing(&d, 20, &mut rng) < 1e-12);
        }
    }

    #[test]
    fn verify_rc() {
        let n = parse("V1 1 0 DC 5\nR1 1 2 R=1k\nC1 2 0 C=1u\n.ground 0\n.tran 1m 1u uic\n").unwrap();
        let suites = verify_netlist(&n, &VerifyOptions { equivalence_samples: 4, ..Default::default() }).unwrap();
        for s in &suites {
            assert!(s.ok(), "{s:?}");
        }
    }
}
