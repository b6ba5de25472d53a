//! Circuit-level structures: the Kirchhoff Dirac structures, the assembled pH
//! system and the MNA / MLA residual forms.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::components::{to_ph_with, ComponentClass, ComponentError, ComponentKind, EnergyFn, Role, SourceKind, Waveform};
use crate::graph::{
    fundamental_cycle_matrix, incidence_matrix, reduced_incidence, spanning_forest, DirectedGraph, GraphError,
    GroundSet, IntMatrix,
};
use crate::netlist::CircuitGraph;
use crate::ph_core::{
    interconnect, matrix_rows, ph_residual, product, DiracKernel, Hamiltonian, LagrangeBlock, LinearLagrange,
    PhError, PhSystem, Port, PortKind, VectorMap,
};
use crate::solver::{newton, DaeProblem, Observation};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ph(#[from] PhError),
    #[error(transparent)]
    Component(#[from] ComponentError),
    #[error("{0}")]
    Unsupported(String),
}

/// Node-role Kirchhoff structure together with the reduced incidence matrix.
#[derive(Debug, Clone)]
pub struct Kirchhoff {
    pub system: PhSystem,
    pub a: IntMatrix,
    /// Vertex index of every row of `a`.
    pub nodes: Vec<usize>,
}

/// Loop-role Kirchhoff structure together with the fundamental loop matrix.
#[derive(Debug, Clone)]
pub struct LoopKirchhoff {
    pub system: PhSystem,
    pub b: IntMatrix,
    pub forest: Vec<usize>,
}

fn zero_state_system(
    k: DMatrix<f64>,
    l: DMatrix<f64>,
    layout: Vec<Port>,
    states: usize,
) -> Result<PhSystem, PhError> {
    let lagrange = if states > 0 { vec![LagrangeBlock::Linear(LinearLagrange::zero_state(states))] } else { vec![] };
    PhSystem::new(DiracKernel::new(k, l, layout)?, lagrange, vec![])
}

/// `{(f_v, f_e, φ, u) : f_v + A f_e = 0, u = Aᵀφ}` with the vertex coordinates as
/// zero-state storage and the edge coordinates as link ports.
pub fn kirchhoff_dirac(g: &DirectedGraph, grounds: &GroundSet) -> Result<Kirchhoff, AssemblyError> {
    let a = reduced_incidence(&incidence_matrix(g), grounds)?;
    let nodes: Vec<usize> = (0..g.n()).filter(|&v| !grounds.contains(v)).collect();
    let (nv, m) = (a.nrows(), a.ncols());
    let af = a.to_f64();
    let n = nv + m;
    let mut k = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (nv, nv)).fill_with_identity();
    k.view_mut((0, nv), (nv, m)).copy_from(&af);
    l.view_mut((nv, 0), (m, nv)).copy_from(&(-af.transpose()));
    l.view_mut((nv, nv), (m, m)).fill_with_identity();
    let layout = nodes
        .iter()
        .map(|&v| Port::new(PortKind::Storage, format!("q({})", g.vertices()[v])))
        .chain(g.edges().iter().map(|e| Port::new(PortKind::Link, e.name.clone())))
        .collect();
    Ok(Kirchhoff { system: zero_state_system(k, l, layout, nv)?, a, nodes })
}

/// `{(f_c, f_e, ι, i) : f_c + B f_e = 0, i = Bᵀι}` over the fundamental loops of the
/// greedy spanning forest.
pub fn loop_kirchhoff_dirac(g: &DirectedGraph) -> Result<LoopKirchhoff, AssemblyError> {
    let forest = spanning_forest(g);
    let b = fundamental_cycle_matrix(g, &forest)?;
    let (nc, m) = (b.nrows(), b.ncols());
    let bf = b.to_f64();
    let n = nc + m;
    let mut k = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (nc, nc)).fill_with_identity();
    k.view_mut((0, nc), (nc, m)).copy_from(&bf);
    l.view_mut((nc, 0), (m, nc)).copy_from(&(-bf.transpose()));
    l.view_mut((nc, nc), (m, m)).fill_with_identity();
    let chord_names: Vec<String> = (0..m)
        .filter(|e| !forest.contains(e))
        .map(|e| format!("loop({})", g.edges()[e].name))
        .collect();
    let layout = chord_names
        .into_iter()
        .map(|name| Port::new(PortKind::Storage, name))
        .chain(g.edges().iter().map(|e| Port::new(PortKind::Link, e.name.clone())))
        .collect();
    Ok(LoopKirchhoff { system: zero_state_system(k, l, layout, nc)?, b, forest })
}

/// Assembled system in the node role.
pub fn assemble(cg: &CircuitGraph) -> Result<PhSystem, AssemblyError> {
    assemble_with(cg, Role::Node, false)
}

/// Interconnects the Kirchhoff structure of the given role with all components.
/// With `regularize` ideal diodes are replaced by their PN stand-in.
pub fn assemble_with(cg: &CircuitGraph, role: Role, regularize: bool) -> Result<PhSystem, AssemblyError> {
    let kirchhoff = match role {
        Role::Node => kirchhoff_dirac(&cg.graph, &cg.grounds)?.system,
        Role::Loop => loop_kirchhoff_dirac(&cg.graph)?.system,
    };
    let parts = cg
        .components
        .iter()
        .map(|c| to_ph_with(c, role, regularize))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(interconnect(&kirchhoff, &product(&parts))?)
}

/// Coordinate of every edge in the assembled node-role system, after the vertex block.
fn edge_coordinates(cg: &CircuitGraph) -> Vec<(usize, bool)> {
    let nv = cg.graph.n() - cg.grounds.len();
    let owner = cg.edge_owner();
    let mut coord = vec![(0, false); cg.graph.m()];
    let mut next = nv;
    for pass in 0..3 {
        for (e, &c) in owner.iter().enumerate() {
            let comp = &cg.components[c];
            let group = match comp.kind {
                ComponentKind::Capacitor { .. } | ComponentKind::Inductor { .. } => 0,
                ComponentKind::Source { .. } => 2,
                _ => 1,
            };
            if group == pass {
                coord[e] = (next, matches!(comp.kind, ComponentKind::Inductor { .. }));
                next += 1;
            }
        }
    }
    coord
}

/// The node-role assembled Dirac structure written directly in terms of the
/// incidence matrix: `f_v + Σ A_e f_e − Σ A_e e_e = 0` (standard edges, then the
/// inductor edges) and `e_e = A_eᵀφ` or `−f_e = A_eᵀφ`.
pub fn closed_form_dirac(cg: &CircuitGraph) -> Result<DiracKernel, AssemblyError> {
    let a = reduced_incidence(&incidence_matrix(&cg.graph), &cg.grounds)?.to_f64();
    let (nv, m) = (a.nrows(), a.ncols());
    let n = nv + m;
    let mut k = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    for v in 0..nv {
        k[(v, v)] = 1.0;
    }
    for (e, (c, gyrator)) in edge_coordinates(cg).into_iter().enumerate() {
        let row = nv + e;
        for v in 0..nv {
            if gyrator {
                l[(v, c)] -= a[(v, e)];
            } else {
                k[(v, c)] += a[(v, e)];
            }
            l[(row, v)] = -a[(v, e)];
        }
        if gyrator {
            k[(row, c)] = -1.0;
        } else {
            l[(row, c)] = 1.0;
        }
    }
    let layout = assemble_layout(cg)?;
    Ok(DiracKernel::new(k, l, layout)?)
}

fn assemble_layout(cg: &CircuitGraph) -> Result<Vec<Port>, AssemblyError> {
    let mut layout = vec![Port::new(PortKind::Storage, String::new()); cg.graph.n() - cg.grounds.len() + cg.graph.m()];
    let mut next = 0;
    for v in 0..cg.graph.n() {
        if !cg.grounds.contains(v) {
            layout[next] = Port::new(PortKind::Storage, format!("q({})", cg.graph.vertices()[v]));
            next += 1;
        }
    }
    let owner = cg.edge_owner();
    for (e, (c, _)) in edge_coordinates(cg).into_iter().enumerate() {
        let comp = &cg.components[owner[e]];
        let kind = match comp.kind {
            ComponentKind::Capacitor { .. } | ComponentKind::Inductor { .. } => PortKind::Storage,
            ComponentKind::Source { .. } => PortKind::External,
            _ => PortKind::Resistive,
        };
        layout[c] = Port::new(kind, cg.graph.edges()[e].name.clone());
    }
    Ok(layout)
}

/// Edges of one component class with their incidence and loop columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassBlock {
    pub edges: Vec<usize>,
    pub a: IntMatrix,
    pub b: IntMatrix,
}

/// Incidence and loop matrices split by component class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitBlocks {
    /// Names of the ungrounded nodes (rows of `a`).
    pub nodes: Vec<String>,
    pub edges: Vec<String>,
    pub owner: Vec<usize>,
    pub a: IntMatrix,
    pub b: IntMatrix,
    pub resistive: ClassBlock,
    pub inductive: ClassBlock,
    pub capacitive: ClassBlock,
    pub current_sources: ClassBlock,
    pub voltage_sources: ClassBlock,
}

pub fn circuit_blocks(cg: &CircuitGraph) -> Result<CircuitBlocks, AssemblyError> {
    let a = reduced_incidence(&incidence_matrix(&cg.graph), &cg.grounds)?;
    let b = fundamental_cycle_matrix(&cg.graph, &spanning_forest(&cg.graph))?;
    let owner = cg.edge_owner();
    let block = |class: ComponentClass| {
        let edges: Vec<usize> = (0..cg.graph.m()).filter(|&e| cg.components[owner[e]].class() == class).collect();
        ClassBlock { a: a.select_columns(&edges), b: b.select_columns(&edges), edges }
    };
    Ok(CircuitBlocks {
        nodes: (0..cg.graph.n()).filter(|&v| !cg.grounds.contains(v)).map(|v| cg.graph.vertices()[v].clone()).collect(),
        edges: cg.graph.edges().iter().map(|e| e.name.clone()).collect(),
        resistive: block(ComponentClass::Resistive),
        inductive: block(ComponentClass::Inductive),
        capacitive: block(ComponentClass::Capacitive),
        current_sources: block(ComponentClass::CurrentSource),
        voltage_sources: block(ComponentClass::VoltageSource),
        owner,
        a,
        b,
    })
}

fn int_rows(m: &IntMatrix) -> Vec<Vec<i64>> {
    (0..m.nrows()).map(|r| m.row(r).to_vec()).collect()
}

/// Negated copy of an integer matrix.
pub fn negated(m: &IntMatrix) -> IntMatrix {
    let mut out = m.clone();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.set(r, c, -m.get(r, c));
        }
    }
    out
}

impl CircuitBlocks {
    pub fn to_json(&self) -> serde_json::Value {
        let mut blocks = serde_json::Map::new();
        for (tag, block) in [
            ("R", &self.resistive),
            ("L", &self.inductive),
            ("C", &self.capacitive),
            ("I", &self.current_sources),
            ("V", &self.voltage_sources),
        ] {
            blocks.insert(format!("A_{tag}"), json!(int_rows(&block.a)));
            blocks.insert(format!("B_{tag}"), json!(int_rows(&block.b)));
        }
        blocks.insert("A".into(), json!(int_rows(&self.a)));
        blocks.insert("B".into(), json!(int_rows(&self.b)));
        blocks.insert("nodes".into(), json!(self.nodes));
        blocks.insert("edges".into(), json!(self.edges));
        serde_json::Value::Object(blocks)
    }
}

/// JSON document of an assembled system: its kernel plus the circuit blocks.
pub fn assembly_json(sys: &PhSystem, blocks: &CircuitBlocks) -> serde_json::Value {
    let d = sys.dirac();
    json!({
        "n": d.dim(),
        "K": matrix_rows(d.k()),
        "L": matrix_rows(d.l()),
        "layout": d.layout(),
        "blocks": blocks.to_json(),
    })
}

#[derive(Debug, Clone)]
struct StorageGroup {
    /// Positions inside the class block.
    pos: Vec<usize>,
    energy: EnergyFn,
    /// Initial voltage (capacitor) or current (inductor).
    initial: Option<f64>,
}

#[derive(Debug, Clone)]
struct ResistorGroup {
    pos: Vec<usize>,
    conductance: Option<Arc<dyn VectorMap>>,
    resistance: Option<Arc<dyn VectorMap>>,
    linear: Option<(DMatrix<f64>, DMatrix<f64>)>,
    lossless: bool,
}

/// Constitutive data common to the residual forms.
#[derive(Debug, Clone)]
struct Circuit {
    blocks: CircuitBlocks,
    a: BTreeMap<ComponentClass, DMatrix<f64>>,
    b: BTreeMap<ComponentClass, DMatrix<f64>>,
    a_full: DMatrix<f64>,
    caps: Vec<StorageGroup>,
    inds: Vec<StorageGroup>,
    resistors: Vec<ResistorGroup>,
    isrc: Vec<Waveform>,
    vsrc: Vec<Waveform>,
}

const CLASSES: [ComponentClass; 5] = [
    ComponentClass::Resistive,
    ComponentClass::Inductive,
    ComponentClass::Capacitive,
    ComponentClass::CurrentSource,
    ComponentClass::VoltageSource,
];

impl CircuitBlocks {
    pub fn class(&self, class: ComponentClass) -> &ClassBlock {
        match class {
            ComponentClass::Resistive => &self.resistive,
            ComponentClass::Inductive => &self.inductive,
            ComponentClass::Capacitive => &self.capacitive,
            ComponentClass::CurrentSource => &self.current_sources,
            ComponentClass::VoltageSource => &self.voltage_sources,
        }
    }

    pub fn class_mut(&mut self, class: ComponentClass) -> &mut ClassBlock {
        match class {
            ComponentClass::Resistive => &mut self.resistive,
            ComponentClass::Inductive => &mut self.inductive,
            ComponentClass::Capacitive => &mut self.capacitive,
            ComponentClass::CurrentSource => &mut self.current_sources,
            ComponentClass::VoltageSource => &mut self.voltage_sources,
        }
    }
}

fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m.tr_mul(&DVector::from_column_slice(v))).iter().copied().collect()
}

fn gather(v: &[f64], pos: &[usize]) -> Vec<f64> {
    pos.iter().map(|&p| v[p]).collect()
}

impl Circuit {
    fn new(cg: &CircuitGraph, blocks: &CircuitBlocks, ic: &[(String, f64)]) -> Result<Self, AssemblyError> {
        let mut caps = Vec::new();
        let mut inds = Vec::new();
        let mut resistors = Vec::new();
        let mut isrc = vec![Waveform::Dc(0.0); blocks.current_sources.edges.len()];
        let mut vsrc = vec![Waveform::Dc(0.0); blocks.voltage_sources.edges.len()];
        for (c, comp) in cg.components.iter().enumerate() {
            comp.validate()?;
            let class = comp.class();
            let block = blocks.class(class);
            let pos: Vec<usize> = cg.edge_ranges[c]
                .clone()
                .map(|e| block.edges.iter().position(|&x| x == e).expect("edge in its class block"))
                .collect();
            let initial = ic.iter().rev().find(|(n, _)| n.eq_ignore_ascii_case(&comp.name)).map(|(_, v)| *v);
            match &comp.kind {
                ComponentKind::Capacitor { energy } => caps.push(StorageGroup { pos, energy: energy.clone(), initial }),
                ComponentKind::Inductor { energy } => inds.push(StorageGroup { pos, energy: energy.clone(), initial }),
                ComponentKind::Source { source, waveform } => match source {
                    SourceKind::Voltage => vsrc[pos[0]] = *waveform,
                    _ => isrc[pos[0]] = *waveform,
                },
                _ => resistors.push(ResistorGroup {
                    pos,
                    conductance: comp.conductance_map(),
                    resistance: comp.resistance_map(),
                    linear: comp.linear_relation(),
                    lossless: comp.linear_relation().is_some(),
                }),
            }
        }
        let a = CLASSES.iter().map(|&k| (k, blocks.class(k).a.to_f64())).collect();
        let b = CLASSES.iter().map(|&k| (k, blocks.class(k).b.to_f64())).collect();
        Ok(Self { a_full: blocks.a.to_f64(), blocks: blocks.clone(), a, b, caps, inds, resistors, isrc, vsrc })
    }

    fn am(&self, k: ComponentClass) -> &DMatrix<f64> {
        &self.a[&k]
    }

    fn bm(&self, k: ComponentClass) -> &DMatrix<f64> {
        &self.b[&k]
    }

    fn count(&self, k: ComponentClass) -> usize {
        self.blocks.class(k).edges.len()
    }

    fn isrc_values(&self, t: f64) -> Vec<f64> {
        self.isrc.iter().map(|w| w.value(t)).collect()
    }

    fn vsrc_values(&self, t: f64) -> Vec<f64> {
        self.vsrc.iter().map(|w| w.value(t)).collect()
    }

    /// Scatters per-class vectors back into edge order.
    fn scatter(&self, per_class: &[(ComponentClass, Vec<f64>)]) -> Vec<f64> {
        let mut out = vec![0.0; self.blocks.edges.len()];
        for (k, values) in per_class {
            for (p, &e) in self.blocks.class(*k).edges.iter().enumerate() {
                out[e] = values[p];
            }
        }
        out
    }

    fn observation(&self, t: f64, phi: Vec<f64>, u: Vec<f64>, i: Vec<f64>, energy: f64) -> Observation {
        let _ = t;
        let mut source_power = 0.0;
        for k in [ComponentClass::CurrentSource, ComponentClass::VoltageSource] {
            for &e in &self.blocks.class(k).edges {
                source_power -= u[e] * i[e];
            }
        }
        let mut dissipation = 0.0;
        for g in self.resistors.iter().filter(|g| !g.lossless) {
            for &p in &g.pos {
                let e = self.blocks.resistive.edges[p];
                dissipation += u[e] * i[e];
            }
        }
        Observation { potentials: phi, edge_voltages: u, edge_currents: i, energy, source_power, dissipation }
    }

    fn storage_energy(groups: &[StorageGroup], states: &[f64]) -> f64 {
        groups.iter().map(|g| g.energy.energy(&gather(states, &g.pos))).sum()
    }

    /// `(∇H)⁻¹` applied per group; NaN if a group is not invertible there.
    fn inverse(groups: &[StorageGroup], y: &[f64]) -> Vec<f64> {
        let mut out = vec![f64::NAN; y.len()];
        for g in groups {
            if let Ok(x) = g.energy.inverse_gradient(&gather(y, &g.pos)) {
                for (k, &p) in g.pos.iter().enumerate() {
                    out[p] = x[k];
                }
            }
        }
        out
    }

    /// Block-diagonal Jacobian of `(∇H)⁻¹` at `y`.
    fn inverse_jacobian(groups: &[StorageGroup], y: &[f64]) -> DMatrix<f64> {
        let n = y.len();
        let mut out = DMatrix::from_element(n, n, 0.0);
        for g in groups {
            let j = g.energy.inverse_gradient_jacobian(&gather(y, &g.pos)).unwrap_or_else(|_| {
                DMatrix::from_element(g.pos.len(), g.pos.len(), f64::NAN)
            });
            for (r, &pr) in g.pos.iter().enumerate() {
                for (c, &pc) in g.pos.iter().enumerate() {
                    out[(pr, pc)] = j[(r, c)];
                }
            }
        }
        out
    }

    fn initial_states(groups: &[StorageGroup], n: usize) -> Vec<f64> {
        let mut y = vec![0.0; n];
        for g in groups {
            if let Some(v) = g.initial {
                for &p in &g.pos {
                    y[p] = v;
                }
            }
        }
        Circuit::inverse(groups, &y)
    }
}

/// Which resistor groups enter an MNA (`X`) or MLA (`Y`) form as extra unknowns.
fn extra_groups(resistors: &[ResistorGroup], node: bool) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut groups = Vec::new();
    let mut offsets = Vec::new();
    let mut next = 0;
    for (g, r) in resistors.iter().enumerate() {
        let direct = if node { r.conductance.is_some() } else { r.resistance.is_some() };
        if !direct {
            groups.push(g);
            offsets.push((next..next + r.pos.len()).collect());
            next += r.pos.len();
        }
    }
    (groups, offsets)
}

/// Charge/flux MNA form over `x = (φ, q_C, ψ_L, i_L, i_V, i_X)`:
///
/// ```text
/// A_C q̇_C + A_R g(A_Rᵀφ) + A_L i_L + A_I i_I(t) + A_V i_V + A_X i_X = 0
/// ψ̇_L − A_Lᵀφ = 0
/// u_V(t) − A_Vᵀφ = 0
/// q_C − Q_C(A_Cᵀφ) = 0
/// ψ_L − Ψ_L(i_L) = 0
/// ```
///
/// plus the relation rows of the resistors without a conductance form.
#[derive(Debug, Clone)]
pub struct MnaChargeFlux {
    c: Circuit,
    x_groups: Vec<usize>,
    x_pos: Vec<Vec<usize>>,
}

pub fn to_mna_cf(cg: &CircuitGraph, blocks: &CircuitBlocks, ic: &[(String, f64)]) -> Result<MnaChargeFlux, AssemblyError> {
    let c = Circuit::new(cg, blocks, ic)?;
    let (x_groups, x_pos) = extra_groups(&c.resistors, true);
    Ok(MnaChargeFlux { c, x_groups, x_pos })
}

struct Layout {
    sizes: Vec<usize>,
}

impl Layout {
    fn offset(&self, k: usize) -> usize {
        self.sizes[..k].iter().sum()
    }

    fn slice<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        let o = self.offset(k);
        &x[o..o + self.sizes[k]]
    }

    fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

impl MnaChargeFlux {
    fn layout(&self) -> Layout {
        use ComponentClass::*;
        let mx = self.x_pos.iter().map(Vec::len).sum();
        let c = &self.c;
        Layout {
            sizes: vec![
                c.blocks.nodes.len(),
                c.count(Capacitive),
                c.count(Inductive),
                c.count(Inductive),
                c.count(VoltageSource),
                mx,
            ],
        }
    }

    /// Resistive edge currents from the voltages and the `i_X` unknowns.
    fn resistive_currents(&self, u_r: &[f64], i_x: &[f64]) -> Vec<f64> {
        let mut i_r = vec![0.0; u_r.len()];
        for g in &self.c.resistors {
            if let Some(map) = &g.conductance {
                for (k, v) in map.eval(&gather(u_r, &g.pos)).into_iter().enumerate() {
                    i_r[g.pos[k]] = v;
                }
            }
        }
        for (j, &g) in self.x_groups.iter().enumerate() {
            for (k, &p) in self.c.resistors[g].pos.iter().enumerate() {
                i_r[p] = i_x[self.x_pos[j][k]];
            }
        }
        i_r
    }

    /// Charge and flux states with their rates, listed per edge (`None` for
    /// memoryless edges).
    pub fn edge_storage(&self, x: &[f64], xdot: &[f64]) -> Vec<Option<(f64, f64)>> {
        use ComponentClass::*;
        let lay = self.layout();
        let mut out = vec![None; self.c.blocks.edges.len()];
        for (slot, class) in [(1, Capacitive), (2, Inductive)] {
            let (s, r) = (lay.slice(x, slot), lay.slice(xdot, slot));
            for (p, &e) in self.c.blocks.class(class).edges.iter().enumerate() {
                out[e] = Some((s[p], r[p]));
            }
        }
        out
    }

    /// State and rate vectors from node potentials and edge quantities.
    pub fn pack(&self, phi: &[f64], storage: &[Option<(f64, f64)>], currents: &[f64]) -> (DVector<f64>, DVector<f64>) {
        use ComponentClass::*;
        let lay = self.layout();
        let mut x = DVector::zeros(lay.total());
        let mut xd = DVector::zeros(lay.total());
        x.rows_mut(0, phi.len()).copy_from_slice(phi);
        for (slot, class) in [(1, Capacitive), (2, Inductive)] {
            let o = lay.offset(slot);
            for (p, &e) in self.c.blocks.class(class).edges.iter().enumerate() {
                let (s, r) = storage[e].unwrap_or((0.0, 0.0));
                x[o + p] = s;
                xd[o + p] = r;
            }
        }
        for (slot, class) in [(3, Inductive), (4, VoltageSource)] {
            let o = lay.offset(slot);
            for (p, &e) in self.c.blocks.class(class).edges.iter().enumerate() {
                x[o + p] = currents[e];
            }
        }
        let o = lay.offset(5);
        for (j, &g) in self.x_groups.iter().enumerate() {
            for (k, &p) in self.c.resistors[g].pos.iter().enumerate() {
                x[o + self.x_pos[j][k]] = currents[self.c.blocks.resistive.edges[p]];
            }
        }
        (x, xd)
    }
}

impl DaeProblem for MnaChargeFlux {
    fn dim(&self) -> usize {
        self.layout().total()
    }

    fn residual(&self, t: f64, x: &[f64], xdot: &[f64]) -> DVector<f64> {
        use ComponentClass::*;
        let c = &self.c;
        let lay = self.layout();
        let phi = lay.slice(x, 0);
        let q = lay.slice(x, 1);
        let qd = lay.slice(xdot, 1);
        let psi = lay.slice(x, 2);
        let psid = lay.slice(xdot, 2);
        let i_l = lay.slice(x, 3);
        let i_v = lay.slice(x, 4);
        let i_x = lay.slice(x, 5);

        let u_r = mat_t_vec(c.am(Resistive), phi);
        let u_c = mat_t_vec(c.am(Capacitive), phi);
        let u_l = mat_t_vec(c.am(Inductive), phi);
        let u_v = mat_t_vec(c.am(VoltageSource), phi);
        let i_r = self.resistive_currents(&u_r, i_x);

        let mut node = c.am(Capacitive) * DVector::from_column_slice(qd);
        node += c.am(Resistive) * DVector::from_vec(i_r.clone());
        node += c.am(Inductive) * DVector::from_column_slice(i_l);
        node += c.am(CurrentSource) * DVector::from_vec(c.isrc_values(t));
        node += c.am(VoltageSource) * DVector::from_column_slice(i_v);

        let mut out: Vec<f64> = node.iter().copied().collect();
        out.extend(psid.iter().zip(&u_l).map(|(a, b)| a - b));
        out.extend(c.vsrc_values(t).iter().zip(&u_v).map(|(w, u)| w - u));
        let q_of_u = Circuit::inverse(&c.caps, &u_c);
        out.extend(q.iter().zip(&q_of_u).map(|(a, b)| a - b));
        let psi_of_i = Circuit::inverse(&c.inds, i_l);
        out.extend(psi.iter().zip(&psi_of_i).map(|(a, b)| a - b));
        for &g in &self.x_groups {
            let grp = &c.resistors[g];
            let u = gather(&u_r, &grp.pos);
            let i = gather(&i_r, &grp.pos);
            if let Some((f, e)) = &grp.linear {
                let r = f * DVector::from_vec(i) + e * DVector::from_vec(u);
                out.extend(r.iter());
            } else if let Some(r) = &grp.resistance {
                out.extend(u.iter().zip(r.eval(&i)).map(|(a, b)| a - b));
            }
        }
        DVector::from_vec(out)
    }

    fn jacobian(&self, _t: f64, x: &[f64], _xdot: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        use ComponentClass::*;
        let c = &self.c;
        let lay = self.layout();
        let n = lay.total();
        let (o_q, o_psi, o_il, o_iv, o_ix) = (lay.offset(1), lay.offset(2), lay.offset(3), lay.offset(4), lay.offset(5));
        let nv = lay.sizes[0];
        let (mc, ml, mv) = (lay.sizes[1], lay.sizes[2], lay.sizes[4]);
        let phi = lay.slice(x, 0);
        let i_l = lay.slice(x, 3);
        let a_r = c.am(Resistive);
        let u_r = mat_t_vec(a_r, phi);
        let mut jx = DMatrix::zeros(n, n);
        let mut jd = DMatrix::zeros(n, n);

        // node rows
        for g in &c.resistors {
            if let Some(map) = &g.conductance {
                let jg = map.jacobian(&gather(&u_r, &g.pos));
                let cols = DMatrix::from_fn(nv, g.pos.len(), |r, k| a_r[(r, g.pos[k])]);
                let block = &cols * jg * cols.transpose();
                let mut view = jx.view_mut((0, 0), (nv, nv));
                view += block;
            }
        }
        jd.view_mut((0, o_q), (nv, mc)).copy_from(c.am(Capacitive));
        jx.view_mut((0, o_il), (nv, ml)).copy_from(c.am(Inductive));
        jx.view_mut((0, o_iv), (nv, mv)).copy_from(c.am(VoltageSource));
        for (j, &g) in self.x_groups.iter().enumerate() {
            for (k, &p) in c.resistors[g].pos.iter().enumerate() {
                for r in 0..nv {
                    jx[(r, o_ix + self.x_pos[j][k])] = a_r[(r, p)];
                }
            }
        }
        // flux rows
        let mut row = nv;
        jd.view_mut((row, o_psi), (ml, ml)).fill_with_identity();
        jx.view_mut((row, 0), (ml, nv)).copy_from(&(-c.am(Inductive).transpose()));
        row += ml;
        jx.view_mut((row, 0), (mv, nv)).copy_from(&(-c.am(VoltageSource).transpose()));
        row += mv;
        // charge rows
        let u_c = mat_t_vec(c.am(Capacitive), phi);
        let dq = Circuit::inverse_jacobian(&c.caps, &u_c);
        jx.view_mut((row, o_q), (mc, mc)).fill_with_identity();
        jx.view_mut((row, 0), (mc, nv)).copy_from(&(-(dq * c.am(Capacitive).transpose())));
        row += mc;
        // flux-current rows
        let dpsi = Circuit::inverse_jacobian(&c.inds, i_l);
        jx.view_mut((row, o_psi), (ml, ml)).fill_with_identity();
        jx.view_mut((row, o_il), (ml, ml)).copy_from(&(-dpsi));
        row += ml;
        // extra resistive rows
        for (j, &g) in self.x_groups.iter().enumerate() {
            let grp = &c.resistors[g];
            let width = grp.pos.len();
            let cols = DMatrix::from_fn(nv, width, |r, k| a_r[(r, grp.pos[k])]);
            let ix_cols: Vec<usize> = self.x_pos[j].iter().map(|p| o_ix + p).collect();
            if let Some((f, e)) = &grp.linear {
                let phi_part = e * cols.transpose();
                jx.view_mut((row, 0), (f.nrows(), nv)).copy_from(&phi_part);
                for (k, &col) in ix_cols.iter().enumerate() {
                    for r in 0..f.nrows() {
                        jx[(row + r, col)] = f[(r, k)];
                    }
                }
                row += f.nrows();
            } else if let Some(rmap) = &grp.resistance {
                let i_x = lay.slice(x, 5);
                let i: Vec<f64> = self.x_pos[j].iter().map(|&p| i_x[p]).collect();
                let jr = rmap.jacobian(&i);
                jx.view_mut((row, 0), (width, nv)).copy_from(&cols.transpose());
                for (k, &col) in ix_cols.iter().enumerate() {
                    for r in 0..width {
                        jx[(row + r, col)] = -jr[(r, k)];
                    }
                }
                row += width;
            }
        }
        debug_assert_eq!(row, n);
        Some((jx, jd))
    }

    fn differential(&self) -> Vec<bool> {
        let lay = self.layout();
        (0..lay.total()).map(|i| i >= lay.offset(1) && i < lay.offset(3)).collect()
    }

    fn observe(&self, t: f64, x: &[f64], xdot: &[f64]) -> Observation {
        use ComponentClass::*;
        let c = &self.c;
        let lay = self.layout();
        let phi = lay.slice(x, 0).to_vec();
        let u_r = mat_t_vec(c.am(Resistive), &phi);
        let per_u: Vec<(ComponentClass, Vec<f64>)> =
            CLASSES.iter().map(|&k| (k, mat_t_vec(c.am(k), &phi))).collect();
        let i_r = self.resistive_currents(&u_r, lay.slice(x, 5));
        let per_i = vec![
            (Resistive, i_r),
            (Inductive, lay.slice(x, 3).to_vec()),
            (Capacitive, lay.slice(xdot, 1).to_vec()),
            (CurrentSource, c.isrc_values(t)),
            (VoltageSource, lay.slice(x, 4).to_vec()),
        ];
        let mut per_u = per_u;
        per_u[4].1 = mat_t_vec(c.am(VoltageSource), &phi);
        let energy = Circuit::storage_energy(&c.caps, lay.slice(x, 1)) + Circuit::storage_energy(&c.inds, lay.slice(x, 2));
        c.observation(t, phi, c.scatter(&per_u), c.scatter(&per_i), energy)
    }

    fn node_names(&self) -> Vec<String> {
        self.c.blocks.nodes.clone()
    }

    fn edge_names(&self) -> Vec<String> {
        self.c.blocks.edges.clone()
    }

    fn initial_differential_values(&self) -> Option<Vec<f64>> {
        use ComponentClass::*;
        let mut v = Circuit::initial_states(&self.c.caps, self.c.count(Capacitive));
        v.extend(Circuit::initial_states(&self.c.inds, self.c.count(Inductive)));
        Some(v)
    }
}

/// Potential MNA form over `x = (φ, i_L, i_V, i_X)`:
///
/// ```text
/// A_C 𝒞(A_Cᵀφ) A_Cᵀφ̇ + A_R g(A_Rᵀφ) + A_L i_L + A_I i_I(t) + A_V i_V + A_X i_X = 0
/// −A_Lᵀφ + 𝓛(i_L) i̇_L = 0
/// −A_Vᵀφ + u_V(t) = 0
/// ```
#[derive(Debug, Clone)]
pub struct MnaPotential {
    inner: MnaChargeFlux,
}

pub fn to_mna(cg: &CircuitGraph, blocks: &CircuitBlocks) -> Result<MnaPotential, AssemblyError> {
    Ok(MnaPotential { inner: to_mna_cf(cg, blocks, &[])? })
}

impl MnaPotential {
    fn layout(&self) -> Layout {
        let l = self.inner.layout();
        Layout { sizes: vec![l.sizes[0], l.sizes[3], l.sizes[4], l.sizes[5]] }
    }
}

impl DaeProblem for MnaPotential {
    fn dim(&self) -> usize {
        self.layout().total()
    }

    fn residual(&self, t: f64, x: &[f64], xdot: &[f64]) -> DVector<f64> {
        use ComponentClass::*;
        let c = &self.inner.c;
        let lay = self.layout();
        let phi = lay.slice(x, 0);
        let phid = lay.slice(xdot, 0);
        let i_l = lay.slice(x, 1);
        let i_ld = lay.slice(xdot, 1);
        let i_v = lay.slice(x, 2);
        let i_x = lay.slice(x, 3);
        let a_c = c.am(Capacitive);
        let u_c = mat_t_vec(a_c, phi);
        let ud_c = mat_t_vec(a_c, phid);
        let i_c = Circuit::inverse_jacobian(&c.caps, &u_c) * DVector::from_vec(ud_c);
        let u_r = mat_t_vec(c.am(Resistive), phi);
        let i_r = self.inner.resistive_currents(&u_r, i_x);
        let mut node = a_c * i_c;
        node += c.am(Resistive) * DVector::from_vec(i_r.clone());
        node += c.am(Inductive) * DVector::from_column_slice(i_l);
        node += c.am(CurrentSource) * DVector::from_vec(c.isrc_values(t));
        node += c.am(VoltageSource) * DVector::from_column_slice(i_v);
        let mut out: Vec<f64> = node.iter().copied().collect();
        let u_l = mat_t_vec(c.am(Inductive), phi);
        let flux = Circuit::inverse_jacobian(&c.inds, i_l) * DVector::from_column_slice(i_ld);
        out.extend(flux.iter().zip(&u_l).map(|(a, b)| a - b));
        let u_v = mat_t_vec(c.am(VoltageSource), phi);
        out.extend(c.vsrc_values(t).iter().zip(&u_v).map(|(w, u)| w - u));
        for &g in &self.inner.x_groups {
            let grp = &c.resistors[g];
            let u = gather(&u_r, &grp.pos);
            let i = gather(&i_r, &grp.pos);
            if let Some((f, e)) = &grp.linear {
                out.extend((f * DVector::from_vec(i) + e * DVector::from_vec(u)).iter());
            } else if let Some(r) = &grp.resistance {
                out.extend(u.iter().zip(r.eval(&i)).map(|(a, b)| a - b));
            }
        }
        DVector::from_vec(out)
    }

    fn differential(&self) -> Vec<bool> {
        let c = &self.inner.c;
        let a_c = c.am(ComponentClass::Capacitive);
        let lay = self.layout();
        let mut mask: Vec<bool> = (0..lay.sizes[0]).map(|v| a_c.row(v).iter().any(|&x| x != 0.0)).collect();
        mask.extend(std::iter::repeat_n(true, lay.sizes[1]));
        mask.extend(std::iter::repeat_n(false, lay.sizes[2] + lay.sizes[3]));
        mask
    }

    fn observe(&self, t: f64, x: &[f64], xdot: &[f64]) -> Observation {
        use ComponentClass::*;
        let c = &self.inner.c;
        let lay = self.layout();
        let phi = lay.slice(x, 0).to_vec();
        let u_c = mat_t_vec(c.am(Capacitive), &phi);
        let ud_c = mat_t_vec(c.am(Capacitive), lay.slice(xdot, 0));
        let i_c: Vec<f64> = (Circuit::inverse_jacobian(&c.caps, &u_c) * DVector::from_vec(ud_c)).iter().copied().collect();
        let u_r = mat_t_vec(c.am(Resistive), &phi);
        let per_u: Vec<(ComponentClass, Vec<f64>)> = CLASSES.iter().map(|&k| (k, mat_t_vec(c.am(k), &phi))).collect();
        let per_i = vec![
            (Resistive, self.inner.resistive_currents(&u_r, lay.slice(x, 3))),
            (Inductive, lay.slice(x, 1).to_vec()),
            (Capacitive, i_c),
            (CurrentSource, c.isrc_values(t)),
            (VoltageSource, lay.slice(x, 2).to_vec()),
        ];
        let q = Circuit::inverse(&c.caps, &u_c);
        let psi = Circuit::inverse(&c.inds, lay.slice(x, 1));
        let energy = Circuit::storage_energy(&c.caps, &q) + Circuit::storage_energy(&c.inds, &psi);
        c.observation(t, phi, c.scatter(&per_u), c.scatter(&per_i), energy)
    }

    fn node_names(&self) -> Vec<String> {
        self.inner.node_names()
    }

    fn edge_names(&self) -> Vec<String> {
        self.inner.edge_names()
    }
}

/// Loop form over `x = (ι, u_C, u_I, u_Y)`:
///
/// ```text
/// B_L 𝓛(B_Lᵀι) B_Lᵀι̇ + B_R r(B_Rᵀι) + B_C u_C + B_I u_I + B_V u_V(t) + B_Y u_Y = 0
/// −B_Cᵀι + 𝒞(u_C) u̇_C = 0
/// −B_Iᵀι + i_I(t) = 0
/// ```
///
/// plus the relation rows of the resistors without a resistance form.
#[derive(Debug, Clone)]
pub struct Mla {
    c: Circuit,
    y_groups: Vec<usize>,
    y_pos: Vec<Vec<usize>>,
}

pub fn to_mla(cg: &CircuitGraph, blocks: &CircuitBlocks) -> Result<Mla, AssemblyError> {
    let c = Circuit::new(cg, blocks, &[])?;
    let (y_groups, y_pos) = extra_groups(&c.resistors, false);
    Ok(Mla { c, y_groups, y_pos })
}

impl Mla {
    fn layout(&self) -> Layout {
        use ComponentClass::*;
        let my = self.y_pos.iter().map(Vec::len).sum();
        Layout { sizes: vec![self.c.blocks.b.nrows(), self.c.count(Capacitive), self.c.count(CurrentSource), my] }
    }

    fn resistive_voltages(&self, i_r: &[f64], u_y: &[f64]) -> Vec<f64> {
        let mut u_r = vec![0.0; i_r.len()];
        for g in &self.c.resistors {
            if let Some(map) = &g.resistance {
                for (k, v) in map.eval(&gather(i_r, &g.pos)).into_iter().enumerate() {
                    u_r[g.pos[k]] = v;
                }
            }
        }
        for (j, &g) in self.y_groups.iter().enumerate() {
            for (k, &p) in self.c.resistors[g].pos.iter().enumerate() {
                u_r[p] = u_y[self.y_pos[j][k]];
            }
        }
        u_r
    }
}

impl DaeProblem for Mla {
    fn dim(&self) -> usize {
        self.layout().total()
    }

    fn residual(&self, t: f64, x: &[f64], xdot: &[f64]) -> DVector<f64> {
        use ComponentClass::*;
        let c = &self.c;
        let lay = self.layout();
        let iota = lay.slice(x, 0);
        let iotad = lay.slice(xdot, 0);
        let u_c = lay.slice(x, 1);
        let u_cd = lay.slice(xdot, 1);
        let u_i = lay.slice(x, 2);
        let u_y = lay.slice(x, 3);
        let b_l = c.bm(Inductive);
        let i_l = mat_t_vec(b_l, iota);
        let id_l = mat_t_vec(b_l, iotad);
        let u_l = Circuit::inverse_jacobian(&c.inds, &i_l) * DVector::from_vec(id_l);
        let i_r = mat_t_vec(c.bm(Resistive), iota);
        let u_r = self.resistive_voltages(&i_r, u_y);
        let mut lp = b_l * u_l;
        lp += c.bm(Resistive) * DVector::from_vec(u_r.clone());
        lp += c.bm(Capacitive) * DVector::from_column_slice(u_c);
        lp += c.bm(CurrentSource) * DVector::from_column_slice(u_i);
        lp += c.bm(VoltageSource) * DVector::from_vec(c.vsrc_values(t));
        let mut out: Vec<f64> = lp.iter().copied().collect();
        let i_c = mat_t_vec(c.bm(Capacitive), iota);
        let dq = Circuit::inverse_jacobian(&c.caps, u_c) * DVector::from_column_slice(u_cd);
        out.extend(dq.iter().zip(&i_c).map(|(a, b)| a - b));
        let i_i = mat_t_vec(c.bm(CurrentSource), iota);
        out.extend(c.isrc_values(t).iter().zip(&i_i).map(|(w, i)| w - i));
        for &g in &self.y_groups {
            let grp = &c.resistors[g];
            let u = gather(&u_r, &grp.pos);
            let i = gather(&i_r, &grp.pos);
            if let Some((f, e)) = &grp.linear {
                out.extend((f * DVector::from_vec(i) + e * DVector::from_vec(u)).iter());
            } else if let Some(map) = &grp.conductance {
                out.extend(i.iter().zip(map.eval(&u)).map(|(a, b)| a - b));
            }
        }
        DVector::from_vec(out)
    }

    fn differential(&self) -> Vec<bool> {
        let b_l = self.c.bm(ComponentClass::Inductive);
        let lay = self.layout();
        let mut mask: Vec<bool> = (0..lay.sizes[0]).map(|r| b_l.row(r).iter().any(|&x| x != 0.0)).collect();
        mask.extend(std::iter::repeat_n(true, lay.sizes[1]));
        mask.extend(std::iter::repeat_n(false, lay.sizes[2] + lay.sizes[3]));
        mask
    }

    fn observe(&self, t: f64, x: &[f64], xdot: &[f64]) -> Observation {
        use ComponentClass::*;
        let c = &self.c;
        let lay = self.layout();
        let iota = lay.slice(x, 0);
        let per_i: Vec<(ComponentClass, Vec<f64>)> = CLASSES.iter().map(|&k| (k, mat_t_vec(c.bm(k), iota))).collect();
        let i_l = mat_t_vec(c.bm(Inductive), iota);
        let id_l = mat_t_vec(c.bm(Inductive), lay.slice(xdot, 0));
        let u_l: Vec<f64> =
            (Circuit::inverse_jacobian(&c.inds, &i_l) * DVector::from_vec(id_l)).iter().copied().collect();
        let i_r = mat_t_vec(c.bm(Resistive), iota);
        let per_u = vec![
            (Resistive, self.resistive_voltages(&i_r, lay.slice(x, 3))),
            (Inductive, u_l),
            (Capacitive, lay.slice(x, 1).to_vec()),
            (CurrentSource, lay.slice(x, 2).to_vec()),
            (VoltageSource, c.vsrc_values(t)),
        ];
        let u = c.scatter(&per_u);
        let i = c.scatter(&per_i);
        // potentials from u = Aᵀφ in the least-squares sense
        let a = &c.a_full;
        let phi: Vec<f64> = if a.nrows() == 0 {
            vec![]
        } else {
            let rhs = a * DVector::from_vec(u.clone());
            (a * a.transpose()).lu().solve(&rhs).map(|p| p.iter().copied().collect()).unwrap_or_else(|| vec![f64::NAN; a.nrows()])
        };
        let q = Circuit::inverse(&c.caps, lay.slice(x, 1));
        let psi = Circuit::inverse(&c.inds, &i_l);
        let energy = Circuit::storage_energy(&c.caps, &q) + Circuit::storage_energy(&c.inds, &psi);
        c.observation(t, phi, u, i, energy)
    }

    fn node_names(&self) -> Vec<String> {
        self.c.blocks.nodes.clone()
    }

    fn edge_names(&self) -> Vec<String> {
        self.c.blocks.edges.clone()
    }
}

/// Outcome of the pH / MNA correspondence check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub samples: usize,
    /// Largest pH residual at projected MNA solutions.
    pub mna_to_ph: f64,
    /// Largest MNA residual at projected pH solutions.
    pub ph_to_mna: f64,
}

impl EquivalenceReport {
    pub fn witness(&self) -> f64 {
        self.mna_to_ph.max(self.ph_to_mna)
    }
}

/// Gauss–Newton projection onto `{F = 0}` with minimum-norm steps.
fn project(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, y0: DVector<f64>) -> Option<DVector<f64>> {
    let jac = |y: &DVector<f64>| crate::solver::forward_jacobian(f, y);
    newton(f, &jac, y0, 1e-13, 200, 0.0).ok().map(|o| o.x)
}

struct PhPoint {
    x: Vec<f64>,
    xdot: Vec<f64>,
    z: Vec<f64>,
}

/// pH coordinates of a circuit state in the node-role assembled system.
fn ph_point(cg: &CircuitGraph, phi: &[f64], storage: &[Option<(f64, f64)>], u: &[f64], i: &[f64]) -> PhPoint {
    let coords = edge_coordinates(cg);
    let nv = phi.len();
    let owner = cg.edge_owner();
    let mut x = vec![0.0; nv];
    let mut xdot = vec![0.0; nv];
    let mut e_l = phi.to_vec();
    let (mut f_r, mut e_r, mut f_p, mut e_p) = (vec![], vec![], vec![], vec![]);
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by_key(|&e| coords[e].0);
    for e in order {
        match cg.components[owner[e]].kind {
            ComponentKind::Capacitor { .. } | ComponentKind::Inductor { .. } => {
                let (s, r) = storage[e].unwrap_or((0.0, 0.0));
                x.push(s);
                xdot.push(r);
                e_l.push(if coords[e].1 { i[e] } else { u[e] });
            }
            ComponentKind::Source { .. } => {
                f_p.push(-i[e]);
                e_p.push(u[e]);
            }
            _ => {
                f_r.push(-i[e]);
                e_r.push(u[e]);
            }
        }
    }
    let z = e_l.into_iter().chain(f_r).chain(e_r).chain(f_p).chain(e_p).collect();
    PhPoint { x, xdot, z }
}

/// Checks that solutions of the assembled node-role system and of the charge/flux
/// MNA form correspond, in both directions, at random points near `t = 0`.
///
/// Each sample is projected onto one solution set by Gauss–Newton, translated
/// through the edge quantities, and the other residual is evaluated there.
pub fn ph_mna_equivalence(
    cg: &CircuitGraph,
    sys: &PhSystem,
    mna: &MnaChargeFlux,
    samples: usize,
    seed: u64,
) -> Result<EquivalenceReport, AssemblyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mna.dim();
    let mask = mna.differential();
    let diff: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let nv = mna.c.blocks.nodes.len();
    let d = sys.dims();
    let mut report = EquivalenceReport { samples: 0, mna_to_ph: 0.0, ph_to_mna: 0.0 };
    let mut failures = 0;
    for _ in 0..samples {
        let t = rng.random_range(0.0..1e-5);
        let unpack = |y: &DVector<f64>| {
            let x = y.rows(0, n).clone_owned();
            let mut xd = DVector::zeros(n);
            for (k, &i) in diff.iter().enumerate() {
                xd[i] = y[n + k];
            }
            (x, xd)
        };
        // start near a physically scaled point
        let mut y0 = DVector::zeros(n + diff.len());
        for v in 0..nv {
            y0[v] = rng.random_range(-0.2..0.2);
        }
        for k in nv..n + diff.len() {
            y0[k] = rng.random_range(-1e-3..1e-3);
        }
        {
            let (x, _) = unpack(&y0);
            let u_c = mat_t_vec(mna.c.am(ComponentClass::Capacitive), &x.as_slice()[..nv]);
            let q = Circuit::inverse(&mna.c.caps, &u_c);
            let o = mna.layout().offset(1);
            for (k, v) in q.into_iter().enumerate() {
                y0[o + k] = v;
            }
        }
        let f_mna = |y: &DVector<f64>| {
            let (x, xd) = unpack(y);
            mna.residual(t, x.as_slice(), xd.as_slice())
        };
        let Some(y) = project(&f_mna, y0) else {
            failures += 1;
            continue;
        };
        let (x, xd) = unpack(&y);
        let obs = mna.observe(t, x.as_slice(), xd.as_slice());
        let storage = mna.edge_storage(x.as_slice(), xd.as_slice());
        let p = ph_point(cg, &obs.potentials, &storage, &obs.edge_voltages, &obs.edge_currents);
        let r = ph_residual(sys, t, &p.x, &p.xdot, &p.z)?;
        report.mna_to_ph = report.mna_to_ph.max(r.amax());

        // other direction: perturb the translated point and project onto the pH set
        let nx = d.storage - nv;
        let free = 2 * nx + p.z.len();
        let mut w0 = DVector::zeros(free);
        for k in 0..nx {
            w0[k] = p.x[nv + k];
            w0[nx + k] = p.xdot[nv + k];
        }
        for (k, v) in p.z.iter().enumerate() {
            w0[2 * nx + k] = *v;
        }
        for k in 0..free {
            w0[k] *= 1.0 + rng.random_range(-1e-3..1e-3);
            w0[k] += rng.random_range(-1e-6..1e-6);
        }
        let split = |w: &DVector<f64>| {
            let mut x = vec![0.0; nv];
            let mut xd = vec![0.0; nv];
            x.extend(w.rows(0, nx).iter());
            xd.extend(w.rows(nx, nx).iter());
            (x, xd, w.rows(2 * nx, free - 2 * nx).iter().copied().collect::<Vec<f64>>())
        };
        let f_ph = |w: &DVector<f64>| {
            let (x, xd, z) = split(w);
            ph_residual(sys, t, &x, &xd, &z).expect("dimensions fixed above")
        };
        let Some(w) = project(&f_ph, w0) else {
            failures += 1;
            continue;
        };
        let (x, xd, z) = split(&w);
        let (phi, storage, currents) = edge_quantities(cg, nv, &x, &xd, &z, d.resistive, d.external);
        let (mx, mxd) = mna.pack(&phi, &storage, &currents);
        let r = mna.residual(t, mx.as_slice(), mxd.as_slice());
        report.ph_to_mna = report.ph_to_mna.max(r.amax());
        report.samples += 1;
    }
    if report.samples == 0 {
        return Err(AssemblyError::Unsupported(format!("all {failures} projections failed")));
    }
    Ok(report)
}

/// Inverse of [`ph_point`]: node potentials, per-edge storage and edge currents.
fn edge_quantities(
    cg: &CircuitGraph,
    nv: usize,
    x: &[f64],
    xd: &[f64],
    z: &[f64],
    nr: usize,
    np: usize,
) -> (Vec<f64>, Vec<Option<(f64, f64)>>, Vec<f64>) {
    let coords = edge_coordinates(cg);
    let owner = cg.edge_owner();
    let nl = x.len();
    let e_l = &z[..nl];
    let f_r = &z[nl..nl + nr];
    let f_p = &z[nl + 2 * nr..nl + 2 * nr + np];
    let mut storage = vec![None; coords.len()];
    let mut currents = vec![0.0; coords.len()];
    for (e, &(c, gyrator)) in coords.iter().enumerate() {
        match cg.components[owner[e]].kind {
            ComponentKind::Capacitor { .. } | ComponentKind::Inductor { .. } => {
                storage[e] = Some((x[c], xd[c]));
                if gyrator {
                    currents[e] = e_l[c];
                }
            }
            ComponentKind::Source { .. } => currents[e] = -f_p[c - nl - nr],
            _ => currents[e] = -f_r[c - nl],
        }
    }
    (e_l[..nv].to_vec(), storage, currents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{build_graph, parse};
    use crate::ph_core::is_dirac;
    use crate::solver::{simulate, IntegratorConfig};
    use approx::assert_relative_eq;

    fn circuit(text: &str) -> CircuitGraph {
        build_graph(&parse(text).unwrap()).unwrap()
    }

    const RC: &str = "* rc\nV1 1 0 DC 5\nR1 1 2 R=1k\nC1 2 0 C=1u\n.ground 0\n.tran 5m 1u uic\n.end\n";
    const RLC: &str = "* rlc\nV1 1 0 SIN(0 5 1k)\nR1 1 2 R=10\nL1 2 3 L=1m\nC1 3 0 C=1u\n.ground 0\n.end\n";

    #[test]
    fn kirchhoff_structure_is_dirac() {
        let cg = circuit(RC);
        let k = kirchhoff_dirac(&cg.graph, &cg.grounds).unwrap();
        let d = k.system.dirac();
        assert!(is_dirac(d.k(), d.l(), 1e-12).unwrap());
        assert_eq!(k.system.dims().storage, 2);
        assert_eq!(k.system.dims().link, 3);
        let lk = loop_kirchhoff_dirac(&cg.graph).unwrap();
        assert_eq!(lk.system.dims().storage, 1);
        assert!(is_dirac(lk.system.dirac().k(), lk.system.dirac().l(), 1e-12).unwrap());
    }

    #[test]
    fn assembled_matches_closed_form() {
        for text in [RC, RLC] {
            let cg = circuit(text);
            let sys = assemble(&cg).unwrap();
            let closed = closed_form_dirac(&cg).unwrap();
            let kinds = |d: &DiracKernel| d.layout().iter().map(|p| p.kind).collect::<Vec<_>>();
            assert_eq!(kinds(sys.dirac()), kinds(&closed));
            assert!(sys.dirac().same_subspace(&closed, 1e-9));
        }
    }

    #[test]
    fn rc_stationary_point_signs() {
        // i = 2 mA through the loop: u_R = 2 V, u_C = 3 V, q̇_C = +2 mA
        let cg = circuit(RC);
        let sys = assemble(&cg).unwrap();
        let storage = vec![None, None, Some((3e-6, 2e-3))];
        let p = ph_point(&cg, &[5.0, 3.0], &storage, &[5.0, 2.0, 3.0], &[-2e-3, 2e-3, 2e-3]);
        let r = ph_residual(&sys, 0.0, &p.x, &p.xdot, &p.z).unwrap();
        assert!(r.amax() < 1e-12, "{r}");
        let bad = ph_point(&cg, &[5.0, 3.0], &[None, None, Some((3e-6, -2e-3))], &[5.0, 2.0, 3.0], &[-2e-3, 2e-3, -2e-3]);
        assert!(ph_residual(&sys, 0.0, &bad.x, &bad.xdot, &bad.z).unwrap().amax() > 1e-4);
    }

    #[test]
    fn blocks_partition_edges() {
        let cg = circuit(RLC);
        let b = circuit_blocks(&cg).unwrap();
        assert_eq!(b.voltage_sources.edges, vec![0]);
        assert_eq!(b.resistive.edges, vec![1]);
        assert_eq!(b.inductive.edges, vec![2]);
        assert_eq!(b.capacitive.edges, vec![3]);
        assert_eq!(b.a.nrows(), 3);
        assert_eq!(b.b.nrows(), 1);
        let json = b.to_json();
        assert_eq!(json["A_C"], json!([[0], [0], [1]]));
    }

    #[test]
    fn rc_charging_matches_exponential() {
        let cg = circuit(RC);
        let blocks = circuit_blocks(&cg).unwrap();
        let mna = to_mna_cf(&cg, &blocks, &[]).unwrap();
        let cfg = IntegratorConfig { dt: 1e-6, uic: true, ..Default::default() };
        let tr = simulate(&mna, &cfg, 5e-3).unwrap();
        let last = tr.observations.last().unwrap();
        let exact = 5.0 * (1.0 - (-5.0f64).exp());
        assert_relative_eq!(last.edge_voltages[2], exact, max_relative = 1e-3);
        assert!(tr.newton_iterations[1..].iter().all(|&n| n == 1));
    }

    #[test]
    fn equivalence_and_negative_control() {
        for text in [RC, RLC] {
            let cg = circuit(text);
            let blocks = circuit_blocks(&cg).unwrap();
            let sys = assemble_with(&cg, Role::Node, true).unwrap();
            let mna = to_mna_cf(&cg, &blocks, &[]).unwrap();
            let rep = ph_mna_equivalence(&cg, &sys, &mna, 5, 7).unwrap();
            assert!(rep.witness() < 1e-9, "{rep:?}");
            let mut flipped = blocks.clone();
            flipped.capacitive.a = negated(&flipped.capacitive.a);
            let bad = to_mna_cf(&cg, &flipped, &[]).unwrap();
            let rep = ph_mna_equivalence(&cg, &sys, &bad, 5, 7).unwrap();
            assert!(rep.witness() > 1e-6, "{rep:?}");
        }
    }

    #[test]
    fn mna_and_mla_agree_on_rlc() {
        let cg = circuit(RLC);
        let blocks = circuit_blocks(&cg).unwrap();
        let cfg = IntegratorConfig { dt: 1e-6, ..Default::default() };
        let a = simulate(&to_mna(&cg, &blocks).unwrap(), &cfg, 1e-3).unwrap();
        let b = simulate(&to_mla(&cg, &blocks).unwrap(), &cfg, 1e-3).unwrap();
        for (oa, ob) in a.observations.iter().zip(&b.observations) {
            for (x, y) in oa.edge_currents.iter().zip(&ob.edge_currents) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }
}
