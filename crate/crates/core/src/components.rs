//! Constitutive models of lumped circuit elements, each available as a
//! port-Hamiltonian system and as plain evaluable maps.
//!
//! Every `ℓ_p`-port element is built on the standard structure `{(−i, i, u, u)}`
//! (or its gyrator variant for inductors), with the first `ℓ_p` coordinates internal
//! and the last `ℓ_p` facing the circuit. Under [`Role::Loop`] flows and efforts of
//! the circuit-facing coordinates are swapped so that the element plugs into the
//! loop form of the Kirchhoff structure.

use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ph_core::{
    gradient_field_check, DiracKernel, GradientLagrange, Hamiltonian, ImplicitRelation,
    LagrangeBlock, PhError, PhSystem, PinSide, Port, PortKind, ResistiveRelation, VectorMap,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("energy function of {0} is not a gradient")]
    NotAGradient(String),
    #[error("map is not accretive: φ·g(φ) < 0 at φ = {witness:?}")]
    NotAccretive { witness: Vec<f64> },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("transistor is not locally passive: {0}")]
    NotLocallyPassive(String),
    #[error("constitutive law cannot be inverted at {0}")]
    NonInvertible(f64),
    #[error(transparent)]
    Ph(#[from] PhError),
}

/// Which Kirchhoff structure the circuit-facing ports plug into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Flows are edge currents, efforts edge voltages.
    Node,
    /// Flows are edge voltages, efforts edge currents.
    Loop,
}

/// Scalar function of one real variable with two derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarFn {
    /// `Σ c_k x^k`.
    Poly(Vec<f64>),
    /// `gain · tanh(x / scale)`.
    Tanh { gain: f64, scale: f64 },
    /// `gain · scale · ln cosh(x / scale)`, an antiderivative of the tanh form.
    LogCosh { gain: f64, scale: f64 },
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl ScalarFn {
    pub fn linear(slope: f64) -> Self {
        ScalarFn::Poly(vec![0.0, slope])
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Poly(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            Self::Tanh { gain, scale } => gain * (x / scale).tanh(),
            Self::LogCosh { gain, scale } => gain * scale * ln_cosh(x / scale),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Poly(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + k as f64 * ck),
            Self::Tanh { gain, scale } => {
                let t = (x / scale).tanh();
                gain / scale * (1.0 - t * t)
            }
            Self::LogCosh { gain, scale } => gain * (x / scale).tanh(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            Self::Poly(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + (k * (k - 1)) as f64 * ck),
            Self::Tanh { gain, scale } => {
                let t = (x / scale).tanh();
                -2.0 * gain / (scale * scale) * t * (1.0 - t * t)
            }
            Self::LogCosh { gain, scale } => {
                let t = (x / scale).tanh();
                gain / scale * (1.0 - t * t)
            }
        }
    }

    /// Solves `derivative(x) = y`.
    ///
    /// Closed forms for single monomials and the log-cosh form; otherwise a safeguarded
    /// Newton iteration on a bracket grown geometrically from zero.
    pub fn invert_derivative(&self, y: f64) -> Result<f64, ComponentError> {
        match self {
            Self::Poly(c) => {
                let nonzero: Vec<usize> = (1..c.len()).filter(|&k| c[k] != 0.0).collect();
                if let [k] = nonzero[..] {
                    let coef = k as f64 * c[k];
                    let p = k - 1;
                    let r = y / coef;
                    if p == 1 {
                        return Ok(r);
                    }
                    if p % 2 == 1 {
                        return Ok(r.signum() * r.abs().powf(1.0 / p as f64));
                    }
                }
                invert_monotone(|x| self.derivative(x), |x| self.second_derivative(x), y)
            }
            Self::LogCosh { gain, scale } => {
                let r = y / gain;
                if r.abs() >= 1.0 {
                    return Err(ComponentError::NonInvertible(y));
                }
                Ok(scale * r.atanh())
            }
            Self::Tanh { .. } => invert_monotone(|x| self.derivative(x), |x| self.second_derivative(x), y),
        }
    }
}

/// Root of `f(x) = y` for a nondecreasing `f`, Newton steps kept inside a sign bracket.
pub fn invert_monotone(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    y: f64,
) -> Result<f64, ComponentError> {
    let g = |x: f64| f(x) - y;
    let g0 = g(0.0);
    if g0 == 0.0 {
        return Ok(0.0);
    }
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut step = 1e-6;
    loop {
        let x = dir * step;
        let gx = g(x);
        if !gx.is_finite() || step > 1e15 {
            return Err(ComponentError::NonInvertible(y));
        }
        if gx.signum() != g0.signum() || gx == 0.0 {
            if dir > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            break;
        }
        if dir > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        step *= 2.0;
    }
    let increasing_at_hi = g(hi) >= 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 || (hi - lo).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            return Ok(x);
        }
        if (gx > 0.0) == increasing_at_hi {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let newton = x - gx / d;
        x = if d != 0.0 && newton > lo.min(hi) && newton < lo.max(hi) { newton } else { 0.5 * (lo + hi) };
        if (gx / d).abs() <= 1e-15 * x.abs().max(1e-300) {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Storage energy of a capacitor (state: charge) or inductor (state: flux).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyFn {
    /// One-port, `H(x) = f(x)`.
    Scalar(ScalarFn),
    /// `H(x) = ½ xᵀ M x`.
    Quadratic { stiffness: DMatrix<f64> },
}

impl EnergyFn {
    /// `H(q) = q² / (2c)`.
    pub fn linear(c: f64) -> Self {
        EnergyFn::Scalar(ScalarFn::Poly(vec![0.0, 0.0, 0.5 / c]))
    }

    pub fn ports(&self) -> usize {
        match self {
            Self::Scalar(_) => 1,
            Self::Quadratic { stiffness } => stiffness.ncols(),
        }
    }

    /// Solves `∇H(x) = y`.
    pub fn inverse_gradient(&self, y: &[f64]) -> Result<Vec<f64>, ComponentError> {
        match self {
            Self::Scalar(f) => Ok(vec![f.invert_derivative(y[0])?]),
            Self::Quadratic { stiffness } => {
                let lu = stiffness.clone().lu();
                lu.solve(&nalgebra::DVector::from_column_slice(y))
                    .map(|x| x.iter().copied().collect())
                    .ok_or(ComponentError::NonInvertible(y[0]))
            }
        }
    }

    /// Jacobian of the inverse gradient at `y`, the inverse Hessian at `x = (∇H)⁻¹(y)`.
    pub fn inverse_gradient_jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>, ComponentError> {
        let x = self.inverse_gradient(y)?;
        self.hessian(&x).try_inverse().ok_or(ComponentError::NonInvertible(y[0]))
    }
}

impl Hamiltonian for EnergyFn {
    fn dim(&self) -> usize {
        self.ports()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        match self {
            Self::Scalar(f) => f.value(x[0]),
            Self::Quadratic { stiffness } => {
                let v = nalgebra::DVector::from_column_slice(x);
                0.5 * v.dot(&(stiffness * &v))
            }
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Scalar(f) => vec![f.derivative(x[0])],
            Self::Quadratic { stiffness } => {
                (stiffness * nalgebra::DVector::from_column_slice(x)).iter().copied().collect()
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Scalar(f) => DMatrix::from_element(1, 1, f.second_derivative(x[0])),
            Self::Quadratic { stiffness } => stiffness.clone(),
        }
    }
}

/// A scalar function used as a one-port resistive map.
#[derive(Debug, Clone)]
pub struct ScalarMap(pub ScalarFn);

impl VectorMap for ScalarMap {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.0.value(x[0])]
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.0.derivative(x[0]))
    }
}

/// Constitutive law of a resistor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResistorLaw {
    /// `i = G u`.
    Linear { conductance: f64 },
    /// `i = g(u)`.
    Conductance(ScalarFn),
    /// `u = r(i)`.
    Resistance(ScalarFn),
}

impl ResistorLaw {
    pub fn conductance_fn(&self) -> Option<ScalarFn> {
        match self {
            Self::Linear { conductance } => Some(ScalarFn::linear(*conductance)),
            Self::Conductance(g) => Some(g.clone()),
            Self::Resistance(_) => None,
        }
    }

    pub fn resistance_fn(&self) -> Option<ScalarFn> {
        match self {
            Self::Linear { conductance } if *conductance != 0.0 => Some(ScalarFn::linear(1.0 / conductance)),
            Self::Resistance(r) => Some(r.clone()),
            _ => None,
        }
    }
}

const EXP_CAP: f64 = 700.0;

/// `eˣ`, continued linearly above `x = 700` so Newton iterates stay finite.
pub fn guarded_exp(x: f64) -> f64 {
    if x > EXP_CAP {
        EXP_CAP.exp() * (1.0 + (x - EXP_CAP))
    } else {
        x.exp()
    }
}

/// Derivative of [`guarded_exp`].
pub fn guarded_exp_derivative(x: f64) -> f64 {
    guarded_exp(x.min(EXP_CAP))
}

/// `guarded_exp(x) − 1` without cancellation near zero.
fn guarded_expm1(x: f64) -> f64 {
    if x > EXP_CAP {
        guarded_exp(x) - 1.0
    } else {
        x.exp_m1()
    }
}

/// Shockley diode `i = a(e^{u/b} − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnDiode {
    pub a: f64,
    pub b: f64,
}

impl Default for PnDiode {
    fn default() -> Self {
        Self { a: 1e-12, b: 0.025 }
    }
}

impl PnDiode {
    /// Regularization standing in for the ideal diode during simulation.
    pub const IDEAL_REGULARIZATION: PnDiode = PnDiode { a: 1e-12, b: 1e-3 };

    pub fn new(a: f64, b: f64) -> Result<Self, ComponentError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(ComponentError::BadParams(format!("diode needs a > 0 and b > 0, got a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }

    pub fn current(&self, u: f64) -> f64 {
        self.a * guarded_expm1(u / self.b)
    }

    pub fn conductance(&self, u: f64) -> f64 {
        self.a / self.b * guarded_exp_derivative(u / self.b)
    }
}

pub fn pn_diode_current(u: f64, a: f64, b: f64) -> Result<f64, ComponentError> {
    Ok(PnDiode::new(a, b)?.current(u))
}

impl VectorMap for PnDiode {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.current(x[0])]
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.conductance(x[0]))
    }
}

/// Exact ideal-diode characteristic `i ≥ 0, u ≤ 0, i·u = 0`.
#[derive(Debug, Clone, Copy)]
pub struct IdealDiode {
    pub role: Role,
}

impl IdealDiode {
    fn current_voltage(&self, f: &[f64], e: &[f64]) -> (f64, f64) {
        match self.role {
            Role::Node => (-f[0], e[0]),
            Role::Loop => (e[0], -f[0]),
        }
    }
}

impl ImplicitRelation for IdealDiode {
    fn dim(&self) -> usize {
        1
    }

    fn contains(&self, f: &[f64], e: &[f64], tol: f64) -> bool {
        let (i, u) = self.current_voltage(f, e);
        i >= -tol && u <= tol && (i * u).abs() <= tol
    }

    fn residual(&self, f: &[f64], e: &[f64]) -> Vec<f64> {
        let (i, u) = self.current_voltage(f, e);
        vec![i.min(-u)]
    }
}

pub fn ideal_diode_relation() -> ResistiveRelation {
    ResistiveRelation::Implicit(Arc::new(IdealDiode { role: Role::Node }))
}

/// Ebers–Moll parameters of an NPN transistor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbersMoll {
    pub i_s: f64,
    pub v_t: f64,
    pub alpha_f: f64,
    pub alpha_r: f64,
}

impl Default for EbersMoll {
    fn default() -> Self {
        Self { i_s: 1e-14, v_t: 0.025, alpha_f: 0.99, alpha_r: 0.5 }
    }
}

impl EbersMoll {
    pub fn validate(&self) -> Result<(), ComponentError> {
        let p = [self.i_s, self.v_t, self.alpha_f, self.alpha_r];
        if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ComponentError::BadParams(format!("transistor parameters must be positive: {self:?}")));
        }
        if !(50.0 / 51.0..=1000.0 / 1001.0).contains(&self.alpha_f)
            || !(0.01..=0.5).contains(&self.alpha_r)
            || !(1e-15..=1e-12).contains(&self.i_s)
        {
            warn!("transistor parameters outside the usual ranges: {self:?}");
        }
        Ok(())
    }

    /// `(i_C, i_E)` at `(u_BC, u_BE)`.
    pub fn currents(&self, u_bc: f64, u_be: f64) -> (f64, f64) {
        let c = guarded_expm1(u_bc / self.v_t);
        let e = guarded_expm1(u_be / self.v_t);
        let i_c = self.i_s * e - self.i_s / self.alpha_r * c;
        let i_e = self.i_s / self.alpha_f * e - self.i_s * c;
        (i_c, i_e)
    }

    /// Secant matrix `A(u)` with `(i_C, −i_E) = A(u)·(u_BC, u_BE)`.
    pub fn secant_matrix(&self, u_bc: f64, u_be: f64) -> DMatrix<f64> {
        let s = |u: f64| {
            if u == 0.0 {
                1.0 / self.v_t
            } else {
                guarded_expm1(u / self.v_t) / u
            }
        };
        let (sc, se) = (s(u_bc), s(u_be));
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -self.i_s / self.alpha_r * sc,
                self.i_s * se,
                self.i_s * sc,
                -self.i_s / self.alpha_f * se,
            ],
        )
    }
}

pub fn ebers_moll(u_bc: f64, u_be: f64, params: &EbersMoll) -> Result<(f64, f64), ComponentError> {
    params.validate()?;
    Ok(params.currents(u_bc, u_be))
}

/// Edge map `(u_BC, u_BE) ↦ (−i_C, i_E)` for edges base→collector and base→emitter.
#[derive(Debug, Clone, Copy)]
pub struct TransistorMap(pub EbersMoll);

impl VectorMap for TransistorMap {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (i_c, i_e) = self.0.currents(x[0], x[1]);
        vec![-i_c, i_e]
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = &self.0;
        let dc = guarded_exp_derivative(x[0] / p.v_t) / p.v_t;
        let de = guarded_exp_derivative(x[1] / p.v_t) / p.v_t;
        DMatrix::from_row_slice(
            2,
            2,
            &[p.i_s / p.alpha_r * dc, -p.i_s * de, -p.i_s * dc, p.i_s / p.alpha_f * de],
        )
    }
}

/// Search settings for [`transistor_passivity_radius`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSearch {
    /// Grid spacing (V).
    pub step: f64,
    /// Radius returned if no failure is found below it (V).
    pub max_radius: f64,
    pub bisection_tol: f64,
}

impl Default for RadiusSearch {
    fn default() -> Self {
        Self { step: 1e-3, max_radius: 1.0, bisection_tol: 1e-9 }
    }
}

fn negative_semidefinite(a: &DMatrix<f64>) -> bool {
    let s = (a + a.transpose()) * 0.5;
    let scale = s.amax();
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    s[(0, 0)] <= 0.0 && s[(1, 1)] <= 0.0 && det >= -1e-12 * scale * scale
}

fn ring_ok(params: &EbersMoll, rho: f64, step: f64) -> bool {
    let k = ((2.0 * rho / step).ceil() as usize).max(1);
    (0..=k).all(|j| {
        let t = -rho + 2.0 * rho * j as f64 / k as f64;
        [(rho, t), (-rho, t), (t, rho), (t, -rho)]
            .iter()
            .all(|&(bc, be)| negative_semidefinite(&params.secant_matrix(bc, be)))
    })
}

/// Largest box radius `ρ` on which the symmetric part of `A(u_BC, u_BE)` stays
/// negative semidefinite at every sampled point.
///
/// Square rings of radius `k·step` are scanned outward; the first failing ring is
/// refined by bisection.
pub fn transistor_passivity_radius(params: &EbersMoll, cfg: &RadiusSearch) -> Result<f64, ComponentError> {
    params.validate()?;
    let a0 = params.secant_matrix(0.0, 0.0);
    let scale = a0.amax();
    let det = a0[(0, 0)] * a0[(1, 1)] - a0[(0, 1)] * a0[(1, 0)];
    if !(a0[(0, 0)] + a0[(1, 1)] < 0.0 && det > 1e-12 * scale * scale) {
        return Err(ComponentError::NotLocallyPassive(format!(
            "A(0,0) is not negative definite for αF·αR = {}",
            params.alpha_f * params.alpha_r
        )));
    }
    let mut good = 0.0;
    let mut k = 1;
    loop {
        let rho = k as f64 * cfg.step;
        if rho > cfg.max_radius {
            return Ok(cfg.max_radius);
        }
        if !ring_ok(params, rho, cfg.step) {
            let mut bad = rho;
            while bad - good > cfg.bisection_tol {
                let mid = 0.5 * (good + bad);
                if ring_ok(params, mid, cfg.step) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            return Ok(good);
        }
        good = rho;
        k += 1;
    }
}

/// Time function driving a source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Dc(f64),
    /// `offset + amplitude · sin(2π·freq·t + phase)`.
    Sin { offset: f64, amplitude: f64, freq: f64, phase: f64 },
}

impl Waveform {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Dc(v) => v,
            Self::Sin { offset, amplitude, freq, phase } => offset + amplitude * (2.0 * PI * freq * t + phase).sin(),
        }
    }

    fn signal(self) -> crate::ph_core::Signal {
        Arc::new(move |t| self.value(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Current,
    Voltage,
    /// A current-drawing load; behaves like a current source.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ComponentKind {
    Capacitor { energy: EnergyFn },
    Inductor { energy: EnergyFn },
    Resistor { law: ResistorLaw },
    IdealDiode,
    PnDiode { params: PnDiode },
    Transformer { ratio: f64 },
    NpnTransistor { params: EbersMoll },
    Source { source: SourceKind, waveform: Waveform },
}

/// Component class used to split the incidence matrix into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentClass {
    Resistive,
    Inductive,
    Capacitive,
    CurrentSource,
    VoltageSource,
}

/// A named circuit element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel {
    pub name: String,
    #[serde(flatten)]
    pub kind: ComponentKind,
}

impl ComponentModel {
    pub fn new(name: impl Into<String>, kind: ComponentKind) -> Self {
        Self { name: name.into(), kind }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            ComponentKind::Capacitor { .. } => "capacitor",
            ComponentKind::Inductor { .. } => "inductor",
            ComponentKind::Resistor { law: ResistorLaw::Resistance(_) } => "resistance",
            ComponentKind::Resistor { .. } => "conductance",
            ComponentKind::IdealDiode => "ideal_diode",
            ComponentKind::PnDiode { .. } => "pn_diode",
            ComponentKind::Transformer { .. } => "transformer",
            ComponentKind::NpnTransistor { .. } => "npn_transistor",
            ComponentKind::Source { source: SourceKind::Current, .. } => "source_current",
            ComponentKind::Source { source: SourceKind::Voltage, .. } => "source_voltage",
            ComponentKind::Source { source: SourceKind::Sink, .. } => "sink",
        }
    }

    /// Number of ports `ℓ_p`, which is also the number of graph edges.
    pub fn ports(&self) -> usize {
        match &self.kind {
            ComponentKind::Capacitor { energy } | ComponentKind::Inductor { energy } => energy.ports(),
            ComponentKind::Transformer { .. } | ComponentKind::NpnTransistor { .. } => 2,
            _ => 1,
        }
    }

    /// Number of terminals `ℓ_t`.
    pub fn terminals(&self) -> usize {
        match &self.kind {
            ComponentKind::Capacitor { energy } | ComponentKind::Inductor { energy } => 2 * energy.ports(),
            ComponentKind::Transformer { .. } => 4,
            ComponentKind::NpnTransistor { .. } => 3,
            _ => 2,
        }
    }

    pub fn class(&self) -> ComponentClass {
        match &self.kind {
            ComponentKind::Capacitor { .. } => ComponentClass::Capacitive,
            ComponentKind::Inductor { .. } => ComponentClass::Inductive,
            ComponentKind::Source { source: SourceKind::Voltage, .. } => ComponentClass::VoltageSource,
            ComponentKind::Source { .. } => ComponentClass::CurrentSource,
            _ => ComponentClass::Resistive,
        }
    }

    /// Resistive edge map `u ↦ i` if the element has one.
    ///
    /// The ideal diode is replaced by its PN regularization.
    pub fn conductance_map(&self) -> Option<Arc<dyn VectorMap>> {
        match &self.kind {
            ComponentKind::Resistor { law } => law.conductance_fn().map(|g| Arc::new(ScalarMap(g)) as _),
            ComponentKind::IdealDiode => Some(Arc::new(PnDiode::IDEAL_REGULARIZATION)),
            ComponentKind::PnDiode { params } => Some(Arc::new(*params)),
            ComponentKind::NpnTransistor { params } => Some(Arc::new(TransistorMap(*params))),
            _ => None,
        }
    }

    /// Resistive edge map `i ↦ u` if the element has one.
    pub fn resistance_map(&self) -> Option<Arc<dyn VectorMap>> {
        match &self.kind {
            ComponentKind::Resistor { law } => law.resistance_fn().map(|r| Arc::new(ScalarMap(r)) as _),
            _ => None,
        }
    }

    /// Exact linear relation `F·i + E·u = 0` on the edge currents and voltages.
    pub fn linear_relation(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        match &self.kind {
            ComponentKind::Transformer { ratio } => Some(transformer_relation(*ratio)),
            _ => None,
        }
    }

    pub fn source(&self) -> Option<(SourceKind, Waveform)> {
        match &self.kind {
            ComponentKind::Source { source, waveform } => Some((*source, *waveform)),
            _ => None,
        }
    }

    pub fn energy(&self) -> Option<&EnergyFn> {
        match &self.kind {
            ComponentKind::Capacitor { energy } | ComponentKind::Inductor { energy } => Some(energy),
            _ => None,
        }
    }

    /// Checks invariants of the parameters.
    pub fn validate(&self) -> Result<(), ComponentError> {
        match &self.kind {
            ComponentKind::Capacitor { energy } | ComponentKind::Inductor { energy } => check_energy(energy),
            ComponentKind::Resistor { law } => {
                if let ResistorLaw::Linear { conductance } = law {
                    if !(conductance.is_finite() && *conductance >= 0.0) {
                        return Err(ComponentError::BadParams(format!("conductance {conductance}")));
                    }
                }
                match (law.conductance_fn(), law.resistance_fn()) {
                    (Some(g), _) => check_accretive(&ScalarMap(g)),
                    (None, Some(r)) => check_accretive(&ScalarMap(r)),
                    (None, None) => Ok(()),
                }
            }
            ComponentKind::PnDiode { params } => PnDiode::new(params.a, params.b).map(|_| ()),
            ComponentKind::Transformer { ratio } if !ratio.is_finite() => {
                Err(ComponentError::BadParams(format!("transformer ratio {ratio}")))
            }
            ComponentKind::NpnTransistor { params } => params.validate(),
            _ => Ok(()),
        }
    }
}

/// Edge relation `T·i₁ + i₂ = 0`, `u₁ − T·u₂ = 0` as `(F, E)` with `F·i + E·u = 0`.
pub fn transformer_relation(t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[t, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -t]),
    )
}

fn energy_samples(dim: usize) -> Vec<Vec<f64>> {
    [0.3, -1.2, 2.0, 0.05]
        .iter()
        .map(|&s| (0..dim).map(|k| s * (1.0 + 0.37 * k as f64)).collect())
        .collect()
}

fn check_energy(energy: &EnergyFn) -> Result<(), ComponentError> {
    if let EnergyFn::Quadratic { stiffness } = energy {
        if stiffness.nrows() != stiffness.ncols() || stiffness.ncols() == 0 {
            return Err(ComponentError::BadParams(format!("stiffness matrix is {:?}", stiffness.shape())));
        }
    }
    let grad = |x: &[f64]| energy.gradient(x);
    match gradient_field_check(&grad, &energy_samples(energy.ports()), 1e-6) {
        Ok(true) => Ok(()),
        Ok(false) => Err(ComponentError::NotAGradient(format!("{energy:?}"))),
        Err(e) => Err(e.into()),
    }
}

fn accretivity_samples(dim: usize) -> Vec<Vec<f64>> {
    let magnitudes = [1.0, 0.5, 0.1, 2.0, 10.0];
    let mut out = Vec::new();
    for &m in &magnitudes {
        for s in [1.0, -1.0] {
            for k in 0..dim {
                let mut v = vec![0.0; dim];
                v[k] = s * m;
                out.push(v);
            }
            if dim > 1 {
                out.push(vec![s * m; dim]);
            }
        }
    }
    out
}

/// Samples `φ·g(φ) ≥ 0` on a fixed set of points; the first violation is the witness.
pub fn check_accretive(g: &dyn VectorMap) -> Result<(), ComponentError> {
    for x in accretivity_samples(g.dim()) {
        let y = g.eval(&x);
        let p: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        if p < 0.0 {
            return Err(ComponentError::NotAccretive { witness: x });
        }
    }
    Ok(())
}

/// Kernel of `{(−i, i, u, u)}` on `2ℓ_p` coordinates: `K = [[I, I], [0, 0]]`, `L = [[0, 0], [I, −I]]`.
pub fn standard_kernel(lp: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = 2 * lp;
    let mut k = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..lp {
        k[(j, j)] = 1.0;
        k[(j, lp + j)] = 1.0;
        l[(lp + j, j)] = 1.0;
        l[(lp + j, lp + j)] = -1.0;
    }
    (k, l)
}

/// Kernel of `{(−u, i, i, u)}`: `K = I`, `L = [[0, I], [−I, 0]]`.
pub fn gyrator_kernel(lp: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = 2 * lp;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..lp {
        l[(j, lp + j)] = 1.0;
        l[(lp + j, j)] = -1.0;
    }
    (DMatrix::identity(n, n), l)
}

pub fn standard_dirac(lp: usize) -> Result<DiracKernel, ComponentError> {
    if lp == 0 {
        return Err(ComponentError::BadParams("a component needs at least one port".into()));
    }
    let (k, l) = standard_kernel(lp);
    let layout = (0..lp)
        .map(|j| Port::new(PortKind::External, format!("in{j}")))
        .chain((0..lp).map(|j| Port::new(PortKind::External, format!("out{j}"))))
        .collect();
    Ok(DiracKernel::new(k, l, layout)?)
}

fn element(
    (k, l): (DMatrix<f64>, DMatrix<f64>),
    internal: PortKind,
    internal_label: &str,
    port_kind: PortKind,
    lagrange: Vec<LagrangeBlock>,
    resistive: Vec<ResistiveRelation>,
) -> Result<PhSystem, ComponentError> {
    let lp = k.ncols() / 2;
    let label = |base: &str, j: usize| if lp == 1 { base.to_string() } else { format!("{base}{}", j + 1) };
    let layout = (0..lp)
        .map(|j| Port::new(internal, label(internal_label, j)))
        .chain((0..lp).map(|j| Port::new(port_kind, label("port", j))))
        .collect();
    Ok(PhSystem::new(DiracKernel::new(k, l, layout)?, lagrange, resistive)?)
}

fn storage(energy: &EnergyFn, gyrator: bool, label: &str, port_kind: PortKind) -> Result<PhSystem, ComponentError> {
    check_energy(energy)?;
    let lp = energy.ports();
    let kernel = if gyrator { gyrator_kernel(lp) } else { standard_kernel(lp) };
    let lagrange = vec![LagrangeBlock::Gradient(GradientLagrange::new(Arc::new(energy.clone())))];
    element(kernel, PortKind::Storage, label, port_kind, lagrange, vec![])
}

/// Capacitor with charge state and `u = ∇H(q)`.
pub fn capacitor_ph(h: &EnergyFn) -> Result<PhSystem, ComponentError> {
    storage(h, false, "q", PortKind::External)
}

/// Inductor with flux state and `i = ∇H(ψ)`.
pub fn inductor_ph(h: &EnergyFn) -> Result<PhSystem, ComponentError> {
    storage(h, true, "psi", PortKind::External)
}

/// Resistor `i = g(u)`.
pub fn conductance_ph(g: Arc<dyn VectorMap>) -> Result<PhSystem, ComponentError> {
    check_accretive(g.as_ref())?;
    let lp = g.dim();
    element(standard_kernel(lp), PortKind::Resistive, "R", PortKind::External, vec![], vec![ResistiveRelation::Conductance(g)])
}

/// Resistor `u = r(i)`.
pub fn resistance_ph(r: Arc<dyn VectorMap>) -> Result<PhSystem, ComponentError> {
    check_accretive(r.as_ref())?;
    let lp = r.dim();
    element(standard_kernel(lp), PortKind::Resistive, "R", PortKind::External, vec![], vec![ResistiveRelation::Resistance(r)])
}

pub fn transformer_ph(t_ratio: f64) -> Result<PhSystem, ComponentError> {
    let (flow, effort) = transformer_relation(t_ratio);
    // f_R = −i, e_R = u
    let relation = ResistiveRelation::Linear { flow: -flow, effort };
    element(standard_kernel(2), PortKind::Resistive, "R", PortKind::External, vec![], vec![relation])
}

/// Source with its prescribed variable pinned to the waveform.
pub fn source_ph(kind: SourceKind, waveform: Waveform) -> Result<PhSystem, ComponentError> {
    let sys = element(standard_kernel(1), PortKind::External, "S", PortKind::External, vec![], vec![])?;
    Ok(pin_source(sys, kind, waveform, Role::Node)?)
}

fn pin_source(sys: PhSystem, kind: SourceKind, waveform: Waveform, role: Role) -> Result<PhSystem, PhError> {
    // coordinate 0 is the source's own port: f = −i, e = u (node) or f = −u, e = i (loop)
    let (side, sign) = match (kind, role) {
        (SourceKind::Voltage, Role::Node) => (PinSide::Effort, 1.0),
        (SourceKind::Voltage, Role::Loop) => (PinSide::Flow, -1.0),
        (_, Role::Node) => (PinSide::Flow, -1.0),
        (_, Role::Loop) => (PinSide::Effort, 1.0),
    };
    sys.with_pin(0, side, sign, waveform.signal())
}

/// The component as a pH system whose circuit-facing ports are link ports.
///
/// With `regularize` the ideal diode uses its PN stand-in instead of the exact
/// complementarity relation.
pub fn to_ph_with(component: &ComponentModel, role: Role, regularize: bool) -> Result<PhSystem, ComponentError> {
    component.validate()?;
    let swap = role == Role::Loop;
    let link = PortKind::Link;
    let lp = component.ports();
    let resistive_kernel = || standard_kernel(lp);
    let map_relation = |conductance: Option<Arc<dyn VectorMap>>, resistance: Option<Arc<dyn VectorMap>>| {
        match (conductance, resistance, swap) {
            (Some(g), _, false) => ResistiveRelation::Conductance(g),
            (Some(g), _, true) => ResistiveRelation::Resistance(g),
            (None, Some(r), false) => ResistiveRelation::Resistance(r),
            (None, Some(r), true) => ResistiveRelation::Conductance(r),
            (None, None, _) => unreachable!("resistor without a law"),
        }
    };
    let sys = match &component.kind {
        ComponentKind::Capacitor { energy } => storage(energy, swap, "q", link)?,
        ComponentKind::Inductor { energy } => storage(energy, !swap, "psi", link)?,
        ComponentKind::Resistor { .. } | ComponentKind::PnDiode { .. } | ComponentKind::NpnTransistor { .. } => {
            let rel = map_relation(component.conductance_map(), component.resistance_map());
            element(resistive_kernel(), PortKind::Resistive, "R", link, vec![], vec![rel])?
        }
        ComponentKind::IdealDiode => {
            let rel = if regularize {
                map_relation(component.conductance_map(), None)
            } else {
                ResistiveRelation::Implicit(Arc::new(IdealDiode { role }))
            };
            element(resistive_kernel(), PortKind::Resistive, "R", link, vec![], vec![rel])?
        }
        ComponentKind::Transformer { ratio } => {
            let (f_i, e_u) = transformer_relation(*ratio);
            // node: f = −i, e = u; loop: f = −u, e = i
            let relation = if swap {
                ResistiveRelation::Linear { flow: -e_u, effort: f_i }
            } else {
                ResistiveRelation::Linear { flow: -f_i, effort: e_u }
            };
            element(resistive_kernel(), PortKind::Resistive, "R", link, vec![], vec![relation])?
        }
        ComponentKind::Source { source, waveform } => {
            let sys = element(resistive_kernel(), PortKind::External, "S", link, vec![], vec![])?;
            pin_source(sys, *source, *waveform, role)?
        }
    };
    Ok(prefix_labels(sys, &component.name))
}

pub fn to_ph(component: &ComponentModel, role: Role) -> Result<PhSystem, ComponentError> {
    to_ph_with(component, role, false)
}

fn prefix_labels(sys: PhSystem, name: &str) -> PhSystem {
    sys.map_labels(|l| format!("{name}.{l}"))
}
