//! Finite-dimensional port-Hamiltonian algebra.
//!
//! Dirac structures are stored in kernel form `K f + L e = 0`. Lagrange parts are
//! either subspaces `Sᵀx = Pᵀe` or graphs of Hamiltonian gradients, and resistive
//! parts are maps or relations on `(f_R, e_R)`. Interconnection only ever touches
//! the linear kernel; the nonlinear parts are carried along unchanged.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-10;
const GAP_RATIO: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ambiguous numerical rank {rank}: singular value ratio {ratio:.3e}")]
    DegenerateSpan { rank: usize, ratio: f64 },
    #[error("link dimensions differ: {0} vs {1}")]
    LinkMismatch(usize, usize),
    #[error("not a Dirac structure: {0}")]
    NotDirac(String),
    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    Storage,
    Resistive,
    External,
    Link,
}

/// One flow/effort coordinate pair of a Dirac structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub kind: PortKind,
    pub label: String,
}

impl Port {
    pub fn new(kind: PortKind, label: impl Into<String>) -> Self {
        Self { kind, label: label.into() }
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&v| v > tol * max).count(),
        _ => 0,
    }
}

fn gap_checked_rank(s: &[f64], tol: f64) -> Result<usize, PhError> {
    let Some(&max) = s.first() else { return Ok(0) };
    if max == 0.0 {
        return Ok(0);
    }
    let rank = s.iter().filter(|&&v| v > tol * max).count();
    if rank > 0 && rank < s.len() {
        let ratio = s[rank - 1] / s[rank];
        if ratio < GAP_RATIO {
            return Err(PhError::DegenerateSpan { rank, ratio });
        }
    }
    Ok(rank)
}

/// Orthonormal basis (as columns) of the right null space of `m`.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, PhError> {
    let c = m.ncols();
    if c == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // zero rows keep the row space but make the SVD return a full set of right vectors
    let r = m.nrows().max(c);
    let mut padded = DMatrix::zeros(r, c);
    padded.view_mut((0, 0), (m.nrows(), c)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rank = gap_checked_rank(&sorted, tol)?;
    let mut basis = DMatrix::zeros(c, c - rank);
    for (j, &i) in order[rank..].iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    Ok(basis)
}

/// Reduced row echelon form with partial pivoting; entries within rounding of an
/// integer are snapped to it so integer structures come out exact.
pub fn rref(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut a = m.clone();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut row = 0;
    for col in 0..a.ncols() {
        if row == a.nrows() {
            break;
        }
        let (p, pv) = (row..a.nrows())
            .map(|r| (r, a[(r, col)].abs()))
            .fold((row, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pv <= tol * scale {
            continue;
        }
        a.swap_rows(row, p);
        let pivot = a[(row, col)];
        a.row_mut(row).scale_mut(1.0 / pivot);
        for r in 0..a.nrows() {
            if r != row {
                let factor = a[(r, col)];
                if factor != 0.0 {
                    for c in 0..a.ncols() {
                        let v = a[(row, c)];
                        a[(r, c)] -= factor * v;
                    }
                }
            }
        }
        row += 1;
    }
    a.apply(|x| {
        let n = x.round();
        if (*x - n).abs() <= 1e-12 * n.abs().max(1.0) {
            *x = n;
        }
    });
    a
}

/// Kernel representation `(K, L)` of a linear Dirac structure with its port layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "KernelDoc", try_from = "KernelDoc")]
pub struct DiracKernel {
    k: DMatrix<f64>,
    l: DMatrix<f64>,
    layout: Vec<Port>,
}

#[derive(Serialize, Deserialize)]
struct KernelDoc {
    n: usize,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    layout: Vec<Port>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>, PhError> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PhError::ShapeMismatch(format!("expected rows of length {cols}")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

impl From<DiracKernel> for KernelDoc {
    fn from(d: DiracKernel) -> Self {
        KernelDoc { n: d.dim(), k: matrix_rows(&d.k), l: matrix_rows(&d.l), layout: d.layout }
    }
}

impl TryFrom<KernelDoc> for DiracKernel {
    type Error = PhError;

    fn try_from(doc: KernelDoc) -> Result<Self, PhError> {
        let k = matrix_from_rows(&doc.k, doc.n)?;
        let l = matrix_from_rows(&doc.l, doc.n)?;
        DiracKernel::new(k, l, doc.layout)
    }
}

impl DiracKernel {
    /// Validates shapes and the Dirac property at [`DEFAULT_TOL`].
    pub fn new(k: DMatrix<f64>, l: DMatrix<f64>, layout: Vec<Port>) -> Result<Self, PhError> {
        let n = layout.len();
        if k.shape() != (n, n) || l.shape() != (n, n) {
            return Err(PhError::ShapeMismatch(format!(
                "K is {:?}, L is {:?}, layout has {n} ports",
                k.shape(),
                l.shape()
            )));
        }
        if !is_dirac(&k, &l, DEFAULT_TOL)? {
            return Err(PhError::NotDirac("KLᵀ + LKᵀ ≠ 0 or [K L] rank deficient".into()));
        }
        Ok(Self { k, l, layout })
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn layout(&self) -> &[Port] {
        &self.layout
    }

    /// Orthonormal basis of the subspace, as columns of stacked `(f, e)` vectors.
    pub fn basis(&self) -> DMatrix<f64> {
        let kl = hstack(&self.k, &self.l);
        null_space(&kl, DEFAULT_TOL).expect("validated kernels have a crisp rank")
    }

    /// Mutual containment of the two subspaces (layouts are not compared).
    pub fn same_subspace(&self, other: &DiracKernel, tol: f64) -> bool {
        self.dim() == other.dim() && contains_span(self, &other.basis(), tol) && contains_span(other, &self.basis(), tol)
    }

    /// Applies the same coordinate permutation to flows and efforts.
    pub fn permuted(&self, order: &[usize]) -> DiracKernel {
        let k = self.k.select_columns(order);
        let l = self.l.select_columns(order);
        let layout = order.iter().map(|&i| self.layout[i].clone()).collect();
        DiracKernel { k, l, layout }
    }

    fn with_layout(&self, layout: Vec<Port>) -> DiracKernel {
        DiracKernel { k: self.k.clone(), l: self.l.clone(), layout }
    }
}

fn contains_span(d: &DiracKernel, span: &DMatrix<f64>, tol: f64) -> bool {
    let n = d.dim();
    (0..span.ncols()).all(|j| {
        let col = span.column(j);
        let f = col.rows(0, n).clone_owned();
        let e = col.rows(n, n).clone_owned();
        dirac_contains(d, &f, &e, tol).unwrap_or(false)
    })
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    m
}

/// True iff `[K L]` has numerical rank `n` and `‖K̂L̂ᵀ + L̂K̂ᵀ‖_max ≤ tol`, where
/// `[K̂ L̂]` is an orthonormal basis of the row space of `[K L]`.
///
/// The orthonormal basis makes the test independent of how the rows are scaled.
/// `K` and `L` must share a shape with `n` columns; a row count other than `n`
/// (as produced by [`kernel_from_span`] on a subspace of the wrong dimension) gives `false`.
pub fn is_dirac(k: &DMatrix<f64>, l: &DMatrix<f64>, tol: f64) -> Result<bool, PhError> {
    if k.shape() != l.shape() {
        return Err(PhError::ShapeMismatch(format!("K is {:?}, L is {:?}", k.shape(), l.shape())));
    }
    let n = k.ncols();
    if k.nrows() != n {
        return Ok(false);
    }
    if n == 0 {
        return Ok(true);
    }
    let svd = hstack(k, l).svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let max = svd.singular_values.max();
    let rows: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol * max).collect();
    if max <= 0.0 || rows.len() != n {
        return Ok(false);
    }
    let q = v_t.select_rows(&rows);
    let (kq, lq) = (q.columns(0, n), q.columns(n, n));
    let sym = kq * lq.transpose() + lq * kq.transpose();
    Ok(sym.amax() <= tol)
}

/// True iff `‖Kf + Le‖∞ ≤ tol·(1 + ‖f‖∞ + ‖e‖∞)`.
pub fn dirac_contains(
    d: &DiracKernel,
    f: &DVector<f64>,
    e: &DVector<f64>,
    tol: f64,
) -> Result<bool, PhError> {
    let n = d.dim();
    if f.len() != n || e.len() != n {
        return Err(PhError::ShapeMismatch(format!(
            "structure has dimension {n}, got f of {} and e of {}",
            f.len(),
            e.len()
        )));
    }
    let r = &d.k * f + &d.l * e;
    Ok(r.amax() <= tol * (1.0 + f.amax() + e.amax()))
}

/// Kernel matrices `(K, L)` whose null space is the span of the given `(f, e)` vectors.
///
/// The returned matrices have `2n − rank(span)` rows, brought to reduced row echelon
/// form. They describe a Dirac structure only if that count equals `n`; check with
/// [`is_dirac`].
pub fn kernel_from_span(
    n: usize,
    basis: &[DVector<f64>],
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), PhError> {
    if let Some(v) = basis.iter().find(|v| v.len() != 2 * n) {
        return Err(PhError::ShapeMismatch(format!("basis vector of length {} in ℝ^{}", v.len(), 2 * n)));
    }
    let span = DMatrix::from_fn(2 * n, basis.len(), |r, c| basis[c][r]);
    kernel_from_span_matrix(n, &span, tol)
}

fn kernel_from_span_matrix(
    n: usize,
    span: &DMatrix<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), PhError> {
    let annihilator = if span.ncols() == 0 {
        DMatrix::identity(2 * n, 2 * n)
    } else {
        null_space(&span.transpose(), tol)?
    };
    let rows = rref(&annihilator.transpose(), tol);
    let k = rows.columns(0, n).clone_owned();
    let l = rows.columns(n, n).clone_owned();
    Ok((k, l))
}

/// Lagrange subspace `{(x, e) : Sᵀx = Pᵀe}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LagrangeDoc", try_from = "LagrangeDoc")]
pub struct LinearLagrange {
    s: DMatrix<f64>,
    p: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct LagrangeDoc {
    n: usize,
    #[serde(rename = "S")]
    s: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
}

impl From<LinearLagrange> for LagrangeDoc {
    fn from(g: LinearLagrange) -> Self {
        LagrangeDoc { n: g.dim(), s: matrix_rows(&g.s), p: matrix_rows(&g.p) }
    }
}

impl TryFrom<LagrangeDoc> for LinearLagrange {
    type Error = PhError;

    fn try_from(doc: LagrangeDoc) -> Result<Self, PhError> {
        LinearLagrange::new(matrix_from_rows(&doc.s, doc.n)?, matrix_from_rows(&doc.p, doc.n)?)
    }
}

impl LinearLagrange {
    pub fn new(s: DMatrix<f64>, p: DMatrix<f64>) -> Result<Self, PhError> {
        if !is_linear_lagrange(&s, &p, DEFAULT_TOL)? {
            return Err(PhError::NotDirac("SᵀP not symmetric or [Sᵀ Pᵀ] rank deficient".into()));
        }
        Ok(Self { s, p })
    }

    /// The subspace `{x = 0}`.
    pub fn zero_state(n: usize) -> Self {
        Self { s: DMatrix::identity(n, n), p: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
}

pub fn is_linear_lagrange(s: &DMatrix<f64>, p: &DMatrix<f64>, tol: f64) -> Result<bool, PhError> {
    if s.shape() != p.shape() || s.nrows() != s.ncols() {
        return Err(PhError::ShapeMismatch(format!("S is {:?}, P is {:?}", s.shape(), p.shape())));
    }
    let sym = s.transpose() * p - p.transpose() * s;
    if sym.amax() > tol {
        return Ok(false);
    }
    Ok(numerical_rank(&hstack(&s.transpose(), &p.transpose()), tol) == s.ncols())
}

/// Hamiltonian energy function of a storage block.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// Stored energy (J).
    fn energy(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(&|y: &[f64]| self.gradient(y), x)
    }
}

/// Vector-valued constitutive map with an optional analytic Jacobian.
pub trait VectorMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(&|y: &[f64]| self.eval(y), x)
    }
}

/// Central-difference step used throughout.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Central finite-difference Jacobian.
pub fn fd_jacobian(q: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let m = q(x).len();
    let mut j = DMatrix::zeros(m, n);
    let mut y = x.to_vec();
    for c in 0..n {
        let h = fd_step(x[c]);
        y[c] = x[c] + h;
        let plus = q(&y);
        y[c] = x[c] - h;
        let minus = q(&y);
        y[c] = x[c];
        for r in 0..m {
            j[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    j
}

/// Gradient-graph Lagrange submanifold `{(x, ∇H(x))}`.
#[derive(Debug, Clone)]
pub struct GradientLagrange {
    pub hamiltonian: Arc<dyn Hamiltonian>,
}

impl GradientLagrange {
    pub fn new(hamiltonian: Arc<dyn Hamiltonian>) -> Self {
        Self { hamiltonian }
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Compares central differences of the energy with the stored gradient.
    pub fn gradient_matches_energy(&self, samples: &[Vec<f64>], tol: f64) -> bool {
        let h = &self.hamiltonian;
        samples.iter().all(|x| {
            let g = h.gradient(x);
            let mut y = x.clone();
            (0..x.len()).all(|i| {
                let step = fd_step(x[i]);
                y[i] = x[i] + step;
                let plus = h.energy(&y);
                y[i] = x[i] - step;
                let minus = h.energy(&y);
                y[i] = x[i];
                let d = (plus - minus) / (2.0 * step);
                (d - g[i]).abs() <= tol * (1.0 + g[i].abs())
            })
        })
    }
}

/// True iff the finite-difference Jacobian of `q` is symmetric at every sample.
pub fn gradient_field_check(
    q: &dyn Fn(&[f64]) -> Vec<f64>,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<bool, PhError> {
    for x in samples {
        let j = fd_jacobian(q, x);
        if j.nrows() != j.ncols() {
            return Err(PhError::ShapeMismatch(format!("map ℝ^{} → ℝ^{}", j.ncols(), j.nrows())));
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(PhError::EvaluationFailure(format!("non-finite Jacobian at {x:?}")));
        }
        let scale = 1.0 + j.amax();
        if (&j - j.transpose()).amax() > tol * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Relation given only implicitly, by a membership test and a residual.
pub trait ImplicitRelation: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn contains(&self, f: &[f64], e: &[f64], tol: f64) -> bool;
    /// Vanishes exactly on members.
    fn residual(&self, f: &[f64], e: &[f64]) -> Vec<f64>;
}

/// A resistive relation on `(f_R, e_R)`.
#[derive(Debug, Clone)]
pub enum ResistiveRelation {
    /// `f = −g(e)`.
    Conductance(Arc<dyn VectorMap>),
    /// `e = r(−f)`.
    Resistance(Arc<dyn VectorMap>),
    /// `F·f + E·e = 0`.
    Linear { flow: DMatrix<f64>, effort: DMatrix<f64> },
    Implicit(Arc<dyn ImplicitRelation>),
}

impl ResistiveRelation {
    pub fn dim(&self) -> usize {
        match self {
            Self::Conductance(g) => g.dim(),
            Self::Resistance(r) => r.dim(),
            Self::Linear { flow, .. } => flow.ncols(),
            Self::Implicit(rel) => rel.dim(),
        }
    }

    pub fn residual(&self, f: &[f64], e: &[f64]) -> Vec<f64> {
        match self {
            Self::Conductance(g) => g.eval(e).iter().zip(f).map(|(gi, fi)| fi + gi).collect(),
            Self::Resistance(r) => {
                let minus_f: Vec<f64> = f.iter().map(|v| -v).collect();
                r.eval(&minus_f).iter().zip(e).map(|(ri, ei)| ei - ri).collect()
            }
            Self::Linear { flow, effort } => {
                let r = flow * DVector::from_column_slice(f) + effort * DVector::from_column_slice(e);
                r.iter().copied().collect()
            }
            Self::Implicit(rel) => rel.residual(f, e),
        }
    }

    /// A member of the relation built from its natural input.
    ///
    /// Conductance: the effort. Resistance: the current `−f`. Linear: coordinates on
    /// an orthonormal basis of the relation. Implicit: the pair `(f, e)` itself.
    pub fn pair_from_input(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Conductance(g) => (g.eval(input).iter().map(|v| -v).collect(), input.to_vec()),
            Self::Resistance(r) => (input.iter().map(|v| -v).collect(), r.eval(input)),
            Self::Linear { flow, effort } => {
                let n = flow.ncols();
                let basis = null_space(&hstack(flow, effort), DEFAULT_TOL).expect("crisp relation");
                let used = basis.ncols().min(input.len());
                let w = basis.columns(0, used) * DVector::from_column_slice(&input[..used]);
                (w.rows(0, n).iter().copied().collect(), w.rows(n, n).iter().copied().collect())
            }
            Self::Implicit(rel) => {
                let n = rel.dim();
                (input[..n].to_vec(), input[n..2 * n].to_vec())
            }
        }
    }

    pub fn contains(&self, f: &[f64], e: &[f64], tol: f64) -> bool {
        match self {
            Self::Implicit(rel) => rel.contains(f, e, tol),
            _ => {
                let scale = 1.0 + f.iter().chain(e).fold(0.0f64, |m, v| m.max(v.abs()));
                self.residual(f, e).iter().all(|r| r.abs() <= tol * scale)
            }
        }
    }
}

/// True iff `e_Rᵀ f_R ≤ tol` on every sample (see [`ResistiveRelation::pair_from_input`]).
pub fn resistive_check(r: &ResistiveRelation, samples: &[Vec<f64>], tol: f64) -> bool {
    samples.iter().all(|s| {
        let (f, e) = r.pair_from_input(s);
        let power: f64 = f.iter().zip(&e).map(|(a, b)| a * b).sum();
        r.contains(&f, &e, 1e-9) && power <= tol
    })
}

#[derive(Debug, Clone)]
pub enum LagrangeBlock {
    Linear(LinearLagrange),
    Gradient(GradientLagrange),
}

impl LagrangeBlock {
    pub fn dim(&self) -> usize {
        match self {
            Self::Linear(l) => l.dim(),
            Self::Gradient(g) => g.dim(),
        }
    }

    pub fn residual(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear(l) => {
                let r = l.s.transpose() * DVector::from_column_slice(x)
                    - l.p.transpose() * DVector::from_column_slice(e);
                r.iter().copied().collect()
            }
            Self::Gradient(g) => {
                g.hamiltonian.gradient(x).iter().zip(e).map(|(gi, ei)| ei - gi).collect()
            }
        }
    }
}

/// Which side of an external port a pin prescribes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinSide {
    Flow,
    Effort,
}

pub type Signal = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Constraint `sign · (flow or effort of coordinate) = signal(t)` on an external port.
#[derive(Clone)]
pub struct Pin {
    pub coord: usize,
    pub side: PinSide,
    pub sign: f64,
    pub signal: Signal,
}

impl fmt::Debug for Pin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pin")
            .field("coord", &self.coord)
            .field("side", &self.side)
            .field("sign", &self.sign)
            .finish_non_exhaustive()
    }
}

/// Port dimensions `(n_L, n_R, n_P, n_link)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDims {
    pub storage: usize,
    pub resistive: usize,
    pub external: usize,
    pub link: usize,
}

fn port_dims(layout: &[Port]) -> PortDims {
    let count = |k| layout.iter().filter(|p| p.kind == k).count();
    PortDims {
        storage: count(PortKind::Storage),
        resistive: count(PortKind::Resistive),
        external: count(PortKind::External),
        link: count(PortKind::Link),
    }
}

/// Stable ordering of coordinates: storage, resistive, external, link.
fn canonical_order(layout: &[Port]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..layout.len()).collect();
    order.sort_by_key(|&i| layout[i].kind);
    order
}

/// A port-Hamiltonian system `(𝒟, 𝓛, 𝓡)` with optional pinned external ports.
#[derive(Debug, Clone)]
pub struct PhSystem {
    dirac: DiracKernel,
    lagrange: Vec<LagrangeBlock>,
    resistive: Vec<ResistiveRelation>,
    pins: Vec<Pin>,
}

impl PhSystem {
    /// Coordinates are reordered to storage, resistive, external, link.
    pub fn new(
        dirac: DiracKernel,
        lagrange: Vec<LagrangeBlock>,
        resistive: Vec<ResistiveRelation>,
    ) -> Result<Self, PhError> {
        let order = canonical_order(dirac.layout());
        let dirac = dirac.permuted(&order);
        let dims = port_dims(dirac.layout());
        let n_l: usize = lagrange.iter().map(LagrangeBlock::dim).sum();
        let n_r: usize = resistive.iter().map(ResistiveRelation::dim).sum();
        if n_l != dims.storage || n_r != dims.resistive {
            return Err(PhError::ShapeMismatch(format!(
                "Lagrange part has {n_l} and resistive part {n_r} coordinates, layout has {} and {}",
                dims.storage, dims.resistive
            )));
        }
        Ok(Self { dirac, lagrange, resistive, pins: Vec::new() })
    }

    /// Pins coordinate `coord` (an external port) to `sign·side = signal(t)`.
    pub fn with_pin(mut self, coord: usize, side: PinSide, sign: f64, signal: Signal) -> Result<Self, PhError> {
        if self.dirac.layout().get(coord).map(|p| p.kind) != Some(PortKind::External) {
            return Err(PhError::ShapeMismatch(format!("coordinate {coord} is not an external port")));
        }
        self.pins.push(Pin { coord, side, sign, signal });
        Ok(self)
    }

    /// The trivial system of dimension 0.
    pub fn empty() -> Self {
        let dirac = DiracKernel { k: DMatrix::zeros(0, 0), l: DMatrix::zeros(0, 0), layout: Vec::new() };
        Self { dirac, lagrange: Vec::new(), resistive: Vec::new(), pins: Vec::new() }
    }

    pub fn dirac(&self) -> &DiracKernel {
        &self.dirac
    }

    pub fn lagrange(&self) -> &[LagrangeBlock] {
        &self.lagrange
    }

    pub fn resistive(&self) -> &[ResistiveRelation] {
        &self.resistive
    }

    pub fn pins(&self) -> &[Pin] {
        &self.pins
    }

    pub fn dims(&self) -> PortDims {
        port_dims(self.dirac.layout())
    }

    /// Relabels every coordinate of kind `from` as `to`, keeping labels.
    pub fn relabel(&self, from: PortKind, to: PortKind) -> PhSystem {
        let layout: Vec<Port> = self
            .dirac
            .layout()
            .iter()
            .map(|p| if p.kind == from { Port::new(to, p.label.clone()) } else { p.clone() })
            .collect();
        let relabelled = self.dirac.with_layout(layout);
        let order = canonical_order(relabelled.layout());
        let mut position = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let pins = self
            .pins
            .iter()
            .filter(|p| relabelled.layout()[p.coord].kind == PortKind::External)
            .map(|p| Pin { coord: position[p.coord], ..p.clone() })
            .collect();
        PhSystem {
            dirac: relabelled.permuted(&order),
            lagrange: self.lagrange.clone(),
            resistive: self.resistive.clone(),
            pins,
        }
    }

    pub fn map_labels(mut self, f: impl Fn(&str) -> String) -> PhSystem {
        for p in &mut self.dirac.layout {
            p.label = f(&p.label);
        }
        self
    }

    /// Length of the `z` vector expected by [`ph_residual`].
    pub fn z_len(&self) -> usize {
        let d = self.dims();
        d.storage + 2 * (d.resistive + d.external + d.link)
    }

    /// Length of the residual returned by [`ph_residual`].
    pub fn residual_len(&self) -> usize {
        let d = self.dims();
        self.dirac.dim() + d.storage + d.resistive + self.pins.len()
    }
}

/// Cartesian product; coordinates grouped by kind, each group in declaration order.
pub fn product(systems: &[PhSystem]) -> PhSystem {
    let n: usize = systems.iter().map(|s| s.dirac.dim()).sum();
    let mut k = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    let mut layout = Vec::with_capacity(n);
    let mut pins = Vec::new();
    let mut off = 0;
    for s in systems {
        let d = s.dirac.dim();
        k.view_mut((off, off), (d, d)).copy_from(s.dirac.k());
        l.view_mut((off, off), (d, d)).copy_from(s.dirac.l());
        layout.extend_from_slice(s.dirac.layout());
        pins.extend(s.pins.iter().map(|p| Pin { coord: p.coord + off, ..p.clone() }));
        off += d;
    }
    let block = DiracKernel { k, l, layout };
    let order = canonical_order(block.layout());
    let mut position = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    PhSystem {
        dirac: block.permuted(&order),
        lagrange: systems.iter().flat_map(|s| s.lagrange.iter().cloned()).collect(),
        resistive: systems.iter().flat_map(|s| s.resistive.iter().cloned()).collect(),
        pins: pins.into_iter().map(|p| Pin { coord: position[p.coord], ..p }).collect(),
    }
}

/// Power-conserving interconnection over the link ports.
///
/// `sys2` enters with `−f_link` and shares `e_link`; the link coordinates are
/// eliminated and the remaining ones are ordered storage, resistive, external, each
/// kind listing `sys1` before `sys2`.
pub fn interconnect(sys1: &PhSystem, sys2: &PhSystem) -> Result<PhSystem, PhError> {
    let (d1, d2) = (sys1.dims(), sys2.dims());
    if d1.link != d2.link {
        return Err(PhError::LinkMismatch(d1.link, d2.link));
    }
    let link = d1.link;
    let (n1, n2) = (sys1.dirac.dim(), sys2.dirac.dim());
    let kept1 = n1 - link;
    let kept2 = n2 - link;
    let a = kept1 + kept2;

    // result coordinate order: by kind, sys1 before sys2 within each kind
    let mut result: Vec<(usize, usize)> = Vec::with_capacity(a);
    for kind in [PortKind::Storage, PortKind::Resistive, PortKind::External] {
        for (sys, s) in [sys1, sys2].iter().enumerate() {
            for (i, p) in s.dirac.layout().iter().enumerate() {
                if p.kind == kind {
                    result.push((sys, i));
                }
            }
        }
    }
    let mut position = [vec![usize::MAX; n1], vec![usize::MAX; n2]];
    for (r, &(sys, i)) in result.iter().enumerate() {
        position[sys][i] = r;
    }
    let mut link_index = [vec![usize::MAX; n1], vec![usize::MAX; n2]];
    for (sys, s) in [sys1, sys2].iter().enumerate() {
        let mut next = 0;
        for (i, p) in s.dirac.layout().iter().enumerate() {
            if p.kind == PortKind::Link {
                link_index[sys][i] = next;
                next += 1;
            }
        }
    }

    // unknowns: f (a), e (a), f_link (link), e_link (link)
    let cols = 2 * a + 2 * link;
    let mut m = DMatrix::zeros(n1 + n2, cols);
    for (sys, s) in [sys1, sys2].iter().enumerate() {
        let row0 = if sys == 0 { 0 } else { n1 };
        let flow_sign = if sys == 0 { 1.0 } else { -1.0 };
        for i in 0..s.dirac.dim() {
            let (fc, ec, sign) = if s.dirac.layout()[i].kind == PortKind::Link {
                let j = link_index[sys][i];
                (2 * a + j, 2 * a + link + j, flow_sign)
            } else {
                let j = position[sys][i];
                (j, a + j, 1.0)
            };
            for r in 0..s.dirac.dim() {
                m[(row0 + r, fc)] += sign * s.dirac.k()[(r, i)];
                m[(row0 + r, ec)] += s.dirac.l()[(r, i)];
            }
        }
    }
    let solutions = null_space(&m, DEFAULT_TOL)?;
    let projected = solutions.rows(0, 2 * a).clone_owned();
    let (k, l) = kernel_from_span_matrix(a, &projected, DEFAULT_TOL)?;
    if !is_dirac(&k, &l, DEFAULT_TOL)? {
        return Err(PhError::NotDirac(format!(
            "interconnection produced a {}-row kernel on {a} coordinates",
            k.nrows()
        )));
    }
    let layout = result
        .iter()
        .map(|&(sys, i)| [sys1, sys2][sys].dirac.layout()[i].clone())
        .collect();
    let pins = [sys1, sys2]
        .iter()
        .enumerate()
        .flat_map(|(sys, s)| s.pins.iter().map(move |p| (sys, p)))
        .map(|(sys, p)| Pin { coord: position[sys][p.coord], ..p.clone() })
        .collect();
    Ok(PhSystem {
        dirac: DiracKernel { k, l, layout },
        lagrange: sys1.lagrange.iter().chain(&sys2.lagrange).cloned().collect(),
        resistive: sys1.resistive.iter().chain(&sys2.resistive).cloned().collect(),
        pins,
    })
}

/// Residual of the pH dynamics at `(t, x, ẋ, z)`.
///
/// `z = (e_L, f_R, e_R, f_P, e_P, f_link, e_link)`. The residual stacks `K f + L e`
/// with `f = (−ẋ, f_R, f_P, f_link)` and `e = (e_L, e_R, e_P, e_link)`, then the
/// Lagrange rows, the resistive rows and one row per pin.
pub fn ph_residual(
    sys: &PhSystem,
    t: f64,
    x: &[f64],
    xdot: &[f64],
    z: &[f64],
) -> Result<DVector<f64>, PhError> {
    let d = sys.dims();
    if x.len() != d.storage || xdot.len() != d.storage || z.len() != sys.z_len() {
        return Err(PhError::ShapeMismatch(format!(
            "expected x, ẋ of length {} and z of length {}, got {}, {}, {}",
            d.storage,
            sys.z_len(),
            x.len(),
            xdot.len(),
            z.len()
        )));
    }
    let (nl, nr, np, nk) = (d.storage, d.resistive, d.external, d.link);
    let e_l = &z[..nl];
    let f_r = &z[nl..nl + nr];
    let e_r = &z[nl + nr..nl + 2 * nr];
    let f_p = &z[nl + 2 * nr..nl + 2 * nr + np];
    let e_p = &z[nl + 2 * nr + np..nl + 2 * nr + 2 * np];
    let f_k = &z[nl + 2 * nr + 2 * np..nl + 2 * nr + 2 * np + nk];
    let e_k = &z[nl + 2 * nr + 2 * np + nk..];

    let f: Vec<f64> = xdot.iter().map(|v| -v).chain(f_r.iter().copied()).chain(f_p.iter().copied()).chain(f_k.iter().copied()).collect();
    let e: Vec<f64> = e_l.iter().chain(e_r).chain(e_p).chain(e_k).copied().collect();
    let kernel = sys.dirac.k() * DVector::from_vec(f.clone()) + sys.dirac.l() * DVector::from_vec(e.clone());

    let mut out: Vec<f64> = kernel.iter().copied().collect();
    let mut off = 0;
    for block in &sys.lagrange {
        let n = block.dim();
        out.extend(block.residual(&x[off..off + n], &e_l[off..off + n]));
        off += n;
    }
    let mut off = 0;
    for rel in &sys.resistive {
        let n = rel.dim();
        out.extend(rel.residual(&f_r[off..off + n], &e_r[off..off + n]));
        off += n;
    }
    for pin in &sys.pins {
        let value = match pin.side {
            PinSide::Flow => f[pin.coord],
            PinSide::Effort => e[pin.coord],
        };
        out.push(pin.sign * value - (pin.signal)(t));
    }
    Ok(DVector::from_vec(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let cols = rows.first().map_or(0, |r| r.len());
        DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c])
    }

    /// 𝒟₁ = {(−i, i, u, u)} with both coordinates external.
    fn d1() -> DiracKernel {
        DiracKernel::new(
            m(&[&[1.0, 1.0], &[0.0, 0.0]]),
            m(&[&[0.0, 0.0], &[1.0, -1.0]]),
            vec![Port::new(PortKind::External, "a"), Port::new(PortKind::External, "b")],
        )
        .unwrap()
    }

    #[derive(Debug)]
    struct Quadratic;

    impl Hamiltonian for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn energy(&self, x: &[f64]) -> f64 {
            0.5 * x[0] * x[0]
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0]]
        }
    }

    #[derive(Debug)]
    struct Linear(f64);

    impl VectorMap for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64]) -> Vec<f64> {
            vec![self.0 * x[0]]
        }
    }

    #[test]
    fn is_dirac_examples() {
        assert!(is_dirac(&m(&[&[1.0]]), &m(&[&[0.0]]), 1e-10).unwrap());
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(!is_dirac(&i2, &i2, 1e-10).unwrap());
        assert!(is_dirac(&i2, &m(&[&[0.0, 1.0], &[-1.0, 0.0]]), 1e-10).unwrap());
        assert!(matches!(
            is_dirac(&i2, &m(&[&[1.0]]), 1e-10),
            Err(PhError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn contains_examples() {
        let d = d1();
        let f = DVector::from_vec(vec![-2.0, 2.0]);
        let e = DVector::from_vec(vec![3.0, 3.0]);
        assert!(dirac_contains(&d, &f, &e, 1e-12).unwrap());
        assert_eq!(e.dot(&f), 0.0);
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert!(!dirac_contains(&d, &ones, &ones, 1e-12).unwrap());

        let d = DiracKernel::new(m(&[&[1.0]]), m(&[&[0.0]]), vec![Port::new(PortKind::External, "p")]).unwrap();
        assert!(dirac_contains(&d, &DVector::from_vec(vec![0.0]), &DVector::from_vec(vec![7.0]), 1e-12).unwrap());
        assert!(dirac_contains(&d, &DVector::from_vec(vec![0.0, 1.0]), &DVector::from_vec(vec![7.0]), 1e-12).is_err());
    }

    #[test]
    fn kernel_from_span_examples() {
        let basis = vec![
            DVector::from_vec(vec![-1.0, 1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]),
        ];
        let (k, l) = kernel_from_span(2, &basis, 1e-10).unwrap();
        assert!(is_dirac(&k, &l, 1e-10).unwrap());
        let d = DiracKernel::new(k, l, d1().layout().to_vec()).unwrap();
        assert!(d.same_subspace(&d1(), 1e-12));

        let (k, l) = kernel_from_span(1, &[], 1e-10).unwrap();
        assert_eq!(numerical_rank(&hstack(&k, &l), 1e-10), 2);
        assert!(!is_dirac(&k, &l, 1e-10).unwrap());

        let full: Vec<DVector<f64>> = (0..2).map(|i| DVector::from_fn(2, |r, _| if r == i { 1.0 } else { 0.0 })).collect();
        let (k, l) = kernel_from_span(1, &full, 1e-10).unwrap();
        assert_eq!(k.nrows(), 0);
        assert!(!is_dirac(&k, &l, 1e-10).unwrap());
    }

    #[test]
    fn degenerate_span_detected() {
        let basis = vec![
            DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 2e-10, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, 5e-11, 0.0]),
        ];
        assert!(matches!(
            kernel_from_span(2, &basis, 1e-10),
            Err(PhError::DegenerateSpan { .. })
        ));
    }

    #[test]
    fn linear_lagrange_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let z2 = DMatrix::<f64>::zeros(2, 2);
        assert!(is_linear_lagrange(&i2, &z2, 1e-10).unwrap());
        assert!(is_linear_lagrange(&z2, &i2, 1e-10).unwrap());
        assert!(!is_linear_lagrange(&i2, &m(&[&[0.0, 1.0], &[0.0, 0.0]]), 1e-10).unwrap());
    }

    #[test]
    fn gradient_field_examples() {
        let samples = vec![vec![0.3, -1.2], vec![2.0, 0.5]];
        assert!(gradient_field_check(&|x: &[f64]| x.to_vec(), &samples, 1e-6).unwrap());
        assert!(!gradient_field_check(&|x: &[f64]| vec![x[1], 0.0], &samples, 1e-6).unwrap());
        assert!(gradient_field_check(&|x: &[f64]| vec![x[0].powi(3) + x[1], x[0] + x[1]], &samples, 1e-6).unwrap());
        assert!(matches!(
            gradient_field_check(&|x: &[f64]| vec![x[0].ln(), 0.0], &[vec![-1.0, 0.0]], 1e-6),
            Err(PhError::EvaluationFailure(_))
        ));
    }

    #[test]
    fn gradient_consistency() {
        let g = GradientLagrange::new(Arc::new(Quadratic));
        assert!(g.gradient_matches_energy(&[vec![1.5], vec![-0.2]], 1e-6));
    }

    #[test]
    fn resistive_examples() {
        let g = ResistiveRelation::Conductance(Arc::new(Linear(2.0)));
        assert_eq!(g.pair_from_input(&[3.0]), (vec![-6.0], vec![3.0]));
        assert!(resistive_check(&g, &[vec![3.0]], 1e-12));
        let neg = ResistiveRelation::Conductance(Arc::new(Linear(-1.0)));
        assert!(!resistive_check(&neg, &[vec![1.0]], 1e-12));
    }

    #[test]
    fn serialization_round_trip() {
        let d = d1();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.starts_with("{\"n\":2,\"K\":[[1.0,1.0],[0.0,0.0]]"));
        let back: DiracKernel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);

        let lag = LinearLagrange::zero_state(2);
        let json = serde_json::to_string(&lag).unwrap();
        let back: LinearLagrange = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lag);

        let bad = r#"{"n":2,"K":[[1,0],[0,1]],"L":[[1,0],[0,1]],"layout":[{"kind":"link","label":"a"},{"kind":"link","label":"b"}]}"#;
        assert!(serde_json::from_str::<DiracKernel>(bad).is_err());
    }

    fn resistor_system(g: f64) -> PhSystem {
        let d = DiracKernel::new(
            m(&[&[1.0, 1.0], &[0.0, 0.0]]),
            m(&[&[0.0, 0.0], &[1.0, -1.0]]),
            vec![Port::new(PortKind::Resistive, "R"), Port::new(PortKind::Link, "port")],
        )
        .unwrap();
        PhSystem::new(d, vec![], vec![ResistiveRelation::Conductance(Arc::new(Linear(g)))]).unwrap()
    }

    fn source_system() -> PhSystem {
        let d = DiracKernel::new(
            m(&[&[1.0, 1.0], &[0.0, 0.0]]),
            m(&[&[0.0, 0.0], &[1.0, -1.0]]),
            vec![Port::new(PortKind::External, "S"), Port::new(PortKind::Link, "port")],
        )
        .unwrap();
        PhSystem::new(d, vec![], vec![]).unwrap()
    }

    #[test]
    fn product_examples() {
        let r = resistor_system(1.0);
        let p = product(std::slice::from_ref(&r));
        assert_eq!(p.dirac(), r.dirac());

        let p = product(&[r.clone(), r.clone()]);
        assert_eq!(p.dirac().dim(), 4);
        assert!(is_dirac(p.dirac().k(), p.dirac().l(), 1e-10).unwrap());
        let kinds: Vec<PortKind> = p.dirac().layout().iter().map(|p| p.kind).collect();
        assert_eq!(kinds, vec![PortKind::Resistive, PortKind::Resistive, PortKind::Link, PortKind::Link]);

        let e = product(&[]);
        assert_eq!(e.dirac().dim(), 0);
    }

    #[test]
    fn source_resistor_interconnection() {
        let s = source_system();
        let r = resistor_system(0.5);
        let c = interconnect(&s, &r).unwrap();
        assert_eq!(c.dims(), PortDims { storage: 0, resistive: 1, external: 1, link: 0 });
        // coordinates: (f_R, f_S | e_R, e_S); f_S = −i_s, f_R = −i_r
        let basis = c.dirac().basis();
        assert_eq!(basis.ncols(), 2);
        for j in 0..2 {
            let v = basis.column(j);
            let (f_r, f_s, e_r, e_s) = (v[0], v[1], v[2], v[3]);
            assert!((f_s + f_r).abs() < 1e-12, "i_source = −i_res");
            assert!((e_s - e_r).abs() < 1e-12, "u_source = u_res");
        }
    }

    #[test]
    fn zero_link_interconnection_is_product() {
        let a = source_system().relabel(PortKind::Link, PortKind::External);
        let b = resistor_system(2.0).relabel(PortKind::Link, PortKind::External);
        let c = interconnect(&a, &b).unwrap();
        let p = product(&[a, b]);
        assert!(c.dirac().same_subspace(p.dirac(), 1e-10));
        assert_eq!(c.dirac().layout(), p.dirac().layout());
    }

    #[test]
    fn link_mismatch() {
        let a = source_system();
        let b = resistor_system(1.0).relabel(PortKind::Link, PortKind::External);
        assert!(matches!(interconnect(&a, &b), Err(PhError::LinkMismatch(1, 0))));
    }

    #[test]
    fn capacitor_residual() {
        let d = DiracKernel::new(
            m(&[&[1.0, 1.0], &[0.0, 0.0]]),
            m(&[&[0.0, 0.0], &[1.0, -1.0]]),
            vec![Port::new(PortKind::Storage, "q"), Port::new(PortKind::External, "port")],
        )
        .unwrap();
        let sys = PhSystem::new(d, vec![LagrangeBlock::Gradient(GradientLagrange::new(Arc::new(Quadratic)))], vec![]).unwrap();
        // z = (e_L, f_P, e_P); the port flow is i, its effort u
        let r = ph_residual(&sys, 0.0, &[1.0], &[0.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.amax(), 0.0);
        let r = ph_residual(&sys, 0.0, &[1.0], &[0.0], &[1.0, 0.5, 1.0]).unwrap();
        assert!(r.amax() > 0.1);
        let r = ph_residual(&sys, 0.0, &[0.0], &[0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.amax(), 0.0);
        assert!(matches!(
            ph_residual(&sys, 0.0, &[1.0], &[0.0], &[1.0, 0.0]),
            Err(PhError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pins_follow_coordinates() {
        let s = source_system()
            .with_pin(0, PinSide::Effort, 1.0, Arc::new(|_| 5.0))
            .unwrap();
        let r = resistor_system(0.5);
        let c = interconnect(&r, &s).unwrap();
        assert_eq!(c.pins().len(), 1);
        assert_eq!(c.dirac().layout()[c.pins()[0].coord].label, "S");
        // z = (f_R, e_R, f_S, e_S) with u = 5, i = g u = 2.5
        let z = [-2.5, 5.0, 2.5, 5.0];
        let res = ph_residual(&c, 0.0, &[], &[], &z).unwrap();
        assert!(res.amax() < 1e-12, "{res}");
    }

    #[test]
    fn rref_snaps_integers() {
        let a = m(&[&[2.0, 4.0, 2.0], &[1.0, 3.0, 0.0]]);
        let r = rref(&a, 1e-12);
        assert_eq!(r, m(&[&[1.0, 0.0, 3.0], &[0.0, 1.0, -1.0]]));
    }
}
