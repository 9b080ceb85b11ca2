//! Phase space in Darboux coordinates and the continuous part of the
//! dynamics.
//!
//! Points are stored as `(q1..qn, p1..pn)`. The symplectic form is a
//! constant antisymmetric matrix `Ω` with `ω(X, Y) = Xᵀ Ω Y`; the
//! Hamiltonian vector field is the solution of `Ωᵀ X = ∇H`, which in the
//! canonical case reduces to `q̇ = ∂H/∂p`, `ṗ = −∂H/∂q`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{self, Env, Expr, FunctionTable};

pub type Params = BTreeMap<String, f64>;

/// Default fixed step for all integrators.
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    coords: Vec<f64>,
}

impl PhasePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(Error::InvalidPoint(format!(
                "expected an even, positive number of coordinates, got {}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint(format!("coordinate {i} is not finite")));
        }
        Ok(PhasePoint { coords })
    }

    /// Number of degrees of freedom.
    pub fn n(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn q(&self) -> &[f64] {
        &self.coords[..self.n()]
    }

    pub fn p(&self) -> &[f64] {
        &self.coords[self.n()..]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        PhasePoint::new(v.iter().copied().collect())
    }

    pub fn max_distance(&self, other: &PhasePoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self + s * v`, unchecked for finiteness (intermediate stages).
    fn offset(&self, v: &[f64], s: f64) -> PhasePoint {
        PhasePoint {
            coords: self.coords.iter().zip(v).map(|(a, b)| a + s * b).collect(),
        }
    }
}

/// Canonical coordinate names `q1..qn, p1..pn`.
pub fn canonical_names(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("q{i}"))
        .chain((1..=n).map(|i| format!("p{i}")))
        .collect()
}

/// Constant symplectic matrix together with the map `∇H ↦ X_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    omega: DMatrix<f64>,
    field_map: DMatrix<f64>,
}

impl SymplecticMatrix {
    /// `[[0, I], [−I, 0]]` in `(q, p)` ordering.
    pub fn canonical(n: usize) -> Self {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, n + i)] = 1.0;
            m[(n + i, i)] = -1.0;
        }
        Self::new(m).expect("canonical form is symplectic")
    }

    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() || omega.nrows() % 2 != 0 || omega.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "symplectic matrix must be square of even size, got {}x{}",
                omega.nrows(),
                omega.ncols()
            )));
        }
        let scale = omega.amax().max(1.0);
        if (&omega + omega.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidForm("matrix is not antisymmetric".into()));
        }
        let rank = omega.clone().svd(false, false).rank(1e-10 * scale);
        if rank < omega.nrows() {
            return Err(Error::DegenerateReducedForm {
                rank,
                dim: omega.nrows(),
            });
        }
        let field_map = omega
            .transpose()
            .try_inverse()
            .ok_or(Error::DegenerateReducedForm {
                rank,
                dim: omega.nrows(),
            })?;
        Ok(SymplecticMatrix { omega, field_map })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn is_canonical(&self) -> bool {
        self.omega == SymplecticMatrix::canonical(self.dim() / 2).omega
    }

    /// `ω(X, Y) = Xᵀ Ω Y`.
    pub fn pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.omega * y))
    }

    /// Solves `Ωᵀ X = grad` for `X`.
    pub fn raise(&self, grad: &[f64]) -> Vec<f64> {
        (&self.field_map * DVector::from_column_slice(grad))
            .iter()
            .copied()
            .collect()
    }

    /// `‖Mᵀ Ω M − Ω‖∞` (max-entry norm) for a linear map `M`.
    pub fn defect(&self, m: &DMatrix<f64>) -> f64 {
        (m.transpose() * &self.omega * m - &self.omega).amax()
    }
}

/// Evaluation context: coordinate names, parameter values and user
/// functions shared by every expression of a system.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub coords: Vec<String>,
    pub params: Params,
    pub functions: FunctionTable,
}

struct PointEnv<'a> {
    ctx: &'a Context,
    x: &'a [f64],
}

impl Env for PointEnv<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        match self.ctx.coords.iter().position(|c| c == name) {
            Some(i) => self.x.get(i).copied(),
            None => self.ctx.params.get(name).copied(),
        }
    }

    fn functions(&self) -> &FunctionTable {
        &self.ctx.functions
    }
}

impl Context {
    pub fn new(coords: Vec<String>, params: Params, functions: FunctionTable) -> Self {
        Context {
            coords,
            params,
            functions,
        }
    }

    pub fn eval(&self, e: &Expr, x: &PhasePoint) -> Result<f64> {
        self.check_dim(x)?;
        expr::eval(
            e,
            &PointEnv {
                ctx: self,
                x: x.coords(),
            },
        )
    }

    /// Gradient with respect to all coordinates, in coordinate order.
    pub fn grad(&self, e: &Expr, x: &PhasePoint) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        expr::grad(
            e,
            &PointEnv {
                ctx: self,
                x: x.coords(),
            },
            &self.coords,
        )
    }

    pub fn value_and_grad(&self, e: &Expr, x: &PhasePoint) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        expr::value_and_grad(
            e,
            &PointEnv {
                ctx: self,
                x: x.coords(),
            },
            &self.coords,
        )
    }

    fn check_dim(&self, x: &PhasePoint) -> Result<()> {
        if x.dim() != self.coords.len() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, context expects {}",
                x.dim(),
                self.coords.len()
            )));
        }
        Ok(())
    }
}

/// Hamiltonian function on a constant symplectic phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSystem {
    pub hamiltonian: Expr,
    pub ctx: Context,
    pub omega: SymplecticMatrix,
    /// Declared `H = T(p) + U(q)`; required by leapfrog.
    pub separable: bool,
}

impl HamiltonianSystem {
    pub fn energy(&self, x: &PhasePoint) -> Result<f64> {
        self.ctx.eval(&self.hamiltonian, x)
    }

    pub fn vector_field(&self, x: &PhasePoint) -> Result<Vec<f64>> {
        hamiltonian_vector_field(&self.hamiltonian, &self.ctx, &self.omega, x)
    }
}

/// The unique `X` with `ω(X, ·) = dH` at `x`.
pub fn hamiltonian_vector_field(
    h: &Expr,
    ctx: &Context,
    omega: &SymplecticMatrix,
    x: &PhasePoint,
) -> Result<Vec<f64>> {
    if omega.dim() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "symplectic matrix is {0}x{0}, point has {1} coordinates",
            omega.dim(),
            x.dim()
        )));
    }
    Ok(omega.raise(&ctx.grad(h, x)?))
}

/// One Störmer–Verlet step: half kick in `p`, drift in `q`, half kick.
pub fn step_leapfrog(sys: &HamiltonianSystem, x: &PhasePoint, h: f64) -> Result<PhasePoint> {
    if !sys.separable {
        return Err(Error::NotSeparable);
    }
    if !sys.omega.is_canonical() {
        return Err(Error::DimensionMismatch(
            "leapfrog requires the canonical symplectic form".into(),
        ));
    }
    let n = x.n();
    let mut c = x.coords().to_vec();
    let g = sys.ctx.grad(&sys.hamiltonian, x)?;
    for i in 0..n {
        c[n + i] -= 0.5 * h * g[i];
    }
    let half = PhasePoint { coords: c.clone() };
    let g = sys.ctx.grad(&sys.hamiltonian, &half)?;
    for i in 0..n {
        c[i] += h * g[n + i];
    }
    let drifted = PhasePoint { coords: c.clone() };
    let g = sys.ctx.grad(&sys.hamiltonian, &drifted)?;
    for i in 0..n {
        c[n + i] -= 0.5 * h * g[i];
    }
    PhasePoint::new(c)
}

/// Classical fourth-order Runge–Kutta on the Hamiltonian vector field.
pub fn step_rk4(sys: &HamiltonianSystem, x: &PhasePoint, h: f64) -> Result<PhasePoint> {
    let k1 = sys.vector_field(x)?;
    let k2 = sys.vector_field(&x.offset(&k1, 0.5 * h))?;
    let k3 = sys.vector_field(&x.offset(&k2, 0.5 * h))?;
    let k4 = sys.vector_field(&x.offset(&k3, h))?;
    let coords = (0..x.dim())
        .map(|i| x.coords[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    PhasePoint::new(coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Leapfrog,
    Rk4,
}

impl Integrator {
    pub fn step(self, sys: &HamiltonianSystem, x: &PhasePoint, h: f64) -> Result<PhasePoint> {
        match self {
            Integrator::Leapfrog => step_leapfrog(sys, x, h),
            Integrator::Rk4 => step_rk4(sys, x, h),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Integrator::Leapfrog => "leapfrog",
            Integrator::Rk4 => "rk4",
        }
    }
}

impl std::str::FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "leapfrog" | "verlet" => Ok(Integrator::Leapfrog),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(format!(
                "unknown integrator `{other}` (expected leapfrog or rk4)"
            )),
        }
    }
}

/// Central finite-difference Jacobian of `map` at `x`.
pub fn fd_jacobian(
    map: impl Fn(&PhasePoint) -> Result<PhasePoint>,
    x: &PhasePoint,
    fd: f64,
) -> Result<DMatrix<f64>> {
    let d = x.dim();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = fd;
        let plus = map(&x.offset(&e, 1.0))?;
        let minus = map(&x.offset(&e, -1.0))?;
        for i in 0..d {
            m[(i, j)] = (plus.coords[i] - minus.coords[i]) / (2.0 * fd);
        }
    }
    Ok(m)
}

/// `‖Mᵀ Ω M − Ω‖∞` for the finite-difference Jacobian `M` of one step.
pub fn symplecticity_defect(
    stepper: Integrator,
    sys: &HamiltonianSystem,
    x: &PhasePoint,
    h: f64,
    fd: f64,
) -> Result<f64> {
    let m = fd_jacobian(|y| stepper.step(sys, y, h), x, fd)?;
    Ok(sys.omega.defect(&m))
}

/// Continuous solution piece with cubic Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    times: Vec<f64>,
    states: Vec<PhasePoint>,
    derivs: Vec<Vec<f64>>,
}

impl TrajectorySegment {
    pub fn new(t0: f64, x0: PhasePoint, dx0: Vec<f64>) -> Self {
        TrajectorySegment {
            times: vec![t0],
            states: vec![x0],
            derivs: vec![dx0],
        }
    }

    /// Appends a node; times must increase strictly.
    pub fn push(&mut self, t: f64, x: PhasePoint, dx: Vec<f64>) -> Result<()> {
        let last = self.end_time();
        if !(t > last) {
            return Err(Error::InvalidPoint(format!(
                "segment times must increase: {t} after {last}"
            )));
        }
        self.times.push(t);
        self.states.push(x);
        self.derivs.push(dx);
        Ok(())
    }

    /// Drops every node after index `keep`.
    pub(crate) fn truncate(&mut self, keep: usize) {
        self.times.truncate(keep + 1);
        self.states.truncate(keep + 1);
        self.derivs.truncate(keep + 1);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[PhasePoint] {
        &self.states
    }

    pub fn derivs(&self) -> &[Vec<f64>] {
        &self.derivs
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("segment has at least one node")
    }

    pub fn first(&self) -> &PhasePoint {
        &self.states[0]
    }

    pub fn last(&self) -> &PhasePoint {
        self.states.last().expect("segment has at least one node")
    }

    /// Cubic Hermite interpolation on the node interval `i` (between
    /// nodes `i` and `i + 1`). Exact at the nodes.
    pub fn interpolate_on(&self, i: usize, t: f64) -> PhasePoint {
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        if t == t0 {
            return self.states[i].clone();
        }
        if t == t1 {
            return self.states[i + 1].clone();
        }
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (x0, x1) = (&self.states[i].coords, &self.states[i + 1].coords);
        let (d0, d1) = (&self.derivs[i], &self.derivs[i + 1]);
        let coords = (0..x0.len())
            .map(|k| h00 * x0[k] + h10 * dt * d0[k] + h01 * x1[k] + h11 * dt * d1[k])
            .collect();
        PhasePoint { coords }
    }

    /// Dense output at any `t` within the segment span (clamped).
    pub fn interpolate(&self, t: f64) -> PhasePoint {
        if self.times.len() == 1 || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.end_time() {
            return self.last().clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        self.interpolate_on(i, t)
    }
}
