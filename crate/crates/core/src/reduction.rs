//! Reduction at a momentum level: affine charts of `J⁻¹(μ)`, the reduced
//! symplectic form, reduced Hamiltonian/guard/impact, the reduced hybrid
//! runner with its sequence of levels, and the comparison of projected full
//! flows against reduced flows.
//!
//! A chart keeps `m = 2n − k` of the original coordinates free and solves
//! `B x + b = μ` for the remaining ones. Reduced expressions are built by
//! substituting those affine solutions, with the level entering as the
//! parameters `mu1, …, muk`; the level can therefore be switched between
//! segments without rebuilding any expression.
//!
//! Substitution only rewrites the maximal affine subtrees that contain an
//! eliminated coordinate; those are collected into a normal form (constant
//! first, then symbols in order of first appearance), so that e.g.
//! `p1 - p2` with `p1 = mu1 - p2` prints as `mu1 - 2*p2`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, Expr, UnaryOp};
use crate::hybrid::{run_hybrid_with, Guard, HybridFlow, HybridOptions, HybridSystem, ImpactMap};
use crate::phase::{Context, HamiltonianSystem, Integrator, PhasePoint, SymplecticMatrix};
use crate::symmetry::{
    classify_samples, rank, sample_guard_level, ClassifyOptions, MomentumMap, Sampler, RANK_TOL,
};

/// Largest admissible `|J(x) − μᵢ|∞` along segment `i` of a full flow.
pub const LEVEL_TOL: f64 = 1e-10;

/// Name of the parameter carrying component `a` (0-based) of the level.
pub fn mu_name(a: usize) -> String {
    format!("mu{}", a + 1)
}

fn is_reserved(name: &str) -> bool {
    name.strip_prefix("mu")
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

/// `c·e`, printed as `e`, `-e`, `c*e` or `-c*e`.
pub fn scaled(c: f64, e: Expr) -> Expr {
    if c == 1.0 {
        e
    } else if c == -1.0 {
        Expr::neg(e)
    } else if c < 0.0 {
        Expr::binary(BinaryOp::Mul, Expr::neg(Expr::Const(-c)), e)
    } else {
        Expr::binary(BinaryOp::Mul, Expr::Const(c), e)
    }
}

/// Sum of terms, turning negated terms into subtractions.
pub fn sum(terms: Vec<Expr>) -> Expr {
    let mut iter = terms.into_iter();
    let Some(mut acc) = iter.next() else {
        return Expr::Const(0.0);
    };
    for t in iter {
        acc = match t {
            Expr::Unary(UnaryOp::Neg, inner) => Expr::Binary(BinaryOp::Sub, Box::new(acc), inner),
            Expr::Binary(BinaryOp::Mul, l, r) if matches!(&*l, Expr::Unary(UnaryOp::Neg, _)) => {
                let Expr::Unary(_, c) = *l else {
                    unreachable!()
                };
                Expr::binary(BinaryOp::Sub, acc, Expr::Binary(BinaryOp::Mul, c, r))
            }
            other => Expr::binary(BinaryOp::Add, acc, other),
        };
    }
    acc
}

/// `constant + Σ coefficient·symbol` with symbols in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
struct Affine {
    constant: f64,
    terms: Vec<(Expr, f64)>,
}

impl Affine {
    fn constant(c: f64) -> Self {
        Affine {
            constant: c,
            terms: Vec::new(),
        }
    }

    fn symbol(e: Expr) -> Self {
        Affine {
            constant: 0.0,
            terms: vec![(e, 1.0)],
        }
    }

    fn is_constant(&self) -> bool {
        self.terms.iter().all(|(_, c)| *c == 0.0)
    }

    fn add_scaled(mut self, other: &Affine, s: f64) -> Self {
        self.constant += s * other.constant;
        for (sym, c) in &other.terms {
            match self.terms.iter_mut().find(|(t, _)| t == sym) {
                Some((_, acc)) => *acc += s * c,
                None => self.terms.push((sym.clone(), s * c)),
            }
        }
        self
    }

    fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.constant = f(self.constant);
        for (_, c) in &mut self.terms {
            *c = f(*c);
        }
        self
    }

    fn of(e: &Expr) -> Option<Affine> {
        match e {
            Expr::Const(v) => Some(Affine::constant(*v)),
            Expr::Var(_) | Expr::Param(_) => Some(Affine::symbol(e.clone())),
            Expr::Unary(UnaryOp::Neg, x) => Some(Affine::of(x)?.map(|c| -c)),
            Expr::Binary(op, l, r) => {
                let (l, r) = (Affine::of(l), Affine::of(r));
                match op {
                    BinaryOp::Add => Some(l?.add_scaled(&r?, 1.0)),
                    BinaryOp::Sub => Some(l?.add_scaled(&r?, -1.0)),
                    BinaryOp::Mul => {
                        let (l, r) = (l?, r?);
                        if l.is_constant() {
                            Some(r.map(|c| c * l.constant))
                        } else if r.is_constant() {
                            Some(l.map(|c| c * r.constant))
                        } else {
                            None
                        }
                    }
                    BinaryOp::Div => {
                        let (l, r) = (l?, r?);
                        (r.is_constant() && r.constant != 0.0).then(|| l.map(|c| c / r.constant))
                    }
                    BinaryOp::Pow => None,
                }
            }
            Expr::Unary(..) | Expr::Call(..) => None,
        }
    }

    fn to_expr(&self) -> Expr {
        let mut items = Vec::new();
        if self.constant != 0.0 {
            items.push(Expr::constant(self.constant));
        }
        for (sym, c) in &self.terms {
            if *c != 0.0 {
                items.push(scaled(*c, sym.clone()));
            }
        }
        sum(items)
    }
}

fn mentions(e: &Expr, subs: &BTreeMap<String, Affine>) -> bool {
    let mut hit = false;
    e.visit(&mut |n| {
        if let Expr::Var(v) = n {
            hit |= subs.contains_key(v);
        }
    });
    hit
}

fn substitute_affine(e: &Expr, subs: &BTreeMap<String, Affine>) -> Expr {
    if !mentions(e, subs) {
        return e.clone();
    }
    if let Some(a) = Affine::of(e) {
        let mut out = Affine::constant(a.constant);
        for (sym, c) in &a.terms {
            let piece = match sym {
                Expr::Var(v) => subs
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Affine::symbol(sym.clone())),
                _ => Affine::symbol(sym.clone()),
            };
            out = out.add_scaled(&piece, *c);
        }
        return out.to_expr();
    }
    match e {
        Expr::Unary(op, x) => Expr::unary(*op, substitute_affine(x, subs)),
        Expr::Call(name, x) => Expr::call(name.clone(), substitute_affine(x, subs)),
        Expr::Binary(op, l, r) => {
            Expr::binary(*op, substitute_affine(l, subs), substitute_affine(r, subs))
        }
        Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => e.clone(),
    }
}

/// Replaces parameters by constants, without any simplification.
pub fn bind_parameters(e: &Expr, values: &BTreeMap<String, f64>) -> Expr {
    match e {
        Expr::Param(n) => values
            .get(n)
            .map_or_else(|| e.clone(), |v| Expr::constant(*v)),
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, x) => Expr::unary(*op, bind_parameters(x, values)),
        Expr::Call(name, x) => Expr::call(name.clone(), bind_parameters(x, values)),
        Expr::Binary(op, l, r) => {
            Expr::binary(*op, bind_parameters(l, values), bind_parameters(r, values))
        }
    }
}

/// Affine chart of `J⁻¹(μ)` keeping the coordinates `free` and solving for
/// `bound` as `x_bound = L y + M μ + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetChart {
    pub mu: DVector<f64>,
    pub free: Vec<usize>,
    pub bound: Vec<usize>,
    pub coords: Vec<String>,
    momentum: MomentumMap,
    lin: DMatrix<f64>,
    mu_map: DMatrix<f64>,
    shift: DVector<f64>,
}

/// Column indices chosen by greedy full pivoting on `|B|` (row-major scan,
/// first maximum wins).
fn greedy_pivots(b: &DMatrix<f64>) -> Result<Vec<usize>> {
    let mut work = b.clone();
    let scale = b.amax();
    let (k, d) = work.shape();
    let mut used_rows = vec![false; k];
    let mut used_cols = vec![false; d];
    let mut pivots = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, usize, f64)> = None;
        for r in (0..k).filter(|&r| !used_rows[r]) {
            for c in (0..d).filter(|&c| !used_cols[c]) {
                let v = work[(r, c)].abs();
                if best.is_none_or(|(_, _, m)| v > m) {
                    best = Some((r, c, v));
                }
            }
        }
        let (r, c, v) = best.expect("rows remain");
        if !(v > RANK_TOL * scale) {
            return Err(Error::NotRegular(
                "momentum matrix B is rank deficient".into(),
            ));
        }
        for other in (0..k).filter(|&o| !used_rows[o] && o != r) {
            let factor = work[(other, c)] / work[(r, c)];
            for j in 0..d {
                work[(other, j)] -= factor * work[(r, j)];
            }
        }
        used_rows[r] = true;
        used_cols[c] = true;
        pivots.push(c);
    }
    Ok(pivots)
}

/// Builds the chart of `J⁻¹(μ)`; free coordinates are chosen by greedy
/// pivoting unless given. Only trivial isotropy is supported.
pub fn build_chart(
    momentum: &MomentumMap,
    mu: &DVector<f64>,
    isotropy: &[DVector<f64>],
    free: Option<&[usize]>,
    coords: &[String],
) -> Result<LevelSetChart> {
    let (k, d) = (momentum.k(), momentum.phase_dim());
    if mu.len() != k || coords.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "J maps R^{d} to R^{k}, got mu in R^{} and {} coordinate names",
            mu.len(),
            coords.len()
        )));
    }
    if !momentum.is_submersion() {
        return Err(Error::NotRegular(format!(
            "mu = {:?} of J (rank B < k)",
            mu.as_slice()
        )));
    }
    if !isotropy.is_empty() {
        return Err(Error::UnsupportedIsotropy {
            dim: isotropy.len(),
        });
    }
    let free: Vec<usize> = match free {
        Some(f) => {
            let mut sorted = f.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != f.len() || sorted.len() != d - k || sorted.iter().any(|&i| i >= d) {
                return Err(Error::SingularSelection(format!(
                    "expected {} distinct coordinate indices below {d}, got {f:?}",
                    d - k
                )));
            }
            f.to_vec()
        }
        None => {
            let pivots = greedy_pivots(&momentum.matrix)?;
            (0..d).filter(|i| !pivots.contains(i)).collect()
        }
    };
    let bound: Vec<usize> = (0..d).filter(|i| !free.contains(i)).collect();
    let b_bound = momentum.matrix.select_columns(&bound);
    let b_free = momentum.matrix.select_columns(&free);
    if rank(&b_bound) < k {
        let names: Vec<&str> = free.iter().map(|&i| coords[i].as_str()).collect();
        return Err(Error::SingularSelection(format!(
            "free coordinates {names:?} leave the complementary block of B singular"
        )));
    }
    let inv = b_bound
        .try_inverse()
        .ok_or_else(|| Error::SingularSelection("complementary block of B is singular".into()))?;
    Ok(LevelSetChart {
        mu: mu.clone(),
        free,
        bound,
        coords: coords.to_vec(),
        momentum: momentum.clone(),
        lin: -&inv * b_free,
        shift: -&inv * &momentum.offset,
        mu_map: inv,
    })
}

impl LevelSetChart {
    /// Chart dimension `m`.
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn momentum(&self) -> &MomentumMap {
        &self.momentum
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free.iter().map(|&i| self.coords[i].clone()).collect()
    }

    /// Same coordinate selection at another level.
    pub fn with_level(&self, mu: &DVector<f64>) -> LevelSetChart {
        LevelSetChart {
            mu: mu.clone(),
            ..self.clone()
        }
    }

    /// The `2n × m` linear part `P` of the parametrization.
    pub fn linear_part(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.coords.len(), self.dim());
        for (j, &i) in self.free.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        for (r, &i) in self.bound.iter().enumerate() {
            p.set_row(i, &self.lin.row(r));
        }
        p
    }

    /// `i_μ`: chart coordinates to the phase point on `J⁻¹(μ)`.
    pub fn parametrize(&self, y: &[f64]) -> Result<PhasePoint> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "chart has {} coordinates, got {}",
                self.dim(),
                y.len()
            )));
        }
        let yv = DVector::from_column_slice(y);
        let xb = &self.lin * &yv + &self.mu_map * &self.mu + &self.shift;
        let mut x = vec![0.0; self.coords.len()];
        for (j, &i) in self.free.iter().enumerate() {
            x[i] = y[j];
        }
        for (r, &i) in self.bound.iter().enumerate() {
            x[i] = xb[r];
        }
        PhasePoint::new(x)
    }

    /// `π_μ`: extraction of the free coordinates.
    pub fn project(&self, x: &PhasePoint) -> Vec<f64> {
        self.free.iter().map(|&i| x.coords()[i]).collect()
    }

    pub fn project_point(&self, x: &PhasePoint) -> Result<PhasePoint> {
        PhasePoint::new(self.project(x))
    }

    /// Affine expressions of the bound coordinates in the free coordinates
    /// and the symbolic level.
    fn substitutions(&self) -> BTreeMap<String, Affine> {
        let mut out = BTreeMap::new();
        for (r, &i) in self.bound.iter().enumerate() {
            let mut a = Affine::constant(self.shift[r]);
            for k in 0..self.mu.len() {
                let c = self.mu_map[(r, k)];
                if c != 0.0 {
                    a.terms.push((Expr::param(mu_name(k)), c));
                }
            }
            for (j, name) in self.free_names().into_iter().enumerate() {
                let c = self.lin[(r, j)];
                if c != 0.0 {
                    a.terms.push((Expr::var(name), c));
                }
            }
            out.insert(self.coords[i].clone(), a);
        }
        out
    }

    /// Bound coordinates as normalized expressions, e.g. `q1 = -mu2 - q2`.
    pub fn bound_expressions(&self) -> Vec<(String, Expr)> {
        let subs = self.substitutions();
        self.bound
            .iter()
            .map(|&i| (self.coords[i].clone(), subs[&self.coords[i]].to_expr()))
            .collect()
    }

    /// `f ∘ i_μ` as an expression in the chart coordinates and `mu1…muk`.
    pub fn pull_back(&self, f: &Expr) -> Expr {
        substitute_affine(f, &self.substitutions())
    }

    /// Evaluation context for reduced expressions: chart coordinates, the
    /// full system's parameters and functions, and the current level.
    pub fn context(&self, full: &Context) -> Result<Context> {
        if let Some(bad) = full.params.keys().find(|k| is_reserved(k)) {
            return Err(Error::Domain(format!(
                "parameter name `{bad}` is reserved for momentum levels"
            )));
        }
        let mut ctx = Context::new(
            self.free_names(),
            full.params.clone(),
            full.functions.clone(),
        );
        set_level(&mut ctx, &self.mu);
        Ok(ctx)
    }
}

fn set_level(ctx: &mut Context, mu: &DVector<f64>) {
    for (a, v) in mu.iter().enumerate() {
        ctx.params.insert(mu_name(a), *v);
    }
}

/// `Ω_μ = Pᵀ Ω P`, the matrix of the form with `i*_μ ω = π*_μ ω_μ`.
pub fn reduced_form(chart: &LevelSetChart, omega: &SymplecticMatrix) -> Result<SymplecticMatrix> {
    if omega.dim() != chart.coords.len() {
        return Err(Error::DimensionMismatch(format!(
            "Omega is {0}x{0}, chart lives in R^{1}",
            omega.dim(),
            chart.coords.len()
        )));
    }
    let p = chart.linear_part();
    SymplecticMatrix::new(p.transpose() * omega.matrix() * &p)
}

/// `‖Pᵀ Ω P − Ω_μ‖∞`.
pub fn pullback_residual(
    chart: &LevelSetChart,
    omega: &SymplecticMatrix,
    reduced: &SymplecticMatrix,
) -> f64 {
    let p = chart.linear_part();
    (p.transpose() * omega.matrix() * &p - reduced.matrix()).amax()
}

/// `H_μ` with `H_μ ∘ π_μ = H ∘ i_μ`.
pub fn reduce_hamiltonian(h: &Expr, chart: &LevelSetChart) -> Expr {
    chart.pull_back(h)
}

/// Reduced guard and impact with their sampled certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGuardImpact {
    pub guard: Guard,
    pub impact: ImpactMap,
    /// `max ‖π_{μ₊}(Δ(x)) − Δ_μ(π_{μ₋}(x))‖∞` over the samples.
    pub diagram_defect: f64,
    /// `max ‖J(Δ(x)) − μ₊‖∞` over the samples.
    pub level_residual: f64,
}

/// `S_μ = S ∘ i_{μ₋}` and `Δ_μ = π_{μ₊} ∘ Δ ∘ i_{μ₋}`, checked on guard
/// samples of `S ∩ J⁻¹(μ₋)`.
pub fn reduce_guard_impact(
    guard: &Guard,
    impact: &ImpactMap,
    chart_in: &LevelSetChart,
    chart_out: &LevelSetChart,
    full_ctx: &Context,
    samples: &[PhasePoint],
    tol: f64,
) -> Result<ReducedGuardImpact> {
    if chart_in.free != chart_out.free {
        return Err(Error::SingularSelection(
            "charts select different free coordinates".into(),
        ));
    }
    let reduced_guard = Guard {
        level: chart_in.pull_back(&guard.level),
        direction: chart_in.pull_back(&guard.direction),
    };
    let reduced_impact = ImpactMap {
        components: chart_in
            .free
            .iter()
            .map(|&i| chart_in.pull_back(&impact.components[i]))
            .collect(),
    };
    let ctx_in = chart_in.context(full_ctx)?;
    let mut diagram_defect: f64 = 0.0;
    let mut level_residual: f64 = 0.0;
    for x in samples {
        let post = impact.eval(full_ctx, x)?;
        let residual = (chart_out.momentum.eval(&post) - &chart_out.mu).amax();
        if residual > tol {
            return Err(Error::LevelMismatch { residual });
        }
        level_residual = level_residual.max(residual);
        let lhs = chart_out.project_point(&post)?;
        let rhs = reduced_impact.eval(&ctx_in, &chart_in.project_point(x)?)?;
        diagram_defect = diagram_defect.max(lhs.max_distance(&rhs));
    }
    Ok(ReducedGuardImpact {
        guard: reduced_guard,
        impact: reduced_impact,
        diagram_defect,
        level_residual,
    })
}

/// Reduced hybrid system at a level, together with what is needed to move
/// to the next level after an impact.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub chart: LevelSetChart,
    pub omega: SymplecticMatrix,
    /// Reduced data over the chart coordinates; `mu1…muk` hold the level.
    pub hybrid: HybridSystem,
    pub full: HybridSystem,
    pub classify: ClassifyOptions,
    pub seed: u64,
}

/// Builds `(Ω_μ, H_μ, S_μ, Δ_μ)` from the full system and a chart.
pub fn reduce_system(
    full: &HybridSystem,
    chart: LevelSetChart,
    classify: ClassifyOptions,
    seed: u64,
) -> Result<ReducedSystem> {
    let omega = reduced_form(&chart, &full.dynamics.omega)?;
    let ctx = chart.context(full.ctx())?;
    let hybrid = HybridSystem {
        dynamics: HamiltonianSystem {
            hamiltonian: reduce_hamiltonian(&full.dynamics.hamiltonian, &chart),
            ctx,
            omega: omega.clone(),
            separable: false,
        },
        guard: Guard {
            level: chart.pull_back(&full.guard.level),
            direction: chart.pull_back(&full.guard.direction),
        },
        impact: ImpactMap {
            components: chart
                .free
                .iter()
                .map(|&i| chart.pull_back(&full.impact.components[i]))
                .collect(),
        },
    };
    Ok(ReducedSystem {
        chart,
        omega,
        hybrid,
        full: full.clone(),
        classify,
        seed,
    })
}

impl ReducedSystem {
    pub fn mu(&self) -> &DVector<f64> {
        &self.chart.mu
    }

    pub fn hamiltonian(&self) -> &Expr {
        &self.hybrid.dynamics.hamiltonian
    }

    /// The same reduced system with the level switched to `mu`.
    pub fn at_level(&self, mu: &DVector<f64>) -> ReducedSystem {
        let mut out = self.clone();
        out.chart = self.chart.with_level(mu);
        set_level(&mut out.hybrid.dynamics.ctx, mu);
        out
    }

    /// Post-impact level `μ₊` for impacts starting on `μ₋`, certified on
    /// seeded guard samples.
    pub fn next_level(&self, mu_minus: &DVector<f64>) -> Result<DVector<f64>> {
        let mut sampler = Sampler::new(self.seed);
        let momentum = self.chart.momentum();
        let ctx = self.full.ctx();
        let samples = sample_guard_level(
            momentum,
            &self.full.guard,
            ctx,
            mu_minus,
            self.classify.samples,
            self.classify.radius,
            self.classify.tol_g,
            &mut sampler,
        )?;
        let verdict = classify_samples(
            momentum,
            &self.full.impact,
            ctx,
            mu_minus,
            &samples,
            self.classify.tol,
        )?;
        verdict.mu_plus().ok_or(Error::LevelMismatch {
            residual: verdict.spread,
        })
    }
}

/// Reduced hybrid flow and the level `μᵢ` of each of its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFlow {
    pub flow: HybridFlow,
    pub levels: Vec<DVector<f64>>,
}

impl ReducedFlow {
    /// Chart of every segment, for projecting a full flow.
    pub fn charts(&self, reduced: &ReducedSystem) -> Vec<LevelSetChart> {
        self.levels
            .iter()
            .map(|mu| reduced.chart.with_level(mu))
            .collect()
    }
}

/// Runs the reduced hybrid system from chart coordinates `y0`, always with
/// RK4 (the reduced form is in general not canonical). After each impact
/// the level moves to the certified `μ₊`.
pub fn run_reduced_hybrid(
    reduced: &ReducedSystem,
    y0: &PhasePoint,
    t_end: f64,
    opts: &HybridOptions,
) -> Result<ReducedFlow> {
    let opts = HybridOptions {
        integrator: Integrator::Rk4,
        ..*opts
    };
    let mut levels = vec![reduced.mu().clone()];
    let mut known: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let flow = run_hybrid_with(&reduced.hybrid, y0, 0.0, t_end, &opts, &mut |_, sys| {
        let current = levels.last().expect("initial level").clone();
        let next = match known.iter().find(|(from, _)| *from == current) {
            Some((_, to)) => to.clone(),
            None => {
                let to = reduced.next_level(&current)?;
                known.push((current.clone(), to.clone()));
                to
            }
        };
        if next != current {
            set_level(&mut sys.dynamics.ctx, &next);
        }
        levels.push(next);
        Ok(())
    })?;
    Ok(ReducedFlow { flow, levels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalComparison {
    pub index: usize,
    pub full_interval: (f64, f64),
    pub reduced_interval: (f64, f64),
    pub mu: DVector<f64>,
    /// `sup ‖π_{μᵢ}(x(t)) − y(t)‖∞` over the overlap of both intervals.
    pub sup_distance: f64,
    /// `max ‖J(x(t)) − μᵢ‖∞` over the full segment's nodes.
    pub level_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub intervals: Vec<IntervalComparison>,
    /// `|τᵢ − τ̃ᵢ|` for every impact.
    pub impact_gaps: Vec<f64>,
    pub max_distance: f64,
    pub max_impact_gap: f64,
    pub max_level_residual: f64,
    pub tol_state: f64,
    pub tol_time: f64,
    pub pass: bool,
}

/// Compares the projection of a full flow with a reduced flow interval by
/// interval, using the chart of each interval's level.
pub fn compare_flows(
    full: &HybridFlow,
    reduced: &HybridFlow,
    charts: &[LevelSetChart],
    tol_state: f64,
    tol_time: f64,
) -> Result<ComparisonReport> {
    if full.impacts.len() != reduced.impacts.len() || full.segments.len() != reduced.segments.len()
    {
        return Err(Error::StructureMismatch(format!(
            "full flow has {} impacts, reduced flow has {}",
            full.impacts.len(),
            reduced.impacts.len()
        )));
    }
    if charts.len() != full.segments.len() {
        return Err(Error::StructureMismatch(format!(
            "{} charts for {} intervals",
            charts.len(),
            full.segments.len()
        )));
    }
    let mut intervals = Vec::with_capacity(charts.len());
    for (i, ((fs, rs), chart)) in full
        .segments
        .iter()
        .zip(&reduced.segments)
        .zip(charts)
        .enumerate()
    {
        let lo = fs.start_time().max(rs.start_time());
        let hi = fs.end_time().min(rs.end_time());
        let mut sup: f64 = 0.0;
        let times = fs
            .times()
            .iter()
            .chain(rs.times())
            .filter(|t| **t >= lo && **t <= hi);
        for &t in times {
            let x = chart.project_point(&fs.interpolate(t))?;
            sup = sup.max(x.max_distance(&rs.interpolate(t)));
        }
        let level_residual = fs
            .states()
            .iter()
            .map(|x| (chart.momentum().eval(x) - &chart.mu).amax())
            .fold(0.0, f64::max);
        intervals.push(IntervalComparison {
            index: i,
            full_interval: (fs.start_time(), fs.end_time()),
            reduced_interval: (rs.start_time(), rs.end_time()),
            mu: chart.mu.clone(),
            sup_distance: sup,
            level_residual,
        });
    }
    let impact_gaps: Vec<f64> = full
        .impacts
        .iter()
        .zip(&reduced.impacts)
        .map(|(a, b)| (a.time - b.time).abs())
        .collect();
    let max_distance = intervals.iter().map(|c| c.sup_distance).fold(0.0, f64::max);
    let max_level_residual = intervals
        .iter()
        .map(|c| c.level_residual)
        .fold(0.0, f64::max);
    let max_impact_gap = impact_gaps.iter().copied().fold(0.0, f64::max);
    Ok(ComparisonReport {
        pass: max_distance < tol_state
            && max_impact_gap < tol_time
            && max_level_residual <= LEVEL_TOL,
        intervals,
        impact_gaps,
        max_distance,
        max_impact_gap,
        max_level_residual,
        tol_state,
        tol_time,
    })
}

/// Everything produced by a full-versus-reduced run.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub full: HybridFlow,
    pub reduced: ReducedFlow,
    pub charts: Vec<LevelSetChart>,
    pub report: ComparisonReport,
}

/// Runs the full system from `x0` and the reduced system from `π_μ(x0)` with
/// the same options, then compares them. `x0` must lie on the reduced
/// system's level.
pub fn run_comparison(
    reduced: &ReducedSystem,
    x0: &PhasePoint,
    t_end: f64,
    opts: &HybridOptions,
    tol_state: f64,
    tol_time: f64,
) -> Result<Comparison> {
    let y0 = reduced.chart.project_point(x0)?;
    let lifted = reduced.chart.parametrize(y0.coords())?;
    if lifted.max_distance(x0)
        > LEVEL_TOL * (1.0 + x0.coords().iter().fold(0.0f64, |m, v| m.max(v.abs())))
    {
        return Err(Error::InvalidPoint(format!(
            "x0 is not on the level {:?}",
            reduced.mu().as_slice()
        )));
    }
    let full = crate::hybrid::run_hybrid(&reduced.full, x0, t_end, opts)?;
    let red = run_reduced_hybrid(reduced, &y0, t_end, opts)?;
    let charts = red.charts(reduced);
    let report = compare_flows(&full, &red.flow, &charts, tol_state, tol_time)?;
    Ok(Comparison {
        full,
        reduced: red,
        charts,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expression, FunctionTable, Scope};
    use crate::phase::{canonical_names, Params};

    fn pair_momentum() -> MomentumMap {
        MomentumMap::new(
            DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, -1.0, -1.0, 0.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn pair(e: f64, c: f64, kappa: f64, potential: &str) -> HybridSystem {
        let names = canonical_names(2);
        let mut fns = FunctionTable::new();
        fns.define("V", "x", potential, &[]).unwrap();
        let scope = Scope {
            variables: names.clone(),
            parameters: vec!["e".into(), "c".into(), "kappa".into()],
            functions: fns.names(),
        };
        let p = |s: &str| parse_expression(s, &scope).unwrap();
        let params: Params = [("e", e), ("c", c), ("kappa", kappa)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        HybridSystem {
            dynamics: HamiltonianSystem {
                hamiltonian: p("(p1-p2)^2/2 + V(q1-q2)"),
                ctx: Context::new(names, params, fns),
                omega: SymplecticMatrix::canonical(2),
                separable: true,
            },
            guard: Guard {
                level: p("q1 - q2 - c"),
                direction: p("p1 - p2"),
            },
            impact: ImpactMap {
                components: vec![
                    p("q1"),
                    p("q2"),
                    p("p1 - (1+e)/2*(p1-p2) + kappa"),
                    p("p2 + (1+e)/2*(p1-p2) + kappa"),
                ],
            },
        }
    }

    fn mu(a: f64, b: f64) -> DVector<f64> {
        DVector::from_column_slice(&[a, b])
    }

    fn chart(m: &DVector<f64>) -> LevelSetChart {
        build_chart(&pair_momentum(), m, &[], None, &canonical_names(2)).unwrap()
    }

    #[test]
    fn pair_chart_selection() {
        let c = chart(&mu(0.7, -0.2));
        assert_eq!(c.free_names(), vec!["q2", "p2"]);
        let bound: Vec<String> = c
            .bound_expressions()
            .into_iter()
            .map(|(n, e)| format!("{n} = {e}"))
            .collect();
        assert_eq!(bound, vec!["q1 = -mu2 - q2", "p1 = mu1 - p2"]);
        let x = c.parametrize(&[0.4, -1.1]).unwrap();
        assert_eq!(x.coords(), &[0.2 - 0.4, 0.4, 0.7 + 1.1, -1.1]);
        assert!((pair_momentum().eval(&x) - mu(0.7, -0.2)).amax() < 1e-15);
        assert_eq!(c.project(&x), vec![0.4, -1.1]);

        let zero = chart(&mu(0.0, 0.0));
        let x = zero.parametrize(&[0.3, 0.5]).unwrap();
        assert_eq!(x.coords(), &[-0.3, 0.3, -0.5, 0.5]);
    }

    #[test]
    fn explicit_selection() {
        let names = canonical_names(2);
        let c = build_chart(&pair_momentum(), &mu(1.0, 2.0), &[], Some(&[0, 2]), &names).unwrap();
        assert_eq!(c.free_names(), vec!["q1", "p1"]);
        let x = c.parametrize(&[0.5, 0.25]).unwrap();
        assert_eq!(x.coords(), &[0.5, -2.5, 0.25, 0.75]);
        assert!(matches!(
            build_chart(&pair_momentum(), &mu(0.0, 0.0), &[], Some(&[0, 1]), &names),
            Err(Error::SingularSelection(_))
        ));
        assert!(matches!(
            build_chart(&pair_momentum(), &mu(0.0, 0.0), &[], Some(&[0]), &names),
            Err(Error::SingularSelection(_))
        ));
        let iso = [DVector::from_column_slice(&[1.0, 0.0])];
        assert!(matches!(
            build_chart(&pair_momentum(), &mu(0.0, 0.0), &iso, None, &names),
            Err(Error::UnsupportedIsotropy { dim: 1 })
        ));
    }

    #[test]
    fn chart_round_trip() {
        let c = chart(&mu(-0.3, 1.7));
        let mut s = Sampler::new(11);
        for _ in 0..100 {
            let y = s.vector(2, 3.0);
            let x = c.parametrize(y.as_slice()).unwrap();
            assert_eq!(c.project(&x), y.as_slice());
            let back = c.parametrize(&c.project(&x)).unwrap();
            assert!(back.max_distance(&x) < 1e-14);
        }
    }

    #[test]
    fn pair_reduced_form_is_twice_canonical() {
        let omega = SymplecticMatrix::canonical(2);
        let c = chart(&mu(0.0, -1.0));
        let red = reduced_form(&c, &omega).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        assert_eq!(red.matrix(), &expect);
        assert!(pullback_residual(&c, &omega, &red) < 1e-14);
    }

    #[test]
    fn empty_momentum_keeps_the_form() {
        let names = canonical_names(2);
        let j = MomentumMap::new(DMatrix::zeros(0, 4), DVector::zeros(0)).unwrap();
        let c = build_chart(&j, &DVector::zeros(0), &[], None, &names).unwrap();
        let omega = SymplecticMatrix::canonical(2);
        assert_eq!(reduced_form(&c, &omega).unwrap().matrix(), omega.matrix());
    }

    #[test]
    fn isotropic_slice_is_degenerate() {
        let names = canonical_names(2);
        let j = MomentumMap::new(
            DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let c = build_chart(&j, &mu(0.0, 0.0), &[], Some(&[0, 1]), &names).unwrap();
        assert!(matches!(
            reduced_form(&c, &SymplecticMatrix::canonical(2)),
            Err(Error::DegenerateReducedForm { rank: 0, dim: 2 })
        ));
    }

    #[test]
    fn pair_reduced_hamiltonian_text() {
        let full = pair(1.0, 0.0, 0.0, "x^2/2");
        let c = chart(&mu(0.0, 0.0));
        let h = reduce_hamiltonian(&full.dynamics.hamiltonian, &c);
        assert_eq!(h.to_string(), "(mu1 - 2*p2)^2/2 + V(-mu2 - 2*q2)");
        let values: BTreeMap<String, f64> =
            [("mu1".to_string(), 0.0), ("mu2".to_string(), 0.0)].into();
        assert_eq!(
            bind_parameters(&h, &values).to_string(),
            "(0 - 2*p2)^2/2 + V(-0 - 2*q2)"
        );
    }

    #[test]
    fn free_particle_reduces_to_two_p_squared() {
        let full = pair(1.0, 0.0, 0.0, "0*x");
        let red =
            reduce_system(&full, chart(&mu(0.0, 0.0)), ClassifyOptions::default(), 0).unwrap();
        let mut s = Sampler::new(12);
        for _ in 0..20 {
            let y = PhasePoint::from_vector(&s.vector(2, 2.0)).unwrap();
            let h = red.hybrid.dynamics.energy(&y).unwrap();
            assert!((h - 2.0 * y.p()[0] * y.p()[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn reduced_hamiltonian_matches_on_level() {
        let full = pair(0.6, 0.2, 0.0, "x^2/2 + sin(x)");
        let m = mu(0.9, -0.4);
        let red = reduce_system(&full, chart(&m), ClassifyOptions::default(), 0).unwrap();
        let mut s = Sampler::new(13);
        for _ in 0..100 {
            let x = red.chart.parametrize(s.vector(2, 2.0).as_slice()).unwrap();
            let y = red.chart.project_point(&x).unwrap();
            let lhs = red.hybrid.dynamics.energy(&y).unwrap();
            let rhs = full.dynamics.energy(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_reduced_guard_and_impact() {
        let full = pair(0.5, 0.3, 0.0, "x^2/2");
        let m = mu(0.4, 0.1);
        let c = chart(&m);
        let samples = sample_guard_level(
            &pair_momentum(),
            &full.guard,
            full.ctx(),
            &m,
            50,
            2.0,
            1e-9,
            &mut Sampler::new(14),
        )
        .unwrap();
        let r = reduce_guard_impact(
            &full.guard,
            &full.impact,
            &c,
            &c,
            full.ctx(),
            &samples,
            1e-10,
        )
        .unwrap();
        assert_eq!(r.guard.level.to_string(), "-mu2 - 2*q2 - c");
        assert_eq!(r.guard.direction.to_string(), "mu1 - 2*p2");
        assert_eq!(r.impact.components[0].to_string(), "q2");
        assert_eq!(
            r.impact.components[1].to_string(),
            "p2 + (1 + e)/2*(mu1 - 2*p2) + kappa"
        );
        assert!(r.diagram_defect < 1e-12, "{}", r.diagram_defect);
        assert!(r.level_residual < 1e-12);

        // e = 1 and mu1 = 0 reflect p2
        let elastic = pair(1.0, 0.3, 0.0, "x^2/2");
        let red = reduce_system(
            &elastic,
            chart(&mu(0.0, 0.1)),
            ClassifyOptions::default(),
            0,
        )
        .unwrap();
        let y = PhasePoint::new(vec![0.2, 0.8]).unwrap();
        let post = red
            .hybrid
            .impact
            .eval(&red.hybrid.dynamics.ctx, &y)
            .unwrap();
        assert_eq!(post.coords(), &[0.2, -0.8]);
    }

    #[test]
    fn wrong_target_level_is_a_mismatch() {
        let full = pair(0.5, 0.3, 0.3, "x^2/2");
        let m = mu(0.4, 0.1);
        let samples = sample_guard_level(
            &pair_momentum(),
            &full.guard,
            full.ctx(),
            &m,
            10,
            2.0,
            1e-9,
            &mut Sampler::new(15),
        )
        .unwrap();
        let err = reduce_guard_impact(
            &full.guard,
            &full.impact,
            &chart(&m),
            &chart(&m),
            full.ctx(),
            &samples,
            1e-10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::LevelMismatch { .. }));
        let shifted = chart(&mu(1.0, 0.1));
        let ok = reduce_guard_impact(
            &full.guard,
            &full.impact,
            &chart(&m),
            &shifted,
            full.ctx(),
            &samples,
            1e-10,
        )
        .unwrap();
        assert!(ok.diagram_defect < 1e-12);
    }

    #[test]
    fn reduced_velocity_carries_the_factor_half() {
        let full = pair(1.0, 0.0, 0.0, "x^2/2");
        let red =
            reduce_system(&full, chart(&mu(0.0, 0.0)), ClassifyOptions::default(), 0).unwrap();
        // H_mu = 2 p2^2 + 2 q2^2 at mu = 0, so X = (2 p2, -2 q2)
        let y = PhasePoint::new(vec![1.0, 0.5]).unwrap();
        let v = red.hybrid.dynamics.vector_field(&y).unwrap();
        assert!(
            (v[0] - 1.0).abs() < 1e-15 && (v[1] + 2.0).abs() < 1e-15,
            "{v:?}"
        );
    }

    #[test]
    fn zero_horizon_is_a_single_point() {
        let full = pair(1.0, 0.0, 0.0, "x^2/2");
        let red =
            reduce_system(&full, chart(&mu(0.0, -1.0)), ClassifyOptions::default(), 0).unwrap();
        let x0 = PhasePoint::new(vec![1.0, 0.0, -1.0, 1.0]).unwrap();
        let cmp = run_comparison(&red, &x0, 0.0, &HybridOptions::default(), 1e-6, 1e-8).unwrap();
        assert_eq!(cmp.reduced.flow.segments.len(), 1);
        assert_eq!(cmp.reduced.flow.segments[0].len(), 1);
        assert_eq!(cmp.report.max_distance, 0.0);
        assert!(cmp.report.pass);
    }

    #[test]
    fn kicked_levels_follow_the_sequence() {
        let kappa = 0.3;
        let full = pair(1.0, 0.0, kappa, "x^2/2");
        let x0 = PhasePoint::new(vec![1.0, 0.0, -1.0, 1.0]).unwrap();
        let m0 = pair_momentum().eval(&x0);
        let red = reduce_system(&full, chart(&m0), ClassifyOptions::default(), 0).unwrap();
        let opts = HybridOptions {
            h: 1e-2,
            ..HybridOptions::default()
        };
        let cmp = run_comparison(&red, &x0, 3.0, &opts, 1e-6, 1e-8).unwrap();
        let levels = &cmp.reduced.levels;
        assert!(levels.len() >= 3);
        for (i, l) in levels.iter().enumerate() {
            assert!(
                (l[0] - (m0[0] + 2.0 * kappa * i as f64)).abs() < 1e-12,
                "{i}: {l}"
            );
            assert!((l[1] - m0[1]).abs() < 1e-12);
        }
        assert!(cmp.report.pass, "{:?}", cmp.report);
    }

    #[test]
    fn wrong_level_is_detected() {
        let full = pair(1.0, 0.0, 0.0, "x^2/2");
        let x0 = PhasePoint::new(vec![1.0, 0.0, -1.0, 1.0]).unwrap();
        let red =
            reduce_system(&full, chart(&mu(0.0, -1.0)), ClassifyOptions::default(), 0).unwrap();
        let wrong = red.at_level(&mu(0.5, -1.0));
        let opts = HybridOptions {
            h: 1e-2,
            ..HybridOptions::default()
        };
        let full_flow = crate::hybrid::run_hybrid(&full, &x0, 3.0, &opts).unwrap();
        let y0 = red.chart.project_point(&x0).unwrap();
        let red_flow = run_reduced_hybrid(&wrong, &y0, 3.0, &opts).unwrap();
        match compare_flows(
            &full_flow,
            &red_flow.flow,
            &red_flow.charts(&wrong),
            1e-6,
            1e-8,
        ) {
            Err(Error::StructureMismatch(_)) => {}
            Ok(r) => assert!(!r.pass && r.max_distance > 1e-3),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn reserved_parameter_names_are_rejected() {
        let mut full = pair(1.0, 0.0, 0.0, "x^2/2");
        full.dynamics.ctx.params.insert("mu1".into(), 0.0);
        assert!(reduce_system(&full, chart(&mu(0.0, 0.0)), ClassifyOptions::default(), 0).is_err());
        assert!(!is_reserved("mu") && !is_reserved("mux") && is_reserved("mu12"));
    }

    #[test]
    fn affine_normal_form() {
        let scope = Scope {
            variables: vec!["x".into(), "y".into()],
            parameters: vec!["a".into()],
            functions: vec![],
        };
        let e = parse_expression("3 - (x - 2*y)/2 + a + x", &scope).unwrap();
        assert_eq!(
            Affine::of(&e).unwrap().to_expr().to_string(),
            "3 + 0.5*x + y + a"
        );
        let e = parse_expression("-x - x", &scope).unwrap();
        assert_eq!(Affine::of(&e).unwrap().to_expr().to_string(), "-2*x");
        assert!(Affine::of(&parse_expression("x*y", &scope).unwrap()).is_none());
        assert_eq!(sum(vec![]).to_string(), "0");
    }
}
