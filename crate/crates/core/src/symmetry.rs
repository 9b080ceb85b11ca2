//! Translation symmetries `G = ℝᵏ` acting by `Φ_g(x) = x + A g`, affine
//! momentum maps `J(x) = B x + b`, the non-equivariance cocycle and the
//! hybrid compatibility predicates.
//!
//! Since `G` is abelian the coadjoint action is trivial, so the cocycle is
//! simply `σ(g) = J(Φ_g(x)) − J(x)` and the affine action on `𝔤* ≅ ℝᵏ` is
//! `Ψ_g(μ) = μ + σ(g)`. The momentum-map identity `ω(ξ_D, ·) = d⟨J, ξ⟩`
//! reads `Ωᵀ A_a = ∇J_a` with `ω(X, Y) = Xᵀ Ω Y`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid::{Guard, ImpactMap};
use crate::phase::{Context, PhasePoint, SymplecticMatrix};

/// Default number of guard samples per momentum level.
pub const DEFAULT_LEVEL_SAMPLES: usize = 50;

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let largest = svd.singular_values.max();
    if largest == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| **s > RANK_TOL * largest)
        .count()
}

/// Orthonormal basis of the nullspace of `m` (columns of the result).
pub fn nullspace(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 || m.amax() == 0.0 {
        return DMatrix::identity(cols, cols);
    }
    // pad to at least square so the full right-singular basis is available
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.rows_mut(0, m.nrows()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let largest = svd.singular_values.max();
    let null: Vec<usize> = (0..cols)
        .filter(|&i| svd.singular_values[i] <= RANK_TOL * largest)
        .collect();
    let mut out = DMatrix::zeros(cols, null.len());
    for (j, &i) in null.iter().enumerate() {
        let mut v: DVector<f64> = v_t.row(i).transpose();
        // sign convention: first significant entry positive
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        out.set_column(j, &v);
    }
    out
}

/// Element of the abelian group `ℝᵏ`; composition is addition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement(pub DVector<f64>);

impl GroupElement {
    pub fn identity(k: usize) -> Self {
        GroupElement(DVector::zeros(k))
    }

    pub fn from_slice(g: &[f64]) -> Self {
        GroupElement(DVector::from_column_slice(g))
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement(&self.0 + &other.0)
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement(-&self.0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `Φ_g(x) = x + A g`; the columns of `A` are the infinitesimal generators.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationAction {
    pub generators: DMatrix<f64>,
}

impl TranslationAction {
    pub fn new(generators: DMatrix<f64>) -> Self {
        TranslationAction { generators }
    }

    pub fn phase_dim(&self) -> usize {
        self.generators.nrows()
    }

    pub fn group_dim(&self) -> usize {
        self.generators.ncols()
    }

    pub fn is_free(&self) -> bool {
        rank(&self.generators) == self.group_dim()
    }

    pub fn act(&self, g: &GroupElement, x: &PhasePoint) -> Result<PhasePoint> {
        if g.dim() != self.group_dim() || x.dim() != self.phase_dim() {
            return Err(Error::DimensionMismatch(format!(
                "action is {}x{}, got g in R^{} and x in R^{}",
                self.phase_dim(),
                self.group_dim(),
                g.dim(),
                x.dim()
            )));
        }
        PhasePoint::from_vector(&(x.to_vector() + &self.generators * &g.0))
    }

    /// Jacobian of `Φ_g`; the identity for every translation.
    pub fn jacobian(&self, _g: &GroupElement) -> DMatrix<f64> {
        DMatrix::identity(self.phase_dim(), self.phase_dim())
    }
}

/// Affine-linear momentum map `J(x) = B x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl MomentumMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "momentum offset has {} entries for {} rows",
                offset.len(),
                matrix.nrows()
            )));
        }
        Ok(MomentumMap { matrix, offset })
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn phase_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn eval(&self, x: &PhasePoint) -> DVector<f64> {
        &self.matrix * x.to_vector() + &self.offset
    }

    /// Component `a` as an expression over the given coordinate names.
    pub fn component_expr(&self, a: usize, coords: &[String]) -> Expr {
        let mut terms: Vec<Expr> = Vec::new();
        for (j, name) in coords.iter().enumerate() {
            let c = self.matrix[(a, j)];
            if c != 0.0 {
                terms.push(crate::reduction::scaled(c, Expr::var(name.as_str())));
            }
        }
        if self.offset[a] != 0.0 || terms.is_empty() {
            terms.push(Expr::constant(self.offset[a]));
        }
        crate::reduction::sum(terms)
    }

    /// Every value is regular iff `B` has full row rank.
    pub fn is_submersion(&self) -> bool {
        rank(&self.matrix) == self.k()
    }
}

/// Linear cocycle `σ(g) = C g` with its constancy certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Cocycle {
    pub matrix: DMatrix<f64>,
    /// Largest spread of `J(Φ_g(x)) − J(x)` over sample points.
    pub spread: f64,
    /// Largest residual of the linear fit over the probes.
    pub fit_residual: f64,
}

impl Cocycle {
    pub fn eval(&self, g: &GroupElement) -> DVector<f64> {
        &self.matrix * &g.0
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.amax() == 0.0
    }
}

/// Seeded sampler used by every randomized check.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn vector(&mut self, dim: usize, radius: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| self.uniform(-radius, radius))
    }

    /// `count` points uniform in `[−radius, radius]^dim`.
    pub fn points(&mut self, dim: usize, count: usize, radius: f64) -> Vec<PhasePoint> {
        (0..count)
            .map(|_| PhasePoint::from_vector(&self.vector(dim, radius)).expect("finite sample"))
            .collect()
    }

    pub fn group_elements(&mut self, k: usize, count: usize, radius: f64) -> Vec<GroupElement> {
        (0..count)
            .map(|_| GroupElement(self.vector(k, radius)))
            .collect()
    }
}

/// `max ‖Mᵀ Ω M − Ω‖∞` over the probes, with `M` the Jacobian of `Φ_g`.
pub fn check_symplectic_action(
    action: &TranslationAction,
    omega: &SymplecticMatrix,
    samples: &[PhasePoint],
    probes: &[GroupElement],
) -> f64 {
    let mut worst: f64 = 0.0;
    for g in probes {
        let m = action.jacobian(g);
        // Jacobian is point-independent for translations
        for _x in samples.iter().take(1) {
            worst = worst.max(omega.defect(&m));
        }
    }
    worst
}

/// `max_{a,x} ‖Ωᵀ A_a − ∇J_a(x)‖∞`; zero iff `J` is a momentum map for `Φ`.
pub fn check_momentum_map(
    momentum: &MomentumMap,
    action: &TranslationAction,
    omega: &SymplecticMatrix,
    samples: &[PhasePoint],
) -> Result<f64> {
    let d = omega.dim();
    if action.phase_dim() != d || momentum.phase_dim() != d || momentum.k() != action.group_dim() {
        return Err(Error::DimensionMismatch(format!(
            "Omega is {d}x{d}, action is {}x{}, momentum map is {}x{}",
            action.phase_dim(),
            action.group_dim(),
            momentum.k(),
            momentum.phase_dim()
        )));
    }
    let contracted = omega.matrix().transpose() * &action.generators;
    let mut worst: f64 = 0.0;
    for x in samples {
        if x.dim() != d {
            return Err(Error::DimensionMismatch("sample dimension".into()));
        }
        for a in 0..momentum.k() {
            // ∇J_a is the a-th row of B at every point
            let grad = momentum.matrix.row(a).transpose();
            worst = worst.max((contracted.column(a) - grad).amax());
        }
    }
    Ok(worst)
}

/// Samples `σ(g) = J(Φ_g(x)) − J(x)`, certifies independence of `x` within
/// `tol` and fits the linear matrix `C` from the probes.
pub fn compute_cocycle(
    momentum: &MomentumMap,
    action: &TranslationAction,
    probes: &[GroupElement],
    samples: &[PhasePoint],
    tol: f64,
) -> Result<Cocycle> {
    let k = action.group_dim();
    if samples.len() < 2 {
        return Err(Error::DimensionMismatch(
            "cocycle needs at least two sample points".into(),
        ));
    }
    if probes.is_empty() {
        return Err(Error::DimensionMismatch(
            "cocycle needs probe group elements".into(),
        ));
    }
    let mut g_cols = DMatrix::zeros(k, probes.len());
    let mut s_cols = DMatrix::zeros(momentum.k(), probes.len());
    let mut spread: f64 = 0.0;
    for (j, g) in probes.iter().enumerate() {
        let mut first: Option<DVector<f64>> = None;
        let mut lo = DVector::from_element(momentum.k(), f64::INFINITY);
        let mut hi = DVector::from_element(momentum.k(), f64::NEG_INFINITY);
        for x in samples {
            let s = momentum.eval(&action.act(g, x)?) - momentum.eval(x);
            lo = lo.inf(&s);
            hi = hi.sup(&s);
            first.get_or_insert(s);
        }
        spread = spread.max((hi - lo).amax());
        g_cols.set_column(j, &g.0);
        s_cols.set_column(j, &first.expect("nonempty samples"));
    }
    if spread > tol {
        return Err(Error::NotConstant { spread, tol });
    }
    if rank(&g_cols) < k {
        return Err(Error::DimensionMismatch(
            "probes do not span the group".into(),
        ));
    }
    let pinv = g_cols
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let matrix = &s_cols * pinv;
    let fit_residual = (&matrix * &g_cols - &s_cols).amax();
    Ok(Cocycle {
        matrix,
        spread,
        fit_residual,
    })
}

/// `Ψ_g(μ) = Ad*_{g⁻¹} μ + σ(g) = μ + C g`.
pub fn affine_action(mu: &DVector<f64>, g: &GroupElement, sigma: &Cocycle) -> Result<DVector<f64>> {
    if mu.len() != sigma.matrix.nrows() || g.dim() != sigma.matrix.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "mu in R^{}, g in R^{}, cocycle is {}x{}",
            mu.len(),
            g.dim(),
            sigma.matrix.nrows(),
            sigma.matrix.ncols()
        )));
    }
    Ok(mu + sigma.eval(g))
}

/// Orthonormal basis of the isotropy algebra `{g : Ψ_g(μ) = μ} = ker C`.
/// The condition does not involve `μ` for translation actions.
pub fn isotropy_basis(sigma: &Cocycle, _mu: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = nullspace(&sigma.matrix);
    n.column_iter().map(|c| c.into_owned()).collect()
}

/// `max ‖H(Φ_g(x)) − H(x)‖` over samples and probes.
pub fn invariance_defect(
    f: &Expr,
    ctx: &Context,
    action: &TranslationAction,
    samples: &[PhasePoint],
    probes: &[GroupElement],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in samples {
        let base = ctx.eval(f, x)?;
        for g in probes {
            worst = worst.max((ctx.eval(f, &action.act(g, x)?)? - base).abs());
        }
    }
    Ok(worst)
}

/// `max ‖Δ(Φ_g(x)) − Φ_g(Δ(x))‖∞` over guard samples and probes; fails with
/// [`Error::TangencyViolation`] if some `Φ_g` moves a sample off the guard.
pub fn check_hybrid_action(
    action: &TranslationAction,
    guard: &Guard,
    impact: &ImpactMap,
    ctx: &Context,
    samples: &[PhasePoint],
    probes: &[GroupElement],
    tol_g: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in samples {
        let gx = guard.level(ctx, x)?;
        if gx.abs() > tol_g {
            return Err(Error::InvalidPoint(format!(
                "sample is off the guard by {gx:e}"
            )));
        }
        let dx = impact.eval(ctx, x)?;
        for g in probes {
            let moved = action.act(g, x)?;
            let residual = guard.level(ctx, &moved)?;
            if residual.abs() > tol_g {
                return Err(Error::TangencyViolation { residual });
            }
            let lhs = impact.eval(ctx, &moved)?;
            let rhs = action.act(g, &dx)?;
            worst = worst.max(lhs.max_distance(&rhs));
        }
    }
    Ok(worst)
}

/// Draws points of `S ∩ J⁻¹(μ)` with `d < 0`: a particular solution of
/// `B x = μ − b` plus random offsets in `ker B`, projected onto `g = 0`
/// along `ker B` by Newton steps.
pub fn sample_guard_level(
    momentum: &MomentumMap,
    guard: &Guard,
    ctx: &Context,
    mu: &DVector<f64>,
    count: usize,
    radius: f64,
    tol_g: f64,
    sampler: &mut Sampler,
) -> Result<Vec<PhasePoint>> {
    let b = &momentum.matrix;
    let pinv = b
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let particular = &pinv * (mu - &momentum.offset);
    let kernel = nullspace(b);
    let mut out = Vec::with_capacity(count);
    let max_attempts = count.max(1) * 50;
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let y = sampler.vector(kernel.ncols(), radius);
        let mut x = PhasePoint::from_vector(&(&particular + &kernel * y))?;
        let mut on_guard = false;
        for _ in 0..30 {
            let (g, grad) = ctx.value_and_grad(&guard.level, &x)?;
            if g.abs() <= 0.01 * tol_g {
                on_guard = true;
                break;
            }
            let grad = DVector::from_column_slice(&grad);
            let dir = &kernel * (kernel.transpose() * &grad);
            let slope = grad.dot(&dir);
            if slope.abs() < 1e-14 {
                break;
            }
            x = PhasePoint::from_vector(&(x.to_vector() - dir * (g / slope)))?;
        }
        if on_guard && guard.direction(ctx, &x)? < 0.0 {
            out.push(x);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyLevelSet {
            mu: mu.iter().copied().collect(),
        });
    }
    Ok(out)
}

/// Verdict of the level-set test `Δ(S ∩ J⁻¹(μ₋)) ⊂ J⁻¹(μ₊)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentumVerdict {
    /// `μ₊ = μ₋`: `J` is a hybrid momentum map at this level.
    Hybrid,
    /// The impact lands on the single level `μ₊ ≠ μ₋`.
    Generalized { mu_plus: DVector<f64> },
    /// The image is spread over several levels.
    Fails { spread: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelClassification {
    pub mu_minus: DVector<f64>,
    pub verdict: MomentumVerdict,
    /// `max |J(Δ(x)) − μ₋|∞` over the samples.
    pub deviation: f64,
    /// `max |J(Δ(x)) − J(Δ(x₀))|∞` over the samples.
    pub spread: f64,
    pub samples: usize,
}

impl LevelClassification {
    /// The post-impact level, `μ₋` itself in the hybrid case.
    pub fn mu_plus(&self) -> Option<DVector<f64>> {
        match &self.verdict {
            MomentumVerdict::Hybrid => Some(self.mu_minus.clone()),
            MomentumVerdict::Generalized { mu_plus } => Some(mu_plus.clone()),
            MomentumVerdict::Fails { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub samples: usize,
    pub radius: f64,
    pub tol: f64,
    pub tol_g: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            samples: DEFAULT_LEVEL_SAMPLES,
            radius: 2.0,
            tol: 1e-10,
            tol_g: crate::hybrid::DEFAULT_TOL_G,
        }
    }
}

/// Checks that `μ` is a regular value of `J` and of `J|_S` at the samples.
pub fn check_hybrid_regular(
    momentum: &MomentumMap,
    guard: &Guard,
    ctx: &Context,
    mu: &DVector<f64>,
    samples: &[PhasePoint],
) -> Result<()> {
    let label = format!("{:?}", mu.as_slice());
    if !momentum.is_submersion() {
        return Err(Error::NotRegular(format!("mu = {label} of J (rank B < k)")));
    }
    let k = momentum.k();
    for x in samples {
        let grad = ctx.grad(&guard.level, x)?;
        let mut stacked = DMatrix::zeros(k + 1, momentum.phase_dim());
        stacked.rows_mut(0, k).copy_from(&momentum.matrix);
        stacked.set_row(k, &DVector::from_column_slice(&grad).transpose());
        if rank(&stacked) < k + 1 {
            return Err(Error::NotRegular(format!(
                "mu = {label} of J restricted to the guard"
            )));
        }
    }
    Ok(())
}

/// Classifies each level `μ₋` as hybrid, generalized (with its `μ₊`) or
/// failing by mapping guard samples through the impact.
pub fn classify_hybrid_momentum(
    momentum: &MomentumMap,
    guard: &Guard,
    impact: &ImpactMap,
    ctx: &Context,
    mu_list: &[DVector<f64>],
    opts: &ClassifyOptions,
    sampler: &mut Sampler,
) -> Result<Vec<LevelClassification>> {
    mu_list
        .iter()
        .map(|mu| {
            if mu.len() != momentum.k() {
                return Err(Error::DimensionMismatch(format!(
                    "mu has {} entries, J has {} components",
                    mu.len(),
                    momentum.k()
                )));
            }
            if !momentum.is_submersion() {
                return Err(Error::NotRegular(format!(
                    "mu = {:?} of J (rank B < k)",
                    mu.as_slice()
                )));
            }
            let samples = sample_guard_level(
                momentum,
                guard,
                ctx,
                mu,
                opts.samples,
                opts.radius,
                opts.tol_g,
                sampler,
            )?;
            check_hybrid_regular(momentum, guard, ctx, mu, &samples)?;
            classify_samples(momentum, impact, ctx, mu, &samples, opts.tol)
        })
        .collect()
}

/// Verdict for one level from already drawn guard samples.
pub fn classify_samples(
    momentum: &MomentumMap,
    impact: &ImpactMap,
    ctx: &Context,
    mu: &DVector<f64>,
    samples: &[PhasePoint],
    tol: f64,
) -> Result<LevelClassification> {
    let images = samples
        .iter()
        .map(|x| Ok(momentum.eval(&impact.eval(ctx, x)?)))
        .collect::<Result<Vec<_>>>()?;
    let deviation = images.iter().map(|j| (j - mu).amax()).fold(0.0, f64::max);
    let spread = images
        .iter()
        .map(|j| (j - &images[0]).amax())
        .fold(0.0, f64::max);
    let verdict = if deviation <= tol {
        MomentumVerdict::Hybrid
    } else if spread <= tol {
        let mean = images
            .iter()
            .fold(DVector::zeros(mu.len()), |acc, j| acc + j)
            / images.len() as f64;
        MomentumVerdict::Generalized { mu_plus: mean }
    } else {
        MomentumVerdict::Fails { spread }
    };
    Ok(LevelClassification {
        mu_minus: mu.clone(),
        verdict,
        deviation,
        spread,
        samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expression, FunctionTable, Scope};
    use crate::phase::{canonical_names, Params};

    fn pair_action() -> TranslationAction {
        TranslationAction::new(DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        ))
    }

    fn pair_momentum() -> MomentumMap {
        MomentumMap::new(
            DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, -1.0, -1.0, 0.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    struct Pair {
        ctx: Context,
        guard: Guard,
        impact: ImpactMap,
        scope: Scope,
    }

    fn pair(impact: [&str; 4]) -> Pair {
        let names = canonical_names(2);
        let mut fns = FunctionTable::new();
        fns.define("V", "x", "x^2/2", &[]).unwrap();
        let scope = Scope {
            variables: names.clone(),
            parameters: vec!["e".into(), "c".into(), "kappa".into()],
            functions: fns.names(),
        };
        let p = |s: &str| parse_expression(s, &scope).unwrap();
        let params: Params = [("e", 0.7), ("c", 0.3), ("kappa", 0.3)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Pair {
            guard: Guard {
                level: p("q1 - q2 - c"),
                direction: p("p1 - p2"),
            },
            impact: ImpactMap {
                components: impact.iter().map(|s| p(s)).collect(),
            },
            ctx: Context::new(names, params, fns),
            scope,
        }
    }

    const PAIR_IMPACT: [&str; 4] = ["q1", "q2", "p1 - (1+e)/2*(p1-p2)", "p2 + (1+e)/2*(p1-p2)"];

    #[test]
    fn translations_are_symplectic() {
        let omega = SymplecticMatrix::canonical(2);
        let mut s = Sampler::new(0);
        let samples = s.points(4, 5, 2.0);
        let probes = s.group_elements(2, 5, 2.0);
        assert_eq!(
            check_symplectic_action(&pair_action(), &omega, &samples, &probes),
            0.0
        );
        let zero = TranslationAction::new(DMatrix::zeros(4, 2));
        assert_eq!(
            check_symplectic_action(&zero, &omega, &samples, &probes),
            0.0
        );
        // a scaling map is not symplectic
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 0.5, 1.0, 1.0]));
        assert!(omega.defect(&m) > 0.0);
    }

    #[test]
    fn pair_momentum_map_identity() {
        let omega = SymplecticMatrix::canonical(2);
        let samples = Sampler::new(1).points(4, 10, 2.0);
        let d = check_momentum_map(&pair_momentum(), &pair_action(), &omega, &samples).unwrap();
        assert!(d < 1e-14);
        let mut neg = pair_momentum();
        neg.matrix = -neg.matrix;
        let d = check_momentum_map(&neg, &pair_action(), &omega, &samples).unwrap();
        assert!(d >= 2.0);
        let zero_a = TranslationAction::new(DMatrix::zeros(4, 2));
        let zero_j = MomentumMap::new(DMatrix::zeros(2, 4), DVector::zeros(2)).unwrap();
        assert_eq!(
            check_momentum_map(&zero_j, &zero_a, &omega, &samples).unwrap(),
            0.0
        );
        let bad = MomentumMap::new(DMatrix::zeros(3, 4), DVector::zeros(3)).unwrap();
        assert!(matches!(
            check_momentum_map(&bad, &pair_action(), &omega, &samples),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pair_cocycle() {
        let mut s = Sampler::new(2);
        let samples = s.points(4, 20, 2.0);
        let probes = s.group_elements(2, 4, 2.0);
        let c =
            compute_cocycle(&pair_momentum(), &pair_action(), &probes, &samples, 1e-12).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        assert!((&c.matrix - &expect).amax() < 1e-12);
        assert!(c.spread < 1e-12);
        let g = GroupElement::from_slice(&[0.4, -1.5]);
        let s = c.eval(&g);
        assert!((s[0] - 2.0 * -1.5).abs() < 1e-12 && (s[1] + 2.0 * 0.4).abs() < 1e-12);
        assert!(c.eval(&GroupElement::identity(2)).amax() == 0.0);
    }

    #[test]
    fn cotangent_lift_is_equivariant() {
        // q-translations with J = momentum: B A = 0 so sigma vanishes
        let a = TranslationAction::new(DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        ));
        let j = MomentumMap::new(
            DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let mut s = Sampler::new(3);
        let samples = s.points(4, 10, 2.0);
        let probes = s.group_elements(2, 3, 2.0);
        let c = compute_cocycle(&j, &a, &probes, &samples, 1e-12).unwrap();
        assert!(c.is_zero());
        let omega = SymplecticMatrix::canonical(2);
        assert_eq!(check_momentum_map(&j, &a, &omega, &samples).unwrap(), 0.0);
    }

    #[test]
    fn non_constant_cocycle_is_rejected() {
        // an affine J always has an x-independent cocycle, so only a negative
        // tolerance can trip the certificate; it must report the spread
        let mut s = Sampler::new(4);
        let probes = s.group_elements(2, 3, 2.0);
        let samples = s.points(4, 10, 2.0);
        match compute_cocycle(&pair_momentum(), &pair_action(), &probes, &samples, -1.0) {
            Err(Error::NotConstant { spread, tol }) => {
                assert!(spread < 1e-12);
                assert_eq!(tol, -1.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            compute_cocycle(
                &pair_momentum(),
                &pair_action(),
                &probes,
                &samples[..1],
                1e-12
            ),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn affine_action_examples() {
        let c = Cocycle {
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]),
            spread: 0.0,
            fit_residual: 0.0,
        };
        let mu = DVector::from_column_slice(&[1.0, 2.0]);
        assert_eq!(
            affine_action(&mu, &GroupElement::identity(2), &c).unwrap(),
            mu
        );
        let out = affine_action(&mu, &GroupElement::from_slice(&[1.0, 0.0]), &c).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0]);
        assert!(affine_action(&DVector::zeros(3), &GroupElement::identity(2), &c).is_err());
    }

    #[test]
    fn isotropy_examples() {
        let mk = |m: &[f64]| Cocycle {
            matrix: DMatrix::from_row_slice(2, 2, m),
            spread: 0.0,
            fit_residual: 0.0,
        };
        let mu = DVector::from_column_slice(&[0.3, -1.0]);
        assert!(isotropy_basis(&mk(&[0.0, 2.0, -2.0, 0.0]), &mu).is_empty());
        let full = isotropy_basis(&mk(&[0.0; 4]), &mu);
        assert_eq!(full.len(), 2);
        let one = isotropy_basis(&mk(&[0.0, 2.0, 0.0, 0.0]), &mu);
        assert_eq!(one.len(), 1);
        assert!((&one[0] - DVector::from_column_slice(&[1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn pair_hybrid_action() {
        let sys = pair(PAIR_IMPACT);
        let momentum = pair_momentum();
        let mut s = Sampler::new(5);
        let mu = DVector::from_column_slice(&[0.2, -0.4]);
        let samples =
            sample_guard_level(&momentum, &sys.guard, &sys.ctx, &mu, 20, 2.0, 1e-9, &mut s)
                .unwrap();
        let probes = s.group_elements(2, 5, 2.0);
        let d = check_hybrid_action(
            &pair_action(),
            &sys.guard,
            &sys.impact,
            &sys.ctx,
            &samples,
            &probes,
            1e-9,
        )
        .unwrap();
        assert!(d < 1e-13, "{d}");

        let id = ImpactMap::identity(&sys.ctx.coords);
        let d = check_hybrid_action(
            &pair_action(),
            &sys.guard,
            &id,
            &sys.ctx,
            &samples,
            &probes,
            1e-9,
        )
        .unwrap();
        assert_eq!(d, 0.0);

        let bent = pair([
            "q1 + 0.1*q1^2",
            "q2",
            "p1 - (1+e)/2*(p1-p2)",
            "p2 + (1+e)/2*(p1-p2)",
        ]);
        let d = check_hybrid_action(
            &pair_action(),
            &bent.guard,
            &bent.impact,
            &bent.ctx,
            &samples,
            &probes,
            1e-9,
        )
        .unwrap();
        assert!(d > 1e-3);

        // an action moving q1 alone does not preserve q1 - q2 = c
        let skew = TranslationAction::new(DMatrix::from_row_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]));
        let probes = vec![GroupElement::from_slice(&[0.5])];
        assert!(matches!(
            check_hybrid_action(
                &skew,
                &sys.guard,
                &sys.impact,
                &sys.ctx,
                &samples,
                &probes,
                1e-9
            ),
            Err(Error::TangencyViolation { .. })
        ));
    }

    #[test]
    fn guard_samples_lie_on_the_level() {
        let sys = pair(PAIR_IMPACT);
        let momentum = pair_momentum();
        let mu = DVector::from_column_slice(&[1.5, 0.25]);
        let samples = sample_guard_level(
            &momentum,
            &sys.guard,
            &sys.ctx,
            &mu,
            50,
            2.0,
            1e-9,
            &mut Sampler::new(6),
        )
        .unwrap();
        assert_eq!(samples.len(), 50);
        for x in &samples {
            assert!((momentum.eval(x) - &mu).amax() < 1e-13);
            assert!(sys.guard.level(&sys.ctx, x).unwrap().abs() < 1e-11);
            assert!(sys.guard.direction(&sys.ctx, x).unwrap() < 0.0);
        }
    }

    #[test]
    fn classification_verdicts() {
        let opts = ClassifyOptions::default();
        let mus: Vec<_> = [[0.0, 0.0], [1.0, -2.0], [-0.5, 0.7]]
            .iter()
            .map(|m| DVector::from_column_slice(m))
            .collect();

        let sys = pair(PAIR_IMPACT);
        let out = classify_hybrid_momentum(
            &pair_momentum(),
            &sys.guard,
            &sys.impact,
            &sys.ctx,
            &mus,
            &opts,
            &mut Sampler::new(7),
        )
        .unwrap();
        assert!(out.iter().all(|c| c.verdict == MomentumVerdict::Hybrid));

        let kicked = pair([
            "q1",
            "q2",
            "p1 - (1+e)/2*(p1-p2) + kappa",
            "p2 + (1+e)/2*(p1-p2) + kappa",
        ]);
        let out = classify_hybrid_momentum(
            &pair_momentum(),
            &kicked.guard,
            &kicked.impact,
            &kicked.ctx,
            &mus,
            &opts,
            &mut Sampler::new(7),
        )
        .unwrap();
        for c in &out {
            let plus = c.mu_plus().unwrap();
            let shift = plus - &c.mu_minus;
            assert!(
                (shift[0] - 0.6).abs() < 1e-12 && shift[1].abs() < 1e-12,
                "{shift}"
            );
            assert!(matches!(c.verdict, MomentumVerdict::Generalized { .. }));
        }

        let noisy = pair([
            "q1",
            "q2",
            "p1 - (1+e)/2*(p1-p2) + 0.1*sin(3*p1)",
            "p2 + (1+e)/2*(p1-p2)",
        ]);
        let out = classify_hybrid_momentum(
            &pair_momentum(),
            &noisy.guard,
            &noisy.impact,
            &noisy.ctx,
            &mus,
            &opts,
            &mut Sampler::new(7),
        )
        .unwrap();
        assert!(out
            .iter()
            .all(|c| matches!(c.verdict, MomentumVerdict::Fails { .. })));
        let _ = &noisy.scope;
    }

    #[test]
    fn singular_levels_are_reported() {
        let sys = pair(PAIR_IMPACT);
        let degenerate = MomentumMap::new(
            DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let mus = vec![DVector::from_column_slice(&[0.0, 0.0])];
        let err = classify_hybrid_momentum(
            &degenerate,
            &sys.guard,
            &sys.impact,
            &sys.ctx,
            &mus,
            &ClassifyOptions::default(),
            &mut Sampler::new(8),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotRegular(_)));
    }

    #[test]
    fn pair_hamiltonian_is_invariant() {
        let sys = pair(PAIR_IMPACT);
        let h = parse_expression("(p1-p2)^2/2 + V(q1-q2)", &sys.scope).unwrap();
        let mut s = Sampler::new(9);
        let samples = s.points(4, 100, 2.0);
        let probes = s.group_elements(2, 5, 2.0);
        assert!(
            invariance_defect(&h, &sys.ctx, &pair_action(), &samples, &probes).unwrap() < 1e-12
        );
    }
}
