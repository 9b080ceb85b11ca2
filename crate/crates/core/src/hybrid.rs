//! Simple hybrid systems: continuous Hamiltonian flow interrupted by
//! impacts on a guard surface.
//!
//! Orientation convention: the flow lives in `g > 0` and an impact fires
//! when `g` reaches zero from above while the direction expression `d` is
//! negative. Events are located on the Hermite dense output by bracketing
//! node pairs and bisecting, then the impact map is applied and
//! integration restarts from the post-impact state at the event time.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::phase::{
    Context, HamiltonianSystem, Integrator, PhasePoint, TrajectorySegment, DEFAULT_STEP,
};

pub const DEFAULT_TOL_T: f64 = 1e-10;
pub const DEFAULT_TOL_G: f64 = 1e-9;
pub const DEFAULT_MAX_IMPACTS: usize = 100_000;
pub const DEFAULT_MIN_GAP: f64 = 1e-9;

/// Switching surface `S = {g = 0}` with admissibility condition `d < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub level: Expr,
    pub direction: Expr,
}

impl Guard {
    pub fn level(&self, ctx: &Context, x: &PhasePoint) -> Result<f64> {
        ctx.eval(&self.level, x)
    }

    pub fn direction(&self, ctx: &Context, x: &PhasePoint) -> Result<f64> {
        ctx.eval(&self.direction, x)
    }
}

/// Impact map given component by component in coordinate order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactMap {
    pub components: Vec<Expr>,
}

impl ImpactMap {
    pub fn identity(coords: &[String]) -> Self {
        ImpactMap {
            components: coords.iter().map(|c| Expr::var(c.as_str())).collect(),
        }
    }

    /// Component-wise evaluation without the re-crossing check.
    pub fn eval(&self, ctx: &Context, x: &PhasePoint) -> Result<PhasePoint> {
        if self.components.len() != x.dim() {
            return Err(Error::DimensionMismatch(format!(
                "impact map has {} components for a {}-dimensional point",
                self.components.len(),
                x.dim()
            )));
        }
        let c = self
            .components
            .iter()
            .map(|e| ctx.eval(e, x))
            .collect::<Result<Vec<_>>>()?;
        PhasePoint::new(c)
    }
}

/// Applies `impact` at `x`, refusing states that would re-trigger the
/// guard immediately (`d < −tol_g` after the impact).
pub fn apply_impact(
    impact: &ImpactMap,
    guard: &Guard,
    ctx: &Context,
    x: &PhasePoint,
    tol_g: f64,
) -> Result<PhasePoint> {
    let post = impact.eval(ctx, x)?;
    let direction = guard.direction(ctx, &post)?;
    if direction < -tol_g {
        return Err(Error::ReCrossing { direction });
    }
    Ok(post)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridSystem {
    pub dynamics: HamiltonianSystem,
    pub guard: Guard,
    pub impact: ImpactMap,
}

impl HybridSystem {
    pub fn ctx(&self) -> &Context {
        &self.dynamics.ctx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOptions {
    pub h: f64,
    pub integrator: Integrator,
    pub max_impacts: usize,
    pub min_gap: f64,
    pub tol_t: f64,
    pub tol_g: f64,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            h: DEFAULT_STEP,
            integrator: Integrator::Rk4,
            max_impacts: DEFAULT_MAX_IMPACTS,
            min_gap: DEFAULT_MIN_GAP,
            tol_t: DEFAULT_TOL_T,
            tol_g: DEFAULT_TOL_G,
        }
    }
}

/// Outcome of searching a segment for a guard event.
#[derive(Debug, Clone, PartialEq)]
pub enum EventSearch {
    /// Admissible crossing at `time`.
    Crossing {
        time: f64,
        state: PhasePoint,
    },
    /// `|g| < tol_g` was reached without a bracketing sign change.
    Tangential {
        time: f64,
        level: f64,
    },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRecord {
    pub time: f64,
    pub pre: PhasePoint,
    pub post: PhasePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentialReport {
    pub time: f64,
    pub level: f64,
}

/// Hybrid flow `(Λ, 𝒥, 𝒞)`: segment `i` covers `[τᵢ, τᵢ₊₁]` and
/// `impacts[i]` joins segment `i` to segment `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridFlow {
    pub segments: Vec<TrajectorySegment>,
    pub impacts: Vec<ImpactRecord>,
    pub tangential: Vec<TangentialReport>,
}

impl HybridFlow {
    /// Index set `Λ = {0, …, N}`.
    pub fn indices(&self) -> std::ops::Range<usize> {
        0..self.segments.len()
    }

    /// Intervals `[τᵢ, τᵢ₊₁]`.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.segments
            .iter()
            .map(|s| (s.start_time(), s.end_time()))
            .collect()
    }

    pub fn impact_times(&self) -> Vec<f64> {
        self.impacts.iter().map(|r| r.time).collect()
    }

    pub fn final_state(&self) -> &PhasePoint {
        self.segments.last().expect("flow has a segment").last()
    }

    /// Lists every violated structural invariant (empty when consistent).
    pub fn violations(&self, system: &HybridSystem, opts: &HybridOptions) -> Result<Vec<String>> {
        let ctx = system.ctx();
        let mut out = Vec::new();
        if self.segments.len() != self.impacts.len() + 1 {
            out.push(format!(
                "{} segments for {} impacts",
                self.segments.len(),
                self.impacts.len()
            ));
            return Ok(out);
        }
        for (i, rec) in self.impacts.iter().enumerate() {
            let seg = &self.segments[i];
            let next = &self.segments[i + 1];
            if seg.end_time() != rec.time || next.start_time() != rec.time {
                out.push(format!(
                    "impact {i}: segment times do not meet at {}",
                    rec.time
                ));
            }
            if seg.last() != &rec.pre {
                out.push(format!(
                    "impact {i}: pre-impact state is not the segment end"
                ));
            }
            if next.first() != &rec.post {
                out.push(format!(
                    "impact {i}: post-impact state is not the next segment start"
                ));
            }
            let g = system.guard.level(ctx, &rec.pre)?;
            if g.abs() > opts.tol_g {
                out.push(format!("impact {i}: |g(pre)| = {g:e} exceeds tol_g"));
            }
            let d = system.guard.direction(ctx, &rec.pre)?;
            if !(d < 0.0) {
                out.push(format!("impact {i}: d(pre) = {d:e} is not negative"));
            }
            if system.impact.eval(ctx, &rec.pre)? != rec.post {
                out.push(format!("impact {i}: post != Delta(pre)"));
            }
            if i > 0 && rec.time - self.impacts[i - 1].time < opts.min_gap {
                out.push(format!("impact {i}: gap below min_gap"));
            }
        }
        for (i, w) in self.segments.windows(2).enumerate() {
            if w[0].start_time() > w[1].start_time() {
                out.push(format!("interval {i} is not ordered"));
            }
        }
        Ok(out)
    }
}

struct Scanner<'a> {
    ctx: &'a Context,
    guard: &'a Guard,
    tol_t: f64,
    tol_g: f64,
}

impl Scanner<'_> {
    fn level_at(&self, seg: &TrajectorySegment, i: usize, t: f64) -> Result<f64> {
        self.guard.level(self.ctx, &seg.interpolate_on(i, t))
    }

    /// Level at node `i`; a segment that starts on the guard counts as
    /// starting at `g = 0` so that it can bracket an immediate re-crossing.
    fn node_level(&self, seg: &TrajectorySegment, i: usize) -> Result<f64> {
        let g = self.guard.level(self.ctx, &seg.states()[i])?;
        Ok(if i == 0 && g.abs() <= self.tol_g {
            0.0
        } else {
            g
        })
    }

    /// Rate of change of `g` at node `i` along the stored derivative.
    fn node_slope(&self, seg: &TrajectorySegment, i: usize) -> Result<f64> {
        let grad = self.ctx.grad(&self.guard.level, &seg.states()[i])?;
        Ok(grad.iter().zip(&seg.derivs()[i]).map(|(a, b)| a * b).sum())
    }

    fn bisect(&self, seg: &TrajectorySegment, i: usize, mut lo: f64, mut hi: f64) -> Result<f64> {
        while hi - lo > self.tol_t {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.level_at(seg, i, mid)? >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Minimiser of the interpolated level inside node interval `i`
    /// (golden-section search; used when `g` dips between two positive nodes).
    fn interior_minimum(&self, seg: &TrajectorySegment, i: usize) -> Result<(f64, f64)> {
        let ts = seg.times();
        let (mut a, mut b) = (ts[i], ts[i + 1]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let mut fc = self.level_at(seg, i, c)?;
        let mut fd = self.level_at(seg, i, d)?;
        while b - a > self.tol_t {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = self.level_at(seg, i, c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = self.level_at(seg, i, d)?;
            }
        }
        let t = 0.5 * (a + b);
        Ok((t, self.level_at(seg, i, t)?))
    }

    /// Searches node interval `i` for the earliest admissible crossing.
    fn scan(&self, seg: &TrajectorySegment, i: usize) -> Result<EventSearch> {
        let g0 = self.node_level(seg, i)?;
        let g1 = self.node_level(seg, i + 1)?;
        let t0 = seg.times()[i];
        let bracket = if g0 >= 0.0 && g1 < 0.0 {
            Some(seg.times()[i + 1])
        } else if g0 >= 0.0 && g1 >= 0.0 {
            // both ends on the allowed side: look for a dip in between
            let s0 = self.node_slope(seg, i)?;
            let s1 = self.node_slope(seg, i + 1)?;
            if s0 < 0.0 && s1 > 0.0 {
                let (tm, gm) = self.interior_minimum(seg, i)?;
                if gm < -self.tol_g {
                    Some(tm)
                } else if gm <= self.tol_g {
                    return Ok(EventSearch::Tangential {
                        time: tm,
                        level: gm,
                    });
                } else {
                    None
                }
            } else {
                None
            }
        } else {
            None
        };
        if let Some(t1) = bracket {
            let t = self.bisect(seg, i, t0, t1)?;
            let x = seg.interpolate_on(i, t);
            if self.guard.direction(self.ctx, &x)? < 0.0 {
                return Ok(EventSearch::Crossing { time: t, state: x });
            }
            return Ok(EventSearch::None);
        }
        let dt = seg.times()[i + 1] - t0;
        if g1.abs() <= self.tol_g && g1 >= 0.0 && self.node_slope(seg, i + 1)? >= -self.tol_g / dt {
            return Ok(EventSearch::Tangential {
                time: seg.times()[i + 1],
                level: g1,
            });
        }
        Ok(EventSearch::None)
    }
}

/// Earliest admissible guard crossing on `segment`, located to within
/// `tol_t` on the Hermite interpolant.
pub fn locate_event(
    segment: &TrajectorySegment,
    guard: &Guard,
    ctx: &Context,
    tol_t: f64,
    tol_g: f64,
) -> Result<EventSearch> {
    let scanner = Scanner {
        ctx,
        guard,
        tol_t,
        tol_g,
    };
    let mut tangential = EventSearch::None;
    for i in 0..segment.len().saturating_sub(1) {
        match scanner.scan(segment, i)? {
            found @ EventSearch::Crossing { .. } => return Ok(found),
            t @ EventSearch::Tangential { .. } => {
                if tangential == EventSearch::None {
                    tangential = t;
                }
            }
            EventSearch::None => {}
        }
    }
    Ok(tangential)
}

/// Runs the hybrid system from `x0` on `[0, t_end]`.
pub fn run_hybrid(
    system: &HybridSystem,
    x0: &PhasePoint,
    t_end: f64,
    opts: &HybridOptions,
) -> Result<HybridFlow> {
    run_hybrid_with(system, x0, 0.0, t_end, opts, &mut |_, _| Ok(()))
}

/// Like [`run_hybrid`], starting at `t0` and calling `on_impact` after every
/// impact with the record and the mutable system, so callers can switch
/// parameters (e.g. the momentum level of a reduced chart) between
/// segments.
pub fn run_hybrid_with(
    system: &HybridSystem,
    x0: &PhasePoint,
    t0: f64,
    t_end: f64,
    opts: &HybridOptions,
    on_impact: &mut dyn FnMut(&ImpactRecord, &mut HybridSystem) -> Result<()>,
) -> Result<HybridFlow> {
    if !(opts.h > 0.0) || !opts.h.is_finite() {
        return Err(Error::Domain(format!(
            "step size must be positive, got {}",
            opts.h
        )));
    }
    if !(t_end >= t0) {
        return Err(Error::Domain(format!(
            "final time {t_end} precedes start {t0}"
        )));
    }
    let mut sys = system.clone();
    {
        let ctx = sys.ctx();
        let g = sys.guard.level(ctx, x0)?;
        if g.abs() <= opts.tol_g && sys.guard.direction(ctx, x0)? < 0.0 {
            return Err(Error::InvalidPoint(
                "initial state lies on the guard moving into it".into(),
            ));
        }
    }

    let mut flow = HybridFlow {
        segments: Vec::new(),
        impacts: Vec::new(),
        tangential: Vec::new(),
    };
    let mut x = x0.clone();
    let mut t_start = t0;
    loop {
        let mut seg = TrajectorySegment::new(t_start, x.clone(), sys.dynamics.vector_field(&x)?);
        let mut event = None;
        let mut k: u64 = 0;
        let mut t = t_start;
        while t < t_end {
            k += 1;
            let mut t_next = t_start + k as f64 * opts.h;
            if t_next > t_end - 1e-9 * opts.h {
                t_next = t_end;
            }
            let y = opts
                .integrator
                .step(&sys.dynamics, seg.last(), t_next - t)?;
            let dy = sys.dynamics.vector_field(&y)?;
            seg.push(t_next, y, dy)?;
            t = t_next;

            let scanner = Scanner {
                ctx: sys.ctx(),
                guard: &sys.guard,
                tol_t: opts.tol_t,
                tol_g: opts.tol_g,
            };
            let i = seg.len() - 2;
            match scanner.scan(&seg, i)? {
                EventSearch::Crossing { time, state } => {
                    seg.truncate(i);
                    let dx = sys.dynamics.vector_field(&state)?;
                    seg.push(time, state, dx)?;
                    event = Some(time);
                    break;
                }
                EventSearch::Tangential { time, level } => {
                    let fresh = flow
                        .tangential
                        .last()
                        .is_none_or(|r| (r.time - time).abs() > opts.h);
                    if fresh {
                        flow.tangential.push(TangentialReport { time, level });
                    }
                }
                EventSearch::None => {}
            }
        }

        let pre = seg.last().clone();
        flow.segments.push(seg);
        let Some(time) = event else {
            return Ok(flow);
        };

        if let Some(prev) = flow.impacts.last() {
            if time - prev.time < opts.min_gap {
                return Err(Error::ZenoSuspected {
                    time,
                    reason: format!(
                        "impacts at {} and {time} are closer than min_gap {}",
                        prev.time, opts.min_gap
                    ),
                });
            }
        }
        if flow.impacts.len() >= opts.max_impacts {
            return Err(Error::ZenoSuspected {
                time,
                reason: format!("more than {} impacts", opts.max_impacts),
            });
        }
        let post = sys.impact.eval(sys.ctx(), &pre)?;
        let record = ImpactRecord {
            time,
            pre,
            post: post.clone(),
        };
        // the hook may switch to the post-impact system, so admissibility of
        // the new state is judged there
        on_impact(&record, &mut sys)?;
        let direction = sys.guard.direction(sys.ctx(), &post)?;
        if direction < -opts.tol_g {
            return Err(Error::ReCrossing { direction });
        }
        flow.impacts.push(record);
        x = post;
        t_start = time;
    }
}
