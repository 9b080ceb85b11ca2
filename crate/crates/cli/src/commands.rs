//! The four subcommands as library functions returning a [`Report`] plus
//! trajectory tables, so that the binary only handles I/O.

use hybred_core::hybrid::run_hybrid;
use hybred_core::phase::{Integrator, PhasePoint};
use hybred_core::reduction::{
    bind_parameters, build_chart, compare_flows, mu_name, pullback_residual, reduce_guard_impact,
    reduce_system, run_reduced_hybrid, LevelSetChart, ReducedSystem, LEVEL_TOL,
};
use hybred_core::symmetry::{
    affine_action, check_hybrid_action, check_momentum_map, check_symplectic_action,
    classify_samples, compute_cocycle, invariance_defect, isotropy_basis, sample_guard_level,
    ClassifyOptions, Cocycle, MomentumVerdict, Sampler,
};
use hybred_core::Error;
use nalgebra::DVector;
use serde_json::{json, Value};
use thiserror::Error;

use crate::report::{matrix_json, vector_json, Check, Report};
use crate::spec::{SpecError, SystemSpec};
use crate::trajectory::Table;

/// Sampling radius for phase points, group elements and level offsets.
const RADIUS: f64 = 2.0;
/// Group elements per symmetry check.
const PROBES: usize = 10;
/// Residual allowed for the reduced-form pullback identity.
const PULLBACK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ZENO: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) | CliError::Usage(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Core(e) => match e {
                Error::ZenoSuspected { .. } => EXIT_ZENO,
                Error::UnsupportedIsotropy { .. } => EXIT_UNSUPPORTED,
                Error::Syntax { .. }
                | Error::UnknownName { .. }
                | Error::DimensionMismatch(_)
                | Error::InvalidPoint(_)
                | Error::NotSeparable => EXIT_INPUT,
                _ => EXIT_FAIL,
            },
        }
    }
}

/// Command-line overrides of spec values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub x0: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub h: Option<f64>,
    pub mu: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub tol_state: Option<f64>,
    pub tol_time: Option<f64>,
    pub integrator: Option<Integrator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    /// File name and contents of every trajectory produced.
    pub tables: Vec<(String, Table)>,
    pub code: i32,
}

impl Outcome {
    fn new(report: Report, tables: Vec<(String, Table)>) -> Self {
        let code = if report.pass { EXIT_PASS } else { EXIT_FAIL };
        Outcome {
            report,
            tables,
            code,
        }
    }
}

fn seed(spec: &SystemSpec, ov: &Overrides) -> u64 {
    ov.seed.unwrap_or(spec.raw.seed)
}

fn initial_state(spec: &SystemSpec, ov: &Overrides) -> Result<PhasePoint, CliError> {
    match &ov.x0 {
        Some(x) if x.len() != 2 * spec.n => Err(CliError::Usage(format!(
            "--x0 needs {} entries",
            2 * spec.n
        ))),
        Some(x) => PhasePoint::new(x.clone()).map_err(CliError::Core),
        None => spec.initial_conditions.first().cloned().ok_or_else(|| {
            CliError::Usage("no --x0 given and the spec has no initial_conditions".into())
        }),
    }
}

fn horizon(spec: &SystemSpec, ov: &Overrides) -> Result<(f64, f64), CliError> {
    let t = ov.t_end.unwrap_or(spec.raw.integrator.t_end);
    let h = ov.h.unwrap_or(spec.raw.integrator.h);
    if !(t >= 0.0 && t.is_finite()) {
        return Err(CliError::Usage("--T must be non-negative".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::Usage("--h must be positive".into()));
    }
    Ok((t, h))
}

fn classify_options(spec: &SystemSpec) -> ClassifyOptions {
    let tol = spec.tolerances();
    ClassifyOptions {
        samples: tol.level_samples,
        radius: RADIUS,
        tol: tol.check,
        tol_g: tol.guard,
    }
}

fn coord_names(spec: &SystemSpec) -> Vec<String> {
    spec.system.dynamics.ctx.coords.clone()
}

fn j_names(k: usize) -> Vec<String> {
    (1..=k).map(|a| format!("J_{a}")).collect()
}

fn mu_columns(k: usize) -> Vec<String> {
    (1..=k).map(|a| format!("mu_{a}")).collect()
}

/// Integrates the full hybrid system and tabulates `t, q, p, segment, J, H`.
pub fn simulate(spec: &SystemSpec, ov: &Overrides) -> Result<Outcome, CliError> {
    let x0 = initial_state(spec, ov)?;
    let (t_end, h) = horizon(spec, ov)?;
    let integrator = ov.integrator.unwrap_or(spec.integrator);
    if integrator == Integrator::Leapfrog && !spec.system.dynamics.separable {
        return Err(CliError::Usage(
            "leapfrog requires a separable Hamiltonian".into(),
        ));
    }
    let opts = spec.hybrid_options(integrator, h);
    let flow = run_hybrid(&spec.system, &x0, t_end, &opts)?;
    let violations = flow.violations(&spec.system, &opts)?;

    let sys = &spec.system.dynamics;
    let mut extra_names = j_names(spec.k);
    extra_names.push("H".into());
    let mut energy_error = None;
    let table = Table::from_flow(
        &flow,
        &coord_names(spec),
        &extra_names,
        |_, x| x.coords().to_vec(),
        |_, x| {
            let mut row: Vec<f64> = spec.momentum.eval(x).iter().copied().collect();
            match sys.energy(x) {
                Ok(e) => row.push(e),
                Err(e) => {
                    energy_error.get_or_insert(e);
                    row.push(f64::NAN);
                }
            }
            row
        },
    );
    if let Some(e) = energy_error {
        return Err(e.into());
    }

    let s = seed(spec, ov);
    let checks = vec![Check::verdict(
        "flow_structure",
        if violations.is_empty() {
            "consistent".to_string()
        } else {
            violations.join("; ")
        },
        violations.is_empty(),
        flow.impacts.len(),
        s,
    )];
    let data = json!({
        "x0": x0.coords(),
        "T": t_end,
        "h": h,
        "integrator": integrator.name(),
        "segments": flow.segments.len(),
        "impacts": flow.impacts.len(),
        "impact_times": flow.impact_times(),
        "tangential_contacts": flow.tangential.iter().map(|r| r.time).collect::<Vec<_>>(),
        "final_state": flow.final_state().coords(),
    });
    Ok(Outcome::new(
        Report::new("simulate", spec.name(), s, checks, data),
        vec![("trajectory.csv".into(), table)],
    ))
}

/// Every symmetry hypothesis on seeded samples.
pub fn verify(spec: &SystemSpec, ov: &Overrides) -> Result<Outcome, CliError> {
    let s = seed(spec, ov);
    let tol = *spec.tolerances();
    let ctx = &spec.system.dynamics.ctx;
    let mut sampler = Sampler::new(s);
    let samples = sampler.points(2 * spec.n, tol.samples, RADIUS);
    let probes = sampler.group_elements(spec.k, PROBES, RADIUS);
    let pairs = samples.len() * probes.len();
    let mut checks = Vec::new();

    let d = check_symplectic_action(&spec.action, &spec.system.dynamics.omega, &samples, &probes);
    checks.push(Check::below(
        "symplectic_action",
        d,
        tol.check,
        probes.len(),
        s,
    ));

    match check_momentum_map(
        &spec.momentum,
        &spec.action,
        &spec.system.dynamics.omega,
        &samples,
    ) {
        Ok(d) => checks.push(Check::below("momentum_map", d, tol.check, samples.len(), s)),
        Err(e) => checks.push(Check::failed("momentum_map", &e, s)),
    }

    match invariance_defect(
        &spec.system.dynamics.hamiltonian,
        ctx,
        &spec.action,
        &samples,
        &probes,
    ) {
        Ok(d) => checks.push(Check::below(
            "hamiltonian_invariance",
            d,
            tol.check,
            pairs,
            s,
        )),
        Err(e) => checks.push(Check::failed("hamiltonian_invariance", &e, s)),
    }

    let cocycle = compute_cocycle(&spec.momentum, &spec.action, &probes, &samples, tol.check);
    let mut data = serde_json::Map::new();
    match &cocycle {
        Ok(c) => {
            checks.push(
                Check::below("cocycle_constancy", c.spread, tol.check, pairs, s).with_details(
                    json!({ "matrix": matrix_json(&c.matrix), "fit_residual": c.fit_residual }),
                ),
            );
            data.insert("sigma".into(), matrix_json(&c.matrix));
            let mut worst: f64 = 0.0;
            for x in &samples {
                let jx = spec.momentum.eval(x);
                for g in &probes {
                    let lhs = spec.momentum.eval(&spec.action.act(g, x)?);
                    worst = worst.max((lhs - affine_action(&jx, g, c)?).amax());
                }
            }
            checks.push(Check::below(
                "affine_equivariance",
                worst,
                tol.check,
                pairs,
                s,
            ));
        }
        Err(Error::NotConstant { spread, .. }) => {
            checks.push(Check::below(
                "cocycle_constancy",
                *spread,
                tol.check,
                pairs,
                s,
            ));
            checks.push(Check::verdict(
                "affine_equivariance",
                "skipped: no constant cocycle",
                false,
                0,
                s,
            ));
        }
        Err(e) => {
            checks.push(Check::failed("cocycle_constancy", e, s));
            checks.push(Check::verdict(
                "affine_equivariance",
                "skipped: no constant cocycle",
                false,
                0,
                s,
            ));
        }
    }

    let mut worst_action: Option<f64> = Some(0.0);
    let mut action_error = None;
    let mut level_samples = 0;
    for (i, mu) in spec.mu_list.iter().enumerate() {
        let name = format!("momentum_classification[{i}]");
        let guard_samples = match sample_guard_level(
            &spec.momentum,
            &spec.system.guard,
            ctx,
            mu,
            tol.level_samples,
            RADIUS,
            tol.guard,
            &mut sampler,
        ) {
            Ok(v) => v,
            Err(e) => {
                checks.push(
                    Check::failed(&name, &e, s)
                        .with_details(json!({ "mu_minus": vector_json(mu) })),
                );
                continue;
            }
        };
        level_samples += guard_samples.len();
        match check_hybrid_action(
            &spec.action,
            &spec.system.guard,
            &spec.system.impact,
            ctx,
            &guard_samples,
            &probes,
            tol.guard,
        ) {
            Ok(d) => worst_action = worst_action.map(|w| w.max(d)),
            Err(e) => {
                worst_action = None;
                action_error.get_or_insert(e);
            }
        }
        let verdict = hybred_core::symmetry::check_hybrid_regular(
            &spec.momentum,
            &spec.system.guard,
            ctx,
            mu,
            &guard_samples,
        )
        .and_then(|_| {
            classify_samples(
                &spec.momentum,
                &spec.system.impact,
                ctx,
                mu,
                &guard_samples,
                tol.check,
            )
        });
        match verdict {
            Ok(c) => {
                let (label, pass) = match &c.verdict {
                    MomentumVerdict::Hybrid => ("hybrid", true),
                    MomentumVerdict::Generalized { .. } => ("generalized", true),
                    MomentumVerdict::Fails { .. } => ("fails", false),
                };
                let plus = c.mu_plus().map_or(Value::Null, |m| vector_json(&m));
                let shift = c.mu_plus().map_or(Value::Null, |m| vector_json(&(m - mu)));
                checks.push(
                    Check::verdict(&name, label, pass, c.samples, s).with_details(json!({
                        "mu_minus": vector_json(mu),
                        "mu_plus": plus,
                        "shift": shift,
                        "deviation": c.deviation,
                        "spread": c.spread,
                        "tolerance": tol.check,
                    })),
                );
            }
            Err(e) => checks.push(
                Check::failed(&name, &e, s).with_details(json!({ "mu_minus": vector_json(mu) })),
            ),
        }
    }
    if !spec.mu_list.is_empty() {
        match (worst_action, action_error) {
            (Some(d), _) => checks.push(Check::below(
                "hybrid_action",
                d,
                tol.check,
                level_samples * probes.len(),
                s,
            )),
            (None, Some(e)) => checks.push(Check::failed("hybrid_action", &e, s)),
            (None, None) => unreachable!("an error is recorded whenever the maximum is dropped"),
        }
    }

    if let Ok(c) = &cocycle {
        let levels: Vec<DVector<f64>> = if spec.mu_list.is_empty() {
            vec![DVector::zeros(spec.k)]
        } else {
            spec.mu_list.clone()
        };
        let bases: Vec<Vec<DVector<f64>>> = levels.iter().map(|mu| isotropy_basis(c, mu)).collect();
        let same = bases.windows(2).all(|w| {
            w[0].len() == w[1].len()
                && w[0]
                    .iter()
                    .zip(&w[1])
                    .all(|(a, b)| (a - b).amax() < tol.check)
        });
        let basis: Vec<Value> = bases[0].iter().map(vector_json).collect();
        checks.push(
            Check::verdict(
                "isotropy_mu_independence",
                if same { "identical" } else { "differs" },
                same,
                levels.len(),
                s,
            )
            .with_details(json!({ "dimension": bases[0].len(), "basis": basis.clone() })),
        );
        data.insert("isotropy_basis".into(), Value::from(basis));
    }
    Ok(Outcome::new(
        Report::new("verify", spec.name(), s, checks, Value::Object(data)),
        Vec::new(),
    ))
}

/// Cocycle and chart at `mu`; the isotropy must be trivial.
fn chart_at(
    spec: &SystemSpec,
    mu: &DVector<f64>,
    s: u64,
) -> Result<(Cocycle, LevelSetChart), CliError> {
    let tol = spec.tolerances();
    let mut sampler = Sampler::new(s);
    let samples = sampler.points(2 * spec.n, tol.samples, RADIUS);
    let probes = sampler.group_elements(spec.k, PROBES, RADIUS);
    let cocycle = compute_cocycle(&spec.momentum, &spec.action, &probes, &samples, tol.check)?;
    let isotropy = isotropy_basis(&cocycle, mu);
    let chart = build_chart(&spec.momentum, mu, &isotropy, None, &coord_names(spec))?;
    Ok((cocycle, chart))
}

fn reduced_at(spec: &SystemSpec, mu: &DVector<f64>, s: u64) -> Result<ReducedSystem, CliError> {
    let (_, chart) = chart_at(spec, mu, s)?;
    Ok(reduce_system(
        &spec.system,
        chart,
        classify_options(spec),
        s,
    )?)
}

fn level_from(spec: &SystemSpec, ov: &Overrides) -> Result<DVector<f64>, CliError> {
    if let Some(mu) = &ov.mu {
        if mu.len() != spec.k {
            return Err(CliError::Usage(format!("--mu needs {} entries", spec.k)));
        }
        return Ok(DVector::from_column_slice(mu));
    }
    if let Some(mu) = spec.mu_list.first() {
        return Ok(mu.clone());
    }
    Ok(spec.momentum.eval(&initial_state(spec, ov)?))
}

fn exprs_json(exprs: &[hybred_core::expr::Expr]) -> Value {
    Value::from(exprs.iter().map(|e| e.to_string()).collect::<Vec<_>>())
}

/// Builds the reduced system at one level and certifies it.
pub fn reduce(spec: &SystemSpec, ov: &Overrides) -> Result<Outcome, CliError> {
    let s = seed(spec, ov);
    let tol = *spec.tolerances();
    let mu = level_from(spec, ov)?;
    let reduced = match reduced_at(spec, &mu, s) {
        Ok(r) => r,
        Err(CliError::Core(e @ Error::NotRegular(_))) => {
            let checks = vec![Check::failed("regular_value", &e, s)];
            let data = json!({ "mu": vector_json(&mu) });
            return Ok(Outcome::new(
                Report::new("reduce", spec.name(), s, checks, data),
                Vec::new(),
            ));
        }
        Err(e) => return Err(e),
    };
    let chart = &reduced.chart;
    let full = &spec.system;
    let mut checks = vec![Check::verdict("regular_value", "regular", true, 0, s)];

    let residual = pullback_residual(chart, &full.dynamics.omega, &reduced.omega);
    checks.push(Check::below(
        "pullback_residual",
        residual,
        PULLBACK_TOL,
        1,
        s,
    ));

    let mut sampler = Sampler::new(s);
    let mut worst: f64 = 0.0;
    for _ in 0..tol.samples {
        let y = sampler.vector(chart.dim(), RADIUS);
        let x = chart.parametrize(y.as_slice())?;
        let yp = PhasePoint::from_vector(&y)?;
        worst = worst.max((reduced.hybrid.dynamics.energy(&yp)? - full.dynamics.energy(&x)?).abs());
    }
    checks.push(Check::below(
        "hamiltonian_certificate",
        worst,
        tol.check,
        tol.samples,
        s,
    ));

    let mut data = serde_json::Map::new();
    let ctx = full.ctx();
    match sample_guard_level(
        &spec.momentum,
        &full.guard,
        ctx,
        &mu,
        tol.level_samples,
        RADIUS,
        tol.guard,
        &mut sampler,
    )
    .map_err(CliError::from)
    .and_then(|samples| {
        let plus = reduced.next_level(&mu)?;
        let out = chart.with_level(&plus);
        Ok((
            plus.clone(),
            samples.len(),
            reduce_guard_impact(
                &full.guard,
                &full.impact,
                chart,
                &out,
                ctx,
                &samples,
                tol.check,
            )?,
        ))
    }) {
        Ok((plus, n, r)) => {
            checks.push(Check::below(
                "diagram_commutativity",
                r.diagram_defect,
                tol.check,
                n,
                s,
            ));
            checks.push(Check::below(
                "impact_level",
                r.level_residual,
                tol.check,
                n,
                s,
            ));
            data.insert("mu_plus".into(), vector_json(&plus));
        }
        Err(e) => checks.push(Check::failed("diagram_commutativity", &e, s)),
    }

    let values = (0..spec.k).map(|a| (mu_name(a), mu[a])).collect();
    let h = reduced.hamiltonian();
    data.insert("mu".into(), vector_json(&mu));
    data.insert("free_coordinates".into(), Value::from(chart.free_names()));
    data.insert(
        "bound_coordinates".into(),
        Value::Object(
            chart
                .bound_expressions()
                .into_iter()
                .map(|(n, e)| (n, Value::from(e.to_string())))
                .collect(),
        ),
    );
    data.insert("omega_mu".into(), matrix_json(reduced.omega.matrix()));
    data.insert("hamiltonian".into(), Value::from(h.to_string()));
    data.insert(
        "hamiltonian_at_mu".into(),
        Value::from(bind_parameters(h, &values).to_string()),
    );
    data.insert(
        "guard".into(),
        json!({
            "level": reduced.hybrid.guard.level.to_string(),
            "direction": reduced.hybrid.guard.direction.to_string(),
        }),
    );
    data.insert(
        "impact".into(),
        exprs_json(&reduced.hybrid.impact.components),
    );
    Ok(Outcome::new(
        Report::new("reduce", spec.name(), s, checks, Value::Object(data)),
        Vec::new(),
    ))
}

/// Runs the full flow from `x0` and the reduced flow from `π_μ(x0)` (both
/// with RK4) and compares them interval by interval.
pub fn compare(spec: &SystemSpec, ov: &Overrides) -> Result<Outcome, CliError> {
    let s = seed(spec, ov);
    let tol = *spec.tolerances();
    let tol_state = ov.tol_state.unwrap_or(tol.state);
    let tol_time = ov.tol_time.unwrap_or(tol.time);
    let x0 = initial_state(spec, ov)?;
    let (t_end, h) = horizon(spec, ov)?;
    let mu0 = spec.momentum.eval(&x0);
    let reduced = reduced_at(spec, &mu0, s)?;
    let opts = spec.hybrid_options(Integrator::Rk4, h);

    let full = run_hybrid(&spec.system, &x0, t_end, &opts)?;
    let y0 = reduced.chart.project_point(&x0)?;
    let red = run_reduced_hybrid(&reduced, &y0, t_end, &opts)?;
    let charts = red.charts(&reduced);

    let mut checks = Vec::new();
    let same_count = full.impacts.len() == red.flow.impacts.len();
    checks.push(Check::verdict(
        "impact_count",
        format!(
            "full {}, reduced {}",
            full.impacts.len(),
            red.flow.impacts.len()
        ),
        same_count,
        full.impacts.len(),
        s,
    ));
    let mut data = serde_json::Map::new();
    data.insert("mu0".into(), vector_json(&mu0));
    data.insert("T".into(), Value::from(t_end));
    data.insert("h".into(), Value::from(h));
    data.insert("integrator".into(), Value::from(Integrator::Rk4.name()));
    data.insert(
        "levels".into(),
        Value::from(red.levels.iter().map(vector_json).collect::<Vec<_>>()),
    );
    let transitions: Vec<Value> = red
        .levels
        .windows(2)
        .zip(&red.flow.impacts)
        .filter(|(w, _)| w[0] != w[1])
        .map(|(w, rec)| json!({ "time": rec.time, "from": vector_json(&w[0]), "to": vector_json(&w[1]) }))
        .collect();
    data.insert("transitions".into(), Value::from(transitions));

    match compare_flows(&full, &red.flow, &charts, tol_state, tol_time) {
        Ok(r) => {
            checks.push(Check::below(
                "state_distance",
                r.max_distance,
                tol_state,
                r.intervals.len(),
                s,
            ));
            checks.push(Check::below(
                "impact_time_gap",
                r.max_impact_gap,
                tol_time,
                r.impact_gaps.len(),
                s,
            ));
            checks.push(Check::below(
                "level_consistency",
                r.max_level_residual,
                LEVEL_TOL,
                r.intervals.len(),
                s,
            ));
            let intervals: Vec<Value> = r
                .intervals
                .iter()
                .map(|c| {
                    json!({
                        "index": c.index,
                        "full": [c.full_interval.0, c.full_interval.1],
                        "reduced": [c.reduced_interval.0, c.reduced_interval.1],
                        "mu": vector_json(&c.mu),
                        "sup_distance": c.sup_distance,
                        "level_residual": c.level_residual,
                    })
                })
                .collect();
            data.insert("intervals".into(), Value::from(intervals));
            data.insert("impact_gaps".into(), Value::from(r.impact_gaps.clone()));
        }
        Err(e) => checks.push(Check::failed("state_distance", &e, s)),
    }

    let names = reduced.chart.free_names();
    let mut full_charts = charts.clone();
    // the full flow may have more segments than the reduced one on failure
    while full_charts.len() < full.segments.len() {
        full_charts.push(charts.last().expect("at least one chart").clone());
    }
    let full_table = Table::from_flow(
        &full,
        &names,
        &mu_columns(spec.k),
        |i, x| full_charts[i].project(x),
        |i, _| full_charts[i].mu.iter().copied().collect(),
    );
    let per_level: Vec<ReducedSystem> = red.levels.iter().map(|m| reduced.at_level(m)).collect();
    let mut reduced_extra = mu_columns(spec.k);
    reduced_extra.push("H_mu".into());
    let reduced_table = Table::from_flow(
        &red.flow,
        &names,
        &reduced_extra,
        |_, y| y.coords().to_vec(),
        |i, y| {
            let mut row: Vec<f64> = red.levels[i].iter().copied().collect();
            row.push(per_level[i].hybrid.dynamics.energy(y).unwrap_or(f64::NAN));
            row
        },
    );
    Ok(Outcome::new(
        Report::new("compare", spec.name(), s, checks, Value::Object(data)),
        vec![
            ("full_projected.csv".into(), full_table),
            ("reduced.csv".into(), reduced_table),
        ],
    ))
}
