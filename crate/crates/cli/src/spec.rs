//! JSON system descriptions and their validation into core objects.
//!
//! A spec names every object of a simple hybrid system with a translation
//! symmetry: Hamiltonian, guard, impact, parameters, the action matrix `A`
//! (`2n × k`), the momentum map `J(x) = B x + b`, integrator settings,
//! tolerances, initial conditions and the momentum levels to verify.
//! Coordinates are always named `q1..qn, p1..pn`.

use std::collections::BTreeMap;
use std::path::Path;

use hybred_core::expr::{parse_expression, Expr, FunctionTable, Scope};
use hybred_core::hybrid::{Guard, HybridOptions, HybridSystem, ImpactMap};
use hybred_core::phase::{
    canonical_names, Context, HamiltonianSystem, Integrator, PhasePoint, SymplecticMatrix,
};
use hybred_core::symmetry::{MomentumMap, TranslationAction};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("in `{field}`: {source}")]
    Expression {
        field: String,
        #[source]
        source: hybred_core::Error,
    },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDef {
    pub name: String,
    pub arg: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardDef {
    pub level: String,
    pub direction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentumDef {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorDef {
    /// `leapfrog` or `rk4`; chosen from separability when absent.
    pub method: Option<String>,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub max_impacts: usize,
    pub min_gap: f64,
}

impl Default for IntegratorDef {
    fn default() -> Self {
        let d = HybridOptions::default();
        IntegratorDef {
            method: None,
            h: d.h,
            t_end: 10.0,
            max_impacts: d.max_impacts,
            min_gap: d.min_gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Sup-norm state distance in flow comparisons.
    pub state: f64,
    /// Impact-time gap in flow comparisons.
    pub time: f64,
    /// Guard level tolerance.
    pub guard: f64,
    /// Event-time bisection tolerance.
    pub event: f64,
    /// Tolerance of the symmetry checks (identities, cocycle constancy,
    /// level classification).
    pub check: f64,
    /// Random phase points per symmetry check.
    pub samples: usize,
    /// Guard samples per momentum level.
    pub level_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = HybridOptions::default();
        Tolerances {
            state: 1e-6,
            time: 1e-8,
            guard: d.tol_g,
            event: d.tol_t,
            check: 1e-10,
            samples: 100,
            level_samples: hybred_core::symmetry::DEFAULT_LEVEL_SAMPLES,
        }
    }
}

/// The file format, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSpec {
    #[serde(default)]
    pub name: String,
    pub dimension: usize,
    pub hamiltonian: String,
    #[serde(default)]
    pub separable: bool,
    #[serde(default)]
    pub functions: Vec<FunctionDef>,
    pub guard: GuardDef,
    pub impact: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// Constant symplectic matrix; canonical when absent.
    #[serde(default)]
    pub symplectic_matrix: Option<Vec<Vec<f64>>>,
    pub action: Vec<Vec<f64>>,
    pub momentum: MomentumDef,
    #[serde(default)]
    pub integrator: IntegratorDef,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub initial_conditions: Vec<Vec<f64>>,
    #[serde(default)]
    pub mu_list: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl RawSpec {
    pub fn from_json(text: &str, path: &str) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|e| SpecError::Parse {
            path: path.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Overrides an existing parameter; unknown names are rejected so that
    /// typos do not silently run the unmodified system.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), SpecError> {
        match self.parameters.get_mut(name) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(invalid(format!("parameters.{name}"), "no such parameter")),
        }
    }
}

/// A validated spec with every expression parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub raw: RawSpec,
    pub n: usize,
    pub k: usize,
    pub system: HybridSystem,
    pub action: TranslationAction,
    pub momentum: MomentumMap,
    pub integrator: Integrator,
    pub initial_conditions: Vec<PhasePoint>,
    pub mu_list: Vec<DVector<f64>>,
}

pub fn load_spec(path: &Path) -> Result<SystemSpec, SpecError> {
    SystemSpec::from_raw(read_raw(path)?)
}

pub fn read_raw(path: &Path) -> Result<RawSpec, SpecError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    RawSpec::from_json(&text, &shown)
}

fn matrix(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    field: &str,
    shape: &str,
) -> Result<DMatrix<f64>, SpecError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(field, format!("{field} matrix must be {shape}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn is_reserved(name: &str) -> bool {
    name.strip_prefix("mu")
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

impl SystemSpec {
    pub fn from_raw(raw: RawSpec) -> Result<Self, SpecError> {
        let n = raw.dimension;
        if n == 0 {
            return Err(invalid("dimension", "must be positive"));
        }
        let d = 2 * n;
        let names = canonical_names(n);
        let k = raw.action.first().map_or(0, |r| r.len());
        let action = matrix(&raw.action, d, k, "action", "2n×k")?;
        let b = matrix(&raw.momentum.matrix, k, d, "momentum.matrix", "k×2n")?;
        let offset = match &raw.momentum.offset {
            Some(o) if o.len() != k => {
                return Err(invalid("momentum.offset", "must have k entries"))
            }
            Some(o) => DVector::from_column_slice(o),
            None => DVector::zeros(k),
        };

        let params: Vec<String> = raw.parameters.keys().cloned().collect();
        for (name, value) in &raw.parameters {
            if is_reserved(name) {
                return Err(invalid(
                    format!("parameters.{name}"),
                    "names mu1, mu2, ... are reserved for momentum levels",
                ));
            }
            if names.contains(name) {
                return Err(invalid(
                    format!("parameters.{name}"),
                    "clashes with a coordinate name",
                ));
            }
            if !value.is_finite() {
                return Err(invalid(format!("parameters.{name}"), "must be finite"));
            }
        }

        let mut functions = FunctionTable::new();
        for (i, f) in raw.functions.iter().enumerate() {
            functions
                .define(&f.name, &f.arg, &f.body, &params)
                .map_err(|source| SpecError::Expression {
                    field: format!("functions[{i}]"),
                    source,
                })?;
        }
        let scope = Scope {
            variables: names.clone(),
            parameters: params,
            functions: functions.names(),
        };
        let parse = |field: &str, src: &str| -> Result<Expr, SpecError> {
            parse_expression(src, &scope).map_err(|source| SpecError::Expression {
                field: field.to_string(),
                source,
            })
        };
        let hamiltonian = parse("hamiltonian", &raw.hamiltonian)?;
        let guard = Guard {
            level: parse("guard.level", &raw.guard.level)?,
            direction: parse("guard.direction", &raw.guard.direction)?,
        };
        if raw.impact.len() != d {
            return Err(invalid(
                "impact",
                format!("needs {d} components, got {}", raw.impact.len()),
            ));
        }
        let impact = ImpactMap {
            components: raw
                .impact
                .iter()
                .enumerate()
                .map(|(i, s)| parse(&format!("impact[{i}]"), s))
                .collect::<Result<_, _>>()?,
        };

        let omega = match &raw.symplectic_matrix {
            None => SymplecticMatrix::canonical(n),
            Some(rows) => SymplecticMatrix::new(matrix(rows, d, d, "symplectic_matrix", "2n×2n")?)
                .map_err(|e| invalid("symplectic_matrix", e.to_string()))?,
        };

        let integrator = match raw.integrator.method.as_deref() {
            None if raw.separable && omega.is_canonical() => Integrator::Leapfrog,
            None => Integrator::Rk4,
            Some(m) => m
                .parse()
                .map_err(|e: String| invalid("integrator.method", e))?,
        };
        if integrator == Integrator::Leapfrog && !raw.separable {
            return Err(invalid(
                "integrator.method",
                "leapfrog requires a Hamiltonian declared separable",
            ));
        }
        if integrator == Integrator::Leapfrog && !omega.is_canonical() {
            return Err(invalid(
                "integrator.method",
                "leapfrog requires the canonical symplectic matrix",
            ));
        }
        let ig = &raw.integrator;
        if !(ig.h > 0.0 && ig.h.is_finite()) {
            return Err(invalid("integrator.h", "must be positive"));
        }
        if !(ig.t_end >= 0.0 && ig.t_end.is_finite()) {
            return Err(invalid("integrator.T", "must be non-negative"));
        }

        let initial_conditions = raw
            .initial_conditions
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if x.len() != d {
                    return Err(invalid(
                        format!("initial_conditions[{i}]"),
                        format!("needs {d} entries"),
                    ));
                }
                PhasePoint::new(x.clone())
                    .map_err(|e| invalid(format!("initial_conditions[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mu_list = raw
            .mu_list
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if m.len() != k {
                    return Err(invalid(
                        format!("mu_list[{i}]"),
                        format!("needs k = {k} entries"),
                    ));
                }
                Ok(DVector::from_column_slice(m))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let ctx = Context::new(names, raw.parameters.clone(), functions);
        Ok(SystemSpec {
            n,
            k,
            system: HybridSystem {
                dynamics: HamiltonianSystem {
                    hamiltonian,
                    ctx,
                    omega,
                    separable: raw.separable,
                },
                guard,
                impact,
            },
            action: TranslationAction::new(action),
            momentum: MomentumMap::new(b, offset).expect("offset length checked"),
            integrator,
            initial_conditions,
            mu_list,
            raw,
        })
    }

    pub fn name(&self) -> &str {
        &self.raw.name
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.raw.tolerances
    }

    pub fn hybrid_options(&self, integrator: Integrator, h: f64) -> HybridOptions {
        HybridOptions {
            h,
            integrator,
            max_impacts: self.raw.integrator.max_impacts,
            min_gap: self.raw.integrator.min_gap,
            tol_t: self.raw.tolerances.event,
            tol_g: self.raw.tolerances.guard,
        }
    }
}
