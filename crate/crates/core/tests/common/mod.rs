#![allow(dead_code)]

use hybred_core::expr::{parse_expression, FunctionTable, Scope};
use hybred_core::hybrid::{Guard, HybridSystem, ImpactMap};
use hybred_core::phase::{
    canonical_names, Context, HamiltonianSystem, Params, PhasePoint, SymplecticMatrix,
};
use hybred_core::symmetry::{MomentumMap, TranslationAction};
use nalgebra::{DMatrix, DVector};

pub const HAMILTONIAN: &str = "(p1-p2)^2/2 + V(q1-q2)";

/// Two particles on a line with a relative potential and restitution
/// impacts at separation `c`, optionally kicked by `kappa`.
pub fn two_particles(e: f64, c: f64, kappa: f64) -> HybridSystem {
    let names = canonical_names(2);
    let mut fns = FunctionTable::new();
    fns.define("V", "x", "x^2/2", &[]).unwrap();
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
            hamiltonian: p(HAMILTONIAN),
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

pub fn action() -> TranslationAction {
    TranslationAction::new(DMatrix::from_row_slice(
        4,
        2,
        &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
    ))
}

pub fn momentum() -> MomentumMap {
    MomentumMap::new(
        DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, -1.0, -1.0, 0.0, 0.0]),
        DVector::zeros(2),
    )
    .unwrap()
}

pub fn x0() -> PhasePoint {
    PhasePoint::new(vec![1.0, 0.0, -1.0, 1.0]).unwrap()
}
