mod common;

use std::time::Instant;

use hybred_core::hybrid::HybridOptions;
use hybred_core::phase::Integrator;
use hybred_core::reduction::{build_chart, reduce_system, run_comparison, run_reduced_hybrid};
use hybred_core::symmetry::ClassifyOptions;

#[test]
fn projected_full_flow_matches_reduced_flow() {
    let full = common::two_particles(1.0, 0.0, 0.0);
    let x0 = common::x0();
    let mu = common::momentum().eval(&x0);
    assert_eq!(mu.as_slice(), &[0.0, -1.0]);
    let chart = build_chart(
        &common::momentum(),
        &mu,
        &[],
        None,
        &full.dynamics.ctx.coords,
    )
    .unwrap();
    let reduced = reduce_system(&full, chart, ClassifyOptions::default(), 0).unwrap();
    let opts = HybridOptions {
        h: 1e-3,
        integrator: Integrator::Rk4,
        ..HybridOptions::default()
    };
    let started = Instant::now();
    let cmp = run_comparison(&reduced, &x0, 10.0, &opts, 1e-6, 1e-8).unwrap();
    let elapsed = started.elapsed();
    let r = &cmp.report;
    eprintln!(
        "impacts {} distance {:e} gap {:e} level {:e} in {:?}",
        cmp.full.impacts.len(),
        r.max_distance,
        r.max_impact_gap,
        r.max_level_residual,
        elapsed
    );
    assert!(cmp.full.impacts.len() >= 2);
    assert_eq!(cmp.full.impacts.len(), cmp.reduced.flow.impacts.len());
    assert!(r.max_distance < 1e-6);
    assert!(r.max_impact_gap < 1e-8);
    assert!(r.pass);
    assert!(cmp.reduced.levels.iter().all(|l| l == &mu));
}

#[test]
fn reduced_energy_is_conserved_between_impacts() {
    let full = common::two_particles(1.0, 0.0, 0.0);
    let x0 = common::x0();
    let mu = common::momentum().eval(&x0);
    let chart = build_chart(
        &common::momentum(),
        &mu,
        &[],
        None,
        &full.dynamics.ctx.coords,
    )
    .unwrap();
    let reduced = reduce_system(&full, chart.clone(), ClassifyOptions::default(), 0).unwrap();
    let y0 = chart.project_point(&x0).unwrap();
    let flow = run_reduced_hybrid(&reduced, &y0, 10.0, &HybridOptions::default()).unwrap();
    let sys = &reduced.hybrid.dynamics;
    let h0 = sys.energy(&y0).unwrap();
    for seg in &flow.flow.segments {
        for y in seg.states() {
            assert!((sys.energy(y).unwrap() - h0).abs() < 1e-6);
        }
    }
}
