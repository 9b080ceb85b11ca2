mod common;

use hybred_core::hybrid::{run_hybrid, HybridOptions};
use hybred_core::phase::{symplecticity_defect, HamiltonianSystem, Integrator, PhasePoint};
use hybred_core::symmetry::{sample_guard_level, Sampler};
use hybred_core::Error;

fn leapfrog(h: f64) -> HybridOptions {
    HybridOptions {
        h,
        integrator: Integrator::Leapfrog,
        ..HybridOptions::default()
    }
}

#[test]
fn momentum_is_conserved_along_segments() {
    let sys = common::two_particles(0.8, 0.0, 0.0);
    let j = common::momentum();
    let flow = run_hybrid(&sys, &common::x0(), 10.0, &leapfrog(1e-3)).unwrap();
    assert!(flow.impacts.len() >= 2);
    for seg in &flow.segments {
        let j0 = j.eval(seg.first());
        let span = (seg.end_time() - seg.start_time()).max(1e-300);
        for x in seg.states() {
            assert!((j.eval(x) - &j0).amax() / span < 1e-8);
        }
    }
    // hybrid momentum: J also survives every impact
    for rec in &flow.impacts {
        assert!((j.eval(&rec.post) - j.eval(&rec.pre)).amax() < 1e-12);
    }
}

#[test]
fn impact_energy_identity() {
    let j = common::momentum();
    for e in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let sys = common::two_particles(e, 0.3, 0.0);
        let ctx = &sys.dynamics.ctx;
        let mut sampler = Sampler::new(21);
        for mu in [[0.0, 0.0], [1.0, -0.5], [-2.0, 0.3]] {
            let mu = nalgebra::DVector::from_column_slice(&mu);
            let samples =
                sample_guard_level(&j, &sys.guard, ctx, &mu, 20, 2.0, 1e-9, &mut sampler).unwrap();
            for x in &samples {
                let post = sys.impact.eval(ctx, x).unwrap();
                let dh = sys.dynamics.energy(&post).unwrap() - sys.dynamics.energy(x).unwrap();
                let rel = x.p()[0] - x.p()[1];
                let expected = (e * e - 1.0) * rel * rel / 2.0;
                assert!((dh - expected).abs() < 1e-12, "e = {e}: {dh} vs {expected}");
                if e == 1.0 {
                    assert!(dh.abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn elastic_flow_keeps_energy_bounded() {
    let sys = common::two_particles(1.0, 0.0, 0.0);
    let x0 = common::x0();
    let h0 = sys.dynamics.energy(&x0).unwrap();
    let flow = run_hybrid(&sys, &x0, 10.0, &leapfrog(1e-3)).unwrap();
    for seg in &flow.segments {
        for x in seg.states() {
            assert!((sys.dynamics.energy(x).unwrap() - h0).abs() < 1e-5);
        }
    }
}

#[test]
fn plastic_impacts_are_reported_as_zeno() {
    let sys = common::two_particles(0.0, 0.5, 0.0);
    let x0 = PhasePoint::new(vec![1.0, 0.0, -1.0, 1.0]).unwrap();
    match run_hybrid(&sys, &x0, 50.0, &HybridOptions::default()) {
        Err(Error::ZenoSuspected { .. }) => {}
        other => panic!("expected a Zeno report, got {other:?}"),
    }
}

#[test]
fn grazing_contact_is_not_an_impact() {
    // relative coordinate oscillates in [-1, 1]; the guard sits at its maximum
    let sys = common::two_particles(1.0, 1.0, 0.0);
    let x0 = PhasePoint::new(vec![0.0, 0.0, 0.5, -0.5]).unwrap();
    let flow = run_hybrid(&sys, &x0, 3.0, &HybridOptions::default()).unwrap();
    assert!(flow.impacts.is_empty());
}

#[test]
fn symplecticity_separates_the_integrators() {
    let oscillator = {
        let base = common::two_particles(1.0, 0.0, 0.0);
        let names = hybred_core::phase::canonical_names(1);
        let scope = hybred_core::expr::Scope::new(&names, &[] as &[String], &[] as &[String]);
        HamiltonianSystem {
            hamiltonian: hybred_core::expr::parse_expression("(q1^2 + p1^2)/2", &scope).unwrap(),
            ctx: hybred_core::phase::Context::new(
                names,
                Default::default(),
                base.dynamics.ctx.functions.clone(),
            ),
            omega: hybred_core::phase::SymplecticMatrix::canonical(1),
            separable: true,
        }
    };
    let x = PhasePoint::new(vec![0.3, -0.8]).unwrap();
    let lf = symplecticity_defect(Integrator::Leapfrog, &oscillator, &x, 0.1, 1e-5).unwrap();
    let rk = symplecticity_defect(Integrator::Rk4, &oscillator, &x, 0.1, 1e-5).unwrap();
    assert!(lf < 1e-6, "{lf}");
    assert!(rk > 1e-8, "{rk}");
}
