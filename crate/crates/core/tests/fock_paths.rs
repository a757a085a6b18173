use cvverify::fock::{self, FockArray};
use cvverify::harness::{self, ConvergenceConfig, TargetSpec};
use cvverify::phasespace::{self, GaussianState, LinearObservable};
use cvverify::protocol::{RegisterSource, StateSource};
use cvverify::provers::{self, Target};
use cvverify::witness::{witness_expectation_oracle, Branch, ProverModel, WitnessKind};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn graph_state_from_dvr_matches_phase_space() {
    // With ξ = 0 the single-edge graph state is Gaussian; the witness lower-bounds fidelity.
    let kind = WitnessKind::hypergraph(2, vec![vec![0, 1]], 0.0).unwrap();
    let st = fock::hypergraph_state(&[vec![0, 1]], 0.0, 2, 30).unwrap();
    let w = witness_expectation_oracle(&kind, &ProverModel::Fock(st.clone())).unwrap();
    assert!(w >= 0.999, "witness {w}");

    // Second moments agree with the phase-space covariance.
    let g = phasespace::apply_symplectic(&phasespace::make_vacuum(2).unwrap(), &kind.gaussian_target().unwrap()).unwrap();
    for (coeffs, label) in [([1.0, 0.0, 0.0, 0.0], "q0"), ([0.0, 1.0, 0.0, 0.0], "p0"), ([0.0, 1.0, 1.0, 0.0], "p0+q1")] {
        let obs = LinearObservable::new(nalgebra::DVector::from_row_slice(&coeffs), 0.0).unwrap();
        let (_, var) = phasespace::marginal(&g, &obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let s2: f64 = (0..n).map(|_| st.sample_homodyne(&obs, &mut rng).unwrap().powi(2)).sum::<f64>() / n as f64;
        let se = var * (2.0 / n as f64).sqrt();
        assert!((s2 - var).abs() < 5.0 * se, "{label}: {s2} vs {var}");
    }
}

#[test]
fn triangle_nullifier_statistics() {
    // The cubic-phase triangle is not Gaussian; its nullifiers still have second moment 1/2.
    let kind = WitnessKind::hypergraph(3, vec![vec![0, 1, 2]], 0.0).unwrap();
    let target = Target::new(&kind, 12).unwrap();
    let st = target.fock.clone().unwrap();
    assert!(st.leakage() < 0.05, "leakage {}", st.leakage());
    let w = witness_expectation_oracle(&kind, &ProverModel::Fock((*st).clone())).unwrap();
    assert!(w > 0.95, "oracle {w}");

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inst = provers::honest_iid(target).instantiate(1, &mut rng).unwrap();
    let mut src = StateSource { kind: kind.clone(), instance: inst };
    let n = 3000;
    // p̃_0 = p_0 + q_1 q_2 at θ = 0 on the P branch.
    let mut acc = 0.0;
    let mut acc4 = 0.0;
    for _ in 0..n {
        let x = src.measure(0, 0, 0.0, Branch::P, &mut rng).unwrap();
        acc += x * x;
        acc4 += x.powi(4);
    }
    let m2 = acc / n as f64;
    let sd = ((acc4 / n as f64 - m2 * m2) / n as f64).sqrt();
    assert!((m2 - 0.5).abs() < 5.0 * sd + 0.02, "⟨p̃²⟩ = {m2} ± {sd}");
}

#[test]
fn fock_and_gaussian_oracles_agree() {
    let kind = WitnessKind::gaussian_state(phasespace::SymplecticOp::squeezer(0.3));
    for st in [GaussianState::coherent(Complex64::new(0.4, -0.2)), GaussianState::squeezed_vacuum(0.1), GaussianState::vacuum(1).unwrap()] {
        let a = witness_expectation_oracle(&kind, &ProverModel::Gaussian(st.clone())).unwrap();
        let f = fock::gaussian_to_fock(&st, 40).unwrap();
        let b = witness_expectation_oracle(&kind, &ProverModel::Fock(f)).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn cutoff_convergence() {
    let r = harness::fock_convergence(&ConvergenceConfig { target: TargetSpec::Squeezed { r: 0.5 }, cutoff: 20, budget: 1e-4 })
        .unwrap();
    assert!(r.drift_q_second_moment < 1e-4, "{r:?}");
    let r = harness::fock_convergence(&ConvergenceConfig { target: TargetSpec::Vacuum { modes: 1 }, cutoff: 4, budget: 1e-4 })
        .unwrap();
    assert_eq!(r.drift_witness, 0.0);
    // Triangle at D = 12 vs 24 exceeds the basis cap, so compare 12 and 16 by hand.
    let a = fock::hypergraph_state(&[vec![0, 1, 2]], 0.0, 3, 12).unwrap();
    let b = fock::hypergraph_state(&[vec![0, 1, 2]], 0.0, 3, 16).unwrap();
    let kind = WitnessKind::hypergraph(3, vec![vec![0, 1, 2]], 0.0).unwrap();
    let wa = witness_expectation_oracle(&kind, &ProverModel::Fock(a)).unwrap();
    let wb = witness_expectation_oracle(&kind, &ProverModel::Fock(b)).unwrap();
    assert!(wb >= wa - 1e-9 && wb <= 1.0 + 1e-9, "{wa} -> {wb}");
}

#[test]
fn number_state_fidelities() {
    let vac = FockArray::vacuum(1, 10).unwrap();
    let one = FockArray::number(&[1], 10).unwrap();
    assert_eq!(fock::fidelity(&vac, &one).unwrap(), 0.0);
    let coh = FockArray::coherent(Complex64::new(2.0, 0.0), 40).unwrap();
    let f = fock::fidelity(&FockArray::vacuum(1, 40).unwrap(), &coh).unwrap();
    assert!((f - (-4f64).exp()).abs() < 1e-9);
}
