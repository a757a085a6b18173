mod common;

use cvverify::harness;
use cvverify::phasespace::{self, GaussianChannel};
use cvverify::planner::{self, concentration_bound, Concentration};
use cvverify::provers::channel_ground_truth;
use cvverify::witness::{witness_expectation_oracle, ProverModel, WitnessKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symplectic_maps_keep_purity(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st = common::random_state(k, true, &mut rng);
        prop_assert!(st.is_pure());
        let op = common::random_symplectic(k, &mut rng);
        let back = phasespace::apply_symplectic(&phasespace::apply_symplectic(&st, &op).unwrap(), &op.inverse()).unwrap();
        prop_assert!((back.mean() - st.mean()).amax() < 1e-8);
        prop_assert!((back.cov() - st.cov()).amax() < 1e-8);
    }

    // The state witness is 1 − Σ n̂ in the target frame, so it never exceeds the fidelity.
    #[test]
    fn state_witness_lower_bounds_fidelity(seed in any::<u64>(), k in 1usize..4, pure in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = common::random_symplectic(k, &mut rng);
        let target = phasespace::apply_symplectic(&phasespace::make_vacuum(k).unwrap(), &op).unwrap();
        let st = common::random_state(k, pure, &mut rng);
        let kind = WitnessKind::gaussian_state(op);
        let w = witness_expectation_oracle(&kind, &ProverModel::Gaussian(st.clone())).unwrap();
        let f = phasespace::pure_state_fidelity(&target, &st).unwrap();
        prop_assert!(w <= f + 1e-9, "W = {w}, F = {f}");
        prop_assert!(w <= 1.0 + 1e-12);
    }

    #[test]
    fn channel_witness_lower_bounds_average_fidelity(
        lambda in 0.2f64..3.0,
        eta in 0.2f64..1.0,
        y in 0.0f64..1.0,
        which in 0usize..3,
    ) {
        let (kind, base) = match which {
            0 => {
                let g = lambda + 1.0 + 0.5;
                (WitnessKind::amplifier(lambda, g).unwrap(), GaussianChannel::quantum_limited(1, g / (lambda + 1.0)).unwrap())
            }
            1 => (WitnessKind::attenuator(lambda, 0.7).unwrap(), GaussianChannel::pure_loss(1, 0.49).unwrap()),
            _ => (
                WitnessKind::memory(lambda, phasespace::SymplecticOp::squeezer(0.3)).unwrap(),
                GaussianChannel::identity(1),
            ),
        };
        let ch = GaussianChannel::additive_noise(1, y).unwrap()
            .compose(&base.compose(&GaussianChannel::pure_loss(1, eta).unwrap()).unwrap()).unwrap();
        let w = witness_expectation_oracle(&kind, &ProverModel::Channel(ch.clone())).unwrap() / kind.fbar_norm();
        let truth = channel_ground_truth(&kind, &ch).unwrap();
        prop_assert!(w <= truth + 1e-9, "{}: W = {w}, F̄/F̄max = {truth}", kind.tag());
    }

    #[test]
    fn plans_are_feasible(k in 1usize..4, m in 1usize..4, eps in 0.01f64..0.5) {
        let p = planner::build_plan(k, m, eps).unwrap();
        let n: f64 = p.n.to_string().parse().unwrap();
        prop_assert!(planner::eq3_holds(k, m, eps, p.d0));
        prop_assert!(n > planner::eq4_rhs(k, eps, p.d0));
        prop_assert!(planner::appendix_holds(n, k, eps, p.d0));
        prop_assert!(planner::soundness_bound(&p).unwrap().total <= 3.0 * eps * (1.0 + 1e-12));
        // N is minimal for its d0: N − 2 breaks a condition.
        let below = n - 2.0;
        prop_assert!(!(below > planner::eq4_rhs(k, eps, p.d0) && planner::appendix_holds(below, k, eps, p.d0)) || p.flags.iter().any(|f| f == "n_float_precision"));
    }

    #[test]
    fn serfling_is_monotone(n in 1.0f64..500.0, k in 1.0f64..500.0, d1 in 0.0f64..1.0, d2 in 0.0f64..1.0) {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        for upper in [true, false] {
            let b = |delta| {
                let c = if upper { Concentration::SerflingUpper { n, k, delta } } else { Concentration::SerflingLower { n, k, delta } };
                concentration_bound(&c).unwrap().value
            };
            prop_assert!(b(hi) <= b(lo));
            prop_assert!((0.0..=1.0).contains(&b(lo)));
        }
    }

    #[test]
    fn wilson_contains_the_estimate(n in 2usize..5000, frac in 0.0f64..=1.0) {
        let s = (frac * n as f64).round();
        let [lo, hi] = harness::wilson(s, n);
        let p = s / n as f64;
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12 && 0.0 <= lo && hi <= 1.0);
    }

    #[test]
    fn vacuum_tail_log_is_consistent(d0 in 1.0f64..80.0) {
        let t = planner::vacuum_tail(d0);
        let l = planner::vacuum_tail_ln(d0);
        if t > 1e-300 {
            prop_assert!((t.ln() - l).abs() < 1e-8 * l.abs().max(1.0), "{t} vs {l}");
        }
    }
}
