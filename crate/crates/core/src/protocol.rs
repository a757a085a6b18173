//! The verifier: role assignment, dimension test, fidelity test.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{DeskSizes, VerificationPlan};
use crate::provers::{ChannelInstance, ChannelProverScript, Measurement, ProverInstance, ProverScript};
use crate::witness::{state_observable, witness_estimate, Branch, StateObservable, WitnessEstimate, WitnessKind};

/// Independent streams for one run. The prover stream is consumed before the
/// verifier draws anything, so commitments cannot depend on the selection.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub prover: ChaCha8Rng,
    pub verifier: ChaCha8Rng,
    pub nature: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(seed: u64, trial: u64) -> Self {
        let lane = |l: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(trial.wrapping_mul(3).wrapping_add(l));
            r
        };
        Self { prover: lane(0), verifier: lane(1), nature: lane(2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    DimensionTest { group: usize },
    Discarded,
    FidelityTest,
    Kept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dimension,
    Fidelity,
}

/// One measurement. `flag` is z for dimension-test records and absent otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub stage: Stage,
    pub register: usize,
    pub group: usize,
    pub theta: f64,
    pub branch: Branch,
    pub outcome: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub dimension_pass: bool,
    /// Σ_l z_{j,l} per group, over the registers measured before any abort.
    pub dimension_counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity_pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessEstimate>,
    pub kept_register_ids: Vec<usize>,
    pub accept: bool,
}

/// Something the verifier can measure register by register.
pub trait RegisterSource {
    fn registers(&self) -> usize;
    fn measure(&mut self, id: usize, j: usize, theta: f64, branch: Branch, rng: &mut ChaCha8Rng) -> Result<f64>;
    /// Ground-truth fidelity (F̄/F̄max for channel uses). Never used by the verdict.
    fn fidelity(&self, id: usize) -> f64;
    fn counters(&self) -> &[u32];
}

/// The rotated nullifier observable for a state target.
pub fn build_observable_for(kind: &WitnessKind, j: usize, theta: f64, branch: Branch) -> Result<StateObservable> {
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(Error::InvalidParameter(format!("θ = {theta} outside [0, π/2)")));
    }
    state_observable(kind, j, theta, branch)
}

pub struct StateSource {
    pub kind: WitnessKind,
    pub instance: ProverInstance,
}

impl RegisterSource for StateSource {
    fn registers(&self) -> usize {
        self.instance.len()
    }

    fn measure(&mut self, id: usize, j: usize, theta: f64, branch: Branch, rng: &mut ChaCha8Rng) -> Result<f64> {
        let obs = match build_observable_for(&self.kind, j, theta, branch)? {
            StateObservable::Linear(l) => Measurement::Linear(l),
            StateObservable::Polynomial(p) => Measurement::from_polynomial(&p, self.kind.modes())?,
        };
        self.instance.measure(id, &obs, rng)
    }

    fn fidelity(&self, id: usize) -> f64 {
        self.instance.fidelity(id)
    }

    fn counters(&self) -> &[u32] {
        self.instance.counters()
    }
}

pub struct ChannelSource {
    pub instance: ChannelInstance,
}

impl RegisterSource for ChannelSource {
    fn registers(&self) -> usize {
        self.instance.len()
    }

    fn measure(&mut self, id: usize, j: usize, theta: f64, branch: Branch, rng: &mut ChaCha8Rng) -> Result<f64> {
        let (obs, xi) = self.instance.probe().observable(j, theta, branch)?;
        self.instance.measure(id, &obs, xi, rng)
    }

    fn fidelity(&self, id: usize) -> f64 {
        self.instance.fidelity(id)
    }

    fn counters(&self) -> &[u32] {
        self.instance.counters()
    }
}

/// Checks that a desk plan can be run: even N, m < L ≤ N, R ≤ N/2.
pub fn check_sizes(s: &DeskSizes) -> Result<()> {
    if s.n == 0 || s.n % 2 != 0 {
        return Err(Error::InvalidParameter(format!("N = {} must be positive and even", s.n)));
    }
    if s.m >= s.l || s.l > s.n {
        return Err(Error::InvalidParameter(format!("need m < L ≤ N, got m = {}, L = {}, N = {}", s.m, s.l, s.n)));
    }
    if s.k == 0 {
        return Err(Error::InvalidParameter("k = 0".into()));
    }
    Ok(())
}

/// Total registers (k/2 + 1)N.
pub fn total_registers(s: &DeskSizes) -> usize {
    s.k * s.n / 2 + s.n
}

pub struct VerifierSession {
    pub sizes: DeskSizes,
    pub epsilon: f64,
    pub kind: WitnessKind,
    roles: Vec<Role>,
    // Register ids in role order: dimension groups, discarded, fidelity test, kept.
    order: Vec<usize>,
    verifier: ChaCha8Rng,
    nature: ChaCha8Rng,
    pub transcript: Vec<Record>,
}

impl VerifierSession {
    /// Draws the role assignment from one uniform permutation of register ids.
    pub fn new(sizes: DeskSizes, epsilon: f64, kind: WitnessKind, mut verifier: ChaCha8Rng, nature: ChaCha8Rng) -> Result<Self> {
        check_sizes(&sizes)?;
        if kind.modes() != sizes.k {
            return Err(Error::Dimension(format!("plan k = {}, target has {} modes", sizes.k, kind.modes())));
        }
        let total = total_registers(&sizes);
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut verifier);
        let half = sizes.n / 2;
        let dim = sizes.k * half;
        let mut roles = vec![Role::Kept; total];
        for (pos, &id) in order.iter().enumerate() {
            roles[id] = if pos < dim {
                Role::DimensionTest { group: pos / half }
            } else if pos < dim + sizes.n - sizes.l {
                Role::Discarded
            } else if pos < total - sizes.m {
                Role::FidelityTest
            } else {
                Role::Kept
            };
        }
        Ok(Self { sizes, epsilon, kind, roles, order, verifier, nature, transcript: Vec::new() })
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn kept_ids(&self) -> Vec<usize> {
        self.order[self.order.len() - self.sizes.m..].to_vec()
    }

    fn draw_setting(&mut self) -> (f64, Branch) {
        let theta = self.verifier.gen::<f64>() * std::f64::consts::FRAC_PI_2;
        let branch = if self.verifier.gen::<bool>() { Branch::Q } else { Branch::P };
        (theta, branch)
    }

    /// Returns per-group counts and whether every group stayed within R.
    pub fn run_dimension_test(&mut self, src: &mut dyn RegisterSource) -> Result<(bool, Vec<usize>)> {
        self.check_source(src)?;
        let half = self.sizes.n / 2;
        let thr = self.sizes.d0 as f64 / 2.0;
        let mut counts = vec![0usize; self.sizes.k];
        for j in 0..self.sizes.k {
            for l in 0..half {
                let id = self.order[j * half + l];
                let (theta, branch) = self.draw_setting();
                let outcome = src.measure(id, j, theta, branch, &mut self.nature)?;
                let z = outcome * outcome > thr;
                counts[j] += usize::from(z);
                self.transcript.push(Record { stage: Stage::Dimension, register: id, group: j, theta, branch, outcome, flag: Some(z) });
                if counts[j] > self.sizes.r {
                    return Ok((false, counts));
                }
            }
        }
        Ok((true, counts))
    }

    pub fn run_fidelity_test(&mut self, src: &mut dyn RegisterSource) -> Result<WitnessEstimate> {
        self.check_source(src)?;
        let start = self.sizes.k * self.sizes.n / 2 + self.sizes.n - self.sizes.l;
        let end = self.order.len() - self.sizes.m;
        let mut chi = Vec::with_capacity(end - start);
        for pos in start..end {
            let id = self.order[pos];
            let j = self.verifier.gen_range(0..self.sizes.k);
            let (theta, branch) = self.draw_setting();
            let outcome = src.measure(id, j, theta, branch, &mut self.nature)?;
            chi.push(outcome);
            self.transcript.push(Record { stage: Stage::Fidelity, register: id, group: j, theta, branch, outcome, flag: None });
        }
        witness_estimate(&self.kind, &chi, self.sizes.m, self.epsilon)
    }

    fn check_source(&self, src: &dyn RegisterSource) -> Result<()> {
        if src.registers() < self.order.len() {
            return Err(Error::ProverExhausted(format!(
                "source serves {} registers, plan needs {}",
                src.registers(),
                self.order.len()
            )));
        }
        Ok(())
    }

    /// Dimension test, then the fidelity test if it passed.
    pub fn run(&mut self, src: &mut dyn RegisterSource) -> Result<Verdict> {
        let (dimension_pass, dimension_counts) = self.run_dimension_test(src)?;
        let (fidelity_pass, witness) = if dimension_pass {
            let w = self.run_fidelity_test(src)?;
            (Some(w.pass), Some(w))
        } else {
            (None, None)
        };
        Ok(Verdict {
            dimension_pass,
            dimension_counts,
            accept: dimension_pass && fidelity_pass == Some(true),
            fidelity_pass,
            witness,
            kept_register_ids: self.kept_ids(),
        })
    }
}

/// A finished run: the verdict, its transcript and the ground truth for the kept registers.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub transcript: Vec<Record>,
    pub kept_fidelities: Vec<f64>,
    /// True if any kept register was measured. Must never happen.
    pub kept_touched: bool,
    pub roles: Vec<Role>,
    pub clipped: usize,
}

fn finish(session: VerifierSession, verdict: Verdict, src: &dyn RegisterSource, clipped: usize) -> RunOutcome {
    let kept_fidelities = verdict.kept_register_ids.iter().map(|&id| src.fidelity(id)).collect();
    let kept_touched = verdict.kept_register_ids.iter().any(|&id| src.counters()[id] != 0);
    RunOutcome { verdict, transcript: session.transcript, kept_fidelities, kept_touched, roles: session.roles, clipped }
}

/// Runs one state verification with the given streams.
pub fn run_state_verification_sized(
    sizes: DeskSizes,
    epsilon: f64,
    prover: &ProverScript,
    mut streams: RunStreams,
) -> Result<RunOutcome> {
    check_sizes(&sizes)?;
    let instance = prover.instantiate(total_registers(&sizes), &mut streams.prover)?;
    let clipped = instance.clipped;
    let kind = prover.target.kind.clone();
    let mut src = StateSource { kind: kind.clone(), instance };
    let mut session = VerifierSession::new(sizes, epsilon, kind, streams.verifier, streams.nature)?;
    let verdict = session.run(&mut src)?;
    Ok(finish(session, verdict, &src, clipped))
}

pub fn run_state_verification(plan: &VerificationPlan, prover: &ProverScript, streams: RunStreams) -> Result<RunOutcome> {
    run_state_verification_sized(plan.desk_sizes()?, plan.epsilon, prover, streams)
}

pub fn run_channel_verification_sized(
    sizes: DeskSizes,
    epsilon: f64,
    prover: &ChannelProverScript,
    mut streams: RunStreams,
) -> Result<RunOutcome> {
    check_sizes(&sizes)?;
    let instance = prover.instantiate(total_registers(&sizes), &mut streams.prover)?;
    let clipped = instance.clipped;
    let mut src = ChannelSource { instance };
    let mut session = VerifierSession::new(sizes, epsilon, prover.kind.clone(), streams.verifier, streams.nature)?;
    let verdict = session.run(&mut src)?;
    Ok(finish(session, verdict, &src, clipped))
}

pub fn run_channel_verification(
    plan: &VerificationPlan,
    prover: &ChannelProverScript,
    streams: RunStreams,
) -> Result<RunOutcome> {
    run_channel_verification_sized(plan.desk_sizes()?, plan.epsilon, prover, streams)
}

/// Recomputes the verdict from a transcript alone.
pub fn replay(
    sizes: &DeskSizes,
    epsilon: f64,
    kind: &WitnessKind,
    records: &[Record],
    kept_register_ids: Vec<usize>,
) -> Result<Verdict> {
    check_sizes(sizes)?;
    let thr = sizes.d0 as f64 / 2.0;
    let mut counts = vec![0usize; sizes.k];
    let mut dim_seen = 0usize;
    let mut aborted = false;
    let mut chi = Vec::new();
    for r in records {
        match r.stage {
            Stage::Dimension => {
                if r.group >= sizes.k {
                    return Err(Error::Dimension(format!("record group {} of {}", r.group, sizes.k)));
                }
                let z = r.outcome * r.outcome > thr;
                if r.flag != Some(z) {
                    return Err(Error::InvalidParameter(format!("register {}: flag disagrees with outcome", r.register)));
                }
                dim_seen += 1;
                counts[r.group] += usize::from(z);
                aborted |= counts[r.group] > sizes.r;
            }
            Stage::Fidelity => chi.push(r.outcome),
        }
    }
    let dimension_pass = !aborted && dim_seen == sizes.k * sizes.n / 2;
    let (fidelity_pass, witness) = if dimension_pass {
        let w = witness_estimate(kind, &chi, sizes.m, epsilon)?;
        (Some(w.pass), Some(w))
    } else {
        (None, None)
    };
    Ok(Verdict {
        dimension_pass,
        dimension_counts: counts,
        accept: dimension_pass && fidelity_pass == Some(true),
        fidelity_pass,
        witness,
        kept_register_ids,
    })
}

/// Transcript as JSON lines.
pub fn transcript_jsonl(records: &[Record]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_transcript(text: &str) -> Result<Vec<Record>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::SymplecticOp;
    use crate::provers::{self, StateRecipe, Target};

    fn vacuum() -> WitnessKind {
        WitnessKind::gaussian_state(SymplecticOp::identity(1))
    }

    fn sizes(n: usize, l: usize, m: usize, r: usize, d0: u64) -> DeskSizes {
        DeskSizes { k: 1, m, n, l, r, d0 }
    }

    #[test]
    fn role_counts_and_kept_untouched() {
        let s = DeskSizes { k: 2, m: 3, n: 40, l: 20, r: 2, d0: 50 };
        let t = Target::new(&WitnessKind::gaussian_state(SymplecticOp::identity(2)), 10).unwrap();
        let out = run_state_verification_sized(s, 0.2, &provers::honest_iid(t), RunStreams::new(1, 0)).unwrap();
        let count = |f: &dyn Fn(&Role) -> bool| out.roles.iter().filter(|r| f(r)).count();
        assert_eq!(count(&|r| matches!(r, Role::DimensionTest { group: 0 })), 20);
        assert_eq!(count(&|r| matches!(r, Role::DimensionTest { group: 1 })), 20);
        assert_eq!(count(&|r| *r == Role::Discarded), 20);
        assert_eq!(count(&|r| *r == Role::FidelityTest), 17);
        assert_eq!(count(&|r| *r == Role::Kept), 3);
        assert!(!out.kept_touched);
        assert_eq!(out.transcript.len(), 40 + 17);
        let mut seen: Vec<usize> = out.transcript.iter().map(|r| r.register).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), out.transcript.len());
    }

    #[test]
    fn replay_matches() {
        let t = Target::new(&vacuum(), 10).unwrap();
        for (seed, prover) in [
            (3, provers::honest_iid(t.clone())),
            (4, provers::iid_wrong(t.clone(), StateRecipe::Coherent { re: 2.0, im: 0.0 })),
            (5, provers::iid_wrong(t.clone(), StateRecipe::Thermal { nbar: 30.0 })),
        ] {
            let s = sizes(200, 120, 1, 3, 50);
            let out = run_state_verification_sized(s, 0.2, &prover, RunStreams::new(seed, 7)).unwrap();
            let text = transcript_jsonl(&out.transcript).unwrap();
            let back = parse_transcript(&text).unwrap();
            let v = replay(&s, 0.2, &vacuum(), &back, out.verdict.kept_register_ids.clone()).unwrap();
            assert_eq!(v, out.verdict);
        }
    }

    #[test]
    fn coherent_is_rejected_and_hot_fails_dimension() {
        let t = Target::new(&vacuum(), 10).unwrap();
        let s = sizes(1000, 600, 1, 5, 50);
        let out = run_state_verification_sized(
            s,
            0.2,
            &provers::iid_wrong(t.clone(), StateRecipe::Coherent { re: 2.0, im: 0.0 }),
            RunStreams::new(9, 0),
        )
        .unwrap();
        assert!(out.verdict.dimension_pass && !out.verdict.accept);
        let out = run_state_verification_sized(
            s,
            0.2,
            &provers::iid_wrong(t, StateRecipe::Thermal { nbar: 200.0 }),
            RunStreams::new(9, 1),
        )
        .unwrap();
        assert!(!out.verdict.dimension_pass && out.verdict.fidelity_pass.is_none());
        // Early abort: at most R + 1 flagged records.
        assert_eq!(out.transcript.iter().filter(|r| r.flag == Some(true)).count(), 6);
    }

    #[test]
    fn single_fidelity_sample_edge() {
        // L − m = 1 with χ² = 1/2 gives W* = 1.
        let w = witness_estimate(&vacuum(), &[std::f64::consts::FRAC_1_SQRT_2], 1, 0.2).unwrap();
        assert!((w.value - 1.0).abs() < 1e-12 && w.pass);
        assert!(check_sizes(&sizes(10, 1, 1, 0, 5)).is_err());
        assert!(check_sizes(&sizes(10, 10, 1, 0, 5)).is_ok());
    }

    #[test]
    fn observable_rotation() {
        let k = vacuum();
        match build_observable_for(&k, 0, std::f64::consts::FRAC_PI_4, Branch::Q).unwrap() {
            StateObservable::Linear(l) => {
                assert!((l.coeffs[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
                assert!((l.coeffs[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
            }
            _ => panic!("vacuum observable should be linear"),
        }
        assert!(build_observable_for(&k, 0, 2.0, Branch::Q).is_err());
    }
}
