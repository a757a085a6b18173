//! Honest and adversarial sources for states and channels.
//!
//! A script is instantiated once per run from its own random stream, before the
//! verifier draws anything; every register's state is fixed at that point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, FockArray, JointHomodyne, PolynomialObservable};
use crate::phasespace::{
    self, apply_symplectic, make_vacuum, pure_state_fidelity, GaussianChannel, GaussianState, LinearObservable,
    SymplecticOp,
};
use crate::witness::{probe_spec, ProbeSpec, WitnessKind};

/// Default Fock cutoff for non-Gaussian targets built from a witness kind.
pub const DEFAULT_CUTOFF: usize = 16;

/// How one register is prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateRecipe {
    /// The verification target itself.
    Target,
    /// The target with the unitary applied to thermal noise of occupation `nbar` per mode.
    NoisyTarget { nbar: f64 },
    /// The target displaced by `d` (length 2k).
    DisplacedTarget { d: Vec<f64> },
    Coherent { re: f64, im: f64 },
    Thermal { nbar: f64 },
    Squeezed { r: f64 },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Product number state.
    Number { levels: Vec<usize>, cutoff: usize },
    /// Single-mode Σ p_n |n⟩⟨n|.
    FockDiagonal { probs: Vec<f64> },
    Hypergraph { edges: Vec<Vec<usize>>, xi: f64, cutoff: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    /// Number of registers; `None` fills whatever the other blocks leave.
    #[serde(default)]
    pub count: Option<usize>,
    pub recipe: StateRecipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProverSpec {
    HonestIid,
    IidWrong { sigma: StateRecipe },
    ClassicalMixture { components: Vec<MixtureComponent> },
    /// Thermal occupation on top of the target following a reflected random walk.
    MarkovDrift {
        #[serde(default)]
        start: f64,
        step: f64,
        #[serde(default = "default_drift_cap")]
        cap: f64,
    },
    EnergySpiker { spike_prob: f64, spike: StateRecipe },
}

fn default_drift_cap() -> f64 {
    50.0
}

/// A prepared register.
#[derive(Debug, Clone)]
pub enum RegisterState {
    Gaussian(GaussianState),
    Fock(Arc<FockArray>),
}

impl RegisterState {
    pub fn modes(&self) -> usize {
        match self {
            RegisterState::Gaussian(g) => g.modes(),
            RegisterState::Fock(f) => f.modes(),
        }
    }
}

/// An observable the verifier can ask a register to be measured in.
#[derive(Debug, Clone)]
pub enum Measurement {
    Linear(LinearObservable),
    Joint(JointHomodyne),
}

impl Measurement {
    pub fn from_polynomial(p: &PolynomialObservable, modes: usize) -> Result<Self> {
        Ok(Measurement::Joint(p.to_joint_homodyne(modes)?))
    }
}

pub fn measure_state<R: Rng + ?Sized>(state: &RegisterState, obs: &Measurement, rng: &mut R) -> Result<f64> {
    match (state, obs) {
        (RegisterState::Gaussian(g), Measurement::Linear(l)) => phasespace::sample_homodyne(g, l, rng),
        (RegisterState::Gaussian(g), Measurement::Joint(j)) => {
            let xs = phasespace::sample_local_quadratures(g, &j.settings, rng)?;
            Ok(j.evaluate(&xs))
        }
        (RegisterState::Fock(f), Measurement::Linear(l)) => f.sample_homodyne(l, rng),
        (RegisterState::Fock(f), Measurement::Joint(j)) => f.sample_joint(j, rng),
    }
}

/// The target in both representations the oracles need.
#[derive(Debug, Clone)]
pub struct Target {
    pub kind: WitnessKind,
    pub gaussian: Option<GaussianState>,
    pub fock: Option<Arc<FockArray>>,
    pub cutoff: usize,
}

impl Target {
    pub fn new(kind: &WitnessKind, cutoff: usize) -> Result<Self> {
        if kind.is_channel() {
            return Err(Error::InvalidParameter(format!("{} is a channel target", kind.tag())));
        }
        let k = kind.modes();
        let gaussian = match kind.gaussian_target() {
            Some(op) => Some(apply_symplectic(&make_vacuum(k)?, &op)?),
            None => None,
        };
        let fock = match kind {
            WitnessKind::HypergraphState { modes, edges, xi } if gaussian.is_none() => {
                Some(Arc::new(fock::hypergraph_state(edges, *xi, *modes, cutoff)?))
            }
            _ => None,
        };
        Ok(Self { kind: kind.clone(), gaussian, fock, cutoff })
    }

    fn state(&self) -> RegisterState {
        match (&self.gaussian, &self.fock) {
            (Some(g), _) => RegisterState::Gaussian(g.clone()),
            (None, Some(f)) => RegisterState::Fock(f.clone()),
            (None, None) => unreachable!("target without representation"),
        }
    }

    fn fock_target(&self) -> Result<Arc<FockArray>> {
        if let Some(f) = &self.fock {
            return Ok(f.clone());
        }
        let g = self.gaussian.as_ref().expect("gaussian target");
        Ok(Arc::new(fock::gaussian_to_fock(g, self.cutoff)?))
    }

    /// Fidelity of a register state with the target.
    pub fn fidelity(&self, st: &RegisterState) -> Result<f64> {
        if st.modes() != self.kind.modes() {
            return Err(Error::Dimension("register and target mode counts differ".into()));
        }
        match (st, &self.gaussian) {
            (RegisterState::Gaussian(g), Some(t)) => pure_state_fidelity(t, g),
            (RegisterState::Gaussian(_), None) => Err(Error::Unsupported(
                "Gaussian register against a non-Gaussian target".into(),
            )),
            (RegisterState::Fock(f), _) => {
                let t = self.fock_target()?;
                if t.cutoff() != f.cutoff() {
                    let t2 = match &self.gaussian {
                        Some(g) => fock::gaussian_to_fock(g, f.cutoff())?,
                        None => match &self.kind {
                            WitnessKind::HypergraphState { modes, edges, xi } => {
                                fock::hypergraph_state(edges, *xi, *modes, f.cutoff())?
                            }
                            _ => unreachable!(),
                        },
                    };
                    return fock::fidelity(f, &t2);
                }
                fock::fidelity(f, &t)
            }
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("matrix is not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn product_thermal(k: usize, nbar: f64) -> Result<GaussianState> {
    let one = GaussianState::thermal(nbar)?;
    let mut s = one.clone();
    for _ in 1..k {
        s = s.tensor(&one);
    }
    Ok(s)
}

impl StateRecipe {
    pub fn build(&self, target: &Target) -> Result<RegisterState> {
        let k = target.kind.modes();
        let single = |what: &str| -> Result<()> {
            if k != 1 {
                return Err(Error::InvalidParameter(format!("{what} recipe is single-mode, target has {k} modes")));
            }
            Ok(())
        };
        Ok(match self {
            StateRecipe::Target => target.state(),
            StateRecipe::NoisyTarget { nbar } => {
                let op = target.kind.gaussian_target().ok_or_else(|| {
                    Error::Unsupported("noisy_target needs a Gaussian target".into())
                })?;
                RegisterState::Gaussian(apply_symplectic(&product_thermal(k, *nbar)?, &op)?)
            }
            StateRecipe::DisplacedTarget { d } => {
                let g = target.gaussian.as_ref().ok_or_else(|| {
                    Error::Unsupported("displaced_target needs a Gaussian target".into())
                })?;
                let op = SymplecticOp::displacement(DVector::from_column_slice(d))?;
                if op.modes() != k {
                    return Err(Error::Dimension(format!("displacement of length {}", d.len())));
                }
                RegisterState::Gaussian(apply_symplectic(g, &op)?)
            }
            StateRecipe::Coherent { re, im } => {
                single("coherent")?;
                RegisterState::Gaussian(GaussianState::coherent(Complex64::new(*re, *im)))
            }
            StateRecipe::Thermal { nbar } => RegisterState::Gaussian(product_thermal(k, *nbar)?),
            StateRecipe::Squeezed { r } => {
                single("squeezed")?;
                RegisterState::Gaussian(GaussianState::squeezed_vacuum(*r))
            }
            StateRecipe::Gaussian { mean, cov } => {
                let st = GaussianState::new(DVector::from_column_slice(mean), matrix_from_rows(cov)?)?;
                if st.modes() != k {
                    return Err(Error::Dimension(format!("state has {} modes, target {k}", st.modes())));
                }
                RegisterState::Gaussian(st)
            }
            StateRecipe::Number { levels, cutoff } => {
                if levels.len() != k {
                    return Err(Error::Dimension(format!("{} levels for {k} modes", levels.len())));
                }
                RegisterState::Fock(Arc::new(FockArray::number(levels, *cutoff)?))
            }
            StateRecipe::FockDiagonal { probs } => {
                single("fock_diagonal")?;
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| *p < 0.0) {
                    return Err(Error::InvalidParameter(format!("diagonal weights sum to {total}")));
                }
                RegisterState::Fock(Arc::new(FockArray::diagonal(probs)?))
            }
            StateRecipe::Hypergraph { edges, xi, cutoff } => {
                RegisterState::Fock(Arc::new(fock::hypergraph_state(edges, *xi, k, *cutoff)?))
            }
        })
    }
}

/// A committed assignment of states to registers for one run.
#[derive(Debug)]
pub struct ProverInstance {
    pool: Vec<RegisterState>,
    pool_fidelity: Vec<f64>,
    assignment: Vec<u32>,
    counters: Vec<u32>,
    /// Registers whose preparation was clipped back to a physical value.
    pub clipped: usize,
    /// Which mixture component was drawn (mixtures only).
    pub component: Option<usize>,
}

impl ProverInstance {
    fn new(pool: Vec<RegisterState>, target: &Target, assignment: Vec<u32>) -> Result<Self> {
        let pool_fidelity = pool.iter().map(|s| target.fidelity(s)).collect::<Result<Vec<_>>>()?;
        let n = assignment.len();
        Ok(Self { pool, pool_fidelity, assignment, counters: vec![0; n], clipped: 0, component: None })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn state(&self, id: usize) -> &RegisterState {
        &self.pool[self.assignment[id] as usize]
    }

    /// Ground-truth fidelity of register `id` with the target.
    pub fn fidelity(&self, id: usize) -> f64 {
        self.pool_fidelity[self.assignment[id] as usize]
    }

    pub fn measure<R: Rng + ?Sized>(&mut self, id: usize, obs: &Measurement, rng: &mut R) -> Result<f64> {
        if id >= self.assignment.len() {
            return Err(Error::ProverExhausted(format!("register {id} of {}", self.assignment.len())));
        }
        self.counters[id] += 1;
        measure_state(&self.pool[self.assignment[id] as usize], obs, rng)
    }

    /// How many times each register has been measured.
    pub fn counters(&self) -> &[u32] {
        &self.counters
    }

    /// Reorders the committed registers by a uniform permutation.
    pub fn permute<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.assignment.shuffle(rng);
    }

    /// Pool index of each register; equal indices mean identical states.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }
}

#[derive(Debug, Clone)]
pub struct ProverScript {
    pub spec: ProverSpec,
    pub target: Target,
    /// Apply an independent uniform phase rotation to every mode of every register.
    pub phase_randomize: bool,
}

/// Every register is the target.
pub fn honest_iid(target: Target) -> ProverScript {
    ProverScript { spec: ProverSpec::HonestIid, target, phase_randomize: false }
}

pub fn iid_wrong(target: Target, sigma: StateRecipe) -> ProverScript {
    ProverScript { spec: ProverSpec::IidWrong { sigma }, target, phase_randomize: false }
}

pub fn classical_mixture(target: Target, components: Vec<MixtureComponent>) -> Result<ProverScript> {
    let s = ProverScript { spec: ProverSpec::ClassicalMixture { components }, target, phase_randomize: false };
    s.validate()?;
    Ok(s)
}

pub fn markov_drift(target: Target, start: f64, step: f64, cap: f64) -> Result<ProverScript> {
    let s = ProverScript { spec: ProverSpec::MarkovDrift { start, step, cap }, target, phase_randomize: false };
    s.validate()?;
    Ok(s)
}

pub fn energy_spiker(target: Target, spike_prob: f64, spike: StateRecipe) -> Result<ProverScript> {
    let s = ProverScript { spec: ProverSpec::EnergySpiker { spike_prob, spike }, target, phase_randomize: false };
    s.validate()?;
    Ok(s)
}

impl ProverScript {
    pub fn new(spec: ProverSpec, target: Target) -> Result<Self> {
        let s = Self { spec, target, phase_randomize: false };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.spec {
            ProverSpec::ClassicalMixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidParameter("mixture without components".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
                }
                for c in components {
                    if c.blocks.iter().filter(|b| b.count.is_none()).count() > 1 {
                        return Err(Error::InvalidParameter("more than one filler block".into()));
                    }
                }
            }
            ProverSpec::MarkovDrift { start, step, cap } => {
                if !(*start >= 0.0 && *step >= 0.0 && *cap >= *start) {
                    return Err(Error::InvalidParameter(format!("drift start {start}, step {step}, cap {cap}")));
                }
                if self.target.gaussian.is_none() {
                    return Err(Error::Unsupported("markov drift needs a Gaussian target".into()));
                }
            }
            ProverSpec::EnergySpiker { spike_prob, .. } => {
                if !(0.0..=1.0).contains(spike_prob) {
                    return Err(Error::InvalidParameter(format!("spike probability {spike_prob}")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Commits to the states of `registers` registers using the prover's own stream.
    pub fn instantiate<R: Rng + ?Sized>(&self, registers: usize, rng: &mut R) -> Result<ProverInstance> {
        let target = &self.target;
        let mut inst = match &self.spec {
            ProverSpec::HonestIid => ProverInstance::new(vec![target.state()], target, vec![0; registers])?,
            ProverSpec::IidWrong { sigma } => {
                ProverInstance::new(vec![sigma.build(target)?], target, vec![0; registers])?
            }
            ProverSpec::ClassicalMixture { components } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (i, c) in components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let comp = &components[pick];
                let fixed: usize = comp.blocks.iter().filter_map(|b| b.count).sum();
                let has_filler = comp.blocks.iter().any(|b| b.count.is_none());
                if fixed > registers || (!has_filler && fixed != registers) {
                    return Err(Error::Dimension(format!(
                        "component lists {fixed} registers, run needs {registers}"
                    )));
                }
                let mut pool = Vec::with_capacity(comp.blocks.len());
                let mut assignment = Vec::with_capacity(registers);
                for (i, b) in comp.blocks.iter().enumerate() {
                    pool.push(b.recipe.build(target)?);
                    let n = b.count.unwrap_or(registers - fixed);
                    assignment.extend(std::iter::repeat(i as u32).take(n));
                }
                assignment.shuffle(rng);
                let mut inst = ProverInstance::new(pool, target, assignment)?;
                inst.component = Some(pick);
                inst
            }
            ProverSpec::MarkovDrift { start, step, cap } => {
                let op = target.kind.gaussian_target().expect("validated");
                let k = target.kind.modes();
                let mut nbar = *start;
                let mut clipped = 0;
                let mut pool = Vec::with_capacity(registers);
                for _ in 0..registers {
                    pool.push(RegisterState::Gaussian(apply_symplectic(&product_thermal(k, nbar)?, &op)?));
                    nbar += if rng.gen::<bool>() { *step } else { -*step };
                    if nbar < 0.0 {
                        nbar = -nbar;
                        clipped += 1;
                    }
                    if nbar > *cap {
                        nbar = 2.0 * cap - nbar;
                        clipped += 1;
                    }
                }
                let mut inst = ProverInstance::new(pool, target, (0..registers as u32).collect())?;
                inst.clipped = clipped;
                inst
            }
            ProverSpec::EnergySpiker { spike_prob, spike } => {
                let pool = vec![target.state(), spike.build(target)?];
                let assignment = (0..registers).map(|_| u32::from(rng.gen::<f64>() < *spike_prob)).collect();
                ProverInstance::new(pool, target, assignment)?
            }
        };
        if self.phase_randomize {
            self.randomize_phases(&mut inst, rng)?;
        }
        Ok(inst)
    }

    fn randomize_phases<R: Rng + ?Sized>(&self, inst: &mut ProverInstance, rng: &mut R) -> Result<()> {
        let k = self.target.kind.modes();
        let mut pool = Vec::with_capacity(inst.len());
        let mut fid = Vec::with_capacity(inst.len());
        for id in 0..inst.len() {
            let st = match inst.state(id) {
                RegisterState::Gaussian(g) => {
                    let mut op = SymplecticOp::rotation(rng.gen::<f64>() * std::f64::consts::TAU);
                    for _ in 1..k {
                        op = op.direct_sum(&SymplecticOp::rotation(rng.gen::<f64>() * std::f64::consts::TAU));
                    }
                    RegisterState::Gaussian(apply_symplectic(g, &op)?)
                }
                RegisterState::Fock(_) => {
                    return Err(Error::Unsupported("phase randomisation of Fock registers".into()))
                }
            };
            fid.push(self.target.fidelity(&st)?);
            pool.push(st);
        }
        inst.pool = pool;
        inst.pool_fidelity = fid;
        inst.assignment = (0..inst.len() as u32).collect();
        Ok(())
    }
}

/// How each channel use behaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelRecipe {
    Ideal,
    /// Pure loss of transmissivity η before the ideal channel.
    Lossy { eta: f64 },
    /// Additive noise of variance `y` per quadrature after the ideal channel.
    Noisy { y: f64 },
    ReplaceWithVacuum,
    /// Additive noise whose variance follows a reflected random walk across uses.
    Drifting { step: f64, #[serde(default)] start: f64, #[serde(default = "default_drift_cap")] cap: f64 },
    Gaussian { x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, shift: Vec<f64> },
}

/// The channel achieving the witness optimum for `kind`.
pub fn ideal_channel(kind: &WitnessKind) -> Result<GaussianChannel> {
    match kind {
        WitnessKind::Amplifier { lambda, g } => {
            if *g < lambda + 1.0 {
                return Err(Error::Unsupported(format!(
                    "no Gaussian channel saturates the amplifier witness for g = {g} < λ+1"
                )));
            }
            GaussianChannel::quantum_limited(1, g / (lambda + 1.0))
        }
        WitnessKind::AttenuatorOrStorage { g, .. } => {
            if *g > 1.0 {
                return Err(Error::Unsupported(format!("no channel attains unit fidelity for g = {g} > 1")));
            }
            GaussianChannel::pure_loss(1, g * g)
        }
        WitnessKind::MemoryMultimode { target, .. } => Ok(GaussianChannel::identity(target.modes())),
        WitnessKind::CzGate { t, .. } => Ok(GaussianChannel::from_symplectic(t)),
        WitnessKind::PurifierHighGain { .. } | WitnessKind::PurifierLowGain { .. } => Err(Error::Unsupported(
            "no phase-insensitive Gaussian channel saturates the purifier witness".into(),
        )),
        _ => Err(Error::InvalidParameter(format!("{} is a state target", kind.tag()))),
    }
}

/// F̄/F̄max for one channel use.
pub fn channel_ground_truth(kind: &WitnessKind, ch: &GaussianChannel) -> Result<f64> {
    let f = match kind {
        WitnessKind::Amplifier { lambda, g } | WitnessKind::AttenuatorOrStorage { lambda, g } => {
            phasespace::coherent_average_fidelity(ch, *lambda, *g)?
        }
        WitnessKind::PurifierHighGain { lambda, mu, g } | WitnessKind::PurifierLowGain { lambda, mu, g } => {
            phasespace::ensemble_average_fidelity(ch, *lambda, *g, Some(*mu))?
        }
        WitnessKind::MemoryMultimode { lambda, target } => {
            phasespace::ensemble_average_fidelity(&ch.conjugate(target, target)?, *lambda, 1.0, None)?
        }
        WitnessKind::CzGate { lambda, target, t } => {
            let after = t.compose(target)?;
            phasespace::ensemble_average_fidelity(&ch.conjugate(target, &after)?, *lambda, 1.0, None)?
        }
        _ => return Err(Error::InvalidParameter(format!("{} is a state target", kind.tag()))),
    };
    Ok((f / kind.fbar_norm()).min(1.0))
}

#[derive(Debug, Clone)]
pub struct ChannelProverScript {
    pub kind: WitnessKind,
    pub recipe: ChannelRecipe,
}

pub fn channel_prover(kind: &WitnessKind, recipe: ChannelRecipe) -> Result<ChannelProverScript> {
    if !kind.is_channel() {
        return Err(Error::InvalidParameter(format!("{} is a state target", kind.tag())));
    }
    let s = ChannelProverScript { kind: kind.clone(), recipe };
    // Build once to surface parameter errors before any run.
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    s.instantiate(1, &mut rng)?;
    Ok(s)
}

#[derive(Debug)]
pub struct ChannelInstance {
    probe: ProbeSpec,
    pool: Vec<(GaussianChannel, GaussianState, f64)>,
    assignment: Vec<u32>,
    counters: Vec<u32>,
    pub clipped: usize,
}

impl ChannelProverScript {
    fn ideal_or_identity(&self) -> Result<GaussianChannel> {
        ideal_channel(&self.kind)
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, uses: usize, rng: &mut R) -> Result<ChannelInstance> {
        let probe = probe_spec(&self.kind)?;
        let k = probe.channel_modes.len();
        let mut clipped = 0;
        let channels: Vec<GaussianChannel> = match &self.recipe {
            ChannelRecipe::Ideal => vec![self.ideal_or_identity()?],
            ChannelRecipe::Lossy { eta } => {
                vec![self.ideal_or_identity()?.compose(&GaussianChannel::pure_loss(k, *eta)?)?]
            }
            ChannelRecipe::Noisy { y } => vec![GaussianChannel::additive_noise(k, *y)?.compose(&self.ideal_or_identity()?)?],
            ChannelRecipe::ReplaceWithVacuum => vec![GaussianChannel::replace_with_vacuum(k)],
            ChannelRecipe::Gaussian { x, y, shift } => vec![GaussianChannel::new(
                matrix_from_rows(x)?,
                matrix_from_rows(y)?,
                DVector::from_column_slice(shift),
            )?],
            ChannelRecipe::Drifting { step, start, cap } => {
                if !(*step >= 0.0 && *start >= 0.0 && cap >= start) {
                    return Err(Error::InvalidParameter(format!("drift start {start}, step {step}, cap {cap}")));
                }
                let ideal = self.ideal_or_identity()?;
                let mut y = *start;
                let mut out = Vec::with_capacity(uses);
                for _ in 0..uses {
                    out.push(GaussianChannel::additive_noise(k, y)?.compose(&ideal)?);
                    y += if rng.gen::<bool>() { *step } else { -*step };
                    if y < 0.0 {
                        y = -y;
                        clipped += 1;
                    }
                    if y > *cap {
                        y = 2.0 * cap - y;
                        clipped += 1;
                    }
                }
                out
            }
        };
        let assignment = if channels.len() == 1 { vec![0; uses] } else { (0..uses as u32).collect() };
        let mut pool = Vec::with_capacity(channels.len());
        for ch in channels {
            if ch.modes() != k {
                return Err(Error::Dimension(format!("channel acts on {} modes, probe on {k}", ch.modes())));
            }
            let out = probe.output(&ch)?;
            let truth = channel_ground_truth(&self.kind, &ch)?;
            pool.push((ch, out, truth));
        }
        Ok(ChannelInstance { probe, pool, assignment, counters: vec![0; uses], clipped })
    }
}

impl ChannelInstance {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn probe(&self) -> &ProbeSpec {
        &self.probe
    }

    pub fn channel(&self, id: usize) -> &GaussianChannel {
        &self.pool[self.assignment[id] as usize].0
    }

    /// F̄/F̄max of use `id`.
    pub fn fidelity(&self, id: usize) -> f64 {
        self.pool[self.assignment[id] as usize].2
    }

    /// Feeds the probe through use `id` and measures the observable of group `j`.
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        id: usize,
        obs: &LinearObservable,
        xi_coeff: f64,
        rng: &mut R,
    ) -> Result<f64> {
        if id >= self.assignment.len() {
            return Err(Error::ProverExhausted(format!("use {id} of {}", self.assignment.len())));
        }
        self.counters[id] += 1;
        let out = &self.pool[self.assignment[id] as usize].1;
        let x = phasespace::sample_homodyne(out, obs, rng)?;
        if xi_coeff != 0.0 {
            let xi: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * self.probe.offset_variance.sqrt();
            return Ok(x + xi_coeff * xi);
        }
        Ok(x)
    }

    pub fn counters(&self) -> &[u32] {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vacuum_target() -> Target {
        Target::new(&WitnessKind::gaussian_state(SymplecticOp::identity(1)), 30).unwrap()
    }

    #[test]
    fn wrong_state_fidelities() {
        let t = vacuum_target();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = iid_wrong(t.clone(), StateRecipe::Coherent { re: 2.0, im: 0.0 }).instantiate(5, &mut rng).unwrap();
        assert_relative_eq!(p.fidelity(3), (-4f64).exp(), epsilon = 1e-12);
        let p = iid_wrong(t.clone(), StateRecipe::Thermal { nbar: 1.0 }).instantiate(5, &mut rng).unwrap();
        assert_relative_eq!(p.fidelity(0), 0.5, epsilon = 1e-12);
        let p = iid_wrong(t.clone(), StateRecipe::FockDiagonal { probs: vec![0.5, 0.5] }).instantiate(2, &mut rng).unwrap();
        assert_relative_eq!(p.fidelity(1), 0.5, epsilon = 1e-12);
        let p = honest_iid(t).instantiate(4, &mut rng).unwrap();
        assert_eq!(p.fidelity(2), 1.0);
    }

    #[test]
    fn mixture_and_spiker() {
        let t = vacuum_target();
        let comps = vec![
            MixtureComponent { weight: 0.5, blocks: vec![Block { count: None, recipe: StateRecipe::Target }] },
            MixtureComponent {
                weight: 0.5,
                blocks: vec![Block { count: None, recipe: StateRecipe::Number { levels: vec![1], cutoff: 8 } }],
            },
        ];
        let s = classical_mixture(t.clone(), comps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 2];
        for _ in 0..20 {
            let p = s.instantiate(6, &mut rng).unwrap();
            let c = p.component.unwrap();
            seen[c] = true;
            let want = if c == 0 { 1.0 } else { 0.0 };
            assert!((0..6).all(|i| (p.fidelity(i) - want).abs() < 1e-12));
        }
        assert!(seen[0] && seen[1]);
        let bad = vec![MixtureComponent { weight: 0.7, blocks: vec![] }];
        assert!(classical_mixture(t.clone(), bad).is_err());
        let sp = energy_spiker(t, 0.0, StateRecipe::Number { levels: vec![5], cutoff: 8 }).unwrap();
        let p = sp.instantiate(50, &mut rng).unwrap();
        assert!((0..50).all(|i| p.fidelity(i) == 1.0));
    }

    #[test]
    fn drift_zero_step_is_iid() {
        let t = vacuum_target();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = markov_drift(t, 0.3, 0.0, 1.0).unwrap().instantiate(10, &mut rng).unwrap();
        assert!((0..10).all(|i| (p.fidelity(i) - 1.0 / 1.3).abs() < 1e-12));
    }

    #[test]
    fn channel_truths() {
        let amp = WitnessKind::amplifier(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = channel_prover(&amp, ChannelRecipe::Ideal).unwrap().instantiate(3, &mut rng).unwrap();
        assert_relative_eq!(inst.fidelity(0), 1.0, epsilon = 1e-12);
        let st = WitnessKind::attenuator(1.0, 1.0).unwrap();
        let inst = channel_prover(&st, ChannelRecipe::ReplaceWithVacuum).unwrap().instantiate(3, &mut rng).unwrap();
        // λ/(λ+1) at λ = 1.
        assert_relative_eq!(inst.fidelity(0), 0.5, epsilon = 1e-12);
        let inst = channel_prover(&st, ChannelRecipe::Lossy { eta: 1.0 }).unwrap().instantiate(3, &mut rng).unwrap();
        assert_relative_eq!(inst.fidelity(0), 1.0, epsilon = 1e-12);
        let cz = WitnessKind::cz_gate(1.0, SymplecticOp::squeezer(0.2).direct_sum(&SymplecticOp::identity(1))).unwrap();
        let inst = channel_prover(&cz, ChannelRecipe::Ideal).unwrap().instantiate(1, &mut rng).unwrap();
        assert_relative_eq!(inst.fidelity(0), 1.0, epsilon = 1e-12);
        assert!(channel_prover(&WitnessKind::purifier(1.0, 1.0, 1.0).unwrap(), ChannelRecipe::Ideal).is_err());
    }
}
