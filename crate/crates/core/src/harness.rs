//! Monte Carlo runner: empirical completeness and soundness, concentration
//! checks, sweeps and Fock cutoff convergence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, homodyne::hermite_functions, PolynomialObservable, Quad};
use crate::phasespace::{apply_symplectic, make_vacuum, SymplecticOp};
use crate::planner::{self, concentration_bound, Concentration, PlanReport, VerificationPlan};
use crate::protocol::{self, RunOutcome, RunStreams};
use crate::provers::{self, ChannelRecipe, ProverScript, ProverSpec, Target, DEFAULT_CUTOFF};
use crate::witness::{witness_expectation_oracle, ProverModel, WitnessKind};

pub const SCHEMA: u32 = 1;

/// Target description as it appears in configs. Vertices and modes are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Vacuum {
        #[serde(default = "one")]
        modes: usize,
    },
    Squeezed { r: f64 },
    Tmsv { kappa: f64 },
    /// U_{S,d}|0⟩^⊗k; `s` defaults to the identity on `modes`.
    Gaussian {
        #[serde(default)]
        modes: Option<usize>,
        #[serde(default)]
        s: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        d: Option<Vec<f64>>,
    },
    Hypergraph { modes: usize, edges: Vec<Vec<usize>>, xi: f64 },
    Amplifier { lambda: f64, g: f64 },
    Attenuator { lambda: f64, g: f64 },
    Purifier { lambda: f64, mu: f64, g: f64 },
    Memory {
        lambda: f64,
        #[serde(default)]
        modes: Option<usize>,
        #[serde(default)]
        s: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        d: Option<Vec<f64>>,
    },
    CzGate {
        lambda: f64,
        #[serde(default)]
        s: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        d: Option<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}

fn symplectic_from(modes: Option<usize>, s: &Option<Vec<Vec<f64>>>, d: &Option<Vec<f64>>) -> Result<SymplecticOp> {
    let dim = match (s, d, modes) {
        (Some(s), _, _) => s.len(),
        (None, Some(d), _) => d.len(),
        (None, None, m) => 2 * m.unwrap_or(1),
    };
    if let Some(m) = modes {
        if 2 * m != dim {
            return Err(Error::Dimension(format!("modes = {m} but matrices have dimension {dim}")));
        }
    }
    let sm = match s {
        Some(rows) => {
            if rows.iter().any(|r| r.len() != dim) {
                return Err(Error::Dimension("symplectic matrix is not square".into()));
            }
            DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
        }
        None => DMatrix::identity(dim, dim),
    };
    let dv = match d {
        Some(d) if d.len() == dim => DVector::from_column_slice(d),
        Some(d) => return Err(Error::Dimension(format!("displacement of length {}, expected {dim}", d.len()))),
        None => DVector::zeros(dim),
    };
    SymplecticOp::new(sm, dv)
}

impl TargetSpec {
    pub fn kind(&self) -> Result<WitnessKind> {
        Ok(match self {
            TargetSpec::Vacuum { modes } => WitnessKind::gaussian_state(SymplecticOp::identity(*modes)),
            TargetSpec::Squeezed { r } => WitnessKind::gaussian_state(SymplecticOp::squeezer(*r)),
            TargetSpec::Tmsv { kappa } => WitnessKind::gaussian_state(SymplecticOp::two_mode_squeezer(*kappa)),
            TargetSpec::Gaussian { modes, s, d } => WitnessKind::gaussian_state(symplectic_from(*modes, s, d)?),
            TargetSpec::Hypergraph { modes, edges, xi } => WitnessKind::hypergraph(*modes, edges.clone(), *xi)?,
            TargetSpec::Amplifier { lambda, g } => WitnessKind::amplifier(*lambda, *g)?,
            TargetSpec::Attenuator { lambda, g } => WitnessKind::attenuator(*lambda, *g)?,
            TargetSpec::Purifier { lambda, mu, g } => WitnessKind::purifier(*lambda, *mu, *g)?,
            TargetSpec::Memory { lambda, modes, s, d } => WitnessKind::memory(*lambda, symplectic_from(*modes, s, d)?)?,
            TargetSpec::CzGate { lambda, s, d } => WitnessKind::cz_gate(*lambda, symplectic_from(Some(2), s, d)?)?,
        })
    }
}

/// Either a full desk plan (d0, n, l all given) or the minimal theorem plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub m: usize,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
}

impl PlanSpec {
    pub fn plan(&self, k: usize) -> Result<VerificationPlan> {
        match (self.d0, self.n, self.l) {
            (Some(d0), Some(n), Some(l)) => VerificationPlan::desk(k, self.m, self.epsilon, d0, n, l),
            (None, None, None) => planner::build_plan(k, self.m, self.epsilon),
            _ => Err(Error::Config("plan needs all of d0, n, l or none of them".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub plan: PlanSpec,
    /// State prover; defaults to honest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prover: Option<ProverSpec>,
    /// Channel prover; defaults to the ideal channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelRecipe>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub phase_randomize: bool,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
}

/// What a run needs, resolved from a config.
pub enum Experiment {
    State(ProverScript),
    Channel(provers::ChannelProverScript),
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<(WitnessKind, VerificationPlan, Experiment)> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let kind = self.target.kind()?;
        let plan = self.plan.plan(kind.modes())?;
        let exp = if kind.is_channel() {
            if self.prover.is_some() || self.phase_randomize {
                return Err(Error::Config("channel targets take a `channel` prover".into()));
            }
            let recipe = self.channel.clone().unwrap_or(ChannelRecipe::Ideal);
            Experiment::Channel(provers::channel_prover(&kind, recipe)?)
        } else {
            if self.channel.is_some() {
                return Err(Error::Config("state targets take a `prover`".into()));
            }
            let target = Target::new(&kind, self.cutoff.unwrap_or(DEFAULT_CUTOFF))?;
            let mut script = ProverScript::new(self.prover.clone().unwrap_or(ProverSpec::HonestIid), target)?;
            script.phase_randomize = self.phase_randomize;
            Experiment::State(script)
        };
        Ok((kind, plan, exp))
    }
}

/// Per-trial sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub accept: bool,
    pub dimension_pass: bool,
    pub witness: Option<f64>,
    /// 1 − Π kept fidelities, computed in the log domain.
    pub deficit: f64,
    pub measurements: usize,
    pub kept_touched: bool,
    pub clipped: usize,
}

fn kept_deficit(fids: &[f64]) -> f64 {
    let log: f64 = fids.iter().map(|f| f.max(0.0).ln()).sum();
    -log.exp_m1()
}

fn summarize(out: &RunOutcome) -> TrialSummary {
    TrialSummary {
        accept: out.verdict.accept,
        dimension_pass: out.verdict.dimension_pass,
        witness: out.verdict.witness.as_ref().map(|w| w.value),
        deficit: kept_deficit(&out.kept_fidelities),
        measurements: out.transcript.len(),
        kept_touched: out.kept_touched,
        clipped: out.clipped,
    }
}

pub fn run_trial(plan: &VerificationPlan, exp: &Experiment, seed: u64, trial: u64) -> Result<RunOutcome> {
    let streams = RunStreams::new(seed, trial);
    match exp {
        Experiment::State(p) => protocol::run_state_verification(plan, p, streams),
        Experiment::Channel(c) => protocol::run_channel_verification(plan, c, streams),
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every trial; results are in trial order whatever the thread count.
pub fn run_trials(
    plan: &VerificationPlan,
    exp: &Experiment,
    trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<TrialSummary>> {
    plan.desk_sizes()?;
    pool(threads)?.install(|| {
        (0..trials as u64)
            .into_par_iter()
            .map(|t| run_trial(plan, exp, seed, t).map(|o| summarize(&o)))
            .collect()
    })
}

/// Wilson score interval at 95%.
pub fn wilson(successes: f64, n: usize) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = successes / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    [(centre - half).max(0.0), (centre + half).min(1.0)]
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailures {
    pub dimension: usize,
    pub fidelity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub soundness_bound: f64,
    pub completeness_deficit_bound: f64,
    pub soundness_within_bound: bool,
    pub completeness_within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub target: serde_json::Value,
    pub plan: PlanReport,
    pub in_theorem_regime: bool,
    pub trials: usize,
    pub accept_rate: f64,
    pub accept_interval: [f64; 2],
    pub soundness_value: f64,
    pub soundness_interval: [f64; 2],
    pub stage_failures: StageFailures,
    /// Mean and standard error of W* over trials that reached the fidelity test.
    pub witness_mean: Option<f64>,
    pub witness_std_error: Option<f64>,
    pub threshold: f64,
    pub kept_fidelity_deficit_mean: f64,
    pub bound_check: BoundCheck,
    pub measurements: usize,
    pub registers_per_trial: usize,
    pub clipped_registers: usize,
    pub flags: Vec<String>,
}

impl ExperimentReport {
    /// Majority verdict over trials.
    pub fn accepted(&self) -> bool {
        2 * (self.accept_rate * self.trials as f64).round() as usize > self.trials
    }
}

pub fn aggregate(
    config: &ExperimentConfig,
    seed: u64,
    kind: &WitnessKind,
    plan: &VerificationPlan,
    trials: &[TrialSummary],
) -> Result<ExperimentReport> {
    let n = trials.len();
    let accepts = trials.iter().filter(|t| t.accept).count();
    let accept_rate = accepts as f64 / n as f64;
    // accept ∧ deficit, a [0,1] variable: the Wilson interval of its mean is conservative.
    let sound: f64 = trials.iter().map(|t| if t.accept { t.deficit } else { 0.0 }).sum();
    let soundness_value = (sound / n as f64).min(accept_rate);
    let ws: Vec<f64> = trials.iter().filter_map(|t| t.witness).collect();
    let (witness_mean, witness_std_error) = if ws.is_empty() {
        (None, None)
    } else {
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        let var = if ws.len() > 1 {
            ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (ws.len() - 1) as f64
        } else {
            0.0
        };
        (Some(mean), Some((var / ws.len() as f64).sqrt()))
    };
    let report = planner::plan_report(plan)?;
    let mut flags = plan.flags.clone();
    if n == 1 {
        flags.push("degenerate_interval".into());
    }
    if trials.iter().any(|t| t.kept_touched) {
        return Err(Error::InvalidParameter("a kept register was measured".into()));
    }
    let clipped: usize = trials.iter().map(|t| t.clipped).sum();
    if clipped > 0 {
        flags.push("prover_clipped".into());
    }
    let accept_interval = if n == 1 { [0.0, 1.0] } else { wilson(accepts as f64, n) };
    let soundness_interval = if n == 1 { [0.0, 1.0] } else { wilson(sound, n) };
    let sizes = plan.desk_sizes()?;
    let bound_check = BoundCheck {
        soundness_bound: report.soundness_total,
        completeness_deficit_bound: report.completeness_deficit,
        soundness_within_bound: soundness_value <= report.soundness_total,
        completeness_within_bound: 1.0 - accept_rate <= report.completeness_deficit,
    };
    Ok(ExperimentReport {
        schema: SCHEMA,
        seed,
        config: config.clone(),
        target: kind.describe(),
        in_theorem_regime: plan.in_theorem_regime(),
        plan: report,
        trials: n,
        accept_rate,
        accept_interval,
        soundness_value,
        soundness_interval,
        stage_failures: StageFailures {
            dimension: trials.iter().filter(|t| !t.dimension_pass).count(),
            fidelity: trials.iter().filter(|t| t.dimension_pass && !t.accept).count(),
        },
        witness_mean,
        witness_std_error,
        threshold: kind.threshold(sizes.m, plan.epsilon),
        kept_fidelity_deficit_mean: trials.iter().map(|t| t.deficit).sum::<f64>() / n as f64,
        bound_check,
        measurements: trials.iter().map(|t| t.measurements).sum(),
        registers_per_trial: protocol::total_registers(&sizes),
        clipped_registers: clipped,
        flags,
    })
}

/// Runs a config with an explicit seed (the config's own seed is ignored).
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    let (kind, plan, exp) = config.resolve()?;
    let trials = run_trials(&plan, &exp, config.trials, seed, config.threads)?;
    let mut cfg = config.clone();
    cfg.seed = Some(seed);
    // Thread count never changes results, so it is not echoed.
    cfg.threads = None;
    aggregate(&cfg, seed, &kind, &plan, &trials)
}

pub fn estimate_completeness(config: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    let mut r = run_experiment(config, seed)?;
    let honest = match (&config.prover, &config.channel) {
        (None | Some(ProverSpec::HonestIid), None) => true,
        (None, Some(ChannelRecipe::Ideal)) => true,
        _ => false,
    };
    if !honest {
        r.flags.push("prover_not_honest".into());
    }
    Ok(r)
}

pub fn estimate_soundness(config: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    run_experiment(config, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub lemma: String,
    pub params: serde_json::Value,
    pub empirical: f64,
    pub bound: f64,
    pub sigma: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub schema: u32,
    pub seed: u64,
    pub populations: usize,
    pub rows: Vec<ConcentrationRow>,
    pub violations: usize,
}

fn row(lemma: &str, params: serde_json::Value, hits: usize, populations: usize, bound: f64) -> ConcentrationRow {
    let empirical = hits as f64 / populations as f64;
    let b = bound.min(1.0);
    let sigma = (b * (1.0 - b) / populations as f64).sqrt();
    ConcentrationRow { lemma: lemma.into(), params, empirical, bound, sigma, violated: empirical > bound + 3.0 * sigma }
}

/// Sampling without replacement from fixed binary populations, both tails.
pub fn validate_serfling(populations: usize, seed: u64) -> Result<Vec<ConcentrationRow>> {
    let grid_nk = [(100u64, 100u64), (200, 50), (50, 200), (400, 20)];
    let deltas = [0.0, 0.05, 0.1, 0.2];
    let fractions = [0.1, 0.3, 0.5];
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &(n, k) in &grid_nk {
        for &frac in &fractions {
            let total = n + k;
            let ones = (frac * total as f64).round() as u64;
            let hyper = Hypergeometric::new(total, ones, k).map_err(|e| Error::Domain(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(cell);
            cell += 1;
            // Gap (unsampled mean − sampled mean) for each population.
            let gaps: Vec<f64> = (0..populations)
                .map(|_| {
                    let s = hyper.sample(&mut rng);
                    (ones - s) as f64 / n as f64 - s as f64 / k as f64
                })
                .collect();
            for &delta in &deltas {
                let params = serde_json::json!({ "n": n, "k": k, "ones": ones, "delta": delta });
                let up = concentration_bound(&Concentration::SerflingUpper { n: n as f64, k: k as f64, delta })?.value;
                let lo = concentration_bound(&Concentration::SerflingLower { n: n as f64, k: k as f64, delta })?.value;
                let hits_up = gaps.iter().filter(|&&g| g >= delta).count();
                let hits_lo = gaps.iter().filter(|&&g| g <= -delta).count();
                rows.push(row("serfling_upper", params.clone(), hits_up, populations, up));
                rows.push(row("serfling_lower", params, hits_lo, populations, lo));
            }
        }
    }
    Ok(rows)
}

/// P(q² ≥ t) for a single-mode state diagonal in the Fock basis.
pub fn diagonal_quadrature_tail(probs: &[f64], t: f64) -> f64 {
    let cutoff = probs.len();
    let edge = t.sqrt();
    let half = (2.0 * cutoff as f64 + 1.0).sqrt() + 10.0;
    if edge >= half {
        return 0.0;
    }
    let steps = 20_000;
    let h = (half - edge) / steps as f64;
    let mut buf = vec![0.0; cutoff];
    let mut acc = 0.0;
    for i in 0..=steps {
        let x = edge + i as f64 * h;
        hermite_functions(x, &mut buf);
        let f: f64 = probs.iter().zip(&buf).map(|(p, v)| p * v * v).sum();
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        acc += w * f * h;
    }
    // Both signs of x.
    (2.0 * acc).min(1.0)
}

/// Dimension-test flags against number-basis flags for permutation-invariant
/// mixtures of i.i.d. diagonal states at cutoff 8. The event counted is
/// Σz ≤ R together with Σy > Q.
pub fn validate_lemma1(populations: usize, seed: u64) -> Result<Vec<ConcentrationRow>> {
    let cutoff = 8;
    let mut states: Vec<(&str, Vec<(f64, Vec<f64>)>)> = Vec::new();
    let level = |n: usize| {
        let mut p = vec![0.0; cutoff];
        p[n] = 1.0;
        p
    };
    let thermal = |nbar: f64| {
        let r = nbar / (1.0 + nbar);
        let mut p: Vec<f64> = (0..cutoff).map(|n| r.powi(n as i32)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    };
    states.push(("vacuum", vec![(1.0, level(0))]));
    states.push(("thermal_1", vec![(1.0, thermal(1.0))]));
    states.push(("thermal_3", vec![(1.0, thermal(3.0))]));
    states.push(("fock_top", vec![(1.0, level(cutoff - 1))]));
    states.push(("mixture_0_top", vec![(0.5, level(0)), (0.5, level(cutoff - 1))]));
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &d0 in &[3usize, 5] {
        for &(kp, r) in &[(200u64, 2u64), (2000, 10), (2000, 40)] {
            let n = 2 * kp;
            for &qfrac in &[0.5, 0.75] {
                let q = (qfrac * n as f64) as u64;
                let bound = match concentration_bound(&Concentration::Lemma1 {
                    k_prime: kp as f64,
                    n: n as f64,
                    q: q as f64,
                    r: r as f64,
                }) {
                    Ok(b) => b.value,
                    Err(_) => continue,
                };
                for (name, comps) in &states {
                    let probs: Vec<(f64, f64, f64)> = comps
                        .iter()
                        .map(|(w, p)| {
                            let pz = diagonal_quadrature_tail(p, d0 as f64 / 2.0);
                            let py: f64 = p[d0..].iter().sum();
                            (*w, pz, py)
                        })
                        .collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(1 << 32 | cell);
                    cell += 1;
                    let mut hits = 0;
                    for _ in 0..populations {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut pick = probs[probs.len() - 1];
                        for c in &probs {
                            acc += c.0;
                            if u < acc {
                                pick = *c;
                                break;
                            }
                        }
                        let z = Binomial::new(kp, pick.1.clamp(0.0, 1.0)).map_err(|e| Error::Domain(e.to_string()))?;
                        let y = Binomial::new(n, pick.2.clamp(0.0, 1.0)).map_err(|e| Error::Domain(e.to_string()))?;
                        if z.sample(&mut rng) <= r && y.sample(&mut rng) > q {
                            hits += 1;
                        }
                    }
                    let params = serde_json::json!({
                        "state": name, "d0": d0, "k_prime": kp, "n": n, "q": q, "r": r, "cutoff": cutoff
                    });
                    rows.push(row("lemma1", params, hits, populations, bound));
                }
            }
        }
    }
    Ok(rows)
}

pub fn validate_concentration(lemmas: &[&str], populations: usize, seed: u64) -> Result<ConcentrationReport> {
    let mut rows = Vec::new();
    for l in lemmas {
        match *l {
            "serfling" => rows.extend(validate_serfling(populations, seed)?),
            "lemma1" => rows.extend(validate_lemma1(populations, seed)?),
            other => return Err(Error::Config(format!("unknown lemma {other}"))),
        }
    }
    let violations = rows.iter().filter(|r| r.violated).count();
    Ok(ConcentrationReport { schema: SCHEMA, seed, populations, rows, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    pub epsilon: Vec<f64>,
    /// Optional Monte Carlo per cell at fixed desk sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<SweepExperiment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepExperiment {
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prover: Option<ProverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelRecipe>,
    pub d0: Vec<u64>,
    pub n: usize,
    pub l: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub m: usize,
    pub epsilon: f64,
    pub d0: u64,
    #[serde(rename = "N")]
    pub n: String,
    #[serde(rename = "L")]
    pub l: String,
    #[serde(rename = "R")]
    pub r: String,
    pub total_registers: String,
    pub log10_total_registers: f64,
    pub soundness_bound: f64,
    pub completeness_deficit: f64,
    pub in_theorem_regime: bool,
    pub accept_rate: Option<f64>,
    pub soundness_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub k: usize,
    pub m: usize,
    /// d ln(total_registers) / d ln ε.
    pub slope: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: u32,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    pub fits: Vec<SlopeFit>,
}

fn big_log10(x: &num_bigint::BigUint) -> f64 {
    let bits = x.bits();
    if bits < 1000 {
        let f: f64 = num_traits::ToPrimitive::to_f64(x).unwrap_or(f64::INFINITY);
        return f.log10();
    }
    let shift = bits - 64;
    let top: f64 = num_traits::ToPrimitive::to_f64(&(x >> shift)).unwrap_or(0.0);
    top.log10() + shift as f64 * std::f64::consts::LOG10_2
}

/// Least-squares slope of y on x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn sweep_row(plan: &VerificationPlan, exp: Option<&ExperimentReport>) -> Result<SweepRow> {
    let rep = planner::plan_report(plan)?;
    Ok(SweepRow {
        k: plan.k,
        m: plan.m,
        epsilon: plan.epsilon,
        d0: plan.d0,
        n: plan.n.to_string(),
        l: plan.l.to_string(),
        r: plan.r.to_string(),
        total_registers: plan.total_registers.to_string(),
        log10_total_registers: big_log10(&plan.total_registers),
        soundness_bound: rep.soundness_total,
        completeness_deficit: rep.completeness_deficit,
        in_theorem_regime: plan.in_theorem_regime(),
        accept_rate: exp.map(|e| e.accept_rate),
        soundness_value: exp.map(|e| e.soundness_value),
    })
}

pub fn sweep(config: &SweepConfig, seed: u64, threads: Option<usize>) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &k in &config.k {
        for &m in &config.m {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &eps in &config.epsilon {
                let plan = planner::build_plan(k, m, eps)?;
                let r = sweep_row(&plan, None)?;
                if r.in_theorem_regime {
                    xs.push(eps.ln());
                    ys.push(r.log10_total_registers * std::f64::consts::LN_10);
                }
                rows.push(r);
            }
            if xs.len() >= 2 {
                fits.push(SlopeFit { k, m, slope: ols_slope(&xs, &ys), cells: xs.len() });
            }
        }
    }
    if let Some(e) = &config.experiment {
        for &m in &config.m {
            for &eps in &config.epsilon {
                for &d0 in &e.d0 {
                    let cfg = ExperimentConfig {
                        target: e.target.clone(),
                        plan: PlanSpec { m, epsilon: eps, d0: Some(d0), n: Some(e.n), l: Some(e.l) },
                        prover: e.prover.clone(),
                        channel: e.channel.clone(),
                        phase_randomize: false,
                        trials: e.trials,
                        seed: Some(seed),
                        threads,
                        cutoff: None,
                    };
                    let (_, plan, _) = cfg.resolve()?;
                    let rep = run_experiment(&cfg, seed)?;
                    rows.push(sweep_row(&plan, Some(&rep))?);
                }
            }
        }
    }
    Ok(SweepReport { schema: SCHEMA, seed, rows, fits })
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "k,m,epsilon,d0,N,L,R,total_registers,log10_total_registers,soundness_bound,completeness_deficit,in_theorem_regime,accept_rate,soundness_value\n",
    );
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{:?},{},{},{},{},{},{:?},{:?},{:?},{},{},{}\n",
            r.k,
            r.m,
            r.epsilon,
            r.d0,
            r.n,
            r.l,
            r.r,
            r.total_registers,
            r.log10_total_registers,
            r.soundness_bound,
            r.completeness_deficit,
            r.in_theorem_regime,
            opt(r.accept_rate),
            opt(r.soundness_value)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub target: TargetSpec,
    pub cutoff: usize,
    #[serde(default = "default_budget")]
    pub budget: f64,
}

fn default_budget() -> f64 {
    fock::HYPERGRAPH_LEAKAGE_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub cutoff: usize,
    pub q_second_moment: f64,
    pub witness_oracle: f64,
    pub leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema: u32,
    pub points: Vec<ConvergencePoint>,
    pub drift_q_second_moment: f64,
    pub drift_witness: f64,
    pub budget: f64,
    pub within_budget: bool,
}

/// Repeats Fock statistics of the target at cutoffs D and 2D.
///
/// Errors if the state at 2D still leaks more than the budget.
pub fn fock_convergence(config: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let kind = config.target.kind()?;
    if kind.is_channel() {
        return Err(Error::InvalidParameter("convergence runs on state targets".into()));
    }
    let mut points = Vec::new();
    for d in [config.cutoff, 2 * config.cutoff] {
        let st = match (&kind, kind.gaussian_target()) {
            (_, Some(op)) => fock::gaussian_to_fock(&apply_symplectic(&make_vacuum(kind.modes())?, &op)?, d)?,
            (WitnessKind::HypergraphState { modes, edges, xi }, None) => fock::hypergraph_state(edges, *xi, *modes, d)?,
            _ => return Err(Error::Unsupported(format!("no Fock form for {}", kind.tag()))),
        };
        let q2 = st.expectation_poly(&PolynomialObservable::new().term(1.0, &[(0, Quad::Q, 2)]))?;
        points.push(ConvergencePoint {
            cutoff: d,
            q_second_moment: q2,
            witness_oracle: witness_expectation_oracle(&kind, &ProverModel::Fock(st.clone()))?,
            leakage: st.leakage(),
        });
    }
    let leak = points[1].leakage;
    if leak > config.budget {
        return Err(Error::Leakage { leakage: leak, budget: config.budget });
    }
    Ok(ConvergenceReport {
        schema: SCHEMA,
        drift_q_second_moment: (points[0].q_second_moment - points[1].q_second_moment).abs(),
        drift_witness: (points[0].witness_oracle - points[1].witness_oracle).abs(),
        within_budget: points[0].leakage <= config.budget,
        budget: config.budget,
        points,
    })
}
