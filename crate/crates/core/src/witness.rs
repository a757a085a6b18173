//! Fidelity witnesses, probe specifications and acceptance thresholds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockArray, PolynomialObservable, Quad};
use crate::phasespace::{
    apply_channel_on, apply_symplectic, make_vacuum, GaussianChannel, GaussianState, LinearObservable,
    SymplecticOp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Q,
    P,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WitnessKind {
    /// Target U_{S,d}|0⟩^⊗k.
    GaussianState { target: SymplecticOp },
    /// Π_e exp(-i Π_{j∈e} q_j) on momentum-squeezed vacua; vertices are 0-based.
    HypergraphState { modes: usize, edges: Vec<Vec<usize>>, xi: f64 },
    Amplifier { lambda: f64, g: f64 },
    AttenuatorOrStorage { lambda: f64, g: f64 },
    PurifierHighGain { lambda: f64, mu: f64, g: f64 },
    PurifierLowGain { lambda: f64, mu: f64, g: f64 },
    MemoryMultimode { lambda: f64, target: SymplecticOp },
    /// Two-mode CZ gate `t` with input ensemble U_{S,d}|α⟩.
    CzGate { lambda: f64, target: SymplecticOp, t: SymplecticOp },
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("ensemble width λ = {lambda}")));
    }
    Ok(())
}

fn purifier_a(lambda: f64, mu: f64) -> f64 {
    (lambda + mu) * (lambda + mu + lambda * mu)
}

impl WitnessKind {
    pub fn gaussian_state(target: SymplecticOp) -> Self {
        WitnessKind::GaussianState { target }
    }

    pub fn hypergraph(modes: usize, edges: Vec<Vec<usize>>, xi: f64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParameter("hypergraph with no modes".into()));
        }
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(Error::InvalidParameter(format!("squeezing ξ = {xi}")));
        }
        for e in &edges {
            let mut s = e.clone();
            s.sort_unstable();
            s.dedup();
            if e.is_empty() || s.len() != e.len() || e.iter().any(|&v| v >= modes) {
                return Err(Error::InvalidParameter(format!("edge {e:?} on {modes} modes")));
            }
        }
        Ok(WitnessKind::HypergraphState { modes, edges, xi })
    }

    pub fn amplifier(lambda: f64, g: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(g > (lambda + 1.0).sqrt()) {
            return Err(Error::InvalidParameter(format!("amplifier needs g > √(λ+1), got g = {g}")));
        }
        Ok(WitnessKind::Amplifier { lambda, g })
    }

    pub fn attenuator(lambda: f64, g: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(g > 0.0 && g <= (lambda + 1.0).sqrt()) {
            return Err(Error::InvalidParameter(format!("attenuator needs 0 < g ≤ √(λ+1), got g = {g}")));
        }
        Ok(WitnessKind::AttenuatorOrStorage { lambda, g })
    }

    /// Picks the regime from g against √((λ+μ)(λ+μ+λμ))/μ.
    pub fn purifier(lambda: f64, mu: f64, g: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(mu > 0.0) || !mu.is_finite() || !(g > 0.0) {
            return Err(Error::InvalidParameter(format!("purifier μ = {mu}, g = {g}")));
        }
        let split = purifier_a(lambda, mu).sqrt() / mu;
        if g > split {
            Ok(WitnessKind::PurifierHighGain { lambda, mu, g })
        } else if g < split {
            Ok(WitnessKind::PurifierLowGain { lambda, mu, g })
        } else {
            Err(Error::InvalidParameter(format!("purifier gain {g} sits on the regime boundary")))
        }
    }

    pub fn memory(lambda: f64, target: SymplecticOp) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(WitnessKind::MemoryMultimode { lambda, target })
    }

    /// Two-mode CZ gate e^{-i q_0 q_1}. Larger gates are not Gaussian and are not supported.
    pub fn cz_gate(lambda: f64, target: SymplecticOp) -> Result<Self> {
        check_lambda(lambda)?;
        if target.modes() != 2 {
            return Err(Error::Unsupported(format!(
                "CZ channel verification is implemented for two modes, not {}",
                target.modes()
            )));
        }
        let t = SymplecticOp::controlled_phase(2, &[0, 1])?;
        Ok(WitnessKind::CzGate { lambda, target, t })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            WitnessKind::GaussianState { .. } => "gaussian_state",
            WitnessKind::HypergraphState { .. } => "hypergraph_state",
            WitnessKind::Amplifier { .. } => "amplifier",
            WitnessKind::AttenuatorOrStorage { .. } => "attenuator_or_storage",
            WitnessKind::PurifierHighGain { .. } => "purifier_high_gain",
            WitnessKind::PurifierLowGain { .. } => "purifier_low_gain",
            WitnessKind::MemoryMultimode { .. } => "memory_multimode",
            WitnessKind::CzGate { .. } => "cz_gate",
        }
    }

    /// Number of groups k used by the protocol.
    pub fn modes(&self) -> usize {
        match self {
            WitnessKind::GaussianState { target } => target.modes(),
            WitnessKind::HypergraphState { modes, .. } => *modes,
            WitnessKind::MemoryMultimode { target, .. } | WitnessKind::CzGate { target, .. } => target.modes(),
            _ => 1,
        }
    }

    pub fn is_channel(&self) -> bool {
        !matches!(self, WitnessKind::GaussianState { .. } | WitnessKind::HypergraphState { .. })
    }

    /// Normalising optimum of the average fidelity; 1 for state targets.
    pub fn fbar_norm(&self) -> f64 {
        match *self {
            WitnessKind::Amplifier { lambda, g } => (lambda + 1.0) / (g * g),
            WitnessKind::PurifierHighGain { lambda, mu, g } => purifier_a(lambda, mu) / (g * g * mu * mu),
            _ => 1.0,
        }
    }

    pub fn threshold(&self, m: usize, epsilon: f64) -> f64 {
        self.fbar_norm() * (1.0 - epsilon / (2.0 * m as f64))
    }

    /// Witness value for a given mean of χ² (the estimator is affine in it).
    pub fn value_from_mean_sq(&self, mean_sq: f64) -> f64 {
        let dev = mean_sq - 0.5;
        match *self {
            WitnessKind::GaussianState { .. } | WitnessKind::HypergraphState { .. } => {
                let k = self.modes() as f64;
                1.0 + k / 2.0 - k * mean_sq
            }
            WitnessKind::Amplifier { lambda, g } => {
                let g2 = g * g;
                (lambda + 1.0) / g2 * (1.0 - (g2 - lambda - 1.0) / g2 * dev)
            }
            WitnessKind::AttenuatorOrStorage { lambda, g } => 1.0 - (lambda + 1.0 - g * g) / (lambda + 1.0) * dev,
            WitnessKind::PurifierHighGain { lambda, mu, g } => {
                let a = purifier_a(lambda, mu);
                let gm2 = g * g * mu * mu;
                a / gm2 * (1.0 - (gm2 - a) / gm2 * dev)
            }
            WitnessKind::PurifierLowGain { lambda, mu, g } => {
                let a = purifier_a(lambda, mu);
                1.0 - (1.0 - g * g * mu * mu / a) * dev
            }
            WitnessKind::MemoryMultimode { lambda, .. } | WitnessKind::CzGate { lambda, .. } => {
                1.0 - lambda / (lambda + 1.0) * self.modes() as f64 * dev
            }
        }
    }

    /// Formula and parameters, echoed into reports.
    pub fn describe(&self) -> serde_json::Value {
        use serde_json::json;
        let formula = match self {
            WitnessKind::GaussianState { .. } | WitnessKind::HypergraphState { .. } => {
                "1 + k/2 - k*mean(chi^2)"
            }
            WitnessKind::Amplifier { .. } => "(l+1)/g^2 * [1 - ((g^2-l-1)/g^2) * mean(chi^2 - 1/2)]",
            WitnessKind::AttenuatorOrStorage { .. } => "1 - ((l+1-g^2)/(l+1)) * mean(chi^2 - 1/2)",
            WitnessKind::PurifierHighGain { .. } => "(A/(g mu)^2) * [1 - (((g mu)^2-A)/(g mu)^2) * mean(chi^2 - 1/2)]",
            WitnessKind::PurifierLowGain { .. } => "1 - (1 - (g mu)^2/A) * mean(chi^2 - 1/2)",
            WitnessKind::MemoryMultimode { .. } | WitnessKind::CzGate { .. } => {
                "1 - (l/(l+1)) * k * mean(chi^2 - 1/2)"
            }
        };
        let params = match self {
            WitnessKind::GaussianState { target } => json!({ "S": matrix_rows(target.s()), "d": target.d().as_slice() }),
            WitnessKind::HypergraphState { modes, edges, xi } => json!({ "modes": modes, "edges": edges, "xi": xi }),
            WitnessKind::Amplifier { lambda, g } | WitnessKind::AttenuatorOrStorage { lambda, g } => {
                json!({ "lambda": lambda, "g": g })
            }
            WitnessKind::PurifierHighGain { lambda, mu, g } | WitnessKind::PurifierLowGain { lambda, mu, g } => {
                json!({ "lambda": lambda, "mu": mu, "g": g, "A": purifier_a(*lambda, *mu) })
            }
            WitnessKind::MemoryMultimode { lambda, target } => {
                json!({ "lambda": lambda, "S": matrix_rows(target.s()), "d": target.d().as_slice() })
            }
            WitnessKind::CzGate { lambda, target, t } => json!({
                "lambda": lambda, "S": matrix_rows(target.s()), "d": target.d().as_slice(), "T": matrix_rows(t.s())
            }),
        };
        json!({
            "tag": self.tag(),
            "formula": formula,
            "threshold": "fbar_norm * (1 - epsilon/(2m))",
            "fbar_norm": self.fbar_norm(),
            "params": params,
        })
    }

    /// The Gaussian unitary preparing the target from vacuum, when there is one.
    pub fn gaussian_target(&self) -> Option<SymplecticOp> {
        match self {
            WitnessKind::GaussianState { target } => Some(target.clone()),
            WitnessKind::HypergraphState { modes, edges, xi } => {
                if edges.iter().any(|e| e.len() > 2) {
                    return None;
                }
                let k = *modes;
                let mut op = SymplecticOp::squeezer(-xi);
                for _ in 1..k {
                    op = op.direct_sum(&SymplecticOp::squeezer(-xi));
                }
                for e in edges {
                    op = SymplecticOp::controlled_phase(k, e).ok()?.compose(&op).ok()?;
                }
                Some(op)
            }
            _ => None,
        }
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessEstimate {
    pub value: f64,
    pub threshold: f64,
    pub samples_used: usize,
    pub pass: bool,
}

impl WitnessEstimate {
    fn new(value: f64, threshold: f64, samples_used: usize) -> Self {
        Self { value, threshold, samples_used, pass: value >= threshold }
    }
}

fn check_estimate_args(chi: &[f64], m: usize, epsilon: f64) -> Result<f64> {
    if chi.is_empty() {
        return Err(Error::InvalidParameter("no fidelity-test samples".into()));
    }
    if m == 0 || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("m = {m}, ε = {epsilon}")));
    }
    Ok(chi.iter().map(|x| x * x).sum::<f64>() / chi.len() as f64)
}

/// W* = 1 + k/2 − (k/(L−m)) Σ χ², accepted at 1 − ε/(2m).
pub fn state_witness(chi: &[f64], k: usize, m: usize, epsilon: f64) -> Result<WitnessEstimate> {
    let mean_sq = check_estimate_args(chi, m, epsilon)?;
    let kf = k as f64;
    Ok(WitnessEstimate::new(
        1.0 + kf / 2.0 - kf * mean_sq,
        1.0 - epsilon / (2.0 * m as f64),
        chi.len(),
    ))
}

pub fn channel_witness(kind: &WitnessKind, chi: &[f64], m: usize, epsilon: f64) -> Result<WitnessEstimate> {
    if !kind.is_channel() {
        return Err(Error::InvalidParameter(format!("{} is a state target", kind.tag())));
    }
    let mean_sq = check_estimate_args(chi, m, epsilon)?;
    Ok(WitnessEstimate::new(kind.value_from_mean_sq(mean_sq), kind.threshold(m, epsilon), chi.len()))
}

/// State or channel witness, whichever `kind` calls for.
pub fn witness_estimate(kind: &WitnessKind, chi: &[f64], m: usize, epsilon: f64) -> Result<WitnessEstimate> {
    if kind.is_channel() {
        channel_witness(kind, chi, m, epsilon)
    } else {
        state_witness(chi, kind.modes(), m, epsilon)
    }
}

/// What the verifier measures on one register of a state target.
#[derive(Debug, Clone, PartialEq)]
pub enum StateObservable {
    Linear(LinearObservable),
    Polynomial(PolynomialObservable),
}

/// Pair (q̃_j, p̃_j) as polynomials in the raw quadratures.
fn nullifier_pair(kind: &WitnessKind, j: usize) -> Result<(PolynomialObservable, PolynomialObservable)> {
    match kind {
        WitnessKind::GaussianState { target } => {
            let k = target.modes();
            if j >= k {
                return Err(Error::Dimension(format!("group {j} of {k}")));
            }
            let inv = target.inverse();
            // S⁻¹ (x − d) = inv.s x + inv.d
            let row = |r: usize| {
                let mut p = PolynomialObservable::new();
                for i in 0..2 * k {
                    let c = inv.s()[(r, i)];
                    if c != 0.0 {
                        let kind = if i % 2 == 0 { Quad::Q } else { Quad::P };
                        p = p.term(c, &[(i / 2, kind, 1)]);
                    }
                }
                if inv.d()[r] != 0.0 {
                    p = p.term(inv.d()[r], &[]);
                }
                p
            };
            Ok((row(2 * j), row(2 * j + 1)))
        }
        WitnessKind::HypergraphState { modes, edges, xi } => {
            if j >= *modes {
                return Err(Error::Dimension(format!("group {j} of {modes}")));
            }
            let s = (-xi).exp();
            let q = PolynomialObservable::new().term(s, &[(j, Quad::Q, 1)]);
            let mut p = PolynomialObservable::new().term(1.0 / s, &[(j, Quad::P, 1)]);
            for e in edges.iter().filter(|e| e.contains(&j)) {
                let f: Vec<(usize, Quad, u32)> =
                    e.iter().filter(|&&v| v != j).map(|&v| (v, Quad::Q, 1)).collect();
                p = p.term(1.0 / s, &f);
            }
            Ok((q, p))
        }
        _ => Err(Error::Unsupported(format!("{} is not a state target", kind.tag()))),
    }
}

fn combine(a: &PolynomialObservable, ca: f64, b: &PolynomialObservable, cb: f64) -> PolynomialObservable {
    let mut out = PolynomialObservable::new();
    for (src, c) in [(a, ca), (b, cb)] {
        if c == 0.0 {
            continue;
        }
        for t in &src.terms {
            let mut t = t.clone();
            t.coeff *= c;
            out.terms.push(t);
        }
    }
    out
}

fn to_linear(p: &PolynomialObservable, modes: usize) -> Option<LinearObservable> {
    let mut coeffs = DVector::zeros(2 * modes);
    let mut offset = 0.0;
    for t in &p.terms {
        let deg: u32 = t.factors.iter().map(|f| f.power).sum();
        match deg {
            0 => offset += t.coeff,
            1 => {
                let f = t.factors.iter().find(|f| f.power == 1)?;
                let idx = 2 * f.mode + usize::from(f.kind == Quad::P);
                coeffs[idx] += t.coeff;
            }
            _ => return None,
        }
    }
    LinearObservable::new(coeffs, offset).ok()
}

/// cos θ q̃_j + sin θ p̃_j (Q branch) or −sin θ q̃_j + cos θ p̃_j (P branch) for a state target.
pub fn state_observable(kind: &WitnessKind, j: usize, theta: f64, branch: Branch) -> Result<StateObservable> {
    let (q, p) = nullifier_pair(kind, j)?;
    let (cq, cp) = match branch {
        Branch::Q => (theta.cos(), theta.sin()),
        Branch::P => (-theta.sin(), theta.cos()),
    };
    let poly = combine(&q, cq, &p, cp);
    Ok(match to_linear(&poly, kind.modes()) {
        Some(l) => StateObservable::Linear(l),
        None => StateObservable::Polynomial(poly),
    })
}

/// Probe state, joint observables and classical offset for a channel target.
#[derive(Debug, Clone)]
pub struct ProbeSpec {
    /// Probe TMSV squeezing.
    pub kappa: f64,
    /// Squeezing entering the observables (κ₀…κ₃ or the probe κ).
    pub observable_kappa: f64,
    /// 2k-mode probe: modes 0..k enter the channel, k..2k are references.
    pub state: GaussianState,
    pub channel_modes: Vec<usize>,
    /// Variance of the offset ξ added to q and p of the output (purifier only).
    pub offset_variance: f64,
    // Per group j: (u_q, u_p) over the 4k quadratures and their constant offsets.
    rows: Vec<(DVector<f64>, f64, DVector<f64>, f64)>,
}

impl ProbeSpec {
    pub fn groups(&self) -> usize {
        self.rows.len()
    }

    /// The measured observable and the coefficient multiplying the offset ξ.
    pub fn observable(&self, j: usize, theta: f64, branch: Branch) -> Result<(LinearObservable, f64)> {
        let (uq, oq, up, op) = self
            .rows
            .get(j)
            .ok_or_else(|| Error::Dimension(format!("group {j} of {}", self.rows.len())))?;
        let (cq, cp) = match branch {
            Branch::Q => (theta.cos(), theta.sin()),
            Branch::P => (-theta.sin(), theta.cos()),
        };
        let coeffs = uq * cq + up * cp;
        let xi_coeff = if self.offset_variance > 0.0 { coeffs[0] + coeffs[1] } else { 0.0 };
        Ok((LinearObservable::new(coeffs, oq * cq + op * cp)?, xi_coeff))
    }

    /// Joint output+reference state for a given channel.
    pub fn output(&self, ch: &GaussianChannel) -> Result<GaussianState> {
        apply_channel_on(&self.state, ch, &self.channel_modes)
    }

    /// E[χ²] averaged over groups, θ and branch.
    pub fn mean_chi_sq(&self, ch: &GaussianChannel) -> Result<f64> {
        let out = self.output(ch)?;
        let mut total = 0.0;
        for j in 0..self.groups() {
            for b in [Branch::Q, Branch::P] {
                let (obs, xi) = self.observable(j, 0.0, b)?;
                let mean = obs.coeffs.dot(out.mean()) + obs.offset;
                let var = (out.cov() * &obs.coeffs).dot(&obs.coeffs) + xi * xi * self.offset_variance;
                total += 0.5 * (var + mean * mean);
            }
        }
        Ok(total / self.groups() as f64)
    }
}

/// Amplifier-form rows: (−sh q_A + ch q_R, sh p_A + ch p_R); attenuator form swaps the roles.
fn single_mode_rows(kappa: f64, amplifier_form: bool) -> (DVector<f64>, f64, DVector<f64>, f64) {
    let (sh, ch) = (kappa.sinh(), kappa.cosh());
    if amplifier_form {
        (DVector::from_vec(vec![-sh, 0.0, ch, 0.0]), 0.0, DVector::from_vec(vec![0.0, sh, 0.0, ch]), 0.0)
    } else {
        (DVector::from_vec(vec![ch, 0.0, -sh, 0.0]), 0.0, DVector::from_vec(vec![0.0, ch, 0.0, sh]), 0.0)
    }
}

fn probe_state(k: usize, kappa: f64, local: Option<&SymplecticOp>) -> Result<GaussianState> {
    let mut st = make_vacuum(2 * k)?;
    for j in 0..k {
        st = apply_symplectic(&st, &SymplecticOp::two_mode_squeezer(kappa).embed(2 * k, &[j, k + j])?)?;
    }
    if let Some(u) = local {
        let a: Vec<usize> = (0..k).collect();
        let r: Vec<usize> = (k..2 * k).collect();
        st = apply_symplectic(&st, &u.embed(2 * k, &a)?)?;
        st = apply_symplectic(&st, &u.embed(2 * k, &r)?)?;
    }
    Ok(st)
}

pub fn probe_spec(kind: &WitnessKind) -> Result<ProbeSpec> {
    let probe_kappa = |lambda: f64| (1.0 / (lambda + 1.0).sqrt()).atanh();
    let single = |kappa: f64, ok: f64, amp: bool, offset_variance: f64| -> Result<ProbeSpec> {
        Ok(ProbeSpec {
            kappa,
            observable_kappa: ok,
            state: probe_state(1, kappa, None)?,
            channel_modes: vec![0],
            offset_variance,
            rows: vec![single_mode_rows(ok, amp)],
        })
    };
    match *kind {
        WitnessKind::Amplifier { lambda, g } => {
            single(probe_kappa(lambda), ((lambda + 1.0).sqrt() / g).atanh(), true, 0.0)
        }
        WitnessKind::AttenuatorOrStorage { lambda, g } => {
            single(probe_kappa(lambda), (g / (lambda + 1.0).sqrt()).atanh(), false, 0.0)
        }
        WitnessKind::PurifierHighGain { lambda, mu, g } | WitnessKind::PurifierLowGain { lambda, mu, g } => {
            let a = purifier_a(lambda, mu);
            let zeta = ((lambda + mu) / (lambda + mu + lambda * mu)).sqrt().atanh();
            let var = g * g / (2.0 * (lambda + mu));
            if matches!(kind, WitnessKind::PurifierHighGain { .. }) {
                single(zeta, (a.sqrt() / (g * mu)).atanh(), true, var)
            } else {
                single(zeta, (g * mu / a.sqrt()).atanh(), false, var)
            }
        }
        WitnessKind::MemoryMultimode { lambda, ref target } | WitnessKind::CzGate { lambda, ref target, .. } => {
            let k = target.modes();
            let kappa = probe_kappa(lambda);
            let (sh, ch) = (kappa.sinh(), kappa.cosh());
            let inv = target.inverse();
            let tinv = match kind {
                WitnessKind::CzGate { t, .. } => Some(t.inverse()),
                _ => None,
            };
            // Output side: S⁻¹(T⁻¹ x_A − d) = a_s T⁻¹ x_A + a_d.
            let out_s = match &tinv {
                Some(ti) => inv.s() * ti.s(),
                None => inv.s().clone(),
            };
            let mut rows = Vec::with_capacity(k);
            for j in 0..k {
                let mut uq = DVector::zeros(4 * k);
                let mut up = DVector::zeros(4 * k);
                for i in 0..2 * k {
                    uq[i] = ch * out_s[(2 * j, i)];
                    uq[2 * k + i] = -sh * inv.s()[(2 * j, i)];
                    up[i] = ch * out_s[(2 * j + 1, i)];
                    up[2 * k + i] = sh * inv.s()[(2 * j + 1, i)];
                }
                let oq = (ch - sh) * inv.d()[2 * j];
                let op = (ch + sh) * inv.d()[2 * j + 1];
                rows.push((uq, oq, up, op));
            }
            Ok(ProbeSpec {
                kappa,
                observable_kappa: kappa,
                state: probe_state(k, kappa, Some(target))?,
                channel_modes: (0..k).collect(),
                offset_variance: 0.0,
                rows,
            })
        }
        _ => Err(Error::Unsupported(format!("{} has no channel probe", kind.tag()))),
    }
}

/// Per-register or per-use object whose witness expectation is evaluated exactly.
#[derive(Debug, Clone)]
pub enum ProverModel {
    Gaussian(GaussianState),
    Fock(FockArray),
    Channel(GaussianChannel),
}

/// Exact expectation of the witness estimator for one register (or channel use).
pub fn witness_expectation_oracle(kind: &WitnessKind, prover: &ProverModel) -> Result<f64> {
    match prover {
        ProverModel::Channel(ch) => {
            if !kind.is_channel() {
                return Err(Error::InvalidParameter("channel prover for a state target".into()));
            }
            let spec = probe_spec(kind)?;
            if ch.modes() != spec.channel_modes.len() {
                return Err(Error::Dimension("channel and probe mode counts differ".into()));
            }
            Ok(kind.value_from_mean_sq(spec.mean_chi_sq(ch)?))
        }
        ProverModel::Gaussian(st) => {
            let op = kind.gaussian_target().ok_or_else(|| {
                Error::Unsupported(format!("{} has no Gaussian form for a Gaussian prover", kind.tag()))
            })?;
            if st.modes() != op.modes() {
                return Err(Error::Dimension("prover and target mode counts differ".into()));
            }
            let inv = op.inverse();
            let mu = inv.s() * st.mean() + inv.d();
            let v = inv.s() * st.cov() * inv.s().transpose();
            let k = op.modes() as f64;
            Ok(1.0 + k / 2.0 - 0.5 * (v.trace() + mu.norm_squared()))
        }
        ProverModel::Fock(f) => {
            if kind.is_channel() {
                return Err(Error::Unsupported("Fock provers for channel targets".into()));
            }
            let k = kind.modes();
            if f.modes() != k {
                return Err(Error::Dimension("prover and target mode counts differ".into()));
            }
            let mut sum = 0.0;
            for j in 0..k {
                let (q, p) = nullifier_pair(kind, j)?;
                sum += f.second_moment_poly(&q)? + f.second_moment_poly(&p)?;
            }
            Ok(1.0 + k as f64 / 2.0 - 0.5 * sum)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::two_mode_squeezed;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn state_witness_examples() {
        let w = state_witness(&[0.5f64.sqrt(); 4], 3, 1, 0.1).unwrap();
        assert_relative_eq!(w.value, 1.0, epsilon = 1e-12);
        let w = state_witness(&[1.0, 1.0], 1, 1, 0.1).unwrap();
        assert_relative_eq!(w.value, 0.5);
        assert_relative_eq!(w.threshold, 0.95);
        assert!(!w.pass);
        let w = state_witness(&[0.0; 3], 2, 1, 0.1).unwrap();
        assert_eq!(w.value, 2.0);
        assert!(w.pass);
        assert!(state_witness(&[], 1, 1, 0.1).is_err());
    }

    #[test]
    fn channel_witness_examples() {
        let h = [0.5f64.sqrt(); 8];
        let amp = WitnessKind::amplifier(1.0, 2.0).unwrap();
        assert_relative_eq!(channel_witness(&amp, &h, 1, 0.1).unwrap().value, 0.5, epsilon = 1e-12);
        let st = WitnessKind::attenuator(1.0, 1.0).unwrap();
        assert_relative_eq!(channel_witness(&st, &h, 1, 0.1).unwrap().value, 1.0, epsilon = 1e-12);
        let mem = WitnessKind::memory(1.0, SymplecticOp::identity(2)).unwrap();
        assert_relative_eq!(channel_witness(&mem, &[1.0; 6], 1, 0.1).unwrap().value, 0.5, epsilon = 1e-12);
        assert!(WitnessKind::amplifier(1.0, 1.2).is_err());
        assert!(WitnessKind::attenuator(1.0, 1.5).is_err());
    }

    #[test]
    fn probe_kappas() {
        let s = probe_spec(&WitnessKind::amplifier(1.0, 2.0).unwrap()).unwrap();
        assert_relative_eq!(s.observable_kappa, 0.881373587, epsilon = 1e-9);
        let s = probe_spec(&WitnessKind::attenuator(1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(s.observable_kappa, 0.881373587, epsilon = 1e-9);
        let pk = WitnessKind::purifier(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(pk, WitnessKind::PurifierLowGain { .. }));
        let s = probe_spec(&pk).unwrap();
        assert_relative_eq!(s.observable_kappa, (1.0 / 6f64.sqrt()).atanh(), epsilon = 1e-12);
        assert_relative_eq!(s.offset_variance, 0.25);
        assert!(probe_spec(&WitnessKind::gaussian_state(SymplecticOp::identity(1))).is_err());
    }

    #[test]
    fn oracle_examples() {
        let vac = WitnessKind::gaussian_state(SymplecticOp::identity(1));
        let g = |s| witness_expectation_oracle(&vac, &ProverModel::Gaussian(s)).unwrap();
        assert_relative_eq!(g(make_vacuum(1).unwrap()), 1.0, epsilon = 1e-12);
        assert_relative_eq!(g(GaussianState::coherent(Complex64::new(2.0, 0.0))), -3.0, epsilon = 1e-12);
        let f = FockArray::thermal(0.7, 60).unwrap();
        let w = witness_expectation_oracle(&vac, &ProverModel::Fock(f)).unwrap();
        assert_relative_eq!(w, 1.0 - 0.7, epsilon = 1e-6);
        let t = WitnessKind::gaussian_state(SymplecticOp::two_mode_squeezer(0.4));
        assert_relative_eq!(
            witness_expectation_oracle(&t, &ProverModel::Gaussian(two_mode_squeezed(0.4))).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ideal_channels_saturate() {
        let cases: Vec<(WitnessKind, GaussianChannel)> = vec![
            (WitnessKind::amplifier(1.0, 2.0).unwrap(), GaussianChannel::quantum_limited(1, 1.0).unwrap()),
            (WitnessKind::amplifier(1.0, 3.0).unwrap(), GaussianChannel::quantum_limited(1, 1.5).unwrap()),
            (WitnessKind::attenuator(1.0, 0.6).unwrap(), GaussianChannel::pure_loss(1, 0.36).unwrap()),
            (WitnessKind::memory(0.5, SymplecticOp::squeezer(0.3)).unwrap(), GaussianChannel::identity(1)),
        ];
        for (kind, ch) in cases {
            let w = witness_expectation_oracle(&kind, &ProverModel::Channel(ch.clone())).unwrap();
            assert_relative_eq!(w, kind.fbar_norm(), epsilon = 1e-10);
            let noisy = GaussianChannel::additive_noise(ch.modes(), 0.05).unwrap().compose(&ch).unwrap();
            let wn = witness_expectation_oracle(&kind, &ProverModel::Channel(noisy)).unwrap();
            assert!(wn < kind.fbar_norm() - 1e-6);
        }
        let cz = WitnessKind::cz_gate(1.0, SymplecticOp::identity(2)).unwrap();
        let ideal = GaussianChannel::from_symplectic(&SymplecticOp::controlled_phase(2, &[0, 1]).unwrap());
        assert_relative_eq!(
            witness_expectation_oracle(&cz, &ProverModel::Channel(ideal)).unwrap(),
            1.0,
            epsilon = 1e-10
        );
        let st = WitnessKind::attenuator(1.0, 1.0).unwrap();
        let vac = witness_expectation_oracle(&st, &ProverModel::Channel(GaussianChannel::replace_with_vacuum(1))).unwrap();
        assert_relative_eq!(vac, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hypergraph_observables() {
        let graph = WitnessKind::hypergraph(2, vec![vec![0, 1]], 0.3).unwrap();
        assert!(matches!(state_observable(&graph, 0, 0.2, Branch::Q).unwrap(), StateObservable::Linear(_)));
        let tri = WitnessKind::hypergraph(3, vec![vec![0, 1, 2]], 0.3).unwrap();
        assert!(matches!(
            state_observable(&tri, 1, 0.2, Branch::P).unwrap(),
            StateObservable::Polynomial(_)
        ));
        assert!(matches!(state_observable(&tri, 1, 0.0, Branch::Q).unwrap(), StateObservable::Linear(_)));
        let op = graph.gaussian_target().unwrap();
        let honest = apply_symplectic(&make_vacuum(2).unwrap(), &op).unwrap();
        assert_relative_eq!(
            witness_expectation_oracle(&graph, &ProverModel::Gaussian(honest)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }
}
