//! Protocol parameters (d0, N, K, R, L, Q) and the closed-form soundness,
//! completeness and concentration bounds.
//!
//! Integer quantities are `BigUint` because theorem-scale values overflow 64 bits
//! for small ε. Exponentials are evaluated in the log domain.

use num_bigint::BigUint;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// c0 = 1 − 1/√2.
pub const C0: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
/// c0² = 3/2 − √2.
pub const C0_SQ: f64 = 1.5 - std::f64::consts::SQRT_2;
/// E[χ⁴] of a vacuum-variance quadrature, 3·(1/2)².
pub const TARGET_CHI4: f64 = 0.75;
/// Upper bound on E[χ⁴] for the target used in the completeness inequality as printed.
pub const PRINTED_CHI4: f64 = 0.5;

/// Largest integer exactly representable in an f64 mantissa.
const EXACT_F64: f64 = 9_007_199_254_740_992.0;

pub(crate) mod big {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        let n: serde_json::Number = v.to_string().parse().map_err(serde::ser::Error::custom)?;
        n.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let n = serde_json::Number::deserialize(d)?;
        n.to_string().parse().map_err(serde::de::Error::custom)
    }
}

fn check_eps(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter(format!("ε = {epsilon} outside (0, 1/2)")));
    }
    Ok(())
}

fn check_km(k: usize, m: usize) -> Result<()> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!("k = {k}, m = {m}")));
    }
    Ok(())
}

fn big_from_f64(x: f64) -> BigUint {
    BigUint::from_f64(x.max(0.0).floor()).unwrap_or_else(BigUint::zero)
}

fn to_f64(x: &BigUint) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}

/// 264 k² m² d0² ln(4/ε) / ε² + m.
fn l_real(k: usize, m: usize, epsilon: f64, d0: u64) -> f64 {
    let (k, m, d0) = (k as f64, m as f64, d0 as f64);
    264.0 * k * k * m * m * d0 * d0 * (4.0 / epsilon).ln() / (epsilon * epsilon) + m
}

/// ln of the left side of the d0 condition 10k e^{−c0² d0}(L-expression) ≤ ε.
pub fn eq3_log_lhs(k: usize, m: usize, epsilon: f64, d0: u64) -> f64 {
    (10.0 * k as f64).ln() - C0_SQ * d0 as f64 + l_real(k, m, epsilon, d0).ln()
}

pub fn eq3_holds(k: usize, m: usize, epsilon: f64, d0: u64) -> bool {
    eq3_log_lhs(k, m, epsilon, d0) <= epsilon.ln()
}

/// Right side of N > (50/64) ln(4k/ε) e^{2 c0² d0}.
pub fn eq4_rhs(k: usize, epsilon: f64, d0: u64) -> f64 {
    50.0 / 64.0 * (4.0 * k as f64 / epsilon).ln() * (2.0 * C0_SQ * d0 as f64).exp()
}

/// Minimal d0 satisfying the d0 condition.
pub fn choose_d0(k: usize, m: usize, epsilon: f64) -> Result<u64> {
    check_km(k, m)?;
    check_eps(epsilon)?;
    // The left side rises until d0 ≈ 2/c0² and then decays, so the first hit is the answer.
    let mut d0 = 1;
    while !eq3_holds(k, m, epsilon, d0) {
        d0 += 1;
        if d0 > 1_000_000 {
            return Err(Error::Domain("no feasible d0 below 10⁶".into()));
        }
    }
    Ok(d0)
}

/// L = ⌈264 k² m² d0² ln(4/ε)/ε² + m⌉.
pub fn compute_l(k: usize, m: usize, epsilon: f64, d0: u64) -> Result<BigUint> {
    check_km(k, m)?;
    check_eps(epsilon)?;
    let v = l_real(k, m, epsilon, d0);
    if !v.is_finite() {
        return Err(Error::Domain("L overflows".into()));
    }
    Ok(big_from_f64(v.ceil()))
}

/// R = ⌊N e^{−c0² d0}⌋.
pub fn compute_r(n: &BigUint, d0: u64) -> BigUint {
    let nf = to_f64(n);
    if nf < EXACT_F64 {
        return big_from_f64(nf * (-C0_SQ * d0 as f64).exp());
    }
    big_from_f64((nf.ln() - C0_SQ * d0 as f64).exp())
}

fn r_of(n: f64, d0: u64) -> f64 {
    (n * (-C0_SQ * d0 as f64).exp()).floor()
}

pub fn appendix_holds(n: f64, k: usize, epsilon: f64, d0: u64) -> bool {
    let r = r_of(n, d0);
    r * r >= 50.0 * (n + 2.0) * (4.0 * k as f64 / epsilon).ln()
}

fn next_even_above(x: f64) -> f64 {
    let n = (x.floor() + 1.0).max(2.0);
    if n % 2.0 == 0.0 {
        n
    } else {
        n + 1.0
    }
}

/// Smallest even N above the N condition that also meets R² ≥ 50(N+2) ln(4k/ε).
pub fn choose_n(k: usize, epsilon: f64, d0: u64) -> Result<BigUint> {
    Ok(choose_n_flagged(k, epsilon, d0)?.0)
}

/// Also reports which constraint binds and whether f64 precision limited the search.
fn choose_n_flagged(k: usize, epsilon: f64, d0: u64) -> Result<(BigUint, Vec<String>)> {
    if k == 0 {
        return Err(Error::InvalidParameter("k = 0".into()));
    }
    check_eps(epsilon)?;
    let mut flags = Vec::new();
    let ln4k = (4.0 * k as f64 / epsilon).ln();
    let rate = (-C0_SQ * d0 as f64).exp();
    let lo = next_even_above(eq4_rhs(k, epsilon, d0));
    // Continuous root of N² r² = 50 (N+2) ln, then a fixed-point on the floor.
    let a = 50.0 * ln4k;
    let root = (a + (a * a + 8.0 * a * rate * rate).sqrt()) / (2.0 * rate * rate);
    let mut n = lo.max(next_even_above(root - 2.0));
    if !n.is_finite() {
        return Err(Error::Domain("N overflows".into()));
    }
    for _ in 0..64 {
        if appendix_holds(n, k, epsilon, d0) {
            break;
        }
        let r_needed = (50.0 * (n + 2.0) * ln4k).sqrt().ceil();
        // n + 2 is not representable once n passes 2^53, so also step relatively.
        n = next_even_above((r_needed / rate).ceil() - 1.0).max(n + 2.0).max(n * (1.0 + 1e-14));
    }
    if n >= EXACT_F64 {
        flags.push("n_float_precision".to_string());
    } else {
        while n - 2.0 >= lo && appendix_holds(n - 2.0, k, epsilon, d0) {
            n -= 2.0;
        }
        if !appendix_holds(n, k, epsilon, d0) {
            return Err(Error::Domain("N search did not converge".into()));
        }
    }
    if n > lo {
        flags.push("appendix_constant_binds".to_string());
    }
    Ok((big_from_f64(n), flags))
}

/// (k/2 + 1)·N registers in total.
pub fn sample_complexity(k: usize, m: usize, epsilon: f64) -> Result<BigUint> {
    Ok(build_plan(k, m, epsilon)?.total_registers)
}

/// erfc(√(d0/2)): probability that a vacuum quadrature outcome has x² > d0/2.
pub fn vacuum_tail(d0: f64) -> f64 {
    erfc((d0 / 2.0).sqrt())
}

/// ln erfc(√(d0/2)), accurate where the tail underflows.
pub fn vacuum_tail_ln(d0: f64) -> f64 {
    let x = (d0 / 2.0).sqrt();
    if x < 25.0 {
        return erfc(x).ln();
    }
    let x2 = x * x;
    -x2 - (x * std::f64::consts::PI.sqrt()).ln() + (1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2)).ln()
}

/// D(a‖p) in nats.
pub fn binary_relative_entropy(a: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) || !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("D({a} ‖ {p})")));
    }
    Ok(relative_entropy_ln(a, p.ln(), (-p).ln_1p()))
}

fn xlogx_over(x: f64, ln_y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x.ln() - ln_y)
    }
}

/// D(a‖p) given ln p and ln(1−p).
fn relative_entropy_ln(a: f64, ln_p: f64, ln_1mp: f64) -> f64 {
    (xlogx_over(a, ln_p) + xlogx_over(1.0 - a, ln_1mp)).max(0.0)
}

/// Parameters of one protocol instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationPlan {
    pub k: usize,
    pub m: usize,
    pub epsilon: f64,
    pub d0: u64,
    #[serde(rename = "N", with = "big")]
    pub n: BigUint,
    #[serde(rename = "K", with = "big")]
    pub big_k: BigUint,
    #[serde(rename = "R", with = "big")]
    pub r: BigUint,
    #[serde(rename = "L", with = "big")]
    pub l: BigUint,
    #[serde(rename = "Q", with = "big")]
    pub q: BigUint,
    pub c0: f64,
    #[serde(with = "big")]
    pub total_registers: BigUint,
    pub flags: Vec<String>,
}

/// Machine-sized view of a plan for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeskSizes {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub r: usize,
    pub d0: u64,
}

impl VerificationPlan {
    fn assemble(k: usize, m: usize, epsilon: f64, d0: u64, n: BigUint, l: BigUint, mut flags: Vec<String>) -> Result<Self> {
        check_km(k, m)?;
        check_eps(epsilon)?;
        if (&n % 2u32) != BigUint::zero() || n.is_zero() {
            return Err(Error::InvalidParameter(format!("N = {n} must be positive and even")));
        }
        if l > n {
            return Err(Error::InvalidParameter(format!("L = {l} exceeds N = {n}")));
        }
        if l <= BigUint::from(m) {
            return Err(Error::InvalidParameter(format!("need m < L, got m = {m}, L = {l}")));
        }
        let r = compute_r(&n, d0);
        let q = &r * 15u32;
        if q >= n {
            flags.push("lemma1_q_not_below_n".into());
        }
        let big_k = &n * k / 2u32;
        let total_registers = &n * (k + 2) / 2u32;
        Ok(Self { k, m, epsilon, d0, n, big_k, r, l, q, c0: C0, total_registers, flags })
    }

    /// A plan with explicit sizes; flagged when the theorem's conditions fail.
    pub fn desk(k: usize, m: usize, epsilon: f64, d0: u64, n: usize, l: usize) -> Result<Self> {
        let mut flags = Vec::new();
        let eq3 = eq3_holds(k, m, epsilon, d0);
        let eq4 = (n as f64) > eq4_rhs(k, epsilon, d0);
        let app = appendix_holds(n as f64, k, epsilon, d0);
        let l_req = l_real(k, m, epsilon, d0).ceil();
        if !eq3 {
            flags.push("d0_condition_violated".into());
        }
        if !eq4 || !app {
            flags.push("n_condition_violated".into());
        }
        if (l as f64) < l_req {
            flags.push("l_below_formula".into());
        }
        if !(eq3 && eq4 && app) || (l as f64) < l_req {
            flags.push("outside_theorem_regime".into());
        }
        Self::assemble(k, m, epsilon, d0, BigUint::from(n), BigUint::from(l), flags)
    }

    pub fn in_theorem_regime(&self) -> bool {
        !self.flags.iter().any(|f| f == "outside_theorem_regime")
    }

    /// Sizes as machine integers, for plans small enough to simulate.
    pub fn desk_sizes(&self) -> Result<DeskSizes> {
        let conv = |x: &BigUint, what: &str| {
            x.to_usize()
                .filter(|&v| v <= 100_000_000)
                .ok_or_else(|| Error::TooLarge { size: usize::MAX, cap: 100_000_000 })
                .map_err(|e| match e {
                    Error::TooLarge { .. } => Error::InvalidParameter(format!("{what} = {x} is too large to simulate")),
                    e => e,
                })
        };
        Ok(DeskSizes {
            k: self.k,
            m: self.m,
            n: conv(&self.n, "N")?,
            l: conv(&self.l, "L")?,
            r: conv(&self.r, "R")?,
            d0: self.d0,
        })
    }
}

/// Minimal theorem-feasible plan for (k, m, ε).
///
/// d0 is raised past its minimum when the four soundness terms would otherwise
/// exceed 3ε (flag `d0_tightened`).
pub fn build_plan(k: usize, m: usize, epsilon: f64) -> Result<VerificationPlan> {
    let d_min = choose_d0(k, m, epsilon)?;
    let mut d0 = d_min;
    loop {
        let (n, mut flags) = choose_n_flagged(k, epsilon, d0)?;
        let l = compute_l(k, m, epsilon, d0)?;
        if d0 > d_min {
            flags.push("d0_tightened".into());
        }
        let plan = VerificationPlan::assemble(k, m, epsilon, d0, n, l, flags)?;
        if let Ok(b) = soundness_bound(&plan) {
            if b.total <= 3.0 * epsilon {
                return Ok(plan);
            }
        }
        d0 += 1;
        if d0 > d_min + 10_000 {
            return Err(Error::Domain("soundness target unreachable".into()));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub terms: Vec<f64>,
    pub total: f64,
    pub flags: Vec<String>,
}

/// 4k e^{−R²/(50(N+2))} + 15kRL/N + 2Lk²d0²/(N−15kR) + max(4e^{−(L−m)ε²/(264m²k²d0²)}, ε).
pub fn soundness_bound(plan: &VerificationPlan) -> Result<BoundReport> {
    let k = plan.k as f64;
    let m = plan.m as f64;
    let d0 = plan.d0 as f64;
    let eps = plan.epsilon;
    let (n, r, l) = (to_f64(&plan.n), to_f64(&plan.r), to_f64(&plan.l));
    let gap = n - 15.0 * k * r;
    if !(gap > 0.0) {
        return Err(Error::Domain(format!("N = {n} ≤ 15kR = {}", 15.0 * k * r)));
    }
    let t1 = 4.0 * k * (-(r * r) / (50.0 * (n + 2.0))).exp();
    let t2 = 15.0 * k * r * l / n;
    let t3 = 2.0 * l * k * k * d0 * d0 / gap;
    let t4 = (4.0 * (-(l - m) * eps * eps / (264.0 * m * m * k * k * d0 * d0)).exp()).max(eps);
    let terms = vec![t1, t2, t3, t4];
    let total: f64 = terms.iter().sum();
    let mut flags = Vec::new();
    if total >= 1.0 {
        flags.push("vacuous".into());
    }
    Ok(BoundReport { terms, total, flags })
}

/// Completeness deficit k e^{−(N/2) D(2R/N ‖ p)} + 4e^{−(L−m)ε²/(132 k² m² E[χ⁴])}.
///
/// `chi4` is the target's fourth moment: [`TARGET_CHI4`] for the measured value,
/// [`PRINTED_CHI4`] for the constant in the printed inequality.
pub fn completeness_bound_with(plan: &VerificationPlan, chi4: f64) -> Result<BoundReport> {
    let k = plan.k as f64;
    let (n, r, l) = (to_f64(&plan.n), to_f64(&plan.r), to_f64(&plan.l));
    let a = 2.0 * r / n;
    let ln_p = vacuum_tail_ln(plan.d0 as f64);
    let mut flags = Vec::new();
    let t1 = if a <= ln_p.exp() {
        flags.push("dimension_term_vacuous".into());
        k
    } else {
        let ln_1mp = (-ln_p.exp()).ln_1p();
        k * (-(n / 2.0) * relative_entropy_ln(a.min(1.0), ln_p, ln_1mp)).exp()
    };
    let t2 = hoeffding_unbounded(l - plan.m as f64, plan.epsilon, plan.k, plan.m, chi4)?.value;
    let total = t1 + t2;
    if total >= 1.0 {
        flags.push("vacuous".into());
    }
    Ok(BoundReport { terms: vec![t1, t2], total, flags })
}

pub fn completeness_bound(plan: &VerificationPlan) -> Result<BoundReport> {
    completeness_bound_with(plan, TARGET_CHI4)
}

/// A bound value with its clamping status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

impl BoundValue {
    fn clamp(raw: f64, cap: f64) -> Self {
        Self { value: raw.min(cap), raw, clamped: raw > cap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Concentration {
    /// Pr(mean of the n unsampled ≥ mean of the k sampled + δ).
    SerflingUpper { n: f64, k: f64, delta: f64 },
    /// Pr(mean of the n unsampled ≤ mean of the k sampled − δ).
    SerflingLower { n: f64, k: f64, delta: f64 },
    /// Pr(Σ y > Q) given Σ z ≤ R over K' tested and N untested subsystems.
    Lemma1 { k_prime: f64, n: f64, q: f64, r: f64 },
    /// Trace-norm distance to a mixture of i.i.d. states, dim = d0^k.
    Definetti { k: u32, q: f64, l: f64, n: f64, d0: f64 },
    /// γ(δ) ≤ 4δ + 4/(c0 √(π d0)) e^{−d0 c0²}.
    Gamma { delta: f64, d0: f64 },
    /// 4 e^{−(L−m) ε²/(132 k² m² E[χ⁴])}.
    HoeffdingUnbounded { samples: f64, epsilon: f64, k: usize, m: usize, chi4: f64 },
}

fn hoeffding_unbounded(samples: f64, epsilon: f64, k: usize, m: usize, chi4: f64) -> Result<BoundValue> {
    if !(samples >= 0.0) || !(chi4 > 0.0) || k == 0 || m == 0 {
        return Err(Error::Domain(format!("hoeffding with samples {samples}, E[χ⁴] {chi4}")));
    }
    let (k, m) = (k as f64, m as f64);
    let raw = 4.0 * (-samples * epsilon * epsilon / (33.0 * 4.0 * k * k * m * m * chi4)).exp();
    Ok(BoundValue::clamp(raw, 1.0))
}

pub fn concentration_bound(c: &Concentration) -> Result<BoundValue> {
    match *c {
        Concentration::SerflingUpper { n, k, delta } | Concentration::SerflingLower { n, k, delta } => {
            if !(n > 0.0 && k > 0.0 && delta >= 0.0) {
                return Err(Error::Domain(format!("serfling n {n}, k {k}, δ {delta}")));
            }
            let factor = if matches!(c, Concentration::SerflingUpper { .. }) {
                n * k * k / ((n + k) * (k + 1.0))
            } else {
                k * n * n / ((n + k) * (n + 1.0))
            };
            Ok(BoundValue::clamp((-2.0 * delta * delta * factor).exp(), 1.0))
        }
        Concentration::Lemma1 { k_prime, n, q, r } => {
            if !(k_prime > 0.0 && n > 0.0) {
                return Err(Error::Domain(format!("lemma1 K' {k_prime}, N {n}")));
            }
            let gap = 3.0 * q / (5.0 * n) - 4.0 * r / k_prime;
            if gap < 0.0 {
                return Err(Error::Domain(format!("lemma1 needs 3Q/5N ≥ 4R/K', gap {gap}")));
            }
            let raw = 4.0 * (-(k_prime * k_prime) / (25.0 * (k_prime + 1.0)) * gap * gap).exp();
            Ok(BoundValue::clamp(raw, 1.0))
        }
        Concentration::Definetti { k, q, l, n, d0 } => {
            let kf = k as f64;
            if !(n > kf * q) {
                return Err(Error::Domain(format!("de Finetti needs N > kQ, N {n}, kQ {}", kf * q)));
            }
            let dim_sq_ln = 2.0 * kf * d0.ln();
            let raw = 2.0 * kf * q * l / n + (4.0f64.ln() + l.ln() + dim_sq_ln - (n - kf * q).ln()).exp();
            Ok(BoundValue::clamp(raw, 2.0))
        }
        Concentration::Gamma { delta, d0 } => {
            if !(d0 > 0.0 && delta >= 0.0) {
                return Err(Error::Domain(format!("gamma δ {delta}, d0 {d0}")));
            }
            let raw = 4.0 * delta + 4.0 / (C0 * (std::f64::consts::PI * d0).sqrt()) * (-d0 * C0_SQ).exp();
            Ok(BoundValue::clamp(raw, 1.0))
        }
        Concentration::HoeffdingUnbounded { samples, epsilon, k, m, chi4 } => {
            hoeffding_unbounded(samples, epsilon, k, m, chi4)
        }
    }
}

/// Plan plus bounds, as emitted by the `plan` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub plan: VerificationPlan,
    pub soundness_terms: Vec<f64>,
    pub soundness_total: f64,
    pub completeness_terms: Vec<f64>,
    pub completeness_deficit: f64,
    /// Completeness terms with the printed fourth-moment constant.
    pub completeness_terms_printed_constant: Vec<f64>,
    pub log_base: String,
}

pub fn plan_report(plan: &VerificationPlan) -> Result<PlanReport> {
    let s = soundness_bound(plan)?;
    let c = completeness_bound(plan)?;
    let cp = completeness_bound_with(plan, PRINTED_CHI4)?;
    let mut plan = plan.clone();
    for f in s.flags.iter().map(|f| format!("soundness_{f}")).chain(c.flags.iter().map(|f| format!("completeness_{f}"))) {
        if !plan.flags.contains(&f) {
            plan.flags.push(f);
        }
    }
    Ok(PlanReport {
        plan,
        soundness_terms: s.terms,
        soundness_total: s.total,
        completeness_terms: c.terms,
        completeness_deficit: c.total,
        completeness_terms_printed_constant: cp.terms,
        log_base: "e".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constants() {
        assert_relative_eq!(C0 * C0, C0_SQ, epsilon = 1e-15);
        assert_relative_eq!(C0_SQ, 0.0857864376, epsilon = 1e-10);
    }

    #[test]
    fn compute_l_examples() {
        assert_eq!(compute_l(1, 1, 0.1, 10).unwrap(), BigUint::from(9_738_643u64));
        assert_eq!(compute_l(1, 1, 0.1, 1).unwrap(), BigUint::from(97_388u64));
    }

    #[test]
    fn compute_r_examples() {
        assert_eq!(compute_r(&BigUint::from(1_000_000u32), 100), BigUint::from(188u32));
        assert_eq!(compute_r(&BigUint::from(1000u32), 0), BigUint::from(1000u32));
    }

    #[test]
    fn d0_minimal() {
        let d0 = choose_d0(1, 1, 0.1).unwrap();
        assert!(eq3_holds(1, 1, 0.1, d0));
        assert!(!eq3_holds(1, 1, 0.1, d0 - 1));
        assert!((200..500).contains(&d0), "{d0}");
        assert!(choose_d0(2, 1, 0.1).unwrap() >= d0);
        assert!(choose_d0(1, 1, 0.05).unwrap() >= d0);
    }

    #[test]
    fn n_minimal() {
        for &(k, eps, d0) in &[(1usize, 0.1, 1u64), (1, 0.1, 30), (2, 0.05, 60), (1, 0.2, 120)] {
            let n = choose_n(k, eps, d0).unwrap().to_f64().unwrap();
            assert!(n > eq4_rhs(k, eps, d0));
            assert!(appendix_holds(n, k, eps, d0));
            assert!(!(n - 2.0 > eq4_rhs(k, eps, d0) && appendix_holds(n - 2.0, k, eps, d0)));
            assert_eq!(n % 2.0, 0.0);
        }
    }

    #[test]
    fn tails_and_entropy() {
        assert_relative_eq!(vacuum_tail(2.0), 0.157299207, epsilon = 1e-9);
        for d0 in 1..200 {
            let d = d0 as f64;
            assert!(vacuum_tail(d) < (2.0 / (std::f64::consts::PI * d)).sqrt() * (-d / 2.0).exp());
        }
        assert_relative_eq!(vacuum_tail_ln(1200.0), erfc(600f64.sqrt()).ln(), epsilon = 1e-6, max_relative = 1e-9);
        assert!(vacuum_tail_ln(3000.0).is_finite());
        assert_relative_eq!(binary_relative_entropy(0.2, 0.1).unwrap(), 0.0444, epsilon = 1e-4);
        assert_eq!(binary_relative_entropy(0.3, 0.3).unwrap(), 0.0);
        assert_relative_eq!(binary_relative_entropy(1.0, 0.25).unwrap(), -(0.25f64.ln()));
    }

    #[test]
    fn concentration_examples() {
        let su = concentration_bound(&Concentration::SerflingUpper { n: 10.0, k: 5.0, delta: 0.0 }).unwrap();
        assert_eq!(su.value, 1.0);
        // 3Q/5N = 300/2500 = 4R/K' = 12/100.
        let l1 = concentration_bound(&Concentration::Lemma1 { k_prime: 100.0, n: 500.0, q: 100.0, r: 3.0 }).unwrap();
        assert!(l1.clamped);
        assert_eq!(l1.raw, 4.0);
        assert_eq!(l1.value, 1.0);
        let df = concentration_bound(&Concentration::Definetti { k: 1, q: 0.0, l: 10.0, n: 1e6, d0: 3.0 }).unwrap();
        assert_relative_eq!(df.value, 4.0 * 10.0 * 9.0 / 1e6, max_relative = 1e-12);
        assert!(concentration_bound(&Concentration::Lemma1 { k_prime: 10.0, n: 20.0, q: 0.0, r: 1.0 }).is_err());
    }

    #[test]
    fn smoke_grid_feasible() {
        for k in [1usize, 2] {
            for m in [1usize, 2] {
                for eps in [0.05, 0.1, 0.2] {
                    let p = build_plan(k, m, eps).unwrap();
                    assert!(eq3_holds(k, m, eps, p.d0));
                    let n = to_f64(&p.n);
                    assert!(n > eq4_rhs(k, eps, p.d0));
                    assert!(appendix_holds(n, k, eps, p.d0));
                    assert!(soundness_bound(&p).unwrap().total <= 3.0 * eps);
                    assert_eq!(p.total_registers, &p.n * (k + 2) / 2u32);
                }
            }
        }
    }

    #[test]
    fn plan_json_roundtrip() {
        let p = build_plan(1, 1, 0.1).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"N\":"));
        let back: VerificationPlan = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
