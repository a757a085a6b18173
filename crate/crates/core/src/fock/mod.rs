//! Truncated Fock-space engine for few-mode, possibly non-Gaussian states.
//!
//! Basis index for `modes` modes with cutoff D is Σ n_i D^(modes-1-i): mode 0 is
//! the most significant digit.

pub mod homodyne;

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasespace::{GaussianState, LinearObservable};
use homodyne::{hermite_functions, sample_leading_mode};

/// Largest basis accepted by any Fock construction.
pub const BASIS_CAP: usize = 20_000;
/// Largest basis for which dense observables and density matrices are built.
pub const DENSE_CAP: usize = 4_096;
/// Truncation weight tolerated when building hypergraph states.
pub const HYPERGRAPH_LEAKAGE_BUDGET: f64 = 1e-4;

const NORM_TOL: f64 = 1e-6;
const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn cmax(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn basis_size(modes: usize, cutoff: usize) -> Result<usize> {
    if modes == 0 || cutoff < 1 {
        return Err(Error::InvalidParameter(format!("modes {modes}, cutoff {cutoff}")));
    }
    let mut n: usize = 1;
    for _ in 0..modes {
        n = n
            .checked_mul(cutoff)
            .filter(|&v| v <= BASIS_CAP)
            .ok_or(Error::TooLarge { size: usize::MAX, cap: BASIS_CAP })?;
    }
    Ok(n)
}

#[derive(Debug, Clone)]
enum Repr {
    Pure(Vec<Complex64>),
    Mixed(DMatrix<Complex64>),
}

/// Pure amplitudes or a density matrix on `modes` truncated modes.
#[derive(Debug, Clone)]
pub struct FockArray {
    modes: usize,
    cutoff: usize,
    repr: Repr,
    tail: f64,
    components: Arc<OnceLock<Vec<(f64, Vec<Complex64>)>>>,
}

impl FockArray {
    pub fn new_pure(modes: usize, cutoff: usize, amps: Vec<Complex64>) -> Result<Self> {
        let n = basis_size(modes, cutoff)?;
        if amps.len() != n {
            return Err(Error::Dimension(format!("{} amplitudes for basis of {n}", amps.len())));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !(norm >= 1.0 - NORM_TOL && norm <= 1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!("state norm {norm}")));
        }
        Ok(Self::raw(modes, cutoff, Repr::Pure(amps), 0.0))
    }

    /// Normalises `amps` and records the missing weight as truncation tail.
    pub fn from_truncated(modes: usize, cutoff: usize, mut amps: Vec<Complex64>) -> Result<Self> {
        let n = basis_size(modes, cutoff)?;
        if amps.len() != n {
            return Err(Error::Dimension(format!("{} amplitudes for basis of {n}", amps.len())));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !(norm > 0.0) || norm > 1.0 + 1e-9 {
            return Err(Error::InvalidParameter(format!("truncated norm {norm}")));
        }
        let s = norm.sqrt();
        amps.iter_mut().for_each(|a| *a /= s);
        Ok(Self::raw(modes, cutoff, Repr::Pure(amps), (1.0 - norm).max(0.0)))
    }

    pub fn new_mixed(modes: usize, cutoff: usize, rho: DMatrix<Complex64>) -> Result<Self> {
        let n = basis_size(modes, cutoff)?;
        if modes > 2 {
            return Err(Error::Unsupported(
                "density matrices are limited to two modes; use a classical mixture".into(),
            ));
        }
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::Dimension(format!("density is {}x{}", rho.nrows(), rho.ncols())));
        }
        if cmax(&(&rho - rho.adjoint())) > 1e-9 {
            return Err(Error::InvalidParameter("density is not Hermitian".into()));
        }
        let tr = rho.trace().re;
        if !(tr >= 1.0 - NORM_TOL && tr <= 1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!("density trace {tr}")));
        }
        let min = SymmetricEigen::new(rho.clone()).eigenvalues.min();
        if min < -1e-9 {
            return Err(Error::InvalidParameter(format!("density eigenvalue {min}")));
        }
        Ok(Self::raw(modes, cutoff, Repr::Mixed(rho), 0.0))
    }

    fn raw(modes: usize, cutoff: usize, repr: Repr, tail: f64) -> Self {
        Self { modes, cutoff, repr, tail, components: Arc::new(OnceLock::new()) }
    }

    pub fn vacuum(modes: usize, cutoff: usize) -> Result<Self> {
        Self::number(&vec![0; modes], cutoff)
    }

    /// Product number state |n_0, n_1, ...⟩.
    pub fn number(levels: &[usize], cutoff: usize) -> Result<Self> {
        let n = basis_size(levels.len(), cutoff)?;
        let mut idx = 0;
        for &l in levels {
            if l >= cutoff {
                return Err(Error::InvalidParameter(format!("level {l} needs cutoff > {l}")));
            }
            idx = idx * cutoff + l;
        }
        let mut amps = vec![C0; n];
        amps[idx] = c(1.0);
        Ok(Self::raw(levels.len(), cutoff, Repr::Pure(amps), 0.0))
    }

    pub fn coherent(alpha: Complex64, cutoff: usize) -> Result<Self> {
        basis_size(1, cutoff)?;
        let mut amps = vec![C0; cutoff];
        amps[0] = c((-0.5 * alpha.norm_sqr()).exp());
        for n in 1..cutoff {
            amps[n] = amps[n - 1] * alpha / (n as f64).sqrt();
        }
        Self::from_truncated(1, cutoff, amps)
    }

    /// Zero-mean single-mode squeezed vacuum with ⟨a²⟩ = `s` and ⟨a†a⟩ = `nbar`.
    pub fn squeezed_from_moments(s: Complex64, nbar: f64, cutoff: usize) -> Result<Self> {
        basis_size(1, cutoff)?;
        let ch2 = nbar + 1.0;
        let t = s / ch2;
        let mut amps = vec![C0; cutoff];
        let mut a = c(ch2.powf(-0.25));
        let mut n = 0;
        while 2 * n < cutoff {
            amps[2 * n] = a;
            n += 1;
            a *= t * ((2 * n - 1) as f64 / (2 * n) as f64).sqrt();
        }
        Self::from_truncated(1, cutoff, amps)
    }

    /// Vacuum squeezed in momentum: q-variance e^{2ξ}/2, p-variance e^{-2ξ}/2.
    pub fn momentum_squeezed(xi: f64, cutoff: usize) -> Result<Self> {
        let (sh, ch) = (xi.sinh(), xi.cosh());
        Self::squeezed_from_moments(c(sh * ch), sh * sh, cutoff)
    }

    /// Σ tanhⁿκ / cosh κ |n, n⟩.
    pub fn tmsv(kappa: f64, cutoff: usize) -> Result<Self> {
        let (sh, ch) = (kappa.sinh(), kappa.cosh());
        Self::tmsv_from_moment(c(sh * ch), sh * sh, cutoff)
    }

    fn tmsv_from_moment(s: Complex64, nbar: f64, cutoff: usize) -> Result<Self> {
        let n2 = basis_size(2, cutoff)?;
        let ch2 = nbar + 1.0;
        let t = s / ch2;
        let mut amps = vec![C0; n2];
        let mut a = c(ch2.powf(-0.5));
        for n in 0..cutoff {
            amps[n * cutoff + n] = a;
            a *= t;
        }
        Self::from_truncated(2, cutoff, amps)
    }

    /// Single-mode thermal state, truncated and renormalised.
    pub fn thermal(nbar: f64, cutoff: usize) -> Result<Self> {
        if !(nbar >= 0.0) {
            return Err(Error::InvalidParameter(format!("thermal occupation {nbar}")));
        }
        basis_size(1, cutoff)?;
        let r = nbar / (nbar + 1.0);
        let mut p: Vec<f64> = (0..cutoff).map(|n| r.powi(n as i32) / (nbar + 1.0)).collect();
        let kept: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= kept);
        let rho = DMatrix::from_diagonal(&DVector::from_iterator(cutoff, p.into_iter().map(c)));
        let mut f = Self::raw(1, cutoff, Repr::Mixed(rho), (1.0 - kept).max(0.0));
        f.tail = (1.0 - kept).max(0.0);
        Ok(f)
    }

    /// Diagonal mixture Σ p_n |n⟩⟨n| of a single mode.
    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let cutoff = probs.len();
        let rho = DMatrix::from_diagonal(&DVector::from_iterator(cutoff, probs.iter().map(|&p| c(p))));
        Self::new_mixed(1, cutoff, rho)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.cutoff.pow(self.modes as u32)
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.repr, Repr::Pure(_))
    }

    pub fn amplitudes(&self) -> Option<&[Complex64]> {
        match &self.repr {
            Repr::Pure(a) => Some(a),
            Repr::Mixed(_) => None,
        }
    }

    pub fn density(&self) -> Result<DMatrix<Complex64>> {
        match &self.repr {
            Repr::Mixed(r) => Ok(r.clone()),
            Repr::Pure(a) => {
                if a.len() > DENSE_CAP {
                    return Err(Error::TooLarge { size: a.len(), cap: DENSE_CAP });
                }
                let v = DVector::from_column_slice(a);
                Ok(&v * v.adjoint())
            }
        }
    }

    pub fn norm(&self) -> f64 {
        match &self.repr {
            Repr::Pure(a) => a.iter().map(|x| x.norm_sqr()).sum(),
            Repr::Mixed(r) => r.trace().re,
        }
    }

    /// Weight on basis states with some mode at level D−1.
    pub fn top_level_weight(&self) -> f64 {
        let d = self.cutoff;
        let n = self.dim();
        let mut w = 0.0;
        for idx in 0..n {
            let mut rest = idx;
            let mut top = false;
            for _ in 0..self.modes {
                if rest % d == d - 1 {
                    top = true;
                }
                rest /= d;
            }
            if top {
                w += match &self.repr {
                    Repr::Pure(a) => a[idx].norm_sqr(),
                    Repr::Mixed(r) => r[(idx, idx)].re,
                };
            }
        }
        w
    }

    /// Upper estimate of truncation weight: the tail cut at construction plus the
    /// weight sitting on the highest retained level.
    pub fn leakage(&self) -> f64 {
        self.tail + self.top_level_weight()
    }

    pub fn truncation_tail(&self) -> f64 {
        self.tail
    }

    /// Tensor product of two pure states, self first.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        if self.cutoff != other.cutoff {
            return Err(Error::Dimension("tensor of different cutoffs".into()));
        }
        let (a, b) = match (&self.repr, &other.repr) {
            (Repr::Pure(a), Repr::Pure(b)) => (a, b),
            _ => return Err(Error::Unsupported("tensor of mixed Fock states".into())),
        };
        basis_size(self.modes + other.modes, self.cutoff)?;
        let mut out = Vec::with_capacity(a.len() * b.len());
        for x in a {
            for y in b {
                out.push(x * y);
            }
        }
        Ok(Self::raw(self.modes + other.modes, self.cutoff, Repr::Pure(out), self.tail + other.tail))
    }

    /// Mean photon number of each mode.
    pub fn mean_photon_numbers(&self) -> Vec<f64> {
        let d = self.cutoff;
        let mut out = vec![0.0; self.modes];
        for idx in 0..self.dim() {
            let p = match &self.repr {
                Repr::Pure(a) => a[idx].norm_sqr(),
                Repr::Mixed(r) => r[(idx, idx)].re,
            };
            if p == 0.0 {
                continue;
            }
            let mut rest = idx;
            for m in (0..self.modes).rev() {
                out[m] += p * (rest % d) as f64;
                rest /= d;
            }
        }
        out
    }

    /// Re tr(ρ O) for a dense operator on the full basis.
    pub fn expectation(&self, op: &DMatrix<Complex64>) -> Result<f64> {
        let n = self.dim();
        if op.nrows() != n || op.ncols() != n {
            return Err(Error::Dimension("operator size".into()));
        }
        Ok(match &self.repr {
            Repr::Pure(a) => {
                let v = DVector::from_column_slice(a);
                v.dotc(&(op * &v)).re
            }
            Repr::Mixed(r) => (r * op).trace().re,
        })
    }

    /// Re tr(ρ O) for a polynomial observable, without building O densely for pure states.
    pub fn expectation_poly(&self, obs: &PolynomialObservable) -> Result<f64> {
        obs.validate(self.modes)?;
        match &self.repr {
            Repr::Pure(a) => {
                let out = apply_polynomial(obs, a, self.modes, self.cutoff)?;
                Ok(a.iter().zip(&out).map(|(x, y)| (x.conj() * y).re).sum())
            }
            Repr::Mixed(_) => {
                let op = build_observable(obs, self.modes, self.cutoff)?;
                self.expectation(&op)
            }
        }
    }

    /// tr(ρ O²) for a Hermitian polynomial O, as Σ_i w_i ‖O v_i‖².
    pub fn second_moment_poly(&self, obs: &PolynomialObservable) -> Result<f64> {
        obs.validate(self.modes)?;
        let mut total = 0.0;
        for (w, v) in self.pure_components() {
            let ov = apply_polynomial(obs, v, self.modes, self.cutoff)?;
            total += w * ov.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        Ok(total)
    }

    fn pure_components(&self) -> &[(f64, Vec<Complex64>)] {
        self.components.get_or_init(|| match &self.repr {
            Repr::Pure(a) => vec![(1.0, a.clone())],
            Repr::Mixed(r) => {
                let eig = SymmetricEigen::new(r.clone());
                let mut out = Vec::new();
                for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                    if lam > 1e-14 {
                        out.push((lam, eig.eigenvectors.column(i).iter().copied().collect()));
                    }
                }
                out
            }
        })
    }

    /// Jointly samples the commuting local quadratures cos φ q_m + sin φ p_m.
    pub fn sample_local_quadratures<R: Rng + ?Sized>(
        &self,
        settings: &[(usize, f64)],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut seen = vec![false; self.modes];
        for &(m, _) in settings {
            if m >= self.modes || seen[m] {
                return Err(Error::Dimension(format!("bad or repeated mode {m}")));
            }
            seen[m] = true;
        }
        let comps = self.pure_components();
        let amps = if comps.len() == 1 {
            &comps[0].1
        } else {
            let total: f64 = comps.iter().map(|c| c.0).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = comps.len() - 1;
            for (i, comp) in comps.iter().enumerate() {
                if u < comp.0 {
                    pick = i;
                    break;
                }
                u -= comp.0;
            }
            &comps[pick].1
        };
        Ok(sample_pure_joint(amps, self.modes, self.cutoff, settings, rng))
    }

    /// Samples the outcome of a jointly measurable observable.
    pub fn sample_joint<R: Rng + ?Sized>(&self, jh: &JointHomodyne, rng: &mut R) -> Result<f64> {
        let xs = self.sample_local_quadratures(&jh.settings, rng)?;
        Ok(jh.evaluate(&xs))
    }

    pub fn sample_homodyne<R: Rng + ?Sized>(&self, obs: &LinearObservable, rng: &mut R) -> Result<f64> {
        if obs.modes() != self.modes {
            return Err(Error::Dimension("observable and state mode counts differ".into()));
        }
        self.sample_joint(&JointHomodyne::from_linear(obs), rng)
    }
}

/// Permutes tensor axes so that `order` comes first (then the rest in original order),
/// applying e^{-iφ n} on each measured axis.
fn prepare_measurement(
    amps: &[Complex64],
    modes: usize,
    d: usize,
    settings: &[(usize, f64)],
) -> Vec<Complex64> {
    let mut order: Vec<usize> = settings.iter().map(|s| s.0).collect();
    for m in 0..modes {
        if !order.contains(&m) {
            order.push(m);
        }
    }
    let mut phase = vec![vec![c(1.0); d]; modes];
    for &(m, phi) in settings {
        for n in 0..d {
            phase[m][n] = Complex64::from_polar(1.0, -phi * n as f64);
        }
    }
    let identity = order.iter().enumerate().all(|(i, &m)| i == m);
    let mut out = vec![C0; amps.len()];
    let mut digits = vec![0usize; modes];
    for (idx, a) in amps.iter().enumerate() {
        if *a == C0 {
            continue;
        }
        let mut rest = idx;
        for m in (0..modes).rev() {
            digits[m] = rest % d;
            rest /= d;
        }
        let mut v = *a;
        for &(m, _) in settings {
            v *= phase[m][digits[m]];
        }
        let j = if identity {
            idx
        } else {
            order.iter().fold(0, |acc, &m| acc * d + digits[m])
        };
        out[j] = v;
    }
    out
}

fn sample_pure_joint<R: Rng + ?Sized>(
    amps: &[Complex64],
    modes: usize,
    d: usize,
    settings: &[(usize, f64)],
    rng: &mut R,
) -> Vec<f64> {
    let mut cur = prepare_measurement(amps, modes, d, settings);
    let mut remaining = modes;
    let mut out = Vec::with_capacity(settings.len());
    let mut phi = vec![0.0; d];
    for step in 0..settings.len() {
        let cols = cur.len() / d;
        let x = sample_leading_mode(&cur, d, cols, rng);
        out.push(x);
        if step + 1 == settings.len() {
            break;
        }
        hermite_functions(x, &mut phi);
        let mut next = vec![C0; cols];
        for n in 0..d {
            let row = &cur[n * cols..(n + 1) * cols];
            for r in 0..cols {
                next[r] += row[r] * phi[n];
            }
        }
        let norm: f64 = next.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            next.iter_mut().for_each(|v| *v /= norm);
        }
        cur = next;
        remaining -= 1;
    }
    debug_assert!(remaining >= 1);
    out
}

/// ⟨b|ρ_a|b⟩ or |⟨a|b⟩|².
pub fn fidelity(a: &FockArray, b: &FockArray) -> Result<f64> {
    if a.modes != b.modes || a.cutoff != b.cutoff {
        return Err(Error::Dimension(format!(
            "fidelity between ({}, {}) and ({}, {})",
            a.modes, a.cutoff, b.modes, b.cutoff
        )));
    }
    let f = match (&a.repr, &b.repr) {
        (Repr::Pure(x), Repr::Pure(y)) => {
            x.iter().zip(y).map(|(p, q)| p.conj() * q).sum::<Complex64>().norm_sqr()
        }
        (Repr::Mixed(r), Repr::Pure(y)) | (Repr::Pure(y), Repr::Mixed(r)) => {
            let v = DVector::from_column_slice(y);
            v.dotc(&(r * &v)).re
        }
        (Repr::Mixed(_), Repr::Mixed(_)) => {
            return Err(Error::Unsupported("fidelity between two mixed states".into()))
        }
    };
    Ok(f.clamp(0.0, 1.0))
}

fn single_mode_to_fock(state: &GaussianState, cutoff: usize) -> Result<FockArray> {
    let v = state.cov();
    let m = state.mean();
    let scale = v.amax().max(1.0);
    let coherent = (v - DMatrix::identity(2, 2) * 0.5).amax() <= 1e-9 * scale;
    if coherent {
        let alpha = Complex64::new(m[0], m[1]) / std::f64::consts::SQRT_2;
        return FockArray::coherent(alpha, cutoff);
    }
    if m.amax() > 1e-12 {
        return Err(Error::Unsupported("displaced squeezed states are not converted".into()));
    }
    let nbar = 0.5 * (v[(0, 0)] + v[(1, 1)]) - 0.5;
    let s = Complex64::new(0.5 * (v[(0, 0)] - v[(1, 1)]), v[(0, 1)]);
    FockArray::squeezed_from_moments(s, nbar, cutoff)
}

/// Converts pure vacuum, coherent, squeezed-vacuum and TMSV states (and products of
/// single-mode ones) to truncated amplitudes.
pub fn gaussian_to_fock(state: &GaussianState, cutoff: usize) -> Result<FockArray> {
    if !state.is_pure() {
        return Err(Error::NotPure(state.purity_det()));
    }
    let k = state.modes();
    let v = state.cov();
    let block_diag = (0..k).all(|i| {
        (0..k).all(|j| i == j || (0..2).all(|a| (0..2).all(|b| v[(2 * i + a, 2 * j + b)].abs() <= 1e-12)))
    });
    if block_diag {
        let mut out = single_mode_to_fock(&state.reduced(&[0])?, cutoff)?;
        for i in 1..k {
            out = out.tensor(&single_mode_to_fock(&state.reduced(&[i])?, cutoff)?)?;
        }
        return Ok(out);
    }
    if k == 2 && state.mean().amax() <= 1e-12 {
        let c1 = v[(0, 0)];
        let same = [(1, 1, c1), (2, 2, c1), (3, 3, c1), (0, 1, 0.0), (2, 3, 0.0)]
            .iter()
            .all(|&(i, j, want)| (v[(i, j)] - want).abs() <= 1e-9 * c1.max(1.0));
        let a = v[(0, 2)];
        let b = v[(0, 3)];
        let tmsv_form = (v[(1, 3)] + a).abs() <= 1e-9 * c1.max(1.0)
            && (v[(1, 2)] - b).abs() <= 1e-9 * c1.max(1.0);
        if same && tmsv_form {
            return FockArray::tmsv_from_moment(Complex64::new(a, b), c1 - 0.5, cutoff);
        }
    }
    Err(Error::Unsupported("Gaussian state outside the vacuum/coherent/squeezed/TMSV family".into()))
}

pub fn ladder(cutoff: usize) -> Result<DMatrix<Complex64>> {
    if cutoff < 2 {
        return Err(Error::InvalidParameter(format!("ladder cutoff {cutoff} < 2")));
    }
    let mut a = DMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        a[(n - 1, n)] = c((n as f64).sqrt());
    }
    Ok(a)
}

pub fn position(cutoff: usize) -> Result<DMatrix<Complex64>> {
    let a = ladder(cutoff)?;
    Ok((&a + a.adjoint()) / c(std::f64::consts::SQRT_2))
}

pub fn momentum(cutoff: usize) -> Result<DMatrix<Complex64>> {
    let a = ladder(cutoff)?;
    Ok((&a - a.adjoint()) / Complex64::new(0.0, std::f64::consts::SQRT_2))
}

pub fn number_op(cutoff: usize) -> Result<DMatrix<Complex64>> {
    let a = ladder(cutoff)?;
    Ok(a.adjoint() * a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quad {
    Q,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub mode: usize,
    pub kind: Quad,
    pub power: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub factors: Vec<Factor>,
}

/// Real polynomial in quadratures; each term is a product of commuting factors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolynomialObservable {
    pub terms: Vec<Term>,
}

impl PolynomialObservable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn term(mut self, coeff: f64, factors: &[(usize, Quad, u32)]) -> Self {
        self.terms.push(Term {
            coeff,
            factors: factors.iter().map(|&(mode, kind, power)| Factor { mode, kind, power }).collect(),
        });
        self
    }

    /// Checks mode ranges and that no term mixes q and p of one mode.
    pub fn validate(&self, modes: usize) -> Result<()> {
        for t in &self.terms {
            let mut kinds: Vec<Option<Quad>> = vec![None; modes];
            for f in &t.factors {
                if f.mode >= modes {
                    return Err(Error::Dimension(format!("factor on mode {} of {modes}", f.mode)));
                }
                match kinds[f.mode] {
                    Some(k) if k != f.kind => {
                        return Err(Error::InvalidParameter(format!(
                            "term mixes q and p on mode {}",
                            f.mode
                        )))
                    }
                    _ => kinds[f.mode] = Some(f.kind),
                }
            }
        }
        Ok(())
    }

    /// Per-mode (kind, total power) of a term.
    fn term_powers(t: &Term, modes: usize) -> Vec<Option<(Quad, u32)>> {
        let mut out: Vec<Option<(Quad, u32)>> = vec![None; modes];
        for f in &t.factors {
            if f.power == 0 {
                continue;
            }
            out[f.mode] = match out[f.mode] {
                Some((k, p)) => Some((k, p + f.power)),
                None => Some((f.kind, f.power)),
            };
        }
        out
    }

    /// Rewrites the observable as classical post-processing of one local homodyne
    /// setting per mode, when that is possible.
    pub fn to_joint_homodyne(&self, modes: usize) -> Result<JointHomodyne> {
        self.validate(modes)?;
        let mut linear = vec![(0.0f64, 0.0f64); modes];
        let mut nonlinear: Vec<Option<Quad>> = vec![None; modes];
        let mut offset = 0.0;
        let mut products = Vec::new();
        for t in &self.terms {
            let pw = Self::term_powers(t, modes);
            let used: Vec<usize> = (0..modes).filter(|&m| pw[m].is_some()).collect();
            match used.as_slice() {
                [] => offset += t.coeff,
                [m] if pw[*m].unwrap().1 == 1 => match pw[*m].unwrap().0 {
                    Quad::Q => linear[*m].0 += t.coeff,
                    Quad::P => linear[*m].1 += t.coeff,
                },
                _ => {
                    for &m in &used {
                        let kind = pw[m].unwrap().0;
                        match nonlinear[m] {
                            Some(k) if k != kind => {
                                return Err(Error::Unsupported(format!(
                                    "mode {m} is needed in both q and p"
                                )))
                            }
                            _ => nonlinear[m] = Some(kind),
                        }
                    }
                    products.push((t.coeff, used.iter().map(|&m| (m, pw[m].unwrap().1)).collect::<Vec<_>>()));
                }
            }
        }
        let mut settings = Vec::new();
        let mut slot = vec![usize::MAX; modes];
        let mut scale = vec![1.0; modes];
        let mut terms = Vec::new();
        for m in 0..modes {
            let (a, b) = linear[m];
            let lin = a != 0.0 || b != 0.0;
            let phi = match nonlinear[m] {
                Some(Quad::Q) if b == 0.0 => 0.0,
                Some(Quad::P) if a == 0.0 => std::f64::consts::FRAC_PI_2,
                Some(_) => {
                    return Err(Error::Unsupported(format!(
                        "mode {m} mixes a linear term with a conflicting product"
                    )))
                }
                None if lin => b.atan2(a),
                None => continue,
            };
            slot[m] = settings.len();
            settings.push((m, phi));
            if lin {
                let r = match nonlinear[m] {
                    Some(Quad::Q) => a,
                    Some(Quad::P) => b,
                    None => a.hypot(b),
                };
                terms.push((r, vec![(slot[m], 1u32)]));
            }
            scale[m] = 1.0;
        }
        for (coeff, fs) in products {
            terms.push((coeff, fs.into_iter().map(|(m, p)| (slot[m], p)).collect()));
        }
        Ok(JointHomodyne { settings, terms, offset })
    }
}

/// One local quadrature per mode, followed by a polynomial in the outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHomodyne {
    /// (mode, angle φ): measure cos φ q + sin φ p.
    pub settings: Vec<(usize, f64)>,
    /// (coefficient, [(slot into settings, power)]).
    pub terms: Vec<(f64, Vec<(usize, u32)>)>,
    pub offset: f64,
}

impl JointHomodyne {
    pub fn from_linear(obs: &LinearObservable) -> Self {
        let mut settings = Vec::new();
        let mut terms = Vec::new();
        for m in 0..obs.modes() {
            let (a, b) = (obs.coeffs[2 * m], obs.coeffs[2 * m + 1]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            terms.push((a.hypot(b), vec![(settings.len(), 1)]));
            settings.push((m, b.atan2(a)));
        }
        Self { settings, terms, offset: obs.offset }
    }

    pub fn evaluate(&self, outcomes: &[f64]) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|(cf, fs)| cf * fs.iter().map(|&(s, p)| outcomes[s].powi(p as i32)).product::<f64>())
                .sum::<f64>()
    }
}

fn factor_matrix(kind: Quad, power: u32, cutoff: usize) -> Result<DMatrix<Complex64>> {
    let base = match kind {
        Quad::Q => position(cutoff)?,
        Quad::P => momentum(cutoff)?,
    };
    let mut m = DMatrix::identity(cutoff, cutoff);
    for _ in 0..power {
        m = &m * &base;
    }
    Ok(m)
}

/// Applies a D×D matrix along one axis of a `modes`-mode tensor.
fn apply_on_axis(
    m: &DMatrix<Complex64>,
    v: &[Complex64],
    mode: usize,
    modes: usize,
    d: usize,
) -> Vec<Complex64> {
    let inner = d.pow((modes - mode - 1) as u32);
    let outer = d.pow(mode as u32);
    let mut out = vec![C0; v.len()];
    for o in 0..outer {
        for i in 0..inner {
            for r in 0..d {
                let mut acc = C0;
                for s in 0..d {
                    let mrs = m[(r, s)];
                    if mrs != C0 {
                        acc += mrs * v[(o * d + s) * inner + i];
                    }
                }
                out[(o * d + r) * inner + i] = acc;
            }
        }
    }
    out
}

/// O|ψ⟩ for a polynomial observable, matrix-free.
pub fn apply_polynomial(
    obs: &PolynomialObservable,
    v: &[Complex64],
    modes: usize,
    cutoff: usize,
) -> Result<Vec<Complex64>> {
    obs.validate(modes)?;
    let mut out = vec![C0; v.len()];
    for t in &obs.terms {
        let pw = PolynomialObservable::term_powers(t, modes);
        let mut w = v.to_vec();
        for (m, p) in pw.iter().enumerate() {
            if let Some((kind, power)) = p {
                w = apply_on_axis(&factor_matrix(*kind, *power, cutoff)?, &w, m, modes, cutoff);
            }
        }
        for (o, x) in out.iter_mut().zip(w) {
            *o += x * t.coeff;
        }
    }
    Ok(out)
}

fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

/// Dense matrix of a polynomial observable on `modes` modes.
pub fn build_observable(
    spec: &PolynomialObservable,
    modes: usize,
    cutoff: usize,
) -> Result<DMatrix<Complex64>> {
    spec.validate(modes)?;
    let n = basis_size(modes, cutoff)?;
    if n > DENSE_CAP {
        return Err(Error::TooLarge { size: n, cap: DENSE_CAP });
    }
    let mut out = DMatrix::zeros(n, n);
    for t in &spec.terms {
        let pw = PolynomialObservable::term_powers(t, modes);
        let mut m = DMatrix::identity(1, 1);
        for p in &pw {
            let f = match p {
                Some((kind, power)) => factor_matrix(*kind, *power, cutoff)?,
                None => DMatrix::identity(cutoff, cutoff),
            };
            m = kron(&m, &f);
        }
        out += m * c(t.coeff);
    }
    if cmax(&(&out - out.adjoint())) > 1e-8 {
        return Err(Error::InvalidParameter("observable is not Hermitian".into()));
    }
    Ok(out)
}

/// Dense Hermitian observable with a lazily computed, shared eigendecomposition.
#[derive(Debug)]
pub struct DenseObservable {
    matrix: DMatrix<Complex64>,
    eig: OnceLock<(Vec<f64>, DMatrix<Complex64>)>,
}

impl DenseObservable {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension("observable is not square".into()));
        }
        if cmax(&(&matrix - matrix.adjoint())) > 1e-8 {
            return Err(Error::InvalidParameter("observable is not Hermitian".into()));
        }
        Ok(Self { matrix, eig: OnceLock::new() })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    fn eigen(&self) -> &(Vec<f64>, DMatrix<Complex64>) {
        self.eig.get_or_init(|| {
            let h = (&self.matrix + self.matrix.adjoint()) * c(0.5);
            let e = SymmetricEigen::new(h);
            (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
        })
    }
}

/// Outcome distribution (eigenvalue, probability) of a dense observable.
pub fn born_distribution(state: &FockArray, obs: &DenseObservable) -> Result<Vec<(f64, f64)>> {
    if obs.matrix.nrows() != state.dim() {
        return Err(Error::Dimension("observable does not match state basis".into()));
    }
    let (vals, vecs) = obs.eigen();
    let mut out = Vec::with_capacity(vals.len());
    for (i, &lam) in vals.iter().enumerate() {
        let col = vecs.column(i);
        let p = match &state.repr {
            Repr::Pure(a) => col.iter().zip(a).map(|(v, x)| v.conj() * x).sum::<Complex64>().norm_sqr(),
            Repr::Mixed(r) => {
                let v = col.clone_owned();
                v.dotc(&(r * &v)).re
            }
        };
        out.push((lam, p.max(0.0)));
    }
    Ok(out)
}

pub fn born_sample<R: Rng + ?Sized>(state: &FockArray, obs: &DenseObservable, rng: &mut R) -> Result<f64> {
    let dist = born_distribution(state, obs)?;
    let total: f64 = dist.iter().map(|d| d.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(v, p) in &dist {
        if u < p {
            return Ok(v);
        }
        u -= p;
    }
    Ok(dist.iter().rev().find(|d| d.1 > 0.0).map(|d| d.0).unwrap_or(0.0))
}

/// |G⟩ = Π_e exp(-i Π_{j∈e} q_j) applied to momentum-squeezed vacua (vertices are 0-based).
///
/// The gate exponential is exact for the truncated position operator: it is
/// diagonal in the eigenbasis of truncated q on each mode.
pub fn hypergraph_state(edges: &[Vec<usize>], xi: f64, modes: usize, cutoff: usize) -> Result<FockArray> {
    if !(xi >= 0.0) || !xi.is_finite() {
        return Err(Error::InvalidParameter(format!("squeezing ξ = {xi}")));
    }
    for e in edges {
        if e.is_empty() || e.iter().any(|&v| v >= modes) {
            return Err(Error::InvalidParameter(format!("edge {e:?} on {modes} modes")));
        }
        let mut s = e.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != e.len() {
            return Err(Error::InvalidParameter(format!("edge {e:?} repeats a vertex")));
        }
    }
    let n = basis_size(modes, cutoff)?;
    let single = FockArray::momentum_squeezed(xi, cutoff)?;
    let tail = single.tail * modes as f64;
    if tail > HYPERGRAPH_LEAKAGE_BUDGET {
        return Err(Error::Leakage { leakage: tail, budget: HYPERGRAPH_LEAKAGE_BUDGET });
    }
    let mut state = single.clone();
    for _ in 1..modes {
        state = state.tensor(&single)?;
    }
    let mut amps = state.amplitudes().expect("pure").to_vec();
    if !edges.is_empty() {
        let q = position(cutoff)?.map(|z| z.re);
        let eig = SymmetricEigen::new(q);
        let nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let v = eig.eigenvectors.map(c);
        let vt = v.transpose();
        for m in 0..modes {
            amps = apply_on_axis(&vt, &amps, m, modes, cutoff);
        }
        let mut digits = vec![0usize; modes];
        for (idx, a) in amps.iter_mut().enumerate() {
            let mut rest = idx;
            for m in (0..modes).rev() {
                digits[m] = rest % cutoff;
                rest /= cutoff;
            }
            let phase: f64 = edges
                .iter()
                .map(|e| e.iter().map(|&j| nodes[digits[j]]).product::<f64>())
                .sum();
            *a *= Complex64::from_polar(1.0, -phase);
        }
        for m in 0..modes {
            amps = apply_on_axis(&v, &amps, m, modes, cutoff);
        }
    }
    debug_assert_eq!(amps.len(), n);
    let mut out = FockArray::raw(modes, cutoff, Repr::Pure(amps), tail);
    let norm = out.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidParameter(format!("norm drifted to {norm}")));
    }
    if let Repr::Pure(a) = &mut out.repr {
        a.iter_mut().for_each(|x| *x /= norm.sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::{two_mode_squeezed, SymplecticOp, apply_symplectic, make_vacuum};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ladder_examples() {
        let a = ladder(3).unwrap();
        assert_relative_eq!(a[(0, 1)].re, 1.0);
        assert_relative_eq!(a[(1, 2)].re, 2f64.sqrt());
        assert!(ladder(1).is_err());
        let d = 8;
        let q = position(d).unwrap();
        let p = momentum(d).unwrap();
        let comm = &q * &p - &p * &q;
        for i in 0..d - 1 {
            for j in 0..d - 1 {
                let want = if i == j { Complex64::new(0.0, 1.0) } else { C0 };
                assert!((comm[(i, j)] - want).norm() < 1e-12);
            }
        }
        let n = number_op(d).unwrap();
        for i in 0..d {
            assert_relative_eq!(n[(i, i)].re, i as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn build_observable_examples() {
        let d = 5;
        let q = PolynomialObservable::new().term(1.0, &[(0, Quad::Q, 1)]);
        assert!(cmax(&(build_observable(&q, 1, d).unwrap() - position(d).unwrap())) < 1e-14);
        let qq = PolynomialObservable::new().term(1.0, &[(0, Quad::Q, 1), (1, Quad::Q, 1)]);
        let want = position(d).unwrap().kronecker(&position(d).unwrap());
        assert!(cmax(&(build_observable(&qq, 2, d).unwrap() - want)) < 1e-14);
        let bad = PolynomialObservable::new().term(1.0, &[(0, Quad::Q, 1), (0, Quad::P, 1)]);
        assert!(build_observable(&bad, 1, d).is_err());
    }

    #[test]
    fn born_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 6;
        let n = DenseObservable::new(number_op(d).unwrap()).unwrap();
        let one = FockArray::number(&[1], d).unwrap();
        for _ in 0..20 {
            assert_relative_eq!(born_sample(&one, &n, &mut rng).unwrap(), 1.0, epsilon = 1e-9);
        }
        let mut amps = vec![C0; d];
        amps[0] = c(0.5f64.sqrt());
        amps[2] = c(0.5f64.sqrt());
        let sup = FockArray::new_pure(1, d, amps).unwrap();
        let trials = 4000;
        let twos = (0..trials)
            .filter(|_| born_sample(&sup, &n, &mut rng).unwrap() > 1.0)
            .count() as f64;
        assert!((twos / trials as f64 - 0.5).abs() < 3.0 * (0.25 / trials as f64).sqrt());
    }

    #[test]
    fn born_vacuum_position_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = DenseObservable::new(position(40).unwrap()).unwrap();
        let vac = FockArray::vacuum(1, 40).unwrap();
        let m = 10_000;
        let xs: Vec<f64> = (0..m).map(|_| born_sample(&vac, &q, &mut rng).unwrap()).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / m as f64;
        assert!((var - 0.5).abs() < 0.025, "{var}");
    }

    #[test]
    fn fidelity_examples() {
        let v = FockArray::vacuum(1, 30).unwrap();
        let one = FockArray::number(&[1], 30).unwrap();
        assert_relative_eq!(fidelity(&v, &v).unwrap(), 1.0);
        assert_relative_eq!(fidelity(&v, &one).unwrap(), 0.0);
        let coh = FockArray::coherent(c(1.0), 30).unwrap();
        assert!((fidelity(&v, &coh).unwrap() - (-1f64).exp()).abs() < 1e-4);
        let th = FockArray::thermal(1.0, 60).unwrap();
        assert!((fidelity(&th, &FockArray::vacuum(1, 60).unwrap()).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gaussian_conversion() {
        let d = 30;
        let v = gaussian_to_fock(&make_vacuum(1).unwrap(), d).unwrap();
        assert_relative_eq!(v.amplitudes().unwrap()[0].re, 1.0);
        let kappa: f64 = 0.5;
        let t = gaussian_to_fock(&two_mode_squeezed(kappa), d).unwrap();
        let a = t.amplitudes().unwrap();
        for n in 0..5 {
            assert_relative_eq!(a[n * d + n].re, kappa.tanh().powi(n as i32) / kappa.cosh(), epsilon = 1e-12);
        }
        let sq = apply_symplectic(&make_vacuum(1).unwrap(), &SymplecticOp::squeezer(0.5)).unwrap();
        let f = gaussian_to_fock(&sq, d).unwrap();
        let a = f.amplitudes().unwrap();
        assert!(a.iter().skip(1).step_by(2).all(|z| *z == C0));
        // q-variance from amplitudes.
        let q2 = PolynomialObservable::new().term(1.0, &[(0, Quad::Q, 2)]);
        assert_relative_eq!(f.expectation_poly(&q2).unwrap(), (-1f64).exp() / 2.0, epsilon = 1e-9);
        let th = crate::phasespace::GaussianState::thermal(1.0).unwrap();
        assert!(gaussian_to_fock(&th, d).is_err());
    }

    #[test]
    fn hypergraph_basics() {
        let d = 16;
        let g = hypergraph_state(&[], 0.3, 2, d).unwrap();
        let a = g.amplitudes().unwrap();
        for (idx, z) in a.iter().enumerate() {
            if (idx / d) % 2 == 1 || (idx % d) % 2 == 1 {
                assert_eq!(*z, C0);
            }
        }
        let h = hypergraph_state(&[vec![0, 1]], 0.3, 2, d).unwrap();
        assert!((h.norm() - 1.0).abs() < 1e-6);
        assert!(hypergraph_state(&[vec![0, 3]], 0.3, 2, d).is_err());
        assert!(matches!(
            hypergraph_state(&[], 1.5, 1, 6),
            Err(Error::Leakage { .. })
        ));
    }

    #[test]
    fn joint_homodyne_conversion() {
        let s: f64 = 0.8;
        let th: f64 = 0.3;
        // s cosθ q0 + (1/s) sinθ (p0 + q1 q2)
        let obs = PolynomialObservable::new()
            .term(s * th.cos(), &[(0, Quad::Q, 1)])
            .term(th.sin() / s, &[(0, Quad::P, 1)])
            .term(th.sin() / s, &[(1, Quad::Q, 1), (2, Quad::Q, 1)]);
        let jh = obs.to_joint_homodyne(3).unwrap();
        assert_eq!(jh.settings.len(), 3);
        assert_relative_eq!(jh.settings[0].1, (th.sin() / s).atan2(s * th.cos()));
        assert_eq!(jh.settings[1], (1, 0.0));
        let bad = PolynomialObservable::new()
            .term(1.0, &[(0, Quad::P, 1)])
            .term(1.0, &[(0, Quad::Q, 1), (1, Quad::Q, 1)]);
        assert!(bad.to_joint_homodyne(2).is_err());
    }
}
