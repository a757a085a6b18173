//! Gaussian states in phase space.
//!
//! Quadratures follow q = (a + a†)/√2, so the vacuum has covariance I/2.
//! Vectors are ordered q1, p1, q2, p2, ...

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SYMPLECTIC_TOL: f64 = 1e-9;
const PHYSICAL_TOL: f64 = 1e-9;
const PURITY_TOL: f64 = 1e-6;
const MIN_VARIANCE: f64 = 1e-12;

/// Standard symplectic form for the interleaved ordering.
pub fn omega(k: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        w[(2 * i, 2 * i + 1)] = 1.0;
        w[(2 * i + 1, 2 * i)] = -1.0;
    }
    w
}

/// Smallest eigenvalue of the Hermitian matrix `a + i b` (a symmetric, b antisymmetric),
/// computed through its real 2n×2n embedding.
fn min_eig_hermitian(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((n, n), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, n)).copy_from(&(-b));
    m.view_mut((n, 0), (n, n)).copy_from(b);
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.min()
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Dimension(format!("mean length {n} is not 2k with k >= 1")));
        }
        check_square(&cov, n, "covariance")?;
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidParameter(format!(
                "covariance not symmetric (deviation {asym:.3e})"
            )));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let min = min_eig_hermitian(&cov, &(omega(n / 2) * 0.5));
        if min < -PHYSICAL_TOL * scale {
            return Err(Error::Unphysical(min));
        }
        Ok(Self { mean, cov })
    }

    pub fn modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn vacuum(k: usize) -> Result<Self> {
        make_vacuum(k)
    }

    /// Coherent state |α⟩; mean is √2 (Re α, Im α).
    pub fn coherent(alpha: Complex64) -> Self {
        let s = std::f64::consts::SQRT_2;
        Self {
            mean: DVector::from_vec(vec![s * alpha.re, s * alpha.im]),
            cov: DMatrix::identity(2, 2) * 0.5,
        }
    }

    /// Single-mode thermal state with mean photon number `nbar`.
    pub fn thermal(nbar: f64) -> Result<Self> {
        if !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(Error::InvalidParameter(format!("thermal occupation {nbar}")));
        }
        Ok(Self {
            mean: DVector::zeros(2),
            cov: DMatrix::identity(2, 2) * (nbar + 0.5),
        })
    }

    /// Squeezed vacuum with q-variance e^{-2r}/2.
    pub fn squeezed_vacuum(r: f64) -> Self {
        let vac = Self::vacuum(1).expect("k = 1");
        apply_symplectic(&vac, &SymplecticOp::squeezer(r)).expect("squeezer is symplectic")
    }

    pub fn is_pure(&self) -> bool {
        (self.purity_det() - 1.0).abs() <= PURITY_TOL
    }

    /// det(2V), equal to one for pure states.
    pub fn purity_det(&self) -> f64 {
        (&self.cov * 2.0).determinant()
    }

    /// Tensor product, self first.
    pub fn tensor(&self, other: &Self) -> Self {
        let n1 = self.mean.len();
        let n2 = other.mean.len();
        let mut mean = DVector::zeros(n1 + n2);
        mean.rows_mut(0, n1).copy_from(&self.mean);
        mean.rows_mut(n1, n2).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(n1 + n2, n1 + n2);
        cov.view_mut((0, 0), (n1, n1)).copy_from(&self.cov);
        cov.view_mut((n1, n1), (n2, n2)).copy_from(&other.cov);
        Self { mean, cov }
    }

    /// Reduced state on the listed modes, in the listed order.
    pub fn reduced(&self, modes: &[usize]) -> Result<Self> {
        let idx = quadrature_indices(modes, self.modes())?;
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Ok(Self { mean, cov })
    }

    /// Mean photon number summed over all modes.
    pub fn mean_photon_number(&self) -> f64 {
        0.5 * (self.cov.trace() + self.mean.norm_squared()) - 0.5 * self.modes() as f64
    }
}

fn quadrature_indices(modes: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut idx = Vec::with_capacity(2 * modes.len());
    for &m in modes {
        if m >= k {
            return Err(Error::Dimension(format!("mode {m} out of range for {k} modes")));
        }
        if idx.contains(&(2 * m)) {
            return Err(Error::Dimension(format!("mode {m} listed twice")));
        }
        idx.push(2 * m);
        idx.push(2 * m + 1);
    }
    Ok(idx)
}

pub fn make_vacuum(k: usize) -> Result<GaussianState> {
    if k == 0 {
        return Err(Error::InvalidParameter("vacuum needs at least one mode".into()));
    }
    Ok(GaussianState {
        mean: DVector::zeros(2 * k),
        cov: DMatrix::identity(2 * k, 2 * k) * 0.5,
    })
}

/// Two-mode squeezed vacuum with Schmidt coefficients tanhⁿκ / cosh κ.
pub fn two_mode_squeezed(kappa: f64) -> GaussianState {
    let c = (2.0 * kappa).cosh() / 2.0;
    let s = (2.0 * kappa).sinh() / 2.0;
    let mut cov = DMatrix::identity(4, 4) * c;
    cov[(0, 2)] = s;
    cov[(2, 0)] = s;
    cov[(1, 3)] = -s;
    cov[(3, 1)] = -s;
    GaussianState { mean: DVector::zeros(4), cov }
}

/// Affine symplectic map x -> S x + d.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOp {
    s: DMatrix<f64>,
    d: DVector<f64>,
}

impl SymplecticOp {
    pub fn new(s: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = d.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Dimension(format!("displacement length {n} is not 2k")));
        }
        check_square(&s, n, "symplectic matrix")?;
        let w = omega(n / 2);
        let dev = (&s * &w * s.transpose() - &w).amax();
        if !(dev <= SYMPLECTIC_TOL) {
            return Err(Error::NotSymplectic(dev));
        }
        Ok(Self { s, d })
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn modes(&self) -> usize {
        self.d.len() / 2
    }

    pub fn identity(k: usize) -> Self {
        Self {
            s: DMatrix::identity(2 * k, 2 * k),
            d: DVector::zeros(2 * k),
        }
    }

    /// Single-mode squeezer diag(e^{-r}, e^{r}).
    pub fn squeezer(r: f64) -> Self {
        Self {
            s: DMatrix::from_diagonal(&DVector::from_vec(vec![(-r).exp(), r.exp()])),
            d: DVector::zeros(2),
        }
    }

    /// Phase rotation sending q to cos φ q + sin φ p.
    pub fn rotation(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self {
            s: DMatrix::from_row_slice(2, 2, &[c, s, -s, c]),
            d: DVector::zeros(2),
        }
    }

    pub fn displacement(d: DVector<f64>) -> Result<Self> {
        let k = d.len() / 2;
        Self::new(DMatrix::identity(2 * k, 2 * k), d)
    }

    /// Two-mode squeezer producing the TMSV from vacuum.
    pub fn two_mode_squeezer(kappa: f64) -> Self {
        let (c, s) = (kappa.cosh(), kappa.sinh());
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            c, 0.0, s, 0.0,
            0.0, c, 0.0, -s,
            s, 0.0, c, 0.0,
            0.0, -s, 0.0, c,
        ]);
        Self { s: m, d: DVector::zeros(4) }
    }

    /// Moment map of the gate e^{-i q_a q_b}: p_a -> p_a - q_b, p_b -> p_b - q_a.
    /// An edge of length one is e^{-i q_a}, which shifts p_a by -1.
    pub fn controlled_phase(k: usize, edge: &[usize]) -> Result<Self> {
        let mut s = DMatrix::identity(2 * k, 2 * k);
        let mut d = DVector::zeros(2 * k);
        match *edge {
            [a] if a < k => d[2 * a + 1] = -1.0,
            [a, b] if a < k && b < k && a != b => {
                s[(2 * a + 1, 2 * b)] = -1.0;
                s[(2 * b + 1, 2 * a)] = -1.0;
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "edge {edge:?} is not a Gaussian gate on {k} modes"
                )))
            }
        }
        Ok(Self { s, d })
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Self) -> Result<Self> {
        if self.d.len() != first.d.len() {
            return Err(Error::Dimension("composing ops of different size".into()));
        }
        Ok(Self {
            s: &self.s * &first.s,
            d: &self.s * &first.d + &self.d,
        })
    }

    pub fn inverse(&self) -> Self {
        // S⁻¹ = -Ω Sᵀ Ω for symplectic S.
        let w = omega(self.modes());
        let inv = -(&w * self.s.transpose() * &w);
        let d = -(&inv * &self.d);
        Self { s: inv, d }
    }

    /// Embeds a `m`-mode op into `k` modes acting on `modes` (identity elsewhere).
    pub fn embed(&self, k: usize, modes: &[usize]) -> Result<Self> {
        if modes.len() != self.modes() {
            return Err(Error::Dimension("embedding mode list length".into()));
        }
        let idx = quadrature_indices(modes, k)?;
        let mut s = DMatrix::identity(2 * k, 2 * k);
        let mut d = DVector::zeros(2 * k);
        for (r, &i) in idx.iter().enumerate() {
            d[i] = self.d[r];
            for (c, &j) in idx.iter().enumerate() {
                s[(i, j)] = self.s[(r, c)];
            }
        }
        Ok(Self { s, d })
    }

    /// Direct sum: `self` on the first modes, `other` on the rest.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let (n1, n2) = (self.d.len(), other.d.len());
        let mut s = DMatrix::zeros(n1 + n2, n1 + n2);
        s.view_mut((0, 0), (n1, n1)).copy_from(&self.s);
        s.view_mut((n1, n1), (n2, n2)).copy_from(&other.s);
        let mut d = DVector::zeros(n1 + n2);
        d.rows_mut(0, n1).copy_from(&self.d);
        d.rows_mut(n1, n2).copy_from(&other.d);
        Self { s, d }
    }
}

pub fn apply_symplectic(state: &GaussianState, op: &SymplecticOp) -> Result<GaussianState> {
    if state.mean.len() != op.d.len() {
        return Err(Error::Dimension(format!(
            "state has {} modes, op has {}",
            state.modes(),
            op.modes()
        )));
    }
    Ok(GaussianState {
        mean: &op.s * &state.mean + &op.d,
        cov: &op.s * &state.cov * op.s.transpose(),
    })
}

/// Gaussian channel: cov -> X cov Xᵀ + Y, mean -> X mean + shift.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    shift: DVector<f64>,
}

impl GaussianChannel {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let n = shift.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Dimension(format!("shift length {n} is not 2k")));
        }
        check_square(&x, n, "X")?;
        check_square(&y, n, "Y")?;
        let scale = y.amax().max(x.amax()).max(1.0);
        if (&y - y.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidParameter("Y is not symmetric".into()));
        }
        let y = (&y + y.transpose()) * 0.5;
        let w = omega(n / 2);
        let b = (&w - &x * &w * x.transpose()) * 0.5;
        let min = min_eig_hermitian(&y, &b);
        if min < -PHYSICAL_TOL * scale {
            return Err(Error::NotCompletelyPositive(min));
        }
        Ok(Self { x, y, shift })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn modes(&self) -> usize {
        self.shift.len() / 2
    }

    pub fn identity(k: usize) -> Self {
        Self::phase_insensitive(k, 1.0, 0.0)
    }

    fn phase_insensitive(k: usize, a: f64, y: f64) -> Self {
        Self {
            x: DMatrix::identity(2 * k, 2 * k) * a,
            y: DMatrix::identity(2 * k, 2 * k) * y,
            shift: DVector::zeros(2 * k),
        }
    }

    /// Phase-insensitive channel X = a·I, Y = y·I, checked for complete positivity.
    pub fn isotropic(k: usize, a: f64, y: f64) -> Result<Self> {
        let ch = Self::phase_insensitive(k, a, y);
        Self::new(ch.x, ch.y, ch.shift)
    }

    /// Pure loss with transmissivity η.
    pub fn pure_loss(k: usize, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("transmissivity {eta}")));
        }
        Ok(Self::phase_insensitive(k, eta.sqrt(), (1.0 - eta) / 2.0))
    }

    /// Quantum-limited phase-insensitive amplifier with amplitude gain `g` ≥ 1.
    pub fn amplifier(k: usize, g: f64) -> Result<Self> {
        if !(g >= 1.0) {
            return Err(Error::InvalidParameter(format!("amplifier gain {g} < 1")));
        }
        Ok(Self::phase_insensitive(k, g, (g * g - 1.0) / 2.0))
    }

    /// Quantum-limited channel with amplitude factor `a`: loss for a < 1, amplification for a > 1.
    pub fn quantum_limited(k: usize, a: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::InvalidParameter(format!("amplitude factor {a}")));
        }
        Ok(Self::phase_insensitive(k, a, (a * a - 1.0).abs() / 2.0))
    }

    /// Classical additive Gaussian noise of variance `sigma2` per quadrature.
    pub fn additive_noise(k: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise variance {sigma2}")));
        }
        Ok(Self::phase_insensitive(k, 1.0, sigma2))
    }

    /// Discards the input and emits vacuum.
    pub fn replace_with_vacuum(k: usize) -> Self {
        Self::phase_insensitive(k, 0.0, 0.5)
    }

    pub fn from_symplectic(op: &SymplecticOp) -> Self {
        let n = op.d.len();
        Self {
            x: op.s.clone(),
            y: DMatrix::zeros(n, n),
            shift: op.d.clone(),
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Self) -> Result<Self> {
        if self.shift.len() != first.shift.len() {
            return Err(Error::Dimension("composing channels of different size".into()));
        }
        Ok(Self {
            x: &self.x * &first.x,
            y: &self.x * &first.y * self.x.transpose() + &self.y,
            shift: &self.x * &first.shift + &self.shift,
        })
    }

    /// Conjugates by Gaussian unitaries: returns after⁻¹ ∘ self ∘ before.
    pub fn conjugate(&self, before: &SymplecticOp, after: &SymplecticOp) -> Result<Self> {
        let pre = Self::from_symplectic(before);
        let post = Self::from_symplectic(&after.inverse());
        post.compose(&self.compose(&pre)?)
    }
}

pub fn apply_channel(state: &GaussianState, ch: &GaussianChannel) -> Result<GaussianState> {
    if state.mean.len() != ch.shift.len() {
        return Err(Error::Dimension(format!(
            "state has {} modes, channel has {}",
            state.modes(),
            ch.modes()
        )));
    }
    let out = GaussianState {
        mean: &ch.x * &state.mean + &ch.shift,
        cov: &ch.x * &state.cov * ch.x.transpose() + &ch.y,
    };
    GaussianState::new(out.mean, out.cov)
}

/// Applies a channel to a subset of modes of a larger state.
pub fn apply_channel_on(
    state: &GaussianState,
    ch: &GaussianChannel,
    modes: &[usize],
) -> Result<GaussianState> {
    if modes.len() != ch.modes() {
        return Err(Error::Dimension("channel mode list length".into()));
    }
    let k = state.modes();
    let idx = quadrature_indices(modes, k)?;
    let n = 2 * k;
    let mut x = DMatrix::identity(n, n);
    let mut y = DMatrix::zeros(n, n);
    let mut shift = DVector::zeros(n);
    for (r, &i) in idx.iter().enumerate() {
        shift[i] = ch.shift[r];
        for (c, &j) in idx.iter().enumerate() {
            x[(i, j)] = ch.x[(r, c)];
            y[(i, j)] = ch.y[(r, c)];
        }
    }
    apply_channel(state, &GaussianChannel { x, y, shift })
}

/// Real linear combination of quadratures plus a constant offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservable {
    pub coeffs: DVector<f64>,
    pub offset: f64,
}

impl LinearObservable {
    pub fn new(coeffs: DVector<f64>, offset: f64) -> Result<Self> {
        if coeffs.iter().all(|c| *c == 0.0) {
            return Err(Error::InvalidParameter("observable has all-zero coefficients".into()));
        }
        if coeffs.len() % 2 != 0 {
            return Err(Error::Dimension("coefficient vector length is not 2k".into()));
        }
        Ok(Self { coeffs, offset })
    }

    /// Rotated quadrature cos φ q_j + sin φ p_j on `k` modes.
    pub fn quadrature(k: usize, mode: usize, phi: f64) -> Self {
        let mut coeffs = DVector::zeros(2 * k);
        coeffs[2 * mode] = phi.cos();
        coeffs[2 * mode + 1] = phi.sin();
        Self { coeffs, offset: 0.0 }
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len() / 2
    }
}

pub fn marginal(state: &GaussianState, obs: &LinearObservable) -> Result<(f64, f64)> {
    if obs.coeffs.len() != state.mean.len() {
        return Err(Error::Dimension(format!(
            "observable has {} modes, state has {}",
            obs.modes(),
            state.modes()
        )));
    }
    let mean = obs.coeffs.dot(&state.mean) + obs.offset;
    let var = (&state.cov * &obs.coeffs).dot(&obs.coeffs);
    if !(var > MIN_VARIANCE) {
        return Err(Error::DegenerateVariance(var));
    }
    Ok((mean, var))
}

pub fn sample_homodyne<R: Rng + ?Sized>(
    state: &GaussianState,
    obs: &LinearObservable,
    rng: &mut R,
) -> Result<f64> {
    let (mean, var) = marginal(state, obs)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(mean + var.sqrt() * z)
}

/// Jointly samples commuting local quadratures cos φ q_m + sin φ p_m, one per listed mode.
pub fn sample_local_quadratures<R: Rng + ?Sized>(
    state: &GaussianState,
    settings: &[(usize, f64)],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = state.modes();
    let n = settings.len();
    let mut a = DMatrix::zeros(n, 2 * k);
    let mut seen = Vec::with_capacity(n);
    for (r, &(m, phi)) in settings.iter().enumerate() {
        if m >= k || seen.contains(&m) {
            return Err(Error::Dimension(format!("bad or repeated mode {m}")));
        }
        seen.push(m);
        a[(r, 2 * m)] = phi.cos();
        a[(r, 2 * m + 1)] = phi.sin();
    }
    let mean = &a * &state.mean;
    let cov = &a * &state.cov * a.transpose();
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::DegenerateVariance(cov.diagonal().min()))?;
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok((mean + chol.l() * z).iter().copied().collect())
}

/// ⟨ψ|ρ|ψ⟩ for a pure Gaussian target ψ and an arbitrary Gaussian ρ.
pub fn pure_state_fidelity(target: &GaussianState, actual: &GaussianState) -> Result<f64> {
    if target.mean.len() != actual.mean.len() {
        return Err(Error::Dimension("fidelity between states of different size".into()));
    }
    let det = target.purity_det();
    if (det - 1.0).abs() > PURITY_TOL {
        return Err(Error::NotPure(det));
    }
    let sum = &target.cov + &actual.cov;
    let delta = &actual.mean - &target.mean;
    Ok(gaussian_overlap(&sum, &delta)?.clamp(0.0, 1.0))
}

/// det(A)^{-1/2} exp(-½ δᵀ A⁻¹ δ) for positive definite A.
fn gaussian_overlap(a: &DMatrix<f64>, delta: &DVector<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| Error::Domain("overlap matrix is not positive definite".into()))?;
    let det: f64 = chol.l().diagonal().iter().map(|x| x * x).product();
    let sol = chol.solve(delta);
    Ok(det.powf(-0.5) * (-0.5 * delta.dot(&sol)).exp())
}

/// Average of ⟨gα|E(|α⟩⟨α|)|gα⟩ over α with density (λ/π) e^{-λ|α|²}.
pub fn coherent_average_fidelity(ch: &GaussianChannel, lambda: f64, g: f64) -> Result<f64> {
    if ch.modes() != 1 {
        return Err(Error::Dimension("coherent_average_fidelity needs a single-mode channel".into()));
    }
    ensemble_average_fidelity(ch, lambda, g, None)
}

/// Multimode generalisation: inputs are product coherent states with independent Gaussian
/// amplitudes of inverse variance λ per mode; with `noise_mu` the channel sees |α + β⟩ where β
/// has inverse variance μ, while the target stays |gα⟩.
pub fn ensemble_average_fidelity(
    ch: &GaussianChannel,
    lambda: f64,
    g: f64,
    noise_mu: Option<f64>,
) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("ensemble width λ = {lambda}")));
    }
    if !g.is_finite() {
        return Err(Error::InvalidParameter(format!("gain {g}")));
    }
    let n = ch.shift.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let v = &ch.x * (&eye * 0.5) * ch.x.transpose() + &ch.y;
    let xg = &ch.x - &eye * g;
    let mut c = &xg * xg.transpose() / lambda;
    if let Some(mu) = noise_mu {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("noise width μ = {mu}")));
        }
        c += &ch.x * ch.x.transpose() / mu;
    }
    let a = v + &eye * 0.5 + c;
    Ok(gaussian_overlap(&a, &ch.shift)?.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vacuum_and_squeezer() {
        let v = make_vacuum(1).unwrap();
        assert_eq!(v.cov()[(0, 0)], 0.5);
        assert!(make_vacuum(0).is_err());
        assert_eq!(make_vacuum(3).unwrap().mean().len(), 6);
        let xi: f64 = 0.4;
        let s = apply_symplectic(&v, &SymplecticOp::squeezer(xi)).unwrap();
        assert_relative_eq!(s.cov()[(0, 0)], (-2.0 * xi).exp() / 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.cov()[(1, 1)], (2.0 * xi).exp() / 2.0, epsilon = 1e-14);
        let d = SymplecticOp::displacement(DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let dv = apply_symplectic(&v, &d).unwrap();
        assert_eq!(dv.mean()[0], 1.0);
        assert_eq!(dv.cov(), v.cov());
    }

    #[test]
    fn non_symplectic_rejected() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        assert!(matches!(
            SymplecticOp::new(s, DVector::zeros(2)),
            Err(Error::NotSymplectic(_))
        ));
    }

    #[test]
    fn tmsv_entries() {
        let t = two_mode_squeezed(0.5);
        assert_relative_eq!(t.cov()[(0, 0)], 1f64.cosh() / 2.0, epsilon = 1e-14);
        assert_relative_eq!(t.cov()[(0, 0)], 0.7715, epsilon = 1e-4);
        assert!(t.is_pure());
        let t0 = two_mode_squeezed(0.0);
        assert_eq!(t0, make_vacuum(2).unwrap());
        let via_op = apply_symplectic(&make_vacuum(2).unwrap(), &SymplecticOp::two_mode_squeezer(0.5)).unwrap();
        assert_relative_eq!((via_op.cov() - t.cov()).amax(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn channels_on_vacuum() {
        let v = make_vacuum(1).unwrap();
        assert_eq!(apply_channel(&v, &GaussianChannel::identity(1)).unwrap(), v);
        let lossy = apply_channel(&v, &GaussianChannel::pure_loss(1, 0.5).unwrap()).unwrap();
        assert_relative_eq!((lossy.cov() - v.cov()).amax(), 0.0, epsilon = 1e-15);
        let g: f64 = 1.7;
        let amp = apply_channel(&v, &GaussianChannel::amplifier(1, g).unwrap()).unwrap();
        assert_relative_eq!(amp.cov()[(0, 0)], g * g / 2.0 + (g * g - 1.0) / 2.0, epsilon = 1e-14);
        // A noiseless amplifier is not CP.
        assert!(GaussianChannel::new(
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::zeros(2, 2),
            DVector::zeros(2)
        )
        .is_err());
    }

    #[test]
    fn marginal_examples() {
        let v = make_vacuum(1).unwrap();
        let q = LinearObservable::quadrature(1, 0, 0.0);
        assert_eq!(marginal(&v, &q).unwrap(), (0.0, 0.5));
        let c = GaussianState::coherent(Complex64::new(1.0, 0.0));
        let (m, var) = marginal(&c, &q).unwrap();
        assert_relative_eq!(m, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(var, 0.5);
        assert!(LinearObservable::new(DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn amplifier_probe_nulling() {
        // Probe TMSV with tanh κ = 1/√(λ+1), ideal amplifier of gain g/(λ+1),
        // measured with κ₀ = artanh(√(λ+1)/g).
        for &(lambda, g) in &[(1.0f64, 2.0f64), (1.0, 3.0), (2.0, 3.0), (0.5, 2.5)] {
            let kappa = (1.0 / (lambda + 1.0).sqrt()).atanh();
            let probe = two_mode_squeezed(kappa);
            let ch = GaussianChannel::quantum_limited(1, g / (lambda + 1.0)).unwrap();
            let out = apply_channel_on(&probe, &ch, &[0]).unwrap();
            let k0 = ((lambda + 1.0).sqrt() / g).atanh();
            let q = LinearObservable::new(
                DVector::from_vec(vec![-k0.sinh(), 0.0, k0.cosh(), 0.0]),
                0.0,
            )
            .unwrap();
            let (m, var) = marginal(&out, &q).unwrap();
            assert_relative_eq!(m, 0.0);
            assert_relative_eq!(var, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn tmsv_nulling_example() {
        let kappa: f64 = 0.7;
        let t = two_mode_squeezed(kappa);
        let obs = LinearObservable::new(
            DVector::from_vec(vec![-kappa.sinh(), 0.0, kappa.cosh(), 0.0]),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(marginal(&t, &obs).unwrap().1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sampling_is_seeded() {
        let v = make_vacuum(1).unwrap();
        let q = LinearObservable::quadrature(1, 0, 0.0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| sample_homodyne(&v, &q, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_homodyne(&v, &q, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (0.5 / n as f64).sqrt());
        assert!((var - 0.5).abs() < 0.025);
    }

    #[test]
    fn fidelity_examples() {
        let v = make_vacuum(1).unwrap();
        assert_relative_eq!(pure_state_fidelity(&v, &v).unwrap(), 1.0);
        let alpha: f64 = 1.3;
        let c = GaussianState::coherent(Complex64::new(alpha, 0.0));
        assert_relative_eq!(pure_state_fidelity(&v, &c).unwrap(), (-alpha * alpha).exp(), epsilon = 1e-14);
        let nu = 3.0;
        let th = GaussianState::thermal((nu - 1.0) / 2.0).unwrap();
        assert_relative_eq!(pure_state_fidelity(&v, &th).unwrap(), 2.0 / (1.0 + nu), epsilon = 1e-14);
        assert!(matches!(pure_state_fidelity(&th, &v), Err(Error::NotPure(_))));
    }

    #[test]
    fn average_fidelity_examples() {
        let id = GaussianChannel::identity(1);
        assert_relative_eq!(coherent_average_fidelity(&id, 0.7, 1.0).unwrap(), 1.0);
        for &(lambda, g) in &[(1.0f64, 2.0f64), (1.0, 3.0), (0.5, 4.0)] {
            let opt = GaussianChannel::quantum_limited(1, g / (lambda + 1.0)).unwrap();
            assert_relative_eq!(
                coherent_average_fidelity(&opt, lambda, g).unwrap(),
                (lambda + 1.0) / g / g,
                epsilon = 1e-12
            );
        }
        let vac = GaussianChannel::replace_with_vacuum(1);
        assert_relative_eq!(coherent_average_fidelity(&vac, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-14);
        assert!(coherent_average_fidelity(&id, 0.0, 1.0).is_err());
    }

    #[test]
    fn inverse_and_compose() {
        let op = SymplecticOp::squeezer(0.3)
            .compose(&SymplecticOp::rotation(0.7))
            .unwrap()
            .compose(&SymplecticOp::displacement(DVector::from_vec(vec![0.2, -1.0])).unwrap())
            .unwrap();
        let id = op.compose(&op.inverse()).unwrap();
        assert_relative_eq!((id.s() - DMatrix::identity(2, 2)).amax(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(id.d().amax(), 0.0, epsilon = 1e-12);
    }
}
