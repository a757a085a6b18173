//! Continuous homodyne sampling from truncated Fock amplitudes.
//!
//! A single-mode marginal |Σ c_n φ_n(x)|² is sampled by rejection from the
//! mixture Σ |c_n| φ_n(x)², which dominates it after scaling by Σ |c_n|
//! (Cauchy–Schwarz). Each φ_n² is tabulated on a grid and drawn by inverting
//! its piecewise-linear CDF.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::Rng;

/// Fills `out[n] = φ_n(x)` for n < out.len(), the normalised Hermite functions.
pub fn hermite_functions(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

/// Envelope slack covering the piecewise-linear tabulation error.
pub(crate) const ENVELOPE_SLACK: f64 = 1.05;

pub(crate) struct LevelTable {
    x0: f64,
    h: f64,
    // pdf[n][g] normalised so the piecewise-linear density integrates to one.
    pdf: Vec<Vec<f64>>,
    cdf: Vec<Vec<f64>>,
}

impl LevelTable {
    fn build(cutoff: usize) -> Self {
        let tp = (2.0 * cutoff as f64 + 1.0).sqrt();
        let half = tp + 6.0;
        let h = 0.25 / tp;
        let g = (2.0 * half / h).ceil() as usize + 1;
        let x0 = -half;
        let mut pdf = vec![vec![0.0; g]; cutoff];
        let mut buf = vec![0.0; cutoff];
        for i in 0..g {
            hermite_functions(x0 + i as f64 * h, &mut buf);
            for n in 0..cutoff {
                pdf[n][i] = buf[n] * buf[n];
            }
        }
        let mut cdf = Vec::with_capacity(cutoff);
        for row in pdf.iter_mut() {
            let mut c = vec![0.0; g];
            for i in 1..g {
                c[i] = c[i - 1] + 0.5 * h * (row[i - 1] + row[i]);
            }
            let total = c[g - 1];
            row.iter_mut().for_each(|v| *v /= total);
            c.iter_mut().for_each(|v| *v /= total);
            cdf.push(c);
        }
        Self { x0, h, pdf, cdf }
    }

    fn density(&self, n: usize, x: f64) -> f64 {
        let t = (x - self.x0) / self.h;
        if t < 0.0 {
            return 0.0;
        }
        let i = t.floor() as usize;
        let row = &self.pdf[n];
        if i + 1 >= row.len() {
            return 0.0;
        }
        let f = t - i as f64;
        row[i] * (1.0 - f) + row[i + 1] * f
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> f64 {
        let c = &self.cdf[n];
        let p = &self.pdf[n];
        let u: f64 = rng.gen::<f64>();
        // First index with c[i] > u.
        let i = c.partition_point(|&v| v <= u).clamp(1, c.len() - 1);
        let (f0, f1) = (p[i - 1], p[i]);
        let target = (u - c[i - 1]) / self.h;
        // Solve f0 t + (f1 - f0) t²/2 = target on [0, 1].
        let a = 0.5 * (f1 - f0);
        let t = if a.abs() < 1e-14 * f0.max(f1).max(1e-300) {
            if f0 > 0.0 { target / f0 } else { 0.5 }
        } else {
            let disc = (f0 * f0 + 4.0 * a * target).max(0.0);
            2.0 * target / (f0 + disc.sqrt())
        };
        self.x0 + (i as f64 - 1.0 + t.clamp(0.0, 1.0)) * self.h
    }
}

pub(crate) fn level_table(cutoff: usize) -> Arc<LevelTable> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<LevelTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("level table cache poisoned");
    guard
        .entry(cutoff)
        .or_insert_with(|| Arc::new(LevelTable::build(cutoff)))
        .clone()
}

/// Samples x from Σ_r |Σ_n b[n, r] φ_n(x)|², with `b` stored row-major as D × cols.
///
/// This is the q-quadrature marginal of the leading mode when `b` holds the
/// remaining modes (or Schmidt components) in its columns. The norm of `b` need not be one.
pub(crate) fn sample_leading_mode<R: Rng + ?Sized>(
    b: &[Complex64],
    cutoff: usize,
    cols: usize,
    rng: &mut R,
) -> f64 {
    let table = level_table(cutoff);
    // Envelope weights: p(x) ≤ Σ_n w_n φ_n(x)² with w_n = Σ_r S_r |b[n,r]|, S_r = Σ_n |b[n,r]|.
    let mut s = vec![0.0; cols];
    for n in 0..cutoff {
        for r in 0..cols {
            s[r] += b[n * cols + r].norm();
        }
    }
    let mut w = vec![0.0; cutoff];
    for n in 0..cutoff {
        w[n] = (0..cols).map(|r| s[r] * b[n * cols + r].norm()).sum();
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let mut phi = vec![0.0; cutoff];
    let mut amp = vec![Complex64::new(0.0, 0.0); cols];
    loop {
        let mut u = rng.gen::<f64>() * total;
        let mut level = cutoff - 1;
        for (n, &wn) in w.iter().enumerate() {
            if u < wn {
                level = n;
                break;
            }
            u -= wn;
        }
        if w[level] == 0.0 {
            continue;
        }
        let x = table.sample(level, rng);
        hermite_functions(x, &mut phi);
        amp.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for n in 0..cutoff {
            if phi[n] == 0.0 {
                continue;
            }
            let row = &b[n * cols..(n + 1) * cols];
            for r in 0..cols {
                amp[r] += row[r] * phi[n];
            }
        }
        let p: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
        let envelope: f64 = ENVELOPE_SLACK
            * (0..cutoff)
                .filter(|&n| w[n] > 0.0)
                .map(|n| w[n] * table.density(n, x))
                .sum::<f64>();
        if envelope <= 0.0 {
            continue;
        }
        if rng.gen::<f64>() * envelope <= p {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hermite_orthonormal() {
        let d = 12;
        let h = 0.01;
        let mut buf = vec![0.0; d];
        let mut gram = vec![vec![0.0; d]; d];
        let mut x = -12.0;
        while x <= 12.0 {
            hermite_functions(x, &mut buf);
            for i in 0..d {
                for j in 0..d {
                    gram[i][j] += h * buf[i] * buf[j];
                }
            }
            x += h;
        }
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] - want).abs() < 1e-6, "{i} {j} {}", gram[i][j]);
            }
        }
    }

    #[test]
    fn number_state_second_moment() {
        // ⟨n|q²|n⟩ = n + 1/2.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[0usize, 1, 3, 10] {
            let cutoff = 16;
            let mut b = vec![Complex64::new(0.0, 0.0); cutoff];
            b[n] = Complex64::new(1.0, 0.0);
            let m = 40_000;
            let s2: f64 = (0..m)
                .map(|_| sample_leading_mode(&b, cutoff, 1, &mut rng).powi(2))
                .sum::<f64>()
                / m as f64;
            let want = n as f64 + 0.5;
            let nf = n as f64;
            let sd = ((nf * nf + nf + 1.0) / 2.0).sqrt();
            assert!((s2 - want).abs() < 5.0 * sd / (m as f64).sqrt(), "n={n} got {s2}");
        }
    }
}
