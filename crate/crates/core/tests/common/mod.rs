#![allow(dead_code)]

use cvverify::phasespace::{apply_symplectic, GaussianState, SymplecticOp};
use nalgebra::DVector;
use rand::Rng;

/// Random k-mode symplectic built from local squeezers and rotations,
/// two-mode squeezers and CZ gates.
pub fn random_symplectic<R: Rng>(k: usize, rng: &mut R) -> SymplecticOp {
    let mut op = SymplecticOp::identity(k);
    for _ in 0..2 {
        for j in 0..k {
            let local = SymplecticOp::rotation(rng.gen_range(0.0..std::f64::consts::TAU))
                .compose(&SymplecticOp::squeezer(rng.gen_range(-0.6..0.6)))
                .unwrap();
            op = local.embed(k, &[j]).unwrap().compose(&op).unwrap();
        }
        for a in 0..k {
            for b in a + 1..k {
                let g = if rng.gen::<bool>() {
                    SymplecticOp::two_mode_squeezer(rng.gen_range(-0.4..0.4)).embed(k, &[a, b]).unwrap()
                } else {
                    SymplecticOp::controlled_phase(k, &[a, b]).unwrap()
                };
                op = g.compose(&op).unwrap();
            }
        }
    }
    let d = DVector::from_fn(2 * k, |_, _| rng.gen_range(-1.0..1.0));
    SymplecticOp::displacement(d).unwrap().compose(&op).unwrap()
}

/// Random Gaussian state; mixed unless `pure`.
pub fn random_state<R: Rng>(k: usize, pure: bool, rng: &mut R) -> GaussianState {
    let mut base = GaussianState::thermal(if pure { 0.0 } else { rng.gen_range(0.0..1.0) }).unwrap();
    for _ in 1..k {
        base = base.tensor(&GaussianState::thermal(if pure { 0.0 } else { rng.gen_range(0.0..1.0) }).unwrap());
    }
    apply_symplectic(&base, &random_symplectic(k, rng)).unwrap()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}
