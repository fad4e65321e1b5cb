//! Spectral normalization by persistent power iteration.

use rand::Rng;

use crate::diffcore::graph::bilinear;
use crate::tensor::{Scalar, Tensor};

/// Below this estimate the weight is left unnormalized.
pub const SIGMA_EPS: f64 = 1e-12;

/// Singular-vector estimates carried across steps.
///
/// `v` is the right vector from the latest step; it is empty until the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> SpectralState<T> {
    pub fn new<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Self {
        let mut u: Vec<T> = (0..rows).map(|_| T::of(rng.gen_range(-1.0..=1.0))).collect();
        normalize(&mut u);
        Self { u, v: Vec::new() }
    }
}

fn normalize<T: Scalar>(x: &mut [T]) -> T {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n > T::of(SIGMA_EPS) {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// One power-iteration step on `w` viewed as `(rows × rest)`.
///
/// Updates `state` and returns `(u, v, σ̂)`, or `None` when `σ̂ < ε`.
pub fn power_iterate<T: Scalar>(
    w: &Tensor<T>,
    state: &mut SpectralState<T>,
) -> Option<(Vec<T>, Vec<T>, T)> {
    let rows = state.u.len();
    let cols = w.len() / rows;
    let wd = w.data();
    let mut v = vec![T::zero(); cols];
    for (i, &ui) in state.u.iter().enumerate() {
        for (vj, &wij) in v.iter_mut().zip(&wd[i * cols..(i + 1) * cols]) {
            *vj += wij * ui;
        }
    }
    normalize(&mut v);
    let mut u: Vec<T> = (0..rows)
        .map(|i| {
            wd[i * cols..(i + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect();
    normalize(&mut u);
    let sigma = bilinear(wd, &u, &v);
    state.u.clone_from(&u);
    state.v.clone_from(&v);
    (sigma.as_f64() >= SIGMA_EPS).then_some((u, v, sigma))
}

/// `w / σ̂(w)` after one power-iteration step, or `w` unchanged for a (near-)zero matrix.
pub fn spectral_normalize<T: Scalar>(w: &Tensor<T>, state: &mut SpectralState<T>) -> Tensor<T> {
    match power_iterate(w, state) {
        Some((_, _, sigma)) => w.map(|x| x / sigma),
        None => w.clone(),
    }
}

/// Largest singular value by `iters` fresh power-iteration steps.
pub fn estimate_sigma<T: Scalar>(w: &Tensor<T>, rows: usize, iters: usize) -> f64 {
    let mut st = SpectralState {
        u: vec![T::one() / T::of((rows as f64).sqrt()); rows],
        v: Vec::new(),
    };
    let mut sigma = 0.0;
    for _ in 0..iters {
        sigma = power_iterate(w, &mut st).map_or(0.0, |(_, _, s)| s.as_f64());
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_converges_to_unit_top_singular_value() {
        let w = Tensor::from_vec(&[2, 2], vec![3.0f64, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SpectralState {
            u: vec![0.6, 0.8],
            v: Vec::new(),
        };
        for _ in 0..60 {
            power_iterate(&w, &mut st);
        }
        let n = spectral_normalize(&w, &mut st);
        let expect = [1.0, 0.0, 0.0, 1.0 / 3.0];
        for (a, b) in n.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", n.data());
        }
    }

    #[test]
    fn identity_is_unchanged() {
        let w = Tensor::from_vec(&[3, 3], vec![1.0f64, 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = SpectralState::new(3, &mut rng);
        let n = spectral_normalize(&w, &mut st);
        assert!(n.max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn zero_matrix_is_returned_as_is() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = SpectralState::new(2, &mut rng);
        assert!(power_iterate(&w, &mut st).is_none());
        assert_eq!(spectral_normalize(&w, &mut st), w);
    }

    #[test]
    fn normalized_random_matrices_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let rows = 2 + trial % 5;
            let cols = 3 + trial;
            let w = Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-1.0..1.0f64));
            let mut st = SpectralState::new(rows, &mut rng);
            // persistent state, as across training steps
            for _ in 0..20 {
                power_iterate(&w, &mut st);
            }
            let n = spectral_normalize(&w, &mut st);
            let sigma = estimate_sigma(&n, rows, 500);
            assert!((0.9..=1.1).contains(&sigma), "trial {trial}: {sigma}");
        }
    }
}
