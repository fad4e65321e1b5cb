//! Central finite-difference verification of graph gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::graph::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

// Central differences in f64 carry about 1e-10 of rounding noise at eps=1e-6;
// gradients whose norm is below this are compared in absolute terms.
const NOISE_FLOOR: f64 = 1e-8;

/// A scalar function of tensors, expressible at any precision.
pub trait GraphFn {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst per-input `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`;
    /// the plain difference when both norms are below the noise floor.
    pub max_rel_err: f64,
    pub coords: usize,
}

fn eval_f64(f: &impl GraphFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f.build(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compare gradients computed in `T` with `f64` central differences.
///
/// At most `max_coords` coordinates per input are probed, chosen by `seed`.
pub fn check_gradients<T: Scalar>(
    f: &impl GraphFn,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.cast())).collect();
    let out = f.build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        let analytic = grads.get(vars[k]);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = eval_f64(f, &probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = eval_f64(f, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.map_or(0.0, |t| t.data()[i].as_f64());
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        coords += picks.len();
        let denom = na.sqrt().max(nn.sqrt());
        let rel = if denom < NOISE_FLOOR { diff.sqrt() } else { diff.sqrt() / denom };
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        max_rel_err: worst,
        coords,
    })
}
