//! Receptive fields of conv stacks: the exact recurrence, an empirical
//! gradient probe, and a planning report.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{Conv3dSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-layer exact receptive field `(t, h, w)`:
/// `RF_l = RF_{l−1} + (k_l − 1)·∏_{j<l} s_j`, `RF_0 = 1`.
pub fn receptive_field(specs: &[Conv3dSpec]) -> Result<Vec<[usize; 3]>> {
    if specs.is_empty() {
        return Err(Error::Config("receptive field of an empty stack".into()));
    }
    let mut rf = [1usize; 3];
    let mut jump = [1usize; 3];
    Ok(specs
        .iter()
        .map(|s| {
            for a in 0..3 {
                rf[a] += (s.kernel[a] - 1) * jump[a];
                jump[a] *= s.stride[a];
            }
            rf
        })
        .collect())
}

/// Nonzero extent `(t, h, w)` of the input gradient of the central output unit.
pub fn empirical_rf(
    net: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    probe: [usize; 5],
) -> Result<[usize; 3]> {
    empirical_rf_at(net, probe, None)
}

/// As [`empirical_rf`], probing output unit `(t, h, w)` of batch 0, channel 0.
pub fn empirical_rf_at(
    net: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    probe: [usize; 5],
    unit: Option<[usize; 3]>,
) -> Result<[usize; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let input = Tensor::from_fn(&probe, |_| rng.gen_range(0.0..1.0));
    let mut g = Graph::new();
    let x = g.input(input);
    let y = net(&mut g, x)?;
    let ys = g.shape(y).to_vec();
    if ys.len() != 5 {
        return Err(Error::Shape(format!("probe output {ys:?} is not 5-D")));
    }
    let [ut, uh, uw] = unit.unwrap_or([ys[1] / 2, ys[3] / 2, ys[4] / 2]);
    let mut sel = g.narrow(y, 0, 0, 1)?;
    sel = g.narrow(sel, 1, ut, 1)?;
    sel = g.narrow(sel, 2, 0, 1)?;
    sel = g.narrow(sel, 3, uh, 1)?;
    sel = g.narrow(sel, 4, uw, 1)?;
    let loss = g.mean(sel);
    let grads = g.backward(loss)?;
    let dx = grads
        .get(x)
        .ok_or_else(|| Error::Shape("output does not depend on the probe".into()))?;

    let [nb, nt, nc, nh, nw] = probe;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for b in 0..nb {
        for t in 0..nt {
            for c in 0..nc {
                for h in 0..nh {
                    for w in 0..nw {
                        let i = (((b * nt + t) * nc + c) * nh + h) * nw + w;
                        if dx.data()[i] != 0.0 {
                            for (a, p) in [t, h, w].into_iter().enumerate() {
                                lo[a] = lo[a].min(p);
                                hi[a] = hi[a].max(p);
                            }
                        }
                    }
                }
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::Shape("zero gradient at the probe".into()));
    }
    let dims = [nt, nh, nw];
    for a in 0..3 {
        if dims[a] > 1 && (lo[a] == 0 || hi[a] == dims[a] - 1) {
            return Err(Error::Shape(format!(
                "probe too small: receptive field reaches the border on axis {a} ({}..={} of {})",
                lo[a], hi[a], dims[a]
            )));
        }
    }
    Ok([0, 1, 2].map(|a| hi[a] - lo[a] + 1))
}

#[derive(Clone, Debug, Serialize)]
pub struct RfLayer {
    pub kernel: usize,
    pub stride: usize,
    pub rf: usize,
}

/// Exact per-layer receptive field along one spatial axis, plus the
/// `k·∏s` rule-of-thumb figure and an optional target check.
#[derive(Clone, Debug, Serialize)]
pub struct RfPlan {
    pub layers: Vec<RfLayer>,
    pub exact: usize,
    pub heuristic: usize,
    pub target: Option<usize>,
    pub pass: Option<bool>,
}

pub fn rf_plan(kernels: &[usize], strides: &[usize], target: Option<usize>) -> Result<RfPlan> {
    if kernels.is_empty() || kernels.len() != strides.len() {
        return Err(Error::Config(format!(
            "need one stride per kernel, got {} kernels and {} strides",
            kernels.len(),
            strides.len()
        )));
    }
    let specs: Vec<Conv3dSpec> = kernels
        .iter()
        .zip(strides)
        .map(|(&k, &s)| Conv3dSpec::new(1, 1, [1, k, 1], [1, s, 1]))
        .collect();
    for s in &specs {
        s.validate()?;
    }
    let rfs = receptive_field(&specs)?;
    let layers: Vec<RfLayer> = kernels
        .iter()
        .zip(strides)
        .zip(&rfs)
        .map(|((&kernel, &stride), rf)| RfLayer {
            kernel,
            stride,
            rf: rf[1],
        })
        .collect();
    let exact = layers.last().unwrap().rf;
    let heuristic = kernels.last().unwrap() * strides.iter().product::<usize>();
    Ok(RfPlan {
        layers,
        exact,
        heuristic,
        target,
        pass: target.map(|t| exact >= t),
    })
}

impl fmt::Display for RfPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>6} {:>6} {:>8}", "layer", "kernel", "stride", "exact_rf")?;
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(f, "{:>5} {:>6} {:>6} {:>8}", i + 1, l.kernel, l.stride, l.rf)?;
        }
        writeln!(f, "exact receptive field: {}", self.exact)?;
        writeln!(
            f,
            "k*prod(stride) = {} (heuristic only, not the exact receptive field)",
            self.heuristic
        )?;
        if let (Some(t), Some(pass)) = (self.target, self.pass) {
            writeln!(
                f,
                "target {}: {} (exact {} {} {})",
                t,
                if pass { "PASS" } else { "FAIL" },
                self.exact,
                if pass { ">=" } else { "<" },
                t
            )?;
        }
        Ok(())
    }
}
