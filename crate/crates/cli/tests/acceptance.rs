//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness) so the summary lines are always
//! printed. Exits nonzero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use in2out_core::diffcore::gradcheck::{check_gradients, GraphFn};
use in2out_core::diffcore::{Bound, Conv3dSpec, Graph, Var};
use in2out_core::discriminator::{
    empirical_rf, receptive_field, rf_plan, Design, DesignKind, DiscConfig, Discriminator,
};
use in2out_core::generator::{GeneratorConfig, ToyGenerator, VideoGenerator, LOCAL_FRAMES};
use in2out_core::losses::{
    adv_gen_loss, disc_loss_global, eval_on, outpainting_loss, rec_loss, total_gen_loss,
    DiscFeatures, GenComponents, LossWeights,
};
use in2out_core::masking::{band_width, OutBands};
use in2out_core::metrics::{frechet_distance, psnr, psnr_band, ssim, FeatureStats, PSNR_CAP};
use in2out_core::synthdata::{generate, SynthSpec};
use in2out_core::tensorio::load_fixture;
use in2out_core::trainer::{
    fit, moving_average, predict_clips, zero_fill, Dataset, TrainConfig, TrainState, LOG_FILE,
};
use in2out_core::{Result, Scalar, Space, Tensor, VideoTensor};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

// ---------------------------------------------------------------------------
// 1. gradient suite

const GRAD_TOL: f64 = 1e-5;
const FD_EPS: f64 = 1e-6;
// Whole networks have parameter gradients near 1e-6 against O(1) losses, so
// rounding noise at FD_EPS would swamp them; a wider step is still far inside
// the smooth region between activation kinks.
const FD_EPS_NET: f64 = 1e-5;

/// Every primitive in one scalar: conv → leaky → sigmoid/abs/relu branches,
/// add/sub/affine, narrow, select_last, upsample, weighted_sum.
struct OpsFn {
    spec: Conv3dSpec,
    cols: Vec<usize>,
}

impl GraphFn for OpsFn {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let (x, w, b, y) = (v[0], v[1], v[2], v[3]);
        let c = g.conv3d(x, w, Some(b), self.spec)?;
        let l = g.leaky_relu(c, T::of(0.2));
        let s = g.sigmoid(l);
        let a = g.abs(c);
        let r = g.relu(c);
        let sa = g.add(s, a)?;
        let d = g.sub(sa, r)?;
        let d = g.affine(d, T::of(1.5), T::of(-0.25));
        let t = g.shape(d)[1];
        let n = g.narrow(d, 1, 0, t.div_ceil(2))?;
        let sel = g.select_last(n, self.cols.clone())?;
        let up = g.upsample(sel, 2, 2)?;
        let m1 = g.mean(up);
        let yy = g.sigmoid(y);
        let m2 = g.mean(yy);
        g.weighted_sum(&[(m1, T::of(0.7)), (m2, T::of(-1.3))])
    }
}

/// Spectral scaling with fixed singular-vector estimates.
struct SpectralFn {
    u: Vec<f64>,
    v: Vec<f64>,
    probe: Tensor<f64>,
}

impl GraphFn for SpectralFn {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let cast = |x: &[f64]| x.iter().map(|&a| T::of(a)).collect::<Vec<T>>();
        let w = g.spectral_scale(v[0], cast(&self.u), cast(&self.v))?;
        let p = g.constant(self.probe.cast());
        let prod = g.sub(w, p)?;
        let sq = g.sigmoid(prod);
        Ok(g.mean(sq))
    }
}

/// Full outpainting loss (or the global hinge loss) through a spectrally
/// normalized discriminator; inputs are real, fake, then every D parameter.
struct DiscLossFn {
    disc: Discriminator<f64>,
    ratio: f64,
    global_only: bool,
}

impl GraphFn for DiscLossFn {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let d = self.disc.cast::<T>();
        let b = d.bind_vars(g, Bound::from_vars(v[2..].to_vec()))?;
        let x = d.features(g, &b, v[0])?;
        let z = d.features(g, &b, v[1])?;
        if self.global_only {
            disc_loss_global(g, x.global, z.global)
        } else {
            Ok(outpainting_loss(g, &x, &z, self.ratio, 0.5, 0.5)?.total)
        }
    }
}

/// Total generator loss: toy generator on a masked clip, reconstruction over
/// the local frames and the adversarial term through a frozen discriminator.
/// Inputs are the masked clip, the target, then every generator parameter.
struct GenLossFn {
    gen_cfg: GeneratorConfig,
    disc: Discriminator<f64>,
    ratio: f64,
}

impl GraphFn for GenLossFn {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = ToyGenerator::<T>::new(self.gen_cfg.clone(), &mut rng)?;
        let p = Bound::from_vars(v[2..].to_vec());
        let t = g.shape(v[0])[1];
        let full = gen.forward(g, &p, v[0], &(0..t).collect::<Vec<_>>())?;
        let pred = g.narrow(full, 1, 0, t.min(LOCAL_FRAMES))?;
        let (hole, valid) = rec_loss(g, pred, v[1], self.ratio)?;
        let d = self.disc.cast::<T>();
        let b = d.bind(g, false)?;
        let logits = d.features(g, &b, pred)?.global;
        let adv = adv_gen_loss(g, logits, false);
        let c = GenComponents {
            rec_hole: hole,
            rec_valid: valid,
            adv: Some(adv),
            flow: None,
        };
        total_gen_loss(g, &c, &LossWeights::e2fgvi())
    }
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut shapes = 0;
    let mut coords = 0;
    for case in 0..24u64 {
        let b = rng.gen_range(1..=2);
        let t = rng.gen_range(1..=3);
        let cin = rng.gen_range(1..=3);
        let h = rng.gen_range(3..=6);
        let w = rng.gen_range(4..=8);
        let cout = rng.gen_range(1..=3);
        let k = [rng.gen_range(1..=t.min(3)), rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let stride = [1, rng.gen_range(1..=2), rng.gen_range(1..=2)];
        let spec = Conv3dSpec {
            in_ch: cin,
            out_ch: cout,
            kernel: k,
            stride,
            padding: [k[0] / 2, k[1] / 2, k[2] / 2],
        };
        let od = ok(spec.out_dims([t, h, w]))?;
        let cols: Vec<usize> = (0..od[2]).filter(|_| rng.gen_bool(0.7)).collect();
        let cols = if cols.is_empty() { vec![0] } else { cols };
        let f = OpsFn { spec, cols };
        let inputs = vec![
            rand_tensor(&mut rng, &[b, t, cin, h, w], -1.0, 1.0),
            rand_tensor(&mut rng, &spec.weight_shape(), -1.0, 1.0),
            rand_tensor(&mut rng, &[cout], -0.5, 0.5),
            rand_tensor(&mut rng, &[b, h, w], -2.0, 2.0),
        ];
        let r = ok(check_gradients::<f64>(&f, &inputs, FD_EPS, 40, case))?;
        ensure!(r.max_rel_err <= GRAD_TOL, "ops case {case} ({:?}): rel err {:.2e}", [b, t, cin, h, w], r.max_rel_err);
        worst = worst.max(r.max_rel_err);
        coords += r.coords;
        shapes += 1;

        let rows = rng.gen_range(2..=5);
        let colsn = rng.gen_range(2..=6);
        let wt = rand_tensor(&mut rng, &[rows, colsn], -1.0, 1.0);
        let mut st = in2out_core::diffcore::SpectralState::new(rows, &mut rng);
        for _ in 0..3 {
            in2out_core::diffcore::power_iterate(&wt, &mut st);
        }
        let f = SpectralFn {
            u: st.u.clone(),
            v: st.v.clone(),
            probe: rand_tensor(&mut rng, &[rows, colsn], -0.5, 0.5),
        };
        let r = ok(check_gradients::<f64>(&f, &[wt], FD_EPS, 40, case))?;
        ensure!(r.max_rel_err <= GRAD_TOL, "spectral case {case}: rel err {:.2e}", r.max_rel_err);
        worst = worst.max(r.max_rel_err);
        coords += r.coords;
    }

    for (case, global_only) in [(0u64, false), (1, true), (2, false)] {
        let mut drng = ChaCha8Rng::seed_from_u64(200 + case);
        let mut disc = ok(Discriminator::<f64>::new(DiscConfig::small(3), "d", &mut drng))?;
        // Spectral scaling only applies once a power-iteration step has run.
        if case != 1 {
            disc.refresh_spectral();
        }
        let shape = [1, 3, 3, 32, 64];
        // Wide inputs lift deep-layer gradients well above the rounding noise
        // of a loss dominated by the hinge constants.
        let mut inputs = vec![
            rand_tensor(&mut rng, &shape, -2.0, 2.0),
            rand_tensor(&mut rng, &shape, -2.0, 2.0),
        ];
        inputs.extend(disc.params().iter().map(|p| p.value.clone()));
        let f = DiscLossFn {
            disc,
            ratio: 0.5,
            global_only,
        };
        let r = ok(check_gradients::<f64>(&f, &inputs, FD_EPS_NET, 25, case))?;
        ensure!(r.max_rel_err <= GRAD_TOL, "discriminator loss case {case}: rel err {:.2e}", r.max_rel_err);
        worst = worst.max(r.max_rel_err);
        coords += r.coords;
        shapes += 1;
    }

    let gen_cfg = GeneratorConfig {
        channels: [3, 4, 4],
        res_blocks: 1,
        ..GeneratorConfig::default()
    };
    let mut grng = ChaCha8Rng::seed_from_u64(300);
    let gen = ok(ToyGenerator::<f64>::new(gen_cfg.clone(), &mut grng))?;
    let disc = ok(Discriminator::<f64>::new(DiscConfig::small(2), "d", &mut grng))?;
    let mut inputs = vec![
        rand_tensor(&mut rng, &[1, 6, 4, 16, 32], 0.0, 1.0),
        rand_tensor(&mut rng, &[1, 5, 3, 16, 32], 0.0, 1.0),
    ];
    inputs.extend(gen.params().iter().map(|p| p.value.clone()));
    let f = GenLossFn {
        gen_cfg,
        disc,
        ratio: 0.5,
    };
    let r = ok(check_gradients::<f64>(&f, &inputs, FD_EPS_NET, 20, 9))?;
    ensure!(r.max_rel_err <= GRAD_TOL, "generator loss: rel err {:.2e}", r.max_rel_err);
    worst = worst.max(r.max_rel_err);
    coords += r.coords;
    shapes += 1;

    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "gradient suite took {secs:.0}s");
    Ok(format!(
        "{shapes} graph shapes, {coords} probed coordinates, worst rel err {worst:.1e} (tol {GRAD_TOL:.0e}), {secs:.1}s"
    ))
}

// ---------------------------------------------------------------------------
// 2. band geometry

fn criterion_bands() -> Outcome {
    ensure!(ok(band_width(0.25, 432))? == 54, "band at m=1/4, W=432 is not 54");
    let bands = ok(OutBands::for_width(0.25, 432))?;
    ensure!(bands.left() == (0..54) && bands.right() == (378..432), "band columns {:?} {:?}", bands.left(), bands.right());

    // Rational ratios p/q make the expected band an exact integer division.
    let mut runner = TestRunner::new(PtConfig {
        cases: 200,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..PtConfig::default()
    });
    let strategy = (2u64..=64, 8usize..=2048)
        .prop_flat_map(|(q, w)| (1..q, Just(q), Just(w)));
    let result = runner.run(&strategy, |(p, q, w)| {
        let m = p as f64 / q as f64;
        let expected = (p as usize * w) / (2 * q as usize);
        match band_width(m, w) {
            Ok(band) => {
                prop_assert_eq!(band, expected);
                let b = OutBands::for_width(m, w).unwrap();
                let mut seen = vec![0u8; w];
                for c in b.left().chain(b.center()).chain(b.right()) {
                    seen[c] += 1;
                }
                prop_assert!(seen.iter().all(|&s| s == 1), "columns not partitioned");
                prop_assert_eq!(b.left().len(), expected);
                prop_assert_eq!(b.right().len(), expected);
                prop_assert_eq!(b.columns().len() + b.center_columns().len(), w);
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok("54 columns per side at W=432; 200 random (m, W) pairs match floor(mW/2) and partition exactly".into())
}

// ---------------------------------------------------------------------------
// 3. receptive fields

fn net_fn(
    disc: &Discriminator<f64>,
    with_fcm: bool,
) -> impl Fn(&mut Graph<f64>, Var) -> Result<Var> + '_ {
    move |g, x| {
        let b = disc.bind(g, false)?;
        let local = disc.fem_forward(g, &b, x)?;
        if with_fcm {
            disc.fcm_forward(g, &b, local)
        } else {
            Ok(local)
        }
    }
}

/// Empirical `(t, h, w)` extent from two flat probes, one per spatial axis.
fn measured_rf(
    net: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    c: usize,
    t: usize,
    span: usize,
) -> std::result::Result<[usize; 3], String> {
    let horiz = ok(empirical_rf(&net, [1, t, c, 1, span]))?;
    let vert = ok(empirical_rf(&net, [1, t, c, span, 1]))?;
    Ok([horiz[0], vert[1], horiz[2]])
}

fn criterion_rf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let disc = ok(Discriminator::<f64>::new(DiscConfig::default(), "d", &mut rng))?;
    let cfg = disc.config().clone();
    let fem_exact = ok(receptive_field(&cfg.fem_layers))?;
    let all_exact = ok(receptive_field(&cfg.all_layers()))?;
    let fem_rf = *fem_exact.last().unwrap();
    let all_rf = *all_exact.last().unwrap();
    ensure!(fem_rf[2] == 43 && all_rf[2] == 379, "closed form gives {fem_rf:?} / {all_rf:?}");
    let fem_emp = measured_rf(net_fn(&disc, false), 3, 9, 96)?;
    ensure!(fem_emp == fem_rf, "FEM empirical {fem_emp:?} vs closed form {fem_rf:?}");
    let all_emp = measured_rf(net_fn(&disc, true), 3, 15, 512)?;
    ensure!(all_emp == all_rf, "FEM+FCM empirical {all_emp:?} vs closed form {all_rf:?}");

    for stack in 0..10 {
        let layers = rng.gen_range(1..=4);
        let mut specs = Vec::new();
        let mut ch = 1;
        for _ in 0..layers {
            let out = rng.gen_range(1..=2);
            let k = rng.gen_range(1..=7);
            let s = rng.gen_range(1..=3);
            specs.push(Conv3dSpec {
                in_ch: ch,
                out_ch: out,
                kernel: [1, 1, k],
                stride: [1, 1, s],
                padding: [0, 0, k / 2],
            });
            ch = out;
        }
        let exact = ok(receptive_field(&specs))?.last().unwrap()[2];
        let weights: Vec<Tensor<f64>> = specs
            .iter()
            .map(|s| rand_tensor(&mut rng, &s.weight_shape(), 0.1, 1.0))
            .collect();
        let net = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
            let mut h = x;
            for (i, (s, w)) in specs.iter().zip(&weights).enumerate() {
                if i > 0 {
                    h = g.leaky_relu(h, 0.2);
                }
                let wv = g.constant(w.clone());
                h = g.conv3d(h, wv, None, *s)?;
            }
            Ok(h)
        };
        let emp = ok(empirical_rf(net, [1, 1, 1, 1, 4 * exact + 64]))?;
        ensure!(emp[2] == exact, "random stack {stack} ({specs:?}): empirical {} vs {exact}", emp[2]);
    }

    let fem_plan = ok(rf_plan(&[7, 7, 7], &[2, 2, 2], Some(54)))?.to_string();
    let all_plan = ok(rf_plan(&[7; 6], &[2; 6], None))?.to_string();
    ensure!(
        fem_plan.contains("= 56 (heuristic only") && all_plan.contains("= 448 (heuristic only"),
        "heuristic values not flagged:\n{fem_plan}\n{all_plan}"
    );
    ensure!(fem_plan.contains("exact receptive field: 43") && fem_plan.contains("FAIL"), "plan:\n{fem_plan}");
    ensure!(all_plan.contains("exact receptive field: 379"), "plan:\n{all_plan}");
    Ok(format!(
        "FEM {fem_emp:?}, FEM+FCM {all_emp:?} match closed form; 10 random stacks match; 56/448 reported as heuristic"
    ))
}

// ---------------------------------------------------------------------------
// 4. gradient locality

fn criterion_locality() -> Outcome {
    let (t, h, w, ratio) = (3, 32, 432, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let design = ok(Design::<f64>::build(DesignKind::Hierarchical, &DiscConfig::default(), 0.5, 0.5, false, &mut rng))?;
    let disc = &design.discriminators()[0];
    let fem_rf = ok(receptive_field(&disc.config().fem_layers))?.last().unwrap()[2];

    let mut g = Graph::<f64>::new();
    let b = ok(disc.bind(&mut g, false))?;
    let fake = g.input(rand_tensor(&mut rng, &[1, t, 3, h, w], 0.0, 1.0));
    let real = g.constant(rand_tensor(&mut rng, &[1, t, 3, h, w], 0.0, 1.0));
    let x = ok(disc.features(&mut g, &b, real))?;
    let z = ok(disc.features(&mut g, &b, fake))?;
    let terms = ok(outpainting_loss(&mut g, &x, &z, ratio, 0.5, 0.5))?;
    let grads = ok(g.backward(terms.fake_local))?;
    let dz = grads.get(fake).ok_or("no gradient reaches the generated video")?;

    let bands = ok(OutBands::for_width(ratio, w))?;
    let far = bands.far_columns(fem_rf);
    let (mut far_max, mut band_max) = (0.0f64, 0.0f64);
    for (i, &v) in dz.data().iter().enumerate() {
        let col = i % w;
        if far.contains(&col) {
            far_max = far_max.max(v.abs());
        }
        if bands.contains(col) {
            band_max = band_max.max(v.abs());
        }
    }
    ensure!(far_max <= 1e-12, "gradient {far_max:e} at columns {far:?}");
    ensure!(band_max > 0.0, "no gradient inside the bands");
    Ok(format!(
        "max |dL/dpixel| = {far_max:e} on columns {}..{} (>= {fem_rf} px from bands), {band_max:.2e} inside bands",
        far.start, far.end
    ))
}

// ---------------------------------------------------------------------------
// 5. saturated hinge

fn criterion_saturation() -> Outcome {
    let mut cfg = DiscConfig::default();
    cfg.spectral_norm = false;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut design = ok(Design::<f64>::build(DesignKind::Hierarchical, &cfg, 0.5, 0.5, false, &mut rng))?;
    let n_fem = cfg.fem_layers.len();
    let n_all = n_fem + cfg.fcm_layers.len();
    {
        let params = design.discriminators_mut()[0].params_mut();
        for (i, p) in params.iter_mut().enumerate() {
            let layer = i / 2;
            let fill = if i % 2 == 0 {
                0.05
            } else if layer == n_fem - 1 || layer == n_all - 1 {
                -1.0
            } else {
                0.0
            };
            p.value.data_mut().iter_mut().for_each(|v| *v = fill);
        }
    }
    let shape = [1, 3, 3, 56, 96];
    let mut g = Graph::<f64>::new();
    let b = ok(design.bind(&mut g, true))?;
    let real = g.constant(Tensor::full(&shape, 1.0));
    let fake = g.constant(Tensor::zeros(&shape));
    let disc = &design.discriminators()[0];
    let x = ok(disc.features(&mut g, &b[0], real))?;
    let z = ok(disc.features(&mut g, &b[0], fake))?;
    let min_real = g.value(x.local).data().iter().chain(g.value(x.global).data()).fold(f64::MAX, |a, &v| a.min(v));
    let max_fake = g.value(z.local).data().iter().chain(g.value(z.global).data()).fold(f64::MIN, |a, &v| a.max(v));
    ensure!(min_real >= 1.0 && max_fake <= -1.0, "logits not saturated: real min {min_real}, fake max {max_fake}");
    let l_d = ok(disc_loss_global(&mut g, x.global, z.global))?;
    let l_out = ok(outpainting_loss(&mut g, &x, &z, 0.25, 0.5, 0.5))?.total;
    let (vd, vo) = (g.value(l_d).item(), g.value(l_out).item());
    ensure!(vd == 0.0 && vo == 0.0, "L_D = {vd}, L_out = {vo}");
    let sum = g.add(l_d, l_out).map_err(|e| e.to_string())?;
    let grads = ok(g.backward(sum))?;
    for (i, p) in disc.params().iter().enumerate() {
        if let Some(d) = grads.get(b[0].bound.var(i)) {
            ensure!(d.data().iter().all(|&v| v == 0.0), "nonzero gradient in {}", p.name);
        }
    }
    Ok(format!("real logits >= {min_real:.3e}, fake <= {max_fake}: L_D = 0, L_out = 0, all D gradients 0"))
}

// ---------------------------------------------------------------------------
// 6. loss hand fixtures

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn criterion_fixtures() -> Outcome {
    let load = |n: &str| ok(load_fixture(fixtures_dir().join(format!("{n}.vten")))).map(|t| t.cast::<f64>());
    let (xl, xg, zl, zg) = (load("x_local")?, load("x_global")?, load("z_local")?, load("z_global")?);
    ensure!(xl.shape() == [2, 8], "fixture shape {:?}", xl.shape());

    // By hand, m = 1/4 on 8 columns keeps columns 0 and 7 of z_local:
    //   hinge⁺(x_local)  = 83/128, hinge⁺(x_global) = 87/128
    //   hinge⁻(Out z_l)  = (0 + 1.25 + 1.75 + 0.25)/4 = 13/16
    //   hinge⁻(z_global) = 133/128
    let expected = [
        ("L_out, alpha 1/2, 1/2", 0.5, 0.5, 407.0 / 256.0),
        ("L_out, alpha 3/4, 1/4", 0.75, 0.25, 781.0 / 512.0),
    ];
    let mut lines = Vec::new();
    for (name, al, ag, want) in expected {
        let got = ok(eval_on(&[xl.clone(), xg.clone(), zl.clone(), zg.clone()], |g, v| {
            let x = DiscFeatures { local: v[0], global: v[1] };
            let z = DiscFeatures { local: v[2], global: v[3] };
            Ok(outpainting_loss(g, &x, &z, 0.25, al, ag)?.total)
        }))?;
        ensure!((got - want).abs() <= 1e-7, "{name}: {got} vs {want}");
        lines.push(format!("{name} = {got}"));
    }
    let got = ok(eval_on(&[xg, zg], |g, v| disc_loss_global(g, v[0], v[1])))?;
    ensure!((got - 55.0 / 32.0).abs() <= 1e-7, "L_D: {got} vs {}", 55.0 / 32.0);
    lines.push(format!("L_D = {got}"));
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------------------
// 7. metric identities

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 16;
    let feats: Vec<Vec<f64>> = (0..40).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let a = ok(FeatureStats::from_features(feats))?;
    let same = ok(frechet_distance(&a, &a))?;
    ensure!(same.abs() <= 1e-6, "identical stats give {same:e}");
    let mut shifted = a.clone();
    let delta: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    shifted.mean.iter_mut().zip(&delta).for_each(|(m, s)| *m += s);
    let want: f64 = delta.iter().map(|s| s * s).sum();
    let got = ok(frechet_distance(&a, &shifted))?;
    ensure!((got - want).abs() <= 1e-6 * want.max(1.0), "shift gives {got}, ||dmu||^2 = {want}");

    let clip = ok(VideoTensor::new(
        Tensor::from_fn(&[1, 4, 3, 24, 32], |i| ((i[1] * 7 + i[3] * 3 + i[4]) % 17) as f32 / 16.0),
        Space::Pixel,
    ))?;
    let p = ok(psnr(&clip, &clip))?;
    let s = ok(ssim(&clip, &clip))?;
    ensure!(p == PSNR_CAP, "PSNR of identical clips {p}");
    ensure!((s - 1.0).abs() <= 1e-12, "SSIM of identical clips {s}");
    Ok(format!("FD(a,a) = {same:.1e}, shift FD = {got:.6} vs {want:.6}, PSNR {p}, SSIM {s}"))
}

// ---------------------------------------------------------------------------
// 8. end-to-end smoke run

fn smoke_data() -> &'static (tempfile::TempDir, PathBuf) {
    static DATA: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let data = dir.path().join("synth");
        generate(&SynthSpec::default(), &data).expect("synthetic data");
        (dir, data)
    })
}

fn mean_band_psnr(pairs: &[in2out_core::metrics::EvalPair], ratio: f64) -> std::result::Result<f64, String> {
    let mut total = 0.0;
    for p in pairs {
        total += ok(psnr_band(&p.pred, &p.target, ratio))?;
    }
    Ok(total / pairs.len() as f64)
}

fn criterion_smoke() -> Outcome {
    let (root, data_dir) = smoke_data();
    let ratio = 0.25;
    let mut cfg = TrainConfig::desk();
    cfg.mask_ratio_range = [ratio, ratio];
    cfg.out_dir = root.path().join("smoke");
    let data = ok(Dataset::load(data_dir, &cfg))?;
    ensure!(data.train.len() + data.holdout.len() == 20, "dataset size");
    let untrained = ok(TrainState::new(&cfg))?;
    let start = Instant::now();
    let out = ok(fit(&cfg, &data, None))?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    ensure!(out.reports.len() == 500, "{} iterations", out.reports.len());
    if let Some(r) = out.reports.iter().find(|r| r.non_finite().is_some()) {
        return Err(format!("non-finite {} at iteration {}", r.non_finite().unwrap(), r.iteration));
    }

    let trained = ok(predict_clips(out.state.generator.as_ref(), &data.holdout, ratio, false))?;
    let before = ok(predict_clips(untrained.generator.as_ref(), &data.holdout, ratio, false))?;
    let zero: Vec<_> = data
        .holdout
        .iter()
        .map(|(id, v)| {
            Ok(in2out_core::metrics::EvalPair {
                clip_id: id.clone(),
                pred: zero_fill(v, ratio)?,
                target: v.clone(),
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let (pt, pu, pz) = (mean_band_psnr(&trained, ratio)?, mean_band_psnr(&before, ratio)?, mean_band_psnr(&zero, ratio)?);
    ensure!(pt > pu && pt > pz, "band PSNR trained {pt:.2} dB, untrained {pu:.2}, zero-fill {pz:.2}");

    let hole: Vec<f64> = out.reports.iter().map(|r| r.rec_hole).collect();
    let smooth = moving_average(&hole, 10);
    let (first, last) = (hole[0], *smooth.last().unwrap());
    ensure!(smooth[199] < first, "smoothed rec_hole at 200 iterations {:.4} not below {first:.4}", smooth[199]);
    ensure!(last < 0.5 * first, "smoothed rec_hole {last:.4} vs iteration-0 {first:.4}");
    Ok(format!(
        "500 iters in {minutes:.1} min, band PSNR {pt:.2} dB (untrained {pu:.2}, zero-fill {pz:.2}), rec_hole {first:.4} -> {last:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 9. ablation harness

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_in2out"))
}

fn quick_config(out: &Path, data: &Path, iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.iters = iters;
    cfg.generator.channels = [8, 8, 8];
    cfg.generator.res_blocks = 1;
    cfg.discriminator = DiscConfig::small(8);
    cfg.data_dir = Some(data.to_path_buf());
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn criterion_ablation() -> Outcome {
    let (root, data_dir) = smoke_data();
    let base = root.path().join("ablate");
    let cfg_path = base.join("config.json");
    fs::create_dir_all(&base).map_err(|e| e.to_string())?;
    fs::write(&cfg_path, quick_config(&base.join("unused"), data_dir, 3).to_json()).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = base.join(run);
        let status = cli()
            .args(["ablate", "--seed", "3", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "ablate failed: {}", String::from_utf8_lossy(&status.stderr));
        reports.push(fs::read(out.join("ablation.json")).map_err(|e| e.to_string())?);
    }
    ensure!(reports[0] == reports[1], "ablation reports differ between identical runs");
    let json: serde_json::Value = serde_json::from_slice(&reports[0]).map_err(|e| e.to_string())?;
    let rows = json["rows"].as_array().ok_or("no rows")?;
    let labels: Vec<&str> = rows.iter().filter_map(|r| r["label"].as_str()).collect();
    let want: Vec<&str> = DesignKind::ALL.iter().map(|d| d.label()).collect();
    ensure!(labels == want, "rows {labels:?}");
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| r["status"] != "ok")
        .filter_map(|r| r["design"].as_str())
        .collect();
    // A diverging global_and_partial run is an accepted outcome as long as the
    // failure is recorded in its row; every other design has to finish.
    if let Some(bad) = failed.iter().find(|d| **d != "global_and_partial") {
        return Err(format!("design {bad} failed"));
    }
    for r in rows.iter().filter(|r| r["status"] != "ok") {
        ensure!(r["error"].is_string() && r["error_kind"].is_string(), "failed row without a recorded error: {r}");
    }
    let none_meta = fs::read_to_string(base.join("a").join("none").join("ckpt_000003").join("meta.json")).map_err(|e| e.to_string())?;
    ensure!(!none_meta.contains("\"disc."), "design `none` checkpoint holds discriminator tensors");
    Ok(format!(
        "rows {}; failed rows {failed:?}; two seeded runs byte-identical",
        labels.join(" | ")
    ))
}

// ---------------------------------------------------------------------------
// 10. determinism and resume

fn dir_files(dir: &Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name != "config.json" {
            out.push((name, fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    out.sort();
    Ok(out)
}

fn criterion_resume() -> Outcome {
    let (root, data_dir) = smoke_data();
    let base = root.path().join("resume");
    let mut cfg = TrainConfig::desk();
    cfg.iters = 6;
    cfg.data_dir = Some(data_dir.clone());
    let data = ok(Dataset::load(data_dir, &cfg))?;
    let run = |name: &str, iters: usize, resume: Option<&Path>| {
        let mut c = cfg.clone();
        c.iters = iters;
        c.out_dir = base.join(name);
        fit(&c, &data, resume).map_err(|e| e.to_string())
    };
    let a = run("a", 6, None)?;
    run("b", 6, None)?;
    let log = |n: &str| fs::read(base.join(n).join(LOG_FILE)).map_err(|e| e.to_string());
    ensure!(log("a")? == log("b")?, "two fixed-seed runs wrote different logs");
    let half = run("c", 3, None)?;
    run("c", 6, Some(&half.final_checkpoint))?;
    ensure!(log("c")? == log("a")?, "resumed log differs from the uninterrupted log");
    let ckpt = |n: &str| dir_files(&base.join(n).join("ckpt_000006"));
    ensure!(ckpt("a")? == ckpt("b")?, "checkpoints of identical runs differ");
    ensure!(ckpt("c")? == ckpt("a")?, "resumed checkpoint differs from uninterrupted checkpoint");
    Ok(format!(
        "{} logged iterations and {} checkpoint files bit-identical across runs and across resume at iteration 3",
        a.reports.len(),
        ckpt("a")?.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 gradient suite", criterion_gradients),
        ("2 band geometry", criterion_bands),
        ("3 receptive fields", criterion_rf),
        ("4 gradient locality", criterion_locality),
        ("5 saturated hinge zeros", criterion_saturation),
        ("6 loss hand fixtures", criterion_fixtures),
        ("7 metric identities", criterion_metrics),
        ("8 end-to-end smoke run", criterion_smoke),
        ("9 ablation harness", criterion_ablation),
        ("10 determinism and resume", criterion_resume),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} [{secs:7.1}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<28} [{secs:7.1}s] {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
