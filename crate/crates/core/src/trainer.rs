//! Adversarial fine-tuning: alternating discriminator/generator updates,
//! checkpoints, resume and the experiment configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::{adam_step, AdamConfig, AdamState, Graph, ParamSet, DEFAULT_LR};
use crate::discriminator::{Design, DesignKind, DiscConfig};
use crate::error::{Error, IoContext, Result};
use crate::generator::{
    build_generator, sample_clip, sliding_window_infer, ClipSample, GeneratorConfig,
    VideoGenerator, DEFAULT_WINDOW, LOCAL_FRAMES, NON_LOCAL_FRAMES,
};
use crate::losses::{
    rec_loss, scalar, total_gen_loss, GenComponents, LossReport, LossWeights, Profile,
};
use crate::masking::{apply_mask, band_width, make_mask, sample_ratio, MaskSpec, OutBands};
use crate::metrics::EvalPair;
use crate::tensor::Tensor;
use crate::tensorio::{list_clips, load_clip, load_fixture, resize_video, save_fixture, VideoTensor};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const META_FILE: &str = "meta.json";
pub const CONFIG_FILE: &str = "config.json";
pub const DATA_DIR_ENV: &str = "IN2OUT_DATA_DIR";

/// Generator/discriminator learning rate of the desk profile. The full-scale
/// rate fine-tunes pretrained networks; the toy generator starts from scratch
/// and needs a larger step to learn anything in 500 iterations.
pub const DESK_LR: f64 = 2e-4;

/// Narrower than the full-scale range: at 96 px the lower end (1/12) leaves no
/// column of the 12-wide feature map inside a band.
pub const DESK_RATIO_RANGE: [f64; 2] = [1.0 / 6.0, 1.0 / 3.0];

const FRAMES_PER_SAMPLE: usize = LOCAL_FRAMES + NON_LOCAL_FRAMES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    pub lr: f64,
    pub batch: usize,
    /// `[width, height]` every frame is resized to.
    pub resize: [usize; 2],
    pub mask_ratio_range: [f64; 2],
    pub design: DesignKind,
    pub weights: LossWeights,
    pub seed: u64,
    pub profile: Profile,
    pub generator: GeneratorConfig,
    pub discriminator: DiscConfig,
    /// Use `+mean(D(fake))` as the generator's adversarial term instead of `−mean`.
    pub adv_literal: bool,
    /// Trailing clips (by sorted id) kept out of training for evaluation.
    pub holdout: usize,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Dataset root; falls back to `$IN2OUT_DATA_DIR`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    /// Full-scale recipe at 432×240.
    pub fn paper() -> Self {
        Self {
            iters: 50_000,
            lr: DEFAULT_LR,
            batch: 1,
            resize: [432, 240],
            mask_ratio_range: [1.0 / 12.0, 1.0 / 3.0],
            design: DesignKind::Hierarchical,
            weights: LossWeights::e2fgvi(),
            seed: 0,
            profile: Profile::E2fgvi,
            generator: GeneratorConfig::default(),
            discriminator: DiscConfig::default(),
            adv_literal: false,
            holdout: 0,
            checkpoint_every: None,
            data_dir: None,
            out_dir: PathBuf::from("runs/paper"),
        }
    }

    /// One-core profile: 96×56 synthetic video, 500 iterations.
    pub fn desk() -> Self {
        Self {
            iters: 500,
            lr: DESK_LR,
            resize: [96, 56],
            mask_ratio_range: DESK_RATIO_RANGE,
            holdout: 4,
            out_dir: PathBuf::from("runs/desk"),
            ..Self::paper()
        }
    }

    /// Parse JSON, reporting the path of an offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::ConfigKey {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).at(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn width(&self) -> usize {
        self.resize[0]
    }

    pub fn height(&self) -> usize {
        self.resize[1]
    }

    /// Weights after applying the profile's adversarial and flow weights.
    pub fn effective_weights(&self) -> LossWeights {
        self.weights.with_profile(self.profile)
    }

    pub fn checkpoint_interval(&self) -> usize {
        self.checkpoint_every.unwrap_or((self.iters / 10).max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        let [w, h] = self.resize;
        if w == 0 || h == 0 || w % 8 != 0 || h % 8 != 0 {
            return Err(Error::Config(format!(
                "resize {w}x{h} must be positive multiples of 8"
            )));
        }
        let [lo, hi] = self.mask_ratio_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("mask ratio range [{lo}, {hi}] is invalid")));
        }
        band_width(lo, w)?;
        self.discriminator.validate()?;
        if self.design.uses_feature_bands() {
            let fw = self.feature_width()?;
            if band_width(lo, fw).is_err() {
                return Err(Error::EmptyBand { ratio: lo, width: w });
            }
        }
        self.effective_weights().validate()
    }

    /// Width of the discriminator's local feature map for frames of this width.
    pub fn feature_width(&self) -> Result<usize> {
        let mut dims = [FRAMES_PER_SAMPLE, self.height(), self.width()];
        for l in &self.discriminator.fem_layers {
            dims = l.out_dims(dims)?;
        }
        Ok(dims[2])
    }

    /// Hash of everything that shapes the optimization trajectory. Run length
    /// and paths are left out so a run can be extended or moved.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.iters = 0;
        c.checkpoint_every = None;
        c.data_dir = None;
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Dataset root from the config or the environment.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                Error::Config(format!("no data_dir in config and ${DATA_DIR_ENV} is unset"))
            })
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Clips resized to the training resolution, split into train and held-out.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<(String, VideoTensor)>,
    pub holdout: Vec<(String, VideoTensor)>,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>, cfg: &TrainConfig) -> Result<Self> {
        let root = root.as_ref();
        let dirs = list_clips(root)?;
        let mut clips = Vec::with_capacity(dirs.len());
        for d in &dirs {
            let id = d.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let v = resize_video(&load_clip(d)?, cfg.width(), cfg.height())?;
            clips.push((id, v));
        }
        Self::split(clips, cfg.holdout)
    }

    pub fn split(clips: Vec<(String, VideoTensor)>, holdout: usize) -> Result<Self> {
        if clips.len() <= holdout {
            return Err(Error::Config(format!(
                "dataset has {} clips; holding out {holdout} leaves none for training",
                clips.len()
            )));
        }
        if let Some((id, v)) = clips.iter().find(|(_, v)| v.frames() < FRAMES_PER_SAMPLE) {
            return Err(Error::Range(format!(
                "clip {id} has {} frames, training needs {FRAMES_PER_SAMPLE}",
                v.frames()
            )));
        }
        let mut train = clips;
        let holdout = train.split_off(train.len() - holdout);
        Ok(Self { train, holdout })
    }
}

/// What one iteration draws: a clip and frames per batch entry, and the mask ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub clips: Vec<(usize, ClipSample)>,
    pub ratio: f64,
}

pub fn draw<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    lens: &[usize],
    rng: &mut R,
) -> Result<Draw> {
    let ratio = sample_ratio(cfg.mask_ratio_range[0], cfg.mask_ratio_range[1], rng)?;
    let clips = (0..cfg.batch)
        .map(|_| {
            let c = rng.gen_range(0..lens.len());
            Ok((c, sample_clip(lens[c], rng)?))
        })
        .collect::<Result<_>>()?;
    Ok(Draw { clips, ratio })
}

/// Networks, optimizer moments and sampler state of a run.
pub struct TrainState {
    pub iteration: usize,
    pub generator: Box<dyn VideoGenerator<f32>>,
    pub design: Design<f32>,
    pub opt_g: AdamState<f32>,
    pub opt_d: Vec<AdamState<f32>>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh networks from the config seed.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = build_generator::<f32, _>(&cfg.generator, &mut init)?;
        let w = cfg.effective_weights();
        let design = Design::build(
            cfg.design,
            &cfg.discriminator,
            w.alpha_local,
            w.alpha_global,
            cfg.adv_literal,
            &mut init,
        )?;
        let opt_g = AdamState::new(generator.params());
        let opt_d = design.discriminators().iter().map(|d| AdamState::new(d.params())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            iteration: 0,
            generator,
            design,
            opt_g,
            opt_d,
            rng,
        })
    }
}

fn gather(data: &[(String, VideoTensor)], d: &Draw) -> Result<VideoTensor> {
    let mut items = Vec::with_capacity(d.clips.len());
    for (c, s) in &d.clips {
        let v = &data[*c].1;
        let frames = s
            .order()
            .into_iter()
            .map(|f| v.frame_range(f, 1))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&VideoTensor> = frames.iter().collect();
        items.push(VideoTensor::concat_frames(&refs)?);
    }
    let refs: Vec<&VideoTensor> = items.iter().collect();
    VideoTensor::concat_batch(&refs)
}

fn check(iteration: usize, component: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss {
            iteration,
            component: component.to_string(),
        })
    }
}

/// One discriminator update then one generator update on `draw`.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &[(String, VideoTensor)],
    draw: &Draw,
) -> Result<LossReport> {
    let it = state.iteration;
    let ratio = draw.ratio;
    let video = gather(data, draw)?;
    let [_, t, _, h, w] = video.dims();
    let mask = make_mask(MaskSpec::new(ratio, w)?, (t, h, w))?;
    let input = apply_mask(&video, &mask)?;
    let target = video.frame_range(0, LOCAL_FRAMES)?.into_tensor();
    let frame_ids: Vec<usize> = draw.clips[0].1.order();
    let weights = cfg.effective_weights();
    let mut report = LossReport {
        iteration: it,
        mask_ratio: ratio,
        ..LossReport::default()
    };

    let mut g = Graph::new();
    let gp = state.generator.params().bind(&mut g, true);
    let x = g.constant(input.into_tensor());
    let full = state.generator.forward(&mut g, &gp, x, &frame_ids)?;
    let pred = g.narrow(full, 1, 0, LOCAL_FRAMES)?;

    if !state.design.discriminators().is_empty() {
        let mut gd = Graph::new();
        let bd = state.design.bind(&mut gd, true)?;
        let real = gd.constant(target.clone());
        let fake = gd.constant(g.value(pred).clone());
        let dl = state
            .design
            .disc_loss(&mut gd, &bd, real, fake, ratio)?
            .expect("design with discriminators has a loss");
        report.d_loss = check(it, "d_loss", scalar(&gd, dl.total))?;
        let opt = |v: Option<_>| v.map_or(0.0, |v| scalar(&gd, v));
        report.out_loss_real_local = opt(dl.real_local);
        report.out_loss_real_global = opt(dl.real_global);
        report.out_loss_fake_local = opt(dl.fake_local);
        report.out_loss_fake_global = opt(dl.fake_global);
        let grads = gd.backward(dl.total)?;
        let adam = AdamConfig::discriminator(cfg.lr);
        for ((d, b), st) in state
            .design
            .discriminators_mut()
            .iter_mut()
            .zip(&bd)
            .zip(&mut state.opt_d)
        {
            d.params_mut().zero_grads();
            d.params_mut().accumulate_grads(&grads, &b.bound);
            adam_step(d.params_mut(), st, &adam)?;
        }
        state.design.refresh_spectral();
    }

    let tgt = g.constant(target);
    let (rec_hole, rec_valid) = rec_loss(&mut g, pred, tgt, ratio)?;
    let bd = state.design.bind(&mut g, false)?;
    let adv = state.design.gen_adv(&mut g, &bd, pred, ratio)?;
    let flow = state.generator.flow_loss(&mut g, &gp, x, pred)?;
    let comps = GenComponents {
        rec_hole,
        rec_valid,
        adv,
        flow,
    };
    let total = total_gen_loss(&mut g, &comps, &weights)?;
    report.rec_hole = check(it, "rec_hole", scalar(&g, rec_hole))?;
    report.rec_valid = check(it, "rec_valid", scalar(&g, rec_valid))?;
    report.adv = check(it, "adv", adv.map_or(0.0, |v| scalar(&g, v)))?;
    report.flow = check(it, "flow", flow.map_or(0.0, |v| scalar(&g, v)))?;
    report.total_g = check(it, "total_g", scalar(&g, total))?;
    let grads = g.backward(total)?;
    let gparams = state.generator.params_mut();
    gparams.zero_grads();
    gparams.accumulate_grads(&grads, &gp);
    adam_step(gparams, &mut state.opt_g, &AdamConfig::generator(cfg.lr))?;

    state.iteration += 1;
    Ok(report)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngMeta {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    iteration: usize,
    config_hash: String,
    design: DesignKind,
    rng: RngMeta,
    adam_steps: Vec<u64>,
    /// Tensor name → file name inside the checkpoint directory.
    tensors: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// Every tensor a checkpoint holds, keyed by a stable name.
fn collect_tensors(state: &TrainState) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    let mut push_set = |tag: &str, params: &ParamSet<f32>, opt: &AdamState<f32>| {
        for (i, p) in params.iter().enumerate() {
            out.push((p.name.clone(), p.value.clone()));
            out.push((format!("{tag}.adam_m.{}", p.name), opt.m[i].clone()));
            out.push((format!("{tag}.adam_v.{}", p.name), opt.v[i].clone()));
        }
    };
    push_set("gen", state.generator.params(), &state.opt_g);
    for (d, opt) in state.design.discriminators().iter().zip(&state.opt_d) {
        push_set("disc", d.params(), opt);
    }
    for (k, d) in state.design.discriminators().iter().enumerate() {
        for (l, s) in d.spectral_states().iter().enumerate() {
            out.push((format!("sn.{k}.{l}.u"), Tensor::from_vec(&[s.u.len()], s.u.clone()).expect("1-d")));
            if !s.v.is_empty() {
                out.push((format!("sn.{k}.{l}.v"), Tensor::from_vec(&[s.v.len()], s.v.clone()).expect("1-d")));
            }
        }
    }
    out
}

pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).at(dir)?;
    let mut tensors = BTreeMap::new();
    for (name, t) in collect_tensors(state) {
        let file = format!("{name}.vten");
        save_fixture(&t, dir.join(&file))?;
        tensors.insert(name, file);
    }
    let mut adam_steps = vec![state.opt_g.step];
    adam_steps.extend(state.opt_d.iter().map(|o| o.step));
    let meta = CheckpointMeta {
        iteration: state.iteration,
        config_hash: cfg.hash(),
        design: cfg.design,
        rng: RngMeta {
            seed: hex(&state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        adam_steps,
        tensors,
    };
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_json()).at(&path)?;
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).at(&path)
}

/// Generator weights of a checkpoint, rebuilt from the config stored beside them.
pub fn load_generator(dir: impl AsRef<Path>) -> Result<(TrainConfig, Box<dyn VideoGenerator<f32>>)> {
    let dir = dir.as_ref();
    let cfg = TrainConfig::load(dir.join(CONFIG_FILE))?;
    let state = load_checkpoint(&cfg, dir)?;
    Ok((cfg, state.generator))
}

/// Rebuild a run from a checkpoint written with the same config.
pub fn load_checkpoint(cfg: &TrainConfig, dir: impl AsRef<Path>) -> Result<TrainState> {
    let dir = dir.as_ref();
    let path = dir.join(META_FILE);
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&path).at(&path)?)
        .map_err(|source| Error::Json { path: path.clone(), source })?;
    if meta.config_hash != cfg.hash() {
        return Err(Error::Config(format!(
            "checkpoint {} was written by a different config (hash {}, current {})",
            dir.display(),
            meta.config_hash,
            cfg.hash()
        )));
    }
    let mut state = TrainState::new(cfg)?;
    let bad = |reason: &str| Error::Fixture {
        path: path.clone(),
        reason: reason.to_string(),
    };
    if meta.adam_steps.len() != 1 + state.opt_d.len() {
        return Err(bad("optimizer count does not match the design"));
    }
    let load = |name: &str| -> Option<Tensor<f32>> {
        meta.tensors.get(name).and_then(|f| load_fixture(dir.join(f)).ok())
    };
    let restore = |tag: &str, params: &mut ParamSet<f32>, opt: &mut AdamState<f32>, step: u64| -> Result<()> {
        params.load_values(|n| load(n))?;
        for (i, p) in params.iter().enumerate() {
            let m = load(&format!("{tag}.adam_m.{}", p.name));
            let v = load(&format!("{tag}.adam_v.{}", p.name));
            match (m, v) {
                (Some(m), Some(v)) => {
                    m.expect_shape(p.value.shape())?;
                    v.expect_shape(p.value.shape())?;
                    opt.m[i] = m;
                    opt.v[i] = v;
                }
                _ => return Err(Error::Config(format!("checkpoint lacks optimizer state for `{}`", p.name))),
            }
        }
        opt.step = step;
        Ok(())
    };
    restore("gen", state.generator.params_mut(), &mut state.opt_g, meta.adam_steps[0])?;
    for (k, (d, opt)) in state
        .design
        .discriminators_mut()
        .iter_mut()
        .zip(&mut state.opt_d)
        .enumerate()
    {
        restore("disc", d.params_mut(), opt, meta.adam_steps[k + 1])?;
        for (l, s) in d.spectral_states_mut().iter_mut().enumerate() {
            let u = load(&format!("sn.{k}.{l}.u")).ok_or_else(|| bad("missing spectral state"))?;
            u.expect_shape(&[s.u.len()])?;
            s.u = u.into_data();
            s.v = load(&format!("sn.{k}.{l}.v")).map(|v| v.into_data()).unwrap_or_default();
        }
    }
    let seed = unhex(&meta.rng.seed).ok_or_else(|| bad("bad rng seed"))?;
    let word_pos: u128 = meta.rng.word_pos.parse().map_err(|_| bad("bad rng position"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(meta.rng.stream);
    rng.set_word_pos(word_pos);
    state.rng = rng;
    state.iteration = meta.iteration;
    Ok(state)
}

pub fn checkpoint_dir(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("ckpt_{iteration:06}"))
}

/// Result of [`fit`].
pub struct FitOutcome {
    pub state: TrainState,
    /// Reports of the iterations run by this call.
    pub reports: Vec<LossReport>,
    pub final_checkpoint: PathBuf,
}

/// Keep the log lines of iterations before `start`, dropping any later ones.
fn truncate_log(path: &Path, start: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let f = fs::File::open(path).at(path)?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.at(path)?;
        let r: LossReport = serde_json::from_str(&line)
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        if r.iteration < start {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).at(path)
}

/// Train to `cfg.iters`, optionally continuing from a checkpoint directory.
pub fn fit(cfg: &TrainConfig, data: &Dataset, resume: Option<&Path>) -> Result<FitOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut state = match resume {
        Some(dir) => load_checkpoint(cfg, dir)?,
        None => TrainState::new(cfg)?,
    };
    let out = &cfg.out_dir;
    fs::create_dir_all(out).at(out)?;
    let log_path = out.join(LOG_FILE);
    if resume.is_some() {
        truncate_log(&log_path, state.iteration)?;
    } else if log_path.exists() {
        fs::remove_file(&log_path).at(&log_path)?;
    }
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .at(&log_path)?;
    let lens: Vec<usize> = data.train.iter().map(|(_, v)| v.frames()).collect();
    let every = cfg.checkpoint_interval();
    let mut reports = Vec::new();
    let mut last_ckpt = None;
    while state.iteration < cfg.iters {
        let d = draw(cfg, &lens, &mut state.rng)?;
        let r = train_step(&mut state, cfg, &data.train, &d)?;
        writeln!(log, "{}", serde_json::to_string(&r).expect("report serializes")).at(&log_path)?;
        if r.iteration % 50 == 0 {
            info!(
                "iter {} d_loss {:.4} rec_hole {:.4} rec_valid {:.4} adv {:.4}",
                r.iteration, r.d_loss, r.rec_hole, r.rec_valid, r.adv
            );
        }
        reports.push(r);
        if state.iteration % every == 0 || state.iteration == cfg.iters {
            let dir = checkpoint_dir(out, state.iteration);
            save_checkpoint(&state, cfg, &dir)?;
            last_ckpt = Some(dir);
        }
    }
    let final_checkpoint = match last_ckpt {
        Some(d) => d,
        None => {
            let dir = checkpoint_dir(out, state.iteration);
            save_checkpoint(&state, cfg, &dir)?;
            dir
        }
    };
    Ok(FitOutcome {
        state,
        reports,
        final_checkpoint,
    })
}

/// Outpaint each clip with non-overlapping windows and pair it with its ground truth.
pub fn predict_clips(
    gen: &dyn VideoGenerator<f32>,
    clips: &[(String, VideoTensor)],
    ratio: f64,
    composite: bool,
) -> Result<Vec<EvalPair>> {
    clips
        .iter()
        .map(|(id, v)| {
            Ok(EvalPair {
                clip_id: id.clone(),
                pred: sliding_window_infer(gen, v, DEFAULT_WINDOW, ratio, composite)?,
                target: v.clone(),
            })
        })
        .collect()
}

/// Ground truth with the bands zeroed: the do-nothing outpainting baseline.
pub fn zero_fill(video: &VideoTensor, ratio: f64) -> Result<VideoTensor> {
    let bands = OutBands::for_width(ratio, video.width())?;
    let w = video.width();
    let mut t = video.tensor().clone();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if bands.contains(i % w) {
            *v = 0.0;
        }
    }
    VideoTensor::new(t, video.space())
}

/// Trailing moving average with window `k` (shorter at the start).
pub fn moving_average(xs: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(k);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
