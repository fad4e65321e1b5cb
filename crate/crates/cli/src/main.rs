use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use in2out_core::ablation::{cmd_ablate, AblationPlan};
use in2out_core::discriminator::{rf_plan, DesignKind};
use in2out_core::masking::out_extract;
use in2out_core::metrics::{
    evaluate, frechet_distance, load_feature_dump, parse_metrics, EvalPair, FeatureStats,
    Metric, RandomFemExtractor, Region,
};
use in2out_core::synthdata::{generate, SynthSpec};
use in2out_core::tensorio::{list_clips, load_clip, read_manifest, resize_video, save_clip};
use in2out_core::trainer::{fit, load_generator, predict_clips, Dataset, TrainConfig, DATA_DIR_ENV};
use in2out_core::{Error, Result, Space, VideoTensor};
use serde_json::json;

/// Video outpainting toolkit: synthetic data, training, evaluation and
/// discriminator-design ablations.
#[derive(Parser, Debug)]
#[command(name = "in2out", version)]
struct Cli {
    /// Seed overriding the config or command default.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a deterministic moving-shape video dataset.
    MakeSynth(MakeSynth),
    /// Write the two outpainting bands of a clip as a narrow clip.
    ExtractOut(ExtractOut),
    /// Receptive field of a strided conv stack versus a target width.
    RfPlan(RfPlanArgs),
    /// Adversarial fine-tuning from a JSON config.
    Train(Train),
    /// PSNR / SSIM / feature distance of a checkpoint or of prediction clips.
    Eval(Eval),
    /// Train and evaluate several discriminator designs with one config.
    Ablate(Ablate),
}

#[derive(Args, Debug)]
struct MakeSynth {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    clips: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Frame size as WxH.
    #[arg(long, default_value = "96x56", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 3)]
    shapes: usize,
    /// Horizontal speed range in pixels/frame, as LO,HI.
    #[arg(long, default_value = "1,3", value_parser = parse_range)]
    velocity: (f64, f64),
}

#[derive(Args, Debug)]
struct ExtractOut {
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RfPlanArgs {
    /// Spatial kernel sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    kernels: Vec<usize>,
    /// Spatial strides, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    strides: Vec<usize>,
    /// Required receptive field in pixels.
    #[arg(long)]
    target: Option<usize>,
}

#[derive(Args, Debug)]
struct Train {
    /// Training config JSON; keys mirror the config fields exactly.
    #[arg(long, required_unless_present = "print_config")]
    config: Option<PathBuf>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print a complete config (`desk` or `paper`) and exit.
    #[arg(long, value_name = "PROFILE")]
    print_config: Option<String>,
}

#[derive(Args, Debug)]
struct Eval {
    /// Checkpoint directory whose generator produces the predictions.
    #[arg(long, required_unless_present = "pred")]
    ckpt: Option<PathBuf>,
    /// Directory of prediction clips matched to ground truth by clip id.
    #[arg(long, conflicts_with = "ckpt")]
    pred: Option<PathBuf>,
    /// Ground-truth clips; defaults to $IN2OUT_DATA_DIR.
    #[arg(long, env = DATA_DIR_ENV)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    ratio: f64,
    #[arg(long, default_value = "psnr,ssim,fvd")]
    metrics: String,
    /// `whole` or `band`.
    #[arg(long, default_value = "whole")]
    region: String,
    #[arg(long)]
    report: PathBuf,
    /// Paste the known center back into generator output before scoring.
    #[arg(long)]
    composite: bool,
    /// External `(N, D)` feature dumps for predictions and ground truth; replaces the built-in extractor.
    #[arg(long, requires = "features_real")]
    features_pred: Option<PathBuf>,
    #[arg(long, requires = "features_pred")]
    features_real: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Ablate {
    #[arg(long)]
    config: PathBuf,
    /// `all` or a comma-separated list of designs.
    #[arg(long, default_value = "all")]
    designs: String,
    #[arg(long)]
    out: PathBuf,
    /// Dataset root; overrides the config and $IN2OUT_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    eval_ratio: f64,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    Ok((
        w.parse().map_err(|e| format!("width: {e}"))?,
        h.parse().map_err(|e| format!("height: {e}"))?,
    ))
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn make_synth(a: MakeSynth, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        n_clips: a.clips,
        frames: a.frames,
        width: a.size.0,
        height: a.size.1,
        n_shapes: a.shapes,
        velocity_range: a.velocity,
        seed,
    };
    let dirs = generate(&spec, &a.out)?;
    log::info!("wrote {} clips to {}", dirs.len(), a.out.display());
    Ok(())
}

fn extract_out(a: ExtractOut) -> Result<()> {
    let video = load_clip(&a.clip)?;
    let id = read_manifest(&a.clip)?.clip_id;
    let bands = VideoTensor::new(out_extract(video.tensor(), a.ratio)?, Space::Pixel)?;
    save_clip(&bands, &a.out, &format!("{id}_out"), 24.0)?;
    Ok(())
}

fn train(a: Train, seed: Option<u64>) -> Result<()> {
    if let Some(p) = a.print_config {
        let cfg = match p.as_str() {
            "desk" => TrainConfig::desk(),
            "paper" => TrainConfig::paper(),
            _ => return Err(Error::Config(format!("unknown config profile `{p}` (desk|paper)"))),
        };
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let mut cfg = TrainConfig::load(a.config.expect("clap enforces --config"))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = Dataset::load(cfg.resolve_data_dir()?, &cfg)?;
    let out = fit(&cfg, &data, a.resume.as_deref())?;
    println!("{}", out.final_checkpoint.display());
    Ok(())
}

fn load_dir(dir: &Path, size: Option<(usize, usize)>) -> Result<Vec<(String, VideoTensor)>> {
    list_clips(dir)?
        .iter()
        .map(|d| {
            let id = read_manifest(d)?.clip_id;
            let v = load_clip(d)?;
            let v = match size {
                Some((w, h)) => resize_video(&v, w, h)?,
                None => v,
            };
            Ok((id, v))
        })
        .collect()
}

fn eval(a: Eval) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let region: Region = a.region.parse()?;
    let (pairs, config) = match (&a.ckpt, &a.pred) {
        (Some(ckpt), _) => {
            let (cfg, gen) = load_generator(ckpt)?;
            let truth = load_dir(&a.data, Some((cfg.width(), cfg.height())))?;
            let pairs = predict_clips(gen.as_ref(), &truth, a.ratio, a.composite)?;
            (pairs, serde_json::to_value(&cfg).expect("config serializes"))
        }
        (None, Some(pred)) => {
            let truth = load_dir(&a.data, None)?;
            let preds = load_dir(pred, None)?;
            let pairs = truth
                .into_iter()
                .map(|(id, target)| {
                    let pred = preds
                        .iter()
                        .find(|(p, _)| *p == id)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| Error::Config(format!("no prediction for clip `{id}`")))?;
                    Ok(EvalPair { clip_id: id, pred, target })
                })
                .collect::<Result<Vec<_>>>()?;
            (pairs, json!({ "pred": pred }))
        }
        (None, None) => unreachable!("clap requires --ckpt or --pred"),
    };
    let external = a.features_pred.is_some();
    let inner: Vec<Metric> = metrics
        .iter()
        .copied()
        .filter(|m| !(external && *m == Metric::Fvd))
        .collect();
    let mut report = evaluate(
        &pairs,
        a.ratio,
        region,
        &inner,
        &RandomFemExtractor::new(),
        config,
    )?;
    if let (Some(fp), Some(fr)) = (&a.features_pred, &a.features_real) {
        if metrics.contains(&Metric::Fvd) {
            let sp = FeatureStats::from_features(load_feature_dump(fp)?)?;
            let sr = FeatureStats::from_features(load_feature_dump(fr)?)?;
            report.fvd = Some(frechet_distance(&sp, &sr)?);
        }
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.report, &text)?;
    println!("{}", serde_json::to_string(&report.aggregate).expect("aggregate serializes"));
    Ok(())
}

fn ablate(a: Ablate, seed: Option<u64>) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if a.data.is_some() {
        cfg.data_dir = a.data.clone();
    }
    let designs = if a.designs == "all" {
        DesignKind::ALL.to_vec()
    } else {
        a.designs
            .split(',')
            .map(|d| d.trim().parse())
            .collect::<Result<Vec<DesignKind>>>()?
    };
    let data = Dataset::load(cfg.resolve_data_dir()?, &cfg)?;
    let plan = AblationPlan {
        designs,
        config: cfg,
        out_dir: a.out,
        eval_ratio: a.eval_ratio,
    };
    let report = cmd_ablate(&plan, &data)?;
    print!("{}", report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::MakeSynth(a) => make_synth(a, cli.seed.unwrap_or(0)),
        Cmd::ExtractOut(a) => extract_out(a),
        Cmd::RfPlan(a) => {
            let plan = rf_plan(&a.kernels, &a.strides, a.target)?;
            print!("{plan}");
            Ok(())
        }
        Cmd::Train(a) => train(a, cli.seed),
        Cmd::Eval(a) => eval(a),
        Cmd::Ablate(a) => ablate(a, cli.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut record = json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::ConfigKey { path, .. } = &e {
                record["key"] = json!(path);
            }
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
