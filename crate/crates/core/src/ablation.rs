//! Discriminator-design comparison: train each design with one shared config
//! and evaluate it on the held-out clips.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::discriminator::DesignKind;
use crate::error::{Error, IoContext, Result};
use crate::metrics::{evaluate, Metric, RandomFemExtractor, Region};
use crate::trainer::{fit, predict_clips, Dataset, TrainConfig};

pub const REPORT_JSON: &str = "ablation.json";
pub const REPORT_TABLE: &str = "ablation.txt";

#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub designs: Vec<DesignKind>,
    pub config: TrainConfig,
    pub out_dir: PathBuf,
    /// Mask ratio used for the held-out evaluation.
    pub eval_ratio: f64,
}

impl AblationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.designs.is_empty() {
            return Err(Error::Config("ablation needs at least one design".into()));
        }
        for (i, d) in self.designs.iter().enumerate() {
            if self.designs[..i].contains(d) {
                return Err(Error::Config(format!("design `{d}` listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub design: DesignKind,
    pub label: String,
    /// `ok`, or `failed` with the error recorded below.
    pub status: String,
    pub error_kind: Option<String>,
    pub error: Option<String>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub fvd: Option<f64>,
    pub disc_params: usize,
    pub iterations: usize,
    pub final_d_loss: Option<f64>,
    pub final_rec_hole: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub iters: usize,
    pub eval_ratio: f64,
    pub holdout_clips: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Fixed-width table with columns PSNR↑, SSIM↑, FVD↓.
    pub fn table(&self) -> String {
        let num = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.p$}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<18} {:>8} {:>8} {:>10}  status", "Design", "PSNR↑", "SSIM↑", "FVD↓");
        for r in &self.rows {
            let status = match &r.error {
                Some(e) => format!("failed: {e}"),
                None => r.status.clone(),
            };
            let _ = writeln!(
                s,
                "{:<18} {:>8} {:>8} {:>10}  {status}",
                r.label,
                num(r.psnr, 2),
                num(r.ssim, 4),
                num(r.fvd, 4)
            );
        }
        s
    }
}

fn run_row(plan: &AblationPlan, design: DesignKind, data: &Dataset) -> AblationRow {
    let mut row = AblationRow {
        design,
        label: design.label().to_string(),
        status: "ok".into(),
        error_kind: None,
        error: None,
        psnr: None,
        ssim: None,
        fvd: None,
        disc_params: 0,
        iterations: 0,
        final_d_loss: None,
        final_rec_hole: None,
    };
    let mut cfg = plan.config.clone();
    cfg.design = design;
    cfg.out_dir = plan.out_dir.join(design.as_str());
    let result = (|| -> Result<()> {
        let out = fit(&cfg, data, None)?;
        row.iterations = out.state.iteration;
        row.disc_params = out
            .state
            .design
            .discriminators()
            .iter()
            .map(|d| d.params().num_elements())
            .sum();
        if let Some(last) = out.reports.last() {
            row.final_d_loss = Some(last.d_loss);
            row.final_rec_hole = Some(last.rec_hole);
        }
        let pairs = predict_clips(out.state.generator.as_ref(), &data.holdout, plan.eval_ratio, false)?;
        let mut metrics = vec![Metric::Psnr, Metric::Ssim];
        if pairs.len() >= 2 {
            metrics.push(Metric::Fvd);
        }
        let rep = evaluate(
            &pairs,
            plan.eval_ratio,
            Region::Whole,
            &metrics,
            &RandomFemExtractor::new(),
            serde_json::Value::Null,
        )?;
        row.psnr = rep.aggregate.psnr;
        row.ssim = rep.aggregate.ssim;
        row.fvd = rep.fvd;
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("design {design} failed: {e}");
        row.status = "failed".into();
        row.error_kind = Some(e.kind().to_string());
        row.error = Some(e.to_string());
    }
    row
}

/// Train and evaluate every planned design; rows follow the canonical design order.
///
/// A failing design is recorded in its row and the remaining designs still run.
pub fn cmd_ablate(plan: &AblationPlan, data: &Dataset) -> Result<AblationReport> {
    plan.validate()?;
    if data.holdout.is_empty() {
        return Err(Error::Config("ablation needs held-out clips (set holdout ≥ 1)".into()));
    }
    let rows = DesignKind::ALL
        .into_iter()
        .filter(|d| plan.designs.contains(d))
        .map(|d| run_row(plan, d, data))
        .collect();
    let report = AblationReport {
        seed: plan.config.seed,
        iters: plan.config.iters,
        eval_ratio: plan.eval_ratio,
        holdout_clips: data.holdout.iter().map(|(id, _)| id.clone()).collect(),
        rows,
    };
    fs::create_dir_all(&plan.out_dir).at(&plan.out_dir)?;
    let json = plan.out_dir.join(REPORT_JSON);
    fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes")).at(&json)?;
    let table = plan.out_dir.join(REPORT_TABLE);
    fs::write(&table, report.table()).at(&table)?;
    Ok(report)
}
