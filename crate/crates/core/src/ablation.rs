//! Smoke-scale ablation runner over the component table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::DatasetObject;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_model, EvalSummary};
use crate::loss::LossConfig;
use crate::net::{FusionMode, ImageBranchInput, NetConfig};
use crate::train::{train_with_validation, TrainConfig};

pub const REPORT_FILE: &str = "ablation.txt";

/// MAE above which a run counts as not converged.
pub const NON_CONVERGED_MAE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub id: u8,
    pub description: &'static str,
    pub net: NetConfig,
    pub loss: LossConfig,
}

/// Component settings for rows 0 to 8; `base` supplies channel width, seed
/// and other settings the table does not vary.
pub fn table_row(id: u8, base: &NetConfig) -> Option<AblationRow> {
    let plain = NetConfig {
        use_gradient_branch: false,
        use_fusion: false,
        fusion_mode: FusionMode::CrossAttention,
        hourglass_blocks: 0,
        image_branch_input: ImageBranchInput::Normalized,
        ..base.clone()
    };
    let with_branch = |fusion: bool, mode: FusionMode, blocks: usize| NetConfig {
        use_gradient_branch: true,
        use_fusion: fusion,
        fusion_mode: mode,
        hourglass_blocks: blocks,
        ..plain.clone()
    };
    let cosine = LossConfig::cosine_only();
    let (description, net, loss) = match id {
        0 => ("image extractor only", plain, cosine),
        1 => (
            "image extractor fed image and gradient",
            NetConfig {
                image_branch_input: ImageBranchInput::NormalizedWithGradient,
                ..plain
            },
            cosine,
        ),
        2 => (
            "gradient input only",
            NetConfig {
                image_branch_input: ImageBranchInput::GradientOnly,
                ..plain
            },
            cosine,
        ),
        3 => ("gradient extractor, concatenation", with_branch(false, FusionMode::ConcatOnly, 0), cosine),
        4 => ("cross-attention fusion", with_branch(true, FusionMode::CrossAttention, 0), cosine),
        5 => (
            "cross-attention, gradient loss only",
            with_branch(true, FusionMode::CrossAttention, 0),
            LossConfig::gradient_only(),
        ),
        6 => (
            "cross-attention, both losses",
            with_branch(true, FusionMode::CrossAttention, 0),
            LossConfig::default(),
        ),
        7 => (
            "cross-attention, both losses, hourglass",
            with_branch(true, FusionMode::CrossAttention, 2),
            LossConfig::default(),
        ),
        8 => (
            "plain CBAM fusion, both losses, hourglass",
            with_branch(true, FusionMode::CbamPlain, 2),
            LossConfig::default(),
        ),
        _ => return None,
    };
    Some(AblationRow {
        id,
        description,
        net,
        loss,
    })
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub row: AblationRow,
    pub parameter_count: usize,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub results: Vec<AblationResult>,
    /// `(statement, holds)` ordering checks.
    pub checks: Vec<(String, bool)>,
}

impl AblationReport {
    pub fn mae(&self, id: u8) -> Option<f64> {
        self.results.iter().find(|r| r.row.id == id).map(|r| r.summary.average_mae)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<4} {:<44} {:>10} {:>8} {:>7} {:>7}", "ID", "Setting", "Params", "MAE", "err15", "err30").unwrap();
        for r in &self.results {
            writeln!(
                out,
                "({})  {:<44} {:>10} {:>8.2} {:>6.1}% {:>6.1}%",
                r.row.id,
                r.row.description,
                r.parameter_count,
                r.summary.average_mae,
                100.0 * r.summary.average_err15,
                100.0 * r.summary.average_err30
            )
            .unwrap();
        }
        writeln!(out).unwrap();
        for (statement, holds) in &self.checks {
            writeln!(out, "[{}] {statement}", if *holds { "ok" } else { "FAILED" }).unwrap();
        }
        out
    }
}

/// Trains and evaluates every row in `ids` with the schedule of `base`,
/// writing per-row artifacts under `out_dir/id_N` and the table to
/// `out_dir/ablation.txt`.
pub fn run_ablation(
    base: &TrainConfig,
    ids: &[u8],
    data: &[DatasetObject],
    validation: &[DatasetObject],
    out_dir: &Path,
) -> Result<AblationReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let eval_set = if validation.is_empty() { data } else { validation };
    let mut results = Vec::with_capacity(ids.len());
    for &id in ids {
        let row = table_row(id, &base.net).ok_or_else(|| Error::BadParams(format!("no ablation row {id}")))?;
        let row_dir = out_dir.join(format!("id_{id}"));
        let config = TrainConfig {
            net: row.net.clone(),
            loss: LossConfig {
                omega: base.loss.omega,
                mu: base.loss.mu,
                ..row.loss
            },
            checkpoint_dir: row_dir.join("checkpoints"),
            ..base.clone()
        };
        let trained = train_with_validation(&config, data, validation)?;
        let summary = evaluate_model(&trained.model, eval_set, &row_dir.join("eval"))?;
        results.push(AblationResult {
            parameter_count: trained.model.parameter_count(),
            row,
            summary,
        });
    }
    let mut report = AblationReport {
        results,
        checks: Vec::new(),
    };
    if let Some(gradient_only) = report.mae(5) {
        report.checks.push((
            format!("gradient-loss-only row stays above {NON_CONVERGED_MAE} degrees MAE"),
            gradient_only > NON_CONVERGED_MAE,
        ));
        for other in [4, 6] {
            if let Some(mae) = report.mae(other) {
                report.checks.push((
                    format!("gradient-loss-only row is worse than row {other}"),
                    gradient_only > mae,
                ));
            }
        }
    }
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, report.render()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
