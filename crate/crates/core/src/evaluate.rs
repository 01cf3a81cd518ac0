//! Benchmark harness: per-object reports, error images and a summary table
//! for the network and for the least-squares baseline.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::baseline::solve_l2;
use crate::dataset::DatasetObject;
use crate::domain::NormalMap;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::net::{Model, NetConfig};

pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Score the ground truth against itself instead of running the model.
    pub gt_as_prediction: bool,
    /// Reject checkpoints whose architecture differs from this one.
    pub expected_config: Option<NetConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectReport {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub objects: Vec<ObjectReport>,
    pub average_mae: f64,
    pub average_err15: f64,
    pub average_err30: f64,
}

impl EvalSummary {
    fn new(objects: Vec<ObjectReport>) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::EmptyList);
        }
        let n = objects.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| objects.iter().map(|o| f(&o.report)).sum::<f64>() / n;
        Ok(Self {
            average_mae: avg(|r| r.mae_degrees),
            average_err15: avg(|r| r.err15),
            average_err30: avg(|r| r.err30),
            objects,
        })
    }

    /// Objects as columns, metrics as rows, with a trailing `Avg.` column.
    pub fn table(&self) -> String {
        let width = self.objects.iter().map(|o| o.name.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        write!(out, "{:<8}", "Metric").unwrap();
        for o in &self.objects {
            write!(out, " {:>width$}", o.name).unwrap();
        }
        writeln!(out, " {:>width$}", "Avg.").unwrap();
        let rows: [(&str, fn(&EvalReport) -> f64, f64); 3] = [
            ("MAE", |r| r.mae_degrees, self.average_mae),
            ("err15", |r| r.err15, self.average_err15),
            ("err30", |r| r.err30, self.average_err30),
        ];
        for (label, f, avg) in rows {
            write!(out, "{label:<8}").unwrap();
            for o in &self.objects {
                write!(out, " {:>width$.2}", f(&o.report)).unwrap();
            }
            writeln!(out, " {avg:>width$.2}").unwrap();
        }
        out
    }
}

fn score(name: &str, pred: &NormalMap, object: &DatasetObject, out_dir: &Path) -> Result<ObjectReport> {
    let report = EvalReport::new(pred, object.ground_truth()?, &object.mask)?;
    let record = format!("object = {name}\n{}", report.to_record());
    let path = out_dir.join(format!("{name}.report.txt"));
    fs::write(&path, record).map_err(|e| Error::io(&path, e))?;
    report.save_error_image(&out_dir.join(format!("{name}.error.png")))?;
    Ok(ObjectReport {
        name: name.to_string(),
        report,
    })
}

fn finish(objects: Vec<ObjectReport>, out_dir: &Path) -> Result<EvalSummary> {
    let summary = EvalSummary::new(objects)?;
    let path = out_dir.join(SUMMARY_FILE);
    fs::write(&path, summary.table()).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Scores the last output level of `model` on every object.
pub fn evaluate_model(model: &Model, data: &[DatasetObject], out_dir: &Path) -> Result<EvalSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut objects = Vec::with_capacity(data.len());
    for object in data {
        let out = model.forward(&object.stack, &object.lights, &object.mask)?;
        objects.push(score(&object.name, &out.n3, object, out_dir)?);
    }
    finish(objects, out_dir)
}

pub fn evaluate(checkpoint: &Path, data: &[DatasetObject], out_dir: &Path, options: &EvalOptions) -> Result<EvalSummary> {
    if options.gt_as_prediction {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let objects = data
            .iter()
            .map(|o| score(&o.name, o.ground_truth()?, o, out_dir))
            .collect::<Result<Vec<_>>>()?;
        return finish(objects, out_dir);
    }
    let model = match &options.expected_config {
        Some(expected) => Model::load_expecting(checkpoint, expected)?,
        None => Model::load(checkpoint)?,
    };
    evaluate_model(&model, data, out_dir)
}

/// Least-squares baseline with the same outputs as [`evaluate`].
pub fn run_baseline(data: &[DatasetObject], out_dir: &Path) -> Result<EvalSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut objects = Vec::with_capacity(data.len());
    for object in data {
        object.ground_truth()?;
        let solution = solve_l2(&object.stack, &object.lights, &object.mask)?;
        objects.push(score(&object.name, &solution.normals, object, out_dir)?);
    }
    finish(objects, out_dir)
}
