//! Multi-level supervised training on random crops.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, Tensor};
use crate::dataset::DatasetObject;
use crate::error::{Error, Result};
use crate::loss::{total_loss_with_grad, LossBreakdown, LossConfig};
use crate::metrics::EvalReport;
use crate::net::{normal_map_from_tensor, Encoded, Model, NetConfig, SIZE_MULTIPLE};

pub const LOG_FILE: &str = "train_log.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Attempts at finding a crop that overlaps the mask before giving up.
const CROP_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub loss: LossConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    /// Inclusive bounds on the images drawn per batch.
    pub images_per_sample_range: (usize, usize),
    pub learning_rate: f64,
    /// `(factor, every_n_epochs)`.
    pub lr_decay: (f64, usize),
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            loss: LossConfig::default(),
            epochs: 10,
            steps_per_epoch: 100,
            batch_size: 32,
            crop_size: 32,
            images_per_sample_range: (8, 32),
            learning_rate: 1e-3,
            lr_decay: (0.5, 5),
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, data: &[DatasetObject]) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        let bad = |msg: String| Err(Error::BadParams(msg));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be positive".into());
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(SIZE_MULTIPLE) {
            return bad(format!("crop_size must be a positive multiple of {SIZE_MULTIPLE}, got {}", self.crop_size));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay.0 > 0.0) || self.lr_decay.1 == 0 {
            return bad("learning rate and decay must be positive".into());
        }
        let (lo, hi) = self.images_per_sample_range;
        if lo == 0 || lo > hi {
            return bad(format!("invalid images_per_sample_range ({lo}, {hi})"));
        }
        if data.is_empty() {
            return Err(Error::EmptyList);
        }
        for obj in data {
            obj.ground_truth()?;
            if obj.stack.count() < hi {
                return bad(format!(
                    "object {} has {} images, fewer than images_per_sample_range max {hi}",
                    obj.name,
                    obj.stack.count()
                ));
            }
            if obj.stack.height() < self.crop_size || obj.stack.width() < self.crop_size {
                return bad(format!("object {} is smaller than crop_size {}", obj.name, self.crop_size));
            }
            obj.mask.ensure_nonempty()?;
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.0.powi((epoch / self.lr_decay.1) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub epochs: Vec<EpochRecord>,
    /// Total loss of every optimization step.
    pub step_losses: Vec<f64>,
    pub model: Model,
}

/// Trains on `data` and validates on the same objects.
pub fn train(config: &TrainConfig, data: &[DatasetObject]) -> Result<TrainSummary> {
    train_with_validation(config, data, data)
}

/// Mean n3 angular error of `model` over `objects`.
pub fn validation_mae(model: &Model, objects: &[DatasetObject]) -> Result<f64> {
    let mut sum = 0.0;
    for obj in objects {
        let out = model.forward(&obj.stack, &obj.lights, &obj.mask)?;
        sum += EvalReport::new(&out.n3, obj.ground_truth()?, &obj.mask)?.mae_degrees;
    }
    Ok(sum / objects.len() as f64)
}

struct Sample {
    encoded: Encoded,
    gt: crate::domain::NormalMap,
    mask: crate::domain::Mask,
}

fn draw_sample(model: &Model, obj: &DatasetObject, crop: usize, images: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (h, w) = (obj.stack.height(), obj.stack.width());
    let mut origin = (0, 0);
    for _ in 0..CROP_ATTEMPTS {
        origin = (rng.random_range(0..=h - crop), rng.random_range(0..=w - crop));
        if obj.mask.crop(origin.0, origin.1, crop, crop).count() > 0 {
            break;
        }
    }
    let mask = obj.mask.crop(origin.0, origin.1, crop, crop);
    if mask.count() == 0 {
        // fall back to a crop centred on the first valid pixel
        let p = obj.mask.valid().iter().position(|&v| v).ok_or(Error::EmptyMask)?;
        origin = ((p / w).saturating_sub(crop / 2).min(h - crop), (p % w).saturating_sub(crop / 2).min(w - crop));
    }
    let mut chosen = sample(rng, obj.stack.count(), images).into_vec();
    chosen.sort_unstable();
    let picked = obj.select_images(&chosen);
    let stack = picked.stack.crop(origin.0, origin.1, crop, crop);
    Ok(Sample {
        encoded: model.encode_sample(&stack, &picked.lights)?,
        gt: obj.ground_truth()?.crop(origin.0, origin.1, crop, crop),
        mask: obj.mask.crop(origin.0, origin.1, crop, crop),
    })
}

fn log_header(out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "kind\tepoch\tstep\tlearning_rate\ttotal")?;
    for k in 1..=3 {
        write!(out, "\tcosine_{k}\tgradient_{k}\tloss_{k}")?;
    }
    writeln!(out, "\tvalidation_mae")
}

fn log_step(out: &mut impl Write, epoch: usize, step: usize, lr: f64, b: &LossBreakdown) -> std::io::Result<()> {
    write!(out, "step\t{epoch}\t{step}\t{lr}\t{}", b.total)?;
    for l in &b.levels {
        write!(out, "\t{}\t{}\t{}", l.cosine, l.gradient, l.combined)?;
    }
    writeln!(out, "\t")
}

fn log_validation(out: &mut impl Write, epoch: usize, step: usize, lr: f64, mae: f64) -> std::io::Result<()> {
    write!(out, "validation\t{epoch}\t{step}\t{lr}\t")?;
    for _ in 0..3 {
        write!(out, "\t\t\t")?;
    }
    writeln!(out, "{mae}")
}

/// Runs the configured schedule, writing `epoch_XXX.ckpt` after every epoch
/// and `best.ckpt` for the lowest validation MAE.
pub fn train_with_validation(
    config: &TrainConfig,
    data: &[DatasetObject],
    validation: &[DatasetObject],
) -> Result<TrainSummary> {
    config.validate(data)?;
    let validation = if validation.is_empty() { data } else { validation };
    for obj in validation {
        obj.ground_truth()?;
    }
    let dir = &config.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let io_err = |e| Error::io(&log_path, e);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err)?);
    log_header(&mut log).map_err(io_err)?;

    let mut model = Model::new(config.net.clone())?;
    let mut adam = Adam::new(model.params(), config.learning_rate as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.images_per_sample_range;
    let mut best = f64::INFINITY;
    let best_path = dir.join(BEST_CHECKPOINT);
    let mut last_path = best_path.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::with_capacity(config.epochs * config.steps_per_epoch);
    let mut step = 0;

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        adam.learning_rate = lr as f32;
        let mut epoch_loss = 0.0;
        for _ in 0..config.steps_per_epoch {
            let images = rng.random_range(lo..=hi);
            let samples = (0..config.batch_size)
                .map(|_| {
                    let obj = &data[rng.random_range(0..data.len())];
                    draw_sample(&model, obj, config.crop_size, images, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let encoded: Vec<Encoded> = samples.iter().map(|s| s.encoded.clone()).collect();
            let batch = Encoded::concat(&encoded);

            let mut graph = Graph::new();
            let levels = model.forward_graph(&mut graph, &batch, images);
            let shape = graph.value(levels[0]).shape;
            let mut seeds: Vec<Tensor> = (0..3).map(|_| Tensor::zeros(shape)).collect();
            let mut breakdowns = Vec::with_capacity(samples.len());
            let scale = 1.0 / samples.len() as f64;
            let plane = shape[2] * shape[3];
            for (b, s) in samples.iter().enumerate() {
                let maps = levels
                    .iter()
                    .map(|&v| normal_map_from_tensor(graph.value(v), b))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|_| Error::DivergedLoss { step, value: f64::NAN })?;
                let (breakdown, grads) =
                    total_loss_with_grad([&maps[0], &maps[1], &maps[2]], &s.gt, &s.mask, &config.loss)?;
                for (seed, grad) in seeds.iter_mut().zip(&grads) {
                    let item = &mut seed.data[b * 3 * plane..(b + 1) * 3 * plane];
                    for (p, g) in grad.iter().enumerate() {
                        for c in 0..3 {
                            item[c * plane + p] = (g[c] * scale) as f32;
                        }
                    }
                }
                breakdowns.push(breakdown);
            }
            let breakdown = LossBreakdown::mean(&config.loss, &breakdowns);
            if !breakdown.total.is_finite() {
                return Err(Error::DivergedLoss {
                    step,
                    value: breakdown.total,
                });
            }
            // the same output variable may back several levels; seeds then add up
            let seeded: Vec<_> = levels.iter().copied().zip(seeds).collect();
            let grads = graph.backward(model.params(), &seeded);
            adam.step(model.params_mut(), &grads);

            log_step(&mut log, epoch, step, lr, &breakdown).map_err(io_err)?;
            epoch_loss += breakdown.total;
            step_losses.push(breakdown.total);
            step += 1;
        }
        let mae = validation_mae(&model, validation)?;
        log_validation(&mut log, epoch, step, lr, mae).map_err(io_err)?;
        log.flush().map_err(io_err)?;
        last_path = dir.join(format!("epoch_{epoch:03}.ckpt"));
        model.save(&last_path)?;
        if mae < best {
            best = mae;
            model.save(&best_path)?;
        }
        epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / config.steps_per_epoch as f64,
            validation_mae: mae,
        });
    }
    if !best.is_finite() {
        // validation never produced a finite error; keep the last weights as best
        model.save(&best_path)?;
    }
    Ok(TrainSummary {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log_path,
        epochs,
        step_losses,
        model,
    })
}
