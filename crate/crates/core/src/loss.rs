//! Training objectives: cosine loss, normal-gradient difference loss and the
//! weighted three-level total.
//!
//! All losses average over in-mask pixels. Pixels outside the mask hold the
//! `(0, 0, 0)` sentinel in both maps before gradients are taken, so the two
//! maps see the same silhouette edge.

use serde::{Deserialize, Serialize};

use crate::domain::{dot3, norm3, Mask, NormalMap, DEGENERATE_NORM};
use crate::error::{Error, Result};
use crate::net::MultiLevelOutput;
use crate::prep::central_abs_gradient;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Per-level weights.
    pub omega: [f64; 3],
    /// Weight of the gradient term inside each level.
    pub mu: f64,
    pub use_cosine: bool,
    pub use_gradient: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            omega: [0.5, 0.7, 1.0],
            mu: 0.05,
            use_cosine: true,
            use_gradient: true,
        }
    }
}

impl LossConfig {
    pub fn cosine_only() -> Self {
        Self {
            use_gradient: false,
            ..Self::default()
        }
    }

    pub fn gradient_only() -> Self {
        Self {
            use_cosine: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_cosine && !self.use_gradient {
            return Err(Error::BadParams("at least one loss term must be enabled".into()));
        }
        if !(self.mu >= 0.0) || self.omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::BadParams(format!(
                "loss weights must be finite with mu >= 0, got omega={:?} mu={}",
                self.omega, self.mu
            )));
        }
        Ok(())
    }

    fn level_total(&self, cosine: f64, gradient: f64) -> f64 {
        let a = if self.use_cosine { cosine } else { 0.0 };
        let g = if self.use_gradient { gradient } else { 0.0 };
        a + self.mu * g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelLoss {
    pub cosine: f64,
    pub gradient: f64,
    /// `cosine + mu * gradient`, with disabled terms zeroed.
    pub combined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub levels: [LevelLoss; 3],
    pub total: f64,
}

impl LossBreakdown {
    /// Assembles a breakdown from per-level `(cosine, gradient)` values.
    pub fn from_terms(config: &LossConfig, terms: [(f64, f64); 3]) -> Self {
        let levels = terms.map(|(cosine, gradient)| LevelLoss {
            cosine,
            gradient,
            combined: config.level_total(cosine, gradient),
        });
        Self {
            total: Self::weighted(config, levels.map(|l| l.combined)),
            levels,
        }
    }

    /// `sum_k omega_k * loss_k`.
    pub fn weighted(config: &LossConfig, level_losses: [f64; 3]) -> f64 {
        config
            .omega
            .iter()
            .zip(level_losses)
            .fold(0.0, |acc, (w, l)| acc + w * l)
    }

    /// Element-wise mean of several breakdowns; the total is recomputed from
    /// the averaged levels so it stays an exact weighted sum.
    pub fn mean(config: &LossConfig, items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let mut terms = [(0.0, 0.0); 3];
        for item in items {
            for (t, l) in terms.iter_mut().zip(&item.levels) {
                t.0 += l.cosine;
                t.1 += l.gradient;
            }
        }
        Self::from_terms(config, terms.map(|(a, g)| (a / n, g / n)))
    }
}

fn check_pair(pred: &NormalMap, gt: &NormalMap, mask: &Mask) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    mask.ensure_dims(gt.height(), gt.width(), "normal map")?;
    mask.ensure_nonempty()
}

fn masked(normals: &[[f64; 3]], mask: &Mask) -> Vec<[f64; 3]> {
    normals
        .iter()
        .zip(mask.valid())
        .map(|(n, &v)| if v { *n } else { [0.0; 3] })
        .collect()
}

/// Mean of `1 - n . n~` over in-mask pixels.
pub fn cosine_loss(pred: &NormalMap, gt: &NormalMap, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let (sum, count) = pred
        .normals()
        .iter()
        .zip(gt.normals())
        .zip(mask.valid())
        .filter(|(_, &v)| v)
        .fold((0.0, 0usize), |(s, c), ((p, g), _)| (s + (1.0 - dot3(p, g)), c + 1));
    Ok(sum / count as f64)
}

/// Per-component `|dn/dx| + |dn/dy|` by central differences with replicated
/// borders, `(H, W, 3)`.
pub fn normal_gradient(normals: &NormalMap) -> Result<Vec<[f64; 3]>> {
    if normals.height() < 2 || normals.width() < 2 {
        return Err(Error::Precondition(format!(
            "normal gradient needs at least 2x2 pixels, got {}x{}",
            normals.height(),
            normals.width()
        )));
    }
    Ok(central_abs_gradient(
        normals.normals(),
        normals.height(),
        normals.width(),
    ))
}

fn gradient_residuals(pred: &[[f64; 3]], gt: &[[f64; 3]], height: usize, width: usize) -> Vec<[f64; 3]> {
    let gp = central_abs_gradient(pred, height, width);
    let gg = central_abs_gradient(gt, height, width);
    gp.iter()
        .zip(&gg)
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        .collect()
}

/// Mean over in-mask pixels of `|g(n) - g(n~)|_2`.
pub fn gradient_loss(pred: &NormalMap, gt: &NormalMap, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    if pred.height() < 2 || pred.width() < 2 {
        return Err(Error::Precondition("gradient loss needs at least 2x2 pixels".into()));
    }
    let residuals = gradient_residuals(
        &masked(pred.normals(), mask),
        &masked(gt.normals(), mask),
        pred.height(),
        pred.width(),
    );
    let (sum, count) = residuals
        .iter()
        .zip(mask.valid())
        .filter(|(_, &v)| v)
        .fold((0.0, 0usize), |(s, c), (d, _)| (s + norm3(d), c + 1));
    Ok(sum / count as f64)
}

/// Value and gradient of one level's terms with respect to the raw
/// (un-normalized) prediction.
struct LevelEval {
    cosine: f64,
    gradient: f64,
    d_cosine: Vec<[f64; 3]>,
    d_gradient: Vec<[f64; 3]>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn eval_level(raw: &NormalMap, gt: &NormalMap, mask: &Mask, with_gradient_term: bool) -> Result<LevelEval> {
    check_pair(raw, gt, mask)?;
    let (height, width) = (raw.height(), raw.width());
    let pixels = height * width;
    let count = mask.count() as f64;

    // renormalize, keeping the norms for the chain rule
    let mut unit = vec![[0.0; 3]; pixels];
    let mut norms = vec![0.0; pixels];
    for (p, (n, &valid)) in raw.normals().iter().zip(mask.valid()).enumerate() {
        if !valid {
            continue;
        }
        let len = norm3(n);
        if !(len >= DEGENERATE_NORM) {
            return Err(Error::DegenerateNormal {
                row: p / width,
                col: p % width,
            });
        }
        norms[p] = len;
        unit[p] = [n[0] / len, n[1] / len, n[2] / len];
    }
    let target = masked(gt.normals(), mask);

    let mut cosine = 0.0;
    let mut d_cosine = vec![[0.0; 3]; pixels];
    for p in 0..pixels {
        if mask.valid()[p] {
            cosine += 1.0 - dot3(&unit[p], &target[p]);
            let t = target[p];
            d_cosine[p] = [-t[0] / count, -t[1] / count, -t[2] / count];
        }
    }
    cosine /= count;

    let mut gradient = 0.0;
    let mut d_gradient = vec![[0.0; 3]; pixels];
    if with_gradient_term {
        if height < 2 || width < 2 {
            return Err(Error::Precondition("gradient loss needs at least 2x2 pixels".into()));
        }
        let residuals = gradient_residuals(&unit, &target, height, width);
        for row in 0..height {
            let up = row.saturating_sub(1);
            let down = (row + 1).min(height - 1);
            for col in 0..width {
                let p = row * width + col;
                if !mask.valid()[p] {
                    continue;
                }
                let d = residuals[p];
                let len = norm3(&d);
                gradient += len;
                if len < DEGENERATE_NORM {
                    continue;
                }
                let left = col.saturating_sub(1);
                let right = (col + 1).min(width - 1);
                let (r, l) = (row * width + right, row * width + left);
                let (dn, u) = (down * width + col, up * width + col);
                for c in 0..3 {
                    let upstream = d[c] / len / count;
                    let sx = sign(unit[r][c] - unit[l][c]) * 0.5 * upstream;
                    let sy = sign(unit[dn][c] - unit[u][c]) * 0.5 * upstream;
                    d_gradient[r][c] += sx;
                    d_gradient[l][c] -= sx;
                    d_gradient[dn][c] += sy;
                    d_gradient[u][c] -= sy;
                }
            }
        }
        gradient /= count;
    }

    // chain through n = u / |u|; pixels outside the mask are constants
    let project = |grads: &mut Vec<[f64; 3]>| {
        for p in 0..pixels {
            if !mask.valid()[p] {
                grads[p] = [0.0; 3];
                continue;
            }
            let g = grads[p];
            let n = unit[p];
            let along = dot3(&g, &n);
            grads[p] = [
                (g[0] - n[0] * along) / norms[p],
                (g[1] - n[1] * along) / norms[p],
                (g[2] - n[2] * along) / norms[p],
            ];
        }
    };
    project(&mut d_cosine);
    project(&mut d_gradient);

    Ok(LevelEval {
        cosine,
        gradient,
        d_cosine,
        d_gradient,
    })
}

/// Weighted three-level loss and its gradient with respect to each raw level
/// prediction. Predictions are renormalized inside the loss.
pub fn total_loss_with_grad(
    levels: [&NormalMap; 3],
    gt: &NormalMap,
    mask: &Mask,
    config: &LossConfig,
) -> Result<(LossBreakdown, [Vec<[f64; 3]>; 3])> {
    let mut terms = [(0.0, 0.0); 3];
    let mut grads: [Vec<[f64; 3]>; 3] = Default::default();
    for (k, raw) in levels.iter().enumerate() {
        let eval = eval_level(raw, gt, mask, config.use_gradient)?;
        terms[k] = (eval.cosine, eval.gradient);
        let w_cos = if config.use_cosine { config.omega[k] } else { 0.0 };
        let w_grad = if config.use_gradient { config.omega[k] * config.mu } else { 0.0 };
        grads[k] = eval
            .d_cosine
            .iter()
            .zip(&eval.d_gradient)
            .map(|(a, g)| {
                [
                    w_cos * a[0] + w_grad * g[0],
                    w_cos * a[1] + w_grad * g[1],
                    w_cos * a[2] + w_grad * g[2],
                ]
            })
            .collect();
    }
    Ok((LossBreakdown::from_terms(config, terms), grads))
}

pub fn total_loss(outputs: &MultiLevelOutput, gt: &NormalMap, mask: &Mask, config: &LossConfig) -> Result<LossBreakdown> {
    Ok(total_loss_with_grad(outputs.levels(), gt, mask, config)?.0)
}
