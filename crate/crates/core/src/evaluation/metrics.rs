use std::collections::BTreeMap;

use dgir_tensor::Real;
use serde::{Deserialize, Serialize};

use crate::error::{DgirError, Result};
use crate::geometry::{percent_negative_jacobian, warp_labels, DeformationField, LabelMap};
use crate::registration::{register_pair, RegistrationNet};
use crate::synth::RegistrationPair;

/// Overlap `2|A n B| / (|A| + |B|)` of one label; 1 when both are empty.
pub fn dice(a: &LabelMap, b: &LabelMap, label: u8) -> Result<f64> {
    if a.shape != b.shape {
        return Err(DgirError::Shape(format!("dice on {:?} vs {:?}", a.shape, b.shape)));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mean distance in grid units between the two maps over `region`
/// (every point when `None`).
pub fn endpoint_error<T: Real>(
    phi: &DeformationField<T>,
    gt: &DeformationField<T>,
    region: Option<&[bool]>,
) -> Result<f64> {
    if phi.coords().shape() != gt.coords().shape() {
        return Err(DgirError::Shape(format!("{:?} vs {:?}", phi.coords().shape(), gt.coords().shape())));
    }
    let shape = phi.spatial().to_vec();
    let vol: usize = shape.iter().product();
    if let Some(r) = region {
        if r.len() != vol {
            return Err(DgirError::Shape(format!("region of {} points for grid {shape:?}", r.len())));
        }
    }
    let d = phi.ndim();
    let a = phi.coords().to_f64_vec();
    let b = gt.coords().to_f64_vec();
    let (mut sum, mut count) = (0.0, 0usize);
    for n in 0..phi.batch() {
        for p in 0..vol {
            if region.is_some_and(|r| !r[p]) {
                continue;
            }
            let mut sq = 0.0;
            for (k, &extent) in shape.iter().enumerate().take(d) {
                let q = (n * d + k) * vol + p;
                let diff = (a[q] - b[q]) * (extent - 1) as f64 / 2.0;
                sq += diff * diff;
            }
            sum += sq.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(DgirError::UndefinedMetric("endpoint error over an empty region".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    /// Dice per label present in the fixed masks.
    pub dice: BTreeMap<u8, f64>,
    pub dice_mean: f64,
    pub pct_neg_jac: f64,
    pub epe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    /// Mean Dice of label `i + 1` over the pairs that contain it.
    pub dice_per_structure: Vec<f64>,
    /// Mean over pairs of the per-pair mean Dice.
    pub dice_mean: f64,
    pub pct_neg_jac: f64,
    /// Mean endpoint error, grid units.
    pub epe: f64,
    pub per_pair: Vec<PairMetrics>,
}

/// Metrics of one predicted map against a pair's masks and ground truth.
pub fn pair_metrics(pair: &RegistrationPair, phi: &DeformationField<f32>) -> Result<PairMetrics> {
    let warped = warp_labels(&pair.moving_masks, phi)?;
    let labels: Vec<u8> = {
        let mut l: Vec<u8> = pair.fixed_masks.labels.iter().copied().filter(|&v| v > 0).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let mut dice_map = BTreeMap::new();
    for &l in &labels {
        dice_map.insert(l, dice(&warped, &pair.fixed_masks, l)?);
    }
    let dice_mean = if dice_map.is_empty() {
        return Err(DgirError::UndefinedMetric("pair has no labelled structure".into()));
    } else {
        dice_map.values().sum::<f64>() / dice_map.len() as f64
    };
    Ok(PairMetrics {
        dice: dice_map,
        dice_mean,
        pct_neg_jac: percent_negative_jacobian(phi)?,
        epe: endpoint_error(phi, &pair.gt_field, None)?,
    })
}

pub fn aggregate(per_pair: Vec<PairMetrics>) -> Result<EvalReport> {
    if per_pair.is_empty() {
        return Err(DgirError::Data("empty test set".into()));
    }
    let n = per_pair.len() as f64;
    let max_label = per_pair.iter().filter_map(|m| m.dice.keys().max().copied()).max().unwrap_or(0);
    let dice_per_structure = (1..=max_label)
        .map(|l| {
            let v: Vec<f64> = per_pair.iter().filter_map(|m| m.dice.get(&l).copied()).collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect();
    Ok(EvalReport {
        pairs: per_pair.len(),
        dice_per_structure,
        dice_mean: per_pair.iter().map(|m| m.dice_mean).sum::<f64>() / n,
        pct_neg_jac: per_pair.iter().map(|m| m.pct_neg_jac).sum::<f64>() / n,
        epe: per_pair.iter().map(|m| m.epe).sum::<f64>() / n,
        per_pair,
    })
}

/// Registers every test pair and aggregates the metrics.
pub fn evaluate(net: &RegistrationNet<f32>, pairs: &[RegistrationPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(DgirError::Data("empty test set".into()));
    }
    let per_pair = dgir_tensor::exec::map_range(pairs.len(), |i| {
        let (phi, _) = register_pair(net, &pairs[i].moving, &pairs[i].fixed)?;
        pair_metrics(&pairs[i], &phi)
    });
    aggregate(per_pair.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Metrics of leaving every pair unregistered.
pub fn evaluate_identity(pairs: &[RegistrationPair]) -> Result<EvalReport> {
    let per_pair = pairs
        .iter()
        .map(|p| pair_metrics(p, &crate::geometry::make_identity(p.moving_masks.shape.as_slice())?))
        .collect::<Result<Vec<_>>>()?;
    aggregate(per_pair)
}
