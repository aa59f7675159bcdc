use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::render::{line_plot_svg, write_metrics_csv, write_svg, CsvRow};
use crate::diffusion::FrozenDenoiser;
use crate::error::Result;
use crate::losses::{LossConfig, LossKind};
use crate::registration::{train, Pair, RegNetConfig, RegTraining, RegistrationNet};
use crate::synth::RegistrationPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Block,
    Timestep,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Block => "block",
            SweepAxis::Timestep => "timestep",
        }
    }
}

/// Everything a sweep trains and evaluates with.
pub struct SweepSetup<'a> {
    pub train_pairs: &'a [Pair<f32>],
    pub test_pairs: &'a [RegistrationPair],
    pub frozen: &'a FrozenDenoiser<f32>,
    pub loss: LossConfig,
    pub net: RegNetConfig,
    pub training: RegTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: usize,
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains and evaluates one registration net with the probe's `axis` set
/// to `value`.
pub fn run_probe_config(setup: &SweepSetup, axis: SweepAxis, fixed_value: usize, value: usize, seed: u64) -> Result<EvalReport> {
    let mut loss = setup.loss.with_kind(LossKind::Dgir);
    match axis {
        SweepAxis::Block => {
            loss.probe.t = fixed_value;
            loss.probe.block = value;
        }
        SweepAxis::Timestep => {
            loss.probe.block = fixed_value;
            loss.probe.t = value;
        }
    }
    let mut net = RegistrationNet::new(setup.net.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let training = RegTraining { seed, ..setup.training.clone() };
    train(&mut net, setup.train_pairs, &loss, Some(setup.frozen), &training, |_, _| Ok(()))?;
    evaluate(&net, setup.test_pairs)
}

/// One short training run per `(value, seed)`, in that order.
pub fn ablation_sweep(
    setup: &SweepSetup,
    axis: SweepAxis,
    fixed_value: usize,
    values: &[usize],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        for &seed in seeds {
            let report = run_probe_config(setup, axis, fixed_value, value, seed)?;
            let row = AblationRow { value, seed, report };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean Dice over seeds for each value, in first-seen order.
pub fn seed_means(rows: &[AblationRow]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|e| e.0 == r.value) {
            Some(e) => {
                e.1 += r.report.dice_mean;
                e.2 += 1;
            }
            None => out.push((r.value, r.report.dice_mean, 1)),
        }
    }
    out.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect()
}

pub fn ablation_rows_csv(rows: &[AblationRow]) -> Vec<CsvRow> {
    rows.iter()
        .map(|r| CsvRow {
            value: r.value.to_string(),
            seed: r.seed,
            dice_mean: r.report.dice_mean,
            dice_per_structure: r.report.dice_per_structure.clone(),
            pct_neg_jac: r.report.pct_neg_jac,
            epe: r.report.epe,
        })
        .collect()
}

/// Writes `ablation_<axis>.csv` and `ablation_<axis>.svg` into `dir`.
pub fn write_ablation(dir: &Path, axis: SweepAxis, fixed_value: usize, rows: &[AblationRow]) -> Result<()> {
    write_metrics_csv(&dir.join(format!("ablation_{}.csv", axis.name())), &ablation_rows_csv(rows))?;
    let points: Vec<(String, f64)> = seed_means(rows).into_iter().map(|(v, d)| (v.to_string(), d)).collect();
    let (title, xl) = match axis {
        SweepAxis::Block => (format!("Dice vs block (t = {fixed_value})"), "block"),
        SweepAxis::Timestep => (format!("Dice vs timestep (block {fixed_value})"), "timestep"),
    };
    write_svg(&dir.join(format!("ablation_{}.svg", axis.name())), &line_plot_svg(&title, xl, "mean Dice", &points))
}
