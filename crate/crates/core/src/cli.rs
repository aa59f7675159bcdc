//! `dgir <command> --config <path> [--set key=value ...] --out <dir>`

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_denoiser, load_registration, save_denoiser, save_registration};
use crate::config::RunConfig;
use crate::diffusion::FrozenDenoiser;
use crate::error::{DgirError, Result};
use crate::evaluation::{
    boundary_keypoints, evaluate, keypoint_benchmark, similarity_heatmap, write_ablation, write_metrics_csv, write_pgm,
    CsvRow, MatchContext, Measure,
};
use crate::io::{hash_tree, sha256_hex, write_json, write_raw};
use crate::losses::{LnccConfig, LossKind};
use crate::pipeline::{registration_pairs, run_ablation, run_denoiser_training, run_registration_training};
use crate::synth::{generate_corpus, read_corpus, write_corpus, Corpus};

#[derive(Debug, Parser)]
#[command(name = "dgir", version, about = "Registration with diffusion-feature similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic missing-anatomy corpus.
    GenData(RunArgs),
    /// Pre-train the feature denoiser.
    TrainDiffusion(RunArgs),
    /// Train a registration network with the configured loss.
    TrainRegistration(RunArgs),
    /// Score a registration checkpoint on the test split.
    Evaluate(RunArgs),
    /// Similarity heatmaps and keypoint matching.
    Heatmap(RunArgs),
    /// Sweep the feature probe over timesteps or blocks.
    Ablate(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set registration.loss.kind=lncc`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainDiffusion(_) => "train-diffusion",
            Command::TrainRegistration(_) => "train-registration",
            Command::Evaluate(_) => "evaluate",
            Command::Heatmap(_) => "heatmap",
            Command::Ablate(_) => "ablate",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::GenData(a)
            | Command::TrainDiffusion(a)
            | Command::TrainRegistration(a)
            | Command::Evaluate(a)
            | Command::Heatmap(a)
            | Command::Ablate(a) => a,
        }
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Content hash of every input artifact, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

pub fn exit_code(err: &DgirError) -> i32 {
    match err {
        DgirError::Config { .. } => 2,
        DgirError::MissingArtifact(_) => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: &Command) -> Result<()> {
    let args = cmd.args();
    let env_seed = std::env::var("DGIR_SEED").ok();
    let cfg = RunConfig::load(&args.config, &args.set, env_seed.as_deref())?;
    let out = &args.out;
    std::fs::create_dir_all(out).map_err(|e| DgirError::io(out, e))?;
    let config_json = cfg.to_json();
    std::fs::write(out.join("config.json"), &config_json).map_err(|e| DgirError::io(out.join("config.json"), e))?;
    let mut inputs = BTreeMap::new();
    match cmd {
        Command::GenData(_) => gen_data(&cfg, out)?,
        Command::TrainDiffusion(_) => train_diffusion(&cfg, out, &mut inputs)?,
        Command::TrainRegistration(_) => train_registration(&cfg, out, &mut inputs)?,
        Command::Evaluate(_) => evaluate_cmd(&cfg, out, &mut inputs)?,
        Command::Heatmap(_) => heatmap(&cfg, out, &mut inputs)?,
        Command::Ablate(_) => ablate(&cfg, out, &mut inputs)?,
    }
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        seed: cfg.seed,
        inputs,
    };
    write_json(&out.join("run_manifest.json"), &manifest)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| DgirError::Config { key: key.into(), detail: "required by this command".into() })
}

fn load_corpus(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) -> Result<Corpus> {
    let dir = required(&cfg.paths.corpus, "paths.corpus")?;
    let corpus = read_corpus(dir)?;
    inputs.insert("corpus".into(), hash_tree(dir)?);
    Ok(corpus)
}

fn load_frozen(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) -> Result<FrozenDenoiser<f32>> {
    let dir = required(&cfg.paths.denoiser, "paths.denoiser")?;
    let (net, manifest) = load_denoiser(dir)?;
    inputs.insert("denoiser".into(), hash_tree(dir)?);
    Ok(FrozenDenoiser::new(net, manifest.schedule))
}

fn progress_every(steps: usize) -> usize {
    (steps / 20).max(1)
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.data.corpus_spec(cfg.seed);
    let corpus = generate_corpus(&spec)?;
    write_corpus(out, &corpus)?;
    eprintln!("wrote {} train and {} test samples to {}", corpus.train.len(), corpus.test.len(), out.display());
    Ok(())
}

fn train_diffusion(cfg: &RunConfig, out: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    let corpus = load_corpus(cfg, inputs)?;
    let every = progress_every(cfg.diffusion.steps);
    let (net, sched, curve) = run_denoiser_training(cfg, &corpus, |s, l| {
        if s % every == 0 {
            eprintln!("denoiser step {s} loss {l:.5}");
        }
    })?;
    save_denoiser(out, &net, &sched, curve.len() as u64, cfg.seed)?;
    write_json(&out.join("loss_curve.json"), &curve)
}

fn train_registration(cfg: &RunConfig, out: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    let corpus = load_corpus(cfg, inputs)?;
    let frozen = match cfg.registration.loss.kind {
        LossKind::Dgir => Some(load_frozen(cfg, inputs)?),
        _ => None,
    };
    let every = progress_every(cfg.registration.steps);
    let (net, state) = run_registration_training(cfg, &corpus, frozen.as_ref(), |_, st| {
        if st.step % every as u64 == 0 {
            if let Some(h) = st.history.last() {
                eprintln!("registration step {} total {:.5} sim {:.5} reg {:.5}", h.step, h.total, h.sim, h.reg);
            }
        }
        Ok(())
    })?;
    save_registration(out, &net, state.step, cfg.seed, &state.history)
}

fn evaluate_cmd(cfg: &RunConfig, out: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    let corpus = load_corpus(cfg, inputs)?;
    let dir = required(&cfg.paths.registration, "paths.registration")?;
    let (net, _, _) = load_registration(dir)?;
    inputs.insert("registration".into(), hash_tree(dir)?);
    let report = evaluate(&net, &registration_pairs(&corpus.test)?)?;
    write_json(&out.join("eval_report.json"), &report)?;
    let row = CsvRow {
        value: cfg.registration.loss.kind.name().to_string(),
        seed: cfg.seed,
        dice_mean: report.dice_mean,
        dice_per_structure: report.dice_per_structure.clone(),
        pct_neg_jac: report.pct_neg_jac,
        epe: report.epe,
    };
    write_metrics_csv(&out.join("eval.csv"), &[row])?;
    eprintln!("dice {:.4} %|J|<0 {:.4} epe {:.4}", report.dice_mean, report.pct_neg_jac, report.epe);
    Ok(())
}

/// Marks `points` on a copy of `image` with 3x3 squares of `value`.
fn overlay(image: &[f64], shape: [usize; 2], marks: &[([f64; 2], f64)]) -> Vec<f64> {
    let mut img = image.to_vec();
    for (p, v) in marks {
        let (cy, cx) = (p[0].round() as i64, p[1].round() as i64);
        for y in cy - 1..=cy + 1 {
            for x in cx - 1..=cx + 1 {
                if y >= 0 && x >= 0 && (y as usize) < shape[0] && (x as usize) < shape[1] {
                    img[y as usize * shape[1] + x as usize] = *v;
                }
            }
        }
    }
    img
}

fn heatmap(cfg: &RunConfig, out: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    let corpus = load_corpus(cfg, inputs)?;
    if corpus.spec.shape.len() != 2 {
        return Err(DgirError::Config { key: "data.shape".into(), detail: "heatmaps need a 2D corpus".into() });
    }
    let frozen = load_frozen(cfg, inputs)?;
    let pairs = registration_pairs(&corpus.test)?;
    let h = &cfg.heatmap;
    let pair = pairs.get(h.sample).ok_or_else(|| DgirError::Config {
        key: "heatmap.sample".into(),
        detail: format!("test split has {} pairs", pairs.len()),
    })?;
    let shape = [corpus.spec.shape[0], corpus.spec.shape[1]];
    let loss = cfg.registration.loss_for(2);
    let point = boundary_keypoints(&pair.fixed_masks, 1, h.patch / 2 + 1, cfg.seed)?
        .first()
        .copied()
        .ok_or_else(|| DgirError::Data("sample pair has no boundary points".into()))?;
    let ctx = MatchContext {
        frozen: Some(&frozen),
        probe: loss.probe,
        patch: h.patch,
        lncc_epsilon: loss.image_lncc.epsilon,
        ngf_eta: loss.ngf_eta,
    };
    write_pgm(&out.join("fixed.pgm"), shape, &pair.fixed.to_f64_vec())?;
    write_pgm(&out.join("moving.pgm"), shape, &pair.moving.to_f64_vec())?;
    for (measure, name) in
        [(Measure::Mse, "mse"), (Measure::Lncc, "lncc"), (Measure::Ngf, "ngf"), (Measure::DiffusionCosine, "diffusion-cosine")]
    {
        let map = similarity_heatmap(&pair.fixed, point, &pair.moving, measure, &ctx)?;
        write_pgm(&out.join(format!("heatmap_{name}.pgm")), shape, &map.normalized())?;
        let raw: Vec<f32> = map.values.iter().map(|&v| v as f32).collect();
        write_raw(&out.join(format!("heatmap_{name}")), &shape, &raw)?;
    }
    let window = LnccConfig::new(h.window, loss.feature_lncc.epsilon)?;
    let count = h.pairs.min(pairs.len());
    let report = keypoint_benchmark(&pairs[..count], &frozen, &loss.probe, h.keypoints_per_pair, h.patch, &window, cfg.seed)?;
    write_json(&out.join("matches.json"), &report)?;
    let marks: Vec<([f64; 2], f64)> = report
        .matches
        .iter()
        .filter(|m| m.pair == 0)
        .flat_map(|m| [(m.truth, 1.0), ([m.cosine[0] as f64, m.cosine[1] as f64], 0.0)])
        .collect();
    write_pgm(&out.join("matches_overlay.pgm"), shape, &overlay(&pairs[0].moving.to_f64_vec(), shape, &marks))?;
    eprintln!(
        "keypoints {} error cosine {:.3} windowed {:.3} intensity {:.3}",
        report.keypoints, report.cosine_error, report.windowed_error, report.intensity_error
    );
    Ok(())
}

fn ablate(cfg: &RunConfig, out: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    let corpus = load_corpus(cfg, inputs)?;
    let frozen = load_frozen(cfg, inputs)?;
    let rows = run_ablation(cfg, &corpus, &frozen, |r| {
        eprintln!("{} {} seed {} dice {:.4}", cfg.ablation.axis.name(), r.value, r.seed, r.report.dice_mean);
    })?;
    write_json(&out.join("ablation.json"), &rows)?;
    write_ablation(out, cfg.ablation.axis, cfg.ablation.fixed_value, &rows)
}
