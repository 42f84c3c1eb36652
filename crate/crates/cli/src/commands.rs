use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use quadlat::control::{plan_gait_cycle, read_trajectory_csv, LocoConfig};
use quadlat::dataset::io::sidecar_path;
use quadlat::dataset::{
    generate_dataset, read_dataset, sample_configuration, write_dataset, Dataset, SamplerConfig, StanceId,
};
use quadlat::eval::{
    evaluate_gait, gait_start, latent_diagnostics, run_margin_study, timing_bench, write_diagnostics,
    write_study_reports, write_timing_json, StudyConfig, DIAGNOSTIC_FILES, STUDY_FILES,
};
use quadlat::exec::{init_workers, Exec};
use quadlat::nn::{
    load_baseline, load_vae, save_baseline, save_vae, train_baseline, train_vae, BaselineArch, ModelMeta, TrainConfig,
    TrainingLog, VaeArch, VaeWeights,
};
use quadlat::robot::RobotParams;
use serde::Serialize;
use serde_json::json;

use crate::config::FileConfig;
use crate::manifest::{file_key, parent_dir, prepare_outputs, Manifest};
use crate::{Cli, Command, UsageError};

/// Wrap a configuration problem so it maps to the usage exit code.
fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(UsageError(e.to_string()))
}

struct Ctx {
    file: FileConfig,
    params: RobotParams,
    exec: Exec,
    force: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let file = FileConfig::load(g.config.as_deref()).map_err(usage)?;
    let params = file.robot_params(g.params.as_deref()).map_err(usage)?;
    params.validate().map_err(usage)?;
    init_workers(g.workers.or(file.workers));
    let ctx = Ctx {
        file,
        params,
        exec: if g.sequential { Exec::Sequential } else { Exec::Parallel },
        force: g.force,
    };
    match cli.command {
        Command::GenData(a) => a.run(&ctx),
        Command::Train(a) => a.run(&ctx),
        Command::TrainBaseline(a) => a.run(&ctx),
        Command::Stabilize(a) => a.run(&ctx),
        Command::Walk(a) => a.run(&ctx),
        Command::Eval(a) => a.run(&ctx),
        Command::Bench(a) => a.run(&ctx),
        Command::Diag(a) => a.run(&ctx),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn load_data(path: &Path, ctx: &Ctx, m: &mut Manifest) -> Result<Dataset> {
    let loaded =
        read_dataset(path, Some(&ctx.params)).with_context(|| format!("reading dataset {}", path.display()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    m.input(path)?;
    m.input(&sidecar_path(path))?;
    Ok(loaded.dataset)
}

fn check_params(meta: &ModelMeta, ctx: &Ctx, what: &Path) -> Result<()> {
    if meta.params_hash != ctx.params.hash_hex() {
        return Err(usage(format!(
            "{} was trained with different robot parameters (hash {})",
            what.display(),
            meta.params_hash
        )));
    }
    Ok(())
}

fn load_model(path: &Path, ctx: &Ctx, m: &mut Manifest) -> Result<VaeWeights> {
    let w = load_vae(path).with_context(|| format!("loading model {}", path.display()))?;
    check_params(&w.meta, ctx, path)?;
    m.input(path)?;
    Ok(w)
}

fn stance(id: u8) -> Result<StanceId> {
    StanceId::new(id).map_err(usage)
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Number of samples.
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Root seed; sample i uses a seed derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training fraction.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Append the CoM to each state.
    #[arg(long)]
    pub with_com: bool,
    /// Half-width of random base roll and pitch, in radians.
    #[arg(long)]
    pub tilt: Option<f64>,
    /// Dataset CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

impl GenData {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let mut sampler = ctx.file.sampler.clone().unwrap_or_default();
        sampler.with_com |= self.with_com;
        if let Some(t) = self.tilt {
            sampler.tilt_range = t;
        }
        let side = sidecar_path(&self.out);
        prepare_outputs(&[self.out.clone(), side.clone()], ctx.force)?;
        let d =
            generate_dataset(self.n, self.split, self.seed, &ctx.params, &sampler, ctx.exec).map_err(|e| match e {
                quadlat::error::Error::BadInput(_) => usage(e),
                e => e.into(),
            })?;
        write_dataset(&self.out, &d).with_context(|| format!("writing {}", self.out.display()))?;
        let mut m = Manifest::new(
            "gen-data",
            json!({ "n": self.n, "split": self.split, "sampler": sampler, "params": ctx.params }),
            json!({ "root": self.seed }),
        );
        m.output(&self.out, false)?;
        m.output(&side, false)?;
        m.record(&parent_dir(&self.out), &file_key(&self.out))?;
        println!(
            "wrote {} samples ({} train, {} test, {:.1}% stable) to {}",
            d.len(),
            d.train.len(),
            d.test.len(),
            100.0 * quadlat::dataset::stable_fraction(&d.train),
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialisation, shuffling and reparameterisation noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
    }
}

/// `<out>.log.json`
fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.json");
    PathBuf::from(s)
}

fn write_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut text = serde_json::to_string_pretty(log)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args)]
pub struct Train {
    /// Dataset CSV written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Weights file.
    #[arg(long)]
    pub out: PathBuf,
    /// KL weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Stability loss weight.
    #[arg(long)]
    pub mu1: Option<f64>,
    /// Stance loss weight.
    #[arg(long)]
    pub mu2: Option<f64>,
    /// Require the dataset to carry CoM features.
    #[arg(long)]
    pub with_com: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

impl Train {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let mut config = ctx.file.train.clone().unwrap_or_default();
        self.flags.apply(&mut config);
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.mu1 {
            config.mu1 = v;
        }
        if let Some(v) = self.mu2 {
            config.mu2 = v;
        }
        config.validate().map_err(usage)?;
        let log = log_path(&self.out);
        prepare_outputs(&[self.out.clone(), log.clone()], ctx.force)?;
        let mut m = Manifest::new("train", to_value(&config)?, json!({ "train": config.seed }));
        let d = load_data(&self.data, ctx, &mut m)?;
        if self.with_com && !d.with_com {
            return Err(usage(format!(
                "{} has no CoM features; regenerate it with --with-com",
                self.data.display()
            )));
        }
        let arch = VaeArch::standard(d.input_dim());
        m.config = json!({ "train": config, "arch": arch });
        let t = train_vae(&d, arch, &config)?;
        save_vae(&self.out, &t.weights).with_context(|| format!("writing {}", self.out.display()))?;
        write_log(&log, &t.log)?;
        m.output(&self.out, false)?;
        m.output(&log, false)?;
        m.record(&parent_dir(&self.out), &file_key(&self.out))?;
        let b = t.log.best();
        println!(
            "best epoch {}: test stability accuracy {:.4}, stance exact match {:.4}",
            b.epoch, b.test_stability_accuracy, b.test_stance_accuracy
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainBaseline {
    /// Dataset CSV written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Weights file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

impl TrainBaseline {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let mut config = ctx.file.train.clone().unwrap_or_default();
        self.flags.apply(&mut config);
        config.validate().map_err(usage)?;
        let log = log_path(&self.out);
        prepare_outputs(&[self.out.clone(), log.clone()], ctx.force)?;
        let mut m = Manifest::new("train-baseline", to_value(&config)?, json!({ "train": config.seed }));
        let d = load_data(&self.data, ctx, &mut m)?;
        let arch = BaselineArch::standard(d.input_dim());
        m.config = json!({ "train": config, "arch": arch });
        let t = train_baseline(&d, arch, &config)?;
        save_baseline(&self.out, &t.weights).with_context(|| format!("writing {}", self.out.display()))?;
        write_log(&log, &t.log)?;
        m.output(&self.out, false)?;
        m.output(&log, false)?;
        m.record(&parent_dir(&self.out), &file_key(&self.out))?;
        let b = t.log.best();
        println!(
            "best epoch {}: test stability accuracy {:.4}, stance exact match {:.4}",
            b.epoch, b.test_stability_accuracy, b.test_stance_accuracy
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Stabilize {
    /// VAE weights.
    #[arg(long)]
    pub model: PathBuf,
    /// Baseline classifier weights.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Episodes per scheme.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Seed of the unstable start poses.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gradient steps per episode.
    #[arg(long)]
    pub steps: Option<usize>,
    /// AM step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Directory for the CSV and JSON reports.
    #[arg(long)]
    pub report_dir: PathBuf,
}

impl Stabilize {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let f = &ctx.file;
        let mut config = StudyConfig {
            am: f.am.clone().unwrap_or_default(),
            contacts: f.contacts.unwrap_or_default(),
            sampler: f.sampler.clone().unwrap_or_default(),
            ..StudyConfig::default()
        };
        if let Some(ms) = &f.margins {
            config.margins = ms.clone();
        }
        if let Some(v) = self.episodes {
            config.n_episodes = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.steps {
            config.am.steps = v;
        }
        if let Some(v) = self.alpha {
            config.am.alpha = v;
        }
        config.validate().map_err(usage)?;
        let dir = &self.report_dir;
        let outs: Vec<PathBuf> = STUDY_FILES.iter().map(|f| dir.join(f)).collect();
        prepare_outputs(&outs, ctx.force)?;
        let mut m = Manifest::new(
            "stabilize",
            json!({ "study": config, "params": ctx.params }),
            json!({ "study": config.seed }),
        );
        let vae = load_model(&self.model, ctx, &mut m)?;
        let base =
            load_baseline(&self.baseline).with_context(|| format!("loading baseline {}", self.baseline.display()))?;
        check_params(&base.meta, ctx, &self.baseline)?;
        m.input(&self.baseline)?;
        let r = run_margin_study(&vae, &base, &config, &ctx.params, ctx.exec)?;
        write_study_reports(dir, &r).with_context(|| format!("writing reports to {}", dir.display()))?;
        for (i, f) in STUDY_FILES.iter().enumerate() {
            m.output(&dir.join(f), i + 1 == STUDY_FILES.len())?;
        }
        m.record(dir, "stabilize")?;
        println!("margin  latent  input");
        for (i, mg) in r.summary.margins.iter().enumerate() {
            println!(
                "{:>5.0}%  {:>6.3}  {:>5.3}",
                mg * 100.0,
                r.summary.latent.rate(i),
                r.summary.input.rate(i)
            );
        }
        println!(
            "velocity violations: latent {:.3}, input {:.3}",
            r.summary.latent.violation_rate(),
            r.summary.input.violation_rate()
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Walk {
    /// VAE weights.
    #[arg(long)]
    pub model: PathBuf,
    /// All-contact stance the cycle starts from (0, 2, 4 or 6).
    #[arg(long, default_value_t = 0)]
    pub from_stance: u8,
    /// Stance transitions to plan; 8 is a full cycle.
    #[arg(long, default_value_t = 8)]
    pub transitions: usize,
    /// Horizon per transition.
    #[arg(long)]
    pub n: Option<usize>,
    /// Optimiser step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Stability penalty weight.
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Stance penalty weight.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Gradient iterations per transition.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Seed of the start pose.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draws allowed when searching for the start pose.
    #[arg(long, default_value_t = 10_000)]
    pub max_start_attempts: usize,
    /// Trajectory CSV.
    #[arg(long)]
    pub out: PathBuf,
}

impl Walk {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let mut config: LocoConfig = ctx.file.loco.clone().unwrap_or_default();
        if let Some(v) = self.n {
            config.horizon = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.lambda0 {
            config.lambda0 = v;
        }
        if let Some(v) = self.lambda1 {
            config.lambda1 = v;
        }
        if let Some(v) = self.iterations {
            config.iterations = v;
        }
        config.validate().map_err(usage)?;
        let from = stance(self.from_stance)?;
        if !from.is_all_contact() || self.transitions == 0 {
            return Err(usage(
                "--from-stance must be an all-contact stance and --transitions positive",
            ));
        }
        prepare_outputs(std::slice::from_ref(&self.out), ctx.force)?;
        let sampler: SamplerConfig = ctx.file.sampler.clone().unwrap_or_default();
        let mut m = Manifest::new(
            "walk",
            json!({ "loco": config, "from_stance": from.id(), "transitions": self.transitions, "sampler": sampler }),
            json!({ "start": self.seed }),
        );
        let vae = load_model(&self.model, ctx, &mut m)?;
        let x0 = gait_start(from, self.seed, &vae, &ctx.params, &sampler, self.max_start_attempts)?;
        let (traj, outcomes) = plan_gait_cycle(&x0.x, &vae, &config, self.transitions)?;
        traj.save_csv(&self.out)
            .with_context(|| format!("writing {}", self.out.display()))?;
        m.output(&self.out, false)?;
        m.record(&parent_dir(&self.out), &file_key(&self.out))?;
        for (k, o) in outcomes.iter().enumerate() {
            println!(
                "segment {k}: {} accepted steps, loss {:.4e}",
                o.accepted_steps, o.components.total
            );
        }
        println!("wrote {} poses to {}", traj.len(), self.out.display());
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Eval {
    /// Trajectory CSV written by walk.
    #[arg(long)]
    pub traj: PathBuf,
    /// Model that produced the trajectory; recorded in the manifest.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sampling frequency of the trajectory in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Report JSON.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    passed: bool,
    kinematically_feasible: bool,
    velocity_feasible: bool,
    targets_reached: bool,
    boundaries_stable: bool,
    #[serde(flatten)]
    gait: &'a quadlat::eval::GaitReport,
}

impl Eval {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let rate = self
            .rate
            .unwrap_or_else(|| ctx.file.loco.clone().unwrap_or_default().rate);
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(usage("--rate must be positive"));
        }
        prepare_outputs(std::slice::from_ref(&self.report), ctx.force)?;
        let mut m = Manifest::new("eval", json!({ "rate": rate, "params": ctx.params }), json!({}));
        if let Some(p) = &self.model {
            load_model(p, ctx, &mut m)?;
        }
        let table = read_trajectory_csv(&self.traj).with_context(|| format!("reading {}", self.traj.display()))?;
        m.input(&self.traj)?;
        let g = evaluate_gait(&table, rate, &ctx.params)?;
        let body = EvalJson {
            passed: g.passed(),
            kinematically_feasible: g.kinematically_feasible(),
            velocity_feasible: g.velocity_feasible(),
            targets_reached: g.targets_reached(),
            boundaries_stable: g.boundaries_stable(),
            gait: &g,
        };
        quadlat::eval::report::write_json(&self.report, &body)
            .with_context(|| format!("writing {}", self.report.display()))?;
        m.output(&self.report, false)?;
        m.record(&parent_dir(&self.report), &file_key(&self.report))?;
        println!(
            "{}: {} poses, {} infeasible, max |qdot| {:.3} rad/s, min target probability {:.3}",
            if g.passed() { "PASS" } else { "FAIL" },
            g.n_poses,
            g.infeasible_poses,
            g.max_abs_velocity,
            g.segments
                .iter()
                .map(|s| s.target_probability)
                .fold(f64::INFINITY, f64::min)
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Bench {
    /// VAE weights.
    #[arg(long)]
    pub model: PathBuf,
    /// Timed calls per method.
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    /// Seed of the benchmarked pose.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stance of the benchmarked pose.
    #[arg(long, default_value_t = 0)]
    pub stance: u8,
    /// Timing report JSON; printed only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Bench {
    fn run(self, ctx: &Ctx) -> Result<()> {
        if self.trials < 2 {
            return Err(usage("--trials must be at least 2"));
        }
        let st = stance(self.stance)?;
        if let Some(o) = &self.out {
            prepare_outputs(std::slice::from_ref(o), ctx.force)?;
        }
        let sampler: SamplerConfig = ctx.file.sampler.clone().unwrap_or_default();
        let mut m = Manifest::new(
            "bench",
            json!({ "trials": self.trials, "stance": st.id(), "sampler": sampler }),
            json!({ "pose": self.seed }),
        );
        let vae = load_model(&self.model, ctx, &mut m)?;
        let sample = sample_configuration(st, self.seed, &ctx.params, &sampler)?;
        let r = timing_bench(&vae, &ctx.params, &sample, self.trials)?;
        println!(
            "predictor {:.2} us, predictor stability only {:.2} us, oracle {:.2} us, oracle/predictor {:.3}",
            r.predictor.summary.mean, r.predictor_stability_only.summary.mean, r.oracle.summary.mean, r.ratio
        );
        if let Some(o) = &self.out {
            write_timing_json(o, &r).with_context(|| format!("writing {}", o.display()))?;
            m.output(o, true)?;
            m.record(&parent_dir(o), &file_key(o))?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Diag {
    /// VAE weights.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset CSV; its test split is used.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl Diag {
    fn run(self, ctx: &Ctx) -> Result<()> {
        let outs: Vec<PathBuf> = DIAGNOSTIC_FILES.iter().map(|f| self.out.join(f)).collect();
        prepare_outputs(&outs, ctx.force)?;
        let mut m = Manifest::new("diag", json!({ "split": "test" }), json!({}));
        let vae = load_model(&self.model, ctx, &mut m)?;
        let d = load_data(&self.data, ctx, &mut m)?;
        let r = latent_diagnostics(&vae, &d.test)?;
        write_diagnostics(&self.out, &r).with_context(|| format!("writing reports to {}", self.out.display()))?;
        for f in DIAGNOSTIC_FILES {
            m.output(&self.out.join(f), false)?;
        }
        m.record(&self.out, "diag")?;
        println!(
            "active latent dimensions: {} of {}; first two components explain {:.3} and {:.3}",
            r.active_count(),
            r.posterior_variance.len(),
            r.explained_variance[0],
            r.explained_variance[1]
        );
        Ok(())
    }
}
