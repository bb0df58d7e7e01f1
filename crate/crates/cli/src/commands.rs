//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use pwcf::analysis::{radii, robust_accuracy, summarize, ConfigKey};
use pwcf::attacks::{attack_samples, AttackSpec, PerturbationRecord, SolverChoice, SolverTag};
use pwcf::desk::{calibrate_eps, desk_suite};
use pwcf::model::{
    adversarial_train, danskin_example, train, Checkpoint, Classifier, Dataset, InnerSolution, ModelError, Sample,
    TrainReport,
};
use pwcf::verify::run_all;
use serde::Serialize;

use crate::config::{AdvTrainSection, Budget, Inner, RunConfig};
use crate::manifest::{sha256_hex, unix_ms, Calibration, Manifest};
use crate::records::{group_for_csv, read_jsonl, write_csv_file, write_jsonl, CsvRow};
use crate::{Cli, CliError, Command};

pub const ATTACK_RECORDS: &str = "attack_records.jsonl";
pub const RADIUS_RECORDS: &str = "radius_records.jsonl";

struct Context {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    config_sha256: Option<String>,
    out: PathBuf,
    timings: bool,
    outputs: Vec<String>,
    calibration: Vec<Calibration>,
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Architecture(_) => CliError::Config(e.to_string()),
        other => runtime(other),
    }
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let (mut cfg, bytes) = match &cli.config {
            Some(p) => {
                let (c, b) = RunConfig::load(p)?;
                (c, Some(b))
            }
            None => (RunConfig::default(), None),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(j) = cli.jobs {
            cfg.jobs = j;
        }
        if let Some(s) = cli.solver {
            cfg.solver = s.into();
        }
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("pwcf-out"));
        Ok(Self {
            cfg,
            config_path: cli.config.clone(),
            config_sha256: bytes.as_deref().map(sha256_hex),
            out,
            timings: cli.timings,
            outputs: Vec::new(),
            calibration: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| runtime(format!("{}: {e}", self.out.display())))
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    fn write_records(&mut self, kind: &str, jsonl: &str, records: &[PerturbationRecord]) -> Result<(), CliError> {
        for (name, group) in group_for_csv(kind, records) {
            write_csv_file(
                &self.path(&name),
                group.iter().map(|r| CsvRow::from_record(r, self.timings)),
            )?;
            self.outputs.push(name);
        }
        write_jsonl(&self.path(jsonl), records)?;
        self.outputs.push(jsonl.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, started: u128, clock: Instant) -> Result<(), CliError> {
        let manifest = Manifest {
            command: command.to_string(),
            binary_version: env!("CARGO_PKG_VERSION"),
            schema_version: self.cfg.schema_version,
            config_path: self.config_path.as_ref().map(|p| p.display().to_string()),
            config_sha256: self.config_sha256.clone(),
            seed: self.cfg.seed,
            jobs: self.cfg.jobs,
            solver: self.cfg.solver,
            started_unix_ms: started,
            finished_unix_ms: unix_ms(),
            elapsed_ms: clock.elapsed().as_secs_f64() * 1e3,
            calibration: std::mem::take(&mut self.calibration),
            outputs: std::mem::take(&mut self.outputs),
        };
        let name = format!("manifest_{command}.json");
        let mut s = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
        s.push('\n');
        let p = self.path(&name);
        std::fs::write(&p, s).map_err(|e| runtime(format!("{}: {e}", p.display())))
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let started = unix_ms();
    let clock = Instant::now();
    let mut ctx = Context::new(cli)?;
    let name = match &cli.command {
        Command::Train => "train",
        Command::Attack => "attack",
        Command::Radius => "radius",
        Command::Analyze { .. } => "analyze",
        Command::Verify => "verify",
        Command::DanskinDemo => "danskin-demo",
    };
    if matches!(cli.command, Command::Radius) && ctx.cfg.solver != SolverChoice::Pwcf {
        return Err(CliError::Config(
            "min-radius has no PGD baseline; use --solver pwcf".into(),
        ));
    }
    ctx.ensure_out()?;
    let result = match &cli.command {
        Command::Train => cmd_train(&mut ctx),
        Command::Attack => cmd_attack(&mut ctx),
        Command::Radius => cmd_radius(&mut ctx),
        Command::Analyze { input } => cmd_analyze(&mut ctx, input.as_deref()),
        Command::Verify => cmd_verify(&mut ctx),
        Command::DanskinDemo => cmd_danskin(&mut ctx),
    };
    // The manifest is written even when verification fails.
    match result {
        Err(e @ CliError::Verification(_)) => {
            ctx.finish(name, started, clock)?;
            Err(e)
        }
        Err(e) => Err(e),
        Ok(()) => ctx.finish(name, started, clock),
    }
}

fn check_dims(cfg: &RunConfig, data: &Dataset) -> Result<(), CliError> {
    let dims = &cfg.desk.dims;
    if dims.first() != Some(&data.dim) || dims.last() != Some(&data.num_classes) {
        return Err(CliError::Config(format!(
            "desk.dims {dims:?} must start at the input width {} and end at the class count {}",
            data.dim, data.num_classes
        )));
    }
    Ok(())
}

fn train_model(cfg: &RunConfig) -> Result<(Classifier, Dataset, TrainReport), CliError> {
    let data = Dataset::generate(&cfg.desk.dataset).map_err(model_error)?;
    check_dims(cfg, &data)?;
    let mut model =
        Classifier::random(&cfg.desk.dims, cfg.desk.activation, cfg.desk.model_seed).map_err(model_error)?;
    let report = match &cfg.adv_train {
        None => train(&mut model, &data, &cfg.desk.train),
        Some(at) => match at.inner(data.num_classes)? {
            Inner::Pgd(inner) => adversarial_train(&mut model, &data, &inner, &cfg.desk.train),
            Inner::Pwcf(inner) => adversarial_train(&mut model, &data, &inner, &cfg.desk.train),
        },
    }
    .map_err(model_error)?;
    Ok((model, data, report))
}

type Suite = Vec<(usize, Sample)>;

/// The configured checkpoint, or a model trained in process, plus the
/// evaluation suite.
fn model_and_suite(cfg: &RunConfig) -> Result<(Arc<Classifier>, Suite), CliError> {
    let (model, data) = match &cfg.model {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let model = Checkpoint::from_json(&text)
                .and_then(|c| c.to_model())
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let data = Dataset::generate(&cfg.desk.dataset).map_err(model_error)?;
            if model.input_dim() != data.dim || model.num_classes() != data.num_classes {
                return Err(CliError::Config(
                    "checkpoint does not match the configured dataset".into(),
                ));
            }
            (model, data)
        }
        None => {
            let (m, d, _) = train_model(cfg)?;
            (m, d)
        }
    };
    let suite = desk_suite(&model, &data.val, cfg.desk.suite_size).map_err(model_error)?;
    if suite.is_empty() {
        return Err(runtime("no correctly classified validation samples to attack"));
    }
    Ok((Arc::new(model), suite))
}

fn zero_timings(records: &mut [PerturbationRecord], keep: bool) {
    if !keep {
        for r in records {
            r.wall_time_ms = 0.0;
        }
    }
}

#[derive(Serialize)]
struct AccuracyReport<'a> {
    train_accuracy: f64,
    val_accuracy: f64,
    epochs: usize,
    final_train_loss: Option<f64>,
    adversarial: Option<&'a AdvTrainSection>,
}

fn cmd_train(ctx: &mut Context) -> Result<(), CliError> {
    let (model, _, report) = train_model(&ctx.cfg)?;
    let checkpoint = Checkpoint::from_model(&model).to_json();
    ctx.write_bytes("model.json", checkpoint.as_bytes())?;
    let cfg = ctx.cfg.clone();
    let acc = AccuracyReport {
        train_accuracy: report.train_accuracy,
        val_accuracy: report.val_accuracy,
        epochs: report.epochs,
        final_train_loss: report.epoch_losses.last().copied(),
        adversarial: cfg.adv_train.as_ref(),
    };
    ctx.write_json("accuracy.json", &acc)?;
    say!(
        "train accuracy {:.4}, validation accuracy {:.4}",
        report.train_accuracy,
        report.val_accuracy
    );
    Ok(())
}

fn calibrate(
    ctx: &mut Context,
    model: &Arc<Classifier>,
    suite: &[(usize, Sample)],
    metric: &str,
    factor: f64,
    medians: &mut BTreeMap<String, (f64, usize)>,
) -> Result<f64, CliError> {
    if !medians.contains_key(metric) {
        let spec = AttackSpec::min_radius(crate::config::parse_metric(metric)?);
        let harness = ctx.cfg.harness();
        let recs = attack_samples(model, suite, &[spec], &[SolverTag::Pwcf], &harness).map_err(runtime)?;
        let values: Vec<f64> = radii(&recs, harness.solver.tau_violation)
            .map_err(runtime)?
            .into_values()
            .collect();
        let median = calibrate_eps(&values, 1.0)
            .ok_or_else(|| runtime(format!("no feasible {metric} radius to calibrate from")))?;
        medians.insert(metric.to_string(), (median, values.len()));
    }
    let (median, samples) = medians[metric];
    let eps = factor * median;
    ctx.calibration.push(Calibration {
        metric: metric.to_string(),
        factor,
        median_radius: median,
        eps,
        samples,
    });
    Ok(eps)
}

fn cmd_attack(ctx: &mut Context) -> Result<(), CliError> {
    if ctx.cfg.attack.is_empty() {
        return Err(CliError::Config("no [[attack]] entries".into()));
    }
    let (model, suite) = model_and_suite(&ctx.cfg)?;
    let mut medians = BTreeMap::new();
    let mut specs = Vec::new();
    for a in ctx.cfg.attack.clone() {
        let eps = match RunConfig::budget(&a)? {
            Budget::Fixed(e) => e,
            Budget::Factor(f) => calibrate(ctx, &model, &suite, &a.metric, f, &mut medians)?,
        };
        specs.push(RunConfig::attack_spec(&a, eps, model.num_classes())?);
    }
    let tags = ctx.cfg.solver.tags();
    let mut records = attack_samples(&model, &suite, &specs, &tags, &ctx.cfg.harness()).map_err(runtime)?;
    zero_timings(&mut records, ctx.timings);
    ctx.write_records("attack", ATTACK_RECORDS, &records)?;
    let mut groups: BTreeMap<ConfigKey, Vec<&PerturbationRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(ConfigKey::of(r)).or_default().push(r);
    }
    for (k, rs) in groups {
        let acc = robust_accuracy(rs.iter().copied()).map_err(runtime)?;
        say!(
            "{} {} {} eps {:.6}: robust accuracy {acc:.4}",
            k.solver,
            k.loss,
            k.metric,
            k.eps()
        );
    }
    Ok(())
}

fn cmd_radius(ctx: &mut Context) -> Result<(), CliError> {
    if ctx.cfg.radius.is_empty() {
        return Err(CliError::Config("no [[radius]] entries".into()));
    }
    let specs = ctx
        .cfg
        .radius
        .iter()
        .map(RunConfig::radius_spec)
        .collect::<Result<Vec<_>, _>>()?;
    let (model, suite) = model_and_suite(&ctx.cfg)?;
    let harness = ctx.cfg.harness();
    let mut records = attack_samples(&model, &suite, &specs, &[SolverTag::Pwcf], &harness).map_err(runtime)?;
    zero_timings(&mut records, ctx.timings);
    ctx.write_records("radius", RADIUS_RECORDS, &records)?;
    let summary = summarize(&records, model.input_dim(), harness.solver.tau_violation).map_err(runtime)?;
    for r in &summary.radius {
        say!(
            "{} {}: mean {:.6}, median {:.6} over {} samples",
            r.solver,
            r.metric,
            r.stats.mean,
            r.stats.median,
            r.stats.count
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct HistogramRow<'a> {
    solver: SolverTag,
    loss: &'a str,
    metric: &'a str,
    eps: f64,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}

fn cmd_analyze(ctx: &mut Context, input: Option<&Path>) -> Result<(), CliError> {
    let dir = input.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.clone());
    let mut records = Vec::new();
    for name in [ATTACK_RECORDS, RADIUS_RECORDS] {
        let p = dir.join(name);
        if p.exists() {
            records.extend(read_jsonl(&p)?);
        }
    }
    if records.is_empty() {
        return Err(CliError::Config(format!("no records found in {}", dir.display())));
    }
    let n = records[0].x_prime.len();
    let summary = summarize(&records, n, ctx.cfg.solver_config().tau_violation).map_err(runtime)?;
    ctx.write_json("summary.json", &summary)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for s in &summary.sparsity {
            let h = &s.histogram;
            for (i, &count) in h.counts.iter().enumerate() {
                w.serialize(HistogramRow {
                    solver: s.solver,
                    loss: &s.loss,
                    metric: &s.metric,
                    eps: s.eps,
                    bin_lo: h.edges[i],
                    bin_hi: h.edges[i + 1],
                    count,
                })
                .map_err(runtime)?;
            }
        }
        w.flush().map_err(runtime)?;
    }
    ctx.write_bytes("sparsity_histograms.csv", &buf)?;
    for a in &summary.accuracy {
        say!(
            "{} {} {} eps {:.6}: clean {:.4}, robust {:.4}",
            a.solver,
            a.loss,
            a.metric,
            a.eps,
            a.clean_accuracy,
            a.robust_accuracy
        );
    }
    for u in &summary.union {
        say!(
            "union {} eps {:.6} [{}]: robust {:.4}",
            u.metric,
            u.eps,
            u.members.join(", "),
            u.robust_accuracy
        );
    }
    Ok(())
}

fn cmd_verify(ctx: &mut Context) -> Result<(), CliError> {
    let outcomes = run_all(ctx.cfg.seed);
    for o in &outcomes {
        say!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    ctx.write_json("verify.json", &outcomes)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failed suites: {}", failed.join(", "))))
    }
}

fn cmd_danskin(ctx: &mut Context) -> Result<(), CliError> {
    let theta = 1.0;
    let stationary = danskin_example(theta, InnerSolution::StationaryZero);
    let global = danskin_example(theta, InnerSolution::GlobalOne);
    say!("theta = {theta}");
    say!("inner x' = 0 (stationary point): outer direction {stationary}");
    say!("inner x' = 1 (global maximizer): outer direction {global}");
    ctx.write_json(
        "danskin.json",
        &serde_json::json!({ "theta": theta, "stationary_direction": stationary, "global_direction": global }),
    )
}
