use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use behavior_guard_cli::config::ExperimentConfig;
use behavior_guard_cli::error::{CliError, Result};
use behavior_guard_cli::experiment::{
    certify, corrupt, offline_hankel, recover_window, run_experiment, run_scaling, segments,
    simulate_data, write_scaling_csv, SEGMENTATION,
};
use behavior_guard_cli::plot::{variable_names, write_tidy_csv};
use behavior_guard_cli::presets::{preset, Preset, NAMES};
use behavior_guard_cli::report::{summarize, Report};
use behavior_guard_core::attack::{AttackKind, AttackRecord};
use behavior_guard_core::conditions::{
    check_condition1, check_condition2, check_condition3, epigraph_certificate_for, periodical_set,
    t_matrix_certificate,
};
use behavior_guard_core::hankel::{build_hankel, IndexSet};
use behavior_guard_core::lti::{system_invariants, Trajectory};
use behavior_guard_core::recover::{Method, RecoveryResult};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "behavior-guard", version, about = "Data-driven reconstruction of attacked LTI trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent windows.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Recovery method; repeat to run several. Overrides the config.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<Method>,
    /// Named preset used instead of a config file.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate offline data and the true online trajectory.
    Simulate(Common),
    /// Add noise and attacks to an online trajectory, window by window.
    Attack {
        #[command(flatten)]
        common: Common,
        /// True online trajectory (CSV).
        #[arg(long)]
        input: PathBuf,
    },
    /// Recoverability tests on the offline Hankel matrix.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Offline data (CSV); simulated from the config when absent.
        #[arg(long)]
        offline: Option<PathBuf>,
        /// Attacked channels (1-based) for the support-specific tests.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<usize>,
        /// Attacked rows (1-based) for the support-specific tests.
        #[arg(long, value_delimiter = ',', conflicts_with = "channels")]
        rows: Vec<usize>,
    },
    /// Reconstruct attacked windows from offline data.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        offline: PathBuf,
        /// Attacked online data (CSV), cut into consecutive windows of length L.
        #[arg(long)]
        input: PathBuf,
        /// True online trajectory; with --attacks, a full report is written.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        attacks: Option<PathBuf>,
    },
    /// Run an experiment and compare method wall times.
    Bench(Common),
    /// Run a named preset (or a config) end to end and write the report and plot data.
    Reproduce(Common),
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected one of bruteforce_entries, bruteforce_channels, l1, group_lasso, noisy_entries, noisy_channels"
            .to_string()
    })
}

fn apply_overrides(mut cfg: ExperimentConfig, common: &Common) -> Result<ExperimentConfig> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if !common.methods.is_empty() {
        cfg.methods = common.methods.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match (&common.config, &common.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => match preset(name)? {
            Preset::Experiment(cfg) => cfg,
            Preset::Scaling(_) => return Err(CliError::Usage(format!("preset {name} only runs under `reproduce`"))),
        },
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --config or --preset, not both".into())),
        (None, None) => return Err(CliError::Usage("a --config file or a --preset is required".into())),
    };
    apply_overrides(cfg, common)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Trajectory::read_csv(file).map_err(|e| match e {
        behavior_guard_core::Error::Parse(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other.into(),
    })
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir).map_err(|source| CliError::Io { path: cfg.out_dir.display().to_string(), source })?;
    Ok(&cfg.out_dir)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{}: {e}", path.display()))
}

fn write_report(dir: &Path, report: &Report) -> Result<()> {
    write_text(&dir.join("report.json"), &report.to_json())?;
    let path = dir.join("plot.csv");
    write_tidy_csv(report, create(&path)?).map_err(csv_err(&path))
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let sim = simulate_data(&cfg)?;
    let (_, gpe) = offline_hankel(&cfg, &sim.offline, &sim.invariants)?;
    let dir = out_dir(&cfg)?;
    write_text(&dir.join("config.json"), &cfg.to_json())?;
    write_text(&dir.join("system.json"), &sim.system.to_json()?)?;
    write_text(&dir.join("gpe.json"), &json(&gpe))?;
    sim.offline.write_csv(create(&dir.join("offline.csv"))?)?;
    sim.online.write_csv(create(&dir.join("online.csv"))?)?;
    println!("offline: {} samples, online: {} samples, rank {} (target {})", sim.offline.len(), sim.online.len(), gpe.rank, gpe.target);
    Ok(())
}

fn attacks_json(records: &[AttackRecord]) -> Result<String> {
    let docs: Vec<serde_json::Value> =
        records.iter().map(|r| Ok(serde_json::from_str(&r.to_json()?).expect("valid JSON"))).collect::<Result<_>>()?;
    Ok(json(&docs))
}

fn read_attacks(path: &Path) -> Result<Vec<AttackRecord>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    let docs: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))?;
    docs.iter().map(|d| Ok(AttackRecord::from_json(&d.to_string())?)).collect()
}

fn concat(windows: &[Trajectory]) -> Result<Trajectory> {
    let first = windows.first().ok_or_else(|| CliError::Usage("no windows".into()))?;
    Ok(Trajectory::new(first.q(), first.inputs(), windows.iter().flat_map(|w| w.data().iter().copied()).collect())?)
}

fn cmd_attack(common: &Common, input: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let online = read_trajectory(input)?;
    if online.len() < cfg.l * cfg.trials {
        return Err(CliError::Config(format!(
            "{}: {} samples cannot hold {} windows of length {}",
            input.display(),
            online.len(),
            cfg.trials,
            cfg.l
        )));
    }
    let records = corrupt(&cfg, &online)?;
    let dir = out_dir(&cfg)?;
    let windows: Vec<Trajectory> = records.iter().map(|r| r.w.clone()).collect();
    concat(&windows)?.write_csv(create(&dir.join("attacked.csv"))?)?;
    write_text(&dir.join("attacks.json"), &attacks_json(&records)?)?;
    println!("attacked {} windows ({:?}, magnitude {})", records.len(), cfg.attack.kind, cfg.attack.magnitude);
    Ok(())
}

fn cmd_certify(common: &Common, offline: Option<&Path>, channels: &[usize], rows: &[usize]) -> Result<()> {
    let cfg = load_config(common)?;
    let invariants = system_invariants(&cfg.resolve_system()?)?;
    let data = match offline {
        Some(path) => read_trajectory(path)?,
        None => simulate_data(&cfg)?.offline,
    };
    let h = build_hankel(&data, cfg.l)?;
    let mut certs = vec![check_condition1(h.entries(), cfg.k, &cfg.certificates)?, check_condition2(&h, cfg.k, &cfg.certificates)?];
    let attacked = if !channels.is_empty() {
        Some(periodical_set(&IndexSet::new(channels.to_vec(), h.q())?, h.q(), h.depth())?)
    } else if !rows.is_empty() {
        Some(IndexSet::new(rows.to_vec(), h.rows())?)
    } else if let Some(support) = &cfg.attack.support {
        Some(match cfg.attack.kind {
            AttackKind::Entry => IndexSet::new(support.clone(), h.rows())?,
            AttackKind::Channel => periodical_set(&IndexSet::new(support.clone(), h.q())?, h.q(), h.depth())?,
        })
    } else {
        None
    };
    if let Some(set) = attacked {
        let cond3 = check_condition3(h.entries(), &set, &cfg.certificates)?;
        let holds = cond3.holds();
        certs.push(cond3);
        if holds {
            certs.push(t_matrix_certificate(h.entries(), &set, &cfg.certificates)?);
        }
        certs.push(epigraph_certificate_for(h.entries(), &set, &cfg.certificates)?);
    }
    let (_, gpe) = offline_hankel(&ExperimentConfig { require_gpe: false, ..cfg.clone() }, &data, &invariants)?;
    for c in &certs {
        let verdict = match c.holds {
            Some(true) => "holds",
            Some(false) => "fails",
            None => "undecided",
        };
        println!("{:?}: {verdict}{}", c.condition, c.norm.map(|v| format!(" (value {v:.6})")).unwrap_or_default());
    }
    let dir = out_dir(&cfg)?;
    write_text(&dir.join("gpe.json"), &json(&gpe))?;
    write_text(&dir.join("certificates.json"), &json(&certs))?;
    Ok(())
}

fn cmd_recover(common: &Common, offline: &Path, input: &Path, truth: Option<&Path>, attacks: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let system = cfg.resolve_system()?;
    let invariants = system_invariants(&system)?;
    let data = read_trajectory(offline)?;
    let (h, gpe) = offline_hankel(&cfg, &data, &invariants)?;
    let received = read_trajectory(input)?;
    let windows = segments(&ExperimentConfig { trials: received.len() / cfg.l, ..cfg.clone() }, &received)?;
    if windows.is_empty() {
        return Err(CliError::Config(format!("{}: shorter than one window", input.display())));
    }
    let dir = out_dir(&cfg)?;
    let trials = match (truth, attacks) {
        (Some(truth), Some(attacks)) => {
            let truth = read_trajectory(truth)?;
            let records = read_attacks(attacks)?;
            let truths = segments(&ExperimentConfig { trials: records.len(), ..cfg.clone() }, &truth)?;
            if records.len() != windows.len() || records.iter().zip(&windows).any(|(r, w)| r.w != *w) {
                return Err(CliError::Config("attack records do not match the attacked data".into()));
            }
            let trials: Vec<_> = (0..records.len())
                .map(|i| recover_window(&cfg, &h, i, &truths[i], &records[i]))
                .collect::<Result<_>>()?;
            let certificates = if cfg.certify { certify(&cfg, &h)? } else { Vec::new() };
            let report = Report {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: ExperimentConfig { trials: records.len(), ..cfg.clone() },
                segmentation: SEGMENTATION.to_string(),
                invariants,
                gpe,
                certificates,
                summary: summarize(&cfg.methods, &trials),
                trials,
            };
            write_report(dir, &report)?;
            report.trials
        }
        (None, None) => {
            // Without ground truth every window is scored against itself.
            windows
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let record = AttackRecord {
                        w: w.clone(),
                        support: IndexSet::empty(w.data().len()),
                        kind: cfg.attack.kind,
                        magnitude: 0.0,
                        seed: None,
                        k: 0,
                    };
                    recover_window(&cfg, &h, i, w, &record)
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => return Err(CliError::Usage("--truth and --attacks must be given together".into())),
    };
    let mut failed = 0;
    for (slot, method) in cfg.methods.iter().enumerate() {
        let results: Vec<_> = trials.iter().map(|t| t.outcomes[slot].result.clone()).collect();
        failed += results.iter().filter(|r| !r.is_recovered()).count();
        let path = dir.join(format!("recovered_{}.csv", method.name()));
        write_recovered_csv(&results, &windows, create(&path)?).map_err(csv_err(&path))?;
        write_text(&dir.join(format!("results_{}.json", method.name())), &json(&results))?;
        println!("{}: {}/{} windows recovered", method.name(), results.iter().filter(|r| r.is_recovered()).count(), results.len());
    }
    if failed > 0 {
        return Err(CliError::NoSolution(format!("{failed} window reconstructions found no consistent subset")));
    }
    Ok(())
}

/// Recovered windows back to back; windows without a solution are left blank.
fn write_recovered_csv<W: std::io::Write>(results: &[RecoveryResult], windows: &[Trajectory], writer: W) -> csv::Result<()> {
    let (q, m) = (windows[0].q(), windows[0].inputs());
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(variable_names(m, q))?;
    for (r, w) in results.iter().zip(windows) {
        for t in 0..w.len() {
            match &r.w_tilde {
                Some(v) => wtr.write_record(v[t * q..(t + 1) * q].iter().map(|x| format!("{x:e}")))?,
                None => wtr.write_record(vec![""; q])?,
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn print_summary(report: &Report) {
    for s in &report.summary {
        println!(
            "{:<20} recovered {}/{}  rmse mean {}  support {}  median {:.3} ms",
            s.method.name(),
            s.recovered,
            s.trials,
            s.rmse_mean.map_or("-".into(), |v| format!("{v:.3e}")),
            s.support_rate.map_or("-".into(), |v| format!("{:.1}%", 100.0 * v)),
            1e3 * s.wall_time.median
        );
    }
}

fn cmd_bench(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let report = run_experiment(&cfg, common.jobs)?;
    report.check_consistency().map_err(|e| CliError::Core(behavior_guard_core::Error::Numerical(e)))?;
    print_summary(&report);
    if let [first, rest @ ..] = report.summary.as_slice() {
        for s in rest {
            println!("median time {} / {}: {:.2}", first.method.name(), s.method.name(), first.wall_time.median / s.wall_time.median);
        }
    }
    write_text(&out_dir(&cfg)?.join("bench.json"), &report.to_json())
}

fn cmd_reproduce(common: &Common) -> Result<()> {
    let scaling = match (&common.preset, &common.config) {
        (Some(name), None) => match preset(name)? {
            Preset::Scaling(study) => Some(study),
            Preset::Experiment(_) => None,
        },
        (None, None) => return Err(CliError::Usage(format!("--preset is required; available: {}", NAMES.join(", ")))),
        _ => None,
    };
    let Some(mut study) = scaling else {
        let cfg = load_config(common)?;
        let report = run_experiment(&cfg, common.jobs)?;
        print_summary(&report);
        return write_report(out_dir(&cfg)?, &report);
    };
    study.base = apply_overrides(study.base, common)?;
    let result = run_scaling(&study, common.jobs)?;
    let dir = out_dir(&study.base)?;
    for (n, report) in study.sizes.iter().zip(&result.reports) {
        write_text(&dir.join(format!("report_n{n}.json")), &report.to_json())?;
    }
    let path = dir.join("scaling.csv");
    write_scaling_csv(&result.rows, create(&path)?).map_err(csv_err(&path))?;
    for r in &result.rows {
        println!(
            "n = {:>2}: {}/{} recovered, mean {:.3} ms, worst {:.3} ms",
            r.n_masses, r.recovered, r.trials, r.mean_ms, r.max_ms
        );
    }
    println!("log-log slope of mean time against n: {:.2}", result.exponent);
    write_text(&dir.join("scaling.json"), &json(&serde_json::json!({ "rows": result.rows, "exponent": result.exponent })))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Attack { common, input } => cmd_attack(common, input),
        Command::Certify { common, offline, channels, rows } => cmd_certify(common, offline.as_deref(), channels, rows),
        Command::Recover { common, offline, input, truth, attacks } => {
            cmd_recover(common, offline, input, truth.as_deref(), attacks.as_deref())
        }
        Command::Bench(c) => cmd_bench(c),
        Command::Reproduce(c) => cmd_reproduce(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BEHAVIOR_GUARD_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
