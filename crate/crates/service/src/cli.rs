use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use artdisp_core::control::ControlConfig;
use artdisp_core::dispatch::{run_episode, AdversaryConfig, DispatchContext, EpisodeConfig, Mode, PayoffWeights};
use artdisp_core::experiment::{control_demo, corruption_sweep, episode_batch, stressed_episode_setup};
use artdisp_core::grid::{bundled, parse_case, BusKind, CaseFormat, NetworkCase, PowerFlowOptions};
use artdisp_core::learner::{evaluate_model, train_bundle, Hyperparams, ModelBundle};
use artdisp_core::scenario::{
    build_dataset, export_csv, read_dataset, write_dataset, CorruptionConfig, CorruptionMode, Dataset, ScenarioConfig,
};
use artdisp_core::stability::{compute_l_index, f_matrix_for_case, find_loadability_limit, ScanOptions, Thresholds};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::api::{router, AppState};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "artdisp",
    version,
    about = "Artificial dispatcher: power flow, L-index, tree surrogates and dispatch"
)]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 2024)]
    pub seed: u64,
    /// Bundled case name (ieee14, ieee30, ieee118) or a CDF/JSON file.
    #[arg(long, global = true, default_value = "ieee118")]
    pub case: String,
    /// Output directory. An existing non-empty one gets a fresh run-N subdirectory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// The heavily loaded IEEE 118 setting with calibrated thresholds.
    Stressed,
    /// Library defaults: loads 0.8-1.3x, thresholds 0.5/0.8.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Monitor,
    OpenLoop,
    ClosedLoop,
    Combined,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Monitor => Mode::Monitor,
            ModeArg::OpenLoop => Mode::OpenLoop,
            ModeArg::ClosedLoop => Mode::ClosedLoop,
            ModeArg::Combined => Mode::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionArg {
    Gap,
    Noise,
    Stuck,
}

impl From<CorruptionArg> for CorruptionMode {
    fn from(m: CorruptionArg) -> Self {
        match m {
            CorruptionArg::Gap => CorruptionMode::Gap,
            CorruptionArg::Noise => CorruptionMode::Noise,
            CorruptionArg::Stuck => CorruptionMode::Stuck,
        }
    }
}

#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct ProfileArgs {
    #[arg(long, value_enum, default_value = "stressed")]
    pub profile: Profile,
    /// Compensator buses; defaults to the profile's set (all loaded PQ buses
    /// for the default profile).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<u32>>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Solve the power flow and print a summary.
    Solve {
        #[arg(long)]
        q_limits: bool,
    },
    /// L-index report of the solved case.
    Lindex {
        #[arg(long, default_value_t = 0.5)]
        alarm: f64,
        #[arg(long, default_value_t = 0.8)]
        emergency: f64,
    },
    /// Loadability scan along the uniform load direction.
    Scan {
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Sample, solve and label scenarios into a JSON-Lines dataset.
    Datagen {
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Also write the feature matrix and targets as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Fit the model bundle on a dataset (the newest `window` samples).
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Share of samples held out for evaluation (taken from the end).
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 10_000)]
        window: usize,
    },
    /// Score a bundle on a dataset, optionally with corrupted inputs.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate on this trailing share of the dataset only.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        corruption_rate: Option<f64>,
        #[arg(long, value_enum, default_value = "gap")]
        corruption_mode: CorruptionArg,
    },
    /// Corrective control on sampled insecure scenarios (l_sum traces).
    ControlDemo {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// One adversarial episode.
    Episode {
        #[arg(long, value_enum, default_value = "closed-loop")]
        mode: ModeArg,
        #[arg(long, default_value_t = 20)]
        ticks: u64,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Clock period in milliseconds; 0 leaves the clock to POST /api/tick.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
        /// Start from the stressed operating point (loads at 1.7x).
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Batch experiments: corruption-sweep, control-demo, episode-batch.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    CorruptionSweep,
    ControlDemo,
    EpisodeBatch,
}

/// Either a spec file or the same fields as flags.
#[derive(Debug, Args, Clone, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[arg(value_enum, required_unless_present = "spec")]
    pub name: Option<ExperimentName>,
    /// JSON experiment spec; flags are ignored when given.
    #[arg(long)]
    #[serde(skip)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    pub rates: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gap,noise,stuck")]
    pub modes: Vec<CorruptionArg>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 30)]
    pub count: usize,
    #[arg(long, default_value_t = 100)]
    pub episodes: u64,
    #[arg(long, default_value_t = 20)]
    pub ticks: u64,
    #[command(flatten)]
    pub profile: ProfileArgs,
}

/// The file form of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    #[serde(default)]
    pub case: Option<String>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    case: &'a str,
    config: serde_json::Value,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
}

pub fn load_case(spec: &str) -> Result<NetworkCase> {
    if let Some(c) = bundled::by_name(spec) {
        return Ok(c);
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).with_context(|| format!("reading case {spec}"))?;
    Ok(parse_case(&text, CaseFormat::from_path(path))?)
}

fn scenario_config(case: &NetworkCase, p: &ProfileArgs, seed: u64) -> ScenarioConfig {
    let mut cfg = match p.profile {
        Profile::Stressed => ScenarioConfig::ieee118_stressed(seed),
        Profile::Default => ScenarioConfig {
            rng_seed: seed,
            injection_candidates: case
                .buses
                .iter()
                .filter(|b| b.kind == BusKind::PQ && (b.p_load != 0.0 || b.q_load != 0.0))
                .map(|b| b.id)
                .collect(),
            ..Default::default()
        },
    };
    if let Some(c) = &p.candidates {
        cfg.injection_candidates = c.clone();
    }
    cfg
}

fn read_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path).with_context(|| format!("reading bundle {}", path.display()))?;
    Ok(ModelBundle::from_json(&text)?)
}

fn read_data(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).with_context(|| format!("reading dataset {}", path.display()))?;
    Ok(read_dataset(BufReader::new(f))?)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// `out` itself when absent or empty, otherwise the first free run-N inside.
pub fn prepare_out(out: &Path) -> Result<PathBuf> {
    let busy = out.exists() && fs::read_dir(out)?.next().is_some();
    let dir = if busy {
        (1..)
            .map(|n| out.join(format!("run-{n}")))
            .find(|p| !p.exists())
            .expect("unbounded")
    } else {
        out.to_path_buf()
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

struct Output {
    dir: Option<PathBuf>,
    written: Vec<String>,
    inputs: Vec<(String, String)>,
}

impl Output {
    fn new(out: Option<&Path>) -> Result<Self> {
        Ok(Self {
            dir: out.map(prepare_out).transpose()?,
            written: Vec::new(),
            inputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.display().to_string(), file_hash(path)?));
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::write(dir.join(name), bytes)?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn manifest(mut self, cli: &Cli, command: &str, config: serde_json::Value) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let m = Manifest {
            tool: "artdisp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cli.seed,
            case: &cli.case,
            config,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.written),
        };
        self.json("manifest.json", &m)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let case = load_case(&cli.case)?;
    // Experiments resolve their own output directory (a spec may name one).
    let dir = match cli.command {
        Command::Experiment(_) => None,
        _ => cli.out.as_deref(),
    };
    let mut out = Output::new(dir)?;
    match &cli.command {
        Command::Solve { q_limits } => {
            let opts = PowerFlowOptions {
                enforce_q_limits: *q_limits,
                ..Default::default()
            };
            let t = Instant::now();
            let sol = artdisp_core::grid::solve_power_flow(&case, &opts)?;
            let elapsed = t.elapsed();
            println!(
                "converged {} in {} iterations, max mismatch {:.3e} p.u., losses {:.4} p.u., {:.2} ms",
                sol.converged,
                sol.iterations,
                sol.max_mismatch,
                sol.total_loss,
                elapsed.as_secs_f64() * 1e3
            );
            out.json("solution.json", &sol)?;
            out.manifest(&cli, "solve", serde_json::json!({ "q_limits": q_limits }))?;
        }
        Command::Lindex { alarm, emergency } => {
            let sol = artdisp_core::grid::solve_power_flow(&case, &PowerFlowOptions::default())?;
            let t = Thresholds {
                alarm: *alarm,
                emergency: *emergency,
            };
            let report = compute_l_index(&sol, &f_matrix_for_case(&case)?, &t)?;
            println!(
                "l_max {:.6} at bus {}, l_sum {:.6}, {:?}",
                report.l_max, report.critical_bus, report.l_sum, report.state_class
            );
            out.json("lindex.json", &report)?;
            out.manifest(&cli, "lindex", serde_json::to_value(t)?)?;
        }
        Command::Scan { tol } => {
            let r = find_loadability_limit(&case, &vec![1.0; case.buses.len()], *tol, &ScanOptions::default())?;
            println!(
                "lambda_max {:.4} (first failure {:.4}), {} converged points",
                r.lambda_max,
                r.lambda_fail,
                r.trace.len()
            );
            let mut csv = String::from("lambda,l_max\n");
            for (l, v) in &r.trace {
                csv += &format!("{l},{v}\n");
            }
            out.write("trace.csv", csv)?;
            out.json("loadability.json", &r)?;
            out.manifest(&cli, "scan", serde_json::json!({ "tol": tol }))?;
        }
        Command::Datagen { count, profile, csv } => {
            let cfg = scenario_config(&case, profile, cli.seed);
            let t = Instant::now();
            let ds = build_dataset(&case, &cfg, *count)?;
            println!(
                "{} samples in {:.1} s, convergence rate {:.4}, labels {:?}",
                ds.samples.len(),
                t.elapsed().as_secs_f64(),
                ds.header.convergence_rate,
                ds.header.label_counts
            );
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf)?;
            out.write("dataset.jsonl", buf)?;
            if *csv {
                let mut buf = Vec::new();
                export_csv(&ds, &mut buf)?;
                out.write("dataset.csv", buf)?;
            }
            out.manifest(&cli, "datagen", serde_json::to_value(&cfg)?)?;
        }
        Command::Train {
            dataset,
            test_fraction,
            window,
        } => {
            out.input(dataset)?;
            let ds = read_data(dataset)?;
            let (train, test) = ds.split(*test_fraction);
            let hp = Hyperparams::default();
            let t = Instant::now();
            let bundle = train_bundle(&train, &hp, *window)?;
            println!(
                "trained on {} samples in {:.2} s",
                train.samples.len(),
                t.elapsed().as_secs_f64()
            );
            if !test.samples.is_empty() {
                let report = evaluate_model(&bundle, &test.samples, None, None)?;
                print!("{}", report.table());
                out.json("holdout.json", &report)?;
            }
            out.write("bundle.json", bundle.to_json())?;
            out.manifest(
                &cli,
                "train",
                serde_json::json!({ "hyperparams": hp, "window": window, "test_fraction": test_fraction }),
            )?;
        }
        Command::Eval {
            bundle,
            dataset,
            test_fraction,
            corruption_rate,
            corruption_mode,
        } => {
            out.input(bundle)?;
            out.input(dataset)?;
            let b = read_bundle(bundle)?;
            let (_, test) = read_data(dataset)?.split(*test_fraction);
            let corruption = corruption_rate.map(|rate| CorruptionConfig {
                rate,
                mode: (*corruption_mode).into(),
                rng_seed: cli.seed,
                ..Default::default()
            });
            if corruption.is_some_and(|c| !c.is_valid()) {
                bail!("corruption rate must lie in [0, 1]");
            }
            let report = evaluate_model(&b, &test.samples, corruption.as_ref(), corruption.map(|_| &case))?;
            print!("{}", report.table());
            out.json("eval.json", &report)?;
            out.manifest(
                &cli,
                "eval",
                serde_json::json!({ "corruption": corruption, "test_fraction": test_fraction }),
            )?;
        }
        Command::ControlDemo { bundle, count, profile } => {
            let b = bundle.as_deref().map(read_bundle).transpose()?;
            if let Some(p) = bundle {
                out.input(p)?;
            }
            let cfg = scenario_config(&case, profile, cli.seed);
            let demo = control_demo(&case, &cfg, b.as_ref(), &ControlConfig::from_scenario(&cfg), *count)?;
            println!(
                "{} scenarios: success {:.3}, strictly decreasing l_sum {:.3}, greedy alone {:.3}",
                demo.traces.len(),
                demo.success_rate,
                demo.decreasing_rate,
                demo.greedy_success_rate
            );
            out.write("l_sum_traces.csv", demo.to_csv())?;
            out.json("control_demo.json", &demo)?;
            out.manifest(&cli, "control-demo", serde_json::to_value(&cfg)?)?;
        }
        Command::Episode {
            mode,
            ticks,
            bundle,
            profile,
        } => {
            let b = bundle.as_deref().map(read_bundle).transpose()?;
            if let Some(p) = bundle {
                out.input(p)?;
            }
            let (start, adversary, control) = episode_setup(&case, profile, cli.seed);
            let ctx = DispatchContext { bundle: b, control };
            let cfg = EpisodeConfig {
                ticks: *ticks,
                mode: (*mode).into(),
                payoff: PayoffWeights::default(),
            };
            let (ep, state) = run_episode(&start, &adversary, &ctx, &cfg)?;
            println!(
                "payoff {:.4}, recovered {}, time to recover {:?}, {} actions, {} unresolved ticks",
                ep.payoff,
                ep.recovered,
                ep.time_to_recover,
                ep.actions.len(),
                ep.unresolved_ticks
            );
            out.json("episode.json", &ep)?;
            let log: String = state
                .event_log
                .iter()
                .map(|e| serde_json::to_string(e).map(|s| s + "\n"))
                .collect::<Result<_, _>>()?;
            out.write("events.jsonl", log)?;
            out.manifest(
                &cli,
                "episode",
                serde_json::json!({ "adversary": adversary, "episode": cfg }),
            )?;
        }
        Command::Serve {
            addr,
            bundle,
            tick_ms,
            profile,
        } => {
            let b = bundle.as_deref().map(read_bundle).transpose()?;
            let (start, _, control) = episode_setup(&case, profile, cli.seed);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(start, DispatchContext { bundle: b, control }, *addr, *tick_ms))?;
        }
        Command::Experiment(args) => {
            let (args, seed, case_name, out_dir) = match &args.spec {
                Some(p) => {
                    let spec: ExperimentSpec = serde_json::from_str(&fs::read_to_string(p)?)
                        .with_context(|| format!("parsing spec {}", p.display()))?;
                    from_spec(&spec, args)?
                }
                None => (args.clone(), cli.seed, cli.case.clone(), cli.out.clone()),
            };
            let case = load_case(&case_name)?;
            let cli = Cli {
                seed,
                case: case_name,
                out: out_dir.clone(),
                command: Command::Experiment(args.clone()),
            };
            run_experiment(&cli, &args, &case, Output::new(out_dir.as_deref())?)?;
        }
    }
    Ok(())
}

/// Start case, adversary and control settings for episodes and the service.
fn episode_setup(case: &NetworkCase, p: &ProfileArgs, seed: u64) -> (NetworkCase, AdversaryConfig, ControlConfig) {
    let cfg = scenario_config(case, p, seed);
    let control = ControlConfig::from_scenario(&cfg);
    match p.profile {
        Profile::Stressed => {
            let (start, adversary) = stressed_episode_setup(case, seed);
            (start, adversary, control)
        }
        Profile::Default => {
            let (_, adversary) = stressed_episode_setup(case, seed);
            (case.clone(), adversary, control)
        }
    }
}

fn from_spec(spec: &ExperimentSpec, flags: &ExperimentArgs) -> Result<(ExperimentArgs, u64, String, Option<PathBuf>)> {
    // Parameters not named in the spec keep their flag defaults.
    let mut merged = serde_json::to_value(flags)?;
    if let (Some(m), Some(p)) = (merged.as_object_mut(), spec.params.as_object()) {
        for (k, v) in p {
            m.insert(k.clone(), v.clone());
        }
    }
    let mut args: ExperimentArgs = serde_json::from_value(merged).context("spec params")?;
    args.name = Some(spec.name);
    args.dataset = spec.dataset.clone().or(args.dataset);
    args.bundle = spec.bundle.clone().or(args.bundle);
    for p in args.dataset.iter().chain(&args.bundle) {
        if !p.exists() {
            bail!("{} does not exist", p.display());
        }
    }
    Ok((
        args,
        spec.seed.unwrap_or(2024),
        spec.case.clone().unwrap_or_else(|| "ieee118".into()),
        spec.out.clone(),
    ))
}

fn run_experiment(cli: &Cli, args: &ExperimentArgs, case: &NetworkCase, mut out: Output) -> Result<()> {
    let name = args.name.context("experiment name")?;
    let config = serde_json::to_value(args)?;
    match name {
        ExperimentName::CorruptionSweep => {
            let (Some(dataset), Some(bundle)) = (&args.dataset, &args.bundle) else {
                bail!("corruption-sweep needs --dataset and --bundle");
            };
            let b = read_bundle(bundle)?;
            let (_, test) = read_data(dataset)?.split(args.test_fraction);
            out.input(dataset)?;
            out.input(bundle)?;
            let modes: Vec<CorruptionMode> = args.modes.iter().map(|&m| m.into()).collect();
            let mut rates = vec![0.0];
            rates.extend(args.rates.iter().copied().filter(|&r| r != 0.0));
            let table = corruption_sweep(&b, &test.samples, case, &modes, &rates, cli.seed)?;
            print!("{}", table.table());
            out.write("corruption_sweep.csv", table.to_csv())?;
            out.json("corruption_sweep.json", &table)?;
        }
        ExperimentName::ControlDemo => {
            let b = args.bundle.as_deref().map(read_bundle).transpose()?;
            if let Some(p) = &args.bundle {
                out.input(p)?;
            }
            let cfg = scenario_config(case, &args.profile, cli.seed);
            let demo = control_demo(case, &cfg, b.as_ref(), &ControlConfig::from_scenario(&cfg), args.count)?;
            println!(
                "{} scenarios: success {:.3}, strictly decreasing l_sum {:.3}",
                demo.traces.len(),
                demo.success_rate,
                demo.decreasing_rate
            );
            out.write("l_sum_traces.csv", demo.to_csv())?;
            out.json("control_demo.json", &demo)?;
        }
        ExperimentName::EpisodeBatch => {
            let b = args.bundle.as_deref().map(read_bundle).transpose()?;
            if let Some(p) = &args.bundle {
                out.input(p)?;
            }
            let (start, adversary, control) = episode_setup(case, &args.profile, cli.seed);
            let ctx = DispatchContext { bundle: b, control };
            let seeds: Vec<u64> = (0..args.episodes).map(|k| cli.seed.wrapping_add(k)).collect();
            let modes = [Mode::Monitor, Mode::OpenLoop, Mode::ClosedLoop, Mode::Combined];
            let batch = episode_batch(&start, &adversary, &ctx, &modes, &seeds, args.ticks)?;
            for (mode, s) in &batch.per_mode {
                println!(
                    "{mode:<10} mean payoff {:>8.3}  recovered {:.2}  paired >= Monitor {:.2}",
                    s.mean_payoff, s.recovered_rate, batch.paired_vs_monitor[mode]
                );
            }
            let mut csv = String::from("seed,mode,payoff,recovered,time_to_recover,unresolved_ticks\n");
            for e in &batch.episodes {
                csv += &format!(
                    "{},{:?},{},{},{},{}\n",
                    e.seed,
                    e.mode,
                    e.payoff,
                    e.recovered,
                    e.time_to_recover.map(|t| t.to_string()).unwrap_or_default(),
                    e.unresolved_ticks
                );
            }
            out.write("episodes.csv", csv)?;
            out.json("episode_batch.json", &batch)?;
        }
    }
    out.manifest(
        cli,
        &format!("experiment {}", serde_json::to_value(name)?.as_str().unwrap_or("")),
        config,
    )
}

pub async fn serve(case: NetworkCase, ctx: DispatchContext, addr: SocketAddr, tick_ms: u64) -> Result<()> {
    let app = AppState::start(case, ctx)?;
    if tick_ms > 0 {
        app.spawn_clock(Duration::from_millis(tick_ms));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
