use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onepass::harness::{self, DensityMode, Method, Scenario};
use onepass::lowerbound::{self, CodeParams, ProtocolConfig};
use onepass::pipeline::{EstimatorCheckpoint, OnePassEstimator, TuningMode};
use onepass::service::{self, DensityChoice, StreamSettings};
use onepass::targets::Target;
use onepass::tuning::{self, TuningGrid};
use onepass::StreamBatch;

#[derive(Parser)]
#[command(name = "onepass", version, about = "Space-saving one-pass nonparametric regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo RMISE of the streaming estimator and the batch oracle.
    Simulate(SimulateArgs),
    /// Log-log RMISE slope against the hypothesized rate.
    Rate(RateArgs),
    /// RMISE curves under memory caps.
    Phase(PhaseArgs),
    /// Index-problem protocol simulation.
    Protocol(ProtocolArgs),
    /// Cross-validate (C_rho, h) on the head of a t,y CSV file.
    Tune(TuneArgs),
    /// Stream a t,y CSV file through an estimator and write its checkpoint.
    IngestCsv(IngestArgs),
    /// Evaluate a checkpoint on a uniform grid.
    Query(QueryArgs),
    /// Run the line-delimited JSON service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// key = value scenario file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Signal-to-noise ratio, or "inf" for noise-free data.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Use the quick replicate count.
    #[arg(long)]
    fast: bool,
    /// Comma-separated sample sizes at which to evaluate.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    #[arg(long)]
    mem_cap: Option<usize>,
    /// Fixed tuning "C_rho,h" instead of cross-validation.
    #[arg(long, value_delimiter = ',')]
    fixed: Option<Vec<f64>>,
    /// Restrict the cross-validation h grid.
    #[arg(long, value_delimiter = ',')]
    h_grid: Option<Vec<f64>>,
    #[arg(long)]
    known_density: bool,
    /// Record wall-clock times (reports are then not reproducible).
    #[arg(long)]
    timing: bool,
    /// CSV destination; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ScenarioArgs {
    fn scenario(&self) -> Result<Scenario, String> {
        let mut sc = match (&self.config, &self.target) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Scenario::from_config_str(&text).map_err(|e| e.to_string())?
            }
            (None, Some(t)) => Scenario::new(t.parse::<Target>().map_err(|e| e.to_string())?),
            (None, None) => return Err("either --config or --target is required".into()),
        };
        if let Some(t) = &self.target {
            sc.target = t.parse().map_err(|e: onepass::Error| e.to_string())?;
        }
        if let Some(n) = self.n {
            sc.n = n;
            if self.checkpoints.is_none() {
                sc.checkpoints = harness::default_checkpoints(n);
            }
        }
        if let Some(b) = self.batch_size {
            sc.batch_size = b;
        }
        if let Some(s) = &self.snr {
            sc.snr = match s.as_str() {
                "inf" | "none" => None,
                v => Some(v.parse().map_err(|_| format!("--snr: cannot parse '{v}'"))?),
            };
        }
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if self.fast {
            sc = sc.fast();
        }
        if let Some(r) = self.replicates {
            sc.replicates = r;
        }
        if let Some(c) = &self.checkpoints {
            sc.checkpoints = c.clone();
        }
        if self.mem_cap.is_some() {
            sc.mem_cap = self.mem_cap;
        }
        if let Some(f) = &self.fixed {
            sc.tuning = fixed_mode(f)?;
        } else if let Some(h) = &self.h_grid {
            let grid = match &sc.tuning {
                TuningMode::CrossValidated { grid } => TuningGrid { h: h.clone(), ..grid.clone() },
                TuningMode::Fixed { .. } => TuningGrid { h: h.clone(), ..TuningGrid::default() },
            };
            sc.tuning = TuningMode::CrossValidated { grid };
        }
        if self.known_density {
            sc.density = DensityMode::KnownUniform;
        }
        sc.timing |= self.timing;
        sc.validate().map_err(|e| e.to_string())?;
        Ok(sc)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Methods to run.
    #[arg(long, value_delimiter = ',', default_values = ["streaming", "batch_oracle"])]
    methods: Vec<MethodArg>,
    /// Also write a gnuplot script for the CSV.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Streaming,
    #[value(name = "batch_oracle")]
    BatchOracle,
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Smoothness used for the reference slope −β/(2β+1).
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Memory caps to compare; "inf" for uncapped.
    #[arg(long, value_delimiter = ',', default_values = ["30", "inf"])]
    caps: Vec<String>,
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    chi: f64,
    #[arg(long = "big-m", default_value_t = 1.0)]
    big_m: f64,
    #[arg(long, default_value_t = 0.1)]
    c_k: f64,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = lowerbound::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long)]
    mem_cap: Option<usize>,
    /// Run every k in this list instead of --k.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StreamArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lo: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    hi: f64,
    /// Extension margin as a fraction of the domain width.
    #[arg(long, default_value_t = 0.1)]
    extension: f64,
    #[arg(long)]
    known_density: bool,
    #[arg(long)]
    mem_cap: Option<usize>,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Fixed tuning "C_rho,h" instead of cross-validation.
    #[arg(long, value_delimiter = ',')]
    fixed: Option<Vec<f64>>,
    /// Warm-up size for cross-validation.
    #[arg(long, default_value_t = 1000)]
    n0: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

impl StreamArgs {
    fn settings(&self) -> Result<StreamSettings, String> {
        let tuning = match &self.fixed {
            Some(f) => fixed_mode(f)?,
            None => TuningMode::CrossValidated { grid: TuningGrid { n0: self.n0, folds: self.folds, ..TuningGrid::default() } },
        };
        Ok(StreamSettings {
            lo: self.lo,
            hi: self.hi,
            extension: self.extension,
            density: if self.known_density { DensityChoice::KnownUniform } else { DensityChoice::Sketch },
            tuning,
            mem_cap: self.mem_cap,
            batch_size: self.batch_size,
        })
    }
}

#[derive(Args)]
struct TuneArgs {
    /// CSV with header t,y.
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// CSV with header t,y.
    #[arg(long, short)]
    input: PathBuf,
    /// Checkpoint file to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Continue from an existing checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    stream: StreamArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of equally spaced points over the domain.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Also report the normalized density estimate.
    #[arg(long)]
    density: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[command(flatten)]
    stream: StreamArgs,
}

fn fixed_mode(v: &[f64]) -> Result<TuningMode, String> {
    match v {
        [c_rho, h] => Ok(TuningMode::Fixed { c_rho: *c_rho, h: *h }),
        _ => Err("--fixed takes exactly two values: C_rho,h".into()),
    }
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, String> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format!("{}: missing column '{name}'", path.display()))
    };
    let (ti, yi) = (col("t")?, col("y")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let parse = |i: usize| -> Result<f64, String> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| format!("{}: row {}: bad number", path.display(), row + 2))
        };
        out.push((parse(ti)?, parse(yi)?));
    }
    Ok(out)
}

fn write_gnuplot(path: &Option<PathBuf>, csv: &Option<PathBuf>, methods: &[String], title: &str) -> Result<(), String> {
    if let Some(gp) = path {
        let csv_name = csv.as_ref().map_or("report.csv".to_string(), |p| p.display().to_string());
        let refs: Vec<&str> = methods.iter().map(String::as_str).collect();
        std::fs::write(gp, harness::gnuplot_script(&csv_name, &refs, title)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Simulate(a) => {
            let sc = a.scenario.scenario()?;
            let methods: Vec<Method> = a
                .methods
                .iter()
                .map(|m| match m {
                    MethodArg::Streaming => Method::Streaming,
                    MethodArg::BatchOracle => Method::BatchOracle,
                })
                .collect();
            let report = harness::run_experiment(&sc, &methods).map_err(|e| e.to_string())?;
            report.write_csv(sink(&a.scenario.output)?).map_err(|e| e.to_string())?;
            let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
            write_gnuplot(&a.gnuplot, &a.scenario.output, &names, &sc.target.name())
        }
        Command::Rate(a) => {
            let sc = a.scenario.scenario()?;
            let r = harness::rate_experiment(&sc, a.beta).map_err(|e| e.to_string())?;
            r.report.write_csv(sink(&a.scenario.output)?).map_err(|e| e.to_string())?;
            match r.slope {
                Some(s) => eprintln!("slope {s:.4} (hypothesized {:.4})", r.hypothesized),
                None => eprintln!("slope skipped: estimates are exact"),
            }
            Ok(())
        }
        Command::Phase(a) => {
            let sc = a.scenario.scenario()?;
            let caps = a
                .caps
                .iter()
                .map(|c| match c.as_str() {
                    "inf" | "none" => Ok(None),
                    v => v.parse().map(Some).map_err(|_| format!("--caps: cannot parse '{v}'")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let (report, summary) = harness::phase_transition_experiment(&sc, &caps).map_err(|e| e.to_string())?;
            report.write_csv(sink(&a.scenario.output)?).map_err(|e| e.to_string())?;
            for s in &summary {
                let cap = s.mem_cap.map_or("inf".to_string(), |c| c.to_string());
                eprintln!(
                    "cap {cap}: relative change {:+.4} (plateau {}, decreasing {})",
                    s.relative_change, s.plateaued, s.decreasing
                );
            }
            let mut labels: Vec<String> = report.rows.iter().map(|r| r.method.clone()).collect();
            labels.dedup();
            write_gnuplot(&a.gnuplot, &a.scenario.output, &labels, &sc.target.name())
        }
        Command::Protocol(a) => {
            let code = CodeParams { k: a.k, beta: a.beta, chi: a.chi, m: a.big_m, c_k: a.c_k };
            let mut cfg = ProtocolConfig::new(code, a.n).map_err(|e| e.to_string())?.with_mem_cap(a.mem_cap);
            cfg.sigma = a.sigma;
            let report = match &a.sweep {
                Some(ks) => lowerbound::protocol_sweep(&cfg, ks, a.trials, a.seed),
                None => lowerbound::run_protocol(&cfg, a.trials, a.seed),
            }
            .map_err(|e| e.to_string())?;
            report.write_csv(sink(&a.output)?).map_err(|e| e.to_string())?;
            eprintln!("per-bit error {:.4}", report.error_rate());
            Ok(())
        }
        Command::Tune(a) => {
            let pts = read_points(&a.input)?;
            let settings = a.stream.settings()?;
            let cfg = settings.regressor_config().map_err(|e| e.to_string())?;
            let grid = TuningGrid { n0: a.stream.n0, folds: a.stream.folds, ..TuningGrid::default() };
            let (ts, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let out = tuning::cv_select(&ts, &ys, &grid, &cfg.basis, &cfg.penalty, &cfg.schedule).map_err(|e| e.to_string())?;
            tuning::write_tuning_csv(&out, sink(&a.output)?).map_err(|e| e.to_string())
        }
        Command::IngestCsv(a) => {
            let pts = read_points(&a.input)?;
            let mut est = match &a.resume {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                    let ck = EstimatorCheckpoint::from_json(&text).map_err(|e| e.to_string())?;
                    OnePassEstimator::from_checkpoint(&ck).map_err(|e| e.to_string())?
                }
                None => {
                    let s = a.stream.settings()?;
                    OnePassEstimator::new(s.regressor_config().map_err(|e| e.to_string())?, s.tuning)
                        .map_err(|e| e.to_string())?
                }
            };
            let b = est.base_config().batch_size;
            for chunk in pts.chunks(b) {
                est.ingest(&StreamBatch::from_pairs(chunk)).map_err(|e| e.to_string())?;
            }
            let json = est.checkpoint().to_json().map_err(|e| e.to_string())?;
            std::fs::write(&a.output, json + "\n").map_err(|e| format!("{}: {e}", a.output.display()))?;
            let s = est.stats();
            eprintln!("n {} q {} memory units {}", s.n, s.q_active, s.memory_units);
            Ok(())
        }
        Command::Query(a) => {
            if a.grid < 2 {
                return Err("--grid must be at least 2".into());
            }
            let text = std::fs::read_to_string(&a.checkpoint).map_err(|e| format!("{}: {e}", a.checkpoint.display()))?;
            let ck = EstimatorCheckpoint::from_json(&text).map_err(|e| e.to_string())?;
            let est = OnePassEstimator::from_checkpoint(&ck).map_err(|e| e.to_string())?;
            let (lo, hi) = (ck.base.basis.lo, ck.base.basis.hi);
            let mut out = sink(&a.output)?;
            let fit = est.fit().map_err(|e| e.to_string())?;
            writeln!(out, "{}", if a.density { "t,m_hat,f_hat" } else { "t,m_hat" }).map_err(|e| e.to_string())?;
            for i in 0..a.grid {
                let t = if i + 1 == a.grid { hi } else { lo + (hi - lo) * i as f64 / (a.grid - 1) as f64 };
                let m = fit.eval(t);
                if a.density {
                    let f = est.density(t).map_err(|e| e.to_string())?;
                    writeln!(out, "{t},{m},{f}")
                } else {
                    writeln!(out, "{t},{m}")
                }
                .map_err(|e| e.to_string())?;
            }
            out.flush().map_err(|e| e.to_string())
        }
        Command::Serve(a) => {
            let settings = a.stream.settings()?;
            settings.regressor_config().map_err(|e| e.to_string())?;
            eprintln!("listening on {}", a.addr);
            service::serve(&a.addr, settings).map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

