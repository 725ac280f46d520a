//! Monte Carlo experiments: synthetic streams, RMISE, rate and memory
//! phase-transition runs, CSV and gnuplot output.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, PenaltySpec};
use crate::engine::{DensityConfig, Fit, NormalEquations, RegressorConfig, StreamBatch};
use crate::error::{Error, Result};
use crate::pipeline::{OnePassEstimator, TuningMode};
use crate::quadrature::integrate_converged;
use crate::schedule::SchedulerConfig;
use crate::targets::Target;
use crate::tuning::TuningGrid;

/// Distribution of the predictor on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Design {
    Uniform,
    /// Beta(a, b) with `a, b ≥ 1` so the density stays bounded.
    Beta { a: f64, b: f64 },
}

impl Design {
    pub fn density(&self, t: f64) -> f64 {
        match *self {
            Design::Uniform => 1.0,
            Design::Beta { a, b } => {
                let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                if t <= 0.0 || t >= 1.0 {
                    return if (t <= 0.0 && a == 1.0) || (t >= 1.0 && b == 1.0) { (-ln_b).exp() } else { 0.0 };
                }
                ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - ln_b).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Design::Beta { a, b } = *self {
            if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::Config("beta design needs a, b >= 1".into()));
            }
        }
        Ok(())
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// How the Gram matrix is obtained in streaming runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    Sketch,
    KnownUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub target: Target,
    pub n: u64,
    pub batch_size: usize,
    /// `None` disables the noise.
    pub snr: Option<f64>,
    pub design: Design,
    pub seed: u64,
    pub replicates: usize,
    pub checkpoints: Vec<u64>,
    pub mem_cap: Option<usize>,
    pub tuning: TuningMode,
    /// Extension margin as a fraction of the domain width; `None` picks the
    /// target's default (0 for `m3`, 0.1 otherwise).
    pub extension: Option<f64>,
    pub density: DensityMode,
    /// Record wall-clock times (makes reports non-reproducible).
    pub timing: bool,
}

/// Replicate count of the quick configuration.
pub const FAST_REPLICATES: usize = 20;

impl Scenario {
    pub fn new(target: Target) -> Self {
        let n = 100_000;
        Self {
            target,
            n,
            batch_size: 100,
            snr: Some(2.0),
            design: Design::Uniform,
            seed: 1,
            replicates: 100,
            checkpoints: default_checkpoints(n),
            mem_cap: None,
            tuning: TuningMode::CrossValidated { grid: TuningGrid::default() },
            extension: None,
            density: DensityMode::Sketch,
            timing: false,
        }
    }

    pub fn fast(mut self) -> Self {
        self.replicates = FAST_REPLICATES;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.batch_size == 0 || self.replicates == 0 {
            return Err(Error::Config("n, batch_size and replicates must be positive".into()));
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) {
                return Err(Error::Config("snr must be positive".into()));
            }
        }
        if self.checkpoints.is_empty() {
            return Err(Error::Config("need at least one checkpoint".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        if *self.checkpoints.last().unwrap() > self.n || self.checkpoints[0] == 0 {
            return Err(Error::Config("checkpoints must lie in 1..=n".into()));
        }
        if self.mem_cap == Some(0) {
            return Err(Error::Config("mem_cap must be positive".into()));
        }
        if let Some(e) = self.extension {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Config("extension must be >= 0".into()));
            }
        }
        if self.density == DensityMode::KnownUniform && self.design != Design::Uniform {
            return Err(Error::Config("known-uniform density needs the uniform design".into()));
        }
        self.design.validate()?;
        self.tuning.validate()
    }

    /// Noise variance from `SNR = E m(T)² / σ²`; zero without noise.
    pub fn sigma2(&self) -> Result<f64> {
        let Some(snr) = self.snr else { return Ok(0.0) };
        let moment = match self.design {
            Design::Uniform => self.target.second_moment_uniform(),
            d => self.target.second_moment(&|t| d.density(t))?,
        };
        Ok(moment / snr)
    }

    pub fn extension_fraction(&self) -> f64 {
        self.extension.unwrap_or(match self.target {
            Target::M3 | Target::Constant(_) => 0.0,
            _ => crate::basis::DEFAULT_EXTENSION_FRACTION,
        })
    }

    pub fn regressor_config(&self) -> Result<RegressorConfig> {
        let basis = BasisSpec::new(crate::basis::BasisFamily::Fourier, 0.0, 1.0, self.extension_fraction())?;
        let density = match self.density {
            DensityMode::Sketch => DensityConfig::Sketch { basis: BasisSpec::fourier(0.0, 1.0)? },
            DensityMode::KnownUniform => DensityConfig::KnownUniform,
        };
        let cfg = RegressorConfig {
            basis,
            penalty: PenaltySpec::roughness(),
            density,
            schedule: SchedulerConfig::default().with_mem_cap(self.mem_cap),
            batch_size: self.batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let target: Target = kv.remove("target").ok_or_else(|| Error::Config("missing key 'target'".into()))?.parse()?;
        let mut sc = Scenario::new(target);
        let mut grid = TuningGrid::default();
        let mut fixed: (Option<f64>, Option<f64>) = (None, None);
        let mut mode = "cv".to_string();
        let mut checkpoints = None;
        for (k, v) in kv {
            match k.as_str() {
                "n" => sc.n = parse_num(&k, &v)?,
                "batch_size" => sc.batch_size = parse_num(&k, &v)?,
                "snr" => sc.snr = parse_opt(&k, &v)?,
                "design" => sc.design = parse_design(&v)?,
                "seed" => sc.seed = parse_num(&k, &v)?,
                "replicates" => sc.replicates = parse_num(&k, &v)?,
                "checkpoints" => checkpoints = Some(parse_list::<u64>(&k, &v)?),
                "mem_cap" => sc.mem_cap = parse_opt(&k, &v)?,
                "tuning" => mode = v.to_ascii_lowercase(),
                "c_rho" => fixed.0 = Some(parse_num(&k, &v)?),
                "h" => fixed.1 = Some(parse_num(&k, &v)?),
                "c_rho_grid" => grid.c_rho = parse_list(&k, &v)?,
                "h_grid" => grid.h = parse_list(&k, &v)?,
                "folds" => grid.folds = parse_num(&k, &v)?,
                "n0" => grid.n0 = parse_num(&k, &v)?,
                "extension" => sc.extension = Some(parse_num(&k, &v)?),
                "density" => {
                    sc.density = match v.as_str() {
                        "sketch" => DensityMode::Sketch,
                        "known_uniform" => DensityMode::KnownUniform,
                        _ => return Err(Error::Config(format!("density: unknown mode '{v}'"))),
                    }
                }
                "timing" => sc.timing = parse_num(&k, &v)?,
                _ => return Err(Error::Config(format!("unknown key '{k}'"))),
            }
        }
        sc.tuning = match mode.as_str() {
            "cv" => TuningMode::CrossValidated { grid },
            "fixed" => match fixed {
                (Some(c_rho), Some(h)) => TuningMode::Fixed { c_rho, h },
                _ => return Err(Error::Config("fixed tuning needs c_rho and h".into())),
            },
            other => return Err(Error::Config(format!("tuning: unknown mode '{other}'"))),
        };
        sc.checkpoints = checkpoints.unwrap_or_else(|| default_checkpoints(sc.n));
        sc.validate()?;
        Ok(sc)
    }
}

fn parse_num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{k}: cannot parse '{v}'")))
}

fn parse_opt<T: std::str::FromStr>(k: &str, v: &str) -> Result<Option<T>> {
    match v.to_ascii_lowercase().as_str() {
        "inf" | "none" | "off" => Ok(None),
        _ => parse_num(k, v).map(Some),
    }
}

fn parse_list<T: std::str::FromStr>(k: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(k, s.trim())).collect()
}

fn parse_design(v: &str) -> Result<Design> {
    if v == "uniform" {
        return Ok(Design::Uniform);
    }
    if let Some(rest) = v.strip_prefix("beta:") {
        let p: Vec<f64> = parse_list("design", rest)?;
        if let [a, b] = p[..] {
            return Ok(Design::Beta { a, b });
        }
    }
    Err(Error::Config(format!("design: expected 'uniform' or 'beta:a,b', got '{v}'")))
}

/// `10³, 10⁴, …` up to `n`, plus `n` itself.
pub fn default_checkpoints(n: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1000u64), |c| c.checked_mul(10)).take_while(|c| *c < n).collect();
    out.push(n);
    out
}

/// Deterministic batch source for one replicate.
pub struct StreamGenerator {
    target: Target,
    design: Design,
    sigma: f64,
    batch_size: usize,
    remaining: u64,
    rng: ChaCha8Rng,
    beta: Option<Beta<f64>>,
}

impl StreamGenerator {
    pub fn new(sc: &Scenario, replicate: u64) -> Result<Self> {
        sc.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        rng.set_stream(replicate);
        let beta = match sc.design {
            Design::Beta { a, b } => Some(Beta::new(a, b).map_err(|e| Error::Config(e.to_string()))?),
            Design::Uniform => None,
        };
        Ok(Self {
            target: sc.target,
            design: sc.design,
            sigma: sc.sigma2()?.sqrt(),
            batch_size: sc.batch_size,
            remaining: sc.n,
            rng,
            beta,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Iterator for StreamGenerator {
    type Item = StreamBatch;

    fn next(&mut self) -> Option<StreamBatch> {
        if self.remaining == 0 {
            return None;
        }
        let b = (self.batch_size as u64).min(self.remaining) as usize;
        self.remaining -= b as u64;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut t = Vec::with_capacity(b);
        let mut y = Vec::with_capacity(b);
        for _ in 0..b {
            let ti = match (&self.design, &self.beta) {
                (Design::Beta { .. }, Some(d)) => d.sample(&mut self.rng),
                _ => self.rng.random::<f64>(),
            };
            let noise = if self.sigma > 0.0 { self.sigma * normal.sample(&mut self.rng) } else { 0.0 };
            t.push(ti);
            y.push(self.target.eval(ti) + noise);
        }
        Some(StreamBatch { t, y })
    }
}

/// All batches of one replicate.
pub fn generate_stream(sc: &Scenario, replicate: u64) -> Result<Vec<StreamBatch>> {
    Ok(StreamGenerator::new(sc, replicate)?.collect())
}

/// `∫₀¹ (m − m̂)²`, split at the target's kinks.
pub fn integrated_squared_error(target: Target, estimate: &dyn Fn(f64) -> f64) -> Result<f64> {
    let mut edges = vec![0.0];
    edges.extend_from_slice(target.kinks());
    edges.push(1.0);
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += integrate_converged(w[0], w[1], 512, 1e-10, |t| (target.eval(t) - estimate(t)).powi(2))?;
    }
    Ok(total)
}

/// `√(N⁻¹ Σᵢ ∫ (m − m̂ᵢ)²)`.
pub fn rmise(target: Target, estimates: &[&dyn Fn(f64) -> f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Domain("rmise needs at least one estimate".into()));
    }
    let mut total = 0.0;
    for e in estimates {
        total += integrated_squared_error(target, *e)?;
    }
    Ok((total / estimates.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Streaming,
    BatchOracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Streaming => "streaming",
            Method::BatchOracle => "batch_oracle",
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub target: String,
    pub n: u64,
    pub rmise: f64,
    pub q_mean: f64,
    pub mem_units_mean: f64,
    pub wall_ms: f64,
    pub failures: usize,
}

/// Per-replicate measurements behind a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSamples {
    pub ise: Vec<f64>,
    pub q: Vec<usize>,
    pub mem: Vec<usize>,
    pub failures: usize,
    pub wall_ms: f64,
}

impl CellSamples {
    fn new() -> Self {
        Self { ise: Vec::new(), q: Vec::new(), mem: Vec::new(), failures: 0, wall_ms: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    /// Samples keyed like the rows (same order).
    pub samples: Vec<CellSamples>,
    /// Tuned `(C_ρ, h)` per replicate, when tuning succeeded.
    pub tuned: Vec<Option<(f64, f64)>>,
}

pub const CSV_HEADER: &str = "method,target,n,rmise,q_mean,mem_units_mean,wall_ms,failures";

impl ExperimentReport {
    pub fn row(&self, method: &str, n: u64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.method, r.target, r.n, r.rmise, r.q_mean, r.mem_units_mean, r.wall_ms, r.failures
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    fn merge(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
        self.samples.extend(other.samples);
        self.tuned.extend(other.tuned);
    }
}

/// Gnuplot script drawing log-log RMISE curves, one per method, from a
/// report CSV.
pub fn gnuplot_script(csv_path: &str, methods: &[&str], title: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set logscale xy\n");
    s.push_str("set xlabel 'n'\nset ylabel 'RMISE'\n");
    s.push_str(&format!("set title '{title}'\n"));
    s.push_str("set key top right\n");
    let plots: Vec<String> = methods
        .iter()
        .map(|m| {
            format!(
                "'{csv_path}' using (strcol(1) eq '{m}' ? $3 : NaN):(strcol(1) eq '{m}' ? $4 : NaN) with linespoints title '{m}'"
            )
        })
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// Runs every replicate of `sc` and reports each requested method at each
/// checkpoint. The batch oracle fits the full-sample normal equations with
/// the streaming run's `q` and `ρ` at that checkpoint.
pub fn run_experiment(sc: &Scenario, methods: &[Method]) -> Result<ExperimentReport> {
    run_labeled(sc, methods, None)
}

fn run_labeled(sc: &Scenario, methods: &[Method], label: Option<&str>) -> Result<ExperimentReport> {
    sc.validate()?;
    let cfg = sc.regressor_config()?;
    let mut cells: BTreeMap<(Method, u64), CellSamples> = BTreeMap::new();
    for m in methods {
        for c in &sc.checkpoints {
            cells.insert((*m, *c), CellSamples::new());
        }
    }
    let mut tuned = Vec::with_capacity(sc.replicates);
    for rep in 0..sc.replicates {
        let outcome = run_replicate(sc, &cfg, rep as u64, methods, &mut cells);
        tuned.push(outcome);
    }
    let method_label = |m: &Method| match label {
        Some(l) => format!("{}_{l}", m.name()),
        None => m.name().to_string(),
    };
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for ((m, c), cell) in cells {
        let ok = cell.ise.len();
        let mean = |v: f64| if ok == 0 { f64::NAN } else { v / ok as f64 };
        rows.push(ReportRow {
            method: method_label(&m),
            target: sc.target.name(),
            n: c,
            rmise: mean(cell.ise.iter().sum()).sqrt(),
            q_mean: mean(cell.q.iter().sum::<usize>() as f64),
            mem_units_mean: mean(cell.mem.iter().sum::<usize>() as f64),
            wall_ms: cell.wall_ms,
            failures: cell.failures,
        });
        samples.push(cell);
    }
    Ok(ExperimentReport { rows, samples, tuned })
}

fn run_replicate(
    sc: &Scenario,
    cfg: &RegressorConfig,
    rep: u64,
    methods: &[Method],
    cells: &mut BTreeMap<(Method, u64), CellSamples>,
) -> Option<(f64, f64)> {
    let fail_rest = |cells: &mut BTreeMap<(Method, u64), CellSamples>, from: u64| {
        for ((_, c), cell) in cells.iter_mut() {
            if *c >= from {
                cell.failures += 1;
            }
        }
    };
    let mut gen = match StreamGenerator::new(sc, rep) {
        Ok(g) => g,
        Err(_) => {
            fail_rest(cells, 0);
            return None;
        }
    };
    let mut est = match OnePassEstimator::new(*cfg, sc.tuning.clone()) {
        Ok(e) => e,
        Err(_) => {
            fail_rest(cells, 0);
            return None;
        }
    };
    let want_oracle = methods.contains(&Method::BatchOracle);
    let want_stream = methods.contains(&Method::Streaming);
    let mut pending: Vec<StreamBatch> = Vec::new();
    let mut oracle: Option<NormalEquations> = None;
    let mut next_cp = 0;
    let mut stream_ms = 0.0;
    let mut oracle_ms = 0.0;
    let mut seen = 0u64;
    while next_cp < sc.checkpoints.len() {
        let Some(batch) = gen.next() else { break };
        seen += batch.len() as u64;
        let t0 = Instant::now();
        if est.ingest(&batch).is_err() {
            fail_rest(cells, seen);
            return est.tuned();
        }
        stream_ms += t0.elapsed().as_secs_f64() * 1e3;
        if want_oracle {
            let t0 = Instant::now();
            match (&mut oracle, est.regressor()) {
                (Some(o), _) => o.ingest(&batch).expect("validated by the streaming ingest"),
                (None, Some(r)) => {
                    let max_q = r.config().schedule.active_count(sc.n).max(1);
                    let mut o = NormalEquations::new(cfg.basis, max_q);
                    for b in pending.drain(..) {
                        o.ingest(&b).expect("validated by the streaming ingest");
                    }
                    o.ingest(&batch).expect("validated by the streaming ingest");
                    oracle = Some(o);
                }
                (None, None) => pending.push(batch),
            }
            oracle_ms += t0.elapsed().as_secs_f64() * 1e3;
        }
        while next_cp < sc.checkpoints.len() && seen >= sc.checkpoints[next_cp] {
            let cp = sc.checkpoints[next_cp];
            next_cp += 1;
            let t0 = Instant::now();
            let fit = est.fit();
            let fit_ms = t0.elapsed().as_secs_f64() * 1e3;
            let stats = est.stats();
            if want_stream {
                let cell = cells.get_mut(&(Method::Streaming, cp)).expect("cell");
                record(cell, sc.target, fit.as_deref().ok(), stats.q_active, stats.memory_units);
                if sc.timing {
                    cell.wall_ms += stream_ms + fit_ms;
                }
            }
            if want_oracle {
                let cell = cells.get_mut(&(Method::BatchOracle, cp)).expect("cell");
                let t0 = Instant::now();
                let ofit = match (&oracle, stats.rho) {
                    (Some(o), Some(rho)) => o.solve(&cfg.penalty, stats.q_active, rho).ok(),
                    _ => None,
                };
                record(cell, sc.target, ofit.as_ref(), stats.q_active, 2 * seen as usize);
                if sc.timing {
                    cell.wall_ms += oracle_ms + t0.elapsed().as_secs_f64() * 1e3;
                }
            }
        }
    }
    est.tuned()
}

fn record(cell: &mut CellSamples, target: Target, fit: Option<&Fit>, q: usize, mem: usize) {
    let ise = fit.and_then(|f| integrated_squared_error(target, &|t| f.eval(t)).ok());
    match ise {
        Some(v) if v.is_finite() => {
            cell.ise.push(v);
            cell.q.push(q);
            cell.mem.push(mem);
        }
        _ => cell.failures += 1,
    }
}

/// Relative RMISE change between the last two checkpoints of one curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub mem_cap: Option<usize>,
    pub rmise_before: f64,
    pub rmise_after: f64,
    /// `(after − before) / before`.
    pub relative_change: f64,
    /// `|change| ≤ plateau_tol`.
    pub plateaued: bool,
    /// `change ≤ −decrease_tol`.
    pub decreasing: bool,
}

/// Relative-change threshold for a plateau.
pub const PLATEAU_TOL: f64 = 0.1;
/// Minimum relative improvement for "continued decrease".
pub const DECREASE_TOL: f64 = 0.2;

/// Streaming runs of `sc` under each memory cap, all on the same seeds.
pub fn phase_transition_experiment(
    sc: &Scenario,
    mem_caps: &[Option<usize>],
) -> Result<(ExperimentReport, Vec<PhaseSummary>)> {
    if sc.checkpoints.len() < 2 {
        return Err(Error::Config("phase experiment needs two or more checkpoints".into()));
    }
    let mut report = ExperimentReport { rows: Vec::new(), samples: Vec::new(), tuned: Vec::new() };
    let mut summaries = Vec::new();
    for cap in mem_caps {
        let mut s = sc.clone();
        s.mem_cap = *cap;
        let label = match cap {
            Some(c) => format!("cap{c}"),
            None => "uncapped".to_string(),
        };
        let r = run_labeled(&s, &[Method::Streaming], Some(&label))?;
        let k = sc.checkpoints.len();
        let before = r.rows[k - 2].rmise;
        let after = r.rows[k - 1].rmise;
        let change = (after - before) / before;
        summaries.push(PhaseSummary {
            mem_cap: *cap,
            rmise_before: before,
            rmise_after: after,
            relative_change: change,
            plateaued: change.abs() <= PLATEAU_TOL,
            decreasing: change <= -DECREASE_TOL,
        });
        report.merge(r);
    }
    Ok((report, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub report: ExperimentReport,
    /// Least-squares slope of log RMISE on log n; `None` when skipped.
    pub slope: Option<f64>,
    /// `−β/(2β+1)`.
    pub hypothesized: f64,
    /// Set when every RMISE is numerically zero.
    pub skipped: bool,
}

/// RMISE below this counts as an exact fit in rate experiments.
pub const ZERO_RMISE: f64 = 1e-8;

pub fn rate_experiment(sc: &Scenario, beta: f64) -> Result<RateReport> {
    if sc.checkpoints.len() < 3 {
        return Err(Error::Config("rate experiment needs three or more checkpoints".into()));
    }
    let (first, last) = (sc.checkpoints[0] as f64, *sc.checkpoints.last().unwrap() as f64);
    if last / first < 100.0 * (1.0 - 1e-12) {
        return Err(Error::Config("rate experiment checkpoints must span two decades".into()));
    }
    let report = run_experiment(sc, &[Method::Streaming])?;
    let hypothesized = -beta / (2.0 * beta + 1.0);
    let pts: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.n as f64, r.rmise)).collect();
    if pts.iter().all(|(_, r)| *r < ZERO_RMISE) {
        return Ok(RateReport { report, slope: None, hypothesized, skipped: true });
    }
    let slope = log_log_slope(&pts);
    Ok(RateReport { report, slope, hypothesized, skipped: false })
}

/// Ordinary least-squares slope of `ln y` on `ln x`; `None` with fewer
/// than two finite positive points.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(target: Target) -> Scenario {
        Scenario { n: 2000, replicates: 2, checkpoints: vec![1000, 2000], ..Scenario::new(target) }
    }

    #[test]
    fn rmise_examples() {
        let m = Target::M1;
        let exact = |t: f64| m.eval(t);
        assert_eq!(rmise(m, &[&exact]).unwrap(), 0.0);
        let shifted = |t: f64| m.eval(t) + 0.3;
        assert_relative_eq!(rmise(m, &[&shifted]).unwrap(), 0.3, max_relative = 1e-10);
        let b = BasisSpec::fourier(0.0, 1.0).unwrap();
        let plus = |t: f64| Target::M2.eval(t) + b.eval_unchecked(2, t);
        assert_relative_eq!(rmise(Target::M2, &[&plus, &plus, &plus]).unwrap(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn sigma_matches_snr() {
        let sc = Scenario::new(Target::M1);
        assert_relative_eq!(sc.sigma2().unwrap(), 2.2795853023360673 / 2.0, max_relative = 1e-10);
        let beta = Scenario { design: Design::Beta { a: 2.0, b: 3.0 }, ..Scenario::new(Target::M2) };
        // E|T − 0.4|² = Var T + (E T − 0.4)² = 0.04 + 0 for Beta(2, 3)
        assert_relative_eq!(beta.sigma2().unwrap(), 0.04 / 2.0, max_relative = 1e-9);
        let quiet = Scenario { snr: None, ..Scenario::new(Target::M1) };
        assert_eq!(quiet.sigma2().unwrap(), 0.0);
    }

    #[test]
    fn beta_density_integrates_to_one() {
        let d = Design::Beta { a: 2.5, b: 1.0 };
        let z = integrate_converged(0.0, 1.0, 512, 1e-12, |t| d.density(t)).unwrap();
        assert_relative_eq!(z, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn noise_free_stream_is_exact_and_deterministic() {
        let sc = Scenario { snr: None, n: 250, checkpoints: vec![250], ..Scenario::new(Target::M2) };
        let a = generate_stream(&sc, 0).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].len(), 50);
        for b in &a {
            for (t, y) in b.t.iter().zip(&b.y) {
                assert_eq!(*y, Target::M2.eval(*t));
            }
        }
        assert_eq!(a, generate_stream(&sc, 0).unwrap());
        assert_ne!(a, generate_stream(&sc, 1).unwrap());
    }

    #[test]
    fn reports_are_reproducible() {
        let sc = small(Target::M1);
        let a = run_experiment(&sc, &[Method::Streaming, Method::BatchOracle]).unwrap();
        let b = run_experiment(&sc, &[Method::Streaming, Method::BatchOracle]).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(a.rows.len(), 4);
        assert!(a.to_csv_string().starts_with(CSV_HEADER));
        for r in &a.rows {
            assert_eq!(r.failures, 0, "{r:?}");
            assert!(r.rmise.is_finite() && r.rmise > 0.0);
            assert_eq!(r.wall_ms, 0.0);
        }
    }

    #[test]
    fn warmup_checkpoints_count_as_failures() {
        let sc = Scenario { checkpoints: vec![500, 2000], ..small(Target::M2) };
        let r = run_experiment(&sc, &[Method::Streaming]).unwrap();
        assert_eq!(r.row("streaming", 500).unwrap().failures, 2);
        assert!(r.row("streaming", 500).unwrap().rmise.is_nan());
        assert_eq!(r.row("streaming", 2000).unwrap().failures, 0);
    }

    #[test]
    fn cap_of_three_q0_pins_q() {
        let sc = Scenario {
            mem_cap: Some(15),
            tuning: TuningMode::Fixed { c_rho: 1.0, h: 0.5 },
            ..small(Target::M3)
        };
        let r = run_experiment(&sc, &[Method::Streaming]).unwrap();
        for row in &r.rows {
            assert_eq!(row.q_mean, 5.0);
        }
    }

    #[test]
    fn degenerate_rate_is_skipped() {
        let sc = Scenario {
            snr: None,
            n: 10_000,
            replicates: 1,
            checkpoints: vec![100, 1000, 10_000],
            tuning: TuningMode::Fixed { c_rho: 1e-3, h: 0.2 },
            ..Scenario::new(Target::Constant(1.5))
        };
        let r = rate_experiment(&sc, 1.0).unwrap();
        assert!(r.skipped && r.slope.is_none(), "{:?}", r.report.rows);
        assert!(rate_experiment(&Scenario { checkpoints: vec![1000, 10_000], ..sc.clone() }, 1.0).is_err());
        assert_relative_eq!(log_log_slope(&[(10.0, 1.0), (1000.0, 0.01)]).unwrap(), -1.0, max_relative = 1e-12);
        assert!(log_log_slope(&[(10.0, 0.0)]).is_none());
    }

    #[test]
    fn config_file_round_trip() {
        let text = "# m2 run\ntarget = m2\nn = 5000\nsnr = inf\nreplicates = 3\nmem_cap = 30\n\
                    tuning = fixed\nc_rho = 0.1\nh = 0.25\ncheckpoints = 1000, 5000\ndesign = beta:2,2\n";
        let sc = Scenario::from_config_str(text).unwrap();
        assert_eq!(sc.target, Target::M2);
        assert_eq!(sc.snr, None);
        assert_eq!(sc.mem_cap, Some(30));
        assert_eq!(sc.tuning, TuningMode::Fixed { c_rho: 0.1, h: 0.25 });
        assert_eq!(sc.checkpoints, vec![1000, 5000]);
        assert_eq!(sc.design, Design::Beta { a: 2.0, b: 2.0 });
        assert!(Scenario::from_config_str("target = m1\nbogus = 1").is_err());
        assert!(Scenario::from_config_str("n = 10").is_err());
        assert!(Scenario::from_config_str("target = m1\ntuning = fixed\nh = 0.2").is_err());
        assert_eq!(default_checkpoints(100_000), vec![1000, 10_000, 100_000]);
    }

    #[test]
    fn gnuplot_mentions_each_method() {
        let s = gnuplot_script("r.csv", &["streaming", "batch_oracle"], "m1");
        assert!(s.contains("'streaming'") && s.contains("'batch_oracle'") && s.contains("logscale"));
    }
}
