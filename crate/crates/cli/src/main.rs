mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixedconv::geometry::{Lattice, OrderedBasis};
use mixedconv::harness::{
    canonical_sharpness, induction_trace, random_suite, sharpness_counterexample, verify_spec, young_check,
    InductionTrace, SuiteOptions,
};
use mixedconv::norms::ExponentVector;
use mixedconv::report::{suite_csv, write_atomic, JsonLines};
use mixedconv::stft::{verify_transfer, verify_window_change, GaussianSignal, PhaseGrid, TransferInstance};
use mixedconv::weights::{
    certify, check_e0_compatibility, check_submultiplicative, make_weight, SampleRegion, WeightFamily,
    SUBMULTIPLICATIVE_TOLERANCE,
};
use serde::Serialize;
use serde_json::json;

use config::{default_trace_instance, default_verify_instance, Config, ConfigError};

const DEFAULT_OUT: &str = "mixedconv-out";
const OUT_ENV: &str = "MIXEDCONV_OUT";

/// Numerical checks of mixed-norm estimates for semi-discrete convolutions.
#[derive(Debug, Parser)]
#[command(name = "mixedconv", version)]
struct Cli {
    /// TOML configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed of the random suite and Young trials.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of random suite instances.
    #[arg(long, global = true)]
    count: Option<usize>,
    /// Dimensions to draw from, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Report directory (the MIXEDCONV_OUT environment variable takes precedence).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Relative quadrature allowance.
    #[arg(long, global = true)]
    margin: Option<f64>,
    /// Cells per axis of the region of interest.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Draw weighted instances.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    weighted: Option<bool>,
    /// Draw sequences of both signs.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    signed: Option<bool>,
    /// Also write SVG charts.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    plots: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check one instance of the convolution estimate.
    Verify,
    /// Check a random suite of instances.
    Suite,
    /// Random trials of the discrete Young inequalities.
    Young {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Growth of the ratio outside the exponent condition.
    Sharpness {
        /// Sequence lengths, comma separated.
        #[arg(long = "N", value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Stage-by-stage induction check of one instance.
    Trace,
    /// Transfer identities of the second-level transform.
    StftTransfer {
        #[arg(long)]
        points: Option<usize>,
    },
    /// Window-change domination in phase space.
    WindowChange,
    /// Submultiplicativity, compatibility and moderateness of the weights.
    WeightsCheck,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn invalid(e: mixedconv::Error) -> Failure {
    match e {
        mixedconv::Error::Io(m) => Failure::Runtime(m),
        other => Failure::Config(other.to_string()),
    }
}

/// A report in progress, remembering the first failing record.
struct Report {
    name: &'static str,
    lines: JsonLines,
    first_failure: Option<usize>,
    summary: Vec<String>,
}

impl Report {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            lines: JsonLines::new(name, None),
            first_failure: None,
            summary: Vec::new(),
        }
    }

    fn push<T: Serialize>(&mut self, kind: &str, record: &T, pass: bool) -> Result<(), Failure> {
        self.lines.push(kind, record).map_err(invalid)?;
        if !pass && self.first_failure.is_none() {
            self.first_failure = Some(self.lines.lines().len());
        }
        Ok(())
    }

    fn say(&mut self, line: String) {
        self.summary.push(line);
    }
}

struct Run {
    cli: Cli,
    config: Config,
    out: PathBuf,
    plots: bool,
}

impl Run {
    fn suite_options(&self) -> SuiteOptions {
        let mut o = self.config.suite_options();
        let c = &self.cli;
        o.seed = c.seed.unwrap_or(o.seed);
        o.count = c.count.unwrap_or(o.count);
        o.dims = c.dims.clone().unwrap_or(o.dims);
        o.margin = c.margin.unwrap_or(o.margin);
        o.resolution = c.resolution.unwrap_or(o.resolution);
        o.weighted = c.weighted.unwrap_or(o.weighted);
        o.signed = c.signed.unwrap_or(o.signed);
        o
    }

    fn write(&self, file: &str, contents: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(file);
        write_atomic(&path, contents.as_bytes()).map_err(|e| Failure::Runtime(e.to_string()))?;
        Ok(path)
    }

    fn finish(&self, report: Report) -> Result<ExitCode, Failure> {
        let path = self.write(&format!("{}.jsonl", report.name.replace('-', "_")), &report.lines.render())?;
        for line in &report.summary {
            println!("{line}");
        }
        println!("report: {}", path.display());
        match report.first_failure {
            Some(line) => {
                eprintln!("check failed: first failing record at {}:{line}", path.display());
                Ok(ExitCode::from(1))
            }
            None => Ok(ExitCode::SUCCESS),
        }
    }

    fn verify(&self) -> Result<ExitCode, Failure> {
        let spec = self.config.instance_or(default_verify_instance)?;
        let opts = self.suite_options();
        let rec = verify_spec(&spec, opts.resolution, opts.margin, opts.refine);
        let mut rep = Report::new("verify");
        rep.say(match &rec.rejection {
            Some(why) => format!("verify: rejected: {why}"),
            None => format!(
                "verify: lhs {:.6e}  rhs {:.6e}  ratio {:.6}  constant {:.6}  pass {}",
                rec.lhs,
                rec.rhs,
                rec.ratio,
                rec.admissible_constant,
                rec.passed()
            ),
        });
        rep.push("verification", &rec, rec.passed())?;
        self.finish(rep)
    }

    fn suite(&self) -> Result<ExitCode, Failure> {
        let opts = self.suite_options();
        let suite = random_suite(&opts).map_err(invalid)?;
        let mut rep = Report::new("suite");
        for rec in &suite.records {
            rep.push("verification", rec, rec.passed())?;
        }
        rep.push("summary", &suite.summary, suite.pass())?;
        let s = &suite.summary;
        rep.say(format!(
            "suite: {} of {} passed ({} rejected), max ratio {:.6}, max lhs/(C rhs) {:.6}, max drift {:.3e}",
            s.passed, s.count, s.rejected, s.max_ratio, s.max_normalized_ratio, s.max_drift
        ));
        self.write("suite.csv", &suite_csv(&suite.records))?;
        if self.plots {
            let points: Vec<(f64, f64)> = suite
                .records
                .iter()
                .filter(|r| r.admissible_constant > 0.0)
                .map(|r| (r.trial.unwrap_or(0) as f64, r.ratio / r.admissible_constant))
                .collect();
            let svg = plot::line_chart(
                "lhs / (C rhs) per trial",
                "trial",
                "normalized ratio",
                &points,
                Some(1.0 + opts.margin),
                false,
            );
            self.write("suite_ratios.svg", &svg)?;
        }
        self.finish(rep)
    }

    fn young(&self, trials: Option<usize>) -> Result<ExitCode, Failure> {
        let trials = trials.or(self.config.harness.trials).unwrap_or(500);
        let seed = self.cli.seed.or(self.config.harness.seed).unwrap_or(1);
        let r = young_check(trials, seed).map_err(invalid)?;
        let mut rep = Report::new("young");
        rep.say(format!(
            "young: {} trials, {} violations, max slack {:.3e} / {:.3e}",
            r.trials, r.violations, r.convolution_slack, r.small_exponent_slack
        ));
        rep.push("young", &r, r.pass)?;
        self.finish(rep)
    }

    fn sharpness(&self, n: Option<Vec<usize>>) -> Result<ExitCode, Failure> {
        let ns = n
            .or_else(|| self.config.harness.sharpness_n.clone())
            .unwrap_or_else(|| vec![4, 16, 64]);
        if ns.is_empty() || ns.contains(&0) {
            return Err(Failure::Config("sharpness: N must be positive".into()));
        }
        let exps = match &self.config.exponents {
            Some(e) => {
                let p: ExponentVector = e.p.parse().map_err(invalid)?;
                let r: ExponentVector = e.r.parse().map_err(invalid)?;
                Some((p, r))
            }
            None => None,
        };
        let mut rep = Report::new("sharpness");
        let mut points = Vec::new();
        for &n in &ns {
            let rec = match &exps {
                Some((p, r)) => sharpness_counterexample(n, p, r).map_err(invalid)?,
                None => canonical_sharpness(n).map_err(invalid)?,
            };
            if rec.admissible {
                return Err(Failure::Config(format!(
                    "sharpness: (p, r) = (({}), ({})) satisfies the exponent condition",
                    rec.p, rec.r
                )));
            }
            rep.say(format!("sharpness: N = {n}  ratio {:.6}", rec.ratio));
            rep.push("sharpness", &rec, true)?;
            points.push((n as f64, rec.ratio));
        }
        for w in points.windows(2) {
            let growth = json!({
                "from": w[0].0,
                "to": w[1].0,
                "length_factor": w[1].0 / w[0].0,
                "ratio_factor": w[1].1 / w[0].1,
            });
            rep.push("growth", &growth, true)?;
        }
        if self.plots {
            let svg = plot::line_chart("ratio vs N", "N", "lhs / rhs", &points, None, true);
            self.write("sharpness.svg", &svg)?;
        }
        self.finish(rep)
    }

    fn trace(&self) -> Result<ExitCode, Failure> {
        let spec = self.config.instance_or(default_trace_instance)?;
        let opts = self.suite_options();
        let mut rep = Report::new("trace");
        let trace = spec
            .build(opts.resolution)
            .and_then(|inst| induction_trace(&inst, opts.margin));
        match trace {
            Ok(trace) => {
                for s in &trace.stages {
                    rep.say(format!(
                        "trace: stage {}  exponent {}  max g/rhs {:.6}  pass {}",
                        s.k, s.exponent, s.max_ratio, s.pass
                    ));
                    rep.push("stage", s, s.pass)?;
                }
                rep.push("trace", &trace, trace.pass)?;
                if self.plots {
                    if let Some(svg) = stage_heatmap(&trace) {
                        self.write("trace_stage0.svg", &svg)?;
                    }
                }
            }
            Err(e) => {
                rep.say(format!("trace: rejected: {e}"));
                rep.push("rejection", &json!({ "instance": spec, "rejection": e.to_string() }), false)?;
            }
        }
        self.finish(rep)
    }

    fn stft_transfer(&self, points: Option<usize>) -> Result<ExitCode, Failure> {
        let s = &self.config.stft;
        let coarse_points = points.or(s.points).unwrap_or(16);
        let fine_points = s.refined_points.unwrap_or(coarse_points + 8);
        let tol = s.tolerance.unwrap_or(0.05);
        let mut rep = Report::new("stft-transfer");
        let mut residuals = Vec::new();
        for n in [coarse_points, fine_points] {
            let inst = TransferInstance::gaussian(n).map_err(invalid)?;
            let r = verify_transfer(&inst.quasi, &inst.window, &inst.output, tol).map_err(invalid)?;
            rep.say(format!(
                "stft-transfer: {n} points  worst residual {:.3e}  pass {}",
                r.worst_residual, r.passed
            ));
            residuals.push(r.worst_residual);
            rep.push("transfer", &json!({ "points": n, "report": r }), r.passed)?;
        }
        let decreasing = residuals[1] <= residuals[0];
        rep.push(
            "refinement",
            &json!({ "points": [coarse_points, fine_points], "residuals": residuals, "decreasing": decreasing }),
            decreasing,
        )?;
        self.finish(rep)
    }

    fn window_change(&self) -> Result<ExitCode, Failure> {
        let tol = self.cli.margin.or(self.config.stft.tolerance).unwrap_or(0.05);
        let g = GaussianSignal::standard();
        let r = verify_window_change(&g, &g, &g, &PhaseGrid::default(), tol).map_err(invalid)?;
        let mut rep = Report::new("window-change");
        rep.say(format!(
            "window-change: constant {:.6}  refined {:.6}  stable {}",
            r.constant, r.refined_constant, r.stable
        ));
        rep.push("window_change", &r, r.passed)?;
        self.finish(rep)
    }

    fn weights_check(&self) -> Result<ExitCode, Failure> {
        let (omega_family, v_family, on_lines) = match &self.config.weights {
            Some(w) => (
                w.omega.parse::<WeightFamily>().map_err(invalid)?,
                w.v.parse::<WeightFamily>().map_err(invalid)?,
                w.omega_on_lines,
            ),
            None => (WeightFamily::Exponential { r: 0.25 }, WeightFamily::Polynomial { s: 1.0 }, true),
        };
        let e0 = self
            .config
            .axes
            .as_ref()
            .map(|a| a.periodic.clone())
            .unwrap_or_else(|| vec![false, true]);
        let d = e0.len();
        let basis = match &self.config.basis {
            Some(b) => OrderedBasis::from_vectors(&b.vectors).map_err(invalid)?,
            None => OrderedBasis::standard(d),
        };
        if basis.dim() != d {
            return Err(Failure::Config("weights-check: basis and axes disagree on the dimension".into()));
        }
        let mut omega = make_weight(omega_family).map_err(invalid)?;
        if on_lines && e0.iter().any(|&p| p) {
            let keep: Vec<bool> = e0.iter().map(|p| !p).collect();
            omega = omega.restricted(&basis, &keep).map_err(invalid)?;
        }
        let v = make_weight(v_family).map_err(invalid)?;
        let lattice = Lattice::new(basis.clone());
        let shifts: Vec<Vec<f64>> = lattice
            .points_in_range(&vec![2; d])
            .map_err(invalid)?
            .iter()
            .map(|m| lattice.point(m))
            .collect();
        let region = SampleRegion::cube(d, 4.0);
        let physical = SampleRegion::Points(region.points().iter().map(|c| basis.to_physical(c)).collect());

        let mut rep = Report::new("weights-check");
        let sub = check_submultiplicative(&v, &physical, &shifts, SUBMULTIPLICATIVE_TOLERANCE).map_err(invalid)?;
        rep.say(format!(
            "weights-check: v = {} submultiplicative {} (constant {:.6})",
            v.describe(),
            sub.holds,
            sub.moderate_constant
        ));
        rep.push("submultiplicative", &json!({ "weight": v.describe(), "check": sub }), sub.holds)?;
        let compat = check_e0_compatibility(&omega, &basis, &e0, &region, 1e-9).map_err(invalid)?;
        rep.say(format!(
            "weights-check: omega = {} compatible with E0 {}",
            omega.describe(),
            compat.holds
        ));
        rep.push("compatibility", &json!({ "weight": omega.describe(), "check": compat }), compat.holds)?;
        let cert = certify(&omega, &v, &physical, &shifts).map_err(invalid)?;
        rep.say(format!(
            "weights-check: omega is v-moderate on the sample with constant {:.6}",
            cert.constant
        ));
        rep.push("moderateness", &cert, cert.constant.is_finite())?;
        self.finish(rep)
    }
}

fn stage_heatmap(trace: &InductionTrace) -> Option<String> {
    let (g, rhs) = (trace.g.first()?, trace.rhs.first()?);
    if g.ndim() != 2 {
        return None;
    }
    let (rows, cols) = (g.shape()[1], g.shape()[0]);
    let values: Vec<Vec<f64>> = (0..rows)
        .map(|j| {
            (0..cols)
                .map(|i| {
                    let r = rhs[[i, j].as_slice()];
                    if r > 0.0 {
                        g[[i, j].as_slice()] / r
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Some(plot::heatmap("stage 0: |a * f| / right side", &values))
}

fn output_dir(cli: &Cli, config: &Config) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .or_else(|| config.harness.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let config = load_config(cli.config.as_deref())?;
    let out = output_dir(&cli, &config);
    let plots = cli.plots.or(config.harness.plots).unwrap_or(false);
    let (cli, command) = split(cli);
    let run = Run {
        cli,
        config,
        out,
        plots,
    };
    match command {
        Command::Verify => run.verify(),
        Command::Suite => run.suite(),
        Command::Young { trials } => run.young(trials),
        Command::Sharpness { n } => run.sharpness(n),
        Command::Trace => run.trace(),
        Command::StftTransfer { points } => run.stft_transfer(points),
        Command::WindowChange => run.window_change(),
        Command::WeightsCheck => run.weights_check(),
    }
}

fn split(mut cli: Cli) -> (Cli, Command) {
    let command = std::mem::replace(&mut cli.command, Command::Verify);
    (cli, command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
