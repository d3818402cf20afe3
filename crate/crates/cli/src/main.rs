use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use septest::bootstrap::default_block_length;
use septest::io::{read_sample, report_to_json, write_sample, RunConfig, SampleFormat};
use septest::simulate::{
    run_experiment, ExperimentResult, Ma1Sites, SimConfig, SimKernelParams, Simulator,
};
use septest::{relative_measure, run_test, ApproxChoice, Error, LazyCovariance, PsiChoice};

const EXIT_NO_REJECT: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_REJECT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "septest",
    version,
    about = "Sup-norm separability test for space-time covariances"
)]
struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a sample for separability and write a JSON report.
    Test(TestArgs),
    /// Simulate an MA(1) sample and write it to a file.
    Simulate(SimulateArgs),
    /// Estimate rejection rates over a grid of (S, N, c) settings.
    Table1(Table1Args),
    /// Print the relative deviation ||C - C^x|| / ||C|| of a sample.
    Relmeasure(RelmeasureArgs),
}

#[derive(Args)]
struct ApproxArgs {
    /// Separable approximation: trace, product or spca.
    #[arg(long)]
    approx: Option<String>,
    /// Weight function for the product approximation: const or cosine.
    #[arg(long)]
    psi: Option<String>,
}

#[derive(Args)]
struct SiteArgs {
    /// Reading of the MA(1) weight exp(-b^2 (s - s')^2): index (lattice
    /// indices), coordinate (grid points in [0, 1]) or integer.
    #[arg(long, default_value = "index")]
    ma1_sites: String,
    /// Shorthand for --ma1-sites integer.
    #[arg(long, conflicts_with = "ma1_sites")]
    ma1_integer_sites: bool,
}

impl SiteArgs {
    fn resolve(&self) -> Result<Ma1Sites, Failure> {
        if self.ma1_integer_sites {
            return Ok(Ma1Sites::Integer);
        }
        self.ma1_sites
            .parse()
            .map_err(|e: Error| usage(e.to_string()))
    }
}

#[derive(Args)]
struct TestArgs {
    /// Sample file (CSV or BIN).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Sample format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    approx: ApproxArgs,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    block_length: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[allow(non_snake_case)]
struct SimulateArgs {
    #[arg(long, default_value_t = 3.0)]
    a: f64,
    #[arg(long, default_value_t = 2.0)]
    b: f64,
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    #[arg(long = "S")]
    S: usize,
    #[arg(long = "T", default_value_t = 50)]
    T: usize,
    #[arg(long = "N")]
    N: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the S - 1 interior spatial points 1/S..(S-1)/S.
    #[arg(long)]
    paper_grid: bool,
    #[command(flatten)]
    sites: SiteArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
#[allow(non_snake_case)]
struct Table1Args {
    /// Settings as "S=4,10;N=100,200"; every combination is run.
    #[arg(long)]
    rows: String,
    /// Comma-separated values of c.
    #[arg(long, default_value = "0,1")]
    c: String,
    #[arg(long = "T", default_value_t = 50)]
    T: usize,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 400)]
    replicates: usize,
    /// Block length; the sample-size lookup is used when omitted.
    #[arg(long)]
    block_length: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    approx: ApproxArgs,
    /// Use S uniform spatial points 1/S..S/S instead of the interior grid.
    #[arg(long)]
    uniform_grid: bool,
    #[command(flatten)]
    sites: SiteArgs,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every experiment result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RelmeasureArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    approx: ApproxArgs,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn approx_choice(args: &ApproxArgs, fallback: ApproxChoice) -> CliResult<ApproxChoice> {
    let psi = args
        .psi
        .as_deref()
        .map(str::parse::<PsiChoice>)
        .transpose()
        .map_err(|e| usage(e.to_string()))?;
    let choice = match args.approx.as_deref() {
        Some(name) => ApproxChoice::parse(name, psi.unwrap_or(PsiChoice::Const))
            .map_err(|e| usage(e.to_string()))?,
        None => match (fallback, psi) {
            (ApproxChoice::Product { .. }, Some(psi)) => ApproxChoice::Product { psi },
            (other, _) => other,
        },
    };
    if psi.is_some() && !matches!(choice, ApproxChoice::Product { .. }) {
        return Err(usage("--psi only applies to --approx product"));
    }
    Ok(choice)
}

fn sample_format(explicit: Option<&str>, path: &Path) -> CliResult<SampleFormat> {
    match explicit {
        Some(f) => f.parse().map_err(|e: Error| usage(e.to_string())),
        None => Ok(SampleFormat::from_path(path)),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Run(e.into())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| Failure::Run(e.into()))
        }
    }
}

fn cmd_test(args: TestArgs) -> CliResult<u8> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.approx = approx_choice(&args.approx, cfg.approx)?;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(l) = args.block_length {
        cfg.block_length = Some(l);
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let input = args
        .input
        .or(cfg.input.clone())
        .ok_or_else(|| usage("test needs --in FILE or an input in --config"))?;
    let out = args.out.or(cfg.output.clone());

    let format = sample_format(args.format.as_deref(), &input)?;
    let sample = read_sample(&input, format)?;
    let boot = cfg.bootstrap_config(sample.len());
    boot.validate().map_err(|e| usage(e.to_string()))?;
    let report = run_test(&sample, &boot)?;
    write_output(out.as_deref(), &report_to_json(&report)?)?;
    eprintln!(
        "statistic {:.6e}, quantile {:.6e}, p-value {:.4}: {}",
        report.statistic.sup_dev,
        report.quantile,
        report.p_value,
        if report.reject {
            "reject separability"
        } else {
            "do not reject"
        }
    );
    Ok(if report.reject {
        EXIT_REJECT
    } else {
        EXIT_NO_REJECT
    })
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<u8> {
    let params = SimKernelParams {
        a: args.a,
        b: args.b,
        c: args.c,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    if args.N < 2 {
        return Err(usage("--N must be at least 2"));
    }
    let sim = Simulator::new(
        params,
        args.S,
        args.T,
        args.paper_grid,
        args.sites.resolve()?,
    )
    .map_err(|e| match e {
        Error::Domain(msg) => usage(msg),
        other => Failure::Run(other),
    })?;
    let sample = sim.sample_seeded(args.N, args.seed)?;
    let format = sample_format(args.format.as_deref(), &args.out)?;
    write_sample(&args.out, &sample, format)?;
    Ok(EXIT_NO_REJECT)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| usage(format!("invalid {what} value '{}'", v.trim())))
        })
        .collect()
}

/// Parses `"S=4,10;N=100,200"` into the two value lists.
fn parse_rows(rows: &str) -> CliResult<(Vec<usize>, Vec<usize>)> {
    let mut s_values = None;
    let mut n_values = None;
    for part in rows.split(';').filter(|p| !p.trim().is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("expected KEY=VALUES in --rows, got '{part}'")))?;
        match key.trim() {
            "S" => s_values = Some(parse_list(values, "S")?),
            "N" => n_values = Some(parse_list(values, "N")?),
            other => return Err(usage(format!("unknown --rows key '{other}'"))),
        }
    }
    match (s_values, n_values) {
        (Some(s), Some(n)) => Ok((s, n)),
        _ => Err(usage("--rows needs both S=... and N=...")),
    }
}

fn cmd_table1(args: Table1Args) -> CliResult<u8> {
    let (s_values, n_values) = parse_rows(&args.rows)?;
    let c_values: Vec<f64> = parse_list(&args.c, "c")?;
    let approx = approx_choice(&args.approx, ApproxChoice::Trace)?;
    let sites = args.sites.resolve()?;

    let mut configs = Vec::new();
    for &s in &s_values {
        for &n in &n_values {
            for &c in &c_values {
                let mut boot = septest::BootstrapConfig::new(n, approx, args.seed);
                boot.replicates = args.replicates;
                boot.alpha = args.alpha;
                boot.block_length = args.block_length.unwrap_or_else(|| default_block_length(n));
                let cfg = SimConfig {
                    params: SimKernelParams::with_c(c),
                    n_space: s,
                    n_time: args.T,
                    n,
                    runs: args.runs,
                    bootstrap: boot,
                    seed: args.seed,
                    paper_grid: !args.uniform_grid,
                    sites,
                };
                cfg.validate().map_err(|e| usage(e.to_string()))?;
                configs.push(cfg);
            }
        }
    }

    let mut csv = String::from("S,N,c,rejection_rate,runs,r,l,seed\n");
    let mut results: Vec<ExperimentResult> = Vec::new();
    for cfg in &configs {
        let res = run_experiment(cfg)?;
        eprintln!(
            "S={} N={} c={}: rejection rate {:.4} ({} runs, {:.1}s)",
            cfg.n_space,
            cfg.n,
            cfg.params.c,
            res.rejection_rate,
            res.decisions.len(),
            res.wall_time_seconds
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            cfg.n_space,
            cfg.n,
            cfg.params.c,
            res.rejection_rate,
            res.decisions.len(),
            cfg.bootstrap.replicates,
            cfg.bootstrap.block_length,
            cfg.seed
        ));
        results.push(res);
    }
    write_output(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.json {
        let mut json =
            serde_json::to_string_pretty(&results).map_err(|e| Failure::Run(e.into()))?;
        json.push('\n');
        write_output(Some(path), &json)?;
    }
    Ok(EXIT_NO_REJECT)
}

fn cmd_relmeasure(args: RelmeasureArgs) -> CliResult<u8> {
    let approx = approx_choice(&args.approx, ApproxChoice::Trace)?;
    let format = sample_format(args.format.as_deref(), &args.input)?;
    let sample = read_sample(&args.input, format)?;
    let cov = LazyCovariance::new(&sample)?;
    let kind = approx.build(cov.grid());
    let rm = relative_measure(
        &cov,
        &kind,
        septest::statistic::DEFAULT_BLOCK_SIZE,
        septest::DEFAULT_MEMORY_BUDGET,
    )?;
    println!("{}", rm.value);
    Ok(EXIT_NO_REJECT)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Table1(a) => cmd_table1(a),
        Command::Relmeasure(a) => cmd_relmeasure(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
