use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fep_core::metrics::{self, MetricsReport};
use fep_core::slreq::{self, CcsVariant, PhVariant, SlReqInput, Table3Orientation};
use fep_core::{run, run_logged, Protocol, RunOutput, ScenarioConfig};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "fep", version, about = "MANET simulator with fuzzy sleep grants and multipath route switching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(RunArgs),
    /// Run a scenario over several node counts.
    Sweep(SweepArgs),
    /// Paired baseline and FEP runs over a seed set.
    Compare(CompareArgs),
    /// Print the controller trace for a JSON input (file path or `-` for stdin).
    SlreqEval { input: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ProtocolArg {
    Baseline,
    Fep,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Baseline => Protocol::Baseline,
            ProtocolArg::Fep => Protocol::Fep,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Semantic,
    AsPrinted,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    TempDominant,
    AsPrintedRows,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults apply to every key it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Parallel runs; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    variant_ph: Option<VariantArg>,
    #[arg(long, value_enum)]
    variant_ccs: Option<VariantArg>,
    #[arg(long, value_enum)]
    table3_orientation: Option<OrientationArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Also write the JSON-lines event log.
    #[arg(long)]
    events: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Node counts, e.g. `30,60,120`.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    nodes: Vec<usize>,
    /// Seeds: a list (`1,2,5`) or an inclusive range (`1..10`).
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Only this protocol; both when omitted.
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "1..10")]
    seeds: String,
    #[arg(long)]
    nodes: Option<usize>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..").or_else(|| part.split_once('-')) {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().trim_start_matches('=').parse()?);
            if a > b {
                bail!("empty seed range {part}");
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().with_context(|| format!("bad seed {part:?}"))?);
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    let ph = |v| match v {
        VariantArg::Semantic => PhVariant::Semantic,
        VariantArg::AsPrinted => PhVariant::AsPrinted,
    };
    let ccs = |v| match v {
        VariantArg::Semantic => CcsVariant::Semantic,
        VariantArg::AsPrinted => CcsVariant::AsPrinted,
    };
    if let Some(v) = common.variant_ph {
        cfg.fep.ph_variant = ph(v);
    }
    if let Some(v) = common.variant_ccs {
        cfg.fep.ccs_variant = ccs(v);
    }
    if let Some(o) = common.table3_orientation {
        cfg.fep.table3_orientation = match o {
            OrientationArg::TempDominant => Table3Orientation::TempDominant,
            OrientationArg::AsPrintedRows => Table3Orientation::AsPrintedRows,
        };
    }
    Ok(cfg)
}

fn stem(cfg: &ScenarioConfig) -> String {
    format!("{}_seed{}_n{}", cfg.run.protocol.as_str(), cfg.run.seed, cfg.nodes.count)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, cfg: &ScenarioConfig, report: &MetricsReport, format: Format) -> Result<PathBuf> {
    let (ext, text) = match format {
        Format::Csv => ("csv", report.to_csv()),
        Format::Json => ("json", report.to_json() + "\n"),
    };
    let path = dir.join(format!("report_{}.{ext}", stem(cfg)));
    write(&path, &text)?;
    Ok(path)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    Ok(b.build()?)
}

fn run_many(cfgs: Vec<ScenarioConfig>, jobs: Option<usize>) -> Result<Vec<(ScenarioConfig, RunOutput)>> {
    for cfg in &cfgs {
        cfg.validate()?;
    }
    let pool = pool(jobs)?;
    let outs = pool.install(|| cfgs.into_par_iter().map(|c| (c.clone(), run(c))).collect::<Vec<_>>());
    outs.into_iter().map(|(c, o)| Ok((c, o?))).collect()
}

fn summary_line(r: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    format!(
        "{:<8} seed {:<4} n {:<4} delivery {:>7}%  energy/node {:.4} J  msgs/node {:.1}  delay/session {} ms  breaks/session {}  rreq {}  grants {}",
        r.protocol.as_str(),
        r.seed,
        r.nodes,
        opt(r.delivery_ratio_pct),
        r.per_node_energy_j,
        r.per_node_message_overhead,
        opt(r.delay_per_session_ms),
        opt(r.link_breaks_per_session),
        r.raw.rreq_count,
        r.raw.grants,
    )
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(p) = args.protocol {
        cfg.run.protocol = p.into();
    }
    if let Some(n) = args.nodes {
        cfg.nodes.count = n;
    }
    fs::create_dir_all(&args.common.out).with_context(|| format!("creating {}", args.common.out.display()))?;
    let out = if args.events { run_logged(cfg.clone())? } else { run(cfg.clone())? };
    let path = write_report(&args.common.out, &cfg, &out.report, args.common.format)?;
    println!("{}", summary_line(&out.report));
    println!("wrote {}", path.display());
    if args.events {
        let path = args.common.out.join(format!("events_{}.jsonl", stem(&cfg)));
        write(&path, &out.log_jsonl())?;
        println!("wrote {} ({} records)", path.display(), out.log.len());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = load_config(&args.common)?;
    let seeds = parse_seeds(&args.seeds)?;
    let protocols: Vec<Protocol> = match args.protocol {
        Some(p) => vec![p.into()],
        None => vec![Protocol::Baseline, Protocol::Fep],
    };
    let mut cfgs = Vec::new();
    for &n in &args.nodes {
        for &p in &protocols {
            for &s in &seeds {
                let mut c = base.clone();
                c.nodes.count = n;
                c.run.protocol = p;
                c.run.seed = s;
                cfgs.push(c);
            }
        }
    }
    fs::create_dir_all(&args.common.out).with_context(|| format!("creating {}", args.common.out.display()))?;
    let outs = run_many(cfgs, args.common.jobs)?;
    let mut table = MetricsReport::csv_header() + "\n";
    for (cfg, out) in &outs {
        write_report(&args.common.out, cfg, &out.report, args.common.format)?;
        table.push_str(&out.report.csv_row());
        table.push('\n');
        println!("{}", summary_line(&out.report));
    }
    let path = args.common.out.join("sweep.csv");
    write(&path, &table)?;
    println!("wrote {} reports and {}", outs.len(), path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let mut base = load_config(&args.common)?;
    if let Some(n) = args.nodes {
        base.nodes.count = n;
    }
    let seeds = parse_seeds(&args.seeds)?;
    let cfgs: Vec<ScenarioConfig> = seeds
        .iter()
        .flat_map(|&s| {
            [Protocol::Baseline, Protocol::Fep].map(|p| {
                let mut c = base.clone();
                c.run.seed = s;
                c.run.protocol = p;
                c
            })
        })
        .collect();
    fs::create_dir_all(&args.common.out).with_context(|| format!("creating {}", args.common.out.display()))?;
    let outs = run_many(cfgs, args.common.jobs)?;
    let (mut baseline, mut fep) = (Vec::new(), Vec::new());
    for (cfg, out) in &outs {
        write_report(&args.common.out, cfg, &out.report, args.common.format)?;
        println!("{}", summary_line(&out.report));
        match cfg.run.protocol {
            Protocol::Baseline => baseline.push(out.report.clone()),
            Protocol::Fep => fep.push(out.report.clone()),
        }
    }
    let summary = metrics::paired(&baseline, &fep)?;
    let n = base.nodes.count;
    let path = match args.common.format {
        Format::Csv => {
            let path = args.common.out.join(format!("compare_n{n}.csv"));
            write(&path, &metrics::comparison_csv(&baseline, &fep)?)?;
            path
        }
        Format::Json => {
            let path = args.common.out.join(format!("compare_n{n}.json"));
            write(&path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            path
        }
    };
    println!("\nmedian over {} paired seeds (improvement = |X-Y|*100/max(X,Y)):", summary.seeds.len());
    for (name, pct) in &summary.improvement_pct {
        let delta = summary.median_delta.get(name).copied().unwrap_or(0.0);
        println!("  {name:<34} improvement {pct:>7.2}%  median delta {delta:+.4}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_slreq_eval(input: &Path) -> Result<()> {
    let text = if input == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?
    };
    let input: SlReqInput = serde_json::from_str(&text).context("parsing controller input")?;
    let trace = slreq::trace(&input)?;
    println!("{trace}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::SlreqEval { input } => cmd_slreq_eval(&input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
