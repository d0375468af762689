use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smoe::error::{Error, ErrorKind, Result};
use smoe::io::{load_dataset, DataManifest};
use smoe::model::Variant;
use smoe::pipeline::{
    compare_partitions, cross_tabulate, fit, rase_against_scenario, read_allocation_probs, read_fit_document,
    read_partition, read_truth, simulate, sweep, write_cross_tab, write_fit, write_plotdata, write_rase,
    write_sweep, FitOptions, Provenance,
};
use smoe::postproc::BandSpec;
use smoe::simgen::scenario_by_name;

/// Semiparametric gating-network mixtures of experts for categorical data.
#[derive(Parser)]
#[command(name = "smoe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated datasets for a named scenario (g2 or g6).
    Simulate(SimulateArgs),
    /// Fit one model and write its draws and summaries.
    Fit(FitArgs),
    /// Fit a range of component counts and tabulate AICM.
    Sweep(SweepArgs),
    /// Compare a clustering with known truth or a label column.
    Metrics(MetricsArgs),
    /// Write plot-ready tables from a fit directory.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "g2")]
    scenario: String,
    /// Units per dataset; the scenario default when omitted.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Data manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "semi", value_parser = ["semi", "param", "blca"])]
    variant: String,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Basis functions per smooth covariate.
    #[arg(long, default_value_t = 23)]
    knots: usize,
    /// Size of the logistic scale mixture (3 or 6).
    #[arg(long = "H", default_value_t = 6)]
    h: usize,
    /// Lower and upper band percentiles.
    #[arg(long, default_value = "2.5,97.5")]
    percentiles: String,
    /// Grid points per smooth-effect band.
    #[arg(long, default_value_t = 101)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of mixture components.
    #[arg(long = "G", default_value_t = 2)]
    g: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Component counts: a list `2,3,4` or a range `1..15` (inclusive).
    #[arg(long = "G", default_value = "1..15")]
    g: String,
}

#[derive(Args)]
struct MetricsArgs {
    /// Fit directory whose MAP partition and allocation probabilities are used.
    #[arg(long, conflicts_with = "partition")]
    fit: Option<PathBuf>,
    /// Any `id,label` CSV with one-based labels, used instead of a fit.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Truth sidecar `id,true_component,...`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Scenario for RASE; read from the simulation record when omitted.
    #[arg(long)]
    scenario: Option<String>,
    /// Manifest for covariates; the one recorded in the fit when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Covariate column to cross-tabulate against (e.g. party).
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_percentiles(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(usage(format!("--percentiles expects two values, got '{s}'")));
    };
    let num = |v: &str| v.parse::<f64>().map_err(|_| usage(format!("bad percentile '{v}'")));
    Ok((num(lo)?, num(hi)?))
}

fn parse_g_values(s: &str) -> Result<Vec<usize>> {
    let bad = || usage(format!("--G expects a list like 2,3,4 or a range like 1..15, got '{s}'"));
    let values: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn options(m: &ModelArgs, g: usize) -> Result<FitOptions> {
    let (lower, upper) = parse_percentiles(&m.percentiles)?;
    Ok(FitOptions {
        variant: m.variant.parse::<Variant>()?,
        g,
        iters: m.iters,
        burnin: m.burnin,
        thin: m.thin,
        seed: m.seed,
        knots: m.knots,
        h: m.h,
        band: BandSpec {
            points: m.points,
            lower,
            upper,
        },
    })
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let scenario = scenario_by_name(&a.scenario)?;
    let n = a.n.unwrap_or(scenario.n);
    let paths = simulate(&a.out, &scenario, n, a.seed, a.replications)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let opts = options(&a.model, a.g)?;
    let manifest = DataManifest::read(&a.model.manifest)?;
    let data = load_dataset(&a.model.manifest)?.dataset;
    let f = fit(&data, &opts)?;
    let prov = Provenance::new("fit", Some(&a.model.manifest), Some(manifest), opts.seed);
    write_fit(&a.model.out, &f, &data, &prov)?;
    let s = &f.summary;
    println!(
        "variant={} G={} aicm={:.3} aicm_deviance={:.3} nonempty={} sizes={:?} non_permutations={}",
        s.variant, s.components, s.aicm, s.aicm_deviance, s.nonempty_components, s.cluster_sizes, s.non_permutation_count
    );
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let gs = parse_g_values(&a.g)?;
    let opts = options(&a.model, gs[0])?;
    let manifest = DataManifest::read(&a.model.manifest)?;
    let data = load_dataset(&a.model.manifest)?.dataset;
    let (table, fits) = sweep(&data, &opts, &gs)?;
    let prov = Provenance::new("sweep", Some(&a.model.manifest), Some(manifest), opts.seed);
    write_sweep(&a.model.out, &table, &fits, &data, &prov)?;
    println!("G\taicm_deviance\tnonempty");
    for r in &table.rows {
        println!(
            "{}\t{:.3}\t{}{}",
            r.g,
            r.aicm_deviance,
            r.nonempty_components,
            if r.selected { "\t*" } else { "" }
        );
    }
    Ok(())
}

fn aligned<T: Clone>(ids: &[String], values: &[T], order: &[String], what: &str) -> Result<Vec<T>> {
    let pos: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(k, i)| (i.as_str(), k)).collect();
    order
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .map(|&k| values[k].clone())
                .ok_or_else(|| Error::Data(format!("{what} has no row for id '{id}'")))
        })
        .collect()
}

fn run_metrics(a: &MetricsArgs) -> Result<()> {
    let doc = a.fit.as_deref().map(read_fit_document).transpose()?;
    let (ids, partition) = match (&a.fit, &a.partition) {
        (Some(dir), None) => read_partition(&dir.join(smoe::pipeline::MAP_FILE))?,
        (None, Some(p)) => read_partition(p)?,
        _ => return Err(usage("give exactly one of --fit and --partition")),
    };
    if a.truth.is_none() && a.labels.is_none() {
        return Err(usage("nothing to compare: give --truth and/or --labels"));
    }
    let g_est = match &doc {
        Some(d) => d.summary.components,
        None => partition.iter().max().map_or(0, |m| m + 1),
    };
    let prov = Provenance::new(
        "metrics",
        a.manifest.as_deref(),
        None,
        doc.as_ref().map_or(0, |d| d.provenance.seed),
    );
    let mut report = serde_json::Map::new();

    let manifest_path: Option<PathBuf> = a.manifest.clone().or_else(|| {
        doc.as_ref()
            .and_then(|d| d.provenance.manifest_path.as_ref())
            .map(PathBuf::from)
    });

    if let Some(truth_path) = &a.truth {
        let (truth, record) = read_truth(truth_path)?;
        let truth_labels = truth.aligned(&ids)?;
        let g_true = truth.num_components().max(truth_labels.iter().max().map_or(0, |m| m + 1));
        let soft = match &a.fit {
            Some(dir) => {
                let (pids, p) = read_allocation_probs(&dir.join(smoe::pipeline::ALLOCATION_FILE))?;
                let rows: Vec<usize> = aligned(&pids, &(0..pids.len()).collect::<Vec<_>>(), &ids, "allocation table")?;
                Some(p.select_rows(&rows))
            }
            None => None,
        };
        let mut cmp = compare_partitions(&partition, g_est, soft.as_ref(), &truth_labels, g_true)?;
        let scenario_name = a.scenario.clone().or(record.map(|r| r.scenario));
        if let (Some(name), Some(d), Some(mp)) = (scenario_name, &doc, &manifest_path) {
            let scenario = scenario_by_name(&name)?;
            let data = load_dataset(mp)?.dataset;
            let x: Vec<Vec<f64>> = (0..data.smooth.ncols())
                .map(|j| data.smooth.column(j).iter().copied().collect())
                .collect();
            cmp.rase = rase_against_scenario(&d.summary, &cmp.label_map, &scenario, &data.smooth_names, &x)?;
        }
        if let Some(out) = &a.out {
            std::fs::create_dir_all(out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
            write_rase(&out.join("rase.csv"), &cmp.rase, &prov)?;
        }
        report.insert("truth".into(), serde_json::to_value(&cmp)?);
    }

    if let Some(column) = &a.labels {
        let mp = manifest_path.ok_or_else(|| usage("--labels needs a manifest (--manifest or a fit recording one)"))?;
        let loaded = load_dataset(&mp)?;
        let labels = aligned(&loaded.dataset.ids, &loaded.covariates.text(column)?, &ids, "covariates")?;
        let tab = cross_tabulate(&partition, &labels)?;
        if let Some(out) = &a.out {
            std::fs::create_dir_all(out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
            write_cross_tab(&out.join("crosstab.csv"), &tab, &prov)?;
        }
        report.insert("crosstab".into(), serde_json::to_value(&tab)?);
    }

    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        std::fs::write(out.join("metrics.json"), text.clone() + "\n")
            .map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
    }
    println!("{text}");
    Ok(())
}

fn run_plotdata(a: &PlotArgs) -> Result<()> {
    let doc = read_fit_document(&a.fit)?;
    let variables = match doc.provenance.manifest_path.as_deref().map(Path::new) {
        Some(p) if p.exists() => load_dataset(p)?
            .levels
            .variables
            .into_iter()
            .map(|v| (v.name, v.levels))
            .collect(),
        _ => Vec::new(),
    };
    write_plotdata(&a.out, &doc, &variables)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Plotdata(a) => run_plotdata(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
