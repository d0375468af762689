//! Orchestration of fits, sweeps over the number of components, comparisons
//! with known truth and export of result tables.
//!
//! Every directory written here carries a `summary.json` (or an equivalent
//! JSON record) echoing the manifest and seed, and every CSV starts with a
//! `#` comment line naming both, so each artifact can be regenerated.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_truth, write_synthetic, DataManifest, TruthTable};
use crate::metrics::{ari, match_labels, one_hot, rase, sari, Curve};
use crate::model::{Dataset, GatingDesign, PriorConfig, SmoothTerm, Variant};
use crate::postproc::{allocation_frequencies, relabel, BandSpec, FitSummary, RelabeledDraws};
use crate::sampler::{run_chain, ChainConfig, DrawStore};
use crate::simgen::{generate_replicate, Scenario};

pub const SUMMARY_FILE: &str = "summary.json";
pub const BANDS_FILE: &str = "bands.csv";
pub const MAP_FILE: &str = "map.csv";
pub const ALLOCATION_FILE: &str = "allocation_probs.csv";
pub const DRAWS_DIR: &str = "draws";
pub const RUN_LOG_FILE: &str = "run_log.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SIMULATION_FILE: &str = "simulation.json";

/// What produced an artifact: enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub software_version: String,
    pub command: String,
    pub manifest_path: Option<String>,
    /// Manifest as read, with paths resolved.
    pub manifest: Option<DataManifest>,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, manifest_path: Option<&Path>, manifest: Option<DataManifest>, seed: u64) -> Self {
        Provenance {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            manifest_path: manifest_path.map(|p| p.display().to_string()),
            manifest,
            seed,
        }
    }

    /// One-line `#` comment placed at the top of every CSV artifact.
    pub fn csv_comment(&self) -> String {
        format!(
            "# smoe {} {} seed={} manifest={}",
            self.software_version,
            self.command,
            self.seed,
            self.manifest_path.as_deref().unwrap_or("-")
        )
    }
}

/// Settings of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub variant: Variant,
    pub g: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub knots: usize,
    pub h: usize,
    pub band: BandSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            variant: Variant::Semiparametric,
            g: 2,
            iters: 5000,
            burnin: 1000,
            thin: 1,
            seed: 1,
            knots: crate::basis::DEFAULT_NUM_BASIS,
            h: 6,
            band: BandSpec::default(),
        }
    }
}

impl FitOptions {
    pub fn chain_config(&self) -> ChainConfig {
        let prior = PriorConfig {
            m: self.knots,
            h: self.h,
            variant: self.variant,
            ..Default::default()
        };
        let mut c = ChainConfig::new(self.g, self.iters, self.burnin, self.seed, prior);
        c.thin = self.thin;
        c.check_invariants = false;
        c
    }
}

/// A fitted model with its post-processed draws.
#[derive(Debug, Clone)]
pub struct Fit {
    /// Draws as sampled, before relabeling.
    pub store: DrawStore,
    pub relabeled: RelabeledDraws,
    pub design: GatingDesign,
    pub summary: FitSummary,
    /// `n × G` posterior allocation frequencies after relabeling.
    pub allocation_probs: DMatrix<f64>,
    pub runtime_secs: f64,
}

/// Runs the sampler, resolves label switching and summarizes.
pub fn fit(data: &Dataset, opts: &FitOptions) -> Result<Fit> {
    opts.band.validate()?;
    let start = Instant::now();
    let config = opts.chain_config();
    let store = run_chain(data, &config)?;
    let design = GatingDesign::build(data, opts.variant, opts.knots)?;
    let relabeled = relabel(&store)?;
    let summary = FitSummary::build(&relabeled, &design, &data.smooth_names, &opts.band)?;
    let allocation_probs = allocation_frequencies(&relabeled);
    Ok(Fit {
        store,
        relabeled,
        design,
        summary,
        allocation_probs,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// How a smooth covariate was transformed before entering the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaling {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// `spline` (basis over `[min, max]`), `unit` (`(x − min)/(max − min)`)
    /// or `unused`.
    pub transform: String,
}

fn covariate_scaling(design: &GatingDesign, names: &[String]) -> Vec<CovariateScaling> {
    design
        .smooth_terms
        .iter()
        .enumerate()
        .map(|(j, t)| CovariateScaling {
            name: names.get(j).cloned().unwrap_or_default(),
            min: design.smooth_ranges[j].0,
            max: design.smooth_ranges[j].1,
            transform: match t {
                SmoothTerm::Spline(_) => "spline",
                SmoothTerm::Linear(_) => "unit",
                SmoothTerm::Absent => "unused",
            }
            .into(),
        })
        .collect()
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub provenance: Provenance,
    pub covariate_scaling: Vec<CovariateScaling>,
    pub unit_ids: Vec<String>,
    pub smooth_names: Vec<String>,
    pub summary: FitSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunLog {
    runtime_secs: f64,
    threads: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes CSV records after the provenance comment line.
fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{}", prov.csv_comment()).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes)
}

fn band_rows(summary: &FitSummary) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for b in &summary.smooth_effects {
        for k in 0..b.grid.len() {
            rows.push(vec![
                (b.component + 1).to_string(),
                b.covariate_name.clone(),
                b.grid[k].to_string(),
                b.mean[k].to_string(),
                b.lower[k].to_string(),
                b.upper[k].to_string(),
            ]);
        }
    }
    rows
}

const BAND_HEADER: [&str; 6] = ["component", "covariate", "x", "mean", "p_lo", "p_hi"];

/// Writes `summary.json`, band, MAP and allocation tables, the raw draws and
/// `run_log.json` (the only file with run-dependent content) into `dir`.
pub fn write_fit(dir: &Path, fit: &Fit, data: &Dataset, prov: &Provenance) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = FitDocument {
        provenance: prov.clone(),
        covariate_scaling: covariate_scaling(&fit.design, &data.smooth_names),
        unit_ids: data.ids.clone(),
        smooth_names: data.smooth_names.clone(),
        summary: fit.summary.clone(),
    };
    write_json(&dir.join(SUMMARY_FILE), &doc)?;
    write_csv(&dir.join(BANDS_FILE), prov, &BAND_HEADER, band_rows(&fit.summary))?;
    write_csv(
        &dir.join(MAP_FILE),
        prov,
        &["unit_id", "component"],
        data.ids
            .iter()
            .zip(&fit.summary.map_partition)
            .map(|(id, c)| vec![id.clone(), c.to_string()]),
    )?;
    let g = fit.allocation_probs.ncols();
    let mut head = vec!["unit_id".to_string()];
    head.extend((1..=g).map(|k| format!("p_{k}")));
    let head_ref: Vec<&str> = head.iter().map(String::as_str).collect();
    write_csv(
        &dir.join(ALLOCATION_FILE),
        prov,
        &head_ref,
        data.ids.iter().enumerate().map(|(i, id)| {
            let mut r = vec![id.clone()];
            r.extend((0..g).map(|k| fit.allocation_probs[(i, k)].to_string()));
            r
        }),
    )?;
    fit.store.write_dir(&dir.join(DRAWS_DIR))?;
    write_json(
        &dir.join(RUN_LOG_FILE),
        &RunLog {
            runtime_secs: fit.runtime_secs,
            threads: rayon::current_num_threads(),
        },
    )
}

pub fn read_fit_document(dir: &Path) -> Result<FitDocument> {
    read_json(&dir.join(SUMMARY_FILE))
}

/// Reads `allocation_probs.csv` back into an `n × G` matrix with its unit ids.
pub fn read_allocation_probs(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv_reader(&bytes);
    let g = rdr.headers()?.len().saturating_sub(1);
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        for k in 1..=g {
            vals.push(
                rec[k]
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad probability '{}'", &rec[k])))?,
            );
        }
    }
    Ok((ids.clone(), DMatrix::from_row_slice(ids.len(), g, &vals)))
}

/// Reads a two-column `id,label` partition (MAP table or truth sidecar);
/// labels are one-based in the file and returned zero-based.
pub fn read_partition(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv_reader(&bytes);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = rec
            .get(1)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&c| c >= 1)
            .ok_or_else(|| Error::Data(format!("{}: bad label on row {}", path.display(), r + 1)))?;
        ids.push(rec[0].trim().to_string());
        labels.push(label - 1);
    }
    Ok((ids, labels))
}

/// One row of an AICM-versus-G table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub g: usize,
    pub aicm: f64,
    pub aicm_deviance: f64,
    /// Components holding at least one unit under the MAP partition.
    pub nonempty_components: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub selected_g: usize,
    /// Non-empty components of the selected fit.
    pub selected_nonempty: usize,
}

/// Marks the fit with the best AICM (largest `aicm`, equivalently smallest
/// deviance); ties go to the smaller `G`.
pub fn select_by_aicm(mut rows: Vec<SweepRow>) -> Result<SweepTable> {
    if rows.is_empty() {
        return Err(Error::Config("a sweep needs at least one G".into()));
    }
    let mut best = 0;
    for (k, r) in rows.iter().enumerate() {
        if r.aicm > rows[best].aicm || (r.aicm == rows[best].aicm && r.g < rows[best].g) {
            best = k;
        }
    }
    for (k, r) in rows.iter_mut().enumerate() {
        r.selected = k == best;
    }
    Ok(SweepTable {
        selected_g: rows[best].g,
        selected_nonempty: rows[best].nonempty_components,
        rows,
    })
}

/// Fits every `G` in `gs` concurrently with the same seed.
pub fn sweep(data: &Dataset, opts: &FitOptions, gs: &[usize]) -> Result<(SweepTable, Vec<Fit>)> {
    let fits: Vec<Fit> = gs
        .par_iter()
        .map(|&g| fit(data, &FitOptions { g, ..opts.clone() }))
        .collect::<Result<_>>()?;
    let rows = fits
        .iter()
        .map(|f| SweepRow {
            g: f.summary.components,
            aicm: f.summary.aicm,
            aicm_deviance: f.summary.aicm_deviance,
            nonempty_components: f.summary.nonempty_components,
            selected: false,
        })
        .collect();
    Ok((select_by_aicm(rows)?, fits))
}

/// Writes `sweep.csv` and one fit directory `G<g>` per row.
pub fn write_sweep(dir: &Path, table: &SweepTable, fits: &[Fit], data: &Dataset, prov: &Provenance) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join(SWEEP_FILE),
        prov,
        &["G", "aicm", "aicm_deviance", "nonempty_components", "selected"],
        table.rows.iter().map(|r| {
            vec![
                r.g.to_string(),
                r.aicm.to_string(),
                r.aicm_deviance.to_string(),
                r.nonempty_components.to_string(),
                r.selected.to_string(),
            ]
        }),
    )?;
    write_json(&dir.join("sweep.json"), table)?;
    for f in fits {
        write_fit(&dir.join(format!("G{}", f.summary.components)), f, data, prov)?;
    }
    Ok(())
}

/// RASE of one estimated effect against the generating function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaseRow {
    /// One-based true component.
    pub component: usize,
    pub covariate: String,
    /// Against the truth centered like the estimate (headline value).
    pub centered: f64,
    /// Against the uncentered generating function.
    pub raw: f64,
}

/// Agreement of an estimated clustering with the true allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    pub ari: f64,
    pub sari: f64,
    pub estimated_components: usize,
    pub true_components: usize,
    /// One-based true label matched to each estimated label.
    pub label_map: Vec<usize>,
    pub rase: Vec<RaseRow>,
}

/// ARI of the MAP partition, soft ARI of the allocation probabilities (or the
/// one-hot MAP partition when none are given) and the Hungarian label match.
pub fn compare_partitions(
    map: &[usize],
    g_est: usize,
    soft: Option<&DMatrix<f64>>,
    truth: &[usize],
    g_true: usize,
) -> Result<TruthComparison> {
    let a = ari(map, truth)?;
    let u = match soft {
        Some(s) => s.clone(),
        None => one_hot(map, g_est),
    };
    let s = sari(&u, &one_hot(truth, g_true))?;
    let label_map = match_labels(map, g_est, truth, g_true)?;
    Ok(TruthComparison {
        ari: a,
        sari: s,
        estimated_components: g_est,
        true_components: g_true,
        label_map: label_map.into_iter().map(|k| k + 1).collect(),
        rase: Vec::new(),
    })
}

/// RASE of every non-baseline true effect. Estimated effects are re-expressed
/// relative to the component matched to the true baseline before comparing.
/// Empty unless the fit has as many components as the scenario.
pub fn rase_against_scenario(
    summary: &FitSummary,
    label_map: &[usize],
    scenario: &Scenario,
    smooth_names: &[String],
    smooth_values: &[Vec<f64>],
) -> Result<Vec<RaseRow>> {
    let g = scenario.g;
    if summary.components != g || label_map.len() != g {
        return Ok(Vec::new());
    }
    // zero-based estimated label of each true label
    let mut est_of = vec![0; g];
    for (e, &t) in label_map.iter().enumerate() {
        est_of[t - 1] = e;
    }
    let mut rows = Vec::new();
    for (j, name) in crate::simgen::COVARIATE_NAMES.iter().enumerate() {
        let Some(col) = smooth_names.iter().position(|s| s == name) else {
            continue;
        };
        let band_mean = |est: usize| {
            summary
                .smooth_effects
                .iter()
                .find(|b| b.component == est && b.covariate == col)
                .map(|b| b.mean.clone())
        };
        let Some(grid) = summary.smooth_effects.iter().find(|b| b.covariate == col).map(|b| b.grid.clone()) else {
            continue;
        };
        let zero = vec![0.0; grid.len()];
        let curve_of = |est: usize| -> Vec<f64> {
            if est == g - 1 {
                zero.clone()
            } else {
                band_mean(est).unwrap_or_else(|| zero.clone())
            }
        };
        let base = curve_of(est_of[g - 1]);
        for k in 0..g - 1 {
            let est: Vec<f64> = curve_of(est_of[k]).iter().zip(&base).map(|(a, b)| a - b).collect();
            let est = Curve::new(grid.clone(), est)?;
            let centered = Curve::new(grid.clone(), scenario.centered_effect(k, j, &grid, &smooth_values[col]))?;
            let raw = Curve::new(grid.clone(), grid.iter().map(|&x| scenario.effect(k, j, x)).collect())?;
            rows.push(RaseRow {
                component: k + 1,
                covariate: name.to_string(),
                centered: rase(&est, &centered)?,
                raw: rase(&est, &raw)?,
            });
        }
    }
    Ok(rows)
}

/// Cluster-by-label counts, as for comparing clusters with party membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    /// One-based cluster labels present in the partition.
    pub clusters: Vec<usize>,
    /// Label values in order of first appearance.
    pub labels: Vec<String>,
    /// `counts[cluster][label]`.
    pub counts: Vec<Vec<usize>>,
    pub ari: f64,
}

pub fn cross_tabulate(partition: &[usize], labels: &[String]) -> Result<CrossTab> {
    if partition.len() != labels.len() {
        return Err(Error::Conformability(format!(
            "{} units but {} labels",
            partition.len(),
            labels.len()
        )));
    }
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let coded: Vec<usize> = labels
        .iter()
        .map(|l| {
            *index.entry(l.as_str()).or_insert_with(|| {
                names.push(l.clone());
                names.len() - 1
            })
        })
        .collect();
    let mut clusters: Vec<usize> = partition.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut counts = vec![vec![0; names.len()]; clusters.len()];
    for (&c, &l) in partition.iter().zip(&coded) {
        let r = clusters.binary_search(&c).expect("cluster listed");
        counts[r][l] += 1;
    }
    Ok(CrossTab {
        clusters: clusters.iter().map(|c| c + 1).collect(),
        labels: names,
        counts,
        ari: ari(partition, &coded)?,
    })
}

pub fn write_cross_tab(path: &Path, tab: &CrossTab, prov: &Provenance) -> Result<()> {
    let mut head = vec!["cluster"];
    head.extend(tab.labels.iter().map(String::as_str));
    write_csv(
        path,
        prov,
        &head,
        tab.clusters.iter().zip(&tab.counts).map(|(c, row)| {
            let mut r = vec![c.to_string()];
            r.extend(row.iter().map(usize::to_string));
            r
        }),
    )
}

pub fn write_rase(path: &Path, rows: &[RaseRow], prov: &Provenance) -> Result<()> {
    write_csv(
        path,
        prov,
        &["component", "covariate", "rase_centered", "rase_raw"],
        rows.iter().map(|r| {
            vec![
                r.component.to_string(),
                r.covariate.clone(),
                r.centered.to_string(),
                r.raw.to_string(),
            ]
        }),
    )
}

/// Truth of a simulated dataset, with the scenario when it is recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub replicate: u64,
}

/// Simulates `replications` datasets concurrently into `dir` (or
/// `dir/rep_001..` when more than one). Returns the manifest paths.
pub fn simulate(dir: &Path, scenario: &Scenario, n: usize, seed: u64, replications: usize) -> Result<Vec<PathBuf>> {
    if replications < 1 {
        return Err(Error::Config("at least one replication is needed".into()));
    }
    let width = replications.to_string().len().max(3);
    replicate(replications, |r| {
        let target = if replications == 1 {
            dir.to_path_buf()
        } else {
            dir.join(format!("rep_{:0width$}", r + 1))
        };
        let synth = generate_replicate(scenario, n, seed, r)?;
        let manifest = write_synthetic(&target, &synth)?;
        write_json(
            &target.join(SIMULATION_FILE),
            &SimulationRecord {
                scenario: scenario.name.clone(),
                n,
                seed,
                replicate: r,
            },
        )?;
        Ok(manifest)
    })
}

/// Runs `f` for replicates `0..count` concurrently, keeping their order.
pub fn replicate<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

/// Loads the truth sidecar and, if present beside it, the simulation record.
pub fn read_truth(path: &Path) -> Result<(TruthTable, Option<SimulationRecord>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truth = parse_truth(csv_comment_free(&bytes))?;
    let record = path
        .parent()
        .map(|p| p.join(SIMULATION_FILE))
        .filter(|p| p.exists())
        .map(|p| read_json(&p))
        .transpose()?;
    Ok((truth, record))
}

fn csv_comment_free(bytes: &[u8]) -> &[u8] {
    let mut rest = bytes;
    while rest.first() == Some(&b'#') {
        match rest.iter().position(|&b| b == b'\n') {
            Some(k) => rest = &rest[k + 1..],
            None => return &[],
        }
    }
    rest
}

/// Writes plot-ready tables: smooth effects on their grids and per-cluster
/// posterior-mean category probabilities.
pub fn write_plotdata(
    dir: &Path,
    doc: &FitDocument,
    variables: &[(String, Vec<String>)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prov = &doc.provenance;
    write_csv(&dir.join("smooth_effects.csv"), prov, &BAND_HEADER, band_rows(&doc.summary))?;
    let theta = &doc.summary.posterior_means.theta;
    let mut rows = Vec::new();
    for (g, comp) in theta.iter().enumerate() {
        for (q, probs) in comp.iter().enumerate() {
            let (name, levels) = variables
                .get(q)
                .map(|(n, l)| (n.clone(), l.clone()))
                .unwrap_or_else(|| (format!("y{}", q + 1), Vec::new()));
            for (c, p) in probs.iter().enumerate() {
                rows.push(vec![
                    (g + 1).to_string(),
                    name.clone(),
                    levels.get(c).cloned().unwrap_or_else(|| (c + 1).to_string()),
                    p.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &dir.join("theta_means.csv"),
        prov,
        &["component", "variable", "level", "probability"],
        rows,
    )?;
    let sizes = doc
        .summary
        .cluster_sizes
        .iter()
        .enumerate()
        .map(|(g, s)| vec![(g + 1).to_string(), s.to_string()]);
    write_csv(&dir.join("cluster_sizes.csv"), prov, &["component", "units"], sizes)
}
