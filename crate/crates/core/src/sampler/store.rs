//! Retained draws of a chain and their on-disk layout.
//!
//! A store directory holds `manifest.json` plus one CSV per parameter block
//! (`theta.csv`, `gamma.csv`, `beta.csv`, `tau2.csv`, `allocations.csv`) and
//! `loglik.csv`. Each CSV row is one retained iteration; floats are written in
//! shortest round-trip form so a reload reproduces the draws bit for bit.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ChainConfig, Diagnostics, ModelState};
use crate::error::{Error, Result};
use crate::model::ComponentParams;

pub const STORE_FORMAT_VERSION: u32 = 1;

/// Parameter values of one retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub gamma: DMatrix<f64>,
    pub beta: Vec<Vec<DVector<f64>>>,
    pub tau2: Vec<Vec<f64>>,
    pub theta: Vec<ComponentParams>,
    /// Zero-based allocation label of every unit.
    pub alloc: Vec<u16>,
    pub loglik: f64,
}

impl Draw {
    pub(crate) fn capture(state: &ModelState, loglik: f64) -> Self {
        Draw {
            iteration: 0,
            gamma: state.gating.gamma.clone(),
            beta: state.gating.beta.clone(),
            tau2: state.gating.tau2.clone(),
            theta: state.components.clone(),
            alloc: state.aug.alloc.iter().map(|&a| a as u16).collect(),
            loglik,
        }
    }
}

/// All retained draws of one chain with the metadata needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub config: ChainConfig,
    pub dataset_digest: String,
    pub n: usize,
    pub categories: Vec<usize>,
    pub fixed_names: Vec<String>,
    pub basis_sizes: Vec<usize>,
    pub diagnostics: Diagnostics,
    pub draws: Vec<Draw>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub software_version: String,
    pub config: ChainConfig,
    pub seed: u64,
    pub dataset_digest: String,
    pub n: usize,
    pub categories: Vec<usize>,
    pub fixed_names: Vec<String>,
    pub basis_sizes: Vec<usize>,
    pub diagnostics: Diagnostics,
    pub retained: usize,
}

impl DrawStore {
    pub fn num_components(&self) -> usize {
        self.config.g
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loglik).collect()
    }

    /// Iteration numbers (1-based, counting burn-in) of the retained draws.
    pub fn iterations(&self) -> impl Iterator<Item = usize> + '_ {
        let c = &self.config;
        (1..=self.draws.len()).map(move |k| c.burnin + k * c.thin)
    }

    fn manifest(&self) -> StoreManifest {
        StoreManifest {
            format_version: STORE_FORMAT_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            seed: self.config.seed,
            dataset_digest: self.dataset_digest.clone(),
            n: self.n,
            categories: self.categories.clone(),
            fixed_names: self.fixed_names.clone(),
            basis_sizes: self.basis_sizes.clone(),
            diagnostics: self.diagnostics.clone(),
            retained: self.draws.len(),
        }
    }

    fn headers(&self) -> Headers {
        let g = self.config.g;
        let k = g.saturating_sub(1);
        let mut theta = Vec::new();
        for gg in 0..g {
            for (q, &c) in self.categories.iter().enumerate() {
                for cc in 0..c {
                    theta.push(format!("theta_g{}_q{}_c{}", gg + 1, q + 1, cc + 1));
                }
            }
        }
        let mut gamma = Vec::new();
        let mut beta = Vec::new();
        let mut tau2 = Vec::new();
        for gg in 0..k {
            for p in 0..self.fixed_names.len() {
                gamma.push(format!("gamma_g{}_{}", gg + 1, p));
            }
            for (j, &m) in self.basis_sizes.iter().enumerate() {
                for rho in 0..m {
                    beta.push(format!("beta_g{}_j{}_{}", gg + 1, j + 1, rho + 1));
                }
                tau2.push(format!("tau2_g{}_j{}", gg + 1, j + 1));
            }
        }
        let alloc = (0..self.n).map(|i| format!("unit_{}", i + 1)).collect();
        Headers {
            theta,
            gamma,
            beta,
            tau2,
            alloc,
        }
    }

    /// Writes the store into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join("manifest.json"), manifest + "\n")
            .map_err(|e| Error::io(dir.join("manifest.json"), e))?;
        let h = self.headers();
        let its: Vec<usize> = self.iterations().collect();

        let write_block = |name: &str,
                           header: &[String],
                           rows: &mut dyn FnMut(usize) -> Vec<String>|
         -> Result<()> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            let mut head = vec!["iteration".to_string()];
            head.extend(header.iter().cloned());
            w.write_record(&head)?;
            for (k, t) in its.iter().enumerate() {
                let mut rec = vec![t.to_string()];
                rec.extend(rows(k));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(())
        };

        write_block("loglik.csv", &["loglik".to_string()], &mut |k| {
            vec![self.draws[k].loglik.to_string()]
        })?;
        write_block("theta.csv", &h.theta, &mut |k| {
            self.draws[k]
                .theta
                .iter()
                .flat_map(|c| c.flattened())
                .map(|v| v.to_string())
                .collect()
        })?;
        write_block("gamma.csv", &h.gamma, &mut |k| {
            let gm = &self.draws[k].gamma;
            (0..gm.nrows())
                .flat_map(|r| (0..gm.ncols()).map(move |c| gm[(r, c)].to_string()))
                .collect()
        })?;
        write_block("beta.csv", &h.beta, &mut |k| {
            self.draws[k]
                .beta
                .iter()
                .flatten()
                .flat_map(|b| b.iter().map(|v| v.to_string()).collect::<Vec<_>>())
                .collect()
        })?;
        write_block("tau2.csv", &h.tau2, &mut |k| {
            self.draws[k]
                .tau2
                .iter()
                .flatten()
                .map(|v| v.to_string())
                .collect()
        })?;
        write_block("allocations.csv", &h.alloc, &mut |k| {
            self.draws[k]
                .alloc
                .iter()
                .map(|a| (a + 1).to_string())
                .collect()
        })?;
        Ok(())
    }

    /// Loads a store previously written by [`DrawStore::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            let mut buf = Vec::new();
            fs::File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut buf))
                .map_err(|e| Error::io(&path, e))?;
            Ok(buf)
        };
        let manifest: StoreManifest = serde_json::from_slice(&read("manifest.json")?)?;
        let blocks = StoreBlocks {
            loglik: read("loglik.csv")?,
            theta: read("theta.csv")?,
            gamma: read("gamma.csv")?,
            beta: read("beta.csv")?,
            tau2: read("tau2.csv")?,
            alloc: read("allocations.csv")?,
        };
        Self::from_parts(manifest, &blocks)
    }

    /// Reassembles a store from its manifest and raw CSV blocks, validating
    /// every shape and value.
    pub fn from_parts(manifest: StoreManifest, blocks: &StoreBlocks) -> Result<Self> {
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported store format version {}",
                manifest.format_version
            )));
        }
        let config = manifest.config;
        config.validate()?;
        let g = config.g;
        let k = g - 1;
        let retained = manifest.retained;
        if retained != config.retained() {
            return Err(Error::Data(format!(
                "manifest records {retained} draws but the chain configuration implies {}",
                config.retained()
            )));
        }
        if manifest.categories.iter().any(|&c| c == 0) {
            return Err(Error::Data("a response variable has no categories".into()));
        }
        if g > usize::from(u16::MAX) {
            return Err(Error::Data(format!(
                "{g} components exceed the label range"
            )));
        }
        // every header column takes at least two bytes, which bounds the
        // sizes a manifest may claim before any header is materialized
        let claimed = [
            (
                "theta.csv",
                manifest
                    .categories
                    .iter()
                    .try_fold(0usize, |a, &c| a.checked_add(c))
                    .and_then(|s| s.checked_mul(g)),
                blocks.theta.len(),
            ),
            (
                "gamma.csv",
                manifest.fixed_names.len().checked_mul(k),
                blocks.gamma.len(),
            ),
            (
                "beta.csv",
                manifest
                    .basis_sizes
                    .iter()
                    .try_fold(0usize, |a, &m| a.checked_add(m))
                    .and_then(|s| s.checked_mul(k)),
                blocks.beta.len(),
            ),
            (
                "tau2.csv",
                manifest.basis_sizes.len().checked_mul(k),
                blocks.tau2.len(),
            ),
            ("allocations.csv", Some(manifest.n), blocks.alloc.len()),
            ("loglik.csv", Some(retained), blocks.loglik.len()),
        ];
        for (name, cols, len) in claimed {
            match cols {
                Some(c) if c <= len / 2 => {}
                _ => {
                    return Err(Error::Data(format!(
                        "{name}: manifest sizes do not match the block"
                    )))
                }
            }
        }
        let mut store = DrawStore {
            config,
            dataset_digest: manifest.dataset_digest,
            n: manifest.n,
            categories: manifest.categories,
            fixed_names: manifest.fixed_names,
            basis_sizes: manifest.basis_sizes,
            diagnostics: manifest.diagnostics,
            draws: Vec::new(),
        };
        let h = store.headers();
        let loglik = parse_block(&blocks.loglik, "loglik.csv", &["loglik".into()], retained)?;
        let theta = parse_block(&blocks.theta, "theta.csv", &h.theta, retained)?;
        let gamma = parse_block(&blocks.gamma, "gamma.csv", &h.gamma, retained)?;
        let beta = parse_block(&blocks.beta, "beta.csv", &h.beta, retained)?;
        let tau2 = parse_block(&blocks.tau2, "tau2.csv", &h.tau2, retained)?;
        let alloc = parse_block(&blocks.alloc, "allocations.csv", &h.alloc, retained)?;
        let p = store.fixed_names.len();
        let c = &store.config;
        let expected_its: Vec<usize> = (1..=retained).map(|k| c.burnin + k * c.thin).collect();
        for t in 0..retained {
            for (name, rows) in [
                ("loglik.csv", &loglik),
                ("theta.csv", &theta),
                ("gamma.csv", &gamma),
                ("beta.csv", &beta),
                ("tau2.csv", &tau2),
                ("allocations.csv", &alloc),
            ] {
                if rows[t].0 != expected_its[t] {
                    return Err(Error::Data(format!(
                        "{name}: row {} has iteration {}, expected {}",
                        t + 1,
                        rows[t].0,
                        expected_its[t]
                    )));
                }
            }
            let mut it = theta[t].1.iter().copied();
            let th: Vec<ComponentParams> = (0..g)
                .map(|_| ComponentParams {
                    theta: store
                        .categories
                        .iter()
                        .map(|&c| it.by_ref().take(c).collect())
                        .collect(),
                })
                .collect();
            let gm = DMatrix::from_row_slice(k, p, &gamma[t].1);
            let mut it = beta[t].1.iter().copied();
            let bt: Vec<Vec<DVector<f64>>> = (0..k)
                .map(|_| {
                    store
                        .basis_sizes
                        .iter()
                        .map(|&m| DVector::from_iterator(m, it.by_ref().take(m)))
                        .collect()
                })
                .collect();
            let js = store.basis_sizes.len();
            let tv: Vec<Vec<f64>> = tau2[t].1.chunks(js.max(1)).map(|c| c.to_vec()).collect();
            let tv = if js == 0 { vec![Vec::new(); k] } else { tv };
            let mut labels = Vec::with_capacity(store.n);
            for (i, v) in alloc[t].1.iter().enumerate() {
                if v.fract() != 0.0 || *v < 1.0 || *v > g as f64 {
                    return Err(Error::Data(format!(
                        "allocations.csv: unit {} has label {v} outside 1..={g}",
                        i + 1
                    )));
                }
                labels.push(*v as u16 - 1);
            }
            store.draws.push(Draw {
                iteration: expected_its[t],
                gamma: gm,
                beta: bt,
                tau2: tv,
                theta: th,
                alloc: labels,
                loglik: loglik[t].1[0],
            });
        }
        Ok(store)
    }
}

struct Headers {
    theta: Vec<String>,
    gamma: Vec<String>,
    beta: Vec<String>,
    tau2: Vec<String>,
    alloc: Vec<String>,
}

/// Raw CSV contents of a store directory.
#[derive(Debug, Clone, Default)]
pub struct StoreBlocks {
    pub loglik: Vec<u8>,
    pub theta: Vec<u8>,
    pub gamma: Vec<u8>,
    pub beta: Vec<u8>,
    pub tau2: Vec<u8>,
    pub alloc: Vec<u8>,
}

/// Parses one block CSV: header `iteration,<columns>` then `rows` records.
pub fn parse_block(
    bytes: &[u8],
    name: &str,
    columns: &[String],
    rows: usize,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    let expected = std::iter::once("iteration").chain(columns.iter().map(String::as_str));
    if header.len() != columns.len() + 1 || !header.iter().eq(expected) {
        return Err(Error::Data(format!("{name}: unexpected header")));
    }
    let mut out = Vec::with_capacity(rows.min(4096));
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let it = rec[0]
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("{name}: bad iteration on row {}", r + 1)))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("{name}: bad value '{s}' on row {}", r + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((it, values));
    }
    if out.len() != rows {
        return Err(Error::Data(format!(
            "{name}: {} rows, expected {rows}",
            out.len()
        )));
    }
    Ok(out)
}
