//! CSV ingestion, data manifests, level dictionaries and derived covariates.
//!
//! Every parser takes an in-memory reader so it can be exercised without the
//! filesystem. Categorical levels are taken from a persisted dictionary when
//! one is given and otherwise in order of first appearance.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::simgen::SyntheticDataset;

/// Name of the covariate derived from a vote-share table.
pub const EFFECTIVE_PARTIES: &str = "effective_parties";

/// Tolerance on the row sums of share vectors.
pub const SHARE_TOLERANCE: f64 = 1e-9;

fn default_id_column() -> String {
    "id".into()
}

/// Where the data live and how their columns are used. Relative paths are
/// resolved against the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub responses_path: PathBuf,
    pub covariates_path: PathBuf,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    /// Response columns to use; all non-id columns when absent.
    #[serde(default)]
    pub response_columns: Option<Vec<String>>,
    #[serde(default)]
    pub smooth_covariates: Vec<String>,
    #[serde(default)]
    pub linear_covariates: Vec<String>,
    #[serde(default)]
    pub levels_path: Option<PathBuf>,
    /// Vote shares keyed by unit id; adds the `effective_parties` covariate.
    #[serde(default)]
    pub vote_shares_path: Option<PathBuf>,
    #[serde(default)]
    pub truth_path: Option<PathBuf>,
}

impl DataManifest {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: DataManifest = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let smooth: HashSet<&String> = self.smooth_covariates.iter().collect();
        if smooth.len() != self.smooth_covariates.len() {
            return Err(Error::Config("smooth covariates listed twice".into()));
        }
        if let Some(c) = self.linear_covariates.iter().find(|c| smooth.contains(c)) {
            return Err(Error::Config(format!(
                "covariate '{c}' is listed as both smooth and linear"
            )));
        }
        let linear: HashSet<&String> = self.linear_covariates.iter().collect();
        if linear.len() != self.linear_covariates.len() {
            return Err(Error::Config("linear covariates listed twice".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut m = Self::from_json(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.responses_path);
        resolve(&mut m.covariates_path);
        for p in [&mut m.levels_path, &mut m.vote_shares_path, &mut m.truth_path]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Ok(m)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Ordered levels of one categorical variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableLevels {
    pub name: String,
    pub levels: Vec<String>,
}

/// Level dictionary of all response variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDictionary {
    pub variables: Vec<VariableLevels>,
}

impl LevelDictionary {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let d: LevelDictionary = serde_json::from_slice(bytes)?;
        for v in &d.variables {
            if v.levels.is_empty() {
                return Err(Error::Data(format!("variable '{}' has no levels", v.name)));
            }
            let set: HashSet<&String> = v.levels.iter().collect();
            if set.len() != v.levels.len() {
                return Err(Error::Data(format!("variable '{}' repeats a level", v.name)));
            }
            if v.levels.iter().any(|l| is_missing(l)) {
                return Err(Error::Data(format!("variable '{}' has an empty level", v.name)));
            }
        }
        Ok(d)
    }

    pub fn get(&self, name: &str) -> Option<&VariableLevels> {
        self.variables.iter().find(|v| v.name == name)
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA"
}

/// Label-encoded response table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    /// Zero-based codes, `codes[i][q]`.
    pub codes: Vec<Vec<usize>>,
    pub levels: LevelDictionary,
}

fn header_index(headers: &csv::StringRecord, name: &str, what: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data(format!("{what} has no column '{name}'")))
}

fn check_unique_headers(headers: &csv::StringRecord, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for h in headers {
        if !seen.insert(h) {
            return Err(Error::Data(format!("{what} repeats column '{h}'")));
        }
    }
    Ok(())
}

fn missing_report(what: &str, rows: &[(usize, String, String)]) -> Error {
    let shown: Vec<String> = rows
        .iter()
        .take(20)
        .map(|(r, id, col)| format!("row {r} (id '{id}') column '{col}'"))
        .collect();
    let more = if rows.len() > 20 {
        format!(" and {} more", rows.len() - 20)
    } else {
        String::new()
    };
    Error::Data(format!(
        "{what}: missing values at {}{more}",
        shown.join(", ")
    ))
}

/// Parses a responses CSV. With a dictionary, every value must be one of
/// its levels; without one, levels are collected in first-appearance order.
pub fn parse_responses<R: Read>(
    reader: R,
    id_column: &str,
    columns: Option<&[String]>,
    levels: Option<&LevelDictionary>,
) -> Result<ResponseTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    check_unique_headers(&headers, "responses")?;
    let id_idx = header_index(&headers, id_column, "responses")?;
    let names: Vec<String> = match columns {
        Some(cols) => cols.to_vec(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != id_idx)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if names.is_empty() {
        return Err(Error::Data("responses have no variable columns".into()));
    }
    let idx: Vec<usize> = names
        .iter()
        .map(|n| header_index(&headers, n, "responses"))
        .collect::<Result<_>>()?;
    let mut dict: Vec<VariableLevels> = match levels {
        Some(d) => names
            .iter()
            .map(|n| {
                d.get(n)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("level dictionary has no variable '{n}'")))
            })
            .collect::<Result<_>>()?,
        None => names
            .iter()
            .map(|n| VariableLevels {
                name: n.clone(),
                levels: Vec::new(),
            })
            .collect(),
    };
    let mut lookup: Vec<HashMap<String, usize>> = dict
        .iter()
        .map(|v| v.levels.iter().enumerate().map(|(k, l)| (l.clone(), k)).collect())
        .collect();

    let mut ids = Vec::new();
    let mut codes = Vec::new();
    let mut missing = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let id = rec.get(id_idx).unwrap_or("").trim().to_string();
        if id.is_empty() {
            missing.push((row, id.clone(), id_column.to_string()));
            continue;
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("responses: duplicate id '{id}' on row {row}")));
        }
        let mut out = Vec::with_capacity(idx.len());
        for (q, &c) in idx.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim();
            if is_missing(cell) {
                missing.push((row, id.clone(), names[q].clone()));
                continue;
            }
            let code = match lookup[q].get(cell) {
                Some(&k) => k,
                None if levels.is_none() => {
                    let k = dict[q].levels.len();
                    dict[q].levels.push(cell.to_string());
                    lookup[q].insert(cell.to_string(), k);
                    k
                }
                None => {
                    return Err(Error::Data(format!(
                        "responses: unknown level '{cell}' for variable '{}' on row {row}; known levels: {:?}",
                        names[q], dict[q].levels
                    )))
                }
            };
            out.push(code);
        }
        ids.push(id);
        codes.push(out);
    }
    if !missing.is_empty() {
        return Err(missing_report("responses", &missing));
    }
    if ids.is_empty() {
        return Err(Error::Data("responses contain no rows".into()));
    }
    Ok(ResponseTable {
        ids,
        names,
        codes,
        levels: LevelDictionary { variables: dict },
    })
}

/// Covariate table kept as text; columns are converted on request.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    cells: Vec<Vec<String>>,
}

impl CovariateTable {
    fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("covariates have no column '{name}'")))
    }

    /// Raw text of column `name`.
    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let c = self.column_index(name)?;
        Ok(self.cells.iter().map(|r| r[c].clone()).collect())
    }

    /// Column `name` as finite numbers; missing or malformed cells are
    /// reported by row.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column_index(name)?;
        let mut out = Vec::with_capacity(self.cells.len());
        let mut missing = Vec::new();
        for (r, row) in self.cells.iter().enumerate() {
            let cell = row[c].trim();
            if is_missing(cell) {
                missing.push((r + 1, self.ids[r].clone(), name.to_string()));
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => {
                    return Err(Error::Data(format!(
                        "covariates: value '{cell}' in column '{name}' on row {} is not a finite number",
                        r + 1
                    )))
                }
            }
        }
        if !missing.is_empty() {
            return Err(missing_report("covariates", &missing));
        }
        Ok(out)
    }

    /// Adds a numeric column.
    pub fn push_column(&mut self, name: &str, values: &[f64]) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Data(format!("covariates already have a column '{name}'")));
        }
        if values.len() != self.cells.len() {
            return Err(Error::Conformability(format!(
                "{} values for {} covariate rows",
                values.len(),
                self.cells.len()
            )));
        }
        self.names.push(name.to_string());
        for (row, v) in self.cells.iter_mut().zip(values) {
            row.push(v.to_string());
        }
        Ok(())
    }

    /// Row positions in the order of `ids`.
    pub fn align(&self, ids: &[String]) -> Result<Vec<usize>> {
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(k, i)| (i.as_str(), k)).collect();
        ids.iter()
            .map(|id| {
                pos.get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("covariates have no row for id '{id}'")))
            })
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> CovariateTable {
        CovariateTable {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            names: self.names.clone(),
            cells: rows.iter().map(|&r| self.cells[r].clone()).collect(),
        }
    }
}

/// Parses a covariates CSV keyed by `id_column`.
pub fn parse_covariates<R: Read>(reader: R, id_column: &str) -> Result<CovariateTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    check_unique_headers(&headers, "covariates")?;
    let id_idx = header_index(&headers, id_column, "covariates")?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != id_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_idx).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("covariates: empty id on row {}", r + 1)));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("covariates: duplicate id '{id}' on row {}", r + 1)));
        }
        cells.push(
            rec.iter()
                .enumerate()
                .filter(|(k, _)| *k != id_idx)
                .map(|(_, v)| v.to_string())
                .collect(),
        );
        ids.push(id);
    }
    Ok(CovariateTable { ids, names, cells })
}

/// Party vote shares per constituency.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteShareTable {
    pub ids: Vec<String>,
    pub parties: Vec<String>,
    pub shares: Vec<Vec<f64>>,
}

/// Parses `constituency_id,share_1..share_P`; every row must be a share
/// vector.
pub fn parse_vote_shares<R: Read>(reader: R) -> Result<VoteShareTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    check_unique_headers(&headers, "vote shares")?;
    if headers.len() < 2 {
        return Err(Error::Data("vote shares need an id and at least one party column".into()));
    }
    let parties: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut shares = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec[0].trim().to_string();
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(Error::Data(format!(
                "vote shares: empty or duplicate id on row {}",
                r + 1
            )));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("vote shares: bad share '{s}' on row {}", r + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        check_shares(&row).map_err(|e| Error::Data(format!("vote shares, row {}: {e}", r + 1)))?;
        ids.push(id);
        shares.push(row);
    }
    Ok(VoteShareTable {
        ids,
        parties,
        shares,
    })
}

fn check_shares(shares: &[f64]) -> Result<()> {
    if shares.is_empty() {
        return Err(Error::Input("empty share vector".into()));
    }
    if let Some(v) = shares.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Input(format!("share {v} is negative or not finite")));
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > SHARE_TOLERANCE {
        return Err(Error::Input(format!("shares sum to {total}, not 1")));
    }
    Ok(())
}

/// Effective number of parties `exp(−Σ ω log ω)`, with `0 log 0 = 0`.
pub fn effective_parties(shares: &[f64]) -> Result<f64> {
    check_shares(shares)?;
    let entropy: f64 = shares
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| -w * w.ln())
        .sum();
    Ok(entropy.exp().clamp(1.0, shares.len() as f64))
}

/// Dataset loaded through a manifest, with the tables it came from.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub levels: LevelDictionary,
    /// Covariate rows aligned with the dataset units.
    pub covariates: CovariateTable,
}

/// Loads and validates the dataset described by a manifest file.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedData> {
    let manifest = DataManifest::read(manifest_path)?;
    load_with_manifest(&manifest)
}

pub fn load_with_manifest(manifest: &DataManifest) -> Result<LoadedData> {
    manifest.validate()?;
    let levels = match &manifest.levels_path {
        Some(p) => Some(LevelDictionary::from_json(&read_file(p)?)?),
        None => None,
    };
    let responses = parse_responses(
        read_file(&manifest.responses_path)?.as_slice(),
        &manifest.id_column,
        manifest.response_columns.as_deref(),
        levels.as_ref(),
    )?;
    let all = parse_covariates(read_file(&manifest.covariates_path)?.as_slice(), &manifest.id_column)?;
    let mut covariates = all.select(&all.align(&responses.ids)?);
    if let Some(p) = &manifest.vote_shares_path {
        let shares = parse_vote_shares(read_file(p)?.as_slice())?;
        let pos: HashMap<&str, usize> = shares.ids.iter().enumerate().map(|(k, i)| (i.as_str(), k)).collect();
        let values = responses
            .ids
            .iter()
            .map(|id| {
                let k = pos
                    .get(id.as_str())
                    .ok_or_else(|| Error::Data(format!("vote shares have no row for id '{id}'")))?;
                effective_parties(&shares.shares[*k])
            })
            .collect::<Result<Vec<f64>>>()?;
        covariates.push_column(EFFECTIVE_PARTIES, &values)?;
    }
    let n = responses.ids.len();
    let matrix = |names: &[String]| -> Result<DMatrix<f64>> {
        let cols = names
            .iter()
            .map(|c| covariates.numeric(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(n, names.len(), |i, j| cols[j][i]))
    };
    let linear = matrix(&manifest.linear_covariates)?;
    let smooth = matrix(&manifest.smooth_covariates)?;
    let categories = responses.levels.variables.iter().map(|v| v.levels.len()).collect();
    let dataset = Dataset::new(
        responses.ids,
        responses.names,
        categories,
        responses.codes,
        manifest.linear_covariates.clone(),
        linear,
        manifest.smooth_covariates.clone(),
        smooth,
    )?;
    Ok(LoadedData {
        dataset,
        levels: responses.levels,
        covariates,
    })
}

/// True allocations and predictors of simulated units.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub ids: Vec<String>,
    /// Zero-based true components.
    pub components: Vec<usize>,
    pub eta: Vec<Vec<f64>>,
}

impl TruthTable {
    /// Number of true components (the largest label seen, plus one).
    pub fn num_components(&self) -> usize {
        self.components.iter().max().map_or(0, |m| m + 1).max(self.eta.first().map_or(0, |e| e.len() + 1))
    }

    /// Components in the order of `ids`.
    pub fn aligned(&self, ids: &[String]) -> Result<Vec<usize>> {
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(k, i)| (i.as_str(), k)).collect();
        ids.iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&k| self.components[k])
                    .ok_or_else(|| Error::Data(format!("truth has no row for id '{id}'")))
            })
            .collect()
    }
}

/// Parses a truth sidecar `id,true_component,eta_1..eta_{G−1}` with one-based
/// components.
pub fn parse_truth<R: Read>(reader: R) -> Result<TruthTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[1] != "true_component" {
        return Err(Error::Data("truth must start with columns id,true_component".into()));
    }
    let mut t = TruthTable {
        ids: Vec::new(),
        components: Vec::new(),
        eta: Vec::new(),
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let comp = rec[1]
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|c| *c >= 1 && *c <= u16::MAX as usize)
            .ok_or_else(|| Error::Data(format!("truth: bad component on row {}", r + 1)))?;
        let eta = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("truth: bad predictor '{s}' on row {}", r + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        t.ids.push(rec[0].trim().to_string());
        t.components.push(comp - 1);
        t.eta.push(eta);
    }
    Ok(t)
}

/// Writes a simulated dataset as `responses.csv`, `covariates.csv`,
/// `truth.csv`, `levels.json` and `manifest.json` in `dir`.
pub fn write_synthetic(dir: &Path, synth: &SyntheticDataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = &synth.data;
    let levels = LevelDictionary {
        variables: data
            .response_names
            .iter()
            .zip(&data.categories)
            .map(|(n, &c)| VariableLevels {
                name: n.clone(),
                levels: (1..=c).map(|k| k.to_string()).collect(),
            })
            .collect(),
    };
    let mut w = csv::Writer::from_path(dir.join("responses.csv"))?;
    let mut head = vec!["id".to_string()];
    head.extend(data.response_names.iter().cloned());
    w.write_record(&head)?;
    for i in 0..data.n() {
        let mut rec = vec![data.ids[i].clone()];
        rec.extend(data.response(i).iter().map(|c| (c + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("responses.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("covariates.csv"))?;
    let mut head = vec!["id".to_string()];
    head.extend(data.linear_names.iter().cloned());
    head.extend(data.smooth_names.iter().cloned());
    w.write_record(&head)?;
    for i in 0..data.n() {
        let mut rec = vec![data.ids[i].clone()];
        rec.extend((1..data.linear.ncols()).map(|c| data.linear[(i, c)].to_string()));
        rec.extend((0..data.smooth.ncols()).map(|c| data.smooth[(i, c)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("covariates.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
    let k = synth.eta.first().map_or(0, Vec::len);
    let mut head = vec!["id".to_string(), "true_component".to_string()];
    head.extend((1..=k).map(|g| format!("eta_{g}")));
    w.write_record(&head)?;
    for i in 0..data.n() {
        let mut rec = vec![data.ids[i].clone(), (synth.allocations[i] + 1).to_string()];
        rec.extend(synth.eta[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("truth.csv"), e))?;

    let write_json = |name: &str, text: String| -> Result<()> {
        fs::write(dir.join(name), text + "\n").map_err(|e| Error::io(dir.join(name), e))
    };
    write_json("levels.json", serde_json::to_string_pretty(&levels)?)?;
    let manifest = DataManifest {
        responses_path: "responses.csv".into(),
        covariates_path: "covariates.csv".into(),
        id_column: "id".into(),
        response_columns: None,
        smooth_covariates: data.smooth_names.clone(),
        linear_covariates: data.linear_names.clone(),
        levels_path: Some("levels.json".into()),
        vote_shares_path: None,
        truth_path: Some("truth.csv".into()),
    };
    write_json("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
    Ok(dir.join("manifest.json"))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn effective_parties_bounded_and_symmetric(raw in proptest::collection::vec(0.0f64..1.0, 1..14), rot in 0usize..13) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let fixed: f64 = w.iter().sum();
            prop_assume!((fixed - 1.0).abs() <= SHARE_TOLERANCE);
            let e = effective_parties(&w).unwrap();
            prop_assert!(e >= 1.0 && e <= w.len() as f64);
            let mut r = w.clone();
            r.rotate_left(rot % w.len());
            prop_assert!((effective_parties(&r).unwrap() - e).abs() < 1e-12);
        }
    }
}
