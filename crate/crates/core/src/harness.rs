//! Experiment configs, seeded replicate sweeps and record CSV output.
//!
//! A sweep expands one or more parameter grids into cells, runs every
//! `(cell, replicate)` pair as an independent task and writes one CSV row per
//! pair in canonical order: grid-major, replicate-minor. Each task derives its
//! own seed from the master seed, so the output does not depend on how tasks
//! are scheduled.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixcore::apply_centering;
use crate::mixture::{derive_seed, make_separation_family, sample, LabeledDataset, MIN_ROWS_PER_DIM};
use crate::structure::{distinctness_delta_check, fisher_of, sdist_overlap, PerturbationReport, MIN_MC_SAMPLES};
use crate::subspace::{pc_subspace, sss};
use crate::transform::{transform_pipeline, WeightScheme};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_REPLICATES: usize = 50;
/// Largest cluster count any grid may ask for.
pub const MAX_K: usize = 10;

/// Cartesian grid of mixture and transform parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub n_per_cluster: Vec<usize>,
    pub alpha: Vec<f64>,
    pub separation: Vec<f64>,
    pub dispersion: Vec<f64>,
}

impl Grid {
    fn cell_count(&self) -> usize {
        self.d.len()
            * self.k.len()
            * self.n_per_cluster.len()
            * self.alpha.len()
            * self.separation.len()
            * self.dispersion.len()
    }
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Grid,
    /// Further grids appended after `grid`, e.g. a second sweep axis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_grids: Vec<Grid>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: WeightScheme,
    /// Monte-Carlo draws for the overlap estimate; 0 disables it. Only
    /// two-cluster cells get an estimate.
    #[serde(default)]
    pub mc_samples: usize,
    /// When set, replicate `r` uses the same seed in every cell, so a sweep
    /// along one axis moves through a single family of draws.
    #[serde(default)]
    pub common_random_numbers: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn grids(&self) -> impl Iterator<Item = &Grid> {
        std::iter::once(&self.grid).chain(self.extra_grids.iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.mc_samples != 0 && self.mc_samples < MIN_MC_SAMPLES {
            return Err(Error::Config(format!(
                "mc_samples must be 0 or at least {MIN_MC_SAMPLES}, got {}",
                self.mc_samples
            )));
        }
        for grid in self.grids() {
            for &d in &grid.d {
                for &k in &grid.k {
                    if k < 2 || k > d.min(MAX_K) {
                        return Err(Error::Config(format!(
                            "k = {k} outside 2..=min(d, {MAX_K}) for d = {d}"
                        )));
                    }
                    for &n in &grid.n_per_cluster {
                        if n * k < MIN_ROWS_PER_DIM * d {
                            return Err(Error::Config(format!(
                                "n_per_cluster = {n} gives {} rows, need at least {} for d = {d}",
                                n * k,
                                MIN_ROWS_PER_DIM * d
                            )));
                        }
                    }
                }
            }
            if let Some(a) = grid.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                return Err(Error::Config(format!("alpha must be finite and > 0, got {a}")));
            }
            if let Some(s) = grid.separation.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
                return Err(Error::Config(format!("separation must be finite and >= 0, got {s}")));
            }
            if let Some(w) = grid.dispersion.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
                return Err(Error::Config(format!("dispersion must be finite and > 0, got {w}")));
            }
        }
        Ok(())
    }

    /// All cells in canonical order. Within a grid the last axis
    /// (`dispersion`) varies fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for grid in self.grids() {
            for &d in &grid.d {
                for &k in &grid.k {
                    for &n_per_cluster in &grid.n_per_cluster {
                        for &alpha in &grid.alpha {
                            for &separation in &grid.separation {
                                for &dispersion in &grid.dispersion {
                                    cells.push(Cell {
                                        index: cells.len(),
                                        d,
                                        k,
                                        n_per_cluster,
                                        alpha,
                                        separation,
                                        dispersion,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        debug_assert_eq!(cells.len(), self.grids().map(Grid::cell_count).sum::<usize>());
        cells
    }

    /// Seed for one replicate of one cell.
    pub fn replicate_seed(&self, cell: &Cell, replicate: usize) -> u64 {
        if self.common_random_numbers {
            derive_seed(self.seed, &[replicate as u64])
        } else {
            derive_seed(self.seed, &[cell.index as u64, replicate as u64])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub d: usize,
    pub k: usize,
    pub n_per_cluster: usize,
    pub alpha: f64,
    pub separation: f64,
    pub dispersion: f64,
}

/// Everything measured on one labelled dataset.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: PerturbationReport,
    /// Min non-zero Fisher eigenvalue of the input.
    pub lambda_min_x: f64,
    /// `PC(k-1)` of the centered input against its Fisher subspace.
    pub sss_x: f64,
    /// `PC(k-1)` of the weighted data against its Fisher subspace.
    pub sss_z: f64,
}

/// Runs the transform on `x` and compares principal and Fisher subspaces
/// before and after.
pub fn analyze_dataset(x: &LabeledDataset, alpha: f64, scheme: WeightScheme) -> Result<Analysis> {
    let m = x.k().checked_sub(1).filter(|m| *m >= 1).ok_or_else(|| {
        Error::InvalidParameter(format!("need at least two clusters, got {}", x.k()))
    })?;
    let fisher_x = fisher_of(x)?;
    let sss_x = sss(&pc_subspace(&apply_centering(x.data()), m)?, &fisher_x.fisher_basis)?;
    let out = transform_pipeline(x, alpha, scheme)?;
    let fisher_z = fisher_of(&out.z0)?;
    let sss_z = sss(&pc_subspace(out.z0.data(), m)?, &fisher_z.fisher_basis)?;
    let report = distinctness_delta_check(x, &out)?;
    Ok(Analysis {
        report,
        lambda_min_x: fisher_x.min_nonzero_eigenvalue(),
        sss_x,
        sss_z,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct ExperimentRecord {
    pub cell: Cell,
    pub replicate: usize,
    pub seed: u64,
    pub status: RecordStatus,
    pub analysis: Option<Analysis>,
    pub sdist: Option<(f64, f64)>,
    /// Wall-clock time of the replicate; kept out of the CSV so that output
    /// stays reproducible.
    pub elapsed_secs: f64,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }

    pub fn lambda_x(&self) -> Option<f64> {
        self.analysis.as_ref().map(|a| a.report.lambda_x)
    }

    pub fn lambda_z(&self) -> Option<f64> {
        self.analysis.as_ref().map(|a| a.report.lambda_z)
    }

    pub fn sss_x(&self) -> Option<f64> {
        self.analysis.as_ref().map(|a| a.sss_x)
    }

    pub fn sss_z(&self) -> Option<f64> {
        self.analysis.as_ref().map(|a| a.sss_z)
    }

    fn csv_fields(&self) -> Vec<String> {
        let c = &self.cell;
        let mut row = vec![
            c.index.to_string(),
            self.replicate.to_string(),
            self.seed.to_string(),
            c.d.to_string(),
            c.k.to_string(),
            c.n_per_cluster.to_string(),
            c.alpha.to_string(),
            c.separation.to_string(),
            c.dispersion.to_string(),
        ];
        row.push(match &self.status {
            RecordStatus::Ok => "ok".into(),
            RecordStatus::Failed(_) => "failed".into(),
        });
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        match &self.analysis {
            Some(a) => {
                let r = &a.report;
                row.extend([
                    r.lambda_x.to_string(),
                    r.lambda_z.to_string(),
                    r.observed_delta.to_string(),
                    r.bound_rhs.to_string(),
                    r.bound_satisfied.to_string(),
                    r.empirical_sd_norm.to_string(),
                    r.sd_premise_holds.to_string(),
                    a.lambda_min_x.to_string(),
                    a.sss_x.to_string(),
                    a.sss_z.to_string(),
                ]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), 10)),
        }
        row.push(opt(self.sdist.map(|s| s.0)));
        row.push(opt(self.sdist.map(|s| s.1)));
        row.push(match &self.status {
            RecordStatus::Ok => String::new(),
            RecordStatus::Failed(reason) => reason.clone(),
        });
        row
    }
}

pub const RECORD_HEADER: [&str; 23] = [
    "cell",
    "replicate",
    "seed",
    "d",
    "k",
    "n_per_cluster",
    "alpha",
    "separation",
    "dispersion",
    "status",
    "lambda_x",
    "lambda_z",
    "delta",
    "bound_rhs",
    "bound_satisfied",
    "empirical_sd_norm",
    "sd_premise_holds",
    "lambda_min_x",
    "sss_x",
    "sss_z",
    "sdist",
    "sdist_se",
    "error",
];

/// One replicate of one cell. Errors from the pipeline are captured in the
/// record, never returned.
pub fn run_cell(config: &ExperimentConfig, cell: &Cell, replicate: usize) -> ExperimentRecord {
    let started = Instant::now();
    let seed = config.replicate_seed(cell, replicate);
    let outcome = (|| -> Result<(Analysis, Option<(f64, f64)>)> {
        let spec = make_separation_family(
            cell.d,
            cell.k,
            cell.separation,
            cell.dispersion,
            derive_seed(seed, &[0]),
        )?;
        let x = sample(&spec, cell.n_per_cluster, derive_seed(seed, &[1]))?;
        let analysis = analyze_dataset(&x, cell.alpha, config.scheme)?;
        let sdist = if cell.k == 2 && config.mc_samples > 0 {
            let est = sdist_overlap(&spec, config.mc_samples, derive_seed(seed, &[2]))?;
            Some((est.value, est.std_error))
        } else {
            None
        };
        Ok((analysis, sdist))
    })();
    let elapsed_secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok((analysis, sdist)) => {
            let r = &analysis.report;
            if !r.bound_satisfied {
                log::warn!(
                    "cell {} replicate {}: bound violated, sd(|y|^2) = {:e}, d/n = {:e}",
                    cell.index,
                    replicate,
                    r.empirical_sd_norm,
                    r.d as f64 / r.n as f64
                );
            }
            log::debug!("cell {} replicate {} took {elapsed_secs:.3}s", cell.index, replicate);
            ExperimentRecord {
                cell: *cell,
                replicate,
                seed,
                status: RecordStatus::Ok,
                analysis: Some(analysis),
                sdist,
                elapsed_secs,
            }
        }
        Err(e) => {
            log::warn!("cell {} replicate {} failed: {e}", cell.index, replicate);
            ExperimentRecord {
                cell: *cell,
                replicate,
                seed,
                status: RecordStatus::Failed(e.to_string()),
                analysis: None,
                sdist: None,
                elapsed_secs,
            }
        }
    }
}

/// Runs every `(cell, replicate)` pair, on `threads` workers if given and on
/// the global pool otherwise. If the config names an output path, it is
/// created before any computation and receives the CSV afterwards.
pub fn run_sweep(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let out = match &config.output_path {
        Some(path) => Some((path.clone(), File::create(path).map_err(|e| Error::io(path, e))?)),
        None => None,
    };
    let cells = config.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
        .collect();
    let started = Instant::now();
    let run = || -> Vec<ExperimentRecord> {
        tasks
            .par_iter()
            .map(|&(c, r)| run_cell(config, &cells[c], r))
            .collect()
    };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {t} worker threads: {e}")))?
            .install(run),
        None => run(),
    };
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    log::info!(
        "sweep: {} records ({failed} failed) in {:.1}s",
        records.len(),
        started.elapsed().as_secs_f64()
    );
    if let Some((path, file)) = out {
        let mut w = BufWriter::new(file);
        write_records_csv(&mut w, config, &records)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}

/// Comment lines (`# schema=1`, run parameters, metadata), then a header
/// row and one row per record.
pub fn write_records_csv<W: Write>(mut writer: W, config: &ExperimentConfig, records: &[ExperimentRecord]) -> Result<()> {
    let mut preamble = format!(
        "# schema={SCHEMA_VERSION}\n# seed={}\n# replicates={}\n# scheme={}\n# mc_samples={}\n# common_random_numbers={}\n",
        config.seed, config.replicates, config.scheme, config.mc_samples, config.common_random_numbers
    );
    for (key, value) in &config.metadata {
        preamble.push_str(&format!("# {key}={}\n", value.replace('\n', " ")));
    }
    writer
        .write_all(preamble.as_bytes())
        .map_err(|e| Error::io("<records>", e))?;
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(RECORD_HEADER)?;
    for r in records {
        csv.write_record(r.csv_fields())?;
    }
    csv.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

pub const RECIPES: [&str; 6] = ["fig1", "fig2", "fig3_d7", "fig3_d20", "fig3_d20_large", "prop1"];

/// Pairwise mean distance for the simulation recipes, in units of the
/// largest within-cluster standard deviation. Chosen by a pilot at d = 7:
/// baseline distinctness runs from about 0.79 (k = 3) to 0.59 (k = 7).
pub const RECIPE_SEPARATION: f64 = 2.5;
pub const RECIPE_N_PER_CLUSTER: usize = 300;

fn grid(d: Vec<usize>, k: Vec<usize>, n: Vec<usize>, separation: Vec<f64>, dispersion: Vec<f64>) -> Grid {
    Grid {
        d,
        k,
        n_per_cluster: n,
        alpha: vec![crate::transform::DEFAULT_ALPHA],
        separation,
        dispersion,
    }
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Canned configurations: `fig1`, `fig2`, `fig3_*` and the bound check `prop1`.
pub fn recipe(name: &str) -> Result<ExperimentConfig> {
    let sep = vec![RECIPE_SEPARATION];
    let unit = vec![1.0];
    let mut metadata = BTreeMap::new();
    metadata.insert("recipe".to_string(), name.to_string());
    metadata.insert(
        "separation_default".to_string(),
        format!("{RECIPE_SEPARATION} (pilot-calibrated reconstruction)"),
    );
    let base = |grid: Grid, replicates: usize| ExperimentConfig {
        grid,
        extra_grids: Vec::new(),
        replicates,
        seed: 20_240_601,
        scheme: WeightScheme::Hyperbolic,
        mc_samples: 0,
        common_random_numbers: false,
        output_path: None,
        metadata: BTreeMap::new(),
    };
    let mut cfg = match name {
        "fig1" => base(grid(vec![2], vec![2], vec![500], sep, unit), 1),
        "fig2" => {
            metadata.insert(
                "panels".to_string(),
                "separation sweep at dispersion 1; dispersion sweep at separation 3".to_string(),
            );
            let mut cfg = base(
                grid(vec![2], vec![2], vec![500], linspace(0.5, 5.0, 10), unit),
                20,
            );
            cfg.extra_grids = vec![grid(vec![2], vec![2], vec![500], vec![3.0], linspace(0.5, 3.2, 10))];
            cfg.mc_samples = crate::structure::DEFAULT_MC_SAMPLES;
            cfg.common_random_numbers = true;
            cfg
        }
        "fig3_d7" => base(grid(vec![7], (3..=7).collect(), vec![100, 300, 500], sep, unit), DEFAULT_REPLICATES),
        "fig3_d20" => base(grid(vec![20], (3..=10).collect(), vec![100, 300, 500], sep, unit), DEFAULT_REPLICATES),
        "fig3_d20_large" => base(grid(vec![20], (3..=10).collect(), vec![1500, 2000], sep, unit), DEFAULT_REPLICATES),
        "prop1" => base(grid(vec![7], vec![3], vec![RECIPE_N_PER_CLUSTER], sep, unit), DEFAULT_REPLICATES),
        _ => {
            return Err(Error::UnknownRecipe {
                name: name.to_string(),
                valid: RECIPES.join(", "),
            })
        }
    };
    cfg.metadata = metadata;
    cfg.validate()?;
    Ok(cfg)
}
