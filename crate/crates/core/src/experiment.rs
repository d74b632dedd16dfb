//! Seeded random topologies and batch sweeps over `(r, lambda)` grids.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admission::{exhaustive_oracle, orthogonal_baseline, run_pipeline, AdmissionConfig, ORACLE_MAX_USERS};
use crate::error::{Error, Result};
use crate::objectives::{NetworkTopology, SmoothedL1Params};
use crate::seeding;

/// Draws `link_count` distinct directed pairs `(i, j)`, `i != j`, uniformly
/// without replacement.
pub fn gen_topology(k: usize, link_count: usize, seed: u64) -> Result<NetworkTopology> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    let total = k * (k - 1);
    if link_count > total {
        return Err(Error::InvalidArgument(format!(
            "{link_count} links requested but K = {k} has only {total} ordered pairs"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, link_count);
    NetworkTopology::new(
        k,
        picks.into_iter().map(|p| {
            let (i, c) = (p / (k - 1), p % (k - 1));
            (i, if c >= i { c + 1 } else { c })
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pipeline,
    Oracle,
    Baseline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pipeline => "pipeline",
            Method::Oracle => "oracle",
            Method::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Pipeline,
    Oracle,
    Baseline,
    #[default]
    All,
}

impl SweepMode {
    pub fn methods(self) -> &'static [Method] {
        match self {
            SweepMode::Pipeline => &[Method::Pipeline],
            SweepMode::Oracle => &[Method::Oracle],
            SweepMode::Baseline => &[Method::Baseline],
            SweepMode::All => &[Method::Pipeline, Method::Oracle, Method::Baseline],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub k: usize,
    pub link_count: usize,
    pub r_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    pub mode: SweepMode,
    /// Everything except `rank`, `params.lambda` and `seed`, which vary per cell.
    pub base: AdmissionConfig,
}

impl ExperimentSpec {
    pub fn new(k: usize, link_count: usize) -> Self {
        Self {
            k,
            link_count,
            r_values: (1..=k).collect(),
            lambda_values: vec![SmoothedL1Params::default().lambda],
            realizations: 50,
            seed: 0,
            mode: SweepMode::All,
            base: AdmissionConfig::new(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.link_count > self.k * (self.k - 1) {
            return Err(Error::InvalidArgument(format!(
                "link count {} exceeds K(K-1) for K = {}",
                self.link_count, self.k
            )));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidArgument("realizations must be at least 1".into()));
        }
        if self.r_values.is_empty() || self.lambda_values.is_empty() {
            return Err(Error::InvalidArgument("empty r or lambda grid".into()));
        }
        for &r in &self.r_values {
            let mut cfg = self.base;
            cfg.rank = r;
            cfg.validate(self.k)?;
        }
        for &l in &self.lambda_values {
            SmoothedL1Params::new(l, self.base.params.rho, self.base.params.epsilon)?;
        }
        Ok(())
    }

    /// Topology of realization `index`; shared by every cell of the grid.
    pub fn topology(&self, index: usize) -> Result<NetworkTopology> {
        gen_topology(self.k, self.link_count, self.instance_seed(index))
    }

    pub fn instance_seed(&self, index: usize) -> u64 {
        seeding::derive(self.seed, index as u64)
    }

    pub fn config(&self, r: usize, lambda: f64, index: usize) -> AdmissionConfig {
        let mut cfg = self.base;
        cfg.rank = r;
        cfg.params.lambda = lambda;
        cfg.seed = seeding::derive(self.instance_seed(index), 1);
        cfg
    }

    /// Methods actually run; the oracle is dropped above its size guard.
    pub fn active_methods(&self) -> Vec<Method> {
        self.mode
            .methods()
            .iter()
            .copied()
            .filter(|&m| m != Method::Oracle || self.k <= ORACLE_MAX_USERS)
            .collect()
    }
}

/// Outcome of one method on one realization of one `(r, lambda)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub r: usize,
    pub lambda: f64,
    pub method: Method,
    pub realization: usize,
    /// Users admitted, or `None` if the run failed.
    pub admitted: Option<usize>,
    /// Admitted users (0-based), pipeline and oracle only.
    pub users: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub links: usize,
    pub r: usize,
    pub lambda: f64,
    pub method: Method,
    pub mean_admitted: f64,
    pub stderr: f64,
    pub n: usize,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub records: Vec<InstanceRecord>,
    pub failures: usize,
}

struct Task {
    r: usize,
    lambda_idx: Option<usize>,
    method: Method,
    realization: usize,
}

fn run_task(spec: &ExperimentSpec, t: &Task) -> Vec<InstanceRecord> {
    let lambdas: Vec<f64> = match t.lambda_idx {
        Some(i) => vec![spec.lambda_values[i]],
        None => spec.lambda_values.clone(),
    };
    let outcome: Result<(usize, Vec<usize>)> = (|| {
        let topo = spec.topology(t.realization)?;
        let cfg = spec.config(t.r, lambdas[0], t.realization);
        match t.method {
            Method::Pipeline => {
                let res = run_pipeline(&topo, &cfg)?;
                Ok((res.n0, res.admitted))
            }
            Method::Oracle => {
                let o = exhaustive_oracle(&topo, &cfg)?;
                Ok((o.n_max, o.best))
            }
            Method::Baseline => Ok((orthogonal_baseline(spec.k, t.r), Vec::new())),
        }
    })();
    if let Err(e) = &outcome {
        log::warn!(
            "{} failed at r = {}, realization {}: {e}",
            t.method,
            t.r,
            t.realization
        );
    }
    // The oracle and baseline ignore lambda; one run serves every lambda.
    lambdas
        .into_iter()
        .map(|lambda| InstanceRecord {
            r: t.r,
            lambda,
            method: t.method,
            realization: t.realization,
            admitted: outcome.as_ref().ok().map(|o| o.0),
            users: outcome.as_ref().map(|o| o.1.clone()).unwrap_or_default(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        })
        .collect()
}

/// Runs every instance of the sweep on up to `jobs` threads (0 = all cores).
/// Records come back ordered by `(r, lambda, method, realization)` whatever
/// the completion order.
pub fn run_instances(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<InstanceRecord>> {
    spec.validate()?;
    let mut tasks = Vec::new();
    for &r in &spec.r_values {
        for method in spec.active_methods() {
            for realization in 0..spec.realizations {
                if method == Method::Pipeline {
                    for li in 0..spec.lambda_values.len() {
                        tasks.push(Task {
                            r,
                            lambda_idx: Some(li),
                            method,
                            realization,
                        });
                    }
                } else {
                    tasks.push(Task {
                        r,
                        lambda_idx: None,
                        method,
                        realization,
                    });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut records: Vec<InstanceRecord> =
        pool.install(|| tasks.par_iter().flat_map_iter(|t| run_task(spec, t)).collect());
    let lambda_pos = |l: f64| spec.lambda_values.iter().position(|&x| x == l).unwrap_or(0);
    records.sort_by_key(|rec| (rec.r, lambda_pos(rec.lambda), rec.method, rec.realization));
    Ok(records)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates records into one row per `(r, lambda, method)`; failed
/// instances are left out of the mean and of `n`.
pub fn summarize(spec: &ExperimentSpec, records: &[InstanceRecord]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &r in &spec.r_values {
        for &lambda in &spec.lambda_values {
            for method in spec.active_methods() {
                let vals: Vec<f64> = records
                    .iter()
                    .filter(|x| x.r == r && x.lambda == lambda && x.method == method)
                    .filter_map(|x| x.admitted.map(|a| a as f64))
                    .collect();
                let (mean_admitted, stderr) = mean_stderr(&vals);
                rows.push(SweepRow {
                    k: spec.k,
                    links: spec.link_count,
                    r,
                    lambda,
                    method,
                    mean_admitted,
                    stderr,
                    n: vals.len(),
                });
            }
        }
    }
    rows
}

pub fn cmd_sweep(spec: &ExperimentSpec, jobs: usize) -> Result<SweepOutcome> {
    if spec.mode.methods().contains(&Method::Oracle) && spec.k > ORACLE_MAX_USERS {
        log::warn!("K = {} exceeds the oracle guard; oracle rows omitted", spec.k);
    }
    let records = run_instances(spec, jobs)?;
    let failures = records.iter().filter(|r| r.admitted.is_none()).count();
    Ok(SweepOutcome {
        rows: summarize(spec, &records),
        records,
        failures,
    })
}

pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
