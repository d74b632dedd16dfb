//! Three-stage admission pipeline plus its oracle and baseline.
//!
//! User indices are 0-based throughout the library; the CLI and report layers
//! convert to 1-based numbering.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::manifold::{random_point, FactoredPoint, ManifoldShape, Mat};
use crate::objectives::{extract_diag, CompletionCost, NetworkTopology, ObservationMask, SmoothedL1Params, SparsityCost};
use crate::seeding;
use crate::trust_region::{minimize, CostProblem, SolveReport, Termination, TrustRegionConfig};

/// Largest `K` the exhaustive search accepts.
pub const ORACLE_MAX_USERS: usize = 16;

const SPARSITY_STREAM: u64 = 0x5350_4152;

/// Gradient tolerance below which design polishing stops tightening.
const CONTINUATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Bisection over prefix sizes of the priority order.
    #[default]
    Bisection,
    /// Linear scan stopping at the first infeasible prefix.
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissionConfig {
    /// Channel uses; every admitted user gets `1/r` degrees of freedom.
    pub rank: usize,
    pub params: SmoothedL1Params,
    /// Threshold on `||P_Omega(X) - I||_F / sqrt(|S|)`.
    pub feasibility_tol: f64,
    /// Random starts per feasibility solve.
    pub restarts: usize,
    pub tr: TrustRegionConfig,
    pub seed: u64,
    pub search: SearchMode,
    /// Declare a set infeasible without solving when it contains more than `r`
    /// users that all interfere with each other in both directions.
    pub rank_certificate: bool,
}

impl AdmissionConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            params: SmoothedL1Params::default(),
            feasibility_tol: 1e-3,
            restarts: 3,
            tr: TrustRegionConfig::default(),
            seed: 0,
            search: SearchMode::Bisection,
            rank_certificate: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.rank == 0 || self.rank > k {
            return Err(Error::InvalidArgument(format!(
                "rank must satisfy 1 <= r <= K = {k}, got {}",
                self.rank
            )));
        }
        if !(self.feasibility_tol > 0.0) {
            return Err(Error::InvalidArgument("feasibility_tol must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        self.params.validate()?;
        self.tr.validate()
    }
}

/// How a feasibility verdict was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// `|S| <= r`: the identity has rank `|S|`.
    Identity,
    /// A mutually interfering group of `r + 1` users forces an identity block
    /// of rank `r + 1`.
    RankObstruction,
    /// Decided by low-rank completion.
    Solved,
}

#[derive(Debug, Clone)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    /// Best `sqrt(cost / |S|)`; for [`Certificate::RankObstruction`] a lower bound.
    pub residual: f64,
    /// Best factors found, rows in the order of the queried users.
    pub point: Option<FactoredPoint>,
    pub certificate: Certificate,
    pub reports: Vec<SolveReport>,
}

#[derive(Debug, Clone)]
pub struct SparsityOutcome {
    pub point: FactoredPoint,
    /// Diagonal `z*` of the stage-one solution.
    pub diag: Vec<f64>,
    /// Users sorted by `|z*|` descending, ties by ascending index.
    pub priority: Vec<usize>,
    pub report: SolveReport,
}

/// One prefix feasibility query made during the search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrefixCheck {
    pub size: usize,
    pub feasible: bool,
    pub residual: f64,
    pub certificate: Certificate,
    pub outer_iters: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub n0: usize,
    pub admitted: Vec<usize>,
    pub checks: Vec<PrefixCheck>,
}

#[derive(Debug, Clone)]
pub struct Design {
    /// Rows are decoders (`U`) and precoders (`V`) in the order of the users.
    pub point: FactoredPoint,
    pub residual: f64,
    pub reports: Vec<SolveReport>,
}

#[derive(Debug, Clone)]
pub struct AdmissionResult {
    pub priority: Vec<usize>,
    pub admitted: Vec<usize>,
    pub n0: usize,
    pub stage1_diag: Vec<f64>,
    pub final_point: FactoredPoint,
    pub feasibility_residual: f64,
    pub stage1: SolveReport,
    pub checks: Vec<PrefixCheck>,
    pub design: Vec<SolveReport>,
}

/// Users sorted by `|z|` descending; ties keep ascending index.
pub fn priority_order(z: &[f64]) -> Vec<usize> {
    let mut pi: Vec<usize> = (0..z.len()).collect();
    pi.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()));
    pi
}

/// Stage one: minimize the smoothed sparsity objective from a seeded random
/// start and rank users by the magnitude of the resulting diagonal.
pub fn induce_sparsity(topo: &NetworkTopology, cfg: &AdmissionConfig) -> Result<SparsityOutcome> {
    cfg.validate(topo.k())?;
    let cost = SparsityCost::new(topo.clone(), cfg.params, cfg.rank)?;
    let x0 = random_point(cost.shape(), seeding::derive(cfg.seed, SPARSITY_STREAM));
    let report = minimize(&cost, x0, &cfg.tr).map_err(|e| e.at_stage(Stage::Sparsity))?;
    let diag = extract_diag(&report.final_point);
    let priority = priority_order(&diag);
    Ok(SparsityOutcome {
        point: report.final_point.clone(),
        diag,
        priority,
        report,
    })
}

/// True when `users` contains `size` members that are pairwise linked in both
/// directions.
pub fn contains_mutual_clique(topo: &NetworkTopology, users: &[usize], size: usize) -> bool {
    fn search(topo: &NetworkTopology, cands: &[usize], need: usize) -> bool {
        if need == 0 {
            return true;
        }
        for (idx, &v) in cands.iter().enumerate() {
            if cands.len() - idx < need {
                return false;
            }
            let next: Vec<usize> = cands[idx + 1..]
                .iter()
                .copied()
                .filter(|&w| topo.is_mutual(v, w))
                .collect();
            if search(topo, &next, need - 1) {
                return true;
            }
        }
        false
    }
    search(topo, users, size)
}

fn permute_rows(m: &Mat, order: &[usize]) -> Mat {
    Mat::from_fn(order.len(), m.ncols(), |i, j| m[(order[i], j)])
}

/// Minimizes from `x0`. With `polish` (transceiver design) a run that stops on
/// the gradient test before every observed entry is within the tolerance is
/// continued with a tighter gradient tolerance.
///
/// Some sets only complete in the limit of diverging factors; the gradient
/// then decays together with the cost and an absolute tolerance stops the
/// descent early. Feasibility verdicts do not continue: pushing such sets
/// under the threshold for one seed makes the verdict depend on the seed. The
/// whole chain shares one `max_outer_iters` budget.
fn descend(
    cost: &CompletionCost,
    x0: FactoredPoint,
    cfg: &AdmissionConfig,
    n: usize,
    polish: bool,
) -> Result<Vec<SolveReport>> {
    let mut tr = cfg.tr;
    let mut runs = vec![minimize(cost, x0, &tr)?];
    let mut budget = tr.max_outer_iters;
    loop {
        let rep = runs.last().expect("at least one run");
        budget = budget.saturating_sub(rep.outer_iters);
        let residual = (rep.final_cost.max(0.0) / n as f64).sqrt();
        let met = residual <= cfg.feasibility_tol && cost.max_abs_residual(&rep.final_point) <= cfg.feasibility_tol;
        if !polish
            || met
            || rep.termination != Termination::GradTol
            || budget == 0
            || tr.grad_tol < CONTINUATION_FLOOR
        {
            return Ok(runs);
        }
        tr.grad_tol *= 1e-2;
        tr.max_outer_iters = budget;
        let next = minimize(cost, rep.final_point.clone(), &tr)?;
        runs.push(next);
    }
}

/// Runs the seeded restarts on the canonical (sorted) ordering of `users`
/// and maps the best point back to the caller's ordering.
fn solve_completion(
    topo: &NetworkTopology,
    users: &[usize],
    cfg: &AdmissionConfig,
    seed: u64,
    polish: bool,
) -> Result<(f64, FactoredPoint, Vec<SolveReport>)> {
    let mut sorted = users.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mask = ObservationMask::for_users(topo, &sorted)?;
    let cost = CompletionCost::new(mask, cfg.rank)?;
    let shape = ManifoldShape::new(n, cfg.rank)?;
    let set_seed = seeding::for_set(seed, &sorted);

    let mut best: Option<(f64, FactoredPoint)> = None;
    let mut reports = Vec::new();
    for t in 0..cfg.restarts {
        let x0 = random_point(shape, seeding::derive(set_seed, t as u64));
        let runs = match descend(&cost, x0, cfg, n, polish) {
            Ok(runs) => runs,
            Err(Error::NumericalFailure { reason, .. }) => {
                log::debug!("restart {t} for {sorted:?} failed: {reason}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let last = runs.last().expect("at least one run");
        let residual = (last.final_cost.max(0.0) / n as f64).sqrt();
        if best.as_ref().is_none_or(|(b, _)| residual < *b) {
            best = Some((residual, last.final_point.clone()));
        }
        reports.extend(runs);
        if residual <= cfg.feasibility_tol {
            break;
        }
    }
    let (residual, point) = best.ok_or_else(|| Error::NumericalFailure {
        reason: format!("every restart failed for users {sorted:?}"),
        last_good: Box::new(FactoredPoint::identity(n.min(cfg.rank))),
    })?;

    // sorted[pos[p]] == users[p]
    let pos: Vec<usize> = users
        .iter()
        .map(|u| sorted.binary_search(u).expect("user present"))
        .collect();
    let (u, v) = point.into_parts();
    let point = FactoredPoint::from_factors_unchecked(permute_rows(&u, &pos), permute_rows(&v, &pos))?;
    Ok((residual, point, reports))
}

fn check_user_set(topo: &NetworkTopology, users: &[usize]) -> Result<()> {
    if users.is_empty() {
        return Err(Error::InvalidArgument("user set must be non-empty".into()));
    }
    if users.iter().any(|&u| u >= topo.k()) {
        return Err(Error::InvalidArgument("user index out of range".into()));
    }
    if users.iter().duplicates().next().is_some() {
        return Err(Error::InvalidArgument("user set has duplicates".into()));
    }
    Ok(())
}

/// Decides whether `users` can be simultaneously aligned at rank `r`.
///
/// The verdict depends only on the set of users, the topology and the
/// configuration (seeds are derived from the sorted set).
pub fn feasibility_check(
    topo: &NetworkTopology,
    users: &[usize],
    cfg: &AdmissionConfig,
) -> Result<FeasibilityVerdict> {
    check_user_set(topo, users)?;
    cfg.validate(topo.k())?;
    let n = users.len();
    if n <= cfg.rank {
        return Ok(FeasibilityVerdict {
            feasible: true,
            residual: 0.0,
            point: Some(FactoredPoint::identity(n)),
            certificate: Certificate::Identity,
            reports: Vec::new(),
        });
    }
    if cfg.rank_certificate && contains_mutual_clique(topo, users, cfg.rank + 1) {
        return Ok(FeasibilityVerdict {
            feasible: false,
            residual: (1.0 / n as f64).sqrt(),
            point: None,
            certificate: Certificate::RankObstruction,
            reports: Vec::new(),
        });
    }
    let (residual, point, reports) = solve_completion(topo, users, cfg, cfg.seed, false)?;
    Ok(FeasibilityVerdict {
        feasible: residual <= cfg.feasibility_tol,
        residual,
        point: Some(point),
        certificate: Certificate::Solved,
        reports,
    })
}

fn prefix_check(
    topo: &NetworkTopology,
    pi: &[usize],
    size: usize,
    cfg: &AdmissionConfig,
    checks: &mut Vec<PrefixCheck>,
) -> Result<bool> {
    let v = feasibility_check(topo, &pi[..size], cfg)?;
    checks.push(PrefixCheck {
        size,
        feasible: v.feasible,
        residual: v.residual,
        certificate: v.certificate,
        outer_iters: v.reports.iter().map(|r| r.outer_iters).sum(),
    });
    Ok(v.feasible)
}

fn check_permutation(pi: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if pi.len() != k {
        return Err(Error::InvalidArgument(format!(
            "priority has {} entries, expected {k}",
            pi.len()
        )));
    }
    for &p in pi {
        if p >= k || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("priority is not a permutation".into()));
        }
    }
    Ok(())
}

/// Bisection over prefix sizes of `pi`.
///
/// Keeps the invariant "prefix of size `low` feasible, prefix of size `up`
/// infeasible" and returns `N0 = low`. The full prefix is tested first so the
/// invariant holds at `up = K`.
pub fn bisection_admit(
    topo: &NetworkTopology,
    pi: &[usize],
    cfg: &AdmissionConfig,
) -> Result<SearchOutcome> {
    let k = topo.k();
    check_permutation(pi, k)?;
    let mut checks = Vec::new();
    let n0 = if prefix_check(topo, pi, k, cfg, &mut checks)? {
        k
    } else {
        let (mut low, mut up) = (0usize, k);
        while up - low > 1 {
            let i = (low + up) / 2;
            if prefix_check(topo, pi, i, cfg, &mut checks)? {
                low = i;
            } else {
                up = i;
            }
        }
        low
    };
    Ok(SearchOutcome {
        n0,
        admitted: pi[..n0].to_vec(),
        checks,
    })
}

/// Linear prefix scan: `N0` is one less than the first infeasible prefix size.
pub fn scan_admit(topo: &NetworkTopology, pi: &[usize], cfg: &AdmissionConfig) -> Result<SearchOutcome> {
    let k = topo.k();
    check_permutation(pi, k)?;
    let mut checks = Vec::new();
    let mut n0 = k;
    for m in 1..=k {
        if !prefix_check(topo, pi, m, cfg, &mut checks)? {
            n0 = m - 1;
            break;
        }
    }
    Ok(SearchOutcome {
        n0,
        admitted: pi[..n0].to_vec(),
        checks,
    })
}

/// Completes the alignment matrix of an admitted set.
pub fn design_transceivers(
    topo: &NetworkTopology,
    admitted: &[usize],
    cfg: &AdmissionConfig,
) -> Result<Design> {
    check_user_set(topo, admitted)?;
    cfg.validate(topo.k())?;
    let n = admitted.len();
    if n <= cfg.rank {
        return Ok(Design {
            point: FactoredPoint::identity(n),
            residual: 0.0,
            reports: Vec::new(),
        });
    }
    let (residual, point, reports) = solve_completion(topo, admitted, cfg, cfg.seed, true)?;
    if residual > cfg.feasibility_tol {
        return Err(Error::Inconsistent(format!(
            "admitted set {admitted:?} completes only to residual {residual:.3e}"
        )));
    }
    Ok(Design {
        point,
        residual,
        reports,
    })
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub n_max: usize,
    pub best: Vec<usize>,
    /// Feasibility queries that ran the solver.
    pub solves: usize,
}

/// Exhaustive search over subsets by decreasing size, lexicographic within a
/// size. Refuses `K > 16`.
pub fn exhaustive_oracle(topo: &NetworkTopology, cfg: &AdmissionConfig) -> Result<OracleOutcome> {
    let k = topo.k();
    if k > ORACLE_MAX_USERS {
        return Err(Error::OracleGuard {
            k,
            limit: ORACLE_MAX_USERS,
        });
    }
    cfg.validate(k)?;
    let mut solves = 0;
    for m in (cfg.rank + 1..=k).rev() {
        for subset in (0..k).combinations(m) {
            let v = feasibility_check(topo, &subset, cfg)?;
            if v.certificate == Certificate::Solved {
                solves += 1;
            }
            if v.feasible {
                return Ok(OracleOutcome {
                    n_max: m,
                    best: subset,
                    solves,
                });
            }
        }
    }
    let m = cfg.rank.min(k);
    Ok(OracleOutcome {
        n_max: m,
        best: (0..m).collect(),
        solves,
    })
}

/// Orthogonal (TDMA/FDMA) scheduling admits `min(r, K)` users.
pub fn orthogonal_baseline(k: usize, r: usize) -> usize {
    r.min(k)
}

/// Sparsity induction, prefix search and transceiver design.
pub fn run_pipeline(topo: &NetworkTopology, cfg: &AdmissionConfig) -> Result<AdmissionResult> {
    cfg.validate(topo.k())?;
    let stage1 = induce_sparsity(topo, cfg)?;
    let search = match cfg.search {
        SearchMode::Bisection => bisection_admit(topo, &stage1.priority, cfg),
        SearchMode::Scan => scan_admit(topo, &stage1.priority, cfg),
    }
    .map_err(|e| e.at_stage(Stage::Admission))?;
    let design = design_transceivers(topo, &search.admitted, cfg).map_err(|e| e.at_stage(Stage::Design))?;
    Ok(AdmissionResult {
        priority: stage1.priority,
        admitted: search.admitted,
        n0: search.n0,
        stage1_diag: stage1.diag,
        final_point: design.point,
        feasibility_residual: design.residual,
        stage1: stage1.report,
        checks: search.checks,
        design: design.reports,
    })
}
