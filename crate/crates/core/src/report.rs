//! Serializable summaries of a pipeline run. Users are numbered from 1.

use serde::Serialize;

use crate::admission::{AdmissionConfig, AdmissionResult, Certificate, PrefixCheck};
use crate::objectives::{NetworkTopology, SmoothedL1Params};
use crate::trust_region::{SolveReport, Termination};

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub termination: Termination,
    pub ill_conditioned: bool,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            outer_iters: r.outer_iters,
            inner_iters: r.inner_iters,
            final_cost: r.final_cost,
            final_grad_norm: r.final_grad_norm,
            converged: r.converged,
            termination: r.termination,
            ill_conditioned: r.ill_conditioned,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub size: usize,
    pub feasible: bool,
    pub residual: f64,
    pub certificate: Certificate,
    pub outer_iters: usize,
}

impl From<&PrefixCheck> for CheckSummary {
    fn from(c: &PrefixCheck) -> Self {
        Self {
            size: c.size,
            feasible: c.feasible,
            residual: c.residual,
            certificate: c.certificate,
            outer_iters: c.outer_iters,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stages {
    pub sparsity: SolveSummary,
    pub admission: Vec<CheckSummary>,
    pub design: Vec<SolveSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Transceiver {
    pub user: usize,
    pub decoder: Vec<f64>,
    pub precoder: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissionReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub links: usize,
    pub rank: usize,
    pub seed: u64,
    pub params: SmoothedL1Params,
    pub feasibility_tol: f64,
    pub n0: usize,
    pub admitted: Vec<usize>,
    pub priority: Vec<usize>,
    pub stage1_diag: Vec<f64>,
    pub feasibility_residual: f64,
    pub stages: Stages,
    pub transceivers: Vec<Transceiver>,
}

impl AdmissionReport {
    pub fn new(topo: &NetworkTopology, cfg: &AdmissionConfig, res: &AdmissionResult) -> Self {
        let (u, v) = (res.final_point.u(), res.final_point.v());
        let transceivers = res
            .admitted
            .iter()
            .enumerate()
            .map(|(row, &user)| Transceiver {
                user: user + 1,
                decoder: u.row(row).iter().copied().collect(),
                precoder: v.row(row).iter().copied().collect(),
            })
            .collect();
        Self {
            k: topo.k(),
            links: topo.num_links(),
            rank: cfg.rank,
            seed: cfg.seed,
            params: cfg.params,
            feasibility_tol: cfg.feasibility_tol,
            n0: res.n0,
            admitted: res.admitted.iter().map(|i| i + 1).collect(),
            priority: res.priority.iter().map(|i| i + 1).collect(),
            stage1_diag: res.stage1_diag.clone(),
            feasibility_residual: res.feasibility_residual,
            stages: Stages {
                sparsity: (&res.stage1).into(),
                admission: res.checks.iter().map(Into::into).collect(),
                design: res.design.iter().map(Into::into).collect(),
            },
            transceivers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One-line CSV summary with a header row.
    pub fn to_csv(&self) -> String {
        let admitted = self.admitted.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" ");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "K",
            "links",
            "r",
            "lambda",
            "n0",
            "admitted",
            "residual",
            "stage1_iters",
            "admission_checks",
            "design_iters",
        ])
        .expect("in-memory write");
        w.write_record([
            self.k.to_string(),
            self.links.to_string(),
            self.rank.to_string(),
            self.params.lambda.to_string(),
            self.n0.to_string(),
            admitted,
            format!("{:e}", self.feasibility_residual),
            self.stages.sparsity.outer_iters.to_string(),
            self.stages.admission.len().to_string(),
            self.stages.design.iter().map(|d| d.outer_iters).sum::<usize>().to_string(),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("utf-8")
    }

    /// Short human-readable summary.
    pub fn to_text(&self) -> String {
        let admitted = self.admitted.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(", ");
        let checks = self
            .stages
            .admission
            .iter()
            .map(|c| format!("{}:{}", c.size, if c.feasible { "ok" } else { "x" }))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "N0 = {} of K = {} at r = {}\nadmitted: {{{}}}\nresidual: {:.3e}\nstage 1: {} iterations ({:?})\nprefix checks: {}\ndesign: {} iterations\n",
            self.n0,
            self.k,
            self.rank,
            admitted,
            self.feasibility_residual,
            self.stages.sparsity.outer_iters,
            self.stages.sparsity.termination,
            checks,
            self.stages.design.iter().map(|d| d.outer_iters).sum::<usize>(),
        )
    }
}
