//! Dual function evaluation, supergradient, the centralized supergradient
//! ascent loop, primal reconstruction, and optimality certification.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::costs::{arc_cost_eval, arc_dual_value, arc_flow_minimizer, CostMatrix};
use crate::error::{Error, Result};
use crate::laguerre::{compute_cells, estimate_cell_masses, CellMassReport};
use crate::model::{DualState, FlowState, Network, Partition, Scenario, validate_scenario};

/// Step-size schedule for the ascent iteration. The harmonic kind
/// gamma_k = a / (1 + b k) satisfies the divergent-sum / convergent-square-sum
/// conditions by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Harmonic { a: f64, b: f64 },
    Constant { gamma: f64 },
}

impl StepSchedule {
    pub fn gamma(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Harmonic { a, b } => a / (1.0 + b * k as f64),
            StepSchedule::Constant { gamma } => gamma,
        }
    }
}

/// How cell masses are obtained inside the ascent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassMode {
    Exact,
    Stochastic { n_samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EpsilonReached,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub gamma: f64,
    pub max_abs_g: f64,
    /// Recorded only every `trace_dual_stride` iterations (a full dual
    /// evaluation costs an extra cells pass).
    pub dual_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub psi_final: DualState,
    pub flows: FlowState,
    pub partition: Partition,
    pub dual_value: f64,
    pub primal_value: f64,
    pub gap: f64,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
}

/// Complementary-slackness and flow-balance residuals. All of A, B are
/// non-negative by construction and vanish exactly at a primal-dual optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub arc_residuals: Vec<f64>,
    pub point_residuals: Vec<f64>,
    pub flow_balance_residuals: Vec<f64>,
    pub max_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub schedule: StepSchedule,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub mass_mode: MassMode,
    pub trace_dual_stride: usize,
    pub divergence_guard: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::Harmonic { a: 1.0, b: 0.01 },
            epsilon: 1e-6,
            max_iterations: 300,
            mass_mode: MassMode::Exact,
            trace_dual_stride: 10,
            divergence_guard: 1e12,
        }
    }
}

/// Exact finite-sum evaluation of the dual function
/// q(psi) = sum_x mu_x min_i {c(x,i) - psi_i} + sum_i psi_i s_i
///        + sum_arcs min_p {c_ij(p) - (psi_i - psi_j) p}.
pub fn dual_value(scenario: &Scenario, matrix: &CostMatrix, psi: &[f64]) -> Result<f64> {
    let mut q = 0.0;
    for (p, &mass) in scenario.measure.masses.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (k, cost) in matrix.row(p).iter().enumerate() {
            if let Some(c) = cost.finite() {
                let adjusted = c - psi[matrix.endpoints[k]];
                if adjusted < best {
                    best = adjusted;
                }
            }
        }
        if !best.is_finite() {
            return Err(Error::InfeasiblePoint { point: p });
        }
        q += mass * best;
    }
    for node in &scenario.network.nodes {
        q += psi[node.id] * node.supply;
    }
    for arc in &scenario.network.arcs {
        q += arc_dual_value(arc, psi[arc.tail] - psi[arc.head])?;
    }
    Ok(q)
}

/// Per-arc minimizing flows at psi, in arc id order.
pub fn flows_at(network: &Network, psi: &[f64]) -> Result<FlowState> {
    let mut flows = Vec::with_capacity(network.arcs.len());
    for arc in &network.arcs {
        flows.push(arc_flow_minimizer(arc, psi[arc.tail] - psi[arc.head])?);
    }
    Ok(FlowState { flows })
}

/// Supergradient components: g_i = s_i - m_i - sum_out p + sum_in p for
/// endpoints, the same without the mass term otherwise. The summation order
/// (outgoing arcs then incoming arcs, each in adjacency order) is fixed; the
/// distributed runtime reproduces it bit-for-bit.
pub fn supergradient(network: &Network, flows: &FlowState, cells: &CellMassReport) -> Vec<f64> {
    let mut g = Vec::with_capacity(network.node_count());
    for node in &network.nodes {
        let mut gi = node.supply;
        if node.is_endpoint {
            gi -= cells.masses[&node.id];
        }
        for &a in &network.outgoing[node.id] {
            gi -= flows.flows[a];
        }
        for &a in &network.incoming[node.id] {
            gi += flows.flows[a];
        }
        g.push(gi);
    }
    g
}

/// One ascent step psi' = psi + gamma_k g.
pub fn ascent_step(psi: &DualState, g: &[f64], schedule: &StepSchedule, k: usize) -> Result<DualState> {
    let gamma = schedule.gamma(k);
    let mut next = Vec::with_capacity(psi.psi.len());
    for (i, &p) in psi.psi.iter().enumerate() {
        let v = p + gamma * g[i];
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("dual update at node {i}, iteration {k}"),
            });
        }
        next.push(v);
    }
    Ok(DualState {
        psi: next,
        iteration: k + 1,
    })
}

/// Primal reconstruction at psi: assignment by minimum adjusted cost, flows
/// by the per-arc minimizer, and the resulting primal objective value.
pub fn reconstruct_primal(
    scenario: &Scenario,
    matrix: &CostMatrix,
    psi: &[f64],
) -> Result<(Partition, FlowState, f64)> {
    let cells = compute_cells(&scenario.measure, matrix, psi)?;
    let flows = flows_at(&scenario.network, psi)?;
    let mut primal = 0.0;
    for (p, &mass) in scenario.measure.masses.iter().enumerate() {
        let endpoint = cells.assignment[p];
        let k = matrix
            .endpoints
            .iter()
            .position(|&e| e == endpoint)
            .expect("assigned endpoint is in the matrix");
        primal += mass
            * matrix
                .cost(p, k)
                .finite()
                .expect("assigned endpoint has finite cost");
    }
    for arc in &scenario.network.arcs {
        primal += arc_cost_eval(arc, flows.flows[arc.id]);
    }
    Ok((cells.into_partition(), flows, primal))
}

/// Complementary-slackness residuals B_ij, A(x, T(x)) plus per-node flow
/// balance residuals, evaluated with exact cell masses.
pub fn certify(
    scenario: &Scenario,
    matrix: &CostMatrix,
    psi: &[f64],
    partition: &Partition,
    flows: &FlowState,
) -> Result<Certificate> {
    let mut arc_residuals = Vec::with_capacity(scenario.network.arcs.len());
    for arc in &scenario.network.arcs {
        let delta = psi[arc.tail] - psi[arc.head];
        let p = flows.flows[arc.id];
        let b = arc_cost_eval(arc, p) - delta * p - arc_dual_value(arc, delta)?;
        arc_residuals.push(b);
    }

    let mut point_residuals = Vec::with_capacity(scenario.measure.len());
    for p in 0..scenario.measure.len() {
        let mut best = f64::INFINITY;
        for (k, cost) in matrix.row(p).iter().enumerate() {
            if let Some(c) = cost.finite() {
                best = best.min(c - psi[matrix.endpoints[k]]);
            }
        }
        let assigned = partition.assignment[p];
        let k = matrix
            .endpoints
            .iter()
            .position(|&e| e == assigned)
            .expect("assigned endpoint is in the matrix");
        let c = matrix
            .cost(p, k)
            .finite()
            .ok_or(Error::InfeasiblePoint { point: p })?;
        point_residuals.push((c - psi[assigned]) - best);
    }

    let mut flow_balance_residuals = Vec::with_capacity(scenario.network.node_count());
    for node in &scenario.network.nodes {
        let mut net_out = 0.0;
        for &a in &scenario.network.outgoing[node.id] {
            net_out += flows.flows[a];
        }
        for &a in &scenario.network.incoming[node.id] {
            net_out -= flows.flows[a];
        }
        let target = if node.is_endpoint {
            node.supply - partition.cell_masses[&node.id]
        } else {
            node.supply
        };
        flow_balance_residuals.push(net_out - target);
    }

    let max_residual = arc_residuals
        .iter()
        .chain(&point_residuals)
        .map(|r| r.abs())
        .chain(flow_balance_residuals.iter().map(|r| r.abs()))
        .fold(0.0_f64, f64::max);

    Ok(Certificate {
        arc_residuals,
        point_residuals,
        flow_balance_residuals,
        max_residual,
    })
}

/// Centralized supergradient ascent. Iterates psi <- psi + gamma_k g(psi)
/// until max_i |Delta psi_i| < epsilon or the iteration cap, then
/// reconstructs the primal at the final psi with exact cell masses.
pub fn solve(scenario: &Scenario, options: &SolveOptions) -> Result<SolveReport> {
    let violations = validate_scenario(scenario);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let matrix = CostMatrix::build(scenario)?;
    for p in 0..scenario.measure.len() {
        if matrix.row(p).iter().all(|c| c.is_forbidden()) {
            return Err(Error::InfeasiblePoint { point: p });
        }
    }

    let n = scenario.network.node_count();
    let mut state = DualState::zeros(n);
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut termination = Termination::MaxIterations;

    for k in 0..options.max_iterations {
        let cells = match options.mass_mode {
            MassMode::Exact => compute_cells(&scenario.measure, &matrix, &state.psi)?,
            MassMode::Stochastic { n_samples, seed } => estimate_cell_masses(
                &scenario.measure,
                &matrix,
                &state.psi,
                n_samples,
                seed.wrapping_add(k as u64),
            )?,
        };
        let flows = flows_at(&scenario.network, &state.psi)?;
        let g = supergradient(&scenario.network, &flows, &cells);
        let gamma = options.schedule.gamma(k);
        let max_abs_g = g.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let dual = if k % options.trace_dual_stride == 0 {
            Some(dual_value(scenario, &matrix, &state.psi)?)
        } else {
            None
        };
        trace.push(TraceRecord {
            k,
            gamma,
            max_abs_g,
            dual_value: dual,
        });

        state = match ascent_step(&state, &g, &options.schedule, k) {
            Ok(next) => next,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Divergence {
                    iteration: k,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        if state.psi.iter().any(|&p| p.abs() > options.divergence_guard) {
            return Err(Error::Divergence {
                iteration: k,
                trace,
            });
        }
        if gamma * max_abs_g < options.epsilon {
            termination = Termination::EpsilonReached;
            break;
        }
    }

    let (partition, flows, primal_value) = reconstruct_primal(scenario, &matrix, &state.psi)?;
    let dual = dual_value(scenario, &matrix, &state.psi)?;
    Ok(SolveReport {
        psi_final: state,
        flows,
        partition,
        dual_value: dual,
        primal_value,
        gap: primal_value - dual,
        trace,
        termination,
    })
}

/// Trace export: CSV `k,gamma,max_abs_g,dual_value` with the dual column
/// blank on skipped iterations.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut out: W) -> Result<()> {
    writeln!(out, "k,gamma,max_abs_g,dual_value")?;
    for rec in trace {
        match rec.dual_value {
            Some(q) => writeln!(out, "{},{},{},{}", rec.k, rec.gamma, rec.max_abs_g, q)?,
            None => writeln!(out, "{},{},{},", rec.k, rec.gamma, rec.max_abs_g)?,
        }
    }
    Ok(())
}

/// Flow export: CSV `arc_tail,arc_head,flow`.
pub fn write_flows_csv<W: Write>(network: &Network, flows: &FlowState, mut out: W) -> Result<()> {
    writeln!(out, "arc_tail,arc_head,flow")?;
    for arc in &network.arcs {
        writeln!(out, "{},{},{}", arc.tail, arc.head, flows.flows[arc.id])?;
    }
    Ok(())
}
