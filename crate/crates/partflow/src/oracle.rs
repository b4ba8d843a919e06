//! Independent brute-force solver for small instances: enumerates every
//! assignment map and completes each with conservation-feasible flows. Used
//! to verify relaxation tightness and zero duality gap numerically.

use serde::{Deserialize, Serialize};

use crate::ascent::SolveReport;
use crate::costs::{arc_cost_eval, CostMatrix};
use crate::error::{Error, Result};
use crate::model::{ArcId, FlowState, NodeId, Scenario};

const MAX_ASSIGNMENTS: u128 = 1_000_000;
const MAX_ARCS: usize = 12;
const CONSERVATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best_assignment: Vec<NodeId>,
    pub best_flows: FlowState,
    pub best_cost: f64,
    pub enumerated: usize,
}

/// Elimination plan for solving tree (forest) flows by peeling leaves.
struct TreePlan {
    /// (vertex, arc, arc is outbound from vertex), in elimination order.
    steps: Vec<(usize, ArcId, bool)>,
    tree_arcs: Vec<ArcId>,
    chord_arcs: Vec<ArcId>,
}

fn build_plan(scenario: &Scenario) -> TreePlan {
    let n = scenario.network.node_count();
    // spanning forest by union-find over the undirected support
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut tree_arcs = Vec::new();
    let mut chord_arcs = Vec::new();
    for arc in &scenario.network.arcs {
        let (ru, rv) = (find(&mut parent, arc.tail), find(&mut parent, arc.head));
        if ru != rv {
            parent[ru] = rv;
            tree_arcs.push(arc.id);
        } else {
            chord_arcs.push(arc.id);
        }
    }

    // leaf-elimination order over the tree arcs
    let mut degree = vec![0usize; n];
    let mut incident: Vec<Vec<ArcId>> = vec![Vec::new(); n];
    for &a in &tree_arcs {
        let arc = &scenario.network.arcs[a];
        degree[arc.tail] += 1;
        degree[arc.head] += 1;
        incident[arc.tail].push(a);
        incident[arc.head].push(a);
    }
    let mut removed_arc = vec![false; scenario.network.arcs.len()];
    let mut steps = Vec::with_capacity(tree_arcs.len());
    let mut queue: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    while let Some(v) = queue.pop() {
        if degree[v] != 1 {
            continue;
        }
        let &a = incident[v]
            .iter()
            .find(|&&a| !removed_arc[a])
            .expect("degree-1 vertex has a live arc");
        let arc = &scenario.network.arcs[a];
        let outbound = arc.tail == v;
        let other = if outbound { arc.head } else { arc.tail };
        steps.push((v, a, outbound));
        removed_arc[a] = true;
        degree[v] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            queue.push(other);
        }
    }
    TreePlan {
        steps,
        tree_arcs,
        chord_arcs,
    }
}

/// Solves the forest flows for the given node excesses with the chord flows
/// already folded in. Returns None if conservation cannot be met.
fn solve_tree_flows(
    scenario: &Scenario,
    plan: &TreePlan,
    excess: &mut [f64],
    flows: &mut [f64],
) -> bool {
    for &(v, a, outbound) in &plan.steps {
        let arc = &scenario.network.arcs[a];
        let p = if outbound { excess[v] } else { -excess[v] };
        flows[a] = p;
        excess[v] = 0.0;
        if outbound {
            excess[arc.head] += p;
        } else {
            excess[arc.tail] -= p;
        }
    }
    excess.iter().all(|e| e.abs() <= CONSERVATION_TOL)
}

/// Enumerates every assignment of points to endpoints. Tree arcs are forced
/// by conservation (exact); chord arcs are grid-searched at
/// `flow_grid_resolution`. Ties keep the lexicographically smallest
/// assignment.
pub fn brute_force(scenario: &Scenario, flow_grid_resolution: f64) -> Result<OracleResult> {
    let matrix = CostMatrix::build(scenario)?;
    let endpoints = &matrix.endpoints;
    let n_ep = endpoints.len();
    let n_points = scenario.measure.len();
    let n_arcs = scenario.network.arcs.len();

    let combos = (n_ep as u128).checked_pow(n_points as u32).unwrap_or(u128::MAX);
    if combos > MAX_ASSIGNMENTS {
        return Err(Error::InstanceTooLarge {
            detail: format!("{n_ep}^{n_points} assignments exceeds {MAX_ASSIGNMENTS}"),
        });
    }
    if n_arcs > MAX_ARCS {
        return Err(Error::InstanceTooLarge {
            detail: format!("{n_arcs} arcs exceeds {MAX_ARCS}"),
        });
    }

    let plan = build_plan(scenario);
    let chord_grids: Vec<Vec<f64>> = plan
        .chord_arcs
        .iter()
        .map(|&a| {
            let arc = &scenario.network.arcs[a];
            let mut grid = Vec::new();
            let mut v = arc.lower;
            while v < arc.upper {
                grid.push(v);
                v += flow_grid_resolution;
            }
            grid.push(arc.upper);
            grid
        })
        .collect();

    let n_nodes = scenario.network.node_count();
    let mut assignment = vec![0usize; n_points]; // endpoint list positions
    let mut enumerated = 0usize;
    let mut best: Option<(f64, Vec<NodeId>, Vec<f64>)> = None;
    let mut flows = vec![0.0; n_arcs];
    let mut excess = vec![0.0; n_nodes];

    'outer: loop {
        enumerated += 1;
        let mut assignment_cost = 0.0;
        let mut feasible_costs = true;
        let mut demand = vec![0.0; n_nodes];
        for p in 0..n_points {
            match matrix.cost(p, assignment[p]).finite() {
                Some(c) => {
                    assignment_cost += scenario.measure.masses[p] * c;
                    demand[endpoints[assignment[p]]] += scenario.measure.masses[p];
                }
                None => {
                    feasible_costs = false;
                    break;
                }
            }
        }

        if feasible_costs {
            let mut chord_index = vec![0usize; plan.chord_arcs.len()];
            'chords: loop {
                for i in 0..n_nodes {
                    excess[i] = scenario.network.nodes[i].supply - demand[i];
                }
                for f in flows.iter_mut() {
                    *f = 0.0;
                }
                for (ci, &a) in plan.chord_arcs.iter().enumerate() {
                    let arc = &scenario.network.arcs[a];
                    let f = chord_grids[ci][chord_index[ci]];
                    flows[a] = f;
                    excess[arc.tail] -= f;
                    excess[arc.head] += f;
                }
                if solve_tree_flows(scenario, &plan, &mut excess, &mut flows) {
                    let in_bounds = plan.tree_arcs.iter().all(|&a| {
                        let arc = &scenario.network.arcs[a];
                        flows[a] >= arc.lower - CONSERVATION_TOL
                            && flows[a] <= arc.upper + CONSERVATION_TOL
                    });
                    if in_bounds {
                        let flow_cost: f64 = scenario
                            .network
                            .arcs
                            .iter()
                            .map(|arc| arc_cost_eval(arc, flows[arc.id]))
                            .sum();
                        let total = assignment_cost + flow_cost;
                        if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                            best = Some((
                                total,
                                assignment.iter().map(|&k| endpoints[k]).collect(),
                                flows.clone(),
                            ));
                        }
                    }
                }
                // advance chord odometer
                for ci in (0..chord_index.len()).rev() {
                    chord_index[ci] += 1;
                    if chord_index[ci] < chord_grids[ci].len() {
                        continue 'chords;
                    }
                    chord_index[ci] = 0;
                }
                break;
            }
        }

        // advance assignment odometer (point 0 most significant -> lex order)
        for p in (0..n_points).rev() {
            assignment[p] += 1;
            if assignment[p] < n_ep {
                continue 'outer;
            }
            assignment[p] = 0;
        }
        break;
    }

    match best {
        Some((best_cost, best_assignment, best_flows)) => Ok(OracleResult {
            best_assignment,
            best_flows: FlowState { flows: best_flows },
            best_cost,
            enumerated,
        }),
        None => Err(Error::OracleInfeasible),
    }
}

/// Numerical strong-duality check of a solve report against the oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub oracle_best_cost: f64,
    pub dual_gap: f64,
    pub primal_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn duality_gap_check(report: &SolveReport, oracle: &OracleResult) -> GapReport {
    let dual_gap = (report.dual_value - oracle.best_cost).abs();
    let primal_gap = (report.primal_value - oracle.best_cost).abs();
    let tolerance = 1e-6 * (1.0 + oracle.best_cost.abs());
    GapReport {
        oracle_best_cost: oracle.best_cost,
        dual_gap,
        primal_gap,
        tolerance,
        pass: dual_gap <= tolerance && primal_gap <= tolerance,
    }
}
