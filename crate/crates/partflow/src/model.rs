//! Shared domain types: the demand measure, the flow network, dual/primal
//! state, and scenario validation. No algorithms live here.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc as StdArc;

use serde::{Deserialize, Serialize};

use crate::costs::AssignmentCostSpec;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ArcId = usize;
pub type PointId = usize;

/// A demand point of the discretized measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub id: PointId,
    pub coords: Vec<f64>,
}

/// Finite weighted point set representing the demand measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMeasure {
    pub points: Vec<Point>,
    pub masses: Vec<f64>,
    pub total_mass: f64,
}

impl DemandMeasure {
    pub fn new(points: Vec<Point>, masses: Vec<f64>) -> Self {
        let total_mass = masses.iter().sum();
        Self {
            points,
            masses,
            total_mass,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A network node. `supply` is the net supply s_i (negative = demand node);
/// endpoint nodes are the subset S that serves spatial demand directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub supply: f64,
    pub is_endpoint: bool,
    pub position: Option<Vec<f64>>,
}

/// Arc cost function. The quadratic kind is `coeff * p^2`; the generic kind
/// carries a caller-supplied convex evaluator together with the bounded
/// minimizer oracle it is responsible for.
#[derive(Clone)]
pub enum ArcCost {
    Quadratic { coeff: f64 },
    Generic(GenericArcCost),
}

/// Caller-supplied convex arc cost. `minimize(delta, lower, upper)` must
/// return argmin over p in [lower, upper] of eval(p) - delta * p, which is
/// unique when eval is strictly convex.
#[derive(Clone)]
pub struct GenericArcCost {
    pub eval: StdArc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub minimize: StdArc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for ArcCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArcCost::Quadratic { coeff } => write!(f, "Quadratic {{ coeff: {coeff} }}"),
            ArcCost::Generic(_) => write!(f, "Generic {{ .. }}"),
        }
    }
}

/// A directed arc with flow bounds [lower, upper].
#[derive(Debug, Clone)]
pub struct Arc {
    pub id: ArcId,
    pub tail: NodeId,
    pub head: NodeId,
    pub lower: f64,
    pub upper: f64,
    pub cost: ArcCost,
}

/// Directed graph with per-node adjacency lists kept consistent with `arcs`.
#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub arcs: Vec<Arc>,
    pub outgoing: Vec<Vec<ArcId>>,
    pub incoming: Vec<Vec<ArcId>>,
}

impl Network {
    pub fn new(nodes: Vec<Node>, arcs: Vec<Arc>) -> Self {
        let n = nodes.len();
        let mut outgoing = vec![Vec::new(); n];
        let mut incoming = vec![Vec::new(); n];
        for arc in &arcs {
            if arc.tail < n && arc.head < n {
                outgoing[arc.tail].push(arc.id);
                incoming[arc.head].push(arc.id);
            }
        }
        Self {
            nodes,
            arcs,
            outgoing,
            incoming,
        }
    }

    /// Endpoint node ids in ascending order.
    pub fn endpoints(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_endpoint)
            .map(|n| n.id)
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_supply(&self) -> f64 {
        self.nodes.iter().map(|n| n.supply).sum()
    }
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dimension: usize,
    pub measure: DemandMeasure,
    pub network: Network,
    pub assignment_cost: AssignmentCostSpec,
    pub balance_tolerance: f64,
}

pub const DEFAULT_BALANCE_TOLERANCE: f64 = 1e-9;

/// One scalar dual variable per network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub psi: Vec<f64>,
    pub iteration: usize,
}

impl DualState {
    pub fn zeros(n: usize) -> Self {
        Self {
            psi: vec![0.0; n],
            iteration: 0,
        }
    }
}

/// One flow value per arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub flows: Vec<f64>,
}

/// Assignment of every demand point to an endpoint, with per-cell masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<NodeId>,
    pub cell_masses: BTreeMap<NodeId, f64>,
}

/// A single validation violation. Violations are data, not faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NegativeMass { point: PointId },
    TotalMassMismatch { cached: f64, computed: f64 },
    PointIdOutOfOrder { index: usize, id: PointId },
    DimensionMismatch { point: PointId, len: usize },
    MassCountMismatch,
    NodeIdOutOfOrder { index: usize, id: NodeId },
    ArcBoundsInverted { arc: ArcId },
    ArcSelfLoop { arc: ArcId },
    ArcDuplicate { arc: ArcId },
    ArcEndpointOutOfRange { arc: ArcId },
    AdjacencyInconsistent { arc: ArcId },
    NonPositiveQuadraticCoeff { arc: ArcId },
    NoEndpoint,
    Imbalance { demand: f64, supply: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeMass { point } => write!(f, "point {point} has negative mass"),
            Violation::TotalMassMismatch { cached, computed } => {
                write!(f, "cached total mass {cached} != computed {computed}")
            }
            Violation::PointIdOutOfOrder { index, id } => {
                write!(f, "point at index {index} has id {id} (ids must be 0-based dense)")
            }
            Violation::DimensionMismatch { point, len } => {
                write!(f, "point {point} has {len} coordinates, expected scenario dimension")
            }
            Violation::MassCountMismatch => write!(f, "mass count differs from point count"),
            Violation::NodeIdOutOfOrder { index, id } => {
                write!(f, "node at index {index} has id {id} (ids must be 0-based dense)")
            }
            Violation::ArcBoundsInverted { arc } => write!(f, "arc {arc} has lower > upper"),
            Violation::ArcSelfLoop { arc } => write!(f, "arc {arc} is a self-loop"),
            Violation::ArcDuplicate { arc } => write!(f, "arc {arc} duplicates a (tail, head) pair"),
            Violation::ArcEndpointOutOfRange { arc } => {
                write!(f, "arc {arc} references a node id out of range")
            }
            Violation::AdjacencyInconsistent { arc } => {
                write!(f, "adjacency lists inconsistent for arc {arc}")
            }
            Violation::NonPositiveQuadraticCoeff { arc } => {
                write!(f, "arc {arc} quadratic coefficient must be > 0")
            }
            Violation::NoEndpoint => write!(f, "network has no endpoint node"),
            Violation::Imbalance { demand, supply } => {
                write!(f, "total demand {demand} != total supply {supply}")
            }
        }
    }
}

/// Checks every structural invariant and the demand/supply balance.
/// Returns an empty report iff the scenario is valid. Pure: identical input
/// yields an identical report.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();

    if s.measure.masses.len() != s.measure.points.len() {
        out.push(Violation::MassCountMismatch);
    }
    for (index, p) in s.measure.points.iter().enumerate() {
        if p.id != index {
            out.push(Violation::PointIdOutOfOrder { index, id: p.id });
        }
        if p.coords.len() != s.dimension {
            out.push(Violation::DimensionMismatch {
                point: p.id,
                len: p.coords.len(),
            });
        }
    }
    for (i, &m) in s.measure.masses.iter().enumerate() {
        if m < 0.0 || !m.is_finite() {
            out.push(Violation::NegativeMass { point: i });
        }
    }
    let computed: f64 = s.measure.masses.iter().sum();
    let scale = 1.0_f64.max(computed.abs());
    if (s.measure.total_mass - computed).abs() > 1e-12 * scale {
        out.push(Violation::TotalMassMismatch {
            cached: s.measure.total_mass,
            computed,
        });
    }

    let net = &s.network;
    let n = net.nodes.len();
    for (index, node) in net.nodes.iter().enumerate() {
        if node.id != index {
            out.push(Violation::NodeIdOutOfOrder { index, id: node.id });
        }
    }
    let mut seen_pairs = HashSet::new();
    for arc in &net.arcs {
        if arc.tail >= n || arc.head >= n {
            out.push(Violation::ArcEndpointOutOfRange { arc: arc.id });
            continue;
        }
        if arc.tail == arc.head {
            out.push(Violation::ArcSelfLoop { arc: arc.id });
        }
        if arc.lower > arc.upper {
            out.push(Violation::ArcBoundsInverted { arc: arc.id });
        }
        if !seen_pairs.insert((arc.tail, arc.head)) {
            out.push(Violation::ArcDuplicate { arc: arc.id });
        }
        if let ArcCost::Quadratic { coeff } = arc.cost {
            if coeff.is_nan() || coeff <= 0.0 {
                out.push(Violation::NonPositiveQuadraticCoeff { arc: arc.id });
            }
        }
        let tail_ok = arc.tail < n && net.outgoing[arc.tail].iter().filter(|&&a| a == arc.id).count() == 1;
        let head_ok = arc.head < n && net.incoming[arc.head].iter().filter(|&&a| a == arc.id).count() == 1;
        if !(tail_ok && head_ok) {
            out.push(Violation::AdjacencyInconsistent { arc: arc.id });
        }
    }

    if net.endpoints().is_empty() {
        out.push(Violation::NoEndpoint);
    }

    let supply = net.total_supply();
    if (s.measure.total_mass - supply).abs() > s.balance_tolerance {
        out.push(Violation::Imbalance {
            demand: s.measure.total_mass,
            supply,
        });
    }

    out
}

// ---------------------------------------------------------------------------
// Scenario file format (JSON). Unknown keys are rejected.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    dimension: usize,
    points: Vec<PointRec>,
    nodes: Vec<NodeRec>,
    arcs: Vec<ArcRec>,
    assignment_cost: AssignmentCostSpec,
    balance_tolerance: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointRec {
    id: PointId,
    coords: Vec<f64>,
    mass: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRec {
    id: NodeId,
    supply: f64,
    endpoint: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    position: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcRec {
    tail: NodeId,
    head: NodeId,
    lower: f64,
    upper: f64,
    cost: ArcCostRec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
enum ArcCostRec {
    Quadratic { coeff: f64 },
}

impl Scenario {
    pub fn to_json(&self) -> Result<String> {
        let mut points = Vec::with_capacity(self.measure.len());
        for (p, &mass) in self.measure.points.iter().zip(&self.measure.masses) {
            points.push(PointRec {
                id: p.id,
                coords: p.coords.clone(),
                mass,
            });
        }
        let nodes = self
            .network
            .nodes
            .iter()
            .map(|n| NodeRec {
                id: n.id,
                supply: n.supply,
                endpoint: n.is_endpoint,
                position: n.position.clone(),
            })
            .collect();
        let mut arcs = Vec::with_capacity(self.network.arcs.len());
        for a in &self.network.arcs {
            let cost = match a.cost {
                ArcCost::Quadratic { coeff } => ArcCostRec::Quadratic { coeff },
                ArcCost::Generic(_) => {
                    return Err(Error::Config(
                        "generic arc costs are not serializable".into(),
                    ))
                }
            };
            arcs.push(ArcRec {
                tail: a.tail,
                head: a.head,
                lower: a.lower,
                upper: a.upper,
                cost,
            });
        }
        let file = ScenarioFile {
            dimension: self.dimension,
            points,
            nodes,
            arcs,
            assignment_cost: self.assignment_cost.clone(),
            balance_tolerance: self.balance_tolerance,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let mut points = Vec::with_capacity(file.points.len());
        let mut masses = Vec::with_capacity(file.points.len());
        for rec in file.points {
            points.push(Point {
                id: rec.id,
                coords: rec.coords,
            });
            masses.push(rec.mass);
        }
        let nodes = file
            .nodes
            .into_iter()
            .map(|r| Node {
                id: r.id,
                supply: r.supply,
                is_endpoint: r.endpoint,
                position: r.position,
            })
            .collect();
        let arcs = file
            .arcs
            .into_iter()
            .enumerate()
            .map(|(id, r)| Arc {
                id,
                tail: r.tail,
                head: r.head,
                lower: r.lower,
                upper: r.upper,
                cost: match r.cost {
                    ArcCostRec::Quadratic { coeff } => ArcCost::Quadratic { coeff },
                },
            })
            .collect();
        Ok(Scenario {
            dimension: file.dimension,
            measure: DemandMeasure::new(points, masses),
            network: Network::new(nodes, arcs),
            assignment_cost: file.assignment_cost,
            balance_tolerance: file.balance_tolerance,
        })
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
