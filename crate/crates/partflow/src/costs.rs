//! Assignment costs c(x, i) and the per-arc scalar minimization.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{euclidean_distance, Arc, ArcCost, NodeId, Point, PointId, Scenario};

/// An assignment cost value. Forbidden stands in for c = +inf and never
/// enters floating-point arithmetic; it simply always loses a min.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostValue {
    Finite(f64),
    Forbidden,
}

impl CostValue {
    pub fn is_forbidden(self) -> bool {
        matches!(self, CostValue::Forbidden)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            CostValue::Finite(v) => Some(v),
            CostValue::Forbidden => None,
        }
    }
}

/// How assignment costs are computed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum AssignmentCostSpec {
    Euclidean,
    SquaredEuclidean,
    GeodesicResistance { graph: ConsumerGraph },
    /// Dense precomputed table, rows indexed by point id, columns by the
    /// position of the endpoint in the ascending endpoint id list.
    /// `null` entries are forbidden.
    Table { entries: Vec<Vec<Option<f64>>> },
}

/// Weighted undirected graph over demand points and endpoints, used by the
/// geodesic-resistance cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerGraph {
    pub edges: Vec<ConsumerEdge>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerEdge {
    pub u: ConsumerVertex,
    pub v: ConsumerVertex,
    pub weight: f64,
}

/// A vertex of the consumer graph: either a demand point (plain index) or an
/// endpoint marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConsumerVertex {
    Point(PointId),
    Endpoint { endpoint: NodeId },
}

/// Geodesic distances from every endpoint to every consumer-graph vertex,
/// one shortest-path tree per endpoint. Predecessors are stored so the paths
/// themselves can be replayed (the cell-connectivity check needs them).
#[derive(Debug, Clone)]
pub struct GeodesicTable {
    pub endpoints: Vec<NodeId>,
    pub n_points: usize,
    /// dist[e][v]: distance from endpoint e (by list position) to vertex v.
    pub dist: Vec<Vec<CostValue>>,
    /// parent[e][v]: previous vertex on the shortest path from endpoint e.
    pub parent: Vec<Vec<Option<usize>>>,
}

impl GeodesicTable {
    /// Vertex index for a demand point.
    pub fn point_vertex(&self, p: PointId) -> usize {
        p
    }

    /// Vertex index for an endpoint, if present in the table.
    pub fn endpoint_vertex(&self, node: NodeId) -> Option<usize> {
        self.endpoints
            .iter()
            .position(|&e| e == node)
            .map(|k| self.n_points + k)
    }

    pub fn cost(&self, point: PointId, endpoint_pos: usize) -> CostValue {
        self.dist[endpoint_pos][point]
    }

    /// Vertices on the stored shortest path from `point` to the endpoint in
    /// list position `endpoint_pos`, starting at the point and ending at the
    /// endpoint vertex. Empty if the point is unreachable.
    pub fn path(&self, point: PointId, endpoint_pos: usize) -> Vec<usize> {
        if self.dist[endpoint_pos][point].is_forbidden() {
            return Vec::new();
        }
        let mut path = vec![point];
        let mut v = point;
        while let Some(p) = self.parent[endpoint_pos][v] {
            path.push(p);
            v = p;
        }
        path
    }
}

fn vertex_index(v: ConsumerVertex, n_points: usize, endpoints: &[NodeId]) -> Result<usize> {
    match v {
        ConsumerVertex::Point(p) => {
            if p >= n_points {
                return Err(Error::Config(format!(
                    "consumer graph references point {p} out of range"
                )));
            }
            Ok(p)
        }
        ConsumerVertex::Endpoint { endpoint } => endpoints
            .iter()
            .position(|&e| e == endpoint)
            .map(|k| n_points + k)
            .ok_or_else(|| {
                Error::Config(format!(
                    "consumer graph references unknown endpoint {endpoint}"
                ))
            }),
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.vertex.cmp(&other.vertex))
    }
}

/// One Dijkstra pass per endpoint over the consumer graph. Unreachable pairs
/// are marked forbidden; negative edge weights are a configuration error.
pub fn precompute_geodesic_costs(
    graph: &ConsumerGraph,
    n_points: usize,
    endpoints: &[NodeId],
) -> Result<GeodesicTable> {
    let n_vertices = n_points + endpoints.len();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_vertices];
    for edge in &graph.edges {
        if edge.weight < 0.0 || !edge.weight.is_finite() {
            return Err(Error::Config(format!(
                "consumer graph edge weight {} is negative or non-finite",
                edge.weight
            )));
        }
        let u = vertex_index(edge.u, n_points, endpoints)?;
        let v = vertex_index(edge.v, n_points, endpoints)?;
        adjacency[u].push((v, edge.weight));
        adjacency[v].push((u, edge.weight));
    }

    let mut dist_all = Vec::with_capacity(endpoints.len());
    let mut parent_all = Vec::with_capacity(endpoints.len());
    for (pos, _) in endpoints.iter().enumerate() {
        let source = n_points + pos;
        let mut dist = vec![f64::INFINITY; n_vertices];
        let mut parent = vec![None; n_vertices];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse(HeapEntry {
            dist: 0.0,
            vertex: source,
        }));
        while let Some(Reverse(entry)) = heap.pop() {
            if entry.dist > dist[entry.vertex] {
                continue;
            }
            for &(next, w) in &adjacency[entry.vertex] {
                let cand = entry.dist + w;
                if cand < dist[next] {
                    dist[next] = cand;
                    parent[next] = Some(entry.vertex);
                    heap.push(Reverse(HeapEntry {
                        dist: cand,
                        vertex: next,
                    }));
                }
            }
        }
        dist_all.push(
            dist.into_iter()
                .map(|d| {
                    if d.is_finite() {
                        CostValue::Finite(d)
                    } else {
                        CostValue::Forbidden
                    }
                })
                .collect(),
        );
        parent_all.push(parent);
    }

    Ok(GeodesicTable {
        endpoints: endpoints.to_vec(),
        n_points,
        dist: dist_all,
        parent: parent_all,
    })
}

/// Evaluates c(x, i) for a single point/endpoint pair from the given cost
/// family, without building the full matrix.
/// The solver uses a precomputed [`CostMatrix`] instead; this is the
/// one-off form (geodesic kind runs a full Dijkstra pass per call).
pub fn assignment_cost(
    spec: &AssignmentCostSpec,
    x: &Point,
    endpoint: NodeId,
    scenario: &Scenario,
) -> Result<CostValue> {
    let endpoints = scenario.network.endpoints();
    let pos_in_list = endpoints
        .iter()
        .position(|&e| e == endpoint)
        .ok_or_else(|| Error::Config(format!("node {endpoint} is not an endpoint")))?;
    match spec {
        AssignmentCostSpec::Euclidean | AssignmentCostSpec::SquaredEuclidean => {
            let node = &scenario.network.nodes[endpoint];
            let pos = node.position.as_ref().ok_or_else(|| {
                Error::Config(format!("endpoint {endpoint} has no position for positional cost"))
            })?;
            if x.coords.len() != pos.len() {
                return Err(Error::Config(format!(
                    "point {} and endpoint {endpoint} dimensions differ",
                    x.id
                )));
            }
            let d = euclidean_distance(&x.coords, pos);
            Ok(CostValue::Finite(match spec {
                AssignmentCostSpec::Euclidean => d,
                _ => d * d,
            }))
        }
        AssignmentCostSpec::GeodesicResistance { graph } => {
            let table = precompute_geodesic_costs(graph, scenario.measure.len(), &endpoints)?;
            Ok(table.cost(x.id, pos_in_list))
        }
        AssignmentCostSpec::Table { entries } => {
            let row = entries
                .get(x.id)
                .ok_or_else(|| Error::Config(format!("table has no row for point {}", x.id)))?;
            let entry = row.get(pos_in_list).copied().ok_or_else(|| {
                Error::Config(format!("table row {} has no column {pos_in_list}", x.id))
            })?;
            match entry {
                Some(v) if v.is_finite() => Ok(CostValue::Finite(v)),
                Some(_) => Err(Error::Config(format!(
                    "table entry ({}, {pos_in_list}) is not finite",
                    x.id
                ))),
                None => Ok(CostValue::Forbidden),
            }
        }
    }
}

/// Dense point-by-endpoint cost matrix compiled from an
/// [`AssignmentCostSpec`]. All solver paths query this.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    /// Endpoint node ids, ascending.
    pub endpoints: Vec<NodeId>,
    /// Row-major: costs[point * endpoints.len() + k].
    pub costs: Vec<CostValue>,
    /// Shortest-path trees, present only for the geodesic kind.
    pub geodesic: Option<GeodesicTable>,
}

impl CostMatrix {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        let endpoints = scenario.network.endpoints();
        let n_points = scenario.measure.len();
        let n_ep = endpoints.len();
        let mut costs = Vec::with_capacity(n_points * n_ep);
        let mut geodesic = None;
        match &scenario.assignment_cost {
            AssignmentCostSpec::GeodesicResistance { graph } => {
                let table = precompute_geodesic_costs(graph, n_points, &endpoints)?;
                for p in 0..n_points {
                    for k in 0..n_ep {
                        costs.push(table.cost(p, k));
                    }
                }
                geodesic = Some(table);
            }
            spec => {
                for x in &scenario.measure.points {
                    for &e in &endpoints {
                        costs.push(assignment_cost(spec, x, e, scenario)?);
                    }
                }
            }
        }
        Ok(Self {
            endpoints,
            costs,
            geodesic,
        })
    }

    pub fn n_endpoints(&self) -> usize {
        self.endpoints.len()
    }

    #[inline]
    pub fn cost(&self, point: PointId, endpoint_pos: usize) -> CostValue {
        self.costs[point * self.endpoints.len() + endpoint_pos]
    }

    #[inline]
    pub fn row(&self, point: PointId) -> &[CostValue] {
        let k = self.endpoints.len();
        &self.costs[point * k..(point + 1) * k]
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !delta.is_finite() {
        return Err(Error::NonFinite {
            context: "arc dual difference".into(),
        });
    }
    Ok(())
}

/// argmin over p in [lower, upper] of c_ij(p) - delta * p. Unique under
/// strict convexity; for the quadratic kind this is the projected stationary
/// point clamp(delta / (2 coeff), lower, upper).
pub fn arc_flow_minimizer(arc: &Arc, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    match &arc.cost {
        ArcCost::Quadratic { coeff } => {
            Ok((delta / (2.0 * coeff)).clamp(arc.lower, arc.upper))
        }
        ArcCost::Generic(g) => Ok((g.minimize)(delta, arc.lower, arc.upper)),
    }
}

/// Evaluates the arc cost at a given flow.
pub fn arc_cost_eval(arc: &Arc, p: f64) -> f64 {
    match &arc.cost {
        ArcCost::Quadratic { coeff } => coeff * p * p,
        ArcCost::Generic(g) => (g.eval)(p),
    }
}

/// min over p in [lower, upper] of c_ij(p) - delta * p, the per-arc term of
/// the dual function.
pub fn arc_dual_value(arc: &Arc, delta: f64) -> Result<f64> {
    let p = arc_flow_minimizer(arc, delta)?;
    Ok(arc_cost_eval(arc, p) - delta * p)
}
