//! Generalized Laguerre cells: point assignment, exact cell masses, and the
//! stochastic mass estimator.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costs::CostMatrix;
use crate::error::{Error, Result};
use crate::model::{DemandMeasure, NodeId, Partition, PointId};

/// Per-endpoint cell masses and the full point assignment at a given psi.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMassReport {
    pub masses: BTreeMap<NodeId, f64>,
    pub assignment: Vec<NodeId>,
    /// Points where two or more endpoints achieved the minimum adjusted cost
    /// exactly (tie_epsilon = 0).
    pub tie_count: usize,
}

impl CellMassReport {
    pub fn into_partition(self) -> Partition {
        Partition {
            assignment: self.assignment,
            cell_masses: self.masses,
        }
    }
}

/// Endpoint minimizing the adjusted cost c(x, i) - psi_i. Exact ties go to
/// the lowest endpoint id. Returns (endpoint id, tied).
pub fn assign_point(matrix: &CostMatrix, point: PointId, psi: &[f64]) -> Result<(NodeId, bool)> {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (k, cost) in matrix.row(point).iter().enumerate() {
        let c = match cost.finite() {
            Some(c) => c,
            None => continue,
        };
        let adjusted = c - psi[matrix.endpoints[k]];
        match best {
            None => best = Some((k, adjusted)),
            Some((_, cur)) => {
                if adjusted < cur {
                    best = Some((k, adjusted));
                    tied = false;
                } else if adjusted == cur {
                    tied = true;
                }
            }
        }
    }
    match best {
        Some((k, _)) => Ok((matrix.endpoints[k], tied)),
        None => Err(Error::InfeasiblePoint { point }),
    }
}

/// Exact cell masses: assigns every point and accumulates masses in point
/// order (the reduction order is fixed so results are reproducible).
pub fn compute_cells(
    measure: &DemandMeasure,
    matrix: &CostMatrix,
    psi: &[f64],
) -> Result<CellMassReport> {
    let mut masses: BTreeMap<NodeId, f64> =
        matrix.endpoints.iter().map(|&e| (e, 0.0)).collect();
    let mut assignment = Vec::with_capacity(measure.len());
    let mut tie_count = 0;
    for (p, &mass) in measure.masses.iter().enumerate() {
        let (endpoint, tied) = assign_point(matrix, p, psi)?;
        if tied {
            tie_count += 1;
        }
        *masses.get_mut(&endpoint).unwrap() += mass;
        assignment.push(endpoint);
    }
    Ok(CellMassReport {
        masses,
        assignment,
        tie_count,
    })
}

/// Stochastic cell-mass estimation: draws `n_samples` points i.i.d.
/// proportionally to their masses and scales the empirical cell frequencies
/// by the total mass. Unbiased for the exact masses; deterministic for a
/// fixed seed. The returned assignment is the exact pointwise one.
pub fn estimate_cell_masses(
    measure: &DemandMeasure,
    matrix: &CostMatrix,
    psi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<CellMassReport> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if measure.total_mass.is_nan() || measure.total_mass <= 0.0 {
        return Err(Error::Config(
            "stochastic estimation requires positive total mass".into(),
        ));
    }
    let exact = compute_cells(measure, matrix, psi)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(&measure.masses)
        .map_err(|e| Error::Config(format!("bad sampling weights: {e}")))?;
    let mut counts: BTreeMap<NodeId, usize> =
        matrix.endpoints.iter().map(|&e| (e, 0)).collect();
    for _ in 0..n_samples {
        let p = dist.sample(&mut rng);
        *counts.get_mut(&exact.assignment[p]).unwrap() += 1;
    }
    let scale = measure.total_mass / n_samples as f64;
    let masses = counts
        .into_iter()
        .map(|(e, c)| (e, c as f64 * scale))
        .collect();
    Ok(CellMassReport {
        masses,
        assignment: exact.assignment,
        tie_count: exact.tie_count,
    })
}

/// Partition export: CSV with header `point_id,endpoint_id,mass`.
pub fn write_partition_csv<W: Write>(
    partition: &Partition,
    measure: &DemandMeasure,
    mut out: W,
) -> Result<()> {
    writeln!(out, "point_id,endpoint_id,mass")?;
    for (p, &endpoint) in partition.assignment.iter().enumerate() {
        writeln!(out, "{p},{endpoint},{}", measure.masses[p])?;
    }
    Ok(())
}
