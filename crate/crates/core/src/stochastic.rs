//! Exact jump simulation of the birth-death chain.
//!
//! Each path owns a ChaCha8 stream keyed by the seed and selected by the path
//! index, so an ensemble does not depend on how paths are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{check_len, GridFunction, Lattice, RateField, StationaryMeasure};

/// Paths per work unit; also the granularity of the deterministic merge.
pub const CHUNK: usize = 256;
/// Nodes with fewer visits are left out of holding-time statistics.
pub const MIN_VISITS: u64 = 500;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NodeStats {
    /// Sojourns started at the node, the initial one included.
    pub visits: u64,
    /// Completed sojourns, i.e. jumps out of the node.
    pub exits: u64,
    pub right: u64,
    pub left: u64,
    /// Total time spent at the node, censored final sojourns included.
    pub occupation: f64,
    /// Sum and sum of squares of completed holding times.
    pub hold_sum: f64,
    pub hold_sq_sum: f64,
}

impl NodeStats {
    fn merge(&mut self, o: &NodeStats) {
        self.visits += o.visits;
        self.exits += o.exits;
        self.right += o.right;
        self.left += o.left;
        self.occupation += o.occupation;
        self.hold_sum += o.hold_sum;
        self.hold_sq_sum += o.hold_sq_sum;
    }

    /// Occupation per exit. Unlike the mean of completed sojourns, this is not
    /// biased downward by the censoring at the horizon.
    pub fn mean_holding(&self) -> Option<f64> {
        (self.exits > 0).then(|| self.occupation / self.exits as f64)
    }

    /// Standard error of the mean holding time.
    pub fn holding_se(&self) -> Option<f64> {
        if self.exits < 2 {
            return None;
        }
        let n = self.exits as f64;
        let mean = self.hold_sum / n;
        let var = ((self.hold_sq_sum - n * mean * mean) / (n - 1.0)).max(0.0);
        Some((var / n).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEnsemble {
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Storage index of the starting node.
    pub start: usize,
    /// Storage index of each path's state at the horizon.
    pub final_states: Vec<usize>,
    pub nodes: Vec<NodeStats>,
}

struct Chunk {
    finals: Vec<usize>,
    nodes: Vec<NodeStats>,
}

fn run_chunk(
    r: &RateField,
    start: usize,
    horizon: f64,
    seed: u64,
    paths: std::ops::Range<usize>,
) -> Chunk {
    let n = r.len();
    let mut nodes = vec![NodeStats::default(); n];
    let mut finals = Vec::with_capacity(paths.len());
    for p in paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let mut k = start;
        let mut t = 0.0;
        loop {
            let st = &mut nodes[k];
            st.visits += 1;
            let total = r.alpha[k] + r.beta[k];
            if total <= 0.0 {
                // Absorbing node: nothing ever fires.
                st.occupation += horizon - t;
                break;
            }
            let e: f64 = rng.sample(Exp1);
            let hold = e / total;
            if t + hold > horizon {
                st.occupation += horizon - t;
                break;
            }
            t += hold;
            st.occupation += hold;
            st.exits += 1;
            st.hold_sum += hold;
            st.hold_sq_sum += hold * hold;
            if rng.random::<f64>() * total < r.alpha[k] {
                st.right += 1;
                k += 1;
            } else {
                st.left += 1;
                k -= 1;
            }
        }
        finals.push(k);
    }
    Chunk { finals, nodes }
}

/// Simulates `n_paths` independent paths from site `start` up to `horizon`.
pub fn simulate(
    r: &RateField,
    lat: &Lattice,
    start: i64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    check_len(r.len(), lat.len())?;
    let k0 = lat
        .index_of_site(start)
        .ok_or(Error::StartOutsideWindow(start))?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    let chunks: Vec<std::ops::Range<usize>> = (0..n_paths)
        .step_by(CHUNK)
        .map(|a| a..(a + CHUNK).min(n_paths))
        .collect();
    let results: Vec<Chunk> = chunks
        .into_par_iter()
        .map(|c| run_chunk(r, k0, horizon, seed, c))
        .collect();

    let mut nodes = vec![NodeStats::default(); r.len()];
    let mut final_states = Vec::with_capacity(n_paths);
    for c in &results {
        final_states.extend_from_slice(&c.finals);
        for (acc, s) in nodes.iter_mut().zip(&c.nodes) {
            acc.merge(s);
        }
    }
    Ok(TrajectoryEnsemble {
        n_paths,
        seed,
        horizon,
        start: k0,
        final_states,
        nodes,
    })
}

/// Normalized histogram of the final states.
pub fn empirical_law(e: &TrajectoryEnsemble, lat: &Lattice) -> Result<GridFunction> {
    if e.n_paths == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let mut counts = vec![0u64; lat.len()];
    for &k in &e.final_states {
        *counts
            .get_mut(k)
            .ok_or(Error::LengthMismatch(k, lat.len()))? += 1;
    }
    let n = e.final_states.len() as f64;
    Ok(GridFunction(
        counts.into_iter().map(|c| c as f64 / n).collect(),
    ))
}

/// `sum |p_i - q_i| / 2`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    for (name, v) in [("p", p), ("q", q)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeSummary {
    pub i: i64,
    pub visits: u64,
    pub mean_holding: f64,
    pub expected_holding: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: f64,
    pub tv_to_stationary: f64,
    pub per_node: Vec<NodeSummary>,
}

/// Summary with holding-time statistics for nodes with at least [`MIN_VISITS`] visits.
pub fn summarize(
    e: &TrajectoryEnsemble,
    r: &RateField,
    lat: &Lattice,
    m: &StationaryMeasure,
) -> Result<EnsembleSummary> {
    let law = empirical_law(e, lat)?;
    let per_node = e
        .nodes
        .iter()
        .enumerate()
        .filter(|(k, s)| s.visits >= MIN_VISITS && r.total(*k) > 0.0)
        .filter_map(|(k, s)| {
            Some(NodeSummary {
                i: k as i64 - lat.n_half as i64,
                visits: s.visits,
                mean_holding: s.mean_holding()?,
                expected_holding: 1.0 / r.total(k),
            })
        })
        .collect();
    Ok(EnsembleSummary {
        n_paths: e.n_paths,
        seed: e.seed,
        horizon: e.horizon,
        tv_to_stationary: tv_distance(&law, &m.weights)?,
        per_node,
    })
}
