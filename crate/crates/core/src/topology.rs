//! Communication graphs over worker IDs and gossip mixing weights.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::comm::WorkerId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    InvalidSpec(String),
    #[error("unknown worker {id} (topology has {n_workers} workers)")]
    UnknownWorker { id: WorkerId, n_workers: usize },
    #[error("topology is disconnected; gossip averaging would not reach consensus")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Star {
        n_workers: usize,
        #[serde(default)]
        hub_id: WorkerId,
    },
    Ring {
        n_workers: usize,
    },
    FullMesh {
        n_workers: usize,
    },
    /// Root is worker 0; workers `1..n` form contiguous groups of `group_size`
    /// whose first member is the group hub.
    Hierarchical {
        n_workers: usize,
        group_size: usize,
    },
    /// Directed edges `(from, to)`: `from` sends to `to`.
    Custom {
        n_workers: usize,
        edges: Vec<(WorkerId, WorkerId)>,
    },
}

impl TopologySpec {
    pub fn n_workers(&self) -> usize {
        match self {
            TopologySpec::Star { n_workers, .. }
            | TopologySpec::Ring { n_workers }
            | TopologySpec::FullMesh { n_workers }
            | TopologySpec::Hierarchical { n_workers, .. }
            | TopologySpec::Custom { n_workers, .. } => *n_workers,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TopologySpec::Star { .. } => "star",
            TopologySpec::Ring { .. } => "ring",
            TopologySpec::FullMesh { .. } => "full_mesh",
            TopologySpec::Hierarchical { .. } => "hierarchical",
            TopologySpec::Custom { .. } => "custom",
        }
    }

    /// Every kind except `custom` produces symmetric adjacency.
    pub fn is_undirected(&self) -> bool {
        !matches!(self, TopologySpec::Custom { .. })
    }
}

/// Directed adjacency with both out- and in-neighbor sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyManager {
    kind: &'static str,
    undirected: bool,
    out_edges: Vec<BTreeSet<WorkerId>>,
    in_edges: Vec<BTreeSet<WorkerId>>,
}

fn invalid(msg: impl Into<String>) -> TopologyError {
    TopologyError::InvalidSpec(msg.into())
}

pub fn build_topology(spec: &TopologySpec) -> Result<TopologyManager, TopologyError> {
    let n = spec.n_workers();
    if n == 0 {
        return Err(invalid("n_workers must be positive"));
    }
    let mut out_edges = vec![BTreeSet::new(); n];
    let mut link = |a: usize, b: usize| {
        out_edges[a].insert(b as WorkerId);
        out_edges[b].insert(a as WorkerId);
    };
    match spec {
        TopologySpec::Star { hub_id, .. } => {
            let hub = *hub_id as usize;
            if hub >= n {
                return Err(invalid(format!("hub_id {hub} out of range for {n} workers")));
            }
            (0..n).filter(|&i| i != hub).for_each(|i| link(hub, i));
        }
        TopologySpec::Ring { .. } => {
            if n > 1 {
                (0..n).for_each(|i| link(i, (i + 1) % n));
            }
        }
        TopologySpec::FullMesh { .. } => {
            for i in 0..n {
                for j in i + 1..n {
                    link(i, j);
                }
            }
        }
        TopologySpec::Hierarchical { group_size, .. } => {
            if *group_size == 0 {
                return Err(invalid("group_size must be positive"));
            }
            for group_start in (1..n).step_by(*group_size) {
                let group_end = (group_start + group_size).min(n);
                link(0, group_start);
                (group_start + 1..group_end).for_each(|member| link(group_start, member));
            }
        }
        TopologySpec::Custom { edges, .. } => {
            for &(from, to) in edges {
                let (a, b) = (from as usize, to as usize);
                if a >= n || b >= n {
                    return Err(invalid(format!("edge ({from}, {to}) out of range for {n} workers")));
                }
                if a == b {
                    return Err(invalid(format!("self-loop on worker {from}")));
                }
                if !out_edges[a].insert(to) {
                    return Err(invalid(format!("duplicate edge ({from}, {to})")));
                }
            }
        }
    }
    let mut in_edges = vec![BTreeSet::new(); n];
    for (from, outs) in out_edges.iter().enumerate() {
        for &to in outs {
            in_edges[to as usize].insert(from as WorkerId);
        }
    }
    Ok(TopologyManager {
        kind: spec.kind_name(),
        undirected: spec.is_undirected(),
        out_edges,
        in_edges,
    })
}

impl TopologyManager {
    pub fn n_workers(&self) -> usize {
        self.out_edges.len()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    fn check(&self, id: WorkerId) -> Result<usize, TopologyError> {
        let i = id as usize;
        if i < self.n_workers() {
            Ok(i)
        } else {
            Err(TopologyError::UnknownWorker {
                id,
                n_workers: self.n_workers(),
            })
        }
    }

    /// Workers `id` sends to, ascending.
    pub fn out_neighbors(&self, id: WorkerId) -> Result<&BTreeSet<WorkerId>, TopologyError> {
        Ok(&self.out_edges[self.check(id)?])
    }

    /// Workers that send to `id`, ascending.
    pub fn in_neighbors(&self, id: WorkerId) -> Result<&BTreeSet<WorkerId>, TopologyError> {
        Ok(&self.in_edges[self.check(id)?])
    }

    /// Whether the graph ignoring edge direction is connected.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.n_workers();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in self.out_edges[i].iter().chain(&self.in_edges[i]) {
                let j = j as usize;
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Gossip mixing weights, row `i` giving the weights worker `i` applies.
    ///
    /// Undirected kinds use Metropolis–Hastings weights
    /// `W[i][j] = 1 / (1 + max(deg_i, deg_j))` on edges with the remainder on
    /// the diagonal, which is symmetric and doubly stochastic. Directed custom
    /// graphs get uniform weights over in-neighbors plus self (row-stochastic).
    pub fn mixing_matrix(&self) -> Result<Vec<Vec<f64>>, TopologyError> {
        if !self.is_weakly_connected() {
            return Err(TopologyError::Disconnected);
        }
        let n = self.n_workers();
        let mut w = vec![vec![0.0; n]; n];
        if self.undirected {
            let degree: Vec<usize> = self.out_edges.iter().map(BTreeSet::len).collect();
            for i in 0..n {
                let mut off_diagonal = 0.0;
                for &j in &self.out_edges[i] {
                    let j = j as usize;
                    let weight = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
                    w[i][j] = weight;
                    off_diagonal += weight;
                }
                w[i][i] = 1.0 - off_diagonal;
            }
        } else {
            for (i, row) in w.iter_mut().enumerate() {
                let weight = 1.0 / (self.in_edges[i].len() + 1) as f64;
                row[i] = weight;
                for &j in &self.in_edges[i] {
                    row[j as usize] = weight;
                }
            }
        }
        Ok(w)
    }
}
