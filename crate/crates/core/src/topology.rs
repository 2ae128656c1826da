//! Interference graphs over transmit-receive pairs.
//!
//! A user is a single node (the Tx-Rx distance is assumed much smaller than
//! the distance between users). An undirected edge i-j means the two users
//! cannot transmit in the same slot without colliding. Node indices are
//! 0-based everywhere in the API; the plain-text file format and the
//! reference topologies are written with the conventional 1-based user IDs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("user index {0} out of range 1..={1}")]
    IndexOutOfRange(usize, usize),
    #[error("self-loop on user {0}")]
    SelfLoop(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("failed to generate a connected topology after {0} attempts")]
    GenerationFailed(usize),
}

/// Symmetric interference relation over `n` users, with optional positions
/// for generated topologies.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceGraph {
    n: usize,
    neighbors: Vec<Vec<usize>>,
    positions: Option<Vec<(f64, f64)>>,
}

impl InterferenceGraph {
    /// Build a graph from 1-based unordered index pairs. Duplicate edges are
    /// idempotent; self-loops and out-of-range indices are rejected.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
    ) -> Result<InterferenceGraph, TopologyError> {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            for idx in [i, j] {
                if idx < 1 || idx > n {
                    return Err(TopologyError::IndexOutOfRange(idx, n));
                }
            }
            let (a, b) = (i - 1, j - 1);
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let g = InterferenceGraph {
            n,
            neighbors,
            positions: None,
        };
        g.assert_invariants();
        Ok(g)
    }

    /// Place `n` users uniformly at random in a `sqrt(area) x sqrt(area)`
    /// square and connect pairs within `range`; regenerate until the graph is
    /// connected. Deterministic for a fixed seed.
    pub fn random_geometric(
        n: usize,
        area: f64,
        range: f64,
        seed: u64,
    ) -> Result<InterferenceGraph, TopologyError> {
        assert!(n >= 1 && area > 0.0 && range > 0.0);
        const MAX_ATTEMPTS: usize = 10_000;
        let side = area.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_ATTEMPTS {
            let positions: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side))
                .collect();
            let mut neighbors = vec![Vec::new(); n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let (dx, dy) = (
                        positions[i].0 - positions[j].0,
                        positions[i].1 - positions[j].1,
                    );
                    if (dx * dx + dy * dy).sqrt() <= range {
                        neighbors[i].push(j);
                        neighbors[j].push(i);
                    }
                }
            }
            let g = InterferenceGraph {
                n,
                neighbors,
                positions: Some(positions),
            };
            if g.is_connected() {
                g.assert_invariants();
                return Ok(g);
            }
        }
        Err(TopologyError::GenerationFailed(MAX_ATTEMPTS))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Node degree N_i.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn positions(&self) -> Option<&[(f64, f64)]> {
        self.positions.as_deref()
    }

    /// True iff a breadth-first traversal from node 0 reaches every node.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Serialize to the plain-text topology format: `n=<N>` then one
    /// 1-based `<i> <j>` edge per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for i in 0..self.n {
            for &j in &self.neighbors[i] {
                if j > i {
                    out.push_str(&format!("{} {}\n", i + 1, j + 1));
                }
            }
        }
        out
    }

    /// Parse the plain-text topology format. `#` starts a comment.
    pub fn parse(text: &str) -> Result<InterferenceGraph, TopologyError> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            if let Some(rest) = line.strip_prefix("n=") {
                n = Some(rest.trim().parse().map_err(|_| TopologyError::Parse {
                    line: lineno,
                    msg: format!("invalid user count '{rest}'"),
                })?);
                continue;
            }
            let mut parts = line.split_whitespace();
            let (i, j) = match (parts.next(), parts.next(), parts.next()) {
                (Some(i), Some(j), None) => (i, j),
                _ => {
                    return Err(TopologyError::Parse {
                        line: lineno,
                        msg: format!("expected '<i> <j>', got '{line}'"),
                    })
                }
            };
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| TopologyError::Parse {
                    line: lineno,
                    msg: format!("invalid user index '{s}'"),
                })
            };
            edges.push((parse(i)?, parse(j)?));
        }
        let n = n.ok_or(TopologyError::Parse {
            line: 0,
            msg: "missing 'n=<N>' line".into(),
        })?;
        InterferenceGraph::from_edges(n, &edges)
    }

    fn assert_invariants(&self) {
        for i in 0..self.n {
            debug_assert!(!self.neighbors[i].contains(&i));
            for &j in &self.neighbors[i] {
                debug_assert!(self.neighbors[j].contains(&i));
            }
        }
    }
}

/// The 3-user chain: users 1 and 3 can transmit concurrently, neither can
/// transmit together with user 2.
pub fn fig1() -> InterferenceGraph {
    InterferenceGraph::from_edges(3, &[(1, 2), (2, 3)]).unwrap()
}

const FIG3_EDGES: &[(usize, usize)] = &[
    (1, 2),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 3),
    (2, 4),
    (2, 6),
    (5, 7),
    (7, 8),
    (7, 9),
    (8, 9),
];

/// The 9-user reference topology: two trees rooted at users 1 (degree 4)
/// and 7 (degree 3), joined only through the follower edge 5-7.
pub fn fig3() -> InterferenceGraph {
    InterferenceGraph::from_edges(9, FIG3_EDGES).unwrap()
}

/// The 10-user reference topology: fig3 plus user 10 attached to user 8,
/// which ties user 8's degree with user 7's and triggers a leadership
/// handover from 7 to 8 at runtime.
pub fn fig5() -> InterferenceGraph {
    let mut edges = FIG3_EDGES.to_vec();
    edges.push((8, 10));
    InterferenceGraph::from_edges(10, &edges).unwrap()
}
