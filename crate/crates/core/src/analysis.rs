//! Numerical core of the generalized Aloha game.
//!
//! Everything here is a pure function of its inputs: the throughput map,
//! the myopic best-response iteration and its least fixed point (the Nash
//! equilibrium), the stability matrix and its positive-definiteness test,
//! the radio intensity metric (RIM), the Jacobian criterion for the Pareto
//! front, analytic steady states of the leader-controlled network, and the
//! plant-gain / sensitivity formulas behind the PI controller tuning.

use crate::sale::TreePartition;
use crate::topology::InterferenceGraph;
use thiserror::Error;

/// MAP treated as diverged once it is this close to the dead-end q = 1.
const ONE_EPS: f64 = 1e-12;

/// Per-user medium access probabilities, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MapVector(pub Vec<f64>);

/// Per-user rates in packets/slot, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(pub Vec<f64>);

impl std::ops::Deref for MapVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for RateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl MapVector {
    pub fn new(q: Vec<f64>) -> MapVector {
        assert!(
            q.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "MAP outside [0, 1]"
        );
        MapVector(q)
    }

    pub fn uniform(n: usize, q: f64) -> MapVector {
        MapVector::new(vec![q; n])
    }
}

impl RateVector {
    pub fn new(y: Vec<f64>) -> RateVector {
        assert!(
            y.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "rate outside [0, 1]"
        );
        RateVector(y)
    }

    pub fn scaled(&self, d: f64) -> RateVector {
        RateVector(self.iter().map(|&v| v * d).collect())
    }
}

/// θ_i = q_i · Π_{j neighbor of i} (1 − q_j); the empty product is 1.
pub fn throughput(g: &InterferenceGraph, q: &MapVector) -> RateVector {
    assert_eq!(q.len(), g.n(), "MAP vector length mismatch");
    let theta = (0..g.n())
        .map(|i| q[i] * g.neighbors(i).iter().map(|&j| 1.0 - q[j]).product::<f64>())
        .collect();
    RateVector(theta)
}

/// One synchronous myopic best-response update:
/// q'_i = min{ y_i / Π(1−q_j), 1 }, all users updated from the old vector.
pub fn best_response_step(g: &InterferenceGraph, q: &MapVector, y: &RateVector) -> MapVector {
    assert_eq!(q.len(), g.n());
    assert_eq!(y.len(), g.n());
    let next = (0..g.n())
        .map(|i| {
            let idle: f64 = g.neighbors(i).iter().map(|&j| 1.0 - q[j]).product();
            if idle > 0.0 {
                (y[i] / idle).min(1.0)
            } else if y[i] > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    MapVector(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOutcome {
    Converged,
    DivergedToOne,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    pub q: MapVector,
    pub iterations: usize,
}

/// Iterate the best response from q = 0. The iteration is componentwise
/// nondecreasing, so when it converges it yields the least fixed point,
/// i.e. the unique Nash equilibrium at which θ(q*) = y. Any component
/// reaching 1 signals the dead-end extraneous solution.
pub fn solve_nash(g: &InterferenceGraph, y: &RateVector, tol: f64, max_iter: usize) -> SolveReport {
    assert!(tol > 0.0);
    let mut q = MapVector(vec![0.0; g.n()]);
    for iter in 1..=max_iter {
        let next = best_response_step(g, &q, y);
        if next.iter().any(|&v| v >= 1.0 - ONE_EPS) {
            return SolveReport {
                outcome: SolveOutcome::DivergedToOne,
                q: next,
                iterations: iter,
            };
        }
        let step = next
            .iter()
            .zip(q.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        if step <= tol {
            return SolveReport {
                outcome: SolveOutcome::Converged,
                q,
                iterations: iter,
            };
        }
    }
    SolveReport {
        outcome: SolveOutcome::MaxIterations,
        q,
        iterations: max_iter,
    }
}

/// N×N stability matrix C(q): diagonal 2, off-diagonal
/// −a_ij·q_i/(1−q_j) − a_ji·q_j/(1−q_i). The equilibrium is stable if
/// C(q*) is positive definite.
#[derive(Debug, Clone)]
pub struct StabilityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl StabilityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

pub fn stability_matrix(g: &InterferenceGraph, q: &MapVector) -> StabilityMatrix {
    assert_eq!(q.len(), g.n());
    assert!(
        q.iter().all(|&v| v < 1.0),
        "stability matrix undefined at q = 1"
    );
    let n = g.n();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 2.0;
        for &j in g.neighbors(i) {
            data[i * n + j] = -q[i] / (1.0 - q[j]) - q[j] / (1.0 - q[i]);
        }
    }
    StabilityMatrix { n, data }
}

/// Cholesky-style factorization with a pivot tolerance of 1e-12.
pub fn is_positive_definite(c: &StabilityMatrix) -> bool {
    let n = c.n;
    for i in 0..n {
        for j in 0..i {
            assert!(
                (c.get(i, j) - c.get(j, i)).abs() <= 1e-9,
                "asymmetric stability matrix"
            );
        }
    }
    let mut l = vec![0.0; n * n];
    for k in 0..n {
        let mut d = c.get(k, k);
        for j in 0..k {
            d -= l[k * n + j] * l[k * n + j];
        }
        if d <= 1e-12 {
            return false;
        }
        let d = d.sqrt();
        l[k * n + k] = d;
        for i in (k + 1)..n {
            let mut v = c.get(i, k);
            for j in 0..k {
                v -= l[i * n + j] * l[k * n + j];
            }
            l[i * n + k] = v / d;
        }
    }
    true
}

/// Radio intensity metric of user i:
/// R_i = Σ_{j neighbor of i} [ q_i/(1−q_j) + q_j/(1−q_i) ].
/// R_i < 2 for all i is a sufficient condition for stability.
pub fn rim(g: &InterferenceGraph, q: &MapVector, i: usize) -> f64 {
    assert_eq!(q.len(), g.n());
    assert!(q.iter().all(|&v| v < 1.0), "RIM undefined at q = 1");
    g.neighbors(i)
        .iter()
        .map(|&j| q[i] / (1.0 - q[j]) + q[j] / (1.0 - q[i]))
        .sum()
}

/// D(q): determinant of the matrix with diagonal 1−q_i and off-diagonal
/// −a_ij·q_i. On (0,1)^N its sign equals the sign of the throughput-map
/// Jacobian determinant (the omitted product prefactor is strictly
/// positive there), so D(q) = 0 characterizes the Pareto front.
pub fn jacobian_det(g: &InterferenceGraph, q: &MapVector) -> f64 {
    assert_eq!(q.len(), g.n());
    let n = g.n();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0 - q[i];
        for &j in g.neighbors(i) {
            m[i * n + j] = -q[i];
        }
    }
    det_lu(&mut m, n)
}

/// Determinant via LU with partial pivoting.
fn det_lu(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&a, &b| m[a * n + k].abs().total_cmp(&m[b * n + k].abs()))
            .unwrap();
        if m[pivot_row * n + k] == 0.0 {
            return 0.0;
        }
        if pivot_row != k {
            for c in 0..n {
                m.swap(k * n + c, pivot_row * n + c);
            }
            det = -det;
        }
        det *= m[k * n + k];
        for r in (k + 1)..n {
            let f = m[r * n + k] / m[k * n + k];
            for c in k..n {
                m[r * n + c] -= f * m[k * n + c];
            }
        }
    }
    det
}

/// Steady-state MAP of a single-leader tree: q̃ = 1/(N_l + 1).
pub fn steady_state_single(n_l: usize) -> f64 {
    1.0 / (n_l as f64 + 1.0)
}

/// Solve R = 2 for a leader with `in_tree` same-MAP neighbors and fixed
/// cross-tree neighbor MAPs: 2k·q/(1−q) + Σ_m [q/(1−q_m) + q_m/(1−q)] = 2.
/// The left side is strictly increasing in q, so bisection on (0, 1) is
/// safe. Returns None when even q → 0 overshoots the setpoint.
pub fn solve_leader_map(in_tree: usize, cross_maps: &[f64]) -> Option<f64> {
    let r_of = |q: f64| -> f64 {
        2.0 * in_tree as f64 * q / (1.0 - q)
            + cross_maps
                .iter()
                .map(|&m| q / (1.0 - m) + m / (1.0 - q))
                .sum::<f64>()
    };
    if r_of(0.0) >= 2.0 {
        return None;
    }
    if in_tree == 0 && cross_maps.is_empty() {
        // isolated leader: no RIM constraint, transmit always
        return Some(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0 - 1e-9);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if r_of(mid) < 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Operating point q̃' of a leader with degree `n_l1` whose single
/// cross-tree neighbor is pinned at `q_m`, i.e. the root of R' = 2.
pub fn affected_operating_point(n_l1: usize, q_m: f64) -> f64 {
    assert!(n_l1 >= 1);
    solve_leader_map(n_l1 - 1, &[q_m]).expect("no operating point with R' = 2")
}

#[derive(Debug, Error)]
pub enum SteadyStateError {
    #[error("no per-tree MAP satisfies R = 2 for leader {0} (1-based)")]
    NoBalance(usize),
    #[error("leader sweeps did not converge after {0} rounds")]
    SweepsDiverged(usize),
}

/// Analytic steady state of the controlled network: every user carries its
/// tree's common MAP, and each leader's common value solves R_l = 2 given
/// the values of its cross-tree neighbors. Independent trees get
/// 1/(N_l+1); dependent leaders are swept Gauss-Seidel style (descending
/// leader degree, which resolves acyclic dependencies in one or two
/// passes) until the values settle.
pub fn solve_steady_state(
    g: &InterferenceGraph,
    partition: &TreePartition,
) -> Result<MapVector, SteadyStateError> {
    let tree_of = partition.tree_assignment();
    let mut leaders: Vec<usize> = partition.leaders().to_vec();
    leaders.sort_by_key(|&l| std::cmp::Reverse(g.degree(l)));

    let mut value: std::collections::BTreeMap<usize, f64> = leaders
        .iter()
        .map(|&l| (l, steady_state_single(g.degree(l))))
        .collect();

    const MAX_ROUNDS: usize = 10_000;
    for _ in 0..MAX_ROUNDS {
        let mut max_change = 0.0f64;
        for &l in &leaders {
            let mut in_tree = 0;
            let mut cross = Vec::new();
            for &j in g.neighbors(l) {
                if tree_of[j] == tree_of[l] {
                    in_tree += 1;
                } else {
                    cross.push(value[&tree_of[j]]);
                }
            }
            let q = solve_leader_map(in_tree, &cross).ok_or(SteadyStateError::NoBalance(l + 1))?;
            let old = value.insert(l, q).unwrap();
            max_change = max_change.max((q - old).abs());
        }
        if max_change <= 1e-10 {
            let q = (0..g.n()).map(|i| value[&tree_of[i]]).collect();
            return Ok(MapVector(q));
        }
    }
    Err(SteadyStateError::SweepsDiverged(MAX_ROUNDS))
}

/// ∂θ_l/∂ε at R_l = 2+ε for a single leader of degree n_l, with
/// q_l = (2+ε)/(2+ε+2N_l). Zero at ε = 0, positive below, negative above:
/// the leader's throughput is maximized exactly at the setpoint.
pub fn sensitivity_at_rim(n_l: usize, eps: f64) -> f64 {
    assert!(n_l >= 1);
    assert!(2.0 + eps > 0.0);
    let n = n_l as f64;
    let q = (2.0 + eps) / (2.0 + eps + 2.0 * n);
    2.0 * n * (1.0 - (n + 1.0) * q) * (1.0 - q).powi(n_l as i32 - 1) / (2.0 + eps + 2.0 * n).powi(2)
}

/// Linearized plant gain of an independent leader: K_l = −2(N_l+1)²/N_l.
pub fn leader_gain(n_l: usize) -> f64 {
    assert!(n_l >= 1, "isolated user needs no controller");
    let n = n_l as f64;
    -2.0 * (n + 1.0) * (n + 1.0) / n
}

/// Plant gain of a leader whose single cross-tree neighbor is pinned at
/// q_m, linearized around the operating point q_op that achieves R' = 2:
/// K' = −2(N−1)/(1−q_op)² − 1/(1−q_m) − q_m/(1−q_op)².
pub fn affected_leader_gain(n_l1: usize, q_m: f64, q_op: f64) -> f64 {
    assert!(n_l1 >= 2);
    assert!((0.0..=steady_state_single(n_l1)).contains(&q_m));
    assert!((0.0..1.0).contains(&q_op));
    let n = n_l1 as f64;
    -2.0 * (n - 1.0) / ((1.0 - q_op) * (1.0 - q_op))
        - 1.0 / (1.0 - q_m)
        - q_m / ((1.0 - q_op) * (1.0 - q_op))
}

/// Jury-test sufficient condition for the closed loop at a leader of
/// degree n_l: K_P > 0, K_I > 0, and −K_l(2K_P + K_I) < 2.
pub fn pi_stability_check(n_l: usize, k_p: f64, k_i: f64) -> bool {
    k_p > 0.0 && k_i > 0.0 && -leader_gain(n_l) * (2.0 * k_p + k_i) < 2.0
}
