//! The SALE protocol: leader election, leadership validation, PI control of
//! the leaders' MAPs, and follower propagation.
//!
//! Each user only ever acts on what it has heard from its one-hop
//! neighbors. The per-iteration update is shared between the idealized
//! run (every broadcast delivered once per iteration) and the packet
//! simulator in [`crate::simnet`], which feeds the same state machine from
//! headers that survived collisions.

use std::collections::{BTreeMap, BTreeSet};

use crate::analysis::leader_gain;
use crate::topology::InterferenceGraph;
use crate::trace::{IterationRecord, RunOutcome, RunTrace, TraceEvent};

/// Reference RIM for every leader's controller.
pub const RIM_SETPOINT: f64 = 2.0;
/// Controller output clamp; keeps RIM finite during transients.
pub const Q_MIN: f64 = 0.001;
pub const Q_MAX: f64 = 0.999;

/// Forest produced by leader election: the leader set Ω and parent links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreePartition {
    leaders: BTreeSet<usize>,
    parent: Vec<Option<usize>>,
}

impl TreePartition {
    pub fn new(n: usize) -> TreePartition {
        TreePartition {
            leaders: BTreeSet::new(),
            parent: vec![None; n],
        }
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn leaders(&self) -> Vec<usize> {
        self.leaders.iter().copied().collect()
    }

    pub fn is_leader(&self, i: usize) -> bool {
        self.leaders.contains(&i)
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn set_leader(&mut self, i: usize) {
        self.leaders.insert(i);
        self.parent[i] = None;
    }

    pub fn set_follower(&mut self, i: usize, parent: usize) {
        self.leaders.remove(&i);
        self.parent[i] = Some(parent);
    }

    /// Root leader of each user's parent chain. Panics on a malformed
    /// (cyclic or dangling) partition.
    pub fn tree_assignment(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.leader_of(i)).collect()
    }

    pub fn leader_of(&self, mut i: usize) -> usize {
        let mut hops = 0;
        while let Some(p) = self.parent[i] {
            i = p;
            hops += 1;
            assert!(hops <= self.n(), "cycle in parent links");
        }
        assert!(self.leaders.contains(&i), "parent chain ends at non-leader");
        i
    }

    pub fn depth(&self, mut i: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[i] {
            i = p;
            d += 1;
        }
        d
    }

    /// Height of the tree rooted at leader `l`.
    pub fn height(&self, l: usize) -> usize {
        let trees = self.tree_assignment();
        (0..self.n())
            .filter(|&i| trees[i] == l)
            .map(|i| self.depth(i))
            .max()
            .unwrap_or(0)
    }

    pub fn max_height(&self) -> usize {
        self.leaders
            .iter()
            .map(|&l| self.height(l))
            .max()
            .unwrap_or(0)
    }
}

/// Leader/follower decision from purely local information: user `i` with
/// node degree `nd_i` is a leader iff every heard neighbor has a smaller
/// degree, or ties with a larger ID. Otherwise the parent is the neighbor
/// with the largest degree (ties to the smaller ID).
fn local_role(i: usize, nd_i: usize, heard: &BTreeMap<usize, usize>) -> Option<usize> {
    let mut leader = true;
    let mut best: Option<(usize, usize)> = None; // (nd, id)
    for (&j, &nd_j) in heard {
        if nd_j > nd_i || (nd_j == nd_i && j < i) {
            leader = false;
        }
        let better = match best {
            None => true,
            Some((bn, bj)) => nd_j > bn || (nd_j == bn && j < bj),
        };
        if better {
            best = Some((nd_j, j));
        }
    }
    if leader {
        None
    } else {
        Some(best.expect("non-leader must have a neighbor").1)
    }
}

/// Preliminary leader election with full topology knowledge. Isolated
/// users become leaders of singleton trees.
pub fn elect_leaders(g: &InterferenceGraph) -> TreePartition {
    let mut partition = TreePartition::new(g.n());
    for i in 0..g.n() {
        let heard: BTreeMap<usize, usize> =
            g.neighbors(i).iter().map(|&j| (j, g.degree(j))).collect();
        match local_role(i, g.degree(i), &heard) {
            None => partition.set_leader(i),
            Some(p) => partition.set_follower(i, p),
        }
    }
    partition
}

/// Ziegler-Nichols PI gains for a leader of degree n_l:
/// K_P = 0.2·N_l/(N_l+1)², K_I = K_P/1.7.
pub fn pi_gains(n_l: usize) -> (f64, f64) {
    assert!(n_l >= 1, "isolated user needs no controller");
    let n = n_l as f64;
    let k_u = 1.0 / -leader_gain(n_l); // ultimate gain, K_I = 0 boundary
    let k_p = 0.4 * k_u;
    debug_assert!((k_p - 0.2 * n / ((n + 1.0) * (n + 1.0))).abs() < 1e-15);
    (k_p, k_p / 1.7)
}

/// Velocity-form PI controller with setpoint R = 2:
/// q(t) = q(t-1) + K_P·[e(t) − e(t-1)] + K_I·e(t), e(t) = 2 − R(t).
#[derive(Debug, Clone)]
pub struct PiController {
    pub k_p: f64,
    pub k_i: f64,
    e_prev: Option<f64>,
    q: f64,
}

impl PiController {
    pub fn new(k_p: f64, k_i: f64, q_init: f64) -> PiController {
        assert!(k_p > 0.0 && k_i > 0.0);
        PiController {
            k_p,
            k_i,
            e_prev: None,
            q: q_init,
        }
    }

    /// Seed the previous error, e.g. with 2 − R at activation for a
    /// bumpless start.
    pub fn with_error(mut self, e_prev: f64) -> PiController {
        self.e_prev = Some(e_prev);
        self
    }

    pub fn output(&self) -> f64 {
        self.q
    }

    pub fn set_output(&mut self, q: f64) {
        self.q = q;
    }

    /// One controller update from a measured RIM; output clamped to
    /// [Q_MIN, Q_MAX].
    pub fn step(&mut self, r_measured: f64) -> f64 {
        let e = RIM_SETPOINT - r_measured;
        let e_prev = self.e_prev.unwrap_or(e);
        self.q = (self.q + self.k_p * (e - e_prev) + self.k_i * e).clamp(Q_MIN, Q_MAX);
        self.e_prev = Some(e);
        self.q
    }
}

/// What a user knows about one neighbor at an iteration boundary.
#[derive(Debug, Clone, Copy)]
pub struct NeighborInfo {
    pub map: f64,
    /// Whether this neighbor's leadership declaration was heard this round.
    pub declared: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Initial MAP for every user (Algorithm text starts at 0; simulations
    /// start at 0.05 so nodes are audible from the first frame).
    pub q_init: f64,
    /// Convergence tolerance on |R_l − 2| for every leader.
    pub tol: f64,
    /// Number of consecutive in-tolerance iterations required.
    pub window: usize,
    pub max_iter: usize,
    /// Scales the Ziegler-Nichols gains (1.0 = designed gains).
    pub gain_multiplier: f64,
    /// Wall-clock length of one iteration, for trace bookkeeping.
    pub seconds_per_iteration: f64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            q_init: 0.05,
            tol: 1e-3,
            window: 5,
            max_iter: 1000,
            gain_multiplier: 1.0,
            seconds_per_iteration: 0.01,
        }
    }
}

/// Full per-run protocol state: MAPs, RIMs, declaration flags, the tree
/// partition, and the leaders' controllers.
#[derive(Debug, Clone)]
pub struct SaleState<'g> {
    graph: &'g InterferenceGraph,
    /// Node degrees as known to each user (exact in ideal mode, estimated
    /// in packet mode).
    pub nd: Vec<usize>,
    q: Vec<f64>,
    rim: Vec<f64>,
    declare: Vec<bool>,
    partition: TreePartition,
    controllers: BTreeMap<usize, PiController>,
    gain_multiplier: f64,
    t: usize,
}

impl<'g> SaleState<'g> {
    /// Fresh state with no roles assigned yet (packet mode elects later).
    pub fn new_unelected(graph: &'g InterferenceGraph, cfg: &RunConfig) -> SaleState<'g> {
        SaleState {
            graph,
            nd: vec![0; graph.n()],
            q: vec![cfg.q_init; graph.n()],
            rim: vec![0.0; graph.n()],
            declare: vec![false; graph.n()],
            partition: TreePartition::new(graph.n()),
            controllers: BTreeMap::new(),
            gain_multiplier: cfg.gain_multiplier,
            t: 0,
        }
    }

    /// Fresh state with the preliminary election already performed from
    /// exact degrees (ideal mode).
    pub fn new(graph: &'g InterferenceGraph, cfg: &RunConfig) -> SaleState<'g> {
        let mut state = SaleState::new_unelected(graph, cfg);
        for i in 0..graph.n() {
            state.nd[i] = graph.degree(i);
        }
        state.partition = elect_leaders(graph);
        for l in state.partition.leaders() {
            state.activate_controller(l, None);
        }
        state
    }

    pub fn graph(&self) -> &'g InterferenceGraph {
        self.graph
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn rim(&self) -> &[f64] {
        &self.rim
    }

    /// Per-user leadership declaration flags for the upcoming round.
    pub fn declare(&self) -> &[bool] {
        &self.declare
    }

    pub fn partition(&self) -> &TreePartition {
        &self.partition
    }

    pub fn controllers(&self) -> &BTreeMap<usize, PiController> {
        &self.controllers
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    /// Override one user's MAP (and its controller state if it leads);
    /// used for perturbation experiments.
    pub fn set_map(&mut self, i: usize, q: f64) {
        self.q[i] = q.clamp(0.0, Q_MAX);
        if let Some(ctrl) = self.controllers.get_mut(&i) {
            ctrl.set_output(self.q[i]);
        }
    }

    fn activate_controller(&mut self, l: usize, e_prev: Option<f64>) {
        if self.nd[l] == 0 {
            return; // singleton tree, nothing to regulate
        }
        let (k_p, k_i) = pi_gains(self.nd[l]);
        let mut ctrl = PiController::new(
            k_p * self.gain_multiplier,
            k_i * self.gain_multiplier,
            self.q[l],
        );
        if let Some(e) = e_prev {
            ctrl = ctrl.with_error(e);
        }
        self.controllers.insert(l, ctrl);
    }

    /// (Re)assign user i's role from degree information. New leaders get a
    /// controller; displaced leaders lose theirs.
    pub fn assign_role(&mut self, i: usize, nd_heard: &BTreeMap<usize, usize>) {
        match local_role(i, self.nd[i], nd_heard) {
            None => {
                if !self.partition.is_leader(i) {
                    self.partition.set_leader(i);
                    self.activate_controller(i, None);
                }
            }
            Some(p) => {
                self.partition.set_follower(i, p);
                self.controllers.remove(&i);
            }
        }
    }

    /// One SALE iteration, driven by per-user neighbor views. In order:
    /// RIM from heard MAPs; leader PI steps; follower propagation;
    /// leadership validation on declarations heard this round; new declare
    /// flags from the pre-update RIMs.
    pub fn apply_frame(&mut self, views: &[BTreeMap<usize, NeighborInfo>]) -> Vec<TraceEvent> {
        let n = self.graph.n();
        assert_eq!(views.len(), n);

        for i in 0..n {
            let qi = self.q[i];
            self.rim[i] = views[i]
                .values()
                .map(|info| qi / (1.0 - info.map) + info.map / (1.0 - qi))
                .sum();
        }

        let mut next_q = self.q.clone();
        for i in 0..n {
            if let Some(ctrl) = self.controllers.get_mut(&i) {
                next_q[i] = ctrl.step(self.rim[i]);
            } else if let Some(p) = self.partition.parent(i) {
                if let Some(info) = views[i].get(&p) {
                    next_q[i] = info.map;
                }
            }
        }

        // Leadership validation. A declarer wins unless a smaller-ID
        // declaration was heard from a neighbor; each standing leader that
        // hears a winning declaration steps down and follows the declarer.
        let mut events = Vec::new();
        let winners: Vec<usize> = (0..n)
            .filter(|&i| {
                self.declare[i]
                    && !self.partition.is_leader(i)
                    && !views[i].iter().any(|(&j, info)| info.declared && j < i)
            })
            .collect();
        let standing: Vec<usize> = self.partition.leaders();
        for &w in &winners {
            self.partition.set_leader(w);
            self.activate_controller(w, Some(RIM_SETPOINT - self.rim[w]));
            next_q[w] = self.q[w]; // bumpless: keep the MAP it already runs
        }
        for &w in &winners {
            let mut displaced = false;
            for &l in &standing {
                let heard_w = views[l].get(&w).map(|info| info.declared).unwrap_or(false);
                if heard_w && self.partition.is_leader(l) {
                    self.partition.set_follower(l, w);
                    self.controllers.remove(&l);
                    events.push(TraceEvent::Handover {
                        from: l + 1,
                        to: w + 1,
                    });
                    displaced = true;
                }
            }
            if !displaced {
                events.push(TraceEvent::NewLeader { id: w + 1 });
            }
        }

        for i in 0..n {
            self.declare[i] = self.rim[i] > RIM_SETPOINT;
        }
        self.q = next_q;
        self.t += 1;
        events
    }

    /// Exact one-broadcast-per-iteration views: every neighbor's true MAP
    /// and declaration flag.
    pub fn exact_views(&self) -> Vec<BTreeMap<usize, NeighborInfo>> {
        (0..self.graph.n())
            .map(|i| {
                self.graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        (
                            j,
                            NeighborInfo {
                                map: self.q[j],
                                declared: self.declare[j],
                            },
                        )
                    })
                    .collect()
            })
            .collect()
    }

    /// One idealized iteration.
    pub fn step_ideal(&mut self) -> Vec<TraceEvent> {
        let views = self.exact_views();
        self.apply_frame(&views)
    }
}

/// Drive a state to convergence (all leader RIMs within `cfg.tol` of 2 for
/// `cfg.window` consecutive iterations) or to the iteration cap, recording
/// one trace row per iteration.
pub fn drive_ideal(state: &mut SaleState<'_>, cfg: &RunConfig) -> RunTrace {
    let n = state.graph.n();
    let mut records = Vec::new();
    let mut in_tol_run = 0usize;
    let mut outcome = RunOutcome::MaxIterations;
    let mut pending: Vec<TraceEvent> = if state.iteration() == 0 {
        vec![TraceEvent::Election]
    } else {
        Vec::new()
    };

    for _ in 0..cfg.max_iter {
        let t = state.iteration();
        let q_now = state.q.clone();
        let mut events = std::mem::take(&mut pending);
        events.extend(state.step_ideal());
        let theta =
            crate::analysis::throughput(state.graph, &crate::analysis::MapVector(q_now.clone()));
        let leaders: Vec<usize> = state.partition.leaders().iter().map(|l| l + 1).collect();
        records.push(IterationRecord {
            iteration: t,
            seconds: t as f64 * cfg.seconds_per_iteration,
            q: q_now,
            rim: state.rim.clone(),
            theta: theta.0,
            leaders,
            events,
        });

        let settled = !state.partition.leaders().is_empty()
            && state
                .partition
                .leaders()
                .iter()
                .all(|&l| (state.rim[l] - RIM_SETPOINT).abs() <= cfg.tol);
        in_tol_run = if settled { in_tol_run + 1 } else { 0 };
        if in_tol_run >= cfg.window {
            outcome = RunOutcome::Converged {
                at: state.iteration() - cfg.window,
            };
            break;
        }
    }
    RunTrace {
        n,
        records,
        outcome,
    }
}

/// Idealized SALE run: elect, then iterate to convergence.
pub fn run_ideal(g: &InterferenceGraph, cfg: &RunConfig) -> RunTrace {
    let mut state = SaleState::new(g, cfg);
    drive_ideal(&mut state, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{pi_stability_check, solve_steady_state};
    use crate::topology::{fig1, fig3, fig5, InterferenceGraph};

    #[test]
    fn fig3_election() {
        let g = fig3();
        let p = elect_leaders(&g);
        assert_eq!(p.leaders(), vec![0, 6]); // users 1 and 7
        assert_eq!(p.parent(1), Some(0)); // parent(2) = 1
        assert_eq!(p.parent(5), Some(1)); // parent(6) = 2
        assert_eq!(p.height(0), 2);
        assert_eq!(p.height(6), 1);
    }

    #[test]
    fn fig5_degree_tie_breaks_to_lower_id() {
        let g = fig5();
        let p = elect_leaders(&g);
        assert_eq!(p.leaders(), vec![0, 6]); // user 7 beats user 8 on ID
        assert_eq!(p.parent(7), Some(6));
        assert_eq!(p.parent(9), Some(7)); // user 10 follows 8
    }

    #[test]
    fn fully_connected_single_leader() {
        let mut edges = Vec::new();
        for i in 1..=6 {
            for j in (i + 1)..=6 {
                edges.push((i, j));
            }
        }
        let g = InterferenceGraph::from_edges(6, &edges).unwrap();
        let p = elect_leaders(&g);
        assert_eq!(p.leaders(), vec![0]);
    }

    #[test]
    fn isolated_users_lead_singletons() {
        let g = InterferenceGraph::from_edges(3, &[(1, 2)]).unwrap();
        let p = elect_leaders(&g);
        assert!(p.is_leader(2));
        assert_eq!(p.height(2), 0);
    }

    #[test]
    fn gains_values() {
        let (kp, ki) = pi_gains(4);
        assert!((kp - 0.032).abs() < 1e-15);
        assert!((ki - 2.0 * 4.0 / (17.0 * 25.0)).abs() < 1e-15);
        let (kp1, ki1) = pi_gains(1);
        assert!((kp1 - 0.05).abs() < 1e-15);
        assert!((ki1 - 0.05 / 1.7).abs() < 1e-15);
        for n in 1..200 {
            let (kp, ki) = pi_gains(n);
            assert!((ki - kp / 1.7).abs() < 1e-15);
            assert!(pi_stability_check(n, kp, ki));
        }
    }

    #[test]
    fn pi_step_steady_state_fixed() {
        let mut ctrl = PiController::new(0.032, 0.0188, 0.2).with_error(0.0);
        let q = ctrl.step(2.0); // e = 0, e_prev = 0
        assert_eq!(q, 0.2);
    }

    #[test]
    fn pi_step_matches_hand_unrolled_recursion() {
        let (kp, ki) = pi_gains(4);
        let r0 = 2.0 * 4.0 * 0.05 / 0.95; // plant at q = 0.05
        let mut ctrl = PiController::new(kp, ki, 0.05).with_error(2.0 - r0);
        let r1 = 1.5;
        let q = ctrl.step(r1);
        let expected = 0.05 + kp * ((2.0 - r1) - (2.0 - r0)) + ki * (2.0 - r1);
        assert!((q - expected).abs() < 1e-15);
    }

    #[test]
    fn pi_converges_on_scalar_plant() {
        // constant plant R = 2*N*q/(1-q), N = 4: fixed point q = 0.2
        let (kp, ki) = pi_gains(4);
        let mut ctrl = PiController::new(kp, ki, 0.05);
        let mut q = 0.05;
        for _ in 0..30 {
            let r = 2.0 * 4.0 * q / (1.0 - q);
            q = ctrl.step(r);
        }
        assert!((q - 0.2).abs() < 1e-3, "q after 30 steps: {q}");
    }

    #[test]
    fn steady_state_is_fixed_point() {
        let g = fig3();
        let cfg = RunConfig::default();
        let mut state = SaleState::new(&g, &cfg);
        let q = solve_steady_state(&g, state.partition()).unwrap();
        for i in 0..g.n() {
            state.set_map(i, q[i]);
        }
        // seed controllers at zero error so the velocity form is at rest
        let mut st2 = state.clone();
        let events = st2.step_ideal();
        assert!(events.is_empty());
        for i in 0..g.n() {
            assert!((st2.q()[i] - q[i]).abs() < 1e-9);
            assert!(st2.rim()[i] <= RIM_SETPOINT + 1e-9);
        }
    }

    #[test]
    fn fig5_run_handover_and_steady_state() {
        let g = fig5();
        let cfg = RunConfig::default();
        let trace = run_ideal(&g, &cfg);
        assert!(matches!(trace.outcome, RunOutcome::Converged { .. }));
        assert_eq!(trace.final_leaders(), &[1, 8]);
        let handovers: Vec<_> = trace
            .events()
            .filter(|(_, e)| matches!(e, TraceEvent::Handover { from: 7, to: 8 }))
            .collect();
        assert_eq!(handovers.len(), 1);
        let q = trace.final_q();
        for i in 0..6 {
            assert!((q[i] - 0.2).abs() < 2e-3, "user {}: {}", i + 1, q[i]);
        }
        for i in 6..10 {
            assert!((q[i] - 0.25).abs() < 2e-3, "user {}: {}", i + 1, q[i]);
        }
        let r = trace.final_rim();
        assert!((r[7] - 2.0).abs() < 5e-3);
        assert!((r[6] - 1.9125).abs() < 2e-2);
    }

    #[test]
    fn fig3_run_no_handover() {
        let g = fig3();
        let trace = run_ideal(&g, &RunConfig::default());
        assert!(matches!(trace.outcome, RunOutcome::Converged { .. }));
        assert!(trace
            .events()
            .all(|(_, e)| matches!(e, TraceEvent::Election)));
        let q = trace.final_q();
        for i in 0..6 {
            assert!((q[i] - 0.2).abs() < 2e-3);
        }
        for i in 6..9 {
            assert!((q[i] - 0.2598).abs() < 2e-3);
        }
    }

    #[test]
    fn chain_converges() {
        let g = fig1();
        let trace = run_ideal(&g, &RunConfig::default());
        assert!(matches!(trace.outcome, RunOutcome::Converged { .. }));
        // leader 2 (degree 2): all MAPs 1/3
        let q = trace.final_q();
        for v in q {
            assert!((v - 1.0 / 3.0).abs() < 2e-3);
        }
    }
}
