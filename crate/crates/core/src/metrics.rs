//! Post-run metrics: degree-weighted Jain fairness, net throughput under
//! the header overhead, convergence time, and the distance-to-Pareto ray
//! search.

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{solve_nash, throughput, MapVector, RateVector, SolveOutcome};
use crate::sale::{TreePartition, RIM_SETPOINT};
use crate::topology::InterferenceGraph;
use crate::trace::RunTrace;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("Jain index undefined for an all-zero throughput vector")]
    AllZeroThroughput,
    #[error("throughput vector is not achievable at a stable operating point")]
    InfeasibleThroughput,
    #[error("no infeasible scale found up to d = {0}; ray search cannot bracket")]
    NoBracket(f64),
}

/// Degree-weighted Jain fairness index: with θ̃_i = (N_i+1)·θ_i, returns
/// (Σθ̃)² / (N·Σθ̃²). A user sharing the channel fairly with N_i neighbors
/// is expected to carry 1/(N_i+1) of it, hence the weights.
pub fn jain_weighted(g: &InterferenceGraph, theta: &RateVector) -> Result<f64, MetricsError> {
    assert_eq!(theta.len(), g.n());
    let weighted: Vec<f64> = (0..g.n())
        .map(|i| (g.degree(i) as f64 + 1.0) * theta[i])
        .collect();
    let sum: f64 = weighted.iter().sum();
    let sum_sq: f64 = weighted.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return Err(MetricsError::AllZeroThroughput);
    }
    Ok(sum * sum / (g.n() as f64 * sum_sq))
}

/// θ_net,i = θ_i · (1 − overhead_bits / l_s).
pub fn net_throughput(theta: &RateVector, l_s: usize, overhead_bits: usize) -> RateVector {
    assert!(overhead_bits < l_s);
    let factor = 1.0 - overhead_bits as f64 / l_s as f64;
    RateVector(theta.iter().map(|&t| t * factor).collect())
}

/// Smallest iteration t such that every record in [t, t+window) has a
/// non-empty leader set with all leader RIMs within `tol` of 2. `None` if
/// the trace never sustains such a window.
pub fn convergence_time(trace: &RunTrace, tol: f64, window: usize) -> Option<usize> {
    assert!(window >= 1);
    let mut run_start = None;
    let mut run_len = 0usize;
    for rec in &trace.records {
        let ok = !rec.leaders.is_empty()
            && rec
                .leaders
                .iter()
                .all(|&l| (rec.rim[l - 1] - RIM_SETPOINT).abs() <= tol);
        if ok {
            if run_len == 0 {
                run_start = Some(rec.iteration);
            }
            run_len += 1;
            if run_len >= window {
                return run_start;
            }
        } else {
            run_len = 0;
            run_start = None;
        }
    }
    None
}

/// Certificate that a rate vector is stably achievable: the monotone
/// best-response iteration converges to an interior fixed point.
fn feasible(g: &InterferenceGraph, y: &RateVector) -> bool {
    solve_nash(g, y, 1e-8, 100_000).outcome == SolveOutcome::Converged
}

/// Distance to the Pareto front: the supremum d ≥ 1 such that d·θ is still
/// stably achievable, found by doubling the bracket from d = 2 and then
/// bisecting to 1e-4. Errors if θ itself is infeasible (d would be < 1).
pub fn distance_to_pareto(g: &InterferenceGraph, theta: &RateVector) -> Result<f64, MetricsError> {
    assert_eq!(theta.len(), g.n());
    if !feasible(g, theta) {
        return Err(MetricsError::InfeasibleThroughput);
    }
    const D_CAP: f64 = 1e9;
    let mut lo = 1.0;
    let mut hi = 2.0;
    while feasible(g, &theta.scaled(hi)) {
        lo = hi;
        hi *= 2.0;
        if hi > D_CAP {
            return Err(MetricsError::NoBracket(D_CAP));
        }
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if feasible(g, &theta.scaled(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Flat summary of one run, mirroring the scalability-table columns.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub users: usize,
    pub mean_theta: f64,
    pub total_theta: f64,
    pub mean_theta_net: f64,
    pub jain: f64,
    pub d_pareto: f64,
    pub convergence_iterations: Option<usize>,
    pub convergence_seconds: Option<f64>,
    pub leader_count: usize,
    pub max_tree_height: usize,
}

impl MetricsReport {
    /// Compute every metric from a finished run. The throughput vector is
    /// the analytic one at the final MAPs (the empirical per-frame rates
    /// in packet traces agree with it up to binomial noise).
    pub fn compute(
        g: &InterferenceGraph,
        partition: &TreePartition,
        trace: &RunTrace,
        l_s: usize,
        overhead_bits: usize,
        conv_tol: f64,
        conv_window: usize,
    ) -> Result<MetricsReport, MetricsError> {
        let n = g.n();
        let q = MapVector::new(trace.final_q().to_vec());
        let theta = throughput(g, &q);
        let total: f64 = theta.iter().sum();
        let theta_net = net_throughput(&theta, l_s, overhead_bits);
        let conv = convergence_time(trace, conv_tol, conv_window);
        let conv_seconds = conv.and_then(|t| {
            trace
                .records
                .iter()
                .find(|r| r.iteration == t)
                .map(|r| r.seconds)
        });
        Ok(MetricsReport {
            users: n,
            mean_theta: total / n as f64,
            total_theta: total,
            mean_theta_net: theta_net.iter().sum::<f64>() / n as f64,
            jain: jain_weighted(g, &theta)?,
            d_pareto: distance_to_pareto(g, &theta)?,
            convergence_iterations: conv,
            convergence_seconds: conv_seconds,
            leader_count: partition.leaders().len(),
            max_tree_height: partition.max_height(),
        })
    }

    /// Flat `key = value` text block.
    pub fn to_text(&self) -> String {
        let fmt_opt_usize =
            |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "none".into());
        let fmt_opt_f64 = |v: Option<f64>| {
            v.map(|x| format!("{x:.6}"))
                .unwrap_or_else(|| "none".into())
        };
        format!(
            "users = {}\n\
             mean_theta = {:.6}\n\
             total_theta = {:.6}\n\
             mean_theta_net = {:.6}\n\
             jain = {:.6}\n\
             d_pareto = {:.6}\n\
             convergence_iterations = {}\n\
             convergence_seconds = {}\n\
             leader_count = {}\n\
             max_tree_height = {}\n",
            self.users,
            self.mean_theta,
            self.total_theta,
            self.mean_theta_net,
            self.jain,
            self.d_pareto,
            fmt_opt_usize(self.convergence_iterations),
            fmt_opt_f64(self.convergence_seconds),
            self.leader_count,
            self.max_tree_height,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sale::{elect_leaders, run_ideal, RunConfig};
    use crate::topology::{fig1, fig5, InterferenceGraph};
    use crate::trace::{IterationRecord, RunOutcome};

    fn full(n: usize) -> InterferenceGraph {
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                edges.push((i, j));
            }
        }
        InterferenceGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn jain_equal_weighted_rates_is_one() {
        // fig1 weights N_i+1 = (2,3,2): θ ∝ (1/2, 1/3, 1/2) gives equal θ̃
        let g = fig1();
        let j = jain_weighted(&g, &RateVector::new(vec![0.5, 1.0 / 3.0, 0.5])).unwrap();
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jain_single_user_is_one_over_n() {
        let g = fig1();
        let j = jain_weighted(&g, &RateVector::new(vec![0.0, 0.5, 0.0])).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jain_all_zero_is_error() {
        assert!(matches!(
            jain_weighted(&fig1(), &RateVector::new(vec![0.0; 3])),
            Err(MetricsError::AllZeroThroughput)
        ));
    }

    #[test]
    fn jain_scale_invariant() {
        let g = fig5();
        let theta = RateVector::new(vec![
            0.1, 0.08, 0.12, 0.11, 0.09, 0.1, 0.14, 0.13, 0.1, 0.12,
        ]);
        let a = jain_weighted(&g, &theta).unwrap();
        let b = jain_weighted(&g, &theta.scaled(0.37)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn net_throughput_values() {
        let theta = RateVector::new(vec![0.1246]);
        let net = net_throughput(&theta, 2000, 25);
        assert!((net[0] - 0.1230).abs() < 5e-5);
        assert_eq!(net_throughput(&theta, 2000, 0)[0], 0.1246);
        assert_eq!(
            net_throughput(&RateVector::new(vec![0.2]), 2000, 1000)[0],
            0.1
        );
    }

    fn flat_trace(rims: Vec<Vec<f64>>, leaders: Vec<usize>) -> RunTrace {
        let records = rims
            .into_iter()
            .enumerate()
            .map(|(t, rim)| IterationRecord {
                iteration: t,
                seconds: t as f64 * 0.01,
                q: vec![0.2; rim.len()],
                theta: vec![0.1; rim.len()],
                rim,
                leaders: leaders.clone(),
                events: vec![],
            })
            .collect();
        RunTrace {
            n: 2,
            records,
            outcome: RunOutcome::Converged { at: 0 },
        }
    }

    #[test]
    fn convergence_time_steady_from_start() {
        let trace = flat_trace(vec![vec![2.0, 1.0]; 6], vec![1]);
        assert_eq!(convergence_time(&trace, 0.05, 5), Some(0));
    }

    #[test]
    fn convergence_time_after_transient() {
        let mut rims = vec![vec![3.0, 1.0]; 4];
        rims.extend(vec![vec![2.01, 1.0]; 6]);
        let trace = flat_trace(rims, vec![1]);
        assert_eq!(convergence_time(&trace, 0.05, 5), Some(4));
        assert_eq!(convergence_time(&trace, 0.001, 5), None);
    }

    #[test]
    fn fully_connected_d_pareto_is_one() {
        let g = full(4);
        let theta = throughput(&g, &MapVector::uniform(4, 0.25));
        let d = distance_to_pareto(&g, &theta).unwrap();
        assert!((d - 1.0).abs() <= 1e-3, "d = {d}");
    }

    #[test]
    fn infeasible_theta_is_error() {
        let g = full(2);
        assert!(matches!(
            distance_to_pareto(&g, &RateVector::new(vec![0.9, 0.9])),
            Err(MetricsError::InfeasibleThroughput)
        ));
    }

    #[test]
    fn d_pareto_scaling_identity() {
        let g = fig1();
        let theta = RateVector::new(vec![0.2, 0.1, 0.2]);
        let d1 = distance_to_pareto(&g, &theta).unwrap();
        let d2 = distance_to_pareto(&g, &theta.scaled(0.5)).unwrap();
        assert!((d2 - 2.0 * d1).abs() <= 5e-4, "{d2} vs 2*{d1}");
    }

    #[test]
    fn fig5_report_matches_reference_row() {
        let g = fig5();
        let trace = run_ideal(&g, &RunConfig::default());
        // the ideal run ends with leaders {1, 8}
        let mut partition = elect_leaders(&g);
        partition.set_leader(7);
        partition.set_follower(6, 7);
        let report = MetricsReport::compute(&g, &partition, &trace, 2000, 25, 0.05, 5).unwrap();
        assert!(
            (report.total_theta - 1.246).abs() <= 0.01,
            "{}",
            report.total_theta
        );
        assert!((report.jain - 0.9921).abs() <= 0.002, "{}", report.jain);
        assert!(
            (report.d_pareto - 1.02).abs() <= 0.01,
            "{}",
            report.d_pareto
        );
        assert!((report.mean_theta_net - 0.1230).abs() <= 0.001);
        assert_eq!(report.leader_count, 2);
        assert_eq!(report.max_tree_height, 2);
        let text = report.to_text();
        assert!(text.contains("jain = 0.99"));
        assert!(report.to_json().contains("\"d_pareto\""));
    }
}
