//! Per-iteration run traces and their CSV form.

use std::fmt;

/// Protocol events recorded against the iteration at which they happened.
/// User IDs in events are 1-based, matching the external formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    /// Leader election (or re-election) assigned roles.
    Election,
    /// A follower declared leadership and took over from an adjacent leader.
    Handover { from: usize, to: usize },
    /// A user declared leadership with no adjacent leader to displace.
    NewLeader { id: usize },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Election => write!(f, "election"),
            TraceEvent::Handover { from, to } => write!(f, "handover:{from}->{to}"),
            TraceEvent::NewLeader { id } => write!(f, "new-leader:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// All leader RIMs stayed within tolerance of 2 for a full window,
    /// first satisfied at the given iteration.
    Converged { at: usize },
    /// The iteration cap was hit without a sustained in-tolerance window.
    MaxIterations,
}

/// State snapshot after one iteration (one frame in packet mode).
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seconds: f64,
    pub q: Vec<f64>,
    pub rim: Vec<f64>,
    /// Eq.-(1) throughput in ideal mode; empirical per-frame success rate
    /// in packet mode.
    pub theta: Vec<f64>,
    /// Current leader set, 1-based, ascending.
    pub leaders: Vec<usize>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub n: usize,
    pub records: Vec<IterationRecord>,
    pub outcome: RunOutcome,
}

impl RunTrace {
    pub fn final_q(&self) -> &[f64] {
        &self.records.last().expect("empty trace").q
    }

    pub fn final_rim(&self) -> &[f64] {
        &self.records.last().expect("empty trace").rim
    }

    pub fn final_leaders(&self) -> &[usize] {
        &self.records.last().expect("empty trace").leaders
    }

    pub fn events(&self) -> impl Iterator<Item = (usize, &TraceEvent)> {
        self.records
            .iter()
            .flat_map(|r| r.events.iter().map(move |e| (r.iteration, e)))
    }

    /// One CSV row per iteration:
    /// `iteration,seconds,q_1..q_N,r_1..r_N,theta_1..theta_N,leaders,events`
    /// where `leaders` and `events` are `|`-separated lists (1-based IDs).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,seconds");
        for prefix in ["q", "r", "theta"] {
            for i in 1..=self.n {
                out.push_str(&format!(",{prefix}_{i}"));
            }
        }
        out.push_str(",leaders,events\n");
        for rec in &self.records {
            out.push_str(&format!("{},{:.6}", rec.iteration, rec.seconds));
            for series in [&rec.q, &rec.rim, &rec.theta] {
                for v in series.iter() {
                    out.push_str(&format!(",{v:.9}"));
                }
            }
            let leaders: Vec<String> = rec.leaders.iter().map(|l| l.to_string()).collect();
            let events: Vec<String> = rec.events.iter().map(|e| e.to_string()).collect();
            out.push_str(&format!(",{},{}\n", leaders.join("|"), events.join("|")));
        }
        out
    }
}
