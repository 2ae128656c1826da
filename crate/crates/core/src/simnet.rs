//! Slot-level packet simulator.
//!
//! Everything the protocol layer in [`crate::sale`] consumes — neighbor
//! MAPs, node-degree estimates, leadership declarations — travels here in
//! three header subfields (8-bit ND, 16-bit fixed-point MAP, 1-bit
//! declare) of packets sent on a half-duplex collision channel. One SALE
//! iteration corresponds to one frame of `l_f` slots; node degrees are
//! re-estimated every `l_nd` slots and the election comparison is rerun
//! whenever the estimates a user acted on have changed.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sale::{drive_ideal, NeighborInfo, RunConfig, SaleState, TreePartition, RIM_SETPOINT};
use crate::topology::InterferenceGraph;
use crate::trace::{IterationRecord, RunOutcome, RunTrace, TraceEvent};

/// Largest value of the 16-bit fixed-point MAP subfield.
const MAP_SCALE: f64 = 65535.0;

/// Frame structure and channel parameters.
#[derive(Debug, Clone)]
pub struct FrameConfig {
    /// Slots per frame (one SALE iteration).
    pub l_f: usize,
    /// Slots per ND-estimation window; must be a multiple of `l_f`.
    pub l_nd: usize,
    /// Packet size in bits.
    pub l_s: usize,
    /// Header subfield bits added by the scheme (8 + 16 + 1).
    pub header_overhead_bits: usize,
    /// Channel bit rate in bits/s.
    pub r_b: f64,
    pub seed: u64,
    pub reception: ReceptionModel,
}

impl Default for FrameConfig {
    fn default() -> FrameConfig {
        FrameConfig {
            l_f: 100,
            l_nd: 1000,
            l_s: 2000,
            header_overhead_bits: PacketHeader::OVERHEAD_BITS,
            r_b: 20e6,
            seed: 1,
            reception: ReceptionModel::Collision,
        }
    }
}

impl FrameConfig {
    /// Slot duration in seconds (packet airtime l_s / r_b).
    pub fn slot_seconds(&self) -> f64 {
        self.l_s as f64 / self.r_b
    }

    pub fn frame_seconds(&self) -> f64 {
        self.l_f as f64 * self.slot_seconds()
    }

    fn validate(&self) {
        assert!(self.l_f >= 1 && self.l_nd >= 1);
        assert_eq!(self.l_nd % self.l_f, 0, "l_nd must be a multiple of l_f");
        assert!(self.header_overhead_bits < self.l_s);
        assert!(self.r_b > 0.0);
    }
}

/// How headers reach neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceptionModel {
    /// A header from i reaches a listening neighbor j only if i is the
    /// sole transmitting neighbor of j in that slot.
    Collision,
    /// Degenerate loss model: every neighbor hears every value exactly,
    /// once per frame, with no quantization. Reproduces the idealized run
    /// bit for bit.
    Perfect,
}

/// The three SALE subfields carried in every packet header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub sender: usize,
    /// Sender's current node-degree estimate, saturating at 255.
    pub nd: u8,
    /// MAP as unsigned 16-bit fixed point: round(q·65535).
    pub map_q16: u16,
    pub declare: bool,
}

impl PacketHeader {
    /// Subfield widths: 8 (ND) + 16 (MAP) + 1 (declare).
    pub const OVERHEAD_BITS: usize = 25;

    pub fn encode(sender: usize, nd: usize, map: f64, declare: bool) -> PacketHeader {
        assert!((0.0..=1.0).contains(&map));
        PacketHeader {
            sender,
            nd: nd.min(255) as u8,
            map_q16: (map * MAP_SCALE).round() as u16,
            declare,
        }
    }

    /// Decoded MAP; quantization error ≤ 2⁻¹⁶.
    pub fn map(&self) -> f64 {
        self.map_q16 as f64 / MAP_SCALE
    }
}

/// Transmissions and receptions of one slot.
#[derive(Debug, Clone)]
pub struct SlotOutcome {
    pub transmitted: Vec<bool>,
    /// Headers successfully received by each (listening) user.
    pub received: Vec<Vec<PacketHeader>>,
    /// Throughput success: the user transmitted and no neighbor did.
    pub success: Vec<bool>,
}

/// One slot on the collision channel: each user transmits independently
/// with its MAP; a listener receives exactly the headers of neighbors that
/// transmitted alone among its neighbors.
pub fn simulate_slot(
    g: &InterferenceGraph,
    q: &[f64],
    headers: &[PacketHeader],
    rng: &mut impl Rng,
) -> SlotOutcome {
    let n = g.n();
    assert_eq!(q.len(), n);
    assert_eq!(headers.len(), n);
    let transmitted: Vec<bool> = q.iter().map(|&p| rng.gen::<f64>() < p).collect();
    let mut received = vec![Vec::new(); n];
    let mut success = vec![false; n];
    for i in 0..n {
        let tx_neighbors: Vec<usize> = g
            .neighbors(i)
            .iter()
            .copied()
            .filter(|&j| transmitted[j])
            .collect();
        if transmitted[i] {
            success[i] = tx_neighbors.is_empty();
        } else if let [lone] = tx_neighbors[..] {
            received[i].push(headers[lone]);
        }
    }
    SlotOutcome {
        transmitted,
        received,
        success,
    }
}

/// Node-degree estimate from the distinct sender IDs heard so far.
pub fn estimate_nd(heard: &BTreeSet<usize>) -> usize {
    heard.len()
}

/// Last-heard subfields per neighbor; stale values persist until a fresh
/// header from that neighbor arrives.
#[derive(Debug, Clone, Copy)]
struct HeardEntry {
    map: f64,
    nd: usize,
    declare: bool,
}

/// Packet-mode SALE run. Users transmit with their MAPs from the first
/// slot; after the first ND window every user has estimated its degree and
/// the election runs on the estimates. From the following frame onward the
/// usual per-frame SALE update is driven by whatever headers were heard.
pub fn run_frames(g: &InterferenceGraph, cfg: &FrameConfig, run_cfg: &RunConfig) -> RunTrace {
    run_frames_full(g, cfg, run_cfg).0
}

/// As [`run_frames`], but also returns the final tree partition (for
/// leader-count / tree-height reporting).
pub fn run_frames_full(
    g: &InterferenceGraph,
    cfg: &FrameConfig,
    run_cfg: &RunConfig,
) -> (RunTrace, TreePartition) {
    cfg.validate();
    if cfg.reception == ReceptionModel::Perfect {
        let mut ideal_cfg = run_cfg.clone();
        ideal_cfg.seconds_per_iteration = cfg.frame_seconds();
        let mut state = SaleState::new(g, &ideal_cfg);
        let trace = drive_ideal(&mut state, &ideal_cfg);
        return (trace, state.partition().clone());
    }

    let n = g.n();
    let frames_per_window = cfg.l_nd / cfg.l_f;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SaleState::new_unelected(g, run_cfg);
    let mut heard_ids: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut knowledge: Vec<BTreeMap<usize, HeardEntry>> = vec![BTreeMap::new(); n];
    // (own estimate, heard neighbor estimates) each user last elected on
    let mut election_inputs: Vec<Option<(usize, BTreeMap<usize, usize>)>> = vec![None; n];
    let mut elected = false;

    let mut records = Vec::new();
    let mut outcome = RunOutcome::MaxIterations;
    let mut in_tol_run = 0usize;

    for frame in 0..run_cfg.max_iter {
        let q_frame = state.q().to_vec();
        let mut successes = vec![0usize; n];
        for _ in 0..cfg.l_f {
            let headers: Vec<PacketHeader> = (0..n)
                .map(|i| {
                    PacketHeader::encode(
                        i,
                        estimate_nd(&heard_ids[i]),
                        state.q()[i],
                        state.declare()[i],
                    )
                })
                .collect();
            let slot = simulate_slot(g, state.q(), &headers, &mut rng);
            for i in 0..n {
                if slot.success[i] {
                    successes[i] += 1;
                }
                for h in &slot.received[i] {
                    heard_ids[i].insert(h.sender);
                    knowledge[i].insert(
                        h.sender,
                        HeardEntry {
                            map: h.map(),
                            nd: h.nd as usize,
                            declare: h.declare,
                        },
                    );
                }
            }
        }

        let mut events = Vec::new();

        // ND window boundary: refresh estimates, rerun the election
        // comparison for users whose inputs changed.
        if (frame + 1) % frames_per_window == 0 {
            for i in 0..n {
                state.nd[i] = estimate_nd(&heard_ids[i]);
            }
            let mut any = false;
            for i in 0..n {
                let nd_heard: BTreeMap<usize, usize> =
                    knowledge[i].iter().map(|(&j, e)| (j, e.nd)).collect();
                let inputs = (state.nd[i], nd_heard);
                if election_inputs[i].as_ref() != Some(&inputs) {
                    state.assign_role(i, &inputs.1);
                    election_inputs[i] = Some(inputs);
                    any = true;
                }
            }
            if any {
                events.push(TraceEvent::Election);
            }
            elected = true;
        }

        // SALE iteration on last-heard information (from the frame after
        // the first election onward).
        if elected && !events.iter().any(|e| matches!(e, TraceEvent::Election)) {
            let views: Vec<BTreeMap<usize, NeighborInfo>> = (0..n)
                .map(|i| {
                    knowledge[i]
                        .iter()
                        .map(|(&j, e)| {
                            (
                                j,
                                NeighborInfo {
                                    map: e.map,
                                    declared: e.declare,
                                },
                            )
                        })
                        .collect()
                })
                .collect();
            events.extend(state.apply_frame(&views));
        }

        let theta: Vec<f64> = successes
            .iter()
            .map(|&s| s as f64 / cfg.l_f as f64)
            .collect();
        let leaders: Vec<usize> = state.partition().leaders().iter().map(|l| l + 1).collect();
        records.push(IterationRecord {
            iteration: frame,
            seconds: frame as f64 * cfg.frame_seconds(),
            q: q_frame,
            rim: state.rim().to_vec(),
            theta,
            leaders,
            events,
        });

        let settled = elected
            && !state.partition().leaders().is_empty()
            && state
                .partition()
                .leaders()
                .iter()
                .all(|&l| (state.rim()[l] - RIM_SETPOINT).abs() <= run_cfg.tol);
        in_tol_run = if settled { in_tol_run + 1 } else { 0 };
        if in_tol_run >= run_cfg.window {
            outcome = RunOutcome::Converged {
                at: frame + 1 - run_cfg.window,
            };
            break;
        }
    }

    (
        RunTrace {
            n,
            records,
            outcome,
        },
        state.partition().clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sale::run_ideal;
    use crate::topology::{fig1, fig3, fig5, InterferenceGraph};

    fn packet_cfg(seed: u64) -> (FrameConfig, RunConfig) {
        let cfg = FrameConfig {
            seed,
            ..FrameConfig::default()
        };
        let run_cfg = RunConfig {
            tol: 0.01,
            window: 5,
            max_iter: 300,
            ..RunConfig::default()
        };
        (cfg, run_cfg)
    }

    #[test]
    fn header_round_trip_error_bounded() {
        for k in 0..=1000 {
            let q = k as f64 / 1000.0;
            let h = PacketHeader::encode(3, 300, q, false);
            assert!((h.map() - q).abs() <= 1.0 / 65536.0);
            assert_eq!(h.nd, 255);
        }
    }

    #[test]
    fn lone_transmitter_always_succeeds_and_is_heard() {
        let g = fig1();
        let q = [0.0, 1.0, 0.0];
        let headers: Vec<_> = (0..3)
            .map(|i| PacketHeader::encode(i, 2, q[i], false))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let slot = simulate_slot(&g, &q, &headers, &mut rng);
            assert!(slot.success[1]);
            assert_eq!(slot.received[0].len(), 1);
            assert_eq!(slot.received[0][0].sender, 1);
            assert_eq!(slot.received[2][0].sender, 1);
            assert!(slot.received[1].is_empty());
        }
    }

    #[test]
    fn certain_collision_between_adjacent_users() {
        let g = InterferenceGraph::from_edges(2, &[(1, 2)]).unwrap();
        let q = [1.0, 1.0];
        let headers: Vec<_> = (0..2)
            .map(|i| PacketHeader::encode(i, 1, 1.0, false))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let slot = simulate_slot(&g, &q, &headers, &mut rng);
            assert!(!slot.success[0] && !slot.success[1]);
            assert!(slot.received[0].is_empty() && slot.received[1].is_empty());
        }
    }

    #[test]
    fn half_duplex_invariant() {
        let g = fig3();
        let q = vec![0.5; 9];
        let headers: Vec<_> = (0..9)
            .map(|i| PacketHeader::encode(i, 0, 0.5, false))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let slot = simulate_slot(&g, &q, &headers, &mut rng);
            for i in 0..9 {
                assert!(!(slot.transmitted[i] && !slot.received[i].is_empty()));
            }
        }
    }

    #[test]
    fn chain_monte_carlo_matches_eq1() {
        let g = fig1();
        let q = vec![0.5; 3];
        let headers: Vec<_> = (0..3)
            .map(|i| PacketHeader::encode(i, 2, 0.5, false))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let slots = 100_000usize;
        let mut hits = [0usize; 3];
        for _ in 0..slots {
            let slot = simulate_slot(&g, &q, &headers, &mut rng);
            for i in 0..3 {
                if slot.success[i] {
                    hits[i] += 1;
                }
            }
        }
        for (i, &expect) in [0.25, 0.125, 0.25].iter().enumerate() {
            let rate = hits[i] as f64 / slots as f64;
            let sigma = (expect * (1.0 - expect) / slots as f64).sqrt();
            assert!(
                (rate - expect).abs() <= 3.0 * sigma,
                "user {i}: {rate} vs {expect}"
            );
        }
    }

    #[test]
    fn estimate_nd_counts_distinct_ids() {
        assert_eq!(estimate_nd(&BTreeSet::new()), 0);
        assert_eq!(estimate_nd(&BTreeSet::from([3, 1, 3, 7])), 3);
    }

    #[test]
    fn perfect_reception_equals_ideal_run() {
        let g = fig5();
        let run_cfg = RunConfig::default();
        let cfg = FrameConfig {
            reception: ReceptionModel::Perfect,
            ..FrameConfig::default()
        };
        let packet = run_frames(&g, &cfg, &run_cfg);
        let ideal = run_ideal(&g, &run_cfg);
        assert_eq!(packet.outcome, ideal.outcome);
        assert_eq!(packet.records.len(), ideal.records.len());
        for (a, b) in packet.records.iter().zip(&ideal.records) {
            assert_eq!(a.q, b.q);
            assert_eq!(a.rim, b.rim);
            assert_eq!(a.leaders, b.leaders);
        }
    }

    #[test]
    fn fig3_packet_matches_ideal_steady_state() {
        let g = fig3();
        let (cfg, run_cfg) = packet_cfg(7);
        let trace = run_frames(&g, &cfg, &run_cfg);
        assert!(matches!(trace.outcome, RunOutcome::Converged { .. }));
        assert_eq!(trace.final_leaders(), &[1, 7]);
        let ideal = run_ideal(&g, &RunConfig::default());
        for i in 0..9 {
            assert!(
                (trace.final_q()[i] - ideal.final_q()[i]).abs() <= 0.005,
                "user {}: {} vs {}",
                i + 1,
                trace.final_q()[i],
                ideal.final_q()[i]
            );
        }
    }

    #[test]
    fn fig5_packet_handover_and_steady_state() {
        let g = fig5();
        let (cfg, run_cfg) = packet_cfg(1);
        let trace = run_frames(&g, &cfg, &run_cfg);
        assert!(matches!(trace.outcome, RunOutcome::Converged { .. }));
        assert_eq!(trace.final_leaders(), &[1, 8]);
        assert!(trace
            .events()
            .any(|(_, e)| matches!(e, TraceEvent::Handover { from: 7, to: 8 })));
        let r = trace.final_rim();
        assert!((r[7] - 2.0).abs() <= 0.05, "R_8 = {}", r[7]);
        assert!((r[6] - 1.91).abs() <= 0.05, "R_7 = {}", r[6]);
        for i in 6..10 {
            assert!((trace.final_q()[i] - 0.25).abs() <= 0.005);
        }
    }

    #[test]
    fn deterministic_replay() {
        let g = fig5();
        let (cfg, run_cfg) = packet_cfg(3);
        let a = run_frames(&g, &cfg, &run_cfg);
        let b = run_frames(&g, &cfg, &run_cfg);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn election_completes_after_first_nd_window() {
        let g = fig3();
        let (cfg, run_cfg) = packet_cfg(2);
        let trace = run_frames(&g, &cfg, &run_cfg);
        let frames_per_window = cfg.l_nd / cfg.l_f;
        for rec in &trace.records {
            if rec.iteration < frames_per_window - 1 {
                assert!(rec.leaders.is_empty());
                assert!(rec.events.is_empty());
            }
        }
        let election_frame = trace
            .events()
            .find(|(_, e)| matches!(e, TraceEvent::Election))
            .map(|(t, _)| t);
        assert_eq!(election_frame, Some(frames_per_window - 1));
    }
}
