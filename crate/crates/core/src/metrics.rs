//! Spatial reuse, fairness and ineffective-communication indices, their
//! lifetime utilities, throughput and the combined network utility.

use serde::{Deserialize, Serialize};

use crate::world::{Scenario, SlotOutcome};

/// Weights of the network utility: spatial reuse, fairness, ineffective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            mu: 1.0,
        }
    }
}

impl UtilityWeights {
    pub fn is_valid(&self) -> bool {
        let w = [self.alpha, self.beta, self.mu];
        w.iter().all(|v| v.is_finite() && *v >= 0.0) && w.iter().any(|v| *v > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub outcomes: Vec<SlotOutcome>,
    /// δ_N, never larger than `outcomes.len()`.
    pub lifetime_slots: u32,
    pub scenario: Scenario,
    pub t_slot_s: f64,
    pub t_tran_s: f64,
}

impl EpisodeTrace {
    /// Slots inside the network lifetime.
    pub fn lifetime_outcomes(&self) -> &[SlotOutcome] {
        let n = (self.lifetime_slots as usize).min(self.outcomes.len());
        &self.outcomes[..n]
    }
}

/// Successful receptions over intended receptions of all transmitters.
pub fn spatial_reuse_index(outcome: &SlotOutcome) -> f64 {
    let intended: usize = outcome.transmitters.iter().map(|t| t.receivers.len()).sum();
    if intended == 0 {
        return 0.0;
    }
    outcome.successes() as f64 / intended as f64
}

/// Jain's index `(Σx)² / (n·Σx²)`, defined as 0 when every `x` is 0.
pub fn jain_index(x: &[f64]) -> f64 {
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if x.is_empty() || sq == 0.0 {
        return 0.0;
    }
    sum * sum / (x.len() as f64 * sq)
}

/// Per-transmitter successful deliveries summed over `outcomes`.
pub fn delivery_counts(outcomes: &[SlotOutcome]) -> Vec<f64> {
    let Some(first) = outcomes.first() else {
        return Vec::new();
    };
    let mut counts = vec![0.0; first.transmitters.len()];
    for o in outcomes {
        for (c, d) in counts.iter_mut().zip(o.deliveries()) {
            *c += d as f64;
        }
    }
    counts
}

/// Jain fairness over the last `h` slots of `outcomes`.
pub fn fairness_index(outcomes: &[SlotOutcome], h: usize) -> f64 {
    let h = h.max(1).min(outcomes.len());
    jain_index(&delivery_counts(&outcomes[outcomes.len() - h..]))
}

/// `Σ(re − s) / Σ s` over scheduled links; 0 when nothing was scheduled.
pub fn ineffective_index(outcome: &SlotOutcome) -> f64 {
    let scheduled = outcome.links.len();
    if scheduled == 0 {
        return 0.0;
    }
    (outcome.successes() as f64 - scheduled as f64) / scheduled as f64
}

/// Unicast: delivered bits per second. Broadcast: successful receptions per
/// second. Both over the network lifetime.
pub fn throughput(trace: &EpisodeTrace) -> f64 {
    if trace.lifetime_slots == 0 || trace.t_slot_s <= 0.0 {
        return 0.0;
    }
    let slots = trace.lifetime_outcomes();
    let total: f64 = match trace.scenario {
        Scenario::Unicast => slots
            .iter()
            .flat_map(|o| &o.links)
            .map(|l| l.rate_bps * trace.t_tran_s)
            .sum(),
        Scenario::Broadcast => slots.iter().map(|o| o.successes() as f64).sum(),
    };
    total / (trace.lifetime_slots as f64 * trace.t_slot_s)
}

/// Pooled `Σ re / Σ s` over the lifetime; 0 when nothing was sent.
pub fn delivery_ratio(trace: &EpisodeTrace) -> f64 {
    let slots = trace.lifetime_outcomes();
    let sent: usize = slots.iter().map(|o| o.links.len()).sum();
    if sent == 0 {
        return 0.0;
    }
    slots.iter().map(|o| o.successes()).sum::<usize>() as f64 / sent as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    pub spatial: f64,
    pub fairness: f64,
    pub ineffective: f64,
    pub total: f64,
}

/// Lifetime utility `α·U_spa + β·U_fair + µ·U_ief`.
pub fn network_utility(trace: &EpisodeTrace, w: &UtilityWeights) -> UtilityBreakdown {
    let slots = trace.lifetime_outcomes();
    if slots.is_empty() {
        return UtilityBreakdown {
            spatial: 0.0,
            fairness: 0.0,
            ineffective: 0.0,
            total: 0.0,
        };
    }
    let n = slots.len() as f64;
    let spatial = slots.iter().map(spatial_reuse_index).sum::<f64>() / n;
    let ineffective = slots.iter().map(ineffective_index).sum::<f64>() / n;
    let fairness = jain_index(&delivery_counts(slots));
    UtilityBreakdown {
        spatial,
        fairness,
        ineffective,
        total: w.alpha * spatial + w.beta * fairness + w.mu * ineffective,
    }
}

/// Per-episode metrics. Field names are stable; CSV columns use them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub utility: f64,
    pub throughput: f64,
    pub fairness: f64,
    pub delivery_ratio: f64,
    pub spatial_reuse: f64,
    /// Mean successful receptions per slot.
    pub concurrent_successes: f64,
    pub ineffective: f64,
    pub lifetime_slots: u32,
    pub episode_reward: f64,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 9] = [
        "utility",
        "throughput",
        "fairness",
        "delivery_ratio",
        "spatial_reuse",
        "concurrent_successes",
        "ineffective",
        "lifetime_slots",
        "episode_reward",
    ];

    pub fn from_trace(trace: &EpisodeTrace, w: &UtilityWeights, episode_reward: f64) -> Self {
        let u = network_utility(trace, w);
        let slots = trace.lifetime_outcomes();
        let concurrent = if slots.is_empty() {
            0.0
        } else {
            slots.iter().map(|o| o.successes() as f64).sum::<f64>() / slots.len() as f64
        };
        Self {
            utility: u.total,
            throughput: throughput(trace),
            fairness: u.fairness,
            delivery_ratio: delivery_ratio(trace),
            spatial_reuse: u.spatial,
            concurrent_successes: concurrent,
            ineffective: u.ineffective,
            lifetime_slots: trace.lifetime_slots,
            episode_reward,
        }
    }

    pub fn values(&self) -> [f64; 9] {
        [
            self.utility,
            self.throughput,
            self.fairness,
            self.delivery_ratio,
            self.spatial_reuse,
            self.concurrent_successes,
            self.ineffective,
            self.lifetime_slots as f64,
            self.episode_reward,
        ]
    }

    /// Field-wise mean over episodes.
    pub fn mean(reports: &[MetricsReport]) -> Option<AggregateReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 9];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let m = acc.map(|a| a / n);
        Some(AggregateReport {
            episodes: reports.len(),
            utility: m[0],
            throughput: m[1],
            fairness: m[2],
            delivery_ratio: m[3],
            spatial_reuse: m[4],
            concurrent_successes: m[5],
            ineffective: m[6],
            lifetime_slots: m[7],
            episode_reward: m[8],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub episodes: usize,
    pub utility: f64,
    pub throughput: f64,
    pub fairness: f64,
    pub delivery_ratio: f64,
    pub spatial_reuse: f64,
    pub concurrent_successes: f64,
    pub ineffective: f64,
    pub lifetime_slots: f64,
    pub episode_reward: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{LinkRecord, TxRecord};

    /// Unicast slot: transmitter `i` addresses receiver `100 + i`.
    /// `state[i]`: None = idle, Some(ok) = scheduled with outcome `ok`.
    fn slot(t: u32, state: &[Option<bool>]) -> SlotOutcome {
        let transmitters = (0..state.len())
            .map(|i| TxRecord {
                id: i,
                power_w: if state[i].is_some() { 8.0 } else { 0.0 },
                receivers: vec![100 + i],
            })
            .collect();
        let links = state
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.map(|ok| LinkRecord {
                    tx: i,
                    rx: 100 + i,
                    power_w: 8.0,
                    sinr: if ok { 20.0 } else { 1.0 },
                    received: ok,
                    rate_bps: if ok { 1000.0 } else { 0.0 },
                })
            })
            .collect();
        SlotOutcome {
            slot: t,
            transmitters,
            links,
        }
    }

    fn trace(slots: Vec<SlotOutcome>) -> EpisodeTrace {
        EpisodeTrace {
            lifetime_slots: slots.len() as u32,
            outcomes: slots,
            scenario: Scenario::Unicast,
            t_slot_s: 8.475,
            t_tran_s: 3.0,
        }
    }

    #[test]
    fn spatial_reuse_cases() {
        assert_eq!(spatial_reuse_index(&slot(1, &[Some(true); 5])), 1.0);
        assert_eq!(spatial_reuse_index(&slot(1, &[None; 5])), 0.0);
        let s = slot(1, &[Some(true), Some(true), Some(true), Some(false), None]);
        assert!((spatial_reuse_index(&s) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn jain_cases() {
        assert_eq!(jain_index(&[4.0; 5]), 1.0);
        assert!((jain_index(&[1.0, 0.0, 0.0, 0.0, 0.0]) - 0.2).abs() < 1e-15);
        assert!((jain_index(&[2.0, 1.0, 1.0, 0.0, 0.0]) - 16.0 / 30.0).abs() < 1e-15);
        assert_eq!(jain_index(&[0.0; 5]), 0.0);
    }

    #[test]
    fn fairness_window() {
        let slots = vec![
            slot(1, &[Some(true), None, None]),
            slot(2, &[None, Some(true), None]),
            slot(3, &[None, None, Some(true)]),
        ];
        assert!((fairness_index(&slots, 3) - 1.0).abs() < 1e-15);
        assert!((fairness_index(&slots, 1) - 1.0 / 3.0).abs() < 1e-15);
        // window larger than history uses everything available
        assert!((fairness_index(&slots, 10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ineffective_cases() {
        assert_eq!(ineffective_index(&slot(1, &[Some(false); 3])), -1.0);
        assert_eq!(ineffective_index(&slot(1, &[Some(true); 3])), 0.0);
        let s = slot(1, &[Some(true), Some(false), Some(true)]);
        assert!((ineffective_index(&s) + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ineffective_index(&slot(1, &[None; 3])), 0.0);
    }

    #[test]
    fn throughput_constant_rate_pair() {
        let tr = trace((1..=10).map(|t| slot(t, &[Some(true)])).collect());
        assert!((throughput(&tr) - 1000.0 * 3.0 / 8.475).abs() < 1e-9);
        let idle = trace((1..=10).map(|t| slot(t, &[None])).collect());
        assert_eq!(throughput(&idle), 0.0);
    }

    #[test]
    fn utility_extremes() {
        let w = UtilityWeights::default();
        let perfect = trace((1..=4).map(|t| slot(t, &[Some(true); 3])).collect());
        assert!((network_utility(&perfect, &w).total - 2.0).abs() < 1e-15);
        let failing = trace((1..=4).map(|t| slot(t, &[Some(false); 3])).collect());
        assert!((network_utility(&failing, &w).total + 1.0).abs() < 1e-15);
    }

    #[test]
    fn utility_three_slot_manual() {
        // slot 1: 2 of 3 scheduled, 1 success
        // slot 2: all scheduled, 2 successes
        // slot 3: 1 scheduled, success
        let tr = trace(vec![
            slot(1, &[Some(true), Some(false), None]),
            slot(2, &[Some(true), Some(true), Some(false)]),
            slot(3, &[None, None, Some(true)]),
        ]);
        let w = UtilityWeights {
            alpha: 1.0,
            beta: 0.5,
            mu: 2.0,
        };
        let spa = (1.0 / 3.0 + 2.0 / 3.0 + 1.0 / 3.0) / 3.0;
        // deliveries per transmitter: (2, 1, 1) → 16 / (3 · 6)
        let fair = 16.0 / 18.0;
        let ief = (-0.5 + -1.0 / 3.0 + 0.0) / 3.0;
        let u = network_utility(&tr, &w);
        assert!((u.spatial - spa).abs() < 1e-15);
        assert!((u.fairness - fair).abs() < 1e-15);
        assert!((u.ineffective - ief).abs() < 1e-15);
        assert!((u.total - (spa + 0.5 * fair + 2.0 * ief)).abs() < 1e-14);
    }

    #[test]
    fn lifetime_truncates_metrics() {
        let mut tr = trace(vec![slot(1, &[Some(true)]), slot(2, &[Some(false)])]);
        tr.lifetime_slots = 1;
        assert_eq!(delivery_ratio(&tr), 1.0);
        tr.lifetime_slots = 2;
        assert_eq!(delivery_ratio(&tr), 0.5);
        tr.lifetime_slots = 0;
        assert_eq!(throughput(&tr), 0.0);
        assert_eq!(network_utility(&tr, &UtilityWeights::default()).total, 0.0);
    }

    #[test]
    fn report_mean() {
        let w = UtilityWeights::default();
        let a = MetricsReport::from_trace(&trace(vec![slot(1, &[Some(true)])]), &w, 1.0);
        let b = MetricsReport::from_trace(&trace(vec![slot(1, &[Some(false)])]), &w, -1.0);
        let m = MetricsReport::mean(&[a, b]).unwrap();
        assert_eq!(m.episodes, 2);
        assert!((m.delivery_ratio - 0.5).abs() < 1e-15);
        assert_eq!(m.episode_reward, 0.0);
        assert!(MetricsReport::mean(&[]).is_none());
    }
}
