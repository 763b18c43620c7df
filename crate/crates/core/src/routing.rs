//! Per-date routing set from online scores.
//!
//! The admission threshold blends two quantiles of recently observed
//! scores: an unweighted ("global") one and one weighted by the current
//! kernel weights ("local"). The local share grows with the effective
//! sample size of the weights and is capped.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use crate::stats::weighted_quantile;

use crate::error::{Error, Result};
use crate::scoring::ScoreState;
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub alpha: f64,
    pub eta_cap: f64,
    pub n0: f64,
    pub window: usize,
    /// Pooled observations required before the threshold is used.
    pub min_observations: usize,
    pub cap_calm: usize,
    pub cap_stressed: usize,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            eta_cap: 0.80,
            n0: 63.0,
            window: 252,
            min_observations: 20,
            cap_calm: 1,
            cap_stressed: 2,
        }
    }
}

impl ThresholdParams {
    pub fn cap(&self, stressed: bool) -> usize {
        if stressed {
            self.cap_stressed
        } else {
            self.cap_calm
        }
    }
}

/// Scores observed on one past forecast date together with that date's
/// kernel weight for the current date.
#[derive(Debug, Clone)]
pub struct ScoreSnapshot {
    pub weight: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau_global: f64,
    pub tau_local: f64,
    pub eta: f64,
    pub tau: f64,
    /// Too little history: `tau` is `+inf` and models are retained by rank.
    pub warmup: bool,
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Local share `min(eta_cap, n_eff / (n_eff + n0))`.
pub fn shrinkage(n_eff: f64, params: &ThresholdParams) -> f64 {
    if n_eff <= 0.0 {
        return 0.0;
    }
    (n_eff / (n_eff + params.n0)).min(params.eta_cap)
}

pub fn routing_threshold(history: &[ScoreSnapshot], params: &ThresholdParams) -> Result<Threshold> {
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for snap in history {
        for &s in &snap.scores {
            values.push(s);
            weights.push(snap.weight);
        }
    }
    if values.len() < params.min_observations.max(1) {
        return Ok(Threshold {
            tau_global: f64::INFINITY,
            tau_local: f64::INFINITY,
            eta: 0.0,
            tau: f64::INFINITY,
            warmup: true,
        });
    }
    let q = 1.0 - params.alpha;
    let tau_global = quantile(&values, q)?;
    let date_weights: Vec<f64> = history
        .iter()
        .filter(|s| !s.scores.is_empty())
        .map(|s| s.weight)
        .collect();
    let (tau_local, eta) = if date_weights.iter().sum::<f64>() > 0.0 {
        let local = weighted_quantile(&values, &weights, q)?;
        (
            local,
            shrinkage(effective_sample_size(&date_weights), params),
        )
    } else {
        (tau_global, 0.0)
    };
    Ok(Threshold {
        tau_global,
        tau_local,
        eta,
        tau: (1.0 - eta) * tau_global + eta * tau_local,
        warmup: false,
    })
}

/// Active models ordered best first: scored models by ascending score,
/// then unscored models; ties broken by name.
pub fn rank_models(scores: &ScoreState, active: &[String]) -> Vec<String> {
    let mut ranked: Vec<(Option<f64>, &String)> =
        active.iter().map(|m| (scores.get(m), m)).collect();
    ranked.sort_by(|a, b| match (a.0, b.0) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.1.cmp(b.1)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.1.cmp(b.1),
    });
    ranked.into_iter().map(|(_, m)| m.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSet {
    pub members: Vec<String>,
    pub fallback_used: bool,
}

pub fn routing_set(
    scores: &ScoreState,
    active: &[String],
    tau: f64,
    stressed: bool,
    params: &ThresholdParams,
) -> Result<RoutingSet> {
    if active.is_empty() {
        return Err(Error::Protocol("routing with no active models".into()));
    }
    let ranked = rank_models(scores, active);
    let mut members: Vec<String> = ranked
        .iter()
        .filter(|m| scores.get(m).is_some_and(|s| s <= tau))
        .cloned()
        .collect();
    members.truncate(params.cap(stressed));
    if members.is_empty() {
        return Ok(RoutingSet {
            members: vec![ranked[0].clone()],
            fallback_used: true,
        });
    }
    Ok(RoutingSet {
        members,
        fallback_used: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecisionCore {
    pub date: NaiveDate,
    pub tau_global: f64,
    pub tau_local: f64,
    pub eta: f64,
    pub tau: f64,
    pub warmup: bool,
    pub routing_set: Vec<String>,
    pub stressed: bool,
    pub fallback_used: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn scores(pairs: &[(&str, Option<f64>)]) -> ScoreState {
        ScoreState {
            scores: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect::<BTreeMap<_, _>>(),
        }
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn snapshots(
        n: usize,
        weight: impl Fn(usize) -> f64,
        score: impl Fn(usize) -> f64,
    ) -> Vec<ScoreSnapshot> {
        (0..n)
            .map(|i| ScoreSnapshot {
                weight: weight(i),
                scores: vec![score(i)],
            })
            .collect()
    }

    #[test]
    fn threshold_filter_in_calm_state() {
        let s = scores(&[("A", Some(0.1)), ("B", Some(0.5))]);
        let r = routing_set(
            &s,
            &names(&["A", "B"]),
            0.3,
            false,
            &ThresholdParams::default(),
        )
        .unwrap();
        assert_eq!(r.members, names(&["A"]));
        assert!(!r.fallback_used);
    }

    #[test]
    fn stressed_cap_keeps_two() {
        let s = scores(&[("A", Some(0.1)), ("B", Some(0.2)), ("C", Some(0.25))]);
        let r = routing_set(
            &s,
            &names(&["A", "B", "C"]),
            0.3,
            true,
            &ThresholdParams::default(),
        )
        .unwrap();
        assert_eq!(r.members, names(&["A", "B"]));
    }

    #[test]
    fn empty_set_falls_back_to_best_rank() {
        let s = scores(&[("A", Some(0.9)), ("B", Some(0.8))]);
        let r = routing_set(
            &s,
            &names(&["A", "B"]),
            0.3,
            false,
            &ThresholdParams::default(),
        )
        .unwrap();
        assert_eq!(r.members, names(&["B"]));
        assert!(r.fallback_used);
    }

    #[test]
    fn unscored_models_rank_last_by_name() {
        let s = scores(&[("Z", Some(0.4)), ("B", None), ("A", None), ("C", Some(0.4))]);
        assert_eq!(
            rank_models(&s, &names(&["A", "B", "C", "Z"])),
            names(&["C", "Z", "A", "B"])
        );
        // Unscored models are never admitted by the threshold itself.
        let r = routing_set(
            &s,
            &names(&["A", "B"]),
            f64::INFINITY,
            true,
            &ThresholdParams::default(),
        )
        .unwrap();
        assert_eq!(r.members, names(&["A"]));
        assert!(r.fallback_used);
    }

    #[test]
    fn no_active_models_is_protocol_error() {
        assert!(routing_set(
            &ScoreState::default(),
            &[],
            1.0,
            false,
            &ThresholdParams::default()
        )
        .is_err());
    }

    #[test]
    fn degenerate_pool_gives_constant_threshold() {
        let hist = snapshots(50, |i| 1.0 / (1.0 + i as f64), |_| 0.7);
        let t = routing_threshold(&hist, &ThresholdParams::default()).unwrap();
        assert_eq!((t.tau_global, t.tau_local, t.tau), (0.7, 0.7, 0.7));
    }

    #[test]
    fn concentrated_weights_give_small_eta() {
        let hist = snapshots(252, |i| if i == 3 { 1.0 } else { 1e-300 }, |i| i as f64);
        let t = routing_threshold(&hist, &ThresholdParams::default()).unwrap();
        assert!((t.eta - 1.0 / 64.0).abs() < 1e-6, "{}", t.eta);
        assert!((t.tau - t.tau_global).abs() <= 0.02 * (t.tau_global - t.tau_local).abs() + 1e-12);
    }

    #[test]
    fn uniform_weights_hit_the_cap() {
        let hist = snapshots(252, |_| 1.0, |i| i as f64);
        let t = routing_threshold(&hist, &ThresholdParams::default()).unwrap();
        assert_eq!(t.eta, 0.8);
    }

    #[test]
    fn short_history_is_warmup() {
        let hist = snapshots(19, |_| 1.0, |i| i as f64);
        let t = routing_threshold(&hist, &ThresholdParams::default()).unwrap();
        assert!(t.warmup && t.tau.is_infinite());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tau_between_quantiles_and_within_pool(
                raw in prop::collection::vec((0.0f64..1.0, 1e-6f64..1.0), 20..120),
            ) {
                let hist: Vec<ScoreSnapshot> = raw.iter()
                    .map(|(s, w)| ScoreSnapshot { weight: *w, scores: vec![*s] }).collect();
                let t = routing_threshold(&hist, &ThresholdParams::default()).unwrap();
                let lo = raw.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
                let hi = raw.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(t.tau_global >= lo && t.tau_global <= hi);
                prop_assert!(t.tau_local >= lo && t.tau_local <= hi);
                let (a, b) = (t.tau_global.min(t.tau_local), t.tau_global.max(t.tau_local));
                prop_assert!(t.tau >= a - 1e-15 && t.tau <= b + 1e-15);
                prop_assert!((0.0..=0.8).contains(&t.eta));
            }

            #[test]
            fn eta_monotone_in_neff(a in 0.0f64..1e4, b in 0.0f64..1e4) {
                let p = ThresholdParams::default();
                let (lo, hi) = (a.min(b), a.max(b));
                prop_assert!(shrinkage(lo, &p) <= shrinkage(hi, &p));
            }

            #[test]
            fn raising_tau_never_drops_candidates(
                vals in prop::collection::vec(0.0f64..1.0, 1..6),
                t1 in 0.0f64..1.0, dt in 0.0f64..1.0,
            ) {
                let names: Vec<String> = (0..vals.len()).map(|i| format!("m{i}")).collect();
                let s = ScoreState { scores: names.iter().cloned().zip(vals.iter().map(|v| Some(*v))).collect() };
                let wide = ThresholdParams { cap_calm: 99, cap_stressed: 99, ..Default::default() };
                let a = routing_set(&s, &names, t1, false, &wide).unwrap();
                let b = routing_set(&s, &names, t1 + dt, false, &wide).unwrap();
                if !a.fallback_used {
                    for m in &a.members {
                        prop_assert!(b.members.contains(m));
                    }
                }
                for cap in [1usize, 2] {
                    let p = ThresholdParams { cap_calm: cap, ..Default::default() };
                    let r = routing_set(&s, &names, t1, false, &p).unwrap();
                    prop_assert!(!r.members.is_empty() && r.members.len() <= cap);
                }
            }
        }
    }
}
