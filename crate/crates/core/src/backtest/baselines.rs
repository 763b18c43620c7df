//! Benchmark selectors that pick one existing forecast stream per date.

use std::collections::BTreeMap;

use tracing::debug;

use crate::specialists::{GARCH_T, GRU, HAR_RV};

/// Models ordered by mean loss over the supplied window (ascending, name
/// tiebreak). `window[i]` maps the models active on a past date to their
/// loss; each model is averaged over the dates on which it was active.
pub fn rank_by_mean_loss(window: &[&BTreeMap<String, f64>]) -> Vec<String> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for row in window {
        for (m, l) in row.iter() {
            let e = sums.entry(m.as_str()).or_insert((0.0, 0));
            e.0 += l;
            e.1 += 1;
        }
    }
    let mut means: Vec<(&str, f64)> = sums
        .into_iter()
        .map(|(m, (s, n))| (m, s / n as f64))
        .collect();
    means.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    means.into_iter().map(|(m, _)| m.to_string()).collect()
}

/// First ranked model that is active; otherwise `default` if active;
/// otherwise the alphabetically first active model.
pub fn first_active(ranking: &[String], active: &[String], default: &str) -> Option<String> {
    if let Some(m) = ranking.iter().find(|m| active.contains(m)) {
        return Some(m.clone());
    }
    if active.iter().any(|m| m == default) {
        return Some(default.to_string());
    }
    active.iter().min().cloned()
}

/// Rolling-best choice from the trailing loss window.
pub fn rolling_best(window: &[&BTreeMap<String, f64>], active: &[String]) -> Option<String> {
    let ranking = rank_by_mean_loss(window);
    let pick = first_active(&ranking, active, HAR_RV);
    if !ranking.is_empty() && pick.as_ref() != ranking.first() {
        debug!(?pick, best = ?ranking.first(), "rolling-best choice inactive; using next-ranked");
    }
    pick
}

/// Static-best selector: follows rolling-best for the first
/// `selection_window` forecast dates, then freezes the ranking of that
/// window for the rest of the sample.
#[derive(Debug, Clone)]
pub struct StaticBest {
    selection_window: usize,
    frozen: Option<Vec<String>>,
}

impl StaticBest {
    pub fn new(selection_window: usize) -> Self {
        Self {
            selection_window,
            frozen: None,
        }
    }

    pub fn frozen(&self) -> Option<&[String]> {
        self.frozen.as_deref()
    }

    /// Choice at forecast index `i`. `window` must hold the losses of
    /// forecast indices `[i - len, i)`; at `i == selection_window` it
    /// covers the full selection period.
    pub fn select(
        &mut self,
        i: usize,
        window: &[&BTreeMap<String, f64>],
        active: &[String],
    ) -> Option<String> {
        if self.frozen.is_none() && i >= self.selection_window && self.selection_window > 0 {
            let ranking = rank_by_mean_loss(window);
            debug!(best = ?ranking.first(), "static-best selection frozen");
            self.frozen = Some(ranking);
        }
        match &self.frozen {
            Some(ranking) => first_active(ranking, active, HAR_RV),
            None => rolling_best(window, active),
        }
    }
}

/// Stream named by the VIX rule: GARCH-t above the threshold, GRU
/// otherwise.
pub fn vix_switch(vix: f64, threshold: f64) -> &'static str {
    if vix > threshold {
        GARCH_T
    } else {
        GRU
    }
}

/// VIX rule choice restricted to active models: the other rule model if
/// the named one is inactive, then `fallback`.
pub fn vix_switch_active(vix: f64, threshold: f64, active: &[String], fallback: &str) -> String {
    let primary = vix_switch(vix, threshold);
    let other = if primary == GARCH_T { GRU } else { GARCH_T };
    for m in [primary, other] {
        if active.iter().any(|a| a == m) {
            if m != primary {
                debug!(primary, used = m, "VIX-switch stream inactive");
            }
            return m.to_string();
        }
    }
    fallback.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rolling_best_examples() {
        let a = row(&[("A", 0.5)]);
        assert_eq!(rolling_best(&[&a], &names(&["A"])).unwrap(), "A");

        let r1 = row(&[("A", 0.5), ("B", 0.2)]);
        let r2 = row(&[("A", 0.3), ("B", 0.4)]);
        assert_eq!(rolling_best(&[&r1, &r2], &names(&["A", "B"])).unwrap(), "B");

        let tie = row(&[("B", 0.3), ("A", 0.3)]);
        assert_eq!(rolling_best(&[&tie], &names(&["A", "B"])).unwrap(), "A");
    }

    #[test]
    fn no_history_designates_har() {
        assert_eq!(
            rolling_best(&[], &names(&["GARCH-t", "HAR-RV"])).unwrap(),
            "HAR-RV"
        );
        assert_eq!(rolling_best(&[], &names(&["Z", "B"])).unwrap(), "B");
    }

    #[test]
    fn inactive_choice_falls_to_next_ranked() {
        let r = row(&[("A", 0.1), ("B", 0.2), ("C", 0.3)]);
        assert_eq!(rolling_best(&[&r], &names(&["B", "C"])).unwrap(), "B");
    }

    #[test]
    fn static_best_freezes() {
        let mut s = StaticBest::new(2);
        let good_a = row(&[("A", 0.2), ("B", 0.5)]);
        let good_b = row(&[("A", 0.9), ("B", 0.1)]);
        let act = names(&["A", "B"]);
        assert_eq!(s.select(0, &[], &act).unwrap(), "A");
        assert_eq!(s.select(1, &[&good_a], &act).unwrap(), "A");
        assert_eq!(s.select(2, &[&good_a, &good_a], &act).unwrap(), "A");
        for i in 3..10 {
            assert_eq!(s.select(i, &[&good_b, &good_b], &act).unwrap(), "A");
        }
        assert_eq!(s.frozen().unwrap(), names(&["A", "B"]).as_slice());
    }

    #[test]
    fn static_best_without_freeze_mirrors_rolling() {
        let mut s = StaticBest::new(252);
        let r = row(&[("A", 0.9), ("B", 0.1)]);
        let act = names(&["A", "B"]);
        for i in 1..100 {
            assert_eq!(s.select(i, &[&r], &act), rolling_best(&[&r], &act));
        }
        assert!(s.frozen().is_none());
    }

    #[test]
    fn vix_rule() {
        assert_eq!(vix_switch(35.0, 20.0), "GARCH-t");
        assert_eq!(vix_switch(12.0, 20.0), "GRU");
        assert_eq!(vix_switch(20.0, 20.0), "GRU");
        let act = names(&["GRU", "HAR-RV"]);
        assert_eq!(vix_switch_active(35.0, 20.0, &act, "HAR-RV"), "GRU");
        assert_eq!(
            vix_switch_active(35.0, 20.0, &names(&["HAR-RV"]), "HAR-RV"),
            "HAR-RV"
        );
    }
}
