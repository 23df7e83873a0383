use serde::{Deserialize, Serialize};

use super::{ConfigSummary, RunRecord};

/// Non-dominated subset under (minimize cost, maximize quality), sorted by
/// cost ascending. An item is dominated when another has cost `<=` and
/// quality `>=` with at least one strict. Exact ties are all kept.
/// Items with a NaN key are dropped.
pub fn pareto_frontier_by<T: Clone>(
    items: &[T],
    cost: impl Fn(&T) -> f64,
    quality: impl Fn(&T) -> f64,
) -> Vec<T> {
    let mut keyed: Vec<(f64, f64, usize)> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (cost(it), quality(it), i))
        .filter(|(c, q, _)| !c.is_nan() && !q.is_nan())
        .collect();
    // cost ascending, then quality descending: anything that dominates an
    // entry sorts before it.
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));

    let mut front: Vec<(f64, f64, usize)> = Vec::new();
    for (c, q, i) in keyed {
        let dominated = front
            .iter()
            .any(|&(fc, fq, _)| fc <= c && fq >= q && (fc < c || fq > q));
        if !dominated {
            front.push((c, q, i));
        }
    }
    front.into_iter().map(|(_, _, i)| items[i].clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKey {
    DrafterNfe,
    VerifierNfe,
    #[default]
    WeightedCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityKey {
    #[default]
    ExactMatch,
    GtLoglik,
    /// Negated so that larger is better.
    NegVerifierNll,
}

impl CostKey {
    pub fn of_record(&self, r: &RunRecord) -> f64 {
        match self {
            CostKey::DrafterNfe => r.cost.drafter_nfe as f64,
            CostKey::VerifierNfe => r.cost.verifier_nfe as f64,
            CostKey::WeightedCost => r.cost.weighted_cost,
        }
    }

    pub fn of_summary(&self, s: &ConfigSummary) -> f64 {
        match self {
            CostKey::DrafterNfe => s.drafter_nfe,
            CostKey::VerifierNfe => s.verifier_nfe,
            CostKey::WeightedCost => s.weighted_cost,
        }
    }
}

impl QualityKey {
    /// Livelocked records have no quality and score NaN (excluded).
    pub fn of_record(&self, r: &RunRecord) -> f64 {
        match (self, &r.quality) {
            (_, None) => f64::NAN,
            (QualityKey::ExactMatch, Some(q)) => f64::from(u8::from(q.exact_match)),
            (QualityKey::GtLoglik, Some(q)) => q.gt_loglik,
            (QualityKey::NegVerifierNll, Some(q)) => -q.verifier_nll,
        }
    }

    pub fn of_summary(&self, s: &ConfigSummary) -> f64 {
        match self {
            QualityKey::ExactMatch => s.exact_match,
            QualityKey::GtLoglik => s.gt_loglik,
            QualityKey::NegVerifierNll => -s.verifier_nll,
        }
    }
}

pub fn pareto_frontier(records: &[RunRecord], cost: CostKey, quality: QualityKey) -> Vec<RunRecord> {
    pareto_frontier_by(records, |r| cost.of_record(r), |r| quality.of_record(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        pareto_frontier_by(points, |p| p.0, |p| p.1)
    }

    #[test]
    fn examples() {
        assert_eq!(front(&[(1.0, 0.5)]), vec![(1.0, 0.5)]);
        assert_eq!(front(&[(2.0, 0.4), (1.0, 0.5)]), vec![(1.0, 0.5)]);
        assert_eq!(
            front(&[(1.0, 0.3), (2.0, 0.5), (3.0, 0.5)]),
            vec![(1.0, 0.3), (2.0, 0.5)]
        );
        assert_eq!(front(&[(1.0, 0.5), (1.0, 0.5)]), vec![(1.0, 0.5), (1.0, 0.5)]);
        assert!(front(&[]).is_empty());
    }

    fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
        a.0 <= b.0 && a.1 >= b.1 && (a.0 < b.0 || a.1 > b.1)
    }

    proptest! {
        #[test]
        fn frontier_is_exactly_the_undominated_set(
            pts in prop::collection::vec((0u8..6, 0u8..6), 0..20)
        ) {
            let pts: Vec<(f64, f64)> = pts.into_iter().map(|(c, q)| (c as f64, q as f64)).collect();
            let f = front(&pts);
            for a in &f {
                for b in &f {
                    prop_assert!(!dominates(*a, *b));
                }
            }
            for p in &pts {
                let kept = f.contains(p);
                let beaten = pts.iter().any(|o| dominates(*o, *p));
                prop_assert_eq!(kept, !beaten);
            }
            prop_assert!(f.windows(2).all(|w| w[0].0 <= w[1].0));
        }
    }
}
