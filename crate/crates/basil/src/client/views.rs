//! Choosing which signed view reports to put in an InvokeFB.

use serde::{Deserialize, Serialize};

use crate::types::{Params, View};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewStrategy {
    /// Send every report; replicas count a view as support for all lower views.
    #[default]
    Subsumption,
    /// Send only identical views.
    Matching,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reconcile {
    /// Indices of the reports to include.
    Invoke(Vec<usize>),
    /// Collect more reports first.
    Wait,
}

/// Decide what to send given the collected `views` (one per replica).
///
/// `timed_out` means the client gave up on hearing from more replicas.
pub fn reconcile_views(views: &[View], strategy: ViewStrategy, params: Params, timed_out: bool) -> Reconcile {
    let enough = views.len() >= params.log_quorum() || timed_out;
    match strategy {
        ViewStrategy::Subsumption => {
            if enough || views.len() >= params.commit_quorum() {
                Reconcile::Invoke((0..views.len()).collect())
            } else {
                Reconcile::Wait
            }
        }
        ViewStrategy::Matching => matching(views, params, timed_out),
    }
}

fn matching(views: &[View], params: Params, timed_out: bool) -> Reconcile {
    let f = params.f();
    let mut kept: Vec<usize> = (0..views.len()).collect();
    let mut discarded = false;
    // A maximal view without f other reports at most one below it cannot come
    // from a correct replica.
    while let Some(&top) = kept.iter().max_by_key(|&&i| views[i]) {
        let v = views[top];
        let support = kept.iter().filter(|&&i| i != top && views[i] + 1 >= v).count();
        if support >= f {
            break;
        }
        kept.retain(|&i| i != top);
        discarded = true;
    }
    if discarded && !timed_out {
        return Reconcile::Wait;
    }
    let group = |v: View| -> Vec<usize> { kept.iter().copied().filter(|&i| views[i] == v).collect() };
    let mut distinct: Vec<View> = kept.iter().map(|&i| views[i]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let r1 = distinct.iter().rev().copied().find(|&v| group(v).len() >= params.commit_quorum());
    let r2 = distinct.iter().rev().copied().find(|&v| group(v).len() >= params.abort_quorum());
    let enough = kept.len() >= params.log_quorum() || timed_out;
    match (r1, r2) {
        (Some(a), Some(b)) if a + 1 >= b => Reconcile::Invoke(group(a)),
        (Some(a), None) => Reconcile::Invoke(group(a)),
        (_, Some(b)) if enough => Reconcile::Invoke(group(b)),
        _ => Reconcile::Wait,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: Params = Params::new(1, 1);

    fn payload(views: &[View], s: ViewStrategy) -> Option<Vec<View>> {
        match reconcile_views(views, s, P, false) {
            Reconcile::Invoke(ix) => Some(ix.into_iter().map(|i| views[i]).collect()),
            Reconcile::Wait => None,
        }
    }

    #[test]
    fn matching_r2_pair() {
        assert_eq!(payload(&[3, 3, 0, 0, 0], ViewStrategy::Matching), Some(vec![3, 3]));
    }

    #[test]
    fn matching_discards_lonely_max() {
        assert_eq!(payload(&[9, 0, 0, 0, 0], ViewStrategy::Matching), None);
        let after_timeout = reconcile_views(&[9, 0, 0, 0, 0], ViewStrategy::Matching, P, true);
        assert_eq!(after_timeout, Reconcile::Invoke(vec![1, 2, 3, 4]));
    }

    #[test]
    fn four_zeros_either_strategy() {
        assert_eq!(payload(&[0, 0, 0, 0], ViewStrategy::Matching), Some(vec![0, 0, 0, 0]));
        assert_eq!(payload(&[0, 0, 0, 0], ViewStrategy::Subsumption), Some(vec![0, 0, 0, 0]));
    }

    #[test]
    fn subsumption_waits_for_quorum() {
        assert_eq!(payload(&[2, 1, 0], ViewStrategy::Subsumption), None);
        assert_eq!(payload(&[2, 1, 0, 0, 5], ViewStrategy::Subsumption), Some(vec![2, 1, 0, 0, 5]));
    }
}
