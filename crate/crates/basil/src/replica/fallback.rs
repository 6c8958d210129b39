//! View arithmetic for the per-transaction fallback.

use crate::types::{Params, View};

/// Result of applying the view-update rules to a set of reported views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewUpdate {
    /// Target from rule R1: `v + 1` for the largest `v` with `3f + 1` support.
    pub r1: Option<View>,
    /// Target from rule R2: the largest `v` above the current view with `f + 1` support.
    pub r2: Option<View>,
}

/// Support counting with subsumption: a report of `v` supports every `v' <= v`.
pub fn view_rules(current: View, reported: &[View], params: Params) -> ViewUpdate {
    let mut sorted = reported.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    // The k-th largest report is the largest view with at least k supporters.
    let kth = |k: usize| sorted.get(k - 1).copied();
    let r1 = kth(params.commit_quorum()).map(|v| v + 1);
    let r2 = kth(params.abort_quorum()).filter(|v| *v > current);
    ViewUpdate { r1, r2 }
}

/// The view a replica moves to on an InvokeFB.
///
/// `r1_next_allowed` gates an R1 step from a view `>= 1` to the next view;
/// replicas only take that step once their timeout for the current view ran out.
/// An empty report set moves view 0 to view 1 when `no_proof_view1` is on.
pub fn next_view(
    current: View,
    reported: &[View],
    params: Params,
    no_proof_view1: bool,
    r1_next_allowed: bool,
) -> View {
    if reported.is_empty() {
        return if no_proof_view1 && current == 0 { 1 } else { current };
    }
    let ViewUpdate { r1, r2 } = view_rules(current, reported, params);
    let r1 = r1.filter(|t| !(current >= 1 && *t == current + 1 && !r1_next_allowed));
    current.max(r1.unwrap_or(0)).max(r2.unwrap_or(0))
}

/// Time a replica stays in view `v >= 1` before an R1 step to `v + 1` is allowed.
pub fn view_timeout(base: u64, v: View) -> u64 {
    let exp = v.saturating_sub(1).min(20) as u32;
    base.saturating_mul(1u64 << exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: Params = Params::new(1, 1);

    #[test]
    fn r1_on_four_zeros() {
        assert_eq!(next_view(0, &[0, 0, 0, 0], P, false, true), 1);
    }

    #[test]
    fn r2_catches_up() {
        assert_eq!(next_view(0, &[3, 3], P, false, true), 3);
    }

    #[test]
    fn subsumption_counts_higher_views() {
        assert_eq!(next_view(3, &[5, 4], P, false, true), 4);
    }

    #[test]
    fn no_rule_no_change() {
        assert_eq!(next_view(2, &[2, 1, 0], P, false, true), 2);
    }

    #[test]
    fn r1_gated_until_timeout() {
        assert_eq!(next_view(1, &[1, 1, 1, 1], P, false, false), 1);
        assert_eq!(next_view(1, &[1, 1, 1, 1], P, false, true), 2);
        // catching up past the next view is never gated
        assert_eq!(next_view(1, &[2, 2, 2, 2], P, false, false), 3);
    }

    #[test]
    fn empty_reports() {
        assert_eq!(next_view(0, &[], P, true, true), 1);
        assert_eq!(next_view(0, &[], P, false, true), 0);
        assert_eq!(next_view(2, &[], P, true, true), 2);
    }
}
