use basil::client::{reconcile_views, retry_delay, ClientConfig, ReadQuorum, Reconcile, ViewStrategy};
use basil::types::{Params, View};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn read_quorum_sizes() {
    // (f, f+1 replies, fan-out, 2f+1 replies, fan-out)
    for (f, a, fa, b, fb) in [(1, 2, 3, 3, 4), (2, 3, 5, 5, 7), (3, 4, 7, 7, 10)] {
        let p = Params::new(f, 1);
        assert_eq!((ReadQuorum::FPlus1.replies(p), ReadQuorum::FPlus1.fan_out(p)), (a, fa));
        assert_eq!((ReadQuorum::TwoFPlus1.replies(p), ReadQuorum::TwoFPlus1.fan_out(p)), (b, fb));
    }
}

#[test]
fn timers_scale_with_delay_bound() {
    let c = ClientConfig::new(Params::new(1, 1), 7);
    assert_eq!((c.tau_fast, c.tau_dep, c.stage_timeout, c.read_timeout), (28, 70, 56, 28));
    assert_eq!((c.backoff_base, c.backoff_cap), (10, 1000));
}

fn payload(views: &[View], s: ViewStrategy, timed_out: bool) -> Option<Vec<View>> {
    match reconcile_views(views, s, Params::new(1, 1), timed_out) {
        Reconcile::Invoke(ix) => Some(ix.into_iter().map(|i| views[i]).collect()),
        Reconcile::Wait => None,
    }
}

#[test]
fn matching_drops_an_unsupported_outlier() {
    // A lone high report cannot come from a correct replica.
    assert_eq!(payload(&[2, 2, 2, 2, 9], ViewStrategy::Matching, false), None);
    assert_eq!(payload(&[2, 2, 2, 2, 9], ViewStrategy::Matching, true), Some(vec![2, 2, 2, 2]));
    assert_eq!(payload(&[2, 2, 2, 2, 9], ViewStrategy::Subsumption, false), Some(vec![2, 2, 2, 2, 9]));
}

proptest! {
    #[test]
    fn backoff_within_jitter_band(base in 1u64..50, attempt in 0u32..12, cap in 1u64..5000, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = retry_delay(base, attempt, cap, &mut rng);
        let nominal = base as f64 * 2f64.powi(attempt as i32);
        prop_assert!(d <= cap);
        prop_assert!(d == cap || (d as f64 >= (0.5 * nominal).floor() && d as f64 <= (1.5 * nominal).ceil()));
    }

    #[test]
    fn matching_payload_is_uniform(views in prop::collection::vec(0u64..5, 0..7), timed_out in any::<bool>()) {
        if let Some(p) = payload(&views, ViewStrategy::Matching, timed_out) {
            prop_assert!(!p.is_empty());
            prop_assert!(p.iter().all(|v| *v == p[0]));
            prop_assert!(p.len() >= 2, "a payload needs at least f + 1 reports");
        }
    }

    #[test]
    fn subsumption_sends_everything_once_enough(views in prop::collection::vec(0u64..5, 0..7), timed_out in any::<bool>()) {
        match payload(&views, ViewStrategy::Subsumption, timed_out) {
            Some(p) => {
                prop_assert_eq!(&p, &views);
                prop_assert!(timed_out || views.len() >= 4);
            }
            None => prop_assert!(!timed_out && views.len() < 4),
        }
    }
}
