//! Randomized invariants of the building blocks.

use proptest::prelude::*;

use lifereward_core::autodiff::{ParamSet, Tensor};
use lifereward_core::baselines::VisitCounts;
use lifereward_core::env::{Action, ActionMode};
use lifereward_core::harness::Checkpoint;
use lifereward_core::meta::{average_gradients, episodic_returns, lifetime_td_targets};

fn param_set(values: &[f64], split: usize) -> ParamSet {
    let split = split.min(values.len());
    let mut p = ParamSet::new();
    p.insert("a", Tensor::vector(values[..split].to_vec()));
    p.insert("b", Tensor::vector(values[split..].to_vec()));
    p
}

proptest! {
    #[test]
    fn count_bonus_strictly_decreases(key in any::<u64>(), beta in 0.01f64..10.0, visits in 2usize..200) {
        let mut counts = VisitCounts::default();
        let bonuses: Vec<f64> = (0..visits).map(|_| counts.bonus(key, beta)).collect();
        prop_assert_eq!(bonuses[0], beta);
        prop_assert!(bonuses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn permutation_is_an_involution(i in 0usize..4) {
        let a = Action::BASE[i];
        prop_assert_eq!(a.permuted().permuted(), a);
        prop_assert_ne!(a.permuted(), a);
        prop_assert_eq!(ActionMode::Permuted.index_of(ActionMode::Permuted.action(i)), Some(i));
    }

    #[test]
    fn checkpoint_round_trips(
        eta in prop::collection::vec(-1e6f64..1e6, 1..40),
        phi in prop::collection::vec(-1e6f64..1e6, 1..40),
        split in 0usize..40,
        config in "[ -~\n]{0,80}",
    ) {
        let ck = Checkpoint {
            eta: param_set(&eta, split),
            phi: param_set(&phi, split),
            config,
            rng_summary: "chacha8".into(),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn averaging_ignores_worker_order(
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 1..9),
        rotate in 0usize..9,
    ) {
        let sets: Vec<ParamSet> = grads.iter().map(|g| param_set(g, 2)).collect();
        let mut shuffled = sets.clone();
        shuffled.rotate_left(rotate % sets.len());
        shuffled.reverse();
        let a = average_gradients(&sets);
        let b = average_gradients(&shuffled);
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn returns_do_not_leak_across_episodes(
        rewards in prop::collection::vec(-1f64..1.0, 2..30),
        cut in 1usize..29,
        later in -5f64..5.0,
    ) {
        let cut = cut.min(rewards.len() - 1);
        let mut dones = vec![false; rewards.len()];
        dones[cut - 1] = true;
        let mut changed = rewards.clone();
        for r in &mut changed[cut..] {
            *r += later;
        }
        let a = episodic_returns(&rewards, &dones, 0.9);
        let b = episodic_returns(&changed, &dones, 0.9);
        prop_assert_eq!(&a[..cut], &b[..cut]);
    }

    #[test]
    fn finished_lifetimes_ignore_the_bootstrap(
        rewards in prop::collection::vec(-1f64..1.0, 1..30),
        v in -10f64..10.0,
    ) {
        prop_assert_eq!(
            lifetime_td_targets(&rewards, 0.99, v, true),
            lifetime_td_targets(&rewards, 0.99, 0.0, false)
        );
    }
}
