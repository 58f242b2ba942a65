use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use operlab::payload::{decode, encode, payload_bits, Accounting, Payload, MAX_BUNDLE};
use operlab::simnet::{DelayRule, DriftRule};
use operlab::types::{ProcessId, Quorum, Slot, Value, ValueWidth, View};

fn width() -> impl Strategy<Value = ValueWidth> {
    (1u32..=64).prop_map(|b| ValueWidth::new(b).unwrap())
}

fn slot(w: ValueWidth) -> impl Strategy<Value = Slot> {
    prop_oneof![Just(Slot::Bot), any::<u64>().prop_map(move |r| Slot::Val(w.clamp(r)))]
}

fn leaf(w: ValueWidth) -> impl Strategy<Value = Payload> {
    prop_oneof![
        slot(w).prop_map(Payload::Init),
        (1u8..=5, slot(w)).prop_map(|(k, s)| Payload::Echo(k, s)),
        (1u64..u64::MAX).prop_map(|v| Payload::StartView(View::new(v).unwrap())),
        any::<u64>().prop_map(move |r| Payload::Finish(w.clamp(r))),
        any::<u64>().prop_map(move |r| Payload::HalfReport(w.clamp(r))),
    ]
}

fn bundle_item(w: ValueWidth) -> impl Strategy<Value = Payload> {
    prop_oneof![
        (1u8..=5, slot(w)).prop_map(|(k, s)| Payload::Echo(k, s)),
        any::<u64>().prop_map(move |r| Payload::HalfReport(w.clamp(r))),
    ]
}

fn payload(w: ValueWidth) -> impl Strategy<Value = Payload> {
    prop_oneof![
        3 => leaf(w),
        1 => (any::<bool>(), prop::collection::vec(bundle_item(w), 0..12))
            .prop_map(|(parity, inner)| Payload::SyncRound { parity, inner }),
    ]
}

fn width_and_payload() -> impl Strategy<Value = (ValueWidth, Payload)> {
    width().prop_flat_map(|w| (Just(w), payload(w)))
}

proptest! {
    #[test]
    fn codec_round_trips((w, p) in width_and_payload()) {
        prop_assert!(p.well_formed(w));
        let bits = encode(&p, w);
        prop_assert_eq!(decode(&bits, w), Ok(p));
    }

    #[test]
    fn encoded_length_is_the_full_bit_count((w, p) in width_and_payload()) {
        prop_assert_eq!(encode(&p, w).len() as u64, payload_bits(&p, w, Accounting::Full));
        prop_assert!(payload_bits(&p, w, Accounting::Payload) <= payload_bits(&p, w, Accounting::Full));
    }

    #[test]
    fn map_values_into_the_width_stays_well_formed((w, p) in width_and_payload(), salt in any::<u64>()) {
        let mapped = p.map_values(&mut |v| w.clamp(v.0 ^ salt));
        prop_assert!(mapped.well_formed(w));
        prop_assert_eq!(mapped.kind(), p.kind());
    }

    #[test]
    fn oversized_bundles_are_malformed(n in (MAX_BUNDLE + 1)..(MAX_BUNDLE + 4)) {
        let p = Payload::SyncRound { parity: false, inner: vec![Payload::HalfReport(Value(0)); n] };
        prop_assert!(!p.well_formed(ValueWidth::DEFAULT));
    }

    #[test]
    fn delay_rules_stay_within_the_bound(
        now in 0u64..10_000,
        gst in 0u64..10_000,
        delta in 1u64..100,
        ticks in 0u64..1_000,
        seed in any::<u64>(),
        rule in 0usize..4,
    ) {
        let rule = match rule {
            0 => DelayRule::Max,
            1 => DelayRule::Uniform,
            2 => DelayRule::Fixed { ticks },
            _ => DelayRule::Split { slow: [ProcessId(1)].into() },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let at = rule.deliver_at(now, ProcessId(0), ProcessId(1), gst, delta, &mut rng);
        prop_assert!(at >= now && at <= now.max(gst) + delta);
    }

    #[test]
    fn drift_is_exact_after_gst_and_bounded_before(
        now in 0u64..10_000,
        gst in 0u64..10_000,
        after in 1u64..500,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for rule in [DriftRule::None, DriftRule::Uniform, DriftRule::Late, DriftRule::Early] {
            let at = rule.fire_at(now, after, gst, &mut rng);
            prop_assert!(at > now);
            if now >= gst {
                prop_assert_eq!(at, now + after);
            } else {
                prop_assert!(at <= gst + after);
            }
        }
    }

    #[test]
    fn quorums_intersect_in_a_correct_process(n in 1usize..200) {
        let q = Quorum::maximal(n);
        prop_assert!(q.resilient());
        // Two sets of n − t overlap in at least t + 1 members.
        prop_assert!(2 * q.all_correct() >= n + q.weak());
        // An n − t set and a 2t+1 set share at least t + 1.
        prop_assert!(q.all_correct() + q.strong() >= n + q.weak());
    }
}
