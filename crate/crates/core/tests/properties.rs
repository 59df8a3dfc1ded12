//! Property tests over the coding and broadcast invariants.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadsim_core::bats::{self, BatsParams, SourceBlock};
use roadsim_core::ecc::{self, EccBlockParams};
use roadsim_core::galois::{Gf256, Matrix};
use roadsim_core::i2v::{
    assign_channels, simulate_drive, BroadcastSession, DriveParams, VehicleTrace, CHANNEL_COUNT,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Channel plans stay collision-free within a cluster for any
    /// satisfiable interference pattern.
    #[test]
    fn channel_plans_are_collision_free(
        n_nodes in 1usize..=23,
        control in 0u8..CHANNEL_COUNT,
        blocked_bits in proptest::collection::vec(0u32..(1 << 24), 0..23),
    ) {
        let cluster: Vec<usize> = (0..n_nodes).collect();
        let mut blocked: BTreeMap<usize, BTreeSet<u8>> = BTreeMap::new();
        for (node, bits) in blocked_bits.iter().enumerate().take(n_nodes) {
            // keep each node satisfiable: at most 8 blocked channels
            let set: BTreeSet<u8> = (0..CHANNEL_COUNT).filter(|ch| bits >> ch & 1 == 1).take(8).collect();
            blocked.insert(node, set);
        }
        let plan = assign_channels(&cluster, &blocked, control).unwrap();
        let mut seen = BTreeSet::new();
        for node in &cluster {
            let ch = plan.channel_of(*node).unwrap();
            prop_assert!(ch < CHANNEL_COUNT);
            prop_assert_ne!(ch, control);
            prop_assert!(seen.insert(ch), "channel reused");
            if let Some(b) = blocked.get(node) {
                prop_assert!(!b.contains(&ch));
            }
        }
    }

    /// Recoding any subset of a batch never increases the coefficient rank.
    #[test]
    fn recode_rank_never_increases(seed in 0u64..5000, keep in 1usize..=8, outputs in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 16;
        let data: Vec<u8> = (0..k * 8).map(|_| rng.gen()).collect();
        let block = SourceBlock::from_bytes(&data, 8).unwrap();
        let params = BatsParams::for_block(k);
        let (_, packets) = bats::encode_batch(&block, &params, 0, &mut rng).unwrap();
        let buffer = &packets[..keep.min(packets.len())];
        let out = bats::recode(buffer, outputs, &mut rng).unwrap();
        let rank_of = |pkts: &[bats::CodedPacket]| {
            Matrix::from_rows(pkts.iter().map(|p| p.coeff_vector.clone()).collect())
                .unwrap()
                .rank()
        };
        prop_assert!(rank_of(&out) <= rank_of(buffer));
    }

    /// Erasure-code recovery agrees with the rank of the restricted system
    /// and reproduces payloads exactly when it succeeds.
    #[test]
    fn ecc_decode_agrees_with_rank(seed in 0u64..5000, k in 1usize..=8, r in 0usize..=6, loss_bits in 0u16..(1 << 14)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = EccBlockParams { k, r, coefficient_seed: seed };
        let data: Vec<Vec<u8>> = (0..k).map(|_| (0..8).map(|_| rng.gen()).collect()).collect();
        let packets = ecc::encode(0, &data, &params).unwrap();
        let received: Vec<_> = packets
            .iter()
            .enumerate()
            .filter(|(i, _)| loss_bits >> i & 1 == 0)
            .map(|(_, p)| p.clone())
            .collect();
        let indices: Vec<usize> = received.iter().map(|p| p.index as usize).collect();
        match ecc::decode(&received, &params) {
            Ok(out) => {
                prop_assert!(ecc::decodable(&indices, &params));
                prop_assert_eq!(out, data);
            }
            Err(ecc::EccError::Insufficient(_)) => {
                prop_assert!(!ecc::decodable(&indices, &params));
            }
            Err(other) => prop_assert!(false, "unexpected error {}", other),
        }
    }

    /// Gf256 multiplicative structure: a * b / b round-trips for nonzero b.
    #[test]
    fn field_mul_div_roundtrip(a in 0u8..=255, b in 1u8..=255) {
        let product = Gf256(a) * Gf256(b);
        let back = product * Gf256(b).inv().unwrap();
        prop_assert_eq!(back, Gf256(a));
    }

    /// Switching overhead grows monotonically with the switch cost.
    #[test]
    fn drive_overhead_monotone_in_cost(costs in proptest::collection::vec(0.0f64..600.0, 2..6)) {
        let cluster: Vec<usize> = (0..5).collect();
        let plan = assign_channels(&cluster, &BTreeMap::new(), 0).unwrap();
        let sessions: Vec<BroadcastSession> = cluster
            .iter()
            .map(|&n| BroadcastSession {
                node: n,
                node_position_m: n as f64 * 25.0,
                channel: plan.channel_of(n).unwrap(),
                goodput_mbps: 58.5,
                app_rate_mbps: 30.0,
                range_m: 50.0,
                packet_loss: 0.08,
            })
            .collect();
        let trace = VehicleTrace::constant_speed(0.0, 100.0, 20.0).unwrap();
        let mut sorted = costs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut last = -1.0;
        for cost in sorted {
            let timeline = simulate_drive(
                &trace,
                &plan,
                &sessions,
                &DriveParams { switch_cost_ms: cost, beacon_period_ms: 100.0 },
            )
            .unwrap();
            prop_assert!(timeline.switch_overhead_fraction + 1e-12 >= last);
            last = timeline.switch_overhead_fraction;
        }
    }
}
