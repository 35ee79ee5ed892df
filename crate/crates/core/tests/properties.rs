mod common;

use std::collections::BTreeSet;

use combocache::analysis::{corollary1_check, memory_baseline, memory_th1};
use combocache::gfmds::{MdsCode, WordSize};
use combocache::schemes::{
    check_run, minimal_file_size, place, simulate, DemandVector, Library, SchemeConfig,
};
use combocache::topology::{build_network, count_z, per_user_incidence, subsets_colex, NetworkParams, UserSet};
use common::*;
use num_bigint::BigUint;
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn network(max_users: i128) -> impl Strategy<Value = (u32, u32)> {
    proptest::sample::select(small_networks(max_users, 8))
}

fn code_and_message(max_n: usize, word: Option<WordSize>) -> impl Strategy<Value = (usize, usize, Vec<usize>, Vec<Vec<u8>>)> {
    (1..=max_n)
        .prop_flat_map(|n| (Just(n), 1..=n))
        .prop_flat_map(move |(n, k)| {
            let width = word.map_or(1, WordSize::bytes);
            let len = (1..6usize).prop_map(move |l| l * width * 2);
            (Just(n), Just(k), subsequence((0..n).collect::<Vec<_>>(), k), len)
        })
        .prop_flat_map(|(n, k, picked, len)| {
            (Just(n), Just(k), Just(picked), proptest::collection::vec(proptest::collection::vec(any::<u8>(), len), k))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_k_symbols_recover_the_message((n, k, picked, msg) in code_and_message(60, Some(WordSize::W8))) {
        let code = MdsCode::new(n, k).unwrap();
        let enc = code.encode(&msg).unwrap();
        let blocks: Vec<_> = picked.iter().rev().map(|&i| enc[i].clone()).collect();
        prop_assert_eq!(code.decode(&blocks).unwrap(), msg);
    }

    #[test]
    fn wide_field_recovers_the_message((n, k, picked, msg) in code_and_message(40, Some(WordSize::W16))) {
        let code = MdsCode::with_word(n, k, WordSize::W16).unwrap();
        let enc = code.encode(&msg).unwrap();
        let blocks: Vec<_> = picked.iter().map(|&i| enc[i].clone()).collect();
        prop_assert_eq!(code.decode(&blocks).unwrap(), msg);
    }

    #[test]
    fn encoding_is_xor_linear((n, k, _picked, a) in code_and_message(30, None), seed in any::<u8>()) {
        let code = MdsCode::new(n, k).unwrap();
        let b: Vec<Vec<u8>> = a.iter().map(|v| v.iter().map(|x| x.wrapping_mul(31).wrapping_add(seed)).collect()).collect();
        let ab: Vec<Vec<u8>> = a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p ^ q).collect()).collect();
        let (ea, eb, eab) = (code.encode(&a).unwrap(), code.encode(&b).unwrap(), code.encode(&ab).unwrap());
        for i in 0..n {
            let xor: Vec<u8> = ea[i].payload.iter().zip(&eb[i].payload).map(|(p, q)| p ^ q).collect();
            prop_assert_eq!(&eab[i].payload, &xor);
        }
    }

    #[test]
    fn systematic_symbols_are_the_message((n, k, _picked, msg) in code_and_message(30, None)) {
        let enc = MdsCode::new(n, k).unwrap().encode(&msg).unwrap();
        for (i, m) in msg.iter().enumerate() {
            prop_assert_eq!(enc[i].index, i + 1);
            prop_assert_eq!(&enc[i].payload, m);
        }
    }

    #[test]
    fn closed_form_count_matches_search((h, r) in network(20)) {
        let topo = build_network(NetworkParams::new(h, r, 1, 1)).unwrap();
        let masks = masks_of(&topo.user_ids().map(|k| topo.relays_of(k).to_vec()).collect::<Vec<_>>());
        let brute = brute_z(&masks, 0);
        for t in 1..=topo.user_count() {
            prop_assert_eq!(count_z(h, r, t).unwrap(), BigUint::from(brute.by_size[t as usize]));
        }
    }

    #[test]
    fn every_user_sits_in_the_same_number_of_sets((h, r) in network(15), t in 1u32..6) {
        let topo = build_network(NetworkParams::new(h, r, 1, 1)).unwrap();
        let z = topo.enumerate_z(t).unwrap();
        let want = per_user_incidence(h, r, t).unwrap();
        for k in topo.user_ids() {
            let c = z.iter().filter(|w| w.contains(k)).count();
            prop_assert_eq!(BigUint::from(c), want.clone());
        }
        for w in &z {
            prop_assert!(!topo.common_relays(w).is_empty());
        }
    }

    #[test]
    fn relay_and_user_queries_are_dual((h, r) in network(20), pick in any::<u64>()) {
        let topo = build_network(NetworkParams::new(h, r, 1, 1)).unwrap();
        let relays: Vec<u32> = (1..=h).filter(|x| pick >> x & 1 == 1).collect();
        let users = topo.common_users(&relays);
        for k in topo.user_ids() {
            let has_all = relays.iter().all(|x| topo.relays_of(k).contains(x));
            prop_assert_eq!(users.contains(k), has_all);
        }
        if !users.is_empty() {
            let back: BTreeSet<u32> = topo.common_relays(&users).into_iter().collect();
            prop_assert!(relays.iter().all(|x| back.contains(x)));
        }
    }

    #[test]
    fn colex_order_matches_subset_listing(n in 1u32..9, t in 0usize..5) {
        let items: Vec<u32> = (1..=n).collect();
        let listed = subsets_colex(&items, t);
        prop_assert_eq!(listed.len() as i128, binom(n as i64, t as i64));
        let sets: Vec<UserSet> = listed.into_iter().map(UserSet::new).collect();
        prop_assert!(sets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn asymmetric_never_caches_more((h, r) in network(60), files in 1u32..40) {
        let k1 = binom(h as i64 - 1, r as i64 - 1) as u32;
        for g in 1..=k1 {
            prop_assert!(memory_th1(files, h, r, g).unwrap() <= memory_baseline(files, h, r, g).unwrap());
        }
        prop_assert!(corollary1_check(h, r).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coded_delivery_decodes((h, r) in network(15), asymmetric in any::<bool>(), g_pick in any::<u32>(), files in 1u32..8, seed in any::<u64>()) {
        let k1 = binom(h as i64 - 1, r as i64 - 1) as u32;
        let g = 1 + g_pick % k1;
        let config = if asymmetric { SchemeConfig::Asymmetric { gain: g } } else { SchemeConfig::Baseline { gain: g } };
        let probe = build_network(NetworkParams::new(h, r, files, 1)).unwrap();
        let size = minimal_file_size(&probe, &config, 1 + seed % 64).unwrap();
        let topo = build_network(NetworkParams::new(h, r, files, size)).unwrap();
        let placement = place(&topo, &config, &Library::random(files, size, seed)).unwrap();
        let d = DemandVector::random(topo.user_count(), files, &mut ChaCha8Rng::seed_from_u64(seed));
        let report = simulate(&topo, &placement, &d).unwrap();
        prop_assert!(report.all_decoded(), "{:?}", report.decoded);
        let issues = check_run(&topo, &placement, &report);
        prop_assert!(issues.is_empty(), "{:?}", issues);
    }

    #[test]
    fn routing_delivery_decodes((h, r) in network(10), num in 0i64..=6, files in 1u32..8, seed in any::<u64>()) {
        let fraction = q(num, 6);
        let config = SchemeConfig::Routing { memory_fraction: fraction };
        let probe = build_network(NetworkParams::new(h, r, files, 1)).unwrap();
        let size = minimal_file_size(&probe, &config, 1 + seed % 64).unwrap();
        let topo = build_network(NetworkParams::new(h, r, files, size)).unwrap();
        let placement = place(&topo, &config, &Library::random(files, size, seed)).unwrap();
        let d = DemandVector::random(topo.user_count(), files, &mut ChaCha8Rng::seed_from_u64(seed));
        let report = simulate(&topo, &placement, &d).unwrap();
        prop_assert!(report.all_decoded(), "{:?}", report.decoded);
        let issues = check_run(&topo, &placement, &report);
        prop_assert!(issues.is_empty(), "{:?}", issues);
    }
}
