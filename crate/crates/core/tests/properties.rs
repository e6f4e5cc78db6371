use std::collections::HashSet;

use canbnn::eval::{evaluate, stratified_split};
use canbnn::featurizer::{payload_word, IntervalCode};
use canbnn::parser::{parse_canonical, write_canonical, ParseOptions};
use canbnn::traffic::{ScenarioConfig, PRESETS};
use canbnn::{CanFrame, ClassLabel, Featurizer, FeaturizerConfig, IdDictionary};
use proptest::prelude::*;

fn arb_frame() -> impl Strategy<Value = (u64, u32, bool, Vec<u8>, Option<u16>)> {
    (
        0u64..10_000_000_000,
        0u32..(1 << 29),
        any::<bool>(),
        proptest::collection::vec(any::<u8>(), 0..=8),
        proptest::option::of(0u16..5),
    )
}

fn build(raw: &[(u64, u32, bool, Vec<u8>, Option<u16>)]) -> Vec<CanFrame> {
    let mut micros: Vec<u64> = raw.iter().map(|r| r.0).collect();
    micros.sort_unstable();
    raw.iter()
        .zip(micros)
        .map(|((_, id, extended, payload, label), us)| {
            let extended = *extended || *id > 0x7FF;
            let id = if extended { *id } else { id & 0x7FF };
            let mut f = CanFrame::with_format(us as f64 / 1e6, id, extended, payload).unwrap();
            f.label = label.map(ClassLabel);
            f
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn canonical_csv_round_trips(raw in proptest::collection::vec(arb_frame(), 0..40)) {
        let frames = build(&raw);
        let mut bytes = Vec::new();
        write_canonical(&mut bytes, &frames).unwrap();
        let parsed = parse_canonical(bytes.as_slice(), ParseOptions::default()).unwrap();
        prop_assert_eq!(parsed, frames);
    }

    #[test]
    fn featurized_fields_decompose(
        ids in proptest::collection::btree_set(0u32..0x800, 1..20),
        stream in proptest::collection::vec((0usize..24, 1u32..200_000, proptest::collection::vec(any::<u8>(), 0..=8)), 1..60),
    ) {
        let ids: Vec<u32> = ids.into_iter().collect();
        let dict = IdDictionary::from_pairs(6, ids.iter().enumerate().map(|(i, &id)| (id, i as u8))).unwrap();
        let config = FeaturizerConfig::new(dict.clone(), 0.005, 0.05).unwrap();
        let mut featurizer = Featurizer::new(&config).unwrap();
        let mut t_us = 0u64;
        let mut last: std::collections::HashMap<u32, u64> = Default::default();
        for (pick, gap, payload) in stream {
            t_us += gap as u64;
            // Indices past the dictionary produce unseen IDs.
            let id = ids.get(pick).copied().unwrap_or(0x7FF - pick as u32);
            let frame = CanFrame::new(t_us as f64 / 1e6, id, &payload).unwrap();
            let v = featurizer.featurize(&frame).unwrap();
            prop_assert_eq!(v.len(), 73);
            let (code, interval, word) = v.decompose(6).unwrap();
            let expected_code = if dict.contains(id) { dict.code(id) } else { 63 };
            prop_assert_eq!(code, expected_code);
            prop_assert_eq!(word, payload_word(&payload));
            let expected_interval = match last.insert(id, t_us) {
                None => IntervalCode::Long,
                Some(prev) => {
                    let dt = (t_us - prev) as f64 / 1e6;
                    if dt < 0.005 { IntervalCode::Short } else if dt < 0.05 { IntervalCode::Medium } else { IntervalCode::Long }
                }
            };
            prop_assert_eq!(interval, expected_interval);
        }
    }

    #[test]
    fn featurizer_config_toml_round_trips(
        ids in proptest::collection::btree_set(0u32..(1 << 29), 0..30),
        t1 in 1e-4f64..0.05,
        gap in 1e-4f64..1.0,
    ) {
        let dict = IdDictionary::from_pairs(6, ids.into_iter().enumerate().map(|(i, id)| (id, i as u8))).unwrap();
        let config = FeaturizerConfig::new(dict, t1, t1 + gap).unwrap();
        let back = FeaturizerConfig::from_toml(&config.to_toml()).unwrap();
        prop_assert_eq!(back.hash(), config.hash());
        prop_assert_eq!(back, config);
    }

    #[test]
    fn metrics_ignore_sample_order(
        pairs in proptest::collection::vec((0u16..4, 0u16..4), 1..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let split = |p: &[(u16, u16)]| -> (Vec<u16>, Vec<u16>) { p.iter().copied().unzip() };
        let (pa, ta) = split(&pairs);
        let (pb, tb) = split(&shuffled);
        for classes in [2usize, 4] {
            let clamp = |v: &[u16]| v.iter().map(|&c| c % classes as u16).collect::<Vec<_>>();
            let a = evaluate(&clamp(&pa), &clamp(&ta), classes).unwrap();
            let b = evaluate(&clamp(&pb), &clamp(&tb), classes).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn stratified_split_keeps_class_proportions(
        labels in proptest::collection::vec(0u16..4, 40..400),
        seed in any::<u64>(),
    ) {
        let mut counts = [0usize; 4];
        for &l in &labels {
            counts[l as usize] += 1;
        }
        let fractions = (0.7, 0.15, 0.15);
        let split = match stratified_split(&labels, fractions, seed) {
            Err(canbnn::Error::ClassTooSmall { class, count, .. }) => {
                // 5 is the smallest class that gives every part a member.
                prop_assert_eq!(counts[class as usize], count);
                prop_assert!(count < 5);
                return Ok(());
            }
            other => other.unwrap(),
        };
        prop_assert!(counts.iter().all(|&c| c == 0 || c >= 5));
        let all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        prop_assert_eq!(all.len(), labels.len());
        prop_assert_eq!(all.iter().collect::<HashSet<_>>().len(), labels.len());
        for class in 0..4u16 {
            let n = counts[class as usize] as f64;
            for (part, f) in [(&split.train, fractions.0), (&split.val, fractions.1), (&split.test, fractions.2)] {
                let got = part.iter().filter(|&&i| labels[i] == class).count() as f64;
                prop_assert!((got - f * n).abs() < 1.0 + 1e-9, "class {} got {} of {}", class, got, n);
            }
        }
        prop_assert_eq!(stratified_split(&labels, fractions, seed).unwrap(), split);
    }
}

#[test]
fn scenario_presets_round_trip_through_toml() {
    for name in PRESETS {
        let config = ScenarioConfig::preset(name, 5).unwrap();
        let back = ScenarioConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(back, config, "{name}");
    }
}

#[test]
fn binary_metrics_on_a_small_confusion() {
    // 3 TP, 1 FN, 2 FP, 4 TN.
    let truths = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
    let preds = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
    let m = evaluate(&preds, &truths, 2).unwrap();
    assert_eq!(m.accuracy, 0.7);
    assert_eq!(m.precision, 0.6);
    assert_eq!(m.recall, 0.75);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.confusion, vec![vec![4, 2], vec![1, 3]]);
}

#[test]
fn smallest_splittable_class_has_five_members() {
    assert!(stratified_split(&[0, 0, 0, 0, 0], (0.7, 0.15, 0.15), 0).is_ok());
    assert!(matches!(
        stratified_split(&[0, 0, 0, 0], (0.7, 0.15, 0.15), 0),
        Err(canbnn::Error::ClassTooSmall { class: 0, count: 4, .. })
    ));
}
