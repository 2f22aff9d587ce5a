use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use hvfcast_core::hvf::{Eye, Gender, VisualField, N_POINTS};
use hvfcast_core::pipeline::{
    assign_bin, encode_batch, make_pairs, pair_records, parse_pairs, resolve_pairs, serialize_pairs, split_ids,
    BinnedPairs, FeatureCombo, FieldPair, IntervalBin,
};
use hvfcast_core::synth::{generate_cohort, CohortConfig};

fn field(patient: &str, eye: Eye, day: u64, index: u32, fill: f64) -> VisualField {
    VisualField {
        patient_id: patient.into(),
        eye,
        gender: Gender::M,
        age_years: 55.0 + day as f64 / 365.25,
        test_date: NaiveDate::from_ymd_opt(2001, 6, 1).unwrap().checked_add_days(Days::new(day)).unwrap(),
        test_index: index,
        values: (0..N_POINTS).map(|i| (fill + i as f64 * 0.25).min(50.0)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn every_delta_lands_in_at_most_one_bin(delta in 0.0f64..7.0) {
        let holders: Vec<IntervalBin> = IntervalBin::all().filter(|b| b.contains(delta)).collect();
        match assign_bin(delta) {
            Some(b) => {
                prop_assert!((0.75..=5.5).contains(&delta));
                prop_assert_eq!(holders, vec![b]);
                prop_assert!(b.lower() <= delta && delta <= b.upper());
            }
            None => {
                prop_assert!(!(0.75..=5.5).contains(&delta));
                prop_assert!(holders.is_empty());
            }
        }
    }
}

proptest! {
    #[test]
    fn distinct_dates_give_all_forward_pairs(mut days in prop::collection::btree_set(0u64..3000, 1..12)) {
        let days: Vec<u64> = std::mem::take(&mut days).into_iter().collect();
        let fields: Vec<VisualField> = days
            .iter()
            .enumerate()
            .map(|(i, &d)| field("A", Eye::Left, d, i as u32 + 1, 20.0))
            .collect();
        let pairs = make_pairs(&fields);
        let n = days.len();
        prop_assert_eq!(pairs.len(), n * (n - 1) / 2);
        for p in &pairs {
            prop_assert!(p.input.test_date < p.target.test_date);
            prop_assert!(p.delta_years > 0.0);
        }
        let binned = BinnedPairs::from_pairs(pairs);
        prop_assert_eq!(binned.total() + binned.excluded, n * (n - 1) / 2);
    }

    #[test]
    fn batch_encoding_follows_pair_order(bits in 0u8..16, fills in prop::collection::vec(0.0f64..40.0, 2..6), rot in 0usize..5) {
        let combo = FeatureCombo::from_bits(bits);
        let pairs: Vec<FieldPair> = fills
            .iter()
            .enumerate()
            .map(|(i, &f)| FieldPair {
                input: field(&format!("P{i}"), if i % 2 == 0 { Eye::Right } else { Eye::Left }, 0, 1, f),
                target: field(&format!("P{i}"), Eye::Right, 400, 2, 40.0 - f),
                delta_years: 400.0 / 365.25,
            })
            .collect();
        let refs: Vec<&FieldPair> = pairs.iter().collect();
        let mut rotated = refs.clone();
        rotated.rotate_left(rot % refs.len());
        let (x, y) = encode_batch(&refs, combo);
        let (xr, yr) = encode_batch(&rotated, combo);
        let n = refs.len();
        for i in 0..n {
            let j = (i + rot % n) % n;
            prop_assert_eq!(xr.item(i).data().to_vec(), x.item(j).data().to_vec());
            prop_assert_eq!(yr.item(i).data().to_vec(), y.item(j).data().to_vec());
        }
    }

    #[test]
    fn split_is_seeded_and_balanced(n in 20usize..300, ratio in 0.5f64..0.95, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("S{i:04}")).collect();
        let a = split_ids(ids.clone(), ratio, seed).unwrap();
        let b = split_ids(ids.into_iter().rev().collect(), ratio, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let train = (ratio * n as f64).ceil() as usize;
        prop_assert_eq!(a.test_patients.len(), n - train);
        let sizes: Vec<usize> = a.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pair_files_resolve_to_the_same_pairs(seed in any::<u64>()) {
        let cohort = generate_cohort(&CohortConfig { patients: 12, seed, ..CohortConfig::default() }).unwrap();
        let binned = BinnedPairs::from_pairs(make_pairs(&cohort.fields));
        let text = serialize_pairs(&pair_records(&binned));
        let back = resolve_pairs(&parse_pairs(&text).unwrap(), &cohort.fields).unwrap();
        prop_assert_eq!(back.total(), binned.total());
        for (bin, pairs) in &binned.bins {
            prop_assert_eq!(back.get(*bin), &pairs[..]);
        }
    }
}
