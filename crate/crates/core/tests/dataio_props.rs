use proptest::prelude::*;
use tristream_core::dataio::{
    manifest_to_string, parse_manifest, synth_assignments, synth_sample, ManifestRow, Role, Split,
};

fn row() -> impl Strategy<Value = ManifestRow> {
    (
        "[a-z][a-z0-9_/]{0,12}\\.pgm",
        0u8..2,
        prop::option::of("[a-z][a-z0-9_/]{0,12}\\.pgm"),
        prop::sample::select(vec![Split::Train, Split::Val, Split::Test]),
        prop::sample::select(vec![Role::SeedMasked, Role::Unlabeled, Role::LabeledOnly]),
    )
        .prop_map(|(image_path, label, mask_path, split, role)| ManifestRow {
            mask_path: match role {
                Role::SeedMasked => Some(mask_path.unwrap_or_else(|| format!("m_{image_path}"))),
                _ => mask_path,
            },
            image_path,
            label,
            split,
            role,
        })
}

proptest! {
    #[test]
    fn manifest_text_round_trips(rows in prop::collection::vec(row(), 0..20)) {
        let text = manifest_to_string(&rows);
        prop_assert_eq!(parse_manifest(&text).unwrap(), rows);
    }

    #[test]
    fn seed_rows_without_mask_are_rejected(mut rows in prop::collection::vec(row(), 1..10), pick in any::<prop::sample::Index>()) {
        let i = pick.index(rows.len());
        rows[i].role = Role::SeedMasked;
        rows[i].mask_path = None;
        let err = parse_manifest(&manifest_to_string(&rows)).unwrap_err().to_string();
        prop_assert!(err.contains(&format!("line {}", i + 2)), "{}", err);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synthetic_lesions_stay_in_the_lung(index in 0usize..500, seed in any::<u64>(), size in prop::sample::select(vec![32usize, 48, 64])) {
        let s = synth_sample(index, size, seed);
        prop_assert_eq!(s.label as usize, index % 2);
        prop_assert_eq!(s.mask.is_empty(), s.label == 0);
        prop_assert!(s.mask.is_subset_of(&s.lung));
        prop_assert!(s.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(synth_sample(index, size, seed), s);
    }

    #[test]
    fn assignments_are_deterministic_and_complete(half in 4usize..60, seed in any::<u64>()) {
        let n = 2 * half;
        let a = synth_assignments(n, seed);
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(&a, &synth_assignments(n, seed));
        prop_assert!(a.iter().any(|(s, _)| *s == Split::Test));
        prop_assert!(a.iter().any(|(s, r)| *s == Split::Train && *r == Role::SeedMasked));
        prop_assert!(a.iter().filter(|(s, _)| *s == Split::Test).all(|(_, r)| *r == Role::LabeledOnly));
    }
}
