//! Property tests: serialization round-trips, quantization equivalence on
//! randomized trees, and model-file prediction stability.

use proptest::prelude::*;

use o2c_core::dtree::{
    load_model, quantize, save_model, EvalBudget, FlatTree, Granularity, TreeMeta,
};
use o2c_core::model::{
    parse_ir, parse_trace, serialize_ir, serialize_trace, AllocatorKind, EventKind, Instruction,
    Operand, TraceEvent,
};
use o2c_core::profiler::{export_dataset, import_dataset, Dataset, DatasetRow};
use o2c_core::rng::XorShift64Star;

// ---------------------------------------------------------------------
// Round-trips
// ---------------------------------------------------------------------

fn operand_strategy() -> impl Strategy<Value = Operand> {
    prop_oneof![
        "[a-z][a-z0-9]{1,3}".prop_map(|r| Operand::register(&r)),
        any::<u64>().prop_map(Operand::immediate),
        any::<u64>().prop_map(Operand::address),
        any::<u64>().prop_map(Operand::code),
        (
            prop::option::of("[a-z][a-z0-9]{1,3}"),
            prop::option::of("[a-z][a-z0-9]{1,3}"),
            prop::option::of(1u8..=8),
            -0x10000i64..0x10000i64,
        )
            .prop_map(|(base, index, scale, disp)| {
                Operand::mem(base.as_deref(), index.as_deref(), scale, Some(disp))
            }),
    ]
}

fn instruction_strategy() -> impl Strategy<Value = Instruction> {
    (
        any::<u64>(),
        "[a-z_][a-z0-9_]{0,12}",
        0u64..0x4000,
        "[a-z]{2,8}",
        prop::collection::vec(operand_strategy(), 0..=3),
        any::<bool>(),
        prop::collection::vec(1u64..64, 0..3),
    )
        .prop_map(|(addr, func, offset, mnemonic, operands, is_compartment, type_hints)| Instruction {
            addr,
            func,
            offset,
            mnemonic,
            operands,
            is_compartment,
            type_hints,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// serialize(parse(x)) reproduces the parsed structure field-for-field.
    #[test]
    fn ir_round_trip(mut instructions in prop::collection::vec(instruction_strategy(), 1..20)) {
        // Unique addresses, sorted, as parse_ir guarantees.
        instructions.sort_by_key(|i| i.addr);
        instructions.dedup_by_key(|i| i.addr);
        let text = serialize_ir(&instructions);
        let parsed = parse_ir(text.as_bytes()).unwrap();
        prop_assert_eq!(&parsed, &instructions);
        let again = parse_ir(serialize_ir(&parsed).as_bytes()).unwrap();
        prop_assert_eq!(again, parsed);
    }

    #[test]
    fn trace_round_trip(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 1..16)) {
        let mut events = Vec::new();
        for (i, payload) in payloads.into_iter().enumerate() {
            let tick = (i as u64 + 1) * 3;
            let mut alloc = TraceEvent::new(tick, EventKind::Alloc);
            alloc.site = Some(0x1000 + i as u64);
            alloc.addr = Some(0x100000 + i as u64 * 0x100);
            alloc.size = Some(payload.len().max(1) as u64);
            alloc.type_id = Some(i as u64 % 5 + 1);
            alloc.allocator = Some(if i % 2 == 0 { AllocatorKind::Slab } else { AllocatorKind::Buddy });
            alloc.pre_t0 = i % 3 == 0;
            events.push(alloc);
            let mut free = TraceEvent::new(tick + 1, EventKind::Free);
            free.addr = Some(0x100000 + i as u64 * 0x100);
            free.payload = Some(payload);
            events.push(free);
        }
        let text = serialize_trace(&events);
        let parsed = parse_trace(text.as_bytes()).unwrap();
        prop_assert_eq!(&parsed, &events);
        let again = parse_trace(serialize_trace(&parsed).as_bytes()).unwrap();
        prop_assert_eq!(again, parsed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Dataset CSV round-trips preserve rows and the class histogram.
    #[test]
    fn dataset_round_trip(rows in prop::collection::vec((prop::collection::vec(any::<u64>(), 4), 1u64..20, any::<bool>()), 1..64)) {
        let mut ds = Dataset::default();
        ds.meta.feature_words = 4;
        for (words, type_id, in_compartment) in rows {
            ds.rows.push(DatasetRow { words, type_id, in_compartment });
        }
        let mut histogram = std::collections::BTreeMap::new();
        for r in &ds.rows {
            *histogram.entry(r.type_id).or_insert(0usize) += 1;
        }
        ds.meta.class_histogram = histogram.clone();
        let mut buf = Vec::new();
        export_dataset(&ds, &mut buf).unwrap();
        let back = import_dataset(&buf[..]).unwrap();
        prop_assert!(ds.same_rows(&back));
        prop_assert_eq!(&back.meta.class_histogram, &histogram);
    }
}

/// A 10k-row dataset survives one full export/import cycle with its class
/// histogram intact.
#[test]
fn large_dataset_round_trip_preserves_histogram() {
    let mut rng = XorShift64Star::new(99);
    let mut ds = Dataset::default();
    ds.meta.feature_words = 8;
    let mut histogram = std::collections::BTreeMap::new();
    for _ in 0..10_000 {
        let type_id = rng.below(20) + 1;
        *histogram.entry(type_id).or_insert(0usize) += 1;
        ds.rows.push(DatasetRow {
            words: (0..8).map(|_| rng.next_u64()).collect(),
            type_id,
            in_compartment: type_id <= 6,
        });
    }
    ds.meta.class_histogram = histogram.clone();
    let mut buf = Vec::new();
    export_dataset(&ds, &mut buf).unwrap();
    let back = import_dataset(&buf[..]).unwrap();
    assert!(ds.same_rows(&back));
    assert_eq!(back.meta.class_histogram, histogram);
}

// ---------------------------------------------------------------------
// Quantization equivalence
// ---------------------------------------------------------------------

/// Builds a random flat tree with real thresholds in the unsigned domain,
/// then checks: for integer inputs, prediction through the floored integer
/// thresholds equals exact real-threshold traversal.
fn random_tree(rng: &mut XorShift64Star, max_depth: usize) -> FlatTree {
    // Grow breadth-first; each frontier node becomes internal with
    // shrinking probability.
    let mut children_left: Vec<i64> = vec![-1];
    let mut children_right: Vec<i64> = vec![-1];
    let mut feature: Vec<i64> = vec![-1];
    let mut raw: Vec<f64> = vec![0.0];
    let mut value: Vec<i64> = vec![0];
    let mut depth_of = vec![0usize];
    let n_features = 4;

    let mut cursor = 0usize;
    while cursor < children_left.len() {
        let depth = depth_of[cursor];
        let split = depth < max_depth && rng.chance(3, 4);
        if split {
            let left = children_left.len();
            for _ in 0..2 {
                children_left.push(-1);
                children_right.push(-1);
                feature.push(-1);
                raw.push(0.0);
                value.push(rng.below(8) as i64);
                depth_of.push(depth + 1);
            }
            children_left[cursor] = left as i64;
            children_right[cursor] = (left + 1) as i64;
            feature[cursor] = rng.below(n_features as u64) as i64;
            // Real threshold anywhere in [0, 2^64), including a fractional
            // part for small magnitudes.
            let whole = rng.next_u64();
            let frac = (rng.below(1000) as f64) / 1000.0;
            raw[cursor] = if whole < (1u64 << 52) { whole as f64 + frac } else { whole as f64 };
        }
        cursor += 1;
    }

    let n = children_left.len();
    FlatTree {
        children_left,
        children_right,
        feature,
        threshold: vec![0; n],
        value,
        meta: TreeMeta {
            n_nodes: n,
            max_depth,
            n_features,
            n_classes: 8,
            granularity: Granularity::Type,
            quantized: false,
        },
        raw_thresholds: Some(raw),
    }
}

/// Exact real-threshold traversal, independent of the quantized path.
fn predict_real_oracle(tree: &FlatTree, words: &[u64]) -> i64 {
    let raw = tree.raw_thresholds.as_ref().unwrap();
    let mut node = 0usize;
    loop {
        if tree.children_left[node] == -1 {
            return tree.value[node];
        }
        let x = words[tree.feature[node] as usize];
        let t = raw[node];
        // x <= t for integer x and real t >= 0, evaluated exactly.
        let goes_left = if t >= 18446744073709551616.0 {
            true
        } else {
            x <= t.floor() as u64
        };
        node = if goes_left { tree.children_left[node] as usize } else { tree.children_right[node] as usize };
    }
}

#[test]
fn quantized_predictions_match_real_thresholds() {
    let mut rng = XorShift64Star::new(20240731);
    let budget = EvalBudget { max_depth: 12, ..EvalBudget::default() };
    let mut checked = 0usize;
    for _ in 0..400 {
        let tree = random_tree(&mut rng, 10);
        let quantized = quantize(tree.clone());
        quantized.validate(&budget).unwrap();
        for _ in 0..25 {
            let words: Vec<u64> = (0..4)
                .map(|_| {
                    if rng.chance(1, 2) {
                        rng.below(1 << 20)
                    } else {
                        rng.next_u64()
                    }
                })
                .collect();
            let real = predict_real_oracle(&tree, &words);
            let quant = quantized.predict(&words, &budget).unwrap();
            assert_eq!(real, quant, "tree with {} nodes diverged on {words:?}", tree.meta.n_nodes);
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);
}

/// Saved and reloaded models predict identically on random vectors.
#[test]
fn loaded_model_predicts_like_in_memory_model() {
    let mut rng = XorShift64Star::new(7);
    let tree = quantize(random_tree(&mut rng, 8));
    let dir = std::env::temp_dir().join("o2c-prop-model");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("prop.o2cmodel.json");
    save_model(&tree, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let budget = EvalBudget { max_depth: 12, ..EvalBudget::default() };
    for _ in 0..1000 {
        let words: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        assert_eq!(
            tree.predict(&words, &budget).unwrap(),
            loaded.predict(&words, &budget).unwrap()
        );
    }
}
