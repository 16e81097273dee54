//! Storage strategies and instance migration.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use oi::minijs::objects::{read_stored, store_path, ObjectInstance, Strategy as Layout};
use oi::minijs::state::SymbolTable;
use oi::value::Value;
use proptest::prelude::*;

const STRATEGIES: [Layout; 3] = [Layout::HashMap, Layout::ArrayLike, Layout::Persistent];

#[derive(Debug, Clone)]
enum Op {
    Set(u8, i32),
    Get(u8),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![(0u8..6, any::<i32>()).prop_map(|(f, v)| Op::Set(f, v)), (0u8..6).prop_map(Op::Get)],
        0..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every strategy reads back the last value written, like a plain map.
    #[test]
    fn strategies_agree_with_a_map(ops in ops()) {
        let dir = tempfile::tempdir().unwrap();
        for (k, s) in STRATEGIES.into_iter().enumerate() {
            let mut obj = ObjectInstance::create(k as u64 + 1, k as u64 + 1, "P", s, dir.path()).unwrap();
            let mut oracle: HashMap<String, Value> = HashMap::new();
            for op in &ops {
                match op {
                    Op::Set(f, v) => {
                        let (name, value) = (format!("f{f}"), Value::Number(*v as f64));
                        obj.set(&name, value.clone()).unwrap();
                        oracle.insert(name, value);
                    }
                    Op::Get(f) => {
                        let name = format!("f{f}");
                        prop_assert_eq!(obj.get(&name).unwrap(), oracle.get(&name).cloned(), "{:?}", s);
                    }
                }
            }
        }
    }

    /// A second handle on the same store file sees every write.
    #[test]
    fn persistent_writes_are_visible_to_other_readers(vals in prop::collection::vec(any::<i32>(), 1..10)) {
        let dir = tempfile::tempdir().unwrap();
        let mut writer = ObjectInstance::create(9, 9, "Node", Layout::Persistent, dir.path()).unwrap();
        let mut reader = ObjectInstance::create(9, 9, "Node", Layout::Persistent, dir.path()).unwrap();
        for (k, v) in vals.iter().enumerate() {
            writer.set(&format!("f{k}"), Value::Number(*v as f64)).unwrap();
            prop_assert_eq!(reader.get(&format!("f{k}")).unwrap(), Some(Value::Number(*v as f64)));
        }
        let stored = read_stored(&store_path(dir.path(), 9)).unwrap().unwrap();
        prop_assert_eq!(stored.identity_seed, 9);
        prop_assert_eq!(stored.fields.len(), vals.len());
    }

    /// Migration moves exactly the reachable instances of the prototype,
    /// keeps their fields and seeds, and rewrites every reference.
    #[test]
    fn migration_preserves_graph(
        protos in prop::collection::vec(prop::bool::ANY, 1..12),
        edges in prop::collection::vec((0usize..12, 0usize..12), 0..20),
        roots in prop::collection::vec(0usize..12, 0..5),
        target in prop::sample::select(vec![Layout::ArrayLike, Layout::Persistent]),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut st = SymbolTable::new(dir.path().into());
        let n = protos.len();
        let ids: Vec<u64> = protos
            .iter()
            .map(|is_pos| st.heap.alloc(if *is_pos { "Position" } else { "Other" }, Layout::HashMap).unwrap())
            .collect();
        for (k, id) in ids.iter().enumerate() {
            st.heap.get_mut(*id).unwrap().set("tag", Value::Number(k as f64)).unwrap();
        }
        for (a, b) in &edges {
            let (a, b) = (a % n, b % n);
            st.heap.get_mut(ids[a]).unwrap().set(&format!("e{b}"), Value::Object(ids[b])).unwrap();
        }
        for (k, r) in roots.iter().enumerate() {
            st.assign(&format!("r{k}"), Value::Object(ids[r % n]));
        }
        // Oracle: breadth-first reachability over the edge list.
        let mut reach = vec![false; n];
        let mut work: Vec<usize> = roots.iter().map(|r| r % n).collect();
        while let Some(k) = work.pop() {
            if !std::mem::replace(&mut reach[k], true) {
                work.extend(edges.iter().filter(|(a, _)| a % n == k).map(|(_, b)| b % n));
            }
        }
        let expected = (0..n).filter(|k| reach[*k] && protos[*k]).count();
        prop_assert_eq!(st.count_instances("Position"), expected);
        prop_assert_eq!(st.migrate_instances("Position", target).unwrap(), expected);
        prop_assert_eq!(st.migrate_instances("Position", target).unwrap(), 0);

        // Follow roots again: same tags, same shape, migrated strategy and kept seeds.
        let seed_of: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
        for (k, r) in roots.iter().enumerate() {
            let Some(Value::Object(id)) = st.lookup(&format!("r{k}")) else { panic!("root lost") };
            let obj = st.heap.get_mut(id).unwrap();
            let original = seed_of[&obj.identity_seed];
            prop_assert_eq!(original, r % n);
            prop_assert_eq!(obj.get("tag").unwrap(), Some(Value::Number(original as f64)));
            let want = if protos[original] { target } else { Layout::HashMap };
            prop_assert_eq!(obj.strategy(), want);
            let fields: IndexMap<String, Value> = obj.fields();
            for (name, v) in fields {
                if let Value::Object(dst) = v {
                    let dst_obj = st.heap.get(dst).expect("reference rewritten to a live object");
                    prop_assert_eq!(format!("e{}", seed_of[&dst_obj.identity_seed]), name);
                }
            }
        }
    }
}

#[test]
fn array_like_layout_is_fixed_after_migration() {
    let dir = tempfile::tempdir().unwrap();
    let mut st = SymbolTable::new(dir.path().into());
    let p = st.heap.alloc("Position", Layout::HashMap).unwrap();
    st.heap.get_mut(p).unwrap().set("x", Value::Number(1.0)).unwrap();
    st.assign("p", Value::Object(p));
    assert_eq!(st.migrate_instances("Position", Layout::ArrayLike).unwrap(), 1);
    let Some(Value::Object(q)) = st.lookup("p") else { panic!() };
    let obj = st.heap.get_mut(q).unwrap();
    obj.set("x", Value::Number(2.0)).unwrap();
    assert!(obj.set("y", Value::Number(0.0)).is_err());
}
