//! Endemic state shared by every MiniJS action: the symbol table (scopes
//! plus the object heap) and the enriched stack trace.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use indexmap::IndexMap;

use super::objects::{read_stored, replace_value, store_path, ObjectInstance, Storage, Strategy};
use crate::nvm::RuntimeError;
use crate::value::Value;

#[derive(Debug, Clone)]
pub struct Heap {
    objects: BTreeMap<u64, ObjectInstance>,
    next_id: u64,
    store_dir: PathBuf,
}

impl Heap {
    pub fn new(store_dir: PathBuf) -> Self {
        Heap { objects: BTreeMap::new(), next_id: 1, store_dir }
    }

    pub fn store_dir(&self) -> &PathBuf {
        &self.store_dir
    }

    /// Ids are handed out sequentially from 1, so a program allocates the
    /// same ids on every run.
    pub fn alloc(&mut self, proto: &str, strategy: Strategy) -> Result<u64, RuntimeError> {
        let id = self.fresh_id();
        let obj = ObjectInstance::create(id, id, proto, strategy, &self.store_dir)?;
        self.objects.insert(id, obj);
        Ok(id)
    }

    fn fresh_id(&mut self) -> u64 {
        while self.objects.contains_key(&self.next_id) {
            self.next_id += 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn get(&self, id: u64) -> Option<&ObjectInstance> {
        self.objects.get(&id)
    }

    /// Unknown ids are looked up in the persistent store.
    pub fn get_mut(&mut self, id: u64) -> Result<&mut ObjectInstance, RuntimeError> {
        if !self.objects.contains_key(&id) {
            let path = store_path(&self.store_dir, id);
            let stored = read_stored(&path)?.ok_or_else(|| RuntimeError::new(format!("dangling object reference #{id}")))?;
            let obj = ObjectInstance {
                id,
                proto: stored.proto,
                identity_seed: stored.identity_seed,
                storage: Storage::Persistent { path, cache: stored.fields },
            };
            self.objects.insert(id, obj);
        }
        Ok(self.objects.get_mut(&id).expect("inserted above"))
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.values()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SymbolTable {
    /// Globals at the bottom, the active call frame on top.
    pub frames: Vec<IndexMap<String, Value>>,
    pub heap: Heap,
}

impl SymbolTable {
    pub fn new(store_dir: PathBuf) -> Self {
        SymbolTable { frames: vec![IndexMap::new()], heap: Heap::new(store_dir) }
    }

    /// Innermost frame first, then globals.
    pub fn lookup(&self, name: &str) -> Option<Value> {
        let top = self.frames.last()?;
        top.get(name).or_else(|| self.frames[0].get(name)).cloned()
    }

    /// Updates an existing binding (innermost frame, then globals) or
    /// creates one in the innermost frame.
    pub fn assign(&mut self, name: &str, value: Value) {
        let depth = self.frames.len();
        if !self.frames[depth - 1].contains_key(name) && self.frames[0].contains_key(name) {
            self.frames[0].insert(name.to_string(), value);
        } else {
            self.frames[depth - 1].insert(name.to_string(), value);
        }
    }

    pub fn push_frame(&mut self, frame: IndexMap<String, Value>) {
        self.frames.push(frame);
    }

    pub fn pop_frame(&mut self) {
        if self.frames.len() > 1 {
            self.frames.pop();
        }
    }

    /// Ids of objects reachable from any frame, following fields.
    pub fn reachable(&self) -> BTreeSet<u64> {
        let mut seen = BTreeSet::new();
        let mut work: Vec<Value> = self.frames.iter().flat_map(|f| f.values().cloned()).collect();
        while let Some(v) = work.pop() {
            match v {
                Value::Object(id) => {
                    if seen.insert(id) {
                        if let Some(o) = self.heap.get(id) {
                            work.extend(o.fields().into_values());
                        }
                    }
                }
                Value::List(items) => work.extend(items),
                _ => {}
            }
        }
        seen
    }

    pub fn count_instances(&self, proto: &str) -> usize {
        self.reachable().into_iter().filter(|id| self.heap.get(*id).is_some_and(|o| o.proto == proto)).count()
    }

    /// Re-instantiates every reachable `proto` object not already using
    /// `strategy`, preserving fields and identity seed, and rewrites all
    /// references to it. Returns the number migrated.
    pub fn migrate_instances(&mut self, proto: &str, strategy: Strategy) -> Result<usize, RuntimeError> {
        let targets: Vec<u64> = self
            .reachable()
            .into_iter()
            .filter(|id| self.heap.get(*id).is_some_and(|o| o.proto == proto && o.strategy() != strategy))
            .collect();
        let mut map = BTreeMap::new();
        for old_id in &targets {
            let old = self.heap.objects.get(old_id).expect("reachable object").clone();
            let new_id = self.heap.fresh_id();
            let mut fresh = ObjectInstance::create(new_id, old.identity_seed, &old.proto, strategy, &self.heap.store_dir)?;
            for (k, v) in old.fields() {
                fresh.set(&k, v)?;
            }
            fresh.freeze();
            self.heap.objects.insert(new_id, fresh);
            map.insert(*old_id, new_id);
        }
        for old_id in map.keys() {
            self.heap.objects.remove(old_id);
        }
        self.replace_all(&map)?;
        Ok(targets.len())
    }

    /// Substitutes object references in every frame and every object.
    pub fn replace_all(&mut self, map: &BTreeMap<u64, u64>) -> Result<(), RuntimeError> {
        if map.is_empty() {
            return Ok(());
        }
        for frame in &mut self.frames {
            for v in frame.values_mut() {
                *v = replace_value(v, map);
            }
        }
        let ids: Vec<u64> = self.heap.objects.keys().copied().collect();
        for id in ids {
            self.heap.objects.get_mut(&id).expect("listed").replace_refs(map)?;
        }
        Ok(())
    }
}

/// Enriched call stack maintained by agents; innermost frame last.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StackTrace {
    pub frames: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_sees_locals_then_globals() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = SymbolTable::new(dir.path().into());
        st.assign("g", Value::Number(1.0));
        st.push_frame(IndexMap::from([("x".to_string(), Value::Number(2.0))]));
        assert_eq!(st.lookup("x"), Some(Value::Number(2.0)));
        assert_eq!(st.lookup("g"), Some(Value::Number(1.0)));
        st.assign("g", Value::Number(3.0));
        st.pop_frame();
        assert_eq!(st.lookup("g"), Some(Value::Number(3.0)));
        assert_eq!(st.lookup("x"), None);
    }

    #[test]
    fn migration_rewrites_references_and_keeps_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = SymbolTable::new(dir.path().into());
        let a = st.heap.alloc("Position", Strategy::HashMap).unwrap();
        let holder = st.heap.alloc("Person", Strategy::HashMap).unwrap();
        st.heap.get_mut(a).unwrap().set("x", Value::Number(4.0)).unwrap();
        st.heap.get_mut(holder).unwrap().set("pos", Value::Object(a)).unwrap();
        st.assign("p", Value::Object(holder));
        st.assign("q", Value::Object(a));
        st.heap.alloc("Position", Strategy::HashMap).unwrap(); // unreachable

        assert_eq!(st.migrate_instances("Position", Strategy::ArrayLike).unwrap(), 1);
        let Some(Value::Object(q)) = st.lookup("q") else { panic!() };
        assert_ne!(q, a);
        let moved = st.heap.get_mut(q).unwrap();
        assert_eq!(moved.identity_seed, a);
        assert_eq!(moved.strategy(), Strategy::ArrayLike);
        assert_eq!(moved.get("x").unwrap(), Some(Value::Number(4.0)));
        assert_eq!(st.heap.get_mut(holder).unwrap().get("pos").unwrap(), Some(Value::Object(q)));
        assert_eq!(st.migrate_instances("Position", Strategy::ArrayLike).unwrap(), 0);
    }
}
