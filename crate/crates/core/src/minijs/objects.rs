//! Object instances and their storage strategies.
//!
//! Invariant shared by all strategies: reading a field returns the last
//! value written to it. An object's `identity_seed` is the id it was first
//! created with and survives migration to another strategy.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::nvm::RuntimeError;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "HashMapInstance")]
    HashMap,
    #[serde(rename = "ArrayLikeInstance")]
    ArrayLike,
    #[serde(rename = "PersistentInstance")]
    Persistent,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::HashMap => "HashMapInstance",
            Strategy::ArrayLike => "ArrayLikeInstance",
            Strategy::Persistent => "PersistentInstance",
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        [Strategy::HashMap, Strategy::ArrayLike, Strategy::Persistent].into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// On-disk form of a persistent object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredObject {
    pub proto: String,
    pub fields: IndexMap<String, Value>,
    #[serde(rename = "identitySeed")]
    pub identity_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    Map(IndexMap<String, Value>),
    /// Slot layout is open until `frozen`, then fixed.
    Slots { index: IndexMap<String, usize>, slots: Vec<Value>, frozen: bool },
    /// Write-through file-backed map; `cache` mirrors the file.
    Persistent { path: PathBuf, cache: IndexMap<String, Value> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: u64,
    pub proto: String,
    pub identity_seed: u64,
    pub storage: Storage,
}

pub fn store_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("{seed}.json"))
}

fn io_err(path: &Path, e: impl fmt::Display) -> RuntimeError {
    RuntimeError::new(format!("object store {}: {e}", path.display()))
}

/// Writes via a temporary file and rename so readers never see a torn file.
pub fn write_stored(path: &Path, obj: &StoredObject) -> Result<(), RuntimeError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(obj).map_err(|e| io_err(path, e))?;
    fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_stored(path: &Path) -> Result<Option<StoredObject>, RuntimeError> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| io_err(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path, e)),
    }
}

impl ObjectInstance {
    /// A fresh object. Persistent objects adopt an existing store file for
    /// their seed, or create an empty one.
    pub fn create(id: u64, seed: u64, proto: &str, strategy: Strategy, store_dir: &Path) -> Result<Self, RuntimeError> {
        let storage = match strategy {
            Strategy::HashMap => Storage::Map(IndexMap::new()),
            Strategy::ArrayLike => Storage::Slots { index: IndexMap::new(), slots: Vec::new(), frozen: false },
            Strategy::Persistent => {
                let path = store_path(store_dir, seed);
                let cache = match read_stored(&path)? {
                    Some(stored) => stored.fields,
                    None => {
                        let empty = StoredObject { proto: proto.to_string(), fields: IndexMap::new(), identity_seed: seed };
                        write_stored(&path, &empty)?;
                        IndexMap::new()
                    }
                };
                Storage::Persistent { path, cache }
            }
        };
        Ok(ObjectInstance { id, proto: proto.to_string(), identity_seed: seed, storage })
    }

    pub fn strategy(&self) -> Strategy {
        match self.storage {
            Storage::Map(_) => Strategy::HashMap,
            Storage::Slots { .. } => Strategy::ArrayLike,
            Storage::Persistent { .. } => Strategy::Persistent,
        }
    }

    /// Fixes the slot layout of array-like objects; no-op otherwise.
    pub fn freeze(&mut self) {
        if let Storage::Slots { frozen, .. } = &mut self.storage {
            *frozen = true;
        }
    }

    /// Persistent objects reload their state before every read.
    pub fn get(&mut self, field: &str) -> Result<Option<Value>, RuntimeError> {
        match &mut self.storage {
            Storage::Map(m) => Ok(m.get(field).cloned()),
            Storage::Slots { index, slots, .. } => Ok(index.get(field).map(|i| slots[*i].clone())),
            Storage::Persistent { path, cache } => {
                if let Some(stored) = read_stored(path)? {
                    *cache = stored.fields;
                }
                Ok(cache.get(field).cloned())
            }
        }
    }

    /// Persistent objects write through after every store.
    pub fn set(&mut self, field: &str, value: Value) -> Result<(), RuntimeError> {
        match &mut self.storage {
            Storage::Map(m) => {
                m.insert(field.to_string(), value);
                Ok(())
            }
            Storage::Slots { index, slots, frozen } => match index.get(field) {
                Some(i) => {
                    slots[*i] = value;
                    Ok(())
                }
                None if *frozen => Err(RuntimeError::new(format!(
                    "{} has a fixed layout without field {field}",
                    self.proto
                ))),
                None => {
                    index.insert(field.to_string(), slots.len());
                    slots.push(value);
                    Ok(())
                }
            },
            Storage::Persistent { path, cache } => {
                cache.insert(field.to_string(), value);
                let stored = StoredObject { proto: self.proto.clone(), fields: cache.clone(), identity_seed: self.identity_seed };
                write_stored(path, &stored)
            }
        }
    }

    /// All fields in insertion order (cached state for persistent objects).
    pub fn fields(&self) -> IndexMap<String, Value> {
        match &self.storage {
            Storage::Map(m) => m.clone(),
            Storage::Slots { index, slots, .. } => index.iter().map(|(k, i)| (k.clone(), slots[*i].clone())).collect(),
            Storage::Persistent { cache, .. } => cache.clone(),
        }
    }

    /// Rewrites every field holding a key of `map` to the mapped object.
    pub fn replace_refs(&mut self, map: &BTreeMap<u64, u64>) -> Result<(), RuntimeError> {
        for (name, value) in self.fields() {
            let replaced = replace_value(&value, map);
            if replaced != value {
                self.set(&name, replaced)?;
            }
        }
        Ok(())
    }
}

/// Substitutes object references inside a value (lists included).
pub fn replace_value(value: &Value, map: &BTreeMap<u64, u64>) -> Value {
    match value {
        Value::Object(id) => Value::Object(*map.get(id).unwrap_or(id)),
        Value::List(items) => Value::List(items.iter().map(|v| replace_value(v, map)).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::HashMap, Strategy::ArrayLike, Strategy::Persistent] {
            assert_eq!(Strategy::parse(s.name()), Some(s));
        }
        assert_eq!(Strategy::parse("Nope"), None);
    }

    #[test]
    fn array_like_layout_freezes() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = ObjectInstance::create(1, 1, "P", Strategy::ArrayLike, dir.path()).unwrap();
        o.set("x", Value::Number(1.0)).unwrap();
        o.freeze();
        o.set("x", Value::Number(2.0)).unwrap();
        assert_eq!(o.get("x").unwrap(), Some(Value::Number(2.0)));
        assert!(o.set("y", Value::Null).is_err());
    }

    #[test]
    fn persistent_cold_start_creates_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let o = ObjectInstance::create(4, 4, "Node", Strategy::Persistent, dir.path()).unwrap();
        assert!(o.fields().is_empty());
        let stored = read_stored(&store_path(dir.path(), 4)).unwrap().unwrap();
        assert_eq!(stored, StoredObject { proto: "Node".into(), fields: IndexMap::new(), identity_seed: 4 });
    }

    #[test]
    fn persistent_file_schema() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = ObjectInstance::create(2, 2, "Node", Strategy::Persistent, dir.path()).unwrap();
        o.set("value", Value::Number(7.0)).unwrap();
        let raw: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(store_path(dir.path(), 2)).unwrap()).unwrap();
        assert_eq!(raw["proto"], "Node");
        assert_eq!(raw["identitySeed"], 2);
        assert_eq!(raw["fields"]["value"], serde_json::json!({"t": "num", "v": 7.0}));
    }
}
