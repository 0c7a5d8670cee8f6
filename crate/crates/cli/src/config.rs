//! JSON config files, `--set key.path=value` overrides, and input digests.

use std::fs;
use std::path::{Path, PathBuf};

use gensplat_core::harness::{config_hash, provenance_line};
use gensplat_core::HarnessError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Reads `path` (if any) over the type's defaults, then applies overrides.
/// Keys that the config type does not know are rejected.
pub fn load<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>, sets: &[String]) -> Result<T, HarnessError> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", p.display())))?;
            let user: Value = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("config {}: {e}", p.display())))?;
            let parsed: T = serde_json::from_value(user.clone()).map_err(|e| HarnessError::Config(format!("config {}: {e}", p.display())))?;
            let full = serde_json::to_value(&parsed)?;
            check_known(&user, &full, "")?;
            full
        }
        None => serde_json::to_value(T::default())?,
    };
    for s in sets {
        apply_set(&mut value, s)?;
    }
    serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))
}

fn check_known(user: &Value, full: &Value, prefix: &str) -> Result<(), HarnessError> {
    if let (Value::Object(u), Value::Object(f)) = (user, full) {
        for (k, v) in u {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match f.get(k) {
                None => return Err(HarnessError::Config(format!("unknown config key `{path}`"))),
                Some(fv) => check_known(v, fv, &path)?,
            }
        }
    }
    Ok(())
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a plain string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<(), HarnessError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let unknown = || HarnessError::Config(format!("unknown config key `{path}`"));
    let mut cur = root;
    // inside an unset optional section the defaults are not known here; serde fills them later
    let mut fresh = false;
    for (i, key) in keys.iter().enumerate() {
        if cur.is_null() && i > 0 {
            *cur = Value::Object(Default::default());
            fresh = true;
        }
        let Value::Object(obj) = cur else {
            return Err(HarnessError::Config(format!("`{path}`: `{}` is not a section", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            if !fresh && !obj.contains_key(*key) {
                return Err(unknown());
            }
            obj.insert(key.to_string(), new);
            return Ok(());
        }
        if fresh {
            cur = obj.entry(key.to_string()).or_insert(Value::Null);
        } else {
            cur = obj.get_mut(*key).ok_or_else(unknown)?;
        }
    }
    unreachable!("split yields at least one key")
}

/// SHA-256 over the bytes of each file in order, first 16 hex digits.
pub fn digest_files(paths: &[PathBuf]) -> Result<String, HarnessError> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize())[..16].to_string())
}

pub fn world_files(dir: &Path) -> Vec<PathBuf> {
    ["manifest.json", "scene.gspl", "masks.gten", "concepts.gten"].iter().map(|f| dir.join(f)).collect()
}

/// Sidecar files written next to a binary input, when present.
pub fn with_sidecar(path: &Path) -> Vec<PathBuf> {
    let side = path.with_extension("json");
    if side.exists() {
        vec![path.to_path_buf(), side]
    } else {
        vec![path.to_path_buf()]
    }
}

#[derive(Serialize)]
struct Provenance<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    inputs: &'a [(&'a str, String)],
}

/// Provenance line from the effective config and digests of every input.
pub fn provenance<C: Serialize>(command: &str, config: &C, inputs: &[(&str, String)]) -> String {
    provenance_line(&config_hash(&Provenance { command, config, inputs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Inner {
        x: f64,
        y: Option<Vec<usize>>,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Outer {
        n: usize,
        inner: Inner,
        opt: Option<Inner>,
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c: Outer = load(None, &["n=3".into(), "inner.x=0.5".into(), "inner.y=[1,2]".into(), "opt.x=2".into()]).unwrap();
        assert_eq!(c, Outer { n: 3, inner: Inner { x: 0.5, y: Some(vec![1, 2]) }, opt: Some(Inner { x: 2.0, y: None }) });
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(load::<Outer>(None, &["nn=3".into()]), Err(HarnessError::Config(_))));
        assert!(matches!(load::<Outer>(None, &["n".into()]), Err(HarnessError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"inner": {"z": 1}}"#).unwrap();
        let err = load::<Outer>(Some(&p), &[]).unwrap_err();
        assert!(err.to_string().contains("inner.z"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"n": 7, "inner": {"x": 1.5}}"#).unwrap();
        let c: Outer = load(Some(&p), &["n=8".into()]).unwrap();
        assert_eq!((c.n, c.inner.x), (8, 1.5));
    }
}
