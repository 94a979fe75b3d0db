//! Persistent failure-signature knowledge base.
//!
//! Maps a diagnostic signature to pass outcomes observed in past builds, so
//! later builds try the historically successful pass first. The file is
//! written atomically (temp file, then rename); a schema violation is
//! refused loudly rather than silently reset, since resetting would discard
//! accumulated knowledge.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("knowledge base {path} is corrupt ({detail}); move it aside or delete it to re-initialize")]
    Corrupt { path: String, detail: String },
    #[error("failed to access knowledge base {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbEntry {
    pub pass_id: String,
    pub successes: u64,
    pub failures: u64,
    /// Unix seconds of the last writeback touching this entry.
    pub last_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBase {
    pub version: u32,
    pub entries: BTreeMap<String, Vec<KbEntry>>,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        KnowledgeBase {
            version: KB_VERSION,
            entries: BTreeMap::new(),
        }
    }
}

impl KnowledgeBase {
    /// Loads the store; a missing file is an empty store, anything
    /// unreadable as the current schema is refused.
    pub fn load(path: &Path) -> Result<KnowledgeBase, KbError> {
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(KnowledgeBase::default());
            }
            Err(source) => {
                return Err(KbError::Io {
                    path: path.display().to_string(),
                    source,
                });
            }
        };
        let kb: KnowledgeBase = serde_json::from_str(&text).map_err(|e| KbError::Corrupt {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if kb.version != KB_VERSION {
            return Err(KbError::Corrupt {
                path: path.display().to_string(),
                detail: format!("unsupported version {}", kb.version),
            });
        }
        Ok(kb)
    }

    /// Persists atomically: the full store is written to a sibling temp file
    /// and renamed over the target, so readers see either the old or the new
    /// content, never a torn write.
    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let io_err = |source: std::io::Error| KbError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let mut text = serde_json::to_string_pretty(self).expect("kb serializes");
        text.push('\n');
        let tmp = temp_sibling(path);
        std::fs::write(&tmp, text).map_err(io_err)?;
        std::fs::rename(&tmp, path).map_err(io_err)
    }

    /// Records one observed outcome for (signature, pass).
    pub fn record(&mut self, signature: &str, pass_id: &str, success: bool, now: u64) {
        let entries = self.entries.entry(signature.to_string()).or_default();
        let entry = match entries.iter_mut().find(|e| e.pass_id == pass_id) {
            Some(entry) => entry,
            None => {
                entries.push(KbEntry {
                    pass_id: pass_id.to_string(),
                    successes: 0,
                    failures: 0,
                    last_used: 0,
                });
                entries.last_mut().expect("just pushed")
            }
        };
        if success {
            entry.successes += 1;
        } else {
            entry.failures += 1;
        }
        entry.last_used = now;
    }

    /// Recommendation order for one signature: successes descending, then
    /// failures ascending, then pass id.
    pub fn recommend(&self, signature: &str) -> Vec<String> {
        let Some(entries) = self.entries.get(signature) else {
            return Vec::new();
        };
        let mut ranked: Vec<&KbEntry> = entries.iter().collect();
        ranked.sort_by(|a, b| {
            b.successes
                .cmp(&a.successes)
                .then(a.failures.cmp(&b.failures))
                .then(a.pass_id.cmp(&b.pass_id))
        });
        ranked.into_iter().map(|e| e.pass_id.clone()).collect()
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "kb.json".to_string());
    path.with_file_name(format!(".{name}.tmp.{}", std::process::id()))
}

/// Default store location: `~/.portir/kb.json`, falling back to the working
/// directory when no home is known.
pub fn default_kb_path() -> PathBuf {
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".portir").join("kb.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_is_an_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KnowledgeBase::load(&dir.path().join("kb.json")).unwrap();
        assert!(kb.entries.is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        let mut kb = KnowledgeBase::default();
        kb.record("UnsupportedOp/Mod/float", "expand_mod_float", true, 7);
        kb.save(&path).unwrap();
        let back = KnowledgeBase::load(&path).unwrap();
        assert_eq!(back, kb);
    }

    #[test]
    fn corrupt_content_is_refused_not_reset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        std::fs::write(&path, "{\"version\": 1, \"entries\": 3}").unwrap();
        let err = KnowledgeBase::load(&path).unwrap_err();
        assert!(matches!(err, KbError::Corrupt { .. }), "{err}");
        // The original bytes are untouched.
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "{\"version\": 1, \"entries\": 3}"
        );
    }

    #[test]
    fn wrong_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        std::fs::write(&path, "{\"version\": 2, \"entries\": {}}").unwrap();
        assert!(matches!(
            KnowledgeBase::load(&path),
            Err(KbError::Corrupt { .. })
        ));
    }

    #[test]
    fn recommendation_order_is_successes_then_failures_then_id() {
        let mut kb = KnowledgeBase::default();
        let sig = "UnsupportedOp/Mod/int";
        kb.record(sig, "b_pass", true, 1);
        kb.record(sig, "a_pass", true, 2);
        kb.record(sig, "a_pass", false, 3);
        kb.record(sig, "c_pass", false, 4);
        // b_pass: 1 success 0 failures; a_pass: 1 success 1 failure;
        // c_pass: 0 successes 1 failure.
        assert_eq!(kb.recommend(sig), vec!["b_pass", "a_pass", "c_pass"]);
        assert!(kb.recommend("unseen/sig/-").is_empty());
    }

    #[test]
    fn counters_never_decrease() {
        let mut kb = KnowledgeBase::default();
        kb.record("s", "p", true, 1);
        kb.record("s", "p", false, 2);
        kb.record("s", "p", true, 3);
        let entry = &kb.entries["s"][0];
        assert_eq!((entry.successes, entry.failures), (2, 1));
        assert_eq!(entry.last_used, 3);
    }

    #[test]
    fn interrupted_write_leaves_the_old_file_intact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        let mut kb = KnowledgeBase::default();
        kb.record("s", "p", true, 1);
        kb.save(&path).unwrap();
        // Simulate a crash after the temp write but before the rename: the
        // temp file exists alongside the target, which still parses.
        let tmp = dir.path().join(".kb.json.tmp.9999");
        std::fs::write(&tmp, "half-written garbag").unwrap();
        let back = KnowledgeBase::load(&path).unwrap();
        assert_eq!(back, kb);
    }
}
