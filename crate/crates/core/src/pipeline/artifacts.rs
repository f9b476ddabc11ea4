use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learning::PredictionSet;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Stamp {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Stamp {
            config_hash,
            seed,
            version: VERSION.to_string(),
        }
    }

    fn line(&self) -> String {
        format!(
            "config_hash={} seed={} version={}",
            self.config_hash, self.seed, self.version
        )
    }

    /// Header line in the comment syntax of the file's format.
    pub fn header(&self, path: &Path) -> Result<String> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        Ok(match ext {
            "tsv" | "csv" => format!("# {}\n", self.line()),
            "md" => format!("<!-- {} -->\n", self.line()),
            "dot" => format!("// {}\n", self.line()),
            "lp" => format!("\\ {}\n", self.line()),
            "jsonl" => format!(
                "{}\n",
                serde_json::to_string(&serde_json::json!({ "provenance": self }))?
            ),
            _ => return Err(Error::Data(format!("no header syntax for `{}`", path.display()))),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    provenance: Option<Stamp>,
    artifacts: BTreeMap<String, String>,
}

/// Writes stamped artifacts under one directory and records their digests.
pub struct ArtifactWriter {
    root: PathBuf,
    stamp: Stamp,
    written: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>, stamp: Stamp) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ArtifactWriter {
            root,
            stamp,
            written: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    /// Text artifact with a provenance comment as its first line.
    pub fn text(&mut self, rel: &str, body: &str) -> Result<()> {
        let mut s = self.stamp.header(Path::new(rel))?;
        s.push_str(body);
        self.put(rel, s.as_bytes())
    }

    /// JSON artifact: the body's fields plus a `provenance` field.
    pub fn json<T: Serialize>(&mut self, rel: &str, body: &T) -> Result<()> {
        let mut map = Map::new();
        map.insert("provenance".into(), serde_json::to_value(&self.stamp)?);
        match serde_json::to_value(body)? {
            Value::Object(m) => {
                for (k, v) in m {
                    if k == "provenance" {
                        return Err(Error::Data(format!("{rel}: body already has a provenance field")));
                    }
                    map.insert(k, v);
                }
            }
            other => {
                map.insert("data".into(), other);
            }
        }
        let mut s = serde_json::to_string_pretty(&Value::Object(map))?;
        s.push('\n');
        self.put(rel, s.as_bytes())
    }

    /// Merge this command's digests into `manifest.json`.
    pub fn finish(self, command: &str) -> Result<Vec<PathBuf>> {
        let path = self.root.join("manifest.json");
        let mut manifest: BTreeMap<String, ManifestEntry> = match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
            Err(_) => BTreeMap::new(),
        };
        let files = self.written.keys().map(|k| self.root.join(k)).collect();
        manifest.insert(
            command.to_string(),
            ManifestEntry {
                provenance: Some(self.stamp),
                artifacts: self.written,
            },
        );
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(files)
    }
}

/// Drop a leading `{"provenance": ...}` line from JSONL.
pub fn strip_jsonl_header(src: &str) -> &str {
    match src.split_once('\n') {
        Some((first, rest)) if first.starts_with("{\"provenance\"") => rest,
        None if src.starts_with("{\"provenance\"") => "",
        _ => src,
    }
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PredictionSet::from_jsonl(strip_jsonl_header(&src))
}

/// JSON with its `provenance` field removed.
pub fn strip_json_provenance(src: &str) -> Result<String> {
    let mut v: Value = serde_json::from_str(src)?;
    if let Value::Object(m) = &mut v {
        m.remove("provenance");
    }
    Ok(serde_json::to_string(&v)?)
}
