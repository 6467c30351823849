//! Word cluster lexicons read from `word<TAB>cluster-id` files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLexicon {
    pub name: String,
    pub clusters: BTreeMap<String, String>,
}

impl ClusterLexicon {
    pub fn from_tsv(name: &str, text: &str) -> Result<Self> {
        let mut clusters = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, id) = line.split_once('\t').ok_or_else(|| Error::Format {
                line: i + 1,
                message: "expected word<TAB>cluster-id".into(),
            })?;
            let id = id.trim();
            if word.is_empty() || id.is_empty() {
                return Err(Error::Format {
                    line: i + 1,
                    message: "empty word or cluster id".into(),
                });
            }
            clusters.insert(word.to_lowercase(), id.to_string());
        }
        Ok(ClusterLexicon {
            name: name.to_string(),
            clusters,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clusters".into());
        Self::from_tsv(&name, &std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.clusters
            .iter()
            .map(|(w, c)| format!("{w}\t{c}\n"))
            .collect()
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.clusters.get(word).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}
