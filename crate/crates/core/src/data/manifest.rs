//! Dataset layout `root/{x,y}/{train,test}/*.{png,jpg,jpeg}` and its JSON manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raw::Domain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_x: usize,
    pub test_x: usize,
    pub train_y: usize,
    pub test_y: usize,
    /// Number of unpaired `(x, y)` combinations available for testing.
    pub test_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train_x: Vec<String>,
    pub train_y: Vec<String>,
    pub test_x: Vec<String>,
    pub test_y: Vec<String>,
    pub counts: SplitCounts,
}

impl DatasetManifest {
    /// Builds a manifest, sorting ids and checking train/test disjointness.
    pub fn new(
        mut train_x: Vec<String>,
        mut train_y: Vec<String>,
        mut test_x: Vec<String>,
        mut test_y: Vec<String>,
    ) -> Result<Self> {
        for ids in [&mut train_x, &mut train_y, &mut test_x, &mut test_y] {
            ids.sort();
            ids.dedup();
        }
        for (domain, train, test) in [("x", &train_x, &test_x), ("y", &train_y, &test_y)] {
            let train: BTreeSet<_> = train.iter().collect();
            if let Some(id) = test.iter().find(|id| train.contains(id)) {
                return Err(Error::Dataset(format!(
                    "id '{id}' appears in both {domain}/train and {domain}/test"
                )));
            }
        }
        let counts = SplitCounts {
            train_x: train_x.len(),
            test_x: test_x.len(),
            train_y: train_y.len(),
            test_y: test_y.len(),
            test_pairs: test_x.len() * test_y.len(),
        };
        Ok(Self {
            train_x,
            train_y,
            test_x,
            test_y,
            counts,
        })
    }

    pub fn ids(&self, domain: Domain, split: Split) -> &[String] {
        match (domain, split) {
            (Domain::Photo, Split::Train) => &self.train_x,
            (Domain::Photo, Split::Test) => &self.test_x,
            (Domain::Portrait, Split::Train) => &self.train_y,
            (Domain::Portrait, Split::Test) => &self.test_y,
        }
    }

    /// Checks the stored counts agree with the id lists.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::new(
            self.train_x.clone(),
            self.train_y.clone(),
            self.test_x.clone(),
            self.test_y.clone(),
        )?;
        if fresh.counts != self.counts || fresh.train_x.len() != self.train_x.len() {
            return Err(Error::Dataset("manifest counts do not match id lists".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A scanned dataset directory: manifest plus the file backing each id.
#[derive(Debug, Clone)]
pub struct ScannedDataset {
    pub manifest: DatasetManifest,
    pub files: BTreeMap<(Domain, Split, String), PathBuf>,
}

impl ScannedDataset {
    pub fn path(&self, domain: Domain, split: Split, id: &str) -> Option<&Path> {
        self.files
            .get(&(domain, split, id.to_string()))
            .map(PathBuf::as_path)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Scans a dataset root. Missing split directories count as empty.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<ScannedDataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut files = BTreeMap::new();
    let mut lists: BTreeMap<(Domain, Split), Vec<String>> = BTreeMap::new();
    for domain in [Domain::Photo, Domain::Portrait] {
        for split in [Split::Train, Split::Test] {
            let dir = root.join(domain.dir_name()).join(split.dir_name());
            let ids = lists.entry((domain, split)).or_default();
            if !dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if !path.is_file() || !is_image(&path) {
                    continue;
                }
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Dataset(format!("bad file name {}", path.display())))?
                    .to_string();
                if files.insert((domain, split, id.clone()), path.clone()).is_some() {
                    return Err(Error::Dataset(format!(
                        "duplicate id '{id}' in {}",
                        dir.display()
                    )));
                }
                ids.push(id);
            }
        }
    }
    let mut take = |d, s| lists.remove(&(d, s)).unwrap_or_default();
    let manifest = DatasetManifest::new(
        take(Domain::Photo, Split::Train),
        take(Domain::Portrait, Split::Train),
        take(Domain::Photo, Split::Test),
        take(Domain::Portrait, Split::Test),
    )?;
    Ok(ScannedDataset { manifest, files })
}
