use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::SampleIndex;
use crate::error::{Error, Result};

/// Disjoint train / validation / test id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    #[serde(rename = "validation")]
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    /// Checks pairwise disjointness and membership in `index`.
    pub fn validate(&self, index: &SampleIndex) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, ids) in [("train", &self.train), ("validation", &self.val), ("test", &self.test)] {
            for id in ids {
                if index.get(id).is_none() {
                    return Err(Error::Ingestion(format!("split {name} references unknown id {id}")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Ingestion(format!("id {id} appears more than once across split lists")));
                }
            }
        }
        Ok(())
    }

    /// Seeded shuffle of all index ids partitioned 80:10:10 (validation and
    /// test get at least one sample each when there are three or more).
    pub fn generate(index: &SampleIndex, seed: u64) -> Self {
        let mut ids: Vec<String> = index.ids().map(str::to_string).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = ids.len();
        let tenth = |n: usize| if n >= 3 { ((n as f64 / 10.0).round() as usize).max(1) } else { 0 };
        let (n_val, n_test) = (tenth(n), tenth(n));
        let test = ids.split_off(n - n_test);
        let val = ids.split_off(n - n_test - n_val);
        Self { train: ids, val, test }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }
}

/// Where a split comes from: a JSON file or an internal seeded generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SplitSpec {
    File(PathBuf),
    Generate(u64),
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("generate:") {
            Some(seed) => seed
                .trim()
                .parse()
                .map(SplitSpec::Generate)
                .map_err(|_| Error::Config(format!("split `{s}`: expected generate:<integer seed>"))),
            None if s.is_empty() => Err(Error::Config("empty split specification".into())),
            None => Ok(SplitSpec::File(PathBuf::from(s))),
        }
    }
}

impl TryFrom<String> for SplitSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SplitSpec> for String {
    fn from(s: SplitSpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::File(p) => write!(f, "{}", p.display()),
            SplitSpec::Generate(seed) => write!(f, "generate:{seed}"),
        }
    }
}

/// Loads a split file verbatim (JSON with `train`, `validation`, `test`
/// arrays) or generates one, then validates it against `index`.
pub fn load_split(index: &SampleIndex, spec: &SplitSpec) -> Result<DatasetSplit> {
    let split = match spec {
        SplitSpec::Generate(seed) => DatasetSplit::generate(index, *seed),
        SplitSpec::File(path) => read_split_file(path)?,
    };
    split.validate(index)?;
    Ok(split)
}

fn read_split_file(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Ingestion(format!("split file {}: {e}", path.display())))
}
