//! Corpus manifests: one `utterance_id<TAB>speaker_id<TAB>path` per line.
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl CorpusManifest {
    pub fn new(split: Split, utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate utterance id '{}'",
                    u.id
                )));
            }
        }
        Ok(Self { split, utterances })
    }

    /// Sorted distinct speaker ids; a speaker's index is its class label.
    pub fn speakers(&self) -> Vec<String> {
        self.utterances
            .iter()
            .map(|u| u.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn to_text(&self) -> String {
        self.utterances
            .iter()
            .map(|u| format!("{}\t{}\t{}\n", u.id, u.speaker, u.path.display()))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut utterances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: &str| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, speaker, file] = fields.as_slice() else {
                return Err(err("expected utterance_id<TAB>speaker_id<TAB>path"));
            };
            if id.is_empty() || speaker.is_empty() || file.is_empty() {
                return Err(err("empty field"));
            }
            let file = Path::new(file);
            utterances.push(Utterance {
                id: id.to_string(),
                speaker: speaker.to_string(),
                path: if file.is_absolute() {
                    file.to_path_buf()
                } else {
                    base.join(file)
                },
            });
        }
        Self::new(split, utterances)
    }
}
