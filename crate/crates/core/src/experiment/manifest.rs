use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::PairedUtterance;
use crate::dsp::{load_wav, resample, Waveform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: PathBuf,
    #[serde(default)]
    pub degraded_path: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "train".into()
}

/// Utterance list stored as tab-separated text (with a header row) or as
/// JSON lines, chosen by the `.jsonl` extension. Relative paths in the
/// file are relative to the file's directory; in memory they are resolved.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

impl Manifest {
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidArgument(format!("duplicate utterance id {:?}", w[0].id)));
        }
        if let Some(e) = entries.iter().find(|e| e.id.is_empty() || e.id.contains(['/', '\\', '\t'])) {
            return Err(Error::InvalidArgument(format!("unusable utterance id {:?}", e.id)));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one split, or all of them.
    pub fn split(&self, split: Option<&str>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<ManifestEntry> = Vec::new();
        if is_jsonl(path) {
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(serde_json::from_str(&line).map_err(|e| {
                    Error::InvalidArgument(format!("{} line {}: {e}", path.display(), n + 1))
                })?);
            }
        } else {
            let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(file);
            for row in reader.deserialize() {
                entries.push(row.map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?);
            }
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut entries {
            e.clean_path = base.join(&e.clean_path);
            if let Some(d) = e.degraded_path.as_mut() {
                *d = base.join(&*d);
            }
        }
        Self::new(entries)
    }

    /// Writes the manifest; paths under the file's directory are stored
    /// relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
        let entries: Vec<ManifestEntry> = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                id: e.id.clone(),
                clean_path: rel(&e.clean_path),
                degraded_path: e.degraded_path.as_deref().map(rel),
                split: e.split.clone(),
            })
            .collect();
        let mut out: Vec<u8> = Vec::new();
        if is_jsonl(path) {
            for e in &entries {
                serde_json::to_writer(&mut out, e)?;
                out.push(b'\n');
            }
        } else {
            let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(&mut out);
            for e in &entries {
                w.serialize(e)
                    .map_err(|e| Error::InvalidArgument(format!("cannot write manifest row: {e}")))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

fn load_at_rate(path: &Path, rate: u32) -> Result<Waveform> {
    let w = load_wav(path)?;
    if w.sample_rate == rate {
        Ok(w)
    } else {
        resample(&w, rate)
    }
}

/// Loads audio for training. Degraded audio is required when
/// `need_degraded` is set and trimmed or padded to the clean length.
pub fn load_pairs(entries: &[&ManifestEntry], sample_rate: u32, need_degraded: bool) -> Result<Vec<PairedUtterance>> {
    if need_degraded {
        if let Some(e) = entries.iter().find(|e| e.degraded_path.is_none()) {
            return Err(Error::Dependency(format!(
                "utterance {} has no degraded audio; run `degrade` first",
                e.id
            )));
        }
    }
    entries
        .iter()
        .map(|e| {
            let clean = load_at_rate(&e.clean_path, sample_rate)?;
            let degraded = match &e.degraded_path {
                Some(p) => Some(load_at_rate(p, sample_rate)?.fit_to_len(clean.len())),
                None => None,
            };
            Ok(PairedUtterance {
                id: e.id.clone(),
                clean,
                degraded,
            })
        })
        .collect()
}
