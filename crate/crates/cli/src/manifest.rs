//! Tab-separated utterance manifests.
//!
//! Columns: `id audio video label split features`, with `-` for an absent
//! video or feature path. Relative paths are resolved against the
//! manifest's own directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use avwws::{Error, Result};

pub const HEADER: &str = "id\taudio\tvideo\tlabel\tsplit\tfeatures";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            _ => Err(Error::Config(format!("unknown split {s:?}; expected train, dev or eval"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub audio: PathBuf,
    pub video: Option<PathBuf>,
    pub label: u8,
    pub split: Split,
    /// Normalised audio features, once featurized.
    pub features: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

fn resolve(base: &Path, field: &str) -> Option<PathBuf> {
    (field != "-").then(|| base.join(field))
}

/// Path as written into a manifest stored in `base`: relative when it
/// lies under `base`, absolute otherwise.
fn relative(base: &Path, p: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (base, p) = (abs(base), abs(p));
    p.strip_prefix(&base).unwrap_or(&p).display().to_string()
}

/// Directory a manifest at `path` resolves its relative paths against.
pub fn dir_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

impl Manifest {
    /// Parses manifest text; relative paths are joined onto `base`. Does not
    /// touch the file system.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == HEADER => {}
            _ => return Err(Error::Input(format!("manifest must start with the header {HEADER:?}"))),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Input(format!("manifest line {}: {m}: {line:?}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [id, audio, video, label, split, features] = f.as_slice() else {
                return Err(bad("expected 6 tab-separated fields"));
            };
            if id.is_empty() || id.contains(['/', '\\']) {
                return Err(bad("bad utterance id"));
            }
            let label = match *label {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad("label must be 0 or 1")),
            };
            records.push(Record {
                id: id.to_string(),
                audio: resolve(base, audio).ok_or_else(|| bad("audio path is required"))?,
                video: resolve(base, video),
                label,
                split: split.parse().map_err(|_| bad("split must be train, dev or eval"))?,
                features: resolve(base, features),
            });
        }
        let m = Self { records };
        m.check_unique()?;
        Ok(m)
    }

    /// Reads a manifest and checks that every referenced file exists,
    /// reporting all missing files at once.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        let m = Self::parse(&text, dir_of(path))?;
        m.check_files()?;
        Ok(m)
    }

    pub fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Input(format!("duplicate utterance id {:?} in manifest", r.id)));
            }
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<()> {
        let mut missing = Vec::new();
        for r in &self.records {
            let paths = [Some(&r.audio), r.video.as_ref(), r.features.as_ref()];
            for p in paths.into_iter().flatten() {
                if !p.is_file() {
                    missing.push(format!("  {}: {}", r.id, p.display()));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "{} referenced files are missing:\n{}",
                missing.len(),
                missing.join("\n")
            )))
        }
    }

    /// Text form with paths made relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut s = format!("{HEADER}\n");
        let opt = |p: &Option<PathBuf>| p.as_deref().map_or("-".to_string(), |p| relative(base, p));
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.id,
                relative(base, &r.audio),
                opt(&r.video),
                r.label,
                r.split,
                opt(&r.features)
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_unique()?;
        let text = self.to_text(dir_of(path));
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}
