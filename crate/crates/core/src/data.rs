//! Dataset manifests and sample sources.
//!
//! A manifest is a UTF-8 text file with one record per line:
//! `<relative_image_path>\t<age_group>\t<male|female>`. Paths are relative to
//! the manifest's directory. Blank lines and lines starting with `#` are
//! skipped.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::sync_channel;

use crate::age::NUM_GROUPS;
use crate::error::{Error, Result};
use crate::image_io::load_image;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(format!("unknown gender `{other}`")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub age_group: usize,
    pub gender: Gender,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn group_counts(&self) -> [usize; NUM_GROUPS] {
        let mut counts = [0; NUM_GROUPS];
        for e in &self.entries {
            counts[e.age_group] += 1;
        }
        counts
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

fn parse_row(line: &str, row: usize, root: &Path) -> Result<ManifestEntry> {
    let bad = |message: String| Error::Manifest { row, message };
    let fields: Vec<&str> = line.split('\t').collect();
    let [path, group, gender] = fields[..] else {
        return Err(bad(format!(
            "expected 3 tab-separated fields, found {}",
            fields.len()
        )));
    };
    let age_group: usize = group
        .trim()
        .parse()
        .map_err(|_| bad(format!("age group `{group}` is not an integer")))?;
    if age_group >= NUM_GROUPS {
        return Err(bad(format!(
            "age group {age_group} is out of range 0..{NUM_GROUPS}"
        )));
    }
    let gender = gender.trim().parse::<Gender>().map_err(bad)?;
    let path = root.join(path.trim());
    if !path.is_file() {
        return Err(bad(format!("image {} does not exist", path.display())));
    }
    Ok(ManifestEntry {
        path,
        age_group,
        gender,
    })
}

/// Parse a manifest, keeping only rows of `gender` when given.
pub fn load_manifest(path: &Path, gender: Option<Gender>) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = parse_row(line, i + 1, root)?;
        if gender.is_none_or(|g| g == entry.gender) {
            entries.push(entry);
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(DatasetManifest {
        entries,
        split: Split::Train,
    })
}

/// Write a manifest for entries whose paths are relative to `dir`.
pub fn write_manifest(dir: &Path, rows: &[(String, usize, Gender)]) -> Result<PathBuf> {
    let mut text = String::new();
    for (path, group, gender) in rows {
        text.push_str(&format!("{path}\t{group}\t{gender}\n"));
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Random-access labelled images.
pub trait SampleSource<T>: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Image and its age group.
    fn load(&self, index: usize) -> Result<(Tensor<T>, usize)>;
}

/// Images held in memory.
pub struct InMemory<T> {
    pub samples: Vec<(Tensor<T>, usize)>,
}

impl<T: Scalar> SampleSource<T> for InMemory<T> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn load(&self, index: usize) -> Result<(Tensor<T>, usize)> {
        Ok(self.samples[index].clone())
    }
}

/// Images decoded from disk on demand.
pub struct ManifestSource {
    pub manifest: DatasetManifest,
    pub image_size: usize,
}

impl<T: Scalar> SampleSource<T> for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn load(&self, index: usize) -> Result<(Tensor<T>, usize)> {
        let e = &self.manifest.entries[index];
        Ok((load_image(&e.path, self.image_size)?, e.age_group))
    }
}

/// Load `order` in batches of `batch_size` on a background thread, handing
/// each batch to `consume` on the calling thread. At most `depth` batches are
/// decoded ahead of consumption.
pub fn for_each_batch<T, S, F>(
    source: &S,
    order: &[usize],
    batch_size: usize,
    depth: usize,
    mut consume: F,
) -> Result<()>
where
    T: Scalar,
    S: SampleSource<T> + ?Sized,
    F: FnMut(Vec<(Tensor<T>, usize)>) -> Result<bool>,
{
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Result<Vec<(Tensor<T>, usize)>>>(depth.max(1));
        scope.spawn(move || {
            for chunk in order.chunks(batch_size) {
                let batch = chunk
                    .iter()
                    .map(|&i| source.load(i))
                    .collect::<Result<Vec<_>>>();
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        for batch in rx {
            if !consume(batch?)? {
                break;
            }
        }
        Ok(())
    })
}
