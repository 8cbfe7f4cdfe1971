use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::io::{load_image, to_working_size};
use super::{Label, Sample};

pub const CLASS_DIRS: [(Label, &str); 2] = [(Label::Cracked, "cracked"), (Label::NonCracked, "non-cracked")];

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Files found under a dataset root, per class, in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub cracked: Vec<PathBuf>,
    pub non_cracked: Vec<PathBuf>,
    /// Files that failed to decode, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetIndex {
    /// Lists `<root>/cracked` and `<root>/non-cracked` without decoding.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut index = DatasetIndex { root: root.to_path_buf(), ..Default::default() };
        for (label, dir) in CLASS_DIRS {
            let path = root.join(dir);
            let entries = std::fs::read_dir(&path).map_err(|e| Error::io(&path, e))?;
            let mut files = Vec::new();
            for entry in entries {
                let p = entry.map_err(|e| Error::io(&path, e))?.path();
                let ext = p.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
                if p.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
                    files.push(p);
                }
            }
            files.sort();
            *index.files_mut(label) = files;
        }
        Ok(index)
    }

    pub fn files(&self, label: Label) -> &[PathBuf] {
        match label {
            Label::Cracked => &self.cracked,
            Label::NonCracked => &self.non_cracked,
        }
    }

    fn files_mut(&mut self, label: Label) -> &mut Vec<PathBuf> {
        match label {
            Label::Cracked => &mut self.cracked,
            Label::NonCracked => &mut self.non_cracked,
        }
    }

    /// `(cracked, non-cracked)` file counts.
    pub fn counts(&self) -> (usize, usize) {
        (self.cracked.len(), self.non_cracked.len())
    }
}

/// Decodes every file under `root`, resized to `size x size`. Cracked
/// samples precede non-cracked ones. Undecodable files are skipped, logged,
/// and recorded in the index; a class left empty is an error.
pub fn load_dataset(root: &Path, size: usize) -> Result<(DatasetIndex, Vec<Sample>)> {
    let mut index = DatasetIndex::scan(root)?;
    let mut samples = Vec::new();
    for (label, dir) in CLASS_DIRS {
        let decoded: Vec<(PathBuf, Result<Sample>)> = index
            .files(label)
            .par_iter()
            .map(|p| {
                let r = load_image(p).and_then(|img| to_working_size(&img, size)).map(|image| Sample {
                    image,
                    label,
                    source_id: p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned(),
                });
                (p.clone(), r)
            })
            .collect();
        let mut kept = Vec::new();
        for (p, r) in decoded {
            match r {
                Ok(s) => {
                    kept.push(p);
                    samples.push(s);
                }
                Err(e) => {
                    log::warn!("skipping unreadable file {}: {e}", p.display());
                    index.skipped.push((p, e.to_string()));
                }
            }
        }
        if kept.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory `{}` has no readable images",
                root.join(dir).display()
            )));
        }
        *index.files_mut(label) = kept;
    }
    Ok((index, samples))
}
