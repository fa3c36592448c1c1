//! Output directories that appear only when a command succeeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Work happens in a hidden sibling directory that is renamed into place by
/// [`Staged::commit`] and deleted if dropped uncommitted.
pub struct Staged {
    target: PathBuf,
    work: PathBuf,
    committed: bool,
}

impl Staged {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir()
                && fs::read_dir(target)
                    .with_context(|| format!("{}: cannot list", target.display()))?
                    .next()
                    .is_none();
            if !empty {
                bail!("{}: output exists and is not an empty directory", target.display());
            }
        }
        let name = target
            .file_name()
            .with_context(|| format!("{}: not a usable output path", target.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).with_context(|| format!("{}: cannot create", parent.display()))?;
        let work = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if work.exists() {
            fs::remove_dir_all(&work).with_context(|| format!("{}: cannot clear", work.display()))?;
        }
        fs::create_dir(&work).with_context(|| format!("{}: cannot create", work.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            work,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.work
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir(&self.target).with_context(|| format!("{}: cannot replace", self.target.display()))?;
        }
        fs::rename(&self.work, &self.target)
            .with_context(|| format!("{}: cannot move output into place", self.target.display()))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.work);
        }
    }
}

/// Writes `bytes` to `path` via a temporary sibling file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("{}: cannot write", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("{}: cannot write", path.display()))
}
