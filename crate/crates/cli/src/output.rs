//! Input checks and all-or-nothing output files.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::CliError;

/// Fails with a bad-input error unless every path names a readable file.
pub fn require_files(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if p.as_os_str() == "-" {
            continue;
        }
        if !p.is_file() {
            return Err(CliError::input(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Files staged in temporaries next to their destinations and renamed into
/// place together by [`Outputs::commit`]. Dropping without committing leaves
/// no trace.
#[derive(Default)]
pub struct Outputs {
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let dir = parent_of(path);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::failure(format!("{}: {e}", dir.display())))?;
        let mut tmp = NamedTempFile::new_in(&dir)
            .map_err(|e| CliError::failure(format!("{}: {e}", dir.display())))?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.flush())
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (tmp, path) in self.staged {
            tmp.persist(&path)
                .map_err(|e| CliError::failure(format!("{}: {}", path.display(), e.error)))?;
            log::info!("wrote {}", path.display());
        }
        Ok(())
    }
}

/// Appends `suffix` to the file name of `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}
