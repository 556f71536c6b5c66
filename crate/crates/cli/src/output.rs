//! Output bookkeeping. Every file a command writes goes through [`Outputs`];
//! if the command fails, the files it created are removed again.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub struct Outputs {
    root: PathBuf,
    created_files: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(root: &Path) -> CliResult<Self> {
        let mut out = Self {
            root: root.to_path_buf(),
            created_files: Vec::new(),
            created_dirs: Vec::new(),
            committed: false,
        };
        out.ensure_dir(root)?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn ensure_dir(&mut self, dir: &Path) -> CliResult<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        for d in missing.into_iter().rev() {
            std::fs::create_dir(&d)
                .map_err(|e| CliError::data(format!("cannot create {}: {e}", d.display())))?;
            self.created_dirs.push(d);
        }
        Ok(())
    }

    /// Writes `bytes` to `rel` under the output root, creating parent directories.
    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        self.created_files.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Keeps everything written so far.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.created_files)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.created_files.iter().rev() {
            let _ = std::fs::remove_file(f);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
    }
}

/// Serializes rows with a header into a CSV string.
pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::data(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("out");
        {
            let mut out = Outputs::new(&root).unwrap();
            out.write("a/b/c.txt", b"x").unwrap();
            out.write("top.txt", b"y").unwrap();
            assert!(root.join("a/b/c.txt").exists());
        }
        assert!(!root.exists());

        std::fs::create_dir(&root).unwrap();
        std::fs::write(root.join("keep.txt"), b"k").unwrap();
        {
            let mut out = Outputs::new(&root).unwrap();
            out.write("new.txt", b"n").unwrap();
        }
        assert!(root.join("keep.txt").exists());
        assert!(!root.join("new.txt").exists());

        let mut out = Outputs::new(&root).unwrap();
        out.write("new.txt", b"n").unwrap();
        assert_eq!(out.commit().len(), 1);
        assert!(root.join("new.txt").exists());
    }

    #[test]
    fn csv_quotes_when_needed() {
        let s = csv_string(&["a", "b"], vec![vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
    }
}
