//! Artifact writing. Files go through a temporary file in the target
//! directory and a rename, so concurrent runs never see partial output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, Context, Result};

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let err = |source| CliError::Write { path: path.clone(), source };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        tmp.write_all(bytes).map_err(err)?;
        tmp.as_file().sync_all().map_err(err)?;
        tmp.persist(&path).map_err(|e| err(e.error))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = flab_core::json::to_string(value).context(name)?;
        self.write(name, text.as_bytes())
    }

    /// Writes rows of already formatted cells under a fixed header.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let err = |e: csv::Error| CliError::Write { path: self.dir.join(name), source: e.into() };
            w.write_record(header).map_err(err)?;
            for row in rows {
                w.write_record(row).map_err(err)?;
            }
            w.flush().map_err(|source| CliError::Write { path: self.dir.join(name), source })?;
        }
        self.write(name, &buf)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
