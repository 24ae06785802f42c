//! Output files are written to a temporary file next to the target and
//! renamed into place, so a failed command never leaves a partial file.

use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use tempfile::NamedTempFile;

fn temp_beside(path: &Path) -> Result<NamedTempFile> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = temp_beside(path)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Stdout, or a file that only appears once [`Sink::finish`] succeeds.
pub enum Sink {
    Stdout(io::StdoutLock<'static>),
    File(NamedTempFile, std::path::PathBuf),
}

impl Sink {
    pub fn new(path: Option<&Path>) -> Result<Sink> {
        Ok(match path {
            None => Sink::Stdout(io::stdout().lock()),
            Some(p) => Sink::File(temp_beside(p)?, p.to_path_buf()),
        })
    }

    pub fn finish(self) -> Result<()> {
        match self {
            Sink::Stdout(mut s) => s.flush()?,
            Sink::File(mut tmp, path) => {
                tmp.flush()?;
                tmp.persist(&path).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Ok(())
    }
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Sink::Stdout(s) => s.write(buf),
            Sink::File(f, _) => f.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Sink::Stdout(s) => s.flush(),
            Sink::File(f, _) => f.flush(),
        }
    }
}
