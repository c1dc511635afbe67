//! File formats, CSV reports and the `truncquant` command-line tool built on
//! [`truncquant_core`].

use std::io::Write;
use std::path::{Path, PathBuf};

pub mod checkpoint;
pub mod cli;
pub mod format;
pub mod report;

pub use format::{FloatRecord, FormatError, NamedRecord, TensorRecord, TqtFile};

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<TqtFile, FileError> {
    let bytes = std::fs::read(path).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })?;
    format::decode_file(&bytes).map_err(|source| FileError::Format {
        path: path.to_owned(),
        source,
    })
}

pub fn write_file(path: &Path, file: &TqtFile) -> Result<(), FileError> {
    write_atomic(path, &format::encode_file(file)).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a file holding exactly one bare record.
pub fn read_tensor(path: &Path) -> Result<TensorRecord, FileError> {
    match read_file(path)? {
        TqtFile::Single(r) => Ok(r),
        TqtFile::Container(_) => Err(FileError::Format {
            path: path.to_owned(),
            source: FormatError {
                offset: 0,
                reason: "expected a single TQT1 record, found a container".into(),
            },
        }),
    }
}

pub fn write_tensor(path: &Path, record: &TensorRecord) -> Result<(), FileError> {
    write_file(path, &TqtFile::Single(record.clone()))
}
