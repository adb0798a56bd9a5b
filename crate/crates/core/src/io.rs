//! CSV helpers and atomic artifact writes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// CSV reader that accepts a leading `# key: value` metadata block, so that
/// artifacts written by this crate can be read back as inputs.
pub fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(rdr)
}

pub fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Parse a float field, naming the column in the error.
pub fn parse_f64(field: &str, column: &str, row: u64) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
        row,
        message: format!("column `{column}`: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            row,
            message: format!("column `{column}`: non-finite value"),
        });
    }
    Ok(v)
}

/// Check that the header contains the required columns and return their indices.
pub fn column_indices(
    headers: &csv::StringRecord,
    required: &[&str],
) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MalformedRow {
                    row: 1,
                    message: format!("missing column `{name}`"),
                })
        })
        .collect()
}

pub fn optional_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Write `contents` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial artifact.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // temp files are created 0600
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Serialize rows into an in-memory CSV with a `# config_digest` line on top.
pub fn csv_with_digest<F>(digest: Option<&str>, fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    if let Some(d) = digest {
        writeln!(buf, "# config_digest: {d}").expect("write to Vec");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    }
    Ok(buf)
}
