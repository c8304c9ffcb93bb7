//! Line-delimited JSON files and dataset checksums.
//!
//! Instance datasets are bare record files. Label and score files start with a
//! [`FileHeader`] line that names the task and the checksum of the dataset the
//! records were computed from.

use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::Task;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const LABELS_FORMAT: &str = "tspsense.labels";
pub const SCORES_FORMAT: &str = "tspsense.scores";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_checksum(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// One JSON line per instance, exactly as [`write_dataset`] lays them out.
pub fn dataset_lines(instances: &[Instance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst)?);
        out.push('\n');
    }
    Ok(out)
}

/// SHA-256 of the canonical dataset serialization. Equal to the checksum of a
/// file written by [`write_dataset`].
pub fn dataset_checksum(instances: &[Instance]) -> String {
    sha256_hex(dataset_lines(instances).expect("instances always serialize").as_bytes())
}

pub fn write_dataset(path: &Path, instances: &[Instance]) -> Result<String> {
    check_unique_ids(instances)?;
    let text = dataset_lines(instances)?;
    std::fs::write(path, text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Instance>> {
    let instances: Vec<Instance> = read_jsonl(path)?;
    check_unique_ids(&instances)?;
    Ok(instances)
}

fn check_unique_ids(instances: &[Instance]) -> Result<()> {
    let mut seen = HashSet::new();
    for inst in instances {
        if !seen.insert(inst.id()) {
            return Err(Error::Format(format!("duplicate instance id '{}'", inst.id())));
        }
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub format: String,
    pub version: u32,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub dataset_checksum: String,
}

impl FileHeader {
    pub fn labels(task: Task, dataset_checksum: impl Into<String>) -> Self {
        FileHeader {
            format: LABELS_FORMAT.into(),
            version: FORMAT_VERSION,
            task,
            method: None,
            dataset_checksum: dataset_checksum.into(),
        }
    }

    pub fn scores(task: Task, method: impl Into<String>, dataset_checksum: impl Into<String>) -> Self {
        FileHeader {
            format: SCORES_FORMAT.into(),
            version: FORMAT_VERSION,
            task,
            method: Some(method.into()),
            dataset_checksum: dataset_checksum.into(),
        }
    }

    fn check_format(&self, expected: &str) -> Result<()> {
        if self.format != expected || self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {expected} v{FORMAT_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        Ok(())
    }
}

/// A header line followed by records.
pub fn write_with_header<R: Serialize>(path: &Path, header: &FileHeader, records: &[R]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed record file. With `tolerate_torn_tail`, a final line that is
/// not newline-terminated and fails to parse is dropped (an interrupted append)
/// and its byte offset returned so callers can truncate it.
pub fn read_with_header<R: DeserializeOwned>(
    path: &Path,
    expected_format: &str,
    tolerate_torn_tail: bool,
) -> Result<(FileHeader, Vec<R>, Option<u64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut offset = 0u64;
    let mut header: Option<FileHeader> = None;
    let mut records = Vec::new();
    let mut torn = None;
    let mut rest = text.as_str();
    let mut lineno = 0;
    while !rest.is_empty() {
        lineno += 1;
        let (line, terminated, consumed) = match rest.find('\n') {
            Some(i) => (&rest[..i], true, i + 1),
            None => (rest, false, rest.len()),
        };
        if !line.trim().is_empty() {
            let parsed = if header.is_none() {
                serde_json::from_str::<FileHeader>(line).map(|h| header = Some(h))
            } else {
                serde_json::from_str::<R>(line).map(|r| records.push(r))
            };
            if let Err(e) = parsed {
                if tolerate_torn_tail && !terminated && header.is_some() {
                    torn = Some(offset);
                    break;
                }
                return Err(Error::Format(format!("{}:{lineno}: {e}", path.display())));
            }
        }
        offset += consumed as u64;
        rest = &rest[consumed..];
    }
    let header = header.ok_or_else(|| Error::Format(format!("{}: missing header line", path.display())))?;
    header.check_format(expected_format)?;
    Ok((header, records, torn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::generate_instance;

    #[test]
    fn dataset_file_checksum_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let data: Vec<_> = (0..5).map(|s| generate_instance(7, s).unwrap()).collect();
        let sum = write_dataset(&path, &data).unwrap();
        assert_eq!(sum, dataset_checksum(&data));
        assert_eq!(sum, file_checksum(&path).unwrap());
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = generate_instance(5, 1).unwrap();
        let err = write_dataset(&dir.path().join("d"), &[a.clone(), a]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn torn_tail_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let header = FileHeader::scores(Task::Removal, "oracle", "abc");
        write_with_header(&path, &header, &[1u32, 2, 3]).unwrap();
        let good_len = std::fs::metadata(&path).unwrap().len();
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"partial").unwrap();
        let (h, recs, torn) = read_with_header::<u32>(&path, SCORES_FORMAT, true).unwrap();
        assert_eq!(h, header);
        assert_eq!(recs, vec![1, 2, 3]);
        assert_eq!(torn, Some(good_len));
        assert!(read_with_header::<u32>(&path, SCORES_FORMAT, false).is_err());
        assert!(read_with_header::<u32>(&path, LABELS_FORMAT, true).is_err());
    }
}
