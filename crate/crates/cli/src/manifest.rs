//! Run manifests written next to every output as `<out>.run.json`.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use tspsense::io::file_checksum;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub data_dir: Option<PathBuf>,
    /// Parsed subcommand configuration, defaults filled in.
    pub config: serde_json::Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub started_at: String,
    pub elapsed_seconds: f64,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

pub struct Recorder {
    manifest: Manifest,
    start: std::time::Instant,
}

impl Recorder {
    pub fn new(argv: Vec<String>, data_dir: Option<PathBuf>, config: serde_json::Value) -> Self {
        Recorder {
            manifest: Manifest {
                tool: "tspsense".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                argv,
                data_dir,
                config,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                extra: serde_json::Value::Null,
                started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                elapsed_seconds: 0.0,
            },
            start: std::time::Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.insert(path.display().to_string(), file_checksum(path)?);
        Ok(())
    }

    pub fn extra(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        if !self.manifest.extra.is_object() {
            self.manifest.extra = serde_json::Value::Object(Default::default());
        }
        self.manifest.extra[key] = serde_json::to_value(value)?;
        Ok(())
    }

    /// Records checksums of `outputs` and writes the manifest beside the first one.
    pub fn finish(mut self, outputs: &[&Path]) -> Result<PathBuf> {
        for p in outputs {
            self.manifest.outputs.insert(p.display().to_string(), file_checksum(p)?);
        }
        self.manifest.elapsed_seconds = self.start.elapsed().as_secs_f64();
        let path = manifest_path(outputs.first().expect("at least one output"));
        std::fs::write(&path, serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(path)
    }
}

pub fn read(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
