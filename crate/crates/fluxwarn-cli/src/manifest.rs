//! Run manifests: provenance written alongside every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde_json::json;

use crate::ioutil::OutputSet;

/// Collects the provenance of one invocation and writes it as
/// `<primary output>.manifest.json` once all outputs are in place.
pub struct RunManifest {
    command: &'static str,
    flags: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        RunManifest {
            command,
            flags: Vec::new(),
            inputs: Vec::new(),
            seed: None,
            started: Instant::now(),
        }
    }

    pub fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.flags.push((name.to_owned(), value.to_string()));
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_owned());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn write(&self, primary_output: &Path, outputs: &mut OutputSet) -> Result<()> {
        let flags: serde_json::Map<String, serde_json::Value> = self
            .flags
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        let doc = json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "flags": flags,
            "inputs": self.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "outputs": outputs.paths().iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "wall_time_seconds": self.started.elapsed().as_secs_f64(),
        });
        let mut name = primary_output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        outputs.write(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            writeln!(w)?;
            Ok(())
        })
    }
}
