use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde::Serialize;

/// Run record written next to the outputs. Contains nothing that depends on
/// timing or thread count, so reruns are byte-identical.
#[derive(Debug, Default, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: Option<String>,
    /// Effective configuration after command-line overrides.
    pub config: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub git_hash: String,
    pub payoff_evaluations: BTreeMap<String, usize>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        config: String,
        master_seed: u64,
    ) -> Self {
        Self {
            tool: "kernval".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            master_seed,
            git_hash: git_hash(),
            ..Default::default()
        }
    }

    pub fn seed(&mut self, name: impl Into<String>, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }

    pub fn evaluations(&mut self, name: impl Into<String>, n: usize) {
        *self.payoff_evaluations.entry(name.into()).or_default() += n;
    }

    pub fn output(&mut self, file: impl Into<String>) {
        self.outputs.push(file.into());
    }
}

fn git_hash() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}
