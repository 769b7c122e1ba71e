//! The run-config file. Unknown keys are rejected; relative paths resolve
//! against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use medrag_core::eval::stats::CiMethod;
use medrag_core::eval::{GridSpec, McNemarMethod, PromptMode};
use medrag_core::providers::{ProviderKind, ProviderSpec};
use medrag_core::timing::Timing;
use medrag_core::{ChunkingParams, RetrievalConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_in_flight() -> usize {
    4
}

fn yes() -> bool {
    true
}

/// Which single configuration `retrieve`, `ask` and `eval` use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSelection {
    #[serde(default)]
    pub index: Option<String>,
    #[serde(default)]
    pub llm_model: Option<String>,
    #[serde(default = "default_prompt")]
    pub prompt_mode: PromptMode,
    #[serde(default = "yes")]
    pub rag: bool,
}

fn default_prompt() -> PromptMode {
    PromptMode::ZeroShot
}

impl Default for RunSelection {
    fn default() -> Self {
        Self {
            index: None,
            llm_model: None,
            prompt_mode: PromptMode::ZeroShot,
            rag: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Directories of `*.txt` books, or individual `.txt` files.
    #[serde(default)]
    pub corpus: Vec<PathBuf>,
    #[serde(default)]
    pub chunking: ChunkingParams,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/index`.
    #[serde(default)]
    pub index_dir: Option<PathBuf>,
    /// Index name → embedding provider. Each index lives in
    /// `<index_dir>/<name>`.
    #[serde(default)]
    pub embedders: BTreeMap<String, ProviderSpec>,
    /// Model name → generator provider.
    #[serde(default)]
    pub generators: BTreeMap<String, ProviderSpec>,
    #[serde(default)]
    pub reranker: Option<ProviderSpec>,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub run: RunSelection,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub ci: CiMethod,
    #[serde(default)]
    pub mcnemar: McNemarMethod,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
        if let Some(p) = self.index_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.dataset.as_mut() {
            fix(p);
        }
        let specs = self
            .embedders
            .values_mut()
            .chain(self.generators.values_mut())
            .chain(self.reranker.as_mut());
        for spec in specs {
            if let Some(p) = spec.cache_dir.as_mut() {
                fix(p);
            }
            // file-backed and scripted providers name paths inside the endpoint
            for prefix in ["file:", "mock:script:"] {
                if let Some(rest) = spec.endpoint.strip_prefix(prefix) {
                    if Path::new(rest).is_relative() {
                        spec.endpoint = format!("{prefix}{}", base.join(rest).display());
                    }
                }
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.chunking.validate()?;
        self.retrieval.validate()?;
        if self.max_in_flight == 0 {
            return Err(CliError::config("max_in_flight must be at least 1"));
        }
        let check = |name: &str, spec: &ProviderSpec, kind: ProviderKind| -> CliResult<()> {
            if spec.kind != kind {
                return Err(CliError::config(format!(
                    "provider {name:?} must have kind {kind:?}"
                )));
            }
            spec.validate()
                .map_err(|e| CliError::config(format!("provider {name:?}: {e}")))
        };
        for (name, spec) in &self.embedders {
            check(name, spec, ProviderKind::Embedding)?;
        }
        for (name, spec) in &self.generators {
            check(name, spec, ProviderKind::Generator)?;
        }
        if let Some(spec) = &self.reranker {
            check("reranker", spec, ProviderKind::Reranker)?;
        }
        if let Some(grid) = &self.grid {
            grid.validate()?;
            for ix in &grid.indexes {
                if !self.embedders.contains_key(ix) {
                    return Err(CliError::config(format!(
                        "grid index {ix:?} has no embedder entry"
                    )));
                }
            }
            for m in &grid.llm_models {
                if !self.generators.contains_key(m) {
                    return Err(CliError::config(format!(
                        "grid llm_model {m:?} has no generator entry"
                    )));
                }
            }
            if grid.reranker.iter().any(|s| s.is_on()) && self.reranker.is_none() {
                return Err(CliError::config(
                    "grid turns the reranker on but no reranker is configured",
                ));
            }
        }
        Ok(())
    }

    pub fn index_dir(&self) -> PathBuf {
        self.index_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("index"))
    }

    pub fn chunks_path(&self) -> PathBuf {
        self.out_dir.join("chunks.jsonl")
    }

    /// The named entry, or the only entry when no name is given.
    pub fn pick<'a, T>(
        map: &'a BTreeMap<String, T>,
        name: Option<&str>,
        what: &str,
    ) -> CliResult<(String, &'a T)> {
        match name {
            Some(n) => map
                .get_key_value(n)
                .map(|(k, v)| (k.clone(), v))
                .ok_or_else(|| CliError::config(format!("unknown {what} {n:?}"))),
            None if map.len() == 1 => Ok(map.iter().next().map(|(k, v)| (k.clone(), v)).unwrap()),
            None if map.is_empty() => Err(CliError::config(format!("no {what} configured"))),
            None => Err(CliError::config(format!(
                "several {what}s configured; choose one"
            ))),
        }
    }
}
