use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use phimask_core::backend::RegenerationMode;
use phimask_core::document::Template;
use phimask_core::eval::TableFormat;

/// Everything a run needs. Built from flags, then overlaid with a TOML
/// config file whose keys win.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub n: Option<usize>,
    pub template: Option<Template>,
    pub strategy: Option<String>,
    pub strategy_file: Option<PathBuf>,
    pub backend: Option<String>,
    pub regeneration: Option<RegenerationMode>,
    pub accuracy: Option<f64>,
    pub mc_seeds: Option<usize>,
    pub rules: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<TableFormat>,
}

pub enum CorpusSource {
    Dir(PathBuf),
    Generate { n: usize, template: Template },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn overlay(self, file: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: file.$f.or(self.$f)),* } };
        }
        pick!(
            seed, corpus, n, template, strategy, strategy_file, backend, regeneration, accuracy,
            mc_seeds, rules, out, format
        )
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .context("a seed is required (--seed or `seed` in the config file)")
    }

    pub fn corpus_source(&self) -> Result<CorpusSource> {
        match (&self.corpus, self.n) {
            (Some(dir), None) => Ok(CorpusSource::Dir(dir.clone())),
            (None, Some(0)) => bail!("corpus size must be at least 1"),
            (None, Some(n)) => Ok(CorpusSource::Generate {
                n,
                template: self.template.unwrap_or_default(),
            }),
            (Some(_), Some(_)) => bail!("give either a corpus directory or a document count, not both"),
            (None, None) => bail!("no corpus: pass --corpus <dir> or --n <count>"),
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("no output directory: pass --out or set PHIMASK_OUT_DIR")
    }

    pub fn accuracy(&self) -> Result<f64> {
        let a = self.accuracy.unwrap_or(0.8);
        if !(a > 0.0 && a <= 1.0) {
            bail!("accuracy must lie in (0, 1], got {a}");
        }
        Ok(a)
    }

    pub fn backend_spec(&self) -> &str {
        self.backend.as_deref().unwrap_or("surrogate")
    }
}
