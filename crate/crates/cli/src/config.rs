//! `serve` settings. Each value comes from the first of: command-line flag,
//! `DEMOCAP_*` environment variable (both handled by clap), `--config` file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub chain: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub listen: Option<String>,
    pub export_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Values given by flag or environment.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Overrides {
    pub chain: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub listen: Option<String>,
    pub export_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    /// `None` selects the bundled Panda model.
    pub chain: Option<PathBuf>,
    pub scene: PathBuf,
    pub listen: String,
    pub export_dir: Option<PathBuf>,
}

pub fn resolve(over: Overrides, file: FileConfig) -> anyhow::Result<ServeConfig> {
    let Some(scene) = over.scene.or(file.scene) else {
        bail!("no scene given (use --scene, DEMOCAP_SCENE or `scene` in the config file)");
    };
    Ok(ServeConfig {
        chain: over.chain.or(file.chain),
        scene,
        listen: over.listen.or(file.listen).unwrap_or_else(|| DEFAULT_LISTEN.into()),
        export_dir: over.export_dir.or(file.export_dir),
    })
}
