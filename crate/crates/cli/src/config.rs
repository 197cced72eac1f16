//! Experiment config files: TOML in, [`ExperimentConfig`] out, plus the
//! hash that stamps every output of a run.

use std::path::Path;

use augsubset::harness::ExperimentConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

/// A parsed config, its hash and the directory relative paths resolve from.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

/// Parses `text`; relative dataset paths are resolved against `base`.
pub fn parse(text: &str, base: &Path) -> Result<LoadedConfig, CliError> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))?;
    let hash = config_hash(&config);
    let mut config = config;
    config.dataset.resolve_paths(base);
    config.validate()?;
    Ok(LoadedConfig { config, hash })
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base)
}

/// SHA-256 of the canonical JSON form of the config as written. The thread
/// count is left out: it never changes the numbers. Formatting, comments and
/// key order in the TOML do not affect the hash.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut canonical = config.clone();
    canonical.threads = 1;
    let json = serde_json::to_vec(&canonical).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [dataset]
        kind = "features"
        train = "train.csv"
        train_augmented = "train_aug.csv"
        test = "test.csv"
        test_augmented = "test_aug.csv"
        [[policies]]
        kind = "baseline_uniform"
    "#;

    #[test]
    fn hash_ignores_formatting_and_threads() {
        let a = parse(MINIMAL, Path::new("/x")).unwrap();
        let reordered = MINIMAL.replace("seed = 3", "threads = 4\nseed = 3  # comment");
        let b = parse(&reordered, Path::new("/y")).unwrap();
        assert_eq!(a.hash, b.hash);
        let c = parse(&MINIMAL.replace("seed = 3", "seed = 4"), Path::new("/x")).unwrap();
        assert_ne!(a.hash, c.hash);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let a = parse(MINIMAL, Path::new("/data/run")).unwrap();
        let json = serde_json::to_string(&a.config.dataset).unwrap();
        assert!(json.contains("/data/run/train.csv"), "{json}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse(&MINIMAL.replace("seed = 3", "sed = 3"), Path::new("."))
            .err()
            .unwrap();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("sed"), "{}", err.message);
    }
}
