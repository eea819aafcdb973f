//! Run configuration with pipeline-wide defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All tunable knobs with their default values. Each command serializes the
/// effective config into its artifact metadata for provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub vocab_limit: usize,
    pub top_k: usize,
    pub neighbor_cap: usize,
    pub max_hops: usize,
    pub hidden: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub labeller_lr: f64,
    pub labeller_batch: usize,
    pub labeller_epochs: usize,
    pub realizer_lr: f64,
    pub realizer_batch: usize,
    pub realizer_epochs: usize,
    pub dropout: f64,
    pub max_paths: usize,
    pub max_sentences: usize,
    pub window: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vocab_limit: 16_000,
            top_k: 20,
            neighbor_cap: 20,
            max_hops: 3,
            hidden: 128,
            heads: 8,
            enc_layers: 2,
            dec_layers: 2,
            labeller_lr: 2e-5,
            labeller_batch: 64,
            labeller_epochs: 3,
            realizer_lr: 1e-3,
            realizer_batch: 64,
            realizer_epochs: 50,
            dropout: 0.1,
            max_paths: 16,
            max_sentences: 4,
            window: 1,
            max_len: 40,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 15] = [
            ("vocab-limit", self.vocab_limit),
            ("top-k", self.top_k),
            ("neighbor-cap", self.neighbor_cap),
            ("max-hops", self.max_hops),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("enc-layers", self.enc_layers),
            ("dec-layers", self.dec_layers),
            ("labeller-batch", self.labeller_batch),
            ("labeller-epochs", self.labeller_epochs),
            ("realizer-batch", self.realizer_batch),
            ("realizer-epochs", self.realizer_epochs),
            ("max-paths", self.max_paths),
            ("window", self.window),
            ("max-len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_limit <= 5 {
            return Err(Error::Config("vocab-limit must exceed 5".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            )));
        }
        if !(self.labeller_lr > 0.0 && self.realizer_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Applies `key = value` overrides from a flat config file. Keys mirror
    /// flag names (`top-k = 20`); underscores are accepted as well.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        macro_rules! parse {
            ($field:ident) => {{
                self.$field = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {key}: {value}")))?;
            }};
        }
        match key.as_str() {
            "vocab_limit" => parse!(vocab_limit),
            "top_k" => parse!(top_k),
            "neighbor_cap" => parse!(neighbor_cap),
            "max_hops" => parse!(max_hops),
            "hidden" => parse!(hidden),
            "heads" => parse!(heads),
            "enc_layers" => parse!(enc_layers),
            "dec_layers" => parse!(dec_layers),
            "labeller_lr" => parse!(labeller_lr),
            "labeller_batch" => parse!(labeller_batch),
            "labeller_epochs" => parse!(labeller_epochs),
            "realizer_lr" => parse!(realizer_lr),
            "realizer_batch" => parse!(realizer_batch),
            "realizer_epochs" => parse!(realizer_epochs),
            "dropout" => parse!(dropout),
            "max_paths" => parse!(max_paths),
            "max_sentences" => parse!(max_sentences),
            "window" => parse!(window),
            "max_len" => parse!(max_len),
            "seed" => parse!(seed),
            other => return Err(Error::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Flat key/value view used when echoing the effective config.
    pub fn as_map(&self) -> BTreeMap<String, String> {
        let value = self.to_json();
        let obj = value.as_object().expect("config is an object");
        obj.iter()
            .map(|(k, v)| (k.replace('_', "-"), v.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn config_file_overrides_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment").unwrap();
        writeln!(f, "top-k = 7").unwrap();
        writeln!(f, "realizer_lr = 0.01").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(f.path()).unwrap();
        assert_eq!(cfg.top_k, 7);
        assert_eq!(cfg.realizer_lr, 0.01);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("no-such-knob", "1").is_err());
    }

    #[test]
    fn zero_field_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.top_k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn indivisible_heads_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.hidden = 10;
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
