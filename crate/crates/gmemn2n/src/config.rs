//! Training hyperparameters, the learning-rate schedule, and flat
//! `key = value` configuration files. Precedence is defaults < config file
//! < command-line flags (the CLI applies flags after the file).

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
}

/// All knobs of a training run. Defaults follow the standard regimen:
/// 3 hops, d = 20, lr 0.005 halved every 25 epochs through epoch 100,
/// batches of 32, gradient clipping at global norm 40, N(0, 0.1) init,
/// gate biases centred at 0.5, and a 20-epoch linear start during which the
/// attention softmax is disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hops: usize,
    pub dim: usize,
    pub total_epochs: usize,
    /// Epochs at the start trained with raw (un-softmaxed) attention.
    pub linear_start_epochs: usize,
    pub lr0: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Epoch after which the learning rate stays constant.
    pub decay_until: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub init_std: f64,
    pub gate_bias_mean: f64,
    pub restarts: usize,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hops: 3,
            dim: 20,
            total_epochs: 100,
            linear_start_epochs: 20,
            lr0: 0.005,
            decay_every: 25,
            decay_factor: 0.5,
            decay_until: 100,
            batch_size: 32,
            clip_norm: 40.0,
            init_std: 0.1,
            gate_bias_mean: 0.5,
            restarts: 1,
            valid_fraction: 0.10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for a 0-based epoch: lr0 * factor^(floor(e / every)),
    /// with the decay frozen after `decay_until`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let e = epoch.min(self.decay_until);
        let steps = if self.decay_every == 0 {
            0
        } else {
            e / self.decay_every
        };
        self.lr0 * self.decay_factor.powi(steps as i32)
    }

    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match key {
            "hops" => self.hops = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "total_epochs" => self.total_epochs = parse(key, value)?,
            "linear_start_epochs" => self.linear_start_epochs = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "decay_every" => self.decay_every = parse(key, value)?,
            "decay_factor" => self.decay_factor = parse(key, value)?,
            "decay_until" => self.decay_until = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            "gate_bias_mean" => self.gate_bias_mean = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "valid_fraction" => self.valid_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies a whole config file (see [`parse_kv`]).
    pub fn apply_file(&mut self, contents: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_kv(contents)? {
            self.apply(&key, &value)?;
        }
        Ok(())
    }
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are
/// skipped; keys and values are trimmed.
pub fn parse_kv(contents: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (lineno, raw) in contents.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: lineno + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line: lineno + 1 });
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_fixture() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.005);
        assert_eq!(cfg.learning_rate(24), 0.005);
        assert_eq!(cfg.learning_rate(25), 0.0025);
        assert_eq!(cfg.learning_rate(75), 0.000625);
        // frozen after decay_until
        assert_eq!(cfg.learning_rate(150), cfg.learning_rate(100));
    }

    #[test]
    fn file_overrides_and_errors() {
        let mut cfg = TrainConfig::default();
        cfg.apply_file("# comment\n\nhops = 2\nlr0 = 0.01\nseed=7\n")
            .unwrap();
        assert_eq!(cfg.hops, 2);
        assert_eq!(cfg.lr0, 0.01);
        assert_eq!(cfg.seed, 7);

        assert!(matches!(
            cfg.apply_file("bogus = 1"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            cfg.apply_file("hops ="),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            cfg.apply_file("hops = many"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
