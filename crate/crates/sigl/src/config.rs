//! Flat key=value configuration. One file configures both network shape and
//! training schedule; command-line flags are applied after the file, so a
//! flag always wins. Unknown keys and unparsable values are hard errors —
//! a typo should stop a run, not silently train the default.

use sigl_core::net::NetworkConfig;
use sigl_core::train::TrainConfig;

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey { line: usize, key: String },
    BadValue { line: usize, key: String, value: String, want: &'static str },
    Syntax { line: usize, text: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::UnknownKey { line, key } => {
                write!(f, "config line {line}: unknown key {key:?}")
            }
            ConfigError::BadValue { line, key, value, want } => {
                write!(f, "config line {line}: {key} = {value:?} is not {want}")
            }
            ConfigError::Syntax { line, text } => {
                write!(f, "config line {line}: expected key = value, found {text:?}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Full run configuration with desk-scale defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub net: NetworkConfig,
    pub train: TrainConfig,
    /// Hash seed for the text encoder (kept separate from the run seed so
    /// one embedding space can serve many runs).
    pub encoder_seed: u64,
    /// Write a checkpoint every this many steps; 0 means only at the end.
    pub ckpt_every: u64,
}

impl Config {
    pub fn desk(seed: u64) -> Self {
        Config {
            net: NetworkConfig::desk(),
            train: TrainConfig::standard(0, seed),
            encoder_seed: 0,
            ckpt_every: 0,
        }
    }

    /// Parse a whole file's text. Lines are `key = value`; blank lines and
    /// `#` comments are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((key, value)) = t.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: t.to_string() });
            };
            self.set(line, key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            line: usize,
            key: &str,
            value: &str,
            want: &'static str,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                want,
            })
        }
        match key {
            "target_res" => self.net.target_res = parse(line, key, value, "a power-of-two size")?,
            "base_res" => self.net.base_res = parse(line, key, value, "a small integer")?,
            "ch" => self.net.ch = parse(line, key, value, "a channel multiplier")?,
            "nz" => self.net.nz = parse(line, key, value, "a latent width")?,
            "embed_dim" => self.net.embed_dim = parse(line, key, value, "an embedding width")?,
            "leaky_slope" => self.net.leaky_slope = parse(line, key, value, "a float")?,
            "nonlocal_res" => self.net.nonlocal_res = parse(line, key, value, "a resolution")?,
            "blocks_per_stage" => {
                self.net.blocks_per_stage = parse(line, key, value, "a positive integer")?
            }
            "lr_d" => self.train.lr_d = parse(line, key, value, "a float")?,
            "lr_g" => self.train.lr_g = parse(line, key, value, "a float")?,
            "beta1" => self.train.beta1 = parse(line, key, value, "a float")?,
            "beta2" => self.train.beta2 = parse(line, key, value, "a float")?,
            "adam_eps" => self.train.adam_eps = parse(line, key, value, "a float")?,
            "batch" => self.train.batch = parse(line, key, value, "a positive integer")?,
            "ema_decay" => self.train.ema_decay = parse(line, key, value, "a float in [0,1]")?,
            "standing_passes" => {
                self.train.standing_passes = parse(line, key, value, "a pass count")?
            }
            "standing_batch" => {
                self.train.standing_batch = parse(line, key, value, "a batch size")?
            }
            "steps" => self.train.steps = parse(line, key, value, "a step count")?,
            "seed" => self.train.seed = parse(line, key, value, "an unsigned integer")?,
            "interpolate" => {
                self.train.interpolate = parse(line, key, value, "true or false")?
            }
            "encoder_seed" => self.encoder_seed = parse(line, key, value, "an unsigned integer")?,
            "ckpt_every" => self.ckpt_every = parse(line, key, value, "a step count")?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}
