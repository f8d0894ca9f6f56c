//! Run settings: built-in defaults, a `key = value` file, then flags.

use sbattn::Engine;

/// Seed used when neither a flag, a config file nor `SBATTN_SEED` sets one.
pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "SBATTN_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    pub thresholds: Vec<f64>,
    pub eps0: f64,
    pub engines: Vec<Engine>,
    pub repeats: usize,
    pub threads: usize,
    pub bins: usize,
}

impl Default for Settings {
    /// The n = 8192, d = 64, σ = 0.1 timing setup with thresholds 0.15..0.50.
    fn default() -> Self {
        Self {
            n: 8192,
            d: 64,
            sigma: 0.1,
            seed: DEFAULT_SEED,
            thresholds: vec![0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5],
            eps0: 1e-3,
            engines: vec![Engine::Exact, Engine::As23, Engine::SupportBasis],
            repeats: 5,
            threads: 1,
            bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse '{v}'")))
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

pub fn parse_engines(v: &str) -> Result<Vec<Engine>, ConfigError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<Engine>()
                .map_err(|e| ConfigError(format!("engines: {e}")))
        })
        .collect()
}

impl Settings {
    /// Defaults with the seed taken from `SBATTN_SEED` when it is set.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            s.seed = parse_num(SEED_ENV, &v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "n" => self.n = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "thresholds" => self.thresholds = parse_list(key, value)?,
            "eps0" => self.eps0 = parse_num(key, value)?,
            "engines" => self.engines = parse_engines(value)?,
            "repeats" => self.repeats = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "bins" => self.bins = parse_num(key, value)?,
            _ => return Err(ConfigError(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_config_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| ConfigError(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.n < 2 || self.d < 1 {
            return fail(format!(
                "need n >= 2 and d >= 1, got n={} d={}",
                self.n, self.d
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.thresholds.is_empty() {
            return fail("thresholds must not be empty".into());
        }
        if self
            .thresholds
            .iter()
            .any(|t| !(*t >= 0.0 && t.is_finite()))
        {
            return fail("thresholds must be finite and non-negative".into());
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return fail("thresholds must be strictly increasing".into());
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return fail(format!("eps0 must lie in (0, 1), got {}", self.eps0));
        }
        if self.engines.is_empty() {
            return fail("engines must not be empty".into());
        }
        if self.repeats < 1 || self.threads < 1 || self.bins < 1 {
            return fail("repeats, threads and bins must be at least 1".into());
        }
        Ok(())
    }
}
