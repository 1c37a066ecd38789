//! Plain-text `key=value` session configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use vfl_core::mklha::CURVE_NAME;
use vfl_core::protocol::SessionConfig;
use vfl_core::{EncodingBounds, Identity, Precision};

/// Synthetic updates are drawn from `[-MAX_ABS_VALUE, MAX_ABS_VALUE]`.
pub const MAX_ABS_VALUE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub d: usize,
    pub m: usize,
    pub dp: u8,
    pub clients: u32,
    pub subcolumns: usize,
    /// Raw seed bytes as given on the command line.
    pub seed: Vec<u8>,
    pub curve: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 1000,
            m: 4,
            dp: 4,
            clients: 4,
            subcolumns: 1,
            seed: vec![0],
            curve: CURVE_NAME.to_string(),
        }
    }
}

/// Parses `--seed` hex. Any non-empty byte string is accepted.
pub fn parse_seed(s: &str) -> Result<Vec<u8>> {
    let s = s.trim().trim_start_matches("0x");
    let s = if s.len() % 2 == 1 {
        format!("0{s}")
    } else {
        s.to_string()
    };
    let bytes = hex::decode(&s).with_context(|| format!("seed `{s}` is not hex"))?;
    if bytes.is_empty() {
        bail!("seed must not be empty");
    }
    Ok(bytes)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curve != CURVE_NAME {
            bail!("unsupported curve `{}` (only {CURVE_NAME})", self.curve);
        }
        if self.clients == 0 {
            bail!("clients must be at least 1");
        }
        self.session_config()?;
        Ok(())
    }

    /// 32-byte master seed derived from the configured seed.
    pub fn master_seed(&self) -> [u8; 32] {
        self.derive(b"master")
    }

    /// Independent 32-byte seed for one purpose.
    pub fn derive(&self, purpose: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"vfl-seed\0");
        h.update((self.seed.len() as u32).to_le_bytes());
        h.update(&self.seed);
        h.update(purpose);
        h.finalize().into()
    }

    pub fn session_tag(&self) -> Vec<u8> {
        format!("vfl/{}", hex::encode(&self.derive(b"session")[..8])).into_bytes()
    }

    pub fn identities(&self) -> impl Iterator<Item = Identity> {
        (1..=self.clients).map(Identity)
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        let precision = Precision::new(self.dp)?;
        let bounds = EncodingBounds::new(MAX_ABS_VALUE, self.clients);
        Ok(SessionConfig::new(
            self.d,
            self.m,
            precision,
            bounds,
            self.identities(),
            self.session_tag(),
            self.subcolumns,
        )?)
    }

    pub fn to_text(&self) -> String {
        format!(
            "d={}\nm={}\ndp={}\nclients={}\nsubcolumns={}\nseed={}\ncurve={}\n",
            self.d,
            self.m,
            self.dp,
            self.clients,
            self.subcolumns,
            hex::encode(&self.seed),
            self.curve
        )
    }

    /// Unknown keys are errors; missing keys take defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| anyhow::anyhow!("line {}: {key}: {e}", n + 1);
            match key {
                "d" => cfg.d = value.parse().map_err(|e| bad(&e))?,
                "m" => cfg.m = value.parse().map_err(|e| bad(&e))?,
                "dp" => cfg.dp = value.parse().map_err(|e| bad(&e))?,
                "clients" => cfg.clients = value.parse().map_err(|e| bad(&e))?,
                "subcolumns" => cfg.subcolumns = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = parse_seed(value).map_err(|e| bad(&e))?,
                "curve" => cfg.curve = value.to_string(),
                other => bail!("line {}: unknown key `{other}`", n + 1),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
