//! Command-line and config-file settings, merged into one resolved config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use anytime_core::harness::Tolerances;
use anytime_core::instances::Family;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "ANYTIME_OUT";
const DEFAULT_OUT_DIR: &str = "anytime-out";

#[derive(Debug, Parser)]
#[command(
    name = "anytime",
    version,
    about = "Certify lower bounds on the anytime last-iterate error of projected subgradient descent"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare simulated trajectories with their closed forms.
    Verify(Flags),
    /// Run the witnesses per horizon and check measured errors against certified bounds.
    Audit(Flags),
    /// Measure how often sqrt(t)·err(t) exceeds each threshold.
    Density(Flags),
    /// Evaluate analytic bounds and replay the proof chain without simulation.
    Bounds(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Audit(_) => "audit",
            Command::Density(_) => "density",
            Command::Bounds(_) => "bounds",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Verify(f) | Command::Audit(f) | Command::Density(f) | Command::Bounds(f) => f,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stepsize schedule: `sqrt_decay:D=2,G=1`, `constant:c=0.5` or `table:PATH`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Instance families, comma separated: vshape, quadratic, maxlinear.
    #[arg(long = "family", value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Single horizon (for `bounds`: the chain-check horizon).
    #[arg(long = "T")]
    pub horizon: Option<u64>,
    /// Horizons: `8,64,512` or `pow2:8..1024`.
    #[arg(long)]
    pub horizons: Option<String>,
    /// Envelope: `example31`, `one`, `const:c=16`, `log:c1=..,c2=..,c3=..` or `empirical`.
    #[arg(long)]
    pub phi: Option<String>,
    /// Density thresholds, comma separated; `inf` is allowed.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<String>>,
    /// Output directory (default: $ANYTIME_OUT or ./anytime-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for config compatibility; every pipeline is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Density: build a fresh instance for every t instead of reading one run.
    #[arg(long = "per-t")]
    pub per_t: bool,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schedule: Option<String>,
    pub families: Option<Vec<String>>,
    #[serde(rename = "T")]
    pub horizon: Option<u64>,
    pub horizons: Option<HorizonsField>,
    pub phi: Option<String>,
    pub thresholds: Option<Vec<serde_json::Value>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub per_t: Option<bool>,
    pub tolerances: Option<Tolerances>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum HorizonsField {
    List(Vec<u64>),
    Text(String),
}

/// Fully resolved settings; serialized into every output header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub subcommand: String,
    pub schedule: String,
    pub families: Vec<Family>,
    pub horizons: Vec<u64>,
    #[serde(rename = "T")]
    pub horizon: Option<u64>,
    pub phi: String,
    pub thresholds: Vec<f64>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub per_t: bool,
    pub tolerances: Tolerances,
}

pub fn parse_horizons(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some(range) = text.strip_prefix("pow2:") {
        let (lo, hi) = range
            .split_once("..")
            .with_context(|| format!("horizons: expected pow2:LO..HI, got `{text}`"))?;
        let lo: u64 = lo.trim().parse().with_context(|| format!("horizons: bad lower end `{lo}`"))?;
        let hi: u64 = hi.trim().parse().with_context(|| format!("horizons: bad upper end `{hi}`"))?;
        let out: Vec<u64> = (0..64)
            .map(|k| 1u64 << k)
            .filter(|t| (lo..=hi).contains(t))
            .collect();
        if out.is_empty() {
            bail!("horizons: no power of two in {lo}..{hi}");
        }
        return Ok(out);
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().with_context(|| format!("horizons: `{s}` is not a step count")))
        .collect()
}

fn parse_threshold(text: &str) -> Result<f64> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        other => {
            let v: f64 = other
                .parse()
                .with_context(|| format!("thresholds: `{text}` is not a number"))?;
            if v.is_nan() {
                bail!("thresholds: NaN is not a threshold");
            }
            Ok(v)
        }
    }
}

fn json_threshold(v: &serde_json::Value) -> Result<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().context("thresholds: number out of range"),
        serde_json::Value::String(s) => parse_threshold(s),
        other => bail!("thresholds: expected a number or \"inf\", got {other}"),
    }
}

fn parse_families(names: &[String]) -> Result<Vec<Family>> {
    let mut out: Vec<Family> = Vec::new();
    for name in names {
        let family: Family = name.parse().map_err(|e| anyhow::anyhow!("family: {e}"))?;
        if !out.contains(&family) {
            out.push(family);
        }
    }
    Ok(out)
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("config: cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config: {} is malformed", path.display()))
}

impl Config {
    pub fn resolve(subcommand: &str, flags: &Flags) -> Result<Config> {
        let file = match &flags.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };

        let schedule = flags
            .schedule
            .clone()
            .or(file.schedule)
            .unwrap_or_else(|| "sqrt_decay:D=2,G=1".to_string());

        let families = match flags.families.clone().or(file.families) {
            Some(names) => parse_families(&names)?,
            None if subcommand == "density" => vec![Family::MaxLinear],
            None => Family::ALL.to_vec(),
        };

        let horizon = flags.horizon.or(file.horizon);
        let explicit = match (&flags.horizons, file.horizons) {
            (Some(text), _) => Some(parse_horizons(text)?),
            (None, Some(HorizonsField::List(list))) => Some(list),
            (None, Some(HorizonsField::Text(text))) => Some(parse_horizons(&text)?),
            (None, None) => None,
        };
        let horizons = match (explicit, horizon) {
            (Some(list), _) => list,
            (None, Some(t)) if subcommand == "bounds" => {
                let mut list: Vec<u64> = (0..64).map(|k| 1u64 << k).take_while(|p| *p <= t).collect();
                if list.last() != Some(&t) {
                    list.push(t);
                }
                list
            }
            (None, Some(t)) => vec![t],
            (None, None) => bail!("horizons: give --T or --horizons"),
        };
        if horizons.is_empty() || horizons.contains(&0) {
            bail!("horizons: every horizon must be >= 1");
        }

        let thresholds = match (&flags.thresholds, file.thresholds) {
            (Some(list), _) => list.iter().map(|s| parse_threshold(s)).collect::<Result<_>>()?,
            (None, Some(list)) => list.iter().map(json_threshold).collect::<Result<_>>()?,
            (None, None) => vec![0.0, 0.5, 1.0],
        };

        let out = flags
            .out
            .clone()
            .or(file.out)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

        Ok(Config {
            subcommand: subcommand.to_string(),
            schedule,
            families,
            horizons,
            horizon,
            phi: flags.phi.clone().or(file.phi).unwrap_or_else(|| "example31".into()),
            thresholds,
            out,
            seed: flags.seed.or(file.seed),
            jobs: flags.jobs.or(file.jobs).unwrap_or(0),
            per_t: flags.per_t || file.per_t.unwrap_or(false),
            tolerances: file.tolerances.unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_syntax() {
        assert_eq!(parse_horizons("8,64, 512").unwrap(), vec![8, 64, 512]);
        assert_eq!(parse_horizons("pow2:8..1024").unwrap(), vec![8, 16, 32, 64, 128, 256, 512, 1024]);
        assert!(parse_horizons("pow2:9..15").is_err());
        assert!(parse_horizons("8,x").is_err());
    }

    #[test]
    fn thresholds_accept_inf() {
        assert_eq!(parse_threshold("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_threshold("0.5").unwrap(), 0.5);
        assert!(parse_threshold("NaN").is_err());
        assert_eq!(json_threshold(&serde_json::json!("inf")).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bounds_horizons_from_t() {
        let flags = Flags {
            horizon: Some(20),
            ..Default::default()
        };
        let cfg = Config::resolve("bounds", &flags).unwrap();
        assert_eq!(cfg.horizons, vec![1, 2, 4, 8, 16, 20]);
        let cfg = Config::resolve("audit", &flags).unwrap();
        assert_eq!(cfg.horizons, vec![20]);
        assert_eq!(cfg.families.len(), 3);
        assert_eq!(Config::resolve("density", &flags).unwrap().families, vec![Family::MaxLinear]);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"schedule": "constant:c=1", "horizons": [4, 8], "phi": "one"}"#).unwrap();
        let flags = Flags {
            config: Some(path.clone()),
            phi: Some("example31".into()),
            ..Default::default()
        };
        let cfg = Config::resolve("audit", &flags).unwrap();
        assert_eq!(cfg.schedule, "constant:c=1");
        assert_eq!(cfg.horizons, vec![4, 8]);
        assert_eq!(cfg.phi, "example31");

        std::fs::write(&path, r#"{"schedul": "constant:c=1"}"#).unwrap();
        let err = Config::resolve("audit", &flags).unwrap_err();
        assert!(format!("{err:#}").contains("schedul"), "{err:#}");
    }
}
