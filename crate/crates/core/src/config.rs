//! Run configuration: a TOML file whose keys mirror the command-line flags.
//!
//! ```toml
//! inputs = ["traces/day1.pcap"]
//! lan = ["10.0.0.0/8"]
//! man = ["196.192.32.0/24"]
//! geo_db = "geo.csv"
//! services = "services"
//! idle_timeout_s = 60
//! bin_width_s = 3
//! out = "report"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anon::{AnonError, AnonKey, ANON_KEY_ENV};
use crate::classify::{Cidr, ClassifyError, PrefixConfig};
use crate::report::{sha256_hex, OutputFormat, ReportOptions, XScale};
use crate::tcp::TcpConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} does not exist: {path}")]
    MissingFile { what: &'static str, path: PathBuf },
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("invalid CIDR block {0:?}")]
    BadCidr(String),
    #[error("no input traces given")]
    NoInputs,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("{source} (from {origin})")]
    Key {
        origin: &'static str,
        #[source]
        source: AnonError,
    },
}

fn default_idle_timeout() -> f64 {
    60.0
}
fn default_reorder_ms() -> f64 {
    3.0
}
fn default_correlation() -> f64 {
    1.0
}
fn default_syn_timeout() -> f64 {
    30.0
}
fn default_bin_width() -> f64 {
    3.0
}
fn default_other_threshold() -> f64 {
    1.0
}
fn default_rate_scale() -> XScale {
    XScale::Log
}
fn default_out() -> PathBuf {
    PathBuf::from("report")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    /// Line-oriented `lan <cidr>` / `man <cidr>` file; merged with the lists.
    #[serde(default)]
    pub prefix_file: Option<PathBuf>,
    #[serde(default)]
    pub lan: Vec<String>,
    #[serde(default)]
    pub man: Vec<String>,
    #[serde(default)]
    pub geo_db: Option<PathBuf>,
    #[serde(default)]
    pub services: Option<PathBuf>,
    /// 32 hex characters. The environment variable takes precedence.
    #[serde(default, skip_serializing)]
    pub anon_key_hex: Option<String>,
    #[serde(default = "default_idle_timeout")]
    pub idle_timeout_s: f64,
    #[serde(default = "default_reorder_ms")]
    pub reorder_window_ms: f64,
    #[serde(default = "default_correlation")]
    pub correlation_window_s: f64,
    #[serde(default = "default_syn_timeout")]
    pub syn_timeout_s: f64,
    #[serde(default = "default_bin_width")]
    pub bin_width_s: f64,
    #[serde(default = "default_other_threshold")]
    pub other_threshold_percent: f64,
    #[serde(default = "default_rate_scale")]
    pub rate_scale: XScale,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = RunConfig::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.inputs {
            resolve(base, p);
        }
        for p in [&mut cfg.prefix_file, &mut cfg.geo_db, &mut cfg.services].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.out);
        Ok(cfg)
    }

    pub fn idle_timeout_us(&self) -> u64 {
        (self.idle_timeout_s * 1e6).round() as u64
    }

    pub fn tcp_config(&self) -> TcpConfig {
        TcpConfig {
            reorder_window_us: (self.reorder_window_ms * 1e3).round() as u64,
            correlation_window_us: (self.correlation_window_s * 1e6).round() as u64,
            syn_answer_timeout_us: (self.syn_timeout_s * 1e6).round() as u64,
        }
    }

    /// Checks thresholds and that every referenced file exists.
    pub fn validate(&self, need_inputs: bool) -> Result<(), ConfigError> {
        for (name, v) in [
            ("idle_timeout_s", self.idle_timeout_s),
            ("reorder_window_ms", self.reorder_window_ms),
            ("correlation_window_s", self.correlation_window_s),
            ("syn_timeout_s", self.syn_timeout_s),
            ("bin_width_s", self.bin_width_s),
            ("other_threshold_percent", self.other_threshold_percent),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if need_inputs && self.inputs.is_empty() {
            return Err(ConfigError::NoInputs);
        }
        for p in &self.inputs {
            if !p.is_file() {
                return Err(ConfigError::MissingFile { what: "input trace", path: p.clone() });
            }
        }
        for (what, p) in [
            ("prefix file", &self.prefix_file),
            ("geo database", &self.geo_db),
            ("services file", &self.services),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(ConfigError::MissingFile { what, path: p.clone() });
                }
            }
        }
        Ok(())
    }

    /// LAN/MAN prefixes from the prefix file plus the inline lists.
    pub fn prefix_config(&self) -> Result<PrefixConfig, ConfigError> {
        let (mut lan, mut man) = match &self.prefix_file {
            Some(p) => {
                let file = crate::classify::load_prefix_config(p)?;
                (file.lan().blocks().to_vec(), file.man().blocks().to_vec())
            }
            None => (Vec::new(), Vec::new()),
        };
        let parse = |s: &String| s.parse::<Cidr>().map_err(|_| ConfigError::BadCidr(s.clone()));
        for s in &self.lan {
            let c = parse(s)?;
            if !lan.contains(&c) {
                lan.push(c);
            }
        }
        for s in &self.man {
            let c = parse(s)?;
            if !man.contains(&c) {
                man.push(c);
            }
        }
        Ok(PrefixConfig::new(lan, man)?)
    }

    /// Key from the environment, else from the config file.
    pub fn resolve_key(&self) -> Result<Option<AnonKey>, ConfigError> {
        if let Ok(v) = std::env::var(ANON_KEY_ENV) {
            if !v.trim().is_empty() {
                return AnonKey::from_hex(v.trim())
                    .map(Some)
                    .map_err(|source| ConfigError::Key { origin: ANON_KEY_ENV, source });
            }
        }
        match &self.anon_key_hex {
            Some(h) => AnonKey::from_hex(h.trim())
                .map(Some)
                .map_err(|source| ConfigError::Key { origin: "anon_key_hex", source }),
            None => Ok(None),
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            out_dir: self.out.clone(),
            format: self.format,
            bin_width_s: self.bin_width_s,
            other_threshold_percent: self.other_threshold_percent,
            rate_scale: self.rate_scale,
            config_sha256: self.config_hash(),
        }
    }

    /// Digest of every setting that can change report contents. Input and
    /// database files enter by name and content hash; the output directory
    /// and the key do not enter at all.
    pub fn config_hash(&self) -> String {
        fn file_id(p: &Path) -> String {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let digest = std::fs::read(p).map(|b| sha256_hex(&b)).unwrap_or_default();
            format!("{name}:{digest}")
        }
        #[derive(Serialize)]
        struct View<'a> {
            inputs: Vec<String>,
            prefix_file: Option<String>,
            lan: &'a [String],
            man: &'a [String],
            geo_db: Option<String>,
            services: Option<String>,
            idle_timeout_s: f64,
            reorder_window_ms: f64,
            correlation_window_s: f64,
            syn_timeout_s: f64,
            bin_width_s: f64,
            other_threshold_percent: f64,
            rate_scale: XScale,
            format: OutputFormat,
        }
        let view = View {
            inputs: self.inputs.iter().map(|p| file_id(p)).collect(),
            prefix_file: self.prefix_file.as_deref().map(file_id),
            lan: &self.lan,
            man: &self.man,
            geo_db: self.geo_db.as_deref().map(file_id),
            services: self.services.as_deref().map(file_id),
            idle_timeout_s: self.idle_timeout_s,
            reorder_window_ms: self.reorder_window_ms,
            correlation_window_s: self.correlation_window_s,
            syn_timeout_s: self.syn_timeout_s,
            bin_width_s: self.bin_width_s,
            other_threshold_percent: self.other_threshold_percent,
            rate_scale: self.rate_scale,
            format: self.format,
        };
        sha256_hex(serde_json::to_string(&view).expect("config view serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.idle_timeout_s, 60.0);
        assert_eq!(c.bin_width_s, 3.0);
        assert_eq!(c.other_threshold_percent, 1.0);
        assert_eq!(c.rate_scale, XScale::Log);
        assert_eq!(c.tcp_config(), TcpConfig::default());
        assert_eq!(c.format, OutputFormat::Csv);
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "inputs = [\"a.pcap\"]\ngeo_db = \"/abs/geo.csv\"\nlan = [\"10.0.0.0/8\"]\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.inputs, vec![dir.path().join("a.pcap")]);
        assert_eq!(c.geo_db, Some(PathBuf::from("/abs/geo.csv")));
        assert_eq!(c.out, dir.path().join("report"));
        assert!(matches!(c.validate(true), Err(ConfigError::MissingFile { .. })));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("colour = 1", Path::new("x")).is_err());
        let c = RunConfig::from_toml("bin_width_s = 0", Path::new("x")).unwrap();
        assert!(matches!(c.validate(false), Err(ConfigError::NotPositive("bin_width_s"))));
    }

    #[test]
    fn hash_ignores_key_and_output_dir() {
        let a = RunConfig::from_toml("lan = [\"10.0.0.0/8\"]\nanon_key_hex = \"00\"\nout = \"x\"", Path::new("x")).unwrap();
        let b = RunConfig::from_toml("lan = [\"10.0.0.0/8\"]\nout = \"y\"", Path::new("x")).unwrap();
        let c = RunConfig::from_toml("lan = [\"10.0.0.0/9\"]", Path::new("x")).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn prefix_lists_merge_with_file() {
        let dir = tempfile::tempdir().unwrap();
        let pf = dir.path().join("p.txt");
        std::fs::write(&pf, "lan 10.0.0.0/16\nman 196.192.32.0/24\n").unwrap();
        let mut c = RunConfig { prefix_file: Some(pf), ..RunConfig::default() };
        c.lan.push("192.168.0.0/16".into());
        let p = c.prefix_config().unwrap();
        assert!(p.is_lan("192.168.1.1".parse().unwrap()));
        assert!(p.is_lan("10.0.3.1".parse().unwrap()));
        c.lan.push("nonsense".into());
        assert!(matches!(c.prefix_config(), Err(ConfigError::BadCidr(_))));
    }
}
