//! Run configuration: subcommand table, TOML files, flag parsing and
//! typed access to parameters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use thiserror::Error;
use wrlab::analysis::{critical_p, ExponentConfig};
use wrlab::LabError;

/// Largest `|ω|` in the support of the bilinear probe's input.
pub const PROBE_SUPPORT: f64 = 0.425;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "WRLAB_OUTPUT_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Usage(String),
    /// `--help` output; not an error for the user.
    #[error("{0}")]
    Help(String),
    #[error("invalid value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("cannot read config file {path}: {reason}")]
    File { path: String, reason: String },
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    Extend,
    KnappSweep,
    Weights,
    PartitionDemo,
    WavepacketCheck,
    BroadCheck,
    DualSuperlevel,
    BilinearProbe,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Extend,
        Subcommand::KnappSweep,
        Subcommand::Weights,
        Subcommand::PartitionDemo,
        Subcommand::WavepacketCheck,
        Subcommand::BroadCheck,
        Subcommand::DualSuperlevel,
        Subcommand::BilinearProbe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Extend => "extend",
            Subcommand::KnappSweep => "knapp-sweep",
            Subcommand::Weights => "weights",
            Subcommand::PartitionDemo => "partition-demo",
            Subcommand::WavepacketCheck => "wavepacket-check",
            Subcommand::BroadCheck => "broad-check",
            Subcommand::DualSuperlevel => "dual-superlevel",
            Subcommand::BilinearProbe => "bilinear-probe",
        }
    }

    pub fn from_name(s: &str) -> Option<Subcommand> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    fn about(&self) -> &'static str {
        match self {
            Subcommand::Extend => "Evaluate Ef for the Knapp cap on its box and check the lower bound",
            Subcommand::KnappSweep => "Knapp integral and norm slopes over a list of radii",
            Subcommand::Weights => "Dimensionality scan of a slab weight",
            Subcommand::PartitionDemo => "Median-cut partition of random points with incidence budgets",
            Subcommand::WavepacketCheck => "Wave packet reconstruction, energy and orthogonality checks",
            Subcommand::BroadCheck => "Broad/narrow pointwise inequality on random configurations",
            Subcommand::DualSuperlevel => "Superlevel sets of the dual operator and the duality pairing",
            Subcommand::BilinearProbe => "Bilinear tangential scaling ratios",
        }
    }

    /// Parameter keys with their defaults (`None`: derived or required).
    pub fn keys(&self) -> &'static [(&'static str, Option<&'static str>)] {
        match self {
            Subcommand::Extend => &[
                ("R", Some("64")),
                ("nodes", Some("5")),
                ("box-constant", Some("0.01")),
                ("radial", Some("48")),
                ("angular", Some("96")),
            ],
            Subcommand::KnappSweep => &[
                ("alpha", Some("3")),
                ("p", None),
                ("q", Some("4")),
                ("gamma", Some("2")),
                ("R", Some("64:4096:x2")),
                ("box-constant", Some("10")),
            ],
            Subcommand::Weights => &[
                ("alpha", Some("2.5")),
                ("R", Some("1:512:x2")),
                ("centers", Some("1000")),
                ("K", Some("30")),
                ("rescale", Some("0.125")),
                ("R-scan", Some("64")),
            ],
            Subcommand::PartitionDemo => &[
                ("points", Some("100000")),
                ("D", Some("6")),
                ("lines", Some("10000")),
                ("tubes", Some("200")),
                ("R", Some("256")),
                ("delta", Some("0.1")),
            ],
            Subcommand::WavepacketCheck => &[
                ("R", Some("256")),
                ("delta", Some("0.3")),
                ("N", Some("2")),
                ("n", Some("1400")),
                ("probes", Some("1000")),
                ("slices", Some("10")),
            ],
            Subcommand::BroadCheck => &[
                ("alpha", Some("3")),
                ("p", None),
                ("gamma", Some("2")),
                ("K", Some("8")),
                ("beta", Some("0.5")),
                ("configs", Some("10")),
                ("nodes", Some("8")),
            ],
            Subcommand::DualSuperlevel => &[
                ("alpha", Some("2.5")),
                ("p", None),
                ("q", Some("4")),
                ("gamma", Some("2")),
                ("epsilon", Some("0.1")),
                ("R", Some("4")),
                ("nodes", Some("16")),
                ("mesh", Some("48")),
                ("instances", Some("10")),
            ],
            Subcommand::BilinearProbe => &[
                ("alpha", Some("2.5")),
                ("p", None),
                ("q", Some("4")),
                ("gamma", Some("2")),
                ("epsilon", Some("0.5")),
                ("K", Some("8")),
                ("R", Some("64,128,256")),
                ("n", Some("1200")),
            ],
        }
    }
}

const COMMON_KEYS: [&str; 3] = ["seed", "threads", "output-dir"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    /// Every parameter after merging defaults, file and flags.
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
}

pub fn command() -> Command {
    let mut cmd = Command::new("wrlab")
        .about("Numerical experiments for weighted Fourier extension on the paraboloid")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sc in Subcommand::ALL {
        let mut sub = Command::new(sc.name()).about(sc.about()).arg(
            Arg::new("config").long("config").value_name("FILE").help("TOML file; flags override its values"),
        );
        for key in COMMON_KEYS {
            sub = sub.arg(Arg::new(key).long(key).action(ArgAction::Set));
        }
        for (key, default) in sc.keys() {
            let help = match default {
                Some(d) => format!("default {d}"),
                None => "derived when omitted".to_string(),
            };
            sub = sub.arg(Arg::new(*key).long(*key).action(ArgAction::Set).help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Flat keys of the file's top level plus its `[subcommand]` section, the
/// section taking precedence.
fn file_params(path: &Path, sc: Subcommand) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::File { path: path.display().to_string(), reason: e.to_string() })?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::File { path: path.display().to_string(), reason: e.to_string() })?;
    let mut out = BTreeMap::new();
    let mut section = None;
    for (k, v) in &table {
        match v {
            toml::Value::Table(t) => {
                if Subcommand::from_name(k).is_none() {
                    return Err(ConfigError::Usage(format!("unknown section [{k}] in {}", path.display())));
                }
                if k == sc.name() {
                    section = Some(t);
                }
            }
            other => {
                out.insert(k.clone(), scalar(k, other)?);
            }
        }
    }
    if let Some(t) = section {
        for (k, v) in t {
            out.insert(k.clone(), scalar(k, v)?);
        }
    }
    Ok(out)
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, ConfigError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => {
            let parts: Result<Vec<String>, _> = items.iter().map(|x| scalar(key, x)).collect();
            Ok(parts?.join(","))
        }
        _ => Err(bad(key, "expected a scalar or a list")),
    }
}

/// Parses command-line arguments (including the program name).
pub fn parse_args<I, T>(args: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ConfigError::Help(e.render().to_string()),
        _ => ConfigError::Usage(e.render().to_string()),
    })?;
    let (name, sub) = matches.subcommand().ok_or_else(|| ConfigError::Usage("missing subcommand".into()))?;
    let sc = Subcommand::from_name(name).ok_or_else(|| ConfigError::Usage(format!("unknown subcommand {name}")))?;
    from_matches(sc, sub)
}

fn from_matches(sc: Subcommand, m: &ArgMatches) -> Result<RunConfig, ConfigError> {
    let mut flags = BTreeMap::new();
    for key in COMMON_KEYS.iter().copied().chain(sc.keys().iter().map(|k| k.0)) {
        if let Some(v) = m.get_one::<String>(key) {
            flags.insert(key.to_string(), v.clone());
        }
    }
    let file = match m.get_one::<String>("config") {
        Some(p) => file_params(Path::new(p), sc)?,
        None => BTreeMap::new(),
    };
    build(sc, file, flags)
}

/// Merges defaults, file values and flags (in increasing precedence) and
/// validates every parameter.
pub fn build(
    sc: Subcommand,
    file: BTreeMap<String, String>,
    flags: BTreeMap<String, String>,
) -> Result<RunConfig, ConfigError> {
    let known: Vec<&str> = COMMON_KEYS.iter().copied().chain(sc.keys().iter().map(|k| k.0)).collect();
    for k in file.keys() {
        if !known.contains(&k.as_str()) {
            return Err(ConfigError::Usage(format!("unknown key `{k}` for {}", sc.name())));
        }
    }
    let mut params = BTreeMap::new();
    for (k, d) in sc.keys() {
        if let Some(d) = d {
            params.insert(k.to_string(), d.to_string());
        }
    }
    params.extend(file);
    params.extend(flags);

    let seed = match params.remove("seed") {
        Some(s) => s.trim().parse::<u64>().map_err(|_| bad("seed", format!("`{s}` is not a nonnegative integer")))?,
        None => 0,
    };
    let threads = match params.remove("threads") {
        Some(s) => s.trim().parse::<usize>().map_err(|_| bad("threads", format!("`{s}` is not a count")))?,
        None => 0,
    };
    let output_dir = match params.remove("output-dir") {
        Some(s) => PathBuf::from(s),
        None => std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("wrlab-out")),
    };
    let cfg = RunConfig { subcommand: sc, params, seed, threads, output_dir };
    cfg.validate()?;
    Ok(cfg)
}

/// `64,128,256` or geometric `start:stop:xfactor`.
pub fn parse_r_list(s: &str) -> Result<Vec<f64>, ConfigError> {
    let s = s.trim();
    let num = |t: &str| -> Result<f64, ConfigError> {
        let v: f64 = t.trim().parse().map_err(|_| bad("R", format!("`{t}` is not a number")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(bad("R", format!("radius {t} must be positive")));
        }
        Ok(v)
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 || !parts[2].starts_with('x') {
            return Err(bad("R", format!("`{s}` is not of the form start:stop:xfactor")));
        }
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let f = num(&parts[2][1..])?;
        if !(f > 1.0) || b < a {
            return Err(bad("R", "need factor > 1 and stop >= start"));
        }
        let mut out = Vec::new();
        let mut v = a;
        while v <= b * (1.0 + 1e-12) {
            out.push(v);
            v *= f;
        }
        return Ok(out);
    }
    s.split(',').map(num).collect()
}

impl RunConfig {
    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        let s = self.params.get(key).ok_or_else(|| bad(key, "missing"))?;
        let v: f64 = s.trim().parse().map_err(|_| bad(key, format!("`{s}` is not a number")))?;
        if !v.is_finite() && !(key == "q" && v == f64::INFINITY) {
            return Err(bad(key, "must be finite"));
        }
        Ok(v)
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        let s = self.params.get(key).ok_or_else(|| bad(key, "missing"))?;
        s.trim().parse().map_err(|_| bad(key, format!("`{s}` is not a nonnegative integer")))
    }

    pub fn get_r_list(&self) -> Result<Vec<f64>, ConfigError> {
        parse_r_list(self.params.get("R").map(String::as_str).unwrap_or(""))
    }

    pub fn get_r(&self) -> Result<f64, ConfigError> {
        let v = self.get_r_list()?;
        if v.len() != 1 {
            return Err(bad("R", "expected a single radius"));
        }
        Ok(v[0])
    }

    /// Exponent configuration from alpha, p, q, gamma, epsilon, K.
    pub fn exponents(&self) -> Result<ExponentConfig, ConfigError> {
        let alpha = self.get_f64("alpha")?;
        let p = match self.params.get("p") {
            Some(_) => Some(self.get_f64("p")?),
            None => None,
        };
        let opt = |k: &str, d: f64| -> Result<f64, ConfigError> {
            if self.params.contains_key(k) {
                self.get_f64(k)
            } else {
                Ok(d)
            }
        };
        let q = opt("q", 4.0)?;
        let gamma = opt("gamma", 2.0)?;
        let epsilon = opt("epsilon", 0.1)?;
        let k = opt("K", 8.0)?;
        let beta = opt("beta", 0.5)?;
        ExponentConfig::new(alpha, p, q, gamma, epsilon, k, beta, 1.0).map_err(|e| match e {
            LabError::Parameter { name, reason } => bad(name, reason),
            other => bad("alpha", other.to_string()),
        })
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        let v = self.get_f64(key)?;
        if !(v > 0.0) {
            return Err(bad(key, "must be positive"));
        }
        Ok(v)
    }

    fn count(&self, key: &str, lo: usize, hi: usize) -> Result<usize, ConfigError> {
        let v = self.get_usize(key)?;
        if v < lo || v > hi {
            return Err(bad(key, format!("must lie in [{lo}, {hi}]")));
        }
        Ok(v)
    }

    /// Checks every parameter against its module's preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.subcommand {
            Subcommand::Extend => {
                if self.get_r()? < 1.0 {
                    return Err(bad("R", "need R >= 1"));
                }
                self.count("nodes", 1, 64)?;
                self.positive("box-constant")?;
                self.count("radial", 1, 4096)?;
                self.count("angular", 1, 8192)?;
            }
            Subcommand::KnappSweep => {
                let e = self.exponents()?;
                let rs = self.get_r_list()?;
                if rs.len() < 4 || rs.iter().any(|&r| r < 4.0) {
                    return Err(bad("R", "need at least four radii, each >= 4"));
                }
                if !(e.q >= 1.0) {
                    return Err(bad("q", "need q >= 1"));
                }
                if self.get_f64("box-constant")? < 1.0 {
                    return Err(bad("box-constant", "need at least 1"));
                }
            }
            Subcommand::Weights => {
                let alpha = self.get_f64("alpha")?;
                if !(alpha > 2.0 && alpha <= 3.0) {
                    return Err(bad("alpha", "slab weights need 2 < alpha <= 3"));
                }
                let rs = self.get_r_list()?;
                if rs.iter().any(|&r| r < 1.0) {
                    return Err(bad("R", "radii must be >= 1"));
                }
                self.count("centers", 1, 1_000_000)?;
                if !(self.get_f64("K")? >= 3.0) {
                    return Err(bad("K", "need K >= 3"));
                }
                let r = self.get_f64("rescale")?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(bad("rescale", "need 0 < rescale <= 1"));
                }
                if !(self.get_f64("R-scan")? >= 1.0) {
                    return Err(bad("R-scan", "need R-scan >= 1"));
                }
            }
            Subcommand::PartitionDemo => {
                self.count("points", 1, 10_000_000)?;
                self.count("D", 1, 40)?;
                self.count("lines", 0, 10_000_000)?;
                self.count("tubes", 0, 100_000)?;
                if self.get_r()? < 4.0 {
                    return Err(bad("R", "need R >= 4"));
                }
                let d = self.get_f64("delta")?;
                if !(d > 0.0 && d < 0.5) {
                    return Err(bad("delta", "need 0 < delta < 1/2"));
                }
            }
            Subcommand::WavepacketCheck => {
                let r = self.get_r()?;
                if r < 4.0 {
                    return Err(bad("R", "need R >= 4"));
                }
                let d = self.get_f64("delta")?;
                if !(d > 0.0 && d < 0.5) {
                    return Err(bad("delta", "need 0 < delta < 1/2"));
                }
                self.count("N", 1, 16)?;
                let n = self.count("n", 2, 20_000)?;
                if n % 2 != 0 {
                    return Err(bad("n", "must be even"));
                }
                // centre cap, sample step 2/n
                let period = n as f64 / 2.0;
                let need = 2.0 * (r + r.powf(0.5 + d));
                if period < need {
                    return Err(bad("n", format!("spatial period {period} below the required {need:.1}")));
                }
                self.count("probes", 1, 1_000_000)?;
                self.count("slices", 1, 1000)?;
            }
            Subcommand::BroadCheck => {
                let e = self.exponents()?;
                if !(e.beta > 0.0 && e.beta <= 1.0) {
                    return Err(bad("beta", "need 0 < beta <= 1"));
                }
                self.count("configs", 1, 1000)?;
                self.count("nodes", 1, 64)?;
            }
            Subcommand::DualSuperlevel => {
                self.exponents()?;
                self.positive("R")?;
                self.count("nodes", 1, 64)?;
                self.count("mesh", 1, 2048)?;
                self.count("instances", 1, 1000)?;
            }
            Subcommand::BilinearProbe => {
                let e = self.exponents()?;
                if !(e.delta < 0.5) {
                    return Err(bad("epsilon", "need epsilon^2 < 1/2"));
                }
                let rs = self.get_r_list()?;
                if rs.iter().any(|&r| r < 4.0) {
                    return Err(bad("R", "radii must be >= 4"));
                }
                let n = self.count("n", 1, 20_000)?;
                let top = rs.iter().copied().fold(0.0, f64::max);
                let w0 = PROBE_SUPPORT + top.powf(-0.5);
                let need = 2.0 * (top * (1.0 + 2.0 * w0) + top.powf(0.5 + e.delta));
                if (n as f64) < need {
                    return Err(bad("n", format!("inverse sample step {n} below the required {need:.1}")));
                }
            }
        }
        Ok(())
    }
}

/// Critical exponent `p` unless given.
pub fn p_or_critical(cfg: &RunConfig) -> Result<f64, ConfigError> {
    match cfg.params.get("p") {
        Some(_) => cfg.get_f64("p"),
        None => Ok(critical_p(cfg.get_f64("alpha")?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        std::iter::once("wrlab").chain(v.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn r_list_syntax() {
        assert_eq!(parse_r_list("64:1024:x2").unwrap(), vec![64.0, 128.0, 256.0, 512.0, 1024.0]);
        assert_eq!(parse_r_list("64,128").unwrap(), vec![64.0, 128.0]);
        assert!(parse_r_list("64:1024").is_err());
        assert!(parse_r_list("64,abc").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "alpha = 2.5\n[knapp-sweep]\nq = 3\n").unwrap();
        let cfg = parse_args(args(&["knapp-sweep", "--config", path.to_str().unwrap(), "--alpha", "3"])).unwrap();
        assert_eq!(cfg.params["alpha"], "3");
        assert_eq!(cfg.params["q"], "3");
        let cfg = parse_args(args(&["knapp-sweep", "--config", path.to_str().unwrap()])).unwrap();
        assert_eq!(cfg.params["alpha"], "2.5");
    }

    #[test]
    fn gamma_range_rejected() {
        let err = parse_args(args(&["knapp-sweep", "--gamma", "3", "--p", "3.25", "--alpha", "3"]));
        assert!(matches!(err, Err(ConfigError::Value { ref key, .. }) if key == "gamma"), "{err:?}");
    }

    #[test]
    fn usage_errors() {
        assert!(matches!(parse_args(args(&["no-such"])), Err(ConfigError::Usage(_))));
        assert!(matches!(parse_args(args(&["extend", "--bogus", "1"])), Err(ConfigError::Usage(_))));
        assert!(matches!(parse_args(args(&["extend", "--R", "64", "--R", "128"])), Err(ConfigError::Usage(_))));
        let err = parse_args(args(&["extend", "--nodes", "x"]));
        assert!(matches!(err, Err(ConfigError::Value { ref key, .. }) if key == "nodes"));
    }

    #[test]
    fn seed_defaults_to_zero() {
        let cfg = parse_args(args(&["broad-check"])).unwrap();
        assert_eq!(cfg.seed, 0);
    }
}
