//! Configuration files, output files, snapshots and checkpoints.
//!
//! # Config format
//!
//! One `key = value` pair per line. Values are JSON (`64`, `0.1`, `"rational1"`,
//! `[0.2, 0.1]`); a bare word such as `rational1` is read as a string. Blank
//! lines and lines starting with `#` are ignored.
//!
//! Simulation keys:
//!
//! | key | required | meaning |
//! |---|---|---|
//! | `n` | yes | grid points per direction (even, >= 8) |
//! | `nu`, `mu`, `kappa`, `g`, `alpha` | yes | physical coefficients |
//! | `calming` | yes | `identity`, `rational1`, `rational2`, `arctan`, `saturating` |
//! | `epsilon` | unless identity | calming parameter |
//! | `dt`, `t_final` | yes | step size and end time (`t_final / dt` integral) |
//! | `initial` | yes | initial data, names joined with `+` |
//! | `seed` | no (0) | seed for `random-smooth` |
//! | `scheme` | no (`if-rk2`) | time scheme |
//! | `cfl_safety` | no (0.5) | fraction of the advective limit allowed |
//! | `output_dir` | no (`.`) | where files are written |
//! | `record_every` | no (1) | steps between `energy.csv` rows |
//! | `snapshot_every` | no | steps between snapshots; the final state is always written |
//! | `checkpoint_every` | no | steps between checkpoints |
//!
//! Sweep plans use the same physics keys with `epsilons = [..]` (strictly
//! decreasing) instead of `epsilon`, and have no snapshot or checkpoint keys.
//!
//! # Output files
//!
//! * `energy.csv`: header [`EnergyRecord::CSV_HEADER`], one row every `record_every` steps and at the end.
//! * `snap_<step>.bin`: `5 n^2` little-endian `f64`, the physical samples of
//!   `u1, u2, b1, b2, theta` in that order; each block is row-major with rows
//!   along `x2` (index `i2 * n + i1`). `snap_<step>.json` holds the header.
//! * `ckpt_<step>.bin`: magic `CMHDBCK1`, `u32` LE header length, JSON header,
//!   then the spectral coefficients `(re, im)` of the five fields as LE `f64`.
//! * `summary.json`, `sweep.csv`, `ratefit.json`, `riccati.csv`.
//!
//! Every file is written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calming::{verify_properties, CalmingError, CalmingFamily, CalmingSpec, PropertyReport};
use crate::diagnostics::{check_identities, record, DiagnosticsError, EnergyRecord};
use crate::dynamics::{
    builtin_initial_data, simulate, DynamicsError, Observer, PhysParams, Scheme, State, StepperConfig,
    INITIAL_DATA_NAMES,
};
use crate::experiments::{convergence_sweep, riccati_table, ExperimentError, RiccatiRow, SweepPlan, SweepReport};
use crate::spectral::{Grid, SpectralScalar, SpectralVector, C64};

pub const FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CMHDBCK1";
pub const THREADS_ENV: &str = "CALMED_MHDB_THREADS";

fn location(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}"),
        None => "command line".to_string(),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("{}: unknown key `{key}`", location(.line))]
    UnknownKey { line: Option<usize>, key: String },
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("{}: invalid value for `{key}`: {message}", location(.line))]
    InvalidValue {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{THREADS_ENV}={0} is not a positive integer")]
    Threads(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: corrupted header field `{field}`: {message}", path.display())]
    CorruptHeader {
        path: PathBuf,
        field: &'static str,
        message: String,
    },
    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    Version { path: PathBuf, found: u64, expected: u32 },
    #[error("{}: truncated, expected {expected} payload bytes, found {found}", path.display())]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{}: {what} hash mismatch (expected {expected}, found {found})", path.display())]
    HashMismatch {
        path: PathBuf,
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Calming(#[from] CalmingError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl IoError {
    /// True for problems with the configuration rather than the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, IoError::Config(_))
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(file_err(&tmp))?;
    fs::rename(&tmp, path).map_err(file_err(path))
}

/// Parsed `key = value` file; each value remembers its line (`None` for overrides).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (Option<usize>, Value)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, got `{trimmed}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            let value = parse_value(value.trim()).map_err(|message| ConfigError::Syntax { line, message })?;
            if entries.insert(key.to_string(), (Some(line), value)).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(file_err(path))?;
        Ok(Self::parse(&text)?)
    }

    /// Sets or replaces a value (command-line override).
    pub fn set(&mut self, key: &str, value: Value) {
        self.entries.insert(key.to_string(), (None, value));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.entries.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((key, (line, _))) => Err(ConfigError::UnknownKey {
                line: *line,
                key: key.clone(),
            }),
            None => Ok(()),
        }
    }

    fn get(&self, key: &'static str) -> Result<&(Option<usize>, Value), ConfigError> {
        self.entries.get(key).ok_or(ConfigError::Missing(key))
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            key: key.to_string(),
            line: self.entries.get(key).and_then(|e| e.0),
            message: message.into(),
        }
    }

    fn f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        let (_, v) = self.get(key)?;
        v.as_f64().ok_or_else(|| self.invalid(key, format!("expected a number, got {v}")))
    }

    fn u64(&self, key: &'static str) -> Result<u64, ConfigError> {
        let (_, v) = self.get(key)?;
        v.as_u64()
            .ok_or_else(|| self.invalid(key, format!("expected a nonnegative integer, got {v}")))
    }

    fn string(&self, key: &'static str) -> Result<String, ConfigError> {
        let (_, v) = self.get(key)?;
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| self.invalid(key, format!("expected a string, got {v}")))
    }

    fn f64_list(&self, key: &'static str) -> Result<Vec<f64>, ConfigError> {
        let (_, v) = self.get(key)?;
        let err = || self.invalid(key, format!("expected a list of numbers, got {v}"));
        v.as_array()
            .ok_or_else(err)?
            .iter()
            .map(|x| x.as_f64().ok_or_else(err))
            .collect()
    }

    fn optional<T>(
        &self,
        key: &'static str,
        get: impl Fn(&Self, &'static str) -> Result<T, ConfigError>,
    ) -> Result<Option<T>, ConfigError> {
        if self.contains(key) {
            get(self, key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn interval(&self, key: &'static str) -> Result<Option<u64>, ConfigError> {
        match self.optional(key, Self::u64)? {
            Some(0) => Err(self.invalid(key, "must be at least 1")),
            other => Ok(other),
        }
    }

    fn grid_size(&self) -> Result<usize, ConfigError> {
        let n = self.u64("n")? as usize;
        Grid::new(n).map_err(|e| self.invalid("n", e.to_string()))?;
        Ok(n)
    }

    fn params(&self) -> Result<PhysParams, ConfigError> {
        let params = PhysParams {
            nu: self.f64("nu")?,
            mu: self.f64("mu")?,
            kappa: self.f64("kappa")?,
            g: self.f64("g")?,
            alpha: self.f64("alpha")?,
        };
        params.validate().map_err(|e| match e {
            DynamicsError::InvalidParameter { name, .. } => self.invalid(name, e.to_string()),
            other => self.invalid("params", other.to_string()),
        })?;
        Ok(params)
    }

    fn family(&self) -> Result<CalmingFamily, ConfigError> {
        self.string("calming")?
            .parse()
            .map_err(|e: CalmingError| self.invalid("calming", e.to_string()))
    }

    fn initial(&self) -> Result<String, ConfigError> {
        let name = self.string("initial")?;
        if name.split('+').any(|part| !INITIAL_DATA_NAMES.contains(&part)) {
            return Err(self.invalid(
                "initial",
                format!("`{name}` is not a `+`-joined list of {}", INITIAL_DATA_NAMES.join(", ")),
            ));
        }
        Ok(name)
    }

    fn stepper(&self, t_final_key: &'static str) -> Result<StepperConfig, ConfigError> {
        let mut cfg = StepperConfig::new(self.f64("dt")?, self.f64(t_final_key)?);
        if let Some(s) = self.optional("scheme", Self::string)? {
            cfg.scheme = s.parse::<Scheme>().map_err(|e| self.invalid("scheme", e.to_string()))?;
        }
        if let Some(c) = self.optional("cfl_safety", Self::f64)? {
            cfg.cfl_safety = c;
        }
        cfg.validate().map_err(|e| {
            let key = match &e {
                DynamicsError::InvalidParameter { name, .. } => name,
                _ => "t_final",
            };
            self.invalid(key, e.to_string())
        })?;
        Ok(cfg)
    }
}

fn parse_value(text: &str) -> Result<Value, String> {
    if text.is_empty() {
        return Err("missing value".to_string());
    }
    match serde_json::from_str(text) {
        Ok(v) => Ok(v),
        Err(e) => {
            let bare = text
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "_-+./".contains(c));
            if bare && text.starts_with(|c: char| c.is_ascii_alphabetic()) {
                Ok(Value::String(text.to_string()))
            } else {
                Err(format!("cannot parse value `{text}`: {e}"))
            }
        }
    }
}

/// Command-line overrides; each replaces the matching config key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub calming: Option<String>,
    pub grid: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub seed: Option<u64>,
    pub record_every: Option<u64>,
    pub snapshot_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, raw: &mut RawConfig) {
        if let Some(v) = &self.output_dir {
            raw.set("output_dir", json!(v.to_string_lossy()));
        }
        if let Some(v) = self.epsilon {
            raw.set("epsilon", json!(v));
        }
        if let Some(v) = &self.calming {
            raw.set("calming", json!(v));
        }
        if let Some(v) = self.grid {
            raw.set("n", json!(v));
        }
        if let Some(v) = self.dt {
            raw.set("dt", json!(v));
        }
        if let Some(v) = self.t_final {
            raw.set("t_final", json!(v));
        }
        if let Some(v) = self.seed {
            raw.set("seed", json!(v));
        }
        if let Some(v) = self.record_every {
            raw.set("record_every", json!(v));
        }
        if let Some(v) = self.snapshot_every {
            raw.set("snapshot_every", json!(v));
        }
        if let Some(v) = self.checkpoint_every {
            raw.set("checkpoint_every", json!(v));
        }
    }
}

const PHYSICS_KEYS: [&str; 13] = [
    "n", "nu", "mu", "kappa", "g", "alpha", "calming", "dt", "t_final", "initial", "seed", "scheme", "cfl_safety",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub params: PhysParams,
    pub calming: CalmingSpec,
    pub stepper: StepperConfig,
    pub initial: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub record_every: u64,
    pub snapshot_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let mut allowed = PHYSICS_KEYS.to_vec();
        allowed.extend(["epsilon", "output_dir", "record_every", "snapshot_every", "checkpoint_every"]);
        raw.reject_unknown(&allowed)?;
        let family = raw.family()?;
        let epsilon = if family == CalmingFamily::Identity {
            raw.optional("epsilon", RawConfig::f64)?.unwrap_or(0.0)
        } else {
            raw.f64("epsilon")?
        };
        let calming = if family == CalmingFamily::Identity {
            CalmingSpec::identity()
        } else {
            CalmingSpec::new(family, epsilon).map_err(|e| raw.invalid("epsilon", e.to_string()))?
        };
        Ok(Self {
            n: raw.grid_size()?,
            params: raw.params()?,
            calming,
            stepper: raw.stepper("t_final")?,
            initial: raw.initial()?,
            seed: raw.optional("seed", RawConfig::u64)?.unwrap_or(0),
            output_dir: PathBuf::from(raw.optional("output_dir", RawConfig::string)?.unwrap_or_else(|| ".".to_string())),
            record_every: raw.interval("record_every")?.unwrap_or(1),
            snapshot_every: raw.interval("snapshot_every")?,
            checkpoint_every: raw.interval("checkpoint_every")?,
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, IoError> {
        let mut raw = RawConfig::read(path)?;
        overrides.apply(&mut raw);
        Ok(Self::from_raw(&raw)?)
    }

    /// SHA-256 of the fields that determine the trajectory. The end time,
    /// output locations and intervals are excluded, so a run can be resumed
    /// with a later `t_final`.
    pub fn config_hash(&self) -> String {
        let physics = json!({
            "n": self.n,
            "params": self.params,
            "calming": self.calming,
            "dt": self.stepper.dt,
            "scheme": self.stepper.scheme,
            "cfl_safety": self.stepper.cfl_safety,
            "initial": self.initial,
            "seed": self.seed,
        });
        hex::encode(Sha256::digest(physics.to_string().as_bytes()))
    }
}

/// Reads a sweep plan and the output directory it names.
pub fn load_sweep_plan(path: &Path, overrides: &Overrides) -> Result<(SweepPlan, PathBuf), IoError> {
    let mut raw = RawConfig::read(path)?;
    if overrides.epsilon.is_some() {
        return Err(ConfigError::InvalidValue {
            key: "epsilon".to_string(),
            line: None,
            message: "a sweep takes its ladder from `epsilons`".to_string(),
        }
        .into());
    }
    overrides.apply(&mut raw);
    Ok(sweep_plan_from_raw(&raw)?)
}

pub fn sweep_plan_from_raw(raw: &RawConfig) -> Result<(SweepPlan, PathBuf), ConfigError> {
    let mut allowed = PHYSICS_KEYS.to_vec();
    allowed.extend(["epsilons", "output_dir", "record_every"]);
    raw.reject_unknown(&allowed)?;
    let stepper = raw.stepper("t_final")?;
    let plan = SweepPlan {
        n: raw.grid_size()?,
        params: raw.params()?,
        family: raw.family()?,
        epsilon_ladder: raw.f64_list("epsilons")?,
        t_final: stepper.t_final,
        dt: stepper.dt,
        initial: raw.initial()?,
        seed: raw.optional("seed", RawConfig::u64)?.unwrap_or(0),
        record_every: raw.interval("record_every")?.unwrap_or(1),
    };
    plan.validate().map_err(|e| raw.invalid("epsilons", e.to_string()))?;
    let out = PathBuf::from(raw.optional("output_dir", RawConfig::string)?.unwrap_or_else(|| ".".to_string()));
    Ok((plan, out))
}

/// Worker count from `CALMED_MHDB_THREADS`, else the available parallelism.
pub fn sweep_workers() -> Result<usize, ConfigError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(ConfigError::Threads(v)),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub n: usize,
    pub t: f64,
    pub step: u64,
    pub config_hash: String,
    pub fields: Vec<String>,
    pub layout: String,
}

const SNAPSHOT_FIELDS: [&str; 5] = ["u1", "u2", "b1", "b2", "theta"];

fn fields(state: &State) -> [&SpectralScalar; 5] {
    [&state.u.x1, &state.u.x2, &state.b.x1, &state.b.x2, &state.theta]
}

/// Writes `snap_<step>.bin` and `snap_<step>.json` into `dir`.
pub fn write_snapshot(dir: &Path, grid: &Grid, state: &State, config_hash: &str) -> Result<PathBuf, IoError> {
    let mut payload = Vec::with_capacity(5 * grid.len() * 8);
    for f in fields(state) {
        for x in grid.transform_inverse(f).map_err(DynamicsError::from)? {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = SnapshotHeader {
        format_version: FORMAT_VERSION,
        n: grid.n(),
        t: state.t,
        step: state.step,
        config_hash: config_hash.to_string(),
        fields: SNAPSHOT_FIELDS.iter().map(|s| s.to_string()).collect(),
        layout: "f64 little-endian, one n*n block per field, index i2*n + i1".to_string(),
    };
    let bin = dir.join(format!("snap_{}.bin", state.step));
    write_atomic(&bin, &payload)?;
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    write_atomic(&dir.join(format!("snap_{}.json", state.step)), text.as_bytes())?;
    Ok(bin)
}

/// Reads a snapshot given the path of its `.bin` file.
pub fn read_snapshot(bin: &Path) -> Result<(SnapshotHeader, Vec<f64>), IoError> {
    let json_path = bin.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(file_err(&json_path))?;
    let header: SnapshotHeader = serde_json::from_str(&text)?;
    if header.format_version != FORMAT_VERSION {
        return Err(IoError::Version {
            path: json_path,
            found: header.format_version as u64,
            expected: FORMAT_VERSION,
        });
    }
    let bytes = fs::read(bin).map_err(file_err(bin))?;
    let expected = 5 * header.n * header.n * 8;
    if bytes.len() != expected {
        return Err(IoError::Truncated {
            path: bin.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

fn checkpoint_payload(state: &State) -> Vec<u8> {
    let mut payload = Vec::with_capacity(5 * state.theta.coeffs().len() * 16);
    for f in fields(state) {
        for c in f.coeffs() {
            payload.extend_from_slice(&c.re.to_le_bytes());
            payload.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    payload
}

/// Serializes the spectral coefficients bit-exactly.
pub fn checkpoint_save(state: &State, config_hash: &str, path: &Path) -> Result<(), IoError> {
    let payload = checkpoint_payload(state);
    let header = json!({
        "format_version": FORMAT_VERSION,
        "n": state.n(),
        "t": state.t,
        "step": state.step,
        "config_hash": config_hash,
        "payload_len": payload.len(),
        "payload_sha256": hex::encode(Sha256::digest(&payload)),
    })
    .to_string();
    let mut bytes = Vec::with_capacity(12 + header.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend_from_slice(&payload);
    write_atomic(path, &bytes)
}

/// A loaded checkpoint together with the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: State,
    pub config_hash: String,
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint, IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let corrupt = |field: &'static str, message: String| IoError::CorruptHeader {
        path: path.to_path_buf(),
        field,
        message,
    };
    if bytes.len() < 12 {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("magic", "not a checkpoint file".to_string()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(corrupt("header_len", format!("{header_len} exceeds file size")));
    }
    let header: Value = serde_json::from_slice(&body[..header_len])
        .map_err(|e| corrupt("header", e.to_string()))?;
    let field = |name: &'static str| header.get(name).ok_or_else(|| corrupt(name, "missing".to_string()));
    let uint = |name: &'static str| -> Result<u64, IoError> {
        field(name)?
            .as_u64()
            .ok_or_else(|| corrupt(name, "expected a nonnegative integer".to_string()))
    };
    let text = |name: &'static str| -> Result<String, IoError> {
        field(name)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| corrupt(name, "expected a string".to_string()))
    };

    let version = uint("format_version")?;
    if version != FORMAT_VERSION as u64 {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = uint("n")? as usize;
    let grid = Grid::new(n).map_err(|e| corrupt("n", e.to_string()))?;
    let t = field("t")?
        .as_f64()
        .ok_or_else(|| corrupt("t", "expected a number".to_string()))?;
    let step = uint("step")?;
    let config_hash = text("config_hash")?;
    let payload_len = uint("payload_len")? as usize;
    let expected_len = 5 * grid.len() * 16;
    if payload_len != expected_len {
        return Err(corrupt("payload_len", format!("{payload_len} does not match n={n}")));
    }
    let sha = text("payload_sha256")?;
    let payload = &body[header_len..];
    if payload.len() != expected_len {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: expected_len,
            found: payload.len(),
        });
    }
    let found = hex::encode(Sha256::digest(payload));
    if found != sha {
        return Err(IoError::HashMismatch {
            path: path.to_path_buf(),
            what: "payload",
            expected: sha,
            found,
        });
    }
    let mut blocks = payload.chunks_exact(grid.len() * 16).map(|block| {
        let coeffs: Vec<C64> = block
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        SpectralScalar::from_coeffs(n, coeffs).expect("length checked above")
    });
    let mut next = || blocks.next().expect("five blocks");
    let (u1, u2, b1, b2, theta) = (next(), next(), next(), next(), next());
    Ok(Checkpoint {
        state: State {
            u: SpectralVector::new(u1, u2),
            b: SpectralVector::new(b1, b2),
            theta,
            t,
            step,
        },
        config_hash,
    })
}

fn energy_csv(rows: &[EnergyRecord]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(EnergyRecord::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Rows of an existing `energy.csv` strictly before `step`, header excluded.
fn energy_rows_before(path: &Path, step: u64) -> Result<Vec<String>, IoError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(file_err(path)(e)),
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let row_step: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::CorruptHeader {
                path: path.to_path_buf(),
                field: "step",
                message: format!("unreadable row `{line}`"),
            })?;
        if row_step < step {
            rows.push(line.to_string());
        }
    }
    Ok(rows)
}

struct RunWriter<'a> {
    config: &'a RunConfig,
    grid: &'a Grid,
    hash: String,
    records: Vec<EnergyRecord>,
    snapshots: Vec<PathBuf>,
    checkpoints: Vec<PathBuf>,
    last: Option<EnergyRecord>,
}

impl Observer for RunWriter<'_> {
    fn observe(&mut self, state: &State, last: bool) -> Result<(), String> {
        let cfg = self.config;
        let step = state.step;
        let rec = record(self.grid, state, &cfg.params, &cfg.calming);
        if step.is_multiple_of(cfg.record_every) || last {
            self.records.push(rec);
        }
        let dir = &cfg.output_dir;
        if cfg.snapshot_every.is_some_and(|k| step.is_multiple_of(k)) || last {
            let p = write_snapshot(dir, self.grid, state, &self.hash).map_err(|e| e.to_string())?;
            self.snapshots.push(p);
        }
        if cfg.checkpoint_every.is_some_and(|k| step.is_multiple_of(k)) {
            let p = dir.join(format!("ckpt_{step}.bin"));
            checkpoint_save(state, &self.hash, &p).map_err(|e| e.to_string())?;
            self.checkpoints.push(p);
        }
        self.last = Some(rec);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub config_hash: String,
    pub resumed_from_step: Option<u64>,
    pub final_step: u64,
    pub final_t: f64,
    pub final_record: EnergyRecord,
    pub snapshots: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs a simulation and writes `energy.csv`, snapshots, checkpoints and
/// `summary.json`. With `resume`, the run continues from a checkpoint of the
/// same configuration and the rows of an existing `energy.csv` before the
/// checkpoint are kept.
pub fn run_simulation(config: &RunConfig, resume: Option<&Path>) -> Result<RunSummary, IoError> {
    let grid = Grid::new(config.n).map_err(DynamicsError::from)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let hash = config.config_hash();
    let energy_path = dir.join("energy.csv");

    let (initial, kept_rows) = match resume {
        Some(path) => {
            let ckpt = checkpoint_load(path)?;
            if ckpt.config_hash != hash {
                return Err(IoError::HashMismatch {
                    path: path.to_path_buf(),
                    what: "config",
                    expected: hash,
                    found: ckpt.config_hash,
                });
            }
            if ckpt.state.n() != config.n {
                return Err(DynamicsError::GridMismatch {
                    expected: config.n,
                    got: ckpt.state.n(),
                }
                .into());
            }
            let rows = energy_rows_before(&energy_path, ckpt.state.step)?;
            (ckpt.state, rows)
        }
        None => (builtin_initial_data(&config.initial, &grid, config.seed)?, Vec::new()),
    };
    let resumed_from_step = resume.map(|_| initial.step);

    let mut writer = RunWriter {
        config,
        grid: &grid,
        hash: hash.clone(),
        records: Vec::new(),
        snapshots: Vec::new(),
        checkpoints: Vec::new(),
        last: None,
    };
    let outcome = simulate(&grid, &initial, &config.params, &config.calming, &config.stepper, &mut [&mut writer]);

    let mut csv = energy_csv(&[]);
    for row in &kept_rows {
        csv.push_str(row);
        csv.push('\n');
    }
    csv.push_str(&energy_csv(&writer.records)[EnergyRecord::CSV_HEADER.len() + 1..]);
    write_atomic(&energy_path, csv.as_bytes())?;

    let final_state = outcome?;
    let summary = RunSummary {
        config: config.clone(),
        config_hash: hash,
        resumed_from_step,
        final_step: final_state.step,
        final_t: final_state.t,
        final_record: writer.last.unwrap_or_default(),
        snapshots: writer.snapshots,
        checkpoints: writer.checkpoints,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&dir.join("summary.json"), text.as_bytes())?;
    Ok(summary)
}

/// Runs a sweep and writes `sweep.csv` and `ratefit.json` into `out`.
pub fn run_sweep(plan: &SweepPlan, out: &Path, workers: usize) -> Result<SweepReport, IoError> {
    fs::create_dir_all(out).map_err(file_err(out))?;
    let report = convergence_sweep(plan, workers)?;
    let mut csv = String::new();
    csv.push_str(crate::experiments::SweepEntry::CSV_HEADER);
    csv.push('\n');
    for e in &report.entries {
        csv.push_str(&e.csv_row());
        csv.push('\n');
    }
    write_atomic(&out.join("sweep.csv"), csv.as_bytes())?;
    let gamma = CalmingSpec::new(plan.family, plan.epsilon_ladder[0])
        .ok()
        .and_then(|s| s.constants().ok())
        .map(|c| c.gamma);
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "fit_e_inf": report.fit_inf,
        "fit_e_int": report.fit_int,
        "predicted_slope": gamma.map(|g| 2.0 * g),
        "all_zero": report.all_zero,
        "monotone": report.is_monotone(),
        "monotonicity_violations": report.monotonicity_violations,
        "reference_tail": report.reference_tail,
        "reference_max_current": report.reference_max_current,
        "record_interval_steps": plan.record_every,
        "entries": report.entries,
        "plan": report.plan,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&out.join("ratefit.json"), text.as_bytes())?;
    Ok(report)
}

/// The Riccati comparison table as text, optionally also as `riccati.csv`.
pub fn run_riccati(y0: f64, epsilons: &[f64], times: &[f64], out: Option<&Path>) -> Result<(Vec<RiccatiRow>, String), IoError> {
    let rows = riccati_table(y0, epsilons, times)?;
    let mut text = String::new();
    let _ = writeln!(text, "{:>10} {:>8} {:>24} {:>24} {:>12}", "epsilon", "t", "closed form", "integrated", "rel. diff");
    for r in &rows {
        let show = |v: Option<f64>, none: &str| v.map_or_else(|| none.to_string(), |v| format!("{v:.16e}"));
        let _ = writeln!(
            text,
            "{:>10.3e} {:>8.3} {:>24} {:>24} {:>12}",
            r.epsilon,
            r.t,
            show(r.closed_form, "blow-up"),
            show(r.integrated, "-"),
            r.relative_difference.map_or_else(|| "-".to_string(), |d| format!("{d:.2e}")),
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
        let mut csv = String::from(RiccatiRow::CSV_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        write_atomic(&dir.join("riccati.csv"), csv.as_bytes())?;
    }
    Ok((rows, text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub families: Vec<CalmingFamily>,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    /// number of seeded random fields for the structural identities (0 skips them)
    pub identity_fields: u64,
    pub n: usize,
    /// halves every certified `M_eps` so that the bound checks must fail
    pub corrupt_constant: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            families: CalmingFamily::CALMED.to_vec(),
            epsilons: vec![1.0, 0.1, 0.01],
            samples: 10_000,
            identity_fields: 10,
            n: 64,
            corrupt_constant: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub lines: Vec<String>,
    pub passed: bool,
}

/// Calming-property checks for every family and epsilon, then the
/// structural identities on seeded random fields.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyOutcome, IoError> {
    let mut lines = Vec::new();
    let mut passed = true;
    for &family in &opts.families {
        if family == CalmingFamily::Identity {
            lines.push("skip identity: no finite bound M_eps".to_string());
            continue;
        }
        for &eps in &opts.epsilons {
            let spec = CalmingSpec::new(family, eps)?;
            let mut constants = spec.constants()?;
            if opts.corrupt_constant {
                constants.m_eps *= 0.5;
            }
            let report: PropertyReport = verify_properties(&spec, &constants, opts.samples, 10.0 / eps)?;
            passed &= report.passed;
            lines.push(format!(
                "{} {family} eps={eps:e}: max violation {:.3e} over {} samples",
                if report.passed { "PASS" } else { "FAIL" },
                report.max_violation(),
                report.samples,
            ));
        }
    }
    if opts.identity_fields > 0 {
        let grid = Grid::new(opts.n).map_err(DynamicsError::from)?;
        for seed in 0..opts.identity_fields {
            let state = builtin_initial_data("random-smooth", &grid, seed)?;
            for r in check_identities(&grid, &state)? {
                passed &= r.passed;
                lines.push(format!(
                    "{} {} seed={seed}: residual {:.3e} (tolerance {:.0e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.residual,
                    r.tolerance
                ));
            }
        }
    }
    Ok(VerifyOutcome { lines, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# small run
n = 16
nu = 0.05
mu = 0.05
kappa = 0.05
g = 1
alpha = 1
calming = \"rational1\"
epsilon = 0.1
dt = 0.01
t_final = 0.05
initial = taylor-green+gaussian-theta
seed = 3
";

    #[test]
    fn parses_base_config() {
        let cfg = RunConfig::from_raw(&RawConfig::parse(BASE).unwrap()).unwrap();
        assert_eq!(cfg.n, 16);
        assert_eq!(cfg.calming, CalmingSpec::new(CalmingFamily::Rational1, 0.1).unwrap());
        assert_eq!(cfg.initial, "taylor-green+gaussian-theta");
        assert_eq!(cfg.record_every, 1);
        assert_eq!(cfg.snapshot_every, None);
        assert_eq!(cfg.stepper.total_steps().unwrap(), 5);
    }

    #[test]
    fn missing_field_is_named() {
        let text = BASE.replace("kappa = 0.05\n", "");
        let err = RunConfig::from_raw(&RawConfig::parse(&text).unwrap()).unwrap_err();
        assert_eq!(err, ConfigError::Missing("kappa"));
        assert!(err.to_string().contains("kappa"));
    }

    #[test]
    fn syntax_and_value_errors_name_the_line() {
        let err = RawConfig::parse("n = 16\nthis is wrong\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
        let err = RawConfig::parse("n = 16\nn = 32\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }));
        let text = BASE.replace("nu = 0.05", "nu = -1");
        let err = RunConfig::from_raw(&RawConfig::parse(&text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("line 3") && err.to_string().contains("`nu`"), "{err}");
        let text = format!("{BASE}colour = 3\n");
        let err = RunConfig::from_raw(&RawConfig::parse(&text).unwrap()).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: Some(14), .. }), "{err:?}");
    }

    #[test]
    fn invalid_names_are_rejected() {
        for (from, to, key) in [
            ("\"rational1\"", "\"rational9\"", "calming"),
            ("taylor-green+gaussian-theta", "vortex", "initial"),
            ("n = 16", "n = 15", "n"),
            ("t_final = 0.05", "t_final = 0.055", "t_final"),
        ] {
            let text = BASE.replace(from, to);
            let err = RunConfig::from_raw(&RawConfig::parse(&text).unwrap()).unwrap_err();
            assert!(matches!(&err, ConfigError::InvalidValue { key: k, .. } if k == key), "{err:?}");
        }
        let text = format!("{BASE}record_every = 0\n");
        assert!(RunConfig::from_raw(&RawConfig::parse(&text).unwrap()).is_err());
    }

    #[test]
    fn identity_needs_no_epsilon() {
        let text = BASE.replace("calming = \"rational1\"\nepsilon = 0.1\n", "calming = identity\n");
        let cfg = RunConfig::from_raw(&RawConfig::parse(&text).unwrap()).unwrap();
        assert!(cfg.calming.is_identity());
    }

    #[test]
    fn overrides_replace_values() {
        let mut raw = RawConfig::parse(BASE).unwrap();
        Overrides {
            epsilon: Some(0.5),
            grid: Some(32),
            record_every: Some(2),
            output_dir: Some(PathBuf::from("/tmp/x")),
            ..Default::default()
        }
        .apply(&mut raw);
        let cfg = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.calming.epsilon(), 0.5);
        assert_eq!(cfg.n, 32);
        assert_eq!(cfg.record_every, 2);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn hash_ignores_output_settings_only() {
        let raw = RawConfig::parse(BASE).unwrap();
        let a = RunConfig::from_raw(&raw).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        b.record_every = 7;
        b.snapshot_every = Some(2);
        b.stepper.t_final = 1.0;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 4;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn sweep_plan_parsing() {
        let text = BASE.replace("epsilon = 0.1", "epsilons = [0.2, 0.1, 0.05]");
        let (plan, out) = sweep_plan_from_raw(&RawConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(plan.epsilon_ladder, vec![0.2, 0.1, 0.05]);
        assert_eq!(out, PathBuf::from("."));
        let text = BASE.replace("epsilon = 0.1", "epsilons = [0.1, 0.2, 0.05]");
        let err = sweep_plan_from_raw(&RawConfig::parse(&text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("decreasing"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(16).unwrap();
        let mut state = builtin_initial_data("random-smooth", &grid, 9).unwrap();
        state.t = 0.1 + 0.2;
        state.step = 30;
        let path = dir.path().join("c.bin");
        checkpoint_save(&state, "abc", &path).unwrap();
        let back = checkpoint_load(&path).unwrap();
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.state.t.to_bits(), state.t.to_bits());
        for (a, b) in fields(&state).iter().zip(fields(&back.state)) {
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }

    fn saved(dir: &Path) -> (PathBuf, Vec<u8>) {
        let grid = Grid::new(8).unwrap();
        let state = builtin_initial_data("taylor-green", &grid, 0).unwrap();
        let path = dir.join("c.bin");
        checkpoint_save(&state, "h", &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        (path, bytes)
    }

    #[test]
    fn corrupted_checkpoints_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (path, bytes) = saved(dir.path());
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[12..12 + header_len].to_vec()).unwrap();

        let rewrite = |new_header: &str| {
            let mut b = bytes[..8].to_vec();
            b.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
            b.extend_from_slice(new_header.as_bytes());
            b.extend_from_slice(&bytes[12 + header_len..]);
            fs::write(&path, b).unwrap();
            checkpoint_load(&path).unwrap_err()
        };
        let err = rewrite(&header.replace("\"step\":0", "\"step\":\"zero\""));
        assert!(matches!(err, IoError::CorruptHeader { field: "step", .. }), "{err}");
        assert!(err.to_string().contains("`step`"));
        let err = rewrite(&header.replace("\"format_version\":1", "\"format_version\":2"));
        assert!(matches!(err, IoError::Version { found: 2, .. }), "{err}");
        let err = rewrite(&header.replace(",\"t\":0.0", ""));
        assert!(matches!(err, IoError::CorruptHeader { field: "t", .. }), "{err}");

        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(checkpoint_load(&path).unwrap_err(), IoError::Truncated { .. }));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(checkpoint_load(&path).unwrap_err(), IoError::HashMismatch { .. }));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(checkpoint_load(&path).unwrap_err(), IoError::CorruptHeader { field: "magic", .. }));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(8).unwrap();
        let mut state = builtin_initial_data("taylor-green+gaussian-theta", &grid, 0).unwrap();
        state.step = 12;
        let bin = write_snapshot(dir.path(), &grid, &state, "hash").unwrap();
        assert_eq!(bin.file_name().unwrap(), "snap_12.bin");
        let (header, values) = read_snapshot(&bin).unwrap();
        assert_eq!(header.n, 8);
        assert_eq!(header.step, 12);
        assert_eq!(values.len(), 5 * 64);
        // u1 of Taylor-Green is sin(2 pi x1) cos(2 pi x2)
        let (x1, x2) = grid.point(8 * 3 + 1);
        let expect = (2.0 * std::f64::consts::PI * x1).sin() * (2.0 * std::f64::consts::PI * x2).cos();
        assert!((values[8 * 3 + 1] - expect).abs() < 1e-12);
    }

    #[test]
    fn verify_passes_and_detects_corruption() {
        let opts = VerifyOptions {
            samples: 2000,
            identity_fields: 1,
            n: 16,
            ..Default::default()
        };
        assert!(run_verify(&opts).unwrap().passed);
        let bad = VerifyOptions {
            corrupt_constant: true,
            identity_fields: 0,
            ..opts.clone()
        };
        assert!(!run_verify(&bad).unwrap().passed);
        let id = VerifyOptions {
            families: vec![CalmingFamily::Identity],
            identity_fields: 0,
            ..opts
        };
        let out = run_verify(&id).unwrap();
        assert!(out.passed);
        assert!(out.lines[0].starts_with("skip identity"));
    }

    #[test]
    fn riccati_text_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let (rows, text) = run_riccati(1.0, &[0.0, 0.1], &[0.5, 2.0], Some(dir.path())).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(text.contains("blow-up"));
        let csv = fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }
}
