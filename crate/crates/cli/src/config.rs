use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ralab_core::dmt::gta_optimal_pt;
use ralab_core::queueing::QueueConfig;
use ralab_core::{AntennaConfig, CombiningGain, GtaObjective, Protocol, RateSpec};
use serde::Deserialize;

/// A configuration problem; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
pub enum RateMode {
    /// Constant rate `R` bits per channel use.
    #[value(name = "fixed-R")]
    #[serde(rename = "fixed-R")]
    FixedR,
    /// `R = r log2(1 + snr)`.
    #[default]
    #[value(name = "multiplexing")]
    #[serde(rename = "multiplexing")]
    Multiplexing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Combining {
    Unit,
    Slots,
}

impl From<Combining> for CombiningGain {
    fn from(c: Combining) -> Self {
        match c {
            Combining::Unit => CombiningGain::Unit,
            Combining::Slots => CombiningGain::Slots,
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the matching field
/// of the `--config` JSON document.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Protocols, comma separated (gta, ondma, irarq).
    #[arg(long, global = true, value_delimiter = ',')]
    pub protocol: Option<Vec<String>>,
    /// Number of users K.
    #[arg(long, global = true)]
    pub users: Option<usize>,
    /// Transmit antennas per user M.
    #[arg(long, global = true)]
    pub tx_ant: Option<usize>,
    /// Receive antennas N.
    #[arg(long, global = true)]
    pub rx_ant: Option<usize>,
    /// IR-ARQ deadlines L, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub deadline: Option<Vec<u32>>,
    /// Transmission probabilities; a list or `start:stop:step`.
    #[arg(long, global = true)]
    pub pt: Option<String>,
    /// SNR grid in dB; a list or `start:stop:step`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub snr_db: Option<String>,
    /// Total arrival-rate grid in packets per slot.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub rate_mode: Option<RateMode>,
    /// Rate `R` (fixed-R) or multiplexing gain `r` (multiplexing).
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Monte Carlo trials (epochs or channel draws) per point.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Simulated slots per random-arrival run.
    #[arg(long, global = true)]
    pub horizon: Option<u64>,
    /// Master seed; required by simulation subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output CSV path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Receiver combining of repeated single-user slots.
    #[arg(long, global = true, value_enum)]
    pub combining: Option<Combining>,
    /// Effective multiplexing step for `dmt`.
    #[arg(long, global = true)]
    pub step: Option<f64>,
}

/// The JSON document behind `--config`. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocols: Option<Vec<Protocol>>,
    pub users: Option<usize>,
    pub tx_ant: Option<usize>,
    pub rx_ant: Option<usize>,
    pub deadlines: Option<Vec<u32>>,
    pub p_t: Option<Vec<f64>>,
    pub snr_db: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub rate_mode: Option<RateMode>,
    pub r: Option<f64>,
    pub trials: Option<u64>,
    pub horizon: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub combining: Option<CombiningGain>,
    pub step: Option<f64>,
    pub queue: Option<QueueConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }
}

/// Per-subcommand defaults for the grids.
pub struct Defaults {
    pub snr_db: &'static [f64],
    pub lambda: &'static [f64],
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub protocols: Vec<Protocol>,
    pub antennas: AntennaConfig,
    pub deadlines: Vec<u32>,
    /// `None` selects the per-protocol default.
    pub p_t: Option<Vec<f64>>,
    pub snr_db: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rate_mode: RateMode,
    pub r: f64,
    pub trials: u64,
    pub horizon: u64,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub combining: CombiningGain,
    pub step: f64,
    pub queue: QueueConfig,
}

/// Parse `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_grid(name: &str, s: &str) -> anyhow::Result<Vec<f64>> {
    let num = |t: &str| -> anyhow::Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("--{name}: `{t}` is not a number")))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(bad(format!("--{name}: range must be start:stop:step")));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step <= 0.0 || step.is_nan() || b < a {
            return Err(bad(format!("--{name}: empty or malformed range {s}")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + i as f64 * step).collect());
    }
    s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect()
}

impl Settings {
    pub fn resolve(flags: &Flags, defaults: &Defaults) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let protocols = match &flags.protocol {
            Some(names) => names
                .iter()
                .map(|n| n.parse::<Protocol>().map_err(|e| bad(e.to_string())))
                .collect::<anyhow::Result<Vec<_>>>()?,
            None => file.protocols.unwrap_or_else(|| Protocol::ALL.to_vec()),
        };
        let users = flags.users.or(file.users).unwrap_or(2);
        let tx = flags.tx_ant.or(file.tx_ant).unwrap_or(1);
        let rx = flags.rx_ant.or(file.rx_ant).unwrap_or(1);
        let antennas = AntennaConfig::new(users, tx, rx).map_err(|e| bad(e.to_string()))?;
        let p_t = match &flags.pt {
            Some(s) => Some(parse_grid("pt", s)?),
            None => file.p_t,
        };
        let snr_db = match &flags.snr_db {
            Some(s) => parse_grid("snr-db", s)?,
            None => file.snr_db.unwrap_or_else(|| defaults.snr_db.to_vec()),
        };
        let lambda = match &flags.lambda {
            Some(s) => parse_grid("lambda", s)?,
            None => file.lambda.unwrap_or_else(|| defaults.lambda.to_vec()),
        };
        let s = Settings {
            protocols,
            antennas,
            deadlines: flags.deadline.clone().or(file.deadlines).unwrap_or_else(|| vec![2]),
            p_t,
            snr_db,
            lambda,
            rate_mode: flags.rate_mode.or(file.rate_mode).unwrap_or_default(),
            r: flags.r.or(file.r).unwrap_or(0.45),
            trials: flags.trials.or(file.trials).unwrap_or(100_000),
            horizon: flags.horizon.or(file.horizon).unwrap_or(200_000),
            seed: flags.seed.or(file.seed),
            out: flags.out.clone().or(file.out),
            workers: flags.workers.or(file.workers),
            combining: flags.combining.map(Into::into).or(file.combining).unwrap_or_default(),
            step: flags.step.or(file.step).unwrap_or(0.01),
            queue: file.queue.unwrap_or_default(),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.protocols.is_empty() {
            return Err(bad("protocol list is empty"));
        }
        if self.deadlines.is_empty() || self.deadlines.contains(&0) {
            return Err(bad("deadlines must be a nonempty list of integers >= 1"));
        }
        if let Some(p) = &self.p_t {
            if p.is_empty() || p.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
                return Err(bad("p_t values must lie in (0, 1]"));
            }
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|x| !x.is_finite()) {
            return Err(bad("SNR grid is empty or not finite"));
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|x| !x.is_finite()) {
            return Err(bad("arrival-rate grid is empty or not finite"));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(bad(format!("r = {} must be a finite nonnegative number", self.r)));
        }
        if self.trials == 0 {
            return Err(bad("trials must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(bad("horizon must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(bad("workers must be at least 1"));
        }
        if self.step <= 0.0 || self.step.is_nan() {
            return Err(bad("step must be positive"));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| bad("this subcommand simulates and needs --seed (or `seed` in the config)"))
    }

    pub fn rate(&self) -> RateSpec {
        match self.rate_mode {
            RateMode::FixedR => RateSpec::Fixed(self.r),
            RateMode::Multiplexing => RateSpec::Multiplexing(self.r),
        }
    }

    /// IR-ARQ runs once per deadline; the other protocols have none.
    pub fn deadlines_for(&self, protocol: Protocol) -> Vec<u32> {
        if protocol.has_deadline() {
            self.deadlines.clone()
        } else {
            vec![1]
        }
    }

    /// The requested transmission probabilities, or the protocol's default:
    /// the span-maximising value for GTA and 1 otherwise.
    pub fn p_t_for(&self, protocol: Protocol) -> anyhow::Result<Vec<f64>> {
        if let Some(p) = &self.p_t {
            return Ok(p.clone());
        }
        Ok(vec![match protocol {
            Protocol::Gta => gta_optimal_pt(&self.antennas, GtaObjective::MaxSpan)?,
            Protocol::Ondma | Protocol::IrArq => 1.0,
        }])
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
