use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::ConfigError;
use crate::model::Millis;
use crate::opcot::TimestampRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolKind {
    Opcot,
    Occ,
    S2pl,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Opcot, ProtocolKind::Occ, ProtocolKind::S2pl];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Opcot => "opcot",
            ProtocolKind::Occ => "occ",
            ProtocolKind::S2pl => "s2pl",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opcot" => Ok(ProtocolKind::Opcot),
            "occ" => Ok(ProtocolKind::Occ),
            "s2pl" | "2pl" => Ok(ProtocolKind::S2pl),
            other => Err(ConfigError::invalid(
                "protocol",
                format!("`{other}` is not one of opcot, occ, s2pl"),
            )),
        }
    }
}

impl Serialize for ProtocolKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Inclusive uniform range of milliseconds, written `min..max` or as a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayRange {
    pub min: Millis,
    pub max: Millis,
}

impl DelayRange {
    pub const ZERO: DelayRange = DelayRange { min: 0, max: 0 };

    pub fn new(min: Millis, max: Millis) -> Self {
        DelayRange { min, max }
    }

    pub fn fixed(ms: Millis) -> Self {
        DelayRange { min: ms, max: ms }
    }
}

impl fmt::Display for DelayRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

impl FromStr for DelayRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| {
            v.trim()
                .parse::<Millis>()
                .map_err(|_| format!("`{v}` is not a millisecond count"))
        };
        let range = match s.split_once("..") {
            Some((lo, hi)) => DelayRange::new(parse(lo)?, parse(hi)?),
            None => DelayRange::fixed(parse(s)?),
        };
        if range.min > range.max {
            return Err(format!("empty range {range}"));
        }
        Ok(range)
    }
}

/// Every knob of one simulation run. Keys of the `key = value` file form are
/// the field names.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub protocol: ProtocolKind,
    pub n_clients: usize,
    pub n_items: usize,
    pub n_txns: usize,
    /// Mean number of data operations per transaction.
    pub mean_len: f64,
    /// Standard deviation of the transaction length.
    pub sd_len: f64,
    pub read_fraction: f64,
    /// Client-side execution time of one data operation.
    pub op_service_ms: Millis,
    pub uplink_latency_ms: DelayRange,
    pub downlink_latency_ms: DelayRange,
    /// Chance, per executed operation, that the client drops off the network.
    pub disconnect_prob: f64,
    pub reconnect_delay_ms: DelayRange,
    /// Mean gap between transaction submissions; `None` means ten operation
    /// service times.
    pub mean_interarrival_ms: Option<f64>,
    /// Client clocks are offset from the server clock by up to this much.
    pub client_clock_skew_ms: Millis,
    /// Optimistic clients refresh a read from the server when connected.
    pub fresh_reads: bool,
    /// Resubmissions of an aborted transaction before it counts as aborted.
    pub retries: u32,
    pub timestamp_rule: TimestampRule,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            protocol: ProtocolKind::Opcot,
            n_clients: 50,
            n_items: 100,
            n_txns: 200,
            mean_len: 50.0,
            sd_len: 10.0,
            read_fraction: 0.5,
            op_service_ms: 10,
            uplink_latency_ms: DelayRange::new(5, 50),
            downlink_latency_ms: DelayRange::new(5, 50),
            disconnect_prob: 0.02,
            reconnect_delay_ms: DelayRange::new(200, 2000),
            mean_interarrival_ms: None,
            client_clock_skew_ms: 10_000,
            fresh_reads: false,
            retries: 0,
            timestamp_rule: TimestampRule::Monotone,
            seed: 1,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "protocol",
    "n_clients",
    "n_items",
    "n_txns",
    "mean_len",
    "sd_len",
    "read_fraction",
    "op_service_ms",
    "uplink_latency_ms",
    "downlink_latency_ms",
    "disconnect_prob",
    "reconnect_delay_ms",
    "mean_interarrival_ms",
    "client_clock_skew_ms",
    "fresh_reads",
    "retries",
    "timestamp_rule",
    "seed",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| ConfigError::invalid(key, format!("cannot parse `{value}`")))
}

impl SimConfig {
    pub fn interarrival_mean(&self) -> f64 {
        self.mean_interarrival_ms
            .unwrap_or((self.op_service_ms * 10) as f64)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let range = |v: &str| v.parse::<DelayRange>().map_err(|e| ConfigError::invalid(key, e));
        match key {
            "protocol" => self.protocol = value.parse()?,
            "n_clients" => self.n_clients = parse_num(key, value)?,
            "n_items" => self.n_items = parse_num(key, value)?,
            "n_txns" => self.n_txns = parse_num(key, value)?,
            "mean_len" => self.mean_len = parse_num(key, value)?,
            "sd_len" => self.sd_len = parse_num(key, value)?,
            "read_fraction" => self.read_fraction = parse_num(key, value)?,
            "op_service_ms" => self.op_service_ms = parse_num(key, value)?,
            "uplink_latency_ms" => self.uplink_latency_ms = range(value)?,
            "downlink_latency_ms" => self.downlink_latency_ms = range(value)?,
            "disconnect_prob" => self.disconnect_prob = parse_num(key, value)?,
            "reconnect_delay_ms" => self.reconnect_delay_ms = range(value)?,
            "mean_interarrival_ms" => {
                self.mean_interarrival_ms = match value.trim() {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "client_clock_skew_ms" => self.client_clock_skew_ms = parse_num(key, value)?,
            "fresh_reads" => self.fresh_reads = parse_num(key, value)?,
            "retries" => self.retries = parse_num(key, value)?,
            "timestamp_rule" => {
                self.timestamp_rule = match value.trim() {
                    "monotone" | "max" => TimestampRule::Monotone,
                    "literal" => TimestampRule::Literal,
                    other => {
                        return Err(ConfigError::invalid(
                            key,
                            format!("`{other}` is not monotone or literal"),
                        ))
                    }
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of `self` and validates the result.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (line, key, value) in parse_kv_lines(text)? {
            self.set(&key, &value).map_err(|e| match e {
                ConfigError::UnknownKey(k) => ConfigError::Syntax {
                    line,
                    reason: format!("unknown key `{k}`"),
                },
                other => other,
            })?;
        }
        self.validate()
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SimConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    /// Text form accepted by [`SimConfig::from_kv_text`].
    pub fn to_kv_text(&self) -> String {
        let rule = match self.timestamp_rule {
            TimestampRule::Monotone => "monotone",
            TimestampRule::Literal => "literal",
        };
        let interarrival = self
            .mean_interarrival_ms
            .map_or("auto".to_string(), |v| v.to_string());
        [
            format!("protocol = {}", self.protocol),
            format!("n_clients = {}", self.n_clients),
            format!("n_items = {}", self.n_items),
            format!("n_txns = {}", self.n_txns),
            format!("mean_len = {}", self.mean_len),
            format!("sd_len = {}", self.sd_len),
            format!("read_fraction = {}", self.read_fraction),
            format!("op_service_ms = {}", self.op_service_ms),
            format!("uplink_latency_ms = {}", self.uplink_latency_ms),
            format!("downlink_latency_ms = {}", self.downlink_latency_ms),
            format!("disconnect_prob = {}", self.disconnect_prob),
            format!("reconnect_delay_ms = {}", self.reconnect_delay_ms),
            format!("mean_interarrival_ms = {interarrival}"),
            format!("client_clock_skew_ms = {}", self.client_clock_skew_ms),
            format!("fresh_reads = {}", self.fresh_reads),
            format!("retries = {}", self.retries),
            format!("timestamp_rule = {rule}"),
            format!("seed = {}", self.seed),
        ]
        .join("\n")
            + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("n_clients", self.n_clients),
            ("n_items", self.n_items),
            ("n_txns", self.n_txns),
        ] {
            if v == 0 {
                return Err(ConfigError::invalid(key, "must be at least 1"));
            }
        }
        if self.n_items > u32::MAX as usize || self.n_txns > (u32::MAX / 4) as usize {
            return Err(ConfigError::invalid("n_items", "too large"));
        }
        for (key, p) in [
            ("read_fraction", self.read_fraction),
            ("disconnect_prob", self.disconnect_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::invalid(key, "must lie in [0, 1]"));
            }
        }
        if !(self.mean_len.is_finite() && self.mean_len >= 2.0) {
            return Err(ConfigError::invalid("mean_len", "must be at least 2"));
        }
        if !(self.sd_len.is_finite() && self.sd_len >= 0.0) {
            return Err(ConfigError::invalid("sd_len", "must be non-negative"));
        }
        let ia = self.interarrival_mean();
        if !(ia.is_finite() && ia >= 0.0) {
            return Err(ConfigError::invalid(
                "mean_interarrival_ms",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                reason: format!("expected `key = value`, got `{body}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                reason: "empty key or value".into(),
            });
        }
        out.push((line, key.to_string(), value.to_string()));
    }
    Ok(out)
}
