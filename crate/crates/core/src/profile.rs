//! Scenario profiles: the network environment a session runs against.
//!
//! A profile declares the link's bandwidth process, base one-way delay, queue
//! capacity, random loss rate, receiver clock offset, and session duration.
//! Profiles are loaded from simple `key = value` files (see `parse`) or taken
//! from the named presets in [`named`].

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mix;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("unknown profile `{0}` (not a preset and not a readable file)")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Available-bandwidth process of the bottleneck link, in kbit/s over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandwidthProcess {
    Constant(f64),
    /// Piecewise-constant levels: `(start_ms, kbps)`, sorted by start time.
    Steps(Vec<(f64, f64)>),
    Sinusoid {
        mean_kbps: f64,
        amplitude_kbps: f64,
        period_ms: f64,
        noise_kbps: f64,
    },
    /// Piecewise-constant samples replayed from a capacity trace file.
    Trace(Vec<(f64, f64)>),
}

impl BandwidthProcess {
    fn validate(&self) -> Result<(), ProfileError> {
        let bad = |m: String| Err(ProfileError::Invalid(m));
        match self {
            BandwidthProcess::Constant(kbps) => {
                if *kbps <= 0.0 || !kbps.is_finite() {
                    return bad(format!("constant bandwidth must be positive, got {kbps}"));
                }
            }
            BandwidthProcess::Steps(steps) | BandwidthProcess::Trace(steps) => {
                if steps.is_empty() {
                    return bad("bandwidth steps must be non-empty".into());
                }
                let mut prev = f64::NEG_INFINITY;
                for &(start, kbps) in steps {
                    if kbps <= 0.0 || !kbps.is_finite() {
                        return bad(format!("bandwidth level must be positive, got {kbps}"));
                    }
                    if start < prev {
                        return bad("bandwidth steps must be sorted by start time".into());
                    }
                    prev = start;
                }
            }
            BandwidthProcess::Sinusoid {
                mean_kbps,
                amplitude_kbps,
                noise_kbps,
                period_ms,
            } => {
                if *mean_kbps <= 0.0 {
                    return bad(format!("sinusoid mean must be positive, got {mean_kbps}"));
                }
                if *amplitude_kbps < 0.0 || *amplitude_kbps >= *mean_kbps {
                    return bad("sinusoid amplitude must be in [0, mean)".into());
                }
                if *noise_kbps < 0.0 {
                    return bad("sinusoid noise must be non-negative".into());
                }
                if *period_ms <= 0.0 {
                    return bad("sinusoid period must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// One simulated network environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub name: String,
    pub bandwidth: BandwidthProcess,
    pub base_delay_ms: f64,
    pub queue_capacity_packets: usize,
    pub loss_rate: f64,
    pub clock_offset_ms: f64,
    pub duration_ms: f64,
}

impl ScenarioProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        self.bandwidth.validate()?;
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(ProfileError::Invalid(format!(
                "loss rate must be in [0, 1], got {}",
                self.loss_rate
            )));
        }
        if self.queue_capacity_packets < 1 {
            return Err(ProfileError::Invalid("queue capacity must be >= 1".into()));
        }
        if self.base_delay_ms < 0.0 || !self.base_delay_ms.is_finite() {
            return Err(ProfileError::Invalid(format!(
                "base delay must be non-negative, got {}",
                self.base_delay_ms
            )));
        }
        if self.duration_ms < 0.0 || !self.duration_ms.is_finite() {
            return Err(ProfileError::Invalid(format!(
                "duration must be non-negative, got {}",
                self.duration_ms
            )));
        }
        if !self.clock_offset_ms.is_finite() {
            return Err(ProfileError::Invalid("clock offset must be finite".into()));
        }
        Ok(())
    }

    /// Load from a preset name or a `key = value` file path.
    pub fn resolve(name_or_path: &str) -> Result<ScenarioProfile, ProfileError> {
        if let Some(p) = named(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return ScenarioProfile::load(path);
        }
        Err(ProfileError::Unknown(name_or_path.to_string()))
    }

    pub fn load(path: &Path) -> Result<ScenarioProfile, ProfileError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        parse(&text, base)
    }

    /// Echo the profile back in the file format `parse` accepts.
    pub fn to_config_string(&self) -> String {
        let bandwidth = match &self.bandwidth {
            BandwidthProcess::Constant(kbps) => format!("constant {kbps}"),
            BandwidthProcess::Steps(steps) => {
                let parts: Vec<String> =
                    steps.iter().map(|(t, b)| format!("{t}:{b}")).collect();
                format!("steps {}", parts.join(" "))
            }
            BandwidthProcess::Sinusoid {
                mean_kbps,
                amplitude_kbps,
                period_ms,
                noise_kbps,
            } => format!(
                "sinusoid mean={mean_kbps} amplitude={amplitude_kbps} period_ms={period_ms} noise_kbps={noise_kbps}"
            ),
            BandwidthProcess::Trace(steps) => {
                let parts: Vec<String> =
                    steps.iter().map(|(t, b)| format!("{t}:{b}")).collect();
                format!("steps {}", parts.join(" "))
            }
        };
        format!(
            "name = {}\nbandwidth = {}\nbase_delay_ms = {}\nqueue_capacity = {}\nloss_rate = {}\nclock_offset_ms = {}\nduration_ms = {}\n",
            self.name,
            bandwidth,
            self.base_delay_ms,
            self.queue_capacity_packets,
            self.loss_rate,
            self.clock_offset_ms,
            self.duration_ms,
        )
    }
}

impl fmt::Display for ScenarioProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// Deterministic sampler over a profile's bandwidth process.
///
/// Sampling is a pure function of `(process, seed, t)`: noise is value noise
/// keyed by the 1-second bucket of `t`, so callers may query any time in any
/// order and still agree.
#[derive(Debug, Clone)]
pub struct BandwidthSampler<'a> {
    process: &'a BandwidthProcess,
    seed: u64,
}

const NOISE_SALT: u64 = 0x6277_5f6e_6f69_7365; // "bw_noise"
const NOISE_BUCKET_MS: f64 = 1000.0;

impl<'a> BandwidthSampler<'a> {
    pub fn new(process: &'a BandwidthProcess, seed: u64) -> Self {
        BandwidthSampler { process, seed }
    }

    /// Available bandwidth in kbit/s at time `t_ms`. Always >= 1 kbit/s.
    pub fn at(&self, t_ms: f64) -> f64 {
        let raw = match self.process {
            BandwidthProcess::Constant(kbps) => *kbps,
            BandwidthProcess::Steps(steps) | BandwidthProcess::Trace(steps) => {
                let mut level = steps[0].1;
                for &(start, kbps) in steps {
                    if t_ms >= start {
                        level = kbps;
                    } else {
                        break;
                    }
                }
                level
            }
            BandwidthProcess::Sinusoid {
                mean_kbps,
                amplitude_kbps,
                period_ms,
                noise_kbps,
            } => {
                let phase = std::f64::consts::TAU * t_ms / period_ms;
                let bucket = (t_ms / NOISE_BUCKET_MS).floor() as i64 as u64;
                let noise = noise_kbps * mix::std_normal(self.seed, NOISE_SALT, bucket);
                mean_kbps + amplitude_kbps * phase.sin() + noise
            }
        };
        raw.max(1.0)
    }

    /// Mean bandwidth over `[0, duration_ms)`, sampled once per noise bucket.
    pub fn mean_over(&self, duration_ms: f64) -> f64 {
        let buckets = (duration_ms / NOISE_BUCKET_MS).ceil().max(1.0) as usize;
        let mut sum = 0.0;
        for i in 0..buckets {
            sum += self.at((i as f64 + 0.5) * NOISE_BUCKET_MS);
        }
        sum / buckets as f64
    }
}

/// Built-in presets.
///
/// `very-bad-network` follows the usual emulator description of that profile:
/// 1 Mbit/s, 10% loss, 500 ms latency. `bench-4mbps` is the fixed-bandwidth
/// benchmark environment (4 Mbit/s, 10% loss, 100 ms).
pub fn named(name: &str) -> Option<ScenarioProfile> {
    let p = match name {
        "wired" => ScenarioProfile {
            name: "wired".into(),
            bandwidth: BandwidthProcess::Constant(4000.0),
            base_delay_ms: 20.0,
            queue_capacity_packets: 150,
            loss_rate: 0.0,
            clock_offset_ms: 0.0,
            duration_ms: 300_000.0,
        },
        "wifi" => ScenarioProfile {
            name: "wifi".into(),
            bandwidth: BandwidthProcess::Sinusoid {
                mean_kbps: 3000.0,
                amplitude_kbps: 1200.0,
                period_ms: 40_000.0,
                noise_kbps: 150.0,
            },
            base_delay_ms: 30.0,
            queue_capacity_packets: 120,
            loss_rate: 0.01,
            clock_offset_ms: 0.0,
            duration_ms: 300_000.0,
        },
        "lte" => ScenarioProfile {
            name: "lte".into(),
            bandwidth: BandwidthProcess::Sinusoid {
                mean_kbps: 2000.0,
                amplitude_kbps: 800.0,
                period_ms: 25_000.0,
                noise_kbps: 250.0,
            },
            base_delay_ms: 60.0,
            queue_capacity_packets: 100,
            loss_rate: 0.02,
            clock_offset_ms: 0.0,
            duration_ms: 300_000.0,
        },
        "very-bad-network" => ScenarioProfile {
            name: "very-bad-network".into(),
            bandwidth: BandwidthProcess::Constant(1000.0),
            base_delay_ms: 500.0,
            queue_capacity_packets: 60,
            loss_rate: 0.10,
            clock_offset_ms: 0.0,
            duration_ms: 300_000.0,
        },
        "bench-4mbps" => ScenarioProfile {
            name: "bench-4mbps".into(),
            bandwidth: BandwidthProcess::Constant(4000.0),
            base_delay_ms: 100.0,
            queue_capacity_packets: 150,
            loss_rate: 0.10,
            clock_offset_ms: 0.0,
            duration_ms: 300_000.0,
        },
        _ => return None,
    };
    Some(p)
}

pub const PRESET_NAMES: &[&str] = &["wired", "wifi", "lte", "very-bad-network", "bench-4mbps"];

/// Parse the `key = value` profile format.
///
/// Lines starting with `#` are comments. Recognized keys: `name`, `bandwidth`,
/// `base_delay_ms`, `queue_capacity`, `loss_rate`, `clock_offset_ms`,
/// `duration_ms`. Bandwidth values:
///
/// ```text
/// bandwidth = constant 4000
/// bandwidth = steps 0:4000 60000:1500
/// bandwidth = sinusoid mean=3000 amplitude=1200 period_ms=40000 noise_kbps=150
/// bandwidth = trace capacity.csv        # rows: time_ms,kbps
/// ```
pub fn parse(text: &str, base_dir: &Path) -> Result<ScenarioProfile, ProfileError> {
    let mut name = String::from("custom");
    let mut bandwidth: Option<BandwidthProcess> = None;
    let mut base_delay_ms = 50.0;
    let mut queue_capacity = 100usize;
    let mut loss_rate = 0.0;
    let mut clock_offset_ms = 0.0;
    let mut duration_ms = 300_000.0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ProfileError::Parse {
            line: line_no,
            reason: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let num = |v: &str| -> Result<f64, ProfileError> {
            v.parse::<f64>().map_err(|_| ProfileError::Parse {
                line: line_no,
                reason: format!("`{v}` is not a number"),
            })
        };
        match key {
            "name" => name = value.to_string(),
            "base_delay_ms" => base_delay_ms = num(value)?,
            "queue_capacity" => {
                queue_capacity = value.parse().map_err(|_| ProfileError::Parse {
                    line: line_no,
                    reason: format!("`{value}` is not a count"),
                })?
            }
            "loss_rate" => loss_rate = num(value)?,
            "clock_offset_ms" => clock_offset_ms = num(value)?,
            "duration_ms" => duration_ms = num(value)?,
            "bandwidth" => bandwidth = Some(parse_bandwidth(value, line_no, base_dir)?),
            other => {
                return Err(ProfileError::Parse {
                    line: line_no,
                    reason: format!("unknown key `{other}`"),
                })
            }
        }
    }

    let bandwidth = bandwidth.ok_or_else(|| ProfileError::Invalid("missing `bandwidth`".into()))?;
    let profile = ScenarioProfile {
        name,
        bandwidth,
        base_delay_ms,
        queue_capacity_packets: queue_capacity,
        loss_rate,
        clock_offset_ms,
        duration_ms,
    };
    profile.validate()?;
    Ok(profile)
}

fn parse_bandwidth(
    value: &str,
    line: usize,
    base_dir: &Path,
) -> Result<BandwidthProcess, ProfileError> {
    let err = |reason: String| ProfileError::Parse { line, reason };
    let mut parts = value.split_whitespace();
    let kind = parts.next().ok_or_else(|| err("empty bandwidth spec".into()))?;
    match kind {
        "constant" => {
            let kbps = parts
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| err("constant bandwidth needs a kbps value".into()))?;
            Ok(BandwidthProcess::Constant(kbps))
        }
        "steps" => {
            let mut steps = Vec::new();
            for p in parts {
                let (t, b) = p
                    .split_once(':')
                    .ok_or_else(|| err(format!("step `{p}` must be start_ms:kbps")))?;
                let t = t
                    .parse::<f64>()
                    .map_err(|_| err(format!("step start `{t}` is not a number")))?;
                let b = b
                    .parse::<f64>()
                    .map_err(|_| err(format!("step level `{b}` is not a number")))?;
                steps.push((t, b));
            }
            Ok(BandwidthProcess::Steps(steps))
        }
        "sinusoid" => {
            let mut mean = None;
            let mut amplitude = 0.0;
            let mut period = None;
            let mut noise = 0.0;
            for p in parts {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| err(format!("sinusoid field `{p}` must be key=value")))?;
                let v = v
                    .parse::<f64>()
                    .map_err(|_| err(format!("sinusoid value `{v}` is not a number")))?;
                match k {
                    "mean" => mean = Some(v),
                    "amplitude" => amplitude = v,
                    "period_ms" => period = Some(v),
                    "noise_kbps" => noise = v,
                    other => return Err(err(format!("unknown sinusoid field `{other}`"))),
                }
            }
            Ok(BandwidthProcess::Sinusoid {
                mean_kbps: mean.ok_or_else(|| err("sinusoid needs mean=".into()))?,
                amplitude_kbps: amplitude,
                period_ms: period.ok_or_else(|| err("sinusoid needs period_ms=".into()))?,
                noise_kbps: noise,
            })
        }
        "trace" => {
            let rel = parts
                .next()
                .ok_or_else(|| err("trace bandwidth needs a file path".into()))?;
            let path = base_dir.join(rel);
            let text = fs::read_to_string(&path)?;
            let mut samples = Vec::new();
            for (idx, row) in text.lines().enumerate() {
                let row = row.trim();
                if row.is_empty() || row.starts_with('#') {
                    continue;
                }
                let (t, b) = row.split_once(',').ok_or_else(|| ProfileError::Parse {
                    line: idx + 1,
                    reason: format!("capacity trace row `{row}` must be time_ms,kbps"),
                })?;
                let t = t.trim().parse::<f64>().map_err(|_| ProfileError::Parse {
                    line: idx + 1,
                    reason: format!("capacity trace time `{t}` is not a number"),
                })?;
                let b = b.trim().parse::<f64>().map_err(|_| ProfileError::Parse {
                    line: idx + 1,
                    reason: format!("capacity trace level `{b}` is not a number"),
                })?;
                samples.push((t, b));
            }
            Ok(BandwidthProcess::Trace(samples))
        }
        other => Err(err(format!("unknown bandwidth kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            let p = named(name).unwrap();
            p.validate().unwrap();
        }
    }

    #[test]
    fn parse_round_trips_presets() {
        for name in PRESET_NAMES {
            let p = named(name).unwrap();
            let echoed = p.to_config_string();
            let back = parse(&echoed, Path::new(".")).unwrap();
            assert_eq!(p, back, "{name}");
        }
    }

    #[test]
    fn sampler_is_order_independent() {
        let bw = BandwidthProcess::Sinusoid {
            mean_kbps: 3000.0,
            amplitude_kbps: 1000.0,
            period_ms: 20_000.0,
            noise_kbps: 300.0,
        };
        let s = BandwidthSampler::new(&bw, 11);
        let forward: Vec<f64> = (0..50).map(|i| s.at(i as f64 * 137.0)).collect();
        let backward: Vec<f64> = (0..50).rev().map(|i| s.at(i as f64 * 137.0)).collect();
        let mut backward = backward;
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn steps_pick_latest_level() {
        let bw = BandwidthProcess::Steps(vec![(0.0, 1000.0), (60_000.0, 4000.0)]);
        let s = BandwidthSampler::new(&bw, 0);
        assert_eq!(s.at(0.0), 1000.0);
        assert_eq!(s.at(59_999.0), 1000.0);
        assert_eq!(s.at(60_000.0), 4000.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = named("wired").unwrap();
        p.loss_rate = 1.5;
        assert!(p.validate().is_err());
        let mut p = named("wired").unwrap();
        p.bandwidth = BandwidthProcess::Constant(-4.0);
        assert!(p.validate().is_err());
        let mut p = named("wired").unwrap();
        p.queue_capacity_packets = 0;
        assert!(p.validate().is_err());
    }
}
