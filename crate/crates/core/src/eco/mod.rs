//! Energy and emissions accounting for tracked operations.
//!
//! Probes report power per source; energy is the trapezoidal integral of
//! watts over time, in kWh. Emissions multiply energy by a configured carbon
//! intensity (kg CO₂eq per kWh). There is no bundled regional intensity
//! table.

mod ledger;
mod probe;

pub use ledger::{
    ledger_report, write_consumption_csv, write_consumption_markdown, ConsumptionRow, LedgerEntry,
};
pub use probe::{
    default_probes, read_samples, ConstantProbe, PowerProbe, PowerSample, ProbeConfig,
    ProbeRegistry, RaplProbe, Reading, ReplayProbe, DEFAULT_RAPL_ZONE,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, thiserror::Error)]
pub enum EcoError {
    #[error("probe failure: {0}")]
    Probe(String),
    #[error("replay file: {0}")]
    Replay(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "CPU", alias = "cpu")]
    Cpu,
    #[serde(rename = "GPU", alias = "gpu")]
    Gpu,
    #[serde(rename = "RAM", alias = "ram")]
    Ram,
    #[serde(rename = "Other", alias = "other", alias = "OTHER")]
    Other,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Cpu, Source::Gpu, Source::Ram, Source::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cpu => "CPU",
            Source::Gpu => "GPU",
            Source::Ram => "RAM",
            Source::Other => "Other",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = EcoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EcoError::Invalid(format!("unknown power source `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub kwh: f64,
    pub duration_s: f64,
    pub per_source: BTreeMap<Source, f64>,
    /// Sources whose probe failed during the span; their energy covers only
    /// the samples taken before the failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partial: Vec<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_memory_gb: Option<f64>,
}

impl EnergyRecord {
    pub fn from_sources(per_source: BTreeMap<Source, f64>, duration_s: f64) -> Self {
        Self {
            kwh: per_source.values().sum(),
            duration_s,
            per_source,
            partial: Vec::new(),
            peak_memory_gb: None,
        }
    }

    /// Roll `other` up into `self`: energies and durations add, peaks take
    /// the maximum.
    pub fn absorb(&mut self, other: &EnergyRecord) {
        for (s, v) in &other.per_source {
            *self.per_source.entry(*s).or_insert(0.0) += v;
        }
        self.kwh = self.per_source.values().sum();
        self.duration_s += other.duration_s;
        for s in &other.partial {
            if !self.partial.contains(s) {
                self.partial.push(*s);
            }
        }
        self.peak_memory_gb = max_opt(self.peak_memory_gb, other.peak_memory_gb);
    }
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Trapezoidal integral of `(t seconds, watts)` samples, in watt-seconds.
/// Timestamps must strictly increase.
pub fn integrate_trapezoid(samples: &[(f64, f64)]) -> Result<f64, EcoError> {
    let mut total = 0.0;
    for w in samples.windows(2) {
        let (t0, p0) = w[0];
        let (t1, p1) = w[1];
        if t1 <= t0 {
            return Err(EcoError::Invalid(format!(
                "timestamps not increasing at t={t1}"
            )));
        }
        total += (p0 + p1) / 2.0 * (t1 - t0);
    }
    Ok(total)
}

/// Energy per source from a pooled sample stream.
pub fn energy_from_samples(samples: &[PowerSample]) -> Result<EnergyRecord, EcoError> {
    let mut per_source = BTreeMap::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for source in Source::ALL {
        let points: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| s.source == source)
            .map(|s| (s.t, s.watts))
            .collect();
        if points.is_empty() {
            continue;
        }
        lo = lo.min(points[0].0);
        hi = hi.max(points[points.len() - 1].0);
        per_source.insert(source, integrate_trapezoid(&points)? / JOULES_PER_KWH);
    }
    let duration = if hi > lo { hi - lo } else { 0.0 };
    Ok(EnergyRecord::from_sources(per_source, duration))
}

fn stream_energy(readings: &[(f64, Reading)]) -> Result<f64, EcoError> {
    let mut watts = Vec::with_capacity(readings.len());
    let mut joules: Option<(f64, f64)> = None;
    for (t, r) in readings {
        match r {
            Reading::Watts(w) => watts.push((*t, *w)),
            Reading::CumulativeJoules(j) => {
                joules = Some(match joules {
                    None => (*j, *j),
                    Some((first, _)) => (first, *j),
                })
            }
        }
    }
    let counter = joules.map_or(0.0, |(first, last)| (last - first).max(0.0));
    Ok((integrate_trapezoid(&watts)? + counter) / JOULES_PER_KWH)
}

fn grid(t0: f64, t1: f64, interval_s: f64, extra: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut ts = vec![t0];
    let mut i = 1u64;
    loop {
        let t = t0 + i as f64 * interval_s;
        if t >= t1 {
            break;
        }
        ts.push(t);
        i += 1;
    }
    if t1 > t0 {
        ts.push(t1);
    }
    ts.extend(extra);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

fn check_interval(interval_s: f64, probes: usize) -> Result<(), EcoError> {
    if !(interval_s > 0.0 && interval_s.is_finite()) {
        return Err(EcoError::Invalid(format!(
            "interval must be positive, got {interval_s}"
        )));
    }
    if probes == 0 {
        return Err(EcoError::Invalid("at least one probe is required".into()));
    }
    Ok(())
}

/// Energy over `[t0, t0 + duration_s]` on the probes' own clock, sampling
/// every `interval_s` plus at each probe breakpoint. Deterministic; used for
/// replayed traces and simulated timing.
pub fn measure_span(
    probes: &[Arc<dyn PowerProbe>],
    t0: f64,
    duration_s: f64,
    interval_s: f64,
) -> Result<EnergyRecord, EcoError> {
    check_interval(interval_s, probes.len())?;
    if duration_s.is_nan() || duration_s < 0.0 {
        return Err(EcoError::Invalid(format!(
            "negative span duration {duration_s}"
        )));
    }
    let t1 = t0 + duration_s;
    let mut per_source = BTreeMap::new();
    let mut partial = Vec::new();
    let mut peak = None;
    for probe in probes {
        let ts = grid(t0, t1, interval_s, probe.breakpoints(t0, t1));
        let mut readings = Vec::with_capacity(ts.len());
        for t in ts {
            match probe.read(t) {
                Ok(r) => readings.push((t, r)),
                Err(e) => {
                    tracing::warn!(probe = probe.id(), "probe failed: {e}");
                    partial.push(probe.source());
                    break;
                }
            }
        }
        *per_source.entry(probe.source()).or_insert(0.0) += stream_energy(&readings)?;
        peak = max_opt(peak, probe.peak_memory_gb());
    }
    let mut rec = EnergyRecord::from_sources(per_source, duration_s);
    rec.partial = partial;
    rec.peak_memory_gb = peak;
    Ok(rec)
}

/// Run `op` while a sampler thread reads every probe each `interval_s` of
/// wall time. The span includes sampling overhead, since none of the bundled
/// probes reports its own cost.
pub fn track<R>(
    probes: &[Arc<dyn PowerProbe>],
    interval_s: f64,
    op: impl FnOnce() -> R,
) -> Result<(R, EnergyRecord), EcoError> {
    check_interval(interval_s, probes.len())?;
    let start = Instant::now();
    let stop = AtomicBool::new(false);
    let (result, streams) = std::thread::scope(|scope| {
        let sampler = scope.spawn(|| {
            let mut streams: Vec<(Vec<(f64, Reading)>, bool)> =
                vec![(Vec::new(), false); probes.len()];
            let tick = Duration::from_secs_f64(interval_s);
            let mut next = Duration::ZERO;
            loop {
                let done = stop.load(Ordering::Acquire);
                let t = start.elapsed().as_secs_f64();
                for (probe, (stream, failed)) in probes.iter().zip(streams.iter_mut()) {
                    if *failed {
                        continue;
                    }
                    if stream.last().is_some_and(|(last, _)| *last >= t) {
                        continue;
                    }
                    match probe.read(t) {
                        Ok(r) => stream.push((t, r)),
                        Err(e) => {
                            tracing::warn!(probe = probe.id(), "probe failed: {e}");
                            *failed = true;
                        }
                    }
                }
                if done {
                    return streams;
                }
                next += tick;
                while start.elapsed() < next && !stop.load(Ordering::Acquire) {
                    let remaining = next.saturating_sub(start.elapsed());
                    std::thread::sleep(remaining.min(Duration::from_millis(5)));
                }
            }
        });
        let result = op();
        stop.store(true, Ordering::Release);
        (result, sampler.join().expect("sampler thread panicked"))
    });
    let duration_s = start.elapsed().as_secs_f64();
    let mut per_source = BTreeMap::new();
    let mut partial = Vec::new();
    let mut peak = None;
    for (probe, (stream, failed)) in probes.iter().zip(&streams) {
        *per_source.entry(probe.source()).or_insert(0.0) += stream_energy(stream)?;
        if *failed {
            partial.push(probe.source());
        }
        peak = max_opt(peak, probe.peak_memory_gb());
    }
    let mut rec = EnergyRecord::from_sources(per_source, duration_s);
    rec.partial = partial;
    rec.peak_memory_gb = peak;
    Ok((result, rec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub kg_co2eq: f64,
    pub intensity: f64,
    pub region_label: String,
}

pub fn check_intensity(intensity: f64) -> Result<(), EcoError> {
    if intensity >= 0.0 && intensity.is_finite() {
        Ok(())
    } else {
        Err(EcoError::Invalid(format!(
            "carbon intensity must be a non-negative number of kg/kWh, got {intensity}"
        )))
    }
}

pub fn to_emissions(
    energy: &EnergyRecord,
    intensity: f64,
    region_label: &str,
) -> Result<EmissionRecord, EcoError> {
    check_intensity(intensity)?;
    Ok(EmissionRecord {
        kg_co2eq: energy.kwh * intensity,
        intensity,
        region_label: region_label.to_string(),
    })
}
