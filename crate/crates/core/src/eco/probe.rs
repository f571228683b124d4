use super::{EcoError, Source};
use crate::registry::Registry;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reading {
    Watts(f64),
    /// Monotone energy counter; only differences are meaningful.
    CumulativeJoules(f64),
}

pub trait PowerProbe: Send + Sync {
    fn id(&self) -> &str;
    fn source(&self) -> Source;
    /// Reading at `t` seconds on the caller's clock.
    fn read(&self, t: f64) -> Result<Reading, EcoError>;
    /// Times in `(t0, t1)` where the signal changes slope; integration
    /// samples there too so piecewise-linear signals integrate exactly.
    fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }
    fn peak_memory_gb(&self) -> Option<f64> {
        None
    }
}

/// Fixed draw, e.g. a device's TDP.
pub struct ConstantProbe {
    id: String,
    source: Source,
    watts: f64,
    memory_gb: Option<f64>,
}

impl ConstantProbe {
    pub fn new(source: Source, watts: f64) -> Result<Self, EcoError> {
        if !(watts >= 0.0 && watts.is_finite()) {
            return Err(EcoError::Invalid(format!(
                "constant probe watts must be >= 0, got {watts}"
            )));
        }
        Ok(Self {
            id: format!("constant/{source}/{watts}W"),
            source,
            watts,
            memory_gb: None,
        })
    }

    pub fn with_memory_gb(mut self, gb: f64) -> Self {
        self.memory_gb = Some(gb);
        self
    }
}

impl PowerProbe for ConstantProbe {
    fn id(&self) -> &str {
        &self.id
    }
    fn source(&self) -> Source {
        self.source
    }
    fn read(&self, _t: f64) -> Result<Reading, EcoError> {
        Ok(Reading::Watts(self.watts))
    }
    fn peak_memory_gb(&self) -> Option<f64> {
        self.memory_gb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t: f64,
    pub watts: f64,
    pub source: Source,
}

#[derive(Deserialize)]
struct ReplayRow {
    t_seconds: f64,
    watts: f64,
    source: String,
}

/// Parse a `t_seconds,watts,source` CSV. Timestamps must strictly increase
/// within each source and watts must be non-negative.
pub fn read_samples(path: &Path) -> Result<Vec<PowerSample>, EcoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EcoError::Replay(format!("{}: {e}", path.display())))?;
    let mut out: Vec<PowerSample> = Vec::new();
    for (i, row) in reader.deserialize::<ReplayRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| EcoError::Replay(format!("{}:{line}: {e}", path.display())))?;
        let source: Source = row
            .source
            .parse()
            .map_err(|e| EcoError::Replay(format!("{}:{line}: {e}", path.display())))?;
        if !(row.watts >= 0.0 && row.watts.is_finite() && row.t_seconds.is_finite()) {
            return Err(EcoError::Replay(format!(
                "{}:{line}: invalid sample",
                path.display()
            )));
        }
        if let Some(prev) = out.iter().rev().find(|s| s.source == source) {
            if row.t_seconds <= prev.t {
                return Err(EcoError::Replay(format!(
                    "{}:{line}: timestamps for {source} must strictly increase",
                    path.display()
                )));
            }
        }
        out.push(PowerSample {
            t: row.t_seconds,
            watts: row.watts,
            source,
        });
    }
    Ok(out)
}

/// Piecewise-linear playback of recorded samples for one source. Outside
/// the recorded range the nearest endpoint value holds.
pub struct ReplayProbe {
    id: String,
    source: Source,
    samples: Vec<(f64, f64)>,
}

impl ReplayProbe {
    pub fn new(source: Source, samples: Vec<(f64, f64)>) -> Result<Self, EcoError> {
        if samples.is_empty() {
            return Err(EcoError::Replay(format!("no samples for {source}")));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(EcoError::Replay("timestamps must strictly increase".into()));
        }
        Ok(Self {
            id: format!("replay/{source}"),
            source,
            samples,
        })
    }

    /// One probe per source present in the file, in CPU, GPU, RAM, Other
    /// order.
    pub fn load(path: &Path) -> Result<Vec<Self>, EcoError> {
        let samples = read_samples(path)?;
        let mut probes = Vec::new();
        for source in Source::ALL {
            let points: Vec<(f64, f64)> = samples
                .iter()
                .filter(|s| s.source == source)
                .map(|s| (s.t, s.watts))
                .collect();
            if !points.is_empty() {
                let mut p = Self::new(source, points)?;
                p.id = format!("replay/{}/{source}", path.display());
                probes.push(p);
            }
        }
        if probes.is_empty() {
            return Err(EcoError::Replay(format!("{}: no samples", path.display())));
        }
        Ok(probes)
    }

    pub fn watts_at(&self, t: f64) -> f64 {
        let s = &self.samples;
        if t <= s[0].0 {
            return s[0].1;
        }
        if t >= s[s.len() - 1].0 {
            return s[s.len() - 1].1;
        }
        let i = s.partition_point(|p| p.0 <= t);
        let (t0, w0) = s[i - 1];
        let (t1, w1) = s[i];
        w0 + (w1 - w0) * (t - t0) / (t1 - t0)
    }
}

impl PowerProbe for ReplayProbe {
    fn id(&self) -> &str {
        &self.id
    }
    fn source(&self) -> Source {
        self.source
    }
    fn read(&self, t: f64) -> Result<Reading, EcoError> {
        Ok(Reading::Watts(self.watts_at(t)))
    }
    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.samples
            .iter()
            .map(|p| p.0)
            .filter(|&t| t > t0 && t < t1)
            .collect()
    }
}

/// Linux powercap (RAPL) package energy counter.
pub struct RaplProbe {
    id: String,
    energy_path: PathBuf,
    max_range_uj: Option<u64>,
    state: Mutex<RaplState>,
}

#[derive(Default)]
struct RaplState {
    last_raw: Option<u64>,
    total_uj: u64,
}

pub const DEFAULT_RAPL_ZONE: &str = "/sys/class/powercap/intel-rapl:0";

impl RaplProbe {
    pub fn new(zone: &Path) -> Result<Self, EcoError> {
        let energy_path = zone.join("energy_uj");
        std::fs::read_to_string(&energy_path)
            .map_err(|e| EcoError::Probe(format!("{}: {e}", energy_path.display())))?;
        let max_range_uj = std::fs::read_to_string(zone.join("max_energy_range_uj"))
            .ok()
            .and_then(|s| s.trim().parse().ok());
        Ok(Self {
            id: format!("rapl/{}", zone.display()),
            energy_path,
            max_range_uj,
            state: Mutex::new(RaplState::default()),
        })
    }
}

impl PowerProbe for RaplProbe {
    fn id(&self) -> &str {
        &self.id
    }
    fn source(&self) -> Source {
        Source::Cpu
    }
    fn read(&self, _t: f64) -> Result<Reading, EcoError> {
        let raw: u64 = std::fs::read_to_string(&self.energy_path)
            .map_err(|e| EcoError::Probe(format!("{}: {e}", self.energy_path.display())))?
            .trim()
            .parse()
            .map_err(|e| EcoError::Probe(format!("{}: {e}", self.energy_path.display())))?;
        let mut st = self.state.lock().expect("rapl state lock");
        if let Some(last) = st.last_raw {
            let delta = if raw >= last {
                raw - last
            } else {
                // Counter wrapped.
                self.max_range_uj.map_or(0, |max| max - last + raw)
            };
            st.total_uj += delta;
        }
        st.last_raw = Some(raw);
        Ok(Reading::CumulativeJoules(st.total_uj as f64 / 1e6))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Registry name: `constant`, `replay` or `rapl`.
    pub kind: String,
    pub source: Option<Source>,
    pub watts: Option<f64>,
    pub memory_gb: Option<f64>,
    /// Replay CSV or RAPL zone directory.
    pub path: Option<PathBuf>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: "constant".into(),
            source: None,
            watts: None,
            memory_gb: None,
            path: None,
        }
    }
}

pub type ProbeRegistry = Registry<dyn PowerProbe, ProbeConfig>;

pub fn default_probes() -> ProbeRegistry {
    let mut reg = ProbeRegistry::new("power probe");
    reg.register("constant", |c: &ProbeConfig| {
        let watts = c.watts.ok_or("constant probe needs `watts`")?;
        let mut p = ConstantProbe::new(c.source.unwrap_or(Source::Gpu), watts)
            .map_err(|e| e.to_string())?;
        if let Some(gb) = c.memory_gb {
            p = p.with_memory_gb(gb);
        }
        Ok(Box::new(p))
    });
    reg.register("replay", |c: &ProbeConfig| {
        let path = c.path.as_ref().ok_or("replay probe needs `path`")?;
        let mut probes = ReplayProbe::load(path).map_err(|e| e.to_string())?;
        let pick = match c.source {
            Some(s) => probes
                .iter()
                .position(|p| p.source == s)
                .ok_or(format!("no {s} samples in file"))?,
            None if probes.len() == 1 => 0,
            None => return Err("file has several sources; set `source`".into()),
        };
        Ok(Box::new(probes.swap_remove(pick)))
    });
    reg.register("rapl", |c: &ProbeConfig| {
        let zone = c
            .path
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_RAPL_ZONE));
        RaplProbe::new(&zone)
            .map(|p| Box::new(p) as Box<dyn PowerProbe>)
            .map_err(|e| e.to_string())
    });
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn replay_interpolates_and_clamps() {
        let p = ReplayProbe::new(Source::Gpu, vec![(0.0, 0.0), (10.0, 200.0)]).unwrap();
        assert_eq!(p.watts_at(5.0), 100.0);
        assert_eq!(p.watts_at(-1.0), 0.0);
        assert_eq!(p.watts_at(20.0), 200.0);
        assert_eq!(p.breakpoints(0.0, 20.0), vec![10.0]);
    }

    #[test]
    fn csv_load_groups_sources() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "t_seconds,watts,source\n0,10,CPU\n0,100,gpu\n1,20,CPU\n2,100,GPU"
        )
        .unwrap();
        let probes = ReplayProbe::load(f.path()).unwrap();
        assert_eq!(probes.len(), 2);
        assert_eq!(probes[0].source(), Source::Cpu);
        assert_eq!(probes[1].source(), Source::Gpu);
    }

    #[test]
    fn csv_rejects_non_increasing_and_negative() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "t_seconds,watts,source\n1,10,CPU\n1,20,CPU").unwrap();
        assert!(read_samples(f.path()).is_err());
        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "t_seconds,watts,source\n1,-5,RAM").unwrap();
        assert!(read_samples(g.path()).is_err());
    }

    #[test]
    fn rapl_counter_with_wrap() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("energy_uj"), "900\n").unwrap();
        std::fs::write(dir.path().join("max_energy_range_uj"), "1000\n").unwrap();
        let p = RaplProbe::new(dir.path()).unwrap();
        assert_eq!(p.read(0.0).unwrap(), Reading::CumulativeJoules(0.0));
        std::fs::write(dir.path().join("energy_uj"), "100\n").unwrap();
        assert_eq!(p.read(1.0).unwrap(), Reading::CumulativeJoules(200e-6));
    }

    #[test]
    fn registry_builds_constant() {
        let reg = default_probes();
        let cfg = ProbeConfig {
            watts: Some(75.0),
            ..Default::default()
        };
        let p = reg.build("constant", &cfg).unwrap();
        assert_eq!(p.read(3.0).unwrap(), Reading::Watts(75.0));
        assert!(reg.build("constant", &ProbeConfig::default()).is_err());
    }
}
