use super::{check_intensity, EcoError, EnergyRecord};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Energy attributed to one tracked span of one model's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub model_label: String,
    pub energy: EnergyRecord,
}

/// Per-model consumption totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionRow {
    pub model: String,
    pub time_h: f64,
    pub energy_kwh: f64,
    pub co2_kg: f64,
    /// Peak over the run, when a probe reports memory.
    pub peak_vram_gb: Option<f64>,
    pub region_label: String,
    pub intensity: f64,
}

/// Totals per model in first-appearance order. An empty ledger yields one
/// all-zero row.
pub fn ledger_report(
    entries: &[LedgerEntry],
    intensity: f64,
    region_label: &str,
) -> Result<Vec<ConsumptionRow>, EcoError> {
    check_intensity(intensity)?;
    let mut totals: Vec<(String, EnergyRecord)> = Vec::new();
    for e in entries {
        match totals.iter_mut().find(|(m, _)| *m == e.model_label) {
            Some((_, rec)) => rec.absorb(&e.energy),
            None => totals.push((e.model_label.clone(), e.energy.clone())),
        }
    }
    if totals.is_empty() {
        totals.push((String::new(), EnergyRecord::default()));
    }
    Ok(totals
        .into_iter()
        .map(|(model, rec)| ConsumptionRow {
            model,
            time_h: rec.duration_s / 3600.0,
            energy_kwh: rec.kwh,
            co2_kg: rec.kwh * intensity,
            peak_vram_gb: rec.peak_memory_gb,
            region_label: region_label.to_string(),
            intensity,
        })
        .collect())
}

pub const CONSUMPTION_HEADER: [&str; 7] = [
    "model",
    "time_h",
    "energy_kwh",
    "co2_kg",
    "peak_vram_gb",
    "region_label",
    "intensity",
];

/// Time in hours with 3 decimals; energy and CO₂ with 6.
pub fn write_consumption_csv<W: Write>(rows: &[ConsumptionRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONSUMPTION_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            format!("{:.3}", r.time_h),
            format!("{:.6}", r.energy_kwh),
            format!("{:.6}", r.co2_kg),
            r.peak_vram_gb
                .map(|g| format!("{g:.3}"))
                .unwrap_or_default(),
            r.region_label.clone(),
            format!("{}", r.intensity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_consumption_markdown(rows: &[ConsumptionRow]) -> String {
    let mut s = String::from(
        "| Model | Time (h) | Energy (kWh) | CO2eq (kg) | Peak vRAM (GB) |\n|---|---:|---:|---:|---:|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} | {} |\n",
            r.model,
            r.time_h,
            r.energy_kwh,
            r.co2_kg,
            r.peak_vram_gb
                .map(|g| format!("{g:.3}"))
                .unwrap_or_else(|| "-".into())
        ));
    }
    if let Some(r) = rows.first() {
        s.push_str(&format!(
            "\nCarbon intensity {} kg CO2eq/kWh ({}).\n",
            r.intensity, r.region_label
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eco::Source;

    fn entry(model: &str, kwh: f64, secs: f64) -> LedgerEntry {
        LedgerEntry {
            model_label: model.into(),
            energy: EnergyRecord::from_sources([(Source::Gpu, kwh)].into_iter().collect(), secs),
        }
    }

    #[test]
    fn empty_ledger_is_one_zero_row() {
        let rows = ledger_report(&[], 0.1, "r").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            (rows[0].time_h, rows[0].energy_kwh, rows[0].co2_kg),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn totals_add_per_model() {
        let rows = ledger_report(
            &[
                entry("a", 0.1, 10.0),
                entry("b", 1.0, 1.0),
                entry("a", 0.2, 20.0),
            ],
            0.5,
            "r",
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].energy_kwh - 0.3).abs() < 1e-12);
        assert!((rows[0].co2_kg - 0.15).abs() < 1e-12);
        assert_eq!(rows[0].time_h, 30.0 / 3600.0);
    }

    #[test]
    fn hours_have_three_decimals() {
        let rows = ledger_report(&[entry("m", 1.0, 10.024 * 3600.0)], 0.113, "anon").unwrap();
        let mut buf = Vec::new();
        write_consumption_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("m,10.024,1.000000,0.113000,,anon,0.113"));
    }
}
