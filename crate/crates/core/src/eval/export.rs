//! Gain-curve CSV: columns `model,fraction,cumulative_uplift`, rows grouped by
//! model in the given order with fractions ascending.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::curve::GainCurve;

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    model: String,
    fraction: f64,
    cumulative_uplift: f64,
}

pub fn write_gain_curves<W: std::io::Write>(curves: &[(String, GainCurve)], writer: W) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Contract("no curves to export".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    for (model, curve) in curves {
        for &(fraction, cumulative_uplift) in &curve.points {
            w.serialize(CurveRow {
                model: model.clone(),
                fraction,
                cumulative_uplift,
            })?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn export_gain_curves(curves: &[(String, GainCurve)], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_gain_curves(curves, std::io::BufWriter::new(file))
}

/// Reads curves back, in first-appearance order of the model names.
pub fn read_gain_curves(path: &Path) -> Result<Vec<(String, GainCurve)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(String, GainCurve)> = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize() {
        let row: CurveRow = row?;
        match out.last_mut() {
            Some((name, curve)) if *name == row.model => curve.points.push((row.fraction, row.cumulative_uplift)),
            _ => out.push((
                row.model,
                GainCurve {
                    points: vec![(row.fraction, row.cumulative_uplift)],
                },
            )),
        }
    }
    Ok(out)
}
