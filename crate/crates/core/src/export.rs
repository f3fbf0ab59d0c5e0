//! Delimited tables and JSON documents for matrices, factors, scans and
//! patterns. Floats are written in shortest round-trip form so outputs are
//! byte-stable across runs.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ingest::{CountMatrix, Location};
use crate::nmf::{FactorPair, NmfConfig};
use crate::patterns::PatternSet;
use crate::rank::RankScanResult;

fn hour_column(h: u32) -> String {
    format!("h{h:02}")
}

fn pattern_columns(r: usize) -> impl Iterator<Item = String> {
    (1..=r).map(|p| format!("p{p}"))
}

/// `period,location_id,latitude,longitude,h07,...` with one row per location.
pub fn write_count_matrix<W: Write>(out: W, m: &CountMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "period".to_string(),
        "location_id".into(),
        "latitude".into(),
        "longitude".into(),
    ];
    header.extend(m.hours().iter().map(|&h| hour_column(h)));
    w.write_record(&header)?;
    for (loc, row) in m.locations().iter().zip(m.values().rows()) {
        let mut rec = vec![
            m.period().to_string(),
            loc.id.clone(),
            loc.latitude.to_string(),
            loc.longitude.to_string(),
        ];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_count_matrix<R: Read>(input: R) -> Result<CountMatrix> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let fixed = ["period", "location_id", "latitude", "longitude"];
    if header.len() < fixed.len() + 1 || header.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(Error::Format(format!(
            "count matrix header must start with {fixed:?} and have hour columns"
        )));
    }
    let hours = header
        .iter()
        .skip(fixed.len())
        .map(|c| {
            c.strip_prefix('h')
                .and_then(|n| n.parse::<u32>().ok())
                .ok_or_else(|| Error::Format(format!("bad hour column `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let num = |s: &str, line: usize| {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("row {line}: `{s}` is not a number")))
    };
    let mut period = None;
    let mut locations = Vec::new();
    let mut flat = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Format(format!(
                "row {line}: expected {} fields",
                header.len()
            )));
        }
        match &period {
            None => period = Some(rec[0].to_string()),
            Some(p) if p != &rec[0] => {
                return Err(Error::MixedPeriods(vec![p.clone(), rec[0].to_string()]))
            }
            _ => {}
        }
        locations.push(Location {
            id: rec[1].to_string(),
            latitude: num(&rec[2], line)?,
            longitude: num(&rec[3], line)?,
        });
        for f in rec.iter().skip(fixed.len()) {
            flat.push(num(f, line)?);
        }
    }
    if locations.is_empty() {
        return Err(Error::EmptyInput("count matrix table has no rows".into()));
    }
    let values = Array2::from_shape_vec((locations.len(), hours.len()), flat)
        .map_err(|e| Error::Format(e.to_string()))?;
    CountMatrix::new(values, locations, hours, period.unwrap_or_default())
}

/// Location id, coordinates, then one column per pattern.
pub fn write_location_factor<W: Write>(
    out: W,
    locations: &[Location],
    factor: ArrayView2<'_, f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "location_id".to_string(),
        "latitude".into(),
        "longitude".into(),
    ];
    header.extend(pattern_columns(factor.ncols()));
    w.write_record(&header)?;
    for (loc, row) in locations.iter().zip(factor.rows()) {
        let mut rec = vec![
            loc.id.clone(),
            loc.latitude.to_string(),
            loc.longitude.to_string(),
        ];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Hour bin, then one column per pattern.
pub fn write_hour_factor<W: Write>(
    out: W,
    hours: &[u32],
    factor: ArrayView2<'_, f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["hour".to_string()];
    header.extend(pattern_columns(factor.ncols()));
    w.write_record(&header)?;
    for (h, row) in hours.iter().zip(factor.rows()) {
        let mut rec = vec![h.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct FactorDiagnostics<'a> {
    pub period: &'a str,
    pub shape: (usize, usize),
    pub config: &'a NmfConfig,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub objective_trace: &'a [f64],
}

impl<'a> FactorDiagnostics<'a> {
    pub fn new(period: &'a str, config: &'a NmfConfig, pair: &'a FactorPair) -> Self {
        Self {
            period,
            shape: (pair.w.nrows(), pair.h.nrows()),
            config,
            iterations_run: pair.iterations_run,
            converged: pair.converged,
            final_loss: pair.final_loss(),
            objective_trace: &pair.objective_trace,
        }
    }
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// `rank,within,between,total_scatter,ch,occupied_clusters,final_loss,converged`.
/// Degenerate scores are left blank.
pub fn write_scan_table<W: Write>(out: W, scan: &RankScanResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rank",
        "within",
        "between",
        "total_scatter",
        "ch",
        "occupied_clusters",
        "final_loss",
        "converged",
    ])?;
    for e in &scan.entries {
        w.write_record([
            e.rank.to_string(),
            e.within.to_string(),
            e.between.to_string(),
            e.total_scatter.to_string(),
            e.ch.map(|c| c.to_string()).unwrap_or_default(),
            e.occupied_clusters.to_string(),
            e.final_loss.to_string(),
            e.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Unit-max temporal curves, hour × pattern.
pub fn write_temporal_patterns<W: Write>(out: W, set: &PatternSet) -> Result<()> {
    write_hour_factor(out, &set.hours, set.temporal.view())
}

/// One point feature per location carrying its per-pattern loadings and the
/// dominant pattern (numbered from 1).
pub fn spatial_geojson(set: &PatternSet) -> Value {
    let dominant = set.dominant_patterns();
    let features: Vec<Value> = set
        .locations
        .iter()
        .zip(set.spatial.rows())
        .zip(dominant)
        .map(|((loc, row), dom)| {
            let mut props = serde_json::Map::new();
            props.insert("location_id".into(), json!(loc.id));
            props.insert("period".into(), json!(set.period));
            props.insert("dominant_pattern".into(), json!(dom + 1));
            for (p, v) in row.iter().enumerate() {
                props.insert(format!("p{}", p + 1), json!(v));
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [loc.longitude, loc.latitude] },
                "properties": props,
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_matrix, HourWindow};
    use crate::synth::{generate, SyntheticSpec};

    #[test]
    fn count_matrix_round_trip() {
        let data = generate(&SyntheticSpec::new(15, 12, 3).with_noise(0.05).with_seed(7)).unwrap();
        let m = build_matrix(&data.records, HourWindow::default()).unwrap();
        let mut buf = Vec::new();
        write_count_matrix(&mut buf, &m).unwrap();
        let back = read_count_matrix(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("period,location_id,latitude,longitude,h07,h08"));
    }

    #[test]
    fn malformed_matrix_tables() {
        assert!(read_count_matrix("a,b\n1,2\n".as_bytes()).is_err());
        assert!(
            read_count_matrix("period,location_id,latitude,longitude,h07\n".as_bytes()).is_err()
        );
        assert!(read_count_matrix(
            "period,location_id,latitude,longitude,h07\nx,a,1,2,3\ny,b,1,2,3\n".as_bytes()
        )
        .is_err());
        assert!(read_count_matrix(
            "period,location_id,latitude,longitude,h07\nx,a,1,2,-3\n".as_bytes()
        )
        .is_err());
    }

    #[test]
    fn geojson_shape() {
        let set = PatternSet {
            temporal: ndarray::array![[1.0, 0.2], [0.5, 1.0]],
            spatial: ndarray::array![[0.1, 0.9]],
            hours: vec![7, 8],
            locations: vec![Location {
                id: "941".into(),
                latitude: 51.5,
                longitude: -0.1,
            }],
            period: "2019".into(),
            column_norms: vec![1.0, 1.0],
        };
        let g = spatial_geojson(&set);
        let f = &g["features"][0];
        assert_eq!(f["geometry"]["coordinates"], json!([-0.1, 51.5]));
        assert_eq!(f["properties"]["dominant_pattern"], json!(2));
        assert_eq!(f["properties"]["p2"], json!(0.9));
    }
}
