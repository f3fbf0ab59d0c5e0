//! Raw count records, the location × hour count matrix, and min-max scaling.
//!
//! Records are summed per (location, hour) inside an inclusive hour window.
//! Rows are ordered by location id (plain string order) and columns by hour.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One roadside observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub location_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub hour: u32,
    pub count: u64,
    pub period: String,
}

/// Inclusive range of clock-hour bin starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourWindow {
    pub first: u32,
    pub last: u32,
}

impl HourWindow {
    pub fn new(first: u32, last: u32) -> Result<Self> {
        if first > last || last > 23 {
            return Err(Error::InvalidConfig(format!(
                "hour window {first}..={last} must satisfy first <= last <= 23"
            )));
        }
        Ok(Self { first, last })
    }

    pub fn contains(&self, hour: u32) -> bool {
        (self.first..=self.last).contains(&hour)
    }

    pub fn hours(&self) -> Vec<u32> {
        (self.first..=self.last).collect()
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for HourWindow {
    /// 07:00 through the 18:00 bin, twelve bins.
    fn default() -> Self {
        Self { first: 7, last: 18 }
    }
}

impl fmt::Display for HourWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

/// Parses `a..b` or `a..=b`; both forms are inclusive of `b`.
impl FromStr for HourWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = parse_inclusive_range(s)?;
        let conv = |v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("hour {v} out of range")))
        };
        HourWindow::new(conv(a)?, conv(b)?)
    }
}

/// Parses an inclusive integer range written `a..b`, `a..=b` or a single `a`.
pub fn parse_inclusive_range(s: &str) -> Result<(usize, usize)> {
    let s = s.trim();
    let bad = || Error::InvalidConfig(format!("cannot parse range `{s}`"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

/// Maps record roles onto header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub location_id: String,
    pub latitude: String,
    pub longitude: String,
    pub hour: String,
    pub count: String,
    /// When set, the period label is read from this column instead of
    /// [`ParseOptions::period`].
    pub period: Option<String>,
}

impl Default for ColumnMapping {
    /// Headers used by the GB raw-count tables.
    fn default() -> Self {
        Self {
            location_id: "count_point_id".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            hour: "hour".into(),
            count: "all_motor_vehicles".into(),
            period: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub mapping: ColumnMapping,
    pub delimiter: u8,
    /// Label attached to every record when the mapping has no period column.
    /// With a period column it acts as a filter: rows of other periods are
    /// skipped (not rejected).
    pub period: Option<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            mapping: ColumnMapping::default(),
            delimiter: b',',
            period: None,
        }
    }
}

/// A data row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the source, header is line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<TrafficRecord>,
    pub rejected: usize,
    /// First few rejections, for reporting.
    pub rejection_samples: Vec<Rejection>,
    /// Rows skipped because their period did not match the requested one.
    pub skipped_other_period: usize,
}

const MAX_REJECTION_SAMPLES: usize = 20;

/// Reads a delimited table with a header row into records.
///
/// Rows with negative counts, hours outside 0..=23, out-of-range coordinates
/// or unparsable fields are rejected and counted rather than aborting.
pub fn parse_records<R: Read>(reader: R, opts: &ParseOptions) -> Result<ParsedRecords> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    // exact header first, then ignoring ASCII case
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .or_else(|| headers.iter().position(|h| h.eq_ignore_ascii_case(name)))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let m = &opts.mapping;
    let idx_id = find(&m.location_id)?;
    let idx_lat = find(&m.latitude)?;
    let idx_lon = find(&m.longitude)?;
    let idx_hour = find(&m.hour)?;
    let idx_count = find(&m.count)?;
    let idx_period = m.period.as_deref().map(find).transpose()?;
    let default_label = opts.period.clone().unwrap_or_default();

    let mut out = ParsedRecords::default();
    let mut rows = 0usize;
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                rows += 1;
                out.reject(line, e.to_string());
                continue;
            }
        }
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows += 1;

        let period = match idx_period {
            Some(i) => match row.get(i) {
                Some(p) => {
                    if opts.period.as_deref().is_some_and(|want| want != p) {
                        out.skipped_other_period += 1;
                        continue;
                    }
                    p.to_string()
                }
                None => {
                    out.reject(line, "missing period field".into());
                    continue;
                }
            },
            None => default_label.clone(),
        };

        match record_from_row(
            &row,
            [idx_id, idx_lat, idx_lon, idx_hour, idx_count],
            period,
        ) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.reject(line, reason),
        }
    }

    if rows == 0 {
        return Err(Error::EmptyInput(
            "table has a header but no data rows".into(),
        ));
    }
    Ok(out)
}

impl ParsedRecords {
    fn reject(&mut self, line: u64, reason: String) {
        self.rejected += 1;
        if self.rejection_samples.len() < MAX_REJECTION_SAMPLES {
            self.rejection_samples.push(Rejection { line, reason });
        }
    }
}

fn record_from_row(
    row: &csv::StringRecord,
    [id, lat, lon, hour, count]: [usize; 5],
    period: String,
) -> std::result::Result<TrafficRecord, String> {
    let field = |i: usize, name: &str| row.get(i).ok_or_else(|| format!("missing {name} field"));

    let location_id = field(id, "location id")?;
    if location_id.is_empty() {
        return Err("empty location id".into());
    }
    let latitude: f64 = field(lat, "latitude")?
        .parse()
        .map_err(|_| "unparsable latitude".to_string())?;
    let longitude: f64 = field(lon, "longitude")?
        .parse()
        .map_err(|_| "unparsable longitude".to_string())?;
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return Err(format!(
            "coordinates out of range ({latitude}, {longitude})"
        ));
    }
    let hour: i64 = field(hour, "hour")?
        .parse()
        .map_err(|_| "unmappable hour".to_string())?;
    if !(0..=23).contains(&hour) {
        return Err(format!("unmappable hour {hour}"));
    }
    let count = parse_count(field(count, "count")?)?;

    Ok(TrafficRecord {
        location_id: location_id.to_string(),
        latitude,
        longitude,
        hour: hour as u32,
        count,
        period,
    })
}

fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<i64>() {
        return u64::try_from(v).map_err(|_| format!("negative count {v}"));
    }
    // some exports write integral counts as `120.0`
    match s.parse::<f64>() {
        Ok(v) if v < 0.0 => Err(format!("negative count {s}")),
        Ok(v) if v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(v as u64),
        _ => Err(format!("unparsable count `{s}`")),
    }
}

/// A count point with its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Location × hour matrix of summed vehicle counts for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    values: Array2<f64>,
    locations: Vec<Location>,
    hours: Vec<u32>,
    period: String,
}

impl CountMatrix {
    pub fn new(
        values: Array2<f64>,
        locations: Vec<Location>,
        hours: Vec<u32>,
        period: String,
    ) -> Result<Self> {
        let found = values.dim();
        if found != (locations.len(), hours.len()) {
            return Err(Error::ShapeMismatch {
                expected: (locations.len(), hours.len()),
                found,
            });
        }
        if !hours.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Format(
                "hour bins must be strictly increasing".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = locations.iter().find(|l| !seen.insert(l.id.as_str())) {
            return Err(Error::Format(format!("duplicate location id `{}`", dup.id)));
        }
        check_nonnegative(&values)?;
        Ok(Self {
            values,
            locations,
            hours,
            period,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn hours(&self) -> &[u32] {
        &self.hours
    }

    pub fn period(&self) -> &str {
        &self.period
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Grand total of all counts.
    pub fn total(&self) -> f64 {
        self.values.sum()
    }
}

pub(crate) fn check_nonnegative(values: &Array2<f64>) -> Result<()> {
    match values
        .indexed_iter()
        .find(|(_, v)| **v < 0.0 || !v.is_finite())
    {
        Some(((row, col), _)) => Err(Error::NonNegativityViolation { row, col }),
        None => Ok(()),
    }
}

/// Sums in-window counts per (location, hour).
///
/// A location's coordinates are taken from its smallest (latitude, longitude)
/// pair so the result does not depend on record order.
pub fn build_matrix(records: &[TrafficRecord], window: HourWindow) -> Result<CountMatrix> {
    let periods: BTreeSet<&str> = records.iter().map(|r| r.period.as_str()).collect();
    if periods.len() > 1 {
        return Err(Error::MixedPeriods(
            periods.into_iter().map(String::from).collect(),
        ));
    }

    let width = window.len();
    let mut cells: BTreeMap<&str, ((f64, f64), Vec<u64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| window.contains(r.hour)) {
        let entry = cells
            .entry(r.location_id.as_str())
            .or_insert_with(|| ((r.latitude, r.longitude), vec![0; width]));
        let coord = (r.latitude, r.longitude);
        if coord
            .0
            .total_cmp(&entry.0 .0)
            .then(coord.1.total_cmp(&entry.0 .1))
            .is_lt()
        {
            entry.0 = coord;
        }
        let slot = &mut entry.1[(r.hour - window.first) as usize];
        *slot = slot.saturating_add(r.count);
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no records inside hour window {window}"
        )));
    }

    let mut values = Array2::zeros((cells.len(), width));
    let mut locations = Vec::with_capacity(cells.len());
    for (i, (id, ((latitude, longitude), sums))) in cells.into_iter().enumerate() {
        for (j, s) in sums.into_iter().enumerate() {
            values[[i, j]] = s as f64;
        }
        locations.push(Location {
            id: id.to_string(),
            latitude,
            longitude,
        });
    }
    let period = periods.into_iter().next().unwrap_or_default().to_string();
    CountMatrix::new(values, locations, window.hours(), period)
}

/// Per-column affine scaling recorded by [`minmax_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }
}

/// Count matrix rescaled column-wise into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    values: Array2<f64>,
    scaling: Vec<ColumnScale>,
    locations: Vec<Location>,
    hours: Vec<u32>,
    period: String,
}

impl NormalizedMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn scaling(&self) -> &[ColumnScale] {
        &self.scaling
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn hours(&self) -> &[u32] {
        &self.hours
    }

    pub fn period(&self) -> &str {
        &self.period
    }

    /// Maps values back through the stored (min, max) pairs. Constant
    /// columns come back as their constant.
    pub fn denormalize(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        for (mut col, s) in out.columns_mut().into_iter().zip(&self.scaling) {
            col.mapv_inplace(|v| v * s.range() + s.min);
        }
        out
    }
}

/// Column-wise `(x - min) / (max - min)`; constant columns become zero.
pub fn minmax_normalize(m: &CountMatrix) -> NormalizedMatrix {
    let mut values = m.values.clone();
    let mut scaling = Vec::with_capacity(values.ncols());
    for mut col in values.columns_mut() {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = ColumnScale { min, max };
        if scale.is_constant() {
            col.fill(0.0);
        } else {
            let range = scale.range();
            col.mapv_inplace(|v| (v - min) / range);
        }
        scaling.push(scale);
    }
    NormalizedMatrix {
        values,
        scaling,
        locations: m.locations.clone(),
        hours: m.hours.clone(),
        period: m.period.clone(),
    }
}
