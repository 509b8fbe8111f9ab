//! Station ingestion: CSV parsing, trailing moving average, global
//! standardization, raster grids and spatial train/test splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default smoothing window in days.
pub const DEFAULT_WINDOW: usize = 10;

pub const STATION_CSV_HEADER: [&str; 5] = ["station_id", "lon", "lat", "date", "precip_mm"];

/// One station's location and its daily record. `values[k]` belongs to
/// `start_date + k days`; gaps are stored as `None`, never skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    pub start_date: NaiveDate,
    pub values: Vec<Option<f64>>,
}

impl StationSeries {
    pub fn date_at(&self, k: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(k as u64)
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date_at(self.values.len().saturating_sub(1))
    }
}

pub fn parse_station_csv(path: impl AsRef<Path>) -> Result<Vec<StationSeries>> {
    let file = File::open(path.as_ref())?;
    parse_station_csv_reader(file)
}

struct RawRow {
    lon: f64,
    lat: f64,
    date: NaiveDate,
    value: Option<f64>,
    line: u64,
}

pub fn parse_station_csv_reader<R: Read>(reader: R) -> Result<Vec<StationSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput);
    }
    if headers.iter().ne(STATION_CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                STATION_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut by_station: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty station_id"));
        }
        let lon: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, &format!("bad lon `{}`", &record[1])))?;
        let lat: f64 = record[2]
            .parse()
            .map_err(|_| parse_err(line, &format!("bad lat `{}`", &record[2])))?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(parse_err(line, &format!("coordinates out of range ({lon}, {lat})")));
        }
        let date = NaiveDate::parse_from_str(&record[3], "%Y-%m-%d")
            .map_err(|_| parse_err(line, &format!("bad date `{}`", &record[3])))?;
        let value = if record[4].is_empty() {
            None
        } else {
            let v: f64 = record[4]
                .parse()
                .map_err(|_| parse_err(line, &format!("bad precip_mm `{}`", &record[4])))?;
            if !v.is_finite() {
                return Err(parse_err(line, "non-finite precip_mm"));
            }
            Some(v)
        };
        by_station.entry(id).or_default().push(RawRow {
            lon,
            lat,
            date,
            value,
            line,
        });
    }

    if by_station.is_empty() {
        return Err(Error::EmptyInput);
    }

    by_station
        .into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|r| (r.date, r.line));
            for pair in rows.windows(2) {
                if pair[0].date == pair[1].date {
                    return Err(Error::Conflict {
                        station: id.clone(),
                        date: pair[0].date.to_string(),
                        first_line: pair[0].line.min(pair[1].line),
                        second_line: pair[0].line.max(pair[1].line),
                    });
                }
            }
            let first = &rows[0];
            if let Some(r) = rows.iter().find(|r| r.lon != first.lon || r.lat != first.lat) {
                return Err(parse_err(
                    r.line,
                    &format!("station {id} changes location from ({}, {})", first.lon, first.lat),
                ));
            }
            let start = first.date;
            let span = (rows[rows.len() - 1].date - start).num_days() as usize + 1;
            let mut values = vec![None; span];
            for r in &rows {
                values[(r.date - start).num_days() as usize] = r.value;
            }
            Ok(StationSeries {
                station_id: id,
                lon: first.lon,
                lat: first.lat,
                start_date: start,
                values,
            })
        })
        .collect()
}

fn parse_err(line: u64, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Trailing moving average ending at each index.
///
/// The average runs over the non-missing entries of `[t - window + 1, t]`
/// clipped at the series start. An output is missing when fewer than
/// `ceil(len / 2)` entries of the (possibly clipped) window of length `len`
/// are observed.
pub fn moving_average(series: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window == 0 {
        return Err(Error::InvalidArgument("moving-average window must be >= 1".into()));
    }
    let out = (0..series.len())
        .map(|t| {
            let len = window.min(t + 1);
            let observed = series[t + 1 - len..=t].iter().flatten();
            let (sum, count) = observed.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            (count > 0 && count >= len.div_ceil(2)).then(|| sum / count as f64)
        })
        .collect();
    Ok(out)
}

/// Mean and sample standard deviation used to map values to and from
/// the standardized scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizationParams {
    pub mean: f64,
    pub std: f64,
}

impl StandardizationParams {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "standardization needs finite mean and std > 0, got ({mean}, {std})"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn to_text(&self) -> String {
        format!("mean={:e}\nstd={:e}\n", self.mean, self.std)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("missing key `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for `{k}`")))
        };
        Self::new(get("mean")?, get("std")?)
    }
}

/// Fits mean and sample (n - 1) std over the non-missing entries and returns
/// the standardized values.
pub fn standardize(values: &[Option<f64>]) -> Result<(Vec<Option<f64>>, StandardizationParams)> {
    let params = fit_standardization(values.iter().flatten().copied())?;
    let out = values
        .iter()
        .map(|v| v.map(|x| params.standardize(x)))
        .collect();
    Ok((out, params))
}

pub fn fit_standardization(values: impl Iterator<Item = f64>) -> Result<StandardizationParams> {
    let observed: Vec<f64> = values.collect();
    let n = observed.len();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "standardization needs at least 2 observed values, got {n}"
        )));
    }
    let mean = observed.iter().sum::<f64>() / n as f64;
    let ss: f64 = observed.iter().map(|x| (x - mean) * (x - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    if !(std > 0.0) {
        return Err(Error::DegenerateData("zero variance".into()));
    }
    StandardizationParams::new(mean, std)
}

/// Smooths every station, then standardizes with one global transform
/// shared by all stations and days.
pub fn preprocess_stations(
    stations: &[StationSeries],
    window: usize,
) -> Result<(Vec<StationSeries>, StandardizationParams)> {
    let smoothed = stations
        .iter()
        .map(|s| {
            Ok(StationSeries {
                values: moving_average(&s.values, window)?,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = fit_standardization(smoothed.iter().flat_map(|s| s.values.iter().flatten().copied()))?;
    let out = smoothed
        .into_iter()
        .map(|s| StationSeries {
            values: s.values.iter().map(|v| v.map(|x| params.standardize(x))).collect(),
            ..s
        })
        .collect();
    Ok((out, params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BBox {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        let b = Self {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        };
        if !(lon_min < lon_max) || !(lat_min < lat_max) {
            return Err(Error::InvalidArgument(format!("inverted or empty bbox {b:?}")));
        }
        Ok(b)
    }

    pub const UNIT: BBox = BBox {
        lon_min: 0.0,
        lon_max: 1.0,
        lat_min: 0.0,
        lat_max: 1.0,
    };

    /// Rescales (lon, lat) into the unit square spanned by the box.
    pub fn to_unit(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (lon - self.lon_min) / (self.lon_max - self.lon_min),
            (lat - self.lat_min) / (self.lat_max - self.lat_min),
        )
    }

    pub fn from_unit(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.lon_min + u * (self.lon_max - self.lon_min),
            self.lat_min + v * (self.lat_max - self.lat_min),
        )
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lon_min..=self.lon_max).contains(&lon) && (self.lat_min..=self.lat_max).contains(&lat)
    }

    pub fn approx_eq(&self, other: &BBox, tol: f64) -> bool {
        (self.lon_min - other.lon_min).abs() <= tol
            && (self.lon_max - other.lon_max).abs() <= tol
            && (self.lat_min - other.lat_min).abs() <= tol
            && (self.lat_max - other.lat_max).abs() <= tol
    }
}

/// Raster of `nx` by `ny` cells over a bbox, plus the time steps at which
/// fields are produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub bbox: BBox,
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<i64>,
}

pub fn make_grid(bbox: BBox, nx: usize, ny: usize, times: Vec<i64>) -> Result<SpaceTimeGrid> {
    let bbox = BBox::new(bbox.lon_min, bbox.lon_max, bbox.lat_min, bbox.lat_max)?;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!("grid needs nx, ny >= 1, got {nx}x{ny}")));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("grid times must be strictly increasing".into()));
    }
    Ok(SpaceTimeGrid { bbox, nx, ny, times })
}

impl SpaceTimeGrid {
    /// Unit-square center of cell (i, j); i runs along lon, j along lat.
    pub fn unit_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) / self.nx as f64, (j as f64 + 0.5) / self.ny as f64)
    }

    /// Cell centers in (lon, lat), row-major with j (lat) as the outer index.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (u, v) = self.unit_center(i, j);
                out.push(self.bbox.from_unit(u, v));
            }
        }
        out
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }
}

/// Contents of a grid spec file: `key=value` lines, `#` comments.
///
/// Keys: `lon_min`, `lon_max`, `lat_min`, `lat_max`, `nx`, `ny`,
/// `t_start`, `t_step`, `t_count`. Times are day offsets from the start of
/// the ingested record.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bbox: BBox,
    pub nx: usize,
    pub ny: usize,
    pub t_start: i64,
    pub t_step: i64,
    pub t_count: usize,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("grid spec: missing key `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("grid spec: bad value for `{k}`")))
        }
        let bbox = BBox::new(
            get(&kv, "lon_min")?,
            get(&kv, "lon_max")?,
            get(&kv, "lat_min")?,
            get(&kv, "lat_max")?,
        )?;
        let spec = GridSpec {
            bbox,
            nx: get(&kv, "nx")?,
            ny: get(&kv, "ny")?,
            t_start: get(&kv, "t_start")?,
            t_step: get(&kv, "t_step")?,
            t_count: get(&kv, "t_count")?,
        };
        if spec.t_step <= 0 {
            return Err(Error::InvalidArgument("grid spec: t_step must be > 0".into()));
        }
        Ok(spec)
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        let times = (0..self.t_count as i64).map(|k| self.t_start + k * self.t_step).collect();
        make_grid(self.bbox, self.nx, self.ny, times)
    }
}

pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n as u64 + 1,
            message: format!("expected key=value, found `{line}`"),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

/// Spatial holdout: whole stations go to the test set.
///
/// The test set has `floor(n * fraction)` stations, at least one, and at most
/// `n - 1` so the training set is never empty. Both halves keep input order.
pub fn split_train_test(
    stations: &[StationSeries],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<StationSeries>, Vec<StationSeries>)> {
    let (train_idx, test_idx) = split_indices(stations.len(), holdout_fraction, seed)?;
    Ok((
        train_idx.iter().map(|&i| stations[i].clone()).collect(),
        test_idx.iter().map(|&i| stations[i].clone()).collect(),
    ))
}

pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let n_test = ((n as f64 * holdout_fraction).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((train, test))
}
