//! Weather and price inputs on the 5-minute simulation grid.

use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};

/// Simulation sampling period, s.
pub const SAMPLE_PERIOD_S: i64 = 300;

const WEATHER_HEADER: [&str; 3] = ["timestamp_iso", "ambient_c", "ghi_wm2"];
const PRICE_HEADER: [&str; 2] = ["timestamp_iso", "price_per_kwh"];
const BUNDLED_WEATHER: &str = include_str!("../../data/weather_synthetic.csv");
const BUNDLED_PRICE: &str = include_str!("../../data/price_synthetic.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub ambient_c: Vec<f64>,
    pub irradiance_wm2: Vec<f64>,
    pub price_per_kwh: Vec<f64>,
}

impl ExogenousSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// `(ambient, irradiance)` at step `t`.
    pub fn disturbance(&self, t: usize) -> [f64; 2] {
        [self.ambient_c[t], self.irradiance_wm2[t]]
    }

    /// Stacked disturbances of steps `from..to`.
    pub fn disturbances(&self, from: usize, to: usize) -> Vec<f64> {
        (from..to).flat_map(|t| self.disturbance(t)).collect()
    }

    pub fn iso(&self, t: usize) -> String {
        format_iso(&self.timestamps[t])
    }

    /// The 72 h synthetic dataset shipped with the crate.
    pub fn bundled() -> Self {
        parse_series(BUNDLED_WEATHER.as_bytes(), Path::new("weather_synthetic.csv"), BUNDLED_PRICE.as_bytes(), Path::new("price_synthetic.csv"))
            .expect("bundled dataset is valid")
    }

    pub fn weather_csv(&self) -> String {
        let mut out = WEATHER_HEADER.join(",") + "\n";
        for t in 0..self.len() {
            writeln!(out, "{},{},{}", self.iso(t), self.ambient_c[t], self.irradiance_wm2[t]).unwrap();
        }
        out
    }

    pub fn price_csv(&self) -> String {
        let mut out = PRICE_HEADER.join(",") + "\n";
        for t in 0..self.len() {
            writeln!(out, "{},{}", self.iso(t), self.price_per_kwh[t]).unwrap();
        }
        out
    }
}

pub fn format_iso(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

/// Reads both CSV files and puts them on a common 5-minute grid.
///
/// Inputs sampled at a coarser uniform period (a multiple of 5 min) are linearly
/// interpolated; the original samples are kept exactly. The result spans the overlap
/// of the two files.
pub fn load_series(weather_csv: &Path, price_csv: &Path) -> Result<ExogenousSeries> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| Error::Parse { path: p.to_path_buf(), line: 0, msg: e.to_string() });
    parse_series(open(weather_csv)?, weather_csv, open(price_csv)?, price_csv)
}

pub fn parse_series<R1: Read, R2: Read>(weather: R1, weather_path: &Path, price: R2, price_path: &Path) -> Result<ExogenousSeries> {
    let w = read_table(weather, weather_path, &WEATHER_HEADER)?;
    let p = read_table(price, price_path, &PRICE_HEADER)?;
    for (row, line) in w.values.iter().zip(&w.lines) {
        if row[1] < 0.0 {
            return Err(parse_error(weather_path, *line, format!("negative irradiance {}", row[1])));
        }
    }
    for (row, line) in p.values.iter().zip(&p.lines) {
        if row[0] < 0.0 {
            return Err(parse_error(price_path, *line, format!("negative price {}", row[0])));
        }
    }
    let start = w.times[0].max(p.times[0]);
    let end = (*w.times.last().unwrap()).min(*p.times.last().unwrap());
    if end <= start {
        return Err(Error::Coverage(format!("weather and price files do not overlap ({start} .. {end})")));
    }
    let step = Duration::seconds(SAMPLE_PERIOD_S);
    let mut timestamps = Vec::new();
    let mut t = start;
    while t <= end {
        timestamps.push(t);
        t += step;
    }
    let weather_cols = w.resample(&timestamps);
    let price_cols = p.resample(&timestamps);
    Ok(ExogenousSeries {
        timestamps,
        ambient_c: weather_cols[0].clone(),
        irradiance_wm2: weather_cols[1].clone(),
        price_per_kwh: price_cols[0].clone(),
    })
}

fn parse_error(path: &Path, line: usize, msg: String) -> Error {
    Error::Parse { path: PathBuf::from(path), line, msg }
}

struct Table {
    times: Vec<NaiveDateTime>,
    values: Vec<Vec<f64>>,
    lines: Vec<usize>,
}

fn read_table<R: Read>(reader: R, path: &Path, header: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found = rdr.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(parse_error(path, 1, format!("expected header `{}`", header.join(","))));
    }
    let mut table = Table { times: Vec::new(), values: Vec::new(), lines: Vec::new() };
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_error(path, line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let time = parse_timestamp(&record[0]).ok_or_else(|| parse_error(path, line, format!("bad timestamp `{}`", &record[0])))?;
        let values = (1..header.len())
            .map(|i| {
                record[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, line, format!("bad number `{}` in column {}", &record[i], header[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(prev) = table.times.last() {
            if time <= *prev {
                return Err(parse_error(path, line, "timestamps must be strictly increasing".into()));
            }
        }
        table.times.push(time);
        table.values.push(values);
        table.lines.push(line);
    }
    if table.times.len() < 2 {
        return Err(Error::Coverage(format!("{}: need at least two samples", path.display())));
    }
    let period = table.times[1] - table.times[0];
    if period.num_seconds() <= 0 || period.num_seconds() % SAMPLE_PERIOD_S != 0 {
        return Err(parse_error(path, table.lines[1], format!("sampling period {}s is not a multiple of 5 min", period.num_seconds())));
    }
    for k in 1..table.times.len() {
        if table.times[k] - table.times[k - 1] != period {
            return Err(Error::Coverage(format!(
                "{}:{}: gap before this sample (expected a uniform {} s period)",
                path.display(),
                table.lines[k],
                period.num_seconds()
            )));
        }
    }
    Ok(table)
}

impl Table {
    /// Column-wise linear interpolation onto `grid`, which lies inside the table's span.
    fn resample(&self, grid: &[NaiveDateTime]) -> Vec<Vec<f64>> {
        let cols = self.values[0].len();
        let period = (self.times[1] - self.times[0]).num_seconds();
        let mut out = vec![Vec::with_capacity(grid.len()); cols];
        for t in grid {
            let offset = (*t - self.times[0]).num_seconds();
            let k = ((offset / period) as usize).min(self.times.len() - 1);
            let rem = offset - k as i64 * period;
            for (c, col) in out.iter_mut().enumerate() {
                let v = if rem == 0 {
                    self.values[k][c]
                } else {
                    let f = rem as f64 / period as f64;
                    (1.0 - f) * self.values[k][c] + f * self.values[k + 1][c]
                };
                col.push(v);
            }
        }
        out
    }
}

/// Deterministic synthetic profiles: sinusoidal ambient between 2 and 12 °C, a
/// clear-sky irradiance bell and a two-peak price.
pub fn synthetic_series(days: usize) -> ExogenousSeries {
    let start = NaiveDate::from_ymd_opt(2024, 1, 15).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let steps = days * 24 * 3600 / SAMPLE_PERIOD_S as usize;
    let day_sun = [1.0, 0.8, 0.95, 0.9];
    let round = |v: f64, digits: i32| (v * 10f64.powi(digits)).round() / 10f64.powi(digits);
    let mut s = ExogenousSeries { timestamps: Vec::new(), ambient_c: Vec::new(), irradiance_wm2: Vec::new(), price_per_kwh: Vec::new() };
    for k in 0..steps {
        let hours = k as f64 * SAMPLE_PERIOD_S as f64 / 3600.0;
        let day = (hours / 24.0) as usize;
        let hod = hours - 24.0 * day as f64;
        let ambient = 7.0 + 5.0 * (2.0 * std::f64::consts::PI * (hod - 9.0) / 24.0).sin();
        let sun = if (7.5..17.5).contains(&hod) { (std::f64::consts::PI * (hod - 7.5) / 10.0).sin().powf(1.5) } else { 0.0 };
        let irradiance = 650.0 * day_sun[day % day_sun.len()] * sun;
        let bump = |center: f64, width: f64| (-((hod - center) / width).powi(2)).exp();
        let price = 0.09 + 0.10 * bump(7.0, 1.0) + 0.13 * bump(19.0, 1.0) + 0.005 * day as f64;
        s.timestamps.push(start + Duration::seconds(k as i64 * SAMPLE_PERIOD_S));
        s.ambient_c.push(round(ambient, 4));
        s.irradiance_wm2.push(round(irradiance, 3));
        s.price_per_kwh.push(round(price, 5));
    }
    s
}
