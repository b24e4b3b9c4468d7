//! Uniformly sampled multi-channel records and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Uniformly sampled named channels sharing one time base.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub fs: f64,
    pub t0: f64,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(fs: f64, t0: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::param("fs", "must be > 0"));
        }
        Ok(TimeSeries {
            fs,
            t0,
            names: Vec::new(),
            data: Vec::new(),
        })
    }

    /// Single-channel series, convenient for analysis of synthetic data.
    pub fn from_samples(fs: f64, name: &str, samples: Vec<f64>) -> Result<Self> {
        let mut ts = TimeSeries::new(fs, 0.0)?;
        ts.add_channel(name, samples)?;
        Ok(ts)
    }

    pub fn add_channel(&mut self, name: &str, samples: Vec<f64>) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::param(name, "duplicate channel"));
        }
        if let Some(first) = self.data.first() {
            if first.len() != samples.len() {
                return Err(Error::param(
                    name,
                    format!("length {} differs from {}", samples.len(), first.len()),
                ));
            }
        }
        self.names.push(name.to_string());
        self.data.push(samples);
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }

    pub(crate) fn require(&self, name: &str) -> Result<&[f64]> {
        self.channel(name)
            .ok_or_else(|| Error::param("channel", format!("no channel named `{name}`")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record length `N / fs`.
    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    /// Samples `[start, end)` of every channel as a new series.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        let end = end.min(self.len());
        let start = start.min(end);
        TimeSeries {
            fs: self.fs,
            t0: self.time(start),
            names: self.names.clone(),
            data: self.data.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    /// CSV text: header `t,<channel>,...`, every value with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 16 * (self.names.len() + 1));
        out.push('t');
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{}", fmt9(self.time(i)));
            for c in &self.data {
                let _ = write!(out, ",{}", fmt9(c[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Parses CSV produced by [`TimeSeries::to_csv`] (or any file with a `t`
    /// first column on a uniform grid). `origin` names the source in errors.
    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "t" {
            return Err(err(
                hline + 1,
                "header must start with `t` and name at least one channel".into(),
            ));
        }
        let mut t = Vec::new();
        let mut data: Vec<Vec<f64>> = vec![Vec::new(); cols.len() - 1];
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(err(
                    ln + 1,
                    format!("expected {} columns, found {}", cols.len(), fields.len()),
                ));
            }
            for (j, f) in fields.iter().enumerate() {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| err(ln + 1, format!("invalid number `{}`", f.trim())))?;
                if j == 0 {
                    t.push(v);
                } else {
                    data[j - 1].push(v);
                }
            }
        }
        if t.len() < 2 {
            return Err(err(hline + 1, "need at least two samples".into()));
        }
        let span = t[t.len() - 1] - t[0];
        let dt = span / (t.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(err(hline + 2, "time column must increase".into()));
        }
        for (i, w) in t.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt + 1e-8 * w[1].abs() {
                return Err(err(
                    hline + 3 + i,
                    "time column is not uniformly sampled".into(),
                ));
            }
        }
        let mut ts = TimeSeries::new(1.0 / dt, t[0])?;
        for (name, col) in cols[1..].iter().zip(data) {
            ts.add_channel(name, col)?;
        }
        Ok(ts)
    }
}

/// Formats with 9 significant digits in scientific notation.
pub fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}
