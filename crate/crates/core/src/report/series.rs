use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ReportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Cdf,
    Pdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XScale {
    #[default]
    Linear,
    Log,
}

impl XScale {
    pub fn parse(s: &str) -> Option<XScale> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Some(XScale::Linear),
            "log" | "logarithmic" => Some(XScale::Log),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            XScale::Linear => "linear",
            XScale::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSeries {
    pub kind: SeriesKind,
    pub variable: String,
    pub points: Vec<(f64, f64)>,
    pub bin_width: Option<f64>,
    pub x_scale: XScale,
}

fn check_values(values: &[f64]) -> Result<(), ReportError> {
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(ReportError::InvalidValue(*v));
    }
    Ok(())
}

/// Empirical CDF with one point per distinct value.
pub fn build_cdf(variable: &str, values: &[f64], x_scale: XScale) -> Result<DistributionSeries, ReportError> {
    check_values(values)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let y = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = y,
            _ => points.push((x, y)),
        }
    }
    Ok(DistributionSeries { kind: SeriesKind::Cdf, variable: variable.into(), points, bin_width: None, x_scale })
}

/// Histogram over `[0, max]` with bins `[k*w, (k+1)*w)`; every bin up to the
/// last occupied one is present, each point is (left edge, mass).
pub fn build_pdf(variable: &str, values: &[f64], bin_width: f64) -> Result<DistributionSeries, ReportError> {
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(ReportError::NonPositiveBin(bin_width));
    }
    check_values(values)?;
    if let Some(v) = values.iter().find(|v| **v < 0.0) {
        return Err(ReportError::InvalidValue(*v));
    }
    let bins: Vec<usize> = values.iter().map(|v| (v / bin_width).floor() as usize).collect();
    let mut counts = vec![0u64; bins.iter().max().copied().unwrap_or(0) + 1];
    for b in bins {
        counts[b] += 1;
    }
    let n = values.len() as f64;
    let points = counts.iter().enumerate().map(|(k, &c)| (k as f64 * bin_width, c as f64 / n)).collect();
    Ok(DistributionSeries {
        kind: SeriesKind::Pdf,
        variable: variable.into(),
        points,
        bin_width: Some(bin_width),
        x_scale: XScale::Linear,
    })
}

impl DistributionSeries {
    /// CDF value at `x` (fraction of values <= x).
    pub fn cdf_at(&self, x: f64) -> f64 {
        debug_assert_eq!(self.kind, SeriesKind::Cdf);
        self.points.iter().take_while(|p| p.0 <= x).last().map_or(0.0, |p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in &self.points {
            writeln!(s, "{x},{y}").unwrap();
        }
        s
    }

    /// Header-only series file for an empty population.
    pub fn empty_csv() -> &'static str {
        "x,y\n"
    }
}
