//! Training traces as CSV text, and line charts of them as PNG files.

use crate::error::{Error, Result};
use crate::imaging::{write_raw_png, PngDepth, RawPng};
use std::path::Path;

/// Columns of per-step records. Empty cells are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Trace {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parameter("trace has no header".into()))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (no, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() {
                return Err(Error::Parameter(format!(
                    "trace row {} has {} cells, header has {}",
                    no + 1,
                    cells.len(),
                    columns.len()
                )));
            }
            let row = cells
                .iter()
                .map(|c| {
                    let c = c.trim();
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Parameter(format!("trace row {}: bad number `{c}`", no + 1)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// One polyline: `(x, y)` points in data units.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

pub const SERIES_COLORS: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[u8; 3]>,
}

impl Canvas {
    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            self.set(x, y + 1, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Draws every series on shared axes with a light grid. Non-finite points
/// are skipped and break the line.
pub fn render_plot(series: &[Series], width: usize, height: usize) -> Result<RawPng> {
    if width < 16 || height < 16 {
        return Err(Error::Parameter(format!("plot {width}x{height} is too small")));
    }
    let finite = series.iter().flat_map(|s| &s.points).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let margin = 8usize;
    let (pw, ph) = ((width - 2 * margin) as f64, (height - 2 * margin) as f64);
    let mut cv = Canvas {
        w: width,
        h: height,
        px: vec![[255; 3]; width * height],
    };
    let grid = [225, 225, 225];
    for k in 0..=4 {
        let y = (margin as f64 + ph * k as f64 / 4.0).round() as i64;
        cv.line((margin as i64, y), ((width - margin) as i64, y), grid);
    }
    let axis = [90, 90, 90];
    let (l, r, t, b) = (margin as i64, (width - margin) as i64, margin as i64, (height - margin) as i64);
    cv.line((l, t), (l, b), axis);
    cv.line((l, b), (r, b), axis);
    let to_px = |(x, y): (f64, f64)| {
        (
            (margin as f64 + (x - x0) / (x1 - x0) * pw).round() as i64,
            (margin as f64 + (1.0 - (y - y0) / (y1 - y0)) * ph).round() as i64,
        )
    };
    for s in series {
        let mut prev = None;
        for &p in &s.points {
            if !(p.0.is_finite() && p.1.is_finite()) {
                prev = None;
                continue;
            }
            let q = to_px(p);
            cv.line(prev.unwrap_or(q), q, s.color);
            prev = Some(q);
        }
    }
    Ok(RawPng {
        width,
        height,
        channels: 3,
        depth: PngDepth::Eight,
        samples: cv.px.iter().flat_map(|c| c.iter().map(|&v| v as u16)).collect(),
    })
}

/// Plots `y_columns` of `trace` against its `x_column`.
pub fn plot_trace(trace: &Trace, x_column: &str, y_columns: &[&str], path: &Path) -> Result<()> {
    let xs = trace
        .column(x_column)
        .ok_or_else(|| Error::Parameter(format!("trace has no `{x_column}` column")))?;
    let mut series = Vec::new();
    for (i, name) in y_columns.iter().enumerate() {
        let ys = trace
            .column(name)
            .ok_or_else(|| Error::Parameter(format!("trace has no `{name}` column")))?;
        let points = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x.unwrap_or(f64::NAN), y.unwrap_or(f64::NAN)))
            .collect();
        series.push(Series {
            points,
            color: SERIES_COLORS[i % SERIES_COLORS.len()],
        });
    }
    write_raw_png(path, &render_plot(&series, 640, 360)?)
}
