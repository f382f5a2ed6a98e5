use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ExperimentResult;
use crate::error::{Error, Result};

/// A numeric table. Non-finite cells are stored as `null` in JSON and as
/// `NaN` in CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    /// Optional text label per row, written as a leading `label` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(serialize_with = "rows_out", deserialize_with = "rows_in")]
    pub rows: Vec<Vec<f64>>,
}

fn rows_out<S: Serializer>(rows: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let v: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| r.iter().map(|x| x.is_finite().then_some(*x)).collect())
        .collect();
    v.serialize(s)
}

fn rows_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    let v: Vec<Vec<Option<f64>>> = Deserialize::deserialize(d)?;
    Ok(v.into_iter()
        .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
        .collect())
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            labels: None,
            rows: Vec::new(),
        }
    }

    pub fn labelled(columns: &[&str]) -> Self {
        Table {
            labels: Some(Vec::new()),
            ..Table::new(columns)
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_labelled(&mut self, label: &str, row: Vec<f64>) {
        self.labels.get_or_insert_with(Vec::new).push(label.to_string());
        self.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingDependency(format!("table has no column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Rows whose `key` column equals `value`.
    pub fn filter(&self, key: &str, value: f64) -> Result<Table> {
        let k = self.column_index(key)?;
        let keep: Vec<usize> = (0..self.rows.len()).filter(|&i| self.rows[i][k] == value).collect();
        Ok(Table {
            columns: self.columns.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&i| l[i].clone()).collect()),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
        })
    }

    /// Distinct values of a column in first-seen order.
    pub fn distinct(&self, name: &str) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = Vec::new();
        for v in self.column(name)? {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = Vec::new();
        if self.labels.is_some() {
            header.push("label");
        }
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(l) = &self.labels {
                rec.push(l[i].clone());
            }
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let labelled = header.first().map(|h| h == "label").unwrap_or(false);
        let columns = header[usize::from(labelled)..].to_vec();
        let mut labels = labelled.then(Vec::new);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut it = rec.iter();
            if let Some(l) = labels.as_mut() {
                l.push(it.next().unwrap_or_default().to_string());
            }
            let row = it
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Io(format!("{}: cell `{s}`: {e}", path.display())))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table { columns, labels, rows })
    }
}

/// One line of a plot: `y` against `x` from a table, optionally restricted
/// to rows where `filter.0 == filter.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub table: String,
    pub x: String,
    pub y: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    /// File stem of the SVG.
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl PlotSpec {
    pub fn new(name: &str, title: &str, x: (&str, bool), y: (&str, bool)) -> Self {
        PlotSpec {
            name: name.into(),
            title: title.into(),
            x_label: x.0.into(),
            y_label: y.0.into(),
            log_x: x.1,
            log_y: y.1,
            series: Vec::new(),
        }
    }

    pub fn line(mut self, label: &str, table: &str, x: &str, y: &str, filter: Option<(&str, f64)>) -> Self {
        self.series.push(Series {
            label: label.into(),
            table: table.into(),
            x: x.into(),
            y: y.into(),
            filter: filter.map(|(k, v)| (k.to_string(), v)),
        });
        self
    }
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Io(format!("plot: {e}"))
}

/// Points of every series, on log10 scales where requested. Points that
/// cannot be shown (non-finite, or non-positive on a log axis) are dropped.
fn series_points(spec: &PlotSpec, tables: &BTreeMap<String, Table>) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let tr = |v: f64, log: bool| if log { (v > 0.0).then(|| v.log10()) } else { Some(v) };
    spec.series
        .iter()
        .map(|s| {
            let t = tables
                .get(&s.table)
                .ok_or_else(|| Error::MissingDependency(format!("plot `{}`: no table `{}`", spec.name, s.table)))?;
            let t = match &s.filter {
                Some((k, v)) => t.filter(k, *v)?,
                None => t.clone(),
            };
            let pts = t
                .column(&s.x)?
                .into_iter()
                .zip(t.column(&s.y)?)
                .filter_map(|(x, y)| Some((tr(x, spec.log_x)?, tr(y, spec.log_y)?)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect();
            Ok((s.label.clone(), pts))
        })
        .collect()
}

pub fn render_plot(spec: &PlotSpec, tables: &BTreeMap<String, Table>, path: &Path) -> Result<()> {
    let series = series_points(spec, tables)?;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let range = |v: Vec<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = range(all.iter().map(|p| p.0).collect());
    let (y0, y1) = range(all.iter().map(|p| p.1).collect());
    let axis = |label: &str, log: bool| if log { format!("log10 {label}") } else { label.to_string() };

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&spec.title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc(axis(&spec.x_label, spec.log_x))
        .y_desc(axis(&spec.y_label, spec.log_y))
        .draw()
        .map_err(plot_error)?;
    for (k, (label, pts)) in series.into_iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_error)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_error)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

/// Renders every plot of a result into `dir`, returning the written paths.
pub fn render_plots(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    result
        .plots
        .iter()
        .map(|p| {
            let path = dir.join(format!("{}.svg", p.name));
            render_plot(p, &result.tables, &path)?;
            Ok(path)
        })
        .collect()
}

/// Reads `report.json` of a run directory.
pub fn load_result(dir: &Path) -> Result<ExperimentResult> {
    let text = fs::read_to_string(dir.join("report.json"))
        .map_err(|e| Error::Io(format!("{}: {e}", dir.join("report.json").display())))?;
    Ok(serde_json::from_str(&text)?)
}
