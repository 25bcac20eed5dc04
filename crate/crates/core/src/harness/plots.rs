//! Long-format series files, their across-seed aggregation, and SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::metrics::{mean, std_dev, write_table};

pub const SERIES_HEADER: [&str; 5] = ["figure", "series", "seed", "x", "y"];

/// Figures that get an SVG chart in addition to the aggregate CSV.
pub const CHARTED: [&str; 4] = ["side_information", "lambda_tradeoff", "tier_transfer", "online_adaptation"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub figure: String,
    pub series: String,
    pub seed: u64,
    pub x: f64,
    pub y: f64,
}

impl SeriesPoint {
    pub fn new(figure: &str, series: &str, seed: u64, x: f64, y: f64) -> Self {
        Self {
            figure: figure.into(),
            series: series.into(),
            seed,
            x,
            y,
        }
    }
}

pub fn write_series(path: &Path, points: &[SeriesPoint]) -> Result<()> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.figure.clone(), p.series.clone(), p.seed.to_string(), p.x.to_string(), p.y.to_string()])
        .collect();
    write_table(path, &SERIES_HEADER, &rows)
}

/// Parses a series file; errors name the file and the offending line.
pub fn read_series(path: &Path) -> Result<Vec<SeriesPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, &path.display().to_string())
}

pub fn parse_series(text: &str, location: &str) -> Result<Vec<SeriesPoint>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (n, header) = lines.next().ok_or_else(|| Error::parse(location, 1, "empty series file"))?;
    if header.trim() != SERIES_HEADER.join(",") {
        return Err(Error::parse(location, n + 1, format!("expected header `{}`", SERIES_HEADER.join(","))));
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::parse(location, i + 1, format!("{what} in `{line}`"));
        if fields.len() != SERIES_HEADER.len() {
            return Err(bad("expected 5 fields"));
        }
        let seed = fields[2].parse().map_err(|_| bad("bad seed"))?;
        let x: f64 = fields[3].parse().map_err(|_| bad("bad x"))?;
        let y: f64 = fields[4].parse().map_err(|_| bad("bad y"))?;
        points.push(SeriesPoint::new(fields[0], fields[1], seed, x, y));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub series: String,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Mean and population std across seeds of each (series, x), per figure.
pub fn aggregate(points: &[SeriesPoint]) -> BTreeMap<String, Vec<Aggregate>> {
    let mut groups: BTreeMap<String, Vec<(String, f64, Vec<f64>)>> = BTreeMap::new();
    for p in points {
        let fig = groups.entry(p.figure.clone()).or_default();
        match fig.iter_mut().find(|(s, x, _)| *s == p.series && *x == p.x) {
            Some((_, _, ys)) => ys.push(p.y),
            None => fig.push((p.series.clone(), p.x, vec![p.y])),
        }
    }
    groups
        .into_iter()
        .map(|(fig, entries)| {
            let aggs = entries
                .into_iter()
                .map(|(series, x, ys)| Aggregate {
                    series,
                    x,
                    mean: mean(&ys),
                    std: std_dev(&ys),
                    seeds: ys.len(),
                })
                .collect();
            (fig, aggs)
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart of each series with one-std error bars.
pub fn render_svg(title: &str, aggs: &[Aggregate]) -> String {
    let (x0, x1) = span(aggs.iter().map(|a| a.x));
    let (y0, y1) = span(aggs.iter().flat_map(|a| [a.mean - a.std, a.mean + a.std]));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {b} L{r} {b} M{m} {b} L{m} {m}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#, px(v), HEIGHT - MARGIN + 16.0);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, MARGIN - 4.0, py(v) + 4.0);
    }
    let mut names: Vec<&str> = Vec::new();
    for a in aggs {
        if !names.contains(&a.series.as_str()) {
            names.push(&a.series);
        }
    }
    for (i, name) in names.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<&Aggregate> = aggs.iter().filter(|a| a.series == *name).collect();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        let path: Vec<String> = pts.iter().map(|a| format!("{:.2},{:.2}", px(a.x), py(a.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, path.join(" "));
        for a in &pts {
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/><circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                py(a.mean - a.std),
                py(a.mean + a.std),
                py(a.mean),
                x = px(a.x)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN - 120.0,
            MARGIN + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Aggregates every input series file into `<out>/<figure>.csv`, plus an
/// SVG for charted figures. Returns the written paths.
pub fn emit_plots(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut points = Vec::new();
    for p in inputs {
        points.extend(read_series(p)?);
    }
    if points.is_empty() {
        return Err(Error::Precondition("no series points across the given inputs; nothing to plot".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (figure, aggs) in aggregate(&points) {
        let csv = out.join(format!("{figure}.csv"));
        let rows: Vec<Vec<String>> = aggs
            .iter()
            .map(|a| vec![a.series.clone(), a.x.to_string(), a.mean.to_string(), a.std.to_string(), a.seeds.to_string()])
            .collect();
        write_table(&csv, &["series", "x", "mean", "std", "seeds"], &rows)?;
        written.push(csv);
        if CHARTED.contains(&figure.as_str()) {
            let svg = out.join(format!("{figure}.svg"));
            std::fs::write(&svg, render_svg(&figure, &aggs)).map_err(|e| Error::io(&svg, e))?;
            written.push(svg);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_across_seeds() {
        let pts = vec![
            SeriesPoint::new("side_information", "a", 1, 0.5, 2.0),
            SeriesPoint::new("side_information", "a", 2, 0.5, 4.0),
            SeriesPoint::new("side_information", "b", 1, 0.5, 1.0),
            SeriesPoint::new("other", "a", 1, 0.0, 7.0),
        ];
        let agg = aggregate(&pts);
        let c = &agg["side_information"];
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].mean, c[0].std, c[0].seeds), (3.0, 1.0, 2));
        assert_eq!(agg["other"][0].mean, 7.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "figure,series,seed,x,y\nside_information,a,1,0.5,2\nside_information,a,x,0.5,2\n";
        match parse_series(text, "s.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_series("bad,header\n", "s.csv"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("s.csv");
        write_series(&f, &[]).unwrap();
        assert!(matches!(emit_plots(&[f], dir.path()), Err(Error::Precondition(_))));
    }

    #[test]
    fn writes_csv_and_svg() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("s.csv");
        write_series(&f, &[SeriesPoint::new("lambda_tradeoff", "t", 1, 0.0, 1.0), SeriesPoint::new("lambda_tradeoff", "t", 1, 1.0, 2.0)]).unwrap();
        let out = emit_plots(&[f], &dir.path().join("plots")).unwrap();
        assert_eq!(out.len(), 2);
        let svg = std::fs::read_to_string(&out[1]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
