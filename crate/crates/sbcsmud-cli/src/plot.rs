//! Static SVG rendering of sweep CSVs: one line per block size, log-scale
//! rates vs the swept axis, Wilson-interval whiskers, and a declared floor
//! for zero rates (log scale cannot show zero).
//!
//! The renderer is a pure function of the CSV bytes, so plots are as
//! reproducible as the sweeps themselves.

use std::fmt::Write as _;
use std::path::Path;

use crate::run::CliError;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

const PLOT_LEFT: f64 = 70.0;
const PLOT_RIGHT: f64 = 660.0;
const PLOT_TOP: f64 = 46.0;
const PLOT_BOTTOM: f64 = 500.0;
const CANVAS_W: f64 = 880.0;
const CANVAS_H: f64 = 552.0;

#[derive(Debug, Clone, Copy)]
struct Rate {
    value: f64,
    ci_lo: f64,
    ci_hi: f64,
}

#[derive(Debug, Clone)]
struct Row {
    block_size: Option<u64>,
    x: f64,
    der: Rate,
    ber: Option<Rate>,
    trials: u64,
}

#[derive(Debug, Default)]
struct SweepCsv {
    rows: Vec<Row>,
    axis: String,
    title: String,
    n_users: Option<u64>,
}

fn parse_field(field: &str, line_no: usize) -> Result<f64, CliError> {
    field.trim().parse().map_err(|_| {
        CliError::Config(format!("CSV line {line_no}: '{field}' is not a number"))
    })
}

fn parse_rate(fields: &[&str], start: usize, line_no: usize) -> Result<Option<Rate>, CliError> {
    if fields[start].trim() == "NA" {
        return Ok(None);
    }
    Ok(Some(Rate {
        value: parse_field(fields[start], line_no)?,
        ci_lo: parse_field(fields[start + 1], line_no)?,
        ci_hi: parse_field(fields[start + 2], line_no)?,
    }))
}

fn parse_sweep_csv(text: &str) -> Result<SweepCsv, CliError> {
    let mut out = SweepCsv::default();
    let mut has_block_column = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(axis) = comment.strip_prefix("axis=") {
                out.axis = axis.to_string();
            }
            if let Some(rest) = comment.strip_prefix("preset=") {
                out.title = rest.split_whitespace().next().unwrap_or("").to_string();
            }
            // The config echo carries the user count in either the flat or
            // the JSON form; the floor for zero rates needs it.
            for token in ["n_users=", "\"n_users\":"] {
                if let Some(pos) = comment.find(token) {
                    let tail = &comment[pos + token.len()..];
                    let digits: String =
                        tail.chars().take_while(|c| c.is_ascii_digit()).collect();
                    if let Ok(v) = digits.parse() {
                        out.n_users = Some(v);
                    }
                }
            }
            continue;
        }
        if has_block_column.is_none() {
            // Header row decides the schema.
            has_block_column = Some(match line.split(',').next() {
                Some("block_size") => true,
                Some("axis_value") => false,
                _ => {
                    return Err(CliError::Config(format!(
                        "CSV line {line_no}: expected a header starting with \
                         block_size or axis_value"
                    )))
                }
            });
            continue;
        }
        let with_block = has_block_column.unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if with_block { 10 } else { 9 };
        if fields.len() != expected {
            return Err(CliError::Config(format!(
                "CSV line {line_no}: expected {expected} fields, found {}",
                fields.len()
            )));
        }
        let mut at = 0;
        let block_size = if with_block {
            at = 1;
            Some(parse_field(fields[0], line_no)? as u64)
        } else {
            None
        };
        let x = parse_field(fields[at], line_no)?;
        let der = parse_rate(&fields, at + 1, line_no)?.ok_or_else(|| {
            CliError::Config(format!("CSV line {line_no}: DER cannot be NA"))
        })?;
        let ber = parse_rate(&fields, at + 4, line_no)?;
        let trials = parse_field(fields[at + 7], line_no)? as u64;
        out.rows.push(Row {
            block_size,
            x,
            der,
            ber,
            trials,
        });
    }
    if out.rows.is_empty() {
        return Err(CliError::Config("CSV has no data rows".into()));
    }
    if out.axis.is_empty() {
        out.axis = "axis".to_string();
    }
    Ok(out)
}

fn log_span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let lo_dec = lo.log10().floor();
    let mut hi_dec = hi.log10().ceil();
    if hi_dec <= lo_dec {
        hi_dec = lo_dec + 1.0;
    }
    (lo_dec, hi_dec)
}

struct Mapper {
    x_min: f64,
    x_max: f64,
    lo_dec: f64,
    hi_dec: f64,
}

impl Mapper {
    fn x(&self, v: f64) -> f64 {
        if (self.x_max - self.x_min).abs() < 1e-300 {
            return (PLOT_LEFT + PLOT_RIGHT) / 2.0;
        }
        PLOT_LEFT + (v - self.x_min) / (self.x_max - self.x_min) * (PLOT_RIGHT - PLOT_LEFT)
    }

    fn y(&self, rate: f64) -> f64 {
        let dec = rate.log10().clamp(self.lo_dec, self.hi_dec);
        PLOT_BOTTOM - (dec - self.lo_dec) / (self.hi_dec - self.lo_dec) * (PLOT_BOTTOM - PLOT_TOP)
    }
}

fn series_color(index: usize) -> &'static str {
    PALETTE[index % PALETTE.len()]
}

struct Series<'a> {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(&'a Row, Rate)>,
}

/// Render a sweep CSV as a static SVG line chart. Each block size gets one
/// DER line (solid) and, when present, one BER line (dashed); whiskers show
/// the Wilson intervals; zero rates are drawn at a declared floor with an
/// open square marker.
pub fn render_plot(csv_path: &Path, out_path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv_path.display())))?;
    let sweep = parse_sweep_csv(&text)?;

    // The smallest nonzero estimate a point could have produced is
    // 1/(N * trials); zero rates sit at half of that so they stay visually
    // below every measured value.
    let min_resolvable = sweep
        .rows
        .iter()
        .map(|r| 1.0 / (sweep.n_users.unwrap_or(1).max(1) * r.trials.max(1)) as f64)
        .fold(f64::INFINITY, f64::min);
    let mut positive: Vec<f64> = Vec::new();
    for row in &sweep.rows {
        for rate in [Some(row.der), row.ber].into_iter().flatten() {
            for v in [rate.value, rate.ci_lo, rate.ci_hi] {
                if v > 0.0 {
                    positive.push(v);
                }
            }
        }
    }
    let floor = if min_resolvable.is_finite() && sweep.n_users.is_some() {
        min_resolvable / 2.0
    } else {
        // Foreign CSV without a user count: fall back to the data.
        positive
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .min(1.0)
            / 2.0
    };
    let floor = if floor.is_finite() && floor > 0.0 { floor } else { 1e-6 };
    positive.push(floor);

    let (lo_dec, hi_dec) = log_span(&positive);
    let xs: Vec<f64> = sweep.rows.iter().map(|r| r.x).collect();
    let map = Mapper {
        x_min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        x_max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        lo_dec,
        hi_dec,
    };

    // Group rows into series: (block_size, metric).
    let mut block_sizes: Vec<Option<u64>> = Vec::new();
    for row in &sweep.rows {
        if !block_sizes.contains(&row.block_size) {
            block_sizes.push(row.block_size);
        }
    }
    let mut series: Vec<Series> = Vec::new();
    for (idx, &bs) in block_sizes.iter().enumerate() {
        let rows: Vec<&Row> = sweep.rows.iter().filter(|r| r.block_size == bs).collect();
        let tag = match bs {
            Some(d) => format!("D={d}"),
            None => String::new(),
        };
        let color = series_color(idx);
        let der_points: Vec<(&Row, Rate)> = rows.iter().map(|r| (*r, r.der)).collect();
        series.push(Series {
            label: format!("{} DER", tag).trim().to_string(),
            color,
            dashed: false,
            points: der_points,
        });
        let ber_points: Vec<(&Row, Rate)> = rows
            .iter()
            .filter_map(|r| r.ber.map(|b| (*r, b)))
            .collect();
        if !ber_points.is_empty() {
            series.push(Series {
                label: format!("{} BER", tag).trim().to_string(),
                color,
                dashed: true,
                points: ber_points,
            });
        }
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {CANVAS_W} {CANVAS_H}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{CANVAS_W}" height="{CANVAS_H}" fill="white"/>"#
    );
    let title = if sweep.title.is_empty() {
        format!("rates vs {}", sweep.axis)
    } else {
        format!("{} (rates vs {})", sweep.title, sweep.axis)
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-size="16" text-anchor="middle">{title}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0
    );

    // Decade gridlines and y tick labels.
    let mut dec = lo_dec as i64;
    while dec <= hi_dec as i64 {
        let y = map.y(10f64.powi(dec as i32));
        let _ = writeln!(
            svg,
            r##"<line x1="{PLOT_LEFT}" y1="{y:.1}" x2="{PLOT_RIGHT}" y2="{y:.1}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{dec}</text>"#,
            PLOT_LEFT - 8.0,
            y + 4.0
        );
        dec += 1;
    }

    // X ticks at every distinct axis value.
    let mut x_ticks: Vec<f64> = Vec::new();
    for &x in &xs {
        if !x_ticks.iter().any(|&t| (t - x).abs() < 1e-12) {
            x_ticks.push(x);
        }
    }
    x_ticks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &x_ticks {
        let x = map.x(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{PLOT_BOTTOM}" x2="{x:.1}" y2="{:.1}" stroke="#999999"/>"##,
            PLOT_BOTTOM + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            PLOT_BOTTOM + 20.0
        );
    }

    // Axes frame and labels.
    let _ = writeln!(
        svg,
        r#"<rect x="{PLOT_LEFT}" y="{PLOT_TOP}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        PLOT_RIGHT - PLOT_LEFT,
        PLOT_BOTTOM - PLOT_TOP
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        PLOT_BOTTOM + 42.0,
        sweep.axis
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">rate</text>"#,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0
    );

    let mut floored_any = false;
    for s in &series {
        let dash = if s.dashed {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        // Whiskers first so the lines draw over them.
        for (row, rate) in &s.points {
            let x = map.x(row.x);
            let lo = map.y(rate.ci_lo.max(floor));
            let hi = map.y(rate.ci_hi.max(floor));
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="{}" stroke-opacity="0.55"/>"#,
                s.color
            );
            for w in [lo, hi] {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.1}" y1="{w:.1}" x2="{:.1}" y2="{w:.1}" stroke="{}" stroke-opacity="0.55"/>"#,
                    x - 3.0,
                    x + 3.0,
                    s.color
                );
            }
        }
        let path: Vec<String> = s
            .points
            .iter()
            .map(|(row, rate)| {
                format!("{:.1},{:.1}", map.x(row.x), map.y(rate.value.max(floor)))
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#,
            path.join(" "),
            s.color
        );
        for (row, rate) in &s.points {
            let x = map.x(row.x);
            if rate.value <= 0.0 {
                floored_any = true;
                let y = map.y(floor);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="white" stroke="{}" stroke-width="1.6"/>"#,
                    x - 4.0,
                    y - 4.0,
                    s.color
                );
            } else {
                let y = map.y(rate.value);
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.4" fill="{}"/>"#,
                    s.color
                );
            }
        }
    }

    // Legend.
    let legend_x = PLOT_RIGHT + 16.0;
    let mut legend_y = PLOT_TOP + 10.0;
    for s in &series {
        let dash = if s.dashed {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<line x1="{legend_x}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{}" stroke-width="1.8"{dash}/>"#,
            legend_x + 26.0,
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            legend_x + 32.0,
            legend_y + 4.0,
            s.label
        );
        legend_y += 20.0;
    }
    if floored_any {
        legend_y += 6.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{legend_x}" y="{:.1}" width="8" height="8" fill="white" stroke="#555555" stroke-width="1.6"/>"##,
            legend_y - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">zero rate, drawn at floor {floor:.2e}</text>"#,
            legend_x + 14.0,
            legend_y + 4.0
        );
    }
    svg.push_str("</svg>\n");

    std::fs::write(out_path, svg)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", out_path.display())))?;
    Ok(())
}
