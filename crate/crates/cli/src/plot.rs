//! Figures as plain SVG, each backed by a CSV of the plotted values.
//!
//! Rendering reads only the CSV, so re-rendering a CSV reproduces the
//! figure byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::Failure;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub const LINE_HEADER: [&str; 4] = ["x", "effect", "lower", "upper"];
pub const HEAT_HEADER: [&str; 3] = ["x", "y", "effect"];
pub const FAN_HEADER: [&str; 6] = ["week", "group_id", "mean", "lower", "upper", "observed"];

#[derive(Debug, Clone, PartialEq)]
pub struct LinePoint {
    pub x: f64,
    pub effect: f64,
    /// ±2 sd band, when a covariance was supplied.
    pub band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatCell {
    pub x: f64,
    pub y: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanPoint {
    pub week: i32,
    pub group: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub observed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Figure {
    Line(Vec<LinePoint>),
    Heat(Vec<HeatCell>),
    Fan(Vec<FanPoint>),
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn num<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T, Failure> {
    s.trim()
        .parse()
        .map_err(|_| csv_err(path, format!("bad number {s:?}")))
}

impl Figure {
    pub fn write_csv(&self, path: &Path) -> Result<(), Failure> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut put = |rec: Vec<String>| w.write_record(rec).map_err(|e| csv_err(path, e));
        match self {
            Figure::Line(pts) => {
                put(LINE_HEADER.iter().map(|s| s.to_string()).collect())?;
                for p in pts {
                    let (lo, hi) = match p.band {
                        Some((lo, hi)) => (lo.to_string(), hi.to_string()),
                        None => (String::new(), String::new()),
                    };
                    put(vec![p.x.to_string(), p.effect.to_string(), lo, hi])?;
                }
            }
            Figure::Heat(cells) => {
                put(HEAT_HEADER.iter().map(|s| s.to_string()).collect())?;
                for c in cells {
                    put(vec![c.x.to_string(), c.y.to_string(), c.effect.to_string()])?;
                }
            }
            Figure::Fan(pts) => {
                put(FAN_HEADER.iter().map(|s| s.to_string()).collect())?;
                for p in pts {
                    put(vec![
                        p.week.to_string(),
                        p.group.to_string(),
                        p.mean.to_string(),
                        p.lower.to_string(),
                        p.upper.to_string(),
                        p.observed.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| csv_err(path, e))
    }

    /// The figure kind is recognized from the header.
    pub fn read_csv(path: &Path) -> Result<Figure, Failure> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let records = r
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, e))?;
        if header == LINE_HEADER {
            let pts = records
                .iter()
                .map(|rec| {
                    let band = match (&rec[2], &rec[3]) {
                        ("", "") => None,
                        (lo, hi) => Some((num(path, lo)?, num(path, hi)?)),
                    };
                    Ok(LinePoint {
                        x: num(path, &rec[0])?,
                        effect: num(path, &rec[1])?,
                        band,
                    })
                })
                .collect::<Result<_, Failure>>()?;
            Ok(Figure::Line(pts))
        } else if header == HEAT_HEADER {
            let cells = records
                .iter()
                .map(|rec| {
                    Ok(HeatCell {
                        x: num(path, &rec[0])?,
                        y: num(path, &rec[1])?,
                        effect: num(path, &rec[2])?,
                    })
                })
                .collect::<Result<_, Failure>>()?;
            Ok(Figure::Heat(cells))
        } else if header == FAN_HEADER {
            let pts = records
                .iter()
                .map(|rec| {
                    Ok(FanPoint {
                        week: num(path, &rec[0])?,
                        group: num(path, &rec[1])?,
                        mean: num(path, &rec[2])?,
                        lower: num(path, &rec[3])?,
                        upper: num(path, &rec[4])?,
                        observed: num(path, &rec[5])?,
                    })
                })
                .collect::<Result<_, Failure>>()?;
            Ok(Figure::Fan(pts))
        } else {
            Err(csv_err(
                path,
                format!("unrecognized figure header {header:?}"),
            ))
        }
    }

    pub fn render(&self, title: &str) -> Result<String, Failure> {
        match self {
            Figure::Line(p) => render_line(title, p),
            Figure::Heat(c) => render_heat(title, c),
            Figure::Fan(p) => render_fan(title, p),
        }
    }
}

/// `n` points from `lo` to `hi`, both endpoints exact.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps data coordinates into a plotting rectangle.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    top: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.h - (y - self.y.0) / (self.y.1 - self.y.0) * self.h
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.w, self.top + self.h);
        let _ = writeln!(
            out,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.w, self.h
        );
        for (i, v) in grid(self.x.0, self.x.1, 5).into_iter().enumerate() {
            let x = self.px(v);
            let anchor = if i == 0 {
                "start"
            } else if i == 4 {
                "end"
            } else {
                "middle"
            };
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="{anchor}">{}</text>"##,
                b + 4.0,
                b + 16.0,
                tick(v)
            );
        }
        for v in grid(self.y.0, self.y.1, 5) {
            let y = self.py(v);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
                l - 4.0,
                l - 6.0,
                y + 3.0,
                tick(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            b + 32.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            l - 42.0,
            (t + b) / 2.0,
            l - 42.0,
            (t + b) / 2.0,
            escape(y_label)
        );
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn open(out: &mut String, title: &str, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn path_of(points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
    }
    d
}

fn render_line(title: &str, pts: &[LinePoint]) -> Result<String, Failure> {
    let xr = extent(pts.iter().map(|p| p.x)).ok_or_else(|| Failure::data("empty line figure"))?;
    let yr = extent(pts.iter().flat_map(|p| {
        let (lo, hi) = p.band.unwrap_or((p.effect, p.effect));
        [p.effect, lo, hi]
    }))
    .expect("nonempty");
    let f = Frame {
        x: padded(xr.0, xr.1),
        y: padded(yr.0, yr.1),
        left: MARGIN,
        top: 32.0,
        w: WIDTH - MARGIN - 16.0,
        h: HEIGHT - 32.0 - MARGIN,
    };
    let mut out = String::new();
    open(&mut out, title, HEIGHT);
    let _ = writeln!(out, "<desc>x range [{}, {}]</desc>", xr.0, xr.1);
    if pts.iter().all(|p| p.band.is_some()) {
        let upper = pts
            .iter()
            .map(|p| (f.px(p.x), f.py(p.band.expect("band").1)));
        let lower = pts
            .iter()
            .rev()
            .map(|p| (f.px(p.x), f.py(p.band.expect("band").0)));
        let _ = writeln!(
            out,
            r##"<path d="{} Z" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
            path_of(upper.chain(lower))
        );
    }
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        path_of(pts.iter().map(|p| (f.px(p.x), f.py(p.effect))))
    );
    f.axes(&mut out, title, "partial effect");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Diverging blue-white-red scale on `t ∈ [−1, 1]`.
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let s = -t;
        (
            255.0 * (1.0 - s) + 33.0 * s,
            255.0 * (1.0 - s) + 102.0 * s,
            255.0 * (1.0 - s) + 172.0 * s,
        )
    } else {
        (
            255.0 * (1.0 - t) + 178.0 * t,
            255.0 * (1.0 - t) + 24.0 * t,
            255.0 * (1.0 - t) + 43.0 * t,
        )
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn render_heat(title: &str, cells: &[HeatCell]) -> Result<String, Failure> {
    let xs = distinct(cells.iter().map(|c| c.x));
    let ys = distinct(cells.iter().map(|c| c.y));
    if xs.len() < 2 || ys.len() < 2 || xs.len() * ys.len() != cells.len() {
        return Err(Failure::data(
            "a heatmap needs a complete grid of at least 2 × 2 points",
        ));
    }
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let (y0, y1) = (ys[0], ys[ys.len() - 1]);
    let f = Frame {
        x: (x0, x1),
        y: (y0, y1),
        left: MARGIN,
        top: 32.0,
        w: WIDTH - MARGIN - 90.0,
        h: HEIGHT - 32.0 - MARGIN,
    };
    let scale = cells.iter().map(|c| c.effect.abs()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    // cell edges halfway between grid points, clipped to the range
    let edges = |g: &[f64], i: usize| -> (f64, f64) {
        let lo = if i == 0 {
            g[0]
        } else {
            (g[i - 1] + g[i]) / 2.0
        };
        let hi = if i + 1 == g.len() {
            g[i]
        } else {
            (g[i] + g[i + 1]) / 2.0
        };
        (lo, hi)
    };
    let mut out = String::new();
    open(&mut out, title, HEIGHT);
    let _ = writeln!(
        out,
        "<desc>x range [{x0}, {x1}]; y range [{y0}, {y1}]</desc>"
    );
    for c in cells {
        let i = xs.partition_point(|&v| v < c.x);
        let j = ys.partition_point(|&v| v < c.y);
        let (xa, xb) = edges(&xs, i);
        let (ya, yb) = edges(&ys, j);
        let (px, py) = (f.px(xa), f.py(yb));
        let _ = writeln!(
            out,
            r#"<rect x="{px:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            f.px(xb) - px,
            f.py(ya) - py,
            diverging(c.effect / scale)
        );
    }
    f.axes(&mut out, "first margin", "second margin");
    // colour bar
    let bx = WIDTH - 70.0;
    for k in 0..20 {
        let t = 1.0 - 2.0 * k as f64 / 19.0;
        let y = f.top + f.h * k as f64 / 20.0;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.2}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            f.h / 20.0 + 0.5,
            diverging(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
        bx + 18.0,
        f.top + 8.0,
        tick(scale)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
        bx + 18.0,
        f.top + f.h,
        tick(-scale)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

fn render_fan(title: &str, pts: &[FanPoint]) -> Result<String, Failure> {
    let groups: Vec<usize> = {
        let mut g: Vec<usize> = pts.iter().map(|p| p.group).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    if groups.is_empty() {
        return Err(Failure::data("empty fan chart"));
    }
    let xr = extent(pts.iter().map(|p| p.week as f64)).expect("nonempty");
    let panel_h = 150.0;
    let height = 40.0 + groups.len() as f64 * (panel_h + 40.0);
    let mut out = String::new();
    open(&mut out, title, height);
    for (k, g) in groups.iter().enumerate() {
        let mut ps: Vec<&FanPoint> = pts.iter().filter(|p| p.group == *g).collect();
        ps.sort_by_key(|p| p.week);
        let yr = extent(
            ps.iter()
                .flat_map(|p| [p.lower, p.upper, p.mean, p.observed as f64]),
        )
        .expect("nonempty");
        let f = Frame {
            x: padded(xr.0, xr.1),
            y: padded(yr.0.min(0.0), yr.1),
            left: MARGIN,
            top: 36.0 + k as f64 * (panel_h + 40.0),
            w: WIDTH - MARGIN - 16.0,
            h: panel_h,
        };
        let upper = ps.iter().map(|p| (f.px(p.week as f64), f.py(p.upper)));
        let lower = ps
            .iter()
            .rev()
            .map(|p| (f.px(p.week as f64), f.py(p.lower)));
        let _ = writeln!(
            out,
            r##"<path d="{} Z" fill="#bcbddc" fill-opacity="0.7" stroke="none"/>"##,
            path_of(upper.chain(lower))
        );
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#54278f" stroke-width="1.5"/>"##,
            path_of(ps.iter().map(|p| (f.px(p.week as f64), f.py(p.mean))))
        );
        for p in &ps {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="black"/>"#,
                f.px(p.week as f64),
                f.py(p.observed as f64)
            );
        }
        f.axes(&mut out, &format!("week (group {g})"), "cases");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Writes `<stem>.csv`, then renders `<stem>.svg` from the file just written.
pub fn emit(dir: &Path, stem: &str, figure: &Figure) -> Result<(), Failure> {
    let csv_path = dir.join(format!("{stem}.csv"));
    figure.write_csv(&csv_path)?;
    render_file(&csv_path, &dir.join(format!("{stem}.svg")))
}

/// Renders a figure CSV; the title is the file stem.
pub fn render_file(csv_path: &Path, svg_path: &Path) -> Result<(), Failure> {
    let title = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("figure");
    let svg = Figure::read_csv(csv_path)?.render(title)?;
    std::fs::write(svg_path, svg)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", svg_path.display())))
}
