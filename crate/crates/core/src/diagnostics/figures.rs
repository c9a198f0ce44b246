use crate::dataset::FleetDataset;
use crate::som::{component_plane, u_matrix, SomMap};
use crate::superclass::SuperClassing;
use crate::trajectory::{Trajectory, TrajectoryDistanceReport};

use super::svg::{category_color, fmt2, heat_color, progression_color, Svg, HEAT_STOPS};
use super::{pca, DiagnosticsError};

pub const FIG1_PCA: &str = "fig1_pca.svg";
pub const FIG1_HISTOGRAMS: &str = "fig1_histograms.svg";
pub const FIG2_DEPENDENCE: &str = "fig2_dependence.svg";
pub const FIG3_SOM: &str = "fig3_som.svg";
pub const FIG4_SUPERCLASSES: &str = "fig4_superclasses.svg";
pub const FIG5_TRAJECTORIES: &str = "fig5_trajectories.svg";

/// Upstream results the figures draw from; `None` marks an artifact that was not produced.
#[derive(Default)]
pub struct FigureInputs<'a> {
    pub dataset: Option<&'a FleetDataset>,
    pub map: Option<&'a SomMap>,
    pub superclasses: Option<&'a SuperClassing>,
    pub trajectories: Option<&'a [Trajectory]>,
    pub report: Option<&'a TrajectoryDistanceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureOptions {
    /// Engines drawn in the PCA scatter and the dependence plot; default: first five.
    pub scatter_engines: Option<Vec<String>>,
    /// Engines in the histogram overlay; default: first four.
    pub histogram_engines: Option<Vec<String>>,
    pub histogram_var: usize,
    pub histogram_bins: usize,
    pub dependence_y: usize,
    pub dependence_x: usize,
    /// Engines overlaid on the map; default: the three highest deviation scores.
    pub trajectory_engines: Option<Vec<String>>,
    pub background_var: usize,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self {
            scatter_engines: None,
            histogram_engines: None,
            histogram_var: 3,
            histogram_bins: 30,
            dependence_y: 4,
            dependence_x: 9,
            trajectory_engines: None,
            background_var: 4,
        }
    }
}

fn require<'a, T: ?Sized>(v: Option<&'a T>, name: &str) -> Result<&'a T, DiagnosticsError> {
    v.ok_or_else(|| DiagnosticsError::MissingArtifact(name.to_string()))
}

fn select_engines(ds: &FleetDataset, chosen: &Option<Vec<String>>, n: usize) -> Result<Vec<String>, DiagnosticsError> {
    match chosen {
        Some(ids) => {
            for id in ids {
                if ds.engine(id).is_none() {
                    return Err(DiagnosticsError::UnknownEngine(id.clone()));
                }
            }
            Ok(ids.clone())
        }
        None => Ok(ds.engines().iter().take(n).map(|e| e.id.clone()).collect()),
    }
}

/// Renders every figure, in file-name order.
pub fn render_figures(
    inputs: &FigureInputs,
    opts: &FigureOptions,
) -> Result<Vec<(&'static str, String)>, DiagnosticsError> {
    let ds = require(inputs.dataset, "fleet.csv")?;
    let map = require(inputs.map, "som_model.json")?;
    let sc = require(inputs.superclasses, "superclasses.json")?;
    let trajectories = require(inputs.trajectories, "trajectories.csv")?;

    let scatter = select_engines(ds, &opts.scatter_engines, 5)?;
    let hist = select_engines(ds, &opts.histogram_engines, 4)?;
    let chosen: Vec<&Trajectory> = match &opts.trajectory_engines {
        Some(ids) => ids
            .iter()
            .map(|id| {
                trajectories
                    .iter()
                    .find(|t| &t.engine_id == id)
                    .ok_or_else(|| DiagnosticsError::UnknownEngine(id.clone()))
            })
            .collect::<Result<_, _>>()?,
        None => {
            let report = require(inputs.report, "deviation_ranking.csv")?;
            report
                .ranking
                .iter()
                .take(3)
                .filter_map(|&e| trajectories.iter().find(|t| t.engine_id == report.engine_ids[e]))
                .collect()
        }
    };

    Ok(vec![
        (FIG1_PCA, fig1_pca(ds, &scatter)?),
        (
            FIG1_HISTOGRAMS,
            fig1_histograms(ds, opts.histogram_var, &hist, opts.histogram_bins)?,
        ),
        (
            FIG2_DEPENDENCE,
            fig2_dependence(ds, opts.dependence_y, opts.dependence_x, &scatter)?,
        ),
        (FIG3_SOM, fig3_som(map)?),
        (FIG4_SUPERCLASSES, fig4_superclasses(map, sc)?),
        (FIG5_TRAJECTORIES, fig5_trajectories(map, opts.background_var, &chosen)?),
    ])
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xs: &[f64], ys: &[f64]) -> Self {
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                let pad = 0.03 * (hi - lo);
                (lo - pad, hi + pad)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Self {
            x0,
            y0,
            w,
            h,
            xr: range(xs),
            yr: range(ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn draw_axes(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        svg.outline(self.x0, self.y0, self.w, self.h, "#000000");
        let b = self.y0 + self.h;
        svg.text(self.x0, b + 14.0, 10.0, "start", &fmt2(self.xr.0));
        svg.text(self.x0 + self.w, b + 14.0, 10.0, "end", &fmt2(self.xr.1));
        svg.text(self.x0 + self.w / 2.0, b + 28.0, 11.0, "middle", xlabel);
        svg.text(self.x0 - 4.0, b, 10.0, "end", &fmt2(self.yr.0));
        svg.text(self.x0 - 4.0, self.y0 + 10.0, 10.0, "end", &fmt2(self.yr.1));
        svg.text(self.x0, self.y0 - 8.0, 11.0, "start", ylabel);
    }
}

fn legend(svg: &mut Svg, x: f64, y: f64, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        svg.rect(x, yy - 8.0, 10.0, 10.0, category_color(i));
        svg.text(x + 14.0, yy, 10.0, "start", l);
    }
}

/// Scatter of the first two principal components of the z-scored engine
/// variables (fitted on the whole fleet), for the selected engines.
pub fn fig1_pca(ds: &FleetDataset, engines: &[String]) -> Result<String, DiagnosticsError> {
    let p = ds.schema().p();
    let data: Vec<f64> = ds.records().iter().flat_map(|r| r.y.iter().copied()).collect();
    let z = zscore(&data, p);
    let result = pca(&z, p, 2.min(p))?;
    let score = |row: usize, c: usize| if c < result.k() { result.score(row, c) } else { 0.0 };

    let mut groups = Vec::new();
    for id in engines {
        let slice = ds.engine(id).ok_or_else(|| DiagnosticsError::UnknownEngine(id.clone()))?;
        let pts: Vec<(f64, f64)> = slice.records.clone().map(|r| (score(r, 0), score(r, 1))).collect();
        groups.push(pts);
    }
    let xs: Vec<f64> = groups.iter().flatten().map(|p| p.0).collect();
    let ys: Vec<f64> = groups.iter().flatten().map(|p| p.1).collect();
    let frame = Frame::new(60.0, 40.0, 480.0, 400.0, &xs, &ys);
    let mut svg = Svg::new(680.0, 490.0);
    svg.text(60.0, 20.0, 13.0, "start", "Raw engine variables: first two principal components");
    let pct = |c: usize| result.explained.get(c).map_or(0.0, |v| 100.0 * v);
    frame.draw_axes(
        &mut svg,
        &format!("PC1 ({}% of variance)", fmt2(pct(0))),
        &format!("PC2 ({}% of variance)", fmt2(pct(1))),
    );
    for (i, pts) in groups.iter().enumerate() {
        svg.open_group("engine", Some(&engines[i]));
        for &(x, y) in pts {
            svg.circle(frame.px(x), frame.py(y), 1.8, category_color(i));
        }
        svg.close_group();
    }
    legend(&mut svg, 560.0, 60.0, engines);
    Ok(svg.finish())
}

fn zscore(data: &[f64], dim: usize) -> Vec<f64> {
    let n = (data.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for row in data.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for row in data.chunks(dim) {
        for c in 0..dim {
            sd[c] += (row[c] - mean[c]).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    data.chunks(dim)
        .flat_map(|row| (0..dim).map(|c| (row[c] - mean[c]) / sd[c]).collect::<Vec<_>>())
        .collect()
}

/// Overlaid binned outlines of one engine variable for the selected engines, shared bins and axes.
pub fn fig1_histograms(ds: &FleetDataset, var: usize, engines: &[String], bins: usize) -> Result<String, DiagnosticsError> {
    let p = ds.schema().p();
    if var >= p {
        return Err(DiagnosticsError::Shape(format!("variable {var} out of range (p = {p})")));
    }
    if bins == 0 {
        return Err(DiagnosticsError::Shape("histogram needs at least one bin".into()));
    }
    let mut values = Vec::new();
    for id in engines {
        let recs = ds.engine_records(id).ok_or_else(|| DiagnosticsError::UnknownEngine(id.clone()))?;
        values.push(recs.iter().map(|r| r.y[var]).collect::<Vec<f64>>());
    }
    let all: Vec<f64> = values.iter().flatten().copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<usize>> = values
        .iter()
        .map(|v| {
            let mut c = vec![0; bins];
            for x in v {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                c[b] += 1;
            }
            c
        })
        .collect();
    let max_count = counts.iter().flatten().copied().max().unwrap_or(1).max(1);

    let name = &ds.schema().engine_var_names()[var];
    let frame = Frame {
        x0: 60.0,
        y0: 40.0,
        w: 480.0,
        h: 320.0,
        xr: (lo, hi),
        yr: (0.0, max_count as f64),
    };
    let mut svg = Svg::new(680.0, 410.0);
    svg.text(60.0, 20.0, 13.0, "start", &format!("Y{} ({name}) per engine, {bins} bins", var + 1));
    frame.draw_axes(&mut svg, name, "flights per bin");
    for (i, c) in counts.iter().enumerate() {
        let mut pts = vec![(frame.px(lo), frame.py(0.0))];
        for (b, &n) in c.iter().enumerate() {
            let (x_left, x_right) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
            pts.push((frame.px(x_left), frame.py(n as f64)));
            pts.push((frame.px(x_right), frame.py(n as f64)));
        }
        pts.push((frame.px(hi), frame.py(0.0)));
        svg.open_group("histogram", Some(&engines[i]));
        svg.polyline(&pts, category_color(i), 1.5);
        svg.close_group();
    }
    legend(&mut svg, 560.0, 60.0, engines);
    Ok(svg.finish())
}

/// One engine variable against one environmental variable, coloured by engine.
pub fn fig2_dependence(ds: &FleetDataset, y: usize, x: usize, engines: &[String]) -> Result<String, DiagnosticsError> {
    let (p, q) = (ds.schema().p(), ds.schema().q());
    if y >= p || x >= q {
        return Err(DiagnosticsError::Shape(format!(
            "dependence plot needs y < {p} and x < {q}, got y = {y}, x = {x}"
        )));
    }
    let mut groups = Vec::new();
    for id in engines {
        let recs = ds.engine_records(id).ok_or_else(|| DiagnosticsError::UnknownEngine(id.clone()))?;
        groups.push(recs.iter().map(|r| (r.x[x], r.y[y])).collect::<Vec<_>>());
    }
    let xs: Vec<f64> = groups.iter().flatten().map(|p| p.0).collect();
    let ys: Vec<f64> = groups.iter().flatten().map(|p| p.1).collect();
    let frame = Frame::new(60.0, 40.0, 480.0, 400.0, &xs, &ys);
    let (yname, xname) = (&ds.schema().engine_var_names()[y], &ds.schema().env_var_names()[x]);
    let mut svg = Svg::new(680.0, 490.0);
    svg.text(60.0, 20.0, 13.0, "start", &format!("Y{} ({yname}) against X{} ({xname})", y + 1, x + 1));
    frame.draw_axes(&mut svg, xname, yname);
    for (i, pts) in groups.iter().enumerate() {
        svg.open_group("engine", Some(&engines[i]));
        for &(a, b) in pts {
            svg.circle(frame.px(a), frame.py(b), 1.5, category_color(i));
        }
        svg.close_group();
    }
    legend(&mut svg, 560.0, 60.0, engines);
    Ok(svg.finish())
}

const CELL: f64 = 10.0;

/// Min-max heat grid with the scale bounds written underneath.
fn heat_grid(svg: &mut Svg, map: &SomMap, x0: f64, y0: f64, values: &[f64], title: &str) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    svg.open_group("heatgrid", Some(title));
    svg.text(x0, y0 - 6.0, 11.0, "start", title);
    for (u, v) in values.iter().enumerate() {
        let (r, c) = map.coords(u);
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        svg.rect(x0 + c as f64 * CELL, y0 + r as f64 * CELL, CELL, CELL, &heat_color(t));
    }
    let (w, h) = (map.cols as f64 * CELL, map.rows as f64 * CELL);
    svg.outline(x0, y0, w, h, "#000000");
    let step = w / HEAT_STOPS.len() as f64;
    for i in 0..HEAT_STOPS.len() {
        svg.rect(x0 + i as f64 * step, y0 + h + 4.0, step, 5.0, &heat_color(i as f64 / 6.0));
    }
    svg.text(x0, y0 + h + 19.0, 9.0, "start", &format!("min {}", fmt2(lo)));
    svg.text(x0 + w, y0 + h + 19.0, 9.0, "end", &format!("max {}", fmt2(hi)));
    svg.close_group();
}

/// U-matrix followed by one component plane per variable.
pub fn fig3_som(map: &SomMap) -> Result<String, DiagnosticsError> {
    let mut grids = vec![("U-matrix".to_string(), u_matrix(map))];
    for m in 0..map.dim {
        let plane = component_plane(map, m).map_err(|e| DiagnosticsError::Shape(e.to_string()))?;
        grids.push((format!("R{} {}", m + 1, map.var_names[m]), plane));
    }
    let per_row = 4;
    let (gw, gh) = (map.cols as f64 * CELL + 30.0, map.rows as f64 * CELL + 50.0);
    let rows = grids.len().div_ceil(per_row);
    let mut svg = Svg::new(20.0 + per_row as f64 * gw, 40.0 + rows as f64 * gh);
    svg.text(20.0, 18.0, 13.0, "start", &format!("{}x{} map: U-matrix and component planes", map.rows, map.cols));
    for (i, (title, values)) in grids.iter().enumerate() {
        let (gx, gy) = ((i % per_row) as f64, (i / per_row) as f64);
        heat_grid(&mut svg, map, 20.0 + gx * gw, 45.0 + gy * gh, values, title);
    }
    Ok(svg.finish())
}

/// Super-class label grid with a bar glyph of each standardized centroid at the class's mean position.
pub fn fig4_superclasses(map: &SomMap, sc: &SuperClassing) -> Result<String, DiagnosticsError> {
    if sc.units() != map.units() {
        return Err(DiagnosticsError::Shape(format!(
            "super-classing has {} units, map has {}",
            sc.units(),
            map.units()
        )));
    }
    let cell = 20.0;
    let (x0, y0) = (20.0, 40.0);
    let mut svg = Svg::new(x0 * 2.0 + map.cols as f64 * cell + 120.0, y0 + map.rows as f64 * cell + 30.0);
    svg.text(x0, 22.0, 13.0, "start", &format!("{} super-classes", sc.k));
    svg.open_group("labels", None);
    for (u, &l) in sc.labels.iter().enumerate() {
        let (r, c) = map.coords(u);
        svg.rect(x0 + c as f64 * cell, y0 + r as f64 * cell, cell, cell, category_color(l));
    }
    svg.close_group();
    svg.outline(x0, y0, map.cols as f64 * cell, map.rows as f64 * cell, "#000000");

    for class in 0..sc.k {
        let members: Vec<usize> = (0..sc.units()).filter(|&u| sc.labels[u] == class).collect();
        let (mut mr, mut mc) = (0.0, 0.0);
        for &u in &members {
            let (r, c) = map.coords(u);
            mr += r as f64;
            mc += c as f64;
        }
        let n = members.len().max(1) as f64;
        let (cx, cy) = (x0 + (mc / n + 0.5) * cell, y0 + (mr / n + 0.5) * cell);
        let z = map.standardization.apply(&sc.centroids[class]);
        let bar = 5.0;
        let gw = bar * z.len() as f64;
        svg.open_group("centroid", Some(&format!("class {class}")));
        svg.rect(cx - gw / 2.0 - 2.0, cy - 20.0, gw + 4.0, 40.0, "#ffffff");
        svg.line(cx - gw / 2.0, cy, cx + gw / 2.0, cy, "#000000");
        for (m, v) in z.iter().enumerate() {
            let hgt = (v.clamp(-3.0, 3.0) / 3.0) * 18.0;
            let x = cx - gw / 2.0 + m as f64 * bar;
            let (top, len) = if hgt >= 0.0 { (cy - hgt, hgt) } else { (cy, -hgt) };
            svg.rect(x + 0.5, top, bar - 1.0, len, "#333333");
        }
        svg.text(cx, cy - 22.0, 10.0, "middle", &format!("{}", class + 1));
        svg.close_group();
    }
    let labels: Vec<String> = (0..sc.k).map(|c| format!("class {} ({} units)", c + 1, sc.class_sizes()[c])).collect();
    legend(&mut svg, x0 * 2.0 + map.cols as f64 * cell - 10.0, y0 + 10.0, &labels);
    Ok(svg.finish())
}

/// Trajectories drawn as dots over a component plane; dot colour runs red,
/// yellow, green, blue with the flight index.
pub fn fig5_trajectories(map: &SomMap, background_var: usize, trajectories: &[&Trajectory]) -> Result<String, DiagnosticsError> {
    let plane = component_plane(map, background_var).map_err(|e| DiagnosticsError::Shape(e.to_string()))?;
    let fingerprint = map.fingerprint();
    for t in trajectories {
        if t.map_id != fingerprint {
            return Err(DiagnosticsError::Shape(format!(
                "trajectory of '{}' was computed on another map",
                t.engine_id
            )));
        }
    }
    let scale = 2.0;
    let cell = CELL * scale;
    let (x0, y0) = (20.0, 45.0);
    let mut svg = Svg::new(x0 * 2.0 + map.cols as f64 * cell + 140.0, y0 + map.rows as f64 * cell + 40.0);
    let name = format!("R{} {}", background_var + 1, map.var_names[background_var]);
    svg.text(x0, 20.0, 13.0, "start", &format!("Trajectories over {name}"));

    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    svg.open_group("heatgrid", Some(&name));
    for (u, v) in plane.iter().enumerate() {
        let (r, c) = map.coords(u);
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        svg.rect(x0 + c as f64 * cell, y0 + r as f64 * cell, cell, cell, &heat_color(t));
    }
    svg.outline(x0, y0, map.cols as f64 * cell, map.rows as f64 * cell, "#000000");
    let h = map.rows as f64 * cell;
    svg.text(x0, y0 + h + 14.0, 9.0, "start", &format!("min {}", fmt2(lo)));
    svg.text(x0 + map.cols as f64 * cell, y0 + h + 14.0, 9.0, "end", &format!("max {}", fmt2(hi)));
    svg.close_group();

    let n_sel = trajectories.len();
    for (k, t) in trajectories.iter().enumerate() {
        // Spread engines sharing a cell across a small diagonal.
        let offset = if n_sel > 1 { (k as f64 / (n_sel - 1) as f64 - 0.5) * cell * 0.5 } else { 0.0 };
        svg.open_group("trajectory", Some(&t.engine_id));
        let last = t.len().saturating_sub(1).max(1) as f64;
        for (j, s) in t.steps.iter().enumerate() {
            let cx = x0 + (s.col as f64 + 0.5) * cell + offset;
            let cy = y0 + (s.row as f64 + 0.5) * cell + offset;
            svg.circle(cx, cy, 1.6, &progression_color(j as f64 / last));
        }
        svg.close_group();
    }
    let lx = x0 * 2.0 + map.cols as f64 * cell;
    for (k, t) in trajectories.iter().enumerate() {
        svg.text(lx, y0 + 10.0 + 14.0 * k as f64, 10.0, "start", &t.engine_id);
    }
    let ly = y0 + 20.0 + 14.0 * n_sel as f64;
    for i in 0..=10 {
        svg.rect(lx + 8.0 * i as f64, ly, 8.0, 8.0, &progression_color(i as f64 / 10.0));
    }
    svg.text(lx, ly + 20.0, 9.0, "start", "first flight");
    svg.text(lx + 88.0, ly + 20.0, 9.0, "end", "last");
    Ok(svg.finish())
}
