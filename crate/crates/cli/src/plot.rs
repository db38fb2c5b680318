//! SVG output via plotters (no font rendering; titles go into the file name and a
//! `<title>` comment instead of drawn text).

use std::path::Path;

use plotters::prelude::*;
use raypose_core::{Error, Result};

const SIZE: (u32, u32) = (720, 560);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return -1.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad)..(hi + pad)
}

fn tag_title(path: &Path, title: &str) -> Result<()> {
    let svg = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let tagged = svg.replacen('>', &format!("><!-- {title} -->"), 2);
    std::fs::write(path, tagged).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// 3D camera-frame translation track: ground truth (blue) and prediction (orange).
pub fn trajectory(path: &Path, title: &str, gt: &[[f64; 3]], pred: &[[f64; 3]]) -> Result<()> {
    {
        let all = || gt.iter().chain(pred);
        let (xr, yr, zr) = (
            range(all().map(|p| p[0])),
            range(all().map(|p| p[2])),
            range(all().map(|p| -p[1])),
        );
        let root = SVGBackend::new(path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
        // Axes: x right, depth into the page, height up (camera y points down).
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_3d(xr, zr, yr)
            .map_err(|e| draw_err(path, e))?;
        chart.with_projection(|mut p| {
            p.pitch = 0.5;
            p.yaw = 0.7;
            p.scale = 0.85;
            p.into_matrix()
        });
        chart
            .configure_axes()
            .light_grid_style(BLACK.mix(0.1))
            .max_light_lines(3)
            .draw()
            .map_err(|e| draw_err(path, e))?;
        for (pts, color) in [(gt, PALETTE[0]), (pred, PALETTE[1])] {
            chart
                .draw_series(LineSeries::new(pts.iter().map(|p| (p[0], -p[1], p[2])), color.stroke_width(2)))
                .map_err(|e| draw_err(path, e))?;
        }
        root.present().map_err(|e| draw_err(path, e))?;
    }
    tag_title(path, title)
}

/// 2D scatter, one colour per group.
pub fn scatter(path: &Path, title: &str, groups: &[(String, Vec<[f64; 2]>)]) -> Result<()> {
    {
        let all = || groups.iter().flat_map(|(_, pts)| pts.iter());
        let (xr, yr) = (range(all().map(|p| p[0])), range(all().map(|p| p[1])));
        let root = SVGBackend::new(path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_2d(xr, yr)
            .map_err(|e| draw_err(path, e))?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .disable_y_mesh()
            .draw()
            .map_err(|e| draw_err(path, e))?;
        for (i, (_, pts)) in groups.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(pts.iter().map(|p| Circle::new((p[0], p[1]), 3, color.filled())))
                .map_err(|e| draw_err(path, e))?;
        }
        root.present().map_err(|e| draw_err(path, e))?;
    }
    let legend: Vec<String> = groups
        .iter()
        .enumerate()
        .map(|(i, (l, _))| {
            let c = PALETTE[i % PALETTE.len()];
            format!("{l}=#{:02x}{:02x}{:02x}", c.0, c.1, c.2)
        })
        .collect();
    tag_title(path, &format!("{title}; {}", legend.join(" ")))
}
