//! Image and statistics files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::render::Render;
use super::stats::PixelStats;
use super::vec3::Rgb;
use super::PathTracerError;

pub const DISPLAY_GAMMA: f64 = 2.2;

pub const STATS_HEADER: [&str; 18] = [
    "x", "y", "n", "mean_d_r", "mean_d_g", "mean_d_b", "mean_s_r", "mean_s_g", "mean_s_b", "var_d_r", "var_d_g",
    "var_d_b", "var_s_r", "var_s_g", "var_s_b", "cov_ds_r", "cov_ds_g", "cov_ds_b",
];

/// Linear-radiance RGB raster, row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl LinearImage {
    pub fn from_render(r: &Render) -> Self {
        Self {
            width: r.width,
            height: r.height,
            pixels: r.image.clone(),
        }
    }
}

#[inline]
pub fn encode_gamma(v: f64) -> u8 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (v.powf(1.0 / DISPLAY_GAMMA) * 255.0).round() as u8
}

#[inline]
pub fn decode_gamma(b: u8) -> f64 {
    (b as f64 / 255.0).powf(DISPLAY_GAMMA)
}

fn to_bytes(pixels: &[Rgb]) -> Vec<u8> {
    pixels
        .iter()
        .flat_map(|p| [encode_gamma(p.x), encode_gamma(p.y), encode_gamma(p.z)])
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PathTracerError {
    PathTracerError::Io(format!("{}: {e}", path.display()))
}

/// Binary PPM (P6, 8-bit, gamma 2.2).
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[Rgb]) -> Result<(), PathTracerError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write!(w, "P6\n{width} {height}\n255\n").map_err(|e| io_err(path, e))?;
    w.write_all(&to_bytes(pixels)).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[Rgb]) -> Result<(), PathTracerError> {
    image::save_buffer(path, &to_bytes(pixels), width as u32, height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| io_err(path, e))
}

/// Writes PNG for a `.png` extension and PPM for anything else.
pub fn write_image(path: &Path, width: usize, height: usize, pixels: &[Rgb]) -> Result<(), PathTracerError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => write_png(path, width, height, pixels),
        _ => write_ppm(path, width, height, pixels),
    }
}

fn fmt_opt(v: Option<Rgb>) -> [String; 3] {
    match v {
        Some(v) => [v.x.to_string(), v.y.to_string(), v.z.to_string()],
        None => [String::new(), String::new(), String::new()],
    }
}

pub fn write_stats_csv(path: &Path, render: &Render) -> Result<(), PathTracerError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(STATS_HEADER).map_err(|e| io_err(path, e))?;
    for y in 0..render.height {
        for x in 0..render.width {
            let s = &render.stats[render.index(x, y)];
            let mut row = vec![x.to_string(), y.to_string(), s.n.to_string()];
            row.extend(fmt_opt(Some(s.mean_d)));
            row.extend(fmt_opt(Some(s.mean_s)));
            row.extend(fmt_opt(s.variance_d()));
            row.extend(fmt_opt(s.variance_s()));
            row.extend(fmt_opt(s.covariance_ds()));
            w.write_record(&row).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Per-pixel record read back from a statistics CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsRow {
    pub x: usize,
    pub y: usize,
    pub n: u64,
    pub mean_d: Rgb,
    pub mean_s: Rgb,
    pub var_d: Option<Rgb>,
    pub var_s: Option<Rgb>,
    pub cov_ds: Option<Rgb>,
}

pub fn read_stats_csv(path: &Path) -> Result<(usize, usize, Vec<StatsRow>), PathTracerError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().ne(STATS_HEADER.iter().copied()) {
        return Err(PathTracerError::Format(format!("{}: unexpected statistics header", path.display())));
    }
    let bad = |what: &str| PathTracerError::Format(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(STATS_HEADER[i]));
        let rgb = |i: usize| -> Result<Rgb, PathTracerError> { Ok(Rgb::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
        let opt = |i: usize| -> Result<Option<Rgb>, PathTracerError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rgb(i).map(Some)
            }
        };
        rows.push(StatsRow {
            x: rec[0].parse().map_err(|_| bad("x"))?,
            y: rec[1].parse().map_err(|_| bad("y"))?,
            n: rec[2].parse().map_err(|_| bad("n"))?,
            mean_d: rgb(3)?,
            mean_s: rgb(6)?,
            var_d: opt(9)?,
            var_s: opt(12)?,
            cov_ds: opt(15)?,
        });
    }
    let width = rows.iter().map(|r| r.x + 1).max().unwrap_or(0);
    let height = rows.iter().map(|r| r.y + 1).max().unwrap_or(0);
    if rows.len() != width * height {
        return Err(PathTracerError::Format(format!("{}: rows do not tile a full image", path.display())));
    }
    rows.sort_by_key(|r| (r.y, r.x));
    Ok((width, height, rows))
}

/// Loads linear radiance from a statistics CSV (`mean_d + mean_s`) or from a
/// PNG/PPM file (gamma 2.2 decoded).
pub fn load_linear_image(path: &Path) -> Result<LinearImage, PathTracerError> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let (width, height, rows) = read_stats_csv(path)?;
        return Ok(LinearImage {
            width,
            height,
            pixels: rows.iter().map(|r| r.mean_d + r.mean_s).collect(),
        });
    }
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = img
        .pixels()
        .map(|p| Rgb::new(decode_gamma(p[0]), decode_gamma(p[1]), decode_gamma(p[2])))
        .collect();
    Ok(LinearImage { width, height, pixels })
}

/// Per-sample variance of each pixel's total radiance, `Var[d] + Var[s] + 2 Cov[d, s]`;
/// zero where fewer than two samples were taken.
pub fn sample_variance(rows: &[StatsRow]) -> Vec<Rgb> {
    rows.iter()
        .map(|r| match (r.var_d, r.var_s, r.cov_ds) {
            (Some(d), Some(s), Some(c)) => (d + s + c * 2.0).map(|v| v.max(0.0)),
            _ => Rgb::ZERO,
        })
        .collect()
}

/// Restores per-pixel statistics exactly enough to recompute the CSV columns.
pub fn stats_from_rows(rows: &[StatsRow]) -> Vec<PixelStats> {
    rows.iter()
        .map(|r| {
            let k = r.n.saturating_sub(1) as f64;
            PixelStats {
                n: r.n,
                mean_d: r.mean_d,
                mean_s: r.mean_s,
                m2_d: r.var_d.unwrap_or_default() * k,
                m2_s: r.var_s.unwrap_or_default() * k,
                c_ds: r.cov_ds.unwrap_or_default() * k,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_endpoints() {
        assert_eq!(encode_gamma(0.0), 0);
        assert_eq!(encode_gamma(1.0), 255);
        assert_eq!(encode_gamma(7.0), 255);
        assert_eq!(encode_gamma(-1.0), 0);
        assert_eq!(encode_gamma(0.5f64.powf(2.2)), 128);
        for b in [0u8, 17, 128, 200, 255] {
            assert_eq!(encode_gamma(decode_gamma(b)), b);
        }
    }

    #[test]
    fn ppm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        write_ppm(&p, 2, 1, &[Rgb::ONE, Rgb::ZERO]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[255, 255, 255, 0, 0, 0]);
        let back = load_linear_image(&p).unwrap();
        assert_eq!(back.pixels, vec![Rgb::ONE, Rgb::ZERO]);
    }
}
