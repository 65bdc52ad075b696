use std::fs;
use std::path::Path;

use crate::error::{FansError, Result};

fn csv_err(path: &Path, e: csv::Error) -> FansError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FansError::io(path, io),
        other => FansError::Parse {
            field: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

/// `feature,score` with 0-based feature indices.
pub fn write_mask_csv(path: &Path, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["feature", "score"]).map_err(|e| csv_err(path, e))?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| FansError::io(path, e))
}

/// Inverse of [`write_mask_csv`]; rows may come in any order but every
/// feature in `0..d` must appear exactly once.
pub fn read_mask_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str| FansError::Parse {
            field: format!("{} row {row}", path.display()),
            message: format!("bad {what}"),
        };
        let feature: usize = field(0).parse().map_err(|_| parse_err("feature index"))?;
        let score: f64 = field(1)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err("score"))?;
        rows.push((feature, score));
    }
    rows.sort_by_key(|&(f, _)| f);
    for (i, &(f, _)) in rows.iter().enumerate() {
        if f != i {
            return Err(FansError::Parse {
                field: path.display().to_string(),
                message: format!("features must be 0..{} without gaps or repeats", rows.len()),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, s)| s).collect())
}

/// Pixels `round(255 (s - min) / (max - min))`, row-major; a constant mask
/// maps to all zeros.
pub fn render_heatmap(mask: &[f64], h: usize, w: usize) -> Result<Vec<u8>> {
    if h * w != mask.len() {
        return Err(FansError::Shape {
            what: "heatmap shape",
            expected: mask.len(),
            got: h * w,
        });
    }
    if mask.iter().any(|v| !v.is_finite()) {
        return Err(FansError::numeric("mask has non-finite entries"));
    }
    let min = mask.iter().copied().fold(f64::INFINITY, f64::min);
    let max = mask.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    Ok(mask
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (255.0 * (v - min) / range).round() as u8
            } else {
                0
            }
        })
        .collect())
}

/// Binary PGM (`P5`, maxval 255).
pub fn write_pgm(path: &Path, pixels: &[u8], h: usize, w: usize) -> Result<()> {
    if pixels.len() != h * w {
        return Err(FansError::Shape {
            what: "pgm pixels",
            expected: h * w,
            got: pixels.len(),
        });
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| FansError::io(path, e))
}

/// Parse a binary PGM with maxval 255. Returns `(h, w, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let err = |m: &str| FansError::Parse {
        field: "pgm".into(),
        message: m.into(),
    };
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(err("not a binary PGM"));
    }
    let num = |t: String| t.parse::<usize>().map_err(|_| err("bad header number"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    if num(token()?)? != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let data = bytes.get(start..start + h * w).ok_or_else(|| err("truncated raster"))?;
    Ok((h, w, data.to_vec()))
}
