//! Map CSV reading and writing.
//!
//! ```text
//! # skyplan-map v1
//! # origin_x,origin_y,resolution,nx,ny,altitude,beam_count
//! 0,0,1,635,302,98,7
//! 0,0,0,-71.2034
//! 0,1,0,NaN
//! ...
//! ```
//!
//! Data rows are `beam_id,ix,iy,rsrp_dbm`, written beam-major, then `iy`, then
//! `ix`. Values carry at most four fraction digits; missing cells are `NaN`.

use std::fmt::Write as _;
use std::path::Path;

use super::{rsrp_in_range, validate_geometry, CoverageMap, MapError};

pub const MAP_HEADER: &str = "# skyplan-map v1";
const FIELDS_LINE: &str = "# origin_x,origin_y,resolution,nx,ny,altitude,beam_count";
const MAX_FRACTION_DIGITS: usize = 4;

pub fn load_map(path: impl AsRef<Path>) -> Result<CoverageMap, MapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_map(&text)
}

pub fn save_map(map: &CoverageMap, path: impl AsRef<Path>) -> Result<(), MapError> {
    let path = path.as_ref();
    std::fs::write(path, render_map(map)).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Canonical text form of a map.
pub fn render_map(map: &CoverageMap) -> String {
    let mut out = String::with_capacity(map.values().len() * 20 + 128);
    out.push_str(MAP_HEADER);
    out.push('\n');
    out.push_str(FIELDS_LINE);
    out.push('\n');
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        map.origin.0, map.origin.1, map.resolution, map.nx, map.ny, map.altitude, map.beam_count
    );
    for b in 0..map.beam_count {
        for iy in 0..map.ny {
            for ix in 0..map.nx {
                let v = map.node(b, ix, iy);
                if v.is_nan() {
                    let _ = writeln!(out, "{b},{ix},{iy},NaN");
                } else {
                    let _ = writeln!(out, "{b},{ix},{iy},{v:.4}");
                }
            }
        }
    }
    out
}

pub fn parse_map(text: &str) -> Result<CoverageMap, MapError> {
    let err = |line: usize, msg: String| MapError::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    match lines.next() {
        Some((_, l)) if l.trim() == MAP_HEADER => {}
        Some((n, l)) => return Err(err(n, format!("expected header `{MAP_HEADER}`, found `{l}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    match lines.next() {
        Some((_, l)) if l.trim() == FIELDS_LINE => {}
        Some((n, l)) => return Err(err(n, format!("expected `{FIELDS_LINE}`, found `{l}`"))),
        None => return Err(err(2, "missing metadata field line".into())),
    }
    let (meta_line, meta) = lines.next().ok_or_else(|| err(3, "missing metadata values".into()))?;
    let parts: Vec<&str> = meta.split(',').map(str::trim).collect();
    if parts.len() != 7 {
        return Err(err(meta_line, format!("expected 7 metadata values, found {}", parts.len())));
    }
    let float = |s: &str, name: &str| -> Result<f64, MapError> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(meta_line, format!("bad {name} `{s}`")))
    };
    let count = |s: &str, name: &str| -> Result<usize, MapError> {
        s.parse::<usize>().map_err(|_| err(meta_line, format!("bad {name} `{s}`")))
    };
    let origin = (float(parts[0], "origin_x")?, float(parts[1], "origin_y")?);
    let resolution = float(parts[2], "resolution")?;
    let nx = count(parts[3], "nx")?;
    let ny = count(parts[4], "ny")?;
    let altitude = float(parts[5], "altitude")?;
    let beam_count = count(parts[6], "beam_count")?;
    validate_geometry(origin, resolution, nx, ny, altitude, beam_count).map_err(|m| err(meta_line, m))?;
    let mut map = CoverageMap::empty(origin, resolution, nx, ny, altitude, beam_count)
        .map_err(|e| err(meta_line, e.to_string()))?;

    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(n, format!("expected `beam_id,ix,iy,rsrp_dbm`, found `{line}`")));
        }
        let idx = |s: &str, name: &str| -> Result<usize, MapError> {
            s.parse::<usize>().map_err(|_| err(n, format!("bad {name} `{s}`")))
        };
        let (beam, ix, iy) = (idx(f[0], "beam_id")?, idx(f[1], "ix")?, idx(f[2], "iy")?);
        if beam >= beam_count {
            return Err(err(n, format!("beam {beam} out of range (beam_count = {beam_count})")));
        }
        if ix >= nx || iy >= ny {
            return Err(err(n, format!("cell ({ix}, {iy}) outside the {nx}x{ny} grid")));
        }
        let value = parse_rsrp(f[3]).map_err(|m| err(n, m))?;
        map.set_node(beam, ix, iy, value).map_err(|e| err(n, e.to_string()))?;
    }
    Ok(map)
}

fn parse_rsrp(s: &str) -> Result<f64, String> {
    if s == "NaN" {
        return Ok(f64::NAN);
    }
    let body = s.strip_prefix('-').or_else(|| s.strip_prefix('+')).unwrap_or(s);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits_ok = !int.is_empty()
        && int.bytes().all(|c| c.is_ascii_digit())
        && frac.bytes().all(|c| c.is_ascii_digit())
        && !(body.contains('.') && frac.is_empty());
    if !digits_ok {
        return Err(format!("bad rsrp_dbm `{s}`"));
    }
    if frac.len() > MAX_FRACTION_DIGITS {
        return Err(format!("rsrp_dbm `{s}` has more than {MAX_FRACTION_DIGITS} fraction digits"));
    }
    let v: f64 = s.parse().map_err(|_| format!("bad rsrp_dbm `{s}`"))?;
    if !rsrp_in_range(v) {
        return Err(format!("rsrp_dbm {v} outside [-160, -20] dBm"));
    }
    Ok(v)
}
