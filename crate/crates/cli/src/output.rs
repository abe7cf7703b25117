//! File writers: CSV helpers, the GeoJSON cluster map and SVG profile charts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use areaprof::cdr::TemporalProfile;
use areaprof::geo::{Grid, Projection};
use areaprof::Result;
use serde_json::json;

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Empty string for a missing value.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// FeatureCollection of labelled grid squares with `cell_id` and `cluster`
/// properties. Rings are closed and counter-clockwise in lon/lat.
pub fn cluster_geojson(labels: &[(usize, u32)], grid: &Grid, proj: &Projection) -> String {
    let features: Vec<serde_json::Value> = labels
        .iter()
        .map(|&(cell, cluster)| {
            let r = grid.cell(cell).rect();
            let ring: Vec<[f64; 2]> = [
                (r.min.x, r.min.y),
                (r.max.x, r.min.y),
                (r.max.x, r.max.y),
                (r.min.x, r.max.y),
                (r.min.x, r.min.y),
            ]
            .iter()
            .map(|&(x, y)| {
                let (lon, lat) = proj.unproject(areaprof::geo::PlanarPoint::new(x, y));
                [lon, lat]
            })
            .collect();
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": { "cell_id": cell, "cluster": cluster },
            })
        })
        .collect();
    let fc = json!({ "type": "FeatureCollection", "features": features });
    let mut s = serde_json::to_string_pretty(&fc).expect("json serializes");
    s.push('\n');
    s
}

/// Line chart of a profile's slot means inside the `[low, high]` band.
pub fn profile_svg(profile: &TemporalProfile, bins_per_day: usize) -> String {
    const W: f64 = 960.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let n = profile.slots.len();
    let top = profile
        .slots
        .iter()
        .filter_map(|s| s.high.or(s.mean))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / top;

    let mut band_hi = Vec::new();
    let mut band_lo = Vec::new();
    let mut line = Vec::new();
    for (i, s) in profile.slots.iter().enumerate() {
        if let (Some(lo), Some(hi)) = (s.low, s.high) {
            band_hi.push(format!("{:.2},{:.2}", x(i), y(hi)));
            band_lo.push(format!("{:.2},{:.2}", x(i), y(lo)));
        }
        if let Some(m) = s.mean {
            line.push(format!("{:.2},{:.2}", x(i), y(m)));
        }
    }
    band_lo.reverse();
    band_hi.extend(band_lo);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{PAD}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">cluster {} ({} profile, alpha {})</text>\n",
        profile.key, profile.period, profile.alpha
    ));
    // day separators
    if bins_per_day > 0 {
        let mut d = bins_per_day;
        while d < n {
            out.push_str(&format!(
                "<line x1=\"{0:.2}\" y1=\"{PAD}\" x2=\"{0:.2}\" y2=\"{1:.2}\" stroke=\"#ddd\"/>\n",
                x(d),
                H - PAD
            ));
            d += bins_per_day;
        }
    }
    out.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    if !band_hi.is_empty() {
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>\n",
            band_hi.join(" ")
        ));
    }
    if !line.is_empty() {
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\"/>\n",
            line.join(" ")
        ));
    }
    out.push_str(&format!(
        "<text x=\"4\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        PAD,
        fmt_axis(top)
    ));
    out.push_str("</svg>\n");
    out
}

fn fmt_axis(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
