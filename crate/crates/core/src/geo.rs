//! Planar geometry: projection, convex polygons, rectangle clipping,
//! Voronoi tessellation and the grid/tower intersection weights.

use std::io::Read;

use crate::error::{input, Error, Result};
use crate::report::{check_header, line_of, ParseReport};

/// Mean Earth radius used by the equirectangular projection, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(self, other: PlanarPoint) -> (f64, f64) {
        (self.x - other.x, self.y - other.y)
    }
}

/// Equirectangular projection around a fixed origin, scaled at a fixed
/// mean latitude. Planar coordinates are meters east/north of the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin_lon: f64,
    origin_lat: f64,
    mean_lat: f64,
    cos_mean: f64,
}

fn check_lon_lat(lon: f64, lat: f64) -> Result<()> {
    if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
        return input(format!("longitude {lon} outside [-180, 180]"));
    }
    if !lat.is_finite() || lat <= -90.0 || lat >= 90.0 {
        return input(format!("latitude {lat} outside (-90, 90)"));
    }
    Ok(())
}

impl Projection {
    pub fn new(origin_lon: f64, origin_lat: f64, mean_lat: f64) -> Result<Self> {
        check_lon_lat(origin_lon, origin_lat)?;
        check_lon_lat(origin_lon, mean_lat)?;
        Ok(Self {
            origin_lon,
            origin_lat,
            mean_lat,
            cos_mean: mean_lat.to_radians().cos(),
        })
    }

    /// Projection anchored at the south-west corner of a lon/lat box and
    /// scaled at the box's middle latitude.
    pub fn for_bounds(bounds: &GeoBounds) -> Result<Self> {
        Self::new(
            bounds.lon_min,
            bounds.lat_min,
            0.5 * (bounds.lat_min + bounds.lat_max),
        )
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_lon, self.origin_lat)
    }

    pub fn mean_lat(&self) -> f64 {
        self.mean_lat
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<PlanarPoint> {
        check_lon_lat(lon, lat)?;
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Ok(PlanarPoint {
            x: k * (lon - self.origin_lon) * self.cos_mean,
            y: k * (lat - self.origin_lat),
        })
    }

    /// Inverse of [`Projection::project`], returning `(lon, lat)`.
    pub fn unproject(&self, p: PlanarPoint) -> (f64, f64) {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        (
            self.origin_lon + p.x / (k * self.cos_mean),
            self.origin_lat + p.y / k,
        )
    }
}

/// A lon/lat bounding box in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBounds {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl GeoBounds {
    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self> {
        check_lon_lat(lon_min, lat_min)?;
        check_lon_lat(lon_max, lat_max)?;
        if lon_min >= lon_max || lat_min >= lat_max {
            return input("bounding box must have positive extent");
        }
        Ok(Self {
            lon_min,
            lat_min,
            lon_max,
            lat_max,
        })
    }

    /// Smallest box containing all points, or `None` for an empty input.
    pub fn enclosing(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter();
        let (lon, lat) = it.next()?;
        let mut b = GeoBounds {
            lon_min: lon,
            lat_min: lat,
            lon_max: lon,
            lat_max: lat,
        };
        for (lon, lat) in it {
            b.lon_min = b.lon_min.min(lon);
            b.lon_max = b.lon_max.max(lon);
            b.lat_min = b.lat_min.min(lat);
            b.lat_max = b.lat_max.max(lat);
        }
        Some(b)
    }

    /// Grows the box by `meters` on every side.
    pub fn padded(&self, meters: f64) -> Result<Self> {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let mean = 0.5 * (self.lat_min + self.lat_max);
        let dlat = meters / k;
        let dlon = meters / (k * mean.to_radians().cos());
        GeoBounds::new(
            self.lon_min - dlon,
            self.lat_min - dlat,
            self.lon_max + dlon,
            self.lat_max + dlat,
        )
    }
}

/// Axis-aligned rectangle in the projected plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: PlanarPoint,
    pub max: PlanarPoint,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let ok = [min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite());
        if !ok || min_x >= max_x || min_y >= max_y {
            return Err(Error::Geometry(format!(
                "rectangle [{min_x}, {max_x}] x [{min_y}, {max_y}] has no area"
            )));
        }
        Ok(Self {
            min: PlanarPoint::new(min_x, min_y),
            max: PlanarPoint::new(max_x, max_y),
        })
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed containment test.
    pub fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn corners(&self) -> Vec<PlanarPoint> {
        vec![
            self.min,
            PlanarPoint::new(self.max.x, self.min.y),
            self.max,
            PlanarPoint::new(self.min.x, self.max.y),
        ]
    }

    pub fn to_polygon(&self) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.corners(),
        }
    }
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn signed_area(pts: &[PlanarPoint]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

fn extent_sq(pts: &[PlanarPoint]) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    (x1 - x0).powi(2) + (y1 - y0).powi(2)
}

/// Drops consecutive vertices closer than a scale-relative epsilon,
/// including the wrap-around pair.
fn dedup_ring(pts: &mut Vec<PlanarPoint>) {
    if pts.is_empty() {
        return;
    }
    let eps = 1e-12 * extent_sq(pts).sqrt().max(1.0);
    pts.dedup_by(|b, a| a.dist(*b) <= eps);
    while pts.len() > 1 && pts[0].dist(pts[pts.len() - 1]) <= eps {
        pts.pop();
    }
}

/// Convex polygon with counter-clockwise vertices and positive area.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<PlanarPoint>,
}

impl ConvexPolygon {
    /// Validates and normalises a vertex ring. Clockwise input is reversed;
    /// repeated consecutive vertices are removed.
    pub fn new(vertices: Vec<PlanarPoint>) -> Result<Self> {
        let mut pts = vertices;
        if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Geometry("non-finite vertex".into()));
        }
        dedup_ring(&mut pts);
        if pts.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                pts.len()
            )));
        }
        let area = signed_area(&pts);
        let scale = extent_sq(&pts);
        if area.abs() <= 1e-12 * scale {
            return Err(Error::Geometry("degenerate (collinear) polygon".into()));
        }
        if area < 0.0 {
            pts.reverse();
        }
        let n = pts.len();
        for i in 0..n {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            let c = pts[(i + 2) % n];
            if cross(b.sub(a), c.sub(b)) < -1e-9 * scale {
                return Err(Error::Geometry("polygon is not convex".into()));
            }
        }
        Ok(Self { vertices: pts })
    }

    /// Builds a polygon from a clipping result, treating anything without
    /// measurable area as empty.
    fn from_clip(mut pts: Vec<PlanarPoint>) -> Option<Self> {
        dedup_ring(&mut pts);
        if pts.len() < 3 {
            return None;
        }
        let area = signed_area(&pts);
        if area <= 1e-12 * extent_sq(&pts) {
            return None;
        }
        Some(Self { vertices: pts })
    }

    pub fn vertices(&self) -> &[PlanarPoint] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Closed containment test with a small tolerance on edges.
    pub fn contains(&self, p: PlanarPoint) -> bool {
        let n = self.vertices.len();
        let tol = 1e-9 * extent_sq(&self.vertices).sqrt().max(1.0);
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let len = a.dist(b);
            cross(b.sub(a), p.sub(a)) >= -tol * len
        })
    }

    pub fn bounding_rect(&self) -> Rect {
        let mut r = Rect {
            min: self.vertices[0],
            max: self.vertices[0],
        };
        for p in &self.vertices[1..] {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        r
    }

    /// Intersection with another convex polygon, `None` when empty.
    pub fn intersect(&self, clip: &ConvexPolygon) -> Option<ConvexPolygon> {
        let mut pts = self.vertices.clone();
        let n = clip.vertices.len();
        for i in 0..n {
            let a = clip.vertices[i];
            let b = clip.vertices[(i + 1) % n];
            // Outward normal of a counter-clockwise edge.
            let normal = (b.y - a.y, a.x - b.x);
            pts = clip_halfplane(&pts, a, normal);
            if pts.is_empty() {
                return None;
            }
        }
        ConvexPolygon::from_clip(pts)
    }
}

/// Sutherland–Hodgman step: keeps the part of `poly` where
/// `normal · (p - origin) <= 0`.
fn clip_halfplane(
    poly: &[PlanarPoint],
    origin: PlanarPoint,
    normal: (f64, f64),
) -> Vec<PlanarPoint> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let Some(&last) = poly.last() else {
        return out;
    };
    let side = |p: PlanarPoint| normal.0 * (p.x - origin.x) + normal.1 * (p.y - origin.y);
    let mut prev = last;
    let mut prev_side = side(prev);
    for &cur in poly {
        let cur_side = side(cur);
        let cur_in = cur_side <= 0.0;
        if cur_in != (prev_side <= 0.0) {
            let t = prev_side / (prev_side - cur_side);
            out.push(PlanarPoint::new(
                prev.x + t * (cur.x - prev.x),
                prev.y + t * (cur.y - prev.y),
            ));
        }
        if cur_in {
            out.push(cur);
        }
        prev = cur;
        prev_side = cur_side;
    }
    out
}

/// Shoelace area of a convex polygon.
pub fn polygon_area(poly: &ConvexPolygon) -> f64 {
    poly.area()
}

/// Clips `a` against the rectangle `b`; an empty intersection is `None`.
pub fn clip_intersection(a: &ConvexPolygon, b: &Rect) -> Option<ConvexPolygon> {
    a.intersect(&b.to_polygon())
}

/// Voronoi cells of `sites` restricted to `bbox`, one per site in input order.
///
/// Each cell starts as the box and is cut by the bisector half-plane of every
/// other site, so the cost is quadratic in the number of sites.
pub fn voronoi(sites: &[PlanarPoint], bbox: &Rect) -> Result<Vec<ConvexPolygon>> {
    if sites.is_empty() {
        return input("voronoi needs at least one site");
    }
    for (i, s) in sites.iter().enumerate() {
        if !bbox.contains(*s) {
            return input(format!("site {i} at ({}, {}) is outside the box", s.x, s.y));
        }
    }
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| {
        sites[a]
            .x
            .total_cmp(&sites[b].x)
            .then(sites[a].y.total_cmp(&sites[b].y))
    });
    for w in order.windows(2) {
        if sites[w[0]] == sites[w[1]] {
            return input(format!("duplicate sites {} and {}", w[0], w[1]));
        }
    }

    let frame = bbox.corners();
    sites
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut cell = frame.clone();
            for (j, &t) in sites.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mid = PlanarPoint::new(0.5 * (s.x + t.x), 0.5 * (s.y + t.y));
                cell = clip_halfplane(&cell, mid, (t.x - s.x, t.y - s.y));
            }
            ConvexPolygon::from_clip(cell)
                .ok_or_else(|| Error::Geometry(format!("voronoi cell of site {i} collapsed")))
        })
        .collect()
}

/// One square of the analysis grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub id: usize,
    pub min: PlanarPoint,
    pub side: f64,
}

impl GridCell {
    pub fn rect(&self) -> Rect {
        Rect {
            min: self.min,
            max: PlanarPoint::new(self.min.x + self.side, self.min.y + self.side),
        }
    }

    pub fn center(&self) -> PlanarPoint {
        PlanarPoint::new(self.min.x + 0.5 * self.side, self.min.y + 0.5 * self.side)
    }
}

/// Regular square grid; cell ids run row-major from the south-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: PlanarPoint,
    pub side: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(origin: PlanarPoint, side: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return input(format!("grid cell size must be positive, got {side}"));
        }
        if nx == 0 || ny == 0 {
            return input("grid must have at least one row and column");
        }
        Ok(Self {
            origin,
            side,
            nx,
            ny,
        })
    }

    /// Smallest grid anchored at the box's min corner that covers the box.
    pub fn covering(bbox: &Rect, side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return input(format!("grid cell size must be positive, got {side}"));
        }
        let count = |len: f64| ((len / side) - 1e-9).ceil().max(1.0) as usize;
        Self::new(bbox.min, side, count(bbox.width()), count(bbox.height()))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            min: self.origin,
            max: PlanarPoint::new(
                self.origin.x + self.side * self.nx as f64,
                self.origin.y + self.side * self.ny as f64,
            ),
        }
    }

    pub fn cell(&self, id: usize) -> GridCell {
        let (col, row) = (id % self.nx, id / self.nx);
        GridCell {
            id,
            min: PlanarPoint::new(
                self.origin.x + self.side * col as f64,
                self.origin.y + self.side * row as f64,
            ),
            side: self.side,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = GridCell> + '_ {
        (0..self.len()).map(|id| self.cell(id))
    }

    pub fn col_row(&self, id: usize) -> (usize, usize) {
        (id % self.nx, id / self.nx)
    }

    /// Cell containing `p` under half-open bounds `[min, min + side)`.
    pub fn cell_of(&self, p: PlanarPoint) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.side).floor();
        let fy = ((p.y - self.origin.y) / self.side).floor();
        if !(fx >= 0.0 && fy >= 0.0) || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some(fy as usize * self.nx + fx as usize)
    }

    fn index_span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
        let a = lo.floor().max(0.0).min(n as f64) as usize;
        let b = hi.ceil().max(0.0).min(n as f64) as usize;
        a..b
    }

    /// Ids of cells whose square overlaps `r`, row-major.
    pub fn cells_overlapping(&self, r: &Rect) -> Vec<usize> {
        let cols = Self::index_span(
            (r.min.x - self.origin.x) / self.side,
            (r.max.x - self.origin.x) / self.side,
            self.nx,
        );
        let rows = Self::index_span(
            (r.min.y - self.origin.y) / self.side,
            (r.max.y - self.origin.y) / self.side,
            self.ny,
        );
        rows.flat_map(|row| cols.clone().map(move |col| row * self.nx + col))
            .collect()
    }
}

/// `(cell id, area(cell ∩ p) / area(p))` for every grid cell with a
/// positive-area overlap with `p`.
pub fn intersection_weights(p: &ConvexPolygon, grid: &Grid) -> Result<Vec<(usize, f64)>> {
    let total = p.area();
    if !(total > 0.0) {
        return Err(Error::Geometry("polygon has zero area".into()));
    }
    let mut out = Vec::new();
    for id in grid.cells_overlapping(&p.bounding_rect()) {
        if let Some(piece) = clip_intersection(p, &grid.cell(id).rect()) {
            let w = (piece.area() / total).min(1.0);
            if w > 0.0 {
                out.push((id, w));
            }
        }
    }
    Ok(out)
}

/// Coverage polygon of one tower and its grid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerCoverage {
    pub tower_id: String,
    pub site: PlanarPoint,
    pub polygon: ConvexPolygon,
    pub cell_weights: Vec<(usize, f64)>,
}

impl TowerCoverage {
    pub fn weight_sum(&self) -> f64 {
        self.cell_weights.iter().map(|(_, w)| w).sum()
    }
}

/// Voronoi coverage of every tower within `bbox`, with grid weights.
/// The result is sorted by tower id.
pub fn tower_coverage(
    towers: &[(String, PlanarPoint)],
    bbox: &Rect,
    grid: &Grid,
) -> Result<Vec<TowerCoverage>> {
    let sites: Vec<PlanarPoint> = towers.iter().map(|(_, p)| *p).collect();
    let polys = voronoi(&sites, bbox)?;
    let mut out = towers
        .iter()
        .zip(polys)
        .map(|((id, site), polygon)| {
            let cell_weights = intersection_weights(&polygon, grid)?;
            Ok(TowerCoverage {
                tower_id: id.clone(),
                site: *site,
                polygon,
                cell_weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.tower_id.cmp(&b.tower_id));
    for w in out.windows(2) {
        if w[0].tower_id == w[1].tower_id {
            return input(format!("duplicate tower id {}", w[0].tower_id));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerRecord {
    pub tower_id: String,
    pub lon: f64,
    pub lat: f64,
}

/// Parses a towers CSV (`tower_id,lon,lat`). Malformed rows and repeated
/// ids are collected in the report; the first occurrence of an id wins.
pub fn parse_towers<R: Read>(reader: R) -> Result<(Vec<TowerRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(rdr.headers()?, &["tower_id", "lon", "lat"])?;
    let mut report = ParseReport::default();
    let mut out: Vec<TowerRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1;
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => line = line_of(&rec),
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(e) => {
                line += 1;
                report.reject(line, e.to_string());
                continue;
            }
        }
        if rec.len() != 3 {
            report.reject(line, format!("expected 3 fields, found {}", rec.len()));
            continue;
        }
        let (Ok(lon), Ok(lat)) = (rec[1].parse::<f64>(), rec[2].parse::<f64>()) else {
            report.reject(line, "unparseable coordinates");
            continue;
        };
        if check_lon_lat(lon, lat).is_err() {
            report.reject(line, "coordinates out of range");
            continue;
        }
        if rec[0].is_empty() {
            report.reject(line, "empty tower_id");
            continue;
        }
        if !seen.insert(rec[0].to_string()) {
            report.reject(line, format!("duplicate tower_id {}", &rec[0]));
            continue;
        }
        report.accepted += 1;
        out.push(TowerRecord {
            tower_id: rec[0].to_string(),
            lon,
            lat,
        });
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(pts: &[(f64, f64)]) -> ConvexPolygon {
        ConvexPolygon::new(pts.iter().map(|&(x, y)| PlanarPoint::new(x, y)).collect()).unwrap()
    }

    fn haversine(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
        let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
        let dp = p2 - p1;
        let dl = (lon2 - lon1).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().asin()
    }

    #[test]
    fn origin_maps_to_origin() {
        let pr = Projection::new(11.10, 46.05, 46.06).unwrap();
        let p = pr.project(11.10, 46.05).unwrap();
        assert_eq!((p.x, p.y), (0.0, 0.0));
    }

    #[test]
    fn pure_east_displacement() {
        let pr = Projection::new(11.10, 46.05, 46.06).unwrap();
        let d = 0.01;
        let p = pr.project(11.10 + d, 46.05).unwrap();
        let expect = EARTH_RADIUS_M * d * 46.06f64.to_radians().cos() * std::f64::consts::PI / 180.0;
        assert!((p.x - expect).abs() < 1e-9);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn projection_agrees_with_haversine() {
        let pr = Projection::new(11.10, 46.05, 46.06).unwrap();
        let p = pr.project(11.12, 46.07).unwrap();
        let planar = (p.x * p.x + p.y * p.y).sqrt();
        let sphere = haversine(11.10, 46.05, 11.12, 46.07);
        assert!((planar - sphere).abs() / sphere < 0.005, "{planar} vs {sphere}");
        let (lon, lat) = pr.unproject(p);
        assert!((lon - 11.12).abs() < 1e-12 && (lat - 46.07).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_bad_coordinates() {
        let pr = Projection::new(0.0, 0.0, 0.0).unwrap();
        assert!(matches!(pr.project(181.0, 0.0), Err(Error::Input(_))));
        assert!(matches!(pr.project(0.0, 90.0), Err(Error::Input(_))));
        assert!(pr.project(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn shoelace_areas() {
        assert_eq!(polygon_area(&poly(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)])), 1.0);
        assert_eq!(polygon_area(&poly(&[(0., 0.), (2., 0.), (0., 2.)])), 2.0);
        // clockwise input is reoriented
        assert_eq!(polygon_area(&poly(&[(0., 0.), (0., 2.), (2., 0.)])), 2.0);
    }

    #[test]
    fn degenerate_polygons_rejected() {
        let collinear = vec![
            PlanarPoint::new(0., 0.),
            PlanarPoint::new(1., 1.),
            PlanarPoint::new(2., 2.),
        ];
        assert!(matches!(ConvexPolygon::new(collinear), Err(Error::Geometry(_))));
        let repeated = vec![PlanarPoint::new(0., 0.), PlanarPoint::new(0., 0.), PlanarPoint::new(1., 0.)];
        assert!(ConvexPolygon::new(repeated).is_err());
        let concave = vec![
            PlanarPoint::new(0., 0.),
            PlanarPoint::new(4., 0.),
            PlanarPoint::new(1., 1.),
            PlanarPoint::new(0., 4.),
        ];
        assert!(ConvexPolygon::new(concave).is_err());
    }

    #[test]
    fn clip_offset_squares() {
        let a = poly(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)]);
        let b = Rect::new(0.5, 0.5, 1.5, 1.5).unwrap();
        let c = clip_intersection(&a, &b).unwrap();
        assert!((c.area() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clip_disjoint_is_empty() {
        let a = poly(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)]);
        assert!(clip_intersection(&a, &Rect::new(2., 2., 3., 3.).unwrap()).is_none());
        // sharing only an edge is empty too
        assert!(clip_intersection(&a, &Rect::new(1., 0., 2., 1.).unwrap()).is_none());
    }

    #[test]
    fn clip_against_containing_rect_is_identity() {
        let a = poly(&[(1., 1.), (3., 1.5), (2.5, 3.), (1.2, 2.5)]);
        let c = clip_intersection(&a, &Rect::new(0., 0., 10., 10.).unwrap()).unwrap();
        assert!((c.area() - a.area()).abs() < 1e-9);
    }

    #[test]
    fn two_site_bisector() {
        let bbox = Rect::new(-5., -5., 15., 5.).unwrap();
        let cells = voronoi(&[PlanarPoint::new(0., 0.), PlanarPoint::new(10., 0.)], &bbox).unwrap();
        let r0 = cells[0].bounding_rect();
        let r1 = cells[1].bounding_rect();
        assert!((r0.max.x - 5.0).abs() < 1e-12 && (r0.min.x + 5.0).abs() < 1e-12);
        assert!((r1.min.x - 5.0).abs() < 1e-12 && (r1.max.x - 15.0).abs() < 1e-12);
        assert!((cells[0].area() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn single_site_is_whole_box() {
        let bbox = Rect::new(0., 0., 7., 3.).unwrap();
        let cells = voronoi(&[PlanarPoint::new(1., 1.)], &bbox).unwrap();
        assert_eq!(cells.len(), 1);
        assert!((cells[0].area() - 21.0).abs() < 1e-12);
    }

    #[test]
    fn voronoi_input_errors() {
        let bbox = Rect::new(0., 0., 10., 10.).unwrap();
        let p = PlanarPoint::new(1., 1.);
        assert!(matches!(voronoi(&[p, p], &bbox), Err(Error::Input(_))));
        assert!(matches!(voronoi(&[], &bbox), Err(Error::Input(_))));
        assert!(voronoi(&[PlanarPoint::new(11., 1.)], &bbox).is_err());
    }

    #[test]
    fn cell_inside_polygon_weight() {
        let grid = Grid::new(PlanarPoint::new(0., 0.), 50.0, 2, 2).unwrap();
        let p = Rect::new(0., 0., 100., 100.).unwrap().to_polygon();
        let w = intersection_weights(&p, &grid).unwrap();
        assert_eq!(w.len(), 4);
        for (_, wi) in &w {
            assert!((wi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn polygon_equal_to_cell() {
        let grid = Grid::new(PlanarPoint::new(0., 0.), 50.0, 3, 3).unwrap();
        let p = grid.cell(4).rect().to_polygon();
        let w = intersection_weights(&p, &grid).unwrap();
        assert_eq!(w, vec![(4, 1.0)]);
    }

    #[test]
    fn straddling_polygon_weights_sum_to_one() {
        let grid = Grid::new(PlanarPoint::new(0., 0.), 50.0, 4, 4).unwrap();
        let p = poly(&[(30., 40.), (80., 20.), (90., 70.), (45., 85.)]);
        let w = intersection_weights(&p, &grid).unwrap();
        assert!(w.len() >= 4);
        // oracle: area additivity over cell pieces
        let pieces: f64 = grid
            .cells()
            .filter_map(|c| clip_intersection(&p, &c.rect()))
            .map(|q| q.area())
            .sum();
        assert!((pieces - p.area()).abs() < 1e-9);
        let s: f64 = w.iter().map(|(_, x)| x).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn half_open_cells() {
        let grid = Grid::new(PlanarPoint::new(0., 0.), 50.0, 2, 1).unwrap();
        assert_eq!(grid.cell_of(PlanarPoint::new(50.0, 10.0)), Some(1));
        assert_eq!(grid.cell_of(PlanarPoint::new(0.0, 0.0)), Some(0));
        assert_eq!(grid.cell_of(PlanarPoint::new(100.0, 10.0)), None);
        assert_eq!(grid.cell_of(PlanarPoint::new(-0.1, 10.0)), None);
    }

    #[test]
    fn covering_grid_tolerates_rounding() {
        let r = Rect::new(0., 0., 1000.0000000001, 499.99).unwrap();
        let g = Grid::covering(&r, 50.0).unwrap();
        assert_eq!((g.nx, g.ny), (20, 10));
    }

    #[test]
    fn tower_rows() {
        let text = "tower_id,lon,lat\nA,11.1,46.0\nB,x,46\nA,11.2,46.1\nC,11.3,95\nD,11.4,46.2\n";
        let (towers, report) = parse_towers(text.as_bytes()).unwrap();
        assert_eq!(towers.iter().map(|t| t.tower_id.as_str()).collect::<Vec<_>>(), ["A", "D"]);
        assert_eq!(report.rejected.iter().map(|r| r.line).collect::<Vec<_>>(), [3, 4, 5]);
        assert!(parse_towers("id,lon,lat\n".as_bytes()).is_err());
    }
}
