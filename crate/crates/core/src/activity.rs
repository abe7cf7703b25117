//! Activity profiles of grid cells: POI parsing, the POI-type taxonomy,
//! per-cell category counts and TF-IDF weighting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use crate::error::{input, Error, Result};
use crate::geo::{Grid, Projection};
use crate::report::{check_header, line_of, ParseReport};

pub const N_CATEGORIES: usize = 10;

/// Top-level human-activity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityCategory {
    Eating,
    Shopping,
    HealthMedicine,
    Entertainment,
    Education,
    Transport,
    Outdoor,
    Sporting,
    Working,
    Residential,
}

impl ActivityCategory {
    pub const ALL: [ActivityCategory; N_CATEGORIES] = [
        ActivityCategory::Eating,
        ActivityCategory::Shopping,
        ActivityCategory::HealthMedicine,
        ActivityCategory::Entertainment,
        ActivityCategory::Education,
        ActivityCategory::Transport,
        ActivityCategory::Outdoor,
        ActivityCategory::Sporting,
        ActivityCategory::Working,
        ActivityCategory::Residential,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityCategory::Eating => "eating",
            ActivityCategory::Shopping => "shopping",
            ActivityCategory::HealthMedicine => "health_medicine",
            ActivityCategory::Entertainment => "entertainment",
            ActivityCategory::Education => "education",
            ActivityCategory::Transport => "transport",
            ActivityCategory::Outdoor => "outdoor",
            ActivityCategory::Sporting => "sporting",
            ActivityCategory::Working => "working",
            ActivityCategory::Residential => "residential",
        }
    }
}

impl fmt::Display for ActivityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = normalize_key(s);
        ActivityCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::Input(format!("unknown activity category `{s}`")))
    }
}

fn normalize_key(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

/// Outcome of looking a POI type up in the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Categorized {
    Category(ActivityCategory),
    /// Explicitly listed as irrelevant.
    Discarded,
    /// Not listed at all; treated as discarded and counted separately.
    Unknown,
}

/// Mapping from POI type tags to activity categories, plus a discard set.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    map: HashMap<String, ActivityCategory>,
    discard: HashSet<String>,
}

const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.csv");

impl Taxonomy {
    /// The bundled taxonomy, seeded from common OSM tags for each category.
    pub fn builtin() -> Self {
        Self::from_reader(DEFAULT_TAXONOMY.as_bytes()).expect("bundled taxonomy is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Input(format!("cannot read taxonomy {}: {e}", path.as_ref().display()))
        })?;
        Self::from_reader(file)
    }

    /// Reads `poi_type,category` rows; `DISCARD` as the category puts the
    /// type in the discard set. A type may appear only once.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        check_header(rdr.headers()?, &["poi_type", "category"])?;
        let mut tax = Taxonomy::default();
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            let poi_type = normalize_key(&rec[0]);
            if poi_type.is_empty() {
                return input(format!("taxonomy line {line}: empty poi_type"));
            }
            if tax.map.contains_key(&poi_type) || tax.discard.contains(&poi_type) {
                return input(format!("taxonomy line {line}: `{poi_type}` listed twice"));
            }
            if rec[1].trim() == "DISCARD" {
                tax.discard.insert(poi_type);
            } else {
                let cat = rec[1]
                    .parse()
                    .map_err(|e| Error::Input(format!("taxonomy line {line}: {e}")))?;
                tax.map.insert(poi_type, cat);
            }
        }
        Ok(tax)
    }

    pub fn insert(&mut self, poi_type: &str, category: ActivityCategory) {
        self.map.insert(normalize_key(poi_type), category);
    }

    pub fn insert_discard(&mut self, poi_type: &str) {
        self.discard.insert(normalize_key(poi_type));
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Looks up a POI type. Matching ignores case, and treats spaces and
/// dashes as underscores.
pub fn categorize(poi_type: &str, tax: &Taxonomy) -> Categorized {
    let key = normalize_key(poi_type);
    if let Some(&c) = tax.map.get(&key) {
        Categorized::Category(c)
    } else if tax.discard.contains(&key) {
        Categorized::Discarded
    } else {
        Categorized::Unknown
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub poi_type: String,
    pub category: ActivityCategory,
}

/// Parses a POI CSV (`id,lon,lat,poi_type`) keeping only rows whose type
/// maps to a category. Malformed rows are collected in the report.
pub fn parse_pois<R: Read>(reader: R, tax: &Taxonomy) -> Result<(Vec<PoiRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(rdr.headers()?, &["id", "lon", "lat", "poi_type"])?;
    let mut report = ParseReport::default();
    let mut out = Vec::new();
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
        if rec.len() != 4 {
            report.reject(line, format!("expected 4 fields, found {}", rec.len()));
            continue;
        }
        let (Ok(lon), Ok(lat)) = (rec[1].parse::<f64>(), rec[2].parse::<f64>()) else {
            report.reject(line, "unparseable coordinates");
            continue;
        };
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon))
            || !(lat.is_finite() && lat > -90.0 && lat < 90.0)
        {
            report.reject(line, "coordinates out of range");
            continue;
        }
        if rec[0].is_empty() || rec[3].is_empty() {
            report.reject(line, "empty id or poi_type");
            continue;
        }
        match categorize(&rec[3], tax) {
            Categorized::Category(category) => {
                report.accepted += 1;
                out.push(PoiRecord {
                    id: rec[0].to_string(),
                    lon,
                    lat,
                    poi_type: rec[3].to_string(),
                    category,
                });
            }
            Categorized::Discarded => report.discarded += 1,
            Categorized::Unknown => report.unknown_type += 1,
        }
    }
    Ok((out, report))
}

/// Per-cell category counts, indexed by grid cell id.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    rows: Vec<[u32; N_CATEGORIES]>,
}

impl CountMatrix {
    pub fn zeros(n_cells: usize) -> Self {
        Self {
            rows: vec![[0; N_CATEGORIES]; n_cells],
        }
    }

    pub fn from_rows(rows: Vec<[u32; N_CATEGORIES]>) -> Self {
        Self { rows }
    }

    pub fn n_cells(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, cell: usize) -> &[u32; N_CATEGORIES] {
        &self.rows[cell]
    }

    pub fn add(&mut self, cell: usize, cat: ActivityCategory) {
        self.rows[cell][cat.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .map(|&c| c as u64)
            .sum()
    }

    pub fn nonempty_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().any(|&c| c > 0))
            .map(|(i, _)| i)
    }

    /// Element-wise sum; used to merge partial counts.
    pub fn merge(&mut self, other: &CountMatrix) {
        assert_eq!(self.rows.len(), other.rows.len(), "count matrices differ in size");
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            for j in 0..N_CATEGORIES {
                a[j] += b[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPopulation {
    pub counts: CountMatrix,
    /// POIs that fell outside the grid.
    pub outside: usize,
}

/// Counts POIs per (cell, category) under half-open cell bounds.
pub fn populate_grid(pois: &[PoiRecord], proj: &Projection, grid: &Grid) -> Result<GridPopulation> {
    let mut counts = CountMatrix::zeros(grid.len());
    let mut outside = 0;
    for poi in pois {
        let p = proj.project(poi.lon, poi.lat)?;
        match grid.cell_of(p) {
            Some(cell) => counts.add(cell, poi.category),
            None => outside += 1,
        }
    }
    Ok(GridPopulation { counts, outside })
}

/// TF-IDF weights of one profiled cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityVector {
    pub cell_id: usize,
    pub weights: [f64; N_CATEGORIES],
}

impl ActivityVector {
    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    /// Cells with at least one positive weight, in cell id order.
    pub vectors: Vec<ActivityVector>,
    pub idf: [f64; N_CATEGORIES],
    /// Number of cells with at least one POI.
    pub nonempty_cells: usize,
    /// Nonempty cells whose weights were all zero.
    pub dropped_cells: Vec<usize>,
}

/// Label recorded in run metadata for the weighting in use.
pub const TFIDF_VARIANT: &str = "tf=count/row_total; idf=ln(nonempty_cells/df)";

/// `tf(i,j) = count(i,j) / Σ_j count(i,j)`, `idf(j) = ln(|L| / df_j)` over
/// nonempty cells. Rows that end up all zero are dropped.
pub fn tfidf(counts: &CountMatrix) -> Result<TfIdf> {
    let nonempty: Vec<usize> = counts.nonempty_cells().collect();
    if nonempty.is_empty() {
        return Err(Error::Degenerate("no cell contains any POI".into()));
    }
    let mut df = [0usize; N_CATEGORIES];
    for &i in &nonempty {
        for (j, &c) in counts.row(i).iter().enumerate() {
            if c > 0 {
                df[j] += 1;
            }
        }
    }
    let n = nonempty.len() as f64;
    let mut idf = [0.0; N_CATEGORIES];
    for j in 0..N_CATEGORIES {
        if df[j] > 0 {
            idf[j] = (n / df[j] as f64).ln();
        }
    }
    let mut vectors = Vec::new();
    let mut dropped_cells = Vec::new();
    for &i in &nonempty {
        let row = counts.row(i);
        let total: f64 = row.iter().map(|&c| c as f64).sum();
        let mut weights = [0.0; N_CATEGORIES];
        for j in 0..N_CATEGORIES {
            weights[j] = row[j] as f64 / total * idf[j];
        }
        if weights.iter().any(|&w| w > 0.0) {
            vectors.push(ActivityVector { cell_id: i, weights });
        } else {
            dropped_cells.push(i);
        }
    }
    Ok(TfIdf {
        vectors,
        idf,
        nonempty_cells: nonempty.len(),
        dropped_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::PlanarPoint;
    use ActivityCategory::*;

    #[test]
    fn table_examples() {
        let tax = Taxonomy::builtin();
        assert_eq!(categorize("restaurant", &tax), Categorized::Category(Eating));
        assert_eq!(categorize("pharmacy", &tax), Categorized::Category(HealthMedicine));
        assert_eq!(categorize("hostel", &tax), Categorized::Category(Residential));
        assert_eq!(categorize("Fast Food", &tax), Categorized::Category(Eating));
        assert_eq!(categorize("bench", &tax), Categorized::Discarded);
        assert_eq!(categorize("spaceport", &tax), Categorized::Unknown);
    }

    #[test]
    fn taxonomy_rejects_bad_rows() {
        let dup = "poi_type,category\ncafe,eating\ncafe,shopping\n";
        assert!(Taxonomy::from_reader(dup.as_bytes()).is_err());
        let bad = "poi_type,category\ncafe,dining\n";
        assert!(Taxonomy::from_reader(bad.as_bytes()).is_err());
        let header = "type,cat\ncafe,eating\n";
        assert!(Taxonomy::from_reader(header.as_bytes()).is_err());
    }

    #[test]
    fn parses_single_row() {
        let src = "id,lon,lat,poi_type\n17,11.12,46.07,restaurant\n";
        let (pois, rep) = parse_pois(src.as_bytes(), &Taxonomy::builtin()).unwrap();
        assert_eq!(
            pois,
            vec![PoiRecord {
                id: "17".into(),
                lon: 11.12,
                lat: 46.07,
                poi_type: "restaurant".into(),
                category: Eating,
            }]
        );
        assert_eq!(rep.accepted, 1);
    }

    #[test]
    fn parse_skips_discarded_and_keeps_order() {
        let src = "id,lon,lat,poi_type\n1,11.1,46.0,cafe\n2,11.1,46.0,bench\n3,11.2,46.1,hotel\n";
        let (pois, rep) = parse_pois(src.as_bytes(), &Taxonomy::builtin()).unwrap();
        let ids: Vec<_> = pois.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
        assert_eq!(rep.discarded, 1);
        assert_eq!(rep.accepted, 2);
    }

    #[test]
    fn parse_collects_malformed_rows() {
        let src = "id,lon,lat,poi_type\n1,abc,46.0,cafe\n2,11.1,46.0\n3,11.1,46.0,cafe\n4,200,46.0,cafe\n5,11.1,46.0,unheard_of\n";
        let (pois, rep) = parse_pois(src.as_bytes(), &Taxonomy::builtin()).unwrap();
        assert_eq!(pois.len(), 1);
        let lines: Vec<_> = rep.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, [2, 3, 5]);
        assert_eq!(rep.unknown_type, 1);
        assert_eq!(rep.rows_seen(), 5);
    }

    #[test]
    fn parse_requires_header() {
        let src = "17,11.12,46.07,restaurant\n";
        assert!(matches!(
            parse_pois(src.as_bytes(), &Taxonomy::builtin()),
            Err(Error::Input(_))
        ));
    }

    fn poi_at(proj: &Projection, x: f64, y: f64, category: ActivityCategory) -> PoiRecord {
        let (lon, lat) = proj.unproject(PlanarPoint::new(x, y));
        PoiRecord {
            id: "p".into(),
            lon,
            lat,
            poi_type: category.to_string(),
            category,
        }
    }

    #[test]
    fn single_poi_single_cell() {
        let proj = Projection::new(11.0, 46.0, 46.0).unwrap();
        let grid = Grid::new(PlanarPoint::new(0.0, 0.0), 50.0, 2, 2).unwrap();
        let pop = populate_grid(&[poi_at(&proj, 60.0, 70.0, Working)], &proj, &grid).unwrap();
        assert_eq!(pop.counts.row(3)[Working.index()], 1);
        assert_eq!(pop.counts.total(), 1);
    }

    #[test]
    fn shared_edge_goes_right() {
        // The projection origin sits exactly on the grid origin, so x = 50
        // maps to the shared edge without rounding.
        let proj = Projection::new(0.0, 0.0, 0.0).unwrap();
        let grid = Grid::new(PlanarPoint::new(0.0, 0.0), 50.0, 2, 1).unwrap();
        let poi = PoiRecord {
            id: "e".into(),
            lon: proj.unproject(PlanarPoint::new(50.0, 0.0)).0,
            lat: 0.0,
            poi_type: "cafe".into(),
            category: Eating,
        };
        assert_eq!(proj.project(poi.lon, poi.lat).unwrap().x, 50.0);
        let pop = populate_grid(&[poi], &proj, &grid).unwrap();
        assert_eq!(pop.counts.row(0)[Eating.index()], 0);
        assert_eq!(pop.counts.row(1)[Eating.index()], 1);
    }

    #[test]
    fn outside_pois_counted() {
        let proj = Projection::new(11.0, 46.0, 46.0).unwrap();
        let grid = Grid::new(PlanarPoint::new(0.0, 0.0), 50.0, 1, 1).unwrap();
        let pop = populate_grid(&[poi_at(&proj, -10.0, 5.0, Eating)], &proj, &grid).unwrap();
        assert_eq!(pop.outside, 1);
        assert_eq!(pop.counts.total(), 0);
    }

    #[test]
    fn tfidf_three_cell_fixture() {
        // cell0: 2 eating; cell1: 1 eating + 1 working; cell2: 4 working
        let mut rows = vec![[0u32; N_CATEGORIES]; 3];
        rows[0][Eating.index()] = 2;
        rows[1][Eating.index()] = 1;
        rows[1][Working.index()] = 1;
        rows[2][Working.index()] = 4;
        let t = tfidf(&CountMatrix::from_rows(rows)).unwrap();
        // hand computation: |L| = 3, df = 2 for both, idf = ln 1.5
        let idf = 0.405_465_108_108_164_4;
        assert!((t.idf[Eating.index()] - idf).abs() < 1e-15);
        assert_eq!(t.vectors.len(), 3);
        let e = |v: &ActivityVector| v.weights[Eating.index()];
        let w = |v: &ActivityVector| v.weights[Working.index()];
        assert!((e(&t.vectors[0]) - idf).abs() < 1e-15 && w(&t.vectors[0]) == 0.0);
        assert!((e(&t.vectors[1]) - 0.202_732_554_054_082_2).abs() < 1e-15);
        assert!((w(&t.vectors[1]) - 0.202_732_554_054_082_2).abs() < 1e-15);
        assert!((w(&t.vectors[2]) - idf).abs() < 1e-15 && e(&t.vectors[2]) == 0.0);
    }

    #[test]
    fn ubiquitous_category_has_zero_weight() {
        let mut rows = vec![[0u32; N_CATEGORIES]; 2];
        rows[0][Eating.index()] = 3;
        rows[1][Eating.index()] = 1;
        rows[1][Outdoor.index()] = 1;
        let t = tfidf(&CountMatrix::from_rows(rows)).unwrap();
        assert_eq!(t.idf[Eating.index()], 0.0);
        assert!(t.vectors.iter().all(|v| v.weights[Eating.index()] == 0.0));
        assert_eq!(t.dropped_cells, vec![0]);
    }

    #[test]
    fn single_cell_corpus_is_degenerate() {
        let mut rows = vec![[0u32; N_CATEGORIES]; 4];
        rows[2][Eating.index()] = 5;
        let t = tfidf(&CountMatrix::from_rows(rows)).unwrap();
        assert!(t.vectors.is_empty());
        assert_eq!(t.dropped_cells, vec![2]);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(tfidf(&CountMatrix::zeros(3)), Err(Error::Degenerate(_))));
    }
}
