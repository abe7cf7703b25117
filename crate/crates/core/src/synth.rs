//! Seeded synthetic cities and call records with planted structure.
//!
//! A spec is a TOML document:
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! origin_lon = 11.10
//! origin_lat = 46.05
//! cell_size = 50.0
//! nx = 20
//! ny = 10
//!
//! [pois]
//! mean_per_cell = 12.0
//! noise = true          # Poisson cell totals, multinomial categories
//!
//! [towers]
//! nx = 6
//! ny = 3
//! jitter = 0.3          # fraction of the lattice spacing
//!
//! [cdr]
//! start = "2013-03-04"  # first day (UTC)
//! weeks = 6
//! rate_scale = 10.0     # calls per tower-hour at diurnal level 1
//! noise = true          # Poisson counts; false rounds the expectation
//! weekend_factor = 1.0
//! mean_duration_s = 120.0
//!
//! [[archetype]]
//! name = "food"
//! mixture = { eating = 0.7, shopping = 0.3 }
//! region = [0, 0, 10, 5]   # col0, row0, col1, row1 (half-open)
//! diurnal = [ ...24 values... ]  # optional, defaults to flat
//!
//! [[anomaly]]
//! date = "2013-03-31"
//! hour = 10
//! archetype = "food"
//! magnitude = 5.0       # in empirical standard deviations
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::Deserialize;

use crate::activity::{ActivityCategory, N_CATEGORIES};
use crate::cdr::CdrRecord;
use crate::error::{Error, Result};
use crate::geo::{tower_coverage, GeoBounds, Grid, PlanarPoint, Projection, Rect, TowerCoverage, EARTH_RADIUS_M};

fn spec_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Spec(msg.into()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin_lon: f64,
    pub origin_lat: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

fn default_cell_size() -> f64 {
    50.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiSpec {
    pub mean_per_cell: f64,
    #[serde(default = "yes")]
    pub noise: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdrSpec {
    pub start: NaiveDate,
    pub weeks: usize,
    pub rate_scale: f64,
    #[serde(default = "yes")]
    pub noise: bool,
    #[serde(default = "one")]
    pub weekend_factor: f64,
    #[serde(default = "default_duration")]
    pub mean_duration_s: f64,
}

fn one() -> f64 {
    1.0
}

fn default_duration() -> f64 {
    120.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub name: String,
    pub mixture: BTreeMap<String, f64>,
    pub region: [usize; 4],
    #[serde(default)]
    pub diurnal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub date: NaiveDate,
    pub hour: u32,
    pub archetype: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub grid: GridSpec,
    pub pois: PoiSpec,
    pub towers: TowerSpec,
    pub cdr: CdrSpec,
    #[serde(rename = "archetype")]
    pub archetypes: Vec<ArchetypeSpec>,
    #[serde(rename = "anomaly", default)]
    pub anomalies: Vec<AnomalySpec>,
}

/// An archetype after validation: category shares and hourly shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub name: String,
    pub mixture: [f64; N_CATEGORIES],
    pub diurnal: [f64; 24],
}

impl SynthSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(s).map_err(|e| Error::Spec(e.to_string()))?;
        spec.archetypes()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Input(format!("cannot read spec {}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Validates the spec and resolves archetype mixtures.
    pub fn archetypes(&self) -> Result<Vec<Archetype>> {
        let g = &self.grid;
        if g.nx == 0 || g.ny == 0 || !(g.cell_size > 0.0) {
            return spec_err("grid dimensions and cell size must be positive");
        }
        if !(self.pois.mean_per_cell >= 0.0) {
            return spec_err("pois.mean_per_cell must be non-negative");
        }
        if self.towers.nx == 0 || self.towers.ny == 0 {
            return spec_err("tower lattice must have at least one tower");
        }
        if !(0.0..1.0).contains(&self.towers.jitter) {
            return spec_err("towers.jitter must lie in [0, 1)");
        }
        let c = &self.cdr;
        if c.weeks == 0 || !(c.rate_scale >= 0.0) || !(c.weekend_factor >= 0.0) || !(c.mean_duration_s > 0.0) {
            return spec_err("cdr weeks, rate_scale, weekend_factor and mean_duration_s are out of range");
        }
        if self.archetypes.is_empty() {
            return spec_err("at least one archetype is required");
        }
        let mut owner = vec![None; g.nx * g.ny];
        let mut out = Vec::new();
        for (a, spec) in self.archetypes.iter().enumerate() {
            let mut mixture = [0.0; N_CATEGORIES];
            for (name, &share) in &spec.mixture {
                let cat: ActivityCategory = name
                    .parse()
                    .map_err(|_| Error::Spec(format!("archetype {}: unknown category `{name}`", spec.name)))?;
                if !(share >= 0.0) {
                    return spec_err(format!("archetype {}: negative share", spec.name));
                }
                mixture[cat.index()] = share;
            }
            if (mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return spec_err(format!("archetype {}: mixture must sum to 1", spec.name));
            }
            let diurnal = match &spec.diurnal {
                None => [1.0; 24],
                Some(v) => {
                    let arr: [f64; 24] = v.clone().try_into().map_err(|_| {
                        Error::Spec(format!("archetype {}: diurnal needs 24 values", spec.name))
                    })?;
                    if arr.iter().any(|x| !(*x >= 0.0)) {
                        return spec_err(format!("archetype {}: negative diurnal value", spec.name));
                    }
                    arr
                }
            };
            let [c0, r0, c1, r1] = spec.region;
            if c0 >= c1 || r0 >= r1 || c1 > g.nx || r1 > g.ny {
                return spec_err(format!("archetype {}: region outside the grid", spec.name));
            }
            for r in r0..r1 {
                for col in c0..c1 {
                    let cell = &mut owner[r * g.nx + col];
                    if cell.is_some() {
                        return spec_err(format!("archetype {}: region overlaps another", spec.name));
                    }
                    *cell = Some(a);
                }
            }
            if out.iter().any(|o: &Archetype| o.name == spec.name) {
                return spec_err(format!("archetype name `{}` used twice", spec.name));
            }
            out.push(Archetype {
                name: spec.name.clone(),
                mixture,
                diurnal,
            });
        }
        for an in &self.anomalies {
            if !out.iter().any(|a| a.name == an.archetype) {
                return spec_err(format!("anomaly references unknown region `{}`", an.archetype));
            }
            if an.hour > 23 || !(an.magnitude.is_finite()) {
                return spec_err("anomaly hour must be 0..=23 and magnitude finite");
            }
            let last = c.start + Duration::days(7 * c.weeks as i64 - 1);
            if an.date < c.start || an.date > last {
                return spec_err(format!("anomaly date {} outside the generated weeks", an.date));
            }
        }
        Ok(out)
    }
}

/// POI type written for each category; every one is in the bundled taxonomy.
pub fn representative_type(cat: ActivityCategory) -> &'static str {
    match cat {
        ActivityCategory::Eating => "restaurant",
        ActivityCategory::Shopping => "grocery",
        ActivityCategory::HealthMedicine => "pharmacy",
        ActivityCategory::Entertainment => "bar",
        ActivityCategory::Education => "school",
        ActivityCategory::Transport => "bus_station",
        ActivityCategory::Outdoor => "attraction",
        ActivityCategory::Sporting => "sports_centre",
        ActivityCategory::Working => "office",
        ActivityCategory::Residential => "hotel",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPoi {
    pub id: usize,
    pub lon: f64,
    pub lat: f64,
    pub category: ActivityCategory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTower {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub site: PlanarPoint,
}

/// A generated city together with its planted ground truth.
#[derive(Debug, Clone)]
pub struct SynthCity {
    pub bounds: GeoBounds,
    pub projection: Projection,
    pub grid: Grid,
    /// Archetype index of every grid cell, `None` outside all regions.
    pub planted: Vec<Option<usize>>,
    pub archetypes: Vec<Archetype>,
    pub pois: Vec<SynthPoi>,
    pub towers: Vec<SynthTower>,
}

impl SynthCity {
    pub fn bbox(&self) -> Rect {
        self.grid.bounds()
    }

    /// Voronoi coverage of the towers over the study box.
    pub fn coverage(&self) -> Result<Vec<TowerCoverage>> {
        let towers: Vec<(String, PlanarPoint)> =
            self.towers.iter().map(|t| (t.id.clone(), t.site)).collect();
        tower_coverage(&towers, &self.bbox(), &self.grid)
    }
}

fn draw_poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn draw_category(rng: &mut ChaCha8Rng, mixture: &[f64; N_CATEGORIES]) -> ActivityCategory {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in mixture.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = j;
        if u < acc {
            return ActivityCategory::ALL[j];
        }
    }
    ActivityCategory::ALL[last]
}

/// Largest-remainder split of `n` items by `mixture`.
fn exact_counts(n: u64, mixture: &[f64; N_CATEGORIES]) -> [u64; N_CATEGORIES] {
    let mut counts = [0u64; N_CATEGORIES];
    let mut rem: Vec<(f64, usize)> = Vec::new();
    for j in 0..N_CATEGORIES {
        let exact = mixture[j] * n as f64;
        counts[j] = exact.floor() as u64;
        rem.push((exact - exact.floor(), j));
    }
    let left = n - counts.iter().sum::<u64>();
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, j) in rem.iter().take(left as usize) {
        counts[j] += 1;
    }
    counts
}

/// Lays out the grid, draws POIs per planted region and places towers on a
/// jittered lattice.
pub fn gen_city(spec: &SynthSpec) -> Result<SynthCity> {
    let archetypes = spec.archetypes()?;
    let g = &spec.grid;
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let lat_max = g.origin_lat + g.cell_size * g.ny as f64 / k;
    let mean = 0.5 * (g.origin_lat + lat_max);
    let lon_max = g.origin_lon + g.cell_size * g.nx as f64 / (k * mean.to_radians().cos());
    let bounds = GeoBounds::new(g.origin_lon, g.origin_lat, lon_max, lat_max)
        .map_err(|e| Error::Spec(e.to_string()))?;
    let projection = Projection::for_bounds(&bounds)?;
    let grid = Grid::new(PlanarPoint::new(0.0, 0.0), g.cell_size, g.nx, g.ny)?;

    let mut planted = vec![None; grid.len()];
    for (a, arch) in spec.archetypes.iter().enumerate() {
        let [c0, r0, c1, r1] = arch.region;
        for r in r0..r1 {
            for c in c0..c1 {
                planted[r * g.nx + c] = Some(a);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pois = Vec::new();
    for cell in grid.cells() {
        let Some(a) = planted[cell.id] else { continue };
        let mixture = &archetypes[a].mixture;
        let cats: Vec<ActivityCategory> = if spec.pois.noise {
            let n = draw_poisson(&mut rng, spec.pois.mean_per_cell);
            (0..n).map(|_| draw_category(&mut rng, mixture)).collect()
        } else {
            let n = spec.pois.mean_per_cell.round() as u64;
            let counts = exact_counts(n, mixture);
            ActivityCategory::ALL
                .iter()
                .flat_map(|&c| std::iter::repeat_n(c, counts[c.index()] as usize))
                .collect()
        };
        for category in cats {
            let fx: f64 = rng.random_range(0.1..0.9);
            let fy: f64 = rng.random_range(0.1..0.9);
            let p = PlanarPoint::new(cell.min.x + fx * cell.side, cell.min.y + fy * cell.side);
            let (lon, lat) = projection.unproject(p);
            pois.push(SynthPoi {
                id: pois.len() + 1,
                lon,
                lat,
                category,
            });
        }
    }

    let bbox = grid.bounds();
    let t = &spec.towers;
    let (sx, sy) = (bbox.width() / t.nx as f64, bbox.height() / t.ny as f64);
    let mut towers = Vec::new();
    for j in 0..t.ny {
        for i in 0..t.nx {
            let jx = t.jitter * (rng.random::<f64>() - 0.5);
            let jy = t.jitter * (rng.random::<f64>() - 0.5);
            let site = PlanarPoint::new((i as f64 + 0.5 + jx) * sx, (j as f64 + 0.5 + jy) * sy);
            let (lon, lat) = projection.unproject(site);
            towers.push(SynthTower {
                id: format!("T{:03}", towers.len()),
                lon,
                lat,
                site,
            });
        }
    }

    Ok(SynthCity {
        bounds,
        projection,
        grid,
        planted,
        archetypes,
        pois,
        towers,
    })
}

/// Record of one injected spike.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedAnomaly {
    pub date: NaiveDate,
    pub hour: u32,
    pub archetype: usize,
    pub tower_id: String,
    /// Share of the tower's coverage inside the archetype's region.
    pub share: f64,
    /// Empirical standard deviation of the region's volume in that hour.
    pub sigma: f64,
    pub extra_calls: u64,
}

#[derive(Debug, Clone)]
pub struct SynthCdr {
    pub records: Vec<CdrRecord>,
    pub injected: Vec<InjectedAnomaly>,
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Hourly call counts per tower drawn from the archetype shapes of the cells
/// each tower covers, plus the requested spikes. Records are emitted hour by
/// hour with uniformly drawn seconds.
pub fn gen_cdr(spec: &SynthSpec, city: &SynthCity, coverage: &[TowerCoverage]) -> Result<SynthCdr> {
    let c = &spec.cdr;
    let n_arch = city.archetypes.len();
    let days = 7 * c.weeks;
    let n_bins = days * 24;
    let dates: Vec<NaiveDate> = (0..days).map(|d| c.start + Duration::days(d as i64)).collect();

    // Share of each tower's polygon in each archetype region.
    let shares: Vec<Vec<f64>> = coverage
        .iter()
        .map(|cov| {
            let mut s = vec![0.0; n_arch];
            for &(cell, w) in &cov.cell_weights {
                if let Some(a) = city.planted.get(cell).copied().flatten() {
                    s[a] += w;
                }
            }
            s
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_cd12);
    let mut counts = vec![vec![0u64; n_bins]; coverage.len()];
    for (bin, slot) in (0..n_bins).map(|b| (b, b % 24)) {
        let factor = if is_weekend(dates[bin / 24]) { c.weekend_factor } else { 1.0 };
        for (t, share) in shares.iter().enumerate() {
            let level: f64 = share
                .iter()
                .zip(&city.archetypes)
                .map(|(s, a)| s * a.diurnal[slot])
                .sum();
            let rate = c.rate_scale * factor * level;
            counts[t][bin] = if c.noise {
                draw_poisson(&mut rng, rate)
            } else {
                rate.round() as u64
            };
        }
    }

    let mut injected = Vec::new();
    for an in &spec.anomalies {
        let a = city
            .archetypes
            .iter()
            .position(|x| x.name == an.archetype)
            .ok_or_else(|| Error::Spec(format!("unknown region `{}`", an.archetype)))?;
        let region_volume = |bin: usize| -> f64 {
            counts
                .iter()
                .zip(&shares)
                .map(|(cnt, s)| cnt[bin] as f64 * s[a])
                .sum()
        };
        let anomalous: Vec<NaiveDate> = spec.anomalies.iter().map(|x| x.date).collect();
        let samples: Vec<f64> = dates
            .iter()
            .enumerate()
            .filter(|(_, d)| !anomalous.contains(d) && is_weekend(**d) == is_weekend(an.date))
            .map(|(i, _)| region_volume(i * 24 + an.hour as usize))
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sigma = if samples.len() > 1 {
            (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let (tower, share) = shares
            .iter()
            .enumerate()
            .map(|(t, s)| (t, s[a]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(share > 0.0) {
            return spec_err(format!("no tower covers region `{}`", an.archetype));
        }
        let extra = (an.magnitude * sigma / share).ceil().max(0.0) as u64;
        let day = (an.date - c.start).num_days() as usize;
        counts[tower][day * 24 + an.hour as usize] += extra;
        injected.push(InjectedAnomaly {
            date: an.date,
            hour: an.hour,
            archetype: a,
            tower_id: coverage[tower].tower_id.clone(),
            share,
            sigma,
            extra_calls: extra,
        });
    }

    let mut ts_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7153_7a3d);
    let durations = Exp::new(1.0 / c.mean_duration_s).map_err(|e| Error::Spec(e.to_string()))?;
    let mut records = Vec::new();
    for bin in 0..n_bins {
        let start = dates[bin / 24].and_hms_opt((bin % 24) as u32, 0, 0).expect("valid hour").and_utc();
        for (t, cov) in coverage.iter().enumerate() {
            for _ in 0..counts[t][bin] {
                let secs = ts_rng.random_range(0..3600);
                let dur: f64 = durations.sample(&mut ts_rng);
                records.push(CdrRecord {
                    tower_id: cov.tower_id.clone(),
                    timestamp: start + Duration::seconds(secs),
                    duration_s: dur.round(),
                });
            }
        }
    }
    Ok(SynthCdr { records, injected })
}

pub fn write_pois_csv<W: Write>(pois: &[SynthPoi], mut w: W) -> std::io::Result<()> {
    writeln!(w, "id,lon,lat,poi_type")?;
    for p in pois {
        writeln!(w, "{},{},{},{}", p.id, p.lon, p.lat, representative_type(p.category))?;
    }
    Ok(())
}

pub fn write_towers_csv<W: Write>(towers: &[SynthTower], mut w: W) -> std::io::Result<()> {
    writeln!(w, "tower_id,lon,lat")?;
    for t in towers {
        writeln!(w, "{},{},{}", t.id, t.lon, t.lat)?;
    }
    Ok(())
}

pub fn write_cdr_csv<W: Write>(records: &[CdrRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "tower_id,timestamp,duration_s")?;
    for r in records {
        writeln!(
            w,
            "{},{},{}",
            r.tower_id,
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            r.duration_s
        )?;
    }
    Ok(())
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Ord + Copy, B: Ord + Copy>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let choose2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(A, B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<B, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sum_a * sum_b / choose2(a.len() as u64);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
