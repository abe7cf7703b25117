//! The pipeline stages behind each subcommand. Stages talk to each other
//! only through files in the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use areaprof::activity::{parse_pois, populate_grid, tfidf, Taxonomy, TFIDF_VARIANT};
use areaprof::cdr::{
    aggregate_by_cluster, allocate_to_cells, bin_counts, detect_anomalies, parse_cdr,
    profile_stats, typical_profile, AnomalyReport, CellAllocation, ClusterKey,
    Period, TemporalProfile, Timeline,
};
use areaprof::evaluation::{pattern_points, silhouette};
use areaprof::geo::{
    parse_towers, tower_coverage, GeoBounds, Grid, PlanarPoint, Projection, Rect, TowerRecord,
};
use areaprof::report::ParseReport;
use areaprof::spectral::{cluster_areas, ClusterParams};
use areaprof::{Error, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::{require, AnomalyDates, RunConfig, Settings};
use crate::output::{cluster_geojson, create, opt, profile_svg, write_text};

pub const CLUSTERS: &str = "clusters.csv";
pub const GRID: &str = "grid.toml";
pub const TIMELINE: &str = "timeline.toml";
pub const CELL_SERIES: &str = "cell_series.csv";

/// A configured run writing into one output directory.
pub struct Run {
    pub cfg: RunConfig,
    pub settings: Settings,
    pub out: PathBuf,
    pub warnings: Vec<String>,
    /// `key=value` lines for the run report, in stage order.
    pub summary: Vec<String>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let settings = cfg.validate()?;
        let out = cfg
            .out
            .clone()
            .ok_or_else(|| Error::Input("no output directory (use --out)".into()))?;
        std::fs::create_dir_all(&out)?;
        write_text(&out, "effective_config.toml", &cfg.echo())?;
        Ok(Self {
            cfg,
            settings,
            out,
            warnings: Vec::new(),
            summary: Vec::new(),
        })
    }

    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push(format!("{key}={value}"));
    }

    fn write_report(&self, name: &str, report: &ParseReport) -> Result<()> {
        let mut w = create(&self.out, name)?;
        report.write_summary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn upstream(&self, name: &str) -> Result<PathBuf> {
        let p = self.out.join(name);
        if !p.is_file() {
            return Err(Error::Input(format!(
                "missing upstream output {} (run the earlier stage first)",
                p.display()
            )));
        }
        Ok(p)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

fn read_towers(run: &mut Run) -> Result<Vec<TowerRecord>> {
    let path = require(&run.cfg.towers, "towers")?;
    let (towers, report) = parse_towers(open(path)?)?;
    run.write_report("tower_report.txt", &report)?;
    Ok(towers)
}

/// Projection and grid shared by the stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    origin_lon: f64,
    origin_lat: f64,
    mean_lat: f64,
    x0: f64,
    y0: f64,
    cell_size: f64,
    nx: usize,
    ny: usize,
}

impl GridFile {
    fn new(proj: &Projection, grid: &Grid) -> Self {
        let (origin_lon, origin_lat) = proj.origin();
        Self {
            origin_lon,
            origin_lat,
            mean_lat: proj.mean_lat(),
            x0: grid.origin.x,
            y0: grid.origin.y,
            cell_size: grid.side,
            nx: grid.nx,
            ny: grid.ny,
        }
    }

    fn load(path: &Path) -> Result<(Projection, Grid)> {
        let text = std::fs::read_to_string(path)?;
        let g: GridFile = toml::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Ok((
            Projection::new(g.origin_lon, g.origin_lat, g.mean_lat)?,
            Grid::new(PlanarPoint::new(g.x0, g.y0), g.cell_size, g.nx, g.ny)?,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimelineFile {
    start: NaiveDate,
    days: usize,
    bin_minutes: u32,
}

fn read_labels(path: &Path) -> Result<BTreeMap<usize, u32>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut labels = BTreeMap::new();
    for row in rdr.deserialize::<(usize, u32)>() {
        let (cell, cluster) = row.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        labels.insert(cell, cluster);
    }
    Ok(labels)
}

/// Activity profiles → spectral clusters of grid cells.
pub fn cluster(run: &mut Run) -> Result<()> {
    let tax = match &run.cfg.taxonomy {
        Some(_) => Taxonomy::from_path(require(&run.cfg.taxonomy, "taxonomy")?)?,
        None => Taxonomy::builtin(),
    };
    let pois_path = require(&run.cfg.pois, "pois")?.to_path_buf();
    let (pois, report) = parse_pois(open(&pois_path)?, &tax)?;
    run.write_report("poi_report.txt", &report)?;
    if !report.rejected.is_empty() {
        run.warn(format!("{} malformed POI row(s) skipped", report.rejected.len()));
    }

    let bounds = match run.settings.bounds {
        Some(b) => b,
        None => {
            let mut pts: Vec<(f64, f64)> = pois.iter().map(|p| (p.lon, p.lat)).collect();
            if run.cfg.towers.is_some() {
                pts.extend(read_towers(run)?.iter().map(|t| (t.lon, t.lat)));
            }
            let b = GeoBounds::enclosing(pts)
                .ok_or_else(|| Error::Degenerate("empty grid: no POIs and no bbox".into()))?;
            let b = b.padded(run.cfg.grid_size)?;
            run.note("bbox_derived", format!("{},{},{},{}", b.lon_min, b.lat_min, b.lon_max, b.lat_max));
            b
        }
    };
    let proj = Projection::for_bounds(&bounds)?;
    let corner = proj.project(bounds.lon_max, bounds.lat_max)?;
    let rect = Rect::new(0.0, 0.0, corner.x, corner.y)?;
    let grid = Grid::covering(&rect, run.cfg.grid_size)?;
    let pop = populate_grid(&pois, &proj, &grid)?;
    if pop.outside > 0 {
        run.warn(format!("{} POI(s) outside the study box", pop.outside));
    }
    let weights = tfidf(&pop.counts)?;
    let params = ClusterParams {
        knn: run.cfg.knn,
        k_max: run.cfg.k_max,
        seed: run.cfg.seed,
        normalize_rows: run.cfg.normalize_rows,
        restarts: run.cfg.restarts,
        max_nodes: run.cfg.max_cells,
    };
    let result = cluster_areas(&weights.vectors, &params)?;
    let labels = result.labels_by_cell();

    let mut w = create(&run.out, CLUSTERS)?;
    writeln!(w, "cell_id,cluster")?;
    for (cell, c) in &labels {
        writeln!(w, "{cell},{c}")?;
    }
    w.flush()?;

    let mut w = create(&run.out, "spectrum.csv")?;
    writeln!(w, "index,eigenvalue")?;
    for (i, l) in result.eigenvalues.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;

    let mut meta = String::new();
    let kv: [(&str, String); 14] = [
        ("knn", params.knn.to_string()),
        ("knn_used", result.knn_used.to_string()),
        ("k_max", params.k_max.to_string()),
        ("k", result.k().to_string()),
        ("seed", params.seed.to_string()),
        ("restarts", params.restarts.to_string()),
        ("winning_seed", result.model.seed.to_string()),
        ("objective", result.model.objective.to_string()),
        ("normalize_rows", params.normalize_rows.to_string()),
        ("tfidf", TFIDF_VARIANT.to_string()),
        ("grid_cells", grid.len().to_string()),
        ("profiled_cells", labels.len().to_string()),
        ("isolated_cells", result.isolated_cells.len().to_string()),
        ("dropped_cells", weights.dropped_cells.len().to_string()),
    ];
    for (k, v) in &kv {
        writeln!(meta, "{k}={v}").expect("string write");
    }
    write_text(&run.out, "cluster_meta.txt", &meta)?;
    write_text(
        &run.out,
        GRID,
        &toml::to_string(&GridFile::new(&proj, &grid)).expect("grid serializes"),
    )?;
    write_text(&run.out, "clusters.geojson", &cluster_geojson(&labels, &grid, &proj))?;

    run.note("pois_accepted", report.accepted);
    run.note("grid_cells", grid.len());
    run.note("profiled_cells", labels.len());
    run.note("k", result.k());
    Ok(())
}

/// Study rectangle for the Voronoi tessellation: the grid, grown by a cell
/// wherever a tower lies outside it.
fn study_rect(grid: &Grid, sites: &[PlanarPoint]) -> Result<Rect> {
    let b = grid.bounds();
    let (mut x0, mut y0, mut x1, mut y1) = (b.min.x, b.min.y, b.max.x, b.max.y);
    for p in sites {
        if p.x <= x0 {
            x0 = p.x - grid.side;
        }
        if p.y <= y0 {
            y0 = p.y - grid.side;
        }
        if p.x >= x1 {
            x1 = p.x + grid.side;
        }
        if p.y >= y1 {
            y1 = p.y + grid.side;
        }
    }
    Rect::new(x0, y0, x1, y1)
}

const PROFILE_HEADER: &str = "cluster,slot,mean,std,low,high,support";
const STATS_HEADER: &str = "cluster,mean_daily_volume,weekend_share,distance_to_average";
const ANOMALY_HEADER: &str = "cluster,date,slot,observed,low,high,direction";

/// Call volumes → per-cluster series, profiles, statistics and anomalies.
pub fn patterns(run: &mut Run) -> Result<()> {
    let (proj, grid) = GridFile::load(&run.upstream(GRID)?)?;
    let labels = read_labels(&run.upstream(CLUSTERS)?)?;
    let towers = read_towers(run)?;
    let cdr_path = require(&run.cfg.cdr, "cdr")?.to_path_buf();
    let (records, mut report) = parse_cdr(open(&cdr_path)?, None)?;

    let known: BTreeSet<&str> = towers.iter().map(|t| t.tower_id.as_str()).collect();
    let before = records.len();
    let records: Vec<_> = records
        .into_iter()
        .filter(|r| known.contains(r.tower_id.as_str()))
        .collect();
    let unknown = before - records.len();
    report.accepted -= unknown;
    {
        let mut w = create(&run.out, "cdr_report.txt")?;
        report.write_summary(&mut w)?;
        writeln!(w, "unknown_tower={unknown}")?;
        w.flush()?;
    }
    if unknown > 0 {
        run.warn(format!("{unknown} call record(s) from towers missing in the towers file"));
    }
    if !report.rejected.is_empty() {
        run.warn(format!("{} malformed call record(s) skipped", report.rejected.len()));
    }
    run.note("cdr_accepted", report.accepted);
    run.note("cdr_malformed", report.rejected.len());

    let sites: Vec<(String, PlanarPoint)> = towers
        .iter()
        .map(|t| Ok((t.tower_id.clone(), proj.project(t.lon, t.lat)?)))
        .collect::<Result<_>>()?;
    let rect = study_rect(&grid, &sites.iter().map(|s| s.1).collect::<Vec<_>>())?;
    let coverage = tower_coverage(&sites, &rect, &grid)?;
    let mut w = create(&run.out, "coverage.csv")?;
    writeln!(w, "tower_id,cell_id,weight")?;
    for c in &coverage {
        for (cell, wt) in &c.cell_weights {
            writeln!(w, "{},{cell},{wt}", c.tower_id)?;
        }
    }
    w.flush()?;

    let Some(timeline) = Timeline::covering(&records, run.cfg.bin_minutes)? else {
        run.warn("no call records: profiles are empty");
        write_text(&run.out, CELL_SERIES, "cell_id,bin,volume\n")?;
        write_text(&run.out, "cluster_series.csv", "cluster,bin,volume\n")?;
        write_text(&run.out, "profiles.csv", &format!("{PROFILE_HEADER}\n"))?;
        write_text(&run.out, "stats.csv", &format!("{STATS_HEADER}\n"))?;
        write_text(&run.out, "anomalies.csv", &format!("{ANOMALY_HEADER}\n"))?;
        run.note("anomalies", 0);
        return Ok(());
    };
    write_text(
        &run.out,
        TIMELINE,
        &toml::to_string(&TimelineFile {
            start: timeline.start,
            days: timeline.days,
            bin_minutes: timeline.bin_minutes,
        })
        .expect("timeline serializes"),
    )?;

    let series = bin_counts(&records, &timeline);
    let alloc = allocate_to_cells(&series, &coverage, run.settings.allocation, timeline.n_bins())?;
    let mut w = create(&run.out, CELL_SERIES)?;
    writeln!(w, "cell_id,bin,volume")?;
    for (cell, vols) in &alloc.cells {
        for (b, v) in vols.iter().enumerate() {
            if *v != 0.0 {
                writeln!(w, "{cell},{b},{v}")?;
            }
        }
    }
    w.flush()?;

    let clusters = aggregate_by_cluster(&alloc, &labels);
    let mut w = create(&run.out, "cluster_series.csv")?;
    writeln!(w, "cluster,bin,volume")?;
    for c in &clusters {
        for (b, v) in c.volumes.iter().enumerate() {
            writeln!(w, "{},{b},{v}", c.key)?;
        }
    }
    w.flush()?;

    let holidays = &run.settings.holidays;
    let profiles: Vec<TemporalProfile> = clusters
        .iter()
        .map(|c| typical_profile(c, &timeline, run.settings.period, holidays, run.cfg.alpha))
        .collect::<Result<_>>()?;
    let mut w = create(&run.out, "profiles.csv")?;
    writeln!(w, "{PROFILE_HEADER}")?;
    for p in &profiles {
        for (i, s) in p.slots.iter().enumerate() {
            writeln!(
                w,
                "{},{i},{},{},{},{},{}",
                p.key,
                opt(s.mean),
                opt(s.std),
                opt(s.low),
                opt(s.high),
                s.support
            )?;
        }
    }
    w.flush()?;

    let weekly: Vec<TemporalProfile> = if run.settings.period == Period::Weekly {
        profiles.clone()
    } else {
        clusters
            .iter()
            .map(|c| typical_profile(c, &timeline, Period::Weekly, holidays, run.cfg.alpha))
            .collect::<Result<_>>()?
    };
    let mut w = create(&run.out, "stats.csv")?;
    writeln!(w, "{STATS_HEADER}")?;
    for s in profile_stats(&weekly)? {
        writeln!(
            w,
            "{},{},{},{}",
            s.key,
            opt(s.mean_daily_volume),
            opt(s.weekend_share),
            opt(s.distance_to_average)
        )?;
    }
    w.flush()?;

    let eval_dates: Option<BTreeSet<NaiveDate>> = match run.settings.anomaly_dates {
        AnomalyDates::All => None,
        AnomalyDates::Excluded => Some(holidays.clone()),
    };
    let anomalies = AnomalyReport::merge(
        clusters
            .iter()
            .zip(&profiles)
            .map(|(c, p)| detect_anomalies(c, p, &timeline, eval_dates.as_ref()))
            .collect::<Result<Vec<_>>>()?,
    );
    let mut w = create(&run.out, "anomalies.csv")?;
    writeln!(w, "{ANOMALY_HEADER}")?;
    for a in &anomalies.entries {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            a.key, a.date, a.slot, a.observed, a.low, a.high, a.direction
        )?;
    }
    w.flush()?;
    if anomalies.skipped_insufficient > 0 {
        run.warn(format!(
            "{} observation(s) not checked: slot has fewer than two supporting dates",
            anomalies.skipped_insufficient
        ));
    }

    for p in &profiles {
        let name = match p.key {
            ClusterKey::Cluster(c) => format!("charts/cluster_{c}.svg"),
            ClusterKey::Unprofiled => "charts/unprofiled.svg".to_string(),
        };
        write_text(&run.out, &name, &profile_svg(p, timeline.bins_per_day()))?;
    }

    run.note("days", timeline.days);
    run.note("clusters_with_volume", clusters.iter().filter(|c| c.volumes.iter().any(|&v| v > 0.0)).count());
    run.note("anomalies", anomalies.entries.len());
    Ok(())
}

const SILHOUETTE_HEADER: &str = "cell_id,cluster,a,b,s";
const SUMMARY_HEADER: &str = "cluster,mean_s,positive_fraction,size";

/// Silhouette of every clustered cell over its temporal pattern.
pub fn evaluate(run: &mut Run) -> Result<()> {
    let labels = read_labels(&run.upstream(CLUSTERS)?)?;
    let series_path = run.upstream(CELL_SERIES)?;
    let timeline_path = run.out.join(TIMELINE);
    if !timeline_path.is_file() {
        run.warn("no call volume: silhouette outputs are empty");
        write_text(&run.out, "silhouette.csv", &format!("{SILHOUETTE_HEADER}\n"))?;
        write_text(&run.out, "silhouette_summary.csv", &format!("{SUMMARY_HEADER}\n"))?;
        return Ok(());
    }
    let t: TimelineFile = toml::from_str(&std::fs::read_to_string(&timeline_path)?)
        .map_err(|e| Error::Input(format!("{}: {e}", timeline_path.display())))?;
    let timeline = Timeline::new(t.start, t.days, t.bin_minutes)?;

    let mut alloc = CellAllocation {
        n_bins: timeline.n_bins(),
        cells: BTreeMap::new(),
        outside_grid: vec![0.0; timeline.n_bins()],
    };
    let mut rdr = csv::Reader::from_reader(open(&series_path)?);
    for row in rdr.deserialize::<(usize, usize, f64)>() {
        let (cell, bin, v) = row.map_err(|e| Error::Input(format!("{}: {e}", series_path.display())))?;
        if bin >= alloc.n_bins {
            return Err(Error::Input(format!("{}: bin {bin} beyond the timeline", series_path.display())));
        }
        alloc.cells.entry(cell).or_insert_with(|| vec![0.0; timeline.n_bins()])[bin] = v;
    }

    let points = pattern_points(&alloc, &labels, &timeline, run.settings.features, &run.settings.holidays);
    if points.is_empty() {
        return Err(Error::Degenerate("no clustered cell carries call volume".into()));
    }
    let result = silhouette(&points)?;
    let mut w = create(&run.out, "silhouette.csv")?;
    writeln!(w, "{SILHOUETTE_HEADER}")?;
    for p in &result.points {
        writeln!(w, "{},{},{},{},{}", p.id, p.label, p.a, p.b, p.s)?;
    }
    w.flush()?;
    let mut w = create(&run.out, "silhouette_summary.csv")?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    for c in &result.clusters {
        writeln!(w, "{},{},{},{}", c.label, c.mean_s, c.positive_fraction, c.size)?;
    }
    w.flush()?;
    run.note("silhouette_points", result.points.len());
    run.note("mean_silhouette", result.mean_s);
    Ok(())
}

/// Consolidated report of a full run.
pub fn write_run_report(run: &Run) -> Result<()> {
    let mut s = String::new();
    s.push_str("# effective configuration: effective_config.toml\n");
    for line in &run.summary {
        s.push_str(line);
        s.push('\n');
    }
    writeln!(s, "warnings={}", run.warnings.len()).expect("string write");
    for w in &run.warnings {
        writeln!(s, "warning: {w}").expect("string write");
    }
    write_text(&run.out, "run_report.txt", &s)
}

