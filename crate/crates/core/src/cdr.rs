//! Call detail records: parsing, time binning, allocation of tower counts
//! to grid cells and clusters, typical per-slot profiles, and envelope
//! violations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};

use crate::error::{input, Error, Result};
use crate::geo::TowerCoverage;
use crate::report::{check_header, line_of, ParseReport};

#[derive(Debug, Clone, PartialEq)]
pub struct CdrRecord {
    pub tower_id: String,
    pub timestamp: DateTime<Utc>,
    /// Call duration in seconds. Kept for completeness; series count calls.
    pub duration_s: f64,
}

/// Inclusive range of UTC dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyWindow {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl StudyWindow {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        if last < first {
            return input(format!("study window ends ({last}) before it starts ({first})"));
        }
        Ok(Self { first, last })
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        let d = ts.date_naive();
        d >= self.first && d <= self.last
    }
}

/// Parses a CDR CSV (`tower_id,timestamp,duration_s`). Rows with a bad
/// timestamp or a negative duration are reported; rows outside `window`
/// are counted as out of range.
pub fn parse_cdr<R: Read>(
    reader: R,
    window: Option<&StudyWindow>,
) -> Result<(Vec<CdrRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(rdr.headers()?, &["tower_id", "timestamp", "duration_s"])?;
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
        if rec.len() != 3 {
            report.reject(line, format!("expected 3 fields, found {}", rec.len()));
            continue;
        }
        if rec[0].is_empty() {
            report.reject(line, "empty tower_id");
            continue;
        }
        let timestamp = match DateTime::parse_from_rfc3339(&rec[1]) {
            Ok(t) => t.with_timezone(&Utc),
            Err(e) => {
                report.reject(line, format!("bad timestamp `{}`: {e}", &rec[1]));
                continue;
            }
        };
        let duration_s = match rec[2].parse::<f64>() {
            Ok(d) if d.is_finite() && d >= 0.0 => d,
            Ok(d) => {
                report.reject(line, format!("invalid duration {d}"));
                continue;
            }
            Err(_) => {
                report.reject(line, format!("bad duration `{}`", &rec[2]));
                continue;
            }
        };
        if window.is_some_and(|w| !w.contains(&timestamp)) {
            report.out_of_range += 1;
            continue;
        }
        report.accepted += 1;
        out.push(CdrRecord {
            tower_id: rec[0].to_string(),
            timestamp,
            duration_s,
        });
    }
    Ok((out, report))
}

/// Dense time axis: whole UTC days split into equal bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeline {
    pub start: NaiveDate,
    pub days: usize,
    pub bin_minutes: u32,
}

const MINUTES_PER_DAY: u32 = 24 * 60;

impl Timeline {
    pub fn new(start: NaiveDate, days: usize, bin_minutes: u32) -> Result<Self> {
        if bin_minutes == 0 || MINUTES_PER_DAY % bin_minutes != 0 {
            return input(format!("bin width of {bin_minutes} min does not divide a day"));
        }
        if days == 0 {
            return input("timeline must span at least one day");
        }
        Ok(Self {
            start,
            days,
            bin_minutes,
        })
    }

    pub fn for_window(w: &StudyWindow, bin_minutes: u32) -> Result<Self> {
        Self::new(w.first, (w.last - w.first).num_days() as usize + 1, bin_minutes)
    }

    /// The days spanned by the records, or `None` if there are none.
    pub fn covering(records: &[CdrRecord], bin_minutes: u32) -> Result<Option<Self>> {
        let Some(first) = records.iter().map(|r| r.timestamp.date_naive()).min() else {
            return Ok(None);
        };
        let last = records.iter().map(|r| r.timestamp.date_naive()).max().unwrap_or(first);
        Self::for_window(&StudyWindow::new(first, last)?, bin_minutes).map(Some)
    }

    pub fn bins_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.bin_minutes) as usize
    }

    pub fn n_bins(&self) -> usize {
        self.days * self.bins_per_day()
    }

    pub fn last_date(&self) -> NaiveDate {
        self.start + Duration::days(self.days as i64 - 1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.days).map(|d| self.start + Duration::days(d as i64))
    }

    /// Bin containing `ts` under half-open bounds, if inside the timeline.
    pub fn bin_of(&self, ts: &DateTime<Utc>) -> Option<usize> {
        let origin = self.start.and_hms_opt(0, 0, 0)?.and_utc();
        let secs = (*ts - origin).num_seconds();
        if secs < 0 {
            return None;
        }
        let bin = (secs / (self.bin_minutes as i64 * 60)) as usize;
        (bin < self.n_bins()).then_some(bin)
    }

    pub fn date_of_bin(&self, bin: usize) -> NaiveDate {
        self.start + Duration::days((bin / self.bins_per_day()) as i64)
    }

    pub fn bin_in_day(&self, bin: usize) -> usize {
        bin % self.bins_per_day()
    }

    pub fn bin_start(&self, bin: usize) -> DateTime<Utc> {
        self.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
            + Duration::minutes(bin as i64 * self.bin_minutes as i64)
    }
}

/// Call counts of one tower over a timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerSeries {
    pub tower_id: String,
    pub counts: Vec<u64>,
}

/// Counts records per (tower, bin). Towers appear in id order; records
/// outside the timeline are ignored.
pub fn bin_counts(records: &[CdrRecord], timeline: &Timeline) -> Vec<TowerSeries> {
    let mut by_tower: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for r in records {
        if let Some(bin) = timeline.bin_of(&r.timestamp) {
            by_tower
                .entry(r.tower_id.as_str())
                .or_insert_with(|| vec![0; timeline.n_bins()])[bin] += 1;
        }
    }
    by_tower
        .into_iter()
        .map(|(id, counts)| TowerSeries {
            tower_id: id.to_string(),
            counts,
        })
        .collect()
}

/// How a tower's count is split over the cells it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AllocationMode {
    /// `X(p,t) / N · w_i`, with `N` the number of intersecting areas. Loses
    /// mass whenever `N > 1`.
    Paper,
    /// `X(p,t) · w_i`; totals are preserved.
    #[default]
    Conserving,
}

impl FromStr for AllocationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "conserving" => Ok(Self::Conserving),
            _ => input(format!("unknown allocation mode `{s}` (paper|conserving)")),
        }
    }
}

impl fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Conserving => "conserving",
        })
    }
}

/// Cluster label, or the pseudo-cluster collecting volume that lands on
/// cells without a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClusterKey {
    Cluster(u32),
    Unprofiled,
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cluster(c) => write!(f, "{c}"),
            Self::Unprofiled => f.write_str("unprofiled"),
        }
    }
}

impl FromStr for ClusterKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "unprofiled" {
            return Ok(Self::Unprofiled);
        }
        s.parse()
            .map(Self::Cluster)
            .map_err(|_| Error::Input(format!("bad cluster label `{s}`")))
    }
}

/// Volume per grid cell per bin, plus whatever fell outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAllocation {
    pub n_bins: usize,
    pub cells: BTreeMap<usize, Vec<f64>>,
    pub outside_grid: Vec<f64>,
}

/// Share of a polygon not covered by the grid below which it is treated as
/// rounding noise.
const RESIDUAL_TOLERANCE: f64 = 1e-9;

/// Spreads every tower's counts over the cells its polygon intersects.
/// The part of a polygon outside the grid counts as one extra area.
pub fn allocate_to_cells(
    series: &[TowerSeries],
    coverage: &[TowerCoverage],
    mode: AllocationMode,
    n_bins: usize,
) -> Result<CellAllocation> {
    let by_id: BTreeMap<&str, &TowerCoverage> =
        coverage.iter().map(|c| (c.tower_id.as_str(), c)).collect();
    let mut out = CellAllocation {
        n_bins,
        cells: BTreeMap::new(),
        outside_grid: vec![0.0; n_bins],
    };
    for s in series {
        if s.counts.len() != n_bins {
            return input(format!("series of tower {} has the wrong length", s.tower_id));
        }
        let cov = by_id.get(s.tower_id.as_str()).ok_or_else(|| {
            Error::Input(format!("tower {} has no coverage polygon", s.tower_id))
        })?;
        let residual = 1.0 - cov.weight_sum();
        let residual = (residual > RESIDUAL_TOLERANCE).then_some(residual);
        let n_areas = cov.cell_weights.len() + residual.is_some() as usize;
        let scale = match mode {
            AllocationMode::Paper => 1.0 / n_areas as f64,
            AllocationMode::Conserving => 1.0,
        };
        for &(cell, w) in &cov.cell_weights {
            let dst = out.cells.entry(cell).or_insert_with(|| vec![0.0; n_bins]);
            for (v, &x) in dst.iter_mut().zip(&s.counts) {
                *v += x as f64 * scale * w;
            }
        }
        if let Some(r) = residual {
            for (v, &x) in out.outside_grid.iter_mut().zip(&s.counts) {
                *v += x as f64 * scale * r;
            }
        }
    }
    Ok(out)
}

/// Allocated volume of one cluster over the timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSeries {
    pub key: ClusterKey,
    pub volumes: Vec<f64>,
}

/// Sums cell volumes by cluster label; unlabeled cells and the out-of-grid
/// share go to [`ClusterKey::Unprofiled`], which is emitted only when it
/// receives any volume.
pub fn aggregate_by_cluster(
    alloc: &CellAllocation,
    labels: &BTreeMap<usize, u32>,
) -> Vec<ClusterSeries> {
    let mut acc: BTreeMap<ClusterKey, Vec<f64>> = BTreeMap::new();
    for &label in labels.values() {
        acc.entry(ClusterKey::Cluster(label))
            .or_insert_with(|| vec![0.0; alloc.n_bins]);
    }
    let mut unprofiled = alloc.outside_grid.clone();
    let mut touched = alloc.outside_grid.iter().any(|&v| v != 0.0);
    for (cell, vols) in &alloc.cells {
        let dst = match labels.get(cell) {
            Some(&l) => acc.get_mut(&ClusterKey::Cluster(l)).expect("seeded above"),
            None => {
                touched |= vols.iter().any(|&v| v != 0.0);
                &mut unprofiled
            }
        };
        for (d, v) in dst.iter_mut().zip(vols) {
            *d += v;
        }
    }
    if touched {
        acc.insert(ClusterKey::Unprofiled, unprofiled);
    }
    acc.into_iter()
        .map(|(key, volumes)| ClusterSeries { key, volumes })
        .collect()
}

/// Tower counts → cells → clusters.
pub fn allocate(
    series: &[TowerSeries],
    coverage: &[TowerCoverage],
    labels: &BTreeMap<usize, u32>,
    mode: AllocationMode,
    n_bins: usize,
) -> Result<Vec<ClusterSeries>> {
    Ok(aggregate_by_cluster(
        &allocate_to_cells(series, coverage, mode, n_bins)?,
        labels,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Period {
    /// One slot per bin of each weekday, Monday first.
    #[default]
    Weekly,
    /// One slot per bin of the day.
    Daily,
}

impl FromStr for Period {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weekly" => Ok(Self::Weekly),
            "daily" => Ok(Self::Daily),
            _ => input(format!("unknown period `{s}` (weekly|daily)")),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Weekly => "weekly",
            Self::Daily => "daily",
        })
    }
}

impl Period {
    pub fn n_slots(self, bins_per_day: usize) -> usize {
        match self {
            Self::Weekly => 7 * bins_per_day,
            Self::Daily => bins_per_day,
        }
    }

    pub fn slot(self, timeline: &Timeline, bin: usize) -> usize {
        let within = timeline.bin_in_day(bin);
        match self {
            Self::Weekly => {
                let dow = timeline.date_of_bin(bin).weekday().num_days_from_monday() as usize;
                dow * timeline.bins_per_day() + within
            }
            Self::Daily => within,
        }
    }
}

/// Mean, spread and envelope of one profile slot. Statistics are `None`
/// when fewer than two observations support them (one for the mean).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotStats {
    pub support: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

impl SlotStats {
    pub fn is_sufficient(&self) -> bool {
        self.support >= 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalProfile {
    pub key: ClusterKey,
    pub period: Period,
    pub alpha: f64,
    pub slots: Vec<SlotStats>,
}

/// Slot-wise mean and sample standard deviation over non-excluded dates,
/// with envelope `μ ± α·σ` (low end floored at zero).
pub fn typical_profile(
    series: &ClusterSeries,
    timeline: &Timeline,
    period: Period,
    exclusions: &BTreeSet<NaiveDate>,
    alpha: f64,
) -> Result<TemporalProfile> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return input(format!("alpha must be positive, got {alpha}"));
    }
    if series.volumes.len() != timeline.n_bins() {
        return input("series length does not match the timeline");
    }
    if timeline.dates().all(|d| exclusions.contains(&d)) {
        return input("every date of the timeline is excluded");
    }
    let n_slots = period.n_slots(timeline.bins_per_day());
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); n_slots];
    for (bin, &v) in series.volumes.iter().enumerate() {
        if !exclusions.contains(&timeline.date_of_bin(bin)) {
            samples[period.slot(timeline, bin)].push(v);
        }
    }
    let slots = samples
        .iter()
        .map(|xs| {
            let n = xs.len();
            if n == 0 {
                return SlotStats::default();
            }
            let mean = xs.iter().sum::<f64>() / n as f64;
            if n < 2 {
                return SlotStats {
                    support: n,
                    mean: Some(mean),
                    ..SlotStats::default()
                };
            }
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            let std = var.sqrt();
            SlotStats {
                support: n,
                mean: Some(mean),
                std: Some(std),
                low: Some((mean - alpha * std).max(0.0)),
                high: Some(mean + alpha * std),
            }
        })
        .collect();
    Ok(TemporalProfile {
        key: series.key,
        period,
        alpha,
        slots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    Above,
    Below,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Above => "above",
            Self::Below => "below",
        })
    }
}

/// One observation outside its slot's envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Anomaly {
    pub key: ClusterKey,
    pub date: NaiveDate,
    pub slot: usize,
    pub observed: f64,
    pub low: f64,
    pub high: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnomalyReport {
    /// Sorted by (date, cluster, slot).
    pub entries: Vec<Anomaly>,
    /// Observations skipped because their slot lacked support.
    pub skipped_insufficient: usize,
}

impl AnomalyReport {
    pub fn merge(reports: impl IntoIterator<Item = AnomalyReport>) -> AnomalyReport {
        let mut out = AnomalyReport::default();
        for r in reports {
            out.entries.extend(r.entries);
            out.skipped_insufficient += r.skipped_insufficient;
        }
        out.sort();
        out
    }

    fn sort(&mut self) {
        self.entries
            .sort_by(|a, b| (a.date, a.key, a.slot).cmp(&(b.date, b.key, b.slot)));
    }
}

/// Flags every (date, slot) whose observed volume lies strictly outside the
/// profile envelope. `dates` restricts the evaluation; `None` means every
/// date of the timeline.
pub fn detect_anomalies(
    series: &ClusterSeries,
    profile: &TemporalProfile,
    timeline: &Timeline,
    dates: Option<&BTreeSet<NaiveDate>>,
) -> Result<AnomalyReport> {
    if series.volumes.len() != timeline.n_bins() {
        return input("series length does not match the timeline");
    }
    if profile.slots.len() != profile.period.n_slots(timeline.bins_per_day()) {
        return input("profile does not match the timeline's bin width");
    }
    let mut report = AnomalyReport::default();
    for (bin, &observed) in series.volumes.iter().enumerate() {
        let date = timeline.date_of_bin(bin);
        if dates.is_some_and(|d| !d.contains(&date)) {
            continue;
        }
        let slot = profile.period.slot(timeline, bin);
        let stats = &profile.slots[slot];
        let (Some(low), Some(high)) = (stats.low, stats.high) else {
            report.skipped_insufficient += 1;
            continue;
        };
        let direction = if observed > high {
            Direction::Above
        } else if observed < low {
            Direction::Below
        } else {
            continue;
        };
        report.entries.push(Anomaly {
            key: series.key,
            date,
            slot,
            observed,
            low,
            high,
            direction,
        });
    }
    report.sort();
    Ok(report)
}

/// Summary statistics of one cluster's weekly profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub key: ClusterKey,
    /// `None` when the cluster has no volume.
    pub mean_daily_volume: Option<f64>,
    pub weekend_share: Option<f64>,
    pub distance_to_average: Option<f64>,
}

/// Weekly slot means scaled to unit sum, or `None` for a zero pattern.
pub fn normalized_pattern(profile: &TemporalProfile) -> Option<Vec<f64>> {
    let raw: Vec<f64> = profile.slots.iter().map(|s| s.mean.unwrap_or(0.0)).collect();
    let total: f64 = raw.iter().sum();
    (total > 0.0).then(|| raw.iter().map(|v| v / total).collect())
}

/// Mean daily volume, weekend share (Saturday + Sunday over the week) and
/// Euclidean distance from each cluster's normalised weekly pattern to the
/// average normalised pattern of the real clusters.
pub fn profile_stats(profiles: &[TemporalProfile]) -> Result<Vec<ClusterStats>> {
    if let Some(p) = profiles.iter().find(|p| p.period != Period::Weekly) {
        return input(format!("cluster {} profile is not weekly", p.key));
    }
    let patterns: Vec<Option<Vec<f64>>> = profiles.iter().map(normalized_pattern).collect();
    let pick = |real_only: bool| -> Vec<&Vec<f64>> {
        profiles
            .iter()
            .zip(&patterns)
            .filter(|(p, _)| !real_only || p.key != ClusterKey::Unprofiled)
            .filter_map(|(_, pat)| pat.as_ref())
            .collect()
    };
    let mut members = pick(true);
    if members.is_empty() {
        members = pick(false);
    }
    let average: Option<Vec<f64>> = members.first().map(|first| {
        let mut avg = vec![0.0; first.len()];
        for pat in &members {
            for (a, v) in avg.iter_mut().zip(pat.iter()) {
                *a += v;
            }
        }
        avg.iter().map(|a| a / members.len() as f64).collect()
    });

    Ok(profiles
        .iter()
        .zip(&patterns)
        .map(|(p, pat)| {
            let total: f64 = p.slots.iter().map(|s| s.mean.unwrap_or(0.0)).sum();
            let Some(pat) = pat else {
                return ClusterStats {
                    key: p.key,
                    mean_daily_volume: None,
                    weekend_share: None,
                    distance_to_average: None,
                };
            };
            let per_day = p.slots.len() / 7;
            let weekend: f64 = pat[5 * per_day..].iter().sum();
            let distance = average.as_ref().map(|avg| {
                avg.iter()
                    .zip(pat)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            });
            ClusterStats {
                key: p.key,
                mean_daily_volume: Some(total / 7.0),
                weekend_share: Some(weekend),
                distance_to_average: distance,
            }
        })
        .collect())
}
