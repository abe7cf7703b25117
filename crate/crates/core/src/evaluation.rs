//! Silhouette coefficients over temporal patterns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::cdr::{CellAllocation, Period, Timeline};
use crate::error::{input, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PatternPoint {
    pub id: usize,
    pub label: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSilhouette {
    pub id: usize,
    pub label: u32,
    pub a: f64,
    pub b: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSilhouette {
    pub label: u32,
    pub size: usize,
    pub mean_s: f64,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteResult {
    /// In input order.
    pub points: Vec<PointSilhouette>,
    /// In label order.
    pub clusters: Vec<ClusterSilhouette>,
    pub mean_s: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Silhouette `s(o) = (b - a) / max(a, b)` with Euclidean distances, where
/// `a` is the mean distance to the rest of the point's cluster and `b` the
/// smallest mean distance to another cluster. Points in singleton clusters
/// get `s = 0` (and `a = 0`).
pub fn silhouette(points: &[PatternPoint]) -> Result<SilhouetteResult> {
    let Some(first) = points.first() else {
        return input("silhouette of an empty point set");
    };
    let dim = first.features.len();
    if points
        .iter()
        .any(|p| p.features.len() != dim || p.features.iter().any(|v| !v.is_finite()))
    {
        return input("pattern points must share one dimension and be finite");
    }
    let labels: Vec<u32> = points
        .iter()
        .map(|p| p.label)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(Error::Degenerate(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let slot: BTreeMap<u32, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut sizes = vec![0usize; labels.len()];
    for p in points {
        sizes[slot[&p.label]] += 1;
    }

    let mut sums = vec![0.0; labels.len()];
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[slot[&q.label]] += euclidean(&p.features, &q.features);
            }
        }
        let own = slot[&p.label];
        let b = (0..labels.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let (a, s) = if sizes[own] == 1 {
            (0.0, 0.0)
        } else {
            let a = sums[own] / (sizes[own] - 1) as f64;
            let m = a.max(b);
            (a, if m > 0.0 { (b - a) / m } else { 0.0 })
        };
        out.push(PointSilhouette {
            id: p.id,
            label: p.label,
            a,
            b,
            s,
        });
    }

    let clusters = labels
        .iter()
        .map(|&label| {
            let members: Vec<f64> = out.iter().filter(|p| p.label == label).map(|p| p.s).collect();
            let positive = members.iter().filter(|&&s| s > 0.0).count();
            ClusterSilhouette {
                label,
                size: members.len(),
                mean_s: members.iter().sum::<f64>() / members.len() as f64,
                positive_fraction: positive as f64 / members.len() as f64,
            }
        })
        .collect();
    let mean_s = out.iter().map(|p| p.s).sum::<f64>() / out.len() as f64;
    Ok(SilhouetteResult {
        points: out,
        clusters,
        mean_s,
    })
}

/// Share of a cluster's points with strictly positive silhouette.
pub fn quality_fraction(result: &SilhouetteResult, label: u32) -> Result<f64> {
    result
        .clusters
        .iter()
        .find(|c| c.label == label)
        .map(|c| c.positive_fraction)
        .ok_or_else(|| Error::Input(format!("no cluster labelled {label}")))
}

/// Which temporal pattern represents an area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Mean volume per weekly slot over non-excluded dates.
    #[default]
    Weekly,
    /// The whole non-excluded series, bin by bin.
    Full,
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weekly" => Ok(Self::Weekly),
            "full" => Ok(Self::Full),
            _ => input(format!("unknown feature mode `{s}` (weekly|full)")),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Weekly => "weekly",
            Self::Full => "full",
        })
    }
}

/// Unit-sum temporal pattern of every labelled cell with positive volume.
/// Cells are visited in id order.
pub fn pattern_points(
    alloc: &CellAllocation,
    labels: &BTreeMap<usize, u32>,
    timeline: &Timeline,
    mode: FeatureMode,
    exclusions: &BTreeSet<NaiveDate>,
) -> Vec<PatternPoint> {
    let keep: Vec<bool> = (0..timeline.n_bins())
        .map(|b| !exclusions.contains(&timeline.date_of_bin(b)))
        .collect();
    let mut out = Vec::new();
    for (&cell, vols) in &alloc.cells {
        let Some(&label) = labels.get(&cell) else {
            continue;
        };
        let raw: Vec<f64> = match mode {
            FeatureMode::Full => vols
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .collect(),
            FeatureMode::Weekly => {
                let n_slots = Period::Weekly.n_slots(timeline.bins_per_day());
                let mut sum = vec![0.0; n_slots];
                let mut cnt = vec![0usize; n_slots];
                for (b, &v) in vols.iter().enumerate() {
                    if keep[b] {
                        let s = Period::Weekly.slot(timeline, b);
                        sum[s] += v;
                        cnt[s] += 1;
                    }
                }
                sum.iter()
                    .zip(&cnt)
                    .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                    .collect()
            }
        };
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            out.push(PatternPoint {
                id: cell,
                label,
                features: raw.iter().map(|v| v / total).collect(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: usize, label: u32, f: &[f64]) -> PatternPoint {
        PatternPoint {
            id,
            label,
            features: f.to_vec(),
        }
    }

    #[test]
    fn one_dimensional_fixture() {
        let pts = [
            pt(0, 1, &[0.0]),
            pt(1, 1, &[0.1]),
            pt(2, 2, &[10.0]),
            pt(3, 2, &[10.1]),
        ];
        let r = silhouette(&pts).unwrap();
        let p0 = r.points[0];
        assert!((p0.a - 0.1).abs() < 1e-12);
        assert!((p0.b - 10.05).abs() < 1e-12);
        assert!((p0.s - (10.05 - 0.1) / 10.05).abs() < 1e-12);
        assert!((p0.s - 0.99005).abs() < 1e-5);
        assert_eq!(quality_fraction(&r, 1).unwrap(), 1.0);
    }

    #[test]
    fn equal_a_and_b_gives_zero() {
        // the middle point is 1 away from its partner and 1 away from the
        // other cluster's only point
        let pts = [pt(0, 1, &[0.0]), pt(1, 1, &[1.0]), pt(2, 2, &[2.0])];
        let r = silhouette(&pts).unwrap();
        assert_eq!(r.points[1].a, r.points[1].b);
        assert_eq!(r.points[1].s, 0.0);
    }

    #[test]
    fn singletons_are_zero() {
        let pts = [pt(0, 1, &[0.0]), pt(1, 2, &[5.0])];
        let r = silhouette(&pts).unwrap();
        assert!(r.points.iter().all(|p| p.s == 0.0));
        assert_eq!(quality_fraction(&r, 1).unwrap(), 0.0);
    }

    #[test]
    fn counting_fraction() {
        // seven tight points and three points closer to the other cluster
        let mut pts: Vec<PatternPoint> = (0..7).map(|i| pt(i, 1, &[i as f64 * 0.01])).collect();
        pts.extend((7..10).map(|i| pt(i, 1, &[9.0 + i as f64 * 0.01])));
        pts.extend((10..20).map(|i| pt(i, 2, &[10.0 + i as f64 * 0.01])));
        let r = silhouette(&pts).unwrap();
        assert!((quality_fraction(&r, 1).unwrap() - 0.7).abs() < 1e-12);
        assert!(quality_fraction(&r, 9).is_err());
    }

    #[test]
    fn single_cluster_rejected() {
        let pts = [pt(0, 1, &[0.0]), pt(1, 1, &[1.0])];
        assert!(matches!(silhouette(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn identical_points_across_clusters() {
        let pts = [pt(0, 1, &[1.0]), pt(1, 1, &[1.0]), pt(2, 2, &[1.0]), pt(3, 2, &[1.0])];
        let r = silhouette(&pts).unwrap();
        assert!(r.points.iter().all(|p| p.s == 0.0));
    }
}
