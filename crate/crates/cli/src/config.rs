//! Run configuration: TOML file, command-line overrides and validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use areaprof::cdr::{AllocationMode, Period};
use areaprof::evaluation::FeatureMode;
use areaprof::geo::GeoBounds;
use areaprof::{Error, Result};
use chrono::NaiveDate;
use clap::Args;
use serde::{Deserialize, Serialize};

/// Every key of the run configuration file. Relative paths are resolved
/// against the directory of the file that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pois: Option<PathBuf>,
    /// Built-in table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub towers: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cdr: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `[lon_min, lat_min, lon_max, lat_max]`; derived from the data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    pub grid_size: f64,
    pub knn: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub normalize_rows: bool,
    pub max_cells: usize,
    pub bin_minutes: u32,
    pub alpha: f64,
    pub allocation: String,
    pub holidays: Vec<NaiveDate>,
    pub profile_period: String,
    /// `all` or `excluded` (only the holiday dates are checked).
    pub anomaly_dates: String,
    pub silhouette_features: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pois: None,
            taxonomy: None,
            towers: None,
            cdr: None,
            out: None,
            bbox: None,
            grid_size: 50.0,
            knn: 10,
            k_max: 30,
            seed: 0,
            restarts: 10,
            normalize_rows: true,
            max_cells: 20_000,
            bin_minutes: 60,
            alpha: 3.0,
            allocation: "conserving".into(),
            holidays: Vec::new(),
            profile_period: "weekly".into(),
            anomaly_dates: "all".into(),
            silhouette_features: "weekly".into(),
        }
    }
}

/// Command-line overrides, one per configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub pois: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub towers: Option<PathBuf>,
    #[arg(long)]
    pub cdr: Option<PathBuf>,
    /// lon_min,lat_min,lon_max,lat_max
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub bbox: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_size: Option<f64>,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub normalize_rows: Option<bool>,
    #[arg(long)]
    pub max_cells: Option<usize>,
    #[arg(long)]
    pub bin_minutes: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// paper|conserving
    #[arg(long)]
    pub allocation: Option<String>,
    /// Comma-separated dates (YYYY-MM-DD).
    #[arg(long, value_delimiter = ',')]
    pub holidays: Option<Vec<NaiveDate>>,
    /// weekly|daily
    #[arg(long)]
    pub profile_period: Option<String>,
    /// all|excluded
    #[arg(long)]
    pub anomaly_dates: Option<String>,
    /// weekly|full
    #[arg(long)]
    pub silhouette_features: Option<String>,
}

/// Which dates anomaly detection looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyDates {
    All,
    Excluded,
}

/// The parts of a configuration that need parsing beyond serde.
#[derive(Debug, Clone)]
pub struct Settings {
    pub allocation: AllocationMode,
    pub period: Period,
    pub anomaly_dates: AnomalyDates,
    pub features: FeatureMode,
    pub holidays: BTreeSet<NaiveDate>,
    pub bounds: Option<GeoBounds>,
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf> {
    std::path::absolute(base.join(p)).map_err(Error::Io)
}

impl RunConfig {
    /// Reads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base)?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        for p in [
            &mut self.pois,
            &mut self.taxonomy,
            &mut self.towers,
            &mut self.cdr,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            *p = absolute(base, p)?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let cwd = Path::new("");
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            )*};
        }
        for (dst, src) in [
            (&mut self.pois, &o.pois),
            (&mut self.taxonomy, &o.taxonomy),
            (&mut self.towers, &o.towers),
            (&mut self.cdr, &o.cdr),
        ] {
            if let Some(p) = src {
                *dst = Some(absolute(cwd, p)?);
            }
        }
        if let Some(b) = &o.bbox {
            let arr: [f64; 4] = b
                .clone()
                .try_into()
                .map_err(|_| Error::Input("--bbox needs four numbers".into()))?;
            self.bbox = Some(arr);
        }
        set!(
            grid_size,
            knn,
            k_max,
            seed,
            restarts,
            normalize_rows,
            max_cells,
            bin_minutes,
            alpha,
            allocation,
            holidays,
            profile_period,
            anomaly_dates,
            silhouette_features
        );
        Ok(())
    }

    pub fn set_out(&mut self, out: &Path) -> Result<()> {
        self.out = Some(absolute(Path::new(""), out)?);
        Ok(())
    }

    /// Checks every value before any work is done.
    pub fn validate(&self) -> Result<Settings> {
        let bad = |msg: String| Err(Error::Input(msg));
        if !(self.grid_size.is_finite() && self.grid_size > 0.0) {
            return bad(format!("grid_size must be positive, got {}", self.grid_size));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        for (name, v) in [
            ("knn", self.knn),
            ("k_max", self.k_max),
            ("restarts", self.restarts),
            ("max_cells", self.max_cells),
            ("bin_minutes", self.bin_minutes as usize),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if 1440 % self.bin_minutes != 0 {
            return bad(format!("bin_minutes {} does not divide a day", self.bin_minutes));
        }
        let anomaly_dates = match self.anomaly_dates.as_str() {
            "all" => AnomalyDates::All,
            "excluded" => AnomalyDates::Excluded,
            other => return bad(format!("unknown anomaly_dates `{other}` (all|excluded)")),
        };
        let bounds = match self.bbox {
            Some([a, b, c, d]) => Some(GeoBounds::new(a, b, c, d)?),
            None => None,
        };
        Ok(Settings {
            allocation: self.allocation.parse()?,
            period: self.profile_period.parse()?,
            anomaly_dates,
            features: self.silhouette_features.parse()?,
            holidays: self.holidays.iter().copied().collect(),
            bounds,
        })
    }

    /// The configuration as written to `effective_config.toml`. The output
    /// directory is left out so that runs into different directories echo
    /// identically.
    pub fn echo(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        toml::to_string(&c).expect("config serializes")
    }
}

/// Path of a required input, which must exist.
pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match path {
        None => Err(Error::Input(format!("`{key}` is not configured"))),
        Some(p) if !p.is_file() => Err(Error::Input(format!("{key} file {} not found", p.display()))),
        Some(p) => Ok(p),
    }
}
