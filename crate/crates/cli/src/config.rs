use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stnmf::ingest::parse_inclusive_range;
use stnmf::patterns::DEFAULT_MATCH_THRESHOLD;
use stnmf::rank::DEFAULT_RESTARTS;
use stnmf::{
    ColumnMapping, DispersionSpace, FactorSide, HourWindow, Init, NmfConfig, ParseOptions,
};

use crate::error::{CliError, CliResult};

/// Everything a pipeline run needs. Loaded from TOML, then overridden by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_a: Option<PathBuf>,
    pub input_b: Option<PathBuf>,
    /// Label for period A, or the value selected from the period column.
    pub period_a: Option<String>,
    pub period_b: Option<String>,
    pub delimiter: char,
    pub columns: ColumnMapping,
    /// Inclusive hour window, `7..18`.
    pub hours: String,
    /// Inclusive rank range to scan, `2..8`.
    pub ranks: String,
    pub rank_a: Option<usize>,
    pub rank_b: Option<usize>,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
    pub init: Init,
    pub restarts: usize,
    pub side: FactorSide,
    pub space: DispersionSpace,
    pub threshold: f64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let nmf = NmfConfig::new(1);
        Self {
            input_a: None,
            input_b: None,
            period_a: None,
            period_b: None,
            delimiter: ',',
            columns: ColumnMapping::default(),
            hours: HourWindow::default().to_string(),
            ranks: "2..8".into(),
            rank_a: None,
            rank_b: None,
            seed: nmf.seed,
            tol: nmf.tol,
            max_iters: nmf.max_iters,
            init: nmf.init,
            restarts: DEFAULT_RESTARTS,
            side: FactorSide::default(),
            space: DispersionSpace::default(),
            threshold: DEFAULT_MATCH_THRESHOLD,
            out: PathBuf::from("out"),
        }
    }
}

/// One of the two compared periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    A,
    B,
}

impl Period {
    pub const BOTH: [Period; 2] = [Period::A, Period::B];

    pub fn tag(self) -> &'static str {
        match self {
            Period::A => "a",
            Period::B => "b",
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn hour_window(&self) -> CliResult<HourWindow> {
        self.hours
            .parse()
            .map_err(|e: stnmf::Error| CliError::Usage(format!("--hours: {e}")))
    }

    pub fn rank_range(&self) -> CliResult<Vec<usize>> {
        let (lo, hi) = parse_inclusive_range(&self.ranks)
            .map_err(|e| CliError::Usage(format!("--ranks: {e}")))?;
        if lo == 0 {
            return Err(CliError::Usage("--ranks: ranks start at 1".into()));
        }
        Ok((lo..=hi).collect())
    }

    /// Checks every field against the constraints of the stage it feeds.
    pub fn validate(&self) -> CliResult<()> {
        self.hour_window()?;
        self.rank_range()?;
        let usage = |m: &str| Err(CliError::Usage(m.into()));
        if !self.delimiter.is_ascii() {
            return usage("--delimiter must be a single ASCII character");
        }
        if self.rank_a == Some(0) || self.rank_b == Some(0) {
            return usage("fixed ranks must be at least 1");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return usage("--tol must be positive");
        }
        if self.max_iters == 0 {
            return usage("--max-iters must be at least 1");
        }
        if self.restarts == 0 {
            return usage("--restarts must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return usage("--threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn input(&self, p: Period) -> Option<&Path> {
        match p {
            Period::A => self.input_a.as_deref(),
            Period::B => self.input_b.as_deref(),
        }
    }

    pub fn fixed_rank(&self, p: Period) -> Option<usize> {
        match p {
            Period::A => self.rank_a,
            Period::B => self.rank_b,
        }
    }

    fn period_value(&self, p: Period) -> Option<&str> {
        match p {
            Period::A => self.period_a.as_deref(),
            Period::B => self.period_b.as_deref(),
        }
    }

    /// Label written into outputs for the period.
    pub fn label(&self, p: Period) -> String {
        self.period_value(p).unwrap_or(p.tag()).to_string()
    }

    pub fn parse_options(&self, p: Period) -> ParseOptions {
        let period = match (&self.columns.period, self.period_value(p)) {
            (None, _) => Some(self.label(p)),
            (Some(_), v) => v.map(str::to_string),
        };
        ParseOptions {
            mapping: self.columns.clone(),
            delimiter: self.delimiter as u8,
            period,
        }
    }

    /// NMF settings shared by every rank. The run at rank `r` uses seed
    /// `rank_seed(seed, r)` in both the scan and the final factorization, so
    /// identical periods get identical factors.
    pub fn nmf_template(&self) -> NmfConfig {
        NmfConfig::new(1)
            .with_seed(self.seed)
            .with_tol(self.tol)
            .with_max_iters(self.max_iters)
            .with_init(self.init)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.rank_range().unwrap(), (2..=8).collect::<Vec<_>>());
        assert_eq!(c.hour_window().unwrap().len(), 12);
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig {
            input_a: Some("a.csv".into()),
            rank_b: Some(4),
            seed: 9,
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c: PipelineConfig =
            toml::from_str("seed = 3\nhours = \"8..10\"\n[columns]\nperiod = \"year\"\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.hour_window().unwrap().len(), 3);
        assert_eq!(c.columns.period.as_deref(), Some("year"));
        assert_eq!(c.columns.count, "all_motor_vehicles");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("sede = 3").is_err());
    }

    #[test]
    fn bad_fields_fail_validation() {
        for c in [
            PipelineConfig {
                threshold: 1.5,
                ..Default::default()
            },
            PipelineConfig {
                tol: 0.0,
                ..Default::default()
            },
            PipelineConfig {
                ranks: "0..3".into(),
                ..Default::default()
            },
            PipelineConfig {
                hours: "7..30".into(),
                ..Default::default()
            },
            PipelineConfig {
                rank_a: Some(0),
                ..Default::default()
            },
        ] {
            assert_eq!(c.validate().unwrap_err().exit_code(), 1);
        }
    }

    #[test]
    fn period_labels_and_filters() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.parse_options(Period::B).period.as_deref(), Some("b"));
        c.columns.period = Some("year".into());
        assert_eq!(c.parse_options(Period::A).period, None);
        c.period_a = Some("2019".into());
        assert_eq!(c.parse_options(Period::A).period.as_deref(), Some("2019"));
    }
}
