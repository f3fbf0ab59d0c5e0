//! Spatio-temporal traffic pattern mining with nonnegative matrix
//! factorization.
//!
//! The pipeline sums raw vehicle counts into a location × hour matrix,
//! min-max scales it, factorizes it into location and hour loadings, picks a
//! rank from cluster dispersion of the location loadings, and compares the
//! patterns found in two periods.

pub mod error;
pub mod export;
pub mod ingest;
pub mod nmf;
pub mod patterns;
pub mod rank;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use ingest::{
    build_matrix, minmax_normalize, parse_records, ColumnMapping, ColumnScale, CountMatrix,
    HourWindow, Location, NormalizedMatrix, ParseOptions, ParsedRecords, TrafficRecord,
};
pub use nmf::{factorize, factorize_best, reconstruction_error, FactorPair, Init, NmfConfig};
pub use patterns::{
    compare_periods, extract_patterns, match_patterns, summary_text, to_count_scale,
    ComparisonReport, PatternMatch, PatternSet,
};
pub use rank::{
    assign_clusters, between_dispersion, calinski_harabasz, rank_scan, within_dispersion,
    ClusterAssignment, DispersionSpace, FactorSide, RankScanEntry, RankScanResult, ScanOptions,
};
pub use synth::{generate, generate_pair, SyntheticData, SyntheticPairSpec, SyntheticSpec};
