//! Fixtures shared by the benchmarks.

use stnmf::{
    build_matrix, generate, minmax_normalize, HourWindow, NormalizedMatrix, SyntheticData,
    SyntheticSpec,
};

/// Planted-pattern data over the 07..18 window.
pub fn synthetic(n_locations: usize, rank: usize, seed: u64) -> SyntheticData {
    let spec = SyntheticSpec::new(n_locations, 12, rank)
        .with_noise(0.03)
        .with_seed(seed);
    generate(&spec).expect("valid spec")
}

pub fn normalized(data: &SyntheticData) -> NormalizedMatrix {
    let m = build_matrix(&data.records, HourWindow::default()).expect("records in window");
    minmax_normalize(&m)
}
