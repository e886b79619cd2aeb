//! Column-access cost of strided fetches from an open row.
//!
//! A strided pattern confined to one GRB-width fetch costs a single column
//! read; a pattern spanning g distinct GRB columns costs g reads at tCCD
//! spacing. Scattered strides therefore inflate the access pipeline even
//! though the same number of useful words comes back.

use super::{DramGeometry, TimingParams};

/// Cycles to fetch `count` words from an open row when consecutive needed
/// words are `stride` words apart.
pub fn stride_access_cost(
    stride: u32,
    count: u32,
    geometry: &DramGeometry,
    timing: &TimingParams,
) -> u64 {
    assert!(stride >= 1, "stride must be at least 1");
    if count == 0 {
        return 0;
    }
    let g = touched_grb_cols(stride, count, geometry);
    (g - 1) * timing.t_ccd + timing.read_slot
}

/// Distinct GRB-width columns touched by the access pattern.
pub fn touched_grb_cols(stride: u32, count: u32, geometry: &DramGeometry) -> u64 {
    let grb_words = geometry.grb_words() as u64;
    let mut cols = 0u64;
    let mut last = u64::MAX;
    for i in 0..count as u64 {
        let col = i * stride as u64 / grb_words;
        if col != last {
            cols += 1;
            last = col;
        }
    }
    cols
}

/// Full single-row access envelope around `grb_cols` column fetches:
/// activate, the column burst, data slot and precharge.
pub fn row_access_envelope(grb_cols: u64, timing: &TimingParams) -> u64 {
    timing.t_act + timing.t_rcd + (grb_cols - 1) * timing.t_ccd + timing.read_slot + timing.t_pre
}
