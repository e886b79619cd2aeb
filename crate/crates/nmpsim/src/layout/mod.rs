//! Placement of RNS polynomial tiles onto the hierarchy, and the runtime
//! remapping that doubles or halves the number of 32-bit columns a tile
//! occupies (`poly_col`).
//!
//! One subarray row holds one tile of every channel of a polynomial side by
//! side (channels ascending, coefficients ascending), so channel reductions
//! never leave the subarray. A polynomial's coefficient dimension is tiled
//! into contiguous per-pair blocks across the subarray pairs of one bank
//! group; the partner subarray of every pair is the ping-pong side. Data
//! occupies half the subarrays of a bank, the other half stages reads or
//! writes of the streaming loop and receives remapped rows.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dram::DramGeometry;
use crate::fabric::PeConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("poly_col {0} outside [1, {1}]")]
    OutOfRange(u32, u32),
    #[error("polynomial {0} has no placement")]
    NotPlaced(u32),
    #[error("channel {channel} out of range for polynomial {poly}")]
    NoSuchChannel { poly: u32, channel: u32 },
    #[error("coefficient range {0}..{1} outside degree")]
    BadRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemapDirection {
    Double,
    Halve,
}

/// What a workload asks the layout to host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutRequest {
    pub degree: usize,
    /// RNS channels per polynomial.
    pub channels: u32,
    /// Two-polynomial ciphertexts, each allocated to a chip pair.
    pub ciphertexts: u32,
    /// Single polynomials distributed round-robin across chips.
    pub standalone_polys: u32,
    /// Chip pairs that must hold an evaluation-key replica (key-consuming
    /// stages run on them).
    pub key_replica_pairs: u32,
}

/// Physical coordinates of one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TileAddr {
    pub chip: u32,
    pub bank: u32,
    /// Subarray pair within the bank.
    pub pair: u32,
    /// Concrete subarray currently holding the data side of the pair.
    pub subarray: u32,
    pub row: u32,
    pub col_start: u32,
    pub cols: u32,
}

/// Placement of one polynomial: a contiguous coefficient block per engaged
/// subarray pair inside one bank group of one chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolyPlacement {
    pub chip: u32,
    /// Bank group hosting the polynomial.
    pub group: u32,
    /// First row slot used inside every engaged subarray.
    pub row_base: u32,
    pub degree: usize,
    pub channels: u32,
    pub pairs_engaged: u32,
}

/// Auxiliary data co-location: twiddles live with their polynomials,
/// evaluation keys are replicated on every executing chip pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuxDataPlacement {
    pub twiddle_chips: BTreeSet<u32>,
    pub key_replica_pairs: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementMap {
    geometry: DramGeometry,
    pe: PeConfig,
    poly_col: u32,
    /// Which subarray of each pair currently holds the data (0 or 1);
    /// flips on every remap.
    data_side: u32,
    polys: Vec<PolyPlacement>,
    pub aux: AuxDataPlacement,
}

/// Banks per skip-network group; matches the bank network default.
pub const BANK_GROUP_SIZE: u32 = 16;

/// Canonical working-set of one subarray pair in coefficients: 32 per PE at
/// the 8-PE design point. Tiles wider than this take the whole block.
pub const PAIR_BLOCK_COEFFS: u32 = 256;

impl PlacementMap {
    /// Places the requested polynomials, choosing the largest power-of-two
    /// `poly_col` that still fits every channel of a polynomial into one
    /// subarray row.
    pub fn build(
        req: &LayoutRequest,
        geometry: DramGeometry,
        pe: PeConfig,
    ) -> Result<Self, LayoutError> {
        Self::build_with(req, geometry, pe, None)
    }

    /// Like `build`, but with an explicit starting `poly_col` (design-space
    /// sweeps); it may not exceed the natural maximum for the channel count.
    pub fn build_with(
        req: &LayoutRequest,
        geometry: DramGeometry,
        pe: PeConfig,
        forced_poly_col: Option<u32>,
    ) -> Result<Self, LayoutError> {
        let n = req.degree;
        if !n.is_power_of_two() || n < 2 {
            return Err(LayoutError::CapacityExceeded(format!(
                "degree {n} is not a power of two >= 2"
            )));
        }
        if req.channels == 0 {
            return Err(LayoutError::CapacityExceeded("zero channels".into()));
        }
        let row_cols = geometry.row_cols();
        if req.channels > row_cols {
            return Err(LayoutError::CapacityExceeded(format!(
                "{} channels cannot share a {row_cols}-column row",
                req.channels
            )));
        }
        let mut poly_col = prev_power_of_two(row_cols / req.channels);
        poly_col = poly_col.min(n as u32);
        if let Some(pc) = forced_poly_col {
            if !pc.is_power_of_two() || pc < 1 || pc > poly_col {
                return Err(LayoutError::OutOfRange(pc, poly_col));
            }
            poly_col = pc;
        }

        let chips = geometry.chips();
        let chip_pairs = chips / 2;
        if req.ciphertexts > 0 && chip_pairs == 0 {
            return Err(LayoutError::CapacityExceeded("no chip pair available".into()));
        }
        let groups = geometry.banks_per_chip / BANK_GROUP_SIZE;

        let mut map = Self {
            geometry,
            pe,
            poly_col,
            data_side: 0,
            polys: Vec::new(),
            aux: AuxDataPlacement::default(),
        };

        // row cursor per (chip, group) so stacked polynomials do not collide
        let mut cursors = vec![0u32; (chips * groups.max(1)) as usize];
        let mut place = |map: &mut Self, chip: u32, seq: u32| -> Result<(), LayoutError> {
            let group = seq % groups.max(1);
            let p = map.place_poly(req, chip, group, &mut cursors[(chip * groups.max(1) + group) as usize])?;
            map.polys.push(p);
            Ok(())
        };

        for ct in 0..req.ciphertexts {
            let pair = ct % chip_pairs.max(1);
            let seq = ct / chip_pairs.max(1);
            place(&mut map, pair * 2, seq)?;
            place(&mut map, pair * 2 + 1, seq)?;
        }
        for i in 0..req.standalone_polys {
            let chip = i % chips;
            let seq = i / chips;
            place(&mut map, chip, seq)?;
        }

        for p in &map.polys {
            map.aux.twiddle_chips.insert(p.chip);
        }
        for kp in 0..req.key_replica_pairs.min(chip_pairs) {
            map.aux.key_replica_pairs.insert(kp);
        }
        Ok(map)
    }

    fn place_poly(
        &self,
        req: &LayoutRequest,
        chip: u32,
        group: u32,
        cursor: &mut u32,
    ) -> Result<PolyPlacement, LayoutError> {
        let n = req.degree;
        let block = PAIR_BLOCK_COEFFS.max(self.poly_col) as usize;
        let max_pairs = (self.geometry.pairs_per_bank() * BANK_GROUP_SIZE) as usize;
        let pairs_engaged = (n / block).clamp(1, max_pairs);
        let tiles_per_pair = (n / pairs_engaged).div_ceil(self.poly_col as usize) as u32;
        let row_base = *cursor;
        if row_base + tiles_per_pair > self.geometry.rows_per_subarray {
            return Err(LayoutError::CapacityExceeded(format!(
                "chip {chip} group {group}: need rows {row_base}..{} of {}",
                row_base + tiles_per_pair,
                self.geometry.rows_per_subarray
            )));
        }
        *cursor += tiles_per_pair;
        Ok(PolyPlacement {
            chip,
            group,
            row_base,
            degree: n,
            channels: req.channels,
            pairs_engaged: pairs_engaged as u32,
        })
    }

    pub fn poly_col(&self) -> u32 {
        self.poly_col
    }

    pub fn data_side(&self) -> u32 {
        self.data_side
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    pub fn pe(&self) -> &PeConfig {
        &self.pe
    }

    pub fn polys(&self) -> &[PolyPlacement] {
        &self.polys
    }

    pub fn poly(&self, id: u32) -> Result<&PolyPlacement, LayoutError> {
        self.polys.get(id as usize).ok_or(LayoutError::NotPlaced(id))
    }

    pub(crate) fn poly_mut(&mut self, id: u32) -> Result<&mut PolyPlacement, LayoutError> {
        self.polys.get_mut(id as usize).ok_or(LayoutError::NotPlaced(id))
    }

    /// Registers a derived polynomial at the same coordinates as `src` with
    /// a new channel count (operators that grow or shrink the basis).
    pub fn derive_poly(&mut self, src: u32, channels: u32) -> Result<u32, LayoutError> {
        let mut p = *self.poly(src)?;
        p.channels = channels;
        self.polys.push(p);
        Ok(self.polys.len() as u32 - 1)
    }

    /// Coefficients held by one engaged pair of this polynomial.
    pub fn coeffs_per_pair(&self, p: &PolyPlacement) -> u32 {
        (p.degree / p.pairs_engaged as usize) as u32
    }

    /// Row slots one channel block occupies per pair at the current poly_col.
    pub fn rows_per_pair(&self, p: &PolyPlacement) -> u32 {
        self.coeffs_per_pair(p).div_ceil(self.poly_col).max(1)
    }

    /// Banks engaged by the polynomial inside its group.
    pub fn banks_engaged(&self, p: &PolyPlacement) -> u32 {
        p.pairs_engaged.div_ceil(self.geometry.pairs_per_bank())
    }

    /// Bank and in-bank pair for the k-th engaged pair of a polynomial.
    pub fn pair_coords(&self, p: &PolyPlacement, k: u32) -> (u32, u32) {
        let per_bank = self.geometry.pairs_per_bank();
        (
            p.group * BANK_GROUP_SIZE + k / per_bank,
            k % per_bank,
        )
    }

    /// Subarray currently holding data for a pair.
    pub fn data_subarray(&self, pair: u32) -> u32 {
        pair * 2 + self.data_side
    }

    /// Ping-pong partner of a pair.
    pub fn partner_subarray(&self, pair: u32) -> u32 {
        pair * 2 + (1 - self.data_side)
    }

    /// Exact physical coordinates of a coefficient range of one channel.
    pub fn locate(
        &self,
        poly: u32,
        channel: u32,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<TileAddr>, LayoutError> {
        let p = *self.poly(poly)?;
        if channel >= p.channels {
            return Err(LayoutError::NoSuchChannel { poly, channel });
        }
        if range.start >= range.end || range.end > p.degree {
            return Err(LayoutError::BadRange(range.start, range.end));
        }
        let pc = self.poly_col as usize;
        let per_pair = self.coeffs_per_pair(&p) as usize;
        let first_tile = range.start / pc;
        let last_tile = (range.end - 1) / pc;
        let mut out = Vec::with_capacity(last_tile - first_tile + 1);
        for t in first_tile..=last_tile {
            let tile_begin = t * pc;
            let tile_end = (tile_begin + pc).min(p.degree);
            let lo = range.start.max(tile_begin);
            let hi = range.end.min(tile_end);
            let pair_k = (tile_begin / per_pair) as u32;
            let (bank, pair) = self.pair_coords(&p, pair_k);
            let row_in_pair = ((tile_begin % per_pair) / pc) as u32;
            out.push(TileAddr {
                chip: p.chip,
                bank,
                pair,
                subarray: self.data_subarray(pair),
                row: p.row_base + row_in_pair,
                col_start: channel * self.poly_col + (lo - tile_begin) as u32,
                cols: (hi - lo) as u32,
            });
        }
        Ok(out)
    }

    /// Doubles or halves `poly_col`, flipping the data side: the re-layout
    /// streams rows through the PEs into the partner subarray. Pure
    /// re-layout; engaged pairs and coefficient blocks are unchanged.
    pub fn remap(&self, direction: RemapDirection) -> Result<PlacementMap, LayoutError> {
        let row_cols = self.geometry.row_cols();
        let new_col = match direction {
            RemapDirection::Double => self.poly_col.checked_mul(2).unwrap_or(u32::MAX),
            RemapDirection::Halve => self.poly_col / 2,
        };
        if new_col < 1 || new_col > row_cols {
            return Err(LayoutError::OutOfRange(new_col, row_cols));
        }
        // widening a tile past the pair's coefficient block would merge pairs
        for p in &self.polys {
            let per_pair = self.coeffs_per_pair(p);
            if new_col > per_pair {
                return Err(LayoutError::OutOfRange(new_col, per_pair));
            }
        }
        let mut next = self.clone();
        next.poly_col = new_col;
        next.data_side = 1 - self.data_side;
        Ok(next)
    }

    /// Structured-text dump of every tile, for golden-file inspection.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "poly_col = {}\ndata_side = {}\n",
            self.poly_col, self.data_side
        ));
        for (id, p) in self.polys.iter().enumerate() {
            out.push_str(&format!(
                "poly {id}: chip {} group {} pairs {} rows {}..{} channels {}\n",
                p.chip,
                p.group,
                p.pairs_engaged,
                p.row_base,
                p.row_base + self.rows_per_pair(p),
                p.channels
            ));
            for ch in 0..p.channels {
                for tile in self.locate(id as u32, ch, 0..p.degree).unwrap() {
                    out.push_str(&format!(
                        "  ch {ch} chip {} bank {} pair {} sa {} row {} cols {}+{}\n",
                        tile.chip, tile.bank, tile.pair, tile.subarray, tile.row,
                        tile.col_start, tile.cols
                    ));
                }
            }
        }
        out
    }
}

fn prev_power_of_two(v: u32) -> u32 {
    if v == 0 {
        0
    } else {
        1 << (31 - v.leading_zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn req(degree: usize, channels: u32) -> LayoutRequest {
        LayoutRequest {
            degree,
            channels,
            ciphertexts: 0,
            standalone_polys: 1,
            key_replica_pairs: 0,
        }
    }

    fn build(r: &LayoutRequest) -> PlacementMap {
        PlacementMap::build(r, DramGeometry::table1(), PeConfig::default()).unwrap()
    }

    #[test]
    fn poly_col_fills_the_row_with_all_channels() {
        // 3 channels in a 512-column row: largest power of two is 128
        let map = build(&req(1 << 12, 3));
        assert_eq!(map.poly_col(), 128);
        // 2 channels: 256 columns each
        let map = build(&req(1 << 12, 2));
        assert_eq!(map.poly_col(), 256);
    }

    #[test]
    fn single_channel_small_poly_gets_full_row_width() {
        // 2 KB row = 512 32-bit columns
        let map = build(&req(1 << 10, 1));
        assert_eq!(map.poly_col(), 512);
        let p = &map.polys()[0];
        assert_eq!(p.pairs_engaged, 2);
        assert_eq!(map.rows_per_pair(p), 1);
    }

    #[test]
    fn rlwe_ciphertext_occupies_a_chip_pair() {
        let r = LayoutRequest {
            degree: 1 << 12,
            channels: 3,
            ciphertexts: 1,
            standalone_polys: 0,
            key_replica_pairs: 1,
        };
        let map = build(&r);
        assert_eq!(map.polys().len(), 2);
        assert_eq!(map.polys()[0].chip, 0);
        assert_eq!(map.polys()[1].chip, 1);
        assert!(map.aux.key_replica_pairs.contains(&0));
        assert!(map.aux.twiddle_chips.contains(&0) && map.aux.twiddle_chips.contains(&1));
    }

    #[test]
    fn canonical_ntt_shape_for_large_polys() {
        // 2^16 over 2 channels: 256 coefficients per pair across 16 banks
        let map = build(&req(1 << 16, 2));
        let p = &map.polys()[0];
        assert_eq!(p.pairs_engaged, 256);
        assert_eq!(map.coeffs_per_pair(p), 256);
        assert_eq!(map.banks_engaged(p), 16);
        // 2^12 stays within one bank
        let map = build(&req(1 << 12, 2));
        let p = &map.polys()[0];
        assert_eq!(p.pairs_engaged, 16);
        assert_eq!(map.banks_engaged(p), 1);
    }

    #[test]
    fn tiles_distribute_evenly_across_engaged_banks() {
        let map = build(&req(1 << 16, 3));
        let p = &map.polys()[0];
        let mut per_bank: BTreeMap<u32, u32> = BTreeMap::new();
        for ch in 0..p.channels {
            for t in map.locate(0, ch, 0..p.degree).unwrap() {
                *per_bank.entry(t.bank).or_default() += 1;
            }
        }
        let counts: Vec<u32> = per_bank.values().copied().collect();
        assert_eq!(per_bank.len() as u32, map.banks_engaged(p));
        assert!(counts.iter().all(|&c| c == counts[0]), "{counts:?}");
    }

    #[test]
    fn locate_full_range_covers_each_coefficient_once() {
        let map = build(&req(1 << 12, 3));
        let p = &map.polys()[0];
        let tiles = map.locate(0, 1, 0..p.degree).unwrap();
        let total: u32 = tiles.iter().map(|t| t.cols).sum();
        assert_eq!(total as usize, p.degree);
        // no two tiles overlap in (subarray, row, column) space
        let mut seen = BTreeSet::new();
        for t in &tiles {
            for c in t.col_start..t.col_start + t.cols {
                assert!(seen.insert((t.chip, t.bank, t.subarray, t.row, c)));
            }
        }
    }

    #[test]
    fn locate_single_coefficient_and_straddling_range() {
        let map = build(&req(1 << 12, 2));
        let one = map.locate(0, 0, 7..8).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].cols, 1);
        // a range straddling a tile boundary yields two disjoint entries
        let pc = map.poly_col() as usize;
        let straddle = map.locate(0, 0, pc - 2..pc + 2).unwrap();
        assert_eq!(straddle.len(), 2);
        assert_eq!(straddle[0].cols, 2);
        assert_eq!(straddle[1].cols, 2);
        assert_ne!(
            (straddle[0].bank, straddle[0].pair, straddle[0].row),
            (straddle[1].bank, straddle[1].pair, straddle[1].row)
        );
    }

    #[test]
    fn locate_rejects_bad_requests() {
        let map = build(&req(1 << 10, 2));
        assert!(matches!(map.locate(5, 0, 0..4), Err(LayoutError::NotPlaced(5))));
        assert!(matches!(
            map.locate(0, 9, 0..4),
            Err(LayoutError::NoSuchChannel { .. })
        ));
        assert!(map.locate(0, 0, 0..(1 << 11)).is_err());
    }

    #[test]
    fn remap_halve_then_double_is_identity() {
        let map = build(&req(1 << 12, 2));
        let back = map
            .remap(RemapDirection::Halve)
            .unwrap()
            .remap(RemapDirection::Double)
            .unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn remap_changes_row_footprint_and_side() {
        let map = build(&req(1 << 12, 4));
        let p = &map.polys()[0];
        let rows_before = map.rows_per_pair(p);
        let halved = map.remap(RemapDirection::Halve).unwrap();
        assert_eq!(halved.poly_col(), map.poly_col() / 2);
        assert_eq!(halved.rows_per_pair(&halved.polys()[0]), rows_before * 2);
        assert_ne!(halved.data_side(), map.data_side());
        // doubling packs remaining channels into fewer rows with wider tiles
        let doubled = map.remap(RemapDirection::Double).unwrap();
        assert_eq!(doubled.poly_col(), map.poly_col() * 2);
        assert_eq!(doubled.rows_per_pair(&doubled.polys()[0]), rows_before / 2);
    }

    #[test]
    fn remap_out_of_range_is_rejected() {
        let map = build(&req(1 << 12, 1));
        // poly_col capped at 512 by the row; doubling overflows the row
        let mut m = map;
        while m.poly_col() < 512 {
            m = m.remap(RemapDirection::Double).unwrap();
        }
        assert!(matches!(
            m.remap(RemapDirection::Double),
            Err(LayoutError::OutOfRange(1024, 512))
        ));
    }

    #[test]
    fn remap_preserves_coefficient_coverage() {
        // every (channel, coefficient) maps to exactly one slot before and after
        let map = build(&req(1 << 12, 3));
        for m in [&map, &map.remap(RemapDirection::Halve).unwrap()] {
            let p = &m.polys()[0];
            let mut slots = BTreeSet::new();
            let mut coeffs = 0usize;
            for ch in 0..p.channels {
                for t in m.locate(0, ch, 0..p.degree).unwrap() {
                    coeffs += t.cols as usize;
                    for c in t.col_start..t.col_start + t.cols {
                        assert!(slots.insert((t.bank, t.subarray, t.row, c)));
                    }
                }
            }
            assert_eq!(coeffs, p.degree * p.channels as usize);
        }
    }

    #[test]
    fn capacity_errors_name_the_constraint() {
        // more channels than row columns
        let err = PlacementMap::build(
            &req(1 << 12, 4096),
            DramGeometry::table1(),
            PeConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LayoutError::CapacityExceeded(ref s) if s.contains("channels")));
        // row exhaustion: tiny rows with a huge polynomial
        let mut g = DramGeometry::table1();
        g.rows_per_subarray = 2;
        let err = PlacementMap::build(&req(1 << 20, 2), g, PeConfig::default()).unwrap_err();
        assert!(matches!(err, LayoutError::CapacityExceeded(ref s) if s.contains("rows")));
    }

    #[test]
    fn stacked_polys_get_disjoint_rows() {
        let r = LayoutRequest {
            degree: 1 << 12,
            channels: 2,
            ciphertexts: 0,
            standalone_polys: 64, // 8 per chip, cycling the 4 groups twice
            key_replica_pairs: 0,
        };
        let map = build(&r);
        let mut seen = BTreeSet::new();
        for (id, p) in map.polys().iter().enumerate() {
            for ch in 0..p.channels {
                for t in map.locate(id as u32, ch, 0..p.degree).unwrap() {
                    for c in t.col_start..t.col_start + t.cols {
                        assert!(
                            seen.insert((t.chip, t.bank, t.subarray, t.row, c)),
                            "poly {id} overlaps at {t:?}"
                        );
                    }
                }
            }
        }
    }
}
