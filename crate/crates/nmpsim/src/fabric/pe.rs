//! Processing elements between subarray pairs: single-issue cores over a
//! fully pipelined modular multiplier (one butterfly-equivalent or one
//! multiply-accumulate per cycle), a 64-to-64 word crossbar and 0.5 KB
//! register files, chained by a 32 bit/cycle nearest-neighbor datapath.

use serde::{Deserialize, Serialize};

use super::FabricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeConfig {
    /// PEs per subarray pair.
    pub pe_num_per_pair: u32,
    pub rf_bytes: u32,
    pub crossbar_lanes: u32,
    /// Chain datapath width; 32 bits moves one word per cycle.
    pub chain_width_bits: u32,
    /// Router traversal cost per hop on the bank and chip networks.
    pub router_latency: u64,
    pub clock_ghz: u32,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            pe_num_per_pair: 8,
            rf_bytes: 512,
            crossbar_lanes: 64,
            chain_width_bits: 32,
            router_latency: 2,
            clock_ghz: 1,
        }
    }
}

impl PeConfig {
    pub fn validate(&self) -> Result<(), FabricError> {
        if self.pe_num_per_pair == 0 || !self.pe_num_per_pair.is_power_of_two() {
            return Err(FabricError::BadConfig(
                "pe_num_per_pair must be a power of two >= 1".into(),
            ));
        }
        if self.rf_bytes < 4 || self.chain_width_bits == 0 || self.crossbar_lanes == 0 {
            return Err(FabricError::BadConfig("degenerate PE parameters".into()));
        }
        Ok(())
    }

    /// RF capacity in 32-bit words (128 at the 0.5 KB default).
    pub fn rf_words(&self) -> u32 {
        self.rf_bytes / 4
    }

    /// Words moved per cycle over one chain hop.
    pub fn chain_words_per_cycle(&self) -> u32 {
        (self.chain_width_bits / 32).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeUop {
    Butterfly,
    /// Multiply-accumulate on the ACC path (reduction mode).
    Mac,
    /// Elementwise add/sub/mul.
    Ew,
    /// Data shift through the crossbar (remapping path).
    Shift,
}

/// RF occupancy tracker; overflow is a compiler bug, not a stall.
#[derive(Debug, Clone, Default)]
pub struct PeRegisterFile {
    used_words: u32,
}

impl PeRegisterFile {
    pub fn reserve(&mut self, words: u32, config: &PeConfig) -> Result<(), FabricError> {
        let free = config.rf_words() - self.used_words;
        if words > free {
            return Err(FabricError::RfOverflow { need: words, free });
        }
        self.used_words += words;
        Ok(())
    }

    pub fn release(&mut self, words: u32) {
        self.used_words = self.used_words.saturating_sub(words);
    }

    pub fn used(&self) -> u32 {
        self.used_words
    }
}

/// One permutation of a 64-lane word group costs one cycle; the lane map
/// must be a bijection.
pub fn crossbar_permute(values: &[u32], perm: &[usize]) -> Result<(Vec<u32>, u64), FabricError> {
    if perm.len() != values.len() {
        return Err(FabricError::NotBijective);
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(FabricError::NotBijective);
        }
        seen[p] = true;
    }
    let mut out = vec![0u32; values.len()];
    for (dst, &src) in perm.iter().enumerate() {
        out[dst] = values[src];
    }
    Ok((out, 1))
}

/// Cycles to move `words` between two chain-adjacent PEs.
pub fn chain_transfer(
    src_pe: u32,
    dst_pe: u32,
    words: u64,
    config: &PeConfig,
) -> Result<u64, FabricError> {
    if src_pe.abs_diff(dst_pe) != 1 || src_pe.max(dst_pe) >= config.pe_num_per_pair {
        return Err(FabricError::NotAdjacent(src_pe, dst_pe));
    }
    Ok(words.div_ceil(config.chain_words_per_cycle() as u64))
}

/// Multi-hop chain cost; multi-hop paths are compiler-expanded, so this is
/// the planning formula: store-and-forward pays the full word count per hop,
/// the pipelined path pays one fill per extra hop.
pub fn chain_path_cycles(words: u64, hops: u64, pipelined: bool, config: &PeConfig) -> u64 {
    if hops == 0 || words == 0 {
        return 0;
    }
    let per_hop = words.div_ceil(config.chain_words_per_cycle() as u64);
    if pipelined {
        per_hop + hops - 1
    } else {
        per_hop * hops
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_design_point() {
        let c = PeConfig::default();
        assert_eq!(c.pe_num_per_pair, 8);
        assert_eq!(c.rf_words(), 128);
        assert_eq!(c.crossbar_lanes, 64);
        assert_eq!(c.chain_words_per_cycle(), 1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_non_power_of_two_pes() {
        let c = PeConfig { pe_num_per_pair: 6, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rf_overflow_is_loud() {
        let c = PeConfig::default();
        let mut rf = PeRegisterFile::default();
        rf.reserve(100, &c).unwrap();
        assert!(matches!(
            rf.reserve(29, &c),
            Err(FabricError::RfOverflow { need: 29, free: 28 })
        ));
        rf.release(50);
        assert!(rf.reserve(29, &c).is_ok());
    }

    #[test]
    fn crossbar_is_one_cycle_and_value_preserving() {
        let vals: Vec<u32> = (0..64).collect();
        let ident: Vec<usize> = (0..64).collect();
        let (out, cyc) = crossbar_permute(&vals, &ident).unwrap();
        assert_eq!(out, vals);
        assert_eq!(cyc, 1);

        let rev: Vec<usize> = (0..64).rev().collect();
        let (out, cyc) = crossbar_permute(&vals, &rev).unwrap();
        assert_eq!(cyc, 1);
        let mut expect = vals.clone();
        expect.reverse();
        assert_eq!(out, expect);
    }

    #[test]
    fn crossbar_rejects_non_bijections() {
        let vals = vec![1u32, 2, 3];
        assert!(matches!(
            crossbar_permute(&vals, &[0, 0, 1]),
            Err(FabricError::NotBijective)
        ));
        assert!(matches!(
            crossbar_permute(&vals, &[0, 1]),
            Err(FabricError::NotBijective)
        ));
    }

    #[test]
    fn permutation_composed_with_inverse_is_identity() {
        let vals: Vec<u32> = (0..64).map(|i| i * 7 + 1).collect();
        let perm: Vec<usize> = (0..64).map(|i| (i * 13 + 5) % 64).collect();
        let mut inv = vec![0usize; 64];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let (once, _) = crossbar_permute(&vals, &perm).unwrap();
        let (back, _) = crossbar_permute(&once, &inv).unwrap();
        assert_eq!(back, vals);
    }

    #[test]
    fn chain_moves_one_word_per_cycle() {
        let c = PeConfig::default();
        assert_eq!(chain_transfer(0, 1, 32, &c).unwrap(), 32);
        assert!(matches!(
            chain_transfer(0, 2, 32, &c),
            Err(FabricError::NotAdjacent(0, 2))
        ));
        assert!(chain_transfer(7, 8, 1, &c).is_err()); // past the chain end
    }

    #[test]
    fn multi_hop_paths_pipeline_or_store_and_forward() {
        let c = PeConfig::default();
        assert_eq!(chain_path_cycles(32, 3, false, &c), 96);
        assert_eq!(chain_path_cycles(32, 3, true, &c), 34);
        assert_eq!(chain_path_cycles(32, 1, true, &c), 32);
    }
}
