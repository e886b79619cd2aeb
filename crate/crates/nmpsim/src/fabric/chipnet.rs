//! Chip-level mesh with DIMM-link bridges. Chips of one DIMM form a mesh
//! row; the rows of adjacent DIMMs are bridged by vertical DIMM links.
//! Routing is deterministic X-then-Y, so ciphertext distribution paths are
//! reproducible. Chip pairs sit on horizontally adjacent chips of one DIMM.

use super::FabricError;

/// One traversed mesh link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChipHop {
    pub from: u32,
    pub to: u32,
    /// True when the hop bridges two DIMMs (vertical link).
    pub dimm_link: bool,
}

#[derive(Debug, Clone)]
pub struct ChipNetwork {
    /// Mesh rows = DIMMs.
    rows: u32,
    /// Mesh columns = chips per DIMM.
    cols: u32,
    pub chip_link_bytes_per_cycle: u64,
    pub dimm_link_bytes_per_cycle: u64,
    pub router_latency: u64,
}

impl ChipNetwork {
    pub fn new(dimms: u32, chips_per_dimm: u32) -> Result<Self, FabricError> {
        if dimms == 0 || chips_per_dimm == 0 {
            return Err(FabricError::BadConfig("empty chip mesh".into()));
        }
        Ok(Self {
            rows: dimms,
            cols: chips_per_dimm,
            chip_link_bytes_per_cycle: 240,
            dimm_link_bytes_per_cycle: 64,
            router_latency: 2,
        })
    }

    pub fn chips(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn coords(&self, chip: u32) -> (u32, u32) {
        (chip / self.cols, chip % self.cols)
    }

    pub fn chip_at(&self, row: u32, col: u32) -> u32 {
        row * self.cols + col
    }

    /// The two chips of pair `p`, horizontally adjacent in one DIMM.
    pub fn pair_chips(&self, pair: u32) -> (u32, u32) {
        let first = pair * 2;
        (first, first + 1)
    }

    pub fn chip_pairs(&self) -> u32 {
        self.chips() / 2
    }

    /// X-then-Y path between two chips.
    pub fn route(&self, src: u32, dst: u32) -> Vec<ChipHop> {
        let (sr, sc) = self.coords(src);
        let (dr, dc) = self.coords(dst);
        let mut hops = Vec::new();
        let mut col = sc;
        while col != dc {
            let next = if dc > col { col + 1 } else { col - 1 };
            hops.push(ChipHop {
                from: self.chip_at(sr, col),
                to: self.chip_at(sr, next),
                dimm_link: false,
            });
            col = next;
        }
        let mut row = sr;
        while row != dr {
            let next = if dr > row { row + 1 } else { row - 1 };
            hops.push(ChipHop {
                from: self.chip_at(row, col),
                to: self.chip_at(next, col),
                dimm_link: true,
            });
            row = next;
        }
        hops
    }

    /// Path and store-and-forward cycles for `bytes` between two chips;
    /// DIMM-boundary hops run at the DIMM-link bandwidth.
    pub fn route_chips(&self, src: u32, dst: u32, bytes: u64) -> (Vec<ChipHop>, u64) {
        let path = self.route(src, dst);
        let cycles = path
            .iter()
            .map(|h| {
                let bpc = if h.dimm_link {
                    self.dimm_link_bytes_per_cycle
                } else {
                    self.chip_link_bytes_per_cycle
                };
                bytes.div_ceil(bpc) + self.router_latency
            })
            .sum();
        (path, cycles)
    }
}

impl Default for ChipNetwork {
    fn default() -> Self {
        Self::new(2, 4).expect("default mesh is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacent_chips_are_one_hop() {
        let net = ChipNetwork::default();
        let (path, cycles) = net.route_chips(0, 1, 1024);
        assert_eq!(path.len(), 1);
        assert!(!path[0].dimm_link);
        assert_eq!(cycles, 1024u64.div_ceil(240) + 2);
    }

    #[test]
    fn corner_to_corner_is_manhattan_distance() {
        // 2x4 mesh: (0,0) -> (1,3) is 3 horizontal + 1 vertical hops
        let net = ChipNetwork::default();
        let path = net.route(0, 7);
        assert_eq!(path.len(), 4);
        assert_eq!(path.iter().filter(|h| h.dimm_link).count(), 1);
    }

    #[test]
    fn pair_chips_are_mesh_adjacent() {
        let net = ChipNetwork::default();
        for p in 0..net.chip_pairs() {
            let (a, b) = net.pair_chips(p);
            assert_eq!(net.route(a, b).len(), 1);
        }
    }

    #[test]
    fn dimm_hops_run_at_dimm_bandwidth() {
        let net = ChipNetwork::default();
        // chip 0 -> chip 4 is purely vertical
        let (path, cycles) = net.route_chips(0, 4, 1024);
        assert_eq!(path.len(), 1);
        assert!(path[0].dimm_link);
        assert_eq!(cycles, 1024u64.div_ceil(64) + 2);
    }

    #[test]
    fn route_is_deterministic_x_then_y() {
        let net = ChipNetwork::default();
        let p1 = net.route(0, 7);
        let p2 = net.route(0, 7);
        assert_eq!(p1, p2);
        assert!(!p1[0].dimm_link, "X leg comes first");
        assert!(p1[3].dimm_link, "Y leg comes last");
    }
}
