//! Bank-level skip network: banks are grouped, each group routes any of its
//! own pairs in a single step, and groups are bridged by per-offset gateway
//! links to the neighboring groups. Every bank pair is reachable in at most
//! two routing steps; the exhaustive hop-bound test is the gatekeeper for
//! any substituted adjacency.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::FabricError;

pub type BankLink = (u32, u32);

#[derive(Debug, Clone)]
pub struct BankNetwork {
    banks: u32,
    group_size: u32,
    /// Symmetric link set, each link stored with the lower bank first.
    links: BTreeSet<BankLink>,
    /// Usable payload bytes per cycle on one link (aggregate level bandwidth
    /// divided across concurrently usable links).
    pub link_bytes_per_cycle: u64,
    pub router_latency: u64,
}

impl BankNetwork {
    /// Default topology for `banks` banks in groups of `group_size`:
    /// one-step routing inside a group, gateway links at matching offsets to
    /// the groups at distance 1 and 2.
    pub fn new(banks: u32, group_size: u32) -> Result<Self, FabricError> {
        if banks == 0 || group_size == 0 || banks % group_size != 0 {
            return Err(FabricError::BadConfig(
                "banks must be a positive multiple of group_size".into(),
            ));
        }
        let groups = banks / group_size;
        let mut links = BTreeSet::new();
        for g in 0..groups {
            let base = g * group_size;
            // group router: every in-group pair is one routing step
            for a in 0..group_size {
                for b in a + 1..group_size {
                    links.insert((base + a, base + b));
                }
            }
            // gateway links to groups at distance 1 and 2, same bank offset
            for delta in [1u32, 2] {
                if groups > delta {
                    let h = (g + delta) % groups;
                    for off in 0..group_size {
                        let (x, y) = (base + off, h * group_size + off);
                        links.insert((x.min(y), x.max(y)));
                    }
                }
            }
        }
        Ok(Self {
            banks,
            group_size,
            links,
            link_bytes_per_cycle: 50,
            router_latency: 2,
        })
    }

    /// Replaces the adjacency; the hop-bound invariant must be re-verified
    /// by the caller (the exhaustive test in this module is the template).
    pub fn with_links(mut self, links: BTreeSet<BankLink>) -> Self {
        self.links = links;
        self
    }

    pub fn banks(&self) -> u32 {
        self.banks
    }

    pub fn group_of(&self, bank: u32) -> u32 {
        bank / self.group_size
    }

    pub fn linked(&self, a: u32, b: u32) -> bool {
        self.links.contains(&(a.min(b), a.max(b)))
    }

    pub fn links(&self) -> &BTreeSet<BankLink> {
        &self.links
    }

    /// Shortest path in routing steps between two banks; BFS with sorted
    /// neighbor expansion, so the returned path is deterministic.
    pub fn route(&self, src: u32, dst: u32) -> Option<Vec<BankLink>> {
        if src == dst {
            return Some(Vec::new());
        }
        let mut prev: BTreeMap<u32, u32> = BTreeMap::new();
        let mut queue = VecDeque::from([src]);
        'bfs: while let Some(cur) = queue.pop_front() {
            for next in self.neighbors(cur) {
                if next != src && !prev.contains_key(&next) {
                    prev.insert(next, cur);
                    if next == dst {
                        break 'bfs;
                    }
                    queue.push_back(next);
                }
            }
        }
        prev.contains_key(&dst).then(|| {
            let mut path = Vec::new();
            let mut cur = dst;
            while cur != src {
                let p = prev[&cur];
                path.push((p.min(cur), p.max(cur)));
                cur = p;
            }
            path.reverse();
            path
        })
    }

    fn neighbors(&self, bank: u32) -> Vec<u32> {
        (0..self.banks).filter(|&b| self.linked(bank, b)).collect()
    }

    /// Path and store-and-forward cycle count for moving `bytes` between two
    /// banks of one chip.
    pub fn route_banks(&self, src: u32, dst: u32, bytes: u64) -> Option<(Vec<BankLink>, u64)> {
        let path = self.route(src, dst)?;
        let per_hop = bytes.div_ceil(self.link_bytes_per_cycle) + self.router_latency;
        let cycles = per_hop * path.len() as u64;
        Some((path, cycles))
    }
}

impl Default for BankNetwork {
    fn default() -> Self {
        Self::new(64, 16).expect("default topology is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_group_pairs_route_in_one_step() {
        let net = BankNetwork::default();
        for a in 0..16 {
            for b in 0..16 {
                if a != b {
                    assert_eq!(net.route(a, b).unwrap().len(), 1);
                }
            }
        }
    }

    #[test]
    fn exhaustive_hop_bound_is_exactly_two() {
        let net = BankNetwork::default();
        let mut max_hops = 0;
        for a in 0..64 {
            for b in 0..64 {
                if a == b {
                    continue;
                }
                let hops = net.route(a, b).expect("connected").len();
                assert!(hops <= 2, "{a}->{b} took {hops} hops");
                if net.group_of(a) == net.group_of(b) {
                    assert_eq!(hops, 1, "{a}->{b} shares a group");
                }
                max_hops = max_hops.max(hops);
            }
        }
        assert_eq!(max_hops, 2);
    }

    #[test]
    fn links_are_symmetric_and_costed() {
        let net = BankNetwork::default();
        for &(a, b) in net.links() {
            assert!(net.linked(a, b) && net.linked(b, a));
        }
        // one hop: ceil(1024/50) + router
        let (path, cycles) = net.route_banks(0, 5, 1024).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(cycles, 21 + 2);
        // two hops double the per-hop cost
        let (path, cycles) = net.route_banks(0, 17, 1024).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(cycles, 2 * (21 + 2));
    }

    #[test]
    fn degenerate_single_group_routes_directly() {
        let net = BankNetwork::new(16, 16).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                if a != b {
                    assert_eq!(net.route(a, b).unwrap().len(), 1);
                }
            }
        }
    }
}
