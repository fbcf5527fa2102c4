//! Exhaustive reference for per-pilot contention resolution, written on
//! bitmasks so it shares no code with the library's resolvers.

#![allow(dead_code)]

use xlra::scenario::VisibilityMap;

/// One enumerated instance: per-user VR bitmask, pilot and retransmit flag.
#[derive(Debug, Clone)]
pub struct Instance {
    pub subarrays: usize,
    pub masks: Vec<u32>,
    pub pilots: Vec<usize>,
    pub retransmit: Vec<bool>,
}

impl Instance {
    pub fn visibility(&self) -> VisibilityMap {
        let rows = self
            .masks
            .iter()
            .map(|m| (0..self.subarrays).map(|b| m >> b & 1 == 1).collect())
            .collect();
        VisibilityMap::from_rows(rows, 0.5)
    }

    /// Retransmitters on `pilot`, in user order.
    pub fn retransmitters(&self, pilot: usize) -> Vec<usize> {
        (0..self.masks.len()).filter(|&u| self.pilots[u] == pilot && self.retransmit[u]).collect()
    }

    fn rivals(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.masks.len())
            .filter(move |&v| v != u && self.retransmit[v] && self.pilots[v] == self.pilots[u])
    }

    /// Users a disjoint-VR resolver admits.
    pub fn sucre_admitted(&self) -> Vec<usize> {
        (0..self.masks.len())
            .filter(|&u| self.retransmit[u] && self.masks[u] != 0)
            .filter(|&u| self.rivals(u).all(|v| self.masks[u] & self.masks[v] == 0))
            .collect()
    }

    /// Users a two-per-subarray resolver admits.
    pub fn nvr_admitted(&self) -> Vec<usize> {
        (0..self.masks.len())
            .filter(|&u| self.retransmit[u] && self.masks[u] != 0)
            .filter(|&u| {
                (0..self.subarrays).filter(|b| self.masks[u] >> b & 1 == 1).all(|b| {
                    let others = self.rivals(u).filter(|&v| self.masks[v] >> b & 1 == 1).count();
                    others + 1 <= 2
                })
            })
            .collect()
    }
}

/// Calls `f` for every visibility map of `k` users over `b` subarrays.
pub fn for_each_map(k: usize, b: usize, mut f: impl FnMut(&[u32])) {
    let bits = k * b;
    let mut masks = vec![0u32; k];
    for code in 0u64..(1u64 << bits) {
        for (u, m) in masks.iter_mut().enumerate() {
            *m = ((code >> (u * b)) & ((1 << b) - 1)) as u32;
        }
        f(&masks);
    }
}
