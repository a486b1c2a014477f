//! Fock occupation strings and their enumeration order.
//!
//! Bit `j` of a configuration is the occupation of post-quench mode `j`.
//! Configurations are enumerated in lexicographic order of the occupation
//! string read from mode 0, occupied first: for `(N, M) = (3, 1)` that is
//! `100, 010, 001`, i.e. ascending lexicographic order of the occupied index
//! sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of configurations a materialized routine may touch.
pub const DEFAULT_BUDGET: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FockConfig(pub u64);

impl FockConfig {
    pub fn from_modes(modes: &[usize]) -> Self {
        FockConfig(modes.iter().fold(0u64, |b, &j| b | (1u64 << j)))
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_occupied(self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    /// Occupied modes, ascending.
    pub fn modes(self) -> impl Iterator<Item = usize> {
        let mut b = self.0;
        std::iter::from_fn(move || {
            if b == 0 {
                None
            } else {
                let j = b.trailing_zeros() as usize;
                b &= b - 1;
                Some(j)
            }
        })
    }

    /// Occupation string, mode 0 first.
    pub fn to_string_n(self, n: usize) -> String {
        (0..n).map(|j| if self.is_occupied(j) { '1' } else { '0' }).collect()
    }
}

/// Upper limit on the number of blocks of a [`Blocks`] partition.
pub const MAX_BLOCKS: usize = 64;

/// One block of a partition: its modes and how many of them are occupied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub modes: Vec<usize>,
    pub particles: usize,
}

/// Partition of the modes into disjoint blocks, each holding a fixed number
/// of particles. Blocks are ordered by their lowest mode.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<Block>", try_from = "Vec<Block>")]
pub struct Blocks {
    len: usize,
    masks: [u64; MAX_BLOCKS],
    counts: [u8; MAX_BLOCKS],
}

impl Blocks {
    /// `(mask, particles)` per block, in any order.
    pub fn new(blocks: &[(u64, usize)]) -> Result<Self> {
        if blocks.len() > MAX_BLOCKS {
            return Err(Error::InvalidParams(format!("{} blocks, at most {MAX_BLOCKS}", blocks.len())));
        }
        let mut sorted = blocks.to_vec();
        sorted.sort_by_key(|&(mask, _)| mask.trailing_zeros());
        let mut out = Blocks { len: sorted.len(), masks: [0; MAX_BLOCKS], counts: [0; MAX_BLOCKS] };
        let mut seen = 0u64;
        for (b, &(mask, k)) in sorted.iter().enumerate() {
            if mask == 0 || mask & seen != 0 {
                return Err(Error::InvalidParams("blocks must be nonempty and disjoint".into()));
            }
            if k > mask.count_ones() as usize {
                return Err(Error::InvalidParams(format!("{k} particles in a block of {}", mask.count_ones())));
            }
            seen |= mask;
            out.masks[b] = mask;
            out.counts[b] = k as u8;
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mask(&self, b: usize) -> u64 {
        self.masks[b]
    }

    pub fn particles(&self, b: usize) -> usize {
        self.counts[b] as usize
    }

    pub fn total(&self) -> usize {
        self.counts[..self.len].iter().map(|&k| k as usize).sum()
    }

    pub fn union(&self) -> u64 {
        self.masks[..self.len].iter().fold(0, |a, &m| a | m)
    }

    /// Block holding mode `j`, if any.
    pub fn block_of(&self, j: usize) -> Option<usize> {
        self.masks[..self.len].iter().position(|&m| m >> j & 1 == 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        (0..self.len).map(|b| (self.masks[b], self.counts[b] as usize))
    }

    fn size(&self) -> u128 {
        self.iter().map(|(m, k)| binomial(m.count_ones() as usize, k)).product()
    }
}

impl std::fmt::Debug for Blocks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(Vec::<Block>::from(*self)).finish()
    }
}

impl From<Blocks> for Vec<Block> {
    fn from(b: Blocks) -> Self {
        b.iter()
            .map(|(mask, k)| Block { modes: FockConfig(mask).modes().collect(), particles: k })
            .collect()
    }
}

impl TryFrom<Vec<Block>> for Blocks {
    type Error = Error;
    fn try_from(v: Vec<Block>) -> Result<Self> {
        let mut raw = Vec::with_capacity(v.len());
        for b in &v {
            if b.modes.iter().any(|&j| j >= 64) {
                return Err(Error::InvalidParams("block mode index beyond 63".into()));
            }
            raw.push((FockConfig::from_modes(&b.modes).0, b.particles));
        }
        Blocks::new(&raw)
    }
}

/// Set of Fock configurations an ensemble lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Support {
    /// All `2^N` occupation strings.
    Full { n: usize },
    /// Strings with exactly `m` particles.
    Fixed { n: usize, m: usize },
    /// Strings with a fixed particle number in every block of a partition.
    Blocks { n: usize, blocks: Blocks },
}

impl Support {
    pub fn n_modes(&self) -> usize {
        match *self {
            Support::Full { n } | Support::Fixed { n, .. } | Support::Blocks { n, .. } => n,
        }
    }

    /// Total particle number, if fixed.
    pub fn particles(&self) -> Option<usize> {
        match self {
            Support::Full { .. } => None,
            Support::Fixed { m, .. } => Some(*m),
            Support::Blocks { blocks, .. } => Some(blocks.total()),
        }
    }

    pub fn size(&self) -> u128 {
        match self {
            Support::Full { n } => 1u128 << n,
            Support::Fixed { n, m } => binomial(*n, *m),
            Support::Blocks { blocks, .. } => blocks.size(),
        }
    }

    pub fn contains(&self, s: FockConfig) -> bool {
        let n = self.n_modes();
        let in_range = n == 64 || s.0 >> n == 0;
        in_range
            && match self {
                Support::Full { .. } => true,
                Support::Fixed { m, .. } => s.count() == *m,
                Support::Blocks { blocks, .. } => {
                    blocks.iter().all(|(mask, k)| (s.0 & mask).count_ones() as usize == k)
                }
            }
    }

    /// Whether a swap of modes `i` and `j` can stay inside the support.
    pub fn same_block(&self, i: usize, j: usize) -> bool {
        match self {
            Support::Blocks { blocks, .. } => blocks.block_of(i) == blocks.block_of(j),
            _ => true,
        }
    }

    /// Per-mode form of the particle-number constraints.
    pub fn constraints(&self) -> Constraints {
        let n = self.n_modes();
        let (block, need) = match self {
            Support::Full { .. } => return Constraints { block: vec![NO_BLOCK; n], need: Vec::new(), later: vec![0; n] },
            Support::Fixed { m, .. } => (vec![0; n], vec![*m]),
            Support::Blocks { blocks, .. } => (
                (0..n).map(|j| blocks.block_of(j).unwrap_or(NO_BLOCK)).collect(),
                blocks.iter().map(|(_, k)| k).collect(),
            ),
        };
        let later = (0..n).map(|j| (j + 1..n).filter(|&o| block[o] == block[j]).count()).collect();
        Constraints { block, need, later }
    }

    /// Fails with [`Error::BudgetExceeded`] if the support is larger than `budget`.
    pub fn check_budget(&self, budget: u64) -> Result<()> {
        let required = self.size();
        if required > budget as u128 {
            return Err(Error::BudgetExceeded { required, budget });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_modes();
        if n == 0 || n > 64 {
            return Err(Error::InvalidParams(format!("mode count {n} outside 1..=64")));
        }
        match self {
            Support::Fixed { m, .. } if *m > n => {
                Err(Error::InvalidParams(format!("{m} particles in {n} modes")))
            }
            Support::Blocks { blocks, .. } if blocks.union() != FockConfig::from_modes(&(0..n).collect::<Vec<_>>()).0 => {
                Err(Error::InvalidParams(format!("blocks do not partition {n} modes")))
            }
            _ => Ok(()),
        }
    }
}

/// Marks a mode without a particle-number constraint.
pub const NO_BLOCK: usize = usize::MAX;

/// Particle-number constraints seen one mode at a time, in mode order.
#[derive(Debug, Clone)]
pub struct Constraints {
    /// Block of each mode, or [`NO_BLOCK`].
    pub block: Vec<usize>,
    /// Particles required per block.
    pub need: Vec<usize>,
    /// Modes of the same block after mode `j`.
    pub later: Vec<usize>,
}

impl Constraints {
    pub fn counts(&self) -> Vec<usize> {
        vec![0; self.need.len()]
    }

    /// Mode `j` may be occupied given `counts` particles placed so far.
    #[inline]
    pub fn may_include(&self, j: usize, counts: &[usize]) -> bool {
        let b = self.block[j];
        b == NO_BLOCK || counts[b] < self.need[b]
    }

    /// Mode `j` may be left empty.
    #[inline]
    pub fn may_exclude(&self, j: usize, counts: &[usize]) -> bool {
        let b = self.block[j];
        b == NO_BLOCK || self.later[j] + counts[b] >= self.need[b]
    }

    /// Some completion of the occupations `bits` of the first `k` modes lies
    /// in the support.
    pub fn prefix_feasible(&self, bits: u64, k: usize) -> bool {
        let mut counts = self.counts();
        let mut left = self.counts();
        for j in 0..self.block.len() {
            let b = self.block[j];
            if b == NO_BLOCK {
                continue;
            }
            if j < k {
                counts[b] += (bits >> j & 1) as usize;
            } else {
                left[b] += 1;
            }
        }
        (0..self.need.len()).all(|b| counts[b] <= self.need[b] && counts[b] + left[b] >= self.need[b])
    }
}

/// `C(n, k)`, exact.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Lexicographic stream of the `m`-subsets of `n` modes.
#[derive(Debug, Clone)]
pub struct Configs {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Iterator for Configs {
    type Item = FockConfig;

    fn next(&mut self) -> Option<FockConfig> {
        if self.done {
            return None;
        }
        let out = FockConfig::from_modes(&self.idx);
        let k = self.idx.len();
        let mut end = k;
        loop {
            if end == 0 {
                self.done = true;
                break;
            }
            self.idx[end - 1] += 1;
            if self.idx[end - 1] < self.n - (k - end) {
                for i in end..k {
                    self.idx[i] = self.idx[i - 1] + 1;
                }
                break;
            }
            end -= 1;
        }
        Some(out)
    }
}

/// Stream the `C(n, m)` configurations of a sector in lexicographic order.
///
/// Refuses sectors larger than `budget` unless `streaming` is set.
pub fn enumerate_configs(n: usize, m: usize, budget: u64, streaming: bool) -> Result<Configs> {
    Support::Fixed { n, m }.validate()?;
    if !streaming {
        Support::Fixed { n, m }.check_budget(budget)?;
    }
    Ok(Configs { n, idx: (0..m).collect(), done: false })
}

/// All configurations of a support in enumeration order (materialized).
pub fn support_configs(support: Support, budget: u64) -> Result<Vec<FockConfig>> {
    support.validate()?;
    support.check_budget(budget)?;
    Ok(match support {
        Support::Fixed { n, m } => enumerate_configs(n, m, budget, false)?.collect(),
        Support::Full { n } => {
            let mut out = Vec::with_capacity(1usize << n);
            full_space_order(n, 0, 0, &mut out);
            out
        }
        Support::Blocks { n, .. } => {
            let c = support.constraints();
            let mut out = Vec::with_capacity(support.size() as usize);
            let mut counts = c.counts();
            constrained_order(&c, n, 0, 0, &mut counts, &mut out);
            out
        }
    })
}

fn constrained_order(c: &Constraints, n: usize, j: usize, bits: u64, counts: &mut [usize], out: &mut Vec<FockConfig>) {
    if j == n {
        out.push(FockConfig(bits));
        return;
    }
    let b = c.block[j];
    if c.may_include(j, counts) {
        if b != NO_BLOCK {
            counts[b] += 1;
        }
        constrained_order(c, n, j + 1, bits | 1 << j, counts, out);
        if b != NO_BLOCK {
            counts[b] -= 1;
        }
    }
    if c.may_exclude(j, counts) {
        constrained_order(c, n, j + 1, bits, counts, out);
    }
}

/// Full space in the same occupied-first order: `11.., 1.0., ..., 00..`.
fn full_space_order(n: usize, j: usize, bits: u64, out: &mut Vec<FockConfig>) {
    if j == n {
        out.push(FockConfig(bits));
        return;
    }
    full_space_order(n, j + 1, bits | 1 << j, out);
    full_space_order(n, j + 1, bits, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn three_choose_one_order() {
        let v: Vec<String> =
            enumerate_configs(3, 1, DEFAULT_BUDGET, false).unwrap().map(|c| c.to_string_n(3)).collect();
        assert_eq!(v, ["100", "010", "001"]);
    }

    #[test]
    fn counts_match_binomials() {
        assert_eq!(enumerate_configs(4, 2, DEFAULT_BUDGET, false).unwrap().count(), 6);
        assert_eq!(binomial(30, 15), 155_117_520);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
        for n in 1..12 {
            for m in 0..=n {
                let all: Vec<_> = enumerate_configs(n, m, DEFAULT_BUDGET, false).unwrap().collect();
                assert_eq!(all.len() as u128, binomial(n, m));
                let distinct: HashSet<_> = all.iter().collect();
                assert_eq!(distinct.len(), all.len());
                assert!(all.iter().all(|c| c.count() == m));
                let strings: Vec<String> = all.iter().map(|c| c.to_string_n(n)).collect();
                let mut sorted = strings.clone();
                sorted.sort_by(|a, b| b.cmp(a));
                assert_eq!(strings, sorted);
            }
        }
    }

    #[test]
    fn budget_guard() {
        match enumerate_configs(30, 15, 1_000_000, false) {
            Err(Error::BudgetExceeded { required, .. }) => assert_eq!(required, 155_117_520),
            other => panic!("{other:?}"),
        }
        assert!(enumerate_configs(30, 15, 1_000_000, true).is_ok());
    }

    #[test]
    fn full_space_order_is_occupied_first() {
        let v: Vec<String> = support_configs(Support::Full { n: 3 }, DEFAULT_BUDGET)
            .unwrap()
            .iter()
            .map(|c| c.to_string_n(3))
            .collect();
        assert_eq!(v, ["111", "110", "101", "100", "011", "010", "001", "000"]);
    }

    #[test]
    fn block_support_is_a_filtered_sector() {
        let blocks = Blocks::new(&[(0b0010_0101, 2), (0b0101_1010, 1), (0b1000_0000, 1)]).unwrap();
        let support = Support::Blocks { n: 8, blocks };
        support.validate().unwrap();
        let got = support_configs(support, DEFAULT_BUDGET).unwrap();
        let want: Vec<FockConfig> = enumerate_configs(8, 4, DEFAULT_BUDGET, false)
            .unwrap()
            .filter(|c| support.contains(*c))
            .collect();
        assert_eq!(got, want);
        assert_eq!(got.len() as u128, support.size());
        assert_eq!(support.size(), 3 * 4);
        assert_eq!(support.particles(), Some(4));
        assert!(support.same_block(0, 5) && !support.same_block(0, 1));
        let json = serde_json::to_string(&support).unwrap();
        let back: Support = serde_json::from_str(&json).unwrap();
        assert_eq!(back, support);
        assert!(Support::Blocks { n: 9, blocks }.validate().is_err());
        assert!(Blocks::new(&[(0b11, 1), (0b10, 0)]).is_err());
        assert!(Blocks::new(&[(0b11, 3)]).is_err());
    }

    #[test]
    fn support_membership() {
        let s = Support::Fixed { n: 4, m: 2 };
        assert!(s.contains(FockConfig(0b0101)));
        assert!(!s.contains(FockConfig(0b0111)));
        assert!(!s.contains(FockConfig(0b10001)));
        assert!(Support::Full { n: 4 }.contains(FockConfig(0b1111)));
        assert_eq!(Support::Full { n: 10 }.size(), 1024);
    }
}
