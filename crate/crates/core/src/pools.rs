//! Per-layer KV cache pools split across a CPU tier and an SSD tier.
//!
//! A [`PoolState`] owns every cached token of one transformer layer. Each
//! entry lives on exactly one tier. The CPU tier is bounded by a byte
//! capacity; whatever does not fit spills to the SSD tier.
//!
//! Retention follows three signals:
//!
//! * the recent window, the newest `⌈α·N⌉` positions, always stays on the CPU;
//! * the hit-rate table counts how often each token was selected as
//!   important, and the top `⌈α·N⌉` tokens with a non-zero count are pinned
//!   to the CPU by [`PoolState::rebalance`];
//! * everything else is ranked for eviction by ascending hit count, then
//!   least recently touched, then lowest position.
//!
//! Rebalancing is bidirectional: every pinned token found on the SSD is
//! brought up, and for each one the lowest-ranked evictable CPU token goes
//! down, so CPU occupancy stays put.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{fraction_count, KeyVec, TokenPos};

/// Bytes per stored element (half precision).
pub const ELEMENT_BYTES: usize = 2;

/// Bytes per hit-table counter.
pub const HIT_COUNTER_BYTES: usize = 2;

/// Snapshot format version written by [`PoolState::snapshot`].
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Cpu,
    Ssd,
}

/// One token's cached key and value for one layer.
///
/// The value tensor is never inspected, so only its size is tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub layer: usize,
    pub key: KeyVec,
    pub residency: Tier,
    value_bytes: usize,
    last_touch: u64,
}

impl KvEntry {
    pub fn new(layer: usize, key: KeyVec) -> Self {
        let value_bytes = key.shape().len() * ELEMENT_BYTES;
        Self {
            layer,
            key,
            residency: Tier::Cpu,
            value_bytes,
            last_touch: 0,
        }
    }

    pub fn token_pos(&self) -> TokenPos {
        self.key.token_pos
    }

    /// Key plus value, both in half precision.
    pub fn size_bytes(&self) -> usize {
        self.key.shape().len() * ELEMENT_BYTES + self.value_bytes
    }
}

/// Selection counts per cached token, billed as one 2-byte counter per token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HitRateTable {
    counts: BTreeMap<TokenPos, u16>,
    tokens: usize,
}

impl HitRateTable {
    pub fn count(&self, pos: TokenPos) -> u16 {
        self.counts.get(&pos).copied().unwrap_or(0)
    }

    /// Tokens tracked by the table (the context length `N`).
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn footprint_bytes(&self) -> usize {
        HIT_COUNTER_BYTES * self.tokens
    }

    pub fn total_hits(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    /// Tokens with a non-zero count.
    pub fn hit_tokens(&self) -> impl Iterator<Item = (TokenPos, u16)> + '_ {
        self.counts.iter().map(|(&p, &c)| (p, c))
    }

    fn decay(&mut self, factor: f64) {
        self.counts
            .values_mut()
            .for_each(|c| *c = (f64::from(*c) * factor).floor() as u16);
        self.counts.retain(|_, c| *c > 0);
    }

    fn increment(&mut self, pos: TokenPos) {
        let c = self.counts.entry(pos).or_insert(0);
        *c = c.saturating_add(1);
    }
}

/// Knobs of one layer's pools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Importance rate; sizes the recent window and the pinned hit set.
    pub alpha: f64,
    /// CPU tier capacity in bytes (`M_0` for this layer).
    pub capacity_bytes: usize,
    /// Optional multiplicative decay applied to all hit counts before each
    /// [`PoolState::record_hits`].
    pub hit_decay: Option<f64>,
}

impl PoolConfig {
    pub fn new(alpha: f64, capacity_bytes: usize) -> Self {
        Self {
            alpha,
            capacity_bytes,
            hit_decay: None,
        }
    }

    fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if let Some(d) = self.hit_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("hit decay {d} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("alpha {alpha} outside (0, 1]")))
    }
}

/// A single tier change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub token_pos: TokenPos,
    pub bytes: usize,
}

/// What a pool update moved between tiers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationReport {
    /// SSD → CPU.
    pub up: Vec<Migration>,
    /// CPU → SSD.
    pub down: Vec<Migration>,
    /// Set when fewer evictable CPU entries existed than were needed to
    /// balance the promotions; only as many promotions as could be balanced
    /// were made.
    pub insufficient_evictable: bool,
}

impl MigrationReport {
    pub fn is_empty(&self) -> bool {
        self.up.is_empty() && self.down.is_empty()
    }

    pub fn count(&self) -> usize {
        self.up.len() + self.down.len()
    }

    pub fn bytes_up(&self) -> usize {
        self.up.iter().map(|m| m.bytes).sum()
    }

    pub fn bytes_down(&self) -> usize {
        self.down.iter().map(|m| m.bytes).sum()
    }

    fn absorb(&mut self, other: MigrationReport) {
        self.up.extend(other.up);
        self.down.extend(other.down);
        self.insufficient_evictable |= other.insufficient_evictable;
    }
}

/// Total bytes moved in both directions.
pub fn bytes_moved(report: &MigrationReport) -> usize {
    report.bytes_up() + report.bytes_down()
}

/// The two tiers of one layer plus its retention bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    layer: usize,
    config: PoolConfig,
    entries: BTreeMap<TokenPos, KvEntry>,
    hits: HitRateTable,
    cpu_bytes: usize,
    ssd_bytes: usize,
    clock: u64,
}

/// Sort key for eviction: lowest first.
type EvictRank = (bool, u16, u64, TokenPos);

impl PoolState {
    pub fn new(layer: usize, config: PoolConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layer,
            config,
            entries: BTreeMap::new(),
            hits: HitRateTable::default(),
            cpu_bytes: 0,
            ssd_bytes: 0,
            clock: 0,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    /// Cached tokens, `N`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `M_c`.
    pub fn cpu_bytes(&self) -> usize {
        self.cpu_bytes
    }

    /// `M_s`.
    pub fn ssd_bytes(&self) -> usize {
        self.ssd_bytes
    }

    /// `M_0`.
    pub fn capacity_bytes(&self) -> usize {
        self.config.capacity_bytes
    }

    pub fn hit_table(&self) -> &HitRateTable {
        &self.hits
    }

    pub fn entry(&self, pos: TokenPos) -> Option<&KvEntry> {
        self.entries.get(&pos)
    }

    pub fn residency(&self, pos: TokenPos) -> Option<Tier> {
        self.entries.get(&pos).map(|e| e.residency)
    }

    pub fn entries(&self) -> impl Iterator<Item = &KvEntry> {
        self.entries.values()
    }

    /// Entries on `tier`, in position order.
    pub fn entries_on(&self, tier: Tier) -> impl Iterator<Item = &KvEntry> {
        self.entries.values().filter(move |e| e.residency == tier)
    }

    pub fn count_on(&self, tier: Tier) -> usize {
        self.entries_on(tier).count()
    }

    pub fn keys_on(&self, tier: Tier) -> Vec<KeyVec> {
        self.entries_on(tier).map(|e| e.key.clone()).collect()
    }

    pub fn residency_map(&self) -> BTreeMap<TokenPos, Tier> {
        self.entries
            .iter()
            .map(|(&p, e)| (p, e.residency))
            .collect()
    }

    /// Size of the recent window for the current context length.
    pub fn window_len(&self) -> usize {
        fraction_count(self.config.alpha, self.entries.len())
    }

    /// The newest `⌈α·N⌉` positions.
    pub fn recent_window(&self) -> BTreeSet<TokenPos> {
        self.entries
            .keys()
            .rev()
            .take(self.window_len())
            .copied()
            .collect()
    }

    /// Top `⌈α·N⌉` tokens of the hit table with at least one hit, ranked by
    /// count, then most recently touched, then lowest position.
    pub fn pinned_hit_set(&self, alpha: f64) -> BTreeSet<TokenPos> {
        let k = fraction_count(alpha, self.entries.len());
        let mut ranked: Vec<(TokenPos, u16, u64)> = self
            .hits
            .hit_tokens()
            .filter_map(|(p, c)| self.entries.get(&p).map(|e| (p, c, e.last_touch)))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
        ranked.into_iter().take(k).map(|(p, _, _)| p).collect()
    }

    fn evict_rank(&self, entry: &KvEntry, pinned: &BTreeSet<TokenPos>) -> EvictRank {
        let pos = entry.token_pos();
        (
            pinned.contains(&pos),
            self.hits.count(pos),
            entry.last_touch,
            pos,
        )
    }

    fn move_to(&mut self, pos: TokenPos, tier: Tier) -> Migration {
        let entry = self.entries.get_mut(&pos).expect("position present");
        debug_assert_ne!(entry.residency, tier);
        let bytes = entry.size_bytes();
        entry.residency = tier;
        match tier {
            Tier::Cpu => {
                self.ssd_bytes -= bytes;
                self.cpu_bytes += bytes;
            }
            Tier::Ssd => {
                self.cpu_bytes -= bytes;
                self.ssd_bytes += bytes;
            }
        }
        Migration {
            token_pos: pos,
            bytes,
        }
    }

    /// Pulls any window member that sits on the SSD back to the CPU, then
    /// spills lowest-ranked CPU entries outside the window until the capacity
    /// holds. Pinned tokens spill only after every unpinned candidate.
    fn settle(&mut self) -> MigrationReport {
        let mut report = MigrationReport::default();
        let window = self.recent_window();
        for &pos in &window {
            if self.entries[&pos].residency == Tier::Ssd {
                report.up.push(self.move_to(pos, Tier::Cpu));
            }
        }
        if self.cpu_bytes <= self.config.capacity_bytes {
            return report;
        }
        let pinned = self.pinned_hit_set(self.config.alpha);
        let mut candidates: Vec<(EvictRank, TokenPos)> = self
            .entries_on(Tier::Cpu)
            .filter(|e| !window.contains(&e.token_pos()))
            .map(|e| (self.evict_rank(e, &pinned), e.token_pos()))
            .collect();
        candidates.sort_unstable();
        for (_, pos) in candidates {
            if self.cpu_bytes <= self.config.capacity_bytes {
                break;
            }
            report.down.push(self.move_to(pos, Tier::Ssd));
        }
        debug_assert!(self.cpu_bytes <= self.config.capacity_bytes);
        report
    }

    /// Bytes the recent window would occupy after adding `extra`.
    fn window_bytes_with(&self, extra: &[&KvEntry]) -> usize {
        let n = self.entries.len() + extra.len();
        let w = fraction_count(self.config.alpha, n);
        let mut sizes: BTreeMap<TokenPos, usize> = self
            .entries
            .iter()
            .rev()
            .take(w)
            .map(|(&p, e)| (p, e.size_bytes()))
            .collect();
        sizes.extend(extra.iter().map(|e| (e.token_pos(), e.size_bytes())));
        sizes.values().rev().take(w).sum()
    }

    fn check_new(&self, entries: &[&KvEntry]) -> Result<()> {
        let mut seen = HashSet::new();
        for e in entries {
            if e.layer != self.layer {
                return Err(Error::Consistency(format!(
                    "entry for layer {} appended to layer {} pool",
                    e.layer, self.layer
                )));
            }
            let pos = e.token_pos();
            if self.entries.contains_key(&pos) || !seen.insert(pos) {
                return Err(Error::Consistency(format!(
                    "token {pos} already cached in layer {}",
                    self.layer
                )));
            }
            if e.size_bytes() > self.config.capacity_bytes {
                return Err(Error::Capacity(format!(
                    "entry of {} bytes exceeds CPU capacity {}",
                    e.size_bytes(),
                    self.config.capacity_bytes
                )));
            }
        }
        let window = self.window_bytes_with(entries);
        if window > self.config.capacity_bytes {
            return Err(Error::Capacity(format!(
                "recent window needs {window} bytes, CPU capacity is {}",
                self.config.capacity_bytes
            )));
        }
        Ok(())
    }

    /// Caches a new token on the CPU, spilling to the SSD if needed.
    pub fn append_kv(&mut self, entry: KvEntry) -> Result<MigrationReport> {
        self.extend(vec![entry])
    }

    /// Caches a batch of tokens, then settles capacity once.
    ///
    /// With no hits recorded this spills exactly what the same entries
    /// appended one at a time would spill: the oldest tokens outside the
    /// final window.
    pub fn extend(&mut self, entries: Vec<KvEntry>) -> Result<MigrationReport> {
        self.check_new(&entries.iter().collect::<Vec<_>>())?;
        for mut e in entries {
            self.clock += 1;
            e.residency = Tier::Cpu;
            e.last_touch = self.clock;
            self.cpu_bytes += e.size_bytes();
            self.entries.insert(e.token_pos(), e);
        }
        self.hits.tokens = self.entries.len();
        Ok(self.settle())
    }

    /// Changes the CPU capacity, spilling if it shrank below occupancy.
    pub fn set_capacity(&mut self, capacity_bytes: usize) -> Result<MigrationReport> {
        let old = self.config.capacity_bytes;
        self.config.capacity_bytes = capacity_bytes;
        if self.window_bytes_with(&[]) > capacity_bytes {
            self.config.capacity_bytes = old;
            return Err(Error::Capacity(format!(
                "capacity {capacity_bytes} cannot hold the recent window"
            )));
        }
        Ok(self.settle())
    }

    /// Counts one hit for every selected position.
    pub fn record_hits(&mut self, selected: &[TokenPos]) -> Result<()> {
        if let Some(p) = selected.iter().find(|p| !self.entries.contains_key(p)) {
            return Err(Error::Consistency(format!(
                "selected token {p} is not cached in layer {}",
                self.layer
            )));
        }
        if selected.is_empty() {
            return Ok(());
        }
        if let Some(f) = self.config.hit_decay {
            self.hits.decay(f);
        }
        self.clock += 1;
        for &p in selected {
            self.hits.increment(p);
            self.entries.get_mut(&p).expect("checked").last_touch = self.clock;
        }
        Ok(())
    }

    /// Brings the pinned hit set onto the CPU, swapping out an equal number
    /// of lowest-ranked evictable CPU entries.
    pub fn rebalance(&mut self, alpha: f64) -> Result<MigrationReport> {
        validate_alpha(alpha)?;
        let pinned = self.pinned_hit_set(alpha);
        let window = self.recent_window();

        let mut promote: Vec<(TokenPos, u16, u64)> = pinned
            .iter()
            .filter(|p| self.entries[p].residency == Tier::Ssd)
            .map(|&p| (p, self.hits.count(p), self.entries[&p].last_touch))
            .collect();
        // Highest ranked first, so a shortfall drops the weakest promotions.
        promote.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));

        let mut demote: Vec<(EvictRank, TokenPos)> = self
            .entries_on(Tier::Cpu)
            .filter(|e| !window.contains(&e.token_pos()) && !pinned.contains(&e.token_pos()))
            .map(|e| (self.evict_rank(e, &pinned), e.token_pos()))
            .collect();
        demote.sort_unstable();

        let swaps = promote.len().min(demote.len());
        let mut report = MigrationReport {
            insufficient_evictable: swaps < promote.len(),
            ..Default::default()
        };
        for i in 0..swaps {
            report.up.push(self.move_to(promote[i].0, Tier::Cpu));
            report.down.push(self.move_to(demote[i].1, Tier::Ssd));
        }
        // Only reachable with mixed entry sizes.
        if self.cpu_bytes > self.config.capacity_bytes {
            report.absorb(self.settle());
        }
        Ok(report)
    }

    /// Importance-only eviction without a hit table: every selected token is
    /// brought to the CPU and every other CPU token outside the recent window
    /// is pushed to the SSD.
    pub fn naive_update(&mut self, selected: &[TokenPos]) -> Result<MigrationReport> {
        if let Some(p) = selected.iter().find(|p| !self.entries.contains_key(p)) {
            return Err(Error::Consistency(format!(
                "selected token {p} is not cached in layer {}",
                self.layer
            )));
        }
        let keep: BTreeSet<TokenPos> = selected.iter().copied().collect();
        let window = self.recent_window();
        let mut report = MigrationReport::default();
        for &p in &keep {
            if self.entries[&p].residency == Tier::Ssd {
                report.up.push(self.move_to(p, Tier::Cpu));
            }
        }
        let evict: Vec<TokenPos> = self
            .entries_on(Tier::Cpu)
            .map(KvEntry::token_pos)
            .filter(|p| !keep.contains(p) && !window.contains(p))
            .collect();
        for p in evict {
            report.down.push(self.move_to(p, Tier::Ssd));
        }
        if self.cpu_bytes > self.config.capacity_bytes {
            report.absorb(self.settle());
        }
        Ok(report)
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            version: SNAPSHOT_VERSION,
            layer: self.layer,
            alpha: self.config.alpha,
            capacity_bytes: self.config.capacity_bytes,
            cpu_bytes: self.cpu_bytes,
            ssd_bytes: self.ssd_bytes,
            hit_table_bytes: self.hits.footprint_bytes(),
            recent_window: self.recent_window().into_iter().collect(),
            cpu: self.entries_on(Tier::Cpu).map(KvEntry::token_pos).collect(),
            ssd: self.entries_on(Tier::Ssd).map(KvEntry::token_pos).collect(),
            hits: self.hits.hit_tokens().collect(),
        }
    }
}

/// Serializable view of a [`PoolState`].
///
/// Fields serialize in declaration order; `version` comes first so readers
/// can reject snapshots they do not understand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub version: u32,
    pub layer: usize,
    pub alpha: f64,
    pub capacity_bytes: usize,
    pub cpu_bytes: usize,
    pub ssd_bytes: usize,
    pub hit_table_bytes: usize,
    pub recent_window: Vec<TokenPos>,
    pub cpu: Vec<TokenPos>,
    pub ssd: Vec<TokenPos>,
    pub hits: Vec<(TokenPos, u16)>,
}

impl PoolSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot is plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Self =
            serde_json::from_str(text).map_err(|e| Error::parse("snapshot", e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Validation(format!(
                "snapshot version {} is not supported",
                snap.version
            )));
        }
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::Shape;

    // 1 head × 256 dims → 512-byte key + 512-byte value = 1024 bytes.
    const ENTRY: usize = 1024;

    fn entry(pos: TokenPos) -> KvEntry {
        let shape = Shape::new(1, 256).unwrap();
        KvEntry::new(0, KeyVec::new(pos, shape, vec![0.0; 256]).unwrap())
    }

    fn pool(alpha: f64, capacity_entries: usize, tokens: u32) -> PoolState {
        let mut p = PoolState::new(0, PoolConfig::new(alpha, capacity_entries * ENTRY)).unwrap();
        for pos in 0..tokens {
            p.append_kv(entry(pos)).unwrap();
        }
        p
    }

    fn on(p: &PoolState, tier: Tier) -> Vec<TokenPos> {
        p.entries_on(tier).map(KvEntry::token_pos).collect()
    }

    #[test]
    fn entry_size_counts_key_and_value_in_half_precision() {
        assert_eq!(entry(0).size_bytes(), ENTRY);
    }

    #[test]
    fn first_append_lands_on_cpu() {
        let mut p = PoolState::new(0, PoolConfig::new(0.2, 4096)).unwrap();
        let report = p.append_kv(entry(0)).unwrap();
        assert!(report.is_empty());
        assert_eq!(on(&p, Tier::Cpu), vec![0]);
        assert_eq!(p.cpu_bytes(), 1024);
        assert_eq!(p.ssd_bytes(), 0);
    }

    #[test]
    fn append_at_capacity_spills_lowest_hit_non_window_entry() {
        // Four entries fill the CPU exactly; α = 0.2 keeps a 1-token window.
        let mut p = pool(0.2, 4, 4);
        assert_eq!(p.cpu_bytes(), p.capacity_bytes());
        // Hits: 0 → 2, 1 → 0, 2 → 1. Token 1 is the unique lowest-ranked.
        p.record_hits(&[0, 2]).unwrap();
        p.record_hits(&[0]).unwrap();

        let report = p.append_kv(entry(4)).unwrap();
        // Enumerated policy: window after insert = {4}; pinned top-1 = {0};
        // remaining candidates 1 (0 hits), 2 (1 hit), 3 (0 hits, newer than 1).
        assert_eq!(report.down, vec![Migration { token_pos: 1, bytes: ENTRY }]);
        assert_eq!(p.residency(1), Some(Tier::Ssd));
        assert_eq!(on(&p, Tier::Cpu), vec![0, 2, 3, 4]);
    }

    #[test]
    fn window_holds_last_two_positions_at_n_ten() {
        let p = pool(0.2, 16, 10);
        assert_eq!(p.recent_window().into_iter().collect::<Vec<_>>(), vec![8, 9]);
    }

    #[test]
    fn duplicate_append_is_consistency_error() {
        let mut p = pool(0.2, 4, 2);
        assert!(matches!(p.append_kv(entry(1)), Err(Error::Consistency(_))));
    }

    #[test]
    fn oversized_entry_is_capacity_error() {
        let mut p = PoolState::new(0, PoolConfig::new(0.2, 512)).unwrap();
        assert!(matches!(p.append_kv(entry(0)), Err(Error::Capacity(_))));
        assert!(p.is_empty());
    }

    #[test]
    fn window_larger_than_capacity_is_rejected_without_mutation() {
        // α = 1 makes every token part of the window.
        let mut p = pool(1.0, 2, 2);
        let before = p.clone();
        assert!(matches!(p.append_kv(entry(2)), Err(Error::Capacity(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn record_hits_counts_and_validates() {
        let mut p = pool(0.2, 8, 8);
        p.record_hits(&[]).unwrap();
        assert_eq!(p.hit_table().total_hits(), 0);
        for _ in 0..3 {
            p.record_hits(&[5]).unwrap();
        }
        assert_eq!(p.hit_table().count(5), 3);
        assert!(matches!(p.record_hits(&[5, 99]), Err(Error::Consistency(_))));
        assert_eq!(p.hit_table().count(5), 3);
    }

    #[test]
    fn hit_table_footprint_is_two_bytes_per_token() {
        let p = pool(0.2, 64, 37);
        assert_eq!(p.hit_table().footprint_bytes(), 74);
    }

    #[test]
    fn rebalance_is_fixed_point_when_pinned_set_on_cpu() {
        let mut p = pool(0.2, 8, 10);
        // Capacity 8 of 10 → tokens 0 and 1 spilled.
        assert_eq!(on(&p, Tier::Ssd), vec![0, 1]);
        p.record_hits(&[4, 5]).unwrap();
        let report = p.rebalance(0.2).unwrap();
        assert!(report.is_empty());
        assert_eq!(bytes_moved(&report), 0);
    }

    #[test]
    fn rebalance_swaps_two_up_two_down() {
        // 8 tokens, CPU holds 6, α = 0.25 → window {6, 7}, pinned size 2.
        let mut p = pool(0.25, 6, 8);
        assert_eq!(on(&p, Tier::Ssd), vec![0, 1]);
        p.record_hits(&[0, 1, 3]).unwrap();
        p.record_hits(&[0, 1]).unwrap();
        // Pinned = {0, 1} (2 hits each); both on SSD.
        // Evictable CPU = {2, 3, 4, 5}; ranks: 2 (0 hits), 4, 5, then 3 (1 hit).
        let report = p.rebalance(0.25).unwrap();
        let up: Vec<_> = report.up.iter().map(|m| m.token_pos).collect();
        let down: Vec<_> = report.down.iter().map(|m| m.token_pos).collect();
        assert_eq!(up, vec![0, 1]);
        assert_eq!(down, vec![2, 4]);
        assert!(!report.insufficient_evictable);
        assert_eq!(bytes_moved(&report), 4 * ENTRY);
        assert_eq!(on(&p, Tier::Ssd), vec![2, 4]);
    }

    #[test]
    fn pinned_set_size_is_two_at_n_ten() {
        let mut p = pool(0.2, 16, 10);
        p.record_hits(&[1, 2, 3, 4]).unwrap();
        p.record_hits(&[3, 4]).unwrap();
        let pinned: Vec<_> = p.pinned_hit_set(0.2).into_iter().collect();
        assert_eq!(pinned, vec![3, 4]);
    }

    #[test]
    fn rebalance_shortfall_sets_warning() {
        // α = 0.5 over 4 tokens: window {2, 3}; CPU holds 3 → token 0 spilled.
        let mut p = pool(0.5, 3, 4);
        assert_eq!(on(&p, Tier::Ssd), vec![0]);
        // Pin {0, 1}: 0 is on SSD, but the only non-window CPU token is pinned.
        p.record_hits(&[0, 1]).unwrap();
        let report = p.rebalance(0.5).unwrap();
        assert!(report.insufficient_evictable);
        assert!(report.is_empty());
    }

    #[test]
    fn rebalance_rejects_bad_alpha() {
        let mut p = pool(0.2, 4, 4);
        assert!(matches!(p.rebalance(0.0), Err(Error::Argument(_))));
        assert!(matches!(p.rebalance(1.5), Err(Error::Argument(_))));
    }

    #[test]
    fn decay_lowers_counts() {
        let mut p = PoolState::new(
            0,
            PoolConfig {
                hit_decay: Some(0.5),
                ..PoolConfig::new(0.2, 8 * ENTRY)
            },
        )
        .unwrap();
        for pos in 0..4 {
            p.append_kv(entry(pos)).unwrap();
        }
        for _ in 0..4 {
            p.record_hits(&[1]).unwrap();
        }
        // Each call halves (1 → 0) before counting the new hit.
        assert_eq!(p.hit_table().count(1), 1);
    }

    #[test]
    fn bulk_extend_matches_sequential_appends() {
        let seq = pool(0.2, 7, 30);
        let mut bulk = PoolState::new(0, PoolConfig::new(0.2, 7 * ENTRY)).unwrap();
        bulk.extend((0..30).map(entry).collect()).unwrap();
        assert_eq!(on(&seq, Tier::Cpu), on(&bulk, Tier::Cpu));
    }

    #[test]
    fn shrinking_capacity_spills() {
        let mut p = pool(0.1, 10, 10);
        let report = p.set_capacity(6 * ENTRY).unwrap();
        assert_eq!(report.down.len(), 4);
        assert!(p.set_capacity(0).is_err());
        assert_eq!(p.capacity_bytes(), 6 * ENTRY);
    }

    #[test]
    fn naive_update_evicts_everything_unselected() {
        let mut p = pool(0.2, 10, 10);
        let report = p.naive_update(&[1, 2]).unwrap();
        // Window {8, 9} and the selection stay.
        assert_eq!(on(&p, Tier::Cpu), vec![1, 2, 8, 9]);
        assert_eq!(report.down.len(), 6);
        let report = p.naive_update(&[3]).unwrap();
        assert_eq!(report.up.len(), 1);
        assert_eq!(report.down.len(), 2);
    }

    #[test]
    fn snapshot_round_trips_and_checks_version() {
        let mut p = pool(0.2, 8, 10);
        p.record_hits(&[0, 3]).unwrap();
        let snap = p.snapshot();
        let text = snap.to_json();
        assert_eq!(PoolSnapshot::from_json(&text).unwrap(), snap);
        let first_field = text.lines().nth(1).unwrap().trim();
        assert_eq!(first_field, "\"version\": 1,");
        let bad = text.replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(PoolSnapshot::from_json(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn snapshot_golden() {
        let mut p = pool(0.25, 3, 4);
        p.record_hits(&[0]).unwrap();
        p.rebalance(0.25).unwrap();
        let expected = r#"{
  "version": 1,
  "layer": 0,
  "alpha": 0.25,
  "capacity_bytes": 3072,
  "cpu_bytes": 3072,
  "ssd_bytes": 1024,
  "hit_table_bytes": 8,
  "recent_window": [
    3
  ],
  "cpu": [
    0,
    2,
    3
  ],
  "ssd": [
    1
  ],
  "hits": [
    [
      0,
      1
    ]
  ]
}"#;
        assert_eq!(p.snapshot().to_json(), expected);
    }
}
