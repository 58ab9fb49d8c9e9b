//! Split importance evaluation over the CPU and SSD partitions of a layer.
//!
//! Both tiers score their own resident keys in blocks of `n` tokens. Each
//! block becomes a [`ScoreBlock`] of `<token pos, score>` pairs that a single
//! merger folds into one ranked list. Once every cached token has been
//! merged, the first `⌈α·N⌉` positions are the important set; those resident
//! on the SSD must be fetched.
//!
//! Scores stay in full precision end to end. A score block is billed on the
//! wire at 4 bytes per entry (a half-precision position and score), pro-rated
//! for a partial final block.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashSet};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pools::{validate_alpha, PoolState, Tier};
use crate::vector::{fraction_count, score_token, ImportanceScore, KeyVec, QueryVec, TokenPos};

/// Wire bytes per score-block entry.
pub const SCORE_ENTRY_WIRE_BYTES: usize = 4;

/// Block size used when none is configured.
pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Splits `positions` into consecutive blocks of `n` (the last may be short).
pub fn partition_blocks(positions: &[TokenPos], n: usize) -> Result<Vec<Vec<TokenPos>>> {
    if n == 0 {
        return Err(Error::Argument("score block size must be at least 1".into()));
    }
    Ok(positions.chunks(n).map(<[TokenPos]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub entries: Vec<ImportanceScore>,
    pub source_tier: Tier,
}

impl ScoreBlock {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn wire_bytes(&self) -> usize {
        SCORE_ENTRY_WIRE_BYTES * self.entries.len()
    }
}

/// Scores `keys` block by block, yielding one [`ScoreBlock`] per block in
/// order.
pub fn evaluate_partition<'a, K>(
    query: &'a QueryVec,
    keys: &'a [K],
    n: usize,
    tier: Tier,
) -> Result<impl Iterator<Item = Result<ScoreBlock>> + 'a>
where
    K: Borrow<KeyVec>,
{
    if n == 0 {
        return Err(Error::Argument("score block size must be at least 1".into()));
    }
    Ok(keys.chunks(n).map(move |chunk| {
        let entries = chunk
            .iter()
            .map(|k| score_token(query, k.borrow()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreBlock {
            entries,
            source_tier: tier,
        })
    }))
}

/// The merger's ranked list of everything received so far.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeState {
    scored: Vec<ImportanceScore>,
    seen: HashSet<TokenPos>,
    blocks_received: usize,
    tokens_expected: usize,
}

impl MergeState {
    pub fn new(tokens_expected: usize) -> Self {
        Self {
            scored: Vec::with_capacity(tokens_expected),
            seen: HashSet::with_capacity(tokens_expected),
            blocks_received: 0,
            tokens_expected,
        }
    }

    /// Ranked scores: score descending, then position ascending.
    pub fn scored(&self) -> &[ImportanceScore] {
        &self.scored
    }

    pub fn blocks_received(&self) -> usize {
        self.blocks_received
    }

    pub fn tokens_expected(&self) -> usize {
        self.tokens_expected
    }

    pub fn is_complete(&self) -> bool {
        self.scored.len() >= self.tokens_expected
    }

    /// Inserts a block, keeping the list ranked.
    pub fn merge_block(&mut self, block: ScoreBlock) -> Result<()> {
        let mut fresh = HashSet::with_capacity(block.len());
        for e in &block.entries {
            if self.seen.contains(&e.token_pos) || !fresh.insert(e.token_pos) {
                return Err(Error::Consistency(format!(
                    "token {} merged twice",
                    e.token_pos
                )));
            }
            if !(e.score.is_finite() && e.score >= 0.0) {
                return Err(Error::Consistency(format!(
                    "token {} has invalid score {}",
                    e.token_pos, e.score
                )));
            }
        }
        let mut incoming = block.entries;
        incoming.sort_by(ImportanceScore::rank_cmp);

        let existing = std::mem::take(&mut self.scored);
        let mut merged = Vec::with_capacity(existing.len() + incoming.len());
        let (mut a, mut b) = (existing.into_iter().peekable(), incoming.into_iter().peekable());
        loop {
            let take_a = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => x.rank_cmp(y).is_le(),
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            merged.push(if take_a { a.next() } else { b.next() }.expect("peeked"));
        }
        self.scored = merged;
        self.seen.extend(fresh);
        self.blocks_received += 1;
        Ok(())
    }
}

/// The important set of one evaluation, in rank order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub important: Vec<TokenPos>,
    /// Members of `important` resident on the SSD, in rank order.
    pub fetch_from_ssd: Vec<TokenPos>,
}

/// Takes the first `⌈α·N⌉` merged positions.
pub fn select_important(
    state: &MergeState,
    alpha: f64,
    residency: &BTreeMap<TokenPos, Tier>,
) -> Result<SelectionResult> {
    validate_alpha(alpha)?;
    if !state.is_complete() {
        return Err(Error::State(format!(
            "selection requested after {} of {} tokens were merged",
            state.scored.len(),
            state.tokens_expected
        )));
    }
    let k = fraction_count(alpha, state.tokens_expected);
    let important: Vec<TokenPos> = state.scored[..k].iter().map(|s| s.token_pos).collect();
    let fetch_from_ssd = important
        .iter()
        .copied()
        .filter(|p| residency.get(p) == Some(&Tier::Ssd))
        .collect();
    Ok(SelectionResult {
        important,
        fetch_from_ssd,
    })
}

/// Work and traffic of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HieCostReport {
    pub cpu_tokens: usize,
    pub ssd_tokens: usize,
    /// KV bytes scanned on each tier.
    pub cpu_eval_bytes: usize,
    pub ssd_eval_bytes: usize,
    pub score_blocks: usize,
    /// SSD → CPU score-block bytes.
    pub score_bytes: usize,
    pub selected: usize,
    /// KV bytes of every selected token.
    pub selected_bytes: usize,
    /// KV bytes of selected tokens resident on the SSD.
    pub fetch_bytes: usize,
}

impl HieCostReport {
    pub const CSV_HEADER: &'static str =
        "step,layer,cpu_tokens,ssd_tokens,score_blocks,score_bytes,fetch_bytes,selected";

    pub fn csv_row(&self, step: usize, layer: usize) -> String {
        format!(
            "{step},{layer},{},{},{},{},{},{}",
            self.cpu_tokens,
            self.ssd_tokens,
            self.score_blocks,
            self.score_bytes,
            self.fetch_bytes,
            self.selected
        )
    }
}

fn partition(pools: &PoolState, tier: Tier) -> (Vec<&KeyVec>, usize) {
    let entries: Vec<_> = pools.entries_on(tier).collect();
    let bytes = entries.iter().map(|e| e.size_bytes()).sum();
    (entries.into_iter().map(|e| &e.key).collect(), bytes)
}

fn finish(
    merge: MergeState,
    pools: &PoolState,
    alpha: f64,
    mut cost: HieCostReport,
) -> Result<(SelectionResult, HieCostReport)> {
    let residency = pools.residency_map();
    let selection = select_important(&merge, alpha, &residency)?;
    let size = |p: &TokenPos| pools.entry(*p).map_or(0, |e| e.size_bytes());
    cost.selected = selection.important.len();
    cost.selected_bytes = selection.important.iter().map(size).sum();
    cost.fetch_bytes = selection.fetch_from_ssd.iter().map(size).sum();
    Ok((selection, cost))
}

fn check_inputs(pools: &PoolState, n: usize, alpha: f64) -> Result<()> {
    validate_alpha(alpha)?;
    if n == 0 {
        return Err(Error::Argument("score block size must be at least 1".into()));
    }
    if pools.is_empty() {
        return Err(Error::Argument(format!(
            "layer {} has no cached tokens to evaluate",
            pools.layer()
        )));
    }
    Ok(())
}

/// Evaluates both partitions of `pools` against `query` and selects the
/// important set. Blocks from the two tiers are merged alternately.
pub fn run_hie(
    query: &QueryVec,
    pools: &PoolState,
    n: usize,
    alpha: f64,
) -> Result<(SelectionResult, HieCostReport)> {
    check_inputs(pools, n, alpha)?;
    let (cpu_keys, cpu_bytes) = partition(pools, Tier::Cpu);
    let (ssd_keys, ssd_bytes) = partition(pools, Tier::Ssd);
    let mut cost = HieCostReport {
        cpu_tokens: cpu_keys.len(),
        ssd_tokens: ssd_keys.len(),
        cpu_eval_bytes: cpu_bytes,
        ssd_eval_bytes: ssd_bytes,
        ..Default::default()
    };

    let mut merge = MergeState::new(pools.len());
    let mut cpu = evaluate_partition(query, &cpu_keys, n, Tier::Cpu)?;
    let mut ssd = evaluate_partition(query, &ssd_keys, n, Tier::Ssd)?;
    loop {
        let (c, s) = (cpu.next(), ssd.next());
        if c.is_none() && s.is_none() {
            break;
        }
        if let Some(block) = s {
            let block = block?;
            cost.score_blocks += 1;
            cost.score_bytes += block.wire_bytes();
            merge.merge_block(block)?;
        }
        if let Some(block) = c {
            merge.merge_block(block?)?;
        }
    }
    finish(merge, pools, alpha, cost)
}

/// Same as [`run_hie`], with each tier scored on its own thread and one
/// consumer merging blocks in arrival order. The result is identical.
pub fn run_hie_threaded(
    query: &QueryVec,
    pools: &PoolState,
    n: usize,
    alpha: f64,
) -> Result<(SelectionResult, HieCostReport)> {
    check_inputs(pools, n, alpha)?;
    let (cpu_keys, cpu_bytes) = partition(pools, Tier::Cpu);
    let (ssd_keys, ssd_bytes) = partition(pools, Tier::Ssd);
    let mut cost = HieCostReport {
        cpu_tokens: cpu_keys.len(),
        ssd_tokens: ssd_keys.len(),
        cpu_eval_bytes: cpu_bytes,
        ssd_eval_bytes: ssd_bytes,
        ..Default::default()
    };

    let mut merge = MergeState::new(pools.len());
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<Result<ScoreBlock>>();
        for (keys, tier) in [(&cpu_keys, Tier::Cpu), (&ssd_keys, Tier::Ssd)] {
            let tx = tx.clone();
            scope.spawn(move || {
                let Ok(blocks) = evaluate_partition(query, keys, n, tier) else {
                    return;
                };
                for block in blocks {
                    if tx.send(block).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        for block in rx {
            let block = block?;
            if block.source_tier == Tier::Ssd {
                cost.score_blocks += 1;
                cost.score_bytes += block.wire_bytes();
            }
            merge.merge_block(block)?;
        }
        Ok(())
    })?;
    finish(merge, pools, alpha, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pools::{KvEntry, PoolConfig};
    use crate::vector::{oracle_top_k, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape() -> Shape {
        Shape::new(2, 4).unwrap()
    }

    fn random_keys(rng: &mut ChaCha8Rng, count: u32) -> Vec<KeyVec> {
        (0..count)
            .map(|p| {
                let v = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                KeyVec::new(p, shape(), v).unwrap()
            })
            .collect()
    }

    fn random_query(rng: &mut ChaCha8Rng) -> QueryVec {
        let v = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        QueryVec::new(0, shape(), v).unwrap()
    }

    /// Pool over `keys` with room for `cpu` entries on the CPU; the oldest
    /// tokens spill.
    fn pool_with(keys: &[KeyVec], cpu: usize) -> PoolState {
        let size = KvEntry::new(0, keys[0].clone()).size_bytes();
        let mut p = PoolState::new(0, PoolConfig::new(0.01, cpu * size)).unwrap();
        p.extend(keys.iter().map(|k| KvEntry::new(0, k.clone())).collect())
            .unwrap();
        p
    }

    fn block(tier: Tier, pairs: &[(TokenPos, f64)]) -> ScoreBlock {
        ScoreBlock {
            entries: pairs
                .iter()
                .map(|&(token_pos, score)| ImportanceScore { token_pos, score })
                .collect(),
            source_tier: tier,
        }
    }

    #[test]
    fn partition_sizes() {
        let pos: Vec<TokenPos> = (0..10).collect();
        let sizes: Vec<_> = partition_blocks(&pos, 4).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let pos: Vec<TokenPos> = (0..4).collect();
        assert_eq!(partition_blocks(&pos, 8).unwrap(), vec![pos.clone()]);
        assert!(matches!(partition_blocks(&pos, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn partition_concatenation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<TokenPos> = (0..1000).map(|_| rng.random()).collect();
        let joined: Vec<_> = partition_blocks(&pos, 64).unwrap().concat();
        assert_eq!(joined, pos);
    }

    #[test]
    fn empty_pool_yields_no_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_query(&mut rng);
        let keys: Vec<KeyVec> = vec![];
        assert_eq!(evaluate_partition(&q, &keys, 4, Tier::Ssd).unwrap().count(), 0);
    }

    #[test]
    fn full_block_of_four_is_sixteen_wire_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 4);
        let blocks: Vec<_> = evaluate_partition(&q, &keys, 4, Tier::Ssd)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].wire_bytes(), 16);
    }

    #[test]
    fn block_scores_equal_direct_scoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 20);
        let blocks: Vec<_> = evaluate_partition(&q, &keys, 8, Tier::Cpu)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(blocks.iter().map(ScoreBlock::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        let flat: Vec<_> = blocks.into_iter().flat_map(|b| b.entries).collect();
        let direct: Vec<_> = keys.iter().map(|k| score_token(&q, k).unwrap()).collect();
        assert_eq!(flat, direct);
    }

    #[test]
    fn merge_into_empty_sorts_block() {
        let mut m = MergeState::new(3);
        m.merge_block(block(Tier::Ssd, &[(0, 1.0), (1, 3.0), (2, 2.0)])).unwrap();
        let order: Vec<_> = m.scored().iter().map(|s| s.token_pos).collect();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(m.blocks_received(), 1);
    }

    #[test]
    fn interleaved_blocks_merge_to_full_sort() {
        let mut m = MergeState::new(6);
        m.merge_block(block(Tier::Ssd, &[(0, 5.0), (1, 1.0), (2, 3.0)])).unwrap();
        m.merge_block(block(Tier::Cpu, &[(3, 4.0), (4, 2.0), (5, 6.0)])).unwrap();
        let order: Vec<_> = m.scored().iter().map(|s| s.token_pos).collect();
        assert_eq!(order, vec![5, 0, 3, 2, 4, 1]);
    }

    #[test]
    fn equal_scores_across_blocks_prefer_lower_position() {
        let mut m = MergeState::new(4);
        m.merge_block(block(Tier::Ssd, &[(7, 1.0), (2, 1.0)])).unwrap();
        m.merge_block(block(Tier::Cpu, &[(5, 1.0), (0, 1.0)])).unwrap();
        let order: Vec<_> = m.scored().iter().map(|s| s.token_pos).collect();
        assert_eq!(order, vec![0, 2, 5, 7]);
    }

    #[test]
    fn duplicate_merge_is_consistency_error() {
        let mut m = MergeState::new(4);
        m.merge_block(block(Tier::Ssd, &[(1, 1.0)])).unwrap();
        let err = m.merge_block(block(Tier::Cpu, &[(2, 1.0), (1, 2.0)]));
        assert!(matches!(err, Err(Error::Consistency(_))));
        assert_eq!(m.scored().len(), 1);
        let err = m.merge_block(block(Tier::Cpu, &[(3, 1.0), (3, 2.0)]));
        assert!(matches!(err, Err(Error::Consistency(_))));
    }

    #[test]
    fn select_before_complete_is_state_error() {
        let mut m = MergeState::new(4);
        m.merge_block(block(Tier::Ssd, &[(1, 1.0)])).unwrap();
        let err = select_important(&m, 0.5, &BTreeMap::new());
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn select_two_of_ten() {
        let mut m = MergeState::new(10);
        let pairs: Vec<_> = (0..10).map(|p| (p, p as f64)).collect();
        m.merge_block(block(Tier::Cpu, &pairs)).unwrap();
        let residency: BTreeMap<_, _> = (0..10).map(|p| (p, Tier::Cpu)).collect();
        let sel = select_important(&m, 0.2, &residency).unwrap();
        assert_eq!(sel.important, vec![9, 8]);
        assert!(sel.fetch_from_ssd.is_empty());
    }

    #[test]
    fn selection_matches_oracle_with_alpha_015() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 128);
        let pools = pool_with(&keys, 70);
        let (sel, cost) = run_hie(&q, &pools, 16, 0.15).unwrap();
        assert_eq!(sel.important.len(), 20);
        assert_eq!(sel.important, oracle_top_k(&q, &keys, 20).unwrap());
        for p in &sel.fetch_from_ssd {
            assert_eq!(pools.residency(*p), Some(Tier::Ssd));
        }
        assert_eq!(cost.cpu_tokens + cost.ssd_tokens, 128);
    }

    #[test]
    fn all_cpu_pool_has_no_ssd_traffic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 50);
        let pools = pool_with(&keys, 50);
        let (sel, cost) = run_hie(&q, &pools, 8, 0.2).unwrap();
        assert_eq!(cost.ssd_tokens, 0);
        assert_eq!(cost.score_bytes, 0);
        assert_eq!(cost.fetch_bytes, 0);
        assert_eq!(sel.important, oracle_top_k(&q, &keys, 10).unwrap());
    }

    #[test]
    fn sixty_forty_split_matches_oracle_and_bills_score_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 100);
        let pools = pool_with(&keys, 60);
        assert_eq!(pools.count_on(Tier::Ssd), 40);
        let (sel, cost) = run_hie(&q, &pools, 8, 0.2).unwrap();
        assert_eq!(sel.important, oracle_top_k(&q, &keys, 20).unwrap());
        assert_eq!(cost.score_blocks, 5);
        assert_eq!(cost.score_bytes, 160);
    }

    #[test]
    fn threaded_evaluation_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 300);
        let pools = pool_with(&keys, 170);
        assert_eq!(
            run_hie(&q, &pools, 7, 0.2).unwrap(),
            run_hie_threaded(&q, &pools, 7, 0.2).unwrap()
        );
    }

    #[test]
    fn run_hie_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = random_query(&mut rng);
        let keys = random_keys(&mut rng, 10);
        let pools = pool_with(&keys, 10);
        assert!(run_hie(&q, &pools, 0, 0.2).is_err());
        assert!(run_hie(&q, &pools, 4, 0.0).is_err());
        let empty = PoolState::new(0, PoolConfig::new(0.2, 1024)).unwrap();
        assert!(run_hie(&q, &empty, 4, 0.2).is_err());
    }

    #[test]
    fn cost_csv_row() {
        let cost = HieCostReport {
            cpu_tokens: 60,
            ssd_tokens: 40,
            score_blocks: 5,
            score_bytes: 160,
            fetch_bytes: 96,
            selected: 20,
            ..Default::default()
        };
        assert_eq!(cost.csv_row(3, 1), "3,1,60,40,5,160,96,20");
        assert_eq!(HieCostReport::CSV_HEADER.split(',').count(), 8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn merge_order_independent(seed in any::<u64>(), count in 1u32..80, n in 1usize..20) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = random_query(&mut rng);
                let keys = random_keys(&mut rng, count);
                let blocks: Vec<ScoreBlock> = evaluate_partition(&q, &keys, n, Tier::Ssd)
                    .unwrap().collect::<Result<_>>().unwrap();
                let mut forward = MergeState::new(keys.len());
                for b in blocks.iter().cloned() { forward.merge_block(b).unwrap(); }
                let mut backward = MergeState::new(keys.len());
                for b in blocks.into_iter().rev() { backward.merge_block(b).unwrap(); }
                prop_assert_eq!(forward.scored(), backward.scored());
            }

            #[test]
            fn selection_independent_of_split_and_block_size(
                seed in any::<u64>(), count in 2u32..120, cpu_frac in 0.0f64..1.0,
                n1 in 1usize..40, n2 in 1usize..40,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = random_query(&mut rng);
                let keys = random_keys(&mut rng, count);
                let cpu = ((count as f64 * cpu_frac) as usize).max(crate::vector::fraction_count(0.01, count as usize));
                let a = run_hie(&q, &pool_with(&keys, cpu), n1, 0.2).unwrap();
                let b = run_hie(&q, &pool_with(&keys, count as usize), n2, 0.2).unwrap();
                prop_assert_eq!(&a.0.important, &b.0.important);
                prop_assert_eq!(a.1.score_bytes, SCORE_ENTRY_WIRE_BYTES * a.1.ssd_tokens);
            }
        }
    }
}
