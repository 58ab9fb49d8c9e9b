//! Query/key vectors, the token-importance score and an exhaustive top-k.
//!
//! The importance of a cached token with respect to the current query is the
//! sum over attention heads of the absolute per-head dot product
//! `Σ_h |q_h · k_h|`. Vectors are stored as `f32` (what a trace file carries)
//! and accumulated in `f64`, head by head in index order, so a score is a pure
//! function of its inputs.
//!
//! Every ranking in this crate uses the same total order: higher score first,
//! and on equal scores the lower token position first.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 0-based position of a token in the context.
pub type TokenPos = u32;

/// Head count and per-head dimension shared by queries and keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub heads: usize,
    pub dims: usize,
}

impl Shape {
    pub fn new(heads: usize, dims: usize) -> Result<Self> {
        if heads == 0 || dims == 0 {
            return Err(Error::Config(format!(
                "vector shape must be non-empty, got heads={heads} dims={dims}"
            )));
        }
        Ok(Self { heads, dims })
    }

    /// Number of scalars in one vector.
    pub fn len(&self) -> usize {
        self.heads * self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_values(shape: Shape, values: &[f32], what: &str) -> Result<()> {
    if values.len() != shape.len() {
        return Err(Error::Config(format!(
            "{what} has {} values, shape {}x{} needs {}",
            values.len(),
            shape.heads,
            shape.dims,
            shape.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} value {i} is not finite")));
    }
    Ok(())
}

/// The current query of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVec {
    pub layer: usize,
    shape: Shape,
    values: Vec<f32>,
}

impl QueryVec {
    pub fn new(layer: usize, shape: Shape, values: Vec<f32>) -> Result<Self> {
        check_values(shape, &values, "query")?;
        Ok(Self {
            layer,
            shape,
            values,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.layer,
            self.shape,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// The cached key of one token in one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyVec {
    pub token_pos: TokenPos,
    shape: Shape,
    values: Vec<f32>,
}

impl KeyVec {
    pub fn new(token_pos: TokenPos, shape: Shape, values: Vec<f32>) -> Result<Self> {
        check_values(shape, &values, "key")?;
        Ok(Self {
            token_pos,
            shape,
            values,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// One `<token pos, score>` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub token_pos: TokenPos,
    pub score: f64,
}

impl ImportanceScore {
    /// Total ranking order: score descending, then token position ascending.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.token_pos.cmp(&other.token_pos))
    }
}

/// Scores `key` against `query`: `Σ_h |q_h · k_h|`.
pub fn score_token(query: &QueryVec, key: &KeyVec) -> Result<ImportanceScore> {
    if query.shape != key.shape {
        return Err(Error::Config(format!(
            "query shape {}x{} does not match key {} shape {}x{}",
            query.shape.heads, query.shape.dims, key.token_pos, key.shape.heads, key.shape.dims
        )));
    }
    let dims = query.shape.dims;
    let score = query
        .values
        .chunks_exact(dims)
        .zip(key.values.chunks_exact(dims))
        .map(|(q, k)| {
            q.iter()
                .zip(k)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum::<f64>()
                .abs()
        })
        .sum();
    Ok(ImportanceScore {
        token_pos: key.token_pos,
        score,
    })
}

/// Scores every key and returns the positions of the `k` best, in rank order.
pub fn oracle_top_k(query: &QueryVec, keys: &[KeyVec], k: usize) -> Result<Vec<TokenPos>> {
    if k > keys.len() {
        return Err(Error::Argument(format!(
            "top-{k} requested from {} keys",
            keys.len()
        )));
    }
    let mut scored = keys
        .iter()
        .map(|key| score_token(query, key))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(ImportanceScore::rank_cmp);
    Ok(scored.into_iter().take(k).map(|s| s.token_pos).collect())
}

/// `⌈fraction · total⌉` with a floor of one (and never more than `total`).
///
/// A tiny tolerance keeps products such as `0.1 * 30` from rounding up past
/// the exact integer they represent.
pub fn fraction_count(fraction: f64, total: usize) -> usize {
    if total == 0 {
        return 0;
    }
    let raw = (fraction * total as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(heads: usize, dims: usize) -> Shape {
        Shape::new(heads, dims).unwrap()
    }

    fn unit(dims: usize, axis: usize) -> Vec<f32> {
        let mut v = vec![0.0; dims];
        v[axis] = 1.0;
        v
    }

    fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn unit_vector_scores_one() {
        let s = shape(1, 4);
        let q = QueryVec::new(0, s, unit(4, 0)).unwrap();
        let k = KeyVec::new(7, s, unit(4, 0)).unwrap();
        let score = score_token(&q, &k).unwrap();
        assert_eq!(score.score, 1.0);
        assert_eq!(score.token_pos, 7);
    }

    #[test]
    fn orthogonal_vectors_score_zero() {
        let s = shape(1, 4);
        let q = QueryVec::new(0, s, unit(4, 0)).unwrap();
        let k = KeyVec::new(0, s, unit(4, 1)).unwrap();
        assert_eq!(score_token(&q, &k).unwrap().score, 0.0);
    }

    #[test]
    fn seeded_score_matches_straight_line_formula() {
        let s = shape(2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let qv = random_values(&mut rng, 16);
        let kv = random_values(&mut rng, 16);

        let mut expected = 0.0f64;
        for h in 0..2 {
            let mut dot = 0.0f64;
            for d in 0..8 {
                dot += qv[h * 8 + d] as f64 * kv[h * 8 + d] as f64;
            }
            expected += dot.abs();
        }

        let q = QueryVec::new(0, s, qv).unwrap();
        let k = KeyVec::new(3, s, kv).unwrap();
        assert_eq!(score_token(&q, &k).unwrap().score, expected);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let q = QueryVec::new(0, shape(1, 4), unit(4, 0)).unwrap();
        let k = KeyVec::new(0, shape(2, 2), unit(4, 0)).unwrap();
        assert!(matches!(score_token(&q, &k), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(QueryVec::new(0, shape(1, 4), vec![0.0; 3]).is_err());
        assert!(KeyVec::new(0, shape(1, 2), vec![0.0, f32::NAN]).is_err());
        assert!(Shape::new(0, 4).is_err());
    }

    #[test]
    fn top_k_single_parallel_key() {
        let s = shape(1, 4);
        let q = QueryVec::new(0, s, unit(4, 0)).unwrap();
        let keys: Vec<_> = (0..10)
            .map(|pos| {
                let v = if pos == 3 { unit(4, 0) } else { unit(4, 1 + pos as usize % 3) };
                KeyVec::new(pos, s, v).unwrap()
            })
            .collect();
        assert_eq!(oracle_top_k(&q, &keys, 1).unwrap(), vec![3]);
    }

    #[test]
    fn top_k_ties_prefer_lower_position() {
        let s = shape(1, 4);
        let q = QueryVec::new(0, s, unit(4, 0)).unwrap();
        let keys: Vec<_> = (0..5)
            .map(|pos| KeyVec::new(pos, s, vec![0.5, 0.5, 0.0, 0.0]).unwrap())
            .collect();
        assert_eq!(oracle_top_k(&q, &keys, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn top_k_matches_independent_sort() {
        let s = shape(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = QueryVec::new(0, s, random_values(&mut rng, 8)).unwrap();
        let keys: Vec<_> = (0..64)
            .map(|pos| KeyVec::new(pos, s, random_values(&mut rng, 8)).unwrap())
            .collect();

        // Independent route: pairwise "beats" count.
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| {
                (0..2)
                    .map(|h| {
                        (0..4)
                            .map(|d| q.values()[h * 4 + d] as f64 * k.values()[h * 4 + d] as f64)
                            .sum::<f64>()
                            .abs()
                    })
                    .sum()
            })
            .collect();
        let mut expected: Vec<TokenPos> = (0..64u32)
            .filter(|&i| {
                let beaten_by = (0..64usize)
                    .filter(|&j| {
                        scores[j] > scores[i as usize]
                            || (scores[j] == scores[i as usize] && j < i as usize)
                    })
                    .count();
                beaten_by < 12
            })
            .collect();
        expected.sort();

        let mut got = oracle_top_k(&q, &keys, 12).unwrap();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn top_k_too_large_is_argument_error() {
        let s = shape(1, 1);
        let q = QueryVec::new(0, s, vec![1.0]).unwrap();
        let keys = vec![KeyVec::new(0, s, vec![1.0]).unwrap()];
        assert!(matches!(oracle_top_k(&q, &keys, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_query_falls_back_to_position_order() {
        let s = shape(1, 2);
        let q = QueryVec::new(0, s, vec![0.0, 0.0]).unwrap();
        let keys: Vec<_> = (0..4)
            .rev()
            .map(|pos| KeyVec::new(pos, s, vec![pos as f32, 1.0]).unwrap())
            .collect();
        assert_eq!(oracle_top_k(&q, &keys, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn fraction_count_rounds_up_with_floor_of_one() {
        assert_eq!(fraction_count(0.2, 10), 2);
        assert_eq!(fraction_count(0.15, 128), 20);
        assert_eq!(fraction_count(0.1, 30), 3);
        assert_eq!(fraction_count(0.01, 5), 1);
        assert_eq!(fraction_count(1.0, 7), 7);
        assert_eq!(fraction_count(0.5, 0), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vals(n: usize) -> impl Strategy<Value = Vec<f32>> {
            proptest::collection::vec(-4.0f32..4.0, n)
        }

        proptest! {
            #[test]
            fn score_is_symmetric_and_non_negative(a in vals(12), b in vals(12)) {
                let s = Shape::new(3, 4).unwrap();
                let ab = score_token(&QueryVec::new(0, s, a.clone()).unwrap(), &KeyVec::new(0, s, b.clone()).unwrap()).unwrap();
                let ba = score_token(&QueryVec::new(0, s, b).unwrap(), &KeyVec::new(0, s, a).unwrap()).unwrap();
                prop_assert!(ab.score >= 0.0);
                prop_assert_eq!(ab.score, ba.score);
            }

            #[test]
            fn score_invariant_under_head_permutation(a in vals(12), b in vals(12)) {
                let s = Shape::new(3, 4).unwrap();
                let rotate = |v: &[f32]| -> Vec<f32> { v[4..].iter().chain(&v[..4]).copied().collect() };
                let base = score_token(&QueryVec::new(0, s, a.clone()).unwrap(), &KeyVec::new(0, s, b.clone()).unwrap()).unwrap();
                let perm = score_token(&QueryVec::new(0, s, rotate(&a)).unwrap(), &KeyVec::new(0, s, rotate(&b)).unwrap()).unwrap();
                prop_assert!((base.score - perm.score).abs() <= 1e-12 * base.score.max(1.0));
            }

            #[test]
            fn top_k_invariant_under_power_of_two_scaling(
                q in vals(8),
                keys in proptest::collection::vec(vals(8), 1..40),
                k_frac in 0.0f64..1.0,
                exp in -3i32..4,
            ) {
                let s = Shape::new(2, 4).unwrap();
                let query = QueryVec::new(0, s, q).unwrap();
                let keys: Vec<_> = keys.into_iter().enumerate()
                    .map(|(i, v)| KeyVec::new(i as u32, s, v).unwrap()).collect();
                let k = ((keys.len() as f64) * k_frac) as usize;
                // Powers of two scale every product exactly, so ties survive.
                let scaled = query.scaled(2f32.powi(exp)).unwrap();
                let a = oracle_top_k(&query, &keys, k).unwrap();
                let b = oracle_top_k(&scaled, &keys, k).unwrap();
                prop_assert_eq!(a.len(), k);
                let distinct: std::collections::BTreeSet<_> = a.iter().collect();
                prop_assert_eq!(distinct.len(), k);
                prop_assert_eq!(a, b);
            }
        }
    }
}
