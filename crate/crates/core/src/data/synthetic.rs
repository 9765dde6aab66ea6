//! Synthetic corpora with planted first-order sequential structure.
//!
//! Every item has a few preferred successors. A user's next item is one of
//! the successors of the current item, except with probability `noise` when
//! it is drawn from a global Zipf popularity law instead. Because the true
//! next-item distribution is known, it doubles as an oracle scorer.

use super::{DataError, RawInteraction, Result};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Successors per item.
    pub successors: usize,
    /// Probability of a popularity jump instead of a transition.
    pub noise: f64,
    /// Zipf exponent of the popularity law.
    pub zipf: f64,
    /// Number of item domains; `0` leaves rows untagged.
    pub domains: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 500,
            min_len: 8,
            max_len: 16,
            successors: 4,
            noise: 0.1,
            zipf: 1.0,
            domains: 0,
            seed: 0,
        }
    }
}

/// A generated corpus and its ground-truth generator. Items are identified
/// by ids `"i0"..` so raw item `k` has id `format!("i{k}")`.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    pub interactions: Vec<RawInteraction>,
    /// Popularity probabilities over raw items.
    pub popularity: Vec<f64>,
    /// `(successor, probability)` pairs per raw item, probabilities summing to one.
    pub transitions: Vec<Vec<(usize, f64)>>,
}

impl SyntheticCorpus {
    pub fn item_id(k: usize) -> String {
        format!("i{k}")
    }

    /// Parses an id produced by [`Self::item_id`].
    pub fn raw_item(id: &str) -> Option<usize> {
        id.strip_prefix('i')?.parse().ok()
    }

    /// True next-item probabilities over raw items given the previous one.
    pub fn next_distribution(&self, prev: usize) -> Vec<f64> {
        let eps = self.config.noise;
        let mut p: Vec<f64> = self.popularity.iter().map(|q| eps * q).collect();
        for &(j, w) in &self.transitions[prev] {
            p[j] += (1.0 - eps) * w;
        }
        p
    }
}

fn validate(c: &SyntheticConfig) -> Result<()> {
    let fail = |m: &str| Err(DataError::InvalidArgument(m.to_string()));
    if c.users == 0 || c.items < 2 {
        return fail("need at least one user and two items");
    }
    if c.min_len < 1 || c.min_len > c.max_len {
        return fail("sequence lengths must satisfy 1 <= min_len <= max_len");
    }
    if c.successors == 0 || c.successors >= c.items {
        return fail("successors must lie in 1..items");
    }
    if !(0.0..=1.0).contains(&c.noise) || !c.zipf.is_finite() || c.zipf < 0.0 {
        return fail("noise must lie in [0, 1] and zipf must be non-negative");
    }
    Ok(())
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    validate(config)?;
    let n = config.items;
    let weights: Vec<f64> = (0..n).map(|k| 1.0 / ((k + 1) as f64).powf(config.zipf)).collect();
    let total: f64 = weights.iter().sum();
    let popularity: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let pop = WeightedIndex::new(&weights).expect("positive weights");

    let mut rng = crate::rng::stream(config.seed, &[0x5EED, 1]);
    let rank_weight: Vec<f64> = (0..config.successors).map(|r| 1.0 / (r + 1) as f64).collect();
    let rank_total: f64 = rank_weight.iter().sum();
    let transitions: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut next = Vec::with_capacity(config.successors);
            while next.len() < config.successors {
                let j = pop.sample(&mut rng);
                if j != i && !next.contains(&j) {
                    next.push(j);
                }
            }
            next.into_iter()
                .zip(&rank_weight)
                .map(|(j, w)| (j, w / rank_total))
                .collect()
        })
        .collect();
    let succ: Vec<WeightedIndex<f64>> = transitions
        .iter()
        .map(|t| WeightedIndex::new(t.iter().map(|&(_, w)| w)).unwrap())
        .collect();

    let mut interactions = Vec::new();
    for u in 0..config.users {
        let mut rng = crate::rng::stream(config.seed, &[0x5EED, 2, u as u64]);
        let len = rng.gen_range(config.min_len..=config.max_len);
        let mut cur = pop.sample(&mut rng);
        for t in 0..len {
            if t > 0 {
                cur = if rng.gen::<f64>() < config.noise {
                    pop.sample(&mut rng)
                } else {
                    transitions[cur][succ[cur].sample(&mut rng)].0
                };
            }
            interactions.push(RawInteraction {
                user: format!("u{u}"),
                item: SyntheticCorpus::item_id(cur),
                timestamp: t as u64,
                domain: (config.domains > 0).then(|| format!("D{}", cur % config.domains)),
            });
        }
    }
    Ok(SyntheticCorpus {
        config: config.clone(),
        interactions,
        popularity,
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let c = SyntheticConfig {
            users: 50,
            items: 40,
            seed: 4,
            domains: 3,
            ..Default::default()
        };
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.interactions, b.interactions);
        let users: std::collections::HashSet<_> = a.interactions.iter().map(|r| &r.user).collect();
        assert_eq!(users.len(), 50);
        assert!(a.interactions.len() >= 50 * 8 && a.interactions.len() <= 50 * 16);
        assert!(a.interactions.iter().all(|r| r.domain.is_some()));
        for k in 0..40 {
            let p: f64 = a.next_distribution(k).iter().sum();
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transitions_dominate_without_noise() {
        let c = SyntheticConfig {
            users: 30,
            items: 20,
            noise: 0.0,
            ..Default::default()
        };
        let g = generate(&c).unwrap();
        for w in g.interactions.windows(2).filter(|w| w[0].user == w[1].user) {
            let (a, b) = (SyntheticCorpus::raw_item(&w[0].item).unwrap(), SyntheticCorpus::raw_item(&w[1].item).unwrap());
            assert!(g.transitions[a].iter().any(|&(j, _)| j == b));
        }
        assert!(generate(&SyntheticConfig { successors: 20, ..c }).is_err());
    }
}
