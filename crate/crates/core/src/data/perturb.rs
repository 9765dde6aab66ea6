use super::{DataError, ItemIdx, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Remove,
    Replace,
}

impl PerturbMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::Remove => "remove",
            PerturbMode::Replace => "replace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbed {
    pub items: Vec<ItemIdx>,
    pub selected: usize,
}

/// Selects each history item independently with probability `p`, then
/// removes it or swaps it for a uniformly drawn different catalog item
/// (indices `1..=n_items`). The target item is not part of `history` and is
/// never touched.
pub fn perturb(
    history: &[ItemIdx],
    mode: PerturbMode,
    p: f64,
    n_items: usize,
    seed: u64,
) -> Result<Perturbed> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    if mode == PerturbMode::Replace && n_items < 2 {
        return Err(DataError::InvalidArgument(
            "replacement needs at least two catalog items".into(),
        ));
    }
    let mut rng = crate::rng::stream(seed, &[0x9E27]);
    let mut items = Vec::with_capacity(history.len());
    let mut selected = 0;
    for &item in history {
        if rng.gen::<f64>() >= p {
            items.push(item);
            continue;
        }
        selected += 1;
        if mode == PerturbMode::Replace {
            // uniform over the n-1 other items
            let mut r = rng.gen_range(1..n_items as ItemIdx);
            if r >= item {
                r += 1;
            }
            items.push(r);
        }
    }
    Ok(Perturbed { items, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_certain_probability() {
        let h: Vec<ItemIdx> = (1..=20).collect();
        assert_eq!(perturb(&h, PerturbMode::Replace, 0.0, 50, 1).unwrap().items, h);
        let r = perturb(&h, PerturbMode::Remove, 1.0, 50, 1).unwrap();
        assert!(r.items.is_empty());
        assert_eq!(r.selected, 20);
    }

    #[test]
    fn monte_carlo_fraction_near_half() {
        let h: Vec<ItemIdx> = (0..10_000).map(|i| i % 99 + 1).collect();
        let r = perturb(&h, PerturbMode::Replace, 0.5, 100, 77).unwrap();
        let frac = r.selected as f64 / h.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        let changed = h.iter().zip(&r.items).filter(|(a, b)| a != b).count();
        assert_eq!(changed, r.selected);
    }

    proptest! {
        #[test]
        fn length_contracts(h in proptest::collection::vec(1u32..=30, 0..40), p in 0.0f64..=1.0, seed in any::<u64>()) {
            let rep = perturb(&h, PerturbMode::Replace, p, 30, seed).unwrap();
            prop_assert_eq!(rep.items.len(), h.len());
            prop_assert!(rep.items.iter().all(|&i| (1..=30).contains(&i)));
            let rem = perturb(&h, PerturbMode::Remove, p, 30, seed).unwrap();
            prop_assert_eq!(rem.items.len(), h.len() - rem.selected);
            prop_assert_eq!(perturb(&h, PerturbMode::Remove, p, 30, seed).unwrap(), rem);
        }
    }
}
