use super::*;
use crate::data::store::{prepare, PrepareOptions};
use crate::data::synthetic::{generate, SyntheticConfig};
use crate::data::{Catalog, ItemIdx, PerturbMode, SplitDataset, UserSequence, UserSplit};
use crate::exec::Parallelism;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

const SEQ: Parallelism = Parallelism::Sequential;

fn list(items: &[ItemIdx]) -> RankedList {
    RankedList {
        user: 0,
        items: items.to_vec(),
        depth: items.len(),
    }
}

fn catalog(n: usize, domains: Option<&[&str]>) -> Catalog {
    let mut c = Catalog::new();
    for k in 1..=n {
        c.intern(&format!("i{k}"), domains.map(|d| d[k - 1]));
    }
    c
}

/// Users with histories of random items and a retained test item.
fn random_split(users: usize, n: usize, seed: u64) -> SplitDataset {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || rng.gen_range(1..=n as ItemIdx);
    let users = (0..users)
        .map(|u| {
            let len = 3 + u % 5;
            UserSplit {
                user: u as u32,
                user_id: format!("u{u}"),
                train: (0..len).map(|_| draw()).collect(),
                valid: draw(),
                test: Some(draw()),
            }
        })
        .collect();
    SplitDataset {
        catalog: catalog(n, None),
        users,
        excluded_short: 0,
        dropped_test: 0,
    }
}

fn oracle_for(split: &SplitDataset) -> TableScorer {
    let mut t = TableScorer::new(split.catalog.len());
    for u in split.test_users() {
        t.insert_target(&u.test_history(), u.test.unwrap());
    }
    t
}

#[test]
fn hit_rate_and_ndcg_definitions() {
    let l = list(&[7, 3, 9, 1, 2, 4]);
    assert_eq!(hr_at_n(&l, 7, 5), 1.0);
    assert_eq!(hr_at_n(&l, 4, 5), 0.0);
    assert_eq!(hr_at_n(&l, 42, 5), 0.0);
    assert_eq!(ndcg_at_n(&l, 7, 5), 1.0);
    assert_eq!(ndcg_at_n(&l, 3, 5), 1.0 / 3f64.log2());
    assert!((ndcg_at_n(&l, 3, 5) - 0.6309297535714574).abs() < 1e-15);
    assert_eq!(ndcg_at_n(&l, 4, 5), 0.0);
}

#[test]
fn coverage_definitions() {
    let same = vec![list(&[1, 2, 3]), list(&[1, 2, 3])];
    assert_eq!(coverage_at_n(&same, 3, 10), 0.3);
    let all = vec![list(&[1, 2]), list(&[3, 4]), list(&[5, 1])];
    assert_eq!(coverage_at_n(&all, 2, 5), 1.0);
    assert_eq!(coverage_at_n(&[list(&[4])], 1, 8), 1.0 / 8.0);
}

#[test]
fn trajectory_rank_values() {
    let f = [1, 2, 3];
    assert_eq!(tr_at_k(&f, &f, 3).unwrap(), 1.0);
    assert_eq!(tr_at_k(&f, &[4, 5, 6], 3).unwrap(), 0.0);
    let want = (1.0 / 2f64.log2() + 1.0 / 4f64.log2()) / (1.0 / 2f64.log2() + 1.0 / 3f64.log2() + 1.0 / 4f64.log2());
    let got = tr_at_k(&f, &[2, 9, 1], 3).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 1.5 / (1.0 + 0.6309297535714574 + 0.5)).abs() < 1e-12);
    assert!(tr_at_k(&f, &f, 0).is_err());
    assert!(tr_at_k(&f[..2], &f, 3).is_err());
}

#[test]
fn trajectory_rank_symmetry() {
    let truth = [1, 2, 3, 4];
    let pred = [2, 7, 4, 8];
    let base = tr_at_k(&truth, &pred, 4).unwrap();
    assert_eq!(tr_at_k(&[4, 3, 2, 1], &pred, 4).unwrap(), base);
    assert_eq!(tr_at_k(&[3, 1, 4, 2], &pred, 4).unwrap(), base);
    assert_ne!(tr_at_k(&truth, &[7, 8, 2, 4], 4).unwrap(), base);
}

#[test]
fn ranking_breaks_ties_by_index() {
    let s = [f64::NEG_INFINITY, 0.5, 0.9, 0.5, f64::NAN, 0.9];
    assert_eq!(rank_items(0, &s, 10).items, vec![2, 5, 1, 3, 4]);
    assert_eq!(rank_items(0, &s, 2).items, vec![2, 5]);
    assert_eq!(rank_of(&s, 5), 2);
    assert_eq!(rank_of(&s, 3), 4);
    assert_eq!(rank_of(&s, 4), 5);
}

/// Independent ranking: stable sort of `(−score, index)` pairs.
fn brute_rank(scores: &[f64], target: ItemIdx) -> (usize, Vec<ItemIdx>) {
    let mut pairs: Vec<(f64, usize)> = (1..scores.len()).map(|i| (scores[i], i)).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let pos = pairs.iter().position(|p| p.1 == target as usize).unwrap() + 1;
    (pos, pairs.iter().map(|p| p.1 as ItemIdx).collect())
}

#[test]
fn leave_one_out_matches_sort_oracle() {
    let split = random_split(120, 60, 5);
    let n = split.catalog.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut table = TableScorer::new(n);
    for u in split.test_users() {
        // coarse scores so that ties are common
        let mut row: Vec<f64> = (0..=n).map(|_| (rng.gen::<f64>() * 8.0).floor()).collect();
        row[0] = f64::NEG_INFINITY;
        table.table.insert(u.test_history(), row);
    }
    let opts = EvalOptions::default();
    let rep = evaluate_leave_one_out(&table, &split, &opts, Parallelism::Parallel).unwrap();
    let mut sums = std::collections::BTreeMap::<String, f64>::new();
    let mut seen = [vec![false; n + 1], vec![false; n + 1], vec![false; n + 1]];
    let count = split.test_users().count() as f64;
    for u in split.test_users() {
        let (rank, order) = brute_rank(&table.table[&u.test_history()], u.test.unwrap());
        for (j, &cut) in [5usize, 10, 50].iter().enumerate() {
            *sums.entry(format!("HR@{cut}")).or_default() += if rank <= cut { 1.0 } else { 0.0 };
            *sums.entry(format!("NDCG@{cut}")).or_default() += if rank <= cut { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 };
            for &i in &order[..cut] {
                seen[j][i as usize] = true;
            }
        }
    }
    let cell = rep.cell("all").unwrap();
    assert_eq!(cell.users, split.users.len());
    for (k, v) in &sums {
        assert_eq!(cell.metrics[k], v / count, "{k}");
    }
    for (j, cut) in [5, 10, 50].iter().enumerate() {
        let cov = seen[j][1..].iter().filter(|&&s| s).count() as f64 / n as f64;
        assert_eq!(cell.metrics[&format!("Coverage@{cut}")], cov);
    }
    let seq = evaluate_leave_one_out(&table, &split, &opts, SEQ).unwrap();
    assert_eq!(seq, rep);
}

#[test]
fn oracle_and_random_scorers() {
    let split = random_split(2000, 100, 1);
    let opts = EvalOptions::default();
    let rep = evaluate_leave_one_out(&oracle_for(&split), &split, &opts, SEQ).unwrap();
    assert_eq!(rep.metric("all", "HR@5"), Some(1.0));
    assert_eq!(rep.metric("all", "NDCG@5"), Some(1.0));
    let rnd = RandomScorer { n_items: 100, seed: 3 };
    let hr = evaluate_leave_one_out(&rnd, &split, &opts, SEQ).unwrap().metric("all", "HR@10").unwrap();
    assert!((hr - 0.10).abs() < 0.02, "{hr}");
}

#[test]
fn popularity_scorer_matches_count_ranking() {
    let corpus = generate(&SyntheticConfig {
        users: 300,
        items: 80,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let ds = prepare(
        &corpus.interactions,
        &PrepareOptions {
            k_core: 0,
            cold_start_fraction: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    let pop = PopularityScorer { index: &ds.popularity };
    let opts = EvalOptions::default();
    let rep = evaluate_leave_one_out(&pop, &ds.split, &opts, SEQ).unwrap();
    // oracle: position in the list sorted by (count desc, index asc)
    let n = ds.split.catalog.len();
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(ds.popularity.counts[i]), i));
    let users: Vec<_> = ds.split.test_users().collect();
    let ndcg10: f64 = users
        .iter()
        .map(|u| {
            let r = order.iter().position(|&i| i == u.test.unwrap() as usize).unwrap() + 1;
            if r <= 10 { 1.0 / ((r + 1) as f64).log2() } else { 0.0 }
        })
        .sum::<f64>()
        / users.len() as f64;
    assert_eq!(rep.metric("all", "NDCG@10").unwrap(), ndcg10);
    assert_eq!(rep.metric("all", "Coverage@10").unwrap(), 10.0 / n as f64);

    let lt = long_tail_eval(&pop, &ds.split, &ds.popularity, &opts, SEQ).unwrap();
    let g: Vec<f64> = (1..=4).map(|k| lt.metric(&format!("G{k}"), "NDCG@10").unwrap_or(0.0)).collect();
    assert!(g.windows(2).all(|w| w[0] >= w[1]), "{g:?}");
    let total: usize = lt.cells.iter().map(|c| c.users).sum();
    assert_eq!(total, users.len());
    let oracle = long_tail_eval(&oracle_for(&ds.split), &ds.split, &ds.popularity, &opts, SEQ).unwrap();
    for c in oracle.cells.iter().filter(|c| c.users > 0) {
        assert_eq!(c.metrics["NDCG@10"], 1.0);
    }
}

#[test]
fn long_tail_reports_empty_groups() {
    let mut split = random_split(20, 8, 4);
    for u in &mut split.users {
        u.test = Some(1);
        u.train.push(1);
    }
    let pop = crate::data::popularity_groups(&split, 4).unwrap();
    assert_eq!(pop.group_of(1), 1);
    let rep = long_tail_eval(&oracle_for(&split), &split, &pop, &EvalOptions::default(), SEQ).unwrap();
    assert_eq!(rep.cells[0].users, 20);
    for c in &rep.cells[1..] {
        assert_eq!(c.users, 0);
        assert!(c.metrics.is_empty());
    }
    assert!(rep.to_tsv(0).contains("long_tail\tG2\t-\t-\t0\t0"));
}

fn seqs(items: &[&[ItemIdx]]) -> Vec<UserSequence> {
    items
        .iter()
        .enumerate()
        .map(|(u, s)| UserSequence {
            user: u as u32,
            user_id: format!("c{u}"),
            items: s.to_vec(),
            domains: None,
        })
        .collect()
}

#[test]
fn cold_start_lengths() {
    let users = seqs(&[&[1, 2, 3, 4, 5, 6], &[3, 4, 5], &[6, 5, 4, 3, 2, 1, 2]]);
    let opts = EvalOptions::default();
    let mut oracle = TableScorer::new(6);
    for u in &users {
        let (t, h) = u.items.split_last().unwrap();
        for k in [1, 2, 5, 100] {
            oracle.insert_target(&crate::data::keep_last_k(h, k), *t);
        }
    }
    let rep = cold_start_eval(&oracle, &users, &[1, 2, 5, 100], &opts, SEQ).unwrap();
    for c in &rep.cells {
        assert_eq!(c.metrics["NDCG@10"], 1.0);
        assert_eq!(c.users, 3);
    }
    // saturation: a length beyond every history equals the full history
    let rnd = RandomScorer { n_items: 6, seed: 1 };
    let a = cold_start_eval(&rnd, &users, &[6, 50], &opts, SEQ).unwrap();
    assert_eq!(a.cells[0].metrics, a.cells[1].metrics);
    assert!(cold_start_eval(&rnd, &users, &[0], &opts, SEQ).is_err());
}

#[test]
fn coverage_orders_diversity() {
    // A recommends per-user distinct items, B the same items to everyone.
    struct Spread;
    impl Scorer for Spread {
        fn n_items(&self) -> usize {
            40
        }
        fn score_batch(&self, h: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>> {
            Ok(h.iter()
                .map(|h| {
                    let mut r = vec![0.0; 41];
                    r[0] = f64::NEG_INFINITY;
                    let base = (h[0] as usize * 10) % 40;
                    for j in 0..10 {
                        r[1 + (base + j) % 40] = 1.0;
                    }
                    r
                })
                .collect())
        }
    }
    let users = seqs(&[&[1, 5], &[2, 6], &[3, 7], &[4, 8]]);
    let opts = EvalOptions::default();
    let a = cold_start_eval(&Spread, &users, &[5], &opts, SEQ).unwrap();
    let b = cold_start_eval(&TableScorer::new(40), &users, &[5], &opts, SEQ).unwrap();
    let (ca, cb) = (a.metric("len=5", "Coverage@10").unwrap(), b.metric("len=5", "Coverage@10").unwrap());
    assert_eq!(ca, 1.0);
    assert_eq!(cb, 0.25);
}

fn domain_split() -> SplitDataset {
    // items 1-3 in A, 4-6 in B
    let cat = catalog(6, Some(&["A", "A", "A", "B", "B", "B"]));
    let rows: [(&[ItemIdx], ItemIdx, ItemIdx); 6] = [
        (&[1, 2], 3, 1), // same
        (&[1, 4], 2, 3), // mix
        (&[4, 5], 6, 1), // diff
        (&[5], 6, 4),    // same
        (&[1, 2], 4, 5), // mix
        (&[3, 3], 2, 6), // diff
    ];
    SplitDataset {
        catalog: cat,
        users: rows
            .iter()
            .enumerate()
            .map(|(u, (train, valid, test))| UserSplit {
                user: u as u32,
                user_id: format!("u{u}"),
                train: train.to_vec(),
                valid: *valid,
                test: Some(*test),
            })
            .collect(),
        excluded_short: 0,
        dropped_test: 0,
    }
}

#[test]
fn multi_domain_fixture() {
    let split = domain_split();
    let opts = EvalOptions::default();
    let oracle = oracle_for(&split);
    let rep = multi_domain_eval(&oracle, &split, &opts, SEQ).unwrap();
    let users: Vec<usize> = rep.cells.iter().map(|c| c.users).collect();
    assert_eq!(users, vec![2, 2, 2]);
    let names: Vec<&str> = rep.cells.iter().map(|c| c.group.as_str()).collect();
    assert_eq!(names, vec!["mix", "diff", "same"]);
    let gain = improvement_table(&rep, &rep, "NDCG@10");
    assert!(gain.iter().all(|(_, g)| *g == Some(0.0)));

    let mut single = split.clone();
    single.catalog = catalog(6, Some(&["A"; 6]));
    let rep = multi_domain_eval(&oracle, &single, &opts, SEQ).unwrap();
    assert_eq!(rep.cell("same").unwrap().users, 6);
    assert!(rep.cell("mix").unwrap().metrics.is_empty());
    assert!(rep.cell("diff").unwrap().metrics.is_empty());

    let mut untagged = split;
    untagged.catalog = catalog(6, None);
    assert!(multi_domain_eval(&oracle, &untagged, &opts, SEQ).is_err());
}

#[test]
fn robustness_bookkeeping() {
    let split = random_split(200, 30, 8);
    let oracle = oracle_for(&split);
    let opts = EvalOptions::default();
    let seeds = [1, 2, 3, 4, 5];
    let t = robustness_eval(&oracle, &split, &[PerturbMode::Remove, PerturbMode::Replace], &[0.0, 0.3, 1.0], &seeds, &opts, SEQ).unwrap();
    assert_eq!(t.clean, 1.0);
    for r in &t.rows {
        if r.p == 0.0 {
            assert!(r.per_seed.iter().all(|&d| d == 0.0));
            assert_eq!(r.mean, 0.0);
        }
    }
    // removing everything leaves empty histories: all misses
    let full = t.rows.iter().find(|r| r.mode == PerturbMode::Remove && r.p == 1.0).unwrap();
    assert!(full.per_seed.iter().all(|&d| d == 100.0));
    // recompute one row directly
    let row = t.rows.iter().find(|r| r.mode == PerturbMode::Replace && r.p == 0.3).unwrap();
    let mut direct = Vec::new();
    for &seed in &seeds {
        let cases: Vec<Case> = split
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| Case {
                user: i,
                history: crate::data::perturb(&u.test_history(), PerturbMode::Replace, 0.3, 30, crate::rng::derive_seed(seed, &[i as u64]))
                    .unwrap()
                    .items,
                target: u.test.unwrap(),
            })
            .collect();
        let res = evaluate_cases(&oracle, &cases, &opts, SEQ).unwrap();
        let ndcg = res.iter().map(|r| if r.rank <= 10 { 1.0 / ((r.rank + 1) as f64).log2() } else { 0.0 }).sum::<f64>() / res.len() as f64;
        direct.push(100.0 * (1.0 - ndcg));
    }
    assert_eq!(row.per_seed, direct);
    let m = direct.iter().sum::<f64>() / 5.0;
    let se = (direct.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt() / 5f64.sqrt();
    assert!((row.mean - m).abs() < 1e-12 && (row.std_error - se).abs() < 1e-12);
    assert!(row.mean > 0.0);
}

/// Scores `next[last item]` highest.
struct Successor {
    n: usize,
    next: Vec<ItemIdx>,
}

impl Scorer for Successor {
    fn n_items(&self) -> usize {
        self.n
    }
    fn score_batch(&self, h: &[&[ItemIdx]]) -> Result<Vec<Vec<f64>>> {
        Ok(h.iter()
            .map(|h| {
                let mut r = vec![0.0; self.n + 1];
                r[0] = f64::NEG_INFINITY;
                r[self.next[*h.last().unwrap() as usize] as usize] = 1.0;
                r
            })
            .collect())
    }
}

#[test]
fn rollout_contract() {
    let cyc = Successor {
        n: 5,
        next: vec![0, 2, 3, 4, 5, 1],
    };
    assert_eq!(trajectory_rollout(&cyc, &[3], 5, false).unwrap(), vec![4, 5, 1, 2, 3]);
    let rnd = RandomScorer { n_items: 20, seed: 4 };
    let one = trajectory_rollout(&rnd, &[1, 2], 1, false).unwrap();
    assert_eq!(one, rank_items(0, &rnd.score(&[1, 2]).unwrap(), 1).items);
    assert_eq!(trajectory_rollout(&rnd, &[1, 2], 6, false).unwrap(), trajectory_rollout(&rnd, &[1, 2], 6, false).unwrap());
    let ex = trajectory_rollout(&rnd, &[1, 2], 6, true).unwrap();
    let mut seen = vec![1, 2];
    for i in ex {
        assert!(!seen.contains(&i));
        seen.push(i);
    }
    assert!(trajectory_rollout(&rnd, &[], 1, false).is_err());
}

#[test]
fn trajectory_report() {
    let cyc = Successor {
        n: 5,
        next: vec![0, 2, 3, 4, 5, 1],
    };
    let sequences = vec![vec![1, 2, 3, 4, 5, 1, 2], vec![2, 3, 4, 5, 1, 2, 3, 4], vec![1, 2, 3]];
    let rep = trajectory_eval(&cyc, &sequences, 4, false, SEQ).unwrap();
    assert_eq!((rep.users, rep.excluded), (2, 1));
    assert_eq!(rep.ratios, vec![0.0; 4]);
    assert_eq!(rep.tr, vec![1.0; 4]);

    let rnd = RandomScorer { n_items: 5, seed: 11 };
    let long: Vec<Vec<ItemIdx>> = (0..30).map(|u| (0..9).map(|j| ((u + j * 3) % 5 + 1) as ItemIdx).collect()).collect();
    let rep = trajectory_eval(&rnd, &long, 4, false, Parallelism::Parallel).unwrap();
    assert_eq!(rep.ratios[0], 0.0);
    for k in 1..=4 {
        let direct: f64 = rep.rollouts.iter().map(|r| tr_at_k(&r.truth, &r.predicted, k).unwrap()).sum::<f64>() / rep.users as f64;
        assert_eq!(rep.tr[k - 1], direct);
        assert!((rep.ratios[k - 1] - (rep.tr[0] - direct) / rep.tr[0]).abs() < 1e-15);
    }
    assert!(trajectory_eval(&rnd, &[vec![1, 2]], 4, false, SEQ).is_err());
}

#[test]
fn aggregate_is_mean_of_user_values() {
    let split = random_split(333, 40, 12);
    let rnd = RandomScorer { n_items: 40, seed: 2 };
    let opts = EvalOptions::default();
    let cases: Vec<Case> = split
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| Case {
            user: i,
            history: u.test_history(),
            target: u.test.unwrap(),
        })
        .collect();
    let res = evaluate_cases(&rnd, &cases, &opts, SEQ).unwrap();
    let rep = evaluate_leave_one_out(&rnd, &split, &opts, SEQ).unwrap();
    for cut in [5, 10, 50] {
        let lists: Vec<RankedList> = res.iter().map(|r| list(&r.top)).collect();
        let per_user: Vec<f64> = res.iter().zip(&cases).map(|(r, c)| ndcg_at_n(&list(&r.top), c.target, cut)).collect();
        let mean = per_user.iter().sum::<f64>() / per_user.len() as f64;
        assert!((rep.metric("all", &format!("NDCG@{cut}")).unwrap() - mean).abs() < 1e-12);
        assert_eq!(rep.metric("all", &format!("Coverage@{cut}")).unwrap(), coverage_at_n(&lists, cut, 40));
    }
}

proptest! {
    #[test]
    fn per_user_metric_order(scores in proptest::collection::vec(-3i32..3, 30), target in 1u32..30) {
        let mut s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        s[0] = f64::NEG_INFINITY;
        let l = rank_items(0, &s, 29);
        let mut prev = (0.0, 0.0);
        for n in [1, 5, 10, 29] {
            let (h, g) = (hr_at_n(&l, target, n), ndcg_at_n(&l, target, n));
            prop_assert!(h >= g && (0.0..=1.0).contains(&g));
            prop_assert!(h >= prev.0 && g >= prev.1);
            prev = (h, g);
        }
        prop_assert_eq!(l.items.iter().position(|&i| i == target).unwrap() + 1, rank_of(&s, target));
    }
}
