use super::{rank_items, rank_of, EvalCell, EvalError, EvalReport, Result, Scorer};
use crate::data::{classify_domain_case, keep_last_k, perturb, DomainCase, ItemIdx, PerturbMode, PopularityIndex, SplitDataset, UserSequence};
use crate::exec::{map_ordered, Parallelism};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Cutoffs for HR, NDCG and Coverage.
    pub ns: Vec<usize>,
    /// Cutoff for the single-metric tables (robustness, domain gains).
    pub focus_n: usize,
    pub batch_size: usize,
    /// Drop items already in the history from the ranking.
    pub exclude_history: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ns: vec![5, 10, 50],
            focus_n: 10,
            batch_size: 256,
            exclude_history: false,
        }
    }
}

impl EvalOptions {
    fn depth(&self) -> usize {
        self.ns.iter().copied().chain([self.focus_n]).max().unwrap_or(1)
    }

    fn validate(&self) -> Result<()> {
        if self.ns.iter().chain([&self.focus_n]).any(|&n| n == 0) || self.batch_size == 0 {
            return Err(EvalError::InvalidArgument("cutoffs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub user: usize,
    pub history: Vec<ItemIdx>,
    pub target: ItemIdx,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    /// 1-based rank of the target; `usize::MAX` for an empty history.
    pub rank: usize,
    pub top: Vec<ItemIdx>,
}

fn ndcg_from_rank(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Scores every case and ranks the full catalog. Cases with an empty
/// history are misses.
pub fn evaluate_cases(scorer: &dyn Scorer, cases: &[Case], opts: &EvalOptions, mode: Parallelism) -> Result<Vec<CaseResult>> {
    opts.validate()?;
    let n = scorer.n_items();
    let depth = opts.depth();
    let chunks: Vec<&[Case]> = cases.chunks(opts.batch_size).collect();
    let parts = map_ordered(&chunks, mode, |_, chunk| -> Result<Vec<CaseResult>> {
        let live: Vec<&Case> = chunk.iter().filter(|c| !c.history.is_empty()).collect();
        let hist: Vec<&[ItemIdx]> = live.iter().map(|c| c.history.as_slice()).collect();
        let mut scored = if hist.is_empty() { Vec::new() } else { scorer.score_batch(&hist)? }.into_iter();
        let mut out = Vec::with_capacity(chunk.len());
        for c in chunk.iter() {
            if c.history.is_empty() {
                out.push(CaseResult { rank: usize::MAX, top: Vec::new() });
                continue;
            }
            let mut s = scored.next().expect("one score row per live case");
            if s.len() != n + 1 {
                return Err(EvalError::ScoreLength { found: s.len(), expected: n + 1 });
            }
            if opts.exclude_history {
                for &i in &c.history {
                    s[i as usize] = f64::NEG_INFINITY;
                }
            }
            out.push(CaseResult {
                rank: rank_of(&s, c.target),
                top: rank_items(c.user, &s, depth).items,
            });
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(cases.len());
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

/// Means of HR@N and NDCG@N (and Coverage@N when `coverage_of` is given)
/// accumulated in case order.
fn aggregate(results: &[&CaseResult], opts: &EvalOptions, coverage_of: Option<usize>) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    if results.is_empty() {
        return m;
    }
    let count = results.len() as f64;
    for &n in &opts.ns {
        let hr: f64 = results.iter().map(|r| if r.rank <= n { 1.0 } else { 0.0 }).sum();
        let ndcg: f64 = results.iter().map(|r| ndcg_from_rank(r.rank, n)).sum();
        m.insert(format!("HR@{n}"), hr / count);
        m.insert(format!("NDCG@{n}"), ndcg / count);
        if let Some(n_items) = coverage_of {
            let mut seen = vec![false; n_items + 1];
            for r in results {
                for &i in r.top.iter().take(n) {
                    seen[i as usize] = true;
                }
            }
            m.insert(format!("Coverage@{n}"), seen[1..].iter().filter(|&&s| s).count() as f64 / n_items as f64);
        }
    }
    m
}

fn cell(group: impl Into<String>, results: &[&CaseResult], opts: &EvalOptions, coverage_of: Option<usize>) -> EvalCell {
    EvalCell {
        group: group.into(),
        users: results.len(),
        metrics: aggregate(results, opts, coverage_of),
    }
}

fn test_cases(split: &SplitDataset) -> Vec<Case> {
    split
        .users
        .iter()
        .enumerate()
        .filter_map(|(i, u)| {
            u.test.map(|t| Case {
                user: i,
                history: u.test_history(),
                target: t,
            })
        })
        .collect()
}

/// Full-catalog ranking of every test user's held-out item given train and
/// validation items.
pub fn evaluate_leave_one_out(scorer: &dyn Scorer, split: &SplitDataset, opts: &EvalOptions, mode: Parallelism) -> Result<EvalReport> {
    let cases = test_cases(split);
    if cases.is_empty() {
        return Err(EvalError::NoUsers("split has no test users".into()));
    }
    let results = evaluate_cases(scorer, &cases, opts, mode)?;
    let refs: Vec<&CaseResult> = results.iter().collect();
    Ok(EvalReport {
        task: "leave_one_out".into(),
        cells: vec![cell("all", &refs, opts, Some(scorer.n_items()))],
    })
}

/// Test users partitioned by the popularity group of their target item.
pub fn long_tail_eval(
    scorer: &dyn Scorer,
    split: &SplitDataset,
    popularity: &PopularityIndex,
    opts: &EvalOptions,
    mode: Parallelism,
) -> Result<EvalReport> {
    let cases = test_cases(split);
    if cases.is_empty() {
        return Err(EvalError::NoUsers("split has no test users".into()));
    }
    let results = evaluate_cases(scorer, &cases, opts, mode)?;
    let cells = (1..=popularity.groups)
        .map(|g| {
            let members: Vec<&CaseResult> = cases
                .iter()
                .zip(&results)
                .filter(|(c, _)| popularity.group_of(c.target) == g)
                .map(|(_, r)| r)
                .collect();
            cell(format!("G{g}"), &members, opts, None)
        })
        .collect();
    Ok(EvalReport {
        task: "long_tail".into(),
        cells,
    })
}

/// Held-out users scored from only their last `k` history items, for each
/// `k` in `lengths`. The last item of each sequence is the target.
pub fn cold_start_eval(
    scorer: &dyn Scorer,
    users: &[UserSequence],
    lengths: &[usize],
    opts: &EvalOptions,
    mode: Parallelism,
) -> Result<EvalReport> {
    let eligible: Vec<(usize, &UserSequence)> = users.iter().enumerate().filter(|(_, u)| u.items.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(EvalError::NoUsers("no held-out user has two or more items".into()));
    }
    if lengths.contains(&0) {
        return Err(EvalError::InvalidArgument("history lengths must be positive".into()));
    }
    let mut cells = Vec::new();
    for &k in lengths {
        let cases: Vec<Case> = eligible
            .iter()
            .map(|(i, u)| {
                let (last, hist) = u.items.split_last().expect("non-empty");
                Case {
                    user: *i,
                    history: keep_last_k(hist, k),
                    target: *last,
                }
            })
            .collect();
        let results = evaluate_cases(scorer, &cases, opts, mode)?;
        let refs: Vec<&CaseResult> = results.iter().collect();
        cells.push(cell(format!("len={k}"), &refs, opts, Some(scorer.n_items())));
    }
    Ok(EvalReport {
        task: "cold_start".into(),
        cells,
    })
}

/// Test users classified by how the target's domain relates to the
/// history's domains. Cells: mix, diff, same.
pub fn multi_domain_eval(scorer: &dyn Scorer, split: &SplitDataset, opts: &EvalOptions, mode: Parallelism) -> Result<EvalReport> {
    let cases = test_cases(split);
    if cases.is_empty() {
        return Err(EvalError::NoUsers("split has no test users".into()));
    }
    let cat = &split.catalog;
    let labels = cases
        .iter()
        .map(|c| {
            let hist: Vec<Option<&str>> = c.history.iter().map(|&i| cat.domain_of(i)).collect();
            classify_domain_case(&hist, cat.domain_of(c.target))
        })
        .collect::<Result<Vec<DomainCase>, _>>()?;
    let results = evaluate_cases(scorer, &cases, opts, mode)?;
    let cells = [DomainCase::Mix, DomainCase::Diff, DomainCase::Same]
        .into_iter()
        .map(|d| {
            let members: Vec<&CaseResult> = labels.iter().zip(&results).filter(|(l, _)| **l == d).map(|(_, r)| r).collect();
            cell(d.name(), &members, opts, None)
        })
        .collect();
    Ok(EvalReport {
        task: "multi_domain".into(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub mode: PerturbMode,
    pub p: f64,
    /// `100·(clean − perturbed)/clean` of NDCG, one per seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean over seeds (0 for one seed).
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub metric: String,
    pub clean: f64,
    pub users: usize,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("mode\tp\tdegradation_pct\tstd_error\tseeds\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.mode.name(), r.p, r.mean, r.std_error, r.per_seed.len()));
        }
        out
    }
}

fn mean_ndcg(results: &[CaseResult], n: usize) -> f64 {
    results.iter().map(|r| ndcg_from_rank(r.rank, n)).sum::<f64>() / results.len() as f64
}

/// Percentage NDCG degradation when test histories are perturbed, per
/// `(mode, p)` and averaged over `seeds`.
pub fn robustness_eval(
    scorer: &dyn Scorer,
    split: &SplitDataset,
    modes: &[PerturbMode],
    probabilities: &[f64],
    seeds: &[u64],
    opts: &EvalOptions,
    mode: Parallelism,
) -> Result<RobustnessTable> {
    if seeds.is_empty() {
        return Err(EvalError::InvalidArgument("need at least one seed".into()));
    }
    let cases = test_cases(split);
    if cases.is_empty() {
        return Err(EvalError::NoUsers("split has no test users".into()));
    }
    let n = opts.focus_n;
    let clean = mean_ndcg(&evaluate_cases(scorer, &cases, opts, mode)?, n);
    if clean == 0.0 {
        return Err(EvalError::InvalidArgument("clean NDCG is zero; degradation is undefined".into()));
    }
    let n_items = split.catalog.len();
    let mut rows = Vec::new();
    for &m in modes {
        for &p in probabilities {
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let perturbed = cases
                    .iter()
                    .map(|c| {
                        let h = perturb(&c.history, m, p, n_items, derive_seed(seed, &[c.user as u64]))?;
                        Ok(Case {
                            history: h.items,
                            ..c.clone()
                        })
                    })
                    .collect::<Result<Vec<Case>>>()?;
                let v = mean_ndcg(&evaluate_cases(scorer, &perturbed, opts, mode)?, n);
                per_seed.push(100.0 * (clean - v) / clean);
            }
            let k = per_seed.len() as f64;
            let mean = per_seed.iter().sum::<f64>() / k;
            let std_error = if per_seed.len() > 1 {
                (per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt()
            } else {
                0.0
            };
            rows.push(RobustnessRow {
                mode: m,
                p,
                per_seed,
                mean,
                std_error,
            });
        }
    }
    Ok(RobustnessTable {
        metric: format!("NDCG@{n}"),
        clean,
        users: cases.len(),
        rows,
    })
}
