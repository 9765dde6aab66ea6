//! On-disk dataset directories.
//!
//! A prepared dataset is a directory holding four tab-delimited text files
//! and a JSON manifest:
//!
//! * `catalog.tsv`: `index  item_id  domain` (domain `-` when untagged)
//! * `split.tsv`: `user_id  train | valid | test`, items space-separated,
//!   test `-` when it was dropped
//! * `cold_start.tsv`: `user_id  items` for held-out users
//! * `popularity.tsv`: `index  count  group`
//! * `manifest.json`: preparation parameters, counts and file digests

use super::{
    build_sequences, holdout_cold_start, k_core_filter, leave_one_out_split, popularity_groups,
    Catalog, DataError, ItemIdx, PopularityIndex, RawInteraction, Result, SplitDataset,
    UserSequence, UserSplit,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

const FILES: [&str; 4] = ["catalog.tsv", "split.tsv", "cold_start.tsv", "popularity.tsv"];

/// Parameters of the preparation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    /// k-core threshold; `0` or `1` disables filtering.
    pub k_core: usize,
    /// Fraction of users withheld for the cold-start task; `0` disables it.
    pub cold_start_fraction: f64,
    pub groups: usize,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            k_core: 0,
            cold_start_fraction: 0.2,
            groups: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareCounts {
    pub raw_interactions: usize,
    pub filtered_interactions: usize,
    pub users: usize,
    pub items: usize,
    pub split_users: usize,
    pub excluded_short: usize,
    pub dropped_test: usize,
    pub cold_start_users: usize,
    /// Held-out interactions removed because the item never occurs in a
    /// training user's sequence.
    pub cold_start_dropped_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub options: PrepareOptions,
    pub counts: PrepareCounts,
    /// sha256 of each data file.
    pub files: BTreeMap<String, String>,
    /// sha256 over the file digests in fixed order.
    pub digest: String,
}

/// Everything the trainer and evaluators need.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub split: SplitDataset,
    pub cold_start: Vec<UserSequence>,
    pub popularity: PopularityIndex,
    pub options: PrepareOptions,
    pub counts: PrepareCounts,
}

/// Runs k-core → sequences → cold-start holdout → leave-one-out → groups.
pub fn prepare(interactions: &[RawInteraction], options: &PrepareOptions) -> Result<PreparedDataset> {
    if interactions.is_empty() {
        return Err(DataError::InvalidArgument("no interactions".into()));
    }
    let filtered = if options.k_core > 1 {
        k_core_filter(interactions, options.k_core)?
    } else {
        interactions.to_vec()
    };
    if filtered.is_empty() {
        return Err(DataError::InvalidArgument(format!(
            "{}-core filtering removed every interaction",
            options.k_core
        )));
    }
    let (sequences, catalog) = build_sequences(&filtered);
    let (train_users, mut held) = if options.cold_start_fraction > 0.0 {
        holdout_cold_start(&sequences, options.cold_start_fraction, options.seed)?
    } else {
        (sequences.clone(), Vec::new())
    };
    let known: HashSet<ItemIdx> = train_users.iter().flat_map(|s| s.items.iter().copied()).collect();
    let mut cold_start_dropped_items = 0;
    for s in &mut held {
        let keep: Vec<bool> = s.items.iter().map(|i| known.contains(i)).collect();
        cold_start_dropped_items += keep.iter().filter(|k| !**k).count();
        let mut k = keep.iter();
        s.items.retain(|_| *k.next().unwrap());
        if let Some(d) = &mut s.domains {
            let mut k = keep.iter();
            d.retain(|_| *k.next().unwrap());
        }
    }
    let split = leave_one_out_split(&train_users, &catalog);
    let popularity = popularity_groups(&split, options.groups)?;
    let counts = PrepareCounts {
        raw_interactions: interactions.len(),
        filtered_interactions: filtered.len(),
        users: sequences.len(),
        items: catalog.len(),
        split_users: split.users.len(),
        excluded_short: split.excluded_short,
        dropped_test: split.dropped_test,
        cold_start_users: held.len(),
        cold_start_dropped_items,
    };
    Ok(PreparedDataset {
        split,
        cold_start: held,
        popularity,
        options: options.clone(),
        counts,
    })
}

fn join(items: &[ItemIdx]) -> String {
    let mut s = String::new();
    for (i, v) in items.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

fn render(ds: &PreparedDataset) -> [String; 4] {
    let c = &ds.split.catalog;
    let mut catalog = String::from("index\titem_id\tdomain\n");
    for i in c.indices() {
        writeln!(catalog, "{i}\t{}\t{}", c.id_of(i).unwrap(), c.domain_of(i).unwrap_or("-")).unwrap();
    }
    let mut split = String::from("user_id\ttrain | valid | test\n");
    for u in &ds.split.users {
        let test = u.test.map_or("-".to_string(), |t| t.to_string());
        writeln!(split, "{}\t{} | {} | {test}", u.user_id, join(&u.train), u.valid).unwrap();
    }
    let mut cold = String::from("user_id\titems\n");
    for s in &ds.cold_start {
        writeln!(cold, "{}\t{}", s.user_id, join(&s.items)).unwrap();
    }
    let mut pop = String::from("index\tcount\tgroup\n");
    for i in c.indices() {
        let i = i as usize;
        writeln!(pop, "{i}\t{}\t{}", ds.popularity.counts[i], ds.popularity.group[i]).unwrap();
    }
    [catalog, split, cold, pop]
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_for(ds: &PreparedDataset, contents: &[String; 4]) -> DatasetManifest {
    let files: BTreeMap<String, String> = FILES
        .iter()
        .zip(contents)
        .map(|(n, c)| (n.to_string(), sha256_hex(c.as_bytes())))
        .collect();
    let mut all = Sha256::new();
    for n in FILES {
        all.update(files[n].as_bytes());
    }
    DatasetManifest {
        format_version: FORMAT_VERSION,
        options: ds.options.clone(),
        counts: ds.counts.clone(),
        files,
        digest: hex::encode(all.finalize()),
    }
}

/// Digest identifying the dataset contents.
pub fn dataset_digest(ds: &PreparedDataset) -> String {
    manifest_for(ds, &render(ds)).digest
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `ds` into `dir` (created if needed) and returns its manifest.
pub fn write_dataset(dir: &Path, ds: &PreparedDataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let contents = render(ds);
    for (name, body) in FILES.iter().zip(&contents) {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    let manifest = manifest_for(ds, &contents);
    let p = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&p, json + "\n").map_err(io_err(&p))?;
    Ok(manifest)
}

fn bad(file: &str, line: usize, reason: impl Into<String>) -> DataError {
    DataError::BadDatasetFile {
        file: file.to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_items(file: &str, line: usize, s: &str, n: usize) -> Result<Vec<ItemIdx>> {
    s.split_whitespace()
        .map(|t| match t.parse::<ItemIdx>() {
            Ok(v) if v >= 1 && v as usize <= n => Ok(v),
            _ => Err(bad(file, line, format!("bad item index {t:?}"))),
        })
        .collect()
}

fn lines(body: &str) -> impl Iterator<Item = (usize, &str)> {
    body.lines().enumerate().skip(1).map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.is_empty())
}

/// Reads a dataset directory, verifying every file digest.
pub fn read_dataset(dir: &Path) -> Result<(PreparedDataset, DatasetManifest)> {
    let mp = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| bad("manifest.json", e.line(), e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(
            "manifest.json",
            1,
            format!("format version {} (expected {FORMAT_VERSION})", manifest.format_version),
        ));
    }
    let mut bodies = Vec::new();
    for name in FILES {
        let p = dir.join(name);
        let body = fs::read_to_string(&p).map_err(io_err(&p))?;
        let want = manifest.files.get(name).map(String::as_str).unwrap_or("");
        if sha256_hex(body.as_bytes()) != want {
            return Err(bad(name, 0, "digest does not match manifest"));
        }
        bodies.push(body);
    }

    let mut catalog = Catalog::new();
    for (ln, l) in lines(&bodies[0]) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 3 {
            return Err(bad("catalog.tsv", ln, "expected 3 columns"));
        }
        let domain = (f[2] != "-").then_some(f[2]);
        let idx = catalog.intern(f[1], domain);
        if f[0].parse::<ItemIdx>().ok() != Some(idx) {
            return Err(bad("catalog.tsv", ln, "indices must be 1..n in order"));
        }
    }
    let n = catalog.len();

    let mut users = Vec::new();
    for (ln, l) in lines(&bodies[1]) {
        let (uid, rest) = l.split_once('\t').ok_or_else(|| bad("split.tsv", ln, "missing tab"))?;
        let parts: Vec<&str> = rest.split(" | ").collect();
        if parts.len() != 3 {
            return Err(bad("split.tsv", ln, "expected train | valid | test"));
        }
        let valid = parse_items("split.tsv", ln, parts[1], n)?;
        if valid.len() != 1 {
            return Err(bad("split.tsv", ln, "expected one validation item"));
        }
        let test = if parts[2] == "-" {
            None
        } else {
            Some(parse_items("split.tsv", ln, parts[2], n)?.first().copied().ok_or_else(|| bad("split.tsv", ln, "empty test"))?)
        };
        users.push(UserSplit {
            user: users.len() as u32,
            user_id: uid.to_string(),
            train: parse_items("split.tsv", ln, parts[0], n)?,
            valid: valid[0],
            test,
        });
    }

    let mut cold_start = Vec::new();
    for (ln, l) in lines(&bodies[2]) {
        let (uid, rest) = l.split_once('\t').ok_or_else(|| bad("cold_start.tsv", ln, "missing tab"))?;
        let items = parse_items("cold_start.tsv", ln, rest, n)?;
        let domains = catalog.has_domains().then(|| {
            items.iter().map(|&i| catalog.domain_of(i).unwrap().to_string()).collect()
        });
        cold_start.push(UserSequence {
            user: cold_start.len() as u32,
            user_id: uid.to_string(),
            items,
            domains,
        });
    }

    let mut counts = vec![0u64; n + 1];
    let mut group = vec![0usize; n + 1];
    for (ln, l) in lines(&bodies[3]) {
        let f: Vec<usize> = l
            .split('\t')
            .map(|t| t.parse().map_err(|_| bad("popularity.tsv", ln, "non-numeric field")))
            .collect::<Result<_>>()?;
        if f.len() != 3 || f[0] == 0 || f[0] > n {
            return Err(bad("popularity.tsv", ln, "bad row"));
        }
        counts[f[0]] = f[1] as u64;
        group[f[0]] = f[2];
    }

    let split = SplitDataset {
        catalog,
        users,
        excluded_short: manifest.counts.excluded_short,
        dropped_test: manifest.counts.dropped_test,
    };
    let ds = PreparedDataset {
        split,
        cold_start,
        popularity: PopularityIndex {
            counts,
            group,
            groups: manifest.options.groups,
        },
        options: manifest.options.clone(),
        counts: manifest.counts.clone(),
    };
    Ok((ds, manifest))
}
