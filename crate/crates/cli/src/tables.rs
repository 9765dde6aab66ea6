//! Tab-delimited tables.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const RESULTS_HEADER: &str = "cell\tgroup\tn_layer\td_model\tn_head\tratio\tfraction\tseed\tn\td\tepochs\tloss\tsingle_epoch_loss\twall_seconds\tstatus";
pub const REPETITION_HEADER: &str = "n_layer\td_model\tseed\tepoch\tvalid_loss\tknee\toverfit";
pub const POINTS_HEADER: &str = "n\tloss\tpredicted\tresidual";
pub const EXTRAPOLATION_HEADER: &str = "n\tactual\tpredicted\trel_error\twithin_bound";
pub const SCALING_CURVE_HEADER: &str = "kind\tn\tloss";
pub const DATA_SCALING_HEADER: &str = "fraction\td\tn\tloss\talpha\te_n\tn0";
pub const SHAPE_SWEEP_HEADER: &str = "n_layer\td_model\tratio\tn\tseed\tloss\tincrease_pct";
pub const TASKS_HEADER: &str = "task\tcell\tmetric\tvalue\tusers\tseed";

/// One sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: String,
    /// `scale` or `shape`.
    pub group: String,
    pub n_layer: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub ratio: f64,
    pub fraction: f64,
    pub seed: u64,
    pub n: u64,
    pub d: u64,
    pub epochs: usize,
    pub loss: f64,
    pub single_epoch_loss: f64,
    pub wall_seconds: f64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.cell,
            self.group,
            self.n_layer,
            self.d_model,
            self.n_head,
            self.ratio,
            self.fraction,
            self.seed,
            self.n,
            self.d,
            self.epochs,
            self.loss,
            self.single_epoch_loss,
            self.wall_seconds,
            self.status.replace(['\t', '\n'], " ")
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 15 {
            bail!("expected 15 columns, found {}", f.len());
        }
        fn num<T: std::str::FromStr>(s: &str, col: &str) -> Result<T> {
            s.parse().map_err(|_| anyhow!("column {col}: cannot parse {s:?}"))
        }
        Ok(Self {
            cell: f[0].to_string(),
            group: f[1].to_string(),
            n_layer: num(f[2], "n_layer")?,
            d_model: num(f[3], "d_model")?,
            n_head: num(f[4], "n_head")?,
            ratio: num(f[5], "ratio")?,
            fraction: num(f[6], "fraction")?,
            seed: num(f[7], "seed")?,
            n: num(f[8], "n")?,
            d: num(f[9], "d")?,
            epochs: num(f[10], "epochs")?,
            loss: num(f[11], "loss")?,
            single_epoch_loss: num(f[12], "single_epoch_loss")?,
            wall_seconds: num(f[13], "wall_seconds")?,
            status: f[14].to_string(),
        })
    }
}

pub fn render(header: &str, lines: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        _ => bail!("{}: header does not match `{}`", path.display(), RESULTS_HEADER.replace('\t', " ")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| ResultRow::parse(l).with_context(|| format!("{} line {}", path.display(), i + 2)))
        .collect()
}
