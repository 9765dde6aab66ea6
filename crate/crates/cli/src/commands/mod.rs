mod eval;
mod fit;
mod prepare;
mod report;
mod sweep;
mod train;

pub use eval::eval;
pub use fit::fit;
pub use prepare::prepare;
pub use report::report;
pub use sweep::sweep;
pub use train::train;

use crate::config::require_path;
use crate::{ConfigError, Context};
use anyhow::Result;
use lsrm_core::data::store::{read_dataset, DatasetManifest, PreparedDataset};

/// Loads and verifies the configured dataset directory.
fn load_dataset(ctx: &Context) -> Result<(PreparedDataset, DatasetManifest)> {
    let dir = ctx.config.dataset_dir(&ctx.out);
    require_path(&dir, "prepared dataset directory")?;
    Ok(read_dataset(&dir)?)
}

fn catalog_digest(m: &DatasetManifest) -> Result<String> {
    m.files
        .get("catalog.tsv")
        .cloned()
        .ok_or_else(|| ConfigError("dataset manifest lists no catalog.tsv".into()).into())
}
