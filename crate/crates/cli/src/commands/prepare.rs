use crate::config::require_path;
use crate::manifest::RunManifest;
use crate::{ConfigError, Context};
use anyhow::{Context as _, Result};
use lsrm_core::data::ingest;
use lsrm_core::data::store::{prepare as run_prepare, write_dataset, PrepareOptions};
use lsrm_core::data::synthetic::generate;
use std::fs;

/// Builds `<out>/dataset` (or the configured dataset path). Output goes to
/// a `.partial` sibling first, so a failure leaves no half-written dataset.
pub fn prepare(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let interactions = match (&cfg.synthetic, &cfg.data.raw) {
        (Some(syn), _) => generate(syn)?.interactions,
        (None, Some(raw)) => {
            require_path(raw, "raw interaction file")?;
            let report = ingest(raw)?;
            if report.skipped > 0 {
                eprintln!("skipped {} malformed rows in {}", report.skipped, raw.display());
            }
            report.interactions
        }
        (None, None) => return Err(ConfigError("[data] raw (or a [synthetic] table) is required for prepare".into()).into()),
    };
    let opts = PrepareOptions {
        k_core: cfg.data.k_core,
        cold_start_fraction: cfg.data.cold_start_fraction,
        groups: cfg.data.groups,
        seed: cfg.seed,
    };
    let ds = run_prepare(&interactions, &opts)?;
    let dir = cfg.dataset_dir(&ctx.out);
    let partial = dir.with_extension("partial");
    if partial.exists() {
        fs::remove_dir_all(&partial).with_context(|| format!("removing {}", partial.display()))?;
    }
    let written = (|| -> Result<_> {
        let manifest = write_dataset(&partial, &ds)?;
        let mut run = RunManifest::new("prepare", cfg.digest(), Some(manifest.digest.clone()));
        run.artifacts = manifest.files.keys().map(Into::into).collect();
        run.artifacts.push("manifest.json".into());
        run.finish(&partial)?;
        Ok(manifest)
    })();
    let manifest = match written {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            return Err(e);
        }
    };
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("replacing {}", dir.display()))?;
    }
    fs::rename(&partial, &dir).with_context(|| format!("moving dataset into {}", dir.display()))?;
    let c = &ds.counts;
    println!(
        "dataset {}: {} users in split, {} items, {} cold-start users; digest {}",
        dir.display(),
        c.split_users,
        c.items,
        c.cold_start_users,
        manifest.digest
    );
    Ok(())
}
