use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use editrefiner_core::gt::{build_image_maps, GtBuildConfig, Normalization};
use editrefiner_core::manifest::load_annotation_manifest;
use editrefiner_core::metrics::FixationSet;
use editrefiner_core::raster::write_map_outputs;
use editrefiner_core::{Error, Exec};

use super::{ensure_dir, write_json};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct BuildGtArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Kernel sigma as a fraction of each disk radius.
    #[arg(long)]
    sigma_factor: Option<f64>,
    /// Skip peak normalization (summed kernels are clipped at 1 instead).
    #[arg(long)]
    no_normalize: bool,
}

pub fn run(args: BuildGtArgs, g: &Globals) -> CliResult<()> {
    let cfg = GtBuildConfig {
        kernel_sigma_factor: args
            .sigma_factor
            .or(g.file.build_gt.sigma_factor)
            .unwrap_or(GtBuildConfig::default().kernel_sigma_factor),
        normalization: if args.no_normalize {
            Normalization::None
        } else {
            Normalization::Peak
        },
    };
    cfg.validate()?;

    let manifest = match load_annotation_manifest(&args.manifest) {
        Err(Error::Validation(violations)) => {
            for v in &violations {
                eprintln!("{v}");
            }
            return Err(CliError::validation(format!(
                "{}: {} violation(s)",
                args.manifest.display(),
                violations.len()
            )));
        }
        other => other?,
    };
    ensure_dir(&args.out_dir)?;

    // Fixations keyed by output stem, the same stems eval-saliency pairs on.
    let mut fixations: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    for img in &manifest.images {
        let (w, h) = (img.image.width, img.image.height);
        let annotations: Vec<_> = manifest.annotations_for(&img.image.id).collect();
        for (kind, map) in build_image_maps(&annotations, w, h, &cfg, Exec::Sequential)? {
            let stem = format!("{}_{}", img.image.id, kind);
            write_map_outputs(
                &map,
                &args.out_dir.join(format!("{stem}.png")),
                &args.out_dir.join(format!("{stem}.json")),
            )?;
            let disks = annotations
                .iter()
                .filter(|a| a.region_kind == kind)
                .flat_map(|a| a.disks());
            fixations.insert(stem, FixationSet::from_disks(disks, w, h).points);
        }
        log::info!("built maps for {}", img.image.id);
    }
    write_json(&args.out_dir.join("fixations.json"), &fixations)?;
    log::info!(
        "wrote {} maps to {}",
        fixations.len(),
        args.out_dir.display()
    );
    Ok(())
}
