use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use editrefiner_core::metrics::{score_saliency, FixationSet};
use editrefiner_core::raster::read_map;
use serde::Serialize;

use super::{read_text, write_csv};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct EvalSaliencyArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// JSON object of map stem to `[x, y]` points. Defaults to `<gt-dir>/fixations.json`.
    #[arg(long)]
    fixations: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Row {
    id: String,
    cc: Option<f64>,
    sim: Option<f64>,
    kld: Option<f64>,
    nss: Option<f64>,
    auc_judd: Option<f64>,
    error: Option<String>,
}

const HEADER: [&str; 7] = ["id", "cc", "sim", "kld", "nss", "auc_judd", "error"];

/// Map files in `dir` by stem. A `.json` sidecar wins over a raster of the same stem.
fn list_maps(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(CliError::runtime)?.path();
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let stem = stem.to_string_lossy().into_owned();
        if stem == "fixations" {
            continue;
        }
        match ext.to_string_lossy().as_ref() {
            "json" => {
                out.insert(stem, path);
            }
            "png" => {
                out.entry(stem).or_insert(path);
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn run(args: EvalSaliencyArgs, _g: &Globals) -> CliResult<()> {
    let fix_path = args
        .fixations
        .clone()
        .unwrap_or_else(|| args.gt_dir.join("fixations.json"));
    let fixations: BTreeMap<String, Vec<(u32, u32)>> = serde_json::from_str(&read_text(&fix_path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", fix_path.display())))?;
    let gts = list_maps(&args.gt_dir)?;
    let preds = list_maps(&args.pred_dir)?;

    let mut rows = Vec::new();
    for (id, gt_path) in &gts {
        let result = (|| -> Result<_, String> {
            let pred_path = preds.get(id).ok_or("no prediction")?;
            let pred = read_map(pred_path).map_err(|e| e.to_string())?;
            let gt = read_map(gt_path).map_err(|e| e.to_string())?;
            let points = fixations.get(id).ok_or("no fixations")?;
            score_saliency(&pred, &gt, &FixationSet::new(points.clone())).map_err(|e| e.to_string())
        })();
        rows.push(match result {
            Ok(s) => Row {
                id: id.clone(),
                cc: Some(s.cc),
                sim: Some(s.sim),
                kld: Some(s.kld),
                nss: Some(s.nss),
                auc_judd: Some(s.auc_judd),
                error: None,
            },
            Err(e) => {
                log::warn!("{id}: {e}");
                Row {
                    id: id.clone(),
                    cc: None,
                    sim: None,
                    kld: None,
                    nss: None,
                    auc_judd: None,
                    error: Some(e),
                }
            }
        });
    }
    for id in preds.keys().filter(|k| !gts.contains_key(*k)) {
        log::warn!("prediction {id} has no ground truth, skipped");
    }
    write_csv(&args.out, &HEADER, &rows)?;
    log::info!("scored {} maps", rows.len());
    Ok(())
}
