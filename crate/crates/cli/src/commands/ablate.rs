//! `spinesynth ablate`: sweep sampler parameters (steps, eta, guidance w),
//! running one full translate + evaluate per grid cell.

use super::{ensure_dir, evaluate, translate};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write;

pub fn run(cfg: &PipelineConfig) -> CliResult<()> {
    let a = &cfg.ablate;
    if a.steps.is_empty() || a.eta.is_empty() || a.w.is_empty() {
        return Err(CliError::validation("ablate grid has an empty axis"));
    }
    ensure_dir(&a.out_dir)?;

    let mut rows = Vec::new();
    for &steps in &a.steps {
        for &eta in &a.eta {
            for &w in &a.w {
                let cell = format!("t{steps}_eta{eta}_w{w}");
                let cell_dir = a.out_dir.join(&cell);
                ensure_dir(&cell_dir)?;

                let mut section = cfg.translate.clone();
                section.steps = Some(steps);
                section.eta = eta;
                section.guidance_w = w;
                let synth_path = cell_dir.join("synth_ct.nii.gz");
                translate::execute(cfg, &section, &synth_path)?;

                let methods = BTreeMap::from([(cell.clone(), synth_path)]);
                let report = evaluate::execute(cfg, &methods, &cell_dir)?;
                let agg = report.aggregate_json();
                let m = &agg["methods"][&cell];
                rows.push(json!({
                    "cell": cell,
                    "steps": steps,
                    "eta": eta,
                    "w": w,
                    "l1_mean": m["l1_mean"],
                    "mse_mean": m["mse_mean"],
                    "psnr_mean": m["psnr_mean"],
                    "ssim_mean": m["ssim_mean"],
                    "vifp_mean": m["vifp_mean"],
                    "dice_all_per_vertebra": m["dice_all_per_vertebra"],
                    "dice_all_per_volume": m["dice_all_per_volume"],
                    "dice_posterior_per_vertebra": m["dice_posterior_per_vertebra"],
                    "dice_posterior_per_volume": m["dice_posterior_per_volume"],
                }));
                println!(
                    "ablate {cell}: psnr {} dice {}",
                    m["psnr_mean"], m["dice_all_per_vertebra"]
                );
            }
        }
    }

    let sweep = json!({ "cells": rows });
    let json_text = serde_json::to_string_pretty(&sweep).unwrap() + "\n";
    write_atomic(&a.out_dir.join("sweep.json"), &json_text)?;

    let mut csv = String::from(
        "cell,steps,eta,w,l1_mean,mse_mean,psnr_mean,ssim_mean,vifp_mean,dice_all_per_vertebra,dice_all_per_volume\n",
    );
    for row in sweep["cells"].as_array().unwrap() {
        let f = |key: &str| -> String {
            match &row[key] {
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::String(s) => s.clone(),
                _ => String::new(),
            }
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row["cell"].as_str().unwrap(),
            f("steps"),
            f("eta"),
            f("w"),
            f("l1_mean"),
            f("mse_mean"),
            f("psnr_mean"),
            f("ssim_mean"),
            f("vifp_mean"),
            f("dice_all_per_vertebra"),
            f("dice_all_per_volume"),
        ));
    }
    write_atomic(&a.out_dir.join("sweep.csv"), &csv)?;
    println!("ablate: {} cells -> {}", rows_len(&sweep), a.out_dir.display());
    Ok(())
}

fn rows_len(sweep: &serde_json::Value) -> usize {
    sweep["cells"].as_array().map(|a| a.len()).unwrap_or(0)
}

fn write_atomic(path: &std::path::Path, text: &str) -> CliResult<()> {
    let parent = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent)
        .map_err(|e| CliError::runtime(format!("{path:?}: {e}")))?;
    tmp.write_all(text.as_bytes())
        .map_err(|e| CliError::runtime(format!("{path:?}: {e}")))?;
    tmp.persist(path)
        .map_err(|e| CliError::runtime(format!("{path:?}: {e}")))?;
    Ok(())
}
