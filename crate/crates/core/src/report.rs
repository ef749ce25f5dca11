//! Evaluation report assembly and serialization: per-item CSV tables plus a
//! JSON aggregate. Non-finite values (the +inf PSNR sentinel) serialize as
//! the strings "inf"/"-inf"/"nan" in both formats.

use crate::error::{Error, Result};
use serde_json::{json, Value};
use std::io::Write;
use std::path::Path;

/// One image-quality measurement (one 256x256 crop of one slice).
#[derive(Debug, Clone)]
pub struct ImageRow {
    pub method: String,
    pub volume_id: String,
    pub crop_id: String,
    pub l1: f64,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub vifp: f64,
}

/// One Dice measurement (one vertebra of one volume, in one subset).
#[derive(Debug, Clone)]
pub struct DiceReportRow {
    pub method: String,
    pub volume_id: String,
    pub vertebra_id: u16,
    pub subset: String,
    pub dice: f64,
}

/// One paired t-test between two methods on one metric.
#[derive(Debug, Clone)]
pub struct TTestRow {
    pub pair: String,
    pub metric: String,
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Full evaluation output.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub image_rows: Vec<ImageRow>,
    pub dice_rows: Vec<DiceReportRow>,
    pub ttest_rows: Vec<TTestRow>,
}

fn fmt_f64(v: f64) -> String {
    // Rust Display prints "inf"/"-inf"/"NaN"; normalize NaN casing.
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(fmt_f64(v))
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub const IMAGE_CSV_HEADER: &str = "method,volume_id,crop_id,l1,mse,psnr_db,ssim,vifp";
pub const DICE_CSV_HEADER: &str = "method,volume_id,vertebra_id,subset,dice";
pub const TTEST_CSV_HEADER: &str = "pair,metric,t,p,n";

impl MetricsReport {
    pub fn image_csv(&self) -> String {
        let mut out = String::from(IMAGE_CSV_HEADER);
        out.push('\n');
        for r in &self.image_rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method,
                r.volume_id,
                r.crop_id,
                fmt_f64(r.l1),
                fmt_f64(r.mse),
                fmt_f64(r.psnr_db),
                fmt_f64(r.ssim),
                fmt_f64(r.vifp)
            ));
        }
        out
    }

    pub fn dice_csv(&self) -> String {
        let mut out = String::from(DICE_CSV_HEADER);
        out.push('\n');
        for r in &self.dice_rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                r.volume_id,
                r.vertebra_id,
                r.subset,
                fmt_f64(r.dice)
            ));
        }
        out
    }

    pub fn ttest_csv(&self) -> String {
        let mut out = String::from(TTEST_CSV_HEADER);
        out.push('\n');
        for r in &self.ttest_rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.pair,
                r.metric,
                fmt_f64(r.t),
                fmt_f64(r.p),
                r.n
            ));
        }
        out
    }

    fn methods(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.image_rows {
            if !names.contains(&r.method) {
                names.push(r.method.clone());
            }
        }
        for r in &self.dice_rows {
            if !names.contains(&r.method) {
                names.push(r.method.clone());
            }
        }
        names
    }

    /// JSON aggregate: per-method means over all rows, the t-test table and
    /// the worst (highest) p-value.
    pub fn aggregate_json(&self) -> Value {
        let mut methods = serde_json::Map::new();
        for name in self.methods() {
            let imgs: Vec<&ImageRow> =
                self.image_rows.iter().filter(|r| r.method == name).collect();
            let mean = |f: &dyn Fn(&ImageRow) -> f64| -> Value {
                if imgs.is_empty() {
                    Value::Null
                } else {
                    json_f64(imgs.iter().map(|r| f(r)).sum::<f64>() / imgs.len() as f64)
                }
            };
            let mut entry = serde_json::Map::new();
            entry.insert("n_crops".into(), json!(imgs.len()));
            entry.insert("l1_mean".into(), mean(&|r| r.l1));
            entry.insert("mse_mean".into(), mean(&|r| r.mse));
            entry.insert("psnr_mean".into(), mean(&|r| r.psnr_db));
            entry.insert("ssim_mean".into(), mean(&|r| r.ssim));
            entry.insert("vifp_mean".into(), mean(&|r| r.vifp));

            for subset in ["all", "posterior"] {
                let rows: Vec<&DiceReportRow> = self
                    .dice_rows
                    .iter()
                    .filter(|r| r.method == name && r.subset == subset)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                // Per vertebra: pooled mean over every (volume, vertebra).
                let pooled = rows.iter().map(|r| r.dice).sum::<f64>() / rows.len() as f64;
                // Per volume: mean within each volume, then across volumes.
                let mut volumes: Vec<String> = Vec::new();
                for r in &rows {
                    if !volumes.contains(&r.volume_id) {
                        volumes.push(r.volume_id.clone());
                    }
                }
                let per_volume = volumes
                    .iter()
                    .map(|v| {
                        let vr: Vec<f64> = rows
                            .iter()
                            .filter(|r| &r.volume_id == v)
                            .map(|r| r.dice)
                            .collect();
                        vr.iter().sum::<f64>() / vr.len() as f64
                    })
                    .sum::<f64>()
                    / volumes.len() as f64;
                entry.insert(
                    format!("dice_{subset}_per_vertebra"),
                    json_f64(pooled),
                );
                entry.insert(format!("dice_{subset}_per_volume"), json_f64(per_volume));
            }
            methods.insert(name, Value::Object(entry));
        }

        let ttests: Vec<Value> = self
            .ttest_rows
            .iter()
            .map(|r| {
                json!({
                    "pair": r.pair,
                    "metric": r.metric,
                    "t": json_f64(r.t),
                    "p": json_f64(r.p),
                    "n": r.n,
                })
            })
            .collect();
        let worst = self
            .ttest_rows
            .iter()
            .map(|r| r.p)
            .fold(None, |acc: Option<f64>, p| {
                Some(acc.map_or(p, |a| a.max(p)))
            });

        json!({
            "methods": Value::Object(methods),
            "ttests": ttests,
            "worst_p": worst.map(json_f64).unwrap_or(Value::Null),
        })
    }

    /// Write image/dice/ttest CSVs plus the JSON aggregate into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("image_metrics.csv"), &self.image_csv())?;
        write_atomic(&dir.join("dice.csv"), &self.dice_csv())?;
        write_atomic(&dir.join("ttests.csv"), &self.ttest_csv())?;
        let json = serde_json::to_string_pretty(&self.aggregate_json()).expect("valid json tree");
        write_atomic(&dir.join("summary.json"), &(json + "\n"))?;
        Ok(())
    }
}
