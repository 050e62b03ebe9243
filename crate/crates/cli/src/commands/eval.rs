use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warpmatch::eval::{alpha_sweep, label_matches, pck, pck_at_cutoff, pr_curve, summarize};
use warpmatch::matcher::{read_match_csv, threshold_at_precision, RankedBy};

use crate::config::PipelineConfig;
use crate::error::{staged, CliError, Staged};
use crate::output::{item_path, prepare_out_dir, write_atomic, write_json};
use crate::pipeline::GtFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    pub ranked_by: RankedBy,
    pub ap: f64,
    #[serde(rename = "pck@0.05")]
    pub pck_005: f64,
    #[serde(rename = "pck@0.10")]
    pub pck_010: f64,
    pub n_gt: usize,
    pub n_matches: usize,
    /// Ratio cutoff reaching the target precision, if any.
    pub cutoff: Option<f64>,
    pub pck_at_cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub precision: f64,
    pub records: Vec<EvalRecord>,
    pub mean_ap: f64,
    #[serde(rename = "mean_pck@0.05")]
    pub mean_pck_005: f64,
    #[serde(rename = "mean_pck@0.10")]
    pub mean_pck_010: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Ground truth for a single match file; otherwise `<stem>.gt.json`
    /// next to each CSV.
    pub gt: Option<PathBuf>,
    pub alpha_sweep: bool,
    pub require_precision: bool,
}

/// Expands directories into their `*.csv` files, sorted.
pub fn collect_match_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .stage("eval")?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn read_gt(path: &Path) -> Result<GtFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data("eval", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data("eval", format!("{}: {e}", path.display())))
}

/// Scores ranked match files against ground truth: AP, PCK, the cutoff at
/// the target precision and, optionally, a PCK-vs-α sweep.
pub fn cmd_eval(
    matches: &[PathBuf],
    opts: &EvalOptions,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<EvalReport, CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let files = collect_match_files(matches)?;
    if opts.gt.is_some() && files.len() != 1 {
        return Err(CliError::Usage(
            "--gt applies to exactly one match file".into(),
        ));
    }
    let sweep = alpha_sweep();
    let mut sweep_sums = vec![0.0; sweep.len()];
    let mut records = Vec::new();
    for f in &files {
        let stem = f
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        let gt_path = opts
            .gt
            .clone()
            .unwrap_or_else(|| f.with_file_name(format!("{stem}.gt.json")));
        let gt = read_gt(&gt_path)?;
        let file = std::fs::File::open(f)
            .map_err(|e| CliError::data("eval", format!("{}: {e}", f.display())))?;
        let (ranked, ranked_by) = read_match_csv(file)
            .stage("eval")
            .map_err(|e| e.context(f.display()))?;
        let (fa, fb) = (gt.frame_a, gt.frame_b);
        let summary = summarize(&ranked, &gt.gt, cfg.alpha, fa, fb);
        let curve = pr_curve(&ranked, &gt.gt, cfg.alpha, fa, fb);
        let mut pr = String::from("recall,precision\n");
        for (r, p) in &curve.points {
            pr.push_str(&format!("{r},{p}\n"));
        }
        write_atomic(&item_path(&out_dir.join("pr"), &stem, "csv"), pr.as_bytes())?;

        let labels = label_matches(&ranked, &gt.gt, cfg.alpha, fa, fb);
        let cutoff = match threshold_at_precision(&labels, cfg.precision) {
            Ok(c) => Some(c),
            Err(e) if opts.require_precision => return Err(staged("eval", e).context(&stem)),
            Err(e) => {
                log::warn!("{stem}: {e}");
                None
            }
        };
        if opts.alpha_sweep {
            for (s, a) in sweep_sums.iter_mut().zip(&sweep) {
                *s += pck(&ranked, &gt.gt, *a, fa, fb);
            }
        }
        let record = EvalRecord {
            name: stem.clone(),
            ranked_by,
            ap: summary.ap,
            pck_005: summary.pck_005,
            pck_010: summary.pck_010,
            n_gt: summary.n_gt,
            n_matches: summary.n_matches,
            cutoff,
            pck_at_cutoff: cutoff.map(|c| pck_at_cutoff(&ranked, c, &gt.gt, cfg.alpha, fa, fb)),
        };
        write_json(
            &item_path(&out_dir.join("summaries"), &stem, "json"),
            &summary,
        )?;
        records.push(record);
    }
    if opts.alpha_sweep {
        let n = records.len().max(1) as f64;
        let mut text = String::from("alpha,value\n");
        for (a, s) in sweep.iter().zip(&sweep_sums) {
            text.push_str(&format!("{a},{}\n", s / n));
        }
        write_atomic(&out_dir.join("pck_sweep.csv"), text.as_bytes())?;
    }
    let n = records.len().max(1) as f64;
    let report = EvalReport {
        alpha: cfg.alpha,
        precision: cfg.precision,
        mean_ap: records.iter().map(|r| r.ap).sum::<f64>() / n,
        mean_pck_005: records.iter().map(|r| r.pck_005).sum::<f64>() / n,
        mean_pck_010: records.iter().map(|r| r.pck_010).sum::<f64>() / n,
        records,
    };
    write_json(&out_dir.join("eval_summary.json"), &report)?;
    Ok(report)
}
