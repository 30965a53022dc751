use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sacc_core::aug::sample_views;
use sacc_core::checkpoint::Checkpoint;
use sacc_core::data::{load_dataset, read_image, Dataset};
use sacc_core::metrics::EvalReport;
use sacc_core::rng::derive_seed;
use sacc_core::train::{
    ablate, evaluate_checkpoint, train_dataset, AblationMode, AblationRow, EmbeddingDump, LogRecord, TrainOptions,
};

use crate::config::{self, RunConfigFile};
use crate::plots::{self, TsneParams};
use crate::CliError;

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)
}

fn load_data(cfg: &RunConfigFile) -> Result<Dataset, CliError> {
    let data = load_dataset(&cfg.dataset).map_err(runtime)?;
    if data.num_classes() != cfg.model.cluster_head.num_clusters {
        warn!(
            "model.cluster_head.num_clusters is {} but the dataset has {} classes",
            cfg.model.cluster_head.num_clusters,
            data.num_classes()
        );
    }
    info!("loaded {} images in {} classes", data.len(), data.num_classes());
    Ok(data)
}

fn print_scores(r: &EvalReport) {
    println!("NMI {:.4}  ACC {:.4}  ARI {:.4}  (n = {})", r.nmi, r.acc, r.ari, r.n);
}

pub fn train(cfg: &RunConfigFile, resume: Option<&Path>) -> Result<(), CliError> {
    cfg.validate()?;
    let resume = match resume {
        Some(p) => Some(Checkpoint::load(p).map_err(runtime)?),
        None => None,
    };
    let data = load_data(cfg)?;
    let out = cfg.resolved_output_dir();
    prepare_dir(&out)?;
    cfg.write_snapshot(&out).map_err(runtime)?;
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        resume,
    };
    let outcome = train_dataset(&cfg.run_config(), &data, &opts).map_err(runtime)?;
    if let Some(r) = &outcome.final_eval.report {
        print_scores(r);
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

pub fn eval(cfg: &RunConfigFile, checkpoint: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    cfg.dataset.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ckpt = Checkpoint::load(checkpoint).map_err(runtime)?;
    let data = load_data(cfg)?;
    let ev = evaluate_checkpoint(&ckpt, &data).map_err(runtime)?;
    let report = ev
        .report
        .as_ref()
        .ok_or_else(|| runtime(anyhow!("the dataset has no labels to evaluate against")))?;
    let out = out.map(|p| config::resolve_output(&p)).unwrap_or_else(|| cfg.resolved_output_dir());
    prepare_dir(&out)?;
    fs::write(out.join("eval_report.json"), report.to_json()).map_err(runtime)?;
    plots::confusion_heatmap(&report.confusion, &out.join("confusion.png")).map_err(runtime)?;
    print_scores(report);
    println!("report written to {}", out.join("eval_report.json").display());
    Ok(())
}

pub fn parse_modes(spec: &str) -> Result<Vec<AblationMode>, CliError> {
    if spec == "all" {
        return Ok(AblationMode::ALL.to_vec());
    }
    spec.split(',')
        .map(|m| m.trim().parse::<AblationMode>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

/// Mean over seeds for each mode, in the order the modes were requested.
fn summarize(rows: &[AblationRow], modes: &[AblationMode]) -> Vec<(AblationMode, [f64; 3], usize)> {
    modes
        .iter()
        .map(|&m| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.mode == m).collect();
            let n = mine.len().max(1) as f64;
            let mean = |f: fn(&AblationRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / n;
            (m, [mean(|r| r.scores.nmi), mean(|r| r.scores.acc), mean(|r| r.scores.ari)], mine.len())
        })
        .collect()
}

pub fn ablation_markdown(rows: &[AblationRow], modes: &[AblationMode]) -> String {
    let mut s = String::from("| Mode | NMI | ACC | ARI |\n|---|---|---|---|\n");
    for (m, v, _) in summarize(rows, modes) {
        writeln!(s, "| {} | {:.2} | {:.2} | {:.2} |", m, 100.0 * v[0], 100.0 * v[1], 100.0 * v[2]).unwrap();
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow], modes: &[AblationMode]) -> String {
    let mut s = String::from("mode,nmi,acc,ari,seeds\n");
    for (m, v, n) in summarize(rows, modes) {
        writeln!(s, "{m},{:.6},{:.6},{:.6},{n}", v[0], v[1], v[2]).unwrap();
    }
    s
}

fn runs_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("mode,seed,nmi,acc,ari\n");
    for r in rows {
        writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.mode, r.seed, r.scores.nmi, r.scores.acc, r.scores.ari).unwrap();
    }
    s
}

pub fn ablate_cmd(cfg: &RunConfigFile, modes: &[AblationMode], seeds: &[u64]) -> Result<(), CliError> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(CliError::Config("at least one seed is required".into()));
    }
    let data = load_data(cfg)?;
    let out = cfg.resolved_output_dir();
    prepare_dir(&out)?;
    cfg.write_snapshot(&out).map_err(runtime)?;
    let rows = ablate(&cfg.run_config(), &data, modes, seeds).map_err(runtime)?;
    let md = ablation_markdown(&rows, modes);
    fs::write(out.join("ablation.md"), &md).map_err(runtime)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&rows, modes)).map_err(runtime)?;
    fs::write(out.join("ablation_runs.csv"), runs_csv(&rows)).map_err(runtime)?;
    print!("{md}");
    Ok(())
}

fn read_log(path: &Path) -> anyhow::Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn plot(run_dir: &Path, tsne: TsneParams) -> Result<(), CliError> {
    let records = read_log(&run_dir.join("metrics.jsonl")).map_err(runtime)?;
    if records.is_empty() {
        return Err(runtime(anyhow!("{} holds no records", run_dir.join("metrics.jsonl").display())));
    }
    let mut steps = Vec::new();
    let mut evals = Vec::new();
    for r in records {
        match r {
            LogRecord::Step(s) => steps.push(s),
            LogRecord::Eval(e) => evals.push(e),
        }
    }
    if !steps.is_empty() {
        plots::loss_curve(&steps, &run_dir.join("loss.svg")).map_err(runtime)?;
        println!("wrote {}", run_dir.join("loss.svg").display());
    }
    if evals.iter().any(|e| e.scores.is_some()) {
        let n = plots::metric_curves(&evals, &run_dir.join("curves.svg")).map_err(runtime)?;
        println!("wrote {} ({n} points per curve)", run_dir.join("curves.svg").display());
    }
    let emb = run_dir.join("embeddings.json");
    if emb.exists() {
        let text = fs::read_to_string(&emb).map_err(runtime)?;
        let dump: EmbeddingDump = serde_json::from_str(&text).map_err(runtime)?;
        let points = plots::tsne(&dump.features, tsne);
        let mut csv = String::from("x,y,label,prediction\n");
        for (i, p) in points.iter().enumerate() {
            let label = dump.labels.as_ref().map_or(String::new(), |l| l[i].to_string());
            writeln!(csv, "{},{},{label},{}", p[0], p[1], dump.predictions[i]).unwrap();
        }
        fs::write(run_dir.join("tsne.csv"), csv).map_err(runtime)?;
        plots::scatter(&points, dump.labels.as_deref(), &run_dir.join("tsne.svg")).map_err(runtime)?;
        println!("wrote {}", run_dir.join("tsne.svg").display());
    }
    Ok(())
}

pub fn augment_preview(cfg: &RunConfigFile, images: &[PathBuf], seed: u64, out: Option<PathBuf>) -> Result<(), CliError> {
    cfg.aug.weak.validate().map_err(|e| CliError::Config(format!("aug.weak: {e}")))?;
    cfg.aug.strong.validate().map_err(|e| CliError::Config(format!("aug.strong: {e}")))?;
    let size = cfg.aug.weak.output_size;
    let mut rows = Vec::new();
    for (i, path) in images.iter().enumerate() {
        let img = match read_image(path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let v = sample_views(&img, &cfg.aug.weak, &cfg.aug.strong, &mut rng).map_err(runtime)?;
        rows.push(vec![img.resize(size, size), v.weak_a, v.weak_b, v.strong]);
    }
    if rows.is_empty() {
        return Err(runtime(anyhow!("none of the input images could be read")));
    }
    let path = match out {
        Some(p) => config::resolve_output(&p),
        None => {
            let dir = cfg.resolved_output_dir();
            prepare_dir(&dir)?;
            dir.join("augment_preview.png")
        }
    };
    plots::image_grid(&rows, &path).map_err(runtime)?;
    println!("wrote {} ({} x 4 tiles)", path.display(), rows.len());
    Ok(())
}
