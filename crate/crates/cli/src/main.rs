//! Batch CLI for nuclei detection, segmentation, and pleomorphism
//! scoring.
//!
//! Exit codes: 0 success, 1 configuration error, 2 input error, 3 when
//! some images failed but partial results were written.

mod io;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use nucleograde_core::features::{
    load_model_from_path, nucleoli_training_descriptor, save_model_to_path, svm_train,
    LinearSvmModel,
};
use nucleograde_core::pipeline::{
    detection_metrics, evaluate_centers, measure_baseline_features, process_slide, PipelineConfig,
    SlideReport,
};
use nucleograde_core::scoring::{baseline_from_features, NormalBaseline};

use crate::summary::{build_summary, ImageOutcome};

#[derive(Parser)]
#[command(name = "nucleograde", version, about = "Nuclear pleomorphism scoring for stained tissue images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a directory of slide images and write reports.
    Run {
        /// Pipeline configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of input images (PNG/TIFF).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for reports and exports.
        #[arg(long)]
        output: PathBuf,
        /// Also write boundary overlay PNGs.
        #[arg(long)]
        overlays: bool,
        /// Ground-truth nucleus centers CSV (image,x,y).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Ground-truth slide scores CSV (image,score).
        #[arg(long = "gt-scores")]
        gt_scores: Option<PathBuf>,
    },
    /// Train the nucleoli classifier from annotated points.
    TrainNucleoli {
        /// Annotations CSV (image_path,x,y,label); label 1 = nucleolus.
        #[arg(long)]
        annotations: PathBuf,
        /// Where to write the model file.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-evaluate written reports against ground truth.
    Eval {
        /// Directory of report JSON files from `run`.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth nucleus centers CSV (image,x,y).
        #[arg(long)]
        gt: PathBuf,
        #[arg(long = "gt-scores")]
        gt_scores: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the center-matching radius in pixels.
        #[arg(long = "match-radius")]
        match_radius: Option<f64>,
    },
}

/// Error wrapper carrying the exit code class.
enum Failure {
    Config(anyhow::Error),
    Input(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Input(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Input(e) => e,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run {
            config,
            input,
            output,
            overlays,
            gt,
            gt_scores,
        } => cmd_run(config, input, output, overlays, gt, gt_scores),
        Command::TrainNucleoli {
            annotations,
            output,
            config,
        } => cmd_train(annotations, output, config),
        Command::Eval {
            pred,
            gt,
            gt_scores,
            config,
            match_radius,
        } => cmd_eval(pred, gt, gt_scores, config, match_radius),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig, Failure> {
    let cfg = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))
                .map_err(Failure::Config)?;
            PipelineConfig::from_toml(&text)
                .map_err(|e| Failure::Config(anyhow!(e.to_string())))?
        }
    };
    cfg.validate()
        .map_err(|e| Failure::Config(anyhow!(e.to_string())))?;
    Ok(cfg)
}

fn cmd_run(
    config: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
    overlays: bool,
    gt: Option<PathBuf>,
    gt_scores: Option<PathBuf>,
) -> Result<u8, Failure> {
    let cfg = load_config(config.as_ref())?;
    let model: Option<LinearSvmModel> = match &cfg.nucleoli_model {
        Some(path) => Some(
            load_model_from_path(path)
                .with_context(|| format!("cannot load nucleoli model {}", path.display()))
                .map_err(Failure::Config)?,
        ),
        None => None,
    };

    let images = io::list_images(&input).map_err(Failure::Input)?;
    if images.is_empty() {
        return Err(Failure::Input(anyhow!(
            "no PNG/TIFF images in {}",
            input.display()
        )));
    }
    let gt_centers = match &gt {
        Some(p) => Some(io::read_centers_csv(p).map_err(Failure::Input)?),
        None => None,
    };
    let gt_slide_scores = match &gt_scores {
        Some(p) => Some(io::read_scores_csv(p).map_err(Failure::Input)?),
        None => None,
    };
    std::fs::create_dir_all(&output)
        .with_context(|| format!("cannot create {}", output.display()))
        .map_err(Failure::Input)?;

    let baseline = resolve_baseline(&cfg, &images, model.as_ref())?;

    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .ok();
    }

    let outcomes: Vec<ImageOutcome> = images
        .par_iter()
        .map(|path| process_one(path, &cfg, &baseline, model.as_ref(), &output, overlays, gt_centers.as_ref()))
        .collect();

    let mut seeds_rows = Vec::new();
    for outcome in &outcomes {
        if let ImageOutcome::Done { image, seeds, .. } = outcome {
            for &(x, y) in seeds {
                seeds_rows.push((image.clone(), x, y));
            }
        }
    }
    io::write_seeds_csv(&output.join("seeds.csv"), &seeds_rows).map_err(Failure::Input)?;

    let summary = build_summary(&outcomes, gt_slide_scores.as_ref());
    std::fs::write(
        output.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .context("cannot write summary.json")
    .map_err(Failure::Input)?;

    let failures = outcomes
        .iter()
        .filter(|o| matches!(o, ImageOutcome::Failed { .. }))
        .count();
    for outcome in &outcomes {
        match outcome {
            ImageOutcome::Done { image, nuclei, .. } => {
                eprintln!("{image}: {nuclei} nuclei");
            }
            ImageOutcome::Failed { image, message } => {
                eprintln!("{image}: FAILED: {message}");
            }
        }
    }
    Ok(if failures > 0 { 3 } else { 0 })
}

fn resolve_baseline(
    cfg: &PipelineConfig,
    images: &[PathBuf],
    model: Option<&LinearSvmModel>,
) -> Result<NormalBaseline, Failure> {
    let Some(ann_path) = &cfg.healthy_annotations else {
        return Ok(cfg.baseline);
    };
    let by_image = io::read_centers_csv(ann_path).map_err(Failure::Input)?;
    let mut features = Vec::new();
    for (image_id, centers) in &by_image {
        let path = images
            .iter()
            .find(|p| io::image_id(p) == *image_id)
            .ok_or_else(|| {
                Failure::Input(anyhow!(
                    "healthy annotation references {image_id}, not in the input directory"
                ))
            })?;
        let img = io::load_rgb(path).map_err(Failure::Input)?;
        let mut measured = measure_baseline_features(centers, &img, cfg, model)
            .map_err(|e| Failure::Input(anyhow!(e.to_string())))?;
        features.append(&mut measured);
    }
    baseline_from_features(&features)
        .map_err(|e| Failure::Input(anyhow!("cannot measure baseline: {e}")))
}

fn process_one(
    path: &PathBuf,
    cfg: &PipelineConfig,
    baseline: &NormalBaseline,
    model: Option<&LinearSvmModel>,
    output: &PathBuf,
    overlays: bool,
    gt_centers: Option<&std::collections::BTreeMap<String, Vec<(f64, f64)>>>,
) -> ImageOutcome {
    let image = io::image_id(path);
    let run = || -> Result<(usize, Vec<(f64, f64)>, SlideReport)> {
        let img = io::load_rgb(path)?;
        let mut analysis = process_slide(&image, &img, cfg, baseline, model)
            .map_err(|e| anyhow!(e.to_string()))?;
        if let Some(gt) = gt_centers.and_then(|m| m.get(&image)) {
            let counts =
                evaluate_centers(&analysis.report.all_centroids(), gt, cfg.match_radius);
            analysis.report.detection = Some(detection_metrics(counts));
        }
        std::fs::write(
            output.join(format!("{image}.json")),
            analysis.report.to_json(),
        )?;
        io::save_labels(
            &analysis.labels,
            analysis.label_width,
            analysis.label_height,
            &output.join(format!("{image}_labels.png")),
        )?;
        if overlays {
            io::save_rgb(
                &io::render_overlay(&img, &analysis.report),
                &output.join(format!("{image}_overlay.png")),
            )?;
        }
        let seeds = analysis
            .report
            .quarters
            .iter()
            .flat_map(|q| q.seeds.iter().copied())
            .collect();
        let nuclei = analysis
            .report
            .quarters
            .iter()
            .map(|q| q.nuclei.len())
            .sum();
        Ok((nuclei, seeds, analysis.report))
    };
    match run() {
        Ok((nuclei, seeds, report)) => ImageOutcome::Done {
            image,
            nuclei,
            seeds,
            report: Box::new(report),
        },
        Err(e) => ImageOutcome::Failed {
            image,
            message: format!("{e:#}"),
        },
    }
}

fn cmd_train(
    annotations: PathBuf,
    output: PathBuf,
    config: Option<PathBuf>,
) -> Result<u8, Failure> {
    let cfg = load_config(config.as_ref())?;
    let rows = io::read_annotations_csv(&annotations).map_err(Failure::Input)?;
    if rows.is_empty() {
        return Err(Failure::Input(anyhow!("annotation file has no rows")));
    }

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0usize;
    let mut cache: std::collections::BTreeMap<PathBuf, nucleograde_core::RgbImage> =
        Default::default();
    for (path, x, y, label) in &rows {
        if !cache.contains_key(path) {
            let img = io::load_rgb(path).map_err(Failure::Input)?;
            cache.insert(path.clone(), img);
        }
        let img = &cache[path];
        match nucleoli_training_descriptor(img, (*x, *y), &cfg.nucleoli) {
            Ok(descriptor) => {
                samples.push(descriptor);
                labels.push(*label);
            }
            Err(e) => {
                eprintln!("skipping annotation ({x}, {y}) in {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    let outcome = svm_train(&samples, &labels, 1, cfg.nucleoli.svm_c)
        .map_err(|e| Failure::Input(anyhow!("training failed: {e}")))?;
    save_model_to_path(&outcome.model, &output)
        .map_err(|e| Failure::Input(anyhow!("cannot write model: {e}")))?;
    eprintln!(
        "trained on {} samples ({skipped} skipped), final objective {:.6}",
        samples.len(),
        outcome
            .objective_checkpoints
            .last()
            .copied()
            .unwrap_or(f64::NAN)
    );
    Ok(0)
}

fn cmd_eval(
    pred: PathBuf,
    gt: PathBuf,
    gt_scores: Option<PathBuf>,
    config: Option<PathBuf>,
    match_radius: Option<f64>,
) -> Result<u8, Failure> {
    let cfg = load_config(config.as_ref())?;
    let radius = match_radius.unwrap_or(cfg.match_radius);
    if radius <= 0.0 {
        return Err(Failure::Config(anyhow!("match radius must be positive")));
    }
    let gt_centers = io::read_centers_csv(&gt).map_err(Failure::Input)?;
    let gt_slide_scores = match &gt_scores {
        Some(p) => Some(io::read_scores_csv(p).map_err(Failure::Input)?),
        None => None,
    };

    let reports = load_reports(&pred).map_err(Failure::Input)?;
    if reports.is_empty() {
        return Err(Failure::Input(anyhow!(
            "no report JSON files in {}",
            pred.display()
        )));
    }

    let mut outcomes = Vec::new();
    for mut report in reports {
        let truth = gt_centers.get(&report.image).ok_or_else(|| {
            Failure::Input(anyhow!("no ground-truth centers for image {}", report.image))
        })?;
        let counts = evaluate_centers(&report.all_centroids(), truth, radius);
        let nuclei = report.quarters.iter().map(|q| q.nuclei.len()).sum();
        report.detection = Some(detection_metrics(counts));
        outcomes.push(ImageOutcome::Done {
            image: report.image.clone(),
            nuclei,
            seeds: Vec::new(),
            report: Box::new(report),
        });
    }
    let summary = build_summary(&outcomes, gt_slide_scores.as_ref());
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(0)
}

fn load_reports(dir: &PathBuf) -> Result<Vec<SlideReport>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()) == Some("json")
                && p.file_name().and_then(|n| n.to_str()) != Some("summary.json")
        })
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let report = SlideReport::from_json(&text)
            .map_err(|e| anyhow!("{}: {}", path.display(), e))?;
        reports.push(report);
    }
    Ok(reports)
}
