mod settings;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use groundcast::colour::{self, PosteriorTable};
use groundcast::detection::{DetectionDump, ImageDetections};
use groundcast::eval::{self, colour_subset_filter, per_category_report, Query};
use groundcast::overlay::{render_svg, Overlay};
use groundcast::pipeline::{read_predictions, score_predictions, whole_image_predictions, write_predictions};
use groundcast::{flickr30k, BoundingBox, DetectionIndex, Engine, ImageSize, Prediction, RunConfig, Similarity};

use settings::{parse_gt_merge, read_settings_file, read_sweep_file, Settings};

#[derive(Parser)]
#[command(
    name = "groundcast",
    version,
    about = "Phrase localization from detector outputs and word embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict one box per query.
    Localize {
        #[command(flatten)]
        settings: Settings,
        /// TOML file with the same keys as the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Predictions TSV.
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate and write the report CSV here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config column of the report [default: predictions file stem].
        #[arg(long)]
        name: Option<String>,
        /// Restrict to phrases containing a basic colour term.
        #[arg(long)]
        colour_subset: bool,
        #[arg(long)]
        gt_merge: Option<String>,
    },
    /// Predict the whole image for every query.
    Baseline {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt_merge: Option<String>,
    },
    /// Run every `[[run]]` of a TOML file and write one combined report.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Combined report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also keep each run's predictions here.
        #[arg(long)]
        predictions_dir: Option<PathBuf>,
    },
    /// Colour-name detections for a directory of PPM images.
    ColourDetect {
        #[arg(long)]
        images: PathBuf,
        /// Posterior lookup table (PTAB).
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = colour::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = colour::DEFAULT_MIN_AREA)]
        min_area: u64,
    },
    /// Render predictions over their images as SVG.
    Overlay {
        /// Image reference embedded in the SVG.
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        /// Predicted box `x_min,y_min,x_max,y_max`.
        #[arg(long)]
        prediction: Option<BoundingBox>,
        #[arg(long)]
        gt: Option<BoundingBox>,
        #[arg(long)]
        candidate: Vec<BoundingBox>,
        #[arg(long)]
        caption: Option<String>,
        /// Batch mode: one SVG per prediction, named `<query_index>.svg`.
        #[arg(long, requires = "queries")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Batch mode: directory holding `<image_id>.jpg`.
        #[arg(long)]
        image_dir: Option<PathBuf>,
        #[arg(long)]
        candidates: bool,
        /// SVG file, or a directory in batch mode.
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn Flickr30k Entities annotations into a query file.
    ConvertFlickr30k {
        /// Dataset root with Sentences/ and Annotations/.
        #[arg(long)]
        root: PathBuf,
        /// Image id list, e.g. test.txt.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt_merge: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("GROUNDCAST_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("GROUNDCAST_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Localize {
            settings,
            config,
            out,
            report,
        } => {
            let settings = match config {
                Some(path) => settings.or(&read_settings_file(&path)?),
                None => settings,
            };
            cmd_localize(&settings, &out, report.as_deref())?;
        }
        Command::Evaluate {
            predictions,
            queries,
            out,
            name,
            colour_subset,
            gt_merge,
        } => {
            let name = name.unwrap_or_else(|| file_stem(&predictions));
            let queries = eval::load_queries(&queries, parse_gt_merge(gt_merge.as_deref())?)?;
            let preds = load_predictions(&predictions)?;
            let (rows, table) = evaluate(&name, &queries, &preds, colour_subset)?;
            print!("{table}");
            if let Some(out) = out {
                write_report(&out, &rows)?;
            }
        }
        Command::Baseline { queries, out, gt_merge } => {
            let queries = eval::load_queries(&queries, parse_gt_merge(gt_merge.as_deref())?)?;
            write_file(&out, |w| write_predictions(w, &whole_image_predictions(&queries)))?;
        }
        Command::Sweep {
            config,
            out,
            predictions_dir,
        } => cmd_sweep(&config, &out, predictions_dir.as_deref())?,
        Command::ColourDetect {
            images,
            table,
            out,
            threshold,
            min_area,
        } => return cmd_colour_detect(&images, &table, &out, threshold, min_area),
        Command::Overlay {
            image,
            width,
            height,
            prediction,
            gt,
            candidate,
            caption,
            predictions,
            queries,
            image_dir,
            candidates,
            out,
        } => match (predictions, queries) {
            (Some(p), Some(q)) => overlay_batch(&p, &q, image_dir.as_deref(), candidates, &out)?,
            _ => {
                let (Some(w), Some(h)) = (width, height) else {
                    bail!("--width and --height are required without --predictions");
                };
                let svg = render_svg(
                    ImageSize::new(w, h)?,
                    &Overlay {
                        image_href: image.as_deref().unwrap_or(""),
                        prediction,
                        ground_truth: gt,
                        candidates: &candidate,
                        caption: caption.as_deref().unwrap_or(""),
                    },
                );
                write_file(&out, |w| w.write_all(svg.as_bytes()))?;
            }
        },
        Command::ConvertFlickr30k {
            root,
            split,
            out,
            gt_merge,
        } => {
            let queries = flickr30k::convert_split(&root, &split, parse_gt_merge(gt_merge.as_deref())?)?;
            write_file(&out, |w| eval::write_queries(w, &queries))?;
            eprintln!("{} queries", queries.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "predictions".into(), |s| s.to_string_lossy().into_owned())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_predictions(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_report(path: &Path, rows: &[String]) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "{}", eval::REPORT_HEADER)?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })
}

/// Report rows and a printable table, optionally on the colour subset.
fn evaluate(name: &str, queries: &[Query], preds: &[Prediction], colour_subset: bool) -> Result<(Vec<String>, String)> {
    let records = score_predictions(queries, preds)?;
    let (queries, records): (Vec<Query>, Vec<_>) = if colour_subset {
        colour_subset_filter(queries)
            .into_iter()
            .map(|i| (queries[i].clone(), records[i].clone()))
            .unzip()
    } else {
        (queries.to_vec(), records)
    };
    if records.is_empty() {
        bail!("no queries to evaluate");
    }
    let report = per_category_report(&queries, &records)?;
    Ok((eval::report_csv_rows(name, &report), eval::report_table(name, &report)))
}

struct Inputs {
    queries: Vec<Query>,
    table: Option<groundcast::EmbeddingTable>,
    dumps: Vec<DetectionDump>,
}

fn load_inputs(settings: &Settings, need_table: bool) -> Result<Inputs> {
    let table = if need_table || settings.embeddings.is_some() {
        Some(settings.load_embeddings()?)
    } else {
        None
    };
    let queries = eval::load_queries(settings.queries_path()?, settings.gt_merge()?)?;
    let dumps = settings.load_detections()?;
    Ok(Inputs { queries, table, dumps })
}

fn predict(inputs: &Inputs, cfg: &RunConfig) -> Result<Vec<Prediction>> {
    let index = DetectionIndex::build(&inputs.dumps, cfg)?;
    let engine = Engine::new(inputs.table.as_ref(), &index, cfg)?;
    Ok(engine.run(&inputs.queries))
}

fn cmd_localize(settings: &Settings, out: &Path, report: Option<&Path>) -> Result<()> {
    let cfg = settings.run_config()?;
    let inputs = load_inputs(settings, cfg.similarity != Similarity::NoFilter)?;
    let preds = predict(&inputs, &cfg)?;
    write_file(out, |w| write_predictions(w, &preds))?;
    if let Some(report) = report {
        let (rows, table) = evaluate(&cfg.label(), &inputs.queries, &preds, false)?;
        eprint!("{table}");
        write_report(report, &rows)?;
    }
    Ok(())
}

fn cmd_sweep(config: &Path, out: &Path, predictions_dir: Option<&Path>) -> Result<()> {
    let (shared, runs) = read_sweep_file(config)?;
    let resolved: Vec<(Option<String>, Settings)> = runs.into_iter().map(|(n, s)| (n, s.or(&shared))).collect();
    let mut cache: HashMap<String, Inputs> = HashMap::new();
    let mut rows = Vec::new();
    for (i, (name, settings)) in resolved.iter().enumerate() {
        let cfg = settings.run_config().with_context(|| format!("run {}", i + 1))?;
        let key = format!(
            "{:?}|{:?}|{:?}|{:?}|{:?}",
            settings.embeddings, settings.frequencies, settings.queries, settings.detections, settings.gt_merge
        );
        if !cache.contains_key(&key) {
            cache.insert(
                key.clone(),
                load_inputs(settings, cfg.similarity != Similarity::NoFilter)?,
            );
        }
        let inputs = &cache[&key];
        let label = name.clone().unwrap_or_else(|| cfg.label());
        log::info!("run {}: {label}", i + 1);
        let preds = predict(inputs, &cfg).with_context(|| format!("run {}", i + 1))?;
        if let Some(dir) = predictions_dir {
            let path = dir.join(format!("{:03}.tsv", i + 1));
            write_file(&path, |w| write_predictions(w, &preds))?;
        }
        let (r, table) = evaluate(&label, &inputs.queries, &preds, false)?;
        eprint!("{table}");
        rows.extend(r);
    }
    write_report(out, &rows)
}

fn cmd_colour_detect(images: &Path, table: &Path, out: &Path, threshold: f64, min_area: u64) -> Result<ExitCode> {
    let table = PosteriorTable::load(table).with_context(|| format!("loading {}", table.display()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(images)
        .with_context(|| format!("reading {}", images.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();

    let mut failed = 0;
    let mut records = Vec::new();
    for path in &files {
        let image = match colour::load_ppm(path) {
            Ok(i) => i,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        let size = ImageSize::new(image.width(), image.height())?;
        let mut dets = ImageDetections::new(file_stem(path), size);
        dets.detections = colour::detect_colours(&image, &table, threshold, min_area);
        records.push(dets);
    }
    let mut json = groundcast::detection::to_json(&records);
    for record in json.as_array_mut().into_iter().flatten() {
        record["detector_id"] = "colour".into();
    }
    write_file(out, |w| {
        serde_json::to_writer_pretty(&mut *w, &json)?;
        writeln!(w)
    })?;
    if failed > 0 {
        eprintln!("{failed} of {} images failed", files.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn overlay_batch(
    predictions: &Path,
    queries: &Path,
    image_dir: Option<&Path>,
    candidates: bool,
    out: &Path,
) -> Result<()> {
    let queries = eval::load_queries(queries, Default::default())?;
    let preds = load_predictions(predictions)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for p in &preds {
        let q = queries
            .get(p.query_index)
            .with_context(|| format!("prediction for unknown query {}", p.query_index))?;
        let href = image_dir
            .map(|d| d.join(format!("{}.jpg", q.image_id)).display().to_string())
            .unwrap_or_default();
        let svg = render_svg(
            q.size,
            &Overlay {
                image_href: &href,
                prediction: Some(p.bbox),
                ground_truth: Some(q.gt),
                candidates: if candidates { &p.candidates } else { &[] },
                caption: &q.phrase,
            },
        );
        let path = out.join(format!("{}.svg", p.query_index));
        write_file(&path, |w| w.write_all(svg.as_bytes()))?;
    }
    Ok(())
}
