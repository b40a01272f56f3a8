use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use sake_core::datagen::{generate_dataset, is_held_out, read_dataset, write_dataset, Dataset, Sample};
use sake_core::hashing::{itq_fit, load_codec, save_codec, write_codes, ItqCodec};
use sake_core::losses::Objective;
use sake_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use sake_core::numerics::softmax;
use sake_core::retrieval::{
    analyze_improvement_groups, embed_collection, evaluate, write_embeddings_csv, ClassStat, EvalOptions, Metric,
    MetricReport,
};
use sake_core::semantics::{lch_similarity, ClassMap, SimilarityMatrix, Taxonomy};
use sake_core::training::{
    evaluate_original_head, extract_features, finetune_sake, linear_probe, pretrain_teacher, ProbeReport,
};
use sake_core::{Error, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{ObjectiveName, RunConfig};

pub const TOOL: &str = "sake";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const CODEC_FILE: &str = "codec.itq";

/// Every JSON output: the tool, its version, the resolved config, and the
/// command's own fields.
#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, command: &'static str, cfg: &RunConfig, body: T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let out = Output {
        tool: TOOL,
        version: VERSION,
        command,
        config: cfg,
        body,
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn toy() -> (Taxonomy, ClassMap) {
    let tax = Taxonomy::toy();
    let classes = ClassMap::toy(&tax);
    (tax, classes)
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let started = Instant::now();
    let out = f()?;
    eprintln!("{what}: {:.1}s", started.elapsed().as_secs_f64());
    Ok(out)
}

/// Loads a dataset directory and makes `cfg.data` describe it.
fn load_data(cfg: &mut RunConfig, dir: &Path) -> Result<Dataset> {
    let data = read_dataset(dir)?;
    cfg.data = data.spec.clone();
    Ok(data)
}

fn load_model(cfg: &mut RunConfig, path: &Path) -> Result<ModelParams<f32>> {
    let params = load_checkpoint(path)?;
    cfg.model = params.config.clone();
    Ok(params)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (tax, classes) = toy();
    let data = timed("gen-data", || generate_dataset(&cfg.data, &tax, &classes))?;
    let manifest = write_dataset(&data, &tax, &classes, out)?;
    #[derive(Serialize)]
    struct Body<'a> {
        certificate: &'a sake_core::datagen::Certificate,
        counts: Vec<(String, usize)>,
    }
    let counts: Vec<(String, usize)> = manifest.splits.iter().map(|s| (s.name.name().to_string(), s.count)).collect();
    for (name, n) in &counts {
        println!("{name:<15} {n:>6} samples");
    }
    println!(
        "classes: {} original, {} source, {} target",
        manifest.original_classes.len(),
        manifest.source_classes.len(),
        manifest.target_classes.len()
    );
    write_json(
        &out.join("gen-data.json"),
        "gen-data",
        cfg,
        Body {
            certificate: &manifest.certificate,
            counts,
        },
    )
}

pub fn pretrain(mut cfg: RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_data(&mut cfg, data_dir)?;
    cfg.model.side = data.spec.side;
    cfg.model.n_original = data.spec.original.len();
    cfg.model.n_source = data.spec.source.len();
    cfg.model.validate()?;
    let train: Vec<Sample> = data.original_train.iter().filter(|s| !is_held_out(s.sample_id)).cloned().collect();
    let outcome = timed("pretrain", || pretrain_teacher(&train, &data.spec.original, &cfg.model, &cfg.pretrain))?;
    let held_out = evaluate_original_head(&outcome.params, &data.original_train, &data.spec.original)?;
    println!(
        "teacher: train accuracy {:.4}, held-out accuracy {held_out:.4}",
        outcome.report.final_train_accuracy
    );
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    save_checkpoint(&outcome.params, &out.join(CHECKPOINT_FILE))?;
    #[derive(Serialize)]
    struct Body<'a> {
        report: &'a sake_core::training::TrainReport,
        held_out_accuracy: f64,
    }
    write_json(
        &out.join(REPORT_FILE),
        "pretrain",
        &cfg,
        Body {
            report: &outcome.report,
            held_out_accuracy: held_out,
        },
    )
}

/// `λ_SAKE = 0` is the plain benchmark objective whatever was asked for.
pub fn effective_objective(cfg: &RunConfig) -> Objective {
    if cfg.train.loss.lambda_sake == 0.0 {
        Objective::Benchmark
    } else {
        cfg.objective.into()
    }
}

pub fn train(mut cfg: RunConfig, data_dir: &Path, teacher_path: &Path, out: &Path) -> Result<()> {
    let data = load_data(&mut cfg, data_dir)?;
    let teacher = load_model(&mut cfg, teacher_path)?;
    let (tax, classes) = toy();
    let sim = SimilarityMatrix::build(&tax, &classes, &data.spec.source, &data.spec.original)?;
    let objective = effective_objective(&cfg);
    if objective == Objective::Benchmark {
        cfg.objective = ObjectiveName::Benchmark;
    }
    let outcome = timed("train", || finetune_sake(&data.source_train, &teacher, &sim, objective, &cfg.train))?;
    let last = outcome.report.epochs.last().map(|e| e.loss).unwrap_or_default();
    println!(
        "student ({:?}): source accuracy {:.4}, final loss {:.4} (benchmark {:.4}, distillation {:.4})",
        cfg.objective, outcome.report.final_train_accuracy, last.total, last.benchmark, last.sake
    );
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    save_checkpoint(&outcome.params, &out.join(CHECKPOINT_FILE))?;
    #[derive(Serialize)]
    struct Body<'a> {
        report: &'a sake_core::training::TrainReport,
    }
    write_json(
        &out.join(REPORT_FILE),
        "train",
        &cfg,
        Body {
            report: &outcome.report,
        },
    )
}

#[derive(Serialize)]
pub struct ProbeOutput {
    pub probe: ProbeReport,
    /// The model's own original head on the same held-out photos.
    pub original_head_accuracy: f64,
}

pub fn probe(mut cfg: RunConfig, data_dir: &Path, model_path: &Path, out: Option<&Path>) -> Result<ProbeOutput> {
    let data = load_data(&mut cfg, data_dir)?;
    let params = load_model(&mut cfg, model_path)?;
    let probe = timed("probe", || linear_probe(&params, &data.original_train, &data.spec.original, &cfg.probe))?;
    let head = evaluate_original_head(&params, &data.original_train, &data.spec.original)?;
    println!(
        "linear probe: accuracy {:.4} on {} held-out photos (train {:.4}); original head {head:.4}",
        probe.accuracy, probe.eval_count, probe.train_accuracy
    );
    let body = ProbeOutput {
        probe,
        original_head_accuracy: head,
    };
    if let Some(path) = out {
        write_json(path, "probe", &cfg, &body)?;
    }
    Ok(body)
}

/// Fits ITQ on the source-set embeddings and writes the codec and the codes
/// of the target queries and gallery.
pub fn hash(mut cfg: RunConfig, data_dir: &Path, model_path: &Path, out: &Path) -> Result<()> {
    let data = load_data(&mut cfg, data_dir)?;
    let params = load_model(&mut cfg, model_path)?;
    let refs: Vec<&Sample> = data.source_train.iter().collect();
    let features = extract_features(&params, &refs)?;
    let (codec, fit) = timed("itq", || itq_fit(&features, cfg.itq.bits, cfg.itq.iterations, cfg.itq.seed))?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    save_codec(&codec, &out.join(CODEC_FILE))?;
    for (name, samples) in [("query", &data.target_query), ("gallery", &data.target_gallery)] {
        let refs: Vec<&Sample> = samples.iter().collect();
        let codes = codec.encode_rows(&extract_features(&params, &refs)?)?;
        write_codes(&codes, &out.join(format!("{name}.codes")))?;
    }
    println!(
        "itq: {} bits, quantization loss {:.4} -> {:.4}",
        codec.bits(),
        fit.losses.first().copied().unwrap_or(f64::NAN),
        fit.losses.last().copied().unwrap_or(f64::NAN)
    );
    #[derive(Serialize)]
    struct Body<'a> {
        bits: usize,
        fit: &'a sake_core::hashing::ItqFit,
        orthogonality_error: f64,
    }
    write_json(
        &out.join("hash.json"),
        "hash",
        &cfg,
        Body {
            bits: codec.bits(),
            fit: &fit,
            orthogonality_error: codec.orthogonality_error(),
        },
    )
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub codec: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub bits: Option<usize>,
    pub ks: Option<Vec<usize>>,
    /// Photo queries against the photo gallery, each query left out.
    pub photo_queries: bool,
    pub csv: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct EvalOutput {
    pub mode: &'static str,
    pub bits: Option<usize>,
    pub report: MetricReport,
}

pub fn eval(mut cfg: RunConfig, data_dir: &Path, model_path: &Path, args: &EvalArgs, out: Option<&Path>) -> Result<EvalOutput> {
    let data = load_data(&mut cfg, data_dir)?;
    let params = load_model(&mut cfg, model_path)?;
    if let Some(ks) = &args.ks {
        cfg.eval.ks = ks.clone();
    }
    let codec: Option<ItqCodec> = args.codec.as_deref().map(load_codec).transpose()?;
    cfg.eval.metric = match (args.metric, &codec) {
        (Some(m), _) => m,
        (None, Some(_)) => Metric::Hamming,
        (None, None) => cfg.eval.metric,
    };
    match (cfg.eval.metric, &codec) {
        (Metric::Hamming, None) => {
            return Err(Error::Contract {
                op: "eval",
                detail: "hamming distance needs binary codes; pass --codec".into(),
            })
        }
        (Metric::Cosine, Some(_)) => {
            return Err(Error::Contract {
                op: "eval",
                detail: "cosine distance needs real embeddings; drop --codec or use --metric hamming".into(),
            })
        }
        _ => {}
    }
    if let (Some(want), Some(c)) = (args.bits, &codec) {
        if c.bits() != want {
            return Err(Error::Contract {
                op: "eval",
                detail: format!("--bits {want} but the codec has {} bits", c.bits()),
            });
        }
    }
    if let Some(c) = &codec {
        cfg.itq.bits = c.bits();
    }
    let (mode, queries) = if args.photo_queries {
        ("photo-to-photo", &data.target_gallery)
    } else {
        ("sketch-to-photo", &data.target_query)
    };
    let q = embed_collection(&params, queries, codec.as_ref())?;
    let g = embed_collection(&params, &data.target_gallery, codec.as_ref())?;
    let mut opts = EvalOptions::new(cfg.eval.metric, cfg.eval.ks.clone());
    opts.exclude_self = args.photo_queries;
    let report = timed("eval", || evaluate(&q, &g, &data.spec.target, &opts))?;
    print!("{mode}\n{}", report.to_table());
    if let Some(path) = &args.csv {
        let all: Vec<Sample> = data.target_query.iter().chain(&data.target_gallery).cloned().collect();
        let refs: Vec<&Sample> = all.iter().collect();
        write_embeddings_csv(path, &all, &extract_features(&params, &refs)?)?;
    }
    let body = EvalOutput {
        mode,
        bits: codec.as_ref().map(|c| c.bits()),
        report,
    };
    if let Some(path) = out {
        write_json(path, "eval", &cfg, &body)?;
    }
    Ok(body)
}

/// Mean top-1 probability of the teacher's original head over `samples`.
fn teacher_confidence(teacher: &ModelParams<f32>, samples: &[&Sample]) -> Result<f64> {
    let x = extract_features(teacher, samples)?;
    let (_, logits) = teacher.head_logits(&x)?;
    let total: f64 = (0..samples.len())
        .map(|i| softmax(logits.row(i)).into_iter().fold(0f32, f32::max) as f64)
        .sum();
    Ok(total / samples.len() as f64)
}

pub fn analyze(
    mut cfg: RunConfig,
    data_dir: &Path,
    teacher_path: &Path,
    student_path: &Path,
    baseline_path: &Path,
    out: Option<&Path>,
) -> Result<sake_core::retrieval::ImprovementAnalysis> {
    let data = load_data(&mut cfg, data_dir)?;
    let teacher = load_checkpoint(teacher_path)?;
    let student = load_model(&mut cfg, student_path)?;
    let baseline = load_checkpoint(baseline_path)?;
    let opts = EvalOptions::new(Metric::Cosine, cfg.eval.ks.clone());
    let per_class = |p: &ModelParams<f32>| -> Result<MetricReport> {
        let q = embed_collection(p, &data.target_query, None)?;
        let g = embed_collection(p, &data.target_gallery, None)?;
        evaluate(&q, &g, &data.spec.target, &opts)
    };
    let (s, b) = (per_class(&student)?, per_class(&baseline)?);
    let (tax, classes) = toy();
    let mut stats = Vec::new();
    for (sc, bc) in s.per_class.iter().zip(&b.per_class) {
        let c = sc.class_id;
        let (Some(sm), Some(bm)) = (sc.map_all, bc.map_all) else {
            continue;
        };
        let samples: Vec<&Sample> = data
            .target_query
            .iter()
            .chain(&data.target_gallery)
            .filter(|x| x.class_id == c)
            .collect();
        let node = classes.node(c)?;
        let lch = data
            .spec
            .original
            .iter()
            .map(|&o| lch_similarity(&tax, node, classes.node(o)?))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        stats.push(ClassStat {
            class_id: c,
            delta: sm - bm,
            teacher_confidence: teacher_confidence(&teacher, &samples)?,
            lch,
        });
    }
    let analysis = analyze_improvement_groups(&stats)?;
    print!("{}", analysis.to_table());
    if let Some(path) = out {
        #[derive(Serialize)]
        struct Body<'a> {
            classes: &'a [ClassStat],
            analysis: &'a sake_core::retrieval::ImprovementAnalysis,
            table: String,
        }
        write_json(
            path,
            "analyze",
            &cfg,
            Body {
                classes: &stats,
                analysis: &analysis,
                table: analysis.to_table(),
            },
        )?;
    }
    Ok(analysis)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRun {
    pub name: String,
    pub overrides: Vec<String>,
    pub map_all: Option<f64>,
    pub prec_at_k: Vec<(usize, f64)>,
    pub exit_code: Option<i32>,
}

/// Cartesian product of `key=v1,v2,..` axes, as lists of `key=value`.
pub fn sweep_grid(axes: &[String]) -> Result<Vec<Vec<String>>> {
    let mut grid: Vec<Vec<String>> = vec![vec![]];
    for axis in axes {
        let (k, vs) = axis.split_once('=').ok_or_else(|| Error::Parse {
            line: 0,
            detail: format!("expected key=v1,v2,.. in `{axis}`"),
        })?;
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                vs.split(',').map(move |v| {
                    let mut run = prefix.clone();
                    run.push(format!("{k}={v}"));
                    run
                })
            })
            .collect();
    }
    Ok(grid)
}

/// Trains and evaluates one student per grid point by invoking this binary,
/// up to `jobs` at a time. Every run gets its own directory under `out`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    cfg: &RunConfig,
    config_file: Option<&Path>,
    base_sets: &[String],
    data_dir: &Path,
    teacher: &Path,
    axes: &[String],
    jobs: usize,
    out: &Path,
) -> Result<Vec<SweepRun>> {
    let grid = sweep_grid(axes)?;
    for point in &grid {
        // Reject bad keys before launching anything.
        let sets: Vec<String> = base_sets.iter().chain(point).cloned().collect();
        RunConfig::resolve(config_file, &sets)?;
    }
    let exe = std::env::current_exe().map_err(|e| io_err(Path::new("current_exe"), e))?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let run_one = |i: usize, point: &Vec<String>| -> SweepRun {
        let dir = out.join(format!("run{i:03}"));
        let mut sets: Vec<String> = Vec::new();
        if let Some(f) = config_file {
            sets.push("--config".into());
            sets.push(f.to_string_lossy().into_owned());
        }
        for s in base_sets.iter().chain(point) {
            sets.push("--set".into());
            sets.push(s.clone());
        }
        let status = |args: Vec<String>| {
            Command::new(&exe)
                .args(args)
                .args(&sets)
                .stdout(std::process::Stdio::null())
                .status()
                .ok()
                .and_then(|s| s.code())
        };
        let path = |p: &Path| p.to_string_lossy().into_owned();
        let mut code = status(vec![
            "train".into(),
            "--data".into(),
            path(data_dir),
            "--teacher".into(),
            path(teacher),
            "--out".into(),
            path(&dir),
        ]);
        let eval_json = dir.join("eval.json");
        if code == Some(0) {
            code = status(vec![
                "eval".into(),
                "--data".into(),
                path(data_dir),
                "--model".into(),
                path(&dir.join(CHECKPOINT_FILE)),
                "--out".into(),
                path(&eval_json),
            ]);
        }
        let report: Option<Value> = std::fs::read_to_string(&eval_json)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let report = report.as_ref().map(|v| &v["report"]);
        SweepRun {
            name: format!("run{i:03}"),
            overrides: point.clone(),
            map_all: report.and_then(|r| r["map_all"].as_f64()),
            prec_at_k: report
                .and_then(|r| r["prec_at_k"].as_array())
                .map(|a| {
                    a.iter()
                        .filter_map(|e| Some((e["k"].as_u64()? as usize, e["value"].as_f64()?)))
                        .collect()
                })
                .unwrap_or_default(),
            exit_code: code,
        }
    };
    let mut runs: Vec<Option<SweepRun>> = vec![None; grid.len()];
    let jobs = jobs.max(1);
    for (c, chunk) in grid.chunks(jobs).enumerate() {
        let done: Vec<SweepRun> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(j, point)| {
                    let run_one = &run_one;
                    s.spawn(move || run_one(c * jobs + j, point))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for (j, r) in done.into_iter().enumerate() {
            runs[c * jobs + j] = Some(r);
        }
    }
    let runs: Vec<SweepRun> = runs.into_iter().flatten().collect();
    println!("{:<7} {:>8}  overrides", "run", "mAP@all");
    for r in &runs {
        let map = r.map_all.map_or("failed".to_string(), |m| format!("{m:.4}"));
        println!("{:<7} {:>8}  {}", r.name, map, r.overrides.join(" "));
    }
    #[derive(Serialize)]
    struct Body<'a> {
        axes: &'a [String],
        runs: &'a [SweepRun],
    }
    write_json(&out.join("sweep.json"), "sweep", cfg, Body { axes, runs: &runs })?;
    Ok(runs)
}
