mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use grdo::codec;
use grdo::train::{self, scene, Dataset, EvalSummary, TrainConfig, TrainLog, View};
use grdo::{ply, ModelState};

#[derive(Parser)]
#[command(name = "grdo", version, about = "Rate-distortion optimized compression of Gaussian splatting scenes")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Training configuration (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every file a command writes.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for rendering and quantization.
    #[arg(long, global = true, env = "GRDO_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and render its reference views.
    GenScene,
    /// Fit a Gaussian cloud to a dataset with the photometric loss only.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        /// Starting cloud; random when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Rate-distortion train a fitted cloud and write the bitstream.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rd_iters: Option<usize>,
        #[arg(long)]
        lambda_gs: Option<f64>,
        #[arg(long)]
        lambda_sh: Option<f64>,
        /// Move the scene centroid to the origin before coding.
        #[arg(long)]
        recenter: bool,
    },
    /// Expand a bitstream back into a PLY.
    Decompress {
        #[arg(long)]
        input: PathBuf,
    },
    /// Render one dataset camera.
    Render {
        /// `.grdo` bitstream or PLY checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// View name from the dataset's camera file.
        #[arg(long)]
        camera: String,
    },
    /// PSNR / SSIM / L1 of a model against a dataset split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Train and encode one model per (lambda_gs:lambda_sh) grid point.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated `lambda_gs:lambda_sh` pairs.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
        #[arg(long)]
        rd_iters: Option<usize>,
        /// Skip the SVG plot.
        #[arg(long)]
        no_svg: bool,
    },
    /// Byte composition of a bitstream.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = match &g.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::GenScene => gen_scene(&config, &g.out),
        Command::Fit { dataset, init, iters } => fit(config, &dataset, init.as_deref(), iters, &g.out),
        Command::Compress {
            input,
            dataset,
            rd_iters,
            lambda_gs,
            lambda_sh,
            recenter,
        } => {
            if let Some(n) = rd_iters {
                config.rd_iters = n;
            }
            if let Some(l) = lambda_gs {
                config.lambda_gs_prune = l;
            }
            if let Some(l) = lambda_sh {
                config.lambda_sh_prune = l;
            }
            config.validate()?;
            compress(&config, &input, &dataset, recenter, &g.out)
        }
        Command::Decompress { input } => decompress(&input, &g.out),
        Command::Render { model, dataset, camera } => render_view(&config, &model, &dataset, &camera, &g.out),
        Command::Eval { model, dataset, split } => eval(&config, &model, &dataset, split, &g.out),
        Command::Sweep {
            input,
            dataset,
            grid,
            rd_iters,
            no_svg,
        } => {
            if let Some(n) = rd_iters {
                config.rd_iters = n;
            }
            sweep(&config, &input, &dataset, &grid, !no_svg, &g.out)
        }
        Command::Report { input } => report(&input, &g.out),
    }
}

fn prepare_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn gen_scene(config: &TrainConfig, out: &Path) -> CmdResult {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cloud = scene::synthetic_scene(config.scene_clusters, config.scene_gaussians, &mut rng);
    let dataset = Dataset::from_scene(&cloud, config)?;
    prepare_out(out)?;
    ply::save_ply(&cloud, out.join("scene.ply"))?;
    dataset.save(out.join("dataset"))?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    println!(
        "{} Gaussians, {} views ({} held out) -> {}",
        cloud.len(),
        dataset.views.len(),
        dataset.views.iter().filter(|v| v.test).count(),
        out.display()
    );
    Ok(())
}

fn fit(mut config: TrainConfig, dataset: &Path, init: Option<&Path>, iters: Option<usize>, out: &Path) -> CmdResult {
    if let Some(n) = iters {
        config.pretrain_iters = n;
    }
    config.validate()?;
    let dataset = load_dataset(dataset)?;
    let start = match init {
        Some(p) => ply::load_ply(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            scene::random_init(config.init_gaussians, config.init_radius, &mut rng)
        }
    };
    prepare_out(out)?;
    let mut log = TrainLog::default();
    let cloud = train::pretrain(start, &dataset, &config, Some(&mut log))?;
    ply::save_ply(&cloud, out.join("pretrained.ply"))?;
    log.write_csv(out.join("fit_log.csv"))?;
    let e = train::evaluate(&cloud, None, None, &dataset.test(), config.background)?;
    println!("fit {} Gaussians: test PSNR {:.2} dB, SSIM {:.4}", cloud.len(), e.psnr, e.ssim);
    Ok(())
}

#[derive(Serialize)]
struct CompressRow {
    bytes: usize,
    rate_mb: f64,
    input_ply_bytes: u64,
    ratio: f64,
    psnr: f64,
    ssim: f64,
    survivors: usize,
    gaussian_prune_ratio: f64,
    sh_prune_ratio: f64,
    mean_sh_degree: f64,
}

fn compress(config: &TrainConfig, input: &Path, dataset: &Path, recenter: bool, out: &Path) -> CmdResult {
    let mut cloud = ply::load_ply(input).with_context(|| format!("loading {}", input.display()))?;
    let input_bytes = fs::metadata(input)?.len();
    let mut dataset = load_dataset(dataset)?;
    prepare_out(out)?;
    if recenter {
        let c = train::recenter(&mut cloud, &mut dataset);
        fs::write(out.join("offset.csv"), format!("x,y,z\n{},{},{}\n", c[0], c[1], c[2]))?;
        log::info!("recentered by ({}, {}, {})", c[0], c[1], c[2]);
    }
    let mut log = TrainLog::default();
    let point = train::train_rate_point(
        &cloud,
        &dataset,
        config,
        config.lambda_gs_prune,
        config.lambda_sh_prune,
        Some(&mut log),
    )?;
    fs::write(out.join("scene.grdo"), &point.encoded.bytes)?;
    point.state.save(out.join("model.ply"))?;
    log.write_csv(out.join("rd_log.csv"))?;
    let bytes = point.encoded.bytes.len();
    let row = CompressRow {
        bytes,
        rate_mb: bytes as f64 / 1e6,
        input_ply_bytes: input_bytes,
        ratio: input_bytes as f64 / bytes as f64,
        psnr: point.eval.psnr,
        ssim: point.eval.ssim,
        survivors: point.survivors(),
        gaussian_prune_ratio: point.state.masks.gaussian_prune_ratio(),
        sh_prune_ratio: point.state.masks.sh_prune_ratio(),
        mean_sh_degree: point.state.masks.mean_sh_degree(),
    };
    println!(
        "{} -> {} bytes ({:.1}x), PSNR {:.2} dB, SSIM {:.4}, {} survivors",
        input_bytes, bytes, row.ratio, row.psnr, row.ssim, row.survivors
    );
    write_csv(&out.join("metrics.csv"), &[row])?;
    Ok(())
}

fn decompress(input: &Path, out: &Path) -> CmdResult {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let scene = codec::decode(&bytes).map_err(|e| anyhow!("decoding {}: {e}", input.display()))?;
    prepare_out(out)?;
    ply::save_ply(&scene.cloud, out.join("decoded.ply"))?;
    println!("{} Gaussians -> {}", scene.cloud.len(), out.join("decoded.ply").display());
    Ok(())
}

/// A decoded bitstream renders as-is; a PLY checkpoint renders through its
/// masks and codebooks when a sidecar is present.
fn load_model(path: &Path) -> anyhow::Result<ModelState> {
    if path.extension().is_some_and(|e| e == "grdo") {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let scene = codec::decode(&bytes).map_err(|e| anyhow!("decoding {}: {e}", path.display()))?;
        Ok(ModelState::new(scene.cloud))
    } else {
        ModelState::load(path).with_context(|| format!("loading {}", path.display()))
    }
}

fn render_view(config: &TrainConfig, model: &Path, dataset: &Path, camera: &str, out: &Path) -> CmdResult {
    let state = load_model(model)?;
    let dataset = load_dataset(dataset)?;
    let view = dataset
        .views
        .iter()
        .find(|v| v.name == camera)
        .ok_or_else(|| Failure::Usage(format!("no camera named `{camera}` in the dataset")))?;
    let img = render_state(&state, view, config.background)?;
    prepare_out(out)?;
    let path = out.join(format!("{camera}.ppm"));
    img.clamped().save_ppm(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn render_state(state: &ModelState, view: &View, background: [f64; 3]) -> grdo::Result<grdo::RenderedImage> {
    let options = grdo::render::RenderOptions {
        background,
        ..Default::default()
    };
    let quant = match &state.bank {
        Some(bank) => Some(grdo::ecvq::quantize_cloud(&state.cloud, &state.masks, bank)?.view),
        None => None,
    };
    let (img, _) = grdo::render::render(&state.cloud, &view.camera, Some(&state.masks), quant.as_ref(), &options)?;
    Ok(img)
}

#[derive(Serialize)]
struct EvalRow {
    view: String,
    psnr: f64,
    ssim: f64,
    l1: f64,
}

fn eval(config: &TrainConfig, model: &Path, dataset: &Path, split: Split, out: &Path) -> CmdResult {
    let state = load_model(model)?;
    let dataset = load_dataset(dataset)?;
    let views: Vec<&View> = match split {
        Split::Train => dataset.train().collect(),
        Split::Test => dataset.test(),
        Split::All => dataset.views.iter().collect(),
    };
    if views.is_empty() {
        return Err(Failure::Usage("the selected split has no views".into()));
    }
    let mut rows = Vec::new();
    for v in &views {
        let m = grdo::metrics::metrics(&render_state(&state, v, config.background)?, &v.image)?;
        rows.push(EvalRow {
            view: v.name.clone(),
            psnr: m.psnr,
            ssim: m.ssim,
            l1: m.l1,
        });
    }
    let mean: EvalSummary = train::evaluate_state(&state, &views, config.background)?;
    println!("{:<12} {:>9} {:>8} {:>8}", "view", "psnr", "ssim", "l1");
    for r in &rows {
        println!("{:<12} {:>9.3} {:>8.4} {:>8.4}", r.view, r.psnr, r.ssim, r.l1);
    }
    println!("{:<12} {:>9.3} {:>8.4} {:>8.4}", "mean", mean.psnr, mean.ssim, mean.l1);
    rows.push(EvalRow {
        view: "mean".into(),
        psnr: mean.psnr,
        ssim: mean.ssim,
        l1: mean.l1,
    });
    prepare_out(out)?;
    write_csv(&out.join("eval.csv"), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    lambda_gs_prune: f64,
    lambda_sh_prune: f64,
    bytes: usize,
    rate_mb: f64,
    psnr: f64,
    ssim: f64,
    survivors: usize,
    gaussian_prune_ratio: f64,
    sh_prune_ratio: f64,
    mean_sh_degree: f64,
}

fn parse_grid(grid: &[String]) -> Result<Vec<(f64, f64)>, Failure> {
    let points = grid
        .iter()
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| Failure::Usage(format!("grid point `{item}` is not `lambda_gs:lambda_sh`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0 && v.is_finite())
                    .ok_or_else(|| Failure::Usage(format!("bad lambda `{s}` in grid point `{item}`")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    if points.len() < 2 {
        return Err(Failure::Usage("a sweep needs at least 2 grid points".into()));
    }
    Ok(points)
}

fn sweep(config: &TrainConfig, input: &Path, dataset: &Path, grid: &[String], svg: bool, out: &Path) -> CmdResult {
    let points = parse_grid(grid)?;
    config.validate()?;
    let cloud = ply::load_ply(input).with_context(|| format!("loading {}", input.display()))?;
    let dataset = load_dataset(dataset)?;
    prepare_out(out)?;
    let csv_path = out.join("rd.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut plot = Vec::new();
    for (k, &(gs, sh)) in points.iter().enumerate() {
        let point = train::train_rate_point(&cloud, &dataset, config, gs, sh, None)
            .with_context(|| format!("grid point {gs}:{sh}"))?;
        fs::write(out.join(format!("point_{k}.grdo")), &point.encoded.bytes)?;
        let bytes = point.encoded.bytes.len();
        let row = SweepRow {
            lambda_gs_prune: gs,
            lambda_sh_prune: sh,
            bytes,
            rate_mb: bytes as f64 / 1e6,
            psnr: point.eval.psnr,
            ssim: point.eval.ssim,
            survivors: point.survivors(),
            gaussian_prune_ratio: point.state.masks.gaussian_prune_ratio(),
            sh_prune_ratio: point.state.masks.sh_prune_ratio(),
            mean_sh_degree: point.state.masks.mean_sh_degree(),
        };
        println!(
            "{gs}:{sh} -> {bytes} bytes, PSNR {:.2} dB, {} survivors, mean SH degree {:.2}",
            row.psnr, row.survivors, row.mean_sh_degree
        );
        plot.push((row.rate_mb, row.psnr));
        // Flush per row so a failing later point leaves earlier rows intact.
        w.serialize(&row)?;
        w.flush()?;
    }
    if svg {
        fs::write(out.join("rd.svg"), svg::rd_plot(&plot))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompositionRow {
    section: &'static str,
    bytes: usize,
    share: f64,
}

fn report(input: &Path, out: &Path) -> CmdResult {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let scene = codec::decode(&bytes).map_err(|e| anyhow!("decoding {}: {e}", input.display()))?;
    let comp = scene.composition;
    let total = bytes.len();
    if comp.total() != total {
        return Err(anyhow!("composition sums to {} bytes, file has {total}", comp.total()).into());
    }
    let share = |b: usize| b as f64 / total as f64;
    let mut sections: Vec<CompositionRow> = comp
        .rows()
        .iter()
        .map(|&(section, b)| CompositionRow {
            section,
            bytes: b,
            share: share(b),
        })
        .collect();
    sections.push(CompositionRow {
        section: "total",
        bytes: total,
        share: 1.0,
    });
    let mut indexes: Vec<CompositionRow> = comp
        .indexes
        .rows()
        .iter()
        .map(|&(section, b)| CompositionRow {
            section,
            bytes: b,
            share: share(b),
        })
        .collect();
    indexes.push(CompositionRow {
        section: "total",
        bytes: comp.indexes.total(),
        share: share(comp.indexes.total()),
    });
    prepare_out(out)?;
    write_csv(&out.join("composition.csv"), &sections)?;
    write_csv(&out.join("indexes.csv"), &indexes)?;
    let n = scene.cloud.len().max(1) as f64;
    println!("{} Gaussians, {total} bytes", scene.cloud.len());
    for r in sections.iter().chain(&indexes) {
        println!("{:<12} {:>10} {:>7.2}%  {:>8.3} B/Gaussian", r.section, r.bytes, 100.0 * r.share, r.bytes as f64 / n);
    }
    Ok(())
}
