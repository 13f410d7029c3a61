use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use semvox::eval::{evaluate, ApMode, Detection, GroundTruth};
use semvox::geometry::Calibration;
use semvox::gradcheck::{run_gradcheck, GradcheckConfig};
use semvox::io::kitti::{encode_labels, read_calib, read_labels};
use semvox::io::scene::{calib_path, list_frames, list_stems};
use semvox::io::{
    load_model, read_scene, save_model, synth_scene, write_atomic, write_featuremap, write_painted,
    write_scene, LabelObject, SynthSceneSpec,
};
use semvox::network::{BackboneConfig, FusionScheme};
use semvox::pillars::GridConfig;
use semvox::pipeline::{desk_grid, Model, PostProcess};

#[derive(Parser)]
#[command(
    name = "semvox",
    version,
    about = "Semantic voxel pedestrian detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridPreset {
    /// 0.16 m pillars over x [0, 48), y [-20, 20): 300 × 250 cells.
    Kitti,
    /// 0.32 m pillars over x [0, 25.6), y [-12.8, 12.8): 80 × 80 cells.
    Desk,
}

impl GridPreset {
    fn config(self) -> GridConfig {
        match self {
            GridPreset::Kitti => GridConfig::kitti_pedestrian(),
            GridPreset::Desk => desk_grid(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Depth {
    /// 4/6/6 layers with 64/128/256 channels.
    Full,
    /// One layer per block with 16/32/32 channels.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "11")]
    Eleven,
    #[value(name = "40")]
    Forty,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene bundle directory.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        peds: usize,
        #[arg(long, default_value_t = 2)]
        poles: usize,
        #[arg(long, default_value_t = 1500)]
        clutter: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        fidelity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paint one frame of a scene and write an SVPC file.
    Paint {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frame: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the geometric and semantic feature maps of one frame.
    Encode {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frame: Option<String>,
        #[arg(long)]
        scheme: Option<FusionScheme>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value = "kitti")]
        grid: GridPreset,
        /// Output directory for geometric.svfm and semantic.svfm.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write detections in KITTI label format.
    Forward {
        #[arg(long)]
        scene: PathBuf,
        /// Single frame to process; all frames when omitted.
        #[arg(long)]
        frame: Option<String>,
        #[arg(long)]
        scheme: Option<FusionScheme>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value = "kitti")]
        grid: GridPreset,
        #[arg(long, default_value_t = 0.3)]
        score_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        nms_threshold: f64,
        /// Frames processed concurrently, capped by SEMVOX_THREADS.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// A file for a single frame, otherwise a directory of `<id>.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate detection label files against ground-truth label files.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, value_enum, default_value = "40")]
        mode: Mode,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the loss gradients; exits non-zero on failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
    },
    /// Write a randomly initialized checkpoint.
    Init {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "early")]
        scheme: FusionScheme,
        #[arg(long, value_enum, default_value = "full")]
        depth: Depth,
        #[arg(long, value_enum, default_value = "kitti")]
        grid: GridPreset,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth {
            seed,
            peds,
            poles,
            clutter,
            noise,
            fidelity,
            out,
        } => {
            let spec = SynthSceneSpec {
                seed,
                pedestrians: peds,
                poles,
                clutter,
                noise,
                fidelity,
                ..SynthSceneSpec::default()
            };
            let bundle = synth_scene(&spec)?;
            write_scene(&bundle, &out).with_context(|| format!("writing {}", out.display()))?;
            let n = bundle.labels.as_ref().map_or(0, Vec::len);
            println!(
                "wrote frame {} ({} points, {n} pedestrians) to {}",
                bundle.frame_id,
                bundle.cloud.len(),
                out.display()
            );
        }
        Command::Paint { scene, frame, out } => {
            let id = pick_frame(&scene, frame)?;
            let painted = read_scene(&scene, &id)?.painted()?;
            write_painted(&painted, &out)?;
            println!("painted {} points", painted.len());
        }
        Command::Encode {
            scene,
            frame,
            scheme,
            weights,
            grid,
            out,
        } => {
            let grid = grid.config();
            let model = load_checked(&weights, scheme, &grid)?;
            let id = pick_frame(&scene, frame)?;
            let painted = read_scene(&scene, &id)?.painted()?;
            let enc = model.encode(&painted, &grid)?;
            write_featuremap(&enc.geometric, &out.join("geometric.svfm"))?;
            write_featuremap(&enc.semantic, &out.join("semantic.svfm"))?;
            println!(
                "encoded {}x{} cells: {} geometric + {} semantic channels",
                enc.geometric.height,
                enc.geometric.width,
                enc.geometric.channels,
                enc.semantic.channels
            );
        }
        Command::Forward {
            scene,
            frame,
            scheme,
            weights,
            grid,
            score_threshold,
            nms_threshold,
            workers,
            out,
        } => {
            let grid = grid.config();
            let model = load_checked(&weights, scheme, &grid)?;
            let post = PostProcess {
                score_threshold,
                nms_threshold,
            };
            let single = frame.is_some();
            let ids = match frame {
                Some(id) => vec![id],
                None => list_frames(&scene)?,
            };
            let to_dir = !(single || ids.len() == 1) || out.is_dir();
            let run_frame = |id: &String| -> Result<usize> {
                let bundle = read_scene(&scene, id)?;
                let dets = model.detect(&bundle.painted()?, &grid, &post)?;
                let labels: Vec<LabelObject> = dets
                    .iter()
                    .map(|d| LabelObject::from_detection(d, &bundle.calib))
                    .collect();
                let path = if to_dir {
                    out.join(format!("{id}.txt"))
                } else {
                    out.clone()
                };
                write_atomic(&path, encode_labels(&labels, &bundle.calib).as_bytes())?;
                Ok(dets.len())
            };
            let threads = worker_count(workers);
            let counts: Vec<usize> = if threads > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()?;
                pool.install(|| ids.par_iter().map(run_frame).collect::<Result<_>>())?
            } else {
                ids.iter().map(run_frame).collect::<Result<_>>()?
            };
            println!(
                "{} detections over {} frame(s)",
                counts.iter().sum::<usize>(),
                ids.len()
            );
        }
        Command::Eval {
            dets,
            gts,
            mode,
            iou,
            out,
        } => {
            let mode = match mode {
                Mode::Eleven => ApMode::Point11,
                Mode::Forty => ApMode::Point40,
            };
            let (det_frames, gt_frames) = load_eval_sets(&dets, &gts)?;
            let report = evaluate(&det_frames, &gt_frames, iou, mode);
            write_atomic(&out, report.to_key_values().as_bytes())?;
            print!("{}", report.to_table());
        }
        Command::Gradcheck { seed, scenes } => {
            let report = run_gradcheck(&GradcheckConfig {
                seed,
                scenes,
                ..GradcheckConfig::default()
            })?;
            println!(
                "{} scenes, {} comparisons, worst error/tolerance {:.3e}, {} mismatches",
                report.scenes,
                report.comparisons,
                report.worst_ratio,
                report.mismatches.len()
            );
            if let Some(m) = report.mismatches.first() {
                println!(
                    "first mismatch: scene {} term {} entry {}: analytic {:e} numeric {:e}",
                    m.scene,
                    m.term.name(),
                    m.index,
                    m.analytic,
                    m.numeric
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Init {
            seed,
            scheme,
            depth,
            grid,
            out,
        } => {
            let cfg = match depth {
                Depth::Full => BackboneConfig::pointpillars(scheme),
                Depth::Desk => BackboneConfig::desk(scheme),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Model::random(cfg, &grid.config(), &mut rng)?;
            save_model(&model, &out)?;
            println!("wrote {scheme} checkpoint to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn worker_count(requested: usize) -> usize {
    let cap = std::env::var("SEMVOX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(usize::MAX);
    requested.max(1).min(cap)
}

fn pick_frame(scene: &Path, frame: Option<String>) -> Result<String> {
    match frame {
        Some(id) => Ok(id),
        None => Ok(list_frames(scene)?.remove(0)),
    }
}

fn load_checked(weights: &Path, scheme: Option<FusionScheme>, grid: &GridConfig) -> Result<Model> {
    let model = load_model(weights).with_context(|| format!("loading {}", weights.display()))?;
    if let Some(s) = scheme {
        if s != model.config().scheme {
            bail!(
                "checkpoint was built for {} fusion, not {s}",
                model.config().scheme
            );
        }
    }
    model.validate(grid)?;
    Ok(model)
}

/// A bundle directory's `label_2` when present, otherwise the directory itself.
fn label_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("label_2");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Per-frame pedestrian detections and ground truth, aligned on the ground
/// truth's frame ids. Boxes are converted with the frame's calibration when
/// the ground-truth bundle has one.
fn load_eval_sets(dets: &Path, gts: &Path) -> Result<(Vec<Vec<Detection>>, Vec<Vec<GroundTruth>>)> {
    let (det_dir, gt_dir) = (label_dir(dets), label_dir(gts));
    let ids =
        list_stems(&gt_dir, "txt").with_context(|| format!("listing {}", gt_dir.display()))?;
    let mut det_frames = Vec::with_capacity(ids.len());
    let mut gt_frames = Vec::with_capacity(ids.len());
    for id in &ids {
        let cp = calib_path(gts, id);
        let calib = if cp.exists() {
            read_calib(&cp)?
        } else {
            Calibration::canonical()
        };
        let gt = read_labels(&gt_dir.join(format!("{id}.txt")), &calib)?;
        gt_frames.push(
            gt.iter()
                .filter(|o| o.is_pedestrian())
                .map(LabelObject::ground_truth)
                .collect(),
        );
        let dp = det_dir.join(format!("{id}.txt"));
        let det = if dp.exists() {
            read_labels(&dp, &calib)?
        } else {
            Vec::new()
        };
        det_frames.push(
            det.iter()
                .filter(|o| o.is_pedestrian())
                .map(LabelObject::detection)
                .collect(),
        );
    }
    Ok((det_frames, gt_frames))
}
