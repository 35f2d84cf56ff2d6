//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error, 3 I/O failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::config::{resolve_seed, PipelineConfig};
use crate::error::{Error, Result};
use crate::event_model::io::{read_events_file, write_events_file, write_fused_csv};
use crate::event_model::{fuse_stream, moving_blob_frames, sample_and_normalize, synth_events, MotionPattern};
use crate::oracles::bench::{bench_patch_vs_knn, patch_size_sweep, BenchOptions, PATCH_SWEEP};
use crate::pipeline::OmniEvent;
use crate::selfcheck;
use crate::serial_pipeline::{
    self, pool_map, receptive_field, receptive_field_schedule, select_order, serialize_codes, Branch,
};
use crate::sfc_codec::{decode, encode, CurveCode, CurveKind, CurveOrder};

pub const SEED_ENV: &str = "OMNIEVENT_SEED";

#[derive(Debug, Parser)]
#[command(name = "omnievent", version, about = "Event-camera stream tensorization")]
pub struct Cli {
    /// Pipeline config file (flat TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the config file and OMNIEVENT_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for stage parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// One pixel stepping 0, 1.5 tau, 3 tau: two positive events.
    Ramp,
    Horizontal,
    Vertical,
    Diagonal,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event stream (CSV, or EVT1 for .evt/.evt1 paths).
    Synth {
        #[arg(long, value_enum, default_value_t = Scenario::Ramp)]
        scenario: Scenario,
        #[arg(long, short)]
        out: PathBuf,
        /// Frames for the moving-blob scenarios.
        #[arg(long, default_value_t = 24)]
        frames: usize,
        /// Duration in seconds for the moving-blob scenarios.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Start offset of the blob along its path, in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        phase: f64,
    },
    /// Fuse events per pixel and temporal segment; writes `h,w,t_avg,p_acc,c` CSV.
    Fuse {
        input: PathBuf,
        /// Temporal segments (config `segments` when absent).
        #[arg(long = "T", alias = "segments")]
        segments: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fuse, sample and sort points along a branch curve; writes one CSV row per point in curve order.
    Serialize {
        input: PathBuf,
        /// S, T or ST.
        #[arg(long, default_value = "ST")]
        branch: Branch,
        /// Curve; drawn from the branch's allowed orders when absent.
        #[arg(long)]
        order: Option<CurveKind>,
        /// Patch size (first encoder stage when absent).
        #[arg(long)]
        patch: Option<usize>,
        /// Also report the pooling group of every point after shifting codes by this many bits.
        #[arg(long)]
        y: Option<u32>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Encode grid cells to a curve code.
    Encode {
        #[arg(long)]
        order: CurveKind,
        #[arg(long)]
        dims: u32,
        #[arg(long, default_value_t = 10)]
        bits: u32,
        /// One cell coordinate per axis.
        #[arg(required = true)]
        cells: Vec<u32>,
    },
    /// Decode curve codes to grid cells, one line per code.
    Decode {
        #[arg(long)]
        order: CurveKind,
        #[arg(long)]
        dims: u32,
        #[arg(long, default_value_t = 10)]
        bits: u32,
        #[arg(required = true)]
        codes: Vec<u64>,
    },
    /// Run the full pipeline on an event file and write an OMNX tensor.
    Tensorize {
        /// Event file (config `input` when absent).
        input: Option<PathBuf>,
        /// Output path (config `output` when absent).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Checkpoint to load (overrides config `weights`).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the weights used to this checkpoint path.
        #[arg(long)]
        save_weights: Option<PathBuf>,
        /// Also write one CSV per channel into this directory.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Codec bijection, curve adjacency and gradient checks.
    Selfcheck {
        /// Smaller exhaustive sweeps.
        #[arg(long)]
        quick: bool,
    },
    /// Curve patches against brute-force KNN.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [2048usize, 4096, 8192])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 512)]
        k: usize,
        #[arg(long, default_value_t = 512)]
        patch: usize,
        /// Number of data seeds per size.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long, default_value = "ST")]
        branch: Branch,
        /// Run sizes concurrently on the thread pool.
        #[arg(long)]
        parallel: bool,
        /// Add the patch-size locality sweep.
        #[arg(long)]
        sweep: bool,
        /// Write CSV here instead of printing it.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the configured branches and their receptive fields.
    Info,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn io_context(path: &Path, err: Error) -> Error {
    match err {
        Error::Io(e) => Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        other => other,
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_context(p, e.into())),
        None => Ok(io::stdout().write_all(bytes)?),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_context(p, e.into()))?;
            PipelineConfig::from_toml_str(&text)
        }
    }
}

fn read_events(path: &Path) -> Result<Vec<crate::event_model::Event>> {
    read_events_file(path).map_err(|e| io_context(path, e))
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    if cli.threads == 0 {
        return Err(Error::Config { line: None, message: "--threads must be at least 1".into() });
    }
    // a pool may already exist when called repeatedly in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    let config = load_config(cli.config.as_deref())?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, config.seed, env.as_deref())
        .map_err(|e| Error::Config { line: None, message: e.to_string() })?;

    match cli.command {
        Command::Synth { scenario, out, frames, duration, phase } => {
            let g = config.geometry;
            let (frames, times) = match scenario {
                Scenario::Ramp => {
                    let levels = [0.0, 1.5 * g.tau, 3.0 * g.tau];
                    let frames = levels
                        .iter()
                        .map(|&l| {
                            let mut f = Array2::zeros((g.height, g.width));
                            f[[0, 0]] = l;
                            f
                        })
                        .collect();
                    (frames, vec![0.0, 1.0, 2.0])
                }
                other => {
                    let pattern = match other {
                        Scenario::Horizontal => MotionPattern::Horizontal,
                        Scenario::Vertical => MotionPattern::Vertical,
                        _ => MotionPattern::Diagonal,
                    };
                    moving_blob_frames(&g, pattern, frames, duration, phase)
                }
            };
            let events = synth_events(&frames, &times, &g)?;
            write_events_file(&out, &events).map_err(|e| io_context(&out, e))?;
            eprintln!("{} events -> {}", events.len(), out.display());
        }
        Command::Fuse { input, segments, out } => {
            let events = read_events(&input)?;
            let fused = fuse_stream(&events, segments.unwrap_or(config.segments))?;
            let mut buf = Vec::new();
            write_fused_csv(&mut buf, &fused)?;
            write_output(out.as_deref(), &buf)?;
        }
        Command::Serialize { input, branch, order, patch, y, out } => {
            let events = read_events(&input)?;
            for e in &events {
                e.validate(&config.geometry)?;
            }
            let bcfg = config.branch(branch);
            let fused = fuse_stream(&events, config.segments)?;
            let batch =
                sample_and_normalize(&fused, config.samples, &config.geometry, config.segments, seed, config.normalize)?;
            let order = match order {
                Some(kind) => CurveOrder::new(kind, branch.axes().dims(), bcfg.bits)?,
                None => select_order(0, bcfg, seed)?,
            };
            let patch = patch.unwrap_or(bcfg.enc_patch[0]);
            let codes = serial_pipeline::encode_points(&batch, branch.axes(), &order)?;
            let ser = serialize_codes(codes, order, patch)?;
            let patch_of = ser.patch_of_point();
            let groups = y.map(|y| pool_map(&ser, y)).transpose()?;
            let mut buf = String::from("rank,index,h,w,x1,x2,x3,code,patch");
            if groups.is_some() {
                buf.push_str(",group");
            }
            buf.push('\n');
            for (rank, &i) in ser.perm.iter().enumerate() {
                let p = &batch.events[i];
                buf.push_str(&format!(
                    "{rank},{i},{},{},{},{},{},{},{}",
                    p.h, p.w, p.x1, p.x2, p.x3, ser.codes[i].0, patch_of[i]
                ));
                if let Some(g) = &groups {
                    buf.push_str(&format!(",{}", g.group[i]));
                }
                buf.push('\n');
            }
            write_output(out.as_deref(), buf.as_bytes())?;
            let pooled = groups.map(|g| format!(", {} groups", g.n_groups)).unwrap_or_default();
            eprintln!("branch {branch}, order {}, {} points, {} patches{pooled}", order.kind, ser.len(), ser.patches.len());
        }
        Command::Encode { order, dims, bits, cells } => {
            let order = CurveOrder::new(order, dims, bits)?;
            println!("{}", encode(&cells, &order)?.0);
        }
        Command::Decode { order, dims, bits, codes } => {
            let order = CurveOrder::new(order, dims, bits)?;
            for c in codes {
                let cells = decode(CurveCode(c), &order)?;
                println!("{}", cells.iter().map(u32::to_string).collect::<Vec<_>>().join(" "));
            }
        }
        Command::Tensorize { input, out, weights, save_weights, csv_dir } => {
            let input = input.or_else(|| config.input.clone()).ok_or_else(|| Error::Config {
                line: None,
                message: "no input file (pass a path or set `input`)".into(),
            })?;
            let out = out.or_else(|| config.output.clone()).ok_or_else(|| Error::Config {
                line: None,
                message: "no output file (pass --out or set `output`)".into(),
            })?;
            let events = read_events(&input)?;
            let mut config = config;
            if weights.is_some() {
                config.weights = weights;
            }
            let model = OmniEvent::from_config(config, seed)?;
            let tensor = model.tensorize(&events, seed)?;
            fs::write(&out, tensor.to_omnx()).map_err(|e| io_context(&out, e.into()))?;
            if let Some(path) = save_weights {
                model.save_weights_to(&path).map_err(|e| io_context(&path, e))?;
            }
            if let Some(dir) = csv_dir {
                fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e.into()))?;
                for (c, name) in tensor.channel_names.iter().enumerate() {
                    let path = dir.join(format!("{name}.csv"));
                    let mut buf = Vec::new();
                    tensor.write_channel_csv(c, &mut buf)?;
                    fs::write(&path, buf).map_err(|e| io_context(&path, e.into()))?;
                }
            }
            let (h, w, c) = tensor.data.dim();
            eprintln!("{} events -> {h}x{w}x{c} tensor at {}", events.len(), out.display());
        }
        Command::Selfcheck { quick } => {
            let lines = selfcheck::run_all(quick);
            let failed = lines.iter().filter(|l| !l.passed).count();
            for l in &lines {
                println!("{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
            }
            println!("{} of {} checks passed", lines.len() - failed, lines.len());
            return Ok(if failed == 0 { 0 } else { 1 });
        }
        Command::Bench { sizes, k, patch, repeats, branch, parallel, sweep, csv } => {
            let opts = BenchOptions {
                sizes,
                k,
                patch,
                seeds: (0..repeats.max(1)).map(|r| seed.wrapping_add(r)).collect(),
                branch,
                parallel,
                ..BenchOptions::default()
            };
            let mut report = bench_patch_vs_knn(&opts)?;
            if sweep {
                let n = opts.sizes.iter().copied().max().unwrap_or(4096);
                report.rows.extend(patch_size_sweep(n, &PATCH_SWEEP, branch, seed)?.rows);
            }
            print!("{}", report.to_table());
            for (a, b, r) in report.doubling_ratios("patch-vs-knn", |r| Some(r.serialize_secs)) {
                println!("serialize ratio {a} -> {b}: {r:.2}");
            }
            for (a, b, r) in report.doubling_ratios("patch-vs-knn", |r| r.knn_secs) {
                println!("knn ratio {a} -> {b}: {r:.2}");
            }
            match csv {
                Some(path) => fs::write(&path, report.to_csv()).map_err(|e| io_context(&path, e.into()))?,
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Info => print!("{}", info_text(&config)?),
    }
    Ok(0)
}

fn list<T: ToString>(v: &[T]) -> String {
    format!("[{}]", v.iter().map(T::to_string).collect::<Vec<_>>().join(", "))
}

/// Branch layouts and receptive fields.
pub fn info_text(config: &PipelineConfig) -> Result<String> {
    let mut s = format!(
        "sensor {}x{} tau {}, segments {}, samples {}\n",
        config.geometry.height, config.geometry.width, config.geometry.tau, config.segments, config.samples
    );
    for branch in Branch::ALL {
        let b = config.branch(branch);
        let layers = b.pooling_layers() as u32;
        let p = b.enc_patch[0] as u64;
        let y0 = b.y_schedule.first().copied().unwrap_or(0);
        s += &format!("branch {branch} ({:?}): orders {}\n", branch.axes(), list(&serial_pipeline::order_names(&b.orders)));
        s += &format!(
            "  encoder depths {} channels {} heads {} patch {}\n",
            list(&b.enc_depths),
            list(&b.enc_channels),
            list(&b.enc_heads),
            list(&b.enc_patch)
        );
        s += &format!(
            "  decoder depths {} channels {} heads {} patch {}\n",
            list(&b.dec_depths),
            list(&b.dec_channels),
            list(&b.dec_heads),
            list(&b.dec_patch)
        );
        s += &format!("  pooling shifts {} stride {}\n", list(&b.y_schedule), list(&b.stride));
        let uniform = if layers > 0 { receptive_field(p, y0, layers)? } else { p };
        s += &format!("  receptive field P*2^(y*L): P={p} y={y0} L={layers} -> {uniform}\n");
        s += &format!("  receptive field over shifts {}: {}\n", list(&b.y_schedule), receptive_field_schedule(p, &b.y_schedule)?);
    }
    s += &format!(
        "fusion: channels {} rounds {} sequence {} score hidden {} -> output {}\n",
        config.sta.channels,
        config.sta.rounds,
        config.sta.seq_len,
        config.sta.fc_hidden,
        config.sta.out_channels()
    );
    s += &format!("tensor: {}x{}x{}\n", config.geometry.height, config.geometry.width, config.sta.out_channels() + 4);
    Ok(s)
}
