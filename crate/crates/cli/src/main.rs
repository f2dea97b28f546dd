//! `tvc`: compress, pack, inspect and combine task vectors from the shell.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tvc_core::bench::{self, LoadMode};
use tvc_core::compose::{self, ComposeWeights, LowRankModule, OptimizeConfig};
use tvc_core::sweep::{self, SweepGrid};
use tvc_core::{
    codec, compress, decompose, merge, tensor_store, ternary_ops, BitmaskPair, CompressOptions,
    CompressedArtifact, DType, Format, Group, MergeMethod, MergeSpec, SigmaMode, TaskVector,
};

#[derive(Parser)]
#[command(name = "tvc", version, about = "Sparse ternary compression of task vectors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the manifest of a container or the headers of a blob.
    Inspect { path: PathBuf },
    /// Write `ft - init` as a container.
    Diff {
        ft: PathBuf,
        init: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "f32", value_parser = parse_dtype)]
        dtype: DType,
    },
    /// Per-tensor and pooled mean, std, max and min.
    Stats { tau: PathBuf },
    /// Sparsify and quantize a task vector into an artifact.
    Compress {
        tau: PathBuf,
        /// Percent of entries kept per tensor.
        #[arg(short, long)]
        k: f64,
        #[arg(long)]
        alpha: f64,
        /// Scale every tensor by the std of the whole vector.
        #[arg(long)]
        pooled_sigma: bool,
        #[arg(long, default_value = "golomb", value_parser = parse_format)]
        format: Format,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reconstruct a dense container from an artifact.
    Decompress {
        artifact: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Container whose shapes the output takes; tensors are flat otherwise.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long, default_value = "f32", value_parser = parse_dtype)]
        dtype: DType,
    },
    /// Re-encode an artifact in the given layout.
    Pack {
        artifact: PathBuf,
        #[arg(long, default_value = "golomb", value_parser = parse_format)]
        format: Format,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode a blob of either layout into a canonical Golomb artifact.
    Unpack {
        blob: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Measured payload size against the entropy bound and a 16-bit dense copy.
    Size { blob: PathBuf },
    /// Dot product and distances computed on the bitmasks.
    Similarity { a: PathBuf, b: PathBuf },
    /// Merge containers or artifacts into one dense container.
    Merge {
        #[arg(long, default_value = "ties")]
        method: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Percent kept per tensor before the TIES sign election.
        #[arg(long, default_value_t = 20.0)]
        trim: f64,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "f32", value_parser = parse_dtype)]
        dtype: DType,
    },
    /// Weighted sum of low-rank modules.
    Compose {
        /// JSON array with one weight per module.
        #[arg(long)]
        weights: PathBuf,
        #[arg(required = true)]
        modules: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Rank of artifact modules, whose tensors are stored flat.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Search composition weights against an external loss command.
    ComposeOpt {
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shell command that reads a JSON weight array on stdin and prints a loss.
        #[arg(long)]
        loss_cmd: String,
        #[arg(required = true)]
        modules: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Score every (k, alpha) cell with an external command.
    Sweep {
        tau: PathBuf,
        /// Shell command that reads a packed artifact on stdin and prints a score.
        #[arg(long)]
        scorer_cmd: String,
        #[arg(long, value_delimiter = ',')]
        k: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Time loading a container or blob.
    Bench {
        path: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Time the read only, without decoding.
        #[arg(long)]
        read_only: bool,
        /// Evict the file from the page cache before each trial.
        #[arg(long)]
        drop_caches: bool,
    },
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    match s {
        "f32" => Ok(DType::F32),
        "f16" => Ok(DType::F16),
        "bf16" => Ok(DType::Bf16),
        _ => Err(format!("unknown dtype `{s}` (f32, f16, bf16)")),
    }
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: tvc_core::Error| e.to_string())
}

enum Input {
    Dense(TaskVector),
    Compressed(CompressedArtifact),
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_any(path: &Path) -> Result<Input> {
    let bytes = read(path)?;
    let ctx = || format!("parsing {}", path.display());
    if bytes.starts_with(tensor_store::CONTAINER_MAGIC) {
        Ok(Input::Dense(tensor_store::parse_container(&bytes).with_context(ctx)?))
    } else if bytes.starts_with(codec::BLOB_MAGIC) {
        Ok(Input::Compressed(codec::decode(&bytes).with_context(ctx)?))
    } else {
        bail!("{} is neither a container nor a blob", path.display())
    }
}

fn load_container(path: &Path) -> Result<TaskVector> {
    tensor_store::load_container(path).with_context(|| format!("loading {}", path.display()))
}

fn load_artifact(path: &Path) -> Result<CompressedArtifact> {
    codec::decode(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn save(tv: &TaskVector, dtype: DType, path: &Path) -> Result<()> {
    tensor_store::save_container(tv, dtype, path).with_context(|| format!("writing {}", path.display()))
}

/// Runs `cmd` through the shell with `input` on stdin and parses its stdout as a number.
fn run_numeric(cmd: &str, input: &[u8], env: &[(&str, String)]) -> Result<f64> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .envs(env.iter().map(|(k, v)| (*k, v)))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .with_context(|| format!("spawning `{cmd}`"))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let input = input.to_vec();
    // written from a thread so a chatty child cannot deadlock on a full pipe
    let writer = std::thread::spawn(move || stdin.write_all(&input));
    let out = child.wait_with_output()?;
    match writer.join().expect("stdin writer") {
        // a command that ignores its input may close the pipe early
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    if !out.status.success() {
        bail!("`{cmd}` exited with {}", out.status);
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    last.trim()
        .parse::<f64>()
        .with_context(|| format!("`{cmd}` printed `{}`, not a number", last.trim()))
}

fn load_modules(paths: &[PathBuf], rank: Option<usize>) -> Result<Vec<LowRankModule>> {
    paths
        .iter()
        .map(|p| {
            let m = match (load_any(p)?, rank) {
                (Input::Dense(tv), _) => LowRankModule::from_task_vector(&tv),
                (Input::Compressed(ca), Some(r)) => LowRankModule::from_artifact(&ca, r),
                (Input::Compressed(_), None) => bail!("{} is an artifact; pass --rank", p.display()),
            };
            m.with_context(|| format!("reading module {}", p.display()))
        })
        .collect()
}

fn print_moments(name: &str, m: &decompose::Moments) {
    println!(
        "{name}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
        m.count, m.mean, m.std, m.max, m.min
    );
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = read(path)?;
    if bytes.starts_with(tensor_store::CONTAINER_MAGIC) {
        let (metas, _) = tensor_store::parse_manifest(&bytes)?;
        println!("container\t{} tensors", metas.len());
        println!("name\tshape\tdtype\toffset_bytes\tlength_elems");
        for m in metas {
            println!(
                "{}\t{:?}\t{}\t{}\t{}",
                m.name,
                m.shape,
                m.dtype.name(),
                m.offset_bytes,
                m.length_elems
            );
        }
    } else if bytes.starts_with(codec::BLOB_MAGIC) {
        let (blob, _) = codec::parse_blob(&bytes)?;
        println!(
            "blob\t{}\t{} tensors\tk={}%\talpha={}\tfingerprint={:016x}",
            blob.format,
            blob.headers.len(),
            blob.k_percent,
            blob.alpha,
            blob.source_fingerprint
        );
        println!("name\tdim\tnnz\tscale\trice_b\tpayload_bits");
        for (h, p) in blob.headers.iter().zip(&blob.payloads) {
            let rice = h.rice.map_or("-".to_string(), |b| b.to_string());
            println!("{}\t{}\t{}\t{:e}\t{}\t{}", h.name, h.dim, h.nnz, h.scale, rice, p.bits);
        }
    } else {
        bail!("{} is neither a container nor a blob", path.display());
    }
    Ok(())
}

fn cmd_size(path: &Path) -> Result<()> {
    let (blob, _) = codec::parse_blob(&read(path)?)?;
    let entropy: f64 = blob
        .headers
        .iter()
        .map(|h| {
            let k = h.nnz as f64 / h.dim as f64;
            let payload = if h.nnz == 0 { 0.0 } else { codec::entropy_per_param(k).unwrap_or(0.0) * h.dim as f64 };
            payload + codec::SCALE_ACCOUNTING_BITS as f64
        })
        .sum();
    let d = blob.dim();
    let accounted = blob.accounted_size_bits();
    let dense16 = 16 * d;
    println!("format\t{}", blob.format);
    println!("params\t{d}");
    println!("nonzeros\t{}", blob.nnz());
    println!("payload_bits\t{}", blob.measured_size_bits());
    println!("accounted_bits\t{accounted}");
    println!("entropy_bits\t{entropy:.1}");
    println!("ratio_to_entropy\t{:.4}", accounted as f64 / entropy);
    println!("dense16_bits\t{dense16}");
    println!("compression_vs_dense16\t{:.2}", dense16 as f64 / accounted as f64);
    Ok(())
}

fn cmd_similarity(a: &Path, b: &Path) -> Result<()> {
    let (ca, cb) = (load_artifact(a)?, load_artifact(b)?);
    if ca.tensors.len() != cb.tensors.len() {
        bail!("artifacts hold {} and {} tensors", ca.tensors.len(), cb.tensors.len());
    }
    let (mut dot, mut sign, mut l2sq) = (0.0f64, 0u64, 0.0f64);
    println!("name\tdot\tsign_distance\tscaled_l2");
    for (ta, tb) in ca.tensors.iter().zip(&cb.tensors) {
        if ta.name != tb.name {
            bail!("tensor `{}` paired with `{}`", ta.name, tb.name);
        }
        let (pa, pb) = (BitmaskPair::from_ternary(ta), BitmaskPair::from_ternary(tb));
        let d = ternary_ops::dot(&pa, &pb)?;
        let s = ternary_ops::sign_distance(&pa, &pb)?;
        let l = ternary_ops::scaled_l2_distance(&pa, &pb)?;
        println!("{}\t{d:.6e}\t{s}\t{l:.6e}", ta.name);
        dot += d;
        sign += s;
        l2sq += l * l;
    }
    println!("TOTAL\t{dot:.6e}\t{sign}\t{:.6e}", l2sq.sqrt());
    Ok(())
}

fn cmd_compose_opt(
    budget: usize,
    seed: u64,
    loss_cmd: &str,
    modules: &[PathBuf],
    output: &Path,
    rank: Option<usize>,
) -> Result<()> {
    let mods = load_modules(modules, rank)?;
    let cfg = OptimizeConfig {
        budget,
        seed,
        ..OptimizeConfig::default()
    };
    let loss = |w: &ComposeWeights| {
        let json = serde_json::to_vec(&w.w).expect("weights serialize");
        run_numeric(loss_cmd, &json, &[]).map_err(|e| tvc_core::Error::Io(io::Error::other(format!("{e:#}"))))
    };
    let w = compose::optimize_weights(mods.len(), loss, &cfg)?;
    let composed = compose::compose_modules(&mods, &w)?;
    save(&composed.to_task_vector()?, DType::F32, output)?;
    println!("{}", serde_json::to_string(&w.w)?);
    Ok(())
}

fn cmd_sweep(tau: &Path, scorer_cmd: &str, k: Vec<f64>, alpha: Vec<f64>, output: &Path) -> Result<()> {
    let tau = load_container(tau)?;
    let default = SweepGrid::default();
    let grid = SweepGrid {
        k_values: if k.is_empty() { default.k_values } else { k },
        alpha_values: if alpha.is_empty() { default.alpha_values } else { alpha },
    };
    let result = sweep::run_sweep(&tau, &grid, |ca| {
        let blob = codec::encode_bytes(ca, Format::Golomb);
        let env = [("TVC_K", ca.k_percent.to_string()), ("TVC_ALPHA", ca.alpha.to_string())];
        run_numeric(scorer_cmd, &blob, &env).map_err(|e| format!("{e:#}"))
    })?;
    let mut w = csv::Writer::from_path(output).with_context(|| format!("writing {}", output.display()))?;
    w.write_record(["k", "alpha", "score", "size_bits"])?;
    for r in &result.rows {
        if let Some(e) = &r.error {
            eprintln!("cell k={} alpha={} failed: {e}", r.k_percent, r.alpha);
        }
        w.write_record([
            r.k_percent.to_string(),
            r.alpha.to_string(),
            r.score.to_string(),
            r.size_bits.to_string(),
        ])?;
    }
    w.flush()?;
    match result.best_row() {
        Some(b) => println!("best\tk={}\talpha={}\tscore={}\tsize_bits={}", b.k_percent, b.alpha, b.score, b.size_bits),
        None => bail!("every cell failed"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Inspect { path } => cmd_inspect(&path)?,
        Cmd::Diff { ft, init, output, dtype } => {
            let tau = decompose::task_vector(&load_container(&ft)?, &load_container(&init)?)?;
            save(&tau, dtype, &output)?;
        }
        Cmd::Stats { tau } => {
            let s = decompose::stats(&load_container(&tau)?)?;
            println!("name\tcount\tmean\tstd\tmax\tmin");
            for (name, m) in &s.per_group {
                print_moments(name, m);
            }
            print_moments("POOLED", &s.pooled);
        }
        Cmd::Compress { tau, k, alpha, pooled_sigma, format, output } => {
            let opts = CompressOptions {
                sigma: if pooled_sigma { SigmaMode::Pooled } else { SigmaMode::PerGroup },
                ..CompressOptions::new(k, alpha)
            };
            let ca = compress::compress_with(&load_container(&tau)?, &opts)?;
            let blob = codec::encode(&ca, format);
            write_file(&output, &blob.to_bytes())?;
            println!(
                "{} of {} entries kept, {} payload bits",
                ca.nnz(),
                ca.dim(),
                blob.measured_size_bits()
            );
        }
        Cmd::Decompress { artifact, output, like, dtype } => {
            let dense = compress::reconstruct(&load_artifact(&artifact)?)?;
            let dense = match like {
                None => dense,
                Some(p) => {
                    let template = load_container(&p)?;
                    let groups = template
                        .groups()
                        .iter()
                        .zip(dense.into_groups())
                        .map(|(t, g)| {
                            if t.name != g.name || t.len() != g.len() {
                                bail!("`{}` does not match template tensor `{}`", g.name, t.name);
                            }
                            Ok(Group::new(g.name, t.shape.clone(), g.data))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if groups.len() != template.groups().len() {
                        bail!("artifact and template differ in tensor count");
                    }
                    TaskVector::new(groups)?
                }
            };
            save(&dense, dtype, &output)?;
        }
        Cmd::Pack { artifact, format, output } => {
            write_file(&output, &codec::encode_bytes(&load_artifact(&artifact)?, format))?;
        }
        Cmd::Unpack { blob, output } => {
            write_file(&output, &codec::encode_bytes(&load_artifact(&blob)?, Format::Golomb))?;
        }
        Cmd::Size { blob } => cmd_size(&blob)?,
        Cmd::Similarity { a, b } => cmd_similarity(&a, &b)?,
        Cmd::Merge { method, lambda, trim, inputs, output, dtype } => {
            let spec = MergeSpec {
                lambda,
                trim_density: trim,
                ..MergeSpec::new(method.parse::<MergeMethod>()?)
            };
            let dense = inputs
                .iter()
                .map(|p| match load_any(p)? {
                    Input::Dense(tv) => Ok(tv),
                    Input::Compressed(ca) => Ok(compress::reconstruct(&ca)?),
                })
                .collect::<Result<Vec<_>>>()?;
            save(&merge::merge(&dense, &spec)?, dtype, &output)?;
        }
        Cmd::Compose { weights, modules, output, rank } => {
            let w: Vec<f64> = serde_json::from_slice(&read(&weights)?)
                .with_context(|| format!("{} is not a JSON number array", weights.display()))?;
            let mods = load_modules(&modules, rank)?;
            let composed = compose::compose_modules(&mods, &ComposeWeights::new(w))?;
            save(&composed.to_task_vector()?, DType::F32, &output)?;
        }
        Cmd::ComposeOpt { budget, seed, loss_cmd, modules, output, rank } => {
            cmd_compose_opt(budget, seed, &loss_cmd, &modules, &output, rank)?
        }
        Cmd::Sweep { tau, scorer_cmd, k, alpha, output } => cmd_sweep(&tau, &scorer_cmd, k, alpha, &output)?,
        Cmd::Bench { path, trials, read_only, drop_caches } => {
            let mode = if read_only { LoadMode::ReadOnly } else { LoadMode::Decode };
            let r = bench::bench_load(&path, trials, drop_caches, mode)?;
            println!("file\tsize_mb\tmode\ttrials\tload_ms_mean\tload_ms_std");
            println!(
                "{}\t{:.3}\t{}\t{}\t{:.3}\t{:.3}",
                path.display(),
                r.size_bits as f64 / 8.0 / 1e6,
                if read_only { "read" } else { "decode" },
                r.trials,
                r.mean_sec * 1e3,
                r.std_sec * 1e3
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
