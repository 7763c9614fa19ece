//! Command-line driver: dense pretraining, sparse retraining with
//! distillation, evaluation, packing, ratio analytics, and the ablation
//! suite. Every subcommand is deterministic given (config, seed, data).
//!
//! Exit codes: 0 success, 1 runtime failure (e.g. divergence), 2 config or
//! IO error, 3 architecture mismatch, 4 packing a dense checkpoint.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nmast::checkpoint::Checkpoint;
use nmast::compress::{self, Coding, PackedSparseTensor};
use nmast::config::RunConfig;
use nmast::corpus::{generate_synthetic, Corpus};
use nmast::trainer::{
    pretrain_dense, retrain_sparse, run_ablation_suite, validation_ppl, Mode, RunMetrics,
    TrainError, TrainerConfig,
};

#[derive(Parser)]
#[command(name = "nmast", version, about = "N:M adaptive sparse trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the dense teacher and write its checkpoint plus metrics CSV.
    TrainDense {
        #[arg(long)]
        config: PathBuf,
        /// Corpus file; bytes are the tokens, the last 10% is validation.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain a sparse student from a dense teacher checkpoint.
    RetrainSparse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's mode: ast | ast-boosted | fixed-mask |
        /// static-srste | no-distill | one-shot.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Print validation perplexity of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Pack every masked tensor into NMSP files plus a ratio manifest.
    Pack {
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "fixed")]
        coding: String,
    },
    /// Print the analytic compression-ratio table for patterns n:2n, n ≤ N.
    Ratios {
        #[arg(long, default_value_t = 32)]
        nmax: u64,
    },
    /// Run the mode/variant ablation suite and write the ordering report.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reuse a pretrained teacher; omitted → pretrain one first.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigCmd,
    },
    /// Verify packed NMSP files (CRC, decode, pattern).
    Unpack {
        /// An .nmsp file or a directory of them.
        #[arg(long)]
        packed: PathBuf,
        /// Fully decode and revalidate every group.
        #[arg(long)]
        check: bool,
    },
    /// Write a deterministic synthetic byte corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 262144)]
        bytes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Print the canonical form of a config file (defaults when omitted).
    Dump {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

struct Failure {
    code: i32,
    msg: String,
}

fn fail(code: i32, msg: impl Into<String>) -> Failure {
    Failure { code, msg: msg.into() }
}

fn main() {
    // die quietly on closed pipes (e.g. `nmast ratios | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    nmast::simd::flush_denormals();
    let cli = Cli::parse();
    if let Err(f) = run(cli.cmd) {
        eprintln!("error: {}", f.msg);
        std::process::exit(f.code);
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| fail(2, e))
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    Corpus::load(path).map_err(|e| fail(2, format!("cannot read corpus {}: {e}", path.display())))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint<f32>, Failure> {
    Checkpoint::load(path).map_err(|e| fail(2, format!("cannot load checkpoint {}: {e}", path.display())))
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config(msg) => fail(2, msg),
        TrainError::ArchMismatch(msg) => fail(3, msg),
        TrainError::NonFinite { .. } => fail(1, e.to_string()),
    }
}

/// Metrics land next to the checkpoint as `<out>.metrics.csv`.
fn write_metrics(out: &Path, metrics: &RunMetrics) -> Result<PathBuf, Failure> {
    let mut name = out.as_os_str().to_owned();
    name.push(".metrics.csv");
    let path = PathBuf::from(name);
    std::fs::write(&path, metrics.to_csv())
        .map_err(|e| fail(2, format!("cannot write metrics {}: {e}", path.display())))?;
    Ok(path)
}

fn save_ckpt(ckpt: &Checkpoint<f32>, path: &Path) -> Result<(), Failure> {
    ckpt.save(path)
        .map_err(|e| fail(2, format!("cannot write checkpoint {}: {e}", path.display())))
}

#[derive(Serialize)]
struct ManifestTensor {
    name: String,
    rows: usize,
    cols: usize,
    params: usize,
    packed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pattern: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bytes: Option<usize>,
    /// Analytic storage ratio vs the 32-bit dense baseline (1.0 when dense).
    ratio: f64,
}

#[derive(Serialize)]
struct Manifest {
    checkpoint: String,
    mode: String,
    coding: String,
    tensors: Vec<ManifestTensor>,
    packed_params: usize,
    total_params: usize,
    /// Analytic ratio over packed tensors alone.
    packed_ratio: f64,
    /// Parameter-weighted ratio over the whole model (dense tensors at 1.0).
    total_ratio: f64,
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::TrainDense { config, data, out } => {
            let mut run = load_config(&config)?;
            run.mode = "dense_pretrain".into();
            let cfg = TrainerConfig::from_run(&run).map_err(|e| fail(2, e))?;
            let corpus = load_corpus(&data)?;
            let (ckpt, metrics) = pretrain_dense::<f32>(&cfg, &corpus).map_err(train_failure)?;
            save_ckpt(&ckpt, &out)?;
            let csv = write_metrics(&out, &metrics)?;
            eprintln!("trained {} steps in {:.1}s", cfg.t1, metrics.wall_clock_secs);
            println!("teacher checkpoint: {}", out.display());
            println!("metrics: {}", csv.display());
            println!("final val ppl: {}", metrics.final_val_ppl);
            Ok(())
        }
        Cmd::RetrainSparse { config, teacher, data, out, mode } => {
            let mut run = load_config(&config)?;
            if let Some(m) = mode {
                Mode::from_str(&m).map_err(|e| fail(2, e))?;
                run.mode = m;
            }
            if run.mode == "dense_pretrain" {
                return Err(fail(2, "retrain-sparse requires a sparse mode; use train-dense for the teacher"));
            }
            let cfg = TrainerConfig::from_run(&run).map_err(|e| fail(2, e))?;
            let teacher = load_ckpt(&teacher)?;
            let corpus = load_corpus(&data)?;
            let (ckpt, metrics) =
                retrain_sparse::<f32>(&cfg, &teacher, &corpus).map_err(train_failure)?;
            save_ckpt(&ckpt, &out)?;
            let csv = write_metrics(&out, &metrics)?;
            eprintln!("retrained {} steps in {:.1}s", cfg.t1, metrics.wall_clock_secs);
            println!("sparse checkpoint ({}): {}", ckpt.mode, out.display());
            println!("metrics: {}", csv.display());
            println!("final val ppl: {}", metrics.final_val_ppl);
            Ok(())
        }
        Cmd::Eval { ckpt, data } => {
            let ckpt = load_ckpt(&ckpt)?;
            let corpus = load_corpus(&data)?;
            println!("{}", validation_ppl(&ckpt.model, &corpus));
            Ok(())
        }
        Cmd::Pack { ckpt: ckpt_path, out, coding } => {
            let coding = Coding::from_str(&coding).map_err(|e| fail(2, e))?;
            let ckpt = load_ckpt(&ckpt_path)?;
            let masked: Vec<usize> = (0..ckpt.model.tensors.len())
                .filter(|&i| ckpt.model.masks[i].is_some())
                .collect();
            if masked.is_empty() {
                return Err(fail(
                    4,
                    format!("checkpoint {} is dense (mode {}): nothing to pack", ckpt_path.display(), ckpt.mode),
                ));
            }
            std::fs::create_dir_all(&out)
                .map_err(|e| fail(2, format!("cannot create {}: {e}", out.display())))?;

            let mut tensors = Vec::new();
            let mut packed_params = 0usize;
            let mut packed_weighted = 0.0f64;
            let mut total_weighted = 0.0f64;
            let mut total_params = 0usize;
            for (i, t) in ckpt.model.tensors.iter().enumerate() {
                let params = t.data.len();
                total_params += params;
                if let Some(mask) = &ckpt.model.masks[i] {
                    let pattern = mask.pattern();
                    let packed = compress::pack(&t.data, t.rows, t.cols, pattern, coding)
                        .map_err(|e| fail(2, format!("{}: {e}", t.name)))?;
                    let file = format!("{}.nmsp", t.name);
                    packed
                        .write_to(&out.join(&file))
                        .map_err(|e| fail(2, format!("cannot write {file}: {e}")))?;
                    let bytes = packed.to_bytes().len();
                    let ratio = match coding {
                        Coding::Fixed => compress::fixed_ratio(pattern.n as u64),
                        Coding::Huffman => compress::huffman_ratio(pattern.n as u64),
                    };
                    packed_params += params;
                    packed_weighted += ratio * params as f64;
                    total_weighted += ratio * params as f64;
                    println!("packed {} ({}x{}, {pattern}) -> {file} ({bytes} bytes, ratio {ratio:.6})", t.name, t.rows, t.cols);
                    tensors.push(ManifestTensor {
                        name: t.name.clone(),
                        rows: t.rows,
                        cols: t.cols,
                        params,
                        packed: true,
                        pattern: Some(pattern.to_string()),
                        file: Some(file),
                        bytes: Some(bytes),
                        ratio,
                    });
                } else {
                    total_weighted += params as f64;
                    tensors.push(ManifestTensor {
                        name: t.name.clone(),
                        rows: t.rows,
                        cols: t.cols,
                        params,
                        packed: false,
                        pattern: None,
                        file: None,
                        bytes: None,
                        ratio: 1.0,
                    });
                }
            }
            let manifest = Manifest {
                checkpoint: ckpt_path.display().to_string(),
                mode: ckpt.mode.clone(),
                coding: coding.name().into(),
                tensors,
                packed_params,
                total_params,
                packed_ratio: packed_weighted / packed_params as f64,
                total_ratio: total_weighted / total_params as f64,
            };
            let path = out.join("manifest.json");
            let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            std::fs::write(&path, body + "\n")
                .map_err(|e| fail(2, format!("cannot write {}: {e}", path.display())))?;
            println!(
                "packed ratio {:.6}, total ratio {:.6}, manifest {}",
                manifest.packed_ratio,
                manifest.total_ratio,
                path.display()
            );
            Ok(())
        }
        Cmd::Ratios { nmax } => {
            if nmax < 1 {
                return Err(fail(2, "--nmax must be at least 1"));
            }
            println!("pattern  bits  entropy    avg_len    fixed%   huffman%");
            for row in compress::ratio_table(nmax) {
                println!(
                    "{:<8} {:<5} {:<10.4} {:<10.4} {:<8.2} {:.2}",
                    format!("{}:{}", row.n, 2 * row.n),
                    row.index_bits,
                    row.entropy,
                    row.avg_len,
                    row.fixed * 100.0,
                    row.huffman * 100.0
                );
            }
            let report = compress::verify_bound(nmax);
            if report.ok() {
                println!("bound: OK (C(2n,n) <= 4^n/sqrt(pi*n) and ratio < 9.375% for all n <= {nmax})");
                Ok(())
            } else {
                Err(fail(1, format!("bound violations: {}", report.violations.join("; "))))
            }
        }
        Cmd::Ablate { config, data, teacher, out } => {
            let run = load_config(&config)?;
            let cfg = TrainerConfig::from_run(&run).map_err(|e| fail(2, e))?;
            let corpus = load_corpus(&data)?;
            let teacher = match teacher {
                Some(path) => load_ckpt(&path)?,
                None => {
                    let mut dense = cfg.clone();
                    dense.mode = Mode::DensePretrain;
                    eprintln!("no --teacher given; pretraining one at the config budget");
                    pretrain_dense::<f32>(&dense, &corpus).map_err(train_failure)?.0
                }
            };
            let report =
                run_ablation_suite::<f32>(&cfg, &teacher, &corpus, cfg.seed).map_err(train_failure)?;
            let csv = report.to_csv();
            std::fs::write(&out, &csv)
                .map_err(|e| fail(2, format!("cannot write {}: {e}", out.display())))?;
            print!("{csv}");
            println!("ordering report: {}", out.display());
            Ok(())
        }
        Cmd::Config { action } => match action {
            ConfigCmd::Dump { config } => {
                let run = match config {
                    Some(path) => load_config(&path)?,
                    None => RunConfig::default(),
                };
                print!("{}", run.to_toml_string());
                Ok(())
            }
        },
        Cmd::Unpack { packed, check } => {
            let files = collect_nmsp(&packed)?;
            if files.is_empty() {
                return Err(fail(2, format!("no .nmsp files under {}", packed.display())));
            }
            for file in files {
                let data = std::fs::read(&file)
                    .map_err(|e| fail(2, format!("cannot read {}: {e}", file.display())))?;
                let stored_crc = u32::from_le_bytes(
                    data[data.len().saturating_sub(4)..].try_into().unwrap_or([0; 4]),
                );
                let tensor = PackedSparseTensor::from_bytes(&data)
                    .map_err(|e| fail(2, format!("{}: {e}", file.display())))?;
                let name = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                if check {
                    let dense = tensor
                        .unpack()
                        .map_err(|e| fail(2, format!("{}: {e}", file.display())))?;
                    let (n, m) = (tensor.pattern.n, tensor.pattern.m);
                    for (g, group) in dense.chunks(m).enumerate() {
                        let nonzero = group.iter().filter(|v| v.to_bits() != 0).count();
                        if nonzero > n {
                            return Err(fail(2, format!(
                                "{}: group {g} has {nonzero} nonzeros under {}",
                                file.display(),
                                tensor.pattern
                            )));
                        }
                    }
                    let bits = tensor.encoded_bits().map_err(|e| fail(2, e.to_string()))?;
                    println!(
                        "{name}: OK crc=0x{stored_crc:08x} {}x{} {} {} groups {} index bits",
                        tensor.rows,
                        tensor.cols,
                        tensor.pattern,
                        tensor.groups(),
                        bits
                    );
                } else {
                    println!(
                        "{name}: crc=0x{stored_crc:08x} {}x{} {} {} ({} values, {} stream bytes)",
                        tensor.rows,
                        tensor.cols,
                        tensor.pattern,
                        tensor.mode,
                        tensor.values.len(),
                        tensor.stream.len()
                    );
                }
            }
            Ok(())
        }
        Cmd::GenCorpus { out, bytes, seed } => {
            if bytes == 0 {
                return Err(fail(2, "--bytes must be positive"));
            }
            let data = generate_synthetic(seed, bytes);
            std::fs::write(&out, &data)
                .map_err(|e| fail(2, format!("cannot write {}: {e}", out.display())))?;
            println!("wrote {} bytes to {}", data.len(), out.display());
            Ok(())
        }
    }
}

fn collect_nmsp(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| fail(2, format!("cannot read {}: {e}", path.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "nmsp"))
            .collect();
        files.sort();
        Ok(files)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(fail(2, format!("no such file or directory: {}", path.display())))
    }
}
