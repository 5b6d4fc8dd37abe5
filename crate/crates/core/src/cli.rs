//! Command-line front end: compress/decompress datasets under JSON model
//! specs, benchmark the vectorized coder, and report information-content
//! statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bbans::{
    build_codec, decode_batch, encode_batch, init_random_bits, read_batch, warmup_threshold,
    write_batch, BbDatumCodec, ChainInit, RateReport,
};
use crate::error::CoderError;
use crate::latent_models::{sample_dataset, Model, ModelSpec};
use crate::rans::{Precisions, QuantizedDistribution};
use crate::vrans::{FlattenMode, VMessage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_MODEL_MISMATCH: i32 = 3;
pub const EXIT_INSUFFICIENT_INIT: i32 = 4;

/// Map an error to the documented process exit code.
pub fn exit_code(e: &CoderError) -> i32 {
    match e {
        CoderError::ModelMismatch(_) => EXIT_MODEL_MISMATCH,
        CoderError::InsufficientInitBits { .. } | CoderError::Underflow { .. } => {
            EXIT_INSUFFICIENT_INIT
        }
        _ => EXIT_FORMAT,
    }
}

#[derive(Parser, Debug)]
#[command(name = "bbc", about = "bits-back / rANS compression toolkit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Compress a dataset under a model spec into a batch container.
    Compress(CompressArgs),
    /// Reconstruct the dataset from a batch container.
    Decompress(DecompressArgs),
    /// Throughput and rate of the vectorized coder vs lane count.
    Bench(BenchArgs),
    /// Information-content report for a dataset under a model.
    Stats(StatsArgs),
    /// Sample a dataset from a model spec.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Override spec precisions, as "RS,RT,R".
    #[arg(long)]
    pub precisions: Option<String>,
    /// Override the model file's latent grid precision.
    #[arg(long)]
    pub rq: Option<u32>,
    /// Chain initialization: "random:BITS:SEED" or "fallback:uniform".
    #[arg(long, default_value = "random:4096:0")]
    pub init: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report format: text, json or csv.
    #[arg(long, default_value = "text")]
    pub report: String,
    /// Use the interleaved (Bit-Swap) ordering where supported.
    #[arg(long)]
    pub interleave: bool,
}

#[derive(Args, Debug)]
pub struct DecompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub precisions: Option<String>,
    #[arg(long)]
    pub rq: Option<u32>,
    #[arg(long)]
    pub interleave: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Symbols per lane-count measurement.
    #[arg(long, default_value_t = 1 << 20)]
    pub symbols: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flatten mode used for the rate column: naive or benford.
    #[arg(long, default_value = "benford")]
    pub flatten: String,
    /// Lane counts to measure.
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 16, 256, 4096])]
    pub lanes: Vec<u32>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Monte-Carlo sample count for models without an exact oracle.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

// --- dataset file format ---

const DATASET_MAGIC: &[u8; 4] = b"BBD1";

/// Flat binary dataset: 16-byte header (magic, version, symbol width in
/// bytes, dims per datum, datum count) followed by little-endian symbols.
pub fn encode_dataset(data: &[Vec<u16>], dims: usize, card: u16) -> Vec<u8> {
    let width: u8 = if card == 0 || card > 255 { 2 } else { 1 };
    let mut out = Vec::with_capacity(16 + data.len() * dims * width as usize);
    out.extend_from_slice(DATASET_MAGIC);
    out.push(1); // version
    out.push(width);
    out.extend_from_slice(&(dims as u16).to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for datum in data {
        for &s in datum {
            if width == 1 {
                out.push(s as u8);
            } else {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(Vec<Vec<u16>>, usize), CoderError> {
    if bytes.len() < 16 || &bytes[..4] != DATASET_MAGIC || bytes[4] != 1 {
        return Err(CoderError::Format("bad dataset header".into()));
    }
    let width = bytes[5] as usize;
    if width != 1 && width != 2 {
        return Err(CoderError::Format(format!("bad symbol width {width}")));
    }
    let dims = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let need = 16 + count * dims * width;
    if bytes.len() != need {
        return Err(CoderError::Format(format!(
            "dataset length {} != expected {need}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(count);
    let mut at = 16;
    for _ in 0..count {
        let mut datum = Vec::with_capacity(dims);
        for _ in 0..dims {
            let s = if width == 1 {
                bytes[at] as u16
            } else {
                u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap())
            };
            at += width;
            datum.push(s);
        }
        data.push(datum);
    }
    Ok((data, dims))
}

// --- shared plumbing ---

fn read_to_string(path: &Path) -> Result<String, CoderError> {
    fs::read_to_string(path)
        .map_err(|e| CoderError::Format(format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CoderError> {
    fs::read(path).map_err(|e| CoderError::Format(format!("{}: {e}", path.display())))
}

fn parse_precisions(text: &str) -> Result<Precisions, CoderError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CoderError::Format(format!(
            "expected RS,RT,R, got '{text}'"
        )));
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CoderError::Format(format!("bad precision '{p}'")))
        })
        .collect::<Result<_, _>>()?;
    Precisions::new(nums[0], nums[1], nums[2])
}

struct Job {
    spec: ModelSpec,
    model: Model,
    codec: Box<dyn BbDatumCodec>,
    prec: Precisions,
}

fn load_job(
    model_path: &Path,
    precisions: Option<&str>,
    rq: Option<u32>,
    interleave: bool,
) -> Result<Job, CoderError> {
    let spec = ModelSpec::from_json(&read_to_string(model_path)?)?;
    let prec = match precisions {
        Some(p) => parse_precisions(p)?,
        None => Precisions::new(spec.precisions.0, spec.precisions.1, spec.precisions.2)?,
    };
    let r_q = rq.unwrap_or(spec.r_q);
    let model = spec.build()?;
    let codec = build_codec(&model, r_q, prec.r, interleave)?;
    Ok(Job {
        spec,
        model,
        codec,
        prec,
    })
}

fn parse_init(
    text: &str,
    codec: &dyn BbDatumCodec,
    sample: Option<&[u16]>,
    prec: Precisions,
) -> Result<ChainInit, CoderError> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts[0] {
        "random" if parts.len() == 3 => {
            let bits = parts[1]
                .parse()
                .map_err(|_| CoderError::Format(format!("bad init bits '{}'", parts[1])))?;
            let seed = parts[2]
                .parse()
                .map_err(|_| CoderError::Format(format!("bad init seed '{}'", parts[2])))?;
            Ok(ChainInit::RandomBits { bits, seed })
        }
        "fallback" if parts.len() == 2 => {
            if parts[1] != "uniform" {
                return Err(CoderError::Format(format!(
                    "unknown fallback codec '{}'",
                    parts[1]
                )));
            }
            let sample = sample.ok_or_else(|| {
                CoderError::Format("fallback warm-up needs at least one datum".into())
            })?;
            Ok(ChainInit::FallbackWarmup {
                threshold_bits: warmup_threshold(codec, sample, prec)?,
            })
        }
        _ => Err(CoderError::Format(format!(
            "bad --init '{text}': expected random:BITS:SEED or fallback:uniform"
        ))),
    }
}

fn oracle_rate(model: &Model, data: &[Vec<u16>], samples: usize, seed: u64) -> Option<f64> {
    let per_datum: f64 = match model {
        Model::Categorical(d) => {
            data.iter()
                .map(|x| d.info_content(x[0] as usize))
                .sum::<f64>()
                / data.len() as f64
        }
        Model::Mixture(parts) => {
            data.iter()
                .map(|x| {
                    let mut offset = 0;
                    parts
                        .iter()
                        .map(|p| {
                            let h = p.exact_log_marginal(&x[offset..offset + p.obs_dims()]);
                            offset += p.obs_dims();
                            h
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / data.len() as f64
        }
        Model::Markov(m) => {
            data.iter().map(|x| m.exact_log_marginal(x[0])).sum::<f64>() / data.len() as f64
        }
        Model::LinGauss(m) => {
            if samples == 0 {
                return None;
            }
            data.iter()
                .map(|x| m.neg_elbo_mc(x, samples, seed).0)
                .sum::<f64>()
                / data.len() as f64
        }
        Model::Hier(m) => {
            if samples == 0 {
                return None;
            }
            data.iter()
                .map(|x| m.neg_elbo_mc(x, samples, seed).0)
                .sum::<f64>()
                / data.len() as f64
        }
    };
    Some(per_datum)
}

fn render_report(report: &RateReport, format: &str, out: &mut String) -> Result<(), CoderError> {
    match format {
        "text" => {
            writeln!(out, "total bits:      {:.2}", report.total_bits).unwrap();
            writeln!(out, "initial bits:    {:.2}", report.initial_bits).unwrap();
            writeln!(out, "data:            {}", report.per_datum_bits.len()).unwrap();
            writeln!(out, "fallback data:   {}", report.fallback_count).unwrap();
            writeln!(out, "net bits/datum:  {:.4}", report.net_rate()).unwrap();
            if let Some(oracle) = report.neg_elbo_reference {
                let gap = 100.0 * (report.net_rate() - oracle) / oracle;
                writeln!(out, "-ELBO reference: {oracle:.4} (gap {gap:+.3}%)").unwrap();
            }
        }
        "json" => {
            let v = serde_json::json!({
                "total_bits": report.total_bits,
                "initial_bits": report.initial_bits,
                "count": report.per_datum_bits.len(),
                "fallback_count": report.fallback_count,
                "net_bits_per_datum": report.net_rate(),
                "neg_elbo_reference": report.neg_elbo_reference,
                "per_datum_bits": report.per_datum_bits,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap()).unwrap();
        }
        "csv" => {
            writeln!(out, "datum,net_bits").unwrap();
            for (i, b) in report.per_datum_bits.iter().enumerate() {
                writeln!(out, "{i},{b:.6}").unwrap();
            }
        }
        other => {
            return Err(CoderError::Format(format!(
                "unknown report format '{other}'"
            )))
        }
    }
    Ok(())
}

pub fn cmd_compress(args: &CompressArgs) -> Result<String, CoderError> {
    let job = load_job(
        &args.model,
        args.precisions.as_deref(),
        args.rq,
        args.interleave,
    )?;
    let (data, dims) = decode_dataset(&read_bytes(&args.input)?)?;
    if !data.is_empty() && dims != job.model.datum_dims() {
        return Err(CoderError::ModelMismatch(format!(
            "dataset dims {dims} != model dims {}",
            job.model.datum_dims()
        )));
    }
    let init = parse_init(
        &args.init,
        job.codec.as_ref(),
        data.first().map(|d| d.as_slice()),
        job.prec,
    )?;
    let (m, mut report) = encode_batch(&data, job.codec.as_ref(), &init, job.prec)?;
    if !data.is_empty() {
        report.neg_elbo_reference = oracle_rate(&job.model, &data, 0, args.seed);
    }
    let bytes = write_batch(&m, job.spec.hash(), data.len(), &init, report.fallback_count);
    fs::write(&args.output, &bytes)
        .map_err(|e| CoderError::Format(format!("{}: {e}", args.output.display())))?;
    let mut out = String::new();
    render_report(&report, &args.report, &mut out)?;
    writeln!(out, "container bytes: {}", bytes.len()).unwrap();
    Ok(out)
}

pub fn cmd_decompress(args: &DecompressArgs) -> Result<String, CoderError> {
    let job = load_job(
        &args.model,
        args.precisions.as_deref(),
        args.rq,
        args.interleave,
    )?;
    let (header, m) = read_batch(&read_bytes(&args.input)?, job.prec.r)?;
    if header.model_hash != job.spec.hash() {
        return Err(CoderError::ModelMismatch(
            "container was written under a different model spec".into(),
        ));
    }
    let (data, rest) = decode_batch(m, job.codec.as_ref(), header.count, header.fallback_count)?;
    if let ChainInit::RandomBits { bits, seed } = header.init {
        if rest != init_random_bits(bits, seed, job.prec) {
            return Err(CoderError::Format(
                "drained message does not match the initial random message".into(),
            ));
        }
    }
    let bytes = encode_dataset(&data, job.model.datum_dims(), job.model.symbol_card());
    fs::write(&args.output, &bytes)
        .map_err(|e| CoderError::Format(format!("{}: {e}", args.output.display())))?;
    Ok(format!("decoded {} data\n", data.len()))
}

pub fn cmd_bench(args: &BenchArgs) -> Result<String, CoderError> {
    let prec = Precisions::DEFAULT;
    let flatten = match args.flatten.as_str() {
        "naive" => FlattenMode::Naive,
        "benford" => FlattenMode::Benford,
        other => {
            return Err(CoderError::Format(format!(
                "unknown flatten mode '{other}'"
            )))
        }
    };
    let dist = QuantizedDistribution::new(&[1, 2, 3, 2], 3)?;
    let entropy = dist.entropy();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(args.seed);
    let mut out = String::from("k,symbols,seconds,symbols_per_sec,bits_per_symbol\n");
    for &k in &args.lanes {
        let k = k as usize;
        let steps = (args.symbols as usize).div_ceil(k);
        let symbols: Vec<u64> = (0..k).map(|_| rng.gen_range(0..4u64)).collect();
        let start = Instant::now();
        let mut m = VMessage::init(k, prec)?;
        for _ in 0..steps {
            m.vpush(&symbols, std::slice::from_ref(&dist))?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let total = (steps * k) as f64;
        let bits = match flatten {
            FlattenMode::Naive => (m.flatten_naive().len() as u64 * prec.r_t as u64) as f64,
            FlattenMode::Benford => (m.flatten_benford().len() as u64 * prec.r_t as u64) as f64,
        };
        writeln!(
            out,
            "{k},{},{seconds:.6},{:.0},{:.6}",
            steps * k,
            total / seconds,
            bits / total,
        )
        .unwrap();
    }
    writeln!(out, "# model entropy {entropy:.4} bits/symbol").unwrap();
    Ok(out)
}

pub fn cmd_stats(args: &StatsArgs) -> Result<String, CoderError> {
    let job = load_job(&args.model, None, None, false)?;
    let (data, dims) = decode_dataset(&read_bytes(&args.input)?)?;
    if !data.is_empty() && dims != job.model.datum_dims() {
        return Err(CoderError::ModelMismatch(format!(
            "dataset dims {dims} != model dims {}",
            job.model.datum_dims()
        )));
    }
    let mut out = String::new();
    let n = data.len();
    writeln!(out, "data:            {n}").unwrap();
    if n == 0 {
        return Ok(out);
    }
    let per_datum = oracle_rate(&job.model, &data, args.samples, args.seed)
        .expect("samples > 0 always yields a rate");
    let h_total = per_datum * n as f64;
    match &job.model {
        Model::Categorical(d) => {
            writeln!(out, "h(data):         {h_total:.4} bits").unwrap();
            writeln!(out, "entropy H:       {:.4} bits/symbol", d.entropy()).unwrap();
            // worst-case bound slack for the plain coder
            let (m, _) = encode_batch(
                &data,
                job.codec.as_ref(),
                &ChainInit::RandomBits { bits: 0, seed: 0 },
                job.prec,
            )?;
            let init_len = (job.prec.r_s - job.prec.r_t) as f64;
            let measured = m.effective_length() - init_len;
            let bound = h_total + n as f64 * job.prec.epsilon();
            writeln!(out, "coded bits:      {measured:.4}").unwrap();
            writeln!(out, "bound slack:     {:.4} bits", bound - measured).unwrap();
        }
        Model::Mixture(_) | Model::Markov(_) => {
            writeln!(out, "h(data):         {h_total:.4} bits (exact marginal)").unwrap();
            writeln!(out, "h/datum:         {per_datum:.4} bits").unwrap();
        }
        Model::LinGauss(_) | Model::Hier(_) => {
            writeln!(out, "-ELBO estimate:  {h_total:.4} bits (MC, n={})", args.samples).unwrap();
            writeln!(out, "-ELBO/datum:     {per_datum:.4} bits").unwrap();
        }
    }
    Ok(out)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<String, CoderError> {
    let job = load_job(&args.model, None, None, false)?;
    let data = sample_dataset(&job.model, args.count, args.seed);
    let bytes = encode_dataset(&data, job.model.datum_dims(), job.model.symbol_card());
    fs::write(&args.output, &bytes)
        .map_err(|e| CoderError::Format(format!("{}: {e}", args.output.display())))?;
    Ok(format!(
        "wrote {} data of {} symbols each\n",
        args.count,
        job.model.datum_dims()
    ))
}

/// Dispatch a parsed command; returns the report text for stdout.
pub fn run(cli: &Cli) -> Result<String, CoderError> {
    match &cli.cmd {
        Cmd::Compress(a) => cmd_compress(a),
        Cmd::Decompress(a) => cmd_decompress(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Stats(a) => cmd_stats(a),
        Cmd::Sample(a) => cmd_sample(a),
    }
}
