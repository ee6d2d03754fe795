use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use estr_core::event::{
    compute_stats, parse_evs1, parse_events, serialize_events, EventFormat, ParseOutcome,
};
use estr_core::glyph::{
    build_prompt, correct, correct_via_llm, flatten_candidates, load_database,
    retrieve_candidates, train_scorer, PromptTemplate,
};
use estr_core::memory::{enhance, init_bank, retrieve_query, FeatureBatch, PATTERN_DIM};
use estr_core::metrics::{average_sentence_bleu, corpus_bleu, split_dataset, word_accuracy};
use estr_core::pipeline::{
    bench, load_config, load_manifest, read_jsonl, ConfigOverrides, HttpBackend, PipelineError,
};
use estr_core::ppm::{read_pnm, write_p6};
use estr_core::sim::{simulate, IntensitySequence, SimulatorConfig};
use estr_core::stack::{representative_frame, stack};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(name = "estr", about = "Event-stream scene text toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Evs1,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Bleu,
    Acc,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize an event file (counts, duration, rate, histogram)
    Stats {
        file: PathBuf,
        /// Input format; inferred from the extension when omitted
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Sensor width, required for csv input
        #[arg(long, default_value_t = 1280)]
        width: u16,
        /// Sensor height, required for csv input
        #[arg(long, default_value_t = 720)]
        height: u16,
    },
    /// Stack an event file into T polarity-colored frames as P6 files
    Stack {
        input: PathBuf,
        outdir: PathBuf,
        #[arg(long, default_value_t = 19)]
        t: usize,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long, default_value_t = 1280)]
        width: u16,
        #[arg(long, default_value_t = 720)]
        height: u16,
    },
    /// Synthesize an event stream from P5/P6 intensity frames
    Simulate {
        /// Input frames in time order (last argument is the output file)
        #[arg(required = true, num_args = 2..)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Microseconds between consecutive frames
        #[arg(long, default_value_t = 1000)]
        frame_interval: u64,
    },
    /// Deterministic 7:1:2 split over ids (one per line)
    Split {
        ids: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Correct predictions with the confusable-glyph database
    Correct {
        pred: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Training corpus for the built-in bigram scorer (one text per line)
        #[arg(long)]
        scorer: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        template: u8,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        #[arg(long, default_value_t = 10)]
        max_candidates: usize,
        /// External recognizer endpoint; switches to prompt-based correction
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
        /// Print the prompt for each record instead of calling anything
        #[arg(long)]
        show_prompt: bool,
    },
    /// Score predictions against ground truth
    Score {
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run the memory-kernel oracle suite
    Memtest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Four-arm component benchmark over a manifest
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        t_count: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        template: Option<u8>,
        #[arg(long)]
        max_candidates: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError { message: e.to_string(), code: EXIT_DATA }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        self.code
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Transport { .. } => EXIT_TRANSPORT,
            _ => EXIT_DATA,
        };
        CliError { message: e.to_string(), code }
    }
}

fn sniff_format(path: &Path, arg: Option<FormatArg>) -> EventFormat {
    match arg {
        Some(FormatArg::Csv) => EventFormat::Csv,
        Some(FormatArg::Evs1) => EventFormat::Evs1,
        None => match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => EventFormat::Csv,
            _ => EventFormat::Evs1,
        },
    }
}

fn load_stream(
    path: &Path,
    format: Option<FormatArg>,
    width: u16,
    height: u16,
) -> Result<ParseOutcome, CliError> {
    let bytes = std::fs::read(path).map_err(data_err)?;
    let out = match sniff_format(path, format) {
        EventFormat::Evs1 => parse_evs1(&bytes),
        EventFormat::Csv => parse_events(&bytes, EventFormat::Csv, width, height),
    }
    .map_err(data_err)?;
    if out.resorted {
        eprintln!("note: input events were unsorted; repaired with a stable sort");
    }
    Ok(out)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Stats { file, format, width, height } => {
            let out = load_stream(&file, format, width, height)?;
            let stats = compute_stats(&out.stream);
            let report = serde_json::json!({
                "file": file,
                "width": out.stream.width,
                "height": out.stream.height,
                "n_events": stats.n_events,
                "n_positive": stats.n_positive,
                "n_negative": stats.n_negative,
                "duration_us": stats.duration_us,
                "events_per_second": stats.events_per_second,
                "resorted": out.resorted,
                "spatial_histogram": stats.spatial_histogram.to_vec(),
            });
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(())
        }
        Command::Stack { input, outdir, t, format, width, height } => {
            let out = load_stream(&input, format, width, height)?;
            let frames = stack(&out.stream, t).map_err(data_err)?;
            std::fs::create_dir_all(&outdir).map_err(data_err)?;
            for (i, frame) in frames.frames.iter().enumerate() {
                let path = outdir.join(format!("frame_{i:03}.ppm"));
                write_p6(frame, &path).map_err(data_err)?;
            }
            let rep = outdir.join("representative.ppm");
            write_p6(representative_frame(&frames), &rep).map_err(data_err)?;
            println!(
                "{}",
                serde_json::json!({
                    "frames": frames.frames.len(),
                    "window_bounds": frames.window_bounds,
                    "representative": rep,
                })
            );
            Ok(())
        }
        Command::Simulate { paths, threshold, eps, frame_interval } => {
            let (out_path, frame_paths) = paths.split_last().unwrap();
            if frame_paths.len() < 2 {
                return Err(CliError {
                    message: "need at least two input frames and one output path".into(),
                    code: EXIT_USAGE,
                });
            }
            let mut frames = Vec::new();
            let mut geometry = None;
            for p in frame_paths {
                let img = read_pnm(&std::fs::read(p).map_err(data_err)?).map_err(data_err)?;
                if *geometry.get_or_insert((img.width, img.height)) != (img.width, img.height) {
                    return Err(data_err(format!("frame {} geometry differs", p.display())));
                }
                // P6 luma by integer (r+g+b)/3
                let gray: Vec<f64> = img
                    .data
                    .chunks(3)
                    .map(|px| ((px[0] as u32 + px[1] as u32 + px[2] as u32) / 3) as f64 / 255.0)
                    .collect();
                frames.push(gray);
            }
            let (w, h) = geometry.unwrap();
            let seq = IntensitySequence {
                width: w,
                height: h,
                frames,
                timestamps: (0..frame_paths.len() as u64).map(|i| i * frame_interval).collect(),
            };
            let cfg = SimulatorConfig { contrast_threshold: threshold, log_eps: eps };
            let stream = simulate(&seq, &cfg).map_err(data_err)?;
            std::fs::write(out_path, serialize_events(&stream, EventFormat::Evs1))
                .map_err(data_err)?;
            println!(
                "{}",
                serde_json::json!({ "events": stream.events.len(), "output": out_path })
            );
            Ok(())
        }
        Command::Split { ids, seed } => {
            let text = std::fs::read_to_string(&ids).map_err(data_err)?;
            let list: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let assignment = split_dataset(&list, seed).map_err(data_err)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "seed": seed,
                    "sizes": [assignment.train.len(), assignment.val.len(), assignment.test.len()],
                    "train": assignment.train,
                    "val": assignment.val,
                    "test": assignment.test,
                }))
                .unwrap()
            );
            Ok(())
        }
        Command::Correct {
            pred,
            db,
            scorer,
            template,
            margin,
            max_candidates,
            endpoint,
            timeout_ms,
            show_prompt,
        } => {
            let template = PromptTemplate::new(template).map_err(data_err)?;
            let db_text = std::fs::read_to_string(&db).map_err(data_err)?;
            let database = load_database(&db_text, max_candidates).map_err(data_err)?;
            let records = read_jsonl(&std::fs::read_to_string(&pred).map_err(data_err)?)?;
            if show_prompt {
                for r in &records {
                    let cands = flatten_candidates(&retrieve_candidates(&r.text, &database));
                    println!("{}", build_prompt(&r.text, &cands, template));
                }
                return Ok(());
            }
            if let Some(endpoint) = endpoint {
                let backend = HttpBackend { endpoint, timeout_ms };
                for r in &records {
                    let report = correct_via_llm(&r.text, &database, template, &backend)
                        .map_err(|e| CliError { message: e.to_string(), code: EXIT_TRANSPORT })?;
                    println!(
                        "{}",
                        serde_json::json!({
                            "id": r.id, "text": r.text, "corrected": report.corrected
                        })
                    );
                }
                return Ok(());
            }
            let scorer_path = scorer.ok_or_else(|| CliError {
                message: "--scorer is required unless --endpoint is given".into(),
                code: EXIT_USAGE,
            })?;
            let corpus: Vec<String> = std::fs::read_to_string(&scorer_path)
                .map_err(data_err)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect();
            let scorer = train_scorer(&corpus).map_err(data_err)?;
            for r in &records {
                let report = correct(&r.text, &database, &scorer, margin);
                println!(
                    "{}",
                    serde_json::json!({
                        "id": r.id, "text": r.text, "corrected": report.corrected
                    })
                );
            }
            Ok(())
        }
        Command::Score { metric, pred, gt } => {
            let preds = read_jsonl(&std::fs::read_to_string(&pred).map_err(data_err)?)?;
            let gts = read_jsonl(&std::fs::read_to_string(&gt).map_err(data_err)?)?;
            let gt_map: HashMap<&str, &str> = gts
                .iter()
                .map(|r| (r.id.as_str(), r.text.as_str()))
                .collect();
            let mut pairs = Vec::with_capacity(preds.len());
            for p in &preds {
                let Some(&label) = gt_map.get(p.id.as_str()) else {
                    return Err(data_err(format!("prediction id {:?} missing from gt", p.id)));
                };
                pairs.push((p.text.clone(), label.to_string()));
            }
            let report = match metric {
                MetricArg::Bleu => {
                    let corpus = corpus_bleu(&pairs).map_err(data_err)?;
                    let avg = average_sentence_bleu(&pairs).map_err(data_err)?;
                    serde_json::json!({
                        "metric": "bleu",
                        "aggregation": "corpus",
                        "bleu": corpus.bleu,
                        "brevity_penalty": corpus.brevity_penalty,
                        "precisions": corpus.precisions,
                        "hyp_len": corpus.hyp_len,
                        "ref_len": corpus.ref_len,
                        "avg_sentence_bleu": avg,
                        "pairs": pairs.len(),
                    })
                }
                MetricArg::Acc => serde_json::json!({
                    "metric": "acc",
                    "word_accuracy": word_accuracy(&pairs).map_err(data_err)?,
                    "pairs": pairs.len(),
                }),
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(())
        }
        Command::Memtest { seed } => memtest(seed),
        Command::Bench {
            manifest,
            db,
            scorer,
            noise,
            config,
            t_count,
            k,
            template,
            max_candidates,
            margin,
            seed,
        } => {
            let overrides = ConfigOverrides {
                t_count,
                memory_k: k,
                prompt_template: template,
                max_candidates,
                margin,
                seed,
            };
            let env: HashMap<String, String> = std::env::vars().collect();
            let cfg = load_config(config.as_deref(), &overrides, &env)?;
            let manifest = load_manifest(&manifest)?;
            let db_text = std::fs::read_to_string(&db).map_err(data_err)?;
            let database = load_database(&db_text, cfg.max_candidates).map_err(data_err)?;
            let corpus: Vec<String> = std::fs::read_to_string(&scorer)
                .map_err(data_err)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect();
            let scorer = train_scorer(&corpus).map_err(data_err)?;
            let report = bench(&manifest, &cfg, &database, &scorer, noise)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(())
        }
    }
}

/// Runtime oracle suite: top-K retrieval against exhaustive full-sort
/// selection on random instances, plus the identical-pattern identity.
fn memtest(seed: u64) -> Result<(), CliError> {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let mut failures = 0;
    for case in 0..200 {
        let m = 1 + rng.gen_range(0..256);
        let d = 1 + rng.gen_range(0..64);
        let k = [1usize, 3, 32, 64, 128][case % 5].min(m);
        let bank = init_bank::<f64>(d, m, rng.gen());
        let query: Vec<f64> = (0..PATTERN_DIM).map(|_| rng.gen::<f64>() - 0.5).collect();
        let (indices, _, scores) = retrieve_query(&query, &bank, k);
        let (oracle_idx, oracle_scores) = brute_force_topk(&query, &bank, k);
        let ok = indices == oracle_idx
            && scores
                .iter()
                .zip(&oracle_scores)
                .all(|(a, b)| (a - b).abs() <= 1e-9);
        if !ok {
            failures += 1;
            println!("FAIL case {case}: m={m} d={d} k={k}");
        }
    }
    // identical-pattern bank: enhance adds the up-projected pattern
    let dims = 8;
    let pattern: Vec<f64> = (0..PATTERN_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut bank = init_bank::<f64>(dims, 16, seed);
    for row in 0..16 {
        bank.patterns[row * PATTERN_DIM..(row + 1) * PATTERN_DIM].copy_from_slice(&pattern);
    }
    let features = FeatureBatch::new(1, 2, dims, vec![0.25; 2 * dims]).unwrap();
    let mut lifted = vec![0.0; dims];
    apply_linear(&bank.w_up.weight, &bank.w_up.bias, &pattern, &mut lifted);
    for k in [1usize, 3, 16] {
        let out = enhance(&features, &bank, k).unwrap();
        for q in 0..2 {
            for dindex in 0..dims {
                let expect = 0.25 + lifted[dindex];
                if (out.data[q * dims + dindex] - expect).abs() > 1e-6 {
                    failures += 1;
                    println!("FAIL identical-pattern k={k}");
                }
            }
        }
    }
    if failures == 0 {
        println!("PASS memtest: 200 retrieval oracle cases + identical-pattern identity");
        Ok(())
    } else {
        Err(CliError { message: format!("memtest: {failures} failures"), code: EXIT_DATA })
    }
}

fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn apply_linear(weight: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let in_dim = input.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &weight[i * in_dim..(i + 1) * in_dim];
        *o = bias[i] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

fn brute_force_topk(
    query: &[f64],
    bank: &estr_core::memory::MemoryBank<f64>,
    k: usize,
) -> (Vec<usize>, Vec<f64>) {
    fn cos(u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nu < 1e-12 || nv < 1e-12 {
            0.0
        } else {
            dot / (nu * nv)
        }
    }
    let mut all: Vec<(usize, f64)> = (0..bank.m_count)
        .map(|i| (i, cos(query, bank.pattern(i))))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    (all.iter().map(|x| x.0).collect(), all.iter().map(|x| x.1).collect())
}
