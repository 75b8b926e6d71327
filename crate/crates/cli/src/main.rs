mod opts;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use glsim::lexicon::{load_annotations, load_lexicon, read_mentions_jsonl, write_mentions_jsonl};
use glsim::scoring::{grounding_heatmap, read_records_jsonl, write_records_jsonl};
use glsim::synth::{generate, SynthSpec};
use glsim::{
    evaluate, extract_mentions, histogram, label_mentions, read_bundle, score_all, sweep,
    validate_bundle, write_bundle, AnnotationSet, LabeledScores, Method, ObjectLexicon,
    ObjectMention, Scalar, ScoreBatch, ScoringConfig, SweepAxis, TraceBundle,
};

use opts::{parse_axis, parse_methods, ScoringArgs, UsageError};

const EXIT_FINDINGS: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "glsim", version)]
#[command(about = "Object hallucination scoring over exported LVLM traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a trace bundle; exits 1 when it has findings
    Validate {
        #[arg(env = "GLSIM_BUNDLE")]
        bundle: PathBuf,
    },
    /// Find object mentions in every caption and label them
    ExtractMentions {
        #[arg(env = "GLSIM_BUNDLE")]
        bundle: PathBuf,
        /// Lexicon JSON (default: built-in MSCOCO-80)
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Ground-truth classes per image; defaults to the bundle's
        /// annotation reference, mentions stay unlabeled without either
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score mentions with one or more methods
    Score {
        #[arg(env = "GLSIM_BUNDLE")]
        bundle: PathBuf,
        #[arg(long)]
        mentions: PathBuf,
        /// Comma-separated methods, or `all`
        #[arg(long, default_value = "glsim")]
        method: String,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        /// Write the scores that succeeded even if some mentions failed
        #[arg(long)]
        keep_going: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// AUROC/AUPR per method and configuration
    Evaluate {
        scores: PathBuf,
        /// Also report the F1-maximizing threshold
        #[arg(long)]
        calibrate_f1: bool,
        /// Write per-group score histograms into this directory
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// AUROC over a grid of K, w or layer pairs
    Sweep {
        #[arg(env = "GLSIM_BUNDLE")]
        bundle: PathBuf,
        #[arg(long)]
        mentions: PathBuf,
        /// `w=0:1:0.1`, `k=1,2,4` or `layers=30,31x29,30`
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        #[arg(long, default_value = "glsim")]
        method: Method,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Also write the failure log here
        #[arg(long)]
        failures: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Patch relevance map of one object as CSV (and optionally PGM)
    Ground {
        #[arg(env = "GLSIM_BUNDLE")]
        bundle: PathBuf,
        #[arg(long)]
        sample: String,
        /// Canonical class name or surface form as it appears in the caption
        #[arg(long)]
        object: String,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Top-K mask as 0/1 CSV
        #[arg(long)]
        mask: Option<PathBuf>,
        /// 8-bit grayscale image of the map; its scaling bounds go to a .json beside it
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a synthetic bundle with annotations.json and lexicon.json
    Synth {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Validate { bundle } => validate(&bundle),
        Command::ExtractMentions {
            bundle,
            lexicon,
            annotations,
            output,
        } => extract(&bundle, lexicon.as_deref(), annotations.as_deref(), &output),
        Command::Score {
            bundle,
            mentions,
            method,
            scoring,
            precision,
            keep_going,
            output,
        } => {
            let methods = parse_methods(&method).map_err(UsageError)?;
            let bundle = load_bundle(&bundle)?;
            let mentions = load_mentions(&mentions)?;
            let cfg = scoring.resolve(&bundle.pack.model_id)?;
            check_config(&bundle, &mentions, &cfg)?;
            match precision {
                Precision::F32 => {
                    score::<f32>(&bundle, &mentions, &cfg, &methods, keep_going, &output)
                }
                Precision::F64 => {
                    score::<f64>(&bundle, &mentions, &cfg, &methods, keep_going, &output)
                }
            }
        }
        Command::Evaluate {
            scores,
            calibrate_f1,
            histogram,
            bins,
            output,
        } => evaluate_cmd(&scores, calibrate_f1, histogram.as_deref(), bins, &output),
        Command::Sweep {
            bundle,
            mentions,
            axis,
            method,
            scoring,
            failures,
            output,
        } => {
            let bundle = load_bundle(&bundle)?;
            let mentions = load_mentions(&mentions)?;
            let cfg = scoring.resolve(&bundle.pack.model_id)?;
            let grid = sweep::<f64>(&bundle, &mentions, &cfg, &axis, method);
            for f in &grid.failures {
                eprintln!("cell failed: {f}");
            }
            if let Some(path) = failures {
                write_file(&path, grid.failures.join("\n").as_bytes())?;
            }
            write_file(&output, grid.to_csv().as_bytes())?;
            Ok(0)
        }
        Command::Ground {
            bundle,
            sample,
            object,
            lexicon,
            scoring,
            mask,
            pgm,
            output,
        } => {
            let bundle = load_bundle(&bundle)?;
            let lex = lexicon_from(lexicon.as_deref())?;
            let cfg = scoring.resolve(&bundle.pack.model_id)?;
            let trace = bundle
                .sample(&sample)
                .ok_or_else(|| anyhow!("no sample {sample:?} in bundle"))?;
            let wanted = object.to_lowercase();
            let mention = extract_mentions(trace, &lex)?
                .into_iter()
                .find(|m| m.canonical == wanted || m.surface == wanted)
                .ok_or_else(|| anyhow!("{object:?} is not mentioned in sample {sample:?}"))?;
            let map = grounding_heatmap::<f64>(trace, &bundle.pack, &mention, &cfg)?;
            write_file(&output, map.to_csv().as_bytes())?;
            if let Some(path) = mask {
                write_file(&path, map.mask_csv().as_bytes())?;
            }
            if let Some(path) = pgm {
                let (bytes, bounds) = map.to_pgm();
                write_file(&path, &bytes)?;
                // the bounds needed to map gray levels back to probabilities
                let mut json = serde_json::to_string_pretty(&bounds)?;
                json.push('\n');
                write_file(&path.with_extension("json"), json.as_bytes())?;
            }
            Ok(0)
        }
        Command::Synth { spec, output } => {
            let text =
                fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("{}: {e}", spec.display())))?;
            let out = generate(&spec).map_err(|e| UsageError(e.to_string()))?;
            write_bundle(&out.bundle, &output)?;
            write_file(
                &output.join("annotations.json"),
                serde_json::to_string_pretty(&out.annotations)?.as_bytes(),
            )?;
            write_file(
                &output.join("lexicon.json"),
                out.lexicon.to_json().as_bytes(),
            )?;
            eprintln!(
                "wrote {} samples, {} mentions to {}",
                out.bundle.samples.len(),
                out.planted.len(),
                output.display()
            );
            Ok(0)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_bundle(path: &Path) -> Result<TraceBundle> {
    read_bundle(path).with_context(|| format!("reading bundle {}", path.display()))
}

fn load_mentions(path: &Path) -> Result<Vec<ObjectMention>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_mentions_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn lexicon_from(path: Option<&Path>) -> Result<ObjectLexicon> {
    Ok(match path {
        Some(p) => load_lexicon(p)?,
        None => ObjectLexicon::mscoco80(),
    })
}

fn validate(path: &Path) -> Result<u8> {
    let report = validate_bundle(path)?;
    if report.is_valid() {
        eprintln!("{}: ok", path.display());
        Ok(0)
    } else {
        eprintln!("{}: {} finding(s)", path.display(), report.len());
        eprint!("{report}");
        Ok(EXIT_FINDINGS)
    }
}

fn extract(
    bundle_path: &Path,
    lexicon: Option<&Path>,
    annotations: Option<&Path>,
    output: &Path,
) -> Result<u8> {
    let bundle = load_bundle(bundle_path)?;
    let lex = lexicon_from(lexicon)?;
    let annotation_path = annotations.map(Path::to_path_buf).or_else(|| {
        bundle
            .annotations_ref
            .as_ref()
            .map(|r| bundle_path.join(r))
            .filter(|p| p.exists())
    });
    let truth: Option<AnnotationSet> = annotation_path
        .map(|p| load_annotations(&p, &lex))
        .transpose()?;
    let mut all = Vec::new();
    for trace in &bundle.samples {
        let found = extract_mentions(trace, &lex)?;
        match &truth {
            Some(t) => all.extend(label_mentions(&found, t, &trace.image_id)?),
            None => all.extend(found),
        }
    }
    let mut buf = Vec::new();
    write_mentions_jsonl(&mut buf, &all)?;
    write_file(output, &buf)?;
    eprintln!("{} mentions in {} samples", all.len(), bundle.samples.len());
    Ok(0)
}

/// Layer and K problems would fail every mention; report them once.
fn check_config(
    bundle: &TraceBundle,
    mentions: &[ObjectMention],
    cfg: &ScoringConfig,
) -> Result<()> {
    for m in mentions {
        let trace = bundle
            .sample(&m.sample_id)
            .ok_or_else(|| anyhow!("mention refers to unknown sample {:?}", m.sample_id))?;
        cfg.check_against(trace)
            .with_context(|| format!("sample {}", trace.sample_id))?;
    }
    Ok(())
}

fn score<F: Scalar + serde::Serialize>(
    bundle: &TraceBundle,
    mentions: &[ObjectMention],
    cfg: &ScoringConfig,
    methods: &[Method],
    keep_going: bool,
    output: &Path,
) -> Result<u8> {
    let ScoreBatch { records, failures } = score_all::<F>(bundle, mentions, cfg, methods);
    for f in &failures {
        eprintln!("{} {} {}: {}", f.sample_id, f.canonical, f.method, f.error);
    }
    if !failures.is_empty() && !keep_going {
        bail!(
            "{} of {} scores failed",
            failures.len(),
            failures.len() + records.len()
        );
    }
    let file =
        fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    let mut out = BufWriter::new(file);
    write_records_jsonl(&mut out, &records)?;
    out.flush()?;
    eprintln!("{} scores, config {}", records.len(), cfg.fingerprint());
    Ok(0)
}

fn evaluate_cmd(
    scores: &Path,
    calibrate_f1: bool,
    hist_dir: Option<&Path>,
    bins: usize,
    output: &Path,
) -> Result<u8> {
    let file = fs::File::open(scores).with_context(|| format!("opening {}", scores.display()))?;
    let records = read_records_jsonl::<_, f64>(BufReader::new(file))
        .map_err(|e| anyhow!("{}: {e}", scores.display()))?;
    let report = evaluate(&records, calibrate_f1);
    for g in &report.groups {
        if let Some(e) = &g.error {
            eprintln!("{} {}: {e}", g.method, g.config_fingerprint);
        }
    }
    if let Some(dir) = hist_dir {
        for g in &report.groups {
            let group: Vec<_> = records
                .iter()
                .filter(|r| r.method == g.method && r.config_fingerprint == g.config_fingerprint)
                .cloned()
                .collect();
            let ls = LabeledScores::from_records(&group)?;
            match histogram(&ls, bins) {
                Ok(h) => write_file(
                    &dir.join(format!("{}_{}.csv", g.method, g.config_fingerprint)),
                    h.to_csv().as_bytes(),
                )?,
                Err(e) => eprintln!("histogram {} {}: {e}", g.method, g.config_fingerprint),
            }
        }
    }
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(output, json.as_bytes())?;
    Ok(0)
}
