use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use resident::data::{clean_tweet, encode_raw, filter_english, load_tsv, looks_english, write_tsv, GroupTable, TASK_B_FALLBACK};
use resident::metrics::{confusion_matrix, metrics, project_to_group};
use resident::selfcheck::{gradient_suite, COMPONENTS};
use resident::{build_model, load_model, save_model, Dataset, Example, LabelVocab, Model};

use crate::args::{CleanArgs, EvaluateArgs, GradcheckArgs, GroupArgs, PredictArgs, TrainArgs};
use crate::{config, usage_error};

fn load(path: &Path) -> Result<Dataset> {
    let (ds, report) = load_tsv(path).with_context(|| format!("loading {}", path.display()))?;
    if report.invalid_utf8_skipped > 0 {
        warn!("{}: skipped {} lines of invalid UTF-8", path.display(), report.invalid_utf8_skipped);
    }
    Ok(ds)
}

fn open_model(path: &Path) -> Result<Model> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

/// Class probabilities for each byte string, in input order.
fn probabilities(model: &Model, texts: &[&[u8]], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let len = model.config.max_len;
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch_size.max(1)) {
        let ids: Vec<u16> = chunk.iter().flat_map(|t| encode_raw(t, len)).collect();
        let p = model.predict_proba(&ids, chunk.len())?;
        out.extend((0..chunk.len()).map(|r| p.row(r).to_vec()));
    }
    Ok(out)
}

/// Most probable label per row, first one on ties.
fn predicted_labels<'m>(model: &'m Model, probs: &[Vec<f64>]) -> Vec<&'m str> {
    probs
        .iter()
        .map(|p| {
            let best = p
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > p[best] { i } else { best });
            model.labels.code(best)
        })
        .collect()
}

/// Group codes and fallback label named by `--group`/`--fallback`.
fn resolve_group(args: &GroupArgs) -> Option<(Vec<String>, String)> {
    let name = args.group.as_ref()?;
    let (a, b) = (GroupTable::task_a(), GroupTable::task_b());
    let Some(codes) = b.group(name).or_else(|| a.group(name)) else {
        let known: Vec<&str> = b.iter().chain(a.iter()).map(|(n, _)| n).collect();
        usage_error(format!("unknown group {name:?} (known: {})", known.join(", ")));
    };
    let fallback = match &args.fallback {
        Some(f) => f.clone(),
        None if codes.iter().any(|c| c == TASK_B_FALLBACK) => TASK_B_FALLBACK.to_string(),
        None => usage_error(format!("group {name:?} needs --fallback")),
    };
    if !codes.contains(&fallback) {
        usage_error(format!("fallback {fallback:?} is not in group {name:?} ({})", codes.join(", ")));
    }
    Some((codes.to_vec(), fallback))
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    if let Some(p) = args.preset {
        let given = args.arch.given();
        if !given.is_empty() {
            usage_error(format!(
                "--preset {} cannot be combined with {}",
                format!("{p:?}").to_lowercase(),
                given.join(", ")
            ));
        }
    }
    let train_set = load(&args.train)?;
    let dev_set = args.dev.as_deref().map(load).transpose()?;
    let (model_cfg, train_cfg) = config::resolve(&args, train_set.labels.len())?;
    let model = build_model(&model_cfg, train_set.labels.clone(), train_cfg.seed)?;
    info!(
        "{} examples, {} labels, {} blocks, {} parameters",
        train_set.len(),
        model.labels.len(),
        model_cfg.n_blocks,
        model.parameter_count()
    );
    let (model, history) = resident::train(model, &train_set, dev_set.as_ref(), &train_cfg, |r| {
        info!("{}", r.log_line())
    })?;
    save_model(&model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let metrics_path = args.metrics.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".metrics.jsonl");
        PathBuf::from(p)
    });
    fs::write(&metrics_path, history.to_jsonl()).with_context(|| format!("writing {}", metrics_path.display()))?;
    info!(
        "kept epoch {} of {}; model in {}",
        history.best_epoch,
        history.epochs.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Splits raw input into lines, accepting LF or CRLF endings.
fn lines_of(raw: &[u8]) -> Vec<&[u8]> {
    if raw.is_empty() {
        return Vec::new();
    }
    let body = raw.strip_suffix(b"\n").unwrap_or(raw);
    body.split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .collect()
}

pub fn predict(args: PredictArgs) -> Result<ExitCode> {
    let group = resolve_group(&args.group);
    let model = open_model(&args.model)?;
    let mut raw = Vec::new();
    match &args.input {
        Some(p) => raw = fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            io::stdin().read_to_end(&mut raw).context("reading standard input")?;
        }
    }
    let lines = lines_of(&raw);
    let probs = probabilities(&model, &lines, args.batch_size)?;
    let labels = predicted_labels(&model, &probs);

    let mut out = BufWriter::new(io::stdout().lock());
    for (label, p) in labels.iter().zip(&probs) {
        let label = match &group {
            Some((codes, fallback)) => project_to_group(label, codes, fallback)?,
            None => label,
        };
        write!(out, "{label}")?;
        if args.probs {
            for v in p {
                write!(out, "\t{v:.6}")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let group = resolve_group(&args.group);
    let model = open_model(&args.model)?;
    let test = load(&args.test)?;
    let vocab = match &group {
        Some((codes, _)) => LabelVocab::new(codes.clone())?,
        None => model.labels.clone(),
    };
    let missing: Vec<&str> = test
        .labels
        .codes()
        .iter()
        .filter(|c| !vocab.contains(c))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        let scope = if group.is_some() { "the group" } else { "the model" };
        bail!("test labels not known to {scope}: {}", missing.join(", "));
    }

    let texts: Vec<&[u8]> = test.examples.iter().map(Example::bytes).collect();
    let probs = probabilities(&model, &texts, args.batch_size)?;
    let mut preds = predicted_labels(&model, &probs);
    if let Some((codes, fallback)) = &group {
        for p in &mut preds {
            *p = project_to_group(p, codes, fallback)?;
        }
    }
    let golds: Vec<&str> = test.examples.iter().map(|e| e.label.as_str()).collect();
    let cm = confusion_matrix(&golds, &preds, &vocab)?;
    let report = metrics(&cm)?;

    let mut out = BufWriter::new(io::stdout().lock());
    write!(out, "{}\n{}", report.table(&args.run), report.class_table())?;
    out.flush()?;
    if let Some(p) = &args.confusion {
        fs::write(p, cm.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.json {
        fs::write(p, report.to_json_line()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn clean(args: CleanArgs) -> Result<ExitCode> {
    let ds = load(&args.input)?;
    let before = ds.len();
    let cleaned: Vec<Example> = ds
        .examples
        .into_iter()
        .map(|e| Example::new(clean_tweet(&e.text), e.label))
        .filter(|e| !e.text.is_empty())
        .collect();
    let emptied = before - cleaned.len();
    let mut ds = Dataset::new(cleaned);
    if args.drop_english {
        let n = ds.len();
        ds = match &args.english_model {
            None => filter_english(ds, looks_english),
            Some(path) => {
                let model = open_model(path)?;
                let Some(en) = model.labels.index(&args.english_label) else {
                    bail!("model {} has no label {:?}", path.display(), args.english_label);
                };
                let texts: Vec<&[u8]> = ds.examples.iter().map(Example::bytes).collect();
                let probs = probabilities(&model, &texts, 100)?;
                let verdict: HashMap<String, bool> = ds
                    .examples
                    .iter()
                    .zip(&probs)
                    .map(|(e, p)| (e.text.clone(), p[en] >= args.threshold))
                    .collect();
                filter_english(ds, |t| verdict[t])
            }
        };
        info!("dropped {} English lines", n - ds.len());
    }
    info!("{} of {} lines kept ({} empty after cleanup)", ds.len(), before, emptied);
    match &args.out {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(f);
            write_tsv(&ds.examples, &mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            write_tsv(&ds.examples, &mut w)?;
            w.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    if let Some(f) = &args.inject_fault {
        if !COMPONENTS.contains(&f.as_str()) {
            usage_error(format!("unknown component {f:?}"));
        }
    }
    if args.seeds == 0 {
        usage_error("--seeds must be at least 1".to_string());
    }
    let start = Instant::now();
    let mut failed: Vec<&str> = Vec::new();
    let mut out = BufWriter::new(io::stdout().lock());
    for seed in args.seed..args.seed + args.seeds {
        for r in gradient_suite(seed, args.inject_fault.as_deref())? {
            let verdict = if r.passed() { "ok" } else { "FAIL" };
            writeln!(out, "seed {seed:<4} {:<24} {:.3e}  {verdict}", r.name, r.max_relative_error)?;
            if !r.passed() && !failed.contains(&r.name) {
                failed.push(r.name);
            }
        }
    }
    out.flush()?;
    info!("{} seed(s) in {:.1}s", args.seeds, start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}
