//! The subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::config::{DataFormat, Overrides, RunConfig, RunConfigFile};
use super::synth::write_synth;
use super::{AttentionExport, CliError, Render};
use crate::corpus::{
    filter_unlabeled, parse_semeval2014, parse_semeval2016, stratified_split, CategoryInventory,
    CorpusFile, EmbeddingTable, RawEmbeddings, RawSentence, Sentence, Stopwords, Vocabulary,
};
use crate::evaluation::{assign_categories, evaluate, sweep_threshold};
use crate::model::{forward_sentence, TanModel, Variant};
use crate::numerics::{finite_difference_check, Tensor};
use crate::training::{fit, load_checkpoint, save_checkpoint, total_loss_op, CheckpointMeta};

fn parse_dataset(path: &Path, format: DataFormat) -> Result<Vec<RawSentence>, CliError> {
    let xml = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let parsed = match format {
        DataFormat::Semeval2014 => parse_semeval2014(&xml)?,
        DataFormat::Semeval2016 => parse_semeval2016(&xml)?,
    };
    Ok(parsed)
}

fn load_stopwords(path: Option<&PathBuf>) -> Result<Stopwords, CliError> {
    match path {
        Some(p) => Ok(Stopwords::from_path(p)?),
        None => Ok(Stopwords::embedded()),
    }
}

fn write_out(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Corpus pipeline → fit → best checkpoint, epoch log, and validation
/// metrics in the output directory.
pub fn cmd_train(
    config_path: &Path,
    overrides: &Overrides,
    quiet: bool,
) -> Result<(), CliError> {
    let cfg = RunConfigFile::load(config_path)?.resolve(overrides)?;
    let train_xml = cfg
        .train_xml
        .clone()
        .ok_or_else(|| CliError::Config("train_xml is required for training".into()))?;
    if let Some(emb) = &cfg.embeddings {
        if !emb.exists() {
            return Err(CliError::Data(format!(
                "embeddings file {} does not exist",
                emb.display()
            )));
        }
    } else if !cfg.embedding_fallback {
        return Err(CliError::Data(
            "no embeddings path and the random fallback is disabled".into(),
        ));
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    write_out(
        &cfg.out_dir.join("resolved_config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;

    let stopwords = load_stopwords(cfg.stopwords.as_ref())?;
    let raws = parse_dataset(&train_xml, cfg.format)?;
    let labeled = filter_unlabeled(raws);
    if labeled.is_empty() {
        return Err(CliError::Data("no labeled sentences in the training file".into()));
    }
    let inventory = CategoryInventory::from_sentences(&labeled);
    write_out(
        &cfg.out_dir.join("corpus.json"),
        &CorpusFile::build(&inventory, &labeled, &stopwords).to_json()?,
    )?;

    let (train_raws, mut val_raws) = stratified_split(labeled, cfg.val_ratio, cfg.seed);
    if val_raws.is_empty() {
        log::warn!("validation split is empty; monitoring training data instead");
        val_raws = train_raws.clone();
    }

    // Vocabulary over all labeled training data (train and validation).
    let token_lists: Vec<Vec<String>> = train_raws
        .iter()
        .chain(&val_raws)
        .map(|r| crate::corpus::preprocess(&r.text, &stopwords))
        .collect();
    let vocab = Vocabulary::from_corpus(token_lists.iter().map(|v| v.as_slice()));

    let raw_embeddings = match &cfg.embeddings {
        Some(path) => Some(RawEmbeddings::load(path)?),
        None => None,
    };
    let table = EmbeddingTable::<f32>::build(
        vocab.clone(),
        raw_embeddings.as_ref(),
        cfg.embedding_dim,
        cfg.oov_policy,
        cfg.seed,
    )?;

    let encode = |raws: &[RawSentence]| -> Vec<Sentence> {
        raws.iter()
            .map(|r| Sentence::encode(r, &stopwords, &vocab, &inventory))
            .collect()
    };
    let train_set = encode(&train_raws);
    let val_set = encode(&val_raws);

    let mut train_config = cfg.train_config();
    let model = TanModel::<f32>::init(train_config.model.clone(), inventory, table, cfg.seed);
    if !quiet {
        println!(
            "training {} on {} sentences ({} validation), {} categories",
            cfg.variant,
            train_set.len(),
            val_set.len(),
            model.inventory.len()
        );
    }
    let result = fit(model, &train_set, &val_set, &train_config)?;

    let mut threshold = cfg.threshold;
    if cfg.sweep_threshold {
        let (best_t, best_f1) = sweep_threshold(&result.model, &val_set, 0.05)?;
        if !quiet {
            println!("threshold sweep on validation: {best_t:.2} (micro-F1 {best_f1:.4})");
        }
        threshold = best_t;
        train_config.threshold = best_t;
    }

    let log_lines: String = result
        .log
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    write_out(&cfg.out_dir.join("epochs.jsonl"), &log_lines)?;

    let checkpoint_path = cfg.out_dir.join("checkpoint.tan");
    save_checkpoint(
        &result.model,
        &train_config,
        result.best_val_f1,
        result.best_epoch as u64,
        &checkpoint_path,
    )?;

    let metrics = evaluate(&result.model, &val_set, threshold, cfg.argmax_fallback)?;
    let metrics_json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_out(&cfg.out_dir.join("metrics.json"), &metrics_json)?;

    if !quiet {
        println!(
            "best epoch {} (validation micro-F1 {:.4}), {} epochs run{}",
            result.best_epoch,
            result.best_val_f1,
            result.log.len(),
            if result.stopped_early { ", stopped early" } else { "" }
        );
        println!("{metrics_json}");
        println!("checkpoint: {}", checkpoint_path.display());
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub format: DataFormat,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub argmax_fallback: bool,
    pub stopwords: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<(TanModel<f32>, CheckpointMeta), CliError> {
    load_checkpoint(path).map_err(CliError::from)
}

/// Category sets in the data must be covered by the model's inventory.
fn check_inventory(
    inventory: &CategoryInventory,
    raws: &[RawSentence],
) -> Result<(), CliError> {
    let unknown: BTreeSet<String> = raws
        .iter()
        .flat_map(|r| r.categories.iter())
        .filter(|c| inventory.position(c).is_none())
        .cloned()
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(CliError::Inventory(format!(
            "categories not in the model inventory: {:?}",
            unknown.into_iter().collect::<Vec<_>>()
        )))
    }
}

pub fn cmd_eval(args: &EvalArgs, quiet: bool) -> Result<(), CliError> {
    let (model, meta) = load_model(&args.checkpoint)?;
    let raws = parse_dataset(&args.data, args.format)?;
    check_inventory(&model.inventory, &raws)?;
    let stopwords = load_stopwords(args.stopwords.as_ref())?;
    let sentences: Vec<Sentence> = raws
        .iter()
        .map(|r| Sentence::encode(r, &stopwords, model.embeddings.vocab(), &model.inventory))
        .collect();
    let threshold = args.threshold.unwrap_or(meta.config.threshold);
    let report = evaluate(&model, &sentences, threshold, args.argmax_fallback)?;
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    println!("{json}");
    if let Some(out) = &args.out {
        write_out(out, &json)?;
    }
    if !quiet {
        log::info!(
            "micro P {:.4} / R {:.4} / F1 {:.4} on {} sentences",
            report.micro.p,
            report.micro.r,
            report.micro.f1,
            report.n_sentences
        );
    }
    Ok(())
}

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub text: String,
    pub threshold: Option<f64>,
    pub stopwords: Option<PathBuf>,
}

fn encode_text(
    model: &TanModel<f32>,
    text: &str,
    stopwords: &Stopwords,
) -> (Vec<String>, Vec<usize>) {
    let tokens = crate::corpus::preprocess(text, stopwords);
    let ids = tokens
        .iter()
        .map(|t| model.embeddings.vocab().get_or_unk(t))
        .collect();
    (tokens, ids)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    if args.text.trim().is_empty() {
        return Err(CliError::Config("--text must be nonempty".into()));
    }
    let (model, meta) = load_model(&args.checkpoint)?;
    let stopwords = load_stopwords(args.stopwords.as_ref())?;
    let (tokens, ids) = encode_text(&model, &args.text, &stopwords);
    let output = model
        .forward(&ids, ids.len())
        .map_err(|e| CliError::Check(e.to_string()))?;
    let threshold = args.threshold.unwrap_or(meta.config.threshold);
    let assigned = assign_categories(&output.probabilities, threshold, false);

    let mut probabilities = serde_json::Map::new();
    for (i, name) in model.inventory.names().iter().enumerate() {
        probabilities.insert(
            name.clone(),
            serde_json::json!(output.probabilities[i]),
        );
    }
    let result = serde_json::json!({
        "tokens": tokens,
        "categories": assigned
            .iter()
            .map(|&i| model.inventory.names()[i].clone())
            .collect::<Vec<_>>(),
        "probabilities": probabilities,
        "threshold": threshold,
    });
    println!("{}", serde_json::to_string_pretty(&result).expect("json"));
    Ok(())
}

pub fn cmd_attention(
    checkpoint: &Path,
    text: &str,
    out: Option<&Path>,
    render: Render,
    stopwords: Option<&PathBuf>,
) -> Result<(), CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Config("--text must be nonempty".into()));
    }
    let (model, _) = load_model(checkpoint)?;
    let stopwords = load_stopwords(stopwords)?;
    let (tokens, ids) = encode_text(&model, text, &stopwords);
    let output = model
        .forward(&ids, ids.len())
        .map_err(|e| CliError::Check(e.to_string()))?;
    let export = AttentionExport::new(tokens, output.attention);
    let rendered = export.render(render);
    match out {
        Some(path) => write_out(path, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

pub struct GradcheckArgs {
    pub variant: Variant,
    pub seed: u64,
    pub literal_eq3: bool,
    pub corrupt_gradient: bool,
}

/// Builds a tiny 64-bit model (3 topics, hidden 8, 4 categories) and a
/// two-sentence batch (5 tokens and 3 tokens, padded to 5), then compares
/// reverse-mode gradients against central finite differences for every
/// parameter group. Passes at max relative error < 1e-4.
pub fn cmd_gradcheck(args: &GradcheckArgs, quiet: bool) -> Result<(), CliError> {
    const TOLERANCE: f64 = 1e-4;
    let lists = [vec![
        "alpha".to_string(),
        "bravo".to_string(),
        "charlie".to_string(),
        "delta".to_string(),
        "echo".to_string(),
    ]];
    let vocab = Vocabulary::from_corpus(lists.iter().map(|v| v.as_slice()));
    let table = EmbeddingTable::<f64>::build(
        vocab,
        None,
        6,
        crate::corpus::OovPolicy::SeededRandom,
        args.seed,
    )?;
    let inventory = CategoryInventory::from_names(
        ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect(),
    );
    let config = crate::model::ModelConfig {
        variant: args.variant,
        embedding_dim: 6,
        hidden: 8,
        topics: 3,
        p1: 4,
        p2: 3,
        va_hidden: 6,
        dropout: 0.0,
        literal_eq3: args.literal_eq3,
        shared_topic_heads: false,
        fine_tune_embeddings: false,
    };
    let model = TanModel::init(config, inventory, table, args.seed);

    let batch: [&[usize]; 2] = [&[3, 4, 5, 6, 7], &[5, 3, 6]];
    let target: Vec<f64> = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    let loss_of = |m: &TanModel<f64>| -> Result<
        (crate::numerics::Tape<f64>, Vec<crate::numerics::ValueId>, crate::numerics::ValueId),
        CliError,
    > {
        let mut tape = crate::numerics::Tape::new();
        let bound = m.bind(&mut tape);
        let mut prob_ids = Vec::new();
        for tokens in batch {
            let s = forward_sentence(&mut tape, m, &bound, tokens, 5, None)
                .map_err(|e| CliError::Check(e.to_string()))?;
            prob_ids.push(s.probs);
        }
        let probs = tape.concat(&prob_ids).map_err(|e| CliError::Check(e.to_string()))?;
        let tgt = tape.input(Tensor::vector(target.clone()));
        let topics = bound.topics_id();
        let loss = total_loss_op(&mut tape, probs, tgt, topics, 1.0)
            .map_err(|e| CliError::Check(e.to_string()))?;
        Ok((tape, bound.param_ids.clone(), loss))
    };

    let (tape, ids, loss) = loss_of(&model)?;
    let grads = tape.backward(loss).map_err(|e| CliError::Check(e.to_string()))?;
    let mut analytic: Vec<Tensor<f64>> = ids.iter().map(|&id| grads.get(id)).collect();
    if args.corrupt_gradient {
        // Negative control: a deliberately wrong gradient must fail.
        let victim = analytic[0].data_mut();
        victim[0] = victim[0] * 1.5 + 1e-3;
    }

    let names = model.param_names();
    let params = model.param_tensors();
    let mut worst = 0.0f64;
    if !quiet {
        println!("{:<28} {:>12}", "parameter group", "max rel err");
    }
    for (gi, name) in names.iter().enumerate() {
        let group_param = vec![params[gi].clone()];
        let group_grad = vec![analytic[gi].clone()];
        let mut f = |ps: &[Tensor<f64>]| -> f64 {
            let mut all = params.clone();
            all[gi] = ps[0].clone();
            let mut m = model.clone();
            m.set_params(&all);
            let (tape, _, loss) = loss_of(&m).expect("forward succeeds");
            tape.value(loss).item()
        };
        let err = finite_difference_check(&mut f, &group_param, &group_grad, 1e-5);
        worst = worst.max(err);
        if !quiet {
            println!("{name:<28} {err:>12.3e}");
        }
    }
    if !quiet {
        println!(
            "max relative error {worst:.3e} ({})",
            if worst < TOLERANCE { "pass" } else { "FAIL" }
        );
    }
    if worst < TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed: max relative error {worst:.3e} >= {TOLERANCE:e}"
        )))
    }
}

pub fn cmd_synth(out_dir: &Path, seed: u64, quiet: bool) -> Result<(), CliError> {
    let output = write_synth(out_dir, seed)?;
    if !quiet {
        println!("corpus:  {}", output.xml_path.display());
        println!("config:  {}", output.config_path.display());
    }
    Ok(())
}
