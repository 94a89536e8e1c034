use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pprec_core::checkpoint::Checkpoint;
use pprec_core::data::{
    compute_ctr, generate_synthetic_corpus, load_embeddings, quantize_recency,
    synthetic_embeddings, write_embeddings, Corpus, CtrIndex, NewsCatalog, PreparedCorpus, Split,
};
use pprec_core::eval::{
    evaluate, Baseline, EvalOptions, EvalReport, MethodReport, ModelScorer, RunEvaluation,
};
use pprec_core::model::{ModelConfig, PpRec};
use pprec_core::train::{train, TrainOptions};
use pprec_core::{Error, Result};
use serde::Serialize;

use crate::args::{EvaluateArgs, GenDataArgs, PredictArgs, PreprocessArgs, TrainArgs};
use crate::config::{method_label, model_config, synthetic_config};
use crate::manifest::RunManifest;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub const WORD_VECTORS: &str = "word_vectors.txt";
pub const ENTITY_VECTORS: &str = "entity_vectors.txt";

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = synthetic_config(args)?;
    let out = &args.out;
    let occupied = out
        .read_dir()
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied && !args.force {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    create_dir(out)?;
    for split in Split::ALL {
        create_dir(&out.join(split.name()))?;
    }
    let manifest_path = out.join("manifest.json");
    let mut manifest = RunManifest::new("gen-data", &cfg, args.seed, &[])?;
    manifest.write(&manifest_path)?;

    let synthetic = generate_synthetic_corpus(&cfg, args.seed)?;
    let mut files = synthetic.corpus.save(out)?;
    if args.vectors {
        let (words, entities) =
            synthetic_embeddings(&cfg, args.word_dim, args.entity_dim, args.seed)?;
        for (name, rows) in [(WORD_VECTORS, words), (ENTITY_VECTORS, entities)] {
            let path = out.join(name);
            write_embeddings(&path, &rows)?;
            files.push(path);
        }
    }
    log::info!(
        "wrote {} news and {}/{}/{} impressions to {}",
        synthetic.corpus.news.len(),
        synthetic.corpus.train.len(),
        synthetic.corpus.valid.len(),
        synthetic.corpus.test.len(),
        out.display()
    );
    manifest.finish(&manifest_path, files)
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let cfg = model_config(&args.model)?;
    let root = &args.data.data;
    create_dir(&args.out)?;
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest::new("preprocess", &cfg, cfg.seed, &Corpus::files(root))?;
    manifest.write(&manifest_path)?;

    let corpus = Corpus::load(root)?;
    let data = PreparedCorpus::prepare(&corpus, &cfg.prepare_settings(), None)?;
    let vocab = args.out.join("vocab.json");
    let entities = args.out.join("entity_vocab.json");
    let news = args.out.join("news.processed.jsonl");
    let stats = args.out.join("stats.json");
    write_json(&vocab, &data.vocab)?;
    write_json(&entities, &data.entity_vocab)?;
    let mut lines = String::new();
    for a in data.catalog.articles() {
        lines.push_str(&serde_json::to_string(a)?);
        lines.push('\n');
    }
    write_file(&news, &lines)?;
    let by_split: Vec<_> = Split::ALL
        .iter()
        .map(|s| (s.name(), data.stats.get(s).copied().unwrap_or_default()))
        .collect();
    write_json(&stats, &by_split)?;
    log::info!(
        "vocabulary {} words, {} entities",
        data.vocab.len(),
        data.entity_vocab.len()
    );
    manifest.finish(&manifest_path, vec![vocab, entities, news, stats])
}

/// Report files for `report`, plus the main table on stdout.
fn emit_report(report: &EvalReport, out: Option<&Path>, opts: EvalOptions) -> Result<Vec<PathBuf>> {
    print!("{}", report.to_tsv());
    if opts.cold_start {
        print!("\n{}", report.cold_start_tsv());
    }
    if opts.diversity {
        print!("\n{}", report.diversity_tsv());
    }
    let Some(dir) = out else {
        return Ok(Vec::new());
    };
    let mut written = vec![dir.join("report.tsv"), dir.join("report.json")];
    write_file(&written[0], &report.to_tsv())?;
    write_json(&written[1], report)?;
    if opts.cold_start {
        let p = dir.join("cold_start.tsv");
        write_file(&p, &report.cold_start_tsv())?;
        written.push(p);
    }
    if opts.diversity {
        let p = dir.join("diversity.tsv");
        write_file(&p, &report.diversity_tsv())?;
        written.push(p);
    }
    Ok(written)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let cfg = model_config(&args.model)?;
    let root = &args.data.data;
    create_dir(&args.out)?;
    let mut inputs = Corpus::files(root);
    inputs.extend(args.word_embeddings.iter().cloned());
    inputs.extend(args.entity_embeddings.iter().cloned());
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest::new("train", &cfg, cfg.seed, &inputs)?;
    manifest.write(&manifest_path)?;

    let corpus = Corpus::load(root)?;
    let data = PreparedCorpus::prepare(&corpus, &cfg.prepare_settings(), None)?;
    let words = args
        .word_embeddings
        .as_deref()
        .map(|p| load_embeddings(p, cfg.word_dim))
        .transpose()?;
    let entities = args
        .entity_embeddings
        .as_deref()
        .map(|p| load_embeddings(p, cfg.entity_dim))
        .transpose()?;
    let pool = thread_pool(args.parallel)?;
    let opts = EvalOptions {
        cold_start: true,
        diversity: true,
    };

    let mut outputs = Vec::new();
    let mut runs = Vec::new();
    for r in 0..args.runs {
        let run_cfg = ModelConfig {
            seed: cfg.seed + r as u64,
            ..cfg.clone()
        };
        let dir = args.out.join(format!("run-{r}"));
        let mut model = PpRec::new(
            run_cfg,
            &data.vocab,
            &data.entity_vocab,
            words.as_ref(),
            entities.as_ref(),
        )?;
        let log = train(
            &mut model,
            &data,
            &TrainOptions {
                checkpoint_dir: Some(dir.clone()),
                select_by_validation: !args.no_validation_selection,
            },
        )?;
        let model_path = dir.join("model.json");
        Checkpoint::from_model(&model, &data.vocab, &data.entity_vocab).save(&model_path)?;
        let log_path = dir.join("train_log.json");
        write_json(&log_path, &log)?;
        outputs.extend(log.epochs.iter().filter_map(|e| e.checkpoint.clone()));
        outputs.push(model_path);
        outputs.push(log_path);
        let result = pool.install(|| -> Result<RunEvaluation> {
            let scorer = ModelScorer::new(&model, &data.catalog)?;
            evaluate(&scorer, &data.test, &data.catalog, opts)
        })?;
        log::info!(
            "run {r}: test AUC {:.4} (epoch {} selected)",
            result.metrics.auc,
            log.selected_epoch
        );
        runs.push(result);
    }
    let label = args.label.clone().unwrap_or_else(|| method_label(&cfg));
    let report = EvalReport {
        methods: vec![MethodReport::from_runs(label, &runs)],
    };
    outputs.extend(emit_report(&report, Some(&args.out), opts)?);
    manifest.finish(&manifest_path, outputs)
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    if args.checkpoint.is_empty() && args.baseline.is_empty() {
        return Err(Error::Config(
            "nothing to evaluate: pass --checkpoint and/or --baseline".into(),
        ));
    }
    let baselines: Vec<Baseline> = args
        .baseline
        .iter()
        .map(|b| b.parse())
        .collect::<Result<_>>()?;
    let expected = args
        .model
        .touches_architecture()
        .then(|| model_config(&args.model))
        .transpose()?;
    let root = &args.data.data;
    let mut inputs = Corpus::files(root);
    inputs.extend(args.checkpoint.iter().cloned());
    let manifest_path = args.out.as_ref().map(|d| d.join("manifest.json"));
    let settings_cfg = expected.clone().unwrap_or_default();
    let mut manifest = RunManifest::new("evaluate", &settings_cfg, settings_cfg.seed, &inputs)?;
    if let (Some(dir), Some(path)) = (&args.out, &manifest_path) {
        create_dir(dir)?;
        manifest.write(path)?;
    }

    let corpus = Corpus::load(root)?;
    let pool = thread_pool(args.parallel)?;
    let opts = EvalOptions {
        cold_start: args.cold_start,
        diversity: args.diversity,
    };
    let mut report = EvalReport::default();

    let mut baseline_cfg = settings_cfg.clone();
    if !args.checkpoint.is_empty() {
        let mut runs = Vec::new();
        let mut label = None;
        for path in &args.checkpoint {
            let ck = Checkpoint::load(path)?;
            if let Some(exp) = &expected {
                ck.check_config(exp)?;
            }
            let settings = ck.config.prepare_settings();
            baseline_cfg = ck.config.clone();
            label.get_or_insert_with(|| method_label(&ck.config));
            let (model, vocab, entity_vocab) = ck.into_model()?;
            let data = PreparedCorpus::prepare(&corpus, &settings, Some((vocab, entity_vocab)))?;
            runs.push(pool.install(|| -> Result<RunEvaluation> {
                let scorer = ModelScorer::new(&model, &data.catalog)?;
                evaluate(&scorer, &data.test, &data.catalog, opts)
            })?);
        }
        let label = args.label.clone().or(label).unwrap_or_default();
        report.methods.push(MethodReport::from_runs(label, &runs));
    }
    if !baselines.is_empty() {
        let data = PreparedCorpus::prepare(&corpus, &baseline_cfg.prepare_settings(), None)?;
        for b in baselines {
            let runs = (0..args.runs.max(1))
                .map(|_| pool.install(|| evaluate(&b, &data.test, &data.catalog, opts)))
                .collect::<Result<Vec<_>>>()?;
            report
                .methods
                .push(MethodReport::from_runs(b.name(), &runs));
        }
    }
    let outputs = emit_report(&report, args.out.as_deref(), opts)?;
    if let Some(path) = &manifest_path {
        manifest.finish(path, outputs)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn predict_popularity(args: &PredictArgs) -> Result<()> {
    let root = &args.data.data;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mut inputs = Corpus::files(root);
    inputs.push(args.checkpoint.clone());
    let manifest_path = args.out.as_ref().map(|p| p.with_extension("manifest.json"));
    let mut manifest = RunManifest::new("predict-popularity", &ck.config, ck.config.seed, &inputs)?;
    if let Some(path) = &manifest_path {
        manifest.write(path)?;
    }

    let cfg = ck.config.clone();
    let (model, vocab, entity_vocab) = ck.into_model()?;
    let corpus = Corpus::load(root)?;
    let catalog = NewsCatalog::build(
        &corpus.news,
        &vocab,
        &entity_vocab,
        &cfg.prepare_settings().preprocess,
    )?;
    if catalog.is_empty() {
        return Err(Error::Ingestion("no news to score".into()));
    }
    let time = match args.time {
        Some(t) => t,
        None => corpus
            .all_impressions()
            .map(|i| i.ts)
            .max()
            .ok_or_else(|| {
                Error::Ingestion("no impressions to take a reference time from".into())
            })?,
    };
    if catalog.articles().iter().all(|a| time < a.publish_time) {
        log::warn!("reference time {time} precedes every publish time; recency is 0 for all news");
    }
    let index = CtrIndex::from_impressions(corpus.all_impressions());
    let snapshot = index.snapshot(time, cfg.ctr);
    let ctr: Vec<f64> = catalog
        .articles()
        .iter()
        .map(|a| args.ctr.unwrap_or_else(|| compute_ctr(&snapshot, &a.id)))
        .collect();
    let recency: Vec<usize> = catalog
        .articles()
        .iter()
        .map(|a| quantize_recency(a.publish_time, time, cfg.max_recency_hours))
        .collect();
    let embeddings = model.news_embeddings(&catalog, true)?;
    let rows: Vec<usize> = (0..catalog.len()).collect();
    let pops = model.predict_popularity(&embeddings, &rows, &recency, &ctr)?;

    let (lo, hi) = pops
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.s_p), h.max(p.s_p))
        });
    let mut tsv = String::from("newsId\tc_t\tp_c\tp_r\ttheta\ts_p\ts_p_normalized\n");
    for (a, p) in catalog.articles().iter().zip(&pops) {
        let norm = if hi > lo {
            (p.s_p - lo) / (hi - lo)
        } else {
            0.0
        };
        let _ = writeln!(
            tsv,
            "{}\t{:.6}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            a.id,
            p.ctr,
            fmt_opt(p.content),
            fmt_opt(p.recency),
            fmt_opt(p.theta),
            p.s_p,
            norm
        );
    }
    match &args.out {
        Some(path) => {
            write_file(path, &tsv)?;
            if let Some(m) = &manifest_path {
                manifest.finish(m, vec![path.clone()])?;
            }
        }
        None => print!("{tsv}"),
    }
    Ok(())
}
