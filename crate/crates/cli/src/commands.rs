use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use selfilter::analysis::{cluster_coverage, pearson, spearman, Report};
use selfilter::baselines::{
    default_cluster_count, el2n_scores, grand_scores_averaged, ingest_external_scores,
    prototypicality_scores, random_select, save_scores, ScoreVector,
};
use selfilter::feature_store::{check_pairing, load_features, load_metadata, save_metadata};
use selfilter::jsonl;
use selfilter::pipeline::{
    select_from_table, sweep, Dataset, PipelineConfig, RetrainConfig, SweepVariable,
};
use selfilter::selector::{
    self as selector, compute_difficulty, load_difficulties, save_difficulties, Pick,
    SelectOptions, SelectionRecord, DEFAULT_GAMMA, DEFAULT_K,
};
use selfilter::stage1::train_stage1;
use selfilter::synth::{self, SynthSpec};
use selfilter::toy_model::{load_tokens, save_tokens, sidecar_path, train_plain};
use selfilter::{
    feature_store, FeatureMatrix, InstructionMeta, ScoreNetParams, SelectionResult, TokenSample,
    ToyBigramModel, TrainConfig,
};

use crate::manifest::Run;
use crate::{
    AnalyzeCommand, BaselineArgs, Cli, Command, GenSynthArgs, Metric, RetrainArgs, ScoreArgs,
    SelectArgs, SelectFlags, SweepArgs, SweepOver, TrainArgs,
};

/// Layout of the `--config` TOML file. Every section is optional; each
/// command reads the sections it uses.
#[derive(Debug, Clone, Default)]
struct FileConfig {
    vocab: Option<usize>,
    synth: SynthSection,
    train: TrainConfig,
    select: SelectSection,
    baseline: BaselineSection,
    retrain: RetrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    vocab: Option<usize>,
    synth: toml::Table,
    train: TrainConfig,
    select: SelectSection,
    baseline: BaselineSection,
    retrain: toml::Table,
}

/// Removes `key` from `table` and deserializes the rest strictly.
fn split_off<T: DeserializeOwned, K: DeserializeOwned>(
    mut table: toml::Table,
    key: &str,
    section: &str,
) -> Result<(T, Option<K>)> {
    let extra = table
        .remove(key)
        .map(|v| v.try_into())
        .transpose()
        .with_context(|| format!("[{section}] {key}"))?;
    let rest = toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("[{section}]"))?;
    Ok((rest, extra))
}

/// `[synth]` holds the generator spec plus `held_out`, the size of the
/// held-out set; `[retrain]` holds the retrain settings plus `seed`.
#[derive(Debug, Clone, Serialize)]
struct SynthSection {
    held_out: usize,
    #[serde(flatten)]
    spec: SynthSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            held_out: 500,
            spec: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectSection {
    m: Option<usize>,
    k: usize,
    gamma: f64,
    diversity: bool,
    easiest: bool,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self {
            m: None,
            k: DEFAULT_K,
            gamma: DEFAULT_GAMMA,
            diversity: true,
            easiest: false,
        }
    }
}

impl SelectSection {
    fn apply(&mut self, flags: &SelectFlags) {
        if flags.m.is_some() {
            self.m = flags.m;
        }
        set(&mut self.k, flags.k);
        set(&mut self.gamma, flags.gamma);
        if flags.no_diversity {
            self.diversity = false;
        }
        if flags.easiest {
            self.easiest = true;
        }
    }

    fn m(&self) -> Result<usize> {
        self.m.ok_or_else(|| anyhow!("--m is required"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BaselineSection {
    warmup_epochs: usize,
    warmup_runs: usize,
    clusters: Option<usize>,
    max_iters: usize,
    m: Option<usize>,
    seed: u64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            warmup_epochs: 1,
            warmup_runs: 1,
            clusters: None,
            max_iters: 100,
            m: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
struct RetrainSection {
    #[serde(flatten)]
    cfg: RetrainConfig,
    seed: u64,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let parse = || -> Result<FileConfig> {
        let raw: RawConfig = toml::from_str(&text)?;
        let (spec, held_out) = split_off(raw.synth, "held_out", "synth")?;
        let (retrain, seed) = split_off(raw.retrain, "seed", "retrain")?;
        let mut synth = SynthSection {
            spec,
            ..SynthSection::default()
        };
        set(&mut synth.held_out, held_out);
        Ok(FileConfig {
            vocab: raw.vocab,
            synth,
            train: raw.train,
            select: raw.select,
            baseline: raw.baseline,
            retrain: RetrainSection {
                cfg: retrain,
                seed: seed.unwrap_or(0),
            },
        })
    };
    parse().with_context(|| format!("invalid config {}", path.display()))
}

fn vocab(flag: Option<usize>, file: &FileConfig) -> usize {
    flag.or(file.vocab)
        .unwrap_or(synth::SynthSpec::default().vocab)
}

pub fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenSynth(a) => gen_synth(a, file, out),
        Command::Train(a) => train(a, file, out),
        Command::Score(a) => score(a, out),
        Command::Select(a) => select(a, file, out),
        Command::Baseline(a) => baseline(a, file, out),
        Command::Retrain(a) => retrain(a, file, out),
        Command::Analyze { what } => match what {
            AnalyzeCommand::Pearson {
                difficulties,
                meta,
                field,
            } => analyze_pearson(&difficulties, &meta, &field, out),
            AnalyzeCommand::Coverage { selection, meta } => {
                analyze_coverage(&selection, &meta, out)
            }
            AnalyzeCommand::Sweep(a) => analyze_sweep(a, file, out),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn token_ids(samples: &[TokenSample]) -> Vec<String> {
    samples.iter().map(|s| s.id.clone()).collect()
}

fn meta_ids(meta: &[InstructionMeta]) -> Vec<String> {
    meta.iter().map(|m| m.id.clone()).collect()
}

fn ensure_same_ids(a: &[String], b: &[String], what: &str) -> Result<()> {
    if a.len() != b.len() {
        bail!("{what}: {} vs {} records", a.len(), b.len());
    }
    if let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) {
        bail!(
            "{what}: record {i} is {:?} in one file and {:?} in the other",
            a[i],
            b[i]
        );
    }
    Ok(())
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect()
}

fn load_selection(path: &Path, ids: &[String]) -> Result<SelectionResult> {
    let records: Vec<SelectionRecord> = jsonl::read(path)?;
    let index = index_of(ids);
    let mut picks = Vec::with_capacity(records.len());
    let mut seen = vec![false; ids.len()];
    for r in records {
        let &i = index
            .get(r.id.as_str())
            .ok_or_else(|| anyhow!("selected id {:?} is not in the dataset", r.id))?;
        if std::mem::replace(&mut seen[i], true) {
            bail!("id {:?} is selected twice", r.id);
        }
        picks.push(Pick {
            index: i,
            rank: r.rank,
            d_at_selection: r.d_at_selection,
        });
    }
    Ok(SelectionResult {
        picks,
        gamma: 0.0,
        diversity_enabled: false,
    })
}

fn gen_synth(a: GenSynthArgs, file: FileConfig, out: &Path) -> Result<()> {
    let mut cfg = file.synth;
    set(&mut cfg.spec.n, a.n);
    set(&mut cfg.spec.vocab, a.vocab);
    set(&mut cfg.spec.feature_dim, a.feature_dim);
    set(&mut cfg.spec.feature_noise, a.feature_noise);
    set(&mut cfg.spec.clusters_per_regime, a.clusters_per_regime);
    set(&mut cfg.spec.seed, a.seed);
    set(&mut cfg.held_out, a.held_out);
    let held_seed = cfg.spec.seed.wrapping_add(1000);

    let mut run = Run::new(out, "gen-synth")?;
    run.config(&cfg)
        .seed("synth", cfg.spec.seed)
        .seed("held_out", held_seed);
    let data = synth::generate(&cfg.spec)?;
    let held = synth::held_out(&cfg.spec, &data, cfg.held_out, held_seed)?;
    feature_store::save_features(&data.features, run.output("features.sffm"))?;
    save_metadata(&data.meta, run.output("meta.jsonl"))?;
    save_tokens(&data.samples, run.output("tokens.jsonl"))?;
    jsonl::write(run.output("truth.jsonl"), &data.truth)?;
    save_tokens(&held, run.output("held_out.jsonl"))?;
    run.finish()
}

fn train(a: TrainArgs, file: FileConfig, out: &Path) -> Result<()> {
    let vocab = vocab(a.vocab, &file);
    let mut cfg = file.train;
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.lr_model, a.lr_model);
    set(&mut cfg.lr_scorenet, a.lr_scorenet);
    set(&mut cfg.l2_scorenet, a.l2_scorenet);
    set(&mut cfg.grad_accum_steps, a.grad_accum_steps);
    set(&mut cfg.seed, a.seed);

    let mut run = Run::new(out, "train")?;
    run.config(&serde_json::json!({ "vocab": vocab, "train": &cfg }))
        .seed("train", cfg.seed);
    run.input("tokens", &a.tokens)?;
    run.input("features", &a.features)?;
    let samples = load_tokens(&a.tokens)?;
    let features = load_features(&a.features)?;
    let ids = token_ids(&samples);
    if let Some(meta_path) = &a.meta {
        run.input("meta", meta_path)?;
        let meta = load_metadata(meta_path)?;
        check_pairing(&features, &meta)?;
        ensure_same_ids(&ids, &meta_ids(&meta), "tokens and metadata disagree")?;
    }

    let result = train_stage1(ToyBigramModel::uniform(vocab)?, &samples, &features, &cfg)?;
    let model_path = run.output("model.sffm");
    result.model.save(&model_path)?;
    run.output(&format!("model.sffm{}", sidecar_suffix(&model_path)));
    result.params.save(run.output("scorenet.json"))?;
    result.log.save_csv(run.output("train_log.csv"))?;
    let weights: Vec<IdValue> = ids
        .iter()
        .zip(&result.log.final_weights)
        .map(|(id, &w)| IdValue { id: id.clone(), w })
        .collect();
    jsonl::write(run.output("weights.jsonl"), &weights)?;
    run.finish()
}

#[derive(Serialize)]
struct IdValue {
    id: String,
    w: f64,
}

/// The part of the sidecar file name after the model's own file name.
fn sidecar_suffix(model: &Path) -> String {
    let side = sidecar_path(model);
    let name = side.file_name().unwrap_or_default().to_string_lossy();
    let base = model.file_name().unwrap_or_default().to_string_lossy();
    name.strip_prefix(base.as_ref())
        .unwrap_or(&name)
        .to_string()
}

fn score(a: ScoreArgs, out: &Path) -> Result<()> {
    let mut run = Run::new(out, "score")?;
    run.input("scorenet", &a.scorenet)?;
    run.input("features", &a.features)?;
    run.input("meta", &a.meta)?;
    let params = ScoreNetParams::load(&a.scorenet)?;
    let features = load_features(&a.features)?;
    let meta = load_metadata(&a.meta)?;
    check_pairing(&features, &meta)?;
    let table = compute_difficulty(&params, &features)?;
    save_difficulties(&table, &meta_ids(&meta), run.output("difficulties.jsonl"))?;
    run.finish()
}

fn select(a: SelectArgs, file: FileConfig, out: &Path) -> Result<()> {
    let mut cfg = file.select;
    cfg.apply(&a.flags);
    let m = cfg.m()?;

    let mut run = Run::new(out, "select")?;
    run.config(&cfg);
    run.input("difficulties", &a.difficulties)?;
    let (ids, table) = load_difficulties(&a.difficulties)?;
    let needs_features = cfg.diversity && cfg.gamma > 0.0;
    let features = match &a.features {
        Some(p) => {
            run.input("features", p)?;
            let f = load_features(p)?;
            if f.n() != ids.len() {
                bail!(
                    "feature matrix has {} rows but the difficulty table has {} entries",
                    f.n(),
                    ids.len()
                );
            }
            Some(f)
        }
        None if needs_features => bail!("--features is required when the diversity penalty is on"),
        None => None,
    };
    let result = match &features {
        Some(f) => select_from_table(&table, f, m, cfg.k, cfg.gamma, cfg.diversity, cfg.easiest)?,
        None => {
            let mut work = if cfg.easiest { table.negated() } else { table };
            selector::select(
                &mut work,
                None,
                SelectOptions {
                    m,
                    gamma: cfg.gamma,
                    diversity: false,
                },
            )?
        }
    };
    jsonl::write(run.output("selection.jsonl"), &result.records(&ids))?;
    run.finish()
}

fn baseline(a: BaselineArgs, file: FileConfig, out: &Path) -> Result<()> {
    let vocab = vocab(a.vocab, &file);
    let mut cfg = file.baseline;
    set(&mut cfg.warmup_epochs, a.warmup_epochs);
    set(&mut cfg.warmup_runs, a.warmup_runs);
    set(&mut cfg.max_iters, a.max_iters);
    set(&mut cfg.seed, a.seed);
    if a.clusters.is_some() {
        cfg.clusters = a.clusters;
    }
    if a.m.is_some() {
        cfg.m = a.m;
    }
    let metric = a.metric.to_possible_value().expect("no skipped variants");
    let mut run = Run::new(out, format!("baseline {}", metric.get_name()))?;

    let meta = match &a.meta {
        Some(p) => {
            run.input("meta", p)?;
            Some(load_metadata(p)?)
        }
        None => None,
    };
    let samples = match &a.tokens {
        Some(p) => {
            run.input("tokens", p)?;
            Some(load_tokens(p)?)
        }
        None => None,
    };
    let ids = match (&meta, &samples) {
        (Some(meta), Some(samples)) => {
            let ids = meta_ids(meta);
            ensure_same_ids(&ids, &token_ids(samples), "tokens and metadata disagree")?;
            ids
        }
        (Some(meta), None) => meta_ids(meta),
        (None, Some(samples)) => token_ids(samples),
        (None, None) => bail!("--meta or --tokens is required to identify samples"),
    };
    let require_features = |run: &mut Run| -> Result<FeatureMatrix> {
        let p = a
            .features
            .as_ref()
            .ok_or_else(|| anyhow!("--features is required for this metric"))?;
        run.input("features", p)?;
        let f = load_features(p)?;
        if f.n() != ids.len() {
            bail!(
                "feature matrix has {} rows but there are {} samples",
                f.n(),
                ids.len()
            );
        }
        Ok(f)
    };

    let scores: Option<ScoreVector> = match a.metric {
        Metric::El2n | Metric::Grand => {
            let samples = samples
                .as_ref()
                .ok_or_else(|| anyhow!("--tokens is required for this metric"))?;
            let models = match &a.model {
                Some(p) => {
                    run.input("model", p)?;
                    vec![ToyBigramModel::load(p)?]
                }
                None => {
                    if cfg.warmup_runs == 0 {
                        bail!("--warmup-runs must be >= 1");
                    }
                    run.seed("warmup", cfg.seed);
                    (0..cfg.warmup_runs as u64)
                        .map(|r| {
                            train_plain(
                                ToyBigramModel::uniform(vocab)?,
                                samples,
                                cfg.warmup_epochs,
                                file.train.batch_size,
                                file.train.lr_model,
                                cfg.seed + r,
                            )
                            .map(|(m, _)| m)
                        })
                        .collect::<selfilter::Result<Vec<_>>>()?
                }
            };
            Some(if a.metric == Metric::El2n {
                let mut acc = vec![0.0; samples.len()];
                for m in &models {
                    for (x, s) in acc.iter_mut().zip(el2n_scores(m, samples)?.scores) {
                        *x += s;
                    }
                }
                let k = models.len() as f64;
                ScoreVector::new("el2n", acc.into_iter().map(|x| x / k).collect())?
            } else {
                grand_scores_averaged(&models, samples)?
            })
        }
        Metric::Proto => {
            let features = require_features(&mut run)?;
            let k = cfg
                .clusters
                .unwrap_or_else(|| default_cluster_count(features.n()));
            cfg.clusters = Some(k);
            run.seed("kmeans", cfg.seed);
            Some(prototypicality_scores(
                &features,
                k,
                cfg.seed,
                cfg.max_iters,
            )?)
        }
        Metric::External => {
            let p = a
                .scores_file
                .as_ref()
                .ok_or_else(|| anyhow!("--scores-file is required for external scores"))?;
            run.input("scores", p)?;
            Some(ingest_external_scores(p, &ids)?)
        }
        Metric::Random => None,
    };

    match scores {
        Some(scores) => {
            save_scores(&scores, &ids, run.output("scores.jsonl"))?;
            if let Some(m) = cfg.m {
                let picks = scores.rank(m)?;
                jsonl::write(run.output("selection.jsonl"), &picks.records(&ids))?;
            }
        }
        None => {
            let m = cfg
                .m
                .ok_or_else(|| anyhow!("--m is required for random selection"))?;
            run.seed("random", cfg.seed);
            let picks: Vec<SelectionRecord> = random_select(ids.len(), m, cfg.seed)?
                .into_iter()
                .enumerate()
                .map(|(rank, i)| SelectionRecord {
                    id: ids[i].clone(),
                    rank,
                    // keep-first: earlier draws score higher
                    d_at_selection: (m - rank) as f64,
                })
                .collect();
            jsonl::write(run.output("selection.jsonl"), &picks)?;
        }
    }
    run.config(&serde_json::json!({ "vocab": vocab, "baseline": &cfg }));
    run.finish()
}

#[derive(Serialize)]
struct RetrainEval {
    selected: usize,
    held_out_loss: f64,
}

fn retrain(a: RetrainArgs, file: FileConfig, out: &Path) -> Result<()> {
    let vocab = vocab(a.vocab, &file);
    let mut cfg = file.retrain;
    set(&mut cfg.cfg.epochs, a.epochs);
    set(&mut cfg.cfg.batch_size, a.batch_size);
    set(&mut cfg.cfg.lr, a.lr);
    set(&mut cfg.seed, a.seed);

    let mut run = Run::new(out, "retrain")?;
    run.config(&serde_json::json!({ "vocab": vocab, "retrain": &cfg }))
        .seed("retrain", cfg.seed);
    run.input("tokens", &a.tokens)?;
    run.input("selection", &a.selection)?;
    run.input("held_out", &a.held_out)?;
    let samples = load_tokens(&a.tokens)?;
    let held = load_tokens(&a.held_out)?;
    let selection = load_selection(&a.selection, &token_ids(&samples))?;
    let subset: Vec<TokenSample> = selection
        .indices()
        .into_iter()
        .map(|i| samples[i].clone())
        .collect();
    let (model, eval) = train_plain(
        ToyBigramModel::uniform(vocab)?,
        &subset,
        cfg.cfg.epochs,
        cfg.cfg.batch_size,
        cfg.cfg.lr,
        cfg.seed,
    )?;
    let model_path = run.output("model.sffm");
    model.save(&model_path)?;
    run.output(&format!("model.sffm{}", sidecar_suffix(&model_path)));
    write_json(
        &run.output("eval.json"),
        &RetrainEval {
            selected: subset.len(),
            held_out_loss: eval.mean_loss(&held)?,
        },
    )?;
    run.finish()
}

fn field_value(meta: &InstructionMeta, field: &str) -> Result<f64> {
    if field == "text_len" {
        return Ok(meta.text_len as f64);
    }
    let raw = meta
        .tag(field)
        .ok_or_else(|| anyhow!("sample {:?} has no {field:?} tag", meta.id))?;
    raw.parse()
        .map_err(|_| anyhow!("tag {field}:{raw} on sample {:?} is not numeric", meta.id))
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    id: &'a str,
    d: f64,
    value: f64,
}

fn analyze_pearson(difficulties: &Path, meta_path: &Path, field: &str, out: &Path) -> Result<()> {
    let mut run = Run::new(out, "analyze pearson")?;
    run.config(&serde_json::json!({ "field": field }));
    run.input("difficulties", difficulties)?;
    run.input("meta", meta_path)?;
    let (ids, table) = load_difficulties(difficulties)?;
    let meta = load_metadata(meta_path)?;
    let by_id: HashMap<&str, &InstructionMeta> = meta.iter().map(|m| (m.id.as_str(), m)).collect();
    let values = ids
        .iter()
        .map(|id| {
            let m = by_id
                .get(id.as_str())
                .ok_or_else(|| anyhow!("no metadata for id {id:?}"))?;
            field_value(m, field)
        })
        .collect::<Result<Vec<f64>>>()?;
    let d = table.difficulties();
    let mut report = Report::new(format!("pearson:{field}"));
    report
        .metrics
        .insert("pearson".into(), Some(pearson(d, &values)?));
    report
        .metrics
        .insert("spearman".into(), Some(spearman(d, &values)?));
    report.metrics.insert("n".into(), Some(ids.len() as f64));
    let rows: Vec<CorrelationRow> = ids
        .iter()
        .zip(d)
        .zip(&values)
        .map(|((id, &d), &value)| CorrelationRow { id, d, value })
        .collect();
    write_csv(&run.output("report.csv"), &rows)?;
    write_json(&run.output("report.json"), &report)?;
    run.finish()
}

#[derive(Serialize)]
struct ClusterRow {
    cluster: String,
    count: usize,
}

fn analyze_coverage(selection: &Path, meta_path: &Path, out: &Path) -> Result<()> {
    let mut run = Run::new(out, "analyze coverage")?;
    run.input("selection", selection)?;
    run.input("meta", meta_path)?;
    let meta = load_metadata(meta_path)?;
    let sel = load_selection(selection, &meta_ids(&meta))?;
    let cov = cluster_coverage(&sel, &meta)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in &sel.picks {
        if let Some(c) = meta[p.index].tag("cluster") {
            *counts.entry(c.to_string()).or_default() += 1;
        }
    }
    let rows: Vec<ClusterRow> = counts
        .into_iter()
        .map(|(cluster, count)| ClusterRow { cluster, count })
        .collect();
    let mut report = Report::new("coverage");
    report
        .metrics
        .insert("clusters".into(), Some(cov.clusters as f64));
    report
        .metrics
        .insert("max_concentration".into(), Some(cov.max_concentration));
    report
        .metrics
        .insert("selected".into(), Some(sel.picks.len() as f64));
    write_csv(&run.output("report.csv"), &rows)?;
    write_json(&run.output("report.json"), &report)?;
    run.finish()
}

fn analyze_sweep(a: SweepArgs, file: FileConfig, out: &Path) -> Result<()> {
    let vocab = vocab(a.vocab, &file);
    let mut select = file.select;
    select.apply(&a.flags);
    let mut train = file.train;
    set(&mut train.batch_size, a.batch_size);
    set(&mut train.epochs, a.epochs);
    let seed = a.seed.unwrap_or(train.seed);
    let variable = match a.variable {
        SweepOver::PruningSize => SweepVariable::PruningSize,
        SweepOver::BatchSize => SweepVariable::BatchSize,
    };
    let m = match variable {
        SweepVariable::PruningSize => select.m.unwrap_or(0),
        SweepVariable::BatchSize => select.m()?,
    };
    let cfg = PipelineConfig {
        train,
        m,
        k: select.k,
        gamma: select.gamma,
        diversity: select.diversity,
        easiest: select.easiest,
        retrain: file.retrain.cfg,
    };

    let mut run = Run::new(out, "analyze sweep")?;
    run.config(&serde_json::json!({
        "vocab": vocab,
        "variable": variable.name(),
        "values": &a.values,
        "pipeline": &cfg,
    }))
    .seed("base", seed);
    run.input("tokens", &a.tokens)?;
    run.input("features", &a.features)?;
    run.input("held_out", &a.held_out)?;
    let samples = load_tokens(&a.tokens)?;
    let features = load_features(&a.features)?;
    let held = load_tokens(&a.held_out)?;
    let data = Dataset {
        samples: &samples,
        features: &features,
        vocab,
    };
    let (csv_path, json_path) = (run.output("sweep.csv"), run.output("sweep.json"));
    match sweep(data, &held, &cfg, variable, &a.values, seed) {
        Ok(report) => {
            report.save(&csv_path, &json_path)?;
            run.finish()
        }
        Err(failure) => {
            failure.partial.save(&csv_path, &json_path)?;
            Err(failure.into())
        }
    }
}
