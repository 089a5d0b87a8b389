use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::json;

use tta_core::aggregate::AggregationKind;
use tta_core::controller::{Checkpoint, PpoConfig};
use tta_core::extractor::ExtractorDescriptor;
use tta_core::featcache::{build_cache, BuildConfig, FeatureCache, ImageManifest, PcaPlan};
use tta_core::imagexform::{DomainProfile, TransformSpec};
use tta_core::occurrence::occurrence_rates;
use tta_core::policy::{read_policies, write_policies, Policy, PolicyMetadata};
use tta_core::retrieval::{evaluate_baseline, evaluate_policy, TaskManifest};
use tta_core::reward::{load_triplets, RewardConfig};
use tta_core::search::{
    logged_policies, read_run_log, resume_search, run_search_with_context, RunLogWriter, SearchConfig, SearchPaths,
};

use crate::{ApplyArgs, CacheBuildArgs, EvalArgs, ReportArgs, SearchArgs};

/// A required input file that does not exist; reported with exit status 2.
#[derive(Debug)]
struct MissingInput {
    what: &'static str,
    path: PathBuf,
}

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} not found: {}", self.what, self.path.display())
    }
}

impl std::error::Error for MissingInput {}

fn require(what: &'static str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(MissingInput {
            what,
            path: path.to_path_buf(),
        }
        .into());
    }
    Ok(())
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<MissingInput>()) {
        2
    } else {
        1
    }
}

fn open_cache(path: &Path) -> Result<FeatureCache> {
    require("cache", path)?;
    FeatureCache::open(path).with_context(|| format!("opening cache {}", path.display()))
}

fn parse_grid(text: &str) -> Result<Vec<TransformSpec>> {
    if text.trim().eq_ignore_ascii_case("full") {
        return Ok(TransformSpec::full_grid());
    }
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<TransformSpec>().with_context(|| format!("grid entry {t:?}")))
        .collect()
}

pub fn cache_build(args: &CacheBuildArgs) -> Result<()> {
    require("image manifest", &args.manifest)?;
    let manifest = ImageManifest::load(&args.manifest)?;
    let aggregation: AggregationKind = args.aggregation.parse()?;
    let mut config = BuildConfig::full_grid(ExtractorDescriptor::builtin(args.extractor_seed), aggregation, args.profile);
    config.grid = parse_grid(&args.grid)?;
    if let Some(dim) = args.pca_dim {
        config.pca = PcaPlan::fit(dim);
    }
    let start = Instant::now();
    let report = build_cache(&manifest, &config, &args.out)?;
    let records = report.grid_entries + report.baseline_entries;
    println!(
        "built cache: {} entries + {} baseline ({records} records, dim {}) in {:.2}s",
        report.grid_entries,
        report.baseline_entries,
        report.header.feature_dim,
        start.elapsed().as_secs_f64()
    );
    if report.unchanged {
        println!("{} unchanged (identical to the existing file)", args.out.display());
    } else {
        println!("wrote {}", args.out.display());
    }
    if report.zero_norm_substitutions > 0 {
        println!("{} zero descriptors replaced by the uniform unit vector", report.zero_norm_substitutions);
    }
    if !report.errors.is_empty() {
        println!(
            "{} image(s) could not be read; see {}.errors.tsv",
            report.errors.len(),
            args.out.display()
        );
    }
    Ok(())
}

/// Search settings read from a JSON file. Relative paths resolve against
/// the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunManifest {
    cache: Option<PathBuf>,
    triplets: Option<PathBuf>,
    profile: Option<DomainProfile>,
    extractor: Option<String>,
    aggregation: Option<String>,
    seed: Option<u64>,
    iterations: Option<u64>,
    ppo: Option<PpoConfig>,
    reward: Option<RewardConfig>,
    checkpoint_every: Option<u64>,
}

impl RunManifest {
    fn load(path: &Path) -> Result<Self> {
        require("run manifest", path)?;
        let text = fs::read_to_string(path)?;
        let mut m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing run manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.cache, &mut m.triplets].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

pub fn search(args: &SearchArgs) -> Result<()> {
    let manifest = match &args.run {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::default(),
    };
    let cache_path = args
        .cache
        .clone()
        .or(manifest.cache)
        .context("no cache given (use --cache or a run manifest)")?;
    let triplet_path = args
        .triplets
        .clone()
        .or(manifest.triplets)
        .context("no triplets given (use --triplets or a run manifest)")?;
    require("triplet manifest", &triplet_path)?;
    let cache = open_cache(&cache_path)?;
    let header = cache.header().clone();

    if let Some(p) = args.profile.or(manifest.profile) {
        if p != header.profile {
            bail!("profile {} does not match the cache's profile {}", p.name(), header.profile.name());
        }
    }
    if let Some(name) = &manifest.extractor {
        if *name != header.extractor_name {
            bail!("extractor {name:?} does not match the cache's {:?}", header.extractor_name);
        }
    }
    if let Some(a) = &manifest.aggregation {
        let a: AggregationKind = a.parse()?;
        if a.tag() != header.aggregation.tag() {
            bail!("aggregation {a} does not match the cache's {}", header.aggregation);
        }
    }
    let triplets = load_triplets(&triplet_path)?;

    let mut config = SearchConfig::default();
    if let Some(ppo) = manifest.ppo {
        config.ppo = ppo;
    }
    if let Some(reward) = manifest.reward {
        config.reward = reward;
    }
    config.seed = args.seed.or(manifest.seed).unwrap_or(0);
    config.iterations = args.iterations.or(manifest.iterations).unwrap_or(config.iterations);
    if let Some(a) = args.alpha {
        config.reward.margin = a;
    }
    if args.subsample.is_some() {
        config.reward.subsample = args.subsample;
    }
    if let Some(lr) = args.learning_rate {
        config.ppo.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        config.ppo.batch_size = b;
    }
    if let Some(c) = args.checkpoint_every.or(manifest.checkpoint_every) {
        config.checkpoint_every = Some(c);
    }
    config.validate()?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let log_path = args.out.join("run.jsonl");
    let paths = SearchPaths {
        checkpoint: Some(args.out.join("controller.ttck")),
    };
    let mut log = RunLogWriter::create(&log_path)?;
    let start = Instant::now();
    let outcome = match &args.resume {
        Some(ck) => {
            require("checkpoint", ck)?;
            resume_search(Checkpoint::load(ck)?, &cache, &triplets, &config, &paths, &mut log)?
        }
        None => {
            let context = json!({
                "cache": cache_path,
                "triplets": triplet_path,
                "profile": header.profile.name(),
                "extractor": header.extractor_name,
                "aggregation": header.aggregation.to_string(),
            });
            run_search_with_context(&cache, &triplets, &config, &paths, &mut log, context)?
        }
    };
    log.finish()?;

    let metadata = |reward: Option<f64>| PolicyMetadata {
        profile: header.profile.name().to_string(),
        extractor: header.extractor_name.clone(),
        aggregation: header.aggregation.to_string(),
        reward,
        margin: config.reward.margin,
        seed: config.seed,
        iteration: outcome.iterations,
    };
    let final_path = args.out.join("final.policy");
    write_policies(&final_path, std::slice::from_ref(&outcome.final_sample), &metadata(None))?;
    println!(
        "ran {} iteration(s) in {:.1}s ({} skipped)",
        outcome.iterations,
        start.elapsed().as_secs_f64(),
        outcome.skipped
    );
    if let Some((best, reward)) = &outcome.best {
        let best_path = args.out.join("best.policy");
        write_policies(&best_path, std::slice::from_ref(best), &metadata(Some(*reward)))?;
        println!("best reward {reward:.6}: {best}");
        println!("wrote {}", best_path.display());
    }
    if let Some(s) = outcome.last_smoothed {
        println!("smoothed reward {s:.6}");
    }
    println!("final sample: {}", outcome.final_sample);
    println!("wrote {}, {}", final_path.display(), log_path.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    require("policy file", &args.policy)?;
    require("task manifest", &args.task)?;
    let cache = open_cache(&args.cache)?;
    let policies = read_policies(&args.policy)?;
    let profile = args.profile.unwrap_or(cache.header().profile);
    let task = TaskManifest::load(&args.task)?.resolve(&cache.image_ids(), args.k, profile)?;

    let without = evaluate_baseline(&cache, &task)?;
    println!(
        "queries {}, database {}, K {}",
        task.queries.len(),
        task.database.len(),
        task.k
    );
    println!("MAP@{} without TTA: {without:.6}", task.k);
    let mut with = Vec::new();
    for p in &policies {
        let map = evaluate_policy(p, &cache, &task)?;
        println!("MAP@{} with TTA:    {map:.6}  {p}", task.k);
        with.push(json!({ "policy": p.to_string(), "map": map }));
    }
    if let Some(out) = &args.out {
        let report = json!({
            "k": task.k,
            "queries": task.queries.len(),
            "database": task.database.len(),
            "profile": profile.name(),
            "without": without,
            "with": with,
        });
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn report_occurrence(args: &ReportArgs) -> Result<()> {
    require("run log", &args.log)?;
    let policies = logged_policies(&read_run_log(&args.log)?)?;
    if policies.is_empty() {
        bail!("run log {} contains no sampled policies", args.log.display());
    }
    let report = occurrence_rates(&policies)?;
    print!("{}", report.table());
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.occurrence.tsv", args.log.display())));
    fs::write(&out, report.tsv()).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn apply(args: &ApplyArgs) -> Result<()> {
    require("policy file", &args.policy)?;
    let cache = open_cache(&args.cache)?;
    let policies = read_policies(&args.policy)?;
    let policy: &Policy = args
        .index
        .checked_sub(1)
        .and_then(|i| policies.get(i))
        .with_context(|| format!("policy {} requested, file has {}", args.index, policies.len()))?;
    let ids = if args.images.is_empty() { cache.image_ids() } else { args.images.clone() };
    let mut text = String::new();
    for id in ids {
        let v = policy.compose(id, &cache).with_context(|| format!("image {id}"))?;
        text.push_str(&id.to_string());
        for x in v.values() {
            text.push('\t');
            text.push_str(&format!("{x:.9e}"));
        }
        text.push('\n');
    }
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
