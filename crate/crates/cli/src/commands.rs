use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use aqakit::curation::{
    balance_categories, score_difficulties, select_stage, DifficultyScorer, EndpointScorer,
    ScoreOptions, StubScorer,
};
use aqakit::dfa::CompileConfig;
use aqakit::eval::{evaluate, majority_vote, Prediction};
use aqakit::jsonl::{read_jsonl, write_jsonl};
use aqakit::mask::constrained_sample;
use aqakit::pipeline::{emit_manifests, PipelineConfig};
use aqakit::record::read_records;
use aqakit::reward::{
    compute_group_advantages, compute_reward_with, parse_generation, Credit, ReferenceAnswer,
};
use aqakit::vocab::load_vocabulary;
use aqakit::{pattern, Dfa, MaskTable, QaRecord, SamplingPolicy, Vocabulary};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Compile(a) => compile(a),
        Command::Mask(a) => mask(a),
        Command::Sample(a) => sample(a, seed.unwrap_or(0)),
        Command::Score(a) => score(a),
        Command::Balance(a) => balance(a, seed.unwrap_or(0)),
        Command::Stage(a) => stage(a),
        Command::Reward(a) => reward(a),
        Command::Advantages(a) => advantages(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Pipeline {
            command: PipelineCommand::Emit(a),
        } => emit(a, seed),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()
                .with_context(|| format!("cannot write {}", p.display()))
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .context("cannot write standard output"),
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_jsonl(create(path)?, items).with_context(|| format!("cannot write {}", path.display()))
}

fn records(path: &Path) -> Result<Vec<QaRecord>> {
    read_records(open(path)?).with_context(|| format!("invalid records in {}", path.display()))
}

fn vocab(path: &Path) -> Result<Vocabulary> {
    load_vocabulary(open(path)?).with_context(|| format!("invalid vocabulary {}", path.display()))
}

fn dfa(format: &Format, max_states: usize) -> Result<Dfa> {
    let source = match (&format.regex, format.preset) {
        (Some(p), None) => p.as_str(),
        (None, Some(preset)) => preset.pattern(),
        _ => bail!("exactly one of --regex or --preset is required"),
    };
    let ast = pattern::parse(source).with_context(|| format!("invalid pattern {source:?}"))?;
    Ok(Dfa::compile_with(&ast, &CompileConfig { max_states })?)
}

fn compile(a: CompileArgs) -> Result<()> {
    let dfa = dfa(&a.format, a.max_states)?;
    if let Some(path) = &a.dot {
        let mut w = create(path)?;
        w.write_all(dfa.to_dot().as_bytes())?;
        w.flush()?;
    }
    println!(
        "{}",
        json!({"states": dfa.state_count(), "accepting": dfa.accepting_count(), "start": dfa.start()})
    );
    Ok(())
}

fn table(vocab_path: &Path, format: &Format) -> Result<(Vocabulary, MaskTable)> {
    let vocab = vocab(vocab_path)?;
    let dfa = dfa(format, aqakit::dfa::DEFAULT_MAX_STATES)?;
    let table = MaskTable::build(&dfa, &vocab)?;
    info!(
        "mask table: {} states x {} tokens",
        table.state_count(),
        table.vocab_size()
    );
    Ok((vocab, table))
}

fn mask(a: MaskArgs) -> Result<()> {
    let (_, table) = table(&a.vocab, &a.format)?;
    let mask = table.allowed_mask(a.state)?;
    if a.packed {
        let hex: String = mask
            .to_packed_bytes()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        println!("{hex}");
    } else {
        let allowed: Vec<u32> = mask.iter().collect();
        println!(
            "{}",
            json!({"state": a.state, "accepting": table.is_accepting(a.state), "allowed": allowed})
        );
    }
    Ok(())
}

fn sample(a: SampleArgs, seed: u64) -> Result<()> {
    let (vocab, table) = table(&a.vocab, &a.format)?;
    let policy = match a.policy {
        Policy::Greedy => SamplingPolicy::Greedy,
        Policy::Random => SamplingPolicy::Categorical { seed },
    };
    let uniform = vec![0.0f32; vocab.len()];
    let ids = constrained_sample(&table, &vocab, |_| uniform.clone(), policy, a.max_tokens)?;
    let mut out = vocab.detokenize(&ids)?;
    out.push(b'\n');
    io::stdout()
        .write_all(&out)
        .context("cannot write standard output")
}

/// An endpoint header given as `Name: value`.
fn parse_header(raw: &str) -> Result<(String, String)> {
    let (name, value) = raw
        .split_once(':')
        .ok_or_else(|| anyhow!("--endpoint-header must look like \"Name: value\""))?;
    Ok((name.trim().to_owned(), value.trim().to_owned()))
}

fn score(a: ScoreArgs) -> Result<()> {
    let input = records(&a.input)?;
    let scorer: Box<dyn DifficultyScorer> = match a.scorer {
        ScorerKind::Stub => Box::new(StubScorer),
        ScorerKind::Endpoint => {
            let url = a
                .endpoint_url
                .clone()
                .context("--endpoint-url is required")?;
            let mut s = EndpointScorer::new(url, Duration::from_secs(a.timeout));
            if let Some(h) = &a.endpoint_header {
                let (name, value) = parse_header(h)?;
                s = s.with_auth(name, value);
            }
            Box::new(s)
        }
    };
    let options = ScoreOptions {
        attempts: a.attempts,
        parallelism: a.parallelism,
        ..Default::default()
    };
    let outcome = score_difficulties(input, scorer.as_ref(), &options)?;
    for (id, message) in &outcome.errors {
        warn!("record {id} left unscored: {message}");
    }
    info!(
        "scored {} records ({} unscored)",
        outcome.records.len(),
        outcome.errors.len()
    );
    write_lines(&a.out, &outcome.records)
}

fn balance(a: BalanceArgs, seed: u64) -> Result<()> {
    let input = records(&a.input)?;
    let (kept, report) = balance_categories(&input, a.theta, a.mode, a.threshold_formula, seed)?;
    info!(
        "threshold {:.4}: kept {} of {} records",
        report.threshold, report.retained_total, report.original_total
    );
    write_lines(&a.out, &kept)?;
    if let Some(path) = &a.report {
        write_json(Some(path), &report)?;
    }
    Ok(())
}

fn stage(a: StageArgs) -> Result<()> {
    let input = records(&a.input)?;
    let selected = select_stage(&input, a.selector)?;
    info!(
        "{} selected {} of {} records",
        a.selector,
        selected.len(),
        input.len()
    );
    write_lines(&a.out, &selected)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationLine {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct RewardLine<'a> {
    id: &'a str,
    index: usize,
    format_ok: bool,
    parsed_letter: Option<aqakit::Letter>,
    parsed_content: Option<String>,
    #[serde(flatten)]
    reward: aqakit::reward::RewardBreakdown,
}

fn reward(a: RewardArgs) -> Result<()> {
    let generations: Vec<GenerationLine> = read_jsonl(open(&a.generations)?)
        .with_context(|| format!("invalid generations in {}", a.generations.display()))?;
    let mut refs = HashMap::new();
    for r in records(&a.references)? {
        let letter = r.answer_letter()?;
        refs.insert(
            r.id.clone(),
            ReferenceAnswer::new(&letter.to_string(), r.answer)?,
        );
    }
    let credit = match a.credit {
        CreditArg::Subsumed => Credit::Subsumed,
        CreditArg::Additive => Credit::Additive,
    };
    let format = a.preset.compile();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut lines = Vec::with_capacity(generations.len());
    for g in &generations {
        let reference = refs
            .get(&g.id)
            .ok_or_else(|| anyhow!("generation for unknown reference id {}", g.id))?;
        let index = seen.entry(g.id.as_str()).or_default();
        let parsed = parse_generation(&g.text, &format);
        lines.push(RewardLine {
            id: &g.id,
            index: *index,
            format_ok: parsed.format_ok,
            parsed_letter: parsed.parsed_letter,
            reward: compute_reward_with(&parsed, reference, credit),
            parsed_content: parsed.parsed_content,
        });
        *index += 1;
    }
    write_lines(&a.out, &lines)
}

fn advantages(a: AdvantagesArgs) -> Result<()> {
    let values: Vec<Value> = read_jsonl(open(&a.rewards)?)
        .with_context(|| format!("invalid rewards in {}", a.rewards.display()))?;
    let mut ids = Vec::with_capacity(values.len());
    let mut rewards = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let r = match v {
            Value::Number(n) => n.as_f64(),
            Value::Object(o) => o.get("total").and_then(Value::as_f64),
            _ => None,
        }
        .ok_or_else(|| {
            anyhow!(
                "line {}: expected a number or an object with a numeric `total`",
                i + 1
            )
        })?;
        ids.push(v.get("id").cloned());
        rewards.push(r);
    }
    let adv = compute_group_advantages(&rewards, a.group_size)?;
    let lines = ids
        .into_iter()
        .zip(rewards)
        .zip(adv)
        .map(|((id, reward), advantage)| {
            let mut line = serde_json::Map::new();
            if let Some(id) = id {
                line.insert("id".into(), id);
            }
            line.insert("reward".into(), json!(reward));
            line.insert("advantage".into(), json!(advantage));
            Value::Object(line)
        });
    match &a.out {
        Some(path) => write_lines(path, lines),
        None => write_jsonl(io::stdout().lock(), lines).context("cannot write standard output"),
    }
}

fn predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(open(path)?).with_context(|| format!("invalid predictions in {}", path.display()))
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let report = evaluate(&predictions(&a.preds)?, &records(&a.refs)?)?;
    if !report.missing.is_empty() {
        warn!(
            "{} reference records have no prediction",
            report.missing.len()
        );
    }
    write_json(a.report.as_deref(), &report)
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    let sets = a
        .preds
        .iter()
        .map(|p| predictions(p))
        .collect::<Result<Vec<_>>>()?;
    let out = majority_vote(&sets, &a.priority, &a.tag)?;
    write_lines(&a.out, &out)
}

fn emit(a: EmitArgs, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(&a.config)
        .with_context(|| format!("cannot read {}", a.config.display()))?;
    let mut config: PipelineConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid pipeline config {}", a.config.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut data = BTreeMap::new();
    for (name, path) in &config.datasets {
        data.insert(name.clone(), records(&base.join(path))?);
    }
    let manifests = emit_manifests(&config, &data)?;
    let out_dir: PathBuf = a.out_dir.unwrap_or(base);
    for (stage, manifest) in config.stages.iter().zip(&manifests) {
        let path = out_dir.join(&stage.manifest);
        let mut w = create(&path)?;
        w.write_all(manifest.to_json().as_bytes())?;
        w.flush()
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!(
            "{}",
            json!({
                "stage": manifest.stage,
                "manifest": path.display().to_string(),
                "record_count": manifest.record_count,
                "content_hash": manifest.content_hash,
            })
        );
    }
    Ok(())
}
