use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use assertlora::checkpoint;
use assertlora::data::{self, DatasetSplit, SplitSizes, Vocab};
use assertlora::lora::{count_lora_params, LoraConfig, ModelGeometry, ModuleGroup};
use assertlora::metrics::{self, MetricReport};
use assertlora::model::{self, AdaptedModel};
use assertlora::sva;
use assertlora::training::{self, AblationBase, AblationGrid, TrainConfig};

use crate::config::Config;
use crate::manifest::Manifest;
use crate::{create_dir, read_file, write_file, AblateArgs, CliError, CountArgs, EvalArgs, GenerateArgs, MakeDataArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "adapter.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const ABLATION_FILE: &str = "ablation.csv";
const DEFAULT_MAX_NEW: usize = 256;

/// Sub-seeds drawn in a fixed order from one generator seeded by `--seed`.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    split: u64,
    model: u64,
    lora: u64,
    order: u64,
}

impl Seeds {
    fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { split: rng.next_u64(), model: rng.next_u64(), lora: rng.next_u64(), order: rng.next_u64() }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_split(path: &Path, split_seed: u64) -> Result<(Vec<u8>, DatasetSplit), CliError> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let pairs = data::parse_pairs(text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", path.display())));
    }
    let split = data::split(&pairs, split_seed, SplitSizes::DEFAULT_PROPORTIONS)?;
    Ok((bytes, split))
}

fn parse_group(s: &str) -> Result<ModuleGroup, CliError> {
    s.parse().map_err(|e: assertlora::Error| usage(e.to_string()))
}

pub fn make_data(cfg: &Config, a: MakeDataArgs) -> Result<(), CliError> {
    let n: usize = cfg.require(a.n, "n")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let seed = cfg.seed(a.seed)?;
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let pairs = data::gen_toy_corpus(n, seed);
    data::save_pairs(&out, &pairs).map_err(|e| CliError::Data(e.to_string()))?;
    log::info!("wrote {n} pairs to {}", out.display());
    Ok(())
}

struct TrainSettings {
    r: usize,
    alpha: f64,
    group: ModuleGroup,
    steps: usize,
    lr: f64,
    batch: usize,
    dropout: f64,
}

fn check_hyper(r: usize, alpha: f64, steps: usize, lr: f64, batch: usize) -> Result<(), CliError> {
    if r == 0 || steps == 0 || batch == 0 {
        return Err(usage("--r, --steps and --batch must be positive"));
    }
    if !(alpha > 0.0 && alpha.is_finite() && lr > 0.0 && lr.is_finite()) {
        return Err(usage("--alpha and --lr must be positive"));
    }
    Ok(())
}

pub fn train(cfg: &Config, a: TrainArgs) -> Result<(), CliError> {
    let data_path: PathBuf = cfg.require(a.data, "data")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let seed = cfg.seed(a.seed)?;
    let s = TrainSettings {
        r: cfg.pick(a.r, "r", 16)?,
        alpha: cfg.pick(a.alpha, "alpha", 16.0)?,
        group: parse_group(&cfg.pick(a.modules, "modules", "all".to_string())?)?,
        steps: cfg.pick(a.steps, "steps", 2000)?,
        lr: cfg.pick(a.lr, "lr", 2e-4)?,
        batch: cfg.pick(a.batch, "batch", 8)?,
        dropout: cfg.pick(a.dropout, "dropout", 0.0)?,
    };
    check_hyper(s.r, s.alpha, s.steps, s.lr, s.batch)?;
    if !(0.0..1.0).contains(&s.dropout) {
        return Err(usage("--dropout must lie in [0, 1)"));
    }
    let seeds = Seeds::derive(seed);
    let (data_bytes, split) = load_split(&data_path, seeds.split)?;

    let vocab = Vocab::default();
    let geometry = ModelGeometry::toy(vocab.len());
    let base = model::build_model(geometry, seeds.model)?;
    let lora = LoraConfig { dropout: s.dropout, ..LoraConfig::new(s.r, s.alpha, s.group).with_seed(seeds.lora) };
    let config = TrainConfig { learning_rate: s.lr, batch_size: s.batch, steps: s.steps, seed: seeds.order, ..TrainConfig::default() };
    let count = count_lora_params(&geometry, &lora);
    log::info!("training {} adapter parameters ({:.2}%) on {} pairs", count.trainable, count.percent, split.train.len());
    let outcome = training::train_with_progress(base, &config, &lora, &split, &vocab, |step, loss| {
        if step % 100 == 0 || step == 1 {
            log::info!("step {step} loss {loss:.4}");
        }
    })?;

    create_dir(&out)?;
    let ckpt = checkpoint::encode_adapted(&outcome.model, Some(&vocab));
    let curve = outcome.curve.to_csv();
    write_file(&out.join(CHECKPOINT_FILE), &ckpt)?;
    write_file(&out.join(LOSS_FILE), curve.as_bytes())?;
    let window = 100.min(outcome.curve.len());
    let mut m = Manifest::new("train", seed);
    m.setting("r", s.r)
        .setting("alpha", s.alpha)
        .setting("modules", s.group.to_string())
        .setting("steps", s.steps)
        .setting("lr", s.lr)
        .setting("batch", s.batch)
        .setting("dropout", s.dropout)
        .setting("train_config", &config)
        .setting("lora_config", &lora)
        .setting("geometry", geometry)
        .input(&data_path, &data_bytes)
        .output(CHECKPOINT_FILE, &ckpt)
        .output(LOSS_FILE, curve.as_bytes())
        .summary("trainable_params", count.trainable)
        .summary("base_params", count.base)
        .summary("train_pairs", split.train.len())
        .summary("skipped_pairs", outcome.skipped)
        .summary("loss_first_mean", outcome.curve.mean_first(window))
        .summary("loss_last_mean", outcome.curve.mean_last(window));
    m.write(&out)?;
    println!(
        "trained {} steps; mean loss first {window}: {:.4}, last {window}: {:.4}",
        s.steps,
        outcome.curve.mean_first(window),
        outcome.curve.mean_last(window)
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(AdaptedModel, Vocab), CliError> {
    let ck = checkpoint::load(path).map_err(|e| CliError::Data(e.to_string()))?;
    let vocab = ck.vocab.clone().unwrap_or_default();
    if vocab.len() != ck.geometry.vocab_size {
        return Err(CliError::Data(format!(
            "{}: vocabulary of {} symbols for a model with {} embeddings",
            path.display(),
            vocab.len(),
            ck.geometry.vocab_size
        )));
    }
    let model = ck.adapted_model().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((model, vocab))
}

pub fn generate(cfg: &Config, a: GenerateArgs) -> Result<(), CliError> {
    let ckpt: PathBuf = cfg.require(a.checkpoint, "checkpoint")?;
    let input = cfg.pick(a.input, "input", "-".to_string())?;
    let max_new = cfg.pick(a.max_new, "max-new", DEFAULT_MAX_NEW)?;
    let question = if input == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| CliError::Data(format!("stdin: {e}")))?;
        s
    } else {
        String::from_utf8(read_file(Path::new(&input))?).map_err(|e| CliError::Data(format!("{input}: {e}")))?
    };
    let question = question.trim_end_matches(['\n', '\r']);
    if question.trim().is_empty() {
        return Err(usage("input is empty"));
    }
    let (model, vocab) = load_model(&ckpt)?;
    let answer = training::predict(&model, &vocab, question, max_new)?;
    println!("{answer}");
    if let Err(diags) = sva::validate_syntax(&answer) {
        for d in diags {
            eprintln!("syntax: {d}");
        }
    }
    Ok(())
}

pub fn eval(cfg: &Config, a: EvalArgs) -> Result<(), CliError> {
    let data_path: PathBuf = cfg.require(a.data, "data")?;
    let split_name = cfg.pick(a.split, "split", "test".to_string())?;
    let seed = cfg.seed(a.seed)?;
    let max_new = cfg.pick(a.max_new, "max-new", DEFAULT_MAX_NEW)?;
    let oracle = a.oracle || cfg.pick(None, "oracle", false)?;
    let out: Option<PathBuf> = cfg.pick_opt(a.out, "out")?;
    if !["train", "validation", "test"].contains(&split_name.as_str()) {
        return Err(usage(format!("unknown split `{split_name}` (expected train, validation or test)")));
    }
    let (data_bytes, split) = load_split(&data_path, Seeds::derive(seed).split)?;
    let pairs = split.get(&split_name).expect("known split");
    if pairs.is_empty() {
        return Err(CliError::Data(format!("split `{split_name}` is empty")));
    }
    let references: Vec<&str> = pairs.iter().map(|p| p.answer.as_str()).collect();
    let mut manifest = Manifest::new("eval", seed);
    let predictions: Vec<String> = if oracle {
        references.iter().map(|s| s.to_string()).collect()
    } else {
        let ckpt: PathBuf = cfg.require(a.checkpoint, "checkpoint")?;
        let bytes = read_file(&ckpt)?;
        manifest.input(&ckpt, &bytes);
        let (model, vocab) = load_model(&ckpt)?;
        training::predict_all(&model, &vocab, pairs, max_new)?
    };
    let report: MetricReport = metrics::evaluate_corpus(&predictions, &references.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    if !report.in_range() {
        return Err(CliError::Invariant(format!("metric outside [0, 1]: {report:?}")));
    }
    println!("{report}");
    let csv = report.to_csv();
    match out {
        Some(dir) => {
            create_dir(&dir)?;
            let preds = serde_json::to_string_pretty(&predictions).expect("strings serialize") + "\n";
            write_file(&dir.join(METRICS_FILE), csv.as_bytes())?;
            write_file(&dir.join(PREDICTIONS_FILE), preds.as_bytes())?;
            manifest
                .setting("split", &split_name)
                .setting("oracle", oracle)
                .setting("max_new", max_new)
                .input(&data_path, &data_bytes)
                .output(METRICS_FILE, csv.as_bytes())
                .output(PREDICTIONS_FILE, preds.as_bytes())
                .summary("report", report);
            manifest.write(&dir)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// Figures from the published parameter table that the r·(d+k) count does
/// not reproduce.
fn published_percent(geometry: &str, r: usize, group: ModuleGroup) -> Option<f64> {
    (geometry == "llama3-8b" && r == 32 && group == ModuleGroup::All).then_some(1.10)
}

pub fn count_params(cfg: &Config, a: CountArgs) -> Result<(), CliError> {
    let name = cfg.pick(a.geometry, "geometry", "llama3-8b".to_string())?;
    let r: usize = cfg.pick(a.r, "r", 16)?;
    let group = parse_group(&cfg.pick(a.modules, "modules", "all".to_string())?)?;
    if r == 0 {
        return Err(usage("--r must be positive"));
    }
    let geometry = ModelGeometry::preset(&name, Vocab::default().len()).map_err(|e| usage(e.to_string()))?;
    let count = count_lora_params(&geometry, &LoraConfig::new(r, r as f64, group));
    println!("{}  {:.2}%", count.trainable, count.percent);
    if let Some(p) = published_percent(&name, r, group) {
        println!(
            "note: the published table lists {p:.2}% for r={r}; r·(d+k) over {} base parameters gives {:.2}%",
            count.base, count.percent
        );
    }
    Ok(())
}

pub fn ablate(cfg: &Config, a: AblateArgs) -> Result<(), CliError> {
    let data_path: PathBuf = cfg.require(a.data, "data")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    let grid_name = cfg.pick(a.grid, "grid", "default".to_string())?;
    if grid_name != "default" {
        return Err(usage(format!("unknown grid `{grid_name}` (only `default`)")));
    }
    let seed = cfg.seed(a.seed)?;
    let steps = cfg.pick(a.steps, "steps", 200)?;
    let lr = cfg.pick(a.lr, "lr", 2e-4)?;
    let batch = cfg.pick(a.batch, "batch", 8)?;
    let max_new = cfg.pick(a.max_new, "max-new", DEFAULT_MAX_NEW)?;
    let mut grid = AblationGrid::default();
    if let Some(r) = cfg.pick_opt(a.ranks, "ranks")? {
        grid.ranks = r;
    }
    if let Some(al) = cfg.pick_opt(a.alphas, "alphas")? {
        grid.alphas = al;
    }
    if let Some(g) = cfg.pick_opt::<Vec<String>>(a.groups, "groups")? {
        grid.groups = g.iter().map(|s| parse_group(s)).collect::<Result<_, _>>()?;
    }
    if grid.cells().is_empty() {
        return Err(usage("empty grid"));
    }
    for &(r, alpha, _) in &grid.cells() {
        check_hyper(r, alpha, steps, lr, batch)?;
    }
    let seeds = Seeds::derive(seed);
    let (data_bytes, split) = load_split(&data_path, seeds.split)?;
    let vocab = Vocab::default();
    let geometry = ModelGeometry::toy(vocab.len());
    let base = AblationBase {
        geometry,
        model_seed: seeds.model,
        lora_seed: seeds.lora,
        train: TrainConfig { learning_rate: lr, batch_size: batch, steps, seed: seeds.order, ..TrainConfig::default() },
        max_new,
    };
    let rows = training::run_ablation(&grid, &base, &split, &vocab)?;
    let csv = training::ablation_csv(&rows);
    create_dir(&out)?;
    write_file(&out.join(ABLATION_FILE), csv.as_bytes())?;
    let mut m = Manifest::new("ablate", seed);
    m.setting("grid", json!({"ranks": grid.ranks, "alphas": grid.alphas, "groups": grid.groups.iter().map(|g| g.to_string()).collect::<Vec<_>>()}))
        .setting("train_config", &base.train)
        .setting("max_new", max_new)
        .input(&data_path, &data_bytes)
        .output(&format!("{ABLATION_FILE} (minutes column blanked)"), without_minutes(&csv).as_bytes());
    m.write(&out)?;
    print!("{csv}");
    Ok(())
}

/// The CSV with the wall-clock column emptied, for digests that must not
/// depend on machine speed.
pub fn without_minutes(csv: &str) -> String {
    let col = training::ABLATION_HEADER.split(',').position(|c| c == "minutes").expect("minutes column");
    csv.lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return format!("{line}\n");
            }
            let mut f: Vec<&str> = line.split(',').collect();
            if f.len() > col {
                f[col] = "";
            }
            format!("{}\n", f.join(","))
        })
        .collect()
}
