//! Question/answer records, splitting, the character vocabulary, prompt
//! encoding and the synthetic toy corpus.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExamplePair {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl ExamplePair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { question: question.into(), answer: answer.into(), category: None }
    }
}

fn record_from_value(index: usize, v: &Value) -> Result<ExamplePair> {
    let obj = v.as_object().ok_or_else(|| Error::Record { index, message: "expected a JSON object".into() })?;
    let field = |name: &str| -> Result<String> {
        match obj.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::Record { index, message: format!("field \"{name}\" is not a string") }),
            None => Err(Error::Record { index, message: format!("missing field \"{name}\"") }),
        }
    };
    let question = field("question")?;
    let answer = field("answer")?;
    if question.is_empty() || answer.is_empty() {
        return Err(Error::Record { index, message: "question and answer must be nonempty".into() });
    }
    let category = match obj.get("category") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(Error::Record { index, message: "field \"category\" is not a string".into() }),
    };
    Ok(ExamplePair { question, answer, category })
}

/// Parses a JSON array of records or one JSON object per line.
pub fn parse_pairs(text: &str) -> Result<Vec<ExamplePair>> {
    if text.trim_start().starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(text)?;
        return values.iter().enumerate().map(|(i, v)| record_from_value(i, v)).collect();
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let v: Value =
                serde_json::from_str(line).map_err(|e| Error::Record { index: i, message: e.to_string() })?;
            record_from_value(i, &v)
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<ExamplePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

/// Writes a pretty-printed JSON array.
pub fn save_pairs(path: impl AsRef<Path>, pairs: &[ExamplePair]) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(pairs)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    Absolute { train: usize, validation: usize, test: usize },
    /// Fractions summing to 1. Validation and test are rounded; train takes
    /// the remainder.
    Proportional { train: f64, validation: f64, test: f64 },
}

impl SplitSizes {
    pub const FULL: SplitSizes = SplitSizes::Absolute { train: 18_000, validation: 1_000, test: 1_000 };
    pub const DEFAULT_PROPORTIONS: SplitSizes =
        SplitSizes::Proportional { train: 0.90, validation: 0.05, test: 0.05 };

    fn resolve(self, n: usize) -> Result<(usize, usize, usize)> {
        match self {
            SplitSizes::Absolute { train, validation, test } => {
                let requested = train + validation + test;
                if requested > n {
                    return Err(Error::InsufficientData { available: n, requested });
                }
                Ok((train, validation, test))
            }
            SplitSizes::Proportional { train, validation, test } => {
                let parts = [train, validation, test];
                if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("split proportions {parts:?} must be nonnegative and sum to 1")));
                }
                let v = (validation * n as f64).round() as usize;
                let t = (test * n as f64).round() as usize;
                let v = v.min(n);
                let t = t.min(n - v);
                Ok((n - v - t, v, t))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<ExamplePair>,
    pub validation: Vec<ExamplePair>,
    pub test: Vec<ExamplePair>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn get(&self, name: &str) -> Option<&[ExamplePair]> {
        match name {
            "train" => Some(&self.train),
            "validation" | "val" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded uniform shuffle followed by a contiguous partition.
pub fn split(pairs: &[ExamplePair], seed: u64, sizes: SplitSizes) -> Result<DatasetSplit> {
    let (tr, va, te) = sizes.resolve(pairs.len())?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| order[range].iter().map(|&i| pairs[i].clone()).collect();
    Ok(DatasetSplit { train: take(0..tr), validation: take(tr..tr + va), test: take(tr + va..tr + va + te), seed })
}

pub const PAD: usize = 0;
pub const BOA: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<boa>", "<eos>", "<unk>"];

/// Character vocabulary with four reserved ids in front.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
}

impl Default for Vocab {
    /// Reserved ids, newline, then printable ASCII.
    fn default() -> Self {
        let mut symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        symbols.push("\n".into());
        symbols.extend((0x20u8..=0x7e).map(|b| (b as char).to_string()));
        Self { symbols }
    }
}

fn escape_symbol(s: &str) -> String {
    match s {
        "\n" => "\\n".into(),
        "\\" => "\\\\".into(),
        " " => "\\s".into(),
        "\t" => "\\t".into(),
        other => other.into(),
    }
}

fn unescape_symbol(s: &str) -> String {
    match s {
        "\\n" => "\n".into(),
        "\\\\" => "\\".into(),
        "\\s" => " ".into(),
        "\\t" => "\t".into(),
        other => other.into(),
    }
}

impl Vocab {
    /// Builds a vocabulary from an ordered symbol list. The first four
    /// entries must be the reserved preamble, and every other symbol a
    /// single character.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < RESERVED.len() || symbols[..RESERVED.len()] != RESERVED {
            return Err(Error::Config(format!("vocabulary must start with {RESERVED:?}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, s) in symbols.iter().enumerate() {
            if i >= RESERVED.len() && s.chars().count() != 1 {
                return Err(Error::Config(format!("vocabulary entry {i} ({s:?}) is not a single character")));
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::Config(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        let mut buf = [0u8; 4];
        let s: &str = c.encode_utf8(&mut buf);
        self.symbols.iter().skip(RESERVED.len()).position(|x| x == s).map(|p| p + RESERVED.len())
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    /// Character ids; unknown characters map to [`UNK`]. Returns the ids and
    /// the number of unknowns.
    pub fn encode(&self, text: &str) -> (Vec<usize>, usize) {
        let mut unknown = 0;
        let ids = text
            .chars()
            .map(|c| {
                self.id(c).unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (ids, unknown)
    }

    /// Text of non-reserved ids; `<unk>` becomes U+FFFD, other reserved ids
    /// are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                UNK => Some("\u{fffd}"),
                id if id < RESERVED.len() => None,
                id => self.symbol(id),
            })
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        self.symbols.iter().map(|s| escape_symbol(s) + "\n").collect()
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        Self::from_symbols(text.lines().map(unescape_symbol).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_file_string(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub tokens: Vec<usize>,
    /// True on answer characters and the closing end-of-sequence token.
    pub mask: Vec<bool>,
    /// Question characters dropped from the left to fit.
    pub truncated: usize,
    pub unknown: usize,
}

/// `question · BOA · answer · EOS`, trimming the question from the left when
/// the whole does not fit in `max_len`.
pub fn encode_prompt(pair: &ExamplePair, vocab: &Vocab, max_len: usize) -> Result<Encoded> {
    let (q, uq) = vocab.encode(&pair.question);
    let (a, ua) = vocab.encode(&pair.answer);
    let needed = a.len() + 2;
    if max_len < needed {
        return Err(Error::SequenceTooLong { len: needed, max: max_len });
    }
    let room = max_len - needed;
    let truncated = q.len().saturating_sub(room);
    let q = &q[truncated..];
    let mut tokens = Vec::with_capacity(q.len() + needed);
    tokens.extend_from_slice(q);
    tokens.push(BOA);
    tokens.extend_from_slice(&a);
    tokens.push(EOS);
    let mut mask = vec![false; q.len() + 1];
    mask.resize(tokens.len(), true);
    if uq + ua > 0 {
        log::debug!("{} characters outside the vocabulary", uq + ua);
    }
    Ok(Encoded { tokens, mask, truncated, unknown: uq + ua })
}

/// Prompt for generation: the question (left-trimmed so that `reserve`
/// tokens remain free within `max_len`) followed by BOA.
pub fn encode_query(question: &str, vocab: &Vocab, max_len: usize, reserve: usize) -> Result<Vec<usize>> {
    let (mut q, _) = vocab.encode(question);
    if max_len <= reserve {
        return Err(Error::SequenceTooLong { len: reserve + 1, max: max_len });
    }
    let room = max_len - reserve - 1;
    if q.len() > room {
        q.drain(..q.len() - room);
    }
    q.push(BOA);
    Ok(q)
}

/// Splits a token sequence at the first BOA into question and answer text.
/// The answer stops at the first EOS.
pub fn decode(tokens: &[usize], vocab: &Vocab) -> (String, String) {
    let boa = tokens.iter().position(|&t| t == BOA).unwrap_or(tokens.len());
    let rest = tokens.get(boa + 1..).unwrap_or(&[]);
    let end = rest.iter().position(|&t| t == EOS).unwrap_or(rest.len());
    (vocab.decode(&tokens[..boa]), vocab.decode(&rest[..end]))
}

/// Template families of the toy corpus.
pub const FAMILIES: [&str; 4] = ["register", "counter", "handshake", "onehot"];

const CLOCKS: [&str; 4] = ["clk", "aclk", "pclk", "sclk"];
const RESETS_HIGH: [&str; 4] = ["rst", "srst", "areset", "hrst"];
const RESETS_LOW: [&str; 4] = ["rst_n", "nrst", "arstn", "prstn"];
const ENABLES: [&str; 4] = ["en", "we", "load", "ce"];
const INPUTS: [&str; 4] = ["d", "in", "bus", "wd"];
const OUTPUTS: [&str; 4] = ["q", "dout", "rd", "out"];
const COUNTERS: [&str; 4] = ["cnt", "idx", "tick", "ptr"];
const REQUESTS: [&str; 4] = ["req", "valid", "start", "go"];
const ACKS: [&str; 4] = ["ack", "ready", "done", "grant"];
const STATES: [&str; 4] = ["state", "onehot", "mask", "ring"];
const MODULES: [&str; 4] = ["top", "dut", "blk", "ip"];

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn range_decl(width: u32) -> String {
    if width > 1 {
        format!("[{}:0] ", width - 1)
    } else {
        String::new()
    }
}

fn toy_pair<R: Rng>(rng: &mut R) -> ExamplePair {
    let family = rng.gen_range(0..FAMILIES.len());
    let clk = pick(rng, &CLOCKS);
    let edge = if rng.gen_bool(0.5) { "posedge" } else { "negedge" };
    let active_low = rng.gen_bool(0.5);
    let rst = if active_low { pick(rng, &RESETS_LOW) } else { pick(rng, &RESETS_HIGH) };
    let cond = if active_low { format!("!{rst}") } else { rst.to_string() };
    let m = pick(rng, &MODULES);
    let (question, answer) = match family {
        0 => {
            let w = [1, 4, 8, 16][rng.gen_range(0..4)];
            let en = pick(rng, &ENABLES);
            let d = pick(rng, &INPUTS);
            let q = pick(rng, &OUTPUTS);
            let en_cond = if rng.gen_bool(0.5) { format!("!{en}") } else { en.to_string() };
            let r = range_decl(w);
            (
                format!(
                    "module {m}(input {clk},{rst},{en},input {r}{d},output reg {r}{q});\n\
                     always @({edge} {clk}) if({cond}) {q}<=0; else if({en_cond}) {q}<={d};\nendmodule"
                ),
                format!(
                    "property p_load; @({edge} {clk}) disable iff({cond}) {en_cond} |=> {q}==$past({d}); endproperty\n\
                     assert property(p_load);"
                ),
            )
        }
        1 => {
            let w = [4, 8][rng.gen_range(0..2)];
            let k = rng.gen_range(3..16);
            let c = pick(rng, &COUNTERS);
            (
                format!(
                    "module {m}(input {clk},{rst},output reg [{}:0] {c});\nparameter K={k};\n\
                     always @({edge} {clk}) if({cond}||{c}==K-1) {c}<=0; else {c}<={c}+1;\nendmodule",
                    w - 1
                ),
                format!(
                    "property p_wrap; @({edge} {clk}) disable iff({cond}) {c}==K-1 |=> {c}==0; endproperty\n\
                     assert property(p_wrap);"
                ),
            )
        }
        2 => {
            let n = rng.gen_range(1..9);
            let req = pick(rng, &REQUESTS);
            let ack = pick(rng, &ACKS);
            (
                format!(
                    "module {m}(input {clk},{rst},{req},output reg {ack});\nparameter LAT={n};\n\
                     always @({edge} {clk}) if({cond}) {ack}<=0; else {ack}<={req};\nendmodule"
                ),
                format!(
                    "property p_hs; @({edge} {clk}) disable iff({cond}) {req} |-> ##[1:LAT] {ack}; endproperty\n\
                     assert property(p_hs);"
                ),
            )
        }
        _ => {
            let w = [4, 8, 16][rng.gen_range(0..3)];
            let s = pick(rng, &STATES);
            (
                format!(
                    "module {m}(input {clk},{rst},output reg [{}:0] {s});\n\
                     always @({edge} {clk}) if({cond}) {s}<=1; else {s}<={{{s}[{}:0],{s}[{}]}};\nendmodule",
                    w - 1,
                    w - 2,
                    w - 1
                ),
                format!(
                    "property p_onehot; @({edge} {clk}) disable iff({cond}) $onehot({s}); endproperty\n\
                     assert property(p_onehot);"
                ),
            )
        }
    };
    ExamplePair { question, answer, category: Some(FAMILIES[family].to_string()) }
}

/// `n` templated Verilog/assertion pairs drawn from four families with
/// randomized names, widths, clock edges and polarities.
pub fn gen_toy_corpus(n: usize, seed: u64) -> Vec<ExamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| toy_pair(&mut rng)).collect()
}
