//! Decode workloads: run configuration, synthetic traces and trace files.
//!
//! A [`Trace`] holds the prompt keys of every layer plus one [`TraceStep`]
//! per generated token (a query and the new token's key for each layer).
//!
//! Synthetic traces plant a hot set of positions whose keys lean towards a
//! per-layer base direction that every query also carries, so the importance
//! evaluation keeps picking them. With `temperature` `T`, a hot key is
//! `(T·b + ε) / √(1 + T²)` and a cold key is `ε`; both have unit-variance
//! components and only their correlation with the query differs. `T = 0`
//! plants nothing.
//!
//! # Trace file
//!
//! ```text
//! TIERKV-TRACE 1\n
//! n_prompt=<int>\n  output_len=<int>\n  layers=<int>\n  heads=<int>\n
//! dims=<int>\n  seed=<int>\n  hot_fraction=<float>\n  temperature=<float>\n
//! end\n
//! <records>
//! ```
//!
//! Header keys appear once each, in that order. Every record is a
//! little-endian `u32` payload length followed by the payload:
//!
//! * prompt token: `u8 0`, `u32` position, then per layer the key
//!   (`heads·dims` little-endian `f32`);
//! * decode step: `u8 1`, `u32` step index, then per layer the query followed
//!   by the new token's key.
//!
//! All `n_prompt` prompt records come first, in position order, then
//! `output_len` step records in step order.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hie::DEFAULT_BLOCK_SIZE;
use crate::pools::{KvEntry, ELEMENT_BYTES};
use crate::vector::{KeyVec, QueryVec, Shape, TokenPos};

pub const TRACE_MAGIC: &str = "TIERKV-TRACE 1";

const PROMPT_RECORD: u8 = 0;
const STEP_RECORD: u8 = 1;

/// CPU-to-SSD pool capacity ratio: solved from device throughputs, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BetaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl fmt::Display for BetaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSetting::Auto => f.write_str("auto"),
            BetaSetting::Fixed(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for BetaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BetaSetting::Auto);
        }
        s.parse::<f64>()
            .map(BetaSetting::Fixed)
            .map_err(|_| Error::Argument(format!("beta must be \"auto\" or a number, got {s:?}")))
    }
}

impl Serialize for BetaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaSetting::Auto => s.serialize_str("auto"),
            BetaSetting::Fixed(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for BetaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(BetaSetting::Fixed(b)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Planted importance structure of synthetic traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skew {
    /// Fraction of positions that are hot.
    pub hot_fraction: f64,
    /// Signal strength of hot keys; 0 plants nothing.
    pub temperature: f64,
}

impl Default for Skew {
    fn default() -> Self {
        Self {
            hot_fraction: 0.1,
            temperature: 4.0,
        }
    }
}

/// Shape, length and policy knobs of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Prefill length.
    pub n_prompt: usize,
    /// Decode steps.
    pub output_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub dims: usize,
    /// Importance rate α.
    pub alpha: f64,
    /// Score block size n.
    pub block_size: usize,
    pub beta: BetaSetting,
    /// Multiplier on every KV and score byte (sequences per batch).
    pub batch: usize,
    pub seed: u64,
    pub skew: Skew,
    /// Optional decay of hit counts before each update.
    pub hit_decay: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_prompt: 1024,
            output_len: 16,
            layers: 4,
            heads: 4,
            dims: 32,
            alpha: 0.2,
            block_size: DEFAULT_BLOCK_SIZE,
            beta: BetaSetting::Auto,
            batch: 8,
            seed: 42,
            skew: Skew::default(),
            hit_decay: None,
        }
    }
}

impl SimConfig {
    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.heads, self.dims)
    }

    /// Bytes of one token's KV in one layer for one sequence.
    pub fn entry_bytes(&self) -> usize {
        2 * self.heads * self.dims * ELEMENT_BYTES
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.shape()?;
        if self.n_prompt == 0 {
            return bad("n_prompt must be at least 1".into());
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if self.block_size == 0 {
            return bad("block_size must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if let BetaSetting::Fixed(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return bad(format!("beta {b} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.skew.hot_fraction) {
            return bad(format!("hot_fraction {} outside [0, 1]", self.skew.hot_fraction));
        }
        if !(self.skew.temperature.is_finite() && self.skew.temperature >= 0.0) {
            return bad(format!("temperature {} must be >= 0", self.skew.temperature));
        }
        if let Some(d) = self.hit_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("hit_decay {d} outside (0, 1]"));
            }
        }
        let total = self.n_prompt + self.output_len;
        if u32::try_from(total).is_err() {
            return bad(format!("context of {total} tokens does not fit token positions"));
        }
        Ok(())
    }
}

/// One decode step: per layer, the current query and the new token's key.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub queries: Vec<QueryVec>,
    pub new_keys: Vec<KeyVec>,
}

impl TraceStep {
    pub fn token_pos(&self) -> TokenPos {
        self.new_keys[0].token_pos
    }

    pub fn new_entries(&self) -> Vec<KvEntry> {
        self.new_keys
            .iter()
            .enumerate()
            .map(|(layer, k)| KvEntry::new(layer, k.clone()))
            .collect()
    }
}

/// Everything a trace file describes.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub n_prompt: usize,
    pub output_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub dims: usize,
    pub seed: u64,
    pub hot_fraction: f64,
    pub temperature: f64,
}

impl TraceHeader {
    fn from_config(c: &SimConfig) -> Self {
        Self {
            n_prompt: c.n_prompt,
            output_len: c.output_len,
            layers: c.layers,
            heads: c.heads,
            dims: c.dims,
            seed: c.seed,
            hot_fraction: c.skew.hot_fraction,
            temperature: c.skew.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    /// `prompt[layer][pos]`.
    pub prompt: Vec<Vec<KeyVec>>,
    pub steps: Vec<TraceStep>,
    /// Positions planted hot (empty for loaded traces).
    pub hot: BTreeSet<TokenPos>,
}

impl Trace {
    pub fn shape(&self) -> Shape {
        Shape {
            heads: self.header.heads,
            dims: self.header.dims,
        }
    }

    pub fn prompt_entries(&self, layer: usize) -> Vec<KvEntry> {
        self.prompt[layer]
            .iter()
            .map(|k| KvEntry::new(layer, k.clone()))
            .collect()
    }

    /// Checks the trace against the shape and lengths a run expects.
    pub fn check_matches(&self, config: &SimConfig) -> Result<()> {
        let h = &self.header;
        let expect = [
            ("n_prompt", h.n_prompt, config.n_prompt),
            ("output_len", h.output_len, config.output_len),
            ("layers", h.layers, config.layers),
            ("heads", h.heads, config.heads),
            ("dims", h.dims, config.dims),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Validation(format!(
                    "trace {name} is {got}, run expects {want}"
                )));
            }
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Generates a seeded synthetic trace.
pub fn gen_synthetic(config: &SimConfig) -> Result<Trace> {
    config.validate()?;
    let shape = config.shape()?;
    let d = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let bases: Vec<Vec<f32>> = (0..config.layers).map(|_| normal_vec(&mut rng, d)).collect();
    let t = config.skew.temperature as f32;
    let norm = (1.0 + t * t).sqrt();

    let hot_prompt = (config.skew.hot_fraction * config.n_prompt as f64).round() as usize;
    let mut hot: BTreeSet<TokenPos> = sample(&mut rng, config.n_prompt, hot_prompt)
        .into_iter()
        .map(|p| p as TokenPos)
        .collect();

    let key = |rng: &mut ChaCha8Rng, layer: usize, is_hot: bool| -> Vec<f32> {
        let noise = normal_vec(rng, d);
        if is_hot && t > 0.0 {
            noise
                .iter()
                .zip(&bases[layer])
                .map(|(e, b)| (t * b + e) / norm)
                .collect()
        } else {
            noise
        }
    };

    let mut prompt: Vec<Vec<KeyVec>> = vec![Vec::with_capacity(config.n_prompt); config.layers];
    for pos in 0..config.n_prompt {
        let is_hot = hot.contains(&(pos as TokenPos));
        for (layer, keys) in prompt.iter_mut().enumerate() {
            keys.push(KeyVec::new(pos as TokenPos, shape, key(&mut rng, layer, is_hot))?);
        }
    }

    let mut steps = Vec::with_capacity(config.output_len);
    for step in 0..config.output_len {
        let pos = (config.n_prompt + step) as TokenPos;
        let is_hot = rng.random_bool(config.skew.hot_fraction);
        if is_hot {
            hot.insert(pos);
        }
        let mut queries = Vec::with_capacity(config.layers);
        let mut new_keys = Vec::with_capacity(config.layers);
        for (layer, base) in bases.iter().enumerate() {
            let q: Vec<f32> = normal_vec(&mut rng, d)
                .iter()
                .zip(base)
                .map(|(e, b)| (b + e) / std::f32::consts::SQRT_2)
                .collect();
            queries.push(QueryVec::new(layer, shape, q)?);
            new_keys.push(KeyVec::new(pos, shape, key(&mut rng, layer, is_hot))?);
        }
        steps.push(TraceStep {
            step,
            queries,
            new_keys,
        });
    }

    Ok(Trace {
        header: TraceHeader::from_config(config),
        prompt,
        steps,
        hot,
    })
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes `trace` in the trace file format.
pub fn write_trace<W: Write>(trace: &Trace, out: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    let h = &trace.header;
    writeln!(out, "{TRACE_MAGIC}")?;
    writeln!(out, "n_prompt={}", h.n_prompt)?;
    writeln!(out, "output_len={}", h.output_len)?;
    writeln!(out, "layers={}", h.layers)?;
    writeln!(out, "heads={}", h.heads)?;
    writeln!(out, "dims={}", h.dims)?;
    writeln!(out, "seed={}", h.seed)?;
    writeln!(out, "hot_fraction={}", h.hot_fraction)?;
    writeln!(out, "temperature={}", h.temperature)?;
    writeln!(out, "end")?;

    let mut buf = Vec::new();
    let record = |out: &mut BufWriter<W>, buf: &mut Vec<u8>| -> std::io::Result<()> {
        out.write_all(&(buf.len() as u32).to_le_bytes())?;
        out.write_all(buf)?;
        buf.clear();
        Ok(())
    };
    for pos in 0..h.n_prompt {
        buf.push(PROMPT_RECORD);
        buf.extend_from_slice(&(pos as u32).to_le_bytes());
        for layer in &trace.prompt {
            put_f32s(&mut buf, layer[pos].values());
        }
        record(&mut out, &mut buf)?;
    }
    for step in &trace.steps {
        buf.push(STEP_RECORD);
        buf.extend_from_slice(&(step.step as u32).to_le_bytes());
        for (q, k) in step.queries.iter().zip(&step.new_keys) {
            put_f32s(&mut buf, q.values());
            put_f32s(&mut buf, k.values());
        }
        record(&mut out, &mut buf)?;
    }
    out.flush()
}

pub fn save_trace(trace: &Trace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(trace, file).map_err(|e| Error::io(path, e))
}

fn parse_header<R: BufRead>(input: &mut R) -> Result<TraceHeader> {
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let read = input
            .read_line(&mut line)
            .map_err(|e| Error::parse(format!("line {}", lines.len() + 1), e.to_string()))?;
        if read == 0 {
            return Err(Error::parse(
                format!("line {}", lines.len() + 1),
                "header ended before \"end\"",
            ));
        }
        let line = line.trim_end_matches('\n').to_owned();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(TRACE_MAGIC) {
        return Err(Error::parse("line 1", format!("expected {TRACE_MAGIC:?}")));
    }
    const KEYS: [&str; 8] = [
        "n_prompt",
        "output_len",
        "layers",
        "heads",
        "dims",
        "seed",
        "hot_fraction",
        "temperature",
    ];
    if lines.len() != KEYS.len() + 1 {
        return Err(Error::parse(
            format!("line {}", lines.len() + 1),
            format!("expected {} header fields, found {}", KEYS.len(), lines.len() - 1),
        ));
    }
    let mut values = Vec::with_capacity(KEYS.len());
    for (i, (line, key)) in lines[1..].iter().zip(KEYS).enumerate() {
        let lineno = format!("line {}", i + 2);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&lineno, format!("expected key=value, got {line:?}")))?;
        if k != key {
            return Err(Error::parse(&lineno, format!("expected key {key:?}, got {k:?}")));
        }
        values.push((lineno, v.to_owned()));
    }
    fn num<T: FromStr>(field: &(String, String)) -> Result<T> {
        field
            .1
            .parse()
            .map_err(|_| Error::parse(&field.0, format!("invalid number {:?}", field.1)))
    }
    Ok(TraceHeader {
        n_prompt: num(&values[0])?,
        output_len: num(&values[1])?,
        layers: num(&values[2])?,
        heads: num(&values[3])?,
        dims: num(&values[4])?,
        seed: num(&values[5])?,
        hot_fraction: num(&values[6])?,
        temperature: num(&values[7])?,
    })
}

fn read_record<R: Read>(input: &mut R, index: usize) -> Result<Option<Vec<u8>>> {
    let location = || format!("record {index}");
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::parse(location(), "truncated length prefix")),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::parse(location(), e.to_string())),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    let mut payload = vec![0u8; len];
    input.read_exact(&mut payload).map_err(|_| {
        Error::parse(location(), format!("truncated payload, expected {len} bytes"))
    })?;
    Ok(Some(payload))
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect()
}

/// Reads a trace in the trace file format.
pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut input = BufReader::new(input);
    let header = parse_header(&mut input)?;
    let shape = Shape::new(header.heads, header.dims)
        .map_err(|e| Error::Validation(format!("trace header: {e}")))?;
    if header.layers == 0 {
        return Err(Error::Validation("trace header: layers must be at least 1".into()));
    }
    let d = shape.len();
    let prompt_len = 1 + 4 + 4 * d * header.layers;
    let step_len = 1 + 4 + 8 * d * header.layers;

    let mut prompt: Vec<Vec<KeyVec>> = vec![Vec::with_capacity(header.n_prompt); header.layers];
    let mut steps = Vec::with_capacity(header.output_len);
    let mut index = 0;
    while let Some(payload) = read_record(&mut input, index)? {
        let at = format!("record {index}");
        let kind = payload.first().copied();
        let expected_len = match kind {
            Some(PROMPT_RECORD) => prompt_len,
            Some(STEP_RECORD) => step_len,
            _ => return Err(Error::parse(at, format!("unknown record kind {kind:?}"))),
        };
        if payload.len() != expected_len {
            return Err(Error::Validation(format!(
                "{at}: payload of {} bytes, shape needs {expected_len}",
                payload.len()
            )));
        }
        let id = u32::from_le_bytes(payload[1..5].try_into().expect("4 bytes")) as usize;
        let body = f32s(&payload[5..]);
        let check = |e: Error| Error::Validation(format!("{at}: {e}"));
        if kind == Some(PROMPT_RECORD) {
            if !steps.is_empty() || id != prompt[0].len() {
                return Err(Error::Validation(format!(
                    "{at}: prompt token {id} out of order"
                )));
            }
            for (layer, values) in body.chunks_exact(d).enumerate() {
                prompt[layer].push(KeyVec::new(id as TokenPos, shape, values.to_vec()).map_err(check)?);
            }
        } else {
            if id != steps.len() {
                return Err(Error::Validation(format!("{at}: step {id} out of order")));
            }
            let pos = (header.n_prompt + id) as TokenPos;
            let mut queries = Vec::with_capacity(header.layers);
            let mut new_keys = Vec::with_capacity(header.layers);
            for (layer, pair) in body.chunks_exact(2 * d).enumerate() {
                queries.push(QueryVec::new(layer, shape, pair[..d].to_vec()).map_err(check)?);
                new_keys.push(KeyVec::new(pos, shape, pair[d..].to_vec()).map_err(check)?);
            }
            steps.push(TraceStep {
                step: id,
                queries,
                new_keys,
            });
        }
        index += 1;
    }
    if prompt[0].len() != header.n_prompt {
        return Err(Error::Validation(format!(
            "header declares n_prompt={}, file has {} prompt records",
            header.n_prompt,
            prompt[0].len()
        )));
    }
    if steps.len() != header.output_len {
        return Err(Error::Validation(format!(
            "header declares output_len={}, file has {} step records",
            header.output_len,
            steps.len()
        )));
    }
    Ok(Trace {
        header,
        prompt,
        steps,
        hot: BTreeSet::new(),
    })
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(file)
}
