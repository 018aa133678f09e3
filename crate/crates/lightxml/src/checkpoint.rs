//! Binary checkpoints of a [`ModelBundle`].
//!
//! Layout (little endian): magic `LXML`, `u32` version, `u8` value width
//! (4 or 8 bytes), a `u32`-length block of `key=value` metadata lines, then
//! a `u32` count of tensor records. Each record is a `u16`-length name, a
//! `u8` rank, `u64` dims and the values. Parameter records use the store
//! names; averaged weights add `.swa`, optimizer moments `.m` and `.v`.

use std::collections::BTreeMap;
use std::path::Path;

use lightxml_core::cluster::ClusterMap;
use lightxml_core::encoder::EncoderConfig;
use lightxml_core::model::{ModelBundle, ModelConfig};
use lightxml_core::optim::SwaState;
use lightxml_core::params::ParamStore;
use lightxml_core::rank::Bottleneck;
use lightxml_core::text::Vocab;
use lightxml_core::Real;

use crate::error::{CliError, Result};
use crate::settings::Pairs;

pub const MAGIC: &[u8; 4] = b"LXML";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Width {
    F32,
    F64,
}

impl Width {
    pub fn bytes(self) -> usize {
        match self {
            Width::F32 => 4,
            Width::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub bundle: ModelBundle<T>,
    pub vocab: Option<Vocab>,
    /// Resolved settings of the run that produced the bundle.
    pub settings: Pairs,
}

struct Writer {
    buf: Vec<u8>,
    width: Width,
}

impl Writer {
    fn record<T: Real>(&mut self, name: &str, shape: &[usize], values: &[T]) {
        self.buf.extend((name.len() as u16).to_le_bytes());
        self.buf.extend(name.as_bytes());
        self.buf.push(shape.len() as u8);
        for &d in shape {
            self.buf.extend((d as u64).to_le_bytes());
        }
        for v in values {
            match self.width {
                Width::F32 => self.buf.extend((v.as_f64() as f32).to_le_bytes()),
                Width::F64 => self.buf.extend(v.as_f64().to_le_bytes()),
            }
        }
    }
}

fn joined<I: IntoIterator<Item = D>, D: ToString>(items: I) -> String {
    items.into_iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn metadata<T: Real>(bundle: &ModelBundle<T>, vocab: Option<&Vocab>, settings: &[(String, String)]) -> String {
    let m = &bundle.model;
    let e = &m.config.encoder;
    let opt = &bundle.optimizer;
    let mut meta: Vec<(String, String)> = vec![
        ("encoder.vocab_size".into(), e.vocab_size.to_string()),
        ("encoder.hidden".into(), e.hidden.to_string()),
        ("encoder.layers".into(), e.layers.to_string()),
        ("encoder.heads".into(), e.heads.to_string()),
        ("encoder.ff_dim".into(), e.ff_dim.to_string()),
        ("encoder.max_positions".into(), e.max_positions.to_string()),
        ("encoder.block_dropout".into(), e.block_dropout.to_string()),
        ("encoder.rep_dropout".into(), e.rep_dropout.to_string()),
        ("encoder.concat_layers".into(), e.concat_layers.to_string()),
        ("model.num_labels".into(), m.config.num_labels.to_string()),
        ("model.embed_dim".into(), m.config.embed_dim.to_string()),
        (
            "model.bottleneck".into(),
            match m.config.bottleneck {
                Bottleneck::Sigmoid => "sigmoid",
                Bottleneck::Relu => "relu",
            }
            .into(),
        ),
        ("cluster.max_size".into(), m.cluster_map.max_size().to_string()),
        ("cluster.seed".into(), m.cluster_map.seed().to_string()),
        ("cluster.assign".into(), joined(m.cluster_map.assignments())),
        ("bundle.epoch".into(), bundle.epoch.to_string()),
        ("bundle.seed".into(), bundle.seed.to_string()),
        ("bundle.b_top".into(), bundle.b_top.to_string()),
        ("opt.lr".into(), opt.lr.to_string()),
        ("opt.weight_decay".into(), opt.weight_decay.to_string()),
        ("opt.decay_bias_norm".into(), opt.decay_bias_norm.to_string()),
        ("opt.step".into(), opt.step_count().to_string()),
        (
            "opt.param_steps".into(),
            joined((0..bundle.store.len()).map(|i| opt.param_step_count(i))),
        ),
    ];
    if let Some(swa) = &bundle.swa {
        meta.push(("swa.count".into(), swa.count.to_string()));
        meta.push(("swa.start_epoch".into(), swa.start_epoch.to_string()));
    }
    if let Some(v) = vocab {
        meta.push(("vocab.min_freq".into(), v.min_freq().to_string()));
        meta.push(("vocab.tokens".into(), v.tokens().join(" ")));
    }
    for (k, v) in settings {
        meta.push((format!("settings.{k}"), v.clone()));
    }
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn encode<T: Real>(
    bundle: &ModelBundle<T>,
    vocab: Option<&Vocab>,
    settings: &[(String, String)],
    width: Width,
) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::new(),
        width,
    };
    w.buf.extend(MAGIC);
    w.buf.extend(VERSION.to_le_bytes());
    w.buf.push(width.bytes() as u8);
    let meta = metadata(bundle, vocab, settings);
    w.buf.extend((meta.len() as u32).to_le_bytes());
    w.buf.extend(meta.as_bytes());

    let store = &bundle.store;
    let per_param = 3 + usize::from(bundle.swa.is_some());
    w.buf.extend(((store.len() * per_param) as u32).to_le_bytes());
    for (id, p) in store.iter() {
        let shape = p.value.shape();
        w.record(&p.name, shape, p.value.data());
        let (m, v) = bundle.optimizer.moments(id.index());
        w.record(&format!("{}.m", p.name), shape, m);
        w.record(&format!("{}.v", p.name), shape, v);
        if let Some(swa) = &bundle.swa {
            w.record(&format!("{}.swa", p.name), shape, swa.average.value(id).data());
        }
    }
    w.buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::format(self.path, "truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

type Records = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn read_records(r: &mut Reader<'_>, width: usize) -> Result<Records> {
    let count = r.u32()?;
    let mut out = Records::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CliError::format(r.path, "record name is not UTF-8"))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CliError::format(r.path, "record size overflows"))?;
        let raw = r.take(n.checked_mul(width).ok_or_else(|| CliError::format(r.path, "record size overflows"))?)?;
        let values = match width {
            4 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk")) as f64)
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk")))
                .collect(),
        };
        if out.insert(name.clone(), (shape, values)).is_some() {
            return Err(CliError::format(r.path, format!("duplicate record {name}")));
        }
    }
    if r.pos != r.bytes.len() {
        return Err(CliError::format(r.path, "trailing bytes after the last record"));
    }
    Ok(out)
}

struct Meta<'a> {
    map: BTreeMap<&'a str, &'a str>,
    path: &'a Path,
}

impl<'a> Meta<'a> {
    fn raw(&self, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| CliError::format(self.path, format!("missing metadata {key}")))
    }

    fn get<N: std::str::FromStr>(&self, key: &str) -> Result<N> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| CliError::format(self.path, format!("bad metadata {key}={v}")))
    }

    fn list<N: std::str::FromStr>(&self, key: &str) -> Result<Vec<N>> {
        self.raw(key)?
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::format(self.path, format!("bad entry {v:?} in {key}")))
            })
            .collect()
    }
}

fn take_values<T: Real>(records: &mut Records, name: &str, shape: &[usize], path: &Path) -> Result<Vec<T>> {
    let (s, v) = records
        .remove(name)
        .ok_or_else(|| CliError::format(path, format!("missing record {name}")))?;
    if s != shape {
        return Err(CliError::format(
            path,
            format!("record {name} has shape {s:?}, the model expects {shape:?}"),
        ));
    }
    Ok(v.into_iter().map(T::lit).collect())
}

/// Reads a checkpoint in any stored width into precision `T`.
pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(CliError::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let width = r.take(1)?[0] as usize;
    if width != 4 && width != 8 {
        return Err(CliError::format(path, format!("bad value width {width}")));
    }
    let meta_len = r.u32()? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| CliError::format(path, "metadata is not UTF-8"))?;
    let mut map = BTreeMap::new();
    let mut settings = Vec::new();
    for line in meta_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::format(path, format!("bad metadata line {line:?}")))?;
        if let Some(s) = k.strip_prefix("settings.") {
            settings.push((s.to_string(), v.to_string()));
        }
        map.insert(k, v);
    }
    let meta = Meta { map, path };
    let mut records = read_records(&mut r, width)?;

    let encoder = EncoderConfig {
        vocab_size: meta.get("encoder.vocab_size")?,
        hidden: meta.get("encoder.hidden")?,
        layers: meta.get("encoder.layers")?,
        heads: meta.get("encoder.heads")?,
        ff_dim: meta.get("encoder.ff_dim")?,
        max_positions: meta.get("encoder.max_positions")?,
        block_dropout: meta.get("encoder.block_dropout")?,
        rep_dropout: meta.get("encoder.rep_dropout")?,
        concat_layers: meta.get("encoder.concat_layers")?,
    };
    let bottleneck = match meta.raw("model.bottleneck")? {
        "sigmoid" => Bottleneck::Sigmoid,
        "relu" => Bottleneck::Relu,
        b => return Err(CliError::format(path, format!("unknown bottleneck {b}"))),
    };
    let config = ModelConfig {
        encoder,
        num_labels: meta.get("model.num_labels")?,
        embed_dim: meta.get("model.embed_dim")?,
        bottleneck,
    };
    let assign: Vec<u32> = meta.list("cluster.assign")?;
    let k = assign.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut members = vec![Vec::new(); k];
    for (l, &c) in assign.iter().enumerate() {
        members[c as usize].push(l as u32);
    }
    let map = ClusterMap::from_members(
        members,
        assign.len(),
        meta.get("cluster.max_size")?,
        meta.get("cluster.seed")?,
    )
    .map_err(|e| CliError::format(path, e.to_string()))?;

    let mut bundle = ModelBundle::<T>::new(
        config,
        map,
        meta.get("bundle.seed")?,
        meta.get("bundle.b_top")?,
        meta.get("opt.lr")?,
        meta.get("opt.weight_decay")?,
    )
    .map_err(|e| CliError::format(path, e.to_string()))?;
    bundle.epoch = meta.get("bundle.epoch")?;
    bundle.optimizer.decay_bias_norm = meta.get("opt.decay_bias_norm")?;

    let names: Vec<(String, Vec<usize>)> = bundle
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    let mut first = Vec::with_capacity(names.len());
    let mut second = Vec::with_capacity(names.len());
    let swa_count: Option<u64> = meta.map.contains_key("swa.count").then(|| meta.get("swa.count")).transpose()?;
    let mut average: Option<ParamStore<T>> = swa_count.map(|_| bundle.store.clone());
    for (name, shape) in &names {
        let v = take_values(&mut records, name, shape, path)?;
        bundle.store.assign(name, shape, v)?;
        first.push(take_values(&mut records, &format!("{name}.m"), shape, path)?);
        second.push(take_values(&mut records, &format!("{name}.v"), shape, path)?);
        if let Some(avg) = average.as_mut() {
            let v = take_values(&mut records, &format!("{name}.swa"), shape, path)?;
            avg.assign(name, shape, v)?;
        }
    }
    if let Some(extra) = records.keys().next() {
        return Err(CliError::format(path, format!("unexpected record {extra}")));
    }
    bundle
        .optimizer
        .restore(meta.get("opt.step")?, meta.list("opt.param_steps")?, first, second)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    if let (Some(count), Some(average)) = (swa_count, average) {
        bundle.swa = Some(SwaState {
            average,
            count,
            start_epoch: meta.get("swa.start_epoch")?,
        });
    }
    bundle
        .check_consistent()
        .map_err(|e| CliError::format(path, e.to_string()))?;

    let vocab = if meta.map.contains_key("vocab.tokens") {
        let tokens = meta.raw("vocab.tokens")?.split(' ').map(str::to_owned).collect();
        Some(Vocab::from_tokens(tokens, meta.get("vocab.min_freq")?).map_err(|e| CliError::format(path, e.to_string()))?)
    } else {
        None
    };
    Ok(Checkpoint {
        bundle,
        vocab,
        settings,
    })
}

pub fn save<T: Real>(
    path: &Path,
    bundle: &ModelBundle<T>,
    vocab: Option<&Vocab>,
    settings: &[(String, String)],
    width: Width,
) -> Result<()> {
    std::fs::write(path, encode(bundle, vocab, settings, width)).map_err(|e| CliError::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}
