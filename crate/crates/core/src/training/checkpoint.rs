//! Checkpoint file.
//!
//! Layout (little-endian): magic `OWLM`, u32 version, u32 config length and
//! the config block (`key=value` lines, UTF-8), u32 matrix count and a shape
//! directory (u16 name length, name, u32 rows, u32 cols per matrix), the
//! matrices as row-major f64 blocks in directory order, u32 loss-history
//! length and its f64 values, then u64 length and an embedded `OWLD`
//! dictionary.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Checkpoint, ModelConfig, TrainConfig};
use crate::align::AlignmentStats;
use crate::dictionary::{encode_dictionary, read_dictionary};
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::fsio::{self, ByteReader};
use crate::numerics::Matrix;
use crate::reconstruction::{AttentionConfig, Truncation};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OWLM";
const CHECKPOINT_VERSION: u32 = 1;
const CONTEXT: &str = "checkpoint";

fn truncation_str(t: Truncation) -> String {
    match t {
        Truncation::Count(k) => format!("count:{k}"),
        Truncation::Fraction(f) => format!("fraction:{f}"),
    }
}

fn parse_truncation(s: &str) -> Option<Truncation> {
    let (kind, v) = s.split_once(':')?;
    match kind {
        "count" => v.parse().ok().map(Truncation::Count),
        "fraction" => v.parse().ok().map(Truncation::Fraction),
        _ => None,
    }
}

fn config_block(c: &Checkpoint) -> String {
    let m = &c.model;
    let t = &c.train;
    let alignment = serde_json::to_string(&c.alignment).expect("alignment stats serialize");
    let lines: Vec<(&str, String)> = vec![
        ("d", m.d.to_string()),
        ("layers", m.layers.to_string()),
        ("tau", m.tau.to_string()),
        ("aggregation", format!("{:?}", m.aggregation).to_lowercase()),
        ("adjacency", m.adjacency.as_str().to_string()),
        ("truncation", truncation_str(m.attention.truncation)),
        ("tau_a", m.attention.tau_a.to_string()),
        ("signed_sqrt", m.attention.signed_sqrt.to_string()),
        (
            "similarity_channel",
            match m.attention.similarity {
                crate::reconstruction::SimilarityChannel::Structure => "structure".into(),
                crate::reconstruction::SimilarityChannel::PerChannel => "per_channel".into(),
            },
        ),
        ("n_sup", m.n_sup.to_string()),
        ("tie_qk", m.tie_qk.to_string()),
        ("lr", t.lr.to_string()),
        ("epochs", t.epochs.to_string()),
        ("lambda", t.lambda.to_string()),
        ("beta", t.beta.to_string()),
        ("pairs_per_graph", t.pairs_per_graph.to_string()),
        ("seed", t.seed.to_string()),
        ("adam_beta1", t.adam_beta1.to_string()),
        ("adam_beta2", t.adam_beta2.to_string()),
        ("adam_eps", t.adam_eps.to_string()),
        ("patience", t.patience.map_or("none".into(), |p| p.to_string())),
        ("epoch", c.epoch.to_string()),
        ("alignment", alignment),
    ];
    let mut s = String::new();
    for (k, v) in lines {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s
}

struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .0
            .get(key)
            .ok_or_else(|| Error::Format {
                context: CONTEXT.into(),
                location: "config block".into(),
                message: format!("missing key {key}"),
            })?;
        raw.parse().map_err(|_| Error::Format {
            context: CONTEXT.into(),
            location: "config block".into(),
            message: format!("bad value for {key}: {raw:?}"),
        })
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.0.get(key).map(String::as_str).ok_or_else(|| Error::Format {
            context: CONTEXT.into(),
            location: "config block".into(),
            message: format!("missing key {key}"),
        })
    }
}

fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format_at_line("checkpoint config", i + 1, "expected key=value"))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(ConfigMap(map))
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    fsio::put_u32(&mut out, CHECKPOINT_VERSION);
    let config = config_block(c);
    fsio::put_u32(&mut out, fsio::to_u32(config.len(), "config length")?);
    out.extend_from_slice(config.as_bytes());

    let named = c.params.named();
    fsio::put_u32(&mut out, fsio::to_u32(named.len(), "matrix count")?);
    for (name, m) in &named {
        fsio::put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        fsio::put_u32(&mut out, fsio::to_u32(m.rows(), "rows")?);
        fsio::put_u32(&mut out, fsio::to_u32(m.cols(), "cols")?);
    }
    for (_, m) in &named {
        fsio::put_f64s(&mut out, m.data());
    }
    fsio::put_u32(&mut out, fsio::to_u32(c.loss_history.len(), "history length")?);
    fsio::put_f64s(&mut out, &c.loss_history);
    let dict = encode_dictionary(&c.dictionary)?;
    fsio::put_u64(&mut out, dict.len() as u64);
    out.extend_from_slice(&dict);
    Ok(out)
}

fn take_required(named: &mut BTreeMap<String, Matrix>, key: &str) -> Result<Matrix> {
    named
        .remove(key)
        .ok_or_else(|| Error::Consistency(format!("checkpoint lacks {key}")))
}

fn params_from_named(layers: usize, width: usize, mut named: BTreeMap<String, Matrix>) -> Result<EncoderParams> {
    let w_attr = (0..layers)
        .map(|i| take_required(&mut named, &format!("w_attr.{i}")))
        .collect::<Result<Vec<_>>>()?;
    let w_struc = (0..layers)
        .map(|i| take_required(&mut named, &format!("w_struc.{i}")))
        .collect::<Result<Vec<_>>>()?;
    let params = EncoderParams {
        layers,
        width,
        w_attr,
        w_struc,
        w_sim: take_required(&mut named, "w_sim")?,
        w_sim_attr: named.remove("w_sim_attr"),
        wq_h: take_required(&mut named, "wq_h")?,
        wk_h: take_required(&mut named, "wk_h")?,
        wq_r: named.remove("wq_r"),
        wk_r: named.remove("wk_r"),
    };
    if let Some(extra) = named.keys().next() {
        return Err(Error::Consistency(format!("checkpoint has unexpected matrix {extra}")));
    }
    if params.wq_r.is_some() != params.wk_r.is_some() {
        return Err(Error::Consistency("checkpoint has only one of wq_r/wk_r".into()));
    }
    params
        .check()
        .map_err(|e| Error::Consistency(format!("checkpoint shapes: {e}")))?;
    Ok(params)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, CONTEXT);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return r.fail(format!("unsupported checkpoint version {version}"));
    }
    let config_len = r.u32()? as usize;
    let config_at = r.offset();
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| Error::format_at_offset(CONTEXT, config_at, "config block is not UTF-8"))?;
    let cfg = parse_config(config_text)?;

    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let at = r.offset();
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format_at_offset(CONTEXT, at, "matrix name is not UTF-8"))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        shapes.push((name, rows, cols));
    }
    let mut named = BTreeMap::new();
    for (name, rows, cols) in shapes {
        let data = r.f64s(rows.saturating_mul(cols))?;
        if named.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
            return Err(Error::Consistency(format!("checkpoint repeats matrix {name}")));
        }
    }
    let history_len = r.u32()? as usize;
    let loss_history = r.f64s(history_len)?;
    let dict_len = r.u64()? as usize;
    let dict_start = r.offset();
    let dict_bytes = r.take(dict_len)?;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    let mut dr = ByteReader::new(dict_bytes, "checkpoint dictionary");
    let dictionary = read_dictionary(&mut dr)?;
    if dr.remaining() != 0 {
        return Err(Error::format_at_offset(CONTEXT, dict_start + dr.offset(), "trailing dictionary bytes"));
    }

    let model = ModelConfig {
        d: cfg.get("d")?,
        layers: cfg.get("layers")?,
        tau: cfg.get("tau")?,
        aggregation: cfg.get("aggregation")?,
        adjacency: cfg.get("adjacency")?,
        attention: AttentionConfig {
            truncation: parse_truncation(cfg.raw("truncation")?).ok_or_else(|| Error::Format {
                context: CONTEXT.into(),
                location: "config block".into(),
                message: "bad truncation".into(),
            })?,
            tau_a: cfg.get("tau_a")?,
            signed_sqrt: cfg.get("signed_sqrt")?,
            similarity: cfg.get("similarity_channel")?,
        },
        n_sup: cfg.get("n_sup")?,
        tie_qk: cfg.get("tie_qk")?,
    };
    let patience = match cfg.raw("patience")? {
        "none" => None,
        _ => Some(cfg.get("patience")?),
    };
    let train = TrainConfig {
        lr: cfg.get("lr")?,
        epochs: cfg.get("epochs")?,
        lambda: cfg.get("lambda")?,
        beta: cfg.get("beta")?,
        pairs_per_graph: cfg.get("pairs_per_graph")?,
        seed: cfg.get("seed")?,
        adam_beta1: cfg.get("adam_beta1")?,
        adam_beta2: cfg.get("adam_beta2")?,
        adam_eps: cfg.get("adam_eps")?,
        patience,
    };
    let alignment: AlignmentStats = serde_json::from_str(cfg.raw("alignment")?).map_err(|e| Error::Format {
        context: CONTEXT.into(),
        location: "config block".into(),
        message: format!("alignment: {e}"),
    })?;
    if model.layers < 2 || model.d == 0 {
        return Err(Error::Consistency("checkpoint model shape is invalid".into()));
    }
    let params = params_from_named(model.layers, model.d, named)?;
    if dictionary.emb_dim() != params.emb_dim() {
        return Err(Error::Consistency(format!(
            "dictionary width {} does not match model width {}",
            dictionary.emb_dim(),
            params.emb_dim()
        )));
    }
    if params.layout() != model.layout() {
        return Err(Error::Consistency("parameter layout disagrees with the stored config".into()));
    }
    Ok(Checkpoint {
        model,
        train,
        params,
        alignment,
        dictionary,
        epoch: cfg.get("epoch")?,
        loss_history,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    fsio::atomic_write(path, &encode_checkpoint(c)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fsio::read(path)?)
}
