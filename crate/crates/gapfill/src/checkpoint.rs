//! JSON checkpoints. Every real number is stored as a decimal string that
//! parses back to the identical `f64`.

use std::io::{Read, Write};

use gapfill_core::data::NormParams;
use gapfill_core::mrnn::{MrnnDims, MrnnModel, FORMAT_VERSION};
use gapfill_core::nncore::{ParamBlock, ParamStore};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockJson {
    name: String,
    shape: Vec<usize>,
    values: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreJson {
    format_version: u32,
    blocks: Vec<BlockJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormJson {
    min: String,
    max: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointJson {
    format_version: u32,
    #[serde(rename = "D")]
    streams: usize,
    hidden: usize,
    layers: usize,
    delta_scale: String,
    norm_params: Vec<NormJson>,
    params: StoreJson,
}

/// A trained model with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MrnnModel,
    pub norm_params: Vec<NormParams>,
}

fn number(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Schema(format!("`{s}` is not a finite decimal number")))
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Schema(format!("format_version {found}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

fn store_json(store: &ParamStore) -> StoreJson {
    StoreJson {
        format_version: FORMAT_VERSION,
        blocks: store
            .blocks()
            .iter()
            .map(|b| BlockJson {
                name: b.name.clone(),
                shape: b.shape.clone(),
                values: b.values.iter().map(f64::to_string).collect(),
            })
            .collect(),
    }
}

fn store_from_json(json: StoreJson) -> Result<ParamStore> {
    check_version(json.format_version)?;
    let blocks = json
        .blocks
        .into_iter()
        .map(|b| {
            let values = b.values.iter().map(|v| number(v)).collect::<Result<Vec<_>>>()?;
            Ok(ParamBlock { name: b.name, shape: b.shape, values })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamStore::new(blocks)?)
}

fn to_writer<W: Write, T: Serialize>(value: &T, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, value).map_err(|e| Error::Schema(format!("JSON encoding failed: {e}")))?;
    sink.write_all(b"\n").map_err(|e| Error::Schema(format!("write failed: {e}")))
}

fn from_reader<R: Read, T: for<'de> Deserialize<'de>>(source: R) -> Result<T> {
    serde_json::from_reader(source).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))
}

pub fn write_params<W: Write>(store: &ParamStore, sink: W) -> Result<()> {
    to_writer(&store_json(store), sink)
}

pub fn read_params<R: Read>(source: R) -> Result<ParamStore> {
    store_from_json(from_reader(source)?)
}

pub fn write_checkpoint<W: Write>(checkpoint: &Checkpoint, sink: W) -> Result<()> {
    let model = &checkpoint.model;
    let dims = model.dims();
    let json = CheckpointJson {
        format_version: FORMAT_VERSION,
        streams: dims.streams,
        hidden: dims.hidden,
        layers: dims.layers,
        delta_scale: model.delta_scale().to_string(),
        norm_params: checkpoint
            .norm_params
            .iter()
            .map(|p| NormJson { min: p.min.to_string(), max: p.max.to_string() })
            .collect(),
        params: store_json(model.params()),
    };
    to_writer(&json, sink)
}

pub fn read_checkpoint<R: Read>(source: R) -> Result<Checkpoint> {
    let json: CheckpointJson = from_reader(source)?;
    check_version(json.format_version)?;
    let dims = MrnnDims { streams: json.streams, hidden: json.hidden, layers: json.layers };
    let norm_params = json
        .norm_params
        .iter()
        .map(|p| Ok(NormParams { min: number(&p.min)?, max: number(&p.max)? }))
        .collect::<Result<Vec<_>>>()?;
    if norm_params.len() != dims.streams || norm_params.iter().any(|p| p.max <= p.min) {
        return Err(Error::Schema(format!("need {} increasing (min, max) pairs", dims.streams)));
    }
    let model = MrnnModel::from_params(dims, number(&json.delta_scale)?, store_from_json(json.params)?)?;
    Ok(Checkpoint { model, norm_params })
}
