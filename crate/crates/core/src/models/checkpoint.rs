//! Model snapshots: both parameter stores plus the forward model's
//! batch-norm running statistics in one JSON document. Floats are written
//! with 17 significant digits, so a load reproduces the saved models bit
//! for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForwardModel, InverseModel, ModelConfig};
use crate::corpus::json_line;
use crate::numerics::{ParamStore, Tensor};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BnEntry {
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    format_version: u32,
    pub epoch: usize,
    pub config: ModelConfig,
    f_entries: Vec<TensorEntry>,
    f_bn: Vec<BnEntry>,
    g_entries: Vec<TensorEntry>,
}

fn store_entries(store: &ParamStore) -> Vec<TensorEntry> {
    store
        .iter()
        .map(|(name, p)| TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
        })
        .collect()
}

fn entries_store(entries: &[TensorEntry]) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for e in entries {
        let t = Tensor::new(e.shape.clone(), e.data.clone()).map_err(|err| Error::Parse {
            line: 1,
            msg: format!("parameter {}: {err}", e.name),
        })?;
        store.insert(&e.name, t)?;
    }
    Ok(store)
}

/// Both stores must match their model's layout name for name and shape for
/// shape; anything else means the file does not belong to this config.
fn check_layout(loaded: &ParamStore, reference: &ParamStore, which: &str) -> Result<()> {
    let mut got = loaded.iter();
    let mut want = reference.iter();
    loop {
        match (got.next(), want.next()) {
            (None, None) => return Ok(()),
            (Some((gn, gp)), Some((wn, wp)))
                if gn == wn && gp.value.shape() == wp.value.shape() => {}
            (got, want) => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!(
                        "{which} layout mismatch: file has {:?}, config wants {:?}",
                        got.map(|(n, p)| (n.to_string(), p.value.shape().to_vec())),
                        want.map(|(n, p)| (n.to_string(), p.value.shape().to_vec())),
                    ),
                });
            }
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    f: &ForwardModel,
    g: &InverseModel,
    epoch: usize,
) -> Result<()> {
    if f.config != g.config {
        return Err(Error::Contract(
            "forward and inverse models come from different configs".into(),
        ));
    }
    let doc = Checkpoint {
        format_version: FORMAT_VERSION,
        epoch,
        config: f.config.clone(),
        f_entries: store_entries(&f.params),
        f_bn: f
            .bn
            .iter()
            .map(|s| BnEntry {
                running_mean: s.running_mean.data().to_vec(),
                running_var: s.running_var.data().to_vec(),
                momentum: s.momentum,
                epsilon: s.epsilon,
            })
            .collect(),
        g_entries: store_entries(&g.params),
    };
    let mut text = json_line(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ForwardModel, InverseModel, usize)> {
    let text = fs::read_to_string(path)?;
    let doc: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("checkpoint: {e}"),
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "checkpoint format {} unsupported (expected {FORMAT_VERSION})",
                doc.format_version
            ),
        });
    }
    doc.config.validate()?;
    let mut f = ForwardModel::from_params(doc.config.clone(), entries_store(&doc.f_entries)?);
    let g = InverseModel::from_params(doc.config.clone(), entries_store(&doc.g_entries)?);

    // layout check against a throwaway init of the same config
    let mut probe = crate::rng::RngStream::new(0, "layout");
    check_layout(
        &f.params,
        &ForwardModel::init(&doc.config, &mut probe)?.params,
        "forward model",
    )?;
    check_layout(
        &g.params,
        &InverseModel::init(&doc.config, &mut probe)?.params,
        "inverse model",
    )?;

    if doc.f_bn.len() != f.bn.len() {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "{} batch-norm blocks in file, config wants {}",
                doc.f_bn.len(),
                f.bn.len()
            ),
        });
    }
    for (state, entry) in f.bn.iter_mut().zip(&doc.f_bn) {
        if entry.running_mean.len() != state.dim() || entry.running_var.len() != state.dim() {
            return Err(Error::Parse {
                line: 1,
                msg: "batch-norm statistics have the wrong width".into(),
            });
        }
        state.running_mean = Tensor::new(vec![state.dim()], entry.running_mean.clone())?;
        state.running_var = Tensor::new(vec![state.dim()], entry.running_var.clone())?;
        state.momentum = entry.momentum;
        state.epsilon = entry.epsilon;
    }
    Ok((f, g, doc.epoch))
}
