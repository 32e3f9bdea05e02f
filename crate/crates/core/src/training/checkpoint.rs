//! Self-describing checkpoints: a container file whose header carries the
//! full run config (hashed), step, metric snapshot, and standardizer, and
//! whose payloads carry every parameter and optimizer moment by name.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use super::{MetricsSnapshot, RunConfig, TrainState};
use crate::container::{read_container, write_container, ContainerHeader, DataContainer};
use crate::error::{Error, Result};
use crate::network::VarRegistry;
use crate::training::data::Standardizer;

pub fn config_hash(run: &RunConfig) -> Result<String> {
    let json = serde_json::to_string(run)?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn tensor_to_arrayd(t: &Tensor) -> Result<ArrayD<f32>> {
    let shape = t.dims().to_vec();
    let data: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    ArrayD::from_shape_vec(shape, data).map_err(|e| Error::shape(e.to_string()))
}

fn push_registry(c: &mut DataContainer, prefix: &str, reg: &VarRegistry) -> Result<()> {
    for (name, var) in reg.named_vars() {
        c.arrays.insert(format!("{prefix}.{name}"), tensor_to_arrayd(var.as_tensor())?);
    }
    Ok(())
}

fn push_moments(
    c: &mut DataContainer,
    prefix: &str,
    moments: &BTreeMap<String, Tensor>,
) -> Result<()> {
    for (name, t) in moments {
        c.arrays.insert(format!("{prefix}.{name}"), tensor_to_arrayd(t)?);
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let mut header = ContainerHeader::new(vec![]);
    header.kind = Some("checkpoint".into());
    header.attrs.insert("config".into(), serde_json::to_value(&state.run)?);
    header.attrs.insert("config_hash".into(), serde_json::json!(config_hash(&state.run)?));
    header.attrs.insert("step".into(), serde_json::json!(state.step));
    header.attrs.insert("metrics".into(), serde_json::to_value(&state.last_metrics)?);
    header.attrs.insert("standardizer".into(), serde_json::to_value(&state.standardizer)?);
    header.attrs.insert("model_name".into(), serde_json::json!(state.model_name()));
    let (gt, gm, gv) = state.adam_g.state();
    let (ct, cm, cv) = state.adam_c.state();
    header.attrs.insert("adam_g_t".into(), serde_json::json!(gt));
    header.attrs.insert("adam_c_t".into(), serde_json::json!(ct));

    let mut c = DataContainer::new(header);
    push_registry(&mut c, "g", &state.g_reg)?;
    push_registry(&mut c, "c", &state.c_reg)?;
    push_moments(&mut c, "mg", gm)?;
    push_moments(&mut c, "vg", gv)?;
    push_moments(&mut c, "mc", cm)?;
    push_moments(&mut c, "vc", cv)?;
    write_container(path, &c)
}

fn restore_registry(c: &DataContainer, prefix: &str, reg: &VarRegistry) -> Result<()> {
    for (name, _) in reg.named_vars() {
        let key = format!("{prefix}.{name}");
        let arr = c.array(&key)?;
        let flat: Vec<f32> = arr.iter().copied().collect();
        reg.set_from_f32(name, &flat)?;
    }
    Ok(())
}

fn restore_moments(
    c: &DataContainer,
    prefix: &str,
    device: &Device,
) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    let want = format!("{prefix}.");
    for (key, arr) in &c.arrays {
        if let Some(name) = key.strip_prefix(&want) {
            let data: Vec<f32> = arr.iter().copied().collect();
            let t = Tensor::from_vec(data, arr.shape().to_vec(), device)?;
            out.insert(name.to_string(), t);
        }
    }
    Ok(out)
}

pub fn load_checkpoint(path: impl AsRef<Path>, device: &Device) -> Result<TrainState> {
    let c = read_container(path)?;
    let attrs = &c.header.attrs;
    let run: RunConfig = serde_json::from_value(
        attrs.get("config").ok_or_else(|| Error::Corrupt("checkpoint lacks config".into()))?.clone(),
    )?;
    let stored_hash = c
        .header
        .attr_str("config_hash")
        .ok_or_else(|| Error::Corrupt("checkpoint lacks config_hash".into()))?
        .to_string();
    let recomputed = config_hash(&run)?;
    if stored_hash != recomputed {
        return Err(Error::Corrupt(format!(
            "config hash mismatch: stored {stored_hash}, recomputed {recomputed}"
        )));
    }
    let standardizer: Standardizer = serde_json::from_value(
        attrs
            .get("standardizer")
            .ok_or_else(|| Error::Corrupt("checkpoint lacks standardizer".into()))?
            .clone(),
    )?;
    let metrics: MetricsSnapshot = match attrs.get("metrics") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => MetricsSnapshot::default(),
    };
    let step = c.header.attr_u64("step").unwrap_or(0) as usize;

    let mut state = TrainState::build(run, standardizer, device)?;
    restore_registry(&c, "g", &state.g_reg)?;
    restore_registry(&c, "c", &state.c_reg)?;
    let gm = restore_moments(&c, "mg", device)?;
    let gv = restore_moments(&c, "vg", device)?;
    let cm = restore_moments(&c, "mc", device)?;
    let cv = restore_moments(&c, "vc", device)?;
    state.adam_g.restore(c.header.attr_u64("adam_g_t").unwrap_or(0) as usize, gm, gv);
    state.adam_c.restore(c.header.attr_u64("adam_c_t").unwrap_or(0) as usize, cm, cv);
    state.step = step;
    state.last_metrics = metrics;
    Ok(state)
}

/// Lines describing where two run configs differ (for refusal messages).
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Result<Vec<String>> {
    let va = serde_json::to_value(a)?;
    let vb = serde_json::to_value(b)?;
    let mut out = Vec::new();
    if let (serde_json::Value::Object(ma), serde_json::Value::Object(mb)) = (&va, &vb) {
        for key in ma.keys() {
            let (x, y) = (&ma[key], &mb[key]);
            if x != y {
                out.push(format!("{key}: {x} != {y}"));
            }
        }
    }
    Ok(out)
}
