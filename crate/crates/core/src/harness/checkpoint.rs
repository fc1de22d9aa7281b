//! Versioned text checkpoints.
//!
//! ```text
//! abn-checkpoint 1
//! config 29
//! <29 lines of configuration text>
//! tensors 42
//! tensor layer0.norm.gamma 16
//! <16 values>
//! ...
//! end
//! ```
//!
//! Values are written in scientific notation with enough significant digits
//! to read back bit-identically. Parameters appear in the model's visiting
//! order followed by each layer's running statistics.

use std::fmt::Write as _;
use std::path::Path;

use crate::abn::Variant;
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &str = "abn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model with the configuration it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
}

fn running_names(model_layers: usize) -> Vec<String> {
    (0..model_layers)
        .flat_map(|l| [format!("layer{l}.running.mean"), format!("layer{l}.running.var")])
        .collect()
}

fn tensors_of<T>(model: &Model<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out = model.params.named();
    let stats = model.running.iter().flat_map(|r| [&r.mean, &r.var]);
    out.extend(running_names(model.running.len()).into_iter().zip(stats));
    out
}

fn tensors_of_mut<T>(model: &mut Model<T>) -> Vec<(String, &mut Tensor<T>)> {
    let names = running_names(model.running.len());
    let mut out = model.params.named_mut();
    let stats = model.running.iter_mut().flat_map(|r| [&mut r.mean, &mut r.var]);
    out.extend(names.into_iter().zip(stats));
    out
}

/// Render a checkpoint. The configuration's model section is taken from
/// the model itself.
pub fn checkpoint_to_text<T: Scalar>(config: &TrainConfig, model: &Model<T>) -> Result<String> {
    let config = TrainConfig {
        model: model.config.clone(),
        ..config.clone()
    };
    let cfg_text = config.to_text()?;
    let tensors = tensors_of(model);
    let mut s = String::new();
    let digits = T::SIGNIFICANT_DIGITS - 1;
    writeln!(s, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(s, "config {}", cfg_text.lines().count()).unwrap();
    s.push_str(&cfg_text);
    writeln!(s, "tensors {}", tensors.len()).unwrap();
    for (name, t) in tensors {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(s, "tensor {name} {}", dims.join("x")).unwrap();
        let values: Vec<String> = t.data().iter().map(|v| format!("{v:.digits$e}")).collect();
        writeln!(s, "{}", values.join(" ")).unwrap();
    }
    s.push_str("end\n");
    Ok(s)
}

pub fn checkpoint_save<T: Scalar>(config: &TrainConfig, model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_text(config, model)?)?;
    Ok(())
}

/// Parse a checkpoint. With `expect` set, the stored variant must match.
pub fn checkpoint_from_text<T: Scalar>(text: &str, expect: Option<Variant>) -> Result<Checkpoint<T>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(Error::Checkpoint(format!(
                "format version `{v}` is not supported (expected {FORMAT_VERSION})"
            )))
        }
        _ => {
            return Err(Error::Checkpoint(format!(
                "missing `{MAGIC} {FORMAT_VERSION}` header; found `{header}`"
            )))
        }
    }
    let n_cfg = counted(lines.next(), "config")?;
    let mut cfg_text = String::new();
    for _ in 0..n_cfg {
        let line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("truncated inside the configuration block".into()))?;
        cfg_text.push_str(line);
        cfg_text.push('\n');
    }
    let config = TrainConfig::parse(&cfg_text)?;
    let stored = config
        .variant()
        .ok_or_else(|| Error::Checkpoint("mixed per-layer variants".into()))?;
    if let Some(want) = expect {
        if want != stored {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with variant `{stored}`, but `{want}` was requested; \
                 the parameter sets are incompatible"
            )));
        }
    }
    let mut model = Model::<T>::new(config.model.clone(), 0)?;
    let n_tensors = counted(lines.next(), "tensors")?;
    let slots = tensors_of_mut(&mut model);
    if n_tensors != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{n_tensors} tensors stored, the configured model has {}",
            slots.len()
        )));
    }
    for (name, slot) in slots {
        let param_err = |msg: String| Error::CheckpointParam {
            param: name.clone(),
            msg,
        };
        let head = lines.next().ok_or_else(|| param_err("file ends before this parameter".into()))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let [kw, stored_name, dims] = fields[..] else {
            return Err(param_err(format!("malformed record header `{head}`")));
        };
        if kw != "tensor" || stored_name != name {
            return Err(param_err(format!("expected this parameter, found `{head}`")));
        }
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| param_err(format!("bad shape `{dims}`"))))
            .collect::<Result<_>>()?;
        if shape != slot.shape() {
            return Err(param_err(format!(
                "stored shape {shape:?} does not match the configured {:?}",
                slot.shape()
            )));
        }
        let body = lines.next().ok_or_else(|| param_err("values are missing (truncated file)".into()))?;
        let values: Vec<T> = body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| param_err(format!("unparsable value `{v}`"))))
            .collect::<Result<_>>()?;
        if values.len() != slot.numel() {
            return Err(param_err(format!(
                "{} values stored, {} expected (truncated file?)",
                values.len(),
                slot.numel()
            )));
        }
        slot.data_mut().copy_from_slice(&values);
    }
    if lines.next().map(str::trim) != Some("end") {
        return Err(Error::Checkpoint("missing `end` marker (truncated file)".into()));
    }
    Ok(Checkpoint { config, model })
}

pub fn checkpoint_load<T: Scalar>(path: &Path, expect: Option<Variant>) -> Result<Checkpoint<T>> {
    checkpoint_from_text(&std::fs::read_to_string(path)?, expect)
}

fn counted(line: Option<&str>, keyword: &str) -> Result<usize> {
    line.and_then(|l| l.strip_prefix(keyword))
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("expected `{keyword} <count>` line")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model = ModelConfig {
            hidden: 5,
            ..cfg.model
        };
        cfg.with_variant(Variant::AbnFrame)
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let cfg = small();
        let mut model = Model::<f64>::new(cfg.model.clone(), 5).unwrap();
        model.running[0].mean.data_mut()[0] = std::f64::consts::PI;
        let text = checkpoint_to_text(&cfg, &model).unwrap();
        let back = checkpoint_from_text::<f64>(&text, None).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn wrong_header_or_version() {
        let text = checkpoint_to_text(&small(), &Model::<f64>::new(small().model, 1).unwrap()).unwrap();
        let v2 = text.replacen("abn-checkpoint 1", "abn-checkpoint 2", 1);
        let err = checkpoint_from_text::<f64>(&v2, None).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        assert!(checkpoint_from_text::<f64>("garbage\n", None).is_err());
    }

    #[test]
    fn variant_mismatch_is_explicit() {
        let text = checkpoint_to_text(&small(), &Model::<f64>::new(small().model, 1).unwrap()).unwrap();
        let err = checkpoint_from_text::<f64>(&text, Some(Variant::Bn)).unwrap_err().to_string();
        assert!(err.contains("abn-f") && err.contains("bn"), "{err}");
        assert!(checkpoint_from_text::<f64>(&text, Some(Variant::AbnFrame)).is_ok());
    }

    #[test]
    fn truncation_names_parameter() {
        let text = checkpoint_to_text(&small(), &Model::<f64>::new(small().model, 1).unwrap()).unwrap();
        let cut: String = text.lines().take(40).map(|l| format!("{l}\n")).collect();
        match checkpoint_from_text::<f64>(&cut, None) {
            Err(Error::CheckpointParam { param, .. }) => assert!(param.starts_with("layer")),
            other => panic!("{other:?}"),
        }
    }
}
