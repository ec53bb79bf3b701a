//! JSON model files.
//!
//! Floats are written in their shortest round-trip decimal form, so a saved
//! model reloads to bit-identical parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FitMetadata, GPDFlowModel};
use crate::error::{Error, Result};
use crate::mgpd::{MarginalParams, QuadratureConfig};
use crate::numerics::{Matrix, Mlp};
use crate::realnvp::{CouplingLayer, FlowNetwork};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetFile {
    /// One row-major array per layer, shaped `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    zeta: NetFile,
    upsilon: NetFile,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    masks: Vec<Vec<u8>>,
    hidden: Vec<usize>,
    layers: Vec<LayerFile>,
    sigma: Vec<f64>,
    gamma: Vec<f64>,
    threshold: Option<Vec<f64>>,
    quadrature: QuadratureConfig,
    seed: Option<u64>,
    #[serde(default)]
    epochs_run: usize,
    #[serde(default)]
    final_loss: Option<f64>,
}

fn net_file(net: &Mlp) -> NetFile {
    NetFile {
        weights: net.weights().iter().map(|w| w.as_slice().to_vec()).collect(),
        biases: net.biases().iter().map(|b| b.as_slice().to_vec()).collect(),
    }
}

fn format_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        message: message.into(),
    }
}

fn net_from_file(f: NetFile, d: usize, hidden: &[usize], path: &str) -> Result<Mlp> {
    let mut dims = vec![d];
    dims.extend_from_slice(hidden);
    dims.push(d);
    let layers = dims.len() - 1;
    if f.weights.len() != layers {
        return Err(format_err(
            format!("{path}.weights"),
            format!("expected {layers} arrays, found {}", f.weights.len()),
        ));
    }
    if f.biases.len() != layers {
        return Err(format_err(
            format!("{path}.biases"),
            format!("expected {layers} arrays, found {}", f.biases.len()),
        ));
    }
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for (l, (w, b)) in f.weights.into_iter().zip(f.biases).enumerate() {
        let (inp, out) = (dims[l], dims[l + 1]);
        weights.push(
            Matrix::from_vec(out, inp, w)
                .map_err(|e| format_err(format!("{path}.weights[{l}]"), e.to_string()))?,
        );
        biases.push(
            Matrix::from_vec(1, out, b)
                .map_err(|e| format_err(format!("{path}.biases[{l}]"), e.to_string()))?,
        );
    }
    Mlp::from_parts(d, hidden.to_vec(), d, weights, biases)
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn to_json_string(model: &GPDFlowModel) -> Result<String> {
    let flow = model.flow();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        d: model.dim(),
        k: flow.num_layers(),
        masks: flow.layers().iter().map(|l| l.mask().to_vec()).collect(),
        hidden: flow.hidden_dims().to_vec(),
        layers: flow
            .layers()
            .iter()
            .map(|l| LayerFile {
                zeta: net_file(l.zeta()),
                upsilon: net_file(l.upsilon()),
            })
            .collect(),
        sigma: model.margins().sigma().to_vec(),
        gamma: model.margins().gamma().to_vec(),
        threshold: model.threshold().map(<[f64]>::to_vec),
        quadrature: model.quadrature().clone(),
        seed: model.metadata().seed,
        epochs_run: model.metadata().epochs_run,
        final_loss: model.metadata().final_loss,
    };
    let mut s = serde_json::to_string_pretty(&file).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json_str(s: &str) -> Result<GPDFlowModel> {
    let value: serde_json::Value =
        serde_json::from_str(s).map_err(|e| format_err("", e.to_string()))?;
    match value.get("format_version").map(|v| v.as_u64()) {
        None => return Err(format_err("format_version", "missing field")),
        Some(None) => return Err(format_err("format_version", "expected an unsigned integer")),
        Some(Some(v)) if v != u64::from(FORMAT_VERSION) => {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            })
        }
        Some(Some(_)) => {}
    }
    let mut de = serde_json::Deserializer::from_str(s);
    let file: ModelFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        format_err(path, e.into_inner().to_string())
    })?;

    let d = file.d;
    if d == 0 {
        return Err(format_err("d", "dimension must be at least 1"));
    }
    for (name, v) in [("sigma", &file.sigma), ("gamma", &file.gamma)] {
        if v.len() != d {
            return Err(format_err(name, format!("expected {d} entries, found {}", v.len())));
        }
    }
    if let Some(j) = file.sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(format_err(
            format!("sigma[{j}]"),
            format!("scale must be positive, found {}", file.sigma[j]),
        ));
    }
    if let Some(j) = file.gamma.iter().position(|g| !g.is_finite()) {
        return Err(format_err(format!("gamma[{j}]"), "shape must be finite"));
    }
    if file.masks.len() != file.k || file.layers.len() != file.k {
        return Err(format_err(
            "layers",
            format!(
                "K = {} but {} masks and {} layers are present",
                file.k,
                file.masks.len(),
                file.layers.len()
            ),
        ));
    }
    if let Some(t) = &file.threshold {
        if t.len() != d || t.iter().any(|v| !v.is_finite()) {
            return Err(format_err("threshold", format!("expected {d} finite entries")));
        }
    }
    file.quadrature
        .validate()
        .map_err(|e| format_err("quadrature", e.to_string()))?;

    let mut layers = Vec::with_capacity(file.k);
    for (k, (mask, lf)) in file.masks.into_iter().zip(file.layers).enumerate() {
        let zeta = net_from_file(lf.zeta, d, &file.hidden, &format!("layers[{k}].zeta"))?;
        let upsilon = net_from_file(lf.upsilon, d, &file.hidden, &format!("layers[{k}].upsilon"))?;
        layers.push(
            CouplingLayer::new(mask, zeta, upsilon)
                .map_err(|e| format_err(format!("masks[{k}]"), e.to_string()))?,
        );
    }
    let flow = FlowNetwork::from_layers(d, layers).map_err(|e| format_err("layers", e.to_string()))?;
    let margins = MarginalParams::new(file.sigma, file.gamma)?;
    let mut model = GPDFlowModel::new(margins, flow, file.quadrature)?.with_metadata(FitMetadata {
        epochs_run: file.epochs_run,
        final_loss: file.final_loss,
        seed: file.seed,
    });
    if let Some(t) = file.threshold {
        model = model.with_threshold(t)?;
    }
    Ok(model)
}

pub fn save(model: &GPDFlowModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json_string(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<GPDFlowModel> {
    from_json_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> GPDFlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let flow = FlowNetwork::random(2, 3, &[5], 0.4, &mut rng).unwrap();
        let m = MarginalParams::new(vec![0.7, 1.3], vec![0.12, -0.08]).unwrap();
        GPDFlowModel::new(m, flow, QuadratureConfig::default())
            .unwrap()
            .with_threshold(vec![1.5, -0.25])
            .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let s = to_json_string(&m).unwrap();
        let back = from_json_str(&s).unwrap();
        assert_eq!(back, m);
        let x = [0.4, 0.9];
        assert_eq!(
            back.log_density(&x).unwrap().to_bits(),
            m.log_density(&x).unwrap().to_bits()
        );
        assert_eq!(to_json_string(&back).unwrap(), s);
    }

    #[test]
    fn nonpositive_sigma_is_rejected_with_path() {
        let s = to_json_string(&model()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["sigma"][1] = serde_json::json!(-0.5);
        let err = from_json_str(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Format { ref path, .. } if path == "sigma[1]"), "{err}");
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let s = to_json_string(&model()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["format_version"] = serde_json::json!(7);
        assert_eq!(
            from_json_str(&v.to_string()).unwrap_err(),
            Error::UnsupportedVersion {
                found: 7,
                expected: FORMAT_VERSION
            }
        );
    }

    #[test]
    fn malformed_field_reports_path() {
        let s = to_json_string(&model()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["layers"][1]["zeta"]["weights"][0][2] = serde_json::json!("oops");
        match from_json_str(&v.to_string()).unwrap_err() {
            Error::Format { path, .. } => assert!(path.starts_with("layers[1].zeta.weights[0]"), "{path}"),
            e => panic!("unexpected {e}"),
        }
    }
}
