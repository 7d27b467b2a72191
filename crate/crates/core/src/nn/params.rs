//! Named parameter tensors, Adam, and the versioned parameter file.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Family, ModelSpec};
use super::{NnError, Result};
use crate::matrix::Matrix;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Glorot,
    Zeros,
}

/// Every parameter a spec owns: name, shape, initializer.
pub fn param_layout(spec: &ModelSpec) -> Vec<(String, (usize, usize), Init)> {
    let mut out = Vec::new();
    let mut push = |name: String, r: usize, c: usize, init: Init| out.push((name, (r, c), init));
    let l = spec.num_layers;
    let h = spec.hidden_dim;
    match spec.family {
        Family::Gcn | Family::Sage => {
            let mut d = spec.in_dim;
            for i in 0..l {
                let o = if i + 1 == l { spec.out_dim } else { h };
                if spec.family == Family::Gcn {
                    push(format!("conv{i}.weight"), d, o, Init::Glorot);
                } else {
                    push(format!("conv{i}.w_self"), d, o, Init::Glorot);
                    push(format!("conv{i}.w_neigh"), d, o, Init::Glorot);
                }
                push(format!("conv{i}.bias"), 1, o, Init::Zeros);
                d = o;
            }
        }
        Family::Gat => {
            let mut d = spec.in_dim;
            for i in 0..l {
                let last = i + 1 == l;
                let (heads, f) = if last { (1, spec.out_dim) } else { (spec.heads, h) };
                push(format!("conv{i}.weight"), d, heads * f, Init::Glorot);
                for k in 0..heads {
                    push(format!("conv{i}.att_src{k}"), f, 1, Init::Glorot);
                    push(format!("conv{i}.att_dst{k}"), f, 1, Init::Glorot);
                }
                push(format!("conv{i}.bias"), 1, heads * f, Init::Zeros);
                d = heads * f;
            }
        }
        Family::Gin => {
            let mut d = spec.in_dim;
            for i in 0..l {
                push(format!("conv{i}.lin1.weight"), d, h, Init::Glorot);
                push(format!("conv{i}.lin1.bias"), 1, h, Init::Zeros);
                push(format!("conv{i}.lin2.weight"), h, h, Init::Glorot);
                push(format!("conv{i}.lin2.bias"), 1, h, Init::Zeros);
                if spec.eps_learnable {
                    push(format!("conv{i}.eps"), 1, 1, Init::Zeros);
                }
                d = h;
            }
            push("head.weight".into(), spec.in_dim + l * h, spec.out_dim, Init::Glorot);
            push("head.bias".into(), 1, spec.out_dim, Init::Zeros);
        }
        Family::TopkPool => {
            let mut d = spec.in_dim;
            for i in 0..l {
                push(format!("conv{i}.weight"), d, h, Init::Glorot);
                push(format!("conv{i}.bias"), 1, h, Init::Zeros);
                push(format!("pool{i}.p"), 1, h, Init::Glorot);
                d = h;
            }
            push("head.lin1.weight".into(), 2 * h, h, Init::Glorot);
            push("head.lin1.bias".into(), 1, h, Init::Zeros);
            push("head.lin2.weight".into(), h, spec.out_dim, Init::Glorot);
            push("head.lin2.bias".into(), 1, spec.out_dim, Init::Zeros);
        }
    }
    out
}

/// Learned tensors plus Adam moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Matrix>,
    pub adam_m: BTreeMap<String, Matrix>,
    pub adam_v: BTreeMap<String, Matrix>,
    pub step: u64,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, zero moments.
    pub fn init<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, (r, c), init) in param_layout(spec) {
            let mut m = Matrix::zeros(r, c);
            if init == Init::Glorot {
                let limit = (6.0 / (r + c) as f64).sqrt();
                m.data.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
            }
            tensors.insert(name, m);
        }
        Self::from_tensors(tensors)
    }

    pub fn from_tensors(tensors: BTreeMap<String, Matrix>) -> Self {
        let zeros: BTreeMap<String, Matrix> = tensors.iter().map(|(k, m)| (k.clone(), Matrix::zeros(m.rows, m.cols))).collect();
        Self { adam_m: zeros.clone(), adam_v: zeros, tensors, step: 0 }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.data.len()).sum()
    }

    /// Checks names and shapes against the layout of `spec`.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let layout = param_layout(spec);
        if layout.len() != self.tensors.len() {
            return Err(NnError::ParamShape { name: "*".into(), expected: (layout.len(), 0), got: (self.tensors.len(), 0) });
        }
        for (name, shape, _) in layout {
            let m = self.get(&name)?;
            if (m.rows, m.cols) != shape {
                return Err(NnError::ParamShape { name, expected: shape, got: (m.rows, m.cols) });
            }
            for buf in [&self.adam_m, &self.adam_v] {
                let b = buf.get(&name).ok_or_else(|| NnError::MissingParam(format!("{name} (moment)")))?;
                if (b.rows, b.cols) != shape {
                    return Err(NnError::ParamShape { name: name.clone(), expected: shape, got: (b.rows, b.cols) });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update. Weight decay is an L2 term added to the gradient.
/// Parameters without a gradient entry are left untouched.
pub fn adam_step(params: &mut ModelParams, grads: &BTreeMap<String, Matrix>, cfg: &AdamConfig) {
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let (Some(w), Some(m), Some(v)) = (params.tensors.get_mut(name), params.adam_m.get_mut(name), params.adam_v.get_mut(name))
        else {
            continue;
        };
        for i in 0..w.data.len() {
            let gi = g.data[i] + cfg.weight_decay * w.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m.data[i] / bc1;
            let vh = v.data[i] / bc2;
            w.data[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    spec_digest: String,
    tensors: BTreeMap<String, TensorRecord>,
    adam_m: BTreeMap<String, TensorRecord>,
    adam_v: BTreeMap<String, TensorRecord>,
    step: u64,
}

fn records(map: &BTreeMap<String, Matrix>) -> BTreeMap<String, TensorRecord> {
    map.iter().map(|(k, m)| (k.clone(), TensorRecord { shape: [m.rows, m.cols], data: m.data.clone() })).collect()
}

fn matrices(map: BTreeMap<String, TensorRecord>) -> Result<BTreeMap<String, Matrix>> {
    map.into_iter()
        .map(|(k, r)| {
            if r.data.len() != r.shape[0] * r.shape[1] {
                return Err(NnError::Format(format!("tensor `{k}` has {} values for shape {:?}", r.data.len(), r.shape)));
            }
            Ok((k, Matrix::from_vec(r.shape[0], r.shape[1], r.data)))
        })
        .collect()
}

pub fn params_to_json(params: &ModelParams, spec: &ModelSpec) -> Result<String> {
    let file = ParamsFile {
        version: PARAMS_FORMAT_VERSION,
        spec_digest: spec.digest(),
        tensors: records(&params.tensors),
        adam_m: records(&params.adam_m),
        adam_v: records(&params.adam_v),
        step: params.step,
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses a parameter file and, when `spec` is given, checks every shape against it.
pub fn params_from_json(text: &str, spec: Option<&ModelSpec>) -> Result<ModelParams> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| NnError::Format("missing `version` header".into()))?;
    if version != u64::from(PARAMS_FORMAT_VERSION) {
        return Err(NnError::Version { expected: PARAMS_FORMAT_VERSION, got: version });
    }
    let file: ParamsFile = serde_json::from_value(raw)?;
    let params =
        ModelParams { tensors: matrices(file.tensors)?, adam_m: matrices(file.adam_m)?, adam_v: matrices(file.adam_v)?, step: file.step };
    if let Some(spec) = spec {
        params.check_against(spec)?;
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams, spec: &ModelSpec, path: &Path) -> Result<()> {
    let text = params_to_json(params, spec)?;
    std::fs::write(path, text).map_err(|e| NnError::Io { path: path.display().to_string(), source: e })
}

pub fn load_params(path: &Path, spec: Option<&ModelSpec>) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Io { path: path.display().to_string(), source: e })?;
    params_from_json(&text, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let spec = ModelSpec::default_for(Family::Gcn, 4, 2);
        let mut p = ModelParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        let before = p.tensors.clone();
        let grads: BTreeMap<String, Matrix> = p.tensors.iter().map(|(k, m)| (k.clone(), Matrix::zeros(m.rows, m.cols))).collect();
        adam_step(&mut p, &grads, &AdamConfig::default());
        assert_eq!(p.tensors, before);
    }

    #[test]
    fn scalar_first_and_second_step_by_hand() {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Matrix::from_vec(1, 1, vec![1.0]));
        let mut p = ModelParams::from_tensors(tensors);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let g = |v: f64| BTreeMap::from([("w".to_string(), Matrix::from_vec(1, 1, vec![v]))]);
        adam_step(&mut p, &g(0.2), &cfg);
        // g' = 0.2 + 0.5·1 = 0.7; m̂ = 0.7, v̂ = 0.49
        let w1 = 1.0 - 0.1 * 0.7 / (0.7 + 1e-8);
        assert!((p.tensors["w"].data[0] - w1).abs() < 1e-15);
        adam_step(&mut p, &g(-0.1), &cfg);
        let g2 = -0.1 + 0.5 * w1;
        let m = 0.9 * 0.1 * 0.7 + 0.1 * g2;
        let v = 0.999 * 0.001 * 0.49 + 0.001 * g2 * g2;
        let w2 = w1 - 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p.tensors["w"].data[0] - w2).abs() < 1e-14);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ModelSpec::default_for(Family::Gat, 5, 3);
        let mut p = ModelParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let grads = p.tensors.clone();
        adam_step(&mut p, &grads, &AdamConfig::default());
        let back = params_from_json(&params_to_json(&p, &spec).unwrap(), Some(&spec)).unwrap();
        assert_eq!(back, p);
        for (a, b) in p.tensors.values().zip(back.tensors.values()) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn header_and_shape_errors() {
        let spec = ModelSpec::default_for(Family::Gcn, 5, 3);
        let p = ModelParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let text = params_to_json(&p, &spec).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(params_from_json(&bumped, None), Err(NnError::Version { got: 99, .. })));
        assert!(params_from_json("{\"tensors\":{}}", None).is_err());
        let other = ModelSpec { hidden_dim: 32, ..spec };
        assert!(matches!(params_from_json(&text, Some(&other)), Err(NnError::ParamShape { .. })));
    }

    #[test]
    fn file_round_trip() {
        let spec = ModelSpec::default_for(Family::Gin, 7, 2);
        let p = ModelParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_params(&p, &spec, &path).unwrap();
        assert_eq!(load_params(&path, Some(&spec)).unwrap(), p);
    }
}
