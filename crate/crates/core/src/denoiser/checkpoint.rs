//! Checkpoint directories: four `.tct` tensors plus a `manifest.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DenoiserConfig, DenoiserParams, OptimizerState, Real};
use crate::data_io::{read_tensor, write_tensor, Tensor, TensorData};
use crate::error::{Error, Result};

/// Element types that can be stored in a `.tct` payload.
pub trait StoredReal: Real {
    const DTYPE: &'static str;
    fn pack(v: &[Self]) -> TensorData;
    fn unpack(d: TensorData) -> Option<Vec<Self>>;
}

impl StoredReal for f32 {
    const DTYPE: &'static str = "f32";

    fn pack(v: &[Self]) -> TensorData {
        TensorData::F32(v.to_vec())
    }

    fn unpack(d: TensorData) -> Option<Vec<Self>> {
        match d {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }
}

impl StoredReal for f64 {
    const DTYPE: &'static str = "f64";

    fn pack(v: &[Self]) -> TensorData {
        TensorData::F64(v.to_vec())
    }

    fn unpack(d: TensorData) -> Option<Vec<Self>> {
        match d {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F = f32> {
    pub config: DenoiserConfig,
    pub weights: DenoiserParams<F>,
    pub optimizer: OptimizerState<F>,
}

const TENSORS: [&str; 4] = ["params", "ema", "adam_m", "adam_v"];

pub fn save_checkpoint<F: StoredReal>(dir: impl AsRef<Path>, ckpt: &Checkpoint<F>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vectors = [&ckpt.weights.params, &ckpt.weights.ema, &ckpt.optimizer.m, &ckpt.optimizer.v];
    for (name, v) in TENSORS.iter().zip(vectors) {
        let t = Tensor::new(vec![v.len()], F::pack(v))?;
        write_tensor(dir.join(format!("{name}.tct")), &t)?;
    }
    let c = &ckpt.config;
    let o = &ckpt.optimizer;
    let mut m = String::new();
    let _ = writeln!(m, "dtype={}", F::DTYPE);
    let _ = writeln!(m, "patch_size={}", c.patch_size);
    let _ = writeln!(m, "num_classes={}", c.num_classes);
    let _ = writeln!(m, "base_width={}", c.base_width);
    let _ = writeln!(m, "depth={}", c.depth);
    let _ = writeln!(m, "time_embed_dim={}", c.time_embed_dim);
    let _ = writeln!(m, "use_attention={}", c.use_attention);
    let _ = writeln!(m, "num_groups={}", c.num_groups);
    let _ = writeln!(m, "ir_replicate_3={}", c.ir_replicate_3);
    let _ = writeln!(m, "adam_step={}", o.step);
    let _ = writeln!(m, "adam_lr={}", o.lr);
    let _ = writeln!(m, "adam_beta1={}", o.beta1);
    let _ = writeln!(m, "adam_beta2={}", o.beta2);
    let _ = writeln!(m, "adam_eps={}", o.eps);
    let path = dir.join("manifest.txt");
    fs::write(&path, m).map_err(|e| Error::io(&path, e))
}

fn field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map.get(key).ok_or_else(|| Error::InvalidConfig(format!("checkpoint manifest lacks {key}")))?;
    raw.parse().map_err(|_| Error::InvalidConfig(format!("checkpoint manifest: bad {key} = {raw:?}")))
}

pub fn load_checkpoint<F: StoredReal>(dir: impl AsRef<Path>) -> Result<Checkpoint<F>> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let map: BTreeMap<String, String> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let dtype: String = field(&map, "dtype")?;
    if dtype != F::DTYPE {
        return Err(Error::ConfigMismatch(format!("checkpoint stores {dtype}, requested {}", F::DTYPE)));
    }
    let config = DenoiserConfig {
        patch_size: field(&map, "patch_size")?,
        num_classes: field(&map, "num_classes")?,
        base_width: field(&map, "base_width")?,
        depth: field(&map, "depth")?,
        time_embed_dim: field(&map, "time_embed_dim")?,
        use_attention: field(&map, "use_attention")?,
        num_groups: field(&map, "num_groups")?,
        ir_replicate_3: field(&map, "ir_replicate_3")?,
    };
    config.validate()?;
    let mut vectors = Vec::with_capacity(4);
    for name in TENSORS {
        let t = read_tensor(dir.join(format!("{name}.tct")))?;
        let code = t.data.dtype_code();
        vectors.push(F::unpack(t.data).ok_or(Error::UnsupportedDtype(code))?);
    }
    let n = vectors[0].len();
    if vectors.iter().any(|v| v.len() != n) {
        return Err(Error::shape("checkpoint tensors differ in length"));
    }
    let mut it = vectors.into_iter();
    let (params, ema, m, v) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    let optimizer = OptimizerState {
        m,
        v,
        step: field(&map, "adam_step")?,
        lr: field(&map, "adam_lr")?,
        beta1: field(&map, "adam_beta1")?,
        beta2: field(&map, "adam_beta2")?,
        eps: field(&map, "adam_eps")?,
    };
    Ok(Checkpoint { config, weights: DenoiserParams { params, ema }, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::build_denoiser;
    use crate::rng::seeded;

    fn sample_ckpt<F: StoredReal>() -> Checkpoint<F> {
        let config = DenoiserConfig { patch_size: 8, num_classes: 3, base_width: 8, depth: 1, time_embed_dim: 8, num_groups: 4, ..Default::default() };
        let d = build_denoiser::<F, _>(&config, &mut seeded(1)).unwrap();
        let n = d.weights().params.len();
        let mut optimizer = OptimizerState::new(n, 1.234e-3);
        optimizer.step = 17;
        optimizer.m = (0..n).map(|i| F::lit(i as f64 * 1e-3 - 0.1)).collect();
        optimizer.v = (0..n).map(|i| F::lit((i as f64).sqrt() * 1e-7)).collect();
        let mut weights = d.weights().clone();
        weights.ema.iter_mut().for_each(|x| *x = *x * F::lit(0.7));
        Checkpoint { config, weights, optimizer }
    }

    fn bits_equal<F: StoredReal>(a: &Checkpoint<F>, b: &Checkpoint<F>) -> bool {
        let pack = |c: &Checkpoint<F>| {
            [&c.weights.params, &c.weights.ema, &c.optimizer.m, &c.optimizer.v]
                .iter()
                .map(|v| Tensor::new(vec![v.len()], F::pack(v)).unwrap().encode())
                .collect::<Vec<_>>()
        };
        pack(a) == pack(b) && a.config == b.config && a.optimizer.step == b.optimizer.step
            && a.optimizer.lr.to_bits() == b.optimizer.lr.to_bits()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c32 = sample_ckpt::<f32>();
        save_checkpoint(dir.path().join("a"), &c32).unwrap();
        assert!(bits_equal(&c32, &load_checkpoint(dir.path().join("a")).unwrap()));
        let c64 = sample_ckpt::<f64>();
        save_checkpoint(dir.path().join("b"), &c64).unwrap();
        assert!(bits_equal(&c64, &load_checkpoint(dir.path().join("b")).unwrap()));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &sample_ckpt::<f32>()).unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(Error::ConfigMismatch(_))));
    }
}
