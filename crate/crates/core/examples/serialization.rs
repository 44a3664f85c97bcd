//! Tensor container and checkpoint round trips.

use tcpdm::data_io::{read_tensor, write_tensor, Tensor, TensorData};
use tcpdm::denoiser::{build_denoiser, load_checkpoint, save_checkpoint, Checkpoint, Denoiser, DenoiserConfig, OptimizerState};
use tcpdm::rng::seeded;

fn main() -> tcpdm::Result<()> {
    let dir = std::env::temp_dir().join(format!("tcpdm-serialization-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir is writable");

    let t = Tensor::new(vec![2, 3], TensorData::F32(vec![0.5, -1.0, 2.25, 3.0, f32::MIN_POSITIVE, 1e30]))?;
    let path = dir.join("example.tct");
    write_tensor(&path, &t)?;
    println!("tensor: {} bytes on disk, round trip equal: {}", t.encode().len(), read_tensor(&path)? == t);

    let config = DenoiserConfig { patch_size: 8, num_classes: 3, base_width: 8, num_groups: 4, ..DenoiserConfig::default() };
    let d: Denoiser = build_denoiser(&config, &mut seeded(0))?;
    let ckpt = Checkpoint {
        config,
        weights: d.weights().clone(),
        optimizer: OptimizerState::new(d.net().param_count(), 1e-3),
    };
    save_checkpoint(dir.join("ckpt"), &ckpt)?;
    let back: Checkpoint = load_checkpoint(dir.join("ckpt"))?;
    println!("checkpoint: {} parameters, round trip equal: {}", ckpt.weights.params.len(), back == ckpt);
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
