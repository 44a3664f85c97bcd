//! Patch grid coverage and one patch-wise reverse step over a full frame.

use tcpdm::data_io::{synth_scene, Dataset, SyntheticSceneConfig};
use tcpdm::ddpm::make_linear_schedule;
use tcpdm::denoiser::{build_denoiser, Denoiser, DenoiserConfig};
use tcpdm::patch::{decompose, denoise_image_step, BlendMode, NoiseKey, PatchConfig};
use tcpdm::rng::{normal_tensor, seeded};

fn main() -> tcpdm::Result<()> {
    let grid = decompose(256, 256, 64, 16)?;
    let cov = grid.coverage();
    println!("256x256, p=64, r=16: {} windows, coverage {}..{}", grid.len(), cov.iter().min().unwrap(), cov.iter().max().unwrap());
    let odd = decompose(50, 37, 16, 8)?;
    println!("50x37, p=16, r=8: {} windows, last {:?}", odd.len(), odd.positions.last().unwrap());

    let ds = Dataset::from_scene(&synth_scene(&SyntheticSceneConfig::toy())?);
    let config = DenoiserConfig { patch_size: 16, num_classes: 4, base_width: 16, ..DenoiserConfig::default() };
    let denoiser: Denoiser = build_denoiser(&config, &mut seeded(0))?;
    let schedule = make_linear_schedule(50, 1e-4, 0.05)?;
    let x_t = normal_tensor(&mut seeded(1), 32, 32, 3);
    for blend in [BlendMode::Denoised, BlendMode::Noise] {
        let cfg = PatchConfig { patch: 16, cell: 8, blend };
        let x = denoise_image_step(&x_t, &ds.infrared[0], &ds.logits[0], 50, &denoiser, &schedule, &cfg, NoiseKey { seed: 0, frame: 0 })?;
        println!("{blend} blending: step changed the frame by up to {:.3}", x.max_abs_diff(&x_t));
    }
    Ok(())
}
