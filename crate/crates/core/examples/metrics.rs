//! PSNR, SSIM and warped-frame error on a moving toy video.

use tcpdm::data_io::{model_to_unit, synth_scene, SyntheticSceneConfig};
use tcpdm::metrics::{psnr, ssim, warped_frame_error, MetricReport};

fn main() -> tcpdm::Result<()> {
    let scene = synth_scene(&SyntheticSceneConfig::toy())?;
    let frames: Vec<_> = scene.visible_frames().iter().map(model_to_unit).collect();
    let noisy: Vec<_> = frames.iter().enumerate().map(|(i, f)| f.map(|v| (v + 0.05 * ((i % 3) as f32 - 1.0)).clamp(0.0, 1.0))).collect();

    println!("frame 0 vs itself: PSNR {} dB, SSIM {}", psnr(&frames[0], &frames[0])?, ssim(&frames[0], &frames[0])?);
    println!("frame 0 vs frame 1: PSNR {:.2} dB, SSIM {:.4}", psnr(&frames[0], &frames[1])?, ssim(&frames[0], &frames[1])?);
    println!("warped error, clean video {:.6}", warped_frame_error(&frames, &scene.flows, None)?);
    println!("warped error, flickering video {:.6}", warped_frame_error(&noisy, &scene.flows, None)?);

    let report = MetricReport::evaluate(&noisy, &frames, Some(&scene.flows))?;
    print!("{}{}", report.csv(), report.summary());
    Ok(())
}
