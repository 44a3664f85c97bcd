//! Train briefly, translate the toy infrared video with and without temporal
//! guidance, and compare quality and temporal consistency.
//!
//! `cargo run --release --example translate_video -- 1000`

use tcpdm::cli::{train, translate_dataset, RunConfig};
use tcpdm::data_io::{model_to_unit, synth_scene, Dataset};
use tcpdm::metrics::MetricReport;

fn main() -> tcpdm::Result<()> {
    let iters = std::env::args().nth(1).map(|s| s.parse().expect("iteration count")).unwrap_or(500);
    let mut cfg = RunConfig::default();
    cfg.apply_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../profiles/desk.cfg"))?;
    cfg.iters = iters;
    let ds = Dataset::from_scene(&synth_scene(&cfg.scene()?)?);
    let mut denoiser = train(&ds, &cfg, |_, _, _, _| Ok(()))?.denoiser;
    denoiser.set_use_ema(true);

    let reference: Vec<_> = ds.visible.iter().map(model_to_unit).collect();
    for omega in [0.0, 0.9] {
        cfg.omega = omega;
        let video = translate_dataset(&cfg, &denoiser, &ds)?;
        let frames: Vec<_> = video.frames.iter().map(model_to_unit).collect();
        let report = MetricReport::evaluate(&frames, &reference, Some(&ds.flows))?;
        println!(
            "omega={omega}: PSNR {:.2} dB, SSIM {:.4}, warped error {:.6}, verification skipped {:?}",
            report.mean_psnr(),
            report.mean_ssim(),
            report.warped_error.unwrap_or(f64::NAN),
            video.skipped
        );
    }
    Ok(())
}
