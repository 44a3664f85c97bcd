//! Short training run on the toy scene.
//!
//! `cargo run --release --example train_toy -- 500`

use tcpdm::cli::{evaluate_loss, init_training, train, RunConfig};
use tcpdm::data_io::{synth_scene, Dataset};

fn main() -> tcpdm::Result<()> {
    let iters = std::env::args().nth(1).map(|s| s.parse().expect("iteration count")).unwrap_or(300);
    let mut cfg = RunConfig::default();
    cfg.apply_file(concat!(env!("CARGO_MANIFEST_DIR"), "/../../profiles/desk.cfg"))?;
    cfg.iters = iters;
    let ds = Dataset::from_scene(&synth_scene(&cfg.scene()?)?);
    let schedule = cfg.schedule()?;

    let (untrained, _) = init_training(&cfg)?;
    println!("held-out loss before training {:.4}", evaluate_loss(&untrained, &ds, &schedule, &cfg, 4)?);
    let mut outcome = train(&ds, &cfg, |i, loss, _, _| {
        if i % 100 == 0 {
            println!("iter {i:>5}  loss {loss:.4}");
        }
        Ok(())
    })?;
    println!("held-out loss, raw weights {:.4}", evaluate_loss(&outcome.denoiser, &ds, &schedule, &cfg, 4)?);
    outcome.denoiser.set_use_ema(true);
    println!("held-out loss, EMA weights {:.4}", evaluate_loss(&outcome.denoiser, &ds, &schedule, &cfg, 4)?);
    Ok(())
}
