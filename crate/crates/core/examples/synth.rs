//! Render the toy scene and write it as a dataset directory.
//!
//! `cargo run --example synth -- /tmp/toy`

use tcpdm::data_io::{load_dataset, synth_scene, write_dataset, SyntheticSceneConfig};

fn main() -> tcpdm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy_dataset".into());
    let scene = synth_scene(&SyntheticSceneConfig::toy())?;
    write_dataset(&out, &scene)?;
    let ds = load_dataset(&out)?;
    let m = &ds.manifest;
    println!("{out}: {} frames of {}x{}, {} classes, {} flow fields", m.frames, m.height, m.width, m.classes, ds.flows.len());
    for (i, f) in ds.flows.iter().enumerate() {
        let moving = f.as_tensor().data().chunks(2).filter(|d| d[0] != 0.0 || d[1] != 0.0).count();
        println!("flow {i}: {moving} moving pixels");
    }
    Ok(())
}
