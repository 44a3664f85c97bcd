//! Flow correspondences pulling a frame toward its predecessor with a
//! decaying weight.

use tcpdm::temporal::{flow_to_correspondences, temporal_blend, BlendWeight, CollisionPolicy, FlowField};
use tcpdm::FrameTensor;

fn main() -> tcpdm::Result<()> {
    let prev = FrameTensor::from_fn(4, 6, 1, |_, v, _| v as f32);
    let current = FrameTensor::zeros(4, 6, 1);
    // Everything moves one column to the right.
    let corrs = flow_to_correspondences(&FlowField::constant(4, 6, 0.0, 1.0));
    println!("{} correspondences", corrs.len());

    let mut w = BlendWeight::new(1.0, 0.9)?;
    for step in 1..=5 {
        let (blended, next) = temporal_blend(&current, &prev, &corrs, w, CollisionPolicy::Average)?;
        w = next;
        let row: Vec<String> = (0..6).map(|v| format!("{:.2}", blended.get(0, v, 0))).collect();
        println!("k={step} w={:.4} row0=[{}]", w.weight(), row.join(" "));
    }
    Ok(())
}
