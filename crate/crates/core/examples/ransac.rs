//! Eight-point fit and RANSAC filtering on a synthetic two-view scene.

use std::collections::HashSet;

use tcpdm::temporal::{estimate_fundamental_8pt, geometric_verification, RansacConfig, TwoViewScene};

fn main() -> tcpdm::Result<()> {
    let clean = TwoViewScene::generate(100, 0, 480, 640, 1);
    let f = estimate_fundamental_8pt(&clean.inliers)?;
    println!("8-point on exact matches: distance to true F {:.2e}, det {:.2e}", f.distance(&clean.fundamental), f.det());

    for seed in 0..5 {
        let scene = TwoViewScene::generate(140, 60, 480, 640, seed);
        let set = scene.rounded_set();
        let truth: HashSet<_> = set.matches[..140].iter().copied().collect();
        let kept = geometric_verification(&set, &RansacConfig { seed, ..RansacConfig::default() });
        let good = kept.matches.iter().filter(|m| truth.contains(m)).count();
        println!("seed {seed}: kept {good}/140 inliers and {}/60 outliers", kept.len() - good);
    }
    Ok(())
}
