//! Linear noise schedule, forward noising and an exact one-step inversion.

use tcpdm::ddpm::{forward_sample, make_linear_schedule, reverse_step};
use tcpdm::rng::{normal_tensor, seeded};
use tcpdm::FrameTensor;

fn main() -> tcpdm::Result<()> {
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    for t in [1, 10, 100, 500, 1000] {
        println!("t={t:>4}  beta={:.5}  alpha_bar={:.6}  sigma={:.5}", schedule.beta(t), schedule.alpha_bar(t), schedule.sigma(t));
    }

    let mut rng = seeded(0);
    let x0 = normal_tensor(&mut rng, 4, 4, 3).clamp(-1.0, 1.0);
    let eps = normal_tensor(&mut rng, 4, 4, 3);
    let x_t = forward_sample(&x0, 250, &eps, &schedule)?;
    println!("mean |x_250 - x0| = {:.4}", x_t.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).sum::<f32>() / 48.0);

    // With the true noise and z = 0 a single-step schedule inverts exactly.
    let one = make_linear_schedule(1, 0.3, 0.3)?;
    let x1 = forward_sample(&x0, 1, &eps, &one)?;
    let back = reverse_step(&x1, &eps, 1, &FrameTensor::zeros(4, 4, 3), &one)?;
    println!("T=1 round trip error {:.2e}", back.max_abs_diff(&x0));
    Ok(())
}
