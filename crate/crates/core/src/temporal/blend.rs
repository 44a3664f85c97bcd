use crate::error::{Error, Result};
use crate::tensor::FrameTensor;

use super::flow::{Correspondence, CorrespondenceSet};

/// Blend weight `w_T·ω^k` after `k` decays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendWeight {
    pub initial: f64,
    pub decay: f64,
    pub steps: u32,
}

impl BlendWeight {
    pub fn new(initial: f64, decay: f64) -> Result<Self> {
        for (name, x) in [("w_T", initial), ("omega", decay)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidConfig(format!("{name} = {x} outside [0, 1]")));
            }
        }
        Ok(Self { initial, decay, steps: 0 })
    }

    pub fn weight(&self) -> f64 {
        self.initial * self.decay.powi(self.steps as i32)
    }

    pub fn decayed(&self) -> Self {
        Self { steps: self.steps + 1, ..*self }
    }
}

/// How several sources landing on one target are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollisionPolicy {
    /// Mean of all source values.
    #[default]
    Average,
    /// Last source in row-major source order wins.
    Last,
}

impl std::str::FromStr for CollisionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "last" => Ok(Self::Last),
            _ => Err(Error::InvalidConfig(format!("unknown collision policy {s:?}"))),
        }
    }
}

impl std::fmt::Display for CollisionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Average => "average",
            Self::Last => "last",
        })
    }
}

/// Decays `w`, then pulls every corresponded target pixel of `x_hat` toward
/// its source in `x_prev`. Untouched pixels are copied verbatim.
pub fn temporal_blend(
    x_hat: &FrameTensor,
    x_prev: &FrameTensor,
    corrs: &CorrespondenceSet,
    w: BlendWeight,
    policy: CollisionPolicy,
) -> Result<(FrameTensor, BlendWeight)> {
    x_hat.ensure_same_shape(x_prev, "previous frame")?;
    let (h, wd, c) = x_hat.shape();
    if (corrs.height, corrs.width) != (h, wd) {
        return Err(Error::shape(format!(
            "correspondences for {}x{} vs frame {h}x{wd}",
            corrs.height, corrs.width
        )));
    }
    let next = w.decayed();
    let wt = next.weight();
    let mut out = x_hat.clone();
    if wt == 0.0 || corrs.is_empty() {
        return Ok((out, next));
    }

    let mut sorted: Vec<Correspondence> = corrs.matches.clone();
    sorted.sort_unstable_by_key(|m| (m.u2, m.v2, m.u, m.v));
    let mut acc = vec![0.0f64; c];
    let mut i = 0;
    while i < sorted.len() {
        let (u2, v2) = (sorted[i].u2, sorted[i].v2);
        let mut j = i;
        while j < sorted.len() && (sorted[j].u2, sorted[j].v2) == (u2, v2) {
            j += 1;
        }
        let group = &sorted[i..j];
        match policy {
            CollisionPolicy::Average => {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for m in group {
                    for (a, &s) in acc.iter_mut().zip(x_prev.pixel(m.u, m.v)) {
                        *a += s as f64;
                    }
                }
                let n = group.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
            }
            CollisionPolicy::Last => {
                let m = group.last().expect("non-empty group");
                for (a, &s) in acc.iter_mut().zip(x_prev.pixel(m.u, m.v)) {
                    *a = s as f64;
                }
            }
        }
        let cur = x_hat.pixel(u2, v2);
        for ((o, &a), &s) in out.pixel_mut(u2, v2).iter_mut().zip(cur).zip(&acc) {
            *o = ((1.0 - wt) * a as f64 + wt * s) as f32;
        }
        i = j;
    }
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize, offset: f32) -> FrameTensor {
        FrameTensor::from_fn(h, w, c, |u, v, k| offset + (u * 7 + v * 3 + k) as f32 * 0.1)
    }

    fn identity(h: usize, w: usize) -> CorrespondenceSet {
        let m = (0..h).flat_map(|u| (0..w).map(move |v| Correspondence { u, v, u2: u, v2: v })).collect();
        CorrespondenceSet::new(h, w, m).unwrap()
    }

    #[test]
    fn full_weight_copies_previous_frame() {
        let (a, b) = (ramp(3, 4, 3, 0.0), ramp(3, 4, 3, -5.0));
        let (out, w) = temporal_blend(&a, &b, &identity(3, 4), BlendWeight::new(1.0, 1.0).unwrap(), CollisionPolicy::Average).unwrap();
        assert_eq!(out, b);
        assert_eq!(w.weight(), 1.0);
    }

    #[test]
    fn zero_decay_keeps_current_frame() {
        let (a, b) = (ramp(3, 4, 3, 0.0), ramp(3, 4, 3, -5.0));
        let (out, w) = temporal_blend(&a, &b, &identity(3, 4), BlendWeight::new(1.0, 0.0).unwrap(), CollisionPolicy::Average).unwrap();
        assert_eq!(out, a);
        assert_eq!(w.weight(), 0.0);
    }

    #[test]
    fn single_correspondence_half_weight() {
        let (a, b) = (ramp(2, 2, 3, 1.0), ramp(2, 2, 3, -2.0));
        let c = CorrespondenceSet::new(2, 2, vec![Correspondence { u: 0, v: 0, u2: 1, v2: 1 }]).unwrap();
        let (out, w) = temporal_blend(&a, &b, &c, BlendWeight::new(1.0, 0.5).unwrap(), CollisionPolicy::Average).unwrap();
        assert_eq!(w.weight(), 0.5);
        for k in 0..3 {
            assert_eq!(out.get(1, 1, k), 0.5 * a.get(1, 1, k) + 0.5 * b.get(0, 0, k));
        }
        for (u, v) in [(0, 0), (0, 1), (1, 0)] {
            assert_eq!(out.pixel(u, v), a.pixel(u, v));
        }
    }

    #[test]
    fn collisions_average_or_take_last() {
        let a = FrameTensor::filled(1, 3, 1, 0.0);
        let b = FrameTensor::from_vec(1, 3, 1, vec![2.0, 4.0, 9.0]).unwrap();
        let m = vec![Correspondence { u: 0, v: 1, u2: 0, v2: 2 }, Correspondence { u: 0, v: 0, u2: 0, v2: 2 }];
        let c = CorrespondenceSet::new(1, 3, m).unwrap();
        let w = BlendWeight::new(1.0, 1.0).unwrap();
        let (avg, _) = temporal_blend(&a, &b, &c, w, CollisionPolicy::Average).unwrap();
        assert_eq!(avg.get(0, 2, 0), 3.0);
        let (last, _) = temporal_blend(&a, &b, &c, w, CollisionPolicy::Last).unwrap();
        assert_eq!(last.get(0, 2, 0), 4.0);
    }

    #[test]
    fn dyadic_decay_is_exact() {
        let mut w = BlendWeight::new(1.0, 0.5).unwrap();
        for k in 0..40 {
            assert_eq!(w.weight(), (0.5f64).powi(k));
            w = w.decayed();
        }
    }

    #[test]
    fn rejects_bad_weights_and_shapes() {
        assert!(BlendWeight::new(1.5, 0.9).is_err());
        assert!(BlendWeight::new(1.0, -0.1).is_err());
        let w = BlendWeight::new(1.0, 0.9).unwrap();
        let err = temporal_blend(&ramp(2, 2, 3, 0.0), &ramp(2, 3, 3, 0.0), &identity(2, 2), w, CollisionPolicy::Average);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn blend_is_bounded_and_order_free(
            seed in 0u64..500,
            n in 1usize..40,
            w0 in 0.0f64..=1.0,
            omega in 0.0f64..=1.0,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let (h, wd) = (5, 6);
            let a = FrameTensor::from_fn(h, wd, 3, |_, _, _| rng.random_range(-1.0..1.0));
            let b = FrameTensor::from_fn(h, wd, 3, |_, _, _| rng.random_range(-1.0..1.0));
            let mut m: Vec<Correspondence> = (0..n)
                .map(|_| Correspondence {
                    u: rng.random_range(0..h), v: rng.random_range(0..wd),
                    u2: rng.random_range(0..h), v2: rng.random_range(0..wd),
                })
                .collect();
            let w = BlendWeight::new(w0, omega).unwrap();
            let c1 = CorrespondenceSet::new(h, wd, m.clone()).unwrap();
            m.reverse();
            m.rotate_left(n / 3);
            let c2 = CorrespondenceSet::new(h, wd, m.clone()).unwrap();
            let (o1, _) = temporal_blend(&a, &b, &c1, w, CollisionPolicy::Average).unwrap();
            let (o2, _) = temporal_blend(&a, &b, &c2, w, CollisionPolicy::Average).unwrap();
            prop_assert_eq!(&o1, &o2);
            for u in 0..h {
                for v in 0..wd {
                    let sources: Vec<_> = m.iter().filter(|x| (x.u2, x.v2) == (u, v)).collect();
                    for k in 0..3 {
                        let cur = a.get(u, v, k);
                        if sources.is_empty() {
                            prop_assert_eq!(o1.get(u, v, k).to_bits(), cur.to_bits());
                        } else {
                            let vals: Vec<f32> = sources.iter().map(|s| b.get(s.u, s.v, k)).collect();
                            let lo = vals.iter().copied().fold(cur, f32::min);
                            let hi = vals.iter().copied().fold(cur, f32::max);
                            prop_assert!(o1.get(u, v, k) >= lo && o1.get(u, v, k) <= hi);
                        }
                    }
                }
            }
        }
    }
}
