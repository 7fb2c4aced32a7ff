//! Two-class synthetic flower-head images.
//!
//! Class 0 ("immature") is a small solid disc in cool hues; class 1
//! ("mature") is a large thin ring in warm hues. The hue ranges overlap and
//! position, scale, illumination, background texture and clutter are all
//! random, so pixel statistics alone separate the classes only partly while
//! the shape is unambiguous.

use atms_tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalize_rgb, Dataset, Provenance, Sample};
use crate::error::{KdError, Result};

pub const CLASS_NAMES: [&str; 2] = ["immature", "mature"];
pub const MIN_SYNTHETIC_SIZE: usize = 32;

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn blend(px: &mut [f64], color: [f64; 3], alpha: f64) {
    for c in 0..3 {
        px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
    }
}

/// Interleaved RGB bytes of one `size`×`size` sample of `class`.
pub fn render_rgb<R: Rng + ?Sized>(class: usize, size: usize, rng: &mut R) -> Vec<u8> {
    let s = size as f64;
    let unit = s / 64.0;
    let mut img = vec![0.0f64; size * size * 3];

    // Textured background.
    let base = hsv(rng.random::<f64>(), rng.random_range(0.0..0.3), rng.random_range(0.2..0.55));
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(0.05..0.3) / unit;
            (theta.cos() * freq, theta.sin() * freq, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.03..0.1))
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let shade: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + ph).sin())
                .sum();
            let px = &mut img[(y * size + x) * 3..][..3];
            for c in 0..3 {
                px[c] = base[c] + shade;
            }
        }
    }

    // Small clutter blobs of arbitrary colour.
    for _ in 0..rng.random_range(2..=5) {
        let r = rng.random_range(1.5..3.5) * unit;
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let color = hsv(rng.random::<f64>(), rng.random_range(0.2..0.8), rng.random_range(0.3..0.9));
        for y in 0..size {
            for x in 0..size {
                let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                let cov = (r + 0.5 - d).clamp(0.0, 1.0);
                if cov > 0.0 {
                    blend(&mut img[(y * size + x) * 3..][..3], color, cov);
                }
            }
        }
    }

    // The object.
    let (outer, inner, hue) = if class == 0 {
        (rng.random_range(6.0..10.0) * unit, 0.0, rng.random_range(0.12..0.55))
    } else {
        let outer = rng.random_range(11.0..17.0) * unit;
        (outer, outer - rng.random_range(3.0..4.5) * unit, rng.random_range(-0.11..0.33))
    };
    let color = hsv(hue, rng.random_range(0.6..0.95), rng.random_range(0.75..1.0));
    let margin = outer + 2.0;
    let cy = rng.random_range(margin..s - margin);
    let cx = rng.random_range(margin..s - margin);
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
            let mut cov = (outer + 0.5 - d).clamp(0.0, 1.0);
            if inner > 0.0 {
                cov *= (d - inner + 0.5).clamp(0.0, 1.0);
            }
            if cov > 0.0 {
                blend(&mut img[(y * size + x) * 3..][..3], color, cov);
            }
        }
    }

    let gain = rng.random_range(0.6..1.4);
    let noise = Normal::new(0.0, 0.03).expect("valid");
    img.iter()
        .map(|&v| ((v * gain + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// `n_per_class` samples of each class, class 0 first. Each sample draws
/// from its own stream of the seeded generator, so a sample does not
/// depend on how many others are generated.
pub fn generate_synthetic<T: Scalar>(n_per_class: usize, image_size: usize, seed: u64) -> Result<Dataset<T>> {
    if image_size < MIN_SYNTHETIC_SIZE {
        return Err(KdError::Config(format!(
            "synthetic images need size >= {MIN_SYNTHETIC_SIZE}, got {image_size}"
        )));
    }
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for class in 0..CLASS_NAMES.len() {
        for i in 0..n_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((class as u64) << 32) | i as u64);
            let rgb = render_rgb(class, image_size, &mut rng);
            samples.push(Sample {
                image: normalize_rgb(&rgb, image_size, image_size),
                label: class,
            });
        }
    }
    Ok(Dataset {
        samples,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        provenance: Provenance::Synthetic {
            seed,
            n_per_class,
            image_size,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_reproducible() {
        let a = generate_synthetic::<f64>(5, 32, 42).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.class_counts(), vec![5, 5]);
        assert_eq!(a.image_shape(), Some(&[3, 32, 32][..]));
        let b = generate_synthetic::<f64>(5, 32, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic::<f64>(5, 32, 43).unwrap();
        assert_ne!(a.samples[0], c.samples[0]);
    }

    #[test]
    fn samples_independent_of_count() {
        let small = generate_synthetic::<f64>(2, 32, 1).unwrap();
        let large = generate_synthetic::<f64>(4, 32, 1).unwrap();
        assert_eq!(small.samples[1], large.samples[1]);
        assert_eq!(small.samples[2], large.samples[4]);
    }

    #[test]
    fn too_small_rejected() {
        assert!(generate_synthetic::<f64>(1, 16, 0).is_err());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(1.0 / 3.0, 1.0, 1.0)[1], 1.0);
    }
}
