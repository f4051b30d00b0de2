//! Procedural grating textures standing in for road images at desk scale.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{DataError, LabeledImage, Result};
use crate::tensor::Tensor;

pub const MAX_SYNTH_CLASSES: usize = 8;

const NOISE_STD: f64 = 0.08;
const AMPLITUDE: f64 = 0.35;

pub fn synth_class_name(class: usize) -> String {
    format!("texture-{class}")
}

/// Orientation (radians) and spatial frequency (cycles per image side) of a
/// class.
pub fn class_grating(class: usize, num_classes: usize) -> (f64, f64) {
    (PI * class as f64 / num_classes as f64, 3.0 + 1.5 * (class % 3) as f64)
}

/// `per_class` images of each class, ordered class by class. Every image
/// has a random phase, slight jitter of orientation and frequency, per-channel
/// gains and pixel noise.
pub fn synth_generate(num_classes: usize, per_class: usize, resolution: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    if num_classes == 0 || num_classes > MAX_SYNTH_CLASSES {
        return Err(DataError::Contract(format!(
            "synthetic class count must be in 1..={MAX_SYNTH_CLASSES}, got {num_classes}"
        )));
    }
    if resolution == 0 {
        return Err(DataError::Contract("resolution must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let r = resolution;
    let mut out = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        let (theta0, freq0) = class_grating(class, num_classes);
        for i in 0..per_class {
            let theta = theta0 + rng.gen_range(-0.05..0.05);
            let freq = freq0 * rng.gen_range(0.95..1.05);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let gains: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.8..1.0));
            let (kx, ky) = (2.0 * PI * freq * theta.cos() / r as f64, 2.0 * PI * freq * theta.sin() / r as f64);
            let mut px = vec![0.0; 3 * r * r];
            for y in 0..r {
                for x in 0..r {
                    let wave = (kx * x as f64 + ky * y as f64 + phase).sin();
                    for (c, g) in gains.iter().enumerate() {
                        let v = 0.5 + AMPLITUDE * g * wave + rng.sample(noise);
                        px[(c * r + y) * r + x] = v.clamp(0.0, 1.0);
                    }
                }
            }
            out.push(LabeledImage {
                pixels: Tensor::new(px, &[3, r, r])?,
                label: class,
                source_id: format!("synth/{}/{i:04}", synth_class_name(class)),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_generate(5, 10, 16, 7).unwrap();
        let b = synth_generate(5, 10, 16, 7).unwrap();
        assert_eq!(a.len(), 50);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels.to_vec(), y.pixels.to_vec());
            assert_eq!(x.label, y.label);
        }
        let mut hist = [0; 5];
        a.iter().for_each(|s| hist[s.label] += 1);
        assert_eq!(hist, [10; 5]);
        assert!(a.iter().all(|s| s.pixels.to_vec().iter().all(|v| (0.0..=1.0).contains(v))));
        let c = synth_generate(5, 10, 16, 8).unwrap();
        assert_ne!(a[0].pixels.to_vec(), c[0].pixels.to_vec());
    }

    #[test]
    fn class_count_limits() {
        assert!(synth_generate(9, 1, 8, 0).is_err());
        assert!(synth_generate(0, 1, 8, 0).is_err());
        assert!(synth_generate(8, 1, 8, 0).is_ok());
    }

    /// DFT magnitude of the channel-mean image, computed directly.
    fn spectrum(img: &LabeledImage) -> Vec<f64> {
        let r = img.pixels.shape()[1];
        let px = img.pixels.to_vec();
        let gray: Vec<f64> = (0..r * r).map(|i| (px[i] + px[r * r + i] + px[2 * r * r + i]) / 3.0).collect();
        let mean = gray.iter().sum::<f64>() / gray.len() as f64;
        let mut mag = Vec::with_capacity(r * r);
        for u in 0..r {
            for v in 0..r {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..r {
                    for x in 0..r {
                        let a = -2.0 * PI * ((u * y + v * x) as f64) / r as f64;
                        re += (gray[y * r + x] - mean) * a.cos();
                        im += (gray[y * r + x] - mean) * a.sin();
                    }
                }
                mag.push((re * re + im * im).sqrt());
            }
        }
        mag
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn spectra_separate_classes() {
        let n = 5;
        let data = synth_generate(n, 8, 16, 3).unwrap();
        let spectra: Vec<Vec<f64>> = data.iter().map(spectrum).collect();
        let centroids: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let members: Vec<&Vec<f64>> = spectra.iter().zip(&data).filter(|(_, d)| d.label == c).map(|(s, _)| s).collect();
                (0..spectra[0].len()).map(|k| members.iter().map(|s| s[k]).sum::<f64>() / members.len() as f64).collect()
            })
            .collect();
        let intra = spectra.iter().zip(&data).map(|(s, d)| dist(s, &centroids[d.label])).fold(0.0, f64::max);
        let mut inter = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                inter = inter.min(dist(&centroids[a], &centroids[b]));
            }
        }
        assert!(inter > intra, "inter {inter} <= intra {intra}");
    }
}
