//! Labelled image sets: the CIFAR-10 binary layout and a seeded synthetic
//! generator whose classes differ in both coarse structure and fine texture.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
pub const SYNTHETIC_MEAN: f64 = 0.5;
pub const SYNTHETIC_STD: f64 = 0.25;

/// Images `[N, C, H, W]` with one class label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Float> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("images {:?} with {} labels", images.shape(), labels.len()),
            ));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Copy the listed samples, in order, into a new set.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let per: usize = self.image_shape().iter().product();
        let src = self.images.data();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.image_shape();
        Self {
            images: Tensor::new(&[indices.len(), c, h, w], data).expect("gather shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Samples whose label is in `classes`.
    pub fn filter_classes(&self, classes: &[usize]) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.gather(&idx)
    }

    /// Per-channel `(x - mean) / std`. A single-entry slice applies to every channel.
    pub fn normalize(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let [c, h, w] = self.image_shape();
        let pick = |v: &[f64], ch: usize| if v.len() == 1 { Ok(v[0]) } else { v.get(ch).copied().ok_or(()) };
        let plane = h * w;
        for (k, px) in self.images.data_mut().iter_mut().enumerate() {
            let ch = (k / plane) % c;
            let (m, s) = match (pick(mean, ch), pick(std, ch)) {
                (Ok(m), Ok(s)) if s > 0.0 => (m, s),
                _ => return Err(Error::config("normalization", format!("no valid mean/std for channel {ch}"))),
            };
            *px = T::of((px.as_f64() - m) / s);
        }
        Ok(())
    }
}

/// Parse CIFAR-10 binary records: one label byte then 3072 bytes holding the
/// red, green and blue 32x32 planes. Pixels are scaled to `[0, 1]`.
pub fn parse_cifar10_binary<T: Float>(bytes: &[u8]) -> Result<Dataset<T>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD;
        return Err(Error::Format {
            offset: whole * CIFAR_RECORD,
            message: format!(
                "{} bytes is not a whole number of {CIFAR_RECORD}-byte records; partial record at the offset",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    if n == 0 {
        return Err(Error::Format { offset: 0, message: "no records".into() });
    }
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: r * CIFAR_RECORD,
                message: format!("label byte {} is not in 0..=9", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| T::of(b as f64 / 255.0)));
    }
    Dataset::new(Tensor::new(&[n, 3, 32, 32], data)?, labels)
}

pub fn read_cifar10_binary<T: Float>(path: &Path) -> Result<Dataset<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_cifar10_binary(&bytes)
}

/// Encode `[N, 3, 32, 32]` images in `[0, 1]` as CIFAR-10 records (8-bit rounding).
pub fn encode_cifar10_binary<T: Float>(data: &Dataset<T>) -> Result<Vec<u8>> {
    if data.image_shape() != [3, 32, 32] {
        return Err(Error::shape("cifar10 encode", format!("image shape {:?}", data.image_shape())));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for (i, px) in data.images.data().chunks_exact(3072).enumerate() {
        let label = data.labels[i];
        if label > 9 {
            return Err(Error::Label { label, classes: 10 });
        }
        out.push(label as u8);
        out.extend(px.iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_cifar10_binary<T: Float>(path: &Path, data: &Dataset<T>) -> Result<()> {
    std::fs::write(path, encode_cifar10_binary(data)?)?;
    Ok(())
}

/// Load the five training batches and the test batch from a CIFAR-10 binary
/// directory. Missing training batches are skipped as long as one exists.
pub fn read_cifar10_dir<T: Float>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut parts = Vec::new();
    for i in 1..=5 {
        let p = dir.join(format!("data_batch_{i}.bin"));
        if p.exists() {
            parts.push(read_cifar10_binary::<T>(&p)?);
        }
    }
    if parts.is_empty() {
        return Err(Error::Io(format!("no data_batch_*.bin files in {}", dir.display())));
    }
    let test = read_cifar10_binary(&dir.join("test_batch.bin"))?;
    Ok((concat(&parts)?, test))
}

pub fn concat<T: Float>(parts: &[Dataset<T>]) -> Result<Dataset<T>> {
    let images: Vec<&Tensor<T>> = parts.iter().map(|p| &p.images).collect();
    let first = images.first().ok_or_else(|| Error::shape("concat", "nothing to concatenate"))?;
    let [_, c, h, w] = [first.shape()[0], first.shape()[1], first.shape()[2], first.shape()[3]];
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        if p.image_shape() != [c, h, w] {
            return Err(Error::shape("concat", "image shapes differ"));
        }
        data.extend_from_slice(p.images.data());
        labels.extend_from_slice(&p.labels);
    }
    Dataset::new(Tensor::new(&[labels.len(), c, h, w], data)?, labels)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples_per_class: 500,
            image_size: 32,
            channels: 3,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Class-specific pattern: a smooth ramp (coarse structure) and a stripe
/// texture (fine detail).
#[derive(Debug, Clone, Copy)]
struct ClassPattern {
    ramp_angle: f64,
    stripe_angle: f64,
    stripe_period: f64,
    tint: [f64; 3],
}

fn class_pattern(c: usize, classes: usize) -> ClassPattern {
    let frac = c as f64 / classes as f64;
    ClassPattern {
        ramp_angle: 2.0 * PI * frac,
        stripe_angle: PI * ((c * 3) % classes) as f64 / classes as f64 + PI / 8.0,
        stripe_period: 2.0 + (c % 3) as f64,
        tint: [
            0.6 + 0.4 * (2.0 * PI * frac).cos(),
            0.6 + 0.4 * (2.0 * PI * frac + 2.0).cos(),
            0.6 + 0.4 * (2.0 * PI * frac + 4.0).cos(),
        ],
    }
}

/// Generate `classes * samples_per_class` images in `[0, 1]`, grouped by
/// class. Each image mixes its class ramp at a random strength and small
/// angular jitter, the class stripes at a random phase, and Gaussian noise.
pub fn synthesize_dataset<T: Float>(spec: &SyntheticSpec) -> Result<Dataset<T>> {
    if spec.classes < 2 {
        return Err(Error::config("synthetic.classes", "need at least 2 classes"));
    }
    if spec.image_size < 2 || !spec.image_size.is_multiple_of(2) {
        return Err(Error::config("synthetic.image_size", "must be even and at least 2"));
    }
    if spec.channels < 1 || spec.samples_per_class < 1 {
        return Err(Error::config("synthetic", "channels and samples_per_class must be positive"));
    }
    let noise = Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| Error::config("synthetic.noise", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.image_size;
    let n = spec.classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * spec.channels * s * s);
    let mut labels = Vec::with_capacity(n);
    let centre = (s as f64 - 1.0) / 2.0;
    for c in 0..spec.classes {
        let p = class_pattern(c, spec.classes);
        for _ in 0..spec.samples_per_class {
            let strength = rng.gen_range(0.6..1.0);
            let angle = p.ramp_angle + rng.gen_range(-0.3..0.3);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let texture = rng.gen_range(0.5..1.0);
            let (ra, rb) = (angle.cos(), angle.sin());
            let (sa, sb) = (p.stripe_angle.cos(), p.stripe_angle.sin());
            for ch in 0..spec.channels {
                let tint = p.tint[ch % 3];
                for y in 0..s {
                    for x in 0..s {
                        let (u, v) = ((x as f64 - centre) / s as f64, (y as f64 - centre) / s as f64);
                        let ramp = 0.35 * strength * tint * (ra * u + rb * v) * 2.0;
                        let t = (x as f64 * sa + y as f64 * sb) * 2.0 * PI / p.stripe_period + phase;
                        let stripe = 0.15 * texture * t.sin();
                        let value = 0.5 + ramp + stripe + noise.sample(&mut rng);
                        data.push(T::of(value.clamp(0.0, 1.0)));
                    }
                }
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(&[n, spec.channels, s, s], data)?, labels)
}
