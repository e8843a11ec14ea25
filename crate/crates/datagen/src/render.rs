//! Identity templates, camera photometry, and the corruption operators.
//!
//! Every random choice is drawn from a generator seeded by
//! [`derive_seed`] over the master seed and the item's coordinates, so a
//! frame's content does not depend on generation order.

use loga_core::{Frame, FrameFlag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::manifest::{DatasetManifest, NoiseSpec};

const TEMPLATE_STREAM: u64 = 1;
const JITTER_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const CORRUPT_STREAM: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the master seed with a path of coordinates into one seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Texture {
    Flat,
    VerticalStripes,
    HorizontalStripes,
    Checker,
}

#[derive(Debug, Clone, PartialEq)]
struct Band {
    rows: std::ops::Range<usize>,
    /// Base intensity per channel.
    base: Vec<f64>,
    texture: Texture,
    amplitude: f64,
    period: usize,
    phase: usize,
}

impl Band {
    fn pattern(&self, r: usize, c: usize) -> f64 {
        let on = |i: usize| ((i + self.phase) / self.period) % 2 == 0;
        let s = match self.texture {
            Texture::Flat => return 0.0,
            Texture::VerticalStripes => on(c),
            Texture::HorizontalStripes => on(r),
            Texture::Checker => on(r) ^ on(c),
        };
        if s {
            self.amplitude
        } else {
            -self.amplitude
        }
    }
}

/// Procedural appearance of one identity: horizontal body-part bands,
/// each with its own intensity per channel and texture.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTemplate {
    pub identity: usize,
    bands: Vec<Band>,
    height: usize,
    width: usize,
    channels: usize,
}

impl IdentityTemplate {
    pub fn new(m: &DatasetManifest, identity: usize) -> Self {
        let mut rng = rng_for(m.seed, &[TEMPLATE_STREAM, identity as u64]);
        let band_h = m.height / m.body_bands;
        let bands = (0..m.body_bands)
            .map(|b| {
                let start = b * band_h;
                let end = if b + 1 == m.body_bands { m.height } else { start + band_h };
                let period = rng.gen_range(2..=4);
                Band {
                    rows: start..end,
                    base: (0..m.channels).map(|_| rng.gen_range(0.15..0.85)).collect(),
                    texture: match rng.gen_range(0..4) {
                        0 => Texture::Flat,
                        1 => Texture::VerticalStripes,
                        2 => Texture::HorizontalStripes,
                        _ => Texture::Checker,
                    },
                    amplitude: rng.gen_range(0.05..0.2),
                    period,
                    phase: rng.gen_range(0..period),
                }
            })
            .collect();
        Self {
            identity,
            bands,
            height: m.height,
            width: m.width,
            channels: m.channels,
        }
    }

    /// Noise-free pixels, channel-major, with per-band offsets added to
    /// the base intensities.
    fn pixels(&self, band_offsets: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.channels * plane];
        for (b, band) in self.bands.iter().enumerate() {
            for ch in 0..self.channels {
                let base = band.base[ch] + band_offsets.get(b * self.channels + ch).copied().unwrap_or(0.0);
                for r in band.rows.clone() {
                    for c in 0..self.width {
                        out[ch * plane + r * self.width + c] = base + band.pattern(r, c);
                    }
                }
            }
        }
        out
    }

    /// The template as a frame, without camera, jitter or noise.
    pub fn frame(&self) -> Frame {
        let px = self.pixels(&[]).into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
        Frame::new(self.height, self.width, self.channels, px)
    }
}

/// `(brightness, contrast)` of camera `c`; cameras are spread evenly
/// between `−delta` and `+delta`.
pub fn camera_photometry(noise: &NoiseSpec, camera: usize, cameras: usize) -> (f64, f64) {
    let t = if cameras <= 1 {
        0.0
    } else {
        2.0 * camera as f64 / (cameras - 1) as f64 - 1.0
    };
    (t * noise.brightness_delta, 1.0 + t * noise.contrast_delta)
}

/// Where a frame comes from: which tracklet and which position in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSite {
    /// Global tracklet index.
    pub tracklet: usize,
    pub identity: usize,
    pub camera: usize,
    pub frame: usize,
}

/// Renders frames of one dataset; templates are built once.
#[derive(Debug, Clone)]
pub struct Renderer<'m> {
    manifest: &'m DatasetManifest,
    templates: Vec<IdentityTemplate>,
}

impl<'m> Renderer<'m> {
    pub fn new(manifest: &'m DatasetManifest) -> Self {
        let templates = (0..manifest.num_identities)
            .map(|i| IdentityTemplate::new(manifest, i))
            .collect();
        Self { manifest, templates }
    }

    pub fn template(&self, identity: usize) -> &IdentityTemplate {
        &self.templates[identity]
    }

    fn band_jitter(&self, tracklet: usize) -> Vec<f64> {
        let m = self.manifest;
        let n = m.body_bands * m.channels;
        if m.noise.tracklet_jitter == 0.0 {
            return vec![0.0; n];
        }
        let mut rng = rng_for(m.seed, &[JITTER_STREAM, tracklet as u64]);
        let dist = Normal::new(0.0, m.noise.tracklet_jitter).expect("validated jitter");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    /// Template of `identity` through `camera`, plus this frame's pixel
    /// noise, clamped to `[0, 1]`.
    fn render(&self, identity: usize, camera: usize, offsets: &[f64], noise_rng: &mut ChaCha8Rng) -> Frame {
        let m = self.manifest;
        let (brightness, contrast) = camera_photometry(&m.noise, camera, m.cameras);
        let dist = (m.noise.pixel_noise > 0.0).then(|| Normal::new(0.0, m.noise.pixel_noise).expect("validated noise"));
        let px = self.templates[identity]
            .pixels(offsets)
            .into_iter()
            .map(|v| {
                let mut v = (v - 0.5) * contrast + 0.5 + brightness;
                if let Some(d) = &dist {
                    v += d.sample(noise_rng);
                }
                v.clamp(0.0, 1.0) as f32
            })
            .collect();
        Frame::new(m.height, m.width, m.channels, px)
    }

    /// The frame as it would look without corruption.
    pub fn clean(&self, site: FrameSite) -> Frame {
        let mut rng = rng_for(self.manifest.seed, &[NOISE_STREAM, site.tracklet as u64, site.frame as u64]);
        self.render(site.identity, site.camera, &self.band_jitter(site.tracklet), &mut rng)
    }

    /// The stored frame and its flag: a clean render with at most one
    /// corruption, chosen by a single categorical draw.
    pub fn frame(&self, site: FrameSite) -> (Frame, FrameFlag) {
        let m = self.manifest;
        let noise = &m.noise;
        let mut rng = rng_for(m.seed, &[CORRUPT_STREAM, site.tracklet as u64, site.frame as u64]);
        let u: f64 = rng.gen();
        if u < noise.p_occlude {
            (occlude(&self.clean(site), noise, &mut rng), FrameFlag::Occluded)
        } else if u < noise.p_occlude + noise.p_misalign {
            (misalign(&self.clean(site), noise.max_shift, &mut rng), FrameFlag::Misaligned)
        } else if u < noise.p_occlude + noise.p_misalign + noise.p_idswitch {
            let other = (site.identity + rng.gen_range(1..m.num_identities)) % m.num_identities;
            let mut noise_rng = rng_for(m.seed, &[NOISE_STREAM, site.tracklet as u64, site.frame as u64]);
            (self.render(other, site.camera, &[], &mut noise_rng), FrameFlag::IdSwitch)
        } else {
            (self.clean(site), FrameFlag::Clean)
        }
    }
}

/// Axis-aligned rectangle `[top, top+h) × [left, left+w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.top..self.top + self.height).contains(&r) && (self.left..self.left + self.width).contains(&c)
    }
}

/// Draws the occluder rectangle and its gray level.
pub fn occluder<R: Rng>(height: usize, width: usize, noise: &NoiseSpec, rng: &mut R) -> (Rect, f32) {
    let mut side = |limit: usize| rng.gen_range(noise.occluder_min.min(limit)..=noise.occluder_max.min(limit));
    let (h, w) = (side(height), side(width));
    let top = rng.gen_range(0..=height - h);
    let left = rng.gen_range(0..=width - w);
    let gray = rng.gen_range(0.0..1.0f32);
    (
        Rect {
            top,
            left,
            height: h,
            width: w,
        },
        gray,
    )
}

/// Fills a random rectangle with one random gray level on every channel.
pub fn occlude<R: Rng>(frame: &Frame, noise: &NoiseSpec, rng: &mut R) -> Frame {
    let (rect, gray) = occluder(frame.height, frame.width, noise, rng);
    let mut out = frame.clone();
    let plane = frame.height * frame.width;
    for ch in 0..frame.channels {
        for r in rect.top..rect.top + rect.height {
            for c in rect.left..rect.left + rect.width {
                out.pixels[ch * plane + r * frame.width + c] = gray;
            }
        }
    }
    out
}

/// Shifts content by `(dy, dx)`; uncovered pixels become 0.
pub fn shift(frame: &Frame, dy: isize, dx: isize) -> Frame {
    let (h, w) = (frame.height as isize, frame.width as isize);
    let plane = frame.height * frame.width;
    let mut out = Frame::filled(frame.height, frame.width, frame.channels, 0.0);
    for ch in 0..frame.channels {
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = (r - dy, c - dx);
                if (0..h).contains(&sr) && (0..w).contains(&sc) {
                    out.pixels[ch * plane + (r * w + c) as usize] = frame.pixels[ch * plane + (sr * w + sc) as usize];
                }
            }
        }
    }
    out
}

/// Shift by a random nonzero offset of at most `max_shift` per axis.
pub fn misalign<R: Rng>(frame: &Frame, max_shift: usize, rng: &mut R) -> Frame {
    let m = max_shift.max(1) as isize;
    loop {
        let dy = rng.gen_range(-m..=m);
        let dx = rng.gen_range(-m..=m);
        if (dy, dx) != (0, 0) {
            return shift(frame, dy, dx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_depend_on_every_coordinate() {
        let a = derive_seed(1, &[2, 3]);
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
        assert_eq!(a, derive_seed(1, &[2, 3]));
    }

    #[test]
    fn shift_moves_content_and_zero_pads() {
        let f = Frame::new(2, 3, 1, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(shift(&f, 0, 1).pixels, [0., 1., 2., 0., 4., 5.]);
        assert_eq!(shift(&f, -1, 0).pixels, [4., 5., 6., 0., 0., 0.]);
    }

    #[test]
    fn camera_extremes_are_symmetric() {
        let n = NoiseSpec::default();
        let (b0, c0) = camera_photometry(&n, 0, 3);
        let (b1, c1) = camera_photometry(&n, 1, 3);
        let (b2, c2) = camera_photometry(&n, 2, 3);
        assert_eq!((b1, c1), (0.0, 1.0));
        assert!((b0 + b2).abs() < 1e-15 && (c0 + c2 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn distinct_identities_have_distinct_templates() {
        let m = DatasetManifest::default();
        let a = IdentityTemplate::new(&m, 0).frame();
        let b = IdentityTemplate::new(&m, 1).frame();
        let d: f32 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(d > 0.0);
    }
}
