//! Synthetic HR phantoms: random rotated ellipses carrying affine
//! intensity ramps over a flat background, plus a band-limited cosine
//! texture and optional Rician noise. Stands in for real scans while
//! exercising the two failure modes that matter for SR work -- sharp
//! edges and fine texture.

use crate::error::{Error, Result};
use crate::image::Image;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const BACKGROUND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    /// Square image side; must be a multiple of 4 so the k-space
    /// degradation (even dims at both scales) stays well-defined.
    pub dims: usize,
    pub ellipses_min: usize,
    pub ellipses_max: usize,
    /// Peak amplitude of the additive cosine texture; 0 disables.
    pub texture_amp: f64,
    /// Rician noise sigma; 0 disables.
    pub noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> PhantomConfig {
        PhantomConfig {
            dims: 320,
            ellipses_min: 4,
            ellipses_max: 9,
            texture_amp: 0.04,
            noise_sigma: 0.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims < 16 || self.dims % 4 != 0 {
            return Err(Error::Config(format!(
                "phantom dims {} must be a multiple of 4 and at least 16",
                self.dims
            )));
        }
        if self.ellipses_min == 0 || self.ellipses_min > self.ellipses_max {
            return Err(Error::Config(format!(
                "bad ellipse count range {}..={}",
                self.ellipses_min, self.ellipses_max
            )));
        }
        if self.texture_amp < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("texture and noise amplitudes must be >= 0".into()));
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos_t: f64,
    sin_t: f64,
    base: f64,
    gy: f64,
    gx: f64,
}

impl Ellipse {
    fn draw(rng: &mut ChaCha8Rng, dims: f64) -> Ellipse {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        Ellipse {
            cy: rng.gen_range(0.2..0.8) * dims,
            cx: rng.gen_range(0.2..0.8) * dims,
            a: rng.gen_range(0.06..0.30) * dims,
            b: rng.gen_range(0.06..0.30) * dims,
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            base: rng.gen_range(0.30..0.85),
            // ramp spans at most +-0.12 across the ellipse body
            gy: rng.gen_range(-0.12..0.12),
            gx: rng.gen_range(-0.12..0.12),
        }
    }

    /// Normalized elliptic radius: < 1 inside.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.a;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.b;
        u * u + v * v
    }

    fn intensity(&self, y: f64, x: f64) -> f64 {
        self.base + self.gy * (y - self.cy) / self.b + self.gx * (x - self.cx) / self.a
    }
}

/// Deterministic per seed; output values lie in [0, 1].
pub fn generate_phantom(cfg: &PhantomConfig, seed: u64) -> Result<Image> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.dims;
    let nf = n as f64;

    let count = rng.gen_range(cfg.ellipses_min..=cfg.ellipses_max);
    let ellipses: Vec<Ellipse> = (0..count).map(|_| Ellipse::draw(&mut rng, nf)).collect();

    // later ellipses paint over earlier ones, keeping edges sharp
    let mut img = Image::new(n, n, vec![BACKGROUND; n * n])?;
    for e in &ellipses {
        for y in 0..n {
            for x in 0..n {
                if e.radius(y as f64, x as f64) < 1.0 {
                    img.set(y, x, e.intensity(y as f64, x as f64));
                }
            }
        }
    }

    if cfg.texture_amp > 0.0 {
        // a handful of oriented cosines, frequencies chosen so part of
        // the band falls above the half-resolution Nyquist limit
        let comps: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                let cycles = rng.gen_range(3.0..(nf / 5.0).max(4.0));
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                (
                    cycles * angle.cos() / nf,
                    cycles * angle.sin() / nf,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.25..1.0),
                )
            })
            .collect();
        let norm: f64 = comps.iter().map(|c| c.3).sum();
        for y in 0..n {
            for x in 0..n {
                let mut t = 0.0;
                for &(fy, fx, ph, amp) in &comps {
                    t += amp
                        * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) + ph).cos();
                }
                let v = img.at(y, x) + cfg.texture_amp * t / norm;
                img.set(y, x, v);
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        // magnitude-image noise: |signal + complex gaussian|
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma checked nonneg");
        for y in 0..n {
            for x in 0..n {
                let re = img.at(y, x) + normal.sample(&mut rng);
                let im: f64 = normal.sample(&mut rng);
                img.set(y, x, (re * re + im * im).sqrt());
            }
        }
    }

    Ok(img.clip(0.0, 1.0))
}
