//! Synthetic single-segment constant-curvature finger.
//!
//! Two commands drive the segment: `u1` sets the bend angle
//! `phi = curvature_gain * u1 * L` and `u2` sets the bending-plane angle
//! `psi = plane_gain * u2`. The tip of an arc of length `L` and radius
//! `r = L / phi` sits at
//!
//! ```text
//! x = r (1 - cos phi) cos psi
//! y = r (1 - cos phi) sin psi
//! z = r sin phi
//! ```
//!
//! Each split role draws commands from its own box, so the extrapolation split
//! can be placed outside the training box to produce distribution drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Sample, SplitBundle};

/// Below this bend angle the tip is evaluated from its Taylor expansion.
const SMALL_BEND: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRange {
    pub lo: f64,
    pub hi: f64,
}

impl CommandRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    /// Ranges sharing only an endpoint count as disjoint.
    fn disjoint_from(&self, other: &CommandRange) -> bool {
        self.hi <= other.lo || other.hi <= self.lo
    }

    fn contains(&self, other: &CommandRange) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

/// Command boxes (one range per command) for each split role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: [CommandRange; 2],
    pub calibration: [CommandRange; 2],
    pub test: [CommandRange; 2],
    pub extrapolation: [CommandRange; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub calibration: usize,
    pub test: usize,
    pub extrapolation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub segment_length: f64,
    pub curvature_gain: f64,
    pub plane_gain: f64,
    pub ranges: SplitRanges,
    pub noise_std: f64,
    pub seed: u64,
    pub sizes: SplitSizes,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let inner = [CommandRange::new(0.0, 1.2), CommandRange::new(-1.0, 1.0)];
        Self {
            segment_length: 100.0,
            curvature_gain: 0.02,
            plane_gain: 1.0,
            ranges: SplitRanges {
                train: inner,
                calibration: inner,
                test: inner,
                extrapolation: [CommandRange::new(1.2, 1.5), CommandRange::new(-1.0, 1.0)],
            },
            noise_std: 0.5,
            seed: 0,
            sizes: SplitSizes {
                train: 800,
                calibration: 500,
                test: 500,
                extrapolation: 500,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic config: {msg}")));
        if !(self.segment_length.is_finite() && self.segment_length > 0.0) {
            return bad(format!("segment_length must be positive, got {}", self.segment_length));
        }
        if !self.curvature_gain.is_finite() || !self.plane_gain.is_finite() {
            return bad("gains must be finite".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        if self.sizes.train == 0 {
            return bad("train size must be at least 1".into());
        }
        let r = &self.ranges;
        for (name, rs) in [
            ("train", &r.train),
            ("calibration", &r.calibration),
            ("test", &r.test),
            ("extrapolation", &r.extrapolation),
        ] {
            if let Some(c) = rs.iter().find(|c| !c.is_valid()) {
                return bad(format!("{name} range {c:?} is not an interval"));
            }
        }
        // Each extrapolation range must be disjoint from or cover its training range,
        // and at least one must actually differ.
        let mut drifted = false;
        for (e, t) in r.extrapolation.iter().zip(&r.train) {
            if e.disjoint_from(t) {
                drifted = true;
            } else if e.contains(t) {
                drifted |= e != t;
            } else {
                return bad(format!(
                    "extrapolation range {e:?} neither disjoint from nor wider than training range {t:?}"
                ));
            }
        }
        if !drifted && self.sizes.extrapolation > 0 {
            return bad("extrapolation ranges equal the training ranges".into());
        }
        Ok(())
    }

    /// Noise-free tip position for commands `(u1, u2)`.
    pub fn tip(&self, u1: f64, u2: f64) -> [f64; 3] {
        let phi = self.curvature_gain * u1 * self.segment_length;
        let psi = self.plane_gain * u2;
        constant_curvature_tip(phi, psi, self.segment_length)
    }
}

/// Tip of a constant-curvature arc of length `length` bent by `phi` in the plane at angle `psi`.
pub fn constant_curvature_tip(phi: f64, psi: f64, length: f64) -> [f64; 3] {
    // radial = r (1 - cos phi) = 2 r sin^2(phi / 2), axial = r sin phi, with r = length / phi
    let (radial, axial) = if phi.abs() < SMALL_BEND {
        let p2 = phi * phi;
        (length * phi * (0.5 - p2 / 24.0), length * (1.0 - p2 / 6.0))
    } else {
        let r = length / phi;
        let half = (phi / 2.0).sin();
        (2.0 * r * half * half, r * phi.sin())
    };
    [radial * psi.cos(), radial * psi.sin(), axial]
}

/// Draws the four split parts. Each role uses its own ChaCha8 stream, so the
/// parts do not depend on each other's sizes.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SplitBundle> {
    cfg.validate()?;
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let draw = |stream: u64, ranges: &[CommandRange; 2], size: usize| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let samples = (0..size)
            .map(|_| {
                let u: Vec<f64> = ranges.iter().map(|c| uniform(&mut rng, c)).collect();
                let mut x = cfg.tip(u[0], u[1]).to_vec();
                if let Some(dist) = &noise {
                    for v in &mut x {
                        *v += dist.sample(&mut rng);
                    }
                }
                Sample::new(u, x)
            })
            .collect();
        Dataset::new(
            samples,
            vec!["u1".into(), "u2".into()],
            vec!["x".into(), "y".into(), "z".into()],
        )
    };
    let r = &cfg.ranges;
    let s = &cfg.sizes;
    SplitBundle::new(
        draw(0, &r.train, s.train)?,
        draw(1, &r.calibration, s.calibration)?,
        draw(2, &r.test, s.test)?,
        draw(3, &r.extrapolation, s.extrapolation)?,
    )
}

fn uniform(rng: &mut ChaCha8Rng, c: &CommandRange) -> f64 {
    if c.lo == c.hi {
        c.lo
    } else {
        rng.random_range(c.lo..=c.hi)
    }
}
