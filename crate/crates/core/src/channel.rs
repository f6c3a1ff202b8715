//! Geometric multipath channels between the users, the RIS and the AP.
//!
//! Every link is a sum of `R` rank-one path terms built from array steering
//! vectors, scaled by a log-distance pathloss and CN(0, 1) small-scale gains.
//! The AP is a uniform linear array, the RIS a uniform rectangular array.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ConfigError};
use crate::random::cn;
use crate::signal::SystemConfig;
use crate::tensor::{kronecker, CMatrix, C64};

/// Distance and pathloss exponent of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkGeometry {
    pub distance: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// RIS to AP.
    Ar,
    /// User to RIS.
    Ur,
    /// User to AP (direct path).
    Ua,
}

impl FromStr for Link {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Ok(Link::Ar),
            "ur" => Ok(Link::Ur),
            "ua" => Ok(Link::Ua),
            other => Err(ConfigError::new(
                "link",
                format!("unknown link `{other}`, expected one of ar, ur, ua"),
            )),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Ar => "ar",
            Link::Ur => "ur",
            Link::Ua => "ua",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModelConfig {
    /// Number of propagation paths per link.
    pub num_paths: usize,
    /// Element spacing over wavelength.
    pub spacing_ratio: f64,
    /// Pathloss at the reference distance, in dB.
    pub pathloss_ref_db: f64,
    /// Reference distance in meters.
    pub ref_distance: f64,
    pub ar: LinkGeometry,
    pub ur: LinkGeometry,
    pub ua: LinkGeometry,
    /// RIS grid as `[rows, cols]`. When absent the most square factorization of
    /// `N` is used.
    pub ris_grid: Option<[usize; 2]>,
}

impl Default for ChannelModelConfig {
    fn default() -> Self {
        Self {
            num_paths: 2,
            spacing_ratio: 0.5,
            pathloss_ref_db: -20.0,
            ref_distance: 1.0,
            ar: LinkGeometry {
                distance: 20.0,
                exponent: 2.1,
            },
            ur: LinkGeometry {
                distance: 20.0,
                exponent: 4.2,
            },
            ua: LinkGeometry {
                distance: 30.0,
                exponent: 2.2,
            },
            ris_grid: None,
        }
    }
}

impl ChannelModelConfig {
    pub fn link(&self, link: Link) -> LinkGeometry {
        match link {
            Link::Ar => self.ar,
            Link::Ur => self.ur,
            Link::Ua => self.ua,
        }
    }

    /// RIS grid for `n` elements.
    pub fn grid(&self, n: usize) -> (usize, usize) {
        match self.ris_grid {
            Some([r, c]) => (r, c),
            None => square_grid(n),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ConfigError> {
        ensure(self.num_paths >= 1, "num_paths", "must be at least 1")?;
        ensure(
            self.spacing_ratio.is_finite() && self.spacing_ratio > 0.0,
            "spacing_ratio",
            "must be positive",
        )?;
        ensure(self.pathloss_ref_db.is_finite(), "pathloss_ref_db", "must be finite")?;
        ensure(
            self.ref_distance.is_finite() && self.ref_distance > 0.0,
            "ref_distance",
            "must be positive",
        )?;
        for link in [Link::Ar, Link::Ur, Link::Ua] {
            let g = self.link(link);
            ensure(
                g.distance.is_finite() && g.distance > 0.0,
                &format!("{link}.distance"),
                "must be positive",
            )?;
            ensure(
                g.exponent.is_finite() && g.exponent > 0.0,
                &format!("{link}.exponent"),
                "must be positive",
            )?;
        }
        let (r, c) = self.grid(n);
        ensure(
            r >= 1 && c >= 1 && r * c == n,
            "ris_grid",
            format!("{r}x{c} grid does not hold N = {n} elements"),
        )
    }
}

/// Most square `rows × cols` factorization of `n` with `rows <= cols`.
pub fn square_grid(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    while rows > 1 && !n.is_multiple_of(rows) {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, n / rows)
}

/// Pathloss of `link` in dB: `ρ₀ − 10·α·log₁₀(d/d₀)`.
pub fn pathloss_db(cfg: &ChannelModelConfig, link: Link) -> f64 {
    let g = cfg.link(link);
    cfg.pathloss_ref_db - 10.0 * g.exponent * (g.distance / cfg.ref_distance).log10()
}

/// Linear power gain of `link`.
pub fn pathloss(cfg: &ChannelModelConfig, link: Link) -> f64 {
    10f64.powf(pathloss_db(cfg, link) / 10.0)
}

fn phase_ramp(len: usize, step: f64) -> CMatrix {
    CMatrix::from_fn(len, 1, |p, _| C64::from_polar(1.0, step * p as f64))
}

/// ULA response: entry `p` is `exp(i·2π·(l/λ)·p·sin θ)`.
pub fn steer_ula(m: usize, theta: f64, spacing_ratio: f64) -> CMatrix {
    phase_ramp(m, 2.0 * PI * spacing_ratio * theta.sin())
}

/// URA response `a_y ⊗ a_x` on a `rows × cols` grid, `x` varying fastest.
pub fn steer_ura(grid: (usize, usize), theta: f64, psi: f64, spacing_ratio: f64) -> CMatrix {
    let k = 2.0 * PI * spacing_ratio * theta.sin();
    let a_y = phase_ramp(grid.0, k * psi.sin());
    let a_x = phase_ramp(grid.1, k * psi.cos());
    kronecker(&a_y, &a_x)
}

/// Ground-truth channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Direct path, `M × K`.
    pub h_ua: CMatrix,
    /// RIS to AP, `M × N`.
    pub h_ra: CMatrix,
    /// Users to RIS, `N × K`.
    pub h_ur: CMatrix,
}

impl ChannelSet {
    /// `Z = H_UR · X`.
    pub fn z(&self, pilots: &CMatrix) -> CMatrix {
        &self.h_ur * pilots
    }

    /// `H_RA · H_UR`.
    pub fn cascade(&self) -> CMatrix {
        &self.h_ra * &self.h_ur
    }

    pub fn is_finite(&self) -> bool {
        self.h_ua.is_finite() && self.h_ra.is_finite() && self.h_ur.is_finite()
    }

    /// FNV-1a digest of every entry's bit pattern, used to confirm that paired
    /// estimators saw the same draw.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in [&self.h_ua, &self.h_ra, &self.h_ur] {
            for z in m.as_slice() {
                for bits in [z.re.to_bits(), z.im.to_bits()] {
                    for byte in bits.to_le_bytes() {
                        h ^= byte as u64;
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }
}

/// Angles of every path. AP angles lie in `[0, π/2)`, RIS elevations in
/// `[0, π/2)` and RIS azimuths in `[0, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Per path: (AP angle, RIS elevation, RIS azimuth).
    pub ra: Vec<(f64, f64, f64)>,
    /// Per user, per path: (RIS elevation, RIS azimuth).
    pub ur: Vec<Vec<(f64, f64)>>,
    /// Per user, per path: AP angle.
    pub ua: Vec<Vec<f64>>,
}

impl Geometry {
    pub fn draw<R: Rng + ?Sized>(paths: usize, users: usize, rng: &mut R) -> Self {
        let half = PI / 2.0;
        let ra = (0..paths)
            .map(|_| {
                (
                    rng.random_range(0.0..half),
                    rng.random_range(0.0..half),
                    rng.random_range(0.0..PI),
                )
            })
            .collect();
        let ur = (0..users)
            .map(|_| {
                (0..paths)
                    .map(|_| (rng.random_range(0.0..half), rng.random_range(0.0..PI)))
                    .collect()
            })
            .collect();
        let ua = (0..users)
            .map(|_| (0..paths).map(|_| rng.random_range(0.0..half)).collect())
            .collect();
        Self { ra, ur, ua }
    }

    /// Every angle set to `angle`.
    pub fn constant(paths: usize, users: usize, angle: f64) -> Self {
        Self {
            ra: vec![(angle, angle, angle); paths],
            ur: vec![vec![(angle, angle); paths]; users],
            ua: vec![vec![angle; paths]; users],
        }
    }
}

/// Small-scale fading coefficients, laid out like [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathGains {
    pub ra: Vec<C64>,
    pub ur: Vec<Vec<C64>>,
    pub ua: Vec<Vec<C64>>,
}

impl PathGains {
    pub fn draw<R: Rng + ?Sized>(paths: usize, users: usize, rng: &mut R) -> Self {
        let ra = (0..paths).map(|_| cn(rng)).collect();
        let ur = (0..users)
            .map(|_| (0..paths).map(|_| cn(rng)).collect())
            .collect();
        let ua = (0..users)
            .map(|_| (0..paths).map(|_| cn(rng)).collect())
            .collect();
        Self { ra, ur, ua }
    }

    pub fn constant(paths: usize, users: usize, gain: C64) -> Self {
        Self {
            ra: vec![gain; paths],
            ur: vec![vec![gain; paths]; users],
            ua: vec![vec![gain; paths]; users],
        }
    }
}

/// Assembles the channel matrices from explicit angles and gains.
pub fn assemble_channels(
    cfg: &ChannelModelConfig,
    dims: &SystemConfig,
    geometry: &Geometry,
    gains: &PathGains,
) -> ChannelSet {
    let (m, k, n) = (dims.antennas, dims.users, dims.ris_elements);
    let grid = cfg.grid(n);
    let sp = cfg.spacing_ratio;

    let mut h_ra = CMatrix::zeros(m, n);
    for (&(phi, theta, psi), &g) in geometry.ra.iter().zip(&gains.ra) {
        let ap = steer_ula(m, phi, sp);
        let ris = steer_ura(grid, theta, psi, sp);
        h_ra = &h_ra + &(&ap * &ris.adjoint()).scale(g);
    }
    h_ra = h_ra.scale_real(pathloss(cfg, Link::Ar).sqrt());

    let ur_amp = pathloss(cfg, Link::Ur).sqrt();
    let mut h_ur = CMatrix::zeros(n, k);
    for user in 0..k {
        for (&(theta, psi), &g) in geometry.ur[user].iter().zip(&gains.ur[user]) {
            let a = steer_ura(grid, theta, psi, sp);
            for e in 0..n {
                h_ur.set(e, user, h_ur.get(e, user) + a.get(e, 0) * g * ur_amp);
            }
        }
    }

    let ua_amp = pathloss(cfg, Link::Ua).sqrt();
    let mut h_ua = CMatrix::zeros(m, k);
    for user in 0..k {
        for (&theta, &g) in geometry.ua[user].iter().zip(&gains.ua[user]) {
            let a = steer_ula(m, theta, sp);
            for p in 0..m {
                h_ua.set(p, user, h_ua.get(p, user) + a.get(p, 0) * g * ua_amp);
            }
        }
    }

    ChannelSet { h_ua, h_ra, h_ur }
}

/// Draws angles and gains from `rng` and builds the channels.
pub fn draw_channels<R: Rng + ?Sized>(
    cfg: &ChannelModelConfig,
    dims: &SystemConfig,
    rng: &mut R,
) -> ChannelSet {
    let geometry = Geometry::draw(cfg.num_paths, dims.users, rng);
    let gains = PathGains::draw(cfg.num_paths, dims.users, rng);
    assemble_channels(cfg, dims, &geometry, &gains)
}
