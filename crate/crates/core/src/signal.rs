//! Training schedules and synthesis of the received block tensor.
//!
//! During block `b` the RIS holds phase row `Ψ[b, :]` while the users send the
//! pilot matrix `X`, so frontal slice `b` of the received tensor is
//!
//! ```text
//! Y[b] = (H_UA + H_RA · D_b(Ψ) · H_UR) · X + N[b]
//! ```
//!
//! which is the sum of the two CP terms `[[H_UA, Xᵀ, 1]]` and `[[H_RA, Zᵀ, Ψ]]`
//! with `Z = H_UR · X`. The two-stage scheme additionally records an RIS-OFF
//! stage `V = H_UA · X̄ + N` before the blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{ensure, ConfigError};
use crate::random::cn_matrix;
use crate::tensor::{dft_matrix, row_diag, CMatrix, CTensor3, TensorError};

/// Training layout used by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// RIS-OFF stage of `L′` slots, then `B = N` blocks with `Ψ = F_N`.
    TwoStage,
    /// `B = N + 1` blocks with `[1 Ψ] = F_{N+1}`. Also used by the LS baseline.
    EAls,
}

/// Scenario dimensions and powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// AP antennas `M`.
    pub antennas: usize,
    /// Single-antenna users `K`.
    pub users: usize,
    /// RIS elements `N`.
    pub ris_elements: usize,
    /// Blocks `B`.
    pub blocks: usize,
    /// Pilots per block `L`.
    pub pilots_per_block: usize,
    /// RIS-OFF stage length `L′`; zero when the scheme has no OFF stage.
    pub off_stage_len: usize,
    /// Per-user transmit power `P` (linear).
    pub power: f64,
    /// Noise power `σ²` (linear).
    pub noise_power: f64,
}

impl SystemConfig {
    /// Builds the configuration for `scheme`, deriving `B` from the phase
    /// schedule and using `L′ = L`. Noise power is fixed to 1 and the SNR is
    /// realized through `P`.
    pub fn new(
        antennas: usize,
        users: usize,
        ris_elements: usize,
        pilots_per_block: usize,
        scheme: Scheme,
        snr_db: f64,
    ) -> Self {
        let (blocks, off_stage_len) = match scheme {
            Scheme::TwoStage => (ris_elements, pilots_per_block),
            Scheme::EAls => (ris_elements + 1, 0),
        };
        Self {
            antennas,
            users,
            ris_elements,
            blocks,
            pilots_per_block,
            off_stage_len,
            power: 1.0,
            noise_power: 1.0,
        }
        .with_snr_db(snr_db)
    }

    /// `M = 4`, `K = 8`, `N = 25`, `L = K`.
    pub fn paper_default(scheme: Scheme, snr_db: f64) -> Self {
        Self::new(4, 8, 25, 8, scheme, snr_db)
    }

    /// Sets `P` so that `P/σ² = 10^{snr_db/10}`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.power = self.noise_power * 10f64.powf(snr_db / 10.0);
        self
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_power).log10()
    }

    /// Total training slots `T = L′ + B·L`.
    pub fn training_slots(&self) -> usize {
        self.off_stage_len + self.blocks * self.pilots_per_block
    }

    fn validate_common(&self) -> Result<(), ConfigError> {
        ensure(self.antennas >= 1, "M", "must be at least 1")?;
        ensure(self.users >= 1, "K", "must be at least 1")?;
        ensure(self.ris_elements >= 1, "N", "must be at least 1")?;
        ensure(self.blocks >= 1, "B", "must be at least 1")?;
        ensure(self.pilots_per_block >= 1, "L", "must be at least 1")?;
        ensure(
            self.pilots_per_block >= self.users,
            "L",
            format!(
                "L = {} pilots cannot be orthogonal across K = {} users",
                self.pilots_per_block, self.users
            ),
        )?;
        ensure(
            self.power.is_finite() && self.power > 0.0,
            "power",
            "must be positive",
        )?;
        ensure(
            self.noise_power.is_finite() && self.noise_power >= 0.0,
            "noise_power",
            "must be non-negative",
        )
    }

    /// Checks the identifiability conditions of `scheme`.
    pub fn validate(&self, scheme: Scheme) -> Result<(), ConfigError> {
        self.validate_common()?;
        let (m, k, n, b, l) = (
            self.antennas,
            self.users,
            self.ris_elements,
            self.blocks,
            self.pilots_per_block,
        );
        match scheme {
            Scheme::TwoStage => {
                ensure(b >= n, "B", format!("two-stage needs B >= N, got B = {b}, N = {n}"))?;
                ensure(
                    m * l * b >= n * (m + l),
                    "B",
                    "M·L·B must be at least N·(M + L)",
                )?;
                ensure(
                    self.off_stage_len >= k,
                    "L_off",
                    format!("RIS-OFF stage needs at least K = {k} slots"),
                )
            }
            Scheme::EAls => ensure(
                b * l >= n + k,
                "B",
                format!("E-ALS needs B·L >= N + K, got {} < {}", b * l, n + k),
            ),
        }
    }

    /// Extra condition for the stacked LS baseline: `B·L >= K·(N + 1)`.
    pub fn validate_ls(&self) -> Result<(), ConfigError> {
        self.validate_common()?;
        let need = self.users * (self.ris_elements + 1);
        ensure(
            self.blocks * self.pilots_per_block >= need,
            "B",
            format!(
                "LS baseline needs B·L >= K·(N + 1) = {need}, got {}",
                self.blocks * self.pilots_per_block
            ),
        )
    }
}

/// First `K` rows of an `L × L` DFT matrix scaled by `√P`.
pub fn make_pilots(users: usize, len: usize, power: f64) -> Result<CMatrix, ConfigError> {
    ensure(users >= 1, "K", "must be at least 1")?;
    ensure(
        len >= users,
        "L",
        format!("need at least K = {users} pilots for orthogonality, got {len}"),
    )?;
    let f = dft_matrix(len);
    let amp = power.sqrt();
    Ok(CMatrix::from_fn(users, len, |i, j| f.get(i, j) * amp))
}

/// RIS phase matrix `Ψ`: `F_N` for the two-stage scheme, `F_{N+1}` without
/// its all-ones first column for E-ALS.
pub fn make_phase_schedule(ris_elements: usize, scheme: Scheme) -> CMatrix {
    match scheme {
        Scheme::TwoStage => dft_matrix(ris_elements),
        Scheme::EAls => dft_matrix(ris_elements + 1).columns(1, ris_elements),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    /// `X`, `K × L`.
    pub pilots: CMatrix,
    /// `Ψ`, `B × N`, unit modulus.
    pub ris_phases: CMatrix,
    /// `X̄`, `K × L′`, present for the two-stage scheme.
    pub off_stage_pilots: Option<CMatrix>,
}

impl TrainingSchedule {
    /// The default DFT pilot and phase layout for `scheme`.
    pub fn for_scheme(cfg: &SystemConfig, scheme: Scheme) -> Result<Self, ConfigError> {
        let pilots = make_pilots(cfg.users, cfg.pilots_per_block, cfg.power)?;
        let ris_phases = make_phase_schedule(cfg.ris_elements, scheme);
        ensure(
            ris_phases.rows() == cfg.blocks,
            "B",
            format!(
                "phase schedule has {} blocks but B = {}",
                ris_phases.rows(),
                cfg.blocks
            ),
        )?;
        let off_stage_pilots = match scheme {
            Scheme::TwoStage => Some(make_pilots(cfg.users, cfg.off_stage_len, cfg.power)?),
            Scheme::EAls => None,
        };
        Ok(Self {
            pilots,
            ris_phases,
            off_stage_pilots,
        })
    }

    pub fn blocks(&self) -> usize {
        self.ris_phases.rows()
    }

    pub fn training_slots(&self) -> usize {
        self.off_stage_pilots.as_ref().map_or(0, CMatrix::cols)
            + self.blocks() * self.pilots.cols()
    }
}

/// Received training signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveTensor {
    /// `M × L × B`, slice `b` received during block `b`.
    pub tensor: CTensor3,
    /// `V`, `M × L′`, the RIS-OFF stage.
    pub off_stage: Option<CMatrix>,
}

/// `M × T` matrix of i.i.d. CN(0, σ²) noise, one column per training slot.
pub fn draw_noise<R: Rng + ?Sized>(
    rng: &mut R,
    antennas: usize,
    slots: usize,
    noise_power: f64,
) -> CMatrix {
    cn_matrix(rng, antennas, slots, noise_power)
}

fn check_shapes(
    channels: &ChannelSet,
    sched: &TrainingSchedule,
    noise: &CMatrix,
) -> Result<(), TensorError> {
    let shape_err = |left, right| TensorError::Shape {
        op: "synthesize",
        left,
        right,
    };
    let (m, k) = channels.h_ua.shape();
    if channels.h_ra.rows() != m {
        return Err(shape_err(channels.h_ua.shape(), channels.h_ra.shape()));
    }
    if channels.h_ur.shape() != (channels.h_ra.cols(), k) {
        return Err(shape_err(channels.h_ra.shape(), channels.h_ur.shape()));
    }
    if sched.pilots.rows() != k {
        return Err(shape_err(channels.h_ua.shape(), sched.pilots.shape()));
    }
    if sched.ris_phases.cols() != channels.h_ra.cols() {
        return Err(shape_err(channels.h_ra.shape(), sched.ris_phases.shape()));
    }
    if let Some(xb) = &sched.off_stage_pilots {
        if xb.rows() != k {
            return Err(shape_err(channels.h_ua.shape(), xb.shape()));
        }
    }
    if noise.rows() != m || noise.cols() < sched.training_slots() {
        return Err(shape_err((m, sched.training_slots()), noise.shape()));
    }
    Ok(())
}

/// Builds the received signal from a given noise matrix. The OFF stage takes
/// the first `L′` noise columns, block `b` the next `L` columns in order.
/// Extra trailing columns are ignored, so one noise draw can be shared across
/// schemes with different training lengths.
pub fn synthesize_with_noise(
    channels: &ChannelSet,
    sched: &TrainingSchedule,
    noise: &CMatrix,
) -> Result<ReceiveTensor, TensorError> {
    check_shapes(channels, sched, noise)?;
    let l = sched.pilots.cols();
    let mut at = 0;
    let off_stage = sched.off_stage_pilots.as_ref().map(|xb| {
        let v = &(&channels.h_ua * xb) + &noise.columns(0, xb.cols());
        at = xb.cols();
        v
    });
    let slices = (0..sched.blocks())
        .map(|b| {
            let d = row_diag(&sched.ris_phases, b).expect("block index in range");
            let eff = &channels.h_ua + &(&(&channels.h_ra * &d) * &channels.h_ur);
            &(&eff * &sched.pilots) + &noise.columns(at + b * l, l)
        })
        .collect();
    Ok(ReceiveTensor {
        tensor: CTensor3::from_slices(slices)?,
        off_stage,
    })
}

/// Draws CN(0, σ²) noise from `rng` and synthesizes the received signal.
pub fn synthesize<R: Rng + ?Sized>(
    channels: &ChannelSet,
    sched: &TrainingSchedule,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<ReceiveTensor, TensorError> {
    let noise = draw_noise(
        rng,
        channels.h_ua.rows(),
        sched.training_slots(),
        cfg.noise_power,
    );
    synthesize_with_noise(channels, sched, &noise)
}
