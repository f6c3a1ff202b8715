//! Channel estimators: the two-stage RIS OFF-ON method, enhanced ALS (E-ALS),
//! and a stacked least-squares baseline.
//!
//! Both iterative methods work on the mode-1 and mode-2 unfoldings of the
//! received tensor. With `Z = H_UR · X`,
//!
//! ```text
//! Y₁ = H_UA (1 ⋄ Xᵀ)ᵀ + H_RA (Ψ ⋄ Zᵀ)ᵀ
//! Y₂ = Xᵀ (1 ⋄ H_UA)ᵀ + Zᵀ (Ψ ⋄ H_RA)ᵀ
//! ```
//!
//! and each half-step is the exact least-squares minimizer of the same fit
//! residual with the other factor held fixed, so the residual never grows.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::error::{ensure, ConfigError};
use crate::random::cn_matrix;
use crate::signal::{ReceiveTensor, TrainingSchedule};
use crate::tensor::{
    khatri_rao, kronecker, pinv_left, pinv_right, unfold_mode1, unfold_mode2, CMatrix, CTensor3,
    OpTally, TensorError, DEFAULT_PINV_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Iteration cap `I_max`.
    pub max_iters: usize,
    /// Relative-change threshold `δ`.
    pub conv_threshold: f64,
    /// Relative singular-value cutoff for every pseudoinverse.
    pub pinv_tol: f64,
    /// Base seed for the random factor initialization.
    pub init_seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            conv_threshold: 1e-8,
            pinv_tol: DEFAULT_PINV_TOL,
            init_seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.max_iters >= 1, "max_iters", "must be at least 1")?;
        ensure(
            self.conv_threshold.is_finite() && self.conv_threshold > 0.0,
            "conv_threshold",
            "must be positive",
        )?;
        ensure(
            self.pinv_tol.is_finite() && self.pinv_tol > 0.0 && self.pinv_tol < 1.0,
            "pinv_tol",
            "must lie in (0, 1)",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("{stage} failed at iteration {iteration}: {source}")]
    Singular {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: TensorError,
    },
    #[error("two-stage estimation needs the RIS-OFF stage signal")]
    MissingOffStage,
    #[error("inconsistent inputs: {0}")]
    Shape(#[from] TensorError),
}

/// Decoupled channel estimates from one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    /// `Ĥ_UA`, absent when only the RIS factors were fitted.
    pub h_ua_hat: Option<CMatrix>,
    pub h_ur_hat: CMatrix,
    pub h_ra_hat: CMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Complex multiply-accumulates spent by the algorithm-level formulas.
    pub op_count: u64,
    /// Fit residual `‖Y₁ − model‖²_F` after each iteration.
    pub residuals: Vec<f64>,
    /// `‖Y₁‖²_F` of the data that was fitted.
    pub data_energy: f64,
}

impl ChannelEstimate {
    /// `Ĥ_RA · Ĥ_UR`.
    pub fn cascade(&self) -> CMatrix {
        &self.h_ra_hat * &self.h_ur_hat
    }

    /// Stacked parameters `[vec(Ĥ_UA); vec(Ĥ_URᵀ ⋄ Ĥ_RA)]`, if `Ĥ_UA` is present.
    pub fn parameter_vector(&self) -> Option<ParameterVector> {
        let h_ua = self.h_ua_hat.clone()?;
        let cascaded = khatri_rao(&self.h_ur_hat.transpose(), &self.h_ra_hat)
            .expect("estimate factors share N");
        Some(ParameterVector { h_ua, cascaded })
    }
}

/// The parameter vector `h = [vec(H_UA); vec(H_URᵀ ⋄ H_RA)]` kept in matrix
/// form. Row block `k` of `cascaded` is `G_k = H_RA · diag(h_UR,k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    /// `M × K`.
    pub h_ua: CMatrix,
    /// `K·M × N`.
    pub cascaded: CMatrix,
}

impl ParameterVector {
    pub fn from_channels(truth: &ChannelSet) -> Self {
        Self {
            h_ua: truth.h_ua.clone(),
            cascaded: khatri_rao(&truth.h_ur.transpose(), &truth.h_ra)
                .expect("channel factors share N"),
        }
    }
}

/// Output of the stacked LS baseline, which has no decoupled RIS factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LsEstimate {
    pub params: ParameterVector,
    pub op_count: u64,
}

fn singular(stage: &'static str, iteration: usize) -> impl FnOnce(TensorError) -> EstimatorError {
    move |source| match source {
        TensorError::Singular { .. } => EstimatorError::Singular {
            stage,
            iteration,
            source,
        },
        other => EstimatorError::Shape(other),
    }
}

/// `‖new − old‖²_F / ‖new‖²_F ≤ δ`; a vanishing current iterate counts as
/// converged.
fn settled(new: &CMatrix, old: &CMatrix, delta: f64) -> bool {
    let denom = new.frob_norm_sq();
    if denom < 1e-300 {
        return true;
    }
    (new - old).frob_norm_sq() / denom <= delta
}

/// Stage-1 direct path estimate `V · X̄†`.
pub fn ls_direct_path(v: &CMatrix, x_bar: &CMatrix, tol: f64) -> Result<CMatrix, EstimatorError> {
    direct_path_tallied(v, x_bar, tol, &mut OpTally::default())
}

fn direct_path_tallied(
    v: &CMatrix,
    x_bar: &CMatrix,
    tol: f64,
    tally: &mut OpTally,
) -> Result<CMatrix, EstimatorError> {
    if v.cols() != x_bar.cols() {
        return Err(EstimatorError::Shape(TensorError::Shape {
            op: "ls_direct_path",
            left: v.shape(),
            right: x_bar.shape(),
        }));
    }
    // The pilot pseudoinverse is known before run time and is not charged.
    let x_pinv = pinv_right(x_bar, tol).map_err(singular("stage-1 LS", 0))?;
    Ok(tally.mul(v, &x_pinv))
}

/// `Q[b] = Y[b] − Ĥ_UA · X` for every block.
pub fn subtract_direct_path(
    y: &CTensor3,
    h_ua: &CMatrix,
    pilots: &CMatrix,
) -> Result<CTensor3, TensorError> {
    let direct = h_ua.matmul(pilots)?;
    if direct.shape() != (y.dims().0, y.dims().1) {
        return Err(TensorError::Shape {
            op: "subtract_direct_path",
            left: (y.dims().0, y.dims().1),
            right: direct.shape(),
        });
    }
    y.map_slices(|_, s| s - &direct)
}

/// Algorithm 1: ALS on the single CP term `[[H_RA, Zᵀ, Ψ]]` of a tensor whose
/// direct path has been removed. Returns `Ĥ_RA`, `Ĥ_UR = Ẑ·X†`, no `Ĥ_UA`.
pub fn als_ris<R: Rng + ?Sized>(
    q: &CTensor3,
    sched: &TrainingSchedule,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<ChannelEstimate, EstimatorError> {
    let mut tally = OpTally::default();
    als_ris_tallied(q, sched, cfg, rng, &mut tally)
}

fn check_tensor(t: &CTensor3, sched: &TrainingSchedule) -> Result<(), EstimatorError> {
    let (_, l, b) = t.dims();
    if l != sched.pilots.cols() || b != sched.blocks() {
        return Err(EstimatorError::Shape(TensorError::Shape {
            op: "received tensor vs schedule",
            left: (l, b),
            right: (sched.pilots.cols(), sched.blocks()),
        }));
    }
    Ok(())
}

fn als_ris_tallied<R: Rng + ?Sized>(
    q: &CTensor3,
    sched: &TrainingSchedule,
    cfg: &EstimatorConfig,
    rng: &mut R,
    tally: &mut OpTally,
) -> Result<ChannelEstimate, EstimatorError> {
    check_tensor(q, sched)?;
    let (m, _, _) = q.dims();
    let x = &sched.pilots;
    let psi = &sched.ris_phases;
    let (k, n) = (x.rows(), psi.cols());

    let q1 = unfold_mode1(q);
    let data_energy = q1.frob_norm_sq();
    let q2t = unfold_mode2(q).transpose();

    let h_ur0 = cn_matrix(rng, n, k, 1.0);
    let mut h_ra = cn_matrix(rng, m, n, 1.0);
    let mut z = tally.mul(&h_ur0, x);

    let mut residuals = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let it = iterations + 1;

        // Ĥ_RA = Q₁ ((Ψ ⋄ Ẑᵀ)ᵀ)†
        let regressor = khatri_rao(psi, &z.transpose())?.transpose();
        tally.add((regressor.rows() * regressor.cols()) as u64);
        let r_pinv = pinv_right(&regressor, cfg.pinv_tol).map_err(singular("ALS H_RA update", it))?;
        tally.charge_pinv(&regressor);
        let h_ra_new = tally.mul(&q1, &r_pinv);

        // Ẑ = (Ψ ⋄ Ĥ_RA)† Q₂ᵀ
        let design = khatri_rao(psi, &h_ra_new)?;
        tally.add((design.rows() * design.cols()) as u64);
        let d_pinv = pinv_left(&design, cfg.pinv_tol).map_err(singular("ALS Z update", it))?;
        tally.charge_pinv(&design);
        let z_new = tally.mul(&d_pinv, &q2t);

        let fit = &h_ra_new * &khatri_rao(psi, &z_new.transpose())?.transpose();
        residuals.push((&q1 - &fit).frob_norm_sq());

        let done = settled(&z_new, &z, cfg.conv_threshold)
            && settled(&h_ra_new, &h_ra, cfg.conv_threshold);
        z = z_new;
        h_ra = h_ra_new;
        iterations = it;
        if done {
            converged = true;
            break;
        }
    }

    let x_pinv = pinv_right(x, cfg.pinv_tol).map_err(singular("H_UR recovery", iterations))?;
    let h_ur = tally.mul(&z, &x_pinv);
    Ok(ChannelEstimate {
        h_ua_hat: None,
        h_ur_hat: h_ur,
        h_ra_hat: h_ra,
        iterations,
        converged,
        op_count: tally.macs,
        residuals,
        data_energy,
    })
}

/// Two-stage RIS OFF-ON: LS direct path from the OFF stage, then ALS on the
/// blocks with that direct path subtracted.
pub fn two_stage_estimate<R: Rng + ?Sized>(
    recv: &ReceiveTensor,
    sched: &TrainingSchedule,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<ChannelEstimate, EstimatorError> {
    let v = recv.off_stage.as_ref().ok_or(EstimatorError::MissingOffStage)?;
    let x_bar = sched
        .off_stage_pilots
        .as_ref()
        .ok_or(EstimatorError::MissingOffStage)?;
    let mut tally = OpTally::default();
    let h_ua = direct_path_tallied(v, x_bar, cfg.pinv_tol, &mut tally)?;
    let q = subtract_direct_path(&recv.tensor, &h_ua, &sched.pilots)?;
    let (m, l, b) = q.dims();
    tally.add((m * h_ua.cols() * l + m * l * b) as u64);
    let mut est = als_ris_tallied(&q, sched, cfg, rng, &mut tally)?;
    est.h_ua_hat = Some(h_ua);
    est.op_count = tally.macs;
    Ok(est)
}

/// Algorithm 2: E-ALS jointly fitting both CP terms of the received tensor.
pub fn e_als_estimate<R: Rng + ?Sized>(
    recv: &ReceiveTensor,
    sched: &TrainingSchedule,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<ChannelEstimate, EstimatorError> {
    let y = &recv.tensor;
    check_tensor(y, sched)?;
    let mut tally = OpTally::default();
    let (m, _, b) = y.dims();
    let x = &sched.pilots;
    let psi = &sched.ris_phases;
    let (k, n) = (x.rows(), psi.cols());
    let ones = CMatrix::ones(b, k);

    let y1 = unfold_mode1(y);
    let data_energy = y1.frob_norm_sq();
    let y2t = unfold_mode2(y).transpose();
    // (1 ⋄ Xᵀ)ᵀ is fixed across iterations.
    let direct_regressor = khatri_rao(&ones, &x.transpose())?.transpose();

    let mut h_ua = cn_matrix(rng, m, k, 1.0);
    let h_ur0 = cn_matrix(rng, n, k, 1.0);
    let mut h_ra = cn_matrix(rng, m, n, 1.0);
    let mut z = tally.mul(&h_ur0, x);

    let mut residuals = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let it = iterations + 1;

        // [Ĥ_UA Ĥ_RA] = Y₁ [(1 ⋄ Xᵀ)ᵀ; (Ψ ⋄ Ẑᵀ)ᵀ]†
        let ris_regressor = khatri_rao(psi, &z.transpose())?.transpose();
        tally.add((ris_regressor.rows() * ris_regressor.cols()) as u64);
        let stacked = CMatrix::vstack(&[&direct_regressor, &ris_regressor])?;
        let s_pinv = pinv_right(&stacked, cfg.pinv_tol).map_err(singular("E-ALS joint update", it))?;
        tally.charge_pinv(&stacked);
        let joint = tally.mul(&y1, &s_pinv);
        let h_ua_new = joint.columns(0, k);
        let h_ra_new = joint.columns(k, n);

        // Ẑ = (Ψ ⋄ Ĥ_RA)† (Y₂ᵀ − (1 ⋄ Ĥ_UA) X)
        let direct_part = tally.mul(&khatri_rao(&ones, &h_ua_new)?, x);
        let target = &y2t - &direct_part;
        let design = khatri_rao(psi, &h_ra_new)?;
        tally.add((design.rows() * design.cols()) as u64);
        let d_pinv = pinv_left(&design, cfg.pinv_tol).map_err(singular("E-ALS Z update", it))?;
        tally.charge_pinv(&design);
        let z_new = tally.mul(&d_pinv, &target);

        let fit = &(&h_ua_new * &direct_regressor)
            + &(&h_ra_new * &khatri_rao(psi, &z_new.transpose())?.transpose());
        residuals.push((&y1 - &fit).frob_norm_sq());

        let done = settled(&h_ua_new, &h_ua, cfg.conv_threshold)
            && settled(&z_new, &z, cfg.conv_threshold)
            && settled(&h_ra_new, &h_ra, cfg.conv_threshold);
        h_ua = h_ua_new;
        h_ra = h_ra_new;
        z = z_new;
        iterations = it;
        if done {
            converged = true;
            break;
        }
    }

    let x_pinv = pinv_right(x, cfg.pinv_tol).map_err(singular("H_UR recovery", iterations))?;
    let h_ur = tally.mul(&z, &x_pinv);
    Ok(ChannelEstimate {
        h_ua_hat: Some(h_ua),
        h_ur_hat: h_ur,
        h_ra_hat: h_ra,
        iterations,
        converged,
        op_count: tally.macs,
        residuals,
        data_energy,
    })
}

/// Counts iterations whose fit residual rose by more than `slack` relative to
/// the previous one. Rises below `floor` in absolute terms are rounding noise
/// of an exact fit and are ignored.
pub fn objective_violations(residuals: &[f64], slack: f64, floor: f64) -> usize {
    residuals
        .windows(2)
        .filter(|w| w[1] - w[0] > slack * w[0] + floor)
        .count()
}

/// `[1 Ψ]ᵀ`, the `(N+1) × B` per-block coefficient pattern of the LS model.
fn ls_block_pattern(sched: &TrainingSchedule) -> Result<CMatrix, TensorError> {
    let ones = CMatrix::ones(sched.blocks(), 1);
    Ok(CMatrix::hstack(&[&ones, &sched.ris_phases])?.transpose())
}

/// Stacked LS regressor `[(1 ⋄ Xᵀ)ᵀ; (Ψ ⊗ Xᵀ)ᵀ] = [1 Ψ]ᵀ ⊗ X`, shape
/// `K(N+1) × BL`. Row `k` carries the direct path of user `k`, row
/// `K + n·K + k` the cascaded coefficient of user `k` through element `n`.
pub fn ls_regressor(sched: &TrainingSchedule) -> Result<CMatrix, TensorError> {
    Ok(kronecker(&ls_block_pattern(sched)?, &sched.pilots))
}

/// Least-squares estimate of `[vec(H_UA); vec(H_URᵀ ⋄ H_RA)]` from all blocks.
///
/// Every antenna sees the same regressor, so the `M·K(N+1)` unknowns split
/// into `M` independent rows solved together as `Y₁ · A†`. The regressor is a
/// Kronecker product, so `A† = ([1 Ψ]ᵀ)† ⊗ X†` and only the two small factors
/// are ever factorized.
pub fn ls_baseline(
    recv: &ReceiveTensor,
    sched: &TrainingSchedule,
    cfg: &EstimatorConfig,
) -> Result<LsEstimate, EstimatorError> {
    let y = &recv.tensor;
    check_tensor(y, sched)?;
    let (m, _, _) = y.dims();
    let (k, n) = (sched.pilots.rows(), sched.ris_phases.cols());
    let mut tally = OpTally::default();

    let pattern = ls_block_pattern(sched)?;
    let pattern_pinv = pinv_right(&pattern, cfg.pinv_tol).map_err(singular("LS baseline", 0))?;
    tally.charge_pinv(&pattern);
    let x_pinv = pinv_right(&sched.pilots, cfg.pinv_tol).map_err(singular("LS baseline", 0))?;
    let r_pinv = kronecker(&pattern_pinv, &x_pinv);
    let theta = tally.mul(&unfold_mode1(y), &r_pinv);

    let h_ua = theta.columns(0, k);
    let cascaded = CMatrix::from_fn(k * m, n, |row, e| theta.get(row % m, k + e * k + row / m));
    Ok(LsEstimate {
        params: ParameterVector { h_ua, cascaded },
        op_count: tally.macs,
    })
}

/// Outcome of fixing the per-element scaling ambiguity against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResolution {
    pub estimate: ChannelEstimate,
    /// Columns whose first-row reference was unusable; these used the row of
    /// largest true modulus instead.
    pub fallback_columns: Vec<usize>,
}

/// Removes the `Ĥ_RA Δ, Δ⁻¹ Ĥ_UR` ambiguity by matching row 0 of `Ĥ_RA` to
/// row 0 of `H_RA`: `λ_n = Ĥ_RA[0,n] / H_RA[0,n]`, then `Ĥ_RA ← Ĥ_RA diag(λ)⁻¹`
/// and `Ĥ_UR ← diag(λ) Ĥ_UR`. The cascade is unchanged.
pub fn resolve_scaling(est: &ChannelEstimate, truth: &ChannelSet) -> ScalingResolution {
    let mut h_ra = est.h_ra_hat.clone();
    let mut h_ur = est.h_ur_hat.clone();
    let mut fallback_columns = Vec::new();
    let (m, n) = truth.h_ra.shape();

    for col in 0..n {
        let col_max = (0..m)
            .map(|r| truth.h_ra.get(r, col).norm())
            .fold(0.0, f64::max);
        let mut row = 0;
        let reference = truth.h_ra.get(0, col).norm();
        if reference.is_nan() || reference <= 1e-12 * col_max || est.h_ra_hat.get(0, col).norm() == 0.0 {
            fallback_columns.push(col);
            row = (0..m)
                .max_by(|&a, &b| {
                    truth.h_ra.get(a, col)
                        .norm()
                        .total_cmp(&truth.h_ra.get(b, col).norm())
                })
                .unwrap_or(0);
        }
        let lambda = est.h_ra_hat.get(row, col) / truth.h_ra.get(row, col);
        if !(lambda.norm() > 0.0 && lambda.re.is_finite() && lambda.im.is_finite()) {
            continue;
        }
        for r in 0..h_ra.rows() {
            h_ra.set(r, col, h_ra.get(r, col) / lambda);
        }
        for c in 0..h_ur.cols() {
            h_ur.set(col, c, h_ur.get(col, c) * lambda);
        }
    }

    ScalingResolution {
        estimate: ChannelEstimate {
            h_ra_hat: h_ra,
            h_ur_hat: h_ur,
            ..est.clone()
        },
        fallback_columns,
    }
}
