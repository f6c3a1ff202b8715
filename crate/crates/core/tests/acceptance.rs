//! Exit criteria for the estimator suite. Each criterion prints one
//! `PASS`/`FAIL` line; the process exits non-zero if any criterion fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::thread;

use rand::Rng;
use ris_ce::channel::{draw_channels, ChannelModelConfig};
use ris_ce::estimators::{
    e_als_estimate, resolve_scaling, two_stage_estimate, ChannelEstimate, EstimatorConfig,
};
use ris_ce::harness::{run_experiment, summarize, Aggregate, EstimatorKind, ExperimentConfig};
use ris_ce::metrics::{complexity_formula, nmse, Update};
use ris_ce::random::{cn, cn_matrix, derive_seed, stream};
use ris_ce::signal::{synthesize_with_noise, Scheme, SystemConfig, TrainingSchedule};
use ris_ce::tensor::{khatri_rao, unfold_mode1, unfold_mode2, CMatrix};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn noiseless(sched: &TrainingSchedule, ch: &ris_ce::channel::ChannelSet) -> ris_ce::signal::ReceiveTensor {
    let noise = CMatrix::zeros(ch.h_ua.rows(), sched.training_slots());
    synthesize_with_noise(ch, sched, &noise).unwrap()
}

fn tensor_model_identity() -> Outcome {
    let chan = ChannelModelConfig::default();
    let mut worst: f64 = 0.0;
    for draw in 0..50u64 {
        let mut rng = stream(derive_seed(101, &[draw]));
        let snr = rng.random_range(0.0..40.0);
        let dims = SystemConfig::paper_default(Scheme::EAls, snr);
        let sched = TrainingSchedule::for_scheme(&dims, Scheme::EAls).unwrap();
        let ch = draw_channels(&chan, &dims, &mut rng);
        let y = noiseless(&sched, &ch).tensor;
        assert_eq!(y.dims(), (4, 8, 26));

        let ones = CMatrix::ones(sched.blocks(), dims.users);
        let x = &sched.pilots;
        let z = ch.z(x);
        let psi = &sched.ris_phases;
        let y1 = &(&ch.h_ua * &khatri_rao(&ones, &x.transpose()).unwrap().transpose())
            + &(&ch.h_ra * &khatri_rao(psi, &z.transpose()).unwrap().transpose());
        let y2 = &(&x.transpose() * &khatri_rao(&ones, &ch.h_ua).unwrap().transpose())
            + &(&z.transpose() * &khatri_rao(psi, &ch.h_ra).unwrap().transpose());
        worst = worst
            .max(unfold_mode1(&y).rel_error(&y1))
            .max(unfold_mode2(&y).rel_error(&y2));
    }
    Outcome::new(worst <= 1e-12, format!("worst relative error {worst:.3e} over 50 draws (bound 1e-12)"))
}

fn noiseless_recovery() -> Outcome {
    let chan = ChannelModelConfig::default();
    let cfg = EstimatorConfig {
        max_iters: 50,
        ..Default::default()
    };
    let (mut ea_ua, mut ea_cas, mut ts_cas): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut max_iters = 0;
    for seed in 0..20u64 {
        let ea_dims = SystemConfig::paper_default(Scheme::EAls, 0.0);
        let ts_dims = SystemConfig::paper_default(Scheme::TwoStage, 0.0);
        let ch = draw_channels(&chan, &ea_dims, &mut stream(derive_seed(202, &[seed])));

        let sched = TrainingSchedule::for_scheme(&ea_dims, Scheme::EAls).unwrap();
        let mut rng = stream(derive_seed(202, &[seed, 1]));
        let est = e_als_estimate(&noiseless(&sched, &ch), &sched, &cfg, &mut rng).unwrap();
        ea_ua = ea_ua.max(nmse(est.h_ua_hat.as_ref().unwrap(), &ch.h_ua).unwrap());
        ea_cas = ea_cas.max(nmse(&est.cascade(), &ch.cascade()).unwrap());
        max_iters = max_iters.max(est.iterations);

        let sched = TrainingSchedule::for_scheme(&ts_dims, Scheme::TwoStage).unwrap();
        let mut rng = stream(derive_seed(202, &[seed, 2]));
        let est = two_stage_estimate(&noiseless(&sched, &ch), &sched, &cfg, &mut rng).unwrap();
        ts_cas = ts_cas.max(nmse(&est.cascade(), &ch.cascade()).unwrap());
        max_iters = max_iters.max(est.iterations);
    }
    Outcome::new(
        ea_ua <= 1e-8 && ea_cas <= 1e-6 && ts_cas <= 1e-6,
        format!(
            "worst over 20 seeds: e_als H_UA {ea_ua:.2e}, e_als cascade {ea_cas:.2e}, two_stage cascade {ts_cas:.2e}, max iterations {max_iters}"
        ),
    )
}

fn find(summary: &[Aggregate], kind: EstimatorKind, snr: f64) -> &Aggregate {
    summary
        .iter()
        .find(|a| a.estimator == kind && a.snr_db == snr)
        .expect("every estimator ran at every SNR")
}

fn estimator_ordering(cfg: &ExperimentConfig, summary: &[Aggregate]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &snr in &cfg.snr_grid_db {
        let ea = find(summary, EstimatorKind::EAls, snr).mean_nmse_aggregate.unwrap();
        let ls = find(summary, EstimatorKind::Ls, snr).mean_nmse_aggregate.unwrap();
        let ts = find(summary, EstimatorKind::TwoStage, snr).mean_nmse_aggregate.unwrap();
        pass &= ea <= ls && ls <= ts;
        parts.push(format!("{snr} dB: e_als {ea:.3e} ls {ls:.3e} two_stage {ts:.3e}"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn individual_channel_gap(cfg: &ExperimentConfig, summary: &[Aggregate]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &snr in &cfg.snr_grid_db {
        let ea = find(summary, EstimatorKind::EAls, snr);
        let ts = find(summary, EstimatorKind::TwoStage, snr);
        let rows = [
            ("H_UA", ea.mean_nmse_h_ua, ts.mean_nmse_h_ua),
            ("H_UR", ea.mean_nmse_h_ur, ts.mean_nmse_h_ur),
            ("H_RA", ea.mean_nmse_h_ra, ts.mean_nmse_h_ra),
        ];
        let mut cells = Vec::new();
        for (name, e, t) in rows {
            let (e, t) = (e.unwrap(), t.unwrap());
            let ok = e < t;
            pass &= ok;
            cells.push(format!("{name} {e:.3e}/{t:.3e}{}", if ok { "" } else { " (x)" }));
        }
        parts.push(format!("{snr} dB e_als/two_stage: {}", cells.join(", ")));
    }
    Outcome::new(pass, parts.join("; "))
}

fn monotone_objective(records: &[ris_ce::harness::TrialRecord]) -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut failures = 0;
    for r in records.iter().filter(|r| r.estimator != EstimatorKind::Ls) {
        if r.failed() {
            failures += 1;
            continue;
        }
        checked += 1;
        violations += r.objective_violations.unwrap_or(usize::MAX / 2);
    }
    Outcome::new(
        violations == 0 && failures == 0,
        format!("{checked} iterative runs, {violations} residual increases, {failures} failed runs"),
    )
}

/// Per-iteration complexity rows written out term by term.
fn table_rows(m: u128, k: u128, n: u128, b: u128, l: u128, l_off: u128) -> [(Update, u128); 5] {
    let two_stage_ra = n * n * n + n * n * b * l + n * b * l * b * l + n * b * l * m + n * b * l;
    let two_stage_z = n * n * n + n * n * m * l + n * m * l * m * l + n * m * l * b + n * m * l;
    let nk = n + k;
    let joint = nk * nk * nk + nk * nk * b * l + nk * b * l * b * l + nk * m * b * l + nk * b * l;
    let z_eals = n * n * n
        + n * n * b * m
        + n * b * m * b * m
        + n * b * m * l
        + n * b * m
        + b * m * k
        + b * m * k * l
        + b * m * l;
    [
        (Update::HUaStage1, m * k * l_off),
        (Update::HRaIter, two_stage_ra),
        (Update::ZIter, two_stage_z),
        (Update::HJointIter, joint),
        (Update::ZEalsIter, z_eals),
    ]
}

fn complexity_accounting(cfg: &ExperimentConfig, summary: &[Aggregate]) -> Outcome {
    let mut rng = stream(606);
    let mut formula_ok = true;
    for _ in 0..10 {
        let m = rng.random_range(1..=16);
        let k = rng.random_range(1..=16);
        let n = rng.random_range(1..=64);
        let l = rng.random_range(k..=k + 8);
        for scheme in [Scheme::TwoStage, Scheme::EAls] {
            let mut dims = SystemConfig::new(m, k, n, l, scheme, 0.0);
            dims.off_stage_len = if scheme == Scheme::TwoStage {
                rng.random_range(k..=k + 8)
            } else {
                0
            };
            let tally = complexity_formula(scheme, &dims);
            let want = table_rows(
                m as u128,
                k as u128,
                n as u128,
                dims.blocks as u128,
                l as u128,
                dims.off_stage_len as u128,
            );
            for (update, count) in &tally.rows {
                let expected = want.iter().find(|(u, _)| u == update).unwrap().1;
                formula_ok &= *count as u128 == expected;
            }
        }
    }

    let mut ordering_ok = true;
    let mut parts = Vec::new();
    for &snr in &cfg.snr_grid_db {
        let ea = find(summary, EstimatorKind::EAls, snr);
        let ts = find(summary, EstimatorKind::TwoStage, snr);
        let (ea_ops, ts_ops) = (ea.mean_analytic_ops.unwrap(), ts.mean_analytic_ops.unwrap());
        let (ea_it, ts_it) = (ea.mean_iterations.unwrap(), ts.mean_iterations.unwrap());
        let ok = ea_ops > ts_ops && ea_it < ts_it;
        ordering_ok &= ok;
        parts.push(format!(
            "{snr} dB ops {ea_ops:.3e}/{ts_ops:.3e} iters {ea_it:.2}/{ts_it:.2}{}",
            if ok { "" } else { " (x)" }
        ));
    }
    Outcome::new(
        formula_ok && ordering_ok,
        format!(
            "formula rows {} on 10 random tuples; e_als/two_stage {}",
            if formula_ok { "exact" } else { "MISMATCH" },
            parts.join("; ")
        ),
    )
}

fn training_budget() -> Outcome {
    let ts = SystemConfig::paper_default(Scheme::TwoStage, 0.0);
    let ea = SystemConfig::paper_default(Scheme::EAls, 0.0);
    let t_ts = TrainingSchedule::for_scheme(&ts, Scheme::TwoStage).unwrap().training_slots();
    let t_ea = TrainingSchedule::for_scheme(&ea, Scheme::EAls).unwrap().training_slots();
    Outcome::new(
        t_ts == 208 && t_ea == 208 && ts.training_slots() == 208 && ea.training_slots() == 208,
        format!("two_stage T = {t_ts}, e_als T = {t_ea}"),
    )
}

fn random_estimate(rng: &mut ris_ce::random::Stream, h_ra: CMatrix, h_ur: CMatrix) -> ChannelEstimate {
    let (m, k) = (h_ra.rows(), h_ur.cols());
    ChannelEstimate {
        h_ua_hat: Some(cn_matrix(rng, m, k, 1.0)),
        h_ur_hat: h_ur,
        h_ra_hat: h_ra,
        iterations: 0,
        converged: false,
        op_count: 0,
        residuals: Vec::new(),
        data_energy: 0.0,
    }
}

fn ambiguity_invariance() -> Outcome {
    let chan = ChannelModelConfig::default();
    let (mut cascade_err, mut inverse_err): (f64, f64) = (0.0, 0.0);
    for case in 0..100u64 {
        let mut rng = stream(derive_seed(808, &[case]));
        let m = rng.random_range(1..=8);
        let k = rng.random_range(1..=8);
        let n = rng.random_range(1..=30);
        let dims = SystemConfig::new(m, k, n, k, Scheme::EAls, 0.0);
        let truth = draw_channels(&chan, &dims, &mut rng);

        let h_ra = cn_matrix(&mut rng, m, n, 1.0);
        let h_ur = cn_matrix(&mut rng, n, k, 1.0);
        let est = random_estimate(&mut rng, h_ra, h_ur);
        let resolved = resolve_scaling(&est, &truth).estimate;
        cascade_err = cascade_err.max(resolved.cascade().rel_error(&est.cascade()));

        let delta: Vec<_> = (0..n).map(|_| cn(&mut rng)).collect();
        let h_ra = CMatrix::from_fn(m, n, |r, c| truth.h_ra.get(r, c) * delta[c]);
        let h_ur = CMatrix::from_fn(n, k, |r, c| truth.h_ur.get(r, c) / delta[r]);
        let scaled = random_estimate(&mut rng, h_ra, h_ur);
        let back = resolve_scaling(&scaled, &truth).estimate;
        inverse_err = inverse_err
            .max(back.h_ra_hat.rel_error(&truth.h_ra))
            .max(back.h_ur_hat.rel_error(&truth.h_ur));
    }
    Outcome::new(
        cascade_err <= 1e-12 && inverse_err <= 1e-12,
        format!("100 cases: cascade change {cascade_err:.2e}, scaling inversion error {inverse_err:.2e}"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, "trials = 4\nmaster_seed = 99\n").unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("w{workers}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_estimate"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .args(["--workers", workers, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return Outcome::new(false, String::from_utf8_lossy(&status.stderr).to_string());
        }
        let text = fs::read_to_string(&out).unwrap();
        let stripped: String = text
            .lines()
            .map(|l| format!("{}\n", l.rsplit_once(',').unwrap().0))
            .collect();
        outputs.push(stripped);
    }
    let rows = outputs[0].lines().count() - 1;
    Outcome::new(
        outputs[0] == outputs[1],
        format!("{rows} rows, workers 1 vs 3 byte-identical: {}", outputs[0] == outputs[1]),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id, name, outcome: Outcome| {
        println!(
            "criterion {id} [{}] {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        results.push((id, name, outcome));
    };

    report(1, "tensor model identity", tensor_model_identity());
    report(2, "noiseless exact recovery", noiseless_recovery());

    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let cfg = ExperimentConfig {
        workers,
        ..Default::default()
    };
    let records = run_experiment(&cfg).expect("default experiment runs");
    let summary = summarize(&records);
    report(3, "estimator ordering", estimator_ordering(&cfg, &summary));
    report(4, "individual channel gap", individual_channel_gap(&cfg, &summary));
    report(5, "monotone ALS objective", monotone_objective(&records));
    report(6, "complexity accounting", complexity_accounting(&cfg, &summary));
    report(7, "training budget parity", training_budget());
    report(8, "ambiguity invariance", ambiguity_invariance());
    report(9, "CLI determinism", cli_determinism());

    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !o.pass).map(|(id, _, _)| *id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
