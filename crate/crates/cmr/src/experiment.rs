//! Experiment harness: configured training runs with spectral metrics,
//! CSV logging, checkpoints, and the regularizer comparison study.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, dir_has_dataset, load_dir, steps_per_epoch, synthetic, Dataset};
use crate::linalg::{gram, symmetric_eigen, svd};
use crate::nn::{
    accuracy, backward, forward, l2_penalty_grad, load_checkpoint, save_checkpoint,
    sn_penalty_grad, softmax_cross_entropy, InitSpec, MlpModel,
};
use crate::optim::{cap_and_mix, clip_global, warmup_lambda, GradientBundle, OptimizerState, UpdateRule};
use crate::penalty::{
    grad_rho_cond, grad_rho_moment, moments, normalize_gram, rho_cond, CmrConfig,
};
use crate::{CmrError, Result};

/// Stabilizer inside the reported condition numbers,
/// `kappa(W) = sigma_max / sqrt(sigma_min^2 + KAPPA_EPS)`.
pub const KAPPA_EPS: f64 = 1e-24;

/// Seed for the generated stand-in dataset (shared by every run so all
/// modes see identical data).
pub const SYNTHETIC_DATA_SEED: u64 = 7001;

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: &str = "epoch,train_loss_mean,test_accuracy,avg_grad_norm,mean_kappa_W,median_kappa_G,p90_kappa_G,max_abs_moment,mean_rho_cond,lambda_t_end";

/// Column order of `gradnorms.csv` (per optimizer step, pre-clip norms).
pub const GRADNORMS_HEADER: &str = "step,task_norm,spec_norm,gamma,mixed_norm";

/// Training mode: the spectral penalty, standard baselines, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "cmr")]
    Cmr,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "sn")]
    Sn,
    #[serde(rename = "sn+cmr")]
    SnCmr,
}

impl Mode {
    pub fn uses_cmr(self) -> bool {
        matches!(self, Mode::Cmr | Mode::SnCmr)
    }

    pub fn uses_sn(self) -> bool {
        matches!(self, Mode::Sn | Mode::SnCmr)
    }

    pub fn uses_l2(self) -> bool {
        matches!(self, Mode::L2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Cmr => "cmr",
            Mode::L2 => "l2",
            Mode::Sn => "sn",
            Mode::SnCmr => "sn+cmr",
        }
    }

    pub const ALL: [Mode; 5] = [Mode::Vanilla, Mode::L2, Mode::Sn, Mode::Cmr, Mode::SnCmr];
}

impl std::str::FromStr for Mode {
    type Err = CmrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "cmr" => Ok(Mode::Cmr),
            "l2" => Ok(Mode::L2),
            "sn" => Ok(Mode::Sn),
            "sn+cmr" | "sn-cmr" => Ok(Mode::SnCmr),
            other => Err(CmrError::InvalidState(format!(
                "unknown mode '{other}' (expected vanilla|cmr|l2|sn|sn+cmr)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coefficients for the standard baseline regularizers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineCoeffs {
    pub l2: f64,
    pub sn: f64,
}

impl Default for BaselineCoeffs {
    fn default() -> Self {
        BaselineCoeffs { l2: 1e-4, sn: 1e-3 }
    }
}

/// Full configuration of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub init: InitSpec,
    pub update_rule: UpdateRule,
    pub cmr: CmrConfig<f64>,
    pub baseline: BaselineCoeffs,
    /// When set, overrides `cmr.warmup_steps` with
    /// `ceil(warmup_epochs * steps_per_epoch)` at run start.
    pub warmup_epochs: Option<f64>,
    /// Extra spectral summary rows every N steps into `spectral.csv`
    /// (0 = epoch-boundary snapshots only).
    pub metrics_interval: u64,
    pub max_train_samples: Option<usize>,
    pub max_test_samples: Option<usize>,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Generate the deterministic synthetic dataset into `data_dir` when the
    /// canonical IDX files are absent.
    pub synthetic_fallback: bool,
    pub checkpoint_every_epoch: bool,
    /// Layer widths, input first. Default: deep 15-layer MLP, width 256.
    pub dims: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        kappa_stress_preset()
    }
}

/// The adversarial ill-conditioning setup: 15-layer tanh MLP (width 256),
/// orthogonal init scaled by 0.06, Adam at 1e-3, and the penalty schedule
/// (K, lambda, alpha1, alpha2, beta) = (5, 0.02, 1.0, 0.1, 0.15), cap 0.5,
/// global clip 5.0, 2-epoch warmup.
pub fn kappa_stress_preset() -> ExperimentConfig {
    ExperimentConfig {
        mode: Mode::Cmr,
        seed: 1,
        epochs: 5,
        batch_size: 64,
        learning_rate: 1e-3,
        grad_clip: 5.0,
        init: InitSpec::OrthogonalScaled { scale: 0.06 },
        update_rule: UpdateRule::Adam,
        cmr: CmrConfig::default(),
        baseline: BaselineCoeffs::default(),
        warmup_epochs: Some(2.0),
        metrics_interval: 0,
        max_train_samples: None,
        max_test_samples: None,
        data_dir: PathBuf::from("data"),
        output_dir: PathBuf::from("out"),
        synthetic_fallback: true,
        checkpoint_every_epoch: false,
        dims: MlpModel::<f64>::deep_mlp_dims(15, 784, 256, 10),
    }
}

/// The comparison-study setup: same architecture and optimizer, Glorot
/// uniform init (no adversarial scaling).
pub fn baseline_preset() -> ExperimentConfig {
    ExperimentConfig {
        init: InitSpec::GlorotUniform,
        epochs: 20,
        mode: Mode::Vanilla,
        ..kappa_stress_preset()
    }
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "kappa-stress" => Ok(kappa_stress_preset()),
        "baseline" => Ok(baseline_preset()),
        other => Err(CmrError::InvalidState(format!(
            "unknown preset '{other}' (expected kappa-stress|baseline)"
        ))),
    }
}

/// One epoch of measurements (also one `metrics.csv` row).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss_mean: f64,
    pub test_accuracy: f64,
    /// Mean over steps of the global l2 norm of the mixed, pre-clip gradient.
    pub avg_grad_norm: f64,
    /// Arithmetic mean over layers of sigma_max / sqrt(sigma_min^2 + eps).
    pub mean_kappa_w: f64,
    pub median_kappa_g: f64,
    pub p90_kappa_g: f64,
    /// max over layers and k in [3, K] of |s_k|.
    pub max_abs_moment: f64,
    pub mean_rho_cond: f64,
    pub lambda_t_end: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss_mean,
            self.test_accuracy,
            self.avg_grad_norm,
            self.mean_kappa_w,
            self.median_kappa_g,
            self.p90_kappa_g,
            self.max_abs_moment,
            self.mean_rho_cond,
            self.lambda_t_end
        )
    }
}

/// Spectral statistics of one layer.
#[derive(Debug, Clone)]
pub struct LayerSpectralStats {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub kappa_w: f64,
    pub kappa_g: f64,
    pub rho_cond: f64,
    /// Moments s_3 ..= s_K.
    pub moments: Vec<f64>,
}

/// Model-wide spectral snapshot with the aggregates used in metrics rows.
#[derive(Debug, Clone)]
pub struct SpectralSnapshot {
    pub layers: Vec<LayerSpectralStats>,
    pub mean_kappa_w: f64,
    pub median_kappa_g: f64,
    pub p90_kappa_g: f64,
    pub max_abs_moment: f64,
    pub mean_rho_cond: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Nearest-rank percentile on ascending data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Computes per-layer spectral statistics, cross-checking the Gram route:
/// `kappa(G)` comes from an independent symmetric eigendecomposition of
/// `W^T W` and must equal `kappa(W)^2` to 1e-6 relative (outside the
/// numerical floor where sigma_min^2 dips below roundoff of the
/// eigensolver).
pub fn spectral_snapshot(model: &MlpModel<f64>, cmr: &CmrConfig<f64>) -> Result<SpectralSnapshot> {
    let stats: Result<Vec<LayerSpectralStats>> = model
        .layers()
        .par_iter()
        .enumerate()
        .map(|(idx, layer)| {
            let w = &layer.weight;
            let d = svd(w)?;
            let smax = d.sigma_max();
            let smin = d.sigma_min();
            let kappa_w = smax / (smin * smin + KAPPA_EPS).sqrt();

            // Independent Gram route for kappa(G), restricted to the rank
            // bound (the padded zero eigenvalues of a wide layer's Gram are
            // not part of the operator's conditioning).
            let g = gram(w);
            let (eigs, _) = symmetric_eigen(&g)?;
            let r = w.rows().min(w.cols());
            let lmax = eigs[eigs.len() - 1].max(0.0);
            let lmin = eigs[eigs.len() - r].max(0.0);
            let kappa_g = lmax / (lmin * lmin + KAPPA_EPS * KAPPA_EPS).sqrt();

            // The eigensolver resolves lambda_min to ~machine-eps * lambda_max
            // absolute, so the 1e-6 relative agreement is only meaningful
            // while lambda_min sits well above that floor.
            let kw2 = kappa_w * kappa_w;
            let in_floor = lmin <= 1e-9 * lmax.max(1e-300);
            if !in_floor && (kappa_g - kw2).abs() > 1e-6 * kw2 {
                return Err(CmrError::InvalidState(format!(
                    "layer {idx}: kappa(G) = {kappa_g} disagrees with kappa(W)^2 = {kw2} \
                     (lambda_min/lambda_max = {:.3e})",
                    lmin / lmax.max(1e-300)
                )));
            }

            let norm = normalize_gram(&d, cmr.epsilon);
            let s = moments(&d, &norm, cmr.k_max)?;
            let rc = rho_cond(&d, cmr.epsilon)?;
            Ok(LayerSpectralStats {
                layer: idx,
                rows: w.rows(),
                cols: w.cols(),
                sigma_max: smax,
                sigma_min: smin,
                kappa_w,
                kappa_g,
                rho_cond: rc,
                moments: s,
            })
        })
        .collect();
    let stats = stats?;

    let l = stats.len() as f64;
    let mean_kappa_w = stats.iter().map(|s| s.kappa_w).sum::<f64>() / l;
    let mean_rho_cond = stats.iter().map(|s| s.rho_cond).sum::<f64>() / l;
    let mut kappa_gs: Vec<f64> = stats.iter().map(|s| s.kappa_g).collect();
    kappa_gs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_abs_moment = stats
        .iter()
        .flat_map(|s| s.moments.iter().map(|m| m.abs()))
        .fold(0.0f64, f64::max);
    Ok(SpectralSnapshot {
        mean_kappa_w,
        median_kappa_g: median(&kappa_gs),
        p90_kappa_g: percentile(&kappa_gs, 0.9),
        max_abs_moment,
        mean_rho_cond,
        layers: stats,
    })
}

/// Result of one training run.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub output_dir: PathBuf,
    pub final_test_accuracy: f64,
    pub steps: u64,
}

/// Loads (or synthesizes) the dataset pair named by the config.
pub fn load_or_synthesize_data(config: &ExperimentConfig) -> Result<(Dataset<f64>, Dataset<f64>)> {
    if !dir_has_dataset(&config.data_dir) {
        if !config.synthetic_fallback {
            return Err(CmrError::InvalidState(format!(
                "no dataset under {} and synthetic_fallback is off",
                config.data_dir.display()
            )));
        }
        synthetic::generate_files(&config.data_dir, 60000, 10000, SYNTHETIC_DATA_SEED)?;
    }
    let (mut train, mut test) = load_dir::<f64>(&config.data_dir)?;
    if let Some(n) = config.max_train_samples {
        train = train.truncated(n);
    }
    if let Some(n) = config.max_test_samples {
        test = test.truncated(n);
    }
    Ok((train, test))
}

/// Convenience wrapper: loads data, then runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let (train, test) = load_or_synthesize_data(config)?;
    run_experiment_on(config, &train, &test)
}

/// Run-time resolution of config fields that depend on the dataset:
/// `warmup_epochs` converts to optimizer steps.
pub fn resolved_config(config: &ExperimentConfig, train_count: usize) -> ExperimentConfig {
    let mut resolved = config.clone();
    let spe = steps_per_epoch(train_count, config.batch_size);
    if let Some(warmup_epochs) = config.warmup_epochs {
        resolved.cmr.warmup_steps = (warmup_epochs * spe as f64).ceil() as u64;
    }
    resolved
}

/// Executes the training loop: task backward, warmup-ramped spectral
/// backward, capped mixing, global clip, optimizer step; per-epoch test
/// evaluation and spectral snapshot.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train: &Dataset<f64>,
    test: &Dataset<f64>,
) -> Result<RunOutput> {
    config.cmr.validate()?;
    if train.features() != config.dims[0] {
        return Err(CmrError::InvalidState(format!(
            "dataset has {} features but the model expects {}",
            train.features(),
            config.dims[0]
        )));
    }

    let resolved = resolved_config(config, train.len());

    std::fs::create_dir_all(&resolved.output_dir)?;
    std::fs::write(
        resolved.output_dir.join("config.resolved.json"),
        serde_json::to_string_pretty(&resolved)?,
    )?;

    let mut metrics_file =
        std::io::BufWriter::new(std::fs::File::create(resolved.output_dir.join("metrics.csv"))?);
    writeln!(metrics_file, "{METRICS_HEADER}")?;
    let mut gradnorm_file =
        std::io::BufWriter::new(std::fs::File::create(resolved.output_dir.join("gradnorms.csv"))?);
    writeln!(gradnorm_file, "{GRADNORMS_HEADER}")?;
    let mut spectral_file = if resolved.metrics_interval > 0 {
        let mut f = std::io::BufWriter::new(std::fs::File::create(
            resolved.output_dir.join("spectral.csv"),
        )?);
        writeln!(f, "step,mean_kappa_W,mean_rho_cond,max_abs_moment")?;
        Some(f)
    } else {
        None
    };

    let mut model = MlpModel::<f64>::init(&resolved.dims, &resolved.init, resolved.seed)?;
    let mut opt = OptimizerState::new(resolved.update_rule, resolved.learning_rate);
    let cmr = &resolved.cmr;
    let mode = resolved.mode;
    let spectral_active = mode.uses_cmr() && cmr.lambda > 0.0;

    let mut last_good = model.clone();
    let mut metrics: Vec<MetricsRecord> = Vec::with_capacity(resolved.epochs);
    let mut t: u64 = 0;

    let train_result = (|| -> Result<()> {
        for epoch in 1..=resolved.epochs {
            let mut loss_sum = 0.0;
            let mut steps_in_epoch = 0u64;
            let mut grad_norm_sum = 0.0;
            let mut lambda_t_end = 0.0;

            for (images, labels) in batches(train, resolved.batch_size, resolved.seed, (epoch - 1) as u64) {
                let trace = forward(&model, &images)?;
                let (loss, grad_logits) = softmax_cross_entropy(trace.logits(), &labels);
                let mut g_task = backward(&model, &trace, &grad_logits);

                if mode.uses_l2() {
                    let (_, grads) = l2_penalty_grad(&model, resolved.baseline.l2);
                    for (t_layer, g) in g_task.layers.iter_mut().zip(grads) {
                        t_layer.weight.add_scaled_in_place(1.0, &g);
                    }
                }
                if mode.uses_sn() {
                    let (_, grads) = sn_penalty_grad(&model, resolved.baseline.sn);
                    for (t_layer, g) in g_task.layers.iter_mut().zip(grads) {
                        t_layer.weight.add_scaled_in_place(1.0, &g);
                    }
                }

                let lambda_t = if spectral_active {
                    warmup_lambda(cmr.lambda, t, cmr.warmup_steps)
                } else {
                    0.0
                };
                lambda_t_end = lambda_t;

                let (mut mixed, task_norm, spec_norm, gamma) =
                    if spectral_active && t % cmr.spectral_every == 0 {
                        let spec_weights: Result<Vec<_>> = model
                            .layers()
                            .par_iter()
                            .map(|layer| {
                                let d = svd(&layer.weight)?;
                                let norm = normalize_gram(&d, cmr.epsilon);
                                let mut g = grad_rho_cond(&d, cmr.epsilon)?.scale(cmr.alpha1);
                                let gm = grad_rho_moment(&layer.weight, &d, &norm, cmr)?;
                                g.add_scaled_in_place(cmr.alpha2, &gm);
                                Ok(g)
                            })
                            .collect();
                        let bundle = GradientBundle::new(g_task, spec_weights?)?;
                        let (mixed, gamma) = cap_and_mix(&bundle, lambda_t, cmr.rho_spec, cmr.delta);
                        (mixed, bundle.task_norm, bundle.spec_norm, gamma)
                    } else {
                        let task_norm = g_task.global_norm();
                        (g_task, task_norm, 0.0, 0.0)
                    };

                let mixed_norm = clip_global(&mut mixed, resolved.grad_clip);
                writeln!(gradnorm_file, "{t},{task_norm},{spec_norm},{gamma},{mixed_norm}")?;

                opt.step(&mut model, &mixed)?;

                loss_sum += loss;
                grad_norm_sum += mixed_norm;
                steps_in_epoch += 1;
                t += 1;

                if let Some(f) = spectral_file.as_mut() {
                    if t % resolved.metrics_interval == 0 {
                        let snap = spectral_snapshot(&model, cmr)?;
                        writeln!(
                            f,
                            "{t},{},{},{}",
                            snap.mean_kappa_w, snap.mean_rho_cond, snap.max_abs_moment
                        )?;
                    }
                }
            }

            let test_accuracy = accuracy(&model, &test.images, &test.labels, 256)?;
            let snap = spectral_snapshot(&model, cmr)?;
            let record = MetricsRecord {
                epoch,
                train_loss_mean: loss_sum / steps_in_epoch as f64,
                test_accuracy,
                avg_grad_norm: grad_norm_sum / steps_in_epoch as f64,
                mean_kappa_w: snap.mean_kappa_w,
                median_kappa_g: snap.median_kappa_g,
                p90_kappa_g: snap.p90_kappa_g,
                max_abs_moment: snap.max_abs_moment,
                mean_rho_cond: snap.mean_rho_cond,
                lambda_t_end,
            };
            writeln!(metrics_file, "{}", record.csv_row())?;
            metrics_file.flush()?;
            metrics.push(record);

            if resolved.checkpoint_every_epoch {
                let path = resolved.output_dir.join(format!("epoch{epoch:03}.ckpt"));
                save_checkpoint(&model, &path, resolved.seed, &serde_json::to_value(&resolved)?)?;
            }
            last_good = model.clone();
        }
        Ok(())
    })();

    gradnorm_file.flush()?;
    if let Some(f) = spectral_file.as_mut() {
        f.flush()?;
    }

    if let Err(err) = train_result {
        // Divergence (or any mid-run failure): persist the last healthy model.
        let path = resolved.output_dir.join("last_good.ckpt");
        save_checkpoint(&last_good, &path, resolved.seed, &serde_json::to_value(&resolved)?)?;
        return Err(err);
    }

    let final_path = resolved.output_dir.join("final.ckpt");
    save_checkpoint(&model, &final_path, resolved.seed, &serde_json::to_value(&resolved)?)?;

    let final_test_accuracy = metrics.last().map(|m| m.test_accuracy).unwrap_or(0.0);
    Ok(RunOutput { metrics, output_dir: resolved.output_dir.clone(), final_test_accuracy, steps: t })
}

/// Summary row of the baseline study.
#[derive(Debug, Clone)]
pub struct BaselineRow {
    pub mode: Mode,
    pub epoch: usize,
    pub median_kappa_g: f64,
    pub p90_kappa_g: f64,
    pub test_accuracy: f64,
}

/// Runs every mode in `modes` from the same base config (Glorot init
/// recommended) and collects per-epoch conditioning summaries into
/// `baseline_summary.csv` plus per-mode subdirectories.
pub fn run_baseline_study(
    base: &ExperimentConfig,
    modes: &[Mode],
) -> Result<Vec<BaselineRow>> {
    let (train, test) = load_or_synthesize_data(base)?;
    std::fs::create_dir_all(&base.output_dir)?;
    let mut rows = Vec::new();
    for &mode in modes {
        let mut config = base.clone();
        config.mode = mode;
        config.output_dir = base.output_dir.join(mode.as_str().replace('+', "_"));
        let out = run_experiment_on(&config, &train, &test)?;
        for m in &out.metrics {
            rows.push(BaselineRow {
                mode,
                epoch: m.epoch,
                median_kappa_g: m.median_kappa_g,
                p90_kappa_g: m.p90_kappa_g,
                test_accuracy: m.test_accuracy,
            });
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(
        base.output_dir.join("baseline_summary.csv"),
    )?);
    writeln!(f, "mode,epoch,median_kappa_G,p90_kappa_G,test_accuracy")?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.mode, r.epoch, r.median_kappa_g, r.p90_kappa_g, r.test_accuracy
        )?;
    }
    Ok(rows)
}

/// Loads a checkpoint and reports per-layer spectral statistics.
pub fn analyze_checkpoint(path: &Path, cmr: &CmrConfig<f64>) -> Result<SpectralSnapshot> {
    let model: MlpModel<f64> = load_checkpoint(path)?;
    spectral_snapshot(&model, cmr)
}

/// CSV rendering of a snapshot (one row per layer plus an aggregate row).
pub fn snapshot_csv(snap: &SpectralSnapshot, k_max: usize) -> String {
    let mut out = String::from("layer,rows,cols,sigma_max,sigma_min,kappa_W,kappa_G,rho_cond");
    for k in 3..=k_max {
        out.push_str(&format!(",s_{k}"));
    }
    out.push('\n');
    for l in &snap.layers {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            l.layer, l.rows, l.cols, l.sigma_max, l.sigma_min, l.kappa_w, l.kappa_g, l.rho_cond
        ));
        for s in &l.moments {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "aggregate,,,,,{},{},{}\n",
        snap.mean_kappa_w, snap.median_kappa_g, snap.mean_rho_cond
    ));
    out
}

/// Human-readable table of a snapshot.
pub fn snapshot_table(snap: &SpectralSnapshot) -> String {
    let mut out = String::new();
    out.push_str("layer  shape        sigma_max    sigma_min    kappa(W)     kappa(G)     rho_cond     max|s_k|\n");
    for l in &snap.layers {
        let max_s = l.moments.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        out.push_str(&format!(
            "{:<6} {:<12} {:<12.5e} {:<12.5e} {:<12.5e} {:<12.5e} {:<12.5e} {:<12.5e}\n",
            l.layer,
            format!("{}x{}", l.rows, l.cols),
            l.sigma_max,
            l.sigma_min,
            l.kappa_w,
            l.kappa_g,
            l.rho_cond,
            max_s
        ));
    }
    out.push_str(&format!(
        "mean kappa(W) = {:.6e}   median kappa(G) = {:.6e}   P90 kappa(G) = {:.6e}   mean rho_cond = {:.6e}   max|s_k| = {:.6e}\n",
        snap.mean_kappa_w,
        snap.median_kappa_g,
        snap.p90_kappa_g,
        snap.mean_rho_cond,
        snap.max_abs_moment
    ));
    out
}

/// Parses a `metrics.csv` written by [`run_experiment_on`] (floats
/// round-trip exactly through their shortest decimal form).
pub fn parse_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(CmrError::FormatError {
                    offset: 0,
                    message: format!("unexpected metrics header: {line}"),
                });
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(CmrError::FormatError {
                offset: i as u64,
                message: format!("bad metrics row: {line}"),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| CmrError::FormatError {
                offset: i as u64,
                message: format!("bad float '{s}'"),
            })
        };
        out.push(MetricsRecord {
            epoch: f[0].parse().map_err(|_| CmrError::FormatError {
                offset: i as u64,
                message: "bad epoch".into(),
            })?,
            train_loss_mean: num(f[1])?,
            test_accuracy: num(f[2])?,
            avg_grad_norm: num(f[3])?,
            mean_kappa_w: num(f[4])?,
            median_kappa_g: num(f[5])?,
            p90_kappa_g: num(f[6])?,
            max_abs_moment: num(f[7])?,
            mean_rho_cond: num(f[8])?,
            lambda_t_end: num(f[9])?,
        });
    }
    Ok(out)
}

/// Serialized config with the location fields blanked: two runs with equal
/// fingerprints produce identical trajectories and CSV contents regardless
/// of where they write.
pub fn config_fingerprint(config: &ExperimentConfig) -> Result<String> {
    let mut v = serde_json::to_value(config)?;
    if let Some(map) = v.as_object_mut() {
        map.insert("data_dir".into(), serde_json::Value::Null);
        map.insert("output_dir".into(), serde_json::Value::Null);
    }
    Ok(serde_json::to_string(&v)?)
}

/// Soft trend report: is the layer-mean condition proxy non-increasing
/// (within 5% relative) across epochs after warmup? The discrete-step trend
/// is an empirical observation, not a theorem, so callers report rather
/// than assert this. Returns (holds, detail).
pub fn rho_cond_trend(metrics: &[MetricsRecord], warmup_end_epoch: usize) -> (bool, String) {
    let mut holds = true;
    let mut detail = String::new();
    for w in metrics.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.epoch < warmup_end_epoch {
            continue;
        }
        let slack = 0.05 * a.mean_rho_cond.abs().max(1e-12);
        if b.mean_rho_cond > a.mean_rho_cond + slack {
            holds = false;
        }
        detail.push_str(&format!("e{}->e{}: {:.4} -> {:.4}; ", a.epoch, b.epoch, a.mean_rho_cond, b.mean_rho_cond));
    }
    (holds, detail)
}

/// Post-hoc audit of the cap contract over a `gradnorms.csv`: on every
/// logged step with a nonzero spectral norm,
/// `gamma * spec_norm <= rho_spec * task_norm * (1 + 1e-9)`.
/// Returns (rows checked, violations).
pub fn audit_cap_contract(path: &Path, rho_spec: f64) -> Result<(usize, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut checked = 0;
    let mut violations = 0;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != GRADNORMS_HEADER {
                return Err(CmrError::FormatError {
                    offset: 0,
                    message: format!("unexpected gradnorms header: {line}"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CmrError::FormatError {
                offset: i as u64,
                message: format!("bad gradnorms row: {line}"),
            });
        }
        let task_norm: f64 = fields[1].parse().map_err(|_| CmrError::FormatError {
            offset: i as u64,
            message: "bad task_norm".into(),
        })?;
        let spec_norm: f64 = fields[2].parse().map_err(|_| CmrError::FormatError {
            offset: i as u64,
            message: "bad spec_norm".into(),
        })?;
        let gamma: f64 = fields[3].parse().map_err(|_| CmrError::FormatError {
            offset: i as u64,
            message: "bad gamma".into(),
        })?;
        if spec_norm > 0.0 {
            checked += 1;
            if gamma * spec_norm > rho_spec * task_norm * (1.0 + 1e-9) {
                violations += 1;
            }
        }
    }
    Ok((checked, violations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing_round_trips() {
        for mode in Mode::ALL {
            let parsed: Mode = mode.as_str().parse().unwrap();
            assert_eq!(parsed, mode);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }

    #[test]
    fn preset_pins_stress_values() {
        let c = kappa_stress_preset();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.grad_clip, 5.0);
        assert_eq!(c.cmr.k_max, 5);
        assert_eq!(c.cmr.lambda, 0.02);
        assert_eq!(c.cmr.alpha1, 1.0);
        assert_eq!(c.cmr.alpha2, 0.1);
        assert_eq!(c.cmr.beta, 0.15);
        assert_eq!(c.cmr.rho_spec, 0.5);
        assert_eq!(c.warmup_epochs, Some(2.0));
        assert!(matches!(c.init, InitSpec::OrthogonalScaled { scale } if scale == 0.06));
        assert_eq!(c.dims.len(), 16);
        assert_eq!(c.dims[0], 784);
        assert_eq!(*c.dims.last().unwrap(), 10);
        // 2 epochs of ceil(60000/64) steps.
        assert_eq!((2.0 * steps_per_epoch(60000, 64) as f64).ceil() as u64, 1876);
    }

    #[test]
    fn config_json_round_trip() {
        let c = kappa_stress_preset();
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mode, c.mode);
        assert_eq!(back.cmr.k_max, c.cmr.k_max);
        assert_eq!(back.dims, c.dims);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"mode": "sn+cmr", "epochs": 3}"#).unwrap();
        assert_eq!(c.mode, Mode::SnCmr);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn median_and_percentile_definitions() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(median(&xs), 3.0);
        assert_eq!(percentile(&xs, 0.9), 5.0);
        let ys = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&ys), 2.5);
        let fifteen: Vec<f64> = (1..=15).map(|i| i as f64).collect();
        assert_eq!(percentile(&fifteen, 0.9), 14.0);
    }

    #[test]
    fn snapshot_of_fresh_orthogonal_model_has_unit_kappa() {
        let model = MlpModel::<f64>::init(
            &[12, 8, 8, 4],
            &InitSpec::OrthogonalScaled { scale: 0.06 },
            3,
        )
        .unwrap();
        let snap = spectral_snapshot(&model, &CmrConfig::default()).unwrap();
        for l in &snap.layers {
            assert!((l.kappa_w - 1.0).abs() <= 1e-6, "layer {}: {}", l.layer, l.kappa_w);
        }
        assert!((snap.mean_kappa_w - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn snapshot_kappa_g_is_kappa_w_squared() {
        let model = MlpModel::<f64>::init(&[10, 7, 5], &InitSpec::GlorotUniform, 9).unwrap();
        let snap = spectral_snapshot(&model, &CmrConfig::default()).unwrap();
        for l in &snap.layers {
            let kw2 = l.kappa_w * l.kappa_w;
            assert!((l.kappa_g - kw2).abs() <= 1e-6 * kw2);
        }
    }
}
