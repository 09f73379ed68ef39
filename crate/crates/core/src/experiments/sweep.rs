//! Grid execution. Each cell derives its own random streams from the master
//! seed, so results do not depend on the number of workers or on cell order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::cs_linear::{
    cs_optimal_risk, cs_population_risk, train_cs_linear, CsDataset, CsSignalModel, CsTrainOptions, CsTraining,
};
use crate::cs_masks::CsScheme;
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentKind, GradVarDomain, SweepConfig};
use crate::experiments::output::{CellFailure, SweepResult, SweepRow};
use crate::grad_variance::{
    cs_normalized_gradient_variances, cs_one_epoch_reconstructor, normalized_gradient_variances, one_epoch_estimator,
    GradLoss, GradVarReport,
};
use crate::linear_denoise::{risk_breakdown, LinearEstimator};
use crate::rng::{derive_seed, tag};
use crate::signal_model::{Dataset, SubspaceModel};
use crate::training::{
    gd_early_stopped, sgm_single_pass, theorem1_bound, validation_size, BoundConstants, GdOptions, SgmSchedule,
    SlopeReading,
};

pub const CS_SUPERVISED_LABEL: &str = "cs-linear-supervised";

/// Seeds shared by every cell of one trial.
#[derive(Debug, Clone, Copy)]
pub struct TrialSeeds {
    pub train: u64,
    pub validation: u64,
}

pub fn basis_seed(seed: u64) -> u64 {
    derive_seed(seed, tag::BASIS)
}

pub fn trial_seeds(seed: u64, trial: usize) -> TrialSeeds {
    TrialSeeds {
        train: derive_seed(derive_seed(seed, tag::TRAIN), trial as u64),
        validation: derive_seed(derive_seed(seed, tag::VALIDATION), trial as u64),
    }
}

#[derive(Debug, Clone, Copy)]
enum Cell {
    Denoise { sigma_e: f64, n_train: usize, trial: usize },
    Cs { mu: Option<f64>, n_train: usize, trial: usize },
}

struct CellOutcome {
    row: std::result::Result<SweepRow, CellFailure>,
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot start {k} workers: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let cells = enumerate_cells(config)?;
    let context = SweepContext::new(config)?;
    let outcomes: Vec<CellOutcome> =
        with_workers(config.workers, || cells.par_iter().map(|c| context.run(c)).collect())?;
    let mut result = SweepResult::default();
    for o in outcomes {
        match o.row {
            Ok(row) => result.rows.push(row),
            Err(f) => {
                log::warn!("{} N={} trial={} param={}: {}", f.experiment, f.n_train, f.trial, f.param, f.reason);
                result.failures.push(f);
            }
        }
    }
    result.sort();
    Ok(result)
}

fn enumerate_cells(config: &SweepConfig) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    match config.experiment {
        ExperimentKind::DenoiseGd | ExperimentKind::DenoiseSgm => {
            for &sigma_e in &config.sigma_e {
                for &n_train in &config.train_sizes {
                    for trial in 0..config.trials {
                        cells.push(Cell::Denoise { sigma_e, n_train, trial });
                    }
                }
            }
        }
        ExperimentKind::CsLinear => {
            let settings = std::iter::once(None).chain(config.mu.iter().map(|&m| Some(m)));
            for mu in settings {
                for &n_train in &config.train_sizes {
                    for trial in 0..config.trials {
                        cells.push(Cell::Cs { mu, n_train, trial });
                    }
                }
            }
        }
        ExperimentKind::GradVar => {
            return Err(Error::Config("grad-var runs through run_grad_var, not run_sweep".into()));
        }
    }
    Ok(cells)
}

struct SweepContext<'a> {
    config: &'a SweepConfig,
    denoise: Option<SubspaceModel<f64>>,
    cs: Option<(CsSignalModel<f64>, f64)>,
}

impl<'a> SweepContext<'a> {
    fn new(config: &'a SweepConfig) -> Result<Self> {
        let basis = basis_seed(config.seed);
        let (denoise, cs) = match config.experiment {
            ExperimentKind::CsLinear => {
                let model = CsSignalModel::random(config.n, config.d, basis)?;
                let scheme = CsScheme::new(config.n, config.nu, config.p, config.mu[0])?;
                let optimal = cs_optimal_risk(&model, &scheme)?;
                (None, Some((model, optimal)))
            }
            _ => (Some(SubspaceModel::random(config.n, config.d, config.sigma_z, 0.0, basis)?), None),
        };
        Ok(Self { config, denoise, cs })
    }

    fn run(&self, cell: &Cell) -> CellOutcome {
        let start = Instant::now();
        let (experiment, param, n_train, trial) = match *cell {
            Cell::Denoise { sigma_e, n_train, trial } => (self.config.experiment.as_str(), sigma_e, n_train, trial),
            Cell::Cs { mu: Some(mu), n_train, trial } => (ExperimentKind::CsLinear.as_str(), mu, n_train, trial),
            Cell::Cs { mu: None, n_train, trial } => (CS_SUPERVISED_LABEL, 0.0, n_train, trial),
        };
        let evaluated = match *cell {
            Cell::Denoise { sigma_e, n_train, trial } => self.run_denoise(sigma_e, n_train, trial),
            Cell::Cs { mu, n_train, trial } => self.run_cs(mu, n_train, trial),
        };
        let wall_time_s = if self.config.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
        let row = evaluated
            .map(|(risk, optimal_risk, bound)| SweepRow {
                experiment: experiment.to_string(),
                n_train,
                trial,
                param,
                risk,
                optimal_risk,
                excess: risk - optimal_risk,
                bound,
                wall_time_s,
            })
            .map_err(|e| CellFailure {
                experiment: experiment.to_string(),
                n_train,
                trial,
                param,
                reason: e.to_string(),
                exit_code: e.exit_code(),
            });
        CellOutcome { row }
    }

    fn run_denoise(&self, sigma_e: f64, n_train: usize, trial: usize) -> Result<(f64, f64, f64)> {
        let model = self.denoise.as_ref().expect("denoising model").with_sigma_e(sigma_e)?;
        let seeds = trial_seeds(self.config.seed, trial);
        let train = Dataset::generate(&model, n_train, seeds.train);
        let estimator: LinearEstimator<f64> = match self.config.experiment {
            ExperimentKind::DenoiseSgm => {
                let constants = BoundConstants::for_model(&model, SlopeReading::default());
                let schedule = SgmSchedule::lemma1(&constants)?;
                sgm_single_pass(&train, &schedule, LinearEstimator::zeros(model.n()), false)?.final_w
            }
            _ => {
                let validation = Dataset::generate(&model, validation_size(n_train), seeds.validation);
                let options = GdOptions {
                    patience: self.config.patience,
                    max_epochs: self.config.max_epochs,
                    ..GdOptions::default()
                };
                gd_early_stopped(&train, &validation, &options)?.final_w
            }
        };
        let breakdown = risk_breakdown(&estimator, &model)?;
        let bound = theorem1_bound(&model, n_train).unwrap_or(f64::NAN);
        Ok((breakdown.risk, breakdown.optimal_risk, bound))
    }

    fn run_cs(&self, mu: Option<f64>, n_train: usize, trial: usize) -> Result<(f64, f64, f64)> {
        let (model, optimal) = self.cs.as_ref().expect("cs model");
        let c = self.config;
        let (scheme, mode) = match mu {
            Some(m) => (CsScheme::new(c.n, c.nu, c.p, m)?, CsTraining::SelfSupervised),
            None => (CsScheme::new(c.n, c.nu, c.p, c.mu[0])?, CsTraining::Supervised),
        };
        let seeds = trial_seeds(c.seed, trial);
        let train = CsDataset::generate(model, &scheme, n_train, seeds.train)?;
        let validation = CsDataset::generate(model, &scheme, validation_size(n_train), seeds.validation)?;
        let options = CsTrainOptions { patience: c.patience, max_epochs: c.max_epochs, ..Default::default() };
        let report = train_cs_linear(&train, &validation, mode, &options)?;
        let risk = cs_population_risk(&report.reconstructor, model, &scheme)?;
        Ok((risk, *optimal, f64::NAN))
    }
}

/// Normalized gradient variances at the one-epoch supervised estimate:
/// a supervised report followed by one self-supervised report per noise
/// level (denoising) or per target fraction (compressive sensing).
pub fn run_grad_var(config: &SweepConfig) -> Result<Vec<GradVarReport<f64>>> {
    let data_seed = derive_seed(config.seed, tag::MONTE_CARLO);
    let basis = basis_seed(config.seed);
    with_workers(config.workers, || match config.domain {
        GradVarDomain::Denoise => {
            let base = SubspaceModel::random(config.n, config.d, config.sigma_z, 0.0, basis)?;
            let clean_targets = Dataset::generate(&base, config.samples, data_seed);
            let w = one_epoch_estimator(&clean_targets)?;
            let mut reports =
                vec![normalized_gradient_variances(&w, &clean_targets, GradLoss::Supervised, config.bins)?];
            for &se in config.sigma_e.iter().filter(|s| **s > 0.0) {
                let data = Dataset::generate(&base.with_sigma_e(se)?, config.samples, data_seed);
                reports.push(normalized_gradient_variances(&w, &data, GradLoss::Noise2Noise, config.bins)?);
            }
            Ok(reports)
        }
        GradVarDomain::Cs => {
            let model = CsSignalModel::random(config.n, config.d, basis)?;
            let schemes: Vec<CsScheme<f64>> =
                config.mu.iter().map(|&m| CsScheme::new(config.n, config.nu, config.p, m)).collect::<Result<_>>()?;
            let first = CsDataset::generate(&model, &schemes[0], config.samples, data_seed)?;
            let recon = cs_one_epoch_reconstructor(&first)?;
            let mut reports =
                vec![cs_normalized_gradient_variances(&recon, &first, CsTraining::Supervised, config.bins)?];
            for scheme in &schemes {
                let data = CsDataset::generate(&model, scheme, config.samples, data_seed)?;
                reports.push(cs_normalized_gradient_variances(&recon, &data, CsTraining::SelfSupervised, config.bins)?);
            }
            Ok(reports)
        }
    })?
}

/// Histogram file for report `index` next to `base`: `<stem>-<index>.csv`.
pub fn histogram_path(base: &Path, index: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("histogram");
    base.with_file_name(format!("{stem}-{index}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::RawConfig;
    use crate::experiments::output::to_csv_string;

    fn config(kind: ExperimentKind) -> SweepConfig {
        SweepConfig::resolve(RawConfig {
            experiment: Some(kind),
            n: Some(20),
            d: Some(4),
            sigma_z: Some(0.1),
            sigma_e: Some(vec![0.0, 0.2]),
            train_sizes: Some(vec![5, 20]),
            trials: Some(2),
            seed: Some(9),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_cell_sweep() {
        let mut c = config(ExperimentKind::DenoiseGd);
        c.trials = 1;
        c.train_sizes = vec![10];
        c.sigma_e = vec![0.0];
        let r = run_sweep(&c).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].risk >= r.rows[0].optimal_risk);
    }

    #[test]
    fn deterministic_across_worker_counts() {
        for kind in [ExperimentKind::DenoiseGd, ExperimentKind::DenoiseSgm] {
            let mut c = config(kind);
            c.workers = Some(1);
            let a = to_csv_string(&run_sweep(&c).unwrap());
            c.workers = Some(3);
            let b = to_csv_string(&run_sweep(&c).unwrap());
            assert_eq!(a, b);
            assert_eq!(a.lines().count(), 1 + 2 * 2 * 2);
        }
    }

    #[test]
    fn excess_is_risk_minus_optimal() {
        let r = run_sweep(&config(ExperimentKind::DenoiseSgm)).unwrap();
        for row in &r.rows {
            assert!((row.excess - (row.risk - row.optimal_risk)).abs() <= 1e-12);
            assert!(row.excess >= -1e-12);
        }
    }

    #[test]
    fn cs_sweep_has_supervised_rows() {
        let c = SweepConfig::resolve(RawConfig {
            experiment: Some(ExperimentKind::CsLinear),
            n: Some(100),
            d: Some(5),
            nu: Some(0.08),
            p: Some(0.25),
            mu: Some(vec![0.33]),
            train_sizes: Some(vec![60]),
            trials: Some(1),
            seed: Some(1),
            max_epochs: Some(50),
            ..Default::default()
        })
        .unwrap();
        let r = run_sweep(&c).unwrap();
        let labels: Vec<_> = r.rows.iter().map(|r| r.experiment.as_str()).collect();
        assert_eq!(labels, vec![CS_SUPERVISED_LABEL, "cs-linear"]);
        assert!(r.rows.iter().all(|r| r.excess >= -1e-12));
    }

    #[test]
    fn histogram_paths() {
        assert_eq!(histogram_path(Path::new("/tmp/h.csv"), 2), PathBuf::from("/tmp/h-2.csv"));
    }
}
