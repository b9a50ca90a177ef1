//! The training loop.
//!
//! Every step has two phases. The read phase evaluates unit gradients of the
//! current network at the batch queries and at all of their neighbours, then
//! builds the IMLS targets from them. The update phase fits the network to
//! those targets, which are plain numbers by then, and takes one Adam step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::imls::{imls_value_with_gradients, ImlsConfig};
use crate::mlp::{write_checkpoint, AdamConfig, AdamState, Checkpoint, Field, InitMode, MlpConfig, MlpParams};
use crate::sampler::{
    assemble_all, cache_key, generate_queries, make_batches, read_cache, write_cache, NeighborhoodMode,
    Neighborhoods, SamplerConfig,
};
use crate::spatial::NeighborIndex;

/// Relative loss change over [`EARLY_STOP_WINDOW`] epochs below which the
/// optional early stop fires.
pub const EARLY_STOP_TOLERANCE: f64 = 1e-5;
pub const EARLY_STOP_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub imls: ImlsConfig,
    pub sampler: SamplerConfig,
    pub mlp: MlpConfig,
    /// Seeds initialization and batch order. Query sampling uses `sampler.seed`.
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Write a CSV log line every this many steps (0 disables).
    pub log_every: usize,
    pub log_path: Option<PathBuf>,
    pub early_stop: bool,
    pub neighborhood_cache: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 100,
            learning_rate: 5e-5,
            imls: ImlsConfig::default(),
            sampler: SamplerConfig::default(),
            mlp: MlpConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_every: 1,
            log_path: None,
            early_stop: false,
            neighborhood_cache: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_dir".into()));
        }
        self.imls.validate()?;
        self.sampler.validate()?;
        self.mlp.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared residual over all queries of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub steps: u64,
    /// Unit-gradient evaluations that hit the vanishing-gradient fallback.
    pub degenerate_gradients: u64,
    /// Query evaluations skipped because every IMLS weight underflowed.
    pub degenerate_weights: u64,
    pub valid_queries: usize,
    pub invalid_queries: usize,
    pub stopped_early: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NoTheta,
    NoPsi,
    NoGni,
    Knn(usize),
}

impl AblationMode {
    pub const KNN_PRESETS: [usize; 3] = [100, 300, 500];

    pub fn name(&self) -> String {
        match self {
            AblationMode::Full => "full".into(),
            AblationMode::NoTheta => "no_theta".into(),
            AblationMode::NoPsi => "no_psi".into(),
            AblationMode::NoGni => "no_gni".into(),
            AblationMode::Knn(k) => format!("knn{k}"),
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    /// Accepts `full`, `no_theta`, `no_psi`, `no_gni`, and `knn<k>` or `knn:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_theta" => Ok(Self::NoTheta),
            "no_psi" => Ok(Self::NoPsi),
            "no_gni" => Ok(Self::NoGni),
            _ => s
                .strip_prefix("knn")
                .map(|k| k.trim_start_matches([':', '_']))
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k > 0)
                .map(Self::Knn)
                .ok_or_else(|| Error::Config(format!("unknown ablation mode '{s}'"))),
        }
    }
}

/// Derives the configuration for one ablation variant.
pub fn ablation_mode(config: &TrainConfig, mode: AblationMode) -> Result<TrainConfig> {
    config.validate()?;
    let mut out = config.clone();
    match mode {
        AblationMode::Full => {}
        AblationMode::NoTheta => out.imls.use_theta = false,
        AblationMode::NoPsi => out.imls.use_psi = false,
        AblationMode::NoGni => out.mlp.init_mode = InitMode::Random,
        AblationMode::Knn(0) => return Err(Error::Config("knn ablation needs k ≥ 1".into())),
        AblationMode::Knn(k) => out.sampler.mode = NeighborhoodMode::Knn(k),
    }
    Ok(out)
}

/// Value and gradient norm of the field at every point.
pub fn evaluate_field<F: Field + ?Sized>(field: &F, points: &[Point3]) -> Result<Vec<(f64, f64)>> {
    let values = field.values(points)?;
    let grads = field.gradients(points)?;
    Ok(values.into_iter().zip(grads).map(|(v, g)| (v, g.norm())).collect())
}

/// Passed to the per-epoch observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub steps: u64,
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub queries: usize,
    /// Parameter version observed by every read in the step.
    pub read_version: u64,
}

type TargetHook<'a> = Box<dyn Fn(&MlpParams, &[Point3]) -> Result<Vec<f64>> + 'a>;

pub struct Trainer<'a> {
    cloud: &'a PointCloud,
    config: TrainConfig,
    imls: ImlsConfig,
    hoods: Neighborhoods,
    params: MlpParams,
    adam: AdamState,
    /// Number of completed epochs.
    epoch: usize,
    /// Incremented by every parameter update.
    version: u64,
    report: TrainReport,
    slot: Vec<usize>,
    log: Option<BufWriter<File>>,
    target_hook: Option<TargetHook<'a>>,
}

const NO_SLOT: usize = usize::MAX;

impl<'a> Trainer<'a> {
    pub fn new(cloud: &'a PointCloud, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = MlpParams::init(&config.mlp, config.seed)?;
        let adam = AdamState::new(&params, config.adam());
        Self::assemble(cloud, config, params, adam, 0)
    }

    /// Continues from a checkpoint; the run then matches an uninterrupted one.
    pub fn resume(cloud: &'a PointCloud, config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        config.validate()?;
        if checkpoint.params.config() != &config.mlp {
            return Err(Error::Config("checkpoint network configuration differs from the run".into()));
        }
        Self::assemble(cloud, config, checkpoint.params, checkpoint.adam, checkpoint.epoch)
    }

    fn assemble(
        cloud: &'a PointCloud,
        config: TrainConfig,
        params: MlpParams,
        adam: AdamState,
        epoch: usize,
    ) -> Result<Self> {
        let dim = config.mlp.input_dim;
        let imls = config.sampler.resolve(&config.imls);
        let index = NeighborIndex::build(cloud.points())?;
        let (queries, sources) = generate_queries(cloud, &index, &config.sampler, dim);
        let hoods = match &config.neighborhood_cache {
            Some(path) => {
                let key = cache_key(cloud, &queries, &imls, &config.sampler);
                match read_cache(path, &key, cloud)? {
                    Some(h) => {
                        info!("loaded {} neighbourhoods from {}", h.valid.len(), path.display());
                        h
                    }
                    None => {
                        let h = assemble_all(cloud, &index, &queries, &sources, &imls, &config.sampler)?;
                        write_cache(path, &key, &h)?;
                        h
                    }
                }
            }
            None => assemble_all(cloud, &index, &queries, &sources, &imls, &config.sampler)?,
        };
        if hoods.valid.is_empty() {
            return Err(Error::Config(format!(
                "all {} queries are invalid; the search radius {} · d_P is too small for this cloud",
                hoods.invalid, imls.radius_fraction
            )));
        }
        info!(
            "{} valid queries, {} invalid ({:.1}%)",
            hoods.valid.len(),
            hoods.invalid,
            100.0 * hoods.invalid as f64 / queries.len() as f64
        );
        let log = match &config.log_path {
            Some(path) if config.log_every > 0 => {
                let f = File::create(path).map_err(|e| Error::io(path, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "step,epoch,batch_loss,running_mean,degenerate_events").map_err(|e| Error::io(path, e))?;
                Some(w)
            }
            _ => None,
        };
        let report = TrainReport {
            valid_queries: hoods.valid.len(),
            invalid_queries: hoods.invalid,
            steps: adam.step,
            ..TrainReport::default()
        };
        Ok(Self {
            cloud,
            imls,
            hoods,
            version: adam.step,
            params,
            adam,
            epoch,
            report,
            slot: vec![NO_SLOT; cloud.len()],
            log,
            target_hook: None,
            config,
        })
    }

    /// Replaces the IMLS targets by `hook(params, queries)`. Meant for tests.
    pub fn set_target_hook(&mut self, hook: impl Fn(&MlpParams, &[Point3]) -> Result<Vec<f64>> + 'a) {
        self.target_hook = Some(Box::new(hook));
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn neighborhoods(&self) -> &Neighborhoods {
        &self.hoods
    }

    /// The IMLS settings in effect, noise preset included.
    pub fn imls_config(&self) -> &ImlsConfig {
        &self.imls
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn params_version(&self) -> u64 {
        self.version
    }

    pub fn completed_epochs(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            seed: self.config.seed,
            epoch: self.epoch,
            transform: None,
        }
    }

    /// IMLS targets for the given neighbourhoods with the current parameters.
    /// Entries are `None` where every weight underflowed.
    pub fn targets(&mut self, batch: &[usize]) -> Result<Vec<Option<f64>>> {
        Ok(self.read_phase(batch)?.0)
    }

    fn read_phase(&mut self, batch: &[usize]) -> Result<(Vec<Option<f64>>, u64)> {
        let version = self.version;
        let hoods = &self.hoods.valid;
        let mut points: Vec<Point3> = batch.iter().map(|&b| hoods[b].query).collect();
        let mut touched = Vec::new();
        for &b in batch {
            for i in hoods[b].neighbors.valid_indices() {
                if self.slot[i] == NO_SLOT {
                    self.slot[i] = points.len();
                    points.push(self.cloud.points()[i]);
                    touched.push(i);
                }
            }
        }
        let unit = self.params.unit_gradients(&points)?;
        self.report.degenerate_gradients += unit.iter().filter(|u| u.degenerate).count() as u64;

        let mut targets = Vec::with_capacity(batch.len());
        let mut entry_grads = Vec::new();
        for (j, &b) in batch.iter().enumerate() {
            let set = &hoods[b].neighbors;
            entry_grads.clear();
            entry_grads.extend(set.indices().iter().zip(set.mask()).map(|(&i, &m)| {
                if m {
                    unit[self.slot[i]].direction
                } else {
                    Point3::zeros()
                }
            }));
            let value = match imls_value_with_gradients(&points[j], &unit[j].direction, set, &entry_grads, &self.imls) {
                Ok(v) => Some(v),
                Err(Error::DegenerateWeights) => {
                    self.report.degenerate_weights += 1;
                    None
                }
                Err(e) => return Err(e),
            };
            targets.push(value);
        }
        for i in touched {
            self.slot[i] = NO_SLOT;
        }
        if let Some(hook) = &self.target_hook {
            let queries: Vec<Point3> = batch.iter().map(|&b| hoods[b].query).collect();
            let forced = hook(&self.params, &queries)?;
            targets = forced.into_iter().map(Some).collect();
        }
        Ok((targets, version))
    }

    /// One optimizer step on the given neighbourhood indices. Returns `None`
    /// when no query of the batch produced a target.
    pub fn step(&mut self, batch: &[usize]) -> Result<Option<StepOutcome>> {
        let (targets, read_version) = self.read_phase(batch)?;
        let pairs: Vec<(Point3, f64)> = batch
            .iter()
            .zip(&targets)
            .filter_map(|(&b, t)| t.map(|t| (self.hoods.valid[b].query, t)))
            .collect();
        if pairs.is_empty() {
            return Ok(None);
        }
        assert_eq!(read_version, self.version, "parameters changed during the read phase");
        let (loss, grads) = self.params.loss_and_param_gradients(&pairs)?;
        if !loss.is_finite() {
            return Err(self.diverged(loss));
        }
        self.adam.step(&mut self.params, &grads)?;
        self.version += 1;
        self.report.steps += 1;
        Ok(Some(StepOutcome {
            loss,
            queries: pairs.len(),
            read_version,
        }))
    }

    fn diverged(&self, loss: f64) -> Error {
        let epoch = self.epoch + 1;
        if let Some(dir) = &self.config.checkpoint_dir {
            let path = dir.join("divergence.ckpt");
            match write_checkpoint(&path, &self.checkpoint()) {
                Ok(()) => warn!("wrote divergence snapshot to {}", path.display()),
                Err(e) => warn!("could not write divergence snapshot: {e}"),
            }
        }
        Error::Divergence { epoch, loss }
    }

    fn log_line(&mut self, line: String) -> Result<()> {
        if let (Some(w), Some(path)) = (self.log.as_mut(), self.config.log_path.as_ref()) {
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Runs one epoch and returns its mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let start = Instant::now();
        let batches = make_batches(self.hoods.valid.len(), self.config.batch_size, self.config.seed, self.epoch)?;
        let mut total = 0.0;
        let mut count = 0usize;
        let mut batch_sum = 0.0;
        let mut batch_count = 0usize;
        for batch in &batches {
            let Some(out) = self.step(batch)? else { continue };
            total += out.loss * out.queries as f64;
            count += out.queries;
            batch_sum += out.loss;
            batch_count += 1;
            let every = self.config.log_every;
            if every > 0 && self.report.steps % every as u64 == 0 {
                let events = self.report.degenerate_gradients + self.report.degenerate_weights;
                let line = format!(
                    "{},{},{:e},{:e},{}",
                    self.report.steps,
                    self.epoch + 1,
                    out.loss,
                    batch_sum / batch_count as f64,
                    events
                );
                self.log_line(line)?;
            }
        }
        let loss = if count == 0 { f64::NAN } else { total / count as f64 };
        if !loss.is_finite() {
            return Err(self.diverged(loss));
        }
        self.epoch += 1;
        let seconds = start.elapsed().as_secs_f64();
        self.report.epoch_losses.push(loss);
        self.report.epoch_seconds.push(seconds);
        debug!("epoch {} loss {:e} ({:.1}s)", self.epoch, loss, seconds);
        if let Some(w) = self.log.as_mut() {
            w.flush().map_err(|e| Error::io(self.config.log_path.as_deref().unwrap_or(Path::new("")), e))?;
        }
        if self.config.checkpoint_every > 0 && self.epoch % self.config.checkpoint_every == 0 {
            if let Some(dir) = &self.config.checkpoint_dir {
                let path = dir.join(format!("epoch_{:04}.ckpt", self.epoch));
                write_checkpoint(&path, &self.checkpoint())?;
            }
        }
        Ok(loss)
    }

    fn plateaued(&self) -> bool {
        let l = &self.report.epoch_losses;
        if l.len() <= EARLY_STOP_WINDOW {
            return false;
        }
        let now = l[l.len() - 1];
        let then = l[l.len() - 1 - EARLY_STOP_WINDOW];
        ((now - then) / then).abs() < EARLY_STOP_TOLERANCE
    }

    /// Runs the remaining epochs, calling `observer` after each.
    pub fn run(&mut self, mut observer: impl FnMut(&EpochSummary, &MlpParams) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            let loss = self.run_epoch()?;
            let summary = EpochSummary {
                epoch: self.epoch,
                loss,
                seconds: *self.report.epoch_seconds.last().expect("epoch recorded"),
                steps: self.report.steps,
            };
            info!(
                "epoch {}/{} loss {:.6e} ({:.1}s)",
                summary.epoch, self.config.epochs, loss, summary.seconds
            );
            observer(&summary, &self.params)?;
            if self.config.early_stop && self.plateaued() {
                info!("loss plateaued; stopping after epoch {}", self.epoch);
                self.report.stopped_early = true;
                break;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> (MlpParams, TrainReport) {
        (self.params, self.report)
    }
}

/// Trains a field on `cloud` with `config`.
pub fn train(cloud: &PointCloud, config: TrainConfig) -> Result<(MlpParams, TrainReport)> {
    let mut trainer = Trainer::new(cloud, config)?;
    trainer.run(|_, _| Ok(()))?;
    Ok(trainer.finish())
}
