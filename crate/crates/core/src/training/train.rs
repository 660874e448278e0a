use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{LossValues, LossVars, LossWeights};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, checkpoint, AdamConfig, AdamState, BoundParams, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        TrainConfig { steps, batch: 1, lr: 1e-3, weights: LossWeights::for_steps(steps), checkpoint_every: 0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch == 0 || !(self.lr > 0.0) {
            return Err(Error::invalid(format!("batch {} and learning rate {} must be positive", self.batch, self.lr)));
        }
        Ok(())
    }
}

/// Parameters, optimizer moments and the number of completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    step: usize,
    adam_step: u64,
}

impl TrainState {
    pub fn fresh(params: ParamStore<f32>) -> Self {
        TrainState { params, adam: AdamState::new(), step: 0 }
    }

    /// Writes `<stem>.plt`, `<stem>.adam.plt` and `<stem>.state.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&dir.join(format!("{stem}.plt")), &self.params)?;
        let mut moments = ParamStore::new();
        for (n, t) in self.adam.m.iter() {
            moments.insert(format!("m.{n}"), t.clone());
        }
        for (n, t) in self.adam.v.iter() {
            moments.insert(format!("v.{n}"), t.clone());
        }
        checkpoint::save(&dir.join(format!("{stem}.adam.plt")), &moments)?;
        let meta = StateMeta { step: self.step, adam_step: self.adam.step };
        std::fs::write(dir.join(format!("{stem}.state.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let params = checkpoint::load(&dir.join(format!("{stem}.plt")))?;
        let meta: StateMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.state.json")))?)?;
        let moments: ParamStore<f32> = checkpoint::load(&dir.join(format!("{stem}.adam.plt")))?;
        let mut adam = AdamState::new();
        adam.step = meta.adam_step;
        for (n, t) in moments.iter() {
            if let Some(name) = n.strip_prefix("m.") {
                adam.m.insert(name, t.clone());
            } else if let Some(name) = n.strip_prefix("v.") {
                adam.v.insert(name, t.clone());
            }
        }
        Ok(TrainState { params, adam, step: meta.step })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: LossValues,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "iteration,total,mse,proxy,neg,gamma,seconds";

impl LogRow {
    pub fn csv(&self) -> String {
        let l = &self.loss;
        format!("{},{},{},{},{},{},{:.3}", self.iteration, l.total, l.mse, l.proxy, l.neg, l.gamma, self.seconds)
    }
}

/// Where checkpoints and the CSV log go.
#[derive(Clone, Debug)]
pub struct Output {
    pub dir: PathBuf,
    pub stem: String,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, stem: impl Into<String>) -> Self {
        Output { dir: dir.into(), stem: stem.into() }
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(format!("{}_log.csv", self.stem))
    }
}

/// Sample indices used at step `t`; a pure function of `(seed, t)` so resumed
/// runs see the same sequence.
pub fn step_batch(seed: u64, t: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

/// Adam loop over `state.step..cfg.steps`. `loss` builds the graph for one
/// sample at one iteration and returns its terms.
pub(crate) fn run<F>(
    mut state: TrainState,
    samples: usize,
    cfg: &TrainConfig,
    out: Option<&Output>,
    describe: impl Fn(usize) -> String,
    loss: F,
) -> Result<(TrainState, Vec<LogRow>)>
where
    F: Fn(&mut Tape<f32>, &BoundParams, usize, usize) -> Result<LossVars>,
{
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut log_file = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.dir)?;
            let path = o.log_path();
            let fresh = state.step == 0 || !path.exists();
            let mut f = std::fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path)?;
            if fresh {
                writeln!(f, "{LOG_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };
    let start = Instant::now();
    let mut rows = Vec::new();
    while state.step < cfg.steps {
        let t = state.step;
        let mut tape = Tape::new();
        let bound = state.params.bind(&mut tape);
        let batch = step_batch(cfg.seed, t, cfg.batch, samples);
        let mut parts = Vec::with_capacity(batch.len());
        for &i in &batch {
            parts.push(loss(&mut tape, &bound, i, t)?);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut values = LossValues { gamma: parts[0].gamma, ..LossValues::default() };
        for p in &parts {
            let v = p.values(&tape);
            values.total += scale * v.total;
            values.mse += scale * v.mse;
            values.proxy += scale * v.proxy;
            values.neg += scale * v.neg;
        }
        if ![values.total, values.mse, values.proxy, values.neg].iter().all(|v| v.is_finite()) {
            let detail = format!(
                "losses {values:?}; samples {}",
                batch.iter().map(|&i| describe(i)).collect::<Vec<_>>().join("; ")
            );
            if let Some(o) = out {
                let dump = serde_json::json!({ "iteration": t, "losses": values, "samples": batch.iter().map(|&i| describe(i)).collect::<Vec<_>>() });
                std::fs::write(o.dir.join(format!("{}_diagnostics.json", o.stem)), serde_json::to_string_pretty(&dump)?)?;
            }
            return Err(Error::NonFiniteLoss { iteration: t, detail });
        }
        let terms: Vec<_> = parts.iter().map(|p| (p.total, vec![scale as f32])).collect();
        let total = tape.weighted_sum(&terms)?;
        tape.backward(total)?;
        let grads = bound.grads(&tape, &state.params);
        adam_step(&mut state.params, &grads, &mut state.adam, &adam)?;
        state.step += 1;
        let row = LogRow { iteration: t, loss: values, seconds: start.elapsed().as_secs_f64() };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", row.csv())?;
        }
        rows.push(row);
        if let Some(o) = out {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                state.save(&o.dir, &o.stem)?;
            }
        }
    }
    if let Some(o) = out {
        state.save(&o.dir, &o.stem)?;
    }
    Ok((state, rows))
}
