//! Contrastive training loop with Adam, checkpoints and resume.
//!
//! Step `t` draws its batch from a ChaCha8 stream numbered `t`, so the whole
//! sampler state at a checkpoint is just the step index. Views are encoded in
//! parallel but gradients are summed in batch order, which keeps every
//! artifact independent of the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{read_tensor_file, write_tensor_file, Encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::ntxent::{self, split_pairing, NTXentConfig};
use crate::numcore::Tensor;
use crate::sampler::{Dataset, PairBatch, Sampler, SamplerConfig};
use crate::volume_io::{format_g17, write_atomic};

pub const METRICS_HEADER: &str = "step,loss,grad_norm,pos_cos,neg_cos";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Mixed with `sampler.seed` to seed the batch streams.
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub encoder: EncoderConfig,
    pub loss: NTXentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 500,
            log_every: 10,
            seed: 0,
            sampler: SamplerConfig::default(),
            encoder: EncoderConfig::default(),
            loss: NTXentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("train config", d));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        // lr = 0 is allowed as a frozen-parameter probe
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return bad("checkpoint_every and log_every must be >= 1".into());
        }
        if self.sampler.patch_side != self.encoder.patch_side {
            return bad(format!(
                "sampler.patch_side {} differs from encoder.patch_side {}",
                self.sampler.patch_side, self.encoder.patch_side
            ));
        }
        self.sampler.validate()?;
        self.encoder.validate()?;
        self.loss.validate()
    }

    pub fn stream_seed(&self) -> u64 {
        self.seed ^ self.sampler.seed
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// RNG for the batch of step `step`.
pub fn batch_rng(stream_seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    rng.set_stream(step);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed steps.
    pub step: u64,
    pub encoder: Encoder,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub stream_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateHeader {
    step: u64,
    stream_seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::init(cfg.encoder.clone())?;
        let zeros = EncoderParams::zeros(&cfg.encoder);
        Ok(TrainState {
            step: 0,
            adam_m: zeros.tensors().cloned().collect(),
            adam_v: zeros.tensors().cloned().collect(),
            encoder,
            stream_seed: cfg.stream_seed(),
        })
    }

    /// Optimizer sidecar stored next to an encoder checkpoint.
    pub fn state_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("state")
    }

    /// Writes the encoder checkpoint at `path` and the optimizer state beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.encoder.save(path)?;
        let json = serde_json::to_string(&StateHeader {
            step: self.step,
            stream_seed: self.stream_seed,
        })?;
        let names: Vec<String> = self.encoder.params.iter().map(|(n, _)| n.to_string()).collect();
        let m_names: Vec<String> = names.iter().map(|n| format!("m.{n}")).collect();
        let v_names: Vec<String> = names.iter().map(|n| format!("v.{n}")).collect();
        let tensors = m_names
            .iter()
            .zip(&self.adam_m)
            .chain(v_names.iter().zip(&self.adam_v))
            .map(|(n, t)| (n.as_str(), t));
        write_tensor_file(&Self::state_path(path), &json, tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let encoder = Encoder::load(path)?;
        let state_path = Self::state_path(path);
        let (json, tensors) = read_tensor_file(&state_path)?;
        let header: StateHeader = serde_json::from_str(&json)?;
        let n = encoder.params.len();
        let mismatch = |detail: String| Error::shape("optimizer state", format!("{}: {detail}", state_path.display()));
        if tensors.len() != 2 * n {
            return Err(mismatch(format!("{} tensors, expected {}", tensors.len(), 2 * n)));
        }
        let mut adam_m = Vec::with_capacity(n);
        let mut adam_v = Vec::with_capacity(n);
        let params: Vec<(&str, &Tensor)> = encoder.params.iter().collect();
        for (i, (tname, t)) in tensors.into_iter().enumerate() {
            let (pname, p) = params[i % n];
            let prefix = if i < n { "m" } else { "v" };
            if tname != format!("{prefix}.{pname}") || t.shape() != p.shape() {
                return Err(mismatch(format!("tensor {tname} {:?} does not mirror {pname} {:?}", t.shape(), p.shape())));
            }
            if i < n { adam_m.push(t) } else { adam_v.push(t) }
        }
        Ok(TrainState {
            step: header.step,
            encoder,
            adam_m,
            adam_v,
            stream_seed: header.stream_seed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// 1-based index of the step just taken.
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub pos_cos: f64,
    pub neg_cos: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step,
            format_g17(self.loss),
            format_g17(self.grad_norm),
            format_g17(self.pos_cos),
            format_g17(self.neg_cos)
        )
    }
}

/// FNV-1a over the batch's synapse ids, for error reports.
pub fn batch_fingerprint(batch: &PairBatch) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for id in batch.synapse_ids_a.iter().chain(&batch.synapse_ids_b) {
        for b in id.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// One Adam update of `param` in place; `t` is the 1-based step.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &TrainConfig) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, &g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

fn cos_stats(z: &[Tensor], partner: &[usize]) -> (f64, f64) {
    let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    let rows = z.len();
    let pos = (0..rows).map(|i| dot(&z[i], &z[partner[i]])).sum::<f64>() / rows as f64;
    let mut neg = 0.0;
    let mut count = 0usize;
    for i in 0..rows {
        for k in 0..rows {
            if k != i && k != partner[i] {
                neg += dot(&z[i], &z[k]);
                count += 1;
            }
        }
    }
    (pos, if count == 0 { 0.0 } else { neg / count as f64 })
}

/// Samples batch `state.step`, takes one Adam step, and advances `state`.
/// On error `state` is left untouched.
pub fn train_step(state: &mut TrainState, sampler: &Sampler, dataset: &Dataset, cfg: &TrainConfig) -> Result<StepMetrics> {
    let step = state.step + 1;
    let mut rng = batch_rng(state.stream_seed, state.step);
    let batch = sampler.sample_batch(dataset, &mut rng);
    let n = batch.views_a.len();
    let encoder = &state.encoder;

    let views: Vec<&Tensor> = batch.views_a.iter().chain(&batch.views_b).collect();
    let outputs = views
        .par_iter()
        .map(|v| encoder.forward(v))
        .collect::<Result<Vec<_>>>()?;

    let d = cfg.encoder.z_dim;
    let zs: Vec<Tensor> = outputs.iter().map(|o| o.z.clone()).collect();
    let z = Tensor::from_vec(&[2 * n, d], zs.iter().flat_map(|t| t.data().iter().copied()).collect())?;
    let partner = split_pairing(n);
    let fingerprint = batch_fingerprint(&batch);
    let non_finite = |quantity| Error::NonFinite {
        quantity,
        step,
        fingerprint,
    };
    if !z.all_finite() {
        return Err(non_finite("embedding"));
    }
    let (loss, d_z) = ntxent::loss(&z, &partner, &cfg.loss)?;
    if !loss.is_finite() {
        return Err(non_finite("loss"));
    }

    let zero_h = Tensor::zeros(&[cfg.encoder.h_dim]);
    let per_view = outputs
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let dz = Tensor::from_vec(&[d], d_z.data()[i * d..(i + 1) * d].to_vec())?;
            Ok(encoder.backward(&o.cache, &dz, &zero_h)?.params)
        })
        .collect::<Result<Vec<_>>>()?;
    drop(outputs);

    let mut grads = per_view.into_iter();
    let mut total = grads.next().expect("batch is non-empty");
    for g in grads {
        for (acc, t) in total.iter_mut().zip(&g) {
            acc.add_assign(t)?;
        }
    }
    let grad_norm = total.iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(non_finite("gradient"));
    }

    let (pos_cos, neg_cos) = cos_stats(&zs, &partner);
    for (((p, g), m), v) in state
        .encoder
        .params
        .tensors_mut()
        .zip(&total)
        .zip(state.adam_m.iter_mut())
        .zip(state.adam_v.iter_mut())
    {
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), step, cfg);
    }
    state.step = step;
    Ok(StepMetrics {
        step,
        loss,
        grad_norm,
        pos_cos,
        neg_cos,
    })
}

/// Steps `1..=steps` with `(step % every == 0) || step == steps` are logged.
pub fn is_log_step(step: u64, every: u64, steps: u64) -> bool {
    step % every == 0 || step == steps
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("step_{step:06}.ckpt"))
}

pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("final.ckpt")
}

pub fn metrics_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.csv")
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
    pub final_checkpoint: PathBuf,
}

fn run(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    mut state: TrainState,
    mut log_text: String,
    threads: usize,
    mut progress: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomic(&out_dir.join("config.json"), serde_json::to_string_pretty(cfg)?.as_bytes())?;
    let sampler = Sampler::new(dataset, cfg.sampler.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid("thread pool", e.to_string()))?;
    let mut metrics = Vec::new();
    while state.step < cfg.steps {
        let m = pool.install(|| train_step(&mut state, &sampler, dataset, cfg))?;
        if is_log_step(m.step, cfg.log_every, cfg.steps) {
            writeln!(log_text, "{}", m.csv_row()).expect("writing to a String");
            write_atomic(&metrics_path(out_dir), log_text.as_bytes())?;
            progress(&m);
            metrics.push(m);
        }
        if m.step % cfg.checkpoint_every == 0 || m.step == cfg.steps {
            state.save(&checkpoint_path(out_dir, m.step))?;
        }
    }
    let final_checkpoint = final_checkpoint_path(out_dir);
    state.encoder.save(&final_checkpoint)?;
    Ok(TrainOutcome {
        state,
        metrics,
        final_checkpoint,
    })
}

/// Trains from a fresh initialization, writing `config.json`, `metrics.csv`,
/// `step_NNNNNN.ckpt` (+ `.state`) every `checkpoint_every` steps, and `final.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    threads: usize,
    progress: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    let state = TrainState::new(cfg)?;
    run(cfg, dataset, out_dir, state, format!("{METRICS_HEADER}\n"), threads, progress)
}

/// Continues from `checkpoint` (with its `.state` sidecar) up to `cfg.steps`.
/// Rows of an existing `metrics.csv` past the checkpoint step, or off the
/// logging schedule of `cfg`, are dropped.
pub fn resume(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    checkpoint: &Path,
    threads: usize,
    progress: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = TrainState::load(checkpoint)?;
    if state.encoder.config != cfg.encoder {
        return Err(Error::invalid("checkpoint", "encoder config differs from the training config".to_string()));
    }
    if state.stream_seed != cfg.stream_seed() {
        return Err(Error::invalid("checkpoint", "seeds differ from the training config".to_string()));
    }
    let mut log_text = format!("{METRICS_HEADER}\n");
    let path = metrics_path(out_dir);
    if let Ok(existing) = fs::read_to_string(&path) {
        for line in existing.lines().skip(1) {
            let step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::table(path.display().to_string(), 0, format!("bad metrics row `{line}`")))?;
            // a shorter earlier run may have logged its own last step
            if step <= state.step && is_log_step(step, cfg.log_every, cfg.steps) {
                log_text.push_str(line);
                log_text.push('\n');
            }
        }
    }
    run(cfg, dataset, out_dir, state, log_text, threads, progress)
}
