//! Deterministic adversarial training: Adam updates, batch sampling with
//! random crops, the alternating D/G loop with the identity-loss cutoff,
//! checkpointing, transfer restarts, and activation recording for the
//! similarity analyses.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, FeatureSequence};
use crate::diff::{Graph, ParamGrads, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::net::{
    build_discriminator, build_generator, AdamSnapshot, Discriminator, Generator,
    GeneratorConfig, NetworkCheckpoint, RngState,
};
use crate::objectives::{full_d_objective, full_g_objective, AdvLossForm, LossWeights};
use crate::svcca::{layer_sort_key, ActivationMatrix};

/// Hyperparameters of one training run. The defaults are the desk-scale
/// configuration: 2000 iterations with a checkpoint every 200, batch 4,
/// 64-frame crops, and the identity loss active for the first 100
/// iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub checkpoint_every: u64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    #[serde(flatten)]
    pub weights: LossWeights,
    #[serde(default)]
    pub adv_form: AdvLossForm,
    #[serde(default)]
    pub frozen_layers: BTreeSet<String>,
    pub seed: u64,
    /// Optional checkpoint whose network parameters seed a transfer run.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iterations: 2000,
            checkpoint_every: 200,
            batch_size: 4,
            crop_frames: 64,
            lr_g: 1e-4,
            lr_d: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            adv_form: AdvLossForm::LeastSquares,
            frozen_layers: BTreeSet::new(),
            seed: 7,
            init_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 || self.total_iterations % self.checkpoint_every != 0 {
            return Err(Error::ConfigError(format!(
                "checkpoint_every ({}) must divide total_iterations ({})",
                self.checkpoint_every, self.total_iterations
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigError("batch_size must be >= 1".into()));
        }
        if self.crop_frames < 4 || self.crop_frames % 4 != 0 {
            return Err(Error::ConfigError(format!(
                "crop_frames must be >= 4 and divisible by 4, got {}",
                self.crop_frames
            )));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 || self.adam_eps <= 0.0 {
            return Err(Error::ConfigError("learning rates and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::ConfigError("adam betas must lie in [0, 1)".into()));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// Loss components and gradient norms for one iteration.
#[derive(Debug, Clone, Copy)]
pub struct TrainRecord {
    pub iteration: u64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cyc: f64,
    pub id: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub grad_norm_max: f64,
}

/// Full per-iteration history of one run.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Generator layer names, aligned with the inner vectors of
    /// `layer_grad_norms`.
    pub layer_names: Vec<String>,
    /// Per iteration, per generator layer: L2 norm of the parameter
    /// gradients (0 for frozen layers).
    pub layer_grad_norms: Vec<Vec<f64>>,
    pub diverged_at: Option<u64>,
    pub wall_time_secs: f64,
}

impl TrainLog {
    /// CSV with one row per iteration:
    /// `iteration,adv_g,adv_d,cyc,id,total_g,total_d,grad_norm_max`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("iteration,adv_g,adv_d,cyc,id,total_g,total_d,grad_norm_max\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.iteration, r.adv_g, r.adv_d, r.cyc, r.id, r.total_g, r.total_d, r.grad_norm_max
            ));
        }
        out
    }
}

/// One bias-corrected Adam update over every parameter that received a
/// gradient. Parameters without gradients (frozen or untouched) keep both
/// their values and their moments.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &ParamGrads,
    moments: &mut AdamSnapshot,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    moments.step += 1;
    let t = moments.step;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for idx in 0..store.len() {
        let id = crate::diff::ParamId(idx);
        let Some(g) = grads.get(id) else { continue };
        if !g.all_finite() {
            return Err(Error::DivergenceError {
                iteration: t,
                what: "non-finite gradient".into(),
            });
        }
        let m = &mut moments.m[idx];
        let v = &mut moments.v[idx];
        let theta = store.get_mut(id).data_mut();
        for ((mv, vv), (tv, gv)) in m
            .iter_mut()
            .zip(v.iter_mut())
            .zip(theta.iter_mut().zip(g.data()))
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *tv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One sampled training batch: stacked crops with their source and target
/// domain codes.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Draw a batch: uniform source domain, uniform sentence within it, uniform
/// target among the other domains, uniform crop offset. Sequences shorter
/// than the crop are wrap-padded from a random start.
pub fn sample_batch(
    dataset: &Dataset,
    rng: &mut ChaCha8Rng,
    batch_size: usize,
    crop_frames: usize,
) -> Result<Batch> {
    let n = dataset.n_domains;
    let per_domain: Vec<Vec<usize>> = (0..n).map(|d| dataset.domain_indices(d)).collect();
    for (d, idxs) in per_domain.iter().enumerate() {
        if idxs.is_empty() {
            return Err(Error::ConfigError(format!("domain {} has no sequences", d)));
        }
    }
    let q = dataset.q;
    let mut x = Tensor::zeros(&[batch_size, 1, q, crop_frames]);
    let mut sources = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    for b in 0..batch_size {
        let c = rng.random_range(0..n);
        let seq = &dataset.sequences[per_domain[c][rng.random_range(0..per_domain[c].len())]];
        let pick = rng.random_range(0..n - 1);
        let c_hat = if pick >= c { pick + 1 } else { pick };
        let start = if seq.t >= crop_frames {
            rng.random_range(0..=seq.t - crop_frames)
        } else {
            rng.random_range(0..seq.t)
        };
        let dst = x.data_mut();
        for r in 0..q {
            for f in 0..crop_frames {
                let src_col = (start + f) % seq.t;
                dst[((b * q) + r) * crop_frames + f] = seq.data[r * seq.t + src_col];
            }
        }
        sources.push(c);
        targets.push(c_hat);
    }
    Ok(Batch {
        x,
        sources,
        targets,
    })
}

/// How a run is initialized.
pub enum InitFrom<'a> {
    /// Fresh parameters from the generator config seed.
    Fresh,
    /// Network parameters from a checkpoint, fresh optimizer moments and a
    /// fresh batch stream (transfer learning).
    Transfer(&'a NetworkCheckpoint),
    /// Full state from a checkpoint: continues the interrupted run
    /// bit-exactly.
    Resume(&'a NetworkCheckpoint),
}

/// Everything a finished (or halted) run produces.
pub struct TrainOutcome {
    pub final_checkpoint: NetworkCheckpoint,
    /// Checkpoints at the configured cadence (iteration `checkpoint_every`,
    /// `2*checkpoint_every`, ...).
    pub checkpoints: Vec<NetworkCheckpoint>,
    pub log: TrainLog,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

/// Run the alternating D-step/G-step loop to `cfg.total_iterations`.
///
/// Divergence (a non-finite loss or gradient) flags the log and halts the
/// run gracefully; everything trained so far is returned.
pub fn train(
    gen_cfg: &GeneratorConfig,
    cfg: &TrainConfig,
    dataset: &Dataset,
    init: InitFrom,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.q != gen_cfg.q_features {
        return Err(Error::ConfigError(format!(
            "dataset q {} does not match generator q {}",
            dataset.q, gen_cfg.q_features
        )));
    }
    if dataset.n_domains != gen_cfg.n_domains {
        return Err(Error::ConfigError(format!(
            "dataset has {} domains, generator {}",
            dataset.n_domains, gen_cfg.n_domains
        )));
    }

    let mut gen = build_generator(gen_cfg)?;
    let mut disc = build_discriminator(gen_cfg)?;
    let mut opt_g = AdamSnapshot::zeros(&gen.params);
    let mut opt_d = AdamSnapshot::zeros(&disc.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut start_iteration: u64 = 0;

    match init {
        InitFrom::Fresh => {}
        InitFrom::Transfer(ckpt) => {
            ckpt.apply_to_generator(&mut gen)?;
            ckpt.apply_to_discriminator(&mut disc)?;
        }
        InitFrom::Resume(ckpt) => {
            ckpt.apply_to_generator(&mut gen)?;
            ckpt.apply_to_discriminator(&mut disc)?;
            opt_g = ckpt.opt_g.clone();
            opt_d = ckpt.opt_d.clone();
            rng = ckpt.rng.restore();
            start_iteration = ckpt.iteration;
        }
    }
    gen.freeze_layers(&cfg.frozen_layers)?;

    let layer_names = gen.layer_names();
    let mut log = TrainLog {
        layer_names: layer_names.clone(),
        ..Default::default()
    };
    let mut checkpoints = Vec::new();
    let started = Instant::now();

    let mut diverged = false;
    for iteration in start_iteration..cfg.total_iterations {
        let batch = sample_batch(dataset, &mut rng, cfg.batch_size, cfg.crop_frames)?;

        // discriminator step: generator detached
        let mut gd = Graph::new();
        let x_d = gd.input(batch.x.clone());
        let d_loss = full_d_objective(
            &mut gd,
            &gen,
            &disc,
            x_d,
            &batch.sources,
            &batch.targets,
            cfg.adv_form,
        )?;
        let adv_d = gd.value(d_loss).item();
        let d_grads = gd.backward(d_loss)?;
        let d_pgrads = gd.param_grads(&d_grads, &disc.params);
        let d_step = adam_step(
            &mut disc.params,
            &d_pgrads,
            &mut opt_d,
            cfg.lr_d,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        );

        // generator step: discriminator detached
        let mut gg = Graph::new();
        let x_g = gg.input(batch.x.clone());
        let obj = full_g_objective(
            &mut gg,
            &gen,
            &disc,
            x_g,
            &batch.sources,
            &batch.targets,
            &cfg.weights,
            iteration,
            cfg.adv_form,
        )?;
        let adv_g = gg.value(obj.adv).item();
        let cyc = gg.value(obj.cyc).item();
        let id = obj.id.map(|n| gg.value(n).item()).unwrap_or(0.0);
        let total_g = gg.value(obj.total).item();
        let g_grads = gg.backward(obj.total)?;
        let g_pgrads = gg.param_grads(&g_grads, &gen.params);

        // per-layer gradient norms before the update consumes them
        let mut norms = Vec::with_capacity(layer_names.len());
        for name in &layer_names {
            let mut sq = 0.0f64;
            for pid in gen.layer_param_ids(name)? {
                if let Some(g) = g_pgrads.get(pid) {
                    sq += g.data().iter().map(|v| v * v).sum::<f64>();
                }
            }
            norms.push(sq.sqrt());
        }
        let grad_norm_max = norms.iter().cloned().fold(0.0f64, f64::max);

        let g_step = adam_step(
            &mut gen.params,
            &g_pgrads,
            &mut opt_g,
            cfg.lr_g,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        );

        log.records.push(TrainRecord {
            iteration,
            adv_g,
            adv_d,
            cyc,
            id,
            total_g,
            total_d: adv_d,
            grad_norm_max,
        });
        log.layer_grad_norms.push(norms);

        let finite = [adv_g, adv_d, cyc, id, total_g].iter().all(|v| v.is_finite());
        let mut step_diverged = false;
        for step in [d_step, g_step] {
            match step {
                Err(Error::DivergenceError { .. }) => step_diverged = true,
                other => other?,
            }
        }
        if !finite || step_diverged {
            log.diverged_at = Some(iteration);
            diverged = true;
            break;
        }

        if (iteration + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push(NetworkCheckpoint {
                iteration: iteration + 1,
                gen_cfg: gen_cfg.clone(),
                gen_params: crate::net::snapshot_params(&gen.params),
                disc_params: crate::net::snapshot_params(&disc.params),
                opt_g: opt_g.clone(),
                opt_d: opt_d.clone(),
                rng: RngState::capture(&rng),
            });
        }
    }

    log.wall_time_secs = started.elapsed().as_secs_f64();
    let final_checkpoint = checkpoints.last().cloned().unwrap_or_else(|| {
        // runs shorter than one cadence (or diverged early) still report
        // their current state
        NetworkCheckpoint {
            iteration: if diverged {
                log.diverged_at.unwrap_or(start_iteration)
            } else {
                cfg.total_iterations.max(start_iteration)
            },
            gen_cfg: gen_cfg.clone(),
            gen_params: crate::net::snapshot_params(&gen.params),
            disc_params: crate::net::snapshot_params(&disc.params),
            opt_g: opt_g.clone(),
            opt_d: opt_d.clone(),
            rng: RngState::capture(&rng),
        }
    });

    Ok(TrainOutcome {
        final_checkpoint,
        checkpoints,
        log,
        generator: gen,
        discriminator: disc,
    })
}

/// A fixed set of probe inputs shared by every activation dump in one
/// comparison: sequences trimmed to a multiple of four frames, each with a
/// deterministic conversion target.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub items: Vec<(FeatureSequence, usize)>,
}

/// Deterministic probe: sequences taken round-robin across domains, target
/// code = (domain + 1) mod n.
pub fn build_probe_set(dataset: &Dataset, n_sequences: usize) -> Result<ProbeSet> {
    dataset.validate()?;
    if n_sequences == 0 {
        return Err(Error::ConfigError("probe needs at least one sequence".into()));
    }
    let n = dataset.n_domains;
    let mut items = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        let d = i % n;
        let idxs = dataset.domain_indices(d);
        let seq = &dataset.sequences[idxs[(i / n) % idxs.len()]];
        let t4 = seq.t - seq.t % 4;
        if t4 < 4 {
            return Err(Error::InvalidData(format!(
                "probe sequence {} too short ({} frames)",
                seq.id, seq.t
            )));
        }
        let mut trimmed = seq.clone();
        if t4 != seq.t {
            let mut data = vec![0.0; seq.q * t4];
            for r in 0..seq.q {
                data[r * t4..(r + 1) * t4]
                    .copy_from_slice(&seq.data[r * seq.t..r * seq.t + t4]);
            }
            trimmed = FeatureSequence {
                q: seq.q,
                t: t4,
                data,
                domain: seq.domain,
                id: seq.id.clone(),
            };
        }
        items.push((trimmed, (d + 1) % n));
    }
    Ok(ProbeSet { items })
}

/// Run the probe through a generator and collect one activation matrix per
/// requested layer: channels as rows, probe frames (all sequences
/// concatenated, batch x spatial) as columns.
pub fn record_activations(
    gen: &Generator,
    probe: &ProbeSet,
    layers: &BTreeSet<String>,
    checkpoint_iteration: u64,
) -> Result<Vec<ActivationMatrix>> {
    if probe.items.is_empty() {
        return Err(Error::ConfigError("empty probe set".into()));
    }
    for name in layers {
        if !gen.layer_names().contains(name) {
            return Err(Error::LayerSetMismatch(format!("unknown layer {:?}", name)));
        }
    }
    // per layer: rows and accumulated columns
    let mut acc: Vec<(String, usize, Vec<Vec<f64>>)> = Vec::new();
    for (seq, target) in &probe.items {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(
            vec![1, 1, seq.q, seq.t],
            seq.data.clone(),
        )?);
        let (_, taps) = gen.forward(&mut g, x, &[*target], layers, false)?;
        for (name, node) in taps {
            let t = g.value(node);
            let shape = t.shape();
            let (c, sp) = (shape[1], shape[2..].iter().product::<usize>());
            let entry = match acc.iter_mut().find(|(n, _, _)| *n == name) {
                Some(e) => e,
                None => {
                    acc.push((name.clone(), c, vec![Vec::new(); c]));
                    acc.last_mut().unwrap()
                }
            };
            if entry.1 != c {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} changed channel count across probe items",
                    name
                )));
            }
            for ch in 0..c {
                entry.2[ch].extend_from_slice(&t.data()[ch * sp..(ch + 1) * sp]);
            }
        }
    }
    let mut out = Vec::with_capacity(acc.len());
    for (name, rows, cols) in acc {
        let ncols = cols[0].len();
        let mut data = Vec::with_capacity(rows * ncols);
        for row in &cols {
            data.extend_from_slice(row);
        }
        out.push(ActivationMatrix::new(
            name,
            rows,
            ncols,
            data,
            checkpoint_iteration,
        )?);
    }
    out.sort_by_key(|m| layer_sort_key(&m.layer_name).expect("canonical layer name"));
    Ok(out)
}
