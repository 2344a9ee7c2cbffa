//! Batch drivers for the four interpretability experiments, plus the CSV
//! report format they all emit.
//!
//! Every driver is reproducible bit-exactly from (config, seed): datasets,
//! probes, initializations and batch streams are all derived from explicit
//! seeds, and similarity is always computed on one fixed probe set shared by
//! every activation dump in a comparison.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataio::{normalize_per_domain, synth_dataset, Dataset};
use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::net::{build_generator, Generator, GeneratorConfig, NetworkCheckpoint};
use crate::svcca::{
    compare_checkpoints, group_summary, layer_sort_key, ActivationMatrix, SvccaParams,
};
use crate::trainer::{
    build_probe_set, record_activations, train, InitFrom, ProbeSet, TrainConfig, TrainOutcome,
};

/// Everything the drivers need beyond the train/generator configs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub dataset: crate::dataio::SynthConfig,
    pub dataset_b: Option<crate::dataio::SynthConfig>,
    pub svcca: SvccaParams,
    pub probe_sequences: usize,
}

impl ExperimentConfig {
    /// Shift the network and batch seeds for one replicate; the dataset
    /// stays fixed across replicates.
    fn replicate(&self, seed: u64) -> (GeneratorConfig, TrainConfig) {
        let mut g = self.generator.clone();
        g.seed = g.seed.wrapping_add(seed.wrapping_mul(0x9e37));
        let mut t = self.train.clone();
        t.seed = t.seed.wrapping_add(seed.wrapping_mul(0x85eb));
        (g, t)
    }
}

/// One data or group row of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub checkpoint: u64,
    pub layer: String,
    pub similarity: f64,
}

/// Per-layer, per-checkpoint similarity table with group aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub fingerprint: u64,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Per-layer rows (group rows excluded) for one checkpoint, in canonical
    /// order.
    pub fn layer_rows(&self, checkpoint: u64) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.checkpoint == checkpoint && !r.layer.starts_with("GROUP_"))
            .collect()
    }

    pub fn group_value(&self, checkpoint: u64, group: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.checkpoint == checkpoint && r.layer == group)
            .map(|r| r.similarity)
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        let mut cs: Vec<u64> = self.rows.iter().map(|r| r.checkpoint).collect();
        cs.dedup();
        cs
    }

    /// Mean over the per-layer rows of one checkpoint.
    pub fn mean_layer_similarity(&self, checkpoint: u64) -> f64 {
        let rows = self.layer_rows(checkpoint);
        rows.iter().map(|r| r.similarity).sum::<f64>() / rows.len() as f64
    }
}

/// Append one checkpoint's layer similarities plus the three group rows.
fn push_checkpoint_rows(
    rows: &mut Vec<ReportRow>,
    checkpoint: u64,
    report: &crate::svcca::LayerSimilarityReport,
) -> Result<()> {
    for (layer, sim) in &report.entries {
        rows.push(ReportRow {
            checkpoint,
            layer: layer.clone(),
            similarity: *sim,
        });
    }
    let summary = group_summary(report)?;
    for (name, value) in [
        ("GROUP_D", summary.d_mean),
        ("GROUP_R", summary.r_mean),
        ("GROUP_U", summary.u_mean),
    ] {
        rows.push(ReportRow {
            checkpoint,
            layer: name.to_string(),
            similarity: value,
        });
    }
    Ok(())
}

fn all_layers(gen: &Generator) -> BTreeSet<String> {
    gen.layer_names().into_iter().collect()
}

fn build_dataset(cfg: &crate::dataio::SynthConfig) -> Result<Dataset> {
    let (mut ds, stats) = synth_dataset(cfg)?;
    normalize_per_domain(&mut ds, &stats)?;
    Ok(ds)
}

/// Results of one similarity-vs-initialization run.
pub struct Exp1Outcome {
    pub report: ExperimentReport,
    pub outcome: TrainOutcome,
    pub init_dump: Vec<ActivationMatrix>,
    pub probe: ProbeSet,
    pub dataset: Dataset,
}

/// Train from scratch and compare every checkpoint's representations with
/// the random initialization on a fixed probe set.
pub fn exp1_similarity_vs_init(cfg: &ExperimentConfig, seed: u64) -> Result<Exp1Outcome> {
    let (gen_cfg, train_cfg) = cfg.replicate(seed);
    let dataset = build_dataset(&cfg.dataset)?;
    let probe = build_probe_set(&dataset, cfg.probe_sequences)?;

    let gen0 = build_generator(&gen_cfg)?;
    let layers = all_layers(&gen0);
    let init_dump = record_activations(&gen0, &probe, &layers, 0)?;

    let outcome = train(&gen_cfg, &train_cfg, &dataset, InitFrom::Fresh)?;

    let mut rows = Vec::new();
    for ckpt in &outcome.checkpoints {
        let gen_c = ckpt.restore_generator()?;
        let dump = record_activations(&gen_c, &probe, &layers, ckpt.iteration)?;
        let cmp = compare_checkpoints(&dump, &init_dump, &cfg.svcca)?;
        push_checkpoint_rows(&mut rows, ckpt.iteration, &cmp)?;
    }

    Ok(Exp1Outcome {
        report: ExperimentReport {
            experiment: "exp1".into(),
            seed,
            fingerprint: gen_cfg.fingerprint(),
            rows,
        },
        outcome,
        init_dump,
        probe,
        dataset,
    })
}

/// Results of one transfer-learning run.
pub struct Exp2Outcome {
    /// Similarity of each fine-tuning checkpoint to the pre-transfer network.
    pub report: ExperimentReport,
    /// Similarity of each fine-tuning checkpoint to an independently
    /// re-initialized network; the control the transfer curve is judged
    /// against.
    pub baseline_report: ExperimentReport,
    pub outcome: TrainOutcome,
}

/// Fine-tune a trained checkpoint on the second dataset for half the base
/// run length and track similarity to the pre-transfer representations.
pub fn exp2_transfer(
    cfg: &ExperimentConfig,
    base: &NetworkCheckpoint,
    seed: u64,
) -> Result<Exp2Outcome> {
    let (gen_cfg, mut train_cfg) = cfg.replicate(seed);
    if gen_cfg.fingerprint() != base.fingerprint() {
        return Err(Error::ConfigError(
            "base checkpoint geometry does not match the experiment config".into(),
        ));
    }
    let synth_b = cfg
        .dataset_b
        .clone()
        .ok_or_else(|| Error::ConfigError("exp2 needs dataset_b".into()))?;
    let dataset_b = build_dataset(&synth_b)?;

    // half the base run, same checkpoint cadence
    train_cfg.total_iterations = (train_cfg.total_iterations / 2)
        .max(train_cfg.checkpoint_every);
    train_cfg.total_iterations -= train_cfg.total_iterations % train_cfg.checkpoint_every;
    train_cfg.seed = train_cfg.seed.wrapping_add(0xb2);

    let probe = build_probe_set(&dataset_b, cfg.probe_sequences)?;
    let gen_base = base.restore_generator()?;
    let layers = all_layers(&gen_base);
    let dump_base = record_activations(&gen_base, &probe, &layers, base.iteration)?;

    // independently re-initialized control network
    let mut fresh_cfg = gen_cfg.clone();
    fresh_cfg.seed = fresh_cfg.seed.wrapping_add(0x7777);
    let gen_fresh = build_generator(&fresh_cfg)?;
    let dump_fresh = record_activations(&gen_fresh, &probe, &layers, 0)?;

    let outcome = train(&gen_cfg, &train_cfg, &dataset_b, InitFrom::Transfer(base))?;

    let mut rows = Vec::new();
    let mut baseline_rows = Vec::new();
    for ckpt in &outcome.checkpoints {
        let gen_c = ckpt.restore_generator()?;
        let dump = record_activations(&gen_c, &probe, &layers, ckpt.iteration)?;
        let cmp = compare_checkpoints(&dump, &dump_base, &cfg.svcca)?;
        push_checkpoint_rows(&mut rows, ckpt.iteration, &cmp)?;
        let cmp_fresh = compare_checkpoints(&dump, &dump_fresh, &cfg.svcca)?;
        push_checkpoint_rows(&mut baseline_rows, ckpt.iteration, &cmp_fresh)?;
    }

    Ok(Exp2Outcome {
        report: ExperimentReport {
            experiment: "exp2".into(),
            seed,
            fingerprint: gen_cfg.fingerprint(),
            rows,
        },
        baseline_report: ExperimentReport {
            experiment: "exp2_baseline".into(),
            seed,
            fingerprint: gen_cfg.fingerprint(),
            rows: baseline_rows,
        },
        outcome,
    })
}

/// Default repeat depths for the sweep: the studied depths plus the N = 9
/// baseline.
pub fn default_depth_sweep() -> Vec<usize> {
    vec![3, 5, 7, 9, 11, 13, 15]
}

/// The three frozen-layer variants studied at full scale.
pub fn paper_freeze_variants() -> Vec<(String, Vec<String>)> {
    vec![
        ("A".into(), vec!["R2".into(), "R3".into()]),
        ("B".into(), vec!["R4".into(), "R5".into()]),
        ("C".into(), vec!["R6".into(), "R7".into(), "R8".into()]),
    ]
}

pub struct Exp3Variant {
    pub label: String,
    pub frozen: Vec<String>,
    pub report: ExperimentReport,
    /// Frozen parameters bit-identical to initialization after training.
    pub frozen_bit_equal: bool,
}

pub struct Exp3Outcome {
    pub variants: Vec<Exp3Variant>,
    pub reference: TrainOutcome,
}

/// Index of the checkpoint with the lowest mean generator loss over its
/// trailing window.
pub fn select_optimal_checkpoint(outcome: &TrainOutcome, window: u64) -> usize {
    let mut best = 0usize;
    let mut best_loss = f64::INFINITY;
    for (i, ckpt) in outcome.checkpoints.iter().enumerate() {
        let hi = ckpt.iteration;
        let lo = hi.saturating_sub(window);
        let vals: Vec<f64> = outcome
            .log
            .records
            .iter()
            .filter(|r| r.iteration >= lo && r.iteration < hi)
            .map(|r| r.total_g)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        if mean < best_loss {
            best_loss = mean;
            best = i;
        }
    }
    best
}

/// Train freeze variants from one shared initialization and compare each
/// variant's optimal checkpoint against the unfrozen optimal network.
pub fn exp3_frozen(
    cfg: &ExperimentConfig,
    variants: &[(String, Vec<String>)],
    seed: u64,
) -> Result<Exp3Outcome> {
    let (gen_cfg, train_cfg) = cfg.replicate(seed);
    let dataset = build_dataset(&cfg.dataset)?;
    let probe = build_probe_set(&dataset, cfg.probe_sequences)?;

    let init_gen = build_generator(&gen_cfg)?;
    let layers = all_layers(&init_gen);

    let reference = train(&gen_cfg, &train_cfg, &dataset, InitFrom::Fresh)?;
    let ref_idx = select_optimal_checkpoint(&reference, train_cfg.checkpoint_every);
    let ref_ckpt = &reference.checkpoints[ref_idx];
    let ref_gen = ref_ckpt.restore_generator()?;
    let ref_dump = record_activations(&ref_gen, &probe, &layers, ref_ckpt.iteration)?;

    let mut out_variants = Vec::new();
    for (label, frozen) in variants {
        for name in frozen {
            if layer_sort_key(name)?.0 != 1 {
                return Err(Error::ConfigError(format!(
                    "freeze variants must name repeat layers, got {:?}",
                    name
                )));
            }
        }
        let mut vcfg = train_cfg.clone();
        vcfg.frozen_layers = frozen.iter().cloned().collect();
        let outcome = train(&gen_cfg, &vcfg, &dataset, InitFrom::Fresh)?;

        // frozen parameters must still be the initialization, bit for bit
        let mut frozen_bit_equal = true;
        let final_gen = outcome.final_checkpoint.restore_generator()?;
        for name in frozen {
            for pid in init_gen.layer_param_ids(name)? {
                if final_gen.params.get(pid).data() != init_gen.params.get(pid).data() {
                    frozen_bit_equal = false;
                }
            }
        }

        let idx = select_optimal_checkpoint(&outcome, vcfg.checkpoint_every);
        let ckpt = &outcome.checkpoints[idx];
        let gen_v = ckpt.restore_generator()?;
        let dump = record_activations(&gen_v, &probe, &layers, ckpt.iteration)?;
        let cmp = compare_checkpoints(&dump, &ref_dump, &cfg.svcca)?;
        let mut rows = Vec::new();
        push_checkpoint_rows(&mut rows, ckpt.iteration, &cmp)?;

        out_variants.push(Exp3Variant {
            label: label.clone(),
            frozen: frozen.clone(),
            report: ExperimentReport {
                experiment: format!("exp3_{}", label),
                seed,
                fingerprint: gen_cfg.fingerprint(),
                rows,
            },
            frozen_bit_equal,
        });
    }

    Ok(Exp3Outcome {
        variants: out_variants,
        reference,
    })
}

/// One row of the depth sweep.
#[derive(Debug, Clone)]
pub struct Exp4Row {
    pub depth: usize,
    /// Mean generator loss over the final checkpoint window.
    pub final_total_g: f64,
    pub final_cyc: f64,
    /// Min over repeat layers of the mean gradient norm (vanishing-gradient
    /// indicator).
    pub min_repeat_grad_norm: f64,
    /// Loss finite at the end and lower than the opening window.
    pub converged: bool,
    pub mode_collapse_index: f64,
}

pub struct Exp4Sweep {
    pub seed: u64,
    pub rows: Vec<Exp4Row>,
    /// (depth, checkpoint, repeat layer, mean gradient norm over the
    /// checkpoint window).
    pub grad_norm_rows: Vec<(usize, u64, String, f64)>,
}

/// Train one model per repeat depth and report measurable proxies for the
/// quality observations: loss levels, repeat-layer gradient norms, a
/// convergence flag and the mode-collapse index.
pub fn exp4_depth_sweep(
    cfg: &ExperimentConfig,
    depths: &[usize],
    seed: u64,
) -> Result<Exp4Sweep> {
    if depths.is_empty() {
        return Err(Error::ConfigError("depth sweep needs at least one depth".into()));
    }
    let dataset = build_dataset(&cfg.dataset)?;
    let probe = build_probe_set(&dataset, cfg.probe_sequences)?;

    let mut rows = Vec::new();
    let mut grad_norm_rows = Vec::new();
    for &depth in depths {
        if depth == 0 {
            return Err(Error::ConfigError("repeat depth must be >= 1".into()));
        }
        let (mut gen_cfg, train_cfg) = cfg.replicate(seed);
        gen_cfg.repeat_blocks = depth;
        let outcome = train(&gen_cfg, &train_cfg, &dataset, InitFrom::Fresh)?;
        let log = &outcome.log;

        let window = train_cfg.checkpoint_every as usize;
        let n = log.records.len();
        let mean_over = |lo: usize, hi: usize| -> (f64, f64) {
            let slice = &log.records[lo..hi];
            let tg = slice.iter().map(|r| r.total_g).sum::<f64>() / slice.len() as f64;
            let cy = slice.iter().map(|r| r.cyc).sum::<f64>() / slice.len() as f64;
            (tg, cy)
        };
        let (first_g, _) = mean_over(0, window.min(n));
        let (final_g, final_cyc) = mean_over(n.saturating_sub(window), n);
        let converged = final_g.is_finite() && log.diverged_at.is_none() && final_g < first_g;

        // per-repeat-layer mean gradient norms, per checkpoint window
        let repeat_layers: Vec<(usize, String)> = log
            .layer_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with('R'))
            .map(|(i, n)| (i, n.clone()))
            .collect();
        let mut per_layer_total = vec![0.0f64; repeat_layers.len()];
        for ckpt in &outcome.checkpoints {
            let hi = ckpt.iteration as usize;
            let lo = hi - window;
            for (k, (li, name)) in repeat_layers.iter().enumerate() {
                let mean = log.layer_grad_norms[lo..hi]
                    .iter()
                    .map(|v| v[*li])
                    .sum::<f64>()
                    / window as f64;
                grad_norm_rows.push((depth, ckpt.iteration, name.clone(), mean));
                per_layer_total[k] += mean;
            }
        }
        let n_ckpts = outcome.checkpoints.len().max(1) as f64;
        let min_repeat_grad_norm = per_layer_total
            .iter()
            .map(|t| t / n_ckpts)
            .fold(f64::INFINITY, f64::min);

        let final_gen = outcome.final_checkpoint.restore_generator()?;
        let mci = mode_collapse_index(&final_gen, &probe, gen_cfg.n_domains)?;

        rows.push(Exp4Row {
            depth,
            final_total_g: final_g,
            final_cyc,
            min_repeat_grad_norm,
            converged,
            mode_collapse_index: mci,
        });
    }

    Ok(Exp4Sweep {
        seed,
        rows,
        grad_norm_rows,
    })
}

/// Mean pairwise L1 distance between generator outputs for the same inputs
/// under different target codes, normalized by the mean absolute input
/// value. Zero means the code is ignored entirely.
pub fn mode_collapse_index(gen: &Generator, probe: &ProbeSet, n_domains: usize) -> Result<f64> {
    let inputs: Vec<&crate::dataio::FeatureSequence> =
        probe.items.iter().map(|(s, _)| s).collect();
    mode_collapse_index_with(
        |seq, code| {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(vec![1, 1, seq.q, seq.t], seq.data.clone())?);
            let (y, _) = gen.forward(&mut g, x, &[code], &Default::default(), false)?;
            Ok(g.value(y).data().to_vec())
        },
        &inputs,
        n_domains,
    )
}

/// Core of the index over an arbitrary conversion function, so constructed
/// mappings can pin the arithmetic exactly.
pub fn mode_collapse_index_with<F>(
    mut convert: F,
    inputs: &[&crate::dataio::FeatureSequence],
    n_domains: usize,
) -> Result<f64>
where
    F: FnMut(&crate::dataio::FeatureSequence, usize) -> Result<Vec<f64>>,
{
    if n_domains < 2 {
        return Err(Error::ConfigError("mode collapse index needs >= 2 domains".into()));
    }
    if inputs.is_empty() {
        return Err(Error::ConfigError("mode collapse index needs inputs".into()));
    }
    let mut input_abs = 0.0f64;
    let mut input_count = 0usize;
    let mut pair_sum = 0.0f64;
    let mut pair_count = 0usize;
    for seq in inputs {
        input_abs += seq.data.iter().map(|v| v.abs()).sum::<f64>();
        input_count += seq.data.len();
        let outputs: Vec<Vec<f64>> = (0..n_domains)
            .map(|d| convert(seq, d))
            .collect::<Result<_>>()?;
        for a in 0..n_domains {
            for b in a + 1..n_domains {
                let l1 = outputs[a]
                    .iter()
                    .zip(&outputs[b])
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    / outputs[a].len() as f64;
                pair_sum += l1;
                pair_count += 1;
            }
        }
    }
    let scale = input_abs / input_count as f64;
    if scale <= 0.0 {
        return Err(Error::InvalidData("probe inputs are identically zero".into()));
    }
    Ok(pair_sum / pair_count as f64 / scale)
}

// ----------------------------------------------------------------------
// CSV emission
// ----------------------------------------------------------------------

/// Render a report: header `experiment,seed,checkpoint,layer,similarity`,
/// rows ordered by checkpoint then canonical layer order then the three
/// group rows, floats with 17 significant digits.
pub fn report_to_csv_string(report: &ExperimentReport) -> String {
    let mut out = String::from("experiment,seed,checkpoint,layer,similarity\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{:.16e}\n",
            report.experiment, report.seed, row.checkpoint, row.layer, row.similarity
        ));
    }
    out
}

pub fn emit_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_to_csv_string(report))?;
    Ok(())
}

/// Parse a report CSV back; the inverse of [`report_to_csv_string`].
pub fn parse_report_csv(text: &str) -> Result<ExperimentReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FormatError("empty report csv".into()))?;
    if header != "experiment,seed,checkpoint,layer,similarity" {
        return Err(Error::FormatError("bad report header".into()));
    }
    let mut experiment = String::new();
    let mut seed = 0u64;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::FormatError(format!("bad row {}", i + 2)));
        }
        let row_seed: u64 = fields[1]
            .parse()
            .map_err(|_| Error::FormatError("bad seed".into()))?;
        if i == 0 {
            experiment = fields[0].to_string();
            seed = row_seed;
        } else if fields[0] != experiment || row_seed != seed {
            return Err(Error::FormatError("mixed experiments in one file".into()));
        }
        rows.push(ReportRow {
            checkpoint: fields[2]
                .parse()
                .map_err(|_| Error::FormatError("bad checkpoint".into()))?,
            layer: fields[3].to_string(),
            similarity: fields[4]
                .parse()
                .map_err(|_| Error::FormatError("bad similarity".into()))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::FormatError("report has no rows".into()));
    }
    Ok(ExperimentReport {
        experiment,
        seed,
        fingerprint: 0,
        rows,
    })
}
