//! Generator and discriminator assembly, layer freezing, and checkpoint
//! persistence.
//!
//! The generator is the gated 2-1-2D CNN: three 2D downsampling layers, a
//! 2D-to-1D conversion, N non-residual 1D repeat blocks with conditional
//! instance normalization keyed by the target domain, a 1D-to-2D conversion
//! and two transposed-conv upsampling layers, closing with a linear 2D conv.
//! Layer names follow the fixed D1, D2, D3, DC, R1..RN, UC, U1, U2, Out
//! scheme so activation dumps line up across runs.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Domain index in `[0, n_domains)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainCode(pub usize);

impl DomainCode {
    pub fn validate(&self, n_domains: usize) -> Result<()> {
        if self.0 >= n_domains {
            return Err(Error::UnknownDomain(self.0));
        }
        Ok(())
    }
}

pub const WEIGHT_INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;
const DISC_SEED_SALT: u64 = 0x5eed_d15c_0000_0001;

/// Geometry and seeding of one generator/discriminator pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Feature dimension Q of the input images; must be divisible by 4.
    pub q_features: usize,
    /// Base channel multiplier.
    pub base_channels: usize,
    /// Number of repeating 1D blocks (N).
    pub repeat_blocks: usize,
    /// Number of conversion domains.
    pub n_domains: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            q_features: 36,
            base_channels: 4,
            repeat_blocks: 9,
            n_domains: 4,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_features < 4 || self.q_features % 4 != 0 {
            return Err(Error::ConfigError(format!(
                "q_features must be >= 4 and divisible by 4, got {}",
                self.q_features
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::ConfigError("base_channels must be >= 1".into()));
        }
        if self.repeat_blocks == 0 {
            return Err(Error::ConfigError("repeat_blocks must be >= 1".into()));
        }
        if self.n_domains < 2 {
            return Err(Error::ConfigError("n_domains must be >= 2".into()));
        }
        Ok(())
    }

    /// Geometry fingerprint embedded in checkpoints; seeds do not participate
    /// so a transfer run can verify shape compatibility alone.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(&[
            1, // format generation
            self.q_features as u64,
            self.base_channels as u64,
            self.repeat_blocks as u64,
            self.n_domains as u64,
        ])
    }
}

fn fnv1a(words: &[u64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for byte in w.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Role of a parameter inside its layer; ordering within a layer is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamRole {
    Weight,
    Bias,
    NormGamma,
    NormBeta,
    CinGamma,
    CinBeta,
    Embedding,
}

#[derive(Debug, Clone)]
struct LayerParams {
    name: String,
    ids: Vec<(ParamRole, ParamId)>,
}

impl LayerParams {
    fn id(&self, role: ParamRole) -> ParamId {
        self.ids
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, id)| *id)
            .expect("layer param role present")
    }
}

/// Parameter shapes of the generator in canonical order, one entry per
/// (layer, role, shape). Shared by the builder and the checkpoint loader.
///
/// Convolutions immediately followed by a normalization carry no bias: the
/// normalization subtracts the per-channel mean exactly, so such a bias
/// would be a dead parameter (its beta plays that role instead).
fn gen_param_layout(cfg: &GeneratorConfig) -> Vec<(String, ParamRole, Vec<usize>)> {
    let b = cfg.base_channels;
    let q = cfg.q_features;
    let d = cfg.n_domains;
    use ParamRole::*;
    let mut out: Vec<(String, ParamRole, Vec<usize>)> = vec![
        ("D1".into(), Weight, vec![2 * b, 1, 3, 9]),
        ("D1".into(), Bias, vec![2 * b]),
        ("D2".into(), Weight, vec![4 * b, b, 4, 8]),
        ("D2".into(), NormGamma, vec![4 * b]),
        ("D2".into(), NormBeta, vec![4 * b]),
        ("D3".into(), Weight, vec![8 * b, 2 * b, 4, 8]),
        ("D3".into(), NormGamma, vec![8 * b]),
        ("D3".into(), NormBeta, vec![8 * b]),
        ("DC".into(), Weight, vec![4 * b, 4 * b * (q / 4), 1]),
        ("DC".into(), NormGamma, vec![4 * b]),
        ("DC".into(), NormBeta, vec![4 * b]),
    ];
    for i in 1..=cfg.repeat_blocks {
        let name = format!("R{}", i);
        out.push((name.clone(), Weight, vec![8 * b, 4 * b, 5]));
        out.push((name.clone(), CinGamma, vec![d, 8 * b]));
        out.push((name, CinBeta, vec![d, 8 * b]));
    }
    out.extend([
        ("UC".into(), Weight, vec![b * q, 4 * b, 1]),
        ("UC".into(), NormGamma, vec![b * q]),
        ("UC".into(), NormBeta, vec![b * q]),
        ("U1".into(), Weight, vec![4 * b, 4 * b, 4, 8]),
        ("U1".into(), NormGamma, vec![4 * b]),
        ("U1".into(), NormBeta, vec![4 * b]),
        ("U2".into(), Weight, vec![2 * b, 2 * b, 4, 8]),
        ("U2".into(), NormGamma, vec![2 * b]),
        ("U2".into(), NormBeta, vec![2 * b]),
        ("Out".into(), Weight, vec![1, b, 3, 9]),
        ("Out".into(), Bias, vec![1]),
    ]);
    out
}

/// Parameter shapes of the discriminator, in order.
fn disc_param_layout(cfg: &GeneratorConfig) -> Vec<(String, ParamRole, Vec<usize>)> {
    let b = cfg.base_channels;
    let d = cfg.n_domains;
    use ParamRole::*;
    vec![
        ("C1".into(), Weight, vec![2 * b, 1, 3, 9]),
        ("C1".into(), Bias, vec![2 * b]),
        ("C2".into(), Weight, vec![4 * b, b, 4, 8]),
        ("C2".into(), Bias, vec![4 * b]),
        ("C3".into(), Weight, vec![8 * b, 2 * b, 4, 8]),
        ("C3".into(), Bias, vec![8 * b]),
        ("C4".into(), Weight, vec![16 * b, 4 * b, 4, 8]),
        ("C4".into(), Bias, vec![16 * b]),
        ("FC".into(), Weight, vec![1, 8 * b]),
        ("FC".into(), Bias, vec![1]),
        ("EMB".into(), Embedding, vec![d * d, 8 * b]),
    ]
}

fn init_param(role: ParamRole, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    match role {
        ParamRole::Weight | ParamRole::Embedding => Tensor::randn(shape, WEIGHT_INIT_STD, rng),
        ParamRole::Bias | ParamRole::NormBeta => Tensor::zeros(shape),
        ParamRole::NormGamma => Tensor::filled(shape, 1.0),
        // distinct per-domain perturbations so codes act distinctly at init
        ParamRole::CinGamma => {
            let mut t = Tensor::randn(shape, WEIGHT_INIT_STD, rng);
            t.data_mut().iter_mut().for_each(|v| *v += 1.0);
            t
        }
        ParamRole::CinBeta => Tensor::randn(shape, WEIGHT_INIT_STD, rng),
    }
}

fn build_params(
    layout: &[(String, ParamRole, Vec<usize>)],
    seed: u64,
) -> (ParamStore, Vec<LayerParams>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut layers: Vec<LayerParams> = Vec::new();
    for (name, role, shape) in layout {
        let id = store.add(init_param(*role, shape, &mut rng));
        match layers.last_mut() {
            Some(l) if l.name == *name => l.ids.push((*role, id)),
            _ => layers.push(LayerParams {
                name: name.clone(),
                ids: vec![(*role, id)],
            }),
        }
    }
    (store, layers)
}

/// Re-draw every parameter at fan-in scale (weights ~ N(0, 1/sqrt(fan_in)),
/// affine parameters jittered around their identity values). At this scale
/// each normalization stage is roughly gradient-neutral, so parameter
/// sensitivities stay within a few orders of magnitude across the depth;
/// finite-difference gradient verification relies on that.
fn reinit_fan_in_params(store: &mut ParamStore, layers: &[LayerParams], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in layers {
        for &(role, id) in &layer.ids {
            let shape = store.get(id).shape().to_vec();
            let t = match role {
                ParamRole::Weight | ParamRole::Embedding => {
                    let fan_in: usize = shape.iter().product::<usize>() / shape[0].max(1);
                    Tensor::randn(&shape, 1.0 / (fan_in.max(1) as f64).sqrt(), &mut rng)
                }
                ParamRole::Bias | ParamRole::NormBeta | ParamRole::CinBeta => {
                    Tensor::randn(&shape, 0.2, &mut rng)
                }
                ParamRole::NormGamma | ParamRole::CinGamma => {
                    let mut t = Tensor::randn(&shape, 0.2, &mut rng);
                    t.data_mut().iter_mut().for_each(|v| *v += 1.0);
                    t
                }
            };
            store.set(id, t);
        }
    }
}

/// The multi-domain generator G(x, target) -> x_hat.
#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamStore,
    layers: Vec<LayerParams>,
    frozen: BTreeSet<String>,
}

/// Build a generator with deterministic seed-derived initialization.
pub fn build_generator(cfg: &GeneratorConfig) -> Result<Generator> {
    cfg.validate()?;
    let (params, layers) = build_params(&gen_param_layout(cfg), cfg.seed);
    Ok(Generator {
        cfg: cfg.clone(),
        params,
        layers,
        frozen: BTreeSet::new(),
    })
}

impl Generator {
    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn frozen_layers(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Parameter ids belonging to one named layer.
    pub fn layer_param_ids(&self, name: &str) -> Result<Vec<ParamId>> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.ids.iter().map(|(_, id)| *id).collect())
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// See [`reinit_fan_in_params`].
    pub fn reinit_fan_in(&mut self, seed: u64) {
        let layers = self.layers.clone();
        reinit_fan_in_params(&mut self.params, &layers, seed);
    }

    /// Exclude the named layers from gradient updates. Forward behavior is
    /// unchanged.
    pub fn freeze_layers(&mut self, names: &BTreeSet<String>) -> Result<()> {
        for name in names {
            let ids = self.layer_param_ids(name)?;
            for id in ids {
                self.params.set_requires_grad(id, false);
            }
            self.frozen.insert(name.clone());
        }
        Ok(())
    }

    fn layer(&self, name: &str) -> &LayerParams {
        self.layers.iter().find(|l| l.name == name).expect("layer")
    }

    /// Forward pass. `targets` holds one target domain code per batch item;
    /// layers named in `taps` report their post-activation output nodes.
    /// With `trainable = false` every parameter enters the graph detached.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: NodeId,
        targets: &[usize],
        taps: &BTreeSet<String>,
        trainable: bool,
    ) -> Result<(NodeId, Vec<(String, NodeId)>)> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.cfg.q_features {
            return Err(Error::ShapeError(format!(
                "generator input must be (B, 1, {}, T), got {:?}",
                self.cfg.q_features, shape
            )));
        }
        let t = shape[3];
        if t < 4 || t % 4 != 0 {
            return Err(Error::ShapeError(format!(
                "sequence length must be >= 4 and divisible by 4, got {}",
                t
            )));
        }
        if targets.len() != shape[0] {
            return Err(Error::ShapeError(format!(
                "{} target codes for batch of {}",
                targets.len(),
                shape[0]
            )));
        }
        for &c in targets {
            DomainCode(c).validate(self.cfg.n_domains)?;
        }

        let param = |g: &mut Graph, id: ParamId| {
            if trainable {
                g.param(&self.params, id)
            } else {
                g.param_detached(&self.params, id)
            }
        };
        let mut taps_out: Vec<(String, NodeId)> = Vec::new();
        let tap = |name: &str, node: NodeId, taps_out: &mut Vec<(String, NodeId)>| {
            if taps.contains(name) {
                taps_out.push((name.to_string(), node));
            }
        };

        use ParamRole::*;
        // constant zero bias for normalization-preceded convolutions
        let zbias = |g: &mut Graph, ch: usize| g.input(Tensor::zeros(&[ch]));

        // D1: conv + GLU
        let l = self.layer("D1");
        let (w, b) = (param(g, l.id(Weight)), param(g, l.id(Bias)));
        let mut h = g.conv2d(x, w, b, (1, 1), (1, 4))?;
        h = g.glu(h)?;
        tap("D1", h, &mut taps_out);

        // D2, D3: strided conv + IN + GLU
        for name in ["D2", "D3"] {
            let l = self.layer(name);
            let w = param(g, l.id(Weight));
            let (ga, be) = (param(g, l.id(NormGamma)), param(g, l.id(NormBeta)));
            let ch = g.value(w).dim(0);
            let b = zbias(g, ch);
            h = g.conv2d(h, w, b, (2, 2), (1, 3))?;
            h = g.instance_norm(h, ga, be, NORM_EPS)?;
            h = g.glu(h)?;
            tap(name, h, &mut taps_out);
        }

        // DC: fold to 1D, pointwise conv, IN
        let l = self.layer("DC");
        h = g.reshape_2d_to_1d(h)?;
        let w = param(g, l.id(Weight));
        let (ga, be) = (param(g, l.id(NormGamma)), param(g, l.id(NormBeta)));
        let ch = g.value(w).dim(0);
        let b = zbias(g, ch);
        h = g.conv1d(h, w, b, 1, 0)?;
        h = g.instance_norm(h, ga, be, NORM_EPS)?;
        tap("DC", h, &mut taps_out);

        // repeat blocks: conv1d + CIN(target) + GLU, no residual path
        for i in 1..=self.cfg.repeat_blocks {
            let name = format!("R{}", i);
            let l = self.layer(&name);
            let w = param(g, l.id(Weight));
            let (gt, bt) = (param(g, l.id(CinGamma)), param(g, l.id(CinBeta)));
            let ch = g.value(w).dim(0);
            let b = zbias(g, ch);
            h = g.conv1d(h, w, b, 1, 2)?;
            h = g.cond_instance_norm(h, gt, bt, targets, NORM_EPS)?;
            h = g.glu(h)?;
            tap(&name, h, &mut taps_out);
        }

        // UC: pointwise conv, IN, unfold to 2D
        let l = self.layer("UC");
        let w = param(g, l.id(Weight));
        let (ga, be) = (param(g, l.id(NormGamma)), param(g, l.id(NormBeta)));
        let ch = g.value(w).dim(0);
        let b = zbias(g, ch);
        h = g.conv1d(h, w, b, 1, 0)?;
        h = g.instance_norm(h, ga, be, NORM_EPS)?;
        h = g.reshape_1d_to_2d(h, self.cfg.q_features / 4)?;
        tap("UC", h, &mut taps_out);

        // U1, U2: transposed conv + IN + GLU
        for name in ["U1", "U2"] {
            let l = self.layer(name);
            let w = param(g, l.id(Weight));
            let (ga, be) = (param(g, l.id(NormGamma)), param(g, l.id(NormBeta)));
            let ch = g.value(w).dim(1);
            let b = zbias(g, ch);
            h = g.conv_transpose2d(h, w, b, (2, 2), (1, 3))?;
            h = g.instance_norm(h, ga, be, NORM_EPS)?;
            h = g.glu(h)?;
            tap(name, h, &mut taps_out);
        }

        // Out: linear conv back to one channel
        let l = self.layer("Out");
        let (w, b) = (param(g, l.id(Weight)), param(g, l.id(Bias)));
        h = g.conv2d(h, w, b, (1, 1), (1, 4))?;
        tap("Out", h, &mut taps_out);

        Ok((h, taps_out))
    }
}

/// The projection real/fake discriminator D(x, source, target).
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: GeneratorConfig,
    pub params: ParamStore,
    layers: Vec<LayerParams>,
}

/// Build the discriminator for the same geometry as the generator; its
/// initialization stream is derived from (but independent of) the generator
/// seed.
pub fn build_discriminator(cfg: &GeneratorConfig) -> Result<Discriminator> {
    cfg.validate()?;
    let (params, layers) = build_params(&disc_param_layout(cfg), cfg.seed ^ DISC_SEED_SALT);
    Ok(Discriminator {
        cfg: cfg.clone(),
        params,
        layers,
    })
}

impl Discriminator {
    fn layer(&self, name: &str) -> &LayerParams {
        self.layers.iter().find(|l| l.name == name).expect("layer")
    }

    /// See [`reinit_fan_in_params`].
    pub fn reinit_fan_in(&mut self, seed: u64) {
        let layers = self.layers.clone();
        reinit_fan_in_params(&mut self.params, &layers, seed);
    }

    /// Scalar score per batch item. The (source, target) pair selects a row
    /// of the projection embedding whose inner product with the pooled
    /// features is added to the FC head output.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: NodeId,
        sources: &[usize],
        targets: &[usize],
        trainable: bool,
    ) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::ShapeError(format!(
                "discriminator input must be (B, 1, Q, T), got {:?}",
                shape
            )));
        }
        let bsz = shape[0];
        if sources.len() != bsz || targets.len() != bsz {
            return Err(Error::ShapeError(format!(
                "{} source / {} target codes for batch of {}",
                sources.len(),
                targets.len(),
                bsz
            )));
        }
        let n = self.cfg.n_domains;
        for (&s, &t) in sources.iter().zip(targets) {
            DomainCode(s).validate(n)?;
            DomainCode(t).validate(n)?;
        }

        let param = |g: &mut Graph, id: ParamId| {
            if trainable {
                g.param(&self.params, id)
            } else {
                g.param_detached(&self.params, id)
            }
        };

        use ParamRole::*;
        let mut h = x;
        for (name, stride) in [("C1", (1, 1)), ("C2", (2, 2)), ("C3", (2, 2)), ("C4", (2, 2))] {
            let l = self.layer(name);
            let (w, b) = (param(g, l.id(Weight)), param(g, l.id(Bias)));
            let pad = if name == "C1" { (1, 4) } else { (1, 3) };
            h = g.conv2d(h, w, b, stride, pad)?;
            h = g.glu(h)?;
        }
        let feats = g.global_sum_pool(h)?;

        let l = self.layer("FC");
        let (w, b) = (param(g, l.id(Weight)), param(g, l.id(Bias)));
        let head = g.fully_connected(feats, w, b)?;
        let head = g.reshape(head, vec![bsz])?;

        let emb = param(g, self.layer("EMB").id(Embedding));
        let pair_rows: Vec<usize> = sources
            .iter()
            .zip(targets)
            .map(|(&s, &t)| s * n + t)
            .collect();
        let rows = g.row_select(emb, &pair_rows)?;
        let proj = g.batch_dot(rows, feats)?;
        g.add(head, proj)
    }
}

// ----------------------------------------------------------------------
// checkpoints
// ----------------------------------------------------------------------

/// Serialized RNG position so a resumed run consumes the identical stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Adam first/second moment estimates for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSnapshot {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamSnapshot {
    pub fn zeros(store: &ParamStore) -> Self {
        AdamSnapshot {
            step: 0,
            m: store.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: store.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }
}

/// Complete training state at one iteration boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint {
    pub iteration: u64,
    pub gen_cfg: GeneratorConfig,
    pub gen_params: Vec<Vec<f64>>,
    pub disc_params: Vec<Vec<f64>>,
    pub opt_g: AdamSnapshot,
    pub opt_d: AdamSnapshot,
    pub rng: RngState,
}

impl NetworkCheckpoint {
    pub fn fingerprint(&self) -> u64 {
        self.gen_cfg.fingerprint()
    }

    /// Overwrite a generator's parameters from this checkpoint.
    pub fn apply_to_generator(&self, gen: &mut Generator) -> Result<()> {
        if gen.cfg.fingerprint() != self.fingerprint() {
            return Err(Error::ConfigError(
                "checkpoint geometry does not match generator config".into(),
            ));
        }
        copy_params(&mut gen.params, &self.gen_params)
    }

    pub fn apply_to_discriminator(&self, disc: &mut Discriminator) -> Result<()> {
        if disc.cfg.fingerprint() != self.fingerprint() {
            return Err(Error::ConfigError(
                "checkpoint geometry does not match discriminator config".into(),
            ));
        }
        copy_params(&mut disc.params, &self.disc_params)
    }

    /// Rebuild the generator exactly as checkpointed.
    pub fn restore_generator(&self) -> Result<Generator> {
        let mut gen = build_generator(&self.gen_cfg)?;
        self.apply_to_generator(&mut gen)?;
        Ok(gen)
    }

    pub fn restore_discriminator(&self) -> Result<Discriminator> {
        let mut disc = build_discriminator(&self.gen_cfg)?;
        self.apply_to_discriminator(&mut disc)?;
        Ok(disc)
    }
}

fn copy_params(store: &mut ParamStore, blocks: &[Vec<f64>]) -> Result<()> {
    if blocks.len() != store.len() {
        return Err(Error::FormatError(format!(
            "checkpoint holds {} parameter blocks, network has {}",
            blocks.len(),
            store.len()
        )));
    }
    for (i, block) in blocks.iter().enumerate() {
        let id = ParamId(i);
        let shape = store.get(id).shape().to_vec();
        if block.len() != store.get(id).len() {
            return Err(Error::FormatError(format!(
                "parameter block {} has {} values, expected {}",
                i,
                block.len(),
                store.get(id).len()
            )));
        }
        store.set(id, Tensor::new(shape, block.clone())?);
    }
    Ok(())
}

pub fn snapshot_params(store: &ParamStore) -> Vec<Vec<f64>> {
    store.iter().map(|(_, t)| t.data().to_vec()).collect()
}

const CKPT_MAGIC: &[u8; 4] = b"GICK";
const CKPT_VERSION: u32 = 1;

/// Serialize a checkpoint: magic "GICK", u32 version, u64 fingerprint,
/// geometry, seeds, iteration, rng state, optimizer step counters, then the
/// little-endian f64 parameter and moment blocks in layer order, and a
/// trailing CRC32 over everything before it.
pub fn checkpoint_to_bytes(ckpt: &NetworkCheckpoint) -> Vec<u8> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.fingerprint().to_le_bytes());
    let cfg = &ckpt.gen_cfg;
    for v in [
        cfg.q_features,
        cfg.base_channels,
        cfg.repeat_blocks,
        cfg.n_domains,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&ckpt.iteration.to_le_bytes());
    buf.extend_from_slice(&ckpt.rng.seed);
    buf.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    buf.extend_from_slice(&ckpt.rng.stream.to_le_bytes());
    buf.extend_from_slice(&ckpt.opt_g.step.to_le_bytes());
    buf.extend_from_slice(&ckpt.opt_d.step.to_le_bytes());
    let write_blocks = |blocks: &[Vec<f64>], buf: &mut Vec<u8>| {
        for block in blocks {
            for v in block {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    };
    write_blocks(&ckpt.gen_params, &mut buf);
    write_blocks(&ckpt.disc_params, &mut buf);
    write_blocks(&ckpt.opt_g.m, &mut buf);
    write_blocks(&ckpt.opt_g.v, &mut buf);
    write_blocks(&ckpt.opt_d.m, &mut buf);
    write_blocks(&ckpt.opt_d.v, &mut buf);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::FormatError("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64_block(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parse a checkpoint from raw bytes, validating magic, version, geometry,
/// exact length and the trailing CRC32.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<NetworkCheckpoint> {
    if bytes.len() < 4 + 4 + 4 {
        return Err(Error::FormatError("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::FormatError("checksum mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(4)? != CKPT_MAGIC {
        return Err(Error::FormatError("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::FormatError(format!(
            "unsupported version {}",
            version
        )));
    }
    let fingerprint = cur.u64()?;
    let q = cur.u32()? as usize;
    let base = cur.u32()? as usize;
    let repeat = cur.u32()? as usize;
    let n_domains = cur.u32()? as usize;
    if q > 4096 || base > 512 || repeat > 256 || n_domains > 256 {
        return Err(Error::FormatError("implausible geometry".into()));
    }
    let seed = cur.u64()?;
    let cfg = GeneratorConfig {
        q_features: q,
        base_channels: base,
        repeat_blocks: repeat,
        n_domains,
        seed,
    };
    cfg.validate()
        .map_err(|e| Error::FormatError(format!("invalid geometry: {}", e)))?;
    if cfg.fingerprint() != fingerprint {
        return Err(Error::FormatError("fingerprint does not match geometry".into()));
    }
    let iteration = cur.u64()?;
    let mut rng_seed = [0u8; 32];
    rng_seed.copy_from_slice(cur.take(32)?);
    let word_pos = cur.u128()?;
    let stream = cur.u64()?;
    let og_step = cur.u64()?;
    let od_step = cur.u64()?;

    let gen_shapes: Vec<usize> = gen_param_layout(&cfg)
        .iter()
        .map(|(_, _, s)| s.iter().product())
        .collect();
    let disc_shapes: Vec<usize> = disc_param_layout(&cfg)
        .iter()
        .map(|(_, _, s)| s.iter().product())
        .collect();
    let total: usize = gen_shapes.iter().sum::<usize>() + disc_shapes.iter().sum::<usize>();
    let expected = cur.pos + total * 3 * 8;
    if body.len() != expected {
        return Err(Error::FormatError(format!(
            "payload length {} does not match geometry ({} expected)",
            body.len(),
            expected
        )));
    }

    let read_blocks = |cur: &mut Cursor, shapes: &[usize]| -> Result<Vec<Vec<f64>>> {
        shapes.iter().map(|&n| cur.f64_block(n)).collect()
    };
    let gen_params = read_blocks(&mut cur, &gen_shapes)?;
    let disc_params = read_blocks(&mut cur, &disc_shapes)?;
    let og_m = read_blocks(&mut cur, &gen_shapes)?;
    let og_v = read_blocks(&mut cur, &gen_shapes)?;
    let od_m = read_blocks(&mut cur, &disc_shapes)?;
    let od_v = read_blocks(&mut cur, &disc_shapes)?;

    Ok(NetworkCheckpoint {
        iteration,
        gen_cfg: cfg,
        gen_params,
        disc_params,
        opt_g: AdamSnapshot {
            step: og_step,
            m: og_m,
            v: og_v,
        },
        opt_d: AdamSnapshot {
            step: od_step,
            m: od_m,
            v: od_v,
        },
        rng: RngState {
            seed: rng_seed,
            word_pos,
            stream,
        },
    })
}

pub fn save_checkpoint(ckpt: &NetworkCheckpoint, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_to_bytes(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkCheckpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

/// Fresh zero-moment checkpoint of untrained networks at iteration 0.
pub fn initial_checkpoint(
    gen: &Generator,
    disc: &Discriminator,
    rng: &ChaCha8Rng,
) -> NetworkCheckpoint {
    NetworkCheckpoint {
        iteration: 0,
        gen_cfg: gen.cfg.clone(),
        gen_params: snapshot_params(&gen.params),
        disc_params: snapshot_params(&disc.params),
        opt_g: AdamSnapshot::zeros(&gen.params),
        opt_d: AdamSnapshot::zeros(&disc.params),
        rng: RngState::capture(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svcca::canonical_layer_order;
    use rand::SeedableRng;

    fn tiny_cfg() -> GeneratorConfig {
        GeneratorConfig {
            q_features: 8,
            base_channels: 1,
            repeat_blocks: 2,
            n_domains: 2,
            seed: 42,
        }
    }

    #[test]
    fn layer_names_match_canonical_order() {
        let gen = build_generator(&GeneratorConfig::default()).unwrap();
        assert_eq!(gen.layer_names(), canonical_layer_order(9));
        assert_eq!(gen.layer_names().len(), 17);

        let gen3 = build_generator(&GeneratorConfig {
            repeat_blocks: 3,
            ..tiny_cfg()
        })
        .unwrap();
        assert_eq!(gen3.layer_names().len(), 11);
    }

    #[test]
    fn same_seed_gives_bit_identical_params() {
        let a = build_generator(&tiny_cfg()).unwrap();
        let b = build_generator(&tiny_cfg()).unwrap();
        for ((_, ta), (_, tb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn forward_preserves_q_by_t() {
        let gen = build_generator(&tiny_cfg()).unwrap();
        for t in [4usize, 8, 12, 20] {
            let mut g = Graph::new();
            let x = g.input(Tensor::filled(&[1, 1, 8, t], 0.3));
            let (y, taps) = gen
                .forward(&mut g, x, &[1], &BTreeSet::new(), false)
                .unwrap();
            assert_eq!(g.value(y).shape(), &[1, 1, 8, t]);
            assert!(taps.is_empty());
        }
    }

    #[test]
    fn forward_rejects_bad_length_and_code() {
        let gen = build_generator(&tiny_cfg()).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 8, 6]));
        assert!(matches!(
            gen.forward(&mut g, x, &[0], &BTreeSet::new(), false),
            Err(Error::ShapeError(_))
        ));
        let x_ok = g.input(Tensor::zeros(&[1, 1, 8, 8]));
        assert!(matches!(
            gen.forward(&mut g, x_ok, &[5], &BTreeSet::new(), false),
            Err(Error::UnknownDomain(5))
        ));
    }

    #[test]
    fn taps_observe_without_changing_output() {
        let gen = build_generator(&tiny_cfg()).unwrap();
        let x = Tensor::randn(&[2, 1, 8, 12], 1.0, &mut ChaCha8Rng::seed_from_u64(3));

        let mut g1 = Graph::new();
        let x1 = g1.input(x.clone());
        let (y1, taps1) = gen
            .forward(&mut g1, x1, &[0, 1], &BTreeSet::new(), false)
            .unwrap();
        assert!(taps1.is_empty());

        let all: BTreeSet<String> = gen.layer_names().into_iter().collect();
        let mut g2 = Graph::new();
        let x2 = g2.input(x);
        let (y2, taps2) = gen.forward(&mut g2, x2, &[0, 1], &all, false).unwrap();
        assert_eq!(taps2.len(), gen.layer_names().len());
        assert_eq!(g1.value(y1).data(), g2.value(y2).data());
    }

    #[test]
    fn constant_input_stays_finite_through_every_norm() {
        // zero variance at every normalization; the eps guards must keep
        // the whole forward finite
        let gen = build_generator(&tiny_cfg()).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::filled(&[1, 1, 8, 16], 3.5));
        let all: BTreeSet<String> = gen.layer_names().into_iter().collect();
        let (y, taps) = gen.forward(&mut g, x, &[1], &all, false).unwrap();
        assert!(g.value(y).all_finite());
        for (_, node) in taps {
            assert!(g.value(node).all_finite());
        }
    }

    #[test]
    fn different_target_codes_change_output() {
        let gen = build_generator(&tiny_cfg()).unwrap();
        let x = Tensor::randn(&[1, 1, 8, 12], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let mut g = Graph::new();
        let xn = g.input(x);
        let (y0, _) = gen.forward(&mut g, xn, &[0], &BTreeSet::new(), false).unwrap();
        let (y1, _) = gen.forward(&mut g, xn, &[1], &BTreeSet::new(), false).unwrap();
        let diff: f64 = g
            .value(y0)
            .data()
            .iter()
            .zip(g.value(y1).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "outputs must differ across target codes");
    }

    #[test]
    fn generator_graph_has_no_additive_skip_path() {
        let gen = build_generator(&tiny_cfg()).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 8, 8]));
        gen.forward(&mut g, x, &[0], &BTreeSet::new(), false).unwrap();
        assert_eq!(
            g.op_kinds().iter().filter(|k| **k == "add").count(),
            0,
            "repeat blocks must not be residual"
        );
    }

    #[test]
    fn freeze_unknown_layer_errors_and_empty_is_noop() {
        let mut gen = build_generator(&tiny_cfg()).unwrap();
        let mut names = BTreeSet::new();
        names.insert("R7".to_string());
        assert!(matches!(
            gen.freeze_layers(&names),
            Err(Error::UnknownLayer(_))
        ));
        gen.freeze_layers(&BTreeSet::new()).unwrap();
        assert!(gen.frozen_layers().is_empty());
        for (id, _) in gen.params.iter() {
            assert!(gen.params.requires_grad(id));
        }
    }

    #[test]
    fn discriminator_score_is_finite_and_pair_sensitive() {
        let cfg = tiny_cfg();
        let disc = build_discriminator(&cfg).unwrap();
        let x = Tensor::randn(&[1, 1, 8, 12], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let mut g = Graph::new();
        let xn = g.input(x);
        let s01 = disc.forward(&mut g, xn, &[0], &[1], false).unwrap();
        let s10 = disc.forward(&mut g, xn, &[1], &[0], false).unwrap();
        let a = g.value(s01).data()[0];
        let b = g.value(s10).data()[0];
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() > 1e-9, "projection must depend on the pair order");
    }

    #[test]
    fn discriminator_zero_input_scores_zero() {
        let disc = build_discriminator(&tiny_cfg()).unwrap();
        let mut g = Graph::new();
        let xn = g.input(Tensor::zeros(&[2, 1, 8, 8]));
        let s = disc.forward(&mut g, xn, &[0, 1], &[1, 0], false).unwrap();
        for v in g.value(s).data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_cfg();
        let gen = build_generator(&cfg).unwrap();
        let disc = build_discriminator(&cfg).unwrap();
        let rng = ChaCha8Rng::seed_from_u64(9);
        let ckpt = initial_checkpoint(&gen, &disc, &rng);
        let bytes = checkpoint_to_bytes(&ckpt);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let cfg = tiny_cfg();
        let gen = build_generator(&cfg).unwrap();
        let disc = build_discriminator(&cfg).unwrap();
        let rng = ChaCha8Rng::seed_from_u64(9);
        let ckpt = initial_checkpoint(&gen, &disc, &rng);
        let bytes = checkpoint_to_bytes(&ckpt);

        // version bump
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(
            checkpoint_from_bytes(&v),
            Err(Error::FormatError(_))
        ));
        // truncation
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::FormatError(_))
        ));
        // payload flip
        let mut p = bytes.clone();
        let mid = p.len() / 2;
        p[mid] ^= 0xff;
        assert!(matches!(
            checkpoint_from_bytes(&p),
            Err(Error::FormatError(_))
        ));
    }
}
