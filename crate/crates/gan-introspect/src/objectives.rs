//! Training losses: source-and-target conditional adversarial loss in its
//! least-squares form, cycle-consistency, identity-mapping, and the combined
//! generator/discriminator objectives.
//!
//! Conventions: real scores are pushed toward 1, fake scores toward 0, and
//! the generator targets 1 for its fakes. A real sample of domain `c` drawn
//! with conversion target `c_hat` is scored under the pair `(c_hat, c)`; the
//! converted sample under `(c, c_hat)`. Expectations are means over the
//! batch.

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NodeId};
use crate::error::Result;
use crate::net::{Discriminator, Generator};

/// Loss-combination hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    /// The identity term is applied only while `iteration < id_cutoff_iterations`.
    pub id_cutoff_iterations: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            id_cutoff_iterations: 100,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cyc < 0.0 || self.lambda_id < 0.0 {
            return Err(crate::error::Error::ConfigError(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Adversarial objective form. The saturating logistic form exists for
/// comparison runs only; all experiments use least squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvLossForm {
    #[default]
    LeastSquares,
    Logistic,
}

/// Mean L1 distance between two equally shaped nodes.
pub fn l1_mean(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let diff = g.sub(a, b)?;
    let mag = g.abs(diff);
    Ok(g.mean(mag))
}

/// Discriminator-side adversarial loss from raw scores:
/// mean[(real - 1)^2] + mean[fake^2], or the logistic equivalent.
pub fn adv_loss_from_scores_d(
    g: &mut Graph,
    real_scores: NodeId,
    fake_scores: NodeId,
    form: AdvLossForm,
) -> Result<NodeId> {
    match form {
        AdvLossForm::LeastSquares => {
            let rshift = g.add_scalar(real_scores, -1.0);
            let rsq = g.mul(rshift, rshift)?;
            let rterm = g.mean(rsq);
            let fsq = g.mul(fake_scores, fake_scores)?;
            let fterm = g.mean(fsq);
            g.add(rterm, fterm)
        }
        AdvLossForm::Logistic => {
            // -mean[ln sigma(real)] - mean[ln(1 - sigma(fake))]
            let rs = g.sigmoid(real_scores);
            let rl = g.ln(rs);
            let rterm = g.mean(rl);
            let fs = g.sigmoid(fake_scores);
            let fneg = g.mul_scalar(fs, -1.0);
            let fone = g.add_scalar(fneg, 1.0);
            let fl = g.ln(fone);
            let fterm = g.mean(fl);
            let sum = g.add(rterm, fterm)?;
            Ok(g.mul_scalar(sum, -1.0))
        }
    }
}

/// Generator-side adversarial loss from fake scores: mean[(fake - 1)^2].
pub fn adv_loss_from_scores_g(
    g: &mut Graph,
    fake_scores: NodeId,
    form: AdvLossForm,
) -> Result<NodeId> {
    match form {
        AdvLossForm::LeastSquares => {
            let shift = g.add_scalar(fake_scores, -1.0);
            let sq = g.mul(shift, shift)?;
            Ok(g.mean(sq))
        }
        AdvLossForm::Logistic => {
            let fs = g.sigmoid(fake_scores);
            let fl = g.ln(fs);
            let term = g.mean(fl);
            Ok(g.mul_scalar(term, -1.0))
        }
    }
}

/// Discriminator adversarial loss over a real batch and a detached fake
/// batch. `sources` are the true domains of `x_real`; `targets` the sampled
/// conversion targets that produced `x_fake`.
#[allow(clippy::too_many_arguments)]
pub fn adv_loss_d(
    g: &mut Graph,
    disc: &Discriminator,
    x_real: NodeId,
    x_fake: NodeId,
    sources: &[usize],
    targets: &[usize],
    form: AdvLossForm,
    disc_trainable: bool,
) -> Result<NodeId> {
    let real_scores = disc.forward(g, x_real, targets, sources, disc_trainable)?;
    let fake_scores = disc.forward(g, x_fake, sources, targets, disc_trainable)?;
    adv_loss_from_scores_d(g, real_scores, fake_scores, form)
}

/// Generator adversarial loss; gradients flow through the (frozen) critic
/// into the generator output.
pub fn adv_loss_g(
    g: &mut Graph,
    disc: &Discriminator,
    x_fake: NodeId,
    sources: &[usize],
    targets: &[usize],
    form: AdvLossForm,
) -> Result<NodeId> {
    let fake_scores = disc.forward(g, x_fake, sources, targets, false)?;
    adv_loss_from_scores_g(g, fake_scores, form)
}

/// Cycle-consistency loss: mean L1 between `x` and G(G(x, target), source).
pub fn cycle_loss(
    g: &mut Graph,
    gen: &Generator,
    x: NodeId,
    sources: &[usize],
    targets: &[usize],
    trainable: bool,
) -> Result<NodeId> {
    let (x_hat, _) = gen.forward(g, x, targets, &Default::default(), trainable)?;
    let (x_cyc, _) = gen.forward(g, x_hat, sources, &Default::default(), trainable)?;
    l1_mean(g, x, x_cyc)
}

/// Identity-mapping loss: mean L1 between `x` and the same-domain pass
/// G(x, source).
pub fn identity_loss(
    g: &mut Graph,
    gen: &Generator,
    x: NodeId,
    sources: &[usize],
    trainable: bool,
) -> Result<NodeId> {
    let (x_id, _) = gen.forward(g, x, sources, &Default::default(), trainable)?;
    l1_mean(g, x, x_id)
}

/// Nodes of the combined generator objective; the identity term is absent
/// once the cutoff iteration is reached.
pub struct GeneratorObjective {
    pub total: NodeId,
    pub adv: NodeId,
    pub cyc: NodeId,
    pub id: Option<NodeId>,
}

/// L_G = L_adv + lambda_cyc * L_cyc + lambda_id * L_id, sharing one forward
/// for the fake both with the adversarial term and the cycle reconstruction.
#[allow(clippy::too_many_arguments)]
pub fn full_g_objective(
    g: &mut Graph,
    gen: &Generator,
    disc: &Discriminator,
    x: NodeId,
    sources: &[usize],
    targets: &[usize],
    weights: &LossWeights,
    iteration: u64,
    form: AdvLossForm,
) -> Result<GeneratorObjective> {
    let (x_hat, _) = gen.forward(g, x, targets, &Default::default(), true)?;
    let adv = adv_loss_g(g, disc, x_hat, sources, targets, form)?;
    let (x_cyc, _) = gen.forward(g, x_hat, sources, &Default::default(), true)?;
    let cyc = l1_mean(g, x, x_cyc)?;

    let cyc_scaled = g.mul_scalar(cyc, weights.lambda_cyc);
    let mut total = g.add(adv, cyc_scaled)?;

    let id = if iteration < weights.id_cutoff_iterations {
        let idn = identity_loss(g, gen, x, sources, true)?;
        let id_scaled = g.mul_scalar(idn, weights.lambda_id);
        total = g.add(total, id_scaled)?;
        Some(idn)
    } else {
        None
    };

    Ok(GeneratorObjective {
        total,
        adv,
        cyc,
        id,
    })
}

/// L_D: the discriminator minimizes the least-squares real/fake objective.
/// The fake batch is produced with the generator fully detached.
pub fn full_d_objective(
    g: &mut Graph,
    gen: &Generator,
    disc: &Discriminator,
    x: NodeId,
    sources: &[usize],
    targets: &[usize],
    form: AdvLossForm,
) -> Result<NodeId> {
    let (x_fake, _) = gen.forward(g, x, targets, &Default::default(), false)?;
    adv_loss_d(g, disc, x, x_fake, sources, targets, form, true)
}
