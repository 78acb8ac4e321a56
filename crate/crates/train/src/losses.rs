use silhouette_nn::model::DiscOutput;
use silhouette_nn::{Graph, Var};

use crate::error::{Error, Result};
use crate::plan::LossWeights;

/// Graph nodes of the generator objective and its parts.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    pub adv: Var,
    pub fm: Var,
    pub mel: Var,
}

/// Scalar values of the generator objective, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLossValues {
    pub total: f64,
    pub adv: f64,
    pub fm: f64,
    pub mel: f64,
}

impl GeneratorLoss {
    pub fn values(&self, g: &Graph) -> GeneratorLossValues {
        GeneratorLossValues {
            total: g.value(self.total).item(),
            adv: g.value(self.adv).item(),
            fm: g.value(self.fm).item(),
            mel: g.value(self.mel).item(),
        }
    }
}

fn check_pairs(real: &[DiscOutput], fake: &[DiscOutput], g: &Graph) -> Result<()> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!(
            "{} real vs {} fake discriminator outputs",
            real.len(),
            fake.len()
        )));
    }
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.features.len() != f.features.len() {
            return Err(Error::Shape(format!("discriminator {i}: feature list lengths differ")));
        }
        for (j, (&a, &b)) in r.features.iter().zip(&f.features).enumerate() {
            if g.value(a).shape() != g.value(b).shape() {
                return Err(Error::Shape(format!(
                    "discriminator {i} feature {j}: {:?} vs {:?}",
                    g.value(a).shape(),
                    g.value(b).shape()
                )));
            }
        }
    }
    Ok(())
}

fn sum(g: &mut Graph, terms: &[Var]) -> Var {
    let weighted: Vec<(Var, f64)> = terms.iter().map(|&t| (t, 1.0)).collect();
    g.weighted_sum(&weighted)
}

fn finite(g: &Graph, v: Var, what: &str) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            step: 0,
            snapshot: None,
        })
    }
}

/// `Σ_D mean((D(x̃) − 1)²) + w_fm · Σ_D Σ_l mean|f_real − f_fake| + w_mel · mean|mel(x) − mel(x̃)|`.
pub fn generator_loss(
    g: &mut Graph,
    fake: &[DiscOutput],
    real: &[DiscOutput],
    mel_real: Var,
    mel_fake: Var,
    weights: LossWeights,
) -> Result<GeneratorLoss> {
    check_pairs(real, fake, g)?;
    if g.value(mel_real).shape() != g.value(mel_fake).shape() {
        return Err(Error::Shape("mel spectrogram shapes differ".into()));
    }
    let adv_terms: Vec<Var> = fake.iter().map(|d| g.mean_squared_from(d.score, 1.0)).collect();
    let adv = sum(g, &adv_terms);
    let mut fm_terms = Vec::new();
    for (r, f) in real.iter().zip(fake) {
        for (&a, &b) in r.features.iter().zip(&f.features) {
            fm_terms.push(g.mean_abs_diff(a, b));
        }
    }
    let fm = sum(g, &fm_terms);
    let mel = g.mean_abs_diff(mel_real, mel_fake);
    let total = g.weighted_sum(&[(adv, 1.0), (fm, weights.fm), (mel, weights.mel)]);
    for (v, what) in [(adv, "adversarial loss"), (fm, "feature loss"), (mel, "mel loss")] {
        finite(g, v, what)?;
    }
    Ok(GeneratorLoss { total, adv, fm, mel })
}

/// `Σ_D mean((D(x) − 1)²) + mean(D(x̃)²)`. The caller feeds `fake` as a
/// constant so no gradient reaches the generator.
pub fn discriminator_loss(g: &mut Graph, real: &[DiscOutput], fake: &[DiscOutput]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::Shape("real and fake come from different discriminator sets".into()));
    }
    let mut terms = Vec::with_capacity(2 * real.len());
    for (r, f) in real.iter().zip(fake) {
        terms.push(g.mean_squared_from(r.score, 1.0));
        terms.push(g.mean_squared_from(f.score, 0.0));
    }
    let loss = sum(g, &terms);
    finite(g, loss, "discriminator loss")?;
    Ok(loss)
}
