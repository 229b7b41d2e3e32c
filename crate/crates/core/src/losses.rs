//! Content, adversarial and perceptual losses recorded on a tape.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensorcore::{Scalar, Tape, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adversarial_weight: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return Err(Error::Parameter(format!(
                "adversarial weight {} must be finite and non-negative",
                self.adversarial_weight
            )));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adversarial_weight: 1e-3 }
    }
}

/// Mean squared error over every element (batch and spatial axes).
pub fn content_loss<T: Scalar>(t: &mut Tape<T>, x: Var, g: Var) -> Result<Var> {
    if t.shape(x) != t.shape(g) {
        return Err(shape_err(format!("content loss between {:?} and {:?}", t.shape(x), t.shape(g))));
    }
    let d = t.sub(g, x)?;
    let sq = t.square(d);
    Ok(t.mean(sq))
}

fn log_prob<T: Scalar>(t: &mut Tape<T>, p: Var) -> Var {
    let c = t.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    t.ln(c)
}

fn log_complement<T: Scalar>(t: &mut Tape<T>, p: Var) -> Var {
    let c = t.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let neg = t.scale(c, -1.0);
    let q = t.add_scalar(neg, 1.0);
    t.ln(q)
}

/// `-mean[log D(x|c) + log(1 - D(G(z|c)|c))]`.
pub fn discriminator_loss<T: Scalar>(t: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    if t.shape(d_real) != t.shape(d_fake) {
        return Err(shape_err(format!(
            "discriminator outputs {:?} (real) and {:?} (fake)",
            t.shape(d_real),
            t.shape(d_fake)
        )));
    }
    let a = log_prob(t, d_real);
    let b = log_complement(t, d_fake);
    let s = t.add(a, b)?;
    let m = t.mean(s);
    Ok(t.scale(m, -1.0))
}

/// Non-saturating generator objective `-mean log D(G(z|c)|c)`.
pub fn generator_adversarial_loss<T: Scalar>(t: &mut Tape<T>, d_fake: Var) -> Var {
    let l = log_prob(t, d_fake);
    let m = t.mean(l);
    t.scale(m, -1.0)
}

/// Content loss plus the weighted adversarial term, returned alongside the
/// two components.
pub fn perceptual_loss<T: Scalar>(
    t: &mut Tape<T>,
    x: Var,
    g: Var,
    d_fake: Var,
    weights: LossWeights,
) -> Result<PerceptualTerms> {
    weights.validate()?;
    let content = content_loss(t, x, g)?;
    let adversarial = generator_adversarial_loss(t, d_fake);
    let weighted = t.scale(adversarial, weights.adversarial_weight);
    let total = t.add(content, weighted)?;
    Ok(PerceptualTerms { total, content, adversarial })
}

#[derive(Debug, Clone, Copy)]
pub struct PerceptualTerms {
    pub total: Var,
    pub content: Var,
    pub adversarial: Var,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::gradcheck::{self, Tolerance};
    use crate::tensorcore::Tensor;

    fn scalar_of(t: &Tape<f64>, v: Var) -> f64 {
        t.value(v).data()[0]
    }

    fn probs(t: &mut Tape<f64>, v: &[f64]) -> Var {
        t.constant(Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap())
    }

    #[test]
    fn content_loss_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 1, 4, 4]));
        let g = t.constant(Tensor::full(&[2, 1, 4, 4], 0.2));
        let l = content_loss(&mut t, x, x).unwrap();
        assert_eq!(scalar_of(&t, l), 0.0);
        let l = content_loss(&mut t, x, g).unwrap();
        assert!((scalar_of(&t, l) - 0.04).abs() < 1e-15);
        let bad = t.constant(Tensor::zeros(&[2, 1, 4, 5]));
        assert!(matches!(content_loss(&mut t, x, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn content_gradient_is_scaled_difference() {
        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| (i as f64 * 0.37).sin());
        let g0 = Tensor::from_fn(&[1, 1, 3, 4], |i| (i as f64 * 0.91).cos());
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let gv = t.variable(g0.clone());
        let l = content_loss(&mut t, xv, gv).unwrap();
        t.backward(l).unwrap();
        let grad = t.grad(gv).unwrap();
        for i in 0..12 {
            let expect = 2.0 * (g0.data()[i] - x.data()[i]) / 12.0;
            assert!((grad[i] - expect).abs() < 1e-15);
        }
        let report = gradcheck::check(&[g0], Tolerance::default(), None, |t, v| {
            let xv = t.constant(x.clone());
            content_loss(t, xv, v[0])
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn discriminator_loss_examples() {
        let mut t = Tape::new();
        let half = probs(&mut t, &[0.5, 0.5]);
        let l = discriminator_loss(&mut t, half, half).unwrap();
        assert!((scalar_of(&t, l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let one = probs(&mut t, &[1.0]);
        let zero = probs(&mut t, &[0.0]);
        let l = discriminator_loss(&mut t, one, zero).unwrap();
        assert!(scalar_of(&t, l).abs() < 1e-6);

        let r = probs(&mut t, &[0.3, 0.8]);
        let f = probs(&mut t, &[0.6, 0.1]);
        let r2 = probs(&mut t, &[0.4, 0.9]);
        let f2 = probs(&mut t, &[0.7, 0.2]);
        let a = discriminator_loss(&mut t, r, f).unwrap();
        let b = discriminator_loss(&mut t, r2, f2).unwrap();
        assert!((scalar_of(&t, a) - scalar_of(&t, b)).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_examples() {
        let mut t = Tape::new();
        let one = probs(&mut t, &[1.0]);
        let l = generator_adversarial_loss(&mut t, one);
        assert!(scalar_of(&t, l).abs() < 1e-6);
        let half = probs(&mut t, &[0.5]);
        let l = generator_adversarial_loss(&mut t, half);
        assert!((scalar_of(&t, l) - std::f64::consts::LN_2).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let p = probs(&mut t, &[i as f64 / 101.0]);
            let l = generator_adversarial_loss(&mut t, p);
            let v = scalar_of(&t, l);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn perceptual_loss_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let g = t.constant(Tensor::full(&[1, 1, 4, 4], 0.2));
        let half = probs(&mut t, &[0.5]);
        let one = probs(&mut t, &[1.0]);
        let p = perceptual_loss(&mut t, x, g, half, LossWeights { adversarial_weight: 0.001 }).unwrap();
        let expect = 0.04 + 0.001 * std::f64::consts::LN_2;
        assert!((scalar_of(&t, p.total) - expect).abs() < 1e-12);
        assert!((scalar_of(&t, p.total) - 0.0406931).abs() < 1e-7);

        let p = perceptual_loss(&mut t, x, g, half, LossWeights { adversarial_weight: 0.0 }).unwrap();
        assert_eq!(scalar_of(&t, p.total), scalar_of(&t, p.content));
        let p = perceptual_loss(&mut t, x, x, one, LossWeights { adversarial_weight: 0.1 }).unwrap();
        assert!(scalar_of(&t, p.total).abs() < 1e-6);

        let vals: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&w| {
                let p = perceptual_loss(&mut t, x, g, half, LossWeights { adversarial_weight: w }).unwrap();
                scalar_of(&t, p.total)
            })
            .collect();
        assert!(((vals[1] - vals[0]) - (vals[2] - vals[1])).abs() < 1e-12);
        assert!(perceptual_loss(&mut t, x, g, half, LossWeights { adversarial_weight: -1.0 }).is_err());
    }

    #[test]
    fn adversarial_gradients() {
        let p = Tensor::new(vec![3, 1], vec![0.2, 0.55, 0.9]).unwrap();
        let q = Tensor::new(vec![3, 1], vec![0.4, 0.3, 0.75]).unwrap();
        let report = gradcheck::check(&[p.clone(), q], Tolerance::default(), None, |t, v| {
            discriminator_loss(t, v[0], v[1])
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        let report = gradcheck::check(&[p], Tolerance::default(), None, |t, v| {
            Ok(generator_adversarial_loss(t, v[0]))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
