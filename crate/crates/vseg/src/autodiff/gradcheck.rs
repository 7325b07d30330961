//! Central-difference verification of analytic gradients.
//!
//! For sampled coordinates of every trainable parameter, the loss is
//! re-evaluated at θ ± ε (ε scaled by the coordinate's magnitude) and the
//! slope is compared against the analytic gradient. This is the anchor for
//! all numerical acceptance tests: if it passes, the backward pass is
//! trusted.

use super::{GradientMap, ParamStore};
use crate::error::Result;
use crate::tensor::{Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct GradProbe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// All probes from one check, worst first retrievable via [`GradReport::worst`].
#[derive(Debug, Default)]
pub struct GradReport {
    pub probes: Vec<GradProbe>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradProbe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    /// Highest relative error per parameter, in store order.
    pub fn per_param(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for p in &self.probes {
            match out.last_mut() {
                Some((name, err)) if *name == p.param => *err = err.max(p.rel_err),
                _ => out.push((p.param.clone(), p.rel_err)),
            }
        }
        out
    }
}

/// Relative error with an absolute floor so near-zero pairs do not explode:
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `analytic` gradients against central differences of `loss_fn`.
///
/// Samples up to `samples_per_param` coordinates of each trainable entry
/// (all of them when the parameter is small). `base_eps` (1e-4 is a good
/// default in double precision) is scaled per coordinate by
/// `max(1, |θ_i|)`. A parameter absent from `analytic` is treated as having
/// zero gradient — if the numeric slope disagrees, the probe fails loudly.
pub fn check_gradients<E, F>(
    store: &ParamStore<E>,
    analytic: &GradientMap<E>,
    samples_per_param: usize,
    seed: u64,
    base_eps: f64,
    mut loss_fn: F,
) -> Result<GradReport>
where
    E: Element,
    F: FnMut(&ParamStore<E>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradReport::default();

    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let value = store.get(&name)?.clone();
        let len = value.len();
        let mut indices: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, samples_per_param).into_vec()
        };
        indices.sort_unstable();

        let grad = analytic.get(&name);
        for idx in indices {
            let theta = value.data()[idx].to_f64();
            let eps = base_eps * theta.abs().max(1.0);

            let mut probe = |delta: f64| -> Result<f64> {
                let mut data = value.data().to_vec();
                data[idx] = E::from_f64(theta + delta);
                work.set(&name, Tensor::from_vec(value.shape(), data)?)?;
                loss_fn(&work)
            };
            let plus = probe(eps)?;
            let minus = probe(-eps)?;
            work.set(&name, value.clone())?;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.map_or(0.0, |g| g.data()[idx].to_f64());
            report.probes.push(GradProbe {
                param: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Shape5;

    /// loss = ⟨a, x⟩ is linear, so central differences are exact up to
    /// floating-point roundoff.
    #[test]
    fn linear_loss_is_exact() {
        let shape = Shape5::new(1, 1, 1, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::rand_uniform(shape, -2.0, 2.0, &mut rng);
        let x = Tensor::rand_uniform(shape, -2.0, 2.0, &mut rng);

        let mut store: ParamStore = ParamStore::new();
        store.insert("x", x, true).unwrap();

        let forward = |s: &ParamStore| -> Result<(f64, GradientMap)> {
            let mut tape: Tape = Tape::new();
            let av = tape.leaf(a.clone());
            let xv = tape.leaf(s.get("x")?.clone());
            let prod = tape.mul(av, xv)?;
            let l = tape.sum(prod);
            let grads = tape.backward(l)?;
            let mut map = GradientMap::new();
            map.insert("x".into(), grads.get(xv).unwrap().clone());
            Ok((tape.value(l).item(), map))
        };
        let (_, analytic) = forward(&store).unwrap();
        let report = check_gradients(&store, &analytic, 16, 7, 1e-4, |s| {
            forward(s).map(|(l, _)| l)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-10, "{:?}", report.worst());
    }

    #[test]
    fn single_sigmoid_layer_passes_tightly() {
        let shape = Shape5::new(1, 1, 1, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::rand_uniform(shape, -1.5, 1.5, &mut rng);
        let mut store: ParamStore = ParamStore::new();
        store.insert("x", x, true).unwrap();

        let forward = |s: &ParamStore| -> Result<(f64, GradientMap)> {
            let mut tape: Tape = Tape::new();
            let xv = tape.leaf(s.get("x")?.clone());
            let sv = tape.sigmoid(xv);
            let l = tape.sum(sv);
            let grads = tape.backward(l)?;
            let mut map = GradientMap::new();
            map.insert("x".into(), grads.get(xv).unwrap().clone());
            Ok((tape.value(l).item(), map))
        };
        let (_, analytic) = forward(&store).unwrap();
        let report = check_gradients(&store, &analytic, 16, 9, 1e-4, |s| {
            forward(s).map(|(l, _)| l)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-7, "{:?}", report.worst());
    }

    /// A wrong analytic gradient must be flagged, not absorbed.
    #[test]
    fn corrupted_gradient_is_detected() {
        let shape = Shape5::new(1, 1, 1, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::rand_uniform(shape, 0.5, 1.5, &mut rng);
        let mut store: ParamStore = ParamStore::new();
        store.insert("x", x, true).unwrap();

        let mut analytic = GradientMap::new();
        analytic.insert("x".into(), Tensor::full(shape, 0.0)); // truth is 1.0
        let report = check_gradients(&store, &analytic, 4, 1, 1e-4, |s| {
            let mut tape: Tape = Tape::new();
            let xv = tape.leaf(s.get("x")?.clone());
            let l = tape.sum(xv);
            Ok(tape.value(l).item())
        })
        .unwrap();
        assert!(report.max_rel_err() > 0.9);
    }
}
