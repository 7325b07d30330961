//! Reverse-mode differentiation over the tensor kernels.
//!
//! A [`Tape`] records each operation as it executes (values are computed
//! eagerly), so node ids are already topologically ordered. [`Tape::backward`]
//! walks the record in reverse, accumulating gradients in fixed node order —
//! combined with the deterministic kernels this makes whole training runs
//! bit-reproducible.
//!
//! Parameters live outside the tape in a [`ParamStore`] (named tensors with a
//! trainable flag); a forward pass inserts them as leaves and keeps the
//! name → node mapping needed to assemble a [`GradientMap`].

mod gradcheck;

pub use gradcheck::{check_gradients, GradProbe, GradReport};

use crate::error::{Error, Result};
use crate::loss;
use crate::tensor::{self, BnStats, ConvSpec, Element, Tensor};
use indexmap::IndexMap;

/// Named gradients, one per parameter that participated in the loss.
pub type GradientMap<E = f64> = IndexMap<String, Tensor<E>>;

/// Whether batch normalization uses batch statistics (training) or stored
/// running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One forward pass under construction: a tape, the parameter store feeding
/// it, and the bookkeeping that later turns node gradients into a
/// [`GradientMap`].
pub struct Fwd<'a, E: Element = f64> {
    pub tape: &'a mut Tape<E>,
    store: &'a ParamStore<E>,
    mode: Mode,
    params: IndexMap<String, Var>,
    bn_stats: Vec<(String, BnStats<E>)>,
}

impl<'a, E: Element> Fwd<'a, E> {
    pub fn new(tape: &'a mut Tape<E>, store: &'a ParamStore<E>, mode: Mode) -> Self {
        Fwd {
            tape,
            store,
            mode,
            params: IndexMap::new(),
            bn_stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Tape leaf for a named parameter; repeated requests share one node so
    /// gradients accumulate.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let v = self.tape.leaf(self.store.get(name)?.clone());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// A non-trainable stored tensor (batch-norm running statistics), not
    /// placed on the tape.
    pub fn buffer(&self, name: &str) -> Result<Tensor<E>> {
        Ok(self.store.get(name)?.clone())
    }

    /// Tape leaf for input data.
    pub fn input(&mut self, t: Tensor<E>) -> Var {
        self.tape.leaf(t)
    }

    /// Record training-mode batch statistics for a later running-average
    /// update, keyed by the batch-norm layer's parameter prefix.
    pub fn record_bn(&mut self, prefix: &str, stats: BnStats<E>) {
        self.bn_stats.push((prefix.to_string(), stats));
    }

    /// Close the pass, releasing the tape borrow so `backward` can run.
    pub fn finish(self) -> FwdRecord<E> {
        FwdRecord {
            params: self.params,
            bn_stats: self.bn_stats,
        }
    }
}

/// Bookkeeping kept after a forward pass ends.
pub struct FwdRecord<E: Element = f64> {
    params: IndexMap<String, Var>,
    bn_stats: Vec<(String, BnStats<E>)>,
}

impl<E: Element> FwdRecord<E> {
    /// Assemble named gradients for every trainable parameter the pass
    /// touched. Parameters that did not influence the loss get zeros, so the
    /// optimizer sees a complete map.
    pub fn gradient_map(
        &self,
        store: &ParamStore<E>,
        grads: &Grads<E>,
    ) -> Result<GradientMap<E>> {
        let mut map = GradientMap::new();
        for (name, var) in &self.params {
            if !store.entry(name)?.trainable {
                continue;
            }
            let g = match grads.get(*var) {
                Some(g) => g.clone(),
                None => Tensor::zeros(store.get(name)?.shape()),
            };
            map.insert(name.clone(), g);
        }
        Ok(map)
    }

    /// Batch-norm statistics collected during the pass (training mode only),
    /// as `(layer prefix, stats)` in execution order.
    pub fn bn_stats(&self) -> &[(String, BnStats<E>)] {
        &self.bn_stats
    }
}

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<E: Element> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    Sum {
        x: Var,
    },
    Mul {
        x: Var,
        gate: Var,
    },
    Gap {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: BnStats<E>,
    },
    BnInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running_mean: Tensor<E>,
        running_var: Tensor<E>,
    },
    Softmax2 {
        x: Var,
    },
    Select {
        x: Var,
        c: usize,
    },
    DiceLoss {
        p: Var,
        target: Tensor<E>,
    },
    BceLoss {
        p: Var,
        target: Tensor<E>,
    },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Eagerly evaluated operation record; see the module docs.
pub struct Tape<E: Element = f64> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Insert a constant or parameter value.
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let y = tensor::conv3d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        Ok(self.push(
            y,
            Op::Conv {
                x,
                w,
                b,
                spec: spec.clone(),
            },
        ))
    }

    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let y = tensor::conv_transpose3d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        Ok(self.push(
            y,
            Op::ConvT {
                x,
                w,
                b,
                spec: spec.clone(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = tensor::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = tensor::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let kk = E::from_f64(k);
        let y = self.value(x).map(|v| v * kk);
        self.push(y, Op::Scale { x, k })
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x })
    }

    /// Broadcasting elementwise product (see `tensor::broadcast_mul`).
    pub fn mul(&mut self, x: Var, gate: Var) -> Result<Var> {
        let y = tensor::broadcast_mul(self.value(x), self.value(gate))?;
        Ok(self.push(y, Op::Mul { x, gate }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = tensor::global_avg_pool(self.value(x));
        self.push(y, Op::Gap { x })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape().c).collect();
        let y = tensor::concat_channels(&tensors)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
        ))
    }

    /// Training-mode batch norm; also returns the batch statistics so the
    /// caller can update running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BnStats<E>)> {
        let (y, stats) =
            tensor::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let v = self.push(
            y,
            Op::BnTrain {
                x,
                gamma,
                beta,
                eps,
                stats: stats.clone(),
            },
        );
        Ok((v, stats))
    }

    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        eps: f64,
    ) -> Result<Var> {
        let y = tensor::batch_norm_infer(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        Ok(self.push(
            y,
            Op::BnInfer {
                x,
                gamma,
                beta,
                eps,
                running_mean: running_mean.clone(),
                running_var: running_var.clone(),
            },
        ))
    }

    pub fn softmax2(&mut self, x: Var) -> Result<Var> {
        let y = tensor::softmax2(self.value(x))?;
        Ok(self.push(y, Op::Softmax2 { x }))
    }

    pub fn select_channel(&mut self, x: Var, c: usize) -> Result<Var> {
        let y = tensor::select_channel(self.value(x), c)?;
        Ok(self.push(y, Op::Select { x, c }))
    }

    /// Smoothed Dice loss of probabilities against a 0/1 target, as a scalar
    /// node (see `loss::soft_dice_loss`).
    pub fn dice_loss(&mut self, p: Var, target: &Tensor<E>) -> Result<Var> {
        let l = loss::soft_dice_loss(self.value(p), target)?;
        Ok(self.push(
            Tensor::scalar(l),
            Op::DiceLoss {
                p,
                target: target.clone(),
            },
        ))
    }

    /// Voxel-mean binary cross-entropy as a scalar node (see `loss::bce_loss`).
    pub fn bce_loss(&mut self, p: Var, target: &Tensor<E>) -> Result<Var> {
        let l = loss::bce_loss(self.value(p), target)?;
        Ok(self.push(
            Tensor::scalar(l),
            Op::BceLoss {
                p,
                target: target.clone(),
            },
        ))
    }

    /// Reverse walk from a scalar loss node. Returns per-node gradients;
    /// nodes that do not influence the loss have none.
    pub fn backward(&self, loss: Var) -> Result<Grads<E>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let loss_val = self.value(loss);
        if loss_val.len() != 1 {
            return Err(Error::NonScalarLoss(loss_val.len()));
        }
        let mut grads = Grads {
            slots: vec![None; self.nodes.len()],
        };
        grads.add(loss, Tensor::scalar(E::ONE));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads.slots[id].clone() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Conv { x, w, b, spec } => {
                    let gx = tensor::conv3d_grad_input(
                        &g,
                        self.value(*w),
                        spec,
                        self.value(*x).shape().spatial(),
                    )?;
                    let gw = tensor::conv3d_grad_weights(&g, self.value(*x), spec)?;
                    grads.add(*x, gx);
                    grads.add(*w, gw);
                    if let Some(b) = b {
                        grads.add(*b, tensor::conv3d_grad_bias(&g));
                    }
                }
                Op::ConvT { x, w, b, spec } => {
                    let gx = tensor::conv_transpose3d_grad_input(&g, self.value(*w), spec)?;
                    let gw = tensor::conv_transpose3d_grad_weights(&g, self.value(*x), spec)?;
                    grads.add(*x, gx);
                    grads.add(*w, gw);
                    if let Some(b) = b {
                        grads.add(*b, tensor::conv3d_grad_bias(&g));
                    }
                }
                Op::Relu { x } => {
                    grads.add(*x, tensor::relu_grad(&g, self.value(*x))?);
                }
                Op::Sigmoid { x } => {
                    grads.add(*x, tensor::sigmoid_grad(&g, &self.nodes[id].value)?);
                }
                Op::Add { a, b } => {
                    grads.add(*a, g.clone());
                    grads.add(*b, g);
                }
                Op::Scale { x, k } => {
                    let kk = E::from_f64(*k);
                    grads.add(*x, g.map(|v| v * kk));
                }
                Op::Sum { x } => {
                    let g0 = g.item();
                    grads.add(*x, Tensor::full(self.value(*x).shape(), g0));
                }
                Op::Mul { x, gate } => {
                    let (gx, gg) =
                        tensor::broadcast_mul_grads(&g, self.value(*x), self.value(*gate))?;
                    grads.add(*x, gx);
                    grads.add(*gate, gg);
                }
                Op::Gap { x } => {
                    grads.add(
                        *x,
                        tensor::global_avg_pool_grad(&g, self.value(*x).shape())?,
                    );
                }
                Op::Concat { parts, widths } => {
                    let split = tensor::concat_split_grad(&g, widths)?;
                    for (part, gp) in parts.iter().zip(split) {
                        grads.add(*part, gp);
                    }
                }
                Op::BnTrain {
                    x,
                    gamma,
                    beta,
                    eps,
                    stats,
                } => {
                    let (gx, ggamma, gbeta) = tensor::batch_norm_backward(
                        &g,
                        self.value(*x),
                        self.value(*gamma),
                        stats,
                        *eps,
                    )?;
                    grads.add(*x, gx);
                    grads.add(*gamma, ggamma);
                    grads.add(*beta, gbeta);
                }
                Op::BnInfer {
                    x,
                    gamma,
                    beta,
                    eps,
                    running_mean,
                    running_var,
                } => {
                    let (gx, ggamma, gbeta) = tensor::batch_norm_infer_backward(
                        &g,
                        self.value(*x),
                        self.value(*gamma),
                        running_mean,
                        running_var,
                        *eps,
                    )?;
                    grads.add(*x, gx);
                    grads.add(*gamma, ggamma);
                    grads.add(*beta, gbeta);
                }
                Op::Softmax2 { x } => {
                    grads.add(*x, tensor::softmax2_grad(&g, &self.nodes[id].value)?);
                }
                Op::Select { x, c } => {
                    grads.add(
                        *x,
                        tensor::select_channel_grad(&g, *c, self.value(*x).shape())?,
                    );
                }
                Op::DiceLoss { p, target } => {
                    let g0 = g.item();
                    let gp = loss::soft_dice_grad(self.value(*p), target)?;
                    grads.add(*p, gp.map(|v| v * g0));
                }
                Op::BceLoss { p, target } => {
                    let g0 = g.item();
                    let gp = loss::bce_grad(self.value(*p), target)?;
                    grads.add(*p, gp.map(|v| v * g0));
                }
            }
        }
        Ok(grads)
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads<E: Element> {
    slots: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Grads<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    fn add(&mut self, v: Var, t: Tensor<E>) {
        let slot = &mut self.slots[v.0];
        *slot = Some(match slot.take() {
            None => t,
            Some(prev) => {
                tensor::add(&prev, &t).expect("gradient shapes match by construction")
            }
        });
    }
}

/// Named parameter tensor plus its trainable flag. Batch-norm running
/// statistics are stored with `trainable = false`.
#[derive(Debug, Clone)]
pub struct Param<E: Element = f64> {
    pub value: Tensor<E>,
    pub trainable: bool,
}

/// Ordered, named parameter collection. Iteration order is insertion order,
/// which fixes optimizer update order and checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element = f64> {
    entries: IndexMap<String, Param<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<E>, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidSpec {
                op: "param_store",
                reason: format!("duplicate parameter name {name:?}"),
            });
        }
        self.entries
            .insert(name.to_string(), Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, name: &str) -> Result<&Param<E>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replace a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::InvalidSpec {
                op: "param_store",
                reason: format!(
                    "shape of {name:?} is {}, refusing to set {}",
                    p.value.shape(),
                    value.shape()
                ),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<E>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over all entries (trainable or not).
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Total element count over trainable entries only.
    pub fn trainable_elements(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_grad_is_ones() {
        let mut tape: Tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(
            Shape5::new(1, 1, 1, 1, 3),
            vec![2.0, -1.0, 7.0],
        )
        .unwrap());
        let l = tape.sum(x);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_sum_grad_at_zero_is_quarter() {
        let mut tape: Tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape5::new(1, 1, 1, 1, 4)));
        let s = tape.sigmoid(x);
        let l = tape.sum(s);
        let grads = tape.backward(l).unwrap();
        for &g in grads.get(x).unwrap().data() {
            assert!((g - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn reused_node_accumulates() {
        // l = sum(x + x) → dl/dx = 2 everywhere.
        let mut tape: Tape = Tape::new();
        let x = tape.leaf(Tensor::full(Shape5::new(1, 1, 1, 1, 2), 3.0));
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn gradient_of_sum_of_graphs_is_sum_of_gradients() {
        let shape = Shape5::new(1, 1, 1, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xt = Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng);

        let grad_of = |combine: &dyn Fn(&mut Tape, Var) -> Var| -> Vec<f64> {
            let mut tape: Tape = Tape::new();
            let x = tape.leaf(xt.clone());
            let l = combine(&mut tape, x);
            tape.backward(l).unwrap().get(x).unwrap().data().to_vec()
        };
        let g_sig = grad_of(&|t, x| {
            let s = t.sigmoid(x);
            t.sum(s)
        });
        let g_rel = grad_of(&|t, x| {
            let r = t.relu(x);
            t.sum(r)
        });
        let g_both = grad_of(&|t, x| {
            let s = t.sigmoid(x);
            let ls = t.sum(s);
            let r = t.relu(x);
            let lr = t.sum(r);
            t.add(ls, lr).unwrap()
        });
        for i in 0..4 {
            assert!((g_both[i] - (g_sig[i] + g_rel[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape: Tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape5::new(1, 1, 1, 1, 3)));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss(3)));
    }

    #[test]
    fn unrelated_nodes_have_no_gradient() {
        let mut tape: Tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.leaf(Tensor::scalar(2.0));
        let l = tape.sum(x);
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(y).is_none());
    }

    #[test]
    fn param_store_rejects_duplicates_and_shape_changes() {
        let mut store: ParamStore = ParamStore::new();
        store
            .insert("w", Tensor::zeros(Shape5::new(1, 1, 1, 1, 2)), true)
            .unwrap();
        assert!(store
            .insert("w", Tensor::zeros(Shape5::new(1, 1, 1, 1, 2)), true)
            .is_err());
        assert!(store.set("w", Tensor::zeros(Shape5::new(1, 1, 1, 1, 3))).is_err());
        assert!(store.get("missing").is_err());
    }
}
