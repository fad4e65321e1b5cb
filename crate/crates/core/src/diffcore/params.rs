use rand::Rng;

use crate::diffcore::conv::Conv3dSpec;
use crate::diffcore::graph::{Grads, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered, named parameters of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

/// Graph handles for every parameter of a [`ParamSet`], in order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wrap caller-made variables, one per parameter in set order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn var(&self, idx: usize) -> Var {
        self.0[idx]
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    /// He-uniform conv weight plus zero bias; returns `(weight, bias)` indices.
    pub fn add_conv<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        spec: &Conv3dSpec,
        gain: f64,
        rng: &mut R,
    ) -> (usize, usize) {
        let bound = gain * (3.0 / spec.fan_in() as f64).sqrt();
        let w = Tensor::from_fn(&spec.weight_shape(), |_| {
            T::of(rng.gen_range(-bound..=bound))
        });
        let wi = self.add(format!("{prefix}.weight"), w);
        let bi = self.add(format!("{prefix}.bias"), Tensor::zeros(&[spec.out_ch]));
        (wi, bi)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Put every parameter on the graph, as trainable inputs or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| {
                    if trainable {
                        g.input(p.value.clone())
                    } else {
                        g.constant(p.value.clone())
                    }
                })
                .collect(),
        )
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Add the adjoints of a bound graph into `grad`.
    pub fn accumulate_grads(&mut self, grads: &Grads<T>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.0) {
            if let Some(d) = grads.get(v) {
                p.grad.add_assign(d);
            }
        }
    }

    /// Replace values by name; every parameter must be supplied with its shape.
    pub fn load_values(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<()> {
        for p in &mut self.params {
            let v = lookup(&p.name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{}`", p.name)))?;
            v.expect_shape(p.value.shape())?;
            p.value = v;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}
