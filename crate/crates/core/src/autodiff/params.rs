//! Named parameter collections.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::ops::Index;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Named tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            !self.tensors.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, values from `f`.
    pub fn map(&self, mut f: impl FnMut(&str, &Tensor) -> Tensor) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let out = f(k, v);
                assert_eq!(out.shape(), v.shape(), "map changed the shape of `{k}`");
                (k.clone(), out)
            })
            .collect();
        ParamSet { tensors }
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    /// Elementwise combination with another set of identical layout.
    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> ParamSet {
        self.map(|k, t| {
            let o = other
                .get(k)
                .unwrap_or_else(|| panic!("parameter `{k}` missing from other set"));
            t.zip_map(o, &f)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Names and shapes agree.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }

    /// Hash of names, shapes and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (k, v) in &self.tensors {
            k.hash(&mut h);
            v.shape().hash(&mut h);
            for x in v.data() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Every tensor becomes a differentiable leaf.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> VarSet<'t> {
        VarSet {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Every tensor enters the tape as a constant.
    pub fn constants<'t>(&self, tape: &'t Tape) -> VarSet<'t> {
        VarSet {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

impl Index<&str> for ParamSet {
    type Output = Tensor;

    fn index(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut p = ParamSet::new();
        for (k, v) in iter {
            p.insert(k, v);
        }
        p
    }
}

/// A [`ParamSet`] living on a tape.
#[derive(Clone, Debug)]
pub struct VarSet<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> VarSet<'t> {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'t>)>) -> Self {
        VarSet {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Var<'t>> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<'t>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn values(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .vars
                .iter()
                .map(|(k, v)| (k.clone(), v.value().clone()))
                .collect(),
        }
    }

    pub fn detach(&self) -> VarSet<'t> {
        VarSet {
            vars: self
                .vars
                .iter()
                .map(|(k, v)| (k.clone(), v.detach()))
                .collect(),
        }
    }

    fn tape(&self) -> &'t Tape {
        self.vars
            .values()
            .next()
            .map(Var::tape)
            .expect("empty variable set")
    }

    /// Gradients of `loss` with respect to every member, as plain tensors.
    pub fn gradients(&self, loss: &Var<'t>) -> crate::Result<ParamSet> {
        let wrt: Vec<&Var<'t>> = self.vars.values().collect();
        let grads = self.tape().gradients(loss, &wrt)?;
        Ok(ParamSet {
            tensors: self.vars.keys().cloned().zip(grads).collect(),
        })
    }

    /// Gradients recorded on the tape so they can be differentiated again.
    pub fn gradients_graph(&self, loss: &Var<'t>) -> crate::Result<VarSet<'t>> {
        let wrt: Vec<&Var<'t>> = self.vars.values().collect();
        let grads = self.tape().gradients_graph(loss, &wrt)?;
        Ok(VarSet {
            vars: self.vars.keys().cloned().zip(grads).collect(),
        })
    }

    /// `self - step * grads`, recorded on the tape.
    pub fn sgd_step(&self, grads: &VarSet<'t>, step: f64) -> VarSet<'t> {
        VarSet {
            vars: self
                .vars
                .iter()
                .map(|(k, v)| {
                    let g = &grads.vars[k];
                    (k.clone(), v.sub(&g.scale(step)))
                })
                .collect(),
        }
    }
}

impl<'t> Index<&str> for VarSet<'t> {
    type Output = Var<'t>;

    fn index(&self, name: &str) -> &Var<'t> {
        self.get(name)
            .unwrap_or_else(|| panic!("no variable named `{name}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_tracks_bits() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let b = a.map(|_, t| t.map(|x| x + 0.0));
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = a.map(|_, t| t.map(|x| x * (1.0 + 1e-15)));
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::scalar(1.0));
        a.insert("w", Tensor::scalar(2.0));
    }
}
