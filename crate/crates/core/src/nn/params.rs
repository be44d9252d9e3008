use super::tensor::Real;
use super::NnError;

/// One trainable tensor with its Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    /// Number of optimizer steps applied so far.
    pub step: u64,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: vec![],
            step: 0,
            seed,
        }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, value: Vec<T>) -> usize {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        self.params.push(Param {
            name,
            shape,
            value,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        self.params.len() - 1
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |xs: &[T]| xs.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: conv(&p.value),
                    m: conv(&p.m),
                    v: conv(&p.v),
                })
                .collect(),
            step: self.step,
            seed: self.seed,
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    pub(crate) fn pair_mut(&mut self, a: usize, b: usize) -> (&mut [T], &mut [T]) {
        assert!(a < b, "parameter pairs are stored in order");
        let (lo, hi) = self.grads.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<(), NnError> {
        if self.grads.len() != other.grads.len() {
            return Err(NnError::ShapeMismatch("gradient sets differ in length".into()));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if a.len() != b.len() {
                return Err(NnError::ShapeMismatch("gradient tensors differ in size".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().flatten().all(|g| *g == T::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
