//! Small dense f64 tensor engine with reverse-mode differentiation.
//!
//! Tensors are immutable values behind an `Rc`. An op whose inputs require gradients
//! records a node holding its parents and a backward closure; otherwise no graph is built.
//! All ops are row-major and reduce sequentially, so results are bit-reproducible.

mod ops;
mod params;

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use ops::{attention, BlockRef};
pub use params::{Adam, Bound, ParamId, ParamStore};

type BackFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    parents: Vec<Tensor>,
    /// Maps (upstream gradient, forward output) to one gradient per parent.
    back: BackFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: RefCell<Option<Node>>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &self.0.data)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(node),
        }))
    }

    /// Leaf tensor. Panics if `data.len()` does not match the shape.
    pub fn new(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Self::build(shape.to_vec(), data, requires_grad, None)
    }

    pub fn constant(shape: &[usize], data: Vec<f64>) -> Tensor {
        Self::new(shape, data, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::constant(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(x: f64) -> Tensor {
        Self::constant(&[1], vec![x])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == c), "ragged rows");
        Self::constant(&[rows.len(), c], rows.concat())
    }

    /// Result of an op. A backward node is recorded only when some parent requires grad.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: &[&Tensor],
        back: impl Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let node = requires_grad.then(|| Node {
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            back: Box::new(back),
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Rows of a rank-2 tensor (1 for rank 1).
    pub fn rows(&self) -> usize {
        match self.0.shape.len() {
            1 => 1,
            _ => self.0.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        *self.0.shape.last().unwrap_or(&1)
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.0.data[r * self.cols() + c]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::constant(self.shape(), self.data().to_vec())
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.0.shape.len() {
            2 => Ok((self.0.shape[0], self.0.shape[1])),
            _ => Err(Error::shape(op, &self.0.shape, &[0, 0])),
        }
    }

    /// Whether both handles point at the same tensor.
    pub fn ptr_eq(a: &Tensor, b: &Tensor) -> bool {
        Rc::ptr_eq(&a.0, &b.0)
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls; intermediate
    /// gradients and the graph are released.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape("backward", self.shape(), &[1]));
        }
        if !self.0.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        accumulate(self, vec![1.0]);
        for t in order.iter().rev() {
            let node = t.0.node.borrow_mut().take();
            let Some(node) = node else { continue };
            let Some(g) = t.0.grad.borrow_mut().take() else { continue };
            let grads = (node.back)(&g, &t.0.data);
            debug_assert_eq!(grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(grads) {
                if let Some(pg) = pg {
                    if p.0.requires_grad {
                        accumulate(p, pg);
                    }
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.0.node.borrow().as_ref() {
                for p in &node.parents {
                    if p.0.requires_grad && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn accumulate(t: &Tensor, g: Vec<f64>) {
    debug_assert_eq!(g.len(), t.numel());
    let mut slot = t.0.grad.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Relative error used by [`gradcheck`]: `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares analytic gradients of a scalar function against central differences.
/// Returns the maximum relative error over every input entry.
pub fn gradcheck<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::new(s, d.clone(), true)).collect();
    f(&leaves)?.backward()?;
    let mut worst = 0.0f64;
    for (i, (_, data)) in inputs.iter().enumerate() {
        let analytic = leaves[i].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        for j in 0..data.len() {
            let eval = |delta: f64| -> Result<f64> {
                let args: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, (s, d))| {
                        let mut d = d.clone();
                        if k == i {
                            d[j] += delta;
                        }
                        Tensor::constant(s, d)
                    })
                    .collect();
                Ok(f(&args)?.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}
