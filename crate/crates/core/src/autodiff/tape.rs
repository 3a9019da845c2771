use crate::error::{Error, Result};
use crate::scalar::Real;

/// Values of one tape node with their gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffBuffer<T> {
    pub values: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
}

impl<T: Real> DiffBuffer<T> {
    pub fn new(values: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(format!("{n} values for shape {shape:?}"), values.len()));
        }
        Ok(DiffBuffer {
            grad: vec![T::zero(); values.len()],
            values,
            shape,
            requires_grad,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// A differentiable operation with a hand-written adjoint.
pub trait Operator<T: Real>: Send {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>>;

    /// Accumulates `∂L/∂input_i` into `grad_inputs[i]` for every `i` with `wants[i]`.
    fn backward(
        &self,
        inputs: &[&[T]],
        output: &[T],
        grad_output: &[T],
        grad_inputs: &mut [Vec<T>],
        wants: &[bool],
    );
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T> {
    buffer: DiffBuffer<T>,
    op: Option<Box<dyn Operator<T>>>,
    inputs: Vec<Var>,
}

/// Records operator applications in execution order for a reverse sweep.
#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, values: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Result<Var> {
        let buffer = DiffBuffer::new(values, shape, requires_grad)?;
        self.nodes.push(Node {
            buffer,
            op: None,
            inputs: Vec::new(),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that requires a gradient, shaped as a flat vector.
    pub fn variable(&mut self, values: Vec<T>) -> Var {
        let n = values.len();
        self.leaf(values, vec![n], true).expect("flat shape always matches")
    }

    pub fn constant(&mut self, values: Vec<T>) -> Var {
        let n = values.len();
        self.leaf(values, vec![n], false).expect("flat shape always matches")
    }

    /// Runs `op` on the values of `inputs` and records the result.
    pub fn apply(&mut self, mut op: impl Operator<T> + 'static, inputs: &[Var]) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Usage(format!("input {bad:?} is not on this tape")));
        }
        let values = {
            let slices: Vec<&[T]> = inputs.iter().map(|v| self.nodes[v.0].buffer.values.as_slice()).collect();
            op.forward(&slices)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].buffer.requires_grad);
        let n = values.len();
        self.nodes.push(Node {
            buffer: DiffBuffer::new(values, vec![n], requires_grad)?,
            op: Some(Box::new(op)),
            inputs: inputs.to_vec(),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn buffer(&self, v: Var) -> &DiffBuffer<T> {
        &self.nodes[v.0].buffer
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].buffer.values
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        match self.value(v) {
            [x] => Ok(*x),
            other => Err(Error::Usage(format!("expected a scalar, node has {} values", other.len()))),
        }
    }

    pub fn grad(&self, v: Var) -> &[T] {
        &self.nodes[v.0].buffer.grad
    }

    /// Names of the recorded operators, in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter_map(|n| n.op.as_ref().map(|o| o.name())).collect()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.buffer.zero_grad());
    }

    /// Propagates `∂loss/∂node` to every node that requires a gradient,
    /// adding to the stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("{loss:?} is not on this tape")));
        }
        if self.nodes[loss.0].buffer.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {} values",
                self.nodes[loss.0].buffer.len()
            )));
        }
        let mut adjoints: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adjoints[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g_out) = adjoints[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(op) = &node.op {
                let wants: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].buffer.requires_grad).collect();
                if wants.iter().any(|&w| w) {
                    let inputs: Vec<&[T]> = node.inputs.iter().map(|v| self.nodes[v.0].buffer.values.as_slice()).collect();
                    let mut g_in: Vec<Vec<T>> = node
                        .inputs
                        .iter()
                        .zip(&wants)
                        .map(|(v, &w)| if w { vec![T::zero(); self.nodes[v.0].buffer.len()] } else { Vec::new() })
                        .collect();
                    op.backward(&inputs, &node.buffer.values, &g_out, &mut g_in, &wants);
                    for ((v, g), w) in node.inputs.iter().zip(g_in).zip(&wants) {
                        if !w {
                            continue;
                        }
                        match &mut adjoints[v.0] {
                            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
            let buf = &mut self.nodes[i].buffer;
            buf.grad.iter_mut().zip(&g_out).for_each(|(a, &b)| *a += b);
        }
        if let Some((i, _)) = self
            .nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.buffer.requires_grad && n.buffer.grad.iter().any(|g| !g.is_finite()))
        {
            let name = self.nodes[i].op.as_ref().map_or("leaf", |o| o.name());
            return Err(Error::NumericFault(format!("non-finite gradient at node {i} ({name})")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops::{SquaredNorm, Sum};

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(vec![0.3, -1.0, 4.0]);
        let s = tape.apply(Sum, &[x]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_norm_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(vec![1.0, -2.0]);
        let s = tape.apply(SquaredNorm, &[x]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), &[2.0, -4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_and_zero_grad_resets() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(vec![1.0, -2.0]);
        let s = tape.apply(SquaredNorm, &[x]).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), &[4.0, -8.0]);
        tape.zero_grad();
        assert_eq!(tape.grad(x), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_backward_is_usage_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(vec![1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn nan_gradient_is_numeric_fault() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(vec![f64::NAN]);
        let s = tape.apply(SquaredNorm, &[x]).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::NumericFault(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(vec![3.0]);
        let x = tape.variable(vec![2.0]);
        let s = tape.apply(Sum, &[x]).unwrap();
        let _ = c;
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(c), &[0.0]);
        assert!(!tape.buffer(c).requires_grad);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(DiffBuffer::<f64>::new(vec![1.0; 5], vec![2, 3], true).is_err());
    }
}
