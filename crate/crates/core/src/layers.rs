//! Sequential stacks of operators that record their activations for the
//! backward pass.

use crate::error::Result;
use crate::ops::{
    conv2d, conv2d_backward, deconv2d, deconv2d_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, ConvSpec, LayerNorm,
};
use crate::tensor::{DiffArray, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvSpec<T>),
    Deconv(ConvSpec<T>),
    Norm(LayerNorm<T>),
    Relu,
    Sigmoid,
    /// `x + relu(conv(x))`; the conv must preserve shape.
    ResidualConv(ConvSpec<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: &DiffArray<T>) -> Result<DiffArray<T>> {
        match self {
            Layer::Conv(spec) => conv2d(x, spec),
            Layer::Deconv(spec) => deconv2d(x, spec),
            Layer::Norm(ln) => ln.forward(x),
            Layer::Relu => Ok(relu(x)),
            Layer::Sigmoid => Ok(sigmoid(x)),
            Layer::ResidualConv(spec) => {
                let mut y = relu(&conv2d(x, spec)?);
                for (o, &v) in y.values.iter_mut().zip(&x.values) {
                    *o += v;
                }
                Ok(y)
            }
        }
    }

    /// Reads `y.grad`, accumulates into parameter grads and (if `propagate`) `x.grad`.
    pub fn backward(&mut self, x: &mut DiffArray<T>, y: &DiffArray<T>, propagate: bool) -> Result<()> {
        match self {
            Layer::Conv(spec) => conv2d_backward(x, spec, y, propagate),
            Layer::Deconv(spec) => deconv2d_backward(x, spec, y, propagate),
            Layer::Norm(ln) => ln.backward(x, y),
            Layer::Relu => {
                relu_backward(x, y);
                Ok(())
            }
            Layer::Sigmoid => {
                sigmoid_backward(x, y);
                Ok(())
            }
            Layer::ResidualConv(spec) => {
                let mut c = conv2d(x, spec)?;
                let mut r = relu(&c);
                r.grad.copy_from_slice(&y.grad);
                relu_backward(&mut c, &r);
                conv2d_backward(x, spec, &c, true)?;
                for (g, &d) in x.grad.iter_mut().zip(&y.grad) {
                    *g += d;
                }
                Ok(())
            }
        }
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DiffArray<T>)>) {
        match self {
            Layer::Conv(s) | Layer::Deconv(s) | Layer::ResidualConv(s) => {
                out.push((format!("{}.kernel", prefix), &s.kernel));
                out.push((format!("{}.bias", prefix), &s.bias));
            }
            Layer::Norm(ln) => {
                out.push((format!("{}.gain", prefix), &ln.gain));
                out.push((format!("{}.bias", prefix), &ln.bias));
            }
            Layer::Relu | Layer::Sigmoid => {}
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DiffArray<T>)>) {
        match self {
            Layer::Conv(s) | Layer::Deconv(s) | Layer::ResidualConv(s) => {
                out.push((format!("{}.kernel", prefix), &mut s.kernel));
                out.push((format!("{}.bias", prefix), &mut s.bias));
            }
            Layer::Norm(ln) => {
                out.push((format!("{}.gain", prefix), &mut ln.gain));
                out.push((format!("{}.bias", prefix), &mut ln.bias));
            }
            Layer::Relu | Layer::Sigmoid => {}
        }
    }
}

/// Activations of one stack pass: `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub acts: Vec<DiffArray<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &DiffArray<T> {
        self.acts.last().expect("trace holds the input")
    }

    pub fn output_mut(&mut self) -> &mut DiffArray<T> {
        self.acts.last_mut().expect("trace holds the input")
    }

    pub fn input(&self) -> &DiffArray<T> {
        &self.acts[0]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stack<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Stack<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Stack { layers }
    }

    pub fn forward(&self, x: DiffArray<T>) -> Result<Trace<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for layer in &self.layers {
            let y = layer.forward(acts.last().expect("non-empty"))?;
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Backpropagates the gradient stored on the trace output. The input
    /// gradient is only accumulated when `propagate_input` is set.
    pub fn backward(&mut self, trace: &mut Trace<T>, propagate_input: bool) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let (head, tail) = trace.acts.split_at_mut(i + 1);
            layer.backward(&mut head[i], &tail[0], i > 0 || propagate_input)?;
        }
        Ok(())
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DiffArray<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("{}.{}", prefix, i), out);
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DiffArray<T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&format!("{}.{}", prefix, i), out);
        }
    }
}
