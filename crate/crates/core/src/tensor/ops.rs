use super::kernels;
use super::tape::Op;
use super::{Pointwise, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = kernels::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut ins = vec![input, kernel];
        ins.extend(bias);
        Ok(self.push(value, &ins, Op::Conv2d { input, kernel, bias, stride, padding }))
    }

    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::resize_bilinear(self.value(input), out_h, out_w)?;
        Ok(self.push(value, &[input], Op::Resize { input }))
    }

    pub fn pointwise(&mut self, input: Var, kind: Pointwise) -> Var {
        let value = kernels::pointwise(self.value(input), kind);
        self.push(value, &[input], Op::Pointwise { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.pointwise(input, Pointwise::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.pointwise(input, Pointwise::Sigmoid)
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for v in inputs {
            let t = self.value(*v);
            if t.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", self.value(*first).shape(), t.shape()));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, inputs, Op::Concat { inputs: inputs.to_vec() }))
    }

    /// Leading-axis slice `[start, start + len)`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        if start + len > t.shape()[0] {
            return Err(Error::invalid(format!("slice {start}..{} of {:?}", start + len, t.shape())));
        }
        let plane: usize = t.shape()[1..].iter().product();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let value = Tensor::new(&shape, t.data()[start * plane..(start + len) * plane].to_vec())?;
        Ok(self.push(value, &[input], Op::Slice { input, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b)).map_err(|_| Error::shape("add", self.value(a).shape(), self.value(b).shape()))?;
        Ok(self.push(value, &[a, b], Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let value = Tensor::new(ta.shape(), ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect())?;
        Ok(self.push(value, &[a, b], Op::Mul { a, b }))
    }

    /// `sum_i w_i * x_i`, where each `w_i` holds one weight per leading-axis slice
    /// or a single weight for the whole tensor.
    pub fn weighted_sum(&mut self, terms: &[(Var, Vec<T>)]) -> Result<Var> {
        let (first, _) = terms.first().ok_or_else(|| Error::invalid("weighted_sum of nothing"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        for (v, w) in terms {
            let t = self.value(*v);
            if t.shape() != &shape[..] {
                return Err(Error::shape("weighted_sum", &shape, t.shape()));
            }
            if w.len() != 1 && w.len() != shape[0] {
                return Err(Error::invalid(format!("weighted_sum: {} weights for shape {:?}", w.len(), shape)));
            }
            acc.add_assign(&kernels::scale_leading(t, w))?;
        }
        let ins: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        Ok(self.push(acc, &ins, Op::WeightedSum { terms: terms.to_vec() }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.weighted_sum(&[(input, vec![T::lit(factor)])])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, &[input], Op::Sum { input })
    }
}
