use crate::autograd::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Abs(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        out_geom: ConvGeom,
    },
    MaxPool2 {
        x: Var,
        idx: Vec<usize>,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Modulate {
        x: Var,
        scale: Var,
        bias: Var,
    },
    ConcatChannels(Var, Var),
    ConcatRows(Var, Var),
    ExpandBatch(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    BceWithLogits {
        x: Var,
        target: T,
    },
    BlurValid {
        x: Var,
        kernel: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep over the tape visits every node after all of its consumers.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<S: Into<String>>(s: S) -> Error {
    Error::Shape(s.into())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf (data, frozen weights, detached values).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let v = self.zip_map(a, b, |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = T::lit(t.len() as f64);
        let s = t.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// `x [N, in] -> x * w^T + b`, with `w [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: input {xs:?} weight {ws:?}")));
        }
        let (n, inp, out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err(format!("linear bias {:?}", self.shape(b))));
            }
        }
        let mut y = vec![T::zero(); n * out];
        T::gemm(
            false,
            true,
            n,
            out,
            inp,
            T::one(),
            self.value(x).data(),
            self.value(w).data(),
            T::zero(),
            &mut y,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(out) {
                row.iter_mut().zip(bv).for_each(|(v, &bb)| *v += bb);
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(vec![n, out], y)?, Op::Linear { x, w, b }, &inputs))
    }

    fn nchw(&self, x: Var, what: &str) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err(format!("{what}: expected NCHW input, got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// 2-D convolution, weight `[O, C, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c, h, wd] = self.nchw(x, "conv2d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] {
            return Err(shape_err(format!("conv2d: input {:?} weight {ws:?}", [n, c, h, wd])));
        }
        let k = ws[2];
        if kernels::conv_out(h, k, stride, pad).is_none()
            || kernels::conv_out(wd, k, stride, pad).is_none()
        {
            return Err(shape_err(format!("conv2d: kernel {k} larger than padded input {h}x{wd}")));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let out_c = ws[0];
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out_c,
        );
        let shape = vec![n, out_c, geom.out_height(), geom.out_width()];
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, y)?, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Transposed 2-D convolution, weight `[Cin, Cout, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c, h, wd] = self.nchw(x, "conv_transpose2d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != c || ws[2] != ws[3] {
            return Err(shape_err(format!(
                "conv_transpose2d: input {:?} weight {ws:?}",
                [n, c, h, wd]
            )));
        }
        let k = ws[2];
        let ho = kernels::conv_transpose_out(h, k, stride, pad)
            .ok_or_else(|| shape_err("conv_transpose2d: empty output"))?;
        let wo = kernels::conv_transpose_out(wd, k, stride, pad)
            .ok_or_else(|| shape_err("conv_transpose2d: empty output"))?;
        let out_geom = ConvGeom {
            channels: ws[1],
            height: ho,
            width: wo,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!(out_geom.out_height(), h);
        let y = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            c,
            &out_geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = vec![n, ws[1], ho, wo];
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::ConvTranspose2d { x, w, b, out_geom },
            &inputs,
        ))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "maxpool2")?;
        if h < 2 || w < 2 {
            return Err(shape_err(format!("maxpool2: input {h}x{w} too small")));
        }
        let (y, idx) = kernels::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let v = Tensor::new(vec![n, c, h / 2, w / 2], y)?;
        Ok(self.push(v, Op::MaxPool2 { x, idx }, &[x]))
    }

    /// Per-sample per-channel normalization without affine terms.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "instance_norm")?;
        let hw = h * w;
        let xv = self.value(x).data();
        let mut y = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        let count = T::lit(hw as f64);
        for p in 0..n * c {
            let src = &xv[p * hw..(p + 1) * hw];
            let mean = src.iter().copied().sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &s) in y[p * hw..(p + 1) * hw].iter_mut().zip(src) {
                *o = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        let v = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push(v, Op::InstanceNorm { x, inv_std }, &[x]))
    }

    /// `gamma[c] * x + beta[c]` shared across the batch.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "channel_affine")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("channel_affine: parameter length != channels"));
        }
        let hw = h * w;
        let (xv, gv, bv) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let mut y = vec![T::zero(); xv.len()];
        for p in 0..n * c {
            let ch = p % c;
            for (o, &s) in y[p * hw..(p + 1) * hw].iter_mut().zip(&xv[p * hw..(p + 1) * hw]) {
                *o = gv[ch] * s + bv[ch];
            }
        }
        let v = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push(v, Op::ChannelAffine { x, gamma, beta }, &[x, gamma, beta]))
    }

    /// `scale[n, c] * x + bias[n, c]`: per-sample style modulation.
    pub fn modulate(&mut self, x: Var, scale: Var, bias: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "modulate")?;
        if self.shape(scale) != [n, c] || self.shape(bias) != [n, c] {
            return Err(shape_err(format!(
                "modulate: features {:?} with style {:?}/{:?}",
                [n, c, h, w],
                self.shape(scale),
                self.shape(bias)
            )));
        }
        let hw = h * w;
        let (xv, sv, bv) = (
            self.value(x).data(),
            self.value(scale).data(),
            self.value(bias).data(),
        );
        let mut y = vec![T::zero(); xv.len()];
        for p in 0..n * c {
            for (o, &s) in y[p * hw..(p + 1) * hw].iter_mut().zip(&xv[p * hw..(p + 1) * hw]) {
                *o = sv[p] * s + bv[p];
            }
        }
        let v = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push(v, Op::Modulate { x, scale, bias }, &[x, scale, bias]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.nchw(a, "concat_channels")?;
        let [nb, cb, hb, wb] = self.nchw(b, "concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err(format!(
                "concat_channels: {:?} vs {:?}",
                [n, ca, h, w],
                [nb, cb, hb, wb]
            )));
        }
        let hw = h * w;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            y.extend_from_slice(&av[i * ca * hw..(i + 1) * ca * hw]);
            y.extend_from_slice(&bv[i * cb * hw..(i + 1) * cb * hw]);
        }
        let v = Tensor::new(vec![n, ca + cb, h, w], y)?;
        Ok(self.push(v, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Concatenation along the leading (batch) axis.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sa[1..] != sb[1..] {
            return Err(shape_err(format!("concat_rows: {sa:?} vs {sb:?}")));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut y = self.value(a).data().to_vec();
        y.extend_from_slice(self.value(b).data());
        let v = Tensor::new(shape, y)?;
        Ok(self.push(v, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Repeats `x` along a new leading axis of length `n`.
    pub fn expand_batch(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        let mut y = Vec::with_capacity(n * xv.len());
        for _ in 0..n {
            y.extend_from_slice(xv.data());
        }
        let v = Tensor::new(shape, y).expect("expand shape");
        self.push(v, Op::ExpandBatch(x), &[x])
    }

    /// Scales each row of `x [N, d]` to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err(format!("normalize_rows: expected [N, d], got {s:?}")));
        }
        let d = s[1];
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(s[0]);
        let mut y = vec![T::zero(); xv.len()];
        for (row, out) in xv.chunks(d).zip(y.chunks_mut(d)) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm > T::zero()) || !norm.is_finite() {
                return Err(Error::Numeric("cannot normalize a zero-norm code".into()));
            }
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = v / norm);
            norms.push(norm);
        }
        let v = Tensor::new(s.to_vec(), y)?;
        Ok(self.push(v, Op::NormalizeRows { x, norms }, &[x]))
    }

    /// Mean softmax cross-entropy of `logits [N, C]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err(format!(
                "cross_entropy: logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(shape_err(format!("cross_entropy: label {bad} >= {c} classes")));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        for (i, (row, p)) in lv.chunks(c).zip(probs.chunks_mut(c)).enumerate() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z = row.iter().map(|&v| (v - m).exp()).sum::<T>();
            for (pp, &v) in p.iter_mut().zip(row) {
                *pp = (v - m).exp() / z;
            }
            total += z.ln() + m - row[labels[i]];
        }
        let loss = total / T::lit(labels.len() as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Mean binary cross-entropy of logits against a constant target.
    pub fn bce_with_logits(&mut self, x: Var, target: T) -> Var {
        let xv = self.value(x);
        let n = T::lit(xv.len() as f64);
        let total = xv
            .data()
            .iter()
            .map(|&v| v.max(T::zero()) - v * target + (-v.abs()).exp().ln_1p())
            .sum::<T>();
        self.push(Tensor::scalar(total / n), Op::BceWithLogits { x, target }, &[x])
    }

    /// Separable depthwise filtering with no padding.
    pub fn blur_valid(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "blur_valid")?;
        let k = kernel.len();
        if h < k || w < k {
            return Err(shape_err(format!("blur_valid: {h}x{w} image smaller than window {k}")));
        }
        let y = kernels::blur_valid(self.value(x).data(), n * c, h, w, kernel);
        let v = Tensor::new(vec![n, c, h + 1 - k, w + 1 - k], y)?;
        Ok(self.push(
            v,
            Op::BlurValid {
                x,
                kernel: kernel.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse sweep from scalar `root`; returns per-node gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(shape_err("backward: root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let g = gy.data();
        let mut acc = |v: Var, data: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let t = Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape");
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&d, &x)| d * x).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&d, &x)| d / x).collect());
                }
                if self.wants(*b) {
                    let yv = y.data();
                    acc(
                        *b,
                        g.iter()
                            .zip(yv)
                            .zip(bv)
                            .map(|((&d, &q), &x)| -d * q / x)
                            .collect(),
                    );
                }
            }
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::Scale(a, c) => acc(*a, g.iter().map(|&d| d * *c).collect()),
            Op::Abs(a) => {
                let av = self.value(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(av)
                        .map(|(&d, &x)| {
                            if x > T::zero() {
                                d
                            } else if x < T::zero() {
                                -d
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                );
            }
            Op::Tanh(a) => acc(
                *a,
                g.iter()
                    .zip(y.data())
                    .map(|(&d, &t)| d * (T::one() - t * t))
                    .collect(),
            ),
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(av)
                        .map(|(&d, &x)| if x > T::zero() { d } else { d * *slope })
                        .collect(),
                );
            }
            Op::Softplus(a) => {
                let av = self.value(*a).data();
                acc(*a, g.iter().zip(av).map(|(&d, &x)| d * sigmoid(x)).collect());
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).len()]),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc(*a, vec![g[0] / T::lit(n as f64); n]);
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, inp, out) = (xs[0], xs[1], ws[0]);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * inp];
                    T::gemm(false, false, n, inp, out, T::one(), g, self.value(*w).data(), T::zero(), &mut dx);
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); out * inp];
                    T::gemm(true, false, out, inp, n, T::one(), g, self.value(*x).data(), T::zero(), &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); out];
                        for row in g.chunks(out) {
                            db.iter_mut().zip(row).for_each(|(s, &v)| *s += v);
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = self.shape(*x)[0];
                let out_c = self.shape(*w)[0];
                let grads_ = kernels::conv2d_backward(
                    self.value(*x).data(),
                    n,
                    geom,
                    self.value(*w).data(),
                    out_c,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                    b.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = grads_.dx {
                    acc(*x, dx);
                }
                if let Some(dw) = grads_.dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads_.db) {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, out_geom } => {
                let xs = self.shape(*x);
                let grads_ = kernels::conv_transpose2d_backward(
                    self.value(*x).data(),
                    xs[0],
                    xs[1],
                    out_geom,
                    self.value(*w).data(),
                    g,
                    self.wants(*x),
                    self.wants(*w),
                    b.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = grads_.dx {
                    acc(*x, dx);
                }
                if let Some(dw) = grads_.dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads_.db) {
                    acc(*b, db);
                }
            }
            Op::MaxPool2 { x, idx } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&j, &d) in idx.iter().zip(g) {
                    dx[j] += d;
                }
                acc(*x, dx);
            }
            Op::InstanceNorm { x, inv_std } => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let count = T::lit(hw as f64);
                let yv = y.data();
                let mut dx = vec![T::zero(); yv.len()];
                for (p, &inv) in inv_std.iter().enumerate() {
                    let r = p * hw..(p + 1) * hw;
                    let (gp, yp) = (&g[r.clone()], &yv[r.clone()]);
                    let mg = gp.iter().copied().sum::<T>() / count;
                    let mgy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / count;
                    for ((o, &d), &yy) in dx[r].iter_mut().zip(gp).zip(yp) {
                        *o = inv * (d - mg - yy * mgy);
                    }
                }
                acc(*x, dx);
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let s = self.shape(*x);
                let (c, hw) = (s[1], s[2] * s[3]);
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for p in 0..s[0] * c {
                    let ch = p % c;
                    let r = p * hw..(p + 1) * hw;
                    for ((o, &d), &xx) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xv[r]) {
                        *o = d * gv[ch];
                        dgamma[ch] += d * xx;
                        dbeta[ch] += d;
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Modulate { x, scale, bias } => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let xv = self.value(*x).data();
                let sv = self.value(*scale).data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut ds = vec![T::zero(); sv.len()];
                let mut db = vec![T::zero(); sv.len()];
                for p in 0..sv.len() {
                    let r = p * hw..(p + 1) * hw;
                    for ((o, &d), &xx) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xv[r]) {
                        *o = d * sv[p];
                        ds[p] += d * xx;
                        db[p] += d;
                    }
                }
                acc(*x, dx);
                acc(*scale, ds);
                acc(*bias, db);
            }
            Op::ConcatChannels(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let hw = sa[2] * sa[3];
                let (ca, cb) = (sa[1], sb[1]);
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for i in 0..sa[0] {
                    let base = i * (ca + cb) * hw;
                    da.extend_from_slice(&g[base..base + ca * hw]);
                    db.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                acc(*a, g[..na].to_vec());
                acc(*b, g[na..].to_vec());
            }
            Op::ExpandBatch(x) => {
                let len = self.value(*x).len();
                let mut dx = vec![T::zero(); len];
                for chunk in g.chunks(len) {
                    dx.iter_mut().zip(chunk).for_each(|(s, &v)| *s += v);
                }
                acc(*x, dx);
            }
            Op::NormalizeRows { x, norms } => {
                let d = self.shape(*x)[1];
                let yv = y.data();
                let mut dx = vec![T::zero(); yv.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let rg = r * d..(r + 1) * d;
                    let (gr, yr) = (&g[rg.clone()], &yv[rg.clone()]);
                    let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                    for ((o, &gg), &yy) in dx[rg].iter_mut().zip(gr).zip(yr) {
                        *o = (gg - yy * dot) / norm;
                    }
                }
                acc(*x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / T::lit(labels.len() as f64);
                let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dl[i * c + l] -= scale;
                }
                acc(*logits, dl);
            }
            Op::BceWithLogits { x, target } => {
                let xv = self.value(*x).data();
                let scale = g[0] / T::lit(xv.len() as f64);
                acc(*x, xv.iter().map(|&v| (sigmoid(v) - *target) * scale).collect());
            }
            Op::BlurValid { x, kernel } => {
                let s = self.shape(*x);
                let dx = kernels::blur_valid_adjoint(g, s[0] * s[1], s[2], s[3], kernel);
                acc(*x, dx);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
