use std::collections::BTreeMap;

use super::kernels::{self, ConvDims, PoolDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Stride and zero padding of a 2-D convolution over the last two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        ConvGeom { stride, padding }
    }

    pub fn unit() -> Self {
        ConvGeom::new((1, 1), (0, 0))
    }
}

/// Window and stride of an average pool over the last two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolGeom {
    pub fn window(kh: usize, kw: usize) -> Self {
        PoolGeom {
            kernel: (kh, kw),
            stride: (kh, kw),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv {
        x: Var,
        w: Var,
        dims: ConvDims,
    },
    BiasAdd {
        x: Var,
        b: Var,
        outer: usize,
        channels: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Slice {
        x: Var,
        outer: usize,
        axis_in: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    AvgPool {
        x: Var,
        dims: PoolDims,
    },
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Reshape(Var),
    Permute {
        x: Var,
        map: Vec<usize>,
    },
    Max(Var, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lifecycle {
    Recording,
    Consumed,
}

/// Dynamic compute graph, built by one forward pass and consumed by one
/// backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    state: Lifecycle,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_var: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_var.get(&var.0)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            state: Lifecycle::Recording,
        }
    }

    /// Hash of the linear piece every clamp and maximum element sits on.
    /// Two evaluations with equal signatures lie on the same smooth branch.
    pub fn piecewise_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |code: u64| {
            h ^= code;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Clamp { x, lo, hi } => {
                    for &v in self.node(*x).value.data() {
                        mix(if v < *lo {
                            0
                        } else if v > *hi {
                            2
                        } else {
                            1
                        });
                    }
                }
                Op::Max(a, b) => {
                    let (va, vb) = (&self.node(*a).value, &self.node(*b).value);
                    for (x, y) in va.data().iter().zip(vb.data()) {
                        mix(u64::from(x >= y));
                    }
                }
                _ => {}
            }
        }
        h
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn ensure_recording(&self) -> Result<()> {
        match self.state {
            Lifecycle::Recording => Ok(()),
            Lifecycle::Consumed => Err(Error::Lifecycle(
                "graph already consumed by backward; run a new forward pass".into(),
            )),
        }
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        rg: bool,
    ) -> Result<Var> {
        check_finite(op_name, value.data())?;
        Ok(self.push(value, op, rg))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.ensure_recording()?;
        check_finite("leaf", value.data())?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// A constant input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// A named trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        let v = self.leaf(value, true)?;
        self.nodes[v.0].name = Some(name.to_string());
        Ok(v)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.ensure_recording()?;
        Ok(&self.node(v).value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.ensure_recording()?;
        self.same_shape(op_name, a, b)?;
        let va = &self.node(a).value;
        let vb = &self.node(b).value;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push_checked(op_name, value, op, rg)
    }

    fn map(
        &mut self,
        op_name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.ensure_recording()?;
        let vx = &self.node(x).value;
        let data = vx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push_checked(op_name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("maximum", a, b, f64::max, Op::Max(a, b))
    }

    /// `scale * x + shift`, the only scalar-tensor broadcast.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        if !scale.is_finite() || !shift.is_finite() {
            return Err(Error::NonFinite { op: "affine" });
        }
        self.map("affine", x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// `max(lo, min(hi, x))`; either bound may be infinite.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::contract(format!("clamp bounds [{lo}, {hi}]")));
        }
        self.map("clamp", x, |v| v.min(hi).max(lo), Op::Clamp { x, lo, hi })
    }

    pub fn maximum_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.clamp(x, c, f64::INFINITY)
    }

    pub fn minimum_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.clamp(x, f64::NEG_INFINITY, c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.maximum_scalar(x, 0.0)
    }

    pub fn relu6(&mut self, x: Var) -> Result<Var> {
        self.clamp(x, 0.0, 6.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, f64::ln, Op::Log(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.ensure_recording()?;
        let s: f64 = self.node(x).value.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x).value.len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ensure_recording()?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(
            self.node(a).value.data(),
            self.node(b).value.data(),
            m,
            k,
            n,
        );
        let rg = self.rg(&[a, b]);
        self.push_checked(
            "matmul",
            Tensor::from_parts(vec![m, n], data),
            Op::MatMul { a, b, m, k, n },
            rg,
        )
    }

    fn conv_dims(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        geom: ConvGeom,
        depthwise: bool,
    ) -> Result<ConvDims> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape(
                op,
                format!("input {sx:?}, kernel {sw:?} must both be 4-D"),
            ));
        }
        let (batch, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, per_group, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if depthwise {
            if per_group != 1 || c_out != c_in {
                return Err(Error::shape(
                    op,
                    format!("depthwise kernel {sw:?} for {c_in} channels"),
                ));
            }
        } else if per_group != c_in {
            return Err(Error::shape(
                op,
                format!("kernel {sw:?} expects {per_group} input channels, got {c_in}"),
            ));
        }
        let (sh, swd) = geom.stride;
        let (ph, pw) = geom.padding;
        if sh == 0 || swd == 0 {
            return Err(Error::contract(format!("{op}: zero stride")));
        }
        if ph >= kh || pw >= kw {
            return Err(Error::contract(format!(
                "{op}: padding {:?} must be smaller than kernel",
                geom.padding
            )));
        }
        if h + 2 * ph < kh || wd + 2 * pw < kw {
            return Err(Error::shape(
                op,
                format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"),
            ));
        }
        Ok(ConvDims {
            batch,
            c_in,
            c_out,
            h,
            w: wd,
            kh,
            kw,
            sh,
            sw: swd,
            ph,
            pw,
            ho: (h + 2 * ph - kh) / sh + 1,
            wo: (wd + 2 * pw - kw) / swd + 1,
            depthwise,
        })
    }

    fn conv_impl(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        geom: ConvGeom,
        depthwise: bool,
    ) -> Result<Var> {
        self.ensure_recording()?;
        let dims = self.conv_dims(op, x, w, geom, depthwise)?;
        let data = kernels::conv2d(self.node(x).value.data(), self.node(w).value.data(), &dims);
        let value = Tensor::from_parts(vec![dims.batch, dims.c_out, dims.ho, dims.wo], data);
        let rg = self.rg(&[x, w]);
        self.push_checked(op, value, Op::Conv { x, w, dims }, rg)
    }

    /// `x: [n, c_in, h, w]`, `w: [c_out, c_in, kh, kw]`
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        self.conv_impl("conv2d", x, w, geom, false)
    }

    /// `x: [n, c, h, w]`, `w: [c, 1, kh, kw]`
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        self.conv_impl("depthwise_conv2d", x, w, geom, true)
    }

    /// Adds `b[c]` to every element whose index along `axis` is `c`.
    pub fn bias_add(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        self.ensure_recording()?;
        let sx = self.shape(x).to_vec();
        let sb = self.shape(b).to_vec();
        if axis >= sx.len() || sb != [sx[axis]] {
            return Err(Error::shape(
                "bias_add",
                format!("bias {sb:?} on axis {axis} of {sx:?}"),
            ));
        }
        let (outer, channels, inner) = split_at_axis(&sx, axis);
        let bv = self.node(b).value.data();
        let mut data = self.node(x).value.data().to_vec();
        for o in 0..outer {
            for (c, &bc) in bv.iter().enumerate() {
                let base = (o * channels + c) * inner;
                for v in &mut data[base..base + inner] {
                    *v += bc;
                }
            }
        }
        let rg = self.rg(&[x, b]);
        self.push_checked(
            "bias_add",
            Tensor::from_parts(sx, data),
            Op::BiasAdd {
                x,
                b,
                outer,
                channels,
                inner,
            },
            rg,
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.ensure_recording()?;
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                data.extend_from_slice(&self.node(*p).value.data()[o * len..(o + 1) * len]);
            }
        }
        let recorded = parts.iter().map(|p| (*p, self.shape(*p)[axis])).collect();
        let rg = self.rg(parts);
        self.push_checked(
            "concat",
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: recorded,
                outer,
                inner,
            },
            rg,
        )
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.ensure_recording()?;
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(Error::contract(format!(
                "slice {start}..{} on axis {axis} of {sx:?}",
                start + len
            )));
        }
        let (outer, axis_in, inner) = split_at_axis(&sx, axis);
        let src = self.node(x).value.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * axis_in + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        self.push_checked(
            "slice",
            Tensor::from_parts(shape, data),
            Op::Slice {
                x,
                outer,
                axis_in,
                start,
                len,
                inner,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.ensure_recording()?;
        let value = self.node(x).value.clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.ensure_recording()?;
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        let valid = perm.len() == sx.len()
            && perm
                .iter()
                .all(|&p| p < sx.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::contract(format!(
                "permutation {perm:?} for rank {}",
                sx.len()
            )));
        }
        let map = kernels::permute_index(&sx, perm);
        let src = self.node(x).value.data();
        let data = map.iter().map(|&i| src[i]).collect();
        let shape = perm.iter().map(|&p| sx[p]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Permute { x, map }, rg))
    }

    /// Average pool over the last two axes of `[n, c, h, w]`, no padding.
    pub fn avg_pool(&mut self, x: Var, geom: PoolGeom) -> Result<Var> {
        self.ensure_recording()?;
        let sx = self.shape(x).to_vec();
        let (kh, kw) = geom.kernel;
        let (sh, sw) = geom.stride;
        if sx.len() != 4 {
            return Err(Error::shape(
                "avg_pool",
                format!("expected 4-D input, got {sx:?}"),
            ));
        }
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > sx[2] || kw > sx[3] {
            return Err(Error::contract(format!(
                "avg_pool window {geom:?} on {sx:?}"
            )));
        }
        let dims = PoolDims {
            planes: sx[0] * sx[1],
            h: sx[2],
            w: sx[3],
            kh,
            kw,
            sh,
            sw,
            ho: (sx[2] - kh) / sh + 1,
            wo: (sx[3] - kw) / sw + 1,
        };
        let data = kernels::avg_pool(self.node(x).value.data(), &dims);
        let shape = vec![sx[0], sx[1], dims.ho, dims.wo];
        let rg = self.rg(&[x]);
        self.push_checked(
            "avg_pool",
            Tensor::from_parts(shape, data),
            Op::AvgPool { x, dims },
            rg,
        )
    }

    /// Runs reverse-mode differentiation from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.ensure_recording()?;
        if self.node(loss).value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.state = Lifecycle::Consumed;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            // Interior values are no longer needed once their gradient has flowed.
            self.nodes[id].value = Tensor::scalar(0.0);
        }

        let mut out = Gradients::default();
        for (id, node) in self.nodes.iter().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let data = grads[id]
                .take()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            let t = Tensor::from_parts(node.value.shape().to_vec(), data);
            if let Some(name) = &node.name {
                out.by_name.insert(name.clone(), t.clone());
            }
            out.by_var.insert(id, t);
        }
        self.nodes.clear();
        Ok(out)
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Borrow-splitting helper: accumulate into `grads[v]`.
        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }
        let out = nodes[id].value.data();
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc(grads, nodes, v)
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = val(*b);
                    for ((d, s), o) in acc(grads, nodes, *a).iter_mut().zip(g).zip(other) {
                        *d += s * o;
                    }
                }
                if wants(*b) {
                    let other = val(*a);
                    for ((d, s), o) in acc(grads, nodes, *b).iter_mut().zip(g).zip(other) {
                        *d += s * o;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if wants(*x) {
                    acc(grads, nodes, *x)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += scale * s);
                }
            }
            Op::Max(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    for (i, d) in acc(grads, nodes, *a).iter_mut().enumerate() {
                        if va[i] >= vb[i] {
                            *d += g[i];
                        }
                    }
                }
                if wants(*b) {
                    for (i, d) in acc(grads, nodes, *b).iter_mut().enumerate() {
                        if va[i] < vb[i] {
                            *d += g[i];
                        }
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if wants(*x) {
                    let vx = val(*x);
                    for (i, d) in acc(grads, nodes, *x).iter_mut().enumerate() {
                        if vx[i] >= *lo && vx[i] <= *hi {
                            *d += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    for ((d, s), y) in acc(grads, nodes, *x).iter_mut().zip(g).zip(out) {
                        *d += s * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if wants(*x) {
                    for ((d, s), y) in acc(grads, nodes, *x).iter_mut().zip(g).zip(out) {
                        *d += s * (1.0 - y * y);
                    }
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    let vx = val(*x);
                    for ((d, s), xv) in acc(grads, nodes, *x).iter_mut().zip(g).zip(vx) {
                        *d += s / xv;
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    acc(grads, nodes, *x).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    kernels::matmul_backward(
                        va,
                        vb,
                        g,
                        *m,
                        *k,
                        *n,
                        Some(acc(grads, nodes, *a)),
                        None,
                    );
                }
                if wants(*b) {
                    kernels::matmul_backward(
                        va,
                        vb,
                        g,
                        *m,
                        *k,
                        *n,
                        None,
                        Some(acc(grads, nodes, *b)),
                    );
                }
            }
            Op::Conv { x, w, dims } => {
                let (vx, vw) = (val(*x), val(*w));
                match (wants(*x), wants(*w)) {
                    (true, true) => {
                        let mut dx = grads[x.0].take().unwrap_or_else(|| vec![0.0; vx.len()]);
                        kernels::conv2d_backward(
                            vx,
                            vw,
                            g,
                            dims,
                            Some(&mut dx),
                            Some(acc(grads, nodes, *w)),
                        );
                        grads[x.0] = Some(dx);
                    }
                    (true, false) => {
                        kernels::conv2d_backward(vx, vw, g, dims, Some(acc(grads, nodes, *x)), None)
                    }
                    (false, true) => {
                        kernels::conv2d_backward(vx, vw, g, dims, None, Some(acc(grads, nodes, *w)))
                    }
                    (false, false) => {}
                }
            }
            Op::BiasAdd {
                x,
                b,
                outer,
                channels,
                inner,
            } => {
                if wants(*x) {
                    acc(grads, nodes, *x)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
                if wants(*b) {
                    let db = acc(grads, nodes, *b);
                    for o in 0..*outer {
                        for (c, d) in db.iter_mut().enumerate() {
                            let base = (o * channels + c) * inner;
                            *d += g[base..base + inner].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = parts.iter().map(|(_, len)| len).sum();
                let mut offset = 0;
                for (p, len) in parts {
                    if wants(*p) {
                        let dp = acc(grads, nodes, *p);
                        let chunk = len * inner;
                        for o in 0..*outer {
                            let from = (o * total + offset) * inner;
                            for (d, s) in dp[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(&g[from..from + chunk])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice {
                x,
                outer,
                axis_in,
                start,
                len,
                inner,
            } => {
                if wants(*x) {
                    let dx = acc(grads, nodes, *x);
                    let chunk = len * inner;
                    for o in 0..*outer {
                        let to = (o * axis_in + start) * inner;
                        for (d, s) in dx[to..to + chunk]
                            .iter_mut()
                            .zip(&g[o * chunk..(o + 1) * chunk])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    acc(grads, nodes, *x)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Permute { x, map } => {
                if wants(*x) {
                    let dx = acc(grads, nodes, *x);
                    for (o, &i) in map.iter().enumerate() {
                        dx[i] += g[o];
                    }
                }
            }
            Op::AvgPool { x, dims } => {
                if wants(*x) {
                    kernels::avg_pool_backward(g, dims, acc(grads, nodes, *x));
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).unwrap().item().unwrap(), 0.5);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let m = t(&[2, 3], &[1.5, -2.0, 3.0, 0.25, 7.0, -1.0]);
        let x = g.constant(m.clone()).unwrap();
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).unwrap(), &m);
    }

    #[test]
    fn unit_kernel_conv_scales() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3])).unwrap();
        let w = g.constant(t(&[1, 1, 1, 1], &[2.0])).unwrap();
        let y = g.conv2d(x, w, ConvGeom::unit()).unwrap();
        assert_eq!(g.value(y).unwrap(), &Tensor::full(&[1, 1, 3, 3], 2.0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::full(&[2, 3, 4], 0.3)).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.by_name("x").unwrap(), &Tensor::ones(&[2, 3, 4]));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::scalar(0.0)).unwrap();
        let y = g.sigmoid(w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.by_name("w").unwrap().item().unwrap(), 0.25);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::ones(&[2])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_is_lifecycle_error() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::ones(&[2])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Lifecycle(_))));
        assert!(matches!(g.sigmoid(x), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn log_of_zero_is_numeric_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.log(x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn non_finite_leaf_rejected() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones(&[2, 3])).unwrap();
        let b = g.constant(Tensor::ones(&[3, 2])).unwrap();
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3] vs [3, 2]"), "{err}");
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn concat_then_slices_round_trip() {
        let mut g = Graph::new();
        let a = t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[2, 2, 3], &(0..12).map(f64::from).collect::<Vec<_>>());
        let va = g.constant(a.clone()).unwrap();
        let vb = g.constant(b.clone()).unwrap();
        let c = g.concat(&[va, vb], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 3]);
        let ra = g.slice(c, 1, 0, 1).unwrap();
        let rb = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(ra).unwrap(), &a);
        assert_eq!(g.value(rb).unwrap(), &b);
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 6, 4], -1.25)).unwrap();
        let y = g.avg_pool(x, PoolGeom::window(3, 2)).unwrap();
        assert!(g.value(y).unwrap().data().iter().all(|&v| v == -1.25));
        assert_eq!(g.shape(y), &[2, 3, 2, 2]);
    }

    #[test]
    fn strided_padded_conv_matches_loop() {
        // 1 channel, 4x5 input, 3x3 kernel, stride 2, pad 1.
        let xs: Vec<f64> = (0..20).map(|v| v as f64 * 0.1 - 0.7).collect();
        let ws: Vec<f64> = (0..9).map(|v| (v as f64 - 4.0) * 0.3).collect();
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 4, 5], &xs)).unwrap();
        let w = g.constant(t(&[1, 1, 3, 3], &ws)).unwrap();
        let y = g.conv2d(x, w, ConvGeom::new((2, 2), (1, 1))).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 3]);
        let got = g.value(y).unwrap().data().to_vec();
        for oy in 0..2 {
            for ox in 0..3 {
                let mut s = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if (0..4).contains(&iy) && (0..5).contains(&ix) {
                            s += ws[ky * 3 + kx] * xs[(iy * 5 + ix) as usize];
                        }
                    }
                }
                assert!((got[oy * 3 + ox] - s).abs() < 1e-15);
            }
        }
    }
}
