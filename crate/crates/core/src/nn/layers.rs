//! Layer building blocks. Layers hold names and dimensions only; their
//! tensors live in a [`ParamRegistry`] so that masking, optimisation and
//! checkpointing see one flat namespace.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cost::LayerCost;
use super::params::{Bindings, LayerType, ParamRegistry, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Graph, PoolGeom, Tensor, Var};

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite positive std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Initial values for a layer's weight and bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Weight and bias uniform in `+-1/sqrt(fan_in)`.
    Uniform,
    /// Weight normal with std `gain/sqrt(fan_in)`, zero bias.
    Normal { gain: f64 },
}

fn positive(dims: &[usize], what: &str) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::contract(format!(
            "{what}: dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Fc {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Fc {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        positive(&[input, output], name)?;
        let bound = 1.0 / (input as f64).sqrt();
        reg.insert(
            &format!("{name}.weight"),
            uniform(rng, &[input, output], bound),
            LayerType::Fc,
            ParamRole::Weight,
        )?;
        reg.insert(
            &format!("{name}.bias"),
            uniform(rng, &[output], bound),
            LayerType::Fc,
            ParamRole::Bias,
        )?;
        Ok(Fc {
            name: name.to_string(),
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input {
            return Err(Error::shape(
                "fc",
                format!("{} expects [batch, {}], got {s:?}", self.name, self.input),
            ));
        }
        let y = g.matmul(x, b.get(&format!("{}.weight", self.name))?)?;
        g.bias_add(y, b.get(&format!("{}.bias", self.name))?, 1)
    }

    pub fn cost(&self, reg: &ParamRegistry) -> Result<LayerCost> {
        LayerCost::from_params(reg, &self.name, "fc", 2 * self.input * self.output)
    }
}

/// Dense or depthwise 2-D convolution with bias over `[n, c, h, w]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub geom: ConvGeom,
    pub depthwise: bool,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
        depthwise: bool,
    ) -> Result<Self> {
        Self::with_init(
            reg,
            rng,
            name,
            c_in,
            c_out,
            kernel,
            geom,
            depthwise,
            Init::Uniform,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
        depthwise: bool,
        init: Init,
    ) -> Result<Self> {
        positive(
            &[
                c_in,
                c_out,
                kernel.0,
                kernel.1,
                geom.stride.0,
                geom.stride.1,
            ],
            name,
        )?;
        if depthwise && c_in != c_out {
            return Err(Error::contract(format!(
                "{name}: depthwise conv needs c_in == c_out"
            )));
        }
        let per_out = if depthwise { 1 } else { c_in };
        let fan_in = per_out * kernel.0 * kernel.1;
        let wshape = [c_out, per_out, kernel.0, kernel.1];
        let (weight, bias) = match init {
            Init::Uniform => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (uniform(rng, &wshape, bound), uniform(rng, &[c_out], bound))
            }
            Init::Normal { gain } => (
                normal(rng, &wshape, gain / (fan_in as f64).sqrt()),
                Tensor::zeros(&[c_out]),
            ),
        };
        reg.insert(
            &format!("{name}.weight"),
            weight,
            LayerType::Conv,
            ParamRole::Weight,
        )?;
        reg.insert(
            &format!("{name}.bias"),
            bias,
            LayerType::Conv,
            ParamRole::Bias,
        )?;
        Ok(Conv2d {
            name: name.to_string(),
            c_in,
            c_out,
            kernel,
            geom,
            depthwise,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.geom.stride;
        let (ph, pw) = self.geom.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("{}: input {h}x{w} smaller than kernel", self.name),
            ));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.c_in {
            return Err(Error::shape(
                "conv2d",
                format!("{} expects [n, {}, h, w], got {s:?}", self.name, self.c_in),
            ));
        }
        let w = b.get(&format!("{}.weight", self.name))?;
        let y = if self.depthwise {
            g.depthwise_conv2d(x, w, self.geom)?
        } else {
            g.conv2d(x, w, self.geom)?
        };
        g.bias_add(y, b.get(&format!("{}.bias", self.name))?, 1)
    }

    /// FLOPs for one sample at input spatial size `h x w`.
    pub fn cost(&self, reg: &ParamRegistry, h: usize, w: usize) -> Result<LayerCost> {
        let (ho, wo) = self.output_hw(h, w)?;
        let per_out = if self.depthwise { 1 } else { self.c_in };
        let flops = 2 * self.kernel.0 * self.kernel.1 * per_out * self.c_out * ho * wo;
        let kind = if self.depthwise {
            "depthwise_conv2d"
        } else {
            "conv2d"
        };
        LayerCost::from_params(reg, &self.name, kind, flops)
    }
}

/// Inverted residual block: 1x1 expand, ReLU6, 3x3 depthwise, ReLU6,
/// linear 1x1 projection, identity shortcut when shapes allow.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub name: String,
    pub expand: Conv2d,
    pub depthwise: Conv2d,
    pub project: Conv2d,
    pub stride: usize,
}

impl Bottleneck {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        expansion: usize,
        stride: usize,
    ) -> Result<Self> {
        if expansion < 1 {
            return Err(Error::contract(format!(
                "{name}: expansion factor must be >= 1"
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::contract(format!(
                "{name}: bottleneck stride must be 1 or 2, got {stride}"
            )));
        }
        let hidden = c_in * expansion;
        let relu = Init::Normal { gain: 2f64.sqrt() };
        let expand = Conv2d::with_init(
            reg,
            rng,
            &format!("{name}.expand"),
            c_in,
            hidden,
            (1, 1),
            ConvGeom::unit(),
            false,
            relu,
        )?;
        let depthwise = Conv2d::with_init(
            reg,
            rng,
            &format!("{name}.dw"),
            hidden,
            hidden,
            (3, 3),
            ConvGeom::new((stride, stride), (1, 1)),
            true,
            relu,
        )?;
        let project = Conv2d::with_init(
            reg,
            rng,
            &format!("{name}.project"),
            hidden,
            c_out,
            (1, 1),
            ConvGeom::unit(),
            false,
            Init::Normal { gain: 1.0 },
        )?;
        Ok(Bottleneck {
            name: name.to_string(),
            expand,
            depthwise,
            project,
            stride,
        })
    }

    pub fn residual(&self) -> bool {
        self.stride == 1 && self.expand.c_in == self.project.c_out
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let h = self.expand.forward(g, b, x)?;
        let h = g.relu6(h)?;
        let h = self.depthwise.forward(g, b, h)?;
        let h = g.relu6(h)?;
        let y = self.project.forward(g, b, h)?;
        if self.residual() {
            g.add(y, x)
        } else {
            Ok(y)
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.depthwise.output_hw(h, w)
    }

    pub fn costs(&self, reg: &ParamRegistry, h: usize, w: usize) -> Result<Vec<LayerCost>> {
        let (ho, wo) = self.output_hw(h, w)?;
        Ok(vec![
            self.expand.cost(reg, h, w)?,
            self.depthwise.cost(reg, h, w)?,
            self.project.cost(reg, ho, wo)?,
        ])
    }
}

/// Unidirectional LSTM, gate order input, forget, candidate, output.
///
/// `w_ih: [in, 4h]`, `w_hh: [h, 4h]`, one shared bias `[4h]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

/// Everything an LSTM pass produces.
#[derive(Clone, Debug)]
pub struct LstmRun {
    /// `[batch, time, hidden]`
    pub outputs: Var,
    /// `[batch, hidden]` per step.
    pub hidden_states: Vec<Var>,
    pub cell_states: Vec<Var>,
}

impl Lstm {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        positive(&[input, hidden], name)?;
        let bound = 1.0 / (hidden as f64).sqrt();
        reg.insert(
            &format!("{name}.w_ih"),
            uniform(rng, &[input, 4 * hidden], bound),
            LayerType::Lstm,
            ParamRole::Weight,
        )?;
        reg.insert(
            &format!("{name}.w_hh"),
            uniform(rng, &[hidden, 4 * hidden], bound),
            LayerType::Lstm,
            ParamRole::Weight,
        )?;
        reg.insert(
            &format!("{name}.bias"),
            uniform(rng, &[4 * hidden], bound),
            LayerType::Lstm,
            ParamRole::Bias,
        )?;
        Ok(Lstm {
            name: name.to_string(),
            input,
            hidden,
        })
    }

    /// `x: [batch, time, in]` with zero initial state.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        Ok(self.run(g, b, x, None)?.outputs)
    }

    /// Full recurrence with an optional `(h0, c0)`, each `[batch, hidden]`.
    pub fn run(
        &self,
        g: &mut Graph,
        b: &Bindings,
        x: Var,
        init: Option<(Var, Var)>,
    ) -> Result<LstmRun> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.input {
            return Err(Error::shape(
                "lstm",
                format!(
                    "{} expects [batch, time, {}], got {s:?}",
                    self.name, self.input
                ),
            ));
        }
        let (batch, steps, hd) = (s[0], s[1], self.hidden);
        if steps == 0 {
            return Err(Error::contract(format!("{}: empty sequence", self.name)));
        }
        let w_ih = b.get(&format!("{}.w_ih", self.name))?;
        let w_hh = b.get(&format!("{}.w_hh", self.name))?;
        let bias = b.get(&format!("{}.bias", self.name))?;

        // Input projections for all steps in one product.
        let flat = g.reshape(x, &[batch * steps, self.input])?;
        let proj = g.matmul(flat, w_ih)?;
        let proj = g.bias_add(proj, bias, 1)?;
        let proj = g.reshape(proj, &[batch, steps, 4 * hd])?;

        let (mut h, mut c) = match init {
            Some((h0, c0)) => {
                for v in [h0, c0] {
                    if g.shape(v) != [batch, hd] {
                        return Err(Error::shape(
                            "lstm",
                            format!("initial state {:?}, want [{batch}, {hd}]", g.shape(v)),
                        ));
                    }
                }
                (h0, c0)
            }
            None => {
                let z = g.constant(Tensor::zeros(&[batch, hd]))?;
                (z, z)
            }
        };
        let mut hidden_states = Vec::with_capacity(steps);
        let mut cell_states = Vec::with_capacity(steps);
        let mut per_step = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.slice(proj, 1, t, 1)?;
            let xt = g.reshape(xt, &[batch, 4 * hd])?;
            let rec = g.matmul(h, w_hh)?;
            let gates = g.add(xt, rec)?;
            let i = g.slice(gates, 1, 0, hd)?;
            let f = g.slice(gates, 1, hd, hd)?;
            let cand = g.slice(gates, 1, 2 * hd, hd)?;
            let o = g.slice(gates, 1, 3 * hd, hd)?;
            let i = g.sigmoid(i)?;
            let f = g.sigmoid(f)?;
            let cand = g.tanh(cand)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c)?;
            h = g.mul(o, tc)?;
            hidden_states.push(h);
            cell_states.push(c);
            per_step.push(g.reshape(h, &[batch, 1, hd])?);
        }
        let outputs = if per_step.len() == 1 {
            per_step[0]
        } else {
            g.concat(&per_step, 1)?
        };
        Ok(LstmRun {
            outputs,
            hidden_states,
            cell_states,
        })
    }

    /// FLOPs for one sample over `steps` time steps; gate nonlinearities excluded.
    pub fn cost(&self, reg: &ParamRegistry, steps: usize) -> Result<LayerCost> {
        let flops = steps * 2 * 4 * self.hidden * (self.input + self.hidden);
        LayerCost::from_params(reg, &self.name, "lstm", flops)
    }
}

/// Per-channel spatial mean: `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape(
            "global_avg_pool",
            format!("expected [n, c, h, w], got {s:?}"),
        ));
    }
    let y = g.avg_pool(x, PoolGeom::window(s[2], s[3]))?;
    g.reshape(y, &[s[0], s[1]])
}

/// Mean over the time axis: `[n, t, d] -> [n, d]`.
pub fn temporal_mean(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::shape(
            "temporal_mean",
            format!("expected [n, t, d], got {s:?}"),
        ));
    }
    let x4 = g.reshape(x, &[s[0], 1, s[1], s[2]])?;
    let y = g.avg_pool(x4, PoolGeom::window(s[1], 1))?;
    g.reshape(y, &[s[0], s[2]])
}
