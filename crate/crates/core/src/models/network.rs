//! The lip encoder and the shared conv/LSTM/FC classifier back end.

use rand_chacha::ChaCha8Rng;

use super::topology::{BackendConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::features::LIP_SIZE;
use crate::nn::{
    global_avg_pool, temporal_mean, Bindings, Bottleneck, Conv2d, Fc, Init, LayerCost, Lstm,
    ParamRegistry,
};
use crate::tensor::{ConvGeom, Graph, PoolGeom, Tensor, Var};

fn conv_out(len: usize, stride: usize) -> usize {
    // 3-wide kernel, padding 1.
    (len - 1) / stride + 1
}

/// Two 3x3 convolutions, an LSTM, temporal mean pooling, two FC layers and
/// a sigmoid head. Input `[batch, time, width]`, output `[batch, 1]`.
#[derive(Clone, Debug)]
pub struct Backend {
    pub prefix: String,
    pub steps: usize,
    pub width: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    lstm: Lstm,
    fc1: Fc,
    fc2: Fc,
}

impl Backend {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        steps: usize,
        width: usize,
        cfg: &BackendConfig,
    ) -> Result<Self> {
        let [c1, c2] = cfg.conv_channels;
        let sf = cfg.conv_stride.1;
        let geom = ConvGeom::new(cfg.conv_stride, (1, 1));
        let conv1 = Conv2d::new(
            reg,
            rng,
            &format!("{prefix}.conv1"),
            1,
            c1,
            (3, 3),
            geom,
            false,
        )?;
        let conv2 = Conv2d::new(
            reg,
            rng,
            &format!("{prefix}.conv2"),
            c1,
            c2,
            (3, 3),
            geom,
            false,
        )?;
        let feat = conv_out(conv_out(width, sf), sf);
        let lstm = Lstm::new(
            reg,
            rng,
            &format!("{prefix}.lstm"),
            c2 * feat,
            cfg.lstm_hidden,
        )?;
        let fc1 = Fc::new(
            reg,
            rng,
            &format!("{prefix}.fc1"),
            cfg.lstm_hidden,
            cfg.fc_hidden,
        )?;
        let fc2 = Fc::new(reg, rng, &format!("{prefix}.fc2"), cfg.fc_hidden, 1)?;
        Ok(Backend {
            prefix: prefix.to_string(),
            steps,
            width,
            conv1,
            conv2,
            lstm,
            fc1,
            fc2,
        })
    }

    /// Sigmoid scores `[batch, 1]`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.width || s[1] != self.steps {
            return Err(Error::shape(
                "backend",
                format!(
                    "{} expects [batch, {}, {}], got {s:?}",
                    self.prefix, self.steps, self.width
                ),
            ));
        }
        let n = s[0];
        let x = g.reshape(x, &[n, 1, s[1], s[2]])?;
        let h = self.conv1.forward(g, b, x)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, b, h)?;
        let h = g.relu(h)?;
        let hs = g.shape(h).to_vec();
        let (c, t, f) = (hs[1], hs[2], hs[3]);
        let h = g.permute(h, &[0, 2, 1, 3])?;
        let h = g.reshape(h, &[n, t, c * f])?;
        let h = self.lstm.forward(g, b, h)?;
        let h = temporal_mean(g, h)?;
        let h = self.fc1.forward(g, b, h)?;
        let h = g.relu(h)?;
        let logit = self.fc2.forward(g, b, h)?;
        g.sigmoid(logit)
    }

    pub fn costs(&self, reg: &ParamRegistry) -> Result<Vec<LayerCost>> {
        let (h1, w1) = self.conv1.output_hw(self.steps, self.width)?;
        let (h2, _) = self.conv2.output_hw(h1, w1)?;
        Ok(vec![
            self.conv1.cost(reg, self.steps, self.width)?,
            self.conv2.cost(reg, h1, w1)?,
            self.lstm.cost(reg, h2)?,
            self.fc1.cost(reg)?,
            self.fc2.cost(reg)?,
        ])
    }
}

/// MobileNetV2-style lip encoder: fixed input pooling, stem convolution,
/// inverted-residual blocks, 1x1 head and global average pooling.
/// Input `[frames, 1, 88, 88]`, output `[frames, embed_dim]`.
#[derive(Clone, Debug)]
pub struct LipEncoder {
    pub prefix: String,
    pub embed_dim: usize,
    input_pool: usize,
    stem: Conv2d,
    blocks: Vec<Bottleneck>,
    head: Conv2d,
}

impl LipEncoder {
    pub fn new(
        reg: &mut ParamRegistry,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        if cfg.input_pool == 0 || LIP_SIZE % cfg.input_pool != 0 {
            return Err(Error::Config(format!(
                "input pool {} must divide {LIP_SIZE}",
                cfg.input_pool
            )));
        }
        let relu = Init::Normal { gain: 2f64.sqrt() };
        let stem = Conv2d::with_init(
            reg,
            rng,
            &format!("{prefix}.stem"),
            1,
            cfg.stem_channels,
            (3, 3),
            ConvGeom::new((cfg.stem_stride, cfg.stem_stride), (1, 1)),
            false,
            relu,
        )?;
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        let mut c = cfg.stem_channels;
        for (i, spec) in cfg.blocks.iter().enumerate() {
            let name = format!("{prefix}.b{:02}", i + 1);
            blocks.push(Bottleneck::new(
                reg,
                rng,
                &name,
                c,
                spec.channels,
                spec.expansion,
                spec.stride,
            )?);
            c = spec.channels;
        }
        let head = Conv2d::with_init(
            reg,
            rng,
            &format!("{prefix}.head"),
            c,
            cfg.embed_dim,
            (1, 1),
            ConvGeom::unit(),
            false,
            relu,
        )?;
        Ok(LipEncoder {
            prefix: prefix.to_string(),
            embed_dim: cfg.embed_dim,
            input_pool: cfg.input_pool,
            stem,
            blocks,
            head,
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Side length of frames after the fixed input pool.
    pub fn pooled_size(&self) -> usize {
        LIP_SIZE / self.input_pool
    }

    /// Accepts `[frames, 1, 88, 88]` or frames already reduced by
    /// [`pool_frames`] to `[frames, 1, pooled, pooled]`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, frames: Var) -> Result<Var> {
        let s = g.shape(frames).to_vec();
        let side = if s.len() == 4 { s[2] } else { 0 };
        let sizes_ok = side == LIP_SIZE || side == self.pooled_size();
        if s.len() != 4 || s[1] != 1 || s[3] != side || !sizes_ok {
            return Err(Error::shape(
                "lip_encoder",
                format!(
                    "expects [frames, 1, {LIP_SIZE}, {LIP_SIZE}] or [frames, 1, {p}, {p}], got {s:?}",
                    p = self.pooled_size()
                ),
            ));
        }
        let mut h = if self.input_pool > 1 && side == LIP_SIZE {
            g.avg_pool(frames, PoolGeom::window(self.input_pool, self.input_pool))?
        } else {
            frames
        };
        h = self.stem.forward(g, b, h)?;
        h = g.relu6(h)?;
        for block in &self.blocks {
            h = block.forward(g, b, h)?;
        }
        h = self.head.forward(g, b, h)?;
        h = g.relu6(h)?;
        global_avg_pool(g, h)
    }

    pub fn costs(&self, reg: &ParamRegistry) -> Result<Vec<LayerCost>> {
        let side = LIP_SIZE / self.input_pool;
        let mut out = vec![self.stem.cost(reg, side, side)?];
        let (mut h, mut w) = self.stem.output_hw(side, side)?;
        for block in &self.blocks {
            out.extend(block.costs(reg, h, w)?);
            (h, w) = block.output_hw(h, w)?;
        }
        out.push(self.head.cost(reg, h, w)?);
        Ok(out)
    }
}

/// Applies the encoder's parameter-free input pool to `[.., 88, 88]` data,
/// producing what [`LipEncoder::forward`] would compute first.
pub fn pool_frames(frames: &Tensor, pool: usize) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() < 2 || s[s.len() - 1] != LIP_SIZE || s[s.len() - 2] != LIP_SIZE {
        return Err(Error::shape(
            "pool_frames",
            format!("expects [.., {LIP_SIZE}, {LIP_SIZE}], got {s:?}"),
        ));
    }
    if pool == 0 || LIP_SIZE % pool != 0 {
        return Err(Error::Config(format!(
            "input pool {pool} must divide {LIP_SIZE}"
        )));
    }
    let side = LIP_SIZE / pool;
    let planes = frames.len() / (LIP_SIZE * LIP_SIZE);
    let inv = 1.0 / (pool * pool) as f64;
    let mut out = Vec::with_capacity(planes * side * side);
    for plane in frames.data().chunks_exact(LIP_SIZE * LIP_SIZE) {
        for oy in 0..side {
            for ox in 0..side {
                let mut acc = 0.0;
                for dy in 0..pool {
                    let row = &plane[(oy * pool + dy) * LIP_SIZE + ox * pool..];
                    acc += row[..pool].iter().sum::<f64>();
                }
                out.push(acc * inv);
            }
        }
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape[n - 2] = side;
    shape[n - 1] = side;
    Tensor::new(shape, out)
}
