//! The registration U-Net: a two-channel `[S, T]` input, an encoder/decoder
//! with skip connections, a linear two-channel head and a final dense warp of
//! `S` by the predicted field.

use deepwarp_core::{Error, Image, Result, WarpField};
use rand::{Rng, RngCore};

use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DROPOUT_RATE: f64 = 0.5;

/// Architecture hyperparameters. Channel widths double per level; the
/// bottleneck has `base_width * 2^depth` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    pub input_size: usize,
    pub depth: usize,
    pub base_width: usize,
}

impl UNetConfig {
    /// 128x128 input, four levels, 64 base channels (1024 at the bottleneck).
    pub const PAPER: UNetConfig = UNetConfig {
        input_size: 128,
        depth: 4,
        base_width: 64,
    };

    /// 64x64 input, three levels, 8 base channels.
    pub const DESK: UNetConfig = UNetConfig {
        input_size: 64,
        depth: 3,
        base_width: 8,
    };

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::PAPER),
            "desk" => Ok(Self::DESK),
            _ => Err(Error::Config(format!("unknown preset '{name}' (paper, desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_width < 2 || self.depth > 16 {
            return Err(Error::Config(format!(
                "depth must be in 1..=16 and base width >= 2, got depth {} width {}",
                self.depth, self.base_width
            )));
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input size {} is not divisible by 2^{} = {div}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Channels at encoder level `l` (1-based); `l == depth + 1` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << (level - 1)
    }

    pub fn bottleneck_width(&self) -> usize {
        self.width(self.depth + 1)
    }

    /// Ordered `(name, shape)` of every weight tensor.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        let mut conv = |name: String, k: usize, ci: usize, co: usize| {
            v.push((format!("{name}.kernel"), vec![k, k, ci, co]));
            v.push((format!("{name}.bias"), vec![co]));
        };
        let mut cin = 2;
        for l in 1..=self.depth {
            let c = self.width(l);
            conv(format!("enc{l}.conv1"), 3, cin, c);
            conv(format!("enc{l}.conv2"), 3, c, c);
            cin = c;
        }
        let cb = self.bottleneck_width();
        conv("bottleneck.conv1".into(), 3, cin, cb);
        conv("bottleneck.conv2".into(), 3, cb, cb);
        let mut cin = cb;
        let mut dec = Vec::new();
        for l in (1..=self.depth).rev() {
            let c = self.width(l);
            dec.push((format!("dec{l}.up.kernel"), vec![cin, 2, 2, c]));
            dec.push((format!("dec{l}.up.bias"), vec![c]));
            dec.push((format!("dec{l}.conv1.kernel"), vec![3, 3, 2 * c, c]));
            dec.push((format!("dec{l}.conv1.bias"), vec![c]));
            dec.push((format!("dec{l}.conv2.kernel"), vec![3, 3, c, c]));
            dec.push((format!("dec{l}.conv2.bias"), vec![c]));
            cin = c;
        }
        v.extend(dec);
        v.push(("head.kernel".into(), vec![1, 1, self.base_width, 2]));
        v.push(("head.bias".into(), vec![2]));
        v
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Channel count of every 3x3 convolution output, in evaluation order.
    pub fn conv_widths(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for l in 1..=self.depth {
            v.extend([self.width(l); 2]);
        }
        v.extend([self.bottleneck_width(); 2]);
        for l in (1..=self.depth).rev() {
            v.extend([self.width(l); 2]);
        }
        v
    }
}

/// Glorot-uniform limit `sqrt(6 / (fan_in + fan_out))`.
fn glorot_limit(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match *shape {
        [k0, k1, ci, co] if k0 == k1 => (k0 * k1 * ci, k0 * k1 * co),
        // transposed kernels are stored [ci, 2, 2, co]
        [ci, a, b, co] => (a * b * ci, a * b * co),
        _ => (1, 1),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel<T> {
    pub config: UNetConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor<T>>,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    /// `[H, W, 2]` field, channels `(phi_i, phi_j)`.
    pub flow: Var,
    /// `[H, W, 1]` warped subject.
    pub warped: Var,
    /// The subject as a `[H, W, 1]` leaf.
    pub subject: Var,
    /// Every 3x3 convolution output (post-activation) with its layer name.
    pub convs: Vec<(String, Var)>,
}

impl<T: Real> UNetModel<T> {
    /// Glorot-uniform kernels, zero biases.
    pub fn build(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (names, params) = config
            .layer_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let lim = glorot_limit(&shape);
                    Tensor::from_fn(&shape, |_| T::of_f64(rng.gen_range(-lim..=lim)))
                };
                (name, t.param())
            })
            .unzip();
        Ok(Self { config, names, params })
    }

    /// Same architecture with every weight set to zero.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let (names, params) = config
            .layer_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape).param()))
            .unzip();
        Ok(Self { config, names, params })
    }

    /// Rebuilds a model from named tensors, checking them against `config`.
    pub fn from_parts(config: UNetConfig, names: Vec<String>, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expect = config.layer_shapes();
        if expect.len() != params.len() || names.len() != params.len() {
            return Err(Error::Format(format!(
                "config expects {} layers, got {}",
                expect.len(),
                params.len()
            )));
        }
        for ((en, es), (n, p)) in expect.iter().zip(names.iter().zip(&params)) {
            if en != n || es != &p.shape {
                return Err(Error::Format(format!(
                    "layer '{n}' {:?} does not match expected '{en}' {es:?}",
                    p.shape
                )));
            }
        }
        let params = params.into_iter().map(Tensor::param).collect();
        Ok(Self { config, names, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cast<U: Real>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config,
            names: self.names.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    let mut t = Tensor::new(&p.shape, p.data.iter().map(|v| U::of_f64(v.as_f64())).collect()).unwrap();
                    t.requires_grad = p.requires_grad;
                    t
                })
                .collect(),
        }
    }

    /// Records the forward pass on `g`, which must be built over `self.params`.
    /// Dropout is active only when `dropout` carries a random source.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        s: &Image<T>,
        t: &Image<T>,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<ForwardVars> {
        record_forward(&self.config, g, s, t, dropout)
    }

    /// Predicts the field for `(s, t)` and warps `s` with it. Dropout is
    /// applied only when a random source is given.
    pub fn forward_register(
        &self,
        s: &Image<T>,
        t: &Image<T>,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(WarpField<T>, Image<T>)> {
        let mut g = Graph::new(&self.params);
        let fv = self.forward(&mut g, s, t, dropout)?;
        let n = self.config.input_size;
        let flow = g.value(fv.flow);
        let phi_i = flow.iter().step_by(2).copied().collect();
        let phi_j = flow.iter().skip(1).step_by(2).copied().collect();
        let field = WarpField::from_parts(n, n, phi_i, phi_j)?;
        let warped = Image::from_vec(n, n, g.value(fv.warped).to_vec())?;
        Ok((field, warped))
    }
}

/// Records the architecture of `cfg` on a graph whose parameters are laid out
/// as in [`UNetConfig::layer_shapes`].
pub fn record_forward<T: Real>(
    cfg: &UNetConfig,
    g: &mut Graph<'_, T>,
    s: &Image<T>,
    t: &Image<T>,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<ForwardVars> {
    s.ensure_same_shape(t, "subject/template")?;
    let n = cfg.input_size;
    if s.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "model expects {n}x{n} images, got {}x{}",
            s.height(),
            s.width()
        )));
    }
    let input = g.input(Tensor::stack(&[s, t])?);
    let subject = g.input(Tensor::new(&[n, n, 1], s.data().to_vec())?);
    let mut next = 0;
    let mut take = |g: &mut Graph<'_, T>| {
        let k = g.param(next);
        let b = g.param(next + 1);
        next += 2;
        (k, b)
    };
    let mut convs = Vec::new();
    let mut conv3 = |g: &mut Graph<'_, T>, x: Var, name: String, kb: (Var, Var)| -> Result<Var> {
        let y = g.conv2d(x, kb.0, kb.1)?;
        let y = g.tanh(y);
        convs.push((name, y));
        Ok(y)
    };

    let mut skips = Vec::new();
    let mut x = input;
    for l in 1..=cfg.depth {
        let kb = take(g);
        x = conv3(g, x, format!("enc{l}.conv1"), kb)?;
        let kb = take(g);
        x = conv3(g, x, format!("enc{l}.conv2"), kb)?;
        skips.push(x);
        let d = g.dropout(x, DROPOUT_RATE, dropout.as_deref_mut())?;
        x = g.maxpool2(d)?;
    }
    let kb = take(g);
    x = conv3(g, x, "bottleneck.conv1".into(), kb)?;
    let kb = take(g);
    x = conv3(g, x, "bottleneck.conv2".into(), kb)?;
    for l in (1..=cfg.depth).rev() {
        let (k, b) = take(g);
        let up = g.conv_transpose2(x, k, b)?;
        x = g.concat(up, skips[l - 1])?;
        let kb = take(g);
        x = conv3(g, x, format!("dec{l}.conv1"), kb)?;
        let kb = take(g);
        x = conv3(g, x, format!("dec{l}.conv2"), kb)?;
    }
    let (k, b) = take(g);
    let flow = g.conv2d(x, k, b)?;
    let warped = g.dense_warp(subject, flow)?;
    Ok(ForwardVars {
        flow,
        warped,
        subject,
        convs,
    })
}
