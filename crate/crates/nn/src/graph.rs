//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are stored in
//! creation order, which is a topological order, so [`Graph::backward`] is a
//! single reverse sweep. Parameters are borrowed from the caller and are never
//! copied onto the tape.

use deepwarp_core::{Error, Result};
use rand::Rng;

use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(usize),
    Conv2d { x: Var, k: Var, b: Var, ksize: usize },
    ConvT2 { x: Var, k: Var, b: Var },
    MaxPool2 { x: Var, arg: Vec<u32> },
    Dropout { x: Var, mask: Vec<T> },
    Tanh { x: Var },
    Concat { a: Var, b: Var },
    DenseWarp { src: Var, flow: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, c: T },
    Shift { x: Var },
    Filter { x: Var, taps: Vec<f64> },
    Mean { x: Var },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Parameter gradients produced by [`Graph::backward`], indexed like the
/// parameter slice the graph was built over.
pub struct Gradients<T> {
    pub params: Vec<Option<Vec<T>>>,
}

pub struct Graph<'p, T> {
    params: &'p [Tensor<T>],
    nodes: Vec<Node<T>>,
}

fn hwc(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::Dimension(format!("{what}: expected [H, W, C], got {shape:?}"))),
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i].data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies a node's value out as a tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).unwrap()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t.shape, t.data, Op::Input, false)
    }

    /// Leaf bound to parameter `i`; receives a gradient when it is trainable.
    pub fn param(&mut self, i: usize) -> Var {
        let p = &self.params[i];
        self.push(p.shape.clone(), Vec::new(), Op::Param(i), p.requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (h, w, ci) = hwc(self.shape(x), "conv2d input")?;
        let (ksize, co) = match *self.shape(k) {
            [k0, k1, kc, co] if k0 == k1 && k0 % 2 == 1 && kc == ci => (k0, co),
            ref s => {
                return Err(Error::Dimension(format!(
                    "conv2d kernel {s:?} incompatible with {ci} input channels (need [k, k, {ci}, co], k odd)"
                )))
            }
        };
        if self.shape(b) != [co] {
            return Err(Error::Dimension(format!("conv2d bias {:?}, expected [{co}]", self.shape(b))));
        }
        let out = kernels::conv2d(self.value(x), (h, w, ci), self.value(k), ksize, co, self.value(b));
        let ng = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(vec![h, w, co], out, Op::Conv2d { x, k, b, ksize }, ng))
    }

    /// Kernel layout `[ci, 2, 2, co]`.
    pub fn conv_transpose2(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (h, w, ci) = hwc(self.shape(x), "conv_transpose2 input")?;
        let co = match *self.shape(k) {
            [kc, 2, 2, co] if kc == ci => co,
            ref s => {
                return Err(Error::Dimension(format!(
                    "transposed conv kernel {s:?} incompatible with {ci} input channels (need [{ci}, 2, 2, co])"
                )))
            }
        };
        if self.shape(b) != [co] {
            return Err(Error::Dimension(format!("transposed conv bias {:?}, expected [{co}]", self.shape(b))));
        }
        let out = kernels::conv_transpose2(self.value(x), (h, w, ci), self.value(k), co, self.value(b));
        let ng = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(vec![2 * h, 2 * w, co], out, Op::ConvT2 { x, k, b }, ng))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(self.shape(x), "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!("maxpool2 needs even dims, got {h}x{w}")));
        }
        let (out, arg) = kernels::maxpool2(self.value(x), (h, w, c));
        let ng = self.needs(x);
        Ok(self.push(vec![h / 2, w / 2, c], out, Op::MaxPool2 { x, arg }, ng))
    }

    /// Inverted dropout. With `rng == None` (inference) or `rate == 0` the
    /// input handle is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = T::of_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape, out, Op::Dropout { x, mask }, ng))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(shape, out, Op::Tanh { x }, ng)
    }

    /// Channel concatenation of two `[H, W, *]` maps.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (h, w, ca) = hwc(self.shape(a), "concat")?;
        let (hb, wb, cb) = hwc(self.shape(b), "concat")?;
        if (h, w) != (hb, wb) {
            return Err(Error::Dimension(format!("concat spatial dims {h}x{w} vs {hb}x{wb}")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(h * w * (ca + cb));
        for p in 0..h * w {
            out.extend_from_slice(&va[p * ca..(p + 1) * ca]);
            out.extend_from_slice(&vb[p * cb..(p + 1) * cb]);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![h, w, ca + cb], out, Op::Concat { a, b }, ng))
    }

    /// Bilinear backward warp of a `[H, W, 1]` source by a `[H, W, 2]` flow
    /// whose channels are `(phi_i, phi_j)`.
    pub fn dense_warp(&mut self, src: Var, flow: Var) -> Result<Var> {
        let (h, w, c) = hwc(self.shape(src), "dense_warp source")?;
        if c != 1 || self.shape(flow) != [h, w, 2] {
            return Err(Error::Dimension(format!(
                "dense_warp needs source [H, W, 1] and flow [H, W, 2], got {:?} and {:?}",
                self.shape(src),
                self.shape(flow)
            )));
        }
        let out = kernels::dense_warp(self.value(src), self.value(flow), h, w);
        let ng = self.needs(src) || self.needs(flow);
        Ok(self.push(vec![h, w, 1], out, Op::DenseWarp { src, flow }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div { a, b })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(shape, out, Op::Scale { x, c }, ng)
    }

    /// `x + c`.
    pub fn shift(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(shape, out, Op::Shift { x }, ng)
    }

    /// Valid-mode separable filter applied per channel.
    pub fn filter_valid(&mut self, x: Var, taps: &[f64]) -> Result<Var> {
        let (h, w, c) = hwc(self.shape(x), "filter_valid")?;
        let k = taps.len();
        if k == 0 || k > h || k > w {
            return Err(Error::Dimension(format!("filter of {k} taps on {h}x{w}")));
        }
        let out = kernels::filter_valid(self.value(x), (h, w, c), taps);
        let ng = self.needs(x);
        Ok(self.push(
            vec![h + 1 - k, w + 1 - k, c],
            out,
            Op::Filter { x, taps: taps.to_vec() },
            ng,
        ))
    }

    /// Mean of all elements, accumulated in `f64`. Result shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().map(|a| a.as_f64()).sum::<f64>() / v.len() as f64;
        let ng = self.needs(x);
        self.push(vec![1], vec![T::of_f64(m)], Op::Mean { x }, ng)
    }

    /// Reverse sweep from the scalar node `root`, seeded with gradient 1.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut out = Gradients {
            params: (0..self.params.len()).map(|_| None).collect(),
        };
        grads[root.0] = Some(vec![T::one()]);

        fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
            match &mut grads[v.0] {
                Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(i) => match &mut out.params[*i] {
                    Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                    slot => *slot = Some(g),
                },
                &Op::Conv2d { x, k, b, ksize } => {
                    let dims = hwc(self.shape(x), "").unwrap();
                    let co = *self.shape(b).first().unwrap();
                    let cg = kernels::conv2d_backward(
                        self.value(x),
                        dims,
                        self.value(k),
                        ksize,
                        co,
                        &g,
                        self.needs(x),
                    );
                    if let Some(dx) = cg.input {
                        acc(&mut grads, x, dx);
                    }
                    if self.needs(k) {
                        acc(&mut grads, k, cg.kernel);
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, cg.bias);
                    }
                }
                &Op::ConvT2 { x, k, b } => {
                    let dims = hwc(self.shape(x), "").unwrap();
                    let co = *self.shape(b).first().unwrap();
                    let cg = kernels::conv_transpose2_backward(
                        self.value(x),
                        dims,
                        self.value(k),
                        co,
                        &g,
                        self.needs(x),
                    );
                    if let Some(dx) = cg.input {
                        acc(&mut grads, x, dx);
                    }
                    if self.needs(k) {
                        acc(&mut grads, k, cg.kernel);
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, cg.bias);
                    }
                }
                Op::MaxPool2 { x, arg } => {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (&k, &gv) in arg.iter().zip(&g) {
                        dx[k as usize] += gv;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    acc(&mut grads, *x, dx);
                }
                &Op::Tanh { x } => {
                    let y = &node.value;
                    let dx = g.iter().zip(y).map(|(&a, &t)| a * (T::one() - t * t)).collect();
                    acc(&mut grads, x, dx);
                }
                &Op::Concat { a, b } => {
                    let ca = *self.shape(a).last().unwrap();
                    let cb = *self.shape(b).last().unwrap();
                    let c = ca + cb;
                    if self.needs(a) {
                        let da = g.chunks_exact(c).flat_map(|px| px[..ca].iter().copied()).collect();
                        acc(&mut grads, a, da);
                    }
                    if self.needs(b) {
                        let db = g.chunks_exact(c).flat_map(|px| px[ca..].iter().copied()).collect();
                        acc(&mut grads, b, db);
                    }
                }
                &Op::DenseWarp { src, flow } => {
                    let (h, w, _) = hwc(self.shape(src), "").unwrap();
                    let (ds, df) = kernels::dense_warp_backward(self.value(src), self.value(flow), h, w, &g);
                    if self.needs(src) {
                        acc(&mut grads, src, ds);
                    }
                    if self.needs(flow) {
                        acc(&mut grads, flow, df);
                    }
                }
                &Op::Add { a, b } => {
                    if self.needs(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, g);
                    }
                }
                &Op::Sub { a, b } => {
                    if self.needs(b) {
                        acc(&mut grads, b, g.iter().map(|&v| -v).collect());
                    }
                    if self.needs(a) {
                        acc(&mut grads, a, g);
                    }
                }
                &Op::Mul { a, b } => {
                    let (va, vb) = (self.value(a), self.value(b));
                    if self.needs(a) {
                        acc(&mut grads, a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                    }
                }
                &Op::Div { a, b } => {
                    let vb = self.value(b);
                    if self.needs(a) {
                        acc(&mut grads, a, g.iter().zip(vb).map(|(&d, &y)| d / y).collect());
                    }
                    if self.needs(b) {
                        let q = &node.value;
                        let db = g.iter().zip(q).zip(vb).map(|((&d, &q), &y)| -d * q / y).collect();
                        acc(&mut grads, b, db);
                    }
                }
                &Op::Scale { x, c } => acc(&mut grads, x, g.iter().map(|&v| v * c).collect()),
                &Op::Shift { x } => acc(&mut grads, x, g),
                Op::Filter { x, taps } => {
                    let dims = hwc(self.shape(*x), "").unwrap();
                    acc(&mut grads, *x, kernels::filter_valid_backward(&g, dims, taps));
                }
                &Op::Mean { x } => {
                    let n = self.value(x).len();
                    let v = g[0] / T::from_usize(n).unwrap();
                    acc(&mut grads, x, vec![v; n]);
                }
            }
        }
        out
    }
}
