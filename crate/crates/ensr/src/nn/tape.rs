//! Eager reverse-mode autodiff over a growing tape.
//!
//! Every operation appends a node holding its result, so the tape is
//! already in topological order and a backward sweep is a single
//! reverse walk. Crucially, backward passes build their vector-Jacobian
//! products *as new tape nodes*, which makes gradients themselves
//! differentiable — the gradient penalty below needs exactly that
//! (a loss defined on the gradient of the critic w.r.t. its input).
//!
//! The primitive set is deliberately small and closed under
//! differentiation. Convolution comes as a triple — forward, gradient
//! w.r.t. input, gradient w.r.t. weights — linked by the adjoint
//! identity <conv(x,w), y> = <x, grad_input(y,w)> = <w, grad_weight(x,y)>,
//! from which each member's vjp is again a member of the triple.

use super::tensor::Tensor;
use std::cell::RefCell;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

// Some variants carry target shapes that backward re-derives from the
// node values; they stay on the op so a Debug dump of the tape reads
// as a complete program.
#[allow(dead_code)]
#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Recip(Var),
    Sqrt(Var),
    Lrelu(Var, f64),
    MulConst(Var, Rc<Tensor>),
    SumAll(Var),
    BroadcastAll(Var),
    SumC(Var),
    ExpandC(Var, usize),
    SumBhw(Var),
    BcastBhw(Var, usize, usize, usize),
    SumHw(Var),
    ExpandHw(Var, usize, usize),
    ConcatC(Vec<Var>),
    SliceC(Var, usize, usize),
    EmbedC(Var, usize, usize),
    Pad2(Var, usize),
    Crop2(Var, usize),
    Reshape(Var),
    Conv { x: Var, w: Var, stride: usize },
    ConvGradInput { gy: Var, w: Var, stride: usize },
    ConvGradWeight { x: Var, gy: Var, stride: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints produced by one backward sweep: maps forward vars to the
/// vars holding their gradients (absent = structurally zero).
pub struct Grads {
    map: Vec<Option<Var>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<Var> {
        self.map.get(v.0).copied().flatten()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = self.with_value(a, |x| {
            self.with_value(b, |y| {
                assert_eq!(x.shape(), y.shape(), "add shape mismatch");
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
                Tensor::new(x.shape().to_vec(), data).unwrap()
            })
        });
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = self.with_value(a, |x| {
            self.with_value(b, |y| {
                assert_eq!(x.shape(), y.shape(), "sub shape mismatch");
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
                Tensor::new(x.shape().to_vec(), data).unwrap()
            })
        });
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = self.with_value(a, |x| {
            self.with_value(b, |y| {
                assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                Tensor::new(x.shape().to_vec(), data).unwrap()
            })
        });
        self.push(Op::Mul(a, b), v)
    }

    pub fn neg(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| x.map(|p| -p));
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.with_value(a, |x| x.map(|p| p * c));
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.with_value(a, |x| x.map(|p| p + c));
        self.push(Op::AddScalar(a, c), v)
    }

    pub fn recip(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| x.map(|p| 1.0 / p));
        self.push(Op::Recip(a), v)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| x.map(f64::sqrt));
        self.push(Op::Sqrt(a), v)
    }

    pub fn lrelu(&self, a: Var, slope: f64) -> Var {
        let v = self.with_value(a, |x| x.map(|p| if p > 0.0 { p } else { slope * p }));
        self.push(Op::Lrelu(a, slope), v)
    }

    /// Elementwise product with a constant (non-differentiated) tensor.
    pub fn mul_const(&self, a: Var, m: Rc<Tensor>) -> Var {
        let v = self.with_value(a, |x| {
            assert_eq!(x.shape(), m.shape(), "mul_const shape mismatch");
            let data = x.data().iter().zip(m.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        });
        self.push(Op::MulConst(a, m), v)
    }

    // ---- reductions and broadcasts ----

    pub fn sum_all(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| Tensor::scalar(x.data().iter().sum()));
        self.push(Op::SumAll(a), v)
    }

    pub fn broadcast_all(&self, a: Var, shape: &[usize]) -> Var {
        let v = self.with_value(a, |x| {
            assert_eq!(x.numel(), 1, "broadcast_all needs a scalar");
            Tensor::full(shape, x.data()[0])
        });
        self.push(Op::BroadcastAll(a), v)
    }

    /// (B,C,H,W) -> (B,1,H,W), summing channels.
    pub fn sum_c(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h, w) = x.dims4().expect("sum_c input");
            let hw = h * w;
            let mut out = vec![0.0; b * hw];
            for bi in 0..b {
                for ci in 0..c {
                    let src = &x.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    let dst = &mut out[bi * hw..(bi + 1) * hw];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Tensor::new(vec![b, 1, h, w], out).unwrap()
        });
        self.push(Op::SumC(a), v)
    }

    /// (B,1,H,W) -> (B,C,H,W), repeating the single channel.
    pub fn expand_c(&self, a: Var, c: usize) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c1, h, w) = x.dims4().expect("expand_c input");
            assert_eq!(c1, 1, "expand_c needs a single channel");
            let hw = h * w;
            let mut out = vec![0.0; b * c * hw];
            for bi in 0..b {
                let src = &x.data()[bi * hw..(bi + 1) * hw];
                for ci in 0..c {
                    out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].copy_from_slice(src);
                }
            }
            Tensor::new(vec![b, c, h, w], out).unwrap()
        });
        self.push(Op::ExpandC(a, c), v)
    }

    /// (B,C,H,W) -> (C,), summing batch and space. Adjoint of a
    /// per-channel parameter broadcast (bias gradients).
    pub fn sum_bhw(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h, w) = x.dims4().expect("sum_bhw input");
            let hw = h * w;
            let mut out = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let src = &x.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    out[ci] += src.iter().sum::<f64>();
                }
            }
            Tensor::new(vec![c], out).unwrap()
        });
        self.push(Op::SumBhw(a), v)
    }

    /// (C,) -> (B,C,H,W): per-channel value at every (batch, position).
    pub fn bcast_bhw(&self, a: Var, b: usize, h: usize, w: usize) -> Var {
        let v = self.with_value(a, |x| {
            assert_eq!(x.shape().len(), 1, "bcast_bhw needs a vector");
            let c = x.shape()[0];
            let hw = h * w;
            let mut out = vec![0.0; b * c * hw];
            for bi in 0..b {
                for ci in 0..c {
                    out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].fill(x.data()[ci]);
                }
            }
            Tensor::new(vec![b, c, h, w], out).unwrap()
        });
        self.push(Op::BcastBhw(a, b, h, w), v)
    }

    /// (B,C,H,W) -> (B,C,1,1), summing space.
    pub fn sum_hw(&self, a: Var) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h, w) = x.dims4().expect("sum_hw input");
            let hw = h * w;
            let mut out = vec![0.0; b * c];
            for i in 0..b * c {
                out[i] = x.data()[i * hw..(i + 1) * hw].iter().sum();
            }
            Tensor::new(vec![b, c, 1, 1], out).unwrap()
        });
        self.push(Op::SumHw(a), v)
    }

    /// (B,C,1,1) -> (B,C,H,W).
    pub fn expand_hw(&self, a: Var, h: usize, w: usize) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h1, w1) = x.dims4().expect("expand_hw input");
            assert_eq!((h1, w1), (1, 1), "expand_hw needs 1x1 input");
            let hw = h * w;
            let mut out = vec![0.0; b * c * hw];
            for i in 0..b * c {
                out[i * hw..(i + 1) * hw].fill(x.data()[i]);
            }
            Tensor::new(vec![b, c, h, w], out).unwrap()
        });
        self.push(Op::ExpandHw(a, h, w), v)
    }

    // ---- structure ----

    pub fn concat_c(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let shapes: Vec<(usize, usize, usize, usize)> = parts
            .iter()
            .map(|&p| self.with_value(p, |x| x.dims4().expect("concat_c input")))
            .collect();
        let (b, _, h, w) = shapes[0];
        let ctot: usize = shapes
            .iter()
            .map(|&(b2, c, h2, w2)| {
                assert_eq!((b2, h2, w2), (b, h, w), "concat_c frame mismatch");
                c
            })
            .sum();
        let hw = h * w;
        let mut out = vec![0.0; b * ctot * hw];
        for bi in 0..b {
            let mut coff = 0usize;
            for (pi, &p) in parts.iter().enumerate() {
                let c = shapes[pi].1;
                self.with_value(p, |x| {
                    let src = &x.data()[bi * c * hw..(bi + 1) * c * hw];
                    out[(bi * ctot + coff) * hw..(bi * ctot + coff + c) * hw]
                        .copy_from_slice(src);
                });
                coff += c;
            }
        }
        self.push(
            Op::ConcatC(parts.to_vec()),
            Tensor::new(vec![b, ctot, h, w], out).unwrap(),
        )
    }

    pub fn slice_c(&self, a: Var, start: usize, len: usize) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h, w) = x.dims4().expect("slice_c input");
            assert!(start + len <= c, "slice_c range out of bounds");
            let hw = h * w;
            let mut out = vec![0.0; b * len * hw];
            for bi in 0..b {
                let src = &x.data()[(bi * c + start) * hw..(bi * c + start + len) * hw];
                out[bi * len * hw..(bi + 1) * len * hw].copy_from_slice(src);
            }
            Tensor::new(vec![b, len, h, w], out).unwrap()
        });
        self.push(Op::SliceC(a, start, len), v)
    }

    /// Embeds channels into a wider zero tensor at channel `start`.
    pub fn embed_c(&self, a: Var, start: usize, total: usize) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h, w) = x.dims4().expect("embed_c input");
            assert!(start + c <= total, "embed_c range out of bounds");
            let hw = h * w;
            let mut out = vec![0.0; b * total * hw];
            for bi in 0..b {
                let src = &x.data()[bi * c * hw..(bi + 1) * c * hw];
                out[(bi * total + start) * hw..(bi * total + start + c) * hw]
                    .copy_from_slice(src);
            }
            Tensor::new(vec![b, total, h, w], out).unwrap()
        });
        self.push(Op::EmbedC(a, start, total), v)
    }

    pub fn pad2(&self, a: Var, p: usize) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, h, w) = x.dims4().expect("pad2 input");
            let (hp, wp) = (h + 2 * p, w + 2 * p);
            let mut out = vec![0.0; b * c * hp * wp];
            for i in 0..b * c {
                for y in 0..h {
                    let src = &x.data()[(i * h + y) * w..(i * h + y + 1) * w];
                    let dst = (i * hp + y + p) * wp + p;
                    out[dst..dst + w].copy_from_slice(src);
                }
            }
            Tensor::new(vec![b, c, hp, wp], out).unwrap()
        });
        self.push(Op::Pad2(a, p), v)
    }

    pub fn crop2(&self, a: Var, p: usize) -> Var {
        let v = self.with_value(a, |x| {
            let (b, c, hp, wp) = x.dims4().expect("crop2 input");
            assert!(hp > 2 * p && wp > 2 * p, "crop2 would remove everything");
            let (h, w) = (hp - 2 * p, wp - 2 * p);
            let mut out = vec![0.0; b * c * h * w];
            for i in 0..b * c {
                for y in 0..h {
                    let src = (i * hp + y + p) * wp + p;
                    out[(i * h + y) * w..(i * h + y + 1) * w]
                        .copy_from_slice(&x.data()[src..src + w]);
                }
            }
            Tensor::new(vec![b, c, h, w], out).unwrap()
        });
        self.push(Op::Crop2(a, p), v)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let v = self.with_value(a, |x| {
            Tensor::new(shape.to_vec(), x.data().to_vec()).expect("reshape numel mismatch")
        });
        self.push(Op::Reshape(a), v)
    }

    // ---- convolution triple ----

    /// Valid cross-correlation, NCHW by (out, in, k, k), given stride.
    pub fn conv(&self, x: Var, w: Var, stride: usize) -> Var {
        let v = self.with_value(x, |xt| {
            self.with_value(w, |wt| conv_forward(xt, wt, stride))
        });
        self.push(Op::Conv { x, w, stride }, v)
    }

    /// Adjoint of [`Tape::conv`] in its input slot; `(h, w)` are the
    /// spatial dims of the input being reconstructed.
    pub fn conv_grad_input(&self, gy: Var, w: Var, stride: usize, h: usize, wd: usize) -> Var {
        let v = self.with_value(gy, |gt| {
            self.with_value(w, |wt| conv_grad_input(gt, wt, stride, h, wd))
        });
        self.push(Op::ConvGradInput { gy, w, stride }, v)
    }

    /// Adjoint of [`Tape::conv`] in its weight slot; `k` is the kernel size.
    pub fn conv_grad_weight(&self, x: Var, gy: Var, stride: usize, k: usize) -> Var {
        let v = self.with_value(x, |xt| {
            self.with_value(gy, |gt| conv_grad_weight(xt, gt, stride, k))
        });
        self.push(Op::ConvGradWeight { x, gy, stride }, v)
    }

    // ---- backward ----

    /// Reverse sweep from scalar `loss`. Gradient nodes are appended to
    /// the tape, so the result can be differentiated again by calling
    /// `backward` on a scalar built from it.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(
            self.with_value(loss, |t| t.numel()),
            1,
            "backward needs a scalar loss"
        );
        let frozen = loss.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; frozen];
        adj[loss.0] = Some(self.leaf(Tensor::scalar(1.0)));

        // enum data copied out up-front would cost clones; instead we
        // re-borrow per node, taking care not to hold the borrow while
        // pushing new nodes
        for id in (0..frozen).rev() {
            let Some(u) = adj[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                match &nodes[id].op {
                    Op::Leaf => None,
                    Op::Add(a, b) => Some(OpRef::Add(*a, *b)),
                    Op::Sub(a, b) => Some(OpRef::Sub(*a, *b)),
                    Op::Mul(a, b) => Some(OpRef::Mul(*a, *b)),
                    Op::Neg(a) => Some(OpRef::Neg(*a)),
                    Op::Scale(a, c) => Some(OpRef::Scale(*a, *c)),
                    Op::AddScalar(a, _) => Some(OpRef::AddScalar(*a)),
                    Op::Recip(a) => Some(OpRef::Recip(*a)),
                    Op::Sqrt(a) => Some(OpRef::Sqrt(*a)),
                    Op::Lrelu(a, s) => Some(OpRef::Lrelu(*a, *s)),
                    Op::MulConst(a, m) => Some(OpRef::MulConst(*a, m.clone())),
                    Op::SumAll(a) => Some(OpRef::SumAll(*a)),
                    Op::BroadcastAll(a) => Some(OpRef::BroadcastAll(*a)),
                    Op::SumC(a) => Some(OpRef::SumC(*a)),
                    Op::ExpandC(a, _) => Some(OpRef::ExpandC(*a)),
                    Op::SumBhw(a) => Some(OpRef::SumBhw(*a)),
                    Op::BcastBhw(a, _, _, _) => Some(OpRef::BcastBhw(*a)),
                    Op::SumHw(a) => Some(OpRef::SumHw(*a)),
                    Op::ExpandHw(a, _, _) => Some(OpRef::ExpandHw(*a)),
                    Op::ConcatC(parts) => Some(OpRef::ConcatC(parts.clone())),
                    Op::SliceC(a, start, _) => Some(OpRef::SliceC(*a, *start)),
                    Op::EmbedC(a, start, _) => Some(OpRef::EmbedC(*a, *start)),
                    Op::Pad2(a, p) => Some(OpRef::Pad2(*a, *p)),
                    Op::Crop2(a, p) => Some(OpRef::Crop2(*a, *p)),
                    Op::Reshape(a) => Some(OpRef::Reshape(*a)),
                    Op::Conv { x, w, stride } => Some(OpRef::Conv(*x, *w, *stride)),
                    Op::ConvGradInput { gy, w, stride } => {
                        Some(OpRef::ConvGradInput(*gy, *w, *stride))
                    }
                    Op::ConvGradWeight { x, gy, stride } => {
                        Some(OpRef::ConvGradWeight(*x, *gy, *stride))
                    }
                }
            };
            let Some(op) = op else { continue };
            let acc = |slot: Var, g: Var, adj: &mut Vec<Option<Var>>| {
                debug_assert!(slot.0 < frozen, "operand created after loss");
                adj[slot.0] = Some(match adj[slot.0] {
                    Some(prev) => self.add(prev, g),
                    None => g,
                });
            };
            match op {
                OpRef::Add(a, b) => {
                    acc(a, u, &mut adj);
                    acc(b, u, &mut adj);
                }
                OpRef::Sub(a, b) => {
                    acc(a, u, &mut adj);
                    let n = self.neg(u);
                    acc(b, n, &mut adj);
                }
                OpRef::Mul(a, b) => {
                    let ga = self.mul(u, b);
                    acc(a, ga, &mut adj);
                    let gb = self.mul(u, a);
                    acc(b, gb, &mut adj);
                }
                OpRef::Neg(a) => {
                    let g = self.neg(u);
                    acc(a, g, &mut adj);
                }
                OpRef::Scale(a, c) => {
                    let g = self.scale(u, c);
                    acc(a, g, &mut adj);
                }
                OpRef::AddScalar(a) => acc(a, u, &mut adj),
                OpRef::Recip(a) => {
                    // d(1/a) = -y^2 da, with y the forward value
                    let y = Var(id);
                    let y2 = self.mul(y, y);
                    let g = self.neg(self.mul(u, y2));
                    acc(a, g, &mut adj);
                }
                OpRef::Sqrt(a) => {
                    let y = Var(id);
                    let half_inv = self.scale(self.recip(y), 0.5);
                    let g = self.mul(u, half_inv);
                    acc(a, g, &mut adj);
                }
                OpRef::Lrelu(a, s) => {
                    let mask = self.with_value(a, |x| {
                        Rc::new(x.map(|v| if v > 0.0 { 1.0 } else { s }))
                    });
                    let g = self.mul_const(u, mask);
                    acc(a, g, &mut adj);
                }
                OpRef::MulConst(a, m) => {
                    let g = self.mul_const(u, m);
                    acc(a, g, &mut adj);
                }
                OpRef::SumAll(a) => {
                    let shape = self.shape_of(a);
                    let g = self.broadcast_all(u, &shape);
                    acc(a, g, &mut adj);
                }
                OpRef::BroadcastAll(a) => {
                    let g = self.sum_all(u);
                    acc(a, g, &mut adj);
                }
                OpRef::SumC(a) => {
                    let c = self.shape_of(a)[1];
                    let g = self.expand_c(u, c);
                    acc(a, g, &mut adj);
                }
                OpRef::ExpandC(a) => {
                    let g = self.sum_c(u);
                    acc(a, g, &mut adj);
                }
                OpRef::SumBhw(a) => {
                    let s = self.shape_of(a);
                    let g = self.bcast_bhw(u, s[0], s[2], s[3]);
                    acc(a, g, &mut adj);
                }
                OpRef::BcastBhw(a) => {
                    let g = self.sum_bhw(u);
                    acc(a, g, &mut adj);
                }
                OpRef::SumHw(a) => {
                    let s = self.shape_of(a);
                    let g = self.expand_hw(u, s[2], s[3]);
                    acc(a, g, &mut adj);
                }
                OpRef::ExpandHw(a) => {
                    let g = self.sum_hw(u);
                    acc(a, g, &mut adj);
                }
                OpRef::ConcatC(parts) => {
                    let mut off = 0usize;
                    for p in parts {
                        let c = self.shape_of(p)[1];
                        let g = self.slice_c(u, off, c);
                        acc(p, g, &mut adj);
                        off += c;
                    }
                }
                OpRef::SliceC(a, start) => {
                    let c = self.shape_of(a)[1];
                    let g = self.embed_c(u, start, c);
                    acc(a, g, &mut adj);
                }
                OpRef::EmbedC(a, start) => {
                    let c = self.shape_of(a)[1];
                    let g = self.slice_c(u, start, c);
                    acc(a, g, &mut adj);
                }
                OpRef::Pad2(a, p) => {
                    let g = self.crop2(u, p);
                    acc(a, g, &mut adj);
                }
                OpRef::Crop2(a, p) => {
                    let g = self.pad2(u, p);
                    acc(a, g, &mut adj);
                }
                OpRef::Reshape(a) => {
                    let shape = self.shape_of(a);
                    let g = self.reshape(u, &shape);
                    acc(a, g, &mut adj);
                }
                OpRef::Conv(x, w, stride) => {
                    let xs = self.shape_of(x);
                    let gx = self.conv_grad_input(u, w, stride, xs[2], xs[3]);
                    acc(x, gx, &mut adj);
                    let k = self.shape_of(w)[2];
                    let gw = self.conv_grad_weight(x, u, stride, k);
                    acc(w, gw, &mut adj);
                }
                OpRef::ConvGradInput(gy, w, stride) => {
                    // u is input-shaped; see the adjoint identity above
                    let g_gy = self.conv(u, w, stride);
                    acc(gy, g_gy, &mut adj);
                    let k = self.shape_of(w)[2];
                    let g_w = self.conv_grad_weight(u, gy, stride, k);
                    acc(w, g_w, &mut adj);
                }
                OpRef::ConvGradWeight(x, gy, stride) => {
                    // u is weight-shaped
                    let xs = self.shape_of(x);
                    let g_x = self.conv_grad_input(gy, u, stride, xs[2], xs[3]);
                    acc(x, g_x, &mut adj);
                    let g_gy = self.conv(x, u, stride);
                    acc(gy, g_gy, &mut adj);
                }
            }
        }
        Grads { map: adj }
    }
}

// borrow-free copies of op descriptors used during the backward sweep
enum OpRef {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Sqrt(Var),
    Lrelu(Var, f64),
    MulConst(Var, Rc<Tensor>),
    SumAll(Var),
    BroadcastAll(Var),
    SumC(Var),
    ExpandC(Var),
    SumBhw(Var),
    BcastBhw(Var),
    SumHw(Var),
    ExpandHw(Var),
    ConcatC(Vec<Var>),
    SliceC(Var, usize),
    EmbedC(Var, usize),
    Pad2(Var, usize),
    Crop2(Var, usize),
    Reshape(Var),
    Conv(Var, Var, usize),
    ConvGradInput(Var, Var, usize),
    ConvGradWeight(Var, Var, usize),
}

fn conv_forward(x: &Tensor, w: &Tensor, stride: usize) -> Tensor {
    let (b, ci, h, wd) = x.dims4().expect("conv input");
    let (co, ci2, k, k2) = w.dims4().expect("conv weight");
    assert_eq!(ci, ci2, "conv channel mismatch");
    assert_eq!(k, k2, "conv kernel must be square");
    assert!(h >= k && wd >= k, "conv input smaller than kernel");
    assert!(stride >= 1);
    let ho = (h - k) / stride + 1;
    let wo = (wd - k) / stride + 1;
    let mut out = vec![0.0f64; b * co * ho * wo];
    let xd = x.data();
    let wv = w.data();
    for bi in 0..b {
        for o in 0..co {
            let obase = (bi * co + o) * ho * wo;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * wd;
                let wbase = (o * ci + c) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wgt = wv[wbase + ky * k + kx];
                        for oy in 0..ho {
                            let iy = oy * stride + ky;
                            let xrow = &xd[xbase + iy * wd + kx..];
                            let orow = &mut out[obase + oy * wo..obase + (oy + 1) * wo];
                            if stride == 1 {
                                for (ov, &xv) in orow.iter_mut().zip(&xrow[..wo]) {
                                    *ov += wgt * xv;
                                }
                            } else {
                                for (ox, ov) in orow.iter_mut().enumerate() {
                                    *ov += wgt * xrow[ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, co, ho, wo], out).unwrap()
}

fn conv_grad_input(gy: &Tensor, w: &Tensor, stride: usize, h: usize, wd: usize) -> Tensor {
    let (b, co, ho, wo) = gy.dims4().expect("grad-input cotangent");
    let (co2, ci, k, _) = w.dims4().expect("grad-input weight");
    assert_eq!(co, co2, "grad-input channel mismatch");
    assert_eq!(ho, (h - k) / stride + 1, "grad-input height mismatch");
    assert_eq!(wo, (wd - k) / stride + 1, "grad-input width mismatch");
    let mut gx = vec![0.0f64; b * ci * h * wd];
    let gd = gy.data();
    let wv = w.data();
    for bi in 0..b {
        for o in 0..co {
            let gybase = (bi * co + o) * ho * wo;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * wd;
                let wbase = (o * ci + c) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wgt = wv[wbase + ky * k + kx];
                        for oy in 0..ho {
                            let iy = oy * stride + ky;
                            let grow = &gd[gybase + oy * wo..gybase + (oy + 1) * wo];
                            let xrow = &mut gx[xbase + iy * wd + kx..];
                            if stride == 1 {
                                for (xv, &gv) in xrow[..wo].iter_mut().zip(grow) {
                                    *xv += wgt * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    xrow[ox * stride] += wgt * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, ci, h, wd], gx).unwrap()
}

fn conv_grad_weight(x: &Tensor, gy: &Tensor, stride: usize, k: usize) -> Tensor {
    let (b, ci, h, wd) = x.dims4().expect("grad-weight input");
    let (b2, co, ho, wo) = gy.dims4().expect("grad-weight cotangent");
    assert_eq!(b, b2, "grad-weight batch mismatch");
    assert_eq!(ho, (h - k) / stride + 1, "grad-weight height mismatch");
    assert_eq!(wo, (wd - k) / stride + 1, "grad-weight width mismatch");
    let mut gw = vec![0.0f64; co * ci * k * k];
    let xd = x.data();
    let gd = gy.data();
    for o in 0..co {
        for c in 0..ci {
            let wbase = (o * ci + c) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for bi in 0..b {
                        let xbase = (bi * ci + c) * h * wd;
                        let gybase = (bi * co + o) * ho * wo;
                        for oy in 0..ho {
                            let iy = oy * stride + ky;
                            let xrow = &xd[xbase + iy * wd + kx..];
                            let grow = &gd[gybase + oy * wo..gybase + (oy + 1) * wo];
                            if stride == 1 {
                                for (&xv, &gv) in xrow[..wo].iter().zip(grow) {
                                    acc += xv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    acc += xrow[ox * stride] * gv;
                                }
                            }
                        }
                    }
                    gw[wbase + ky * k + kx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![co, ci, k, k], gw).unwrap()
}
