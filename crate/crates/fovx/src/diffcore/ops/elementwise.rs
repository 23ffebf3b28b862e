use crate::diffcore::tensor::{broadcast_shapes, broadcast_strides, zip_broadcast};
use crate::diffcore::{Result, Scalar, Var, DIV_EPSILON};

impl<T: Scalar> Var<T> {
    /// Shared plumbing for elementwise unary ops. `df(x, y)` is the local
    /// derivative given the input and output element.
    fn unary_op(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<T>> {
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let (shape, data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            (
                node.shape.clone(),
                node.data.iter().map(|&v| f(v)).collect::<Vec<T>>(),
                node.needs_grad,
            )
        });
        self.tape.record(name, shape, data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, nodes| {
                let x = &nodes[x_id].data;
                let y = &nodes[out_id].data;
                for i in 0..dx.len() {
                    dx[i] += g[i] * df(x[i], y[i]);
                }
            });
        })
    }

    /// Shared plumbing for elementwise binary ops with trailing-axis
    /// broadcasting. `dfa`/`dfb` give local derivatives from
    /// `(a, b, y)` elements; gradients of stretched axes are summed.
    fn binary_op(
        &self,
        rhs: &Var<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        dfa: impl Fn(T, T, T) -> T + 'static,
        dfb: impl Fn(T, T, T) -> T + 'static,
    ) -> Result<Var<T>> {
        self.tape.same_tape(&rhs.tape, name)?;
        let (a_id, b_id) = (self.id, rhs.id);
        let out_id = self.tape.next_id();
        let (a_shape, b_shape, needs_grad) = self.tape.with_nodes(|nodes| {
            (
                nodes[a_id].shape.clone(),
                nodes[b_id].shape.clone(),
                nodes[a_id].needs_grad || nodes[b_id].needs_grad,
            )
        });
        let out_shape = broadcast_shapes(name, &a_shape, &b_shape)?;

        if a_shape == b_shape {
            let data = self.tape.with_nodes(|nodes| {
                let a = &nodes[a_id].data;
                let b = &nodes[b_id].data;
                a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<T>>()
            });
            return self.tape.record(name, out_shape, data, needs_grad, move |scope| {
                let Some(g) = scope.take_grad(out_id) else {
                    return;
                };
                scope.with_grad(a_id, |da, nodes| {
                    let a = &nodes[a_id].data;
                    let b = &nodes[b_id].data;
                    let y = &nodes[out_id].data;
                    for i in 0..da.len() {
                        da[i] += g[i] * dfa(a[i], b[i], y[i]);
                    }
                });
                scope.with_grad(b_id, |db, nodes| {
                    let a = &nodes[a_id].data;
                    let b = &nodes[b_id].data;
                    let y = &nodes[out_id].data;
                    for i in 0..db.len() {
                        db[i] += g[i] * dfb(a[i], b[i], y[i]);
                    }
                });
            });
        }

        let sa = broadcast_strides(&a_shape, &out_shape);
        let sb = broadcast_strides(&b_shape, &out_shape);
        let numel: usize = out_shape.iter().product();
        let data = self.tape.with_nodes(|nodes| {
            let a = &nodes[a_id].data;
            let b = &nodes[b_id].data;
            let mut out = Vec::with_capacity(numel);
            zip_broadcast(&out_shape, &sa, &sb, |_, ao, bo| out.push(f(a[ao], b[bo])));
            out
        });
        let shape_for_bwd = out_shape.clone();
        self.tape.record(name, out_shape, data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(a_id, |da, nodes| {
                let a = &nodes[a_id].data;
                let b = &nodes[b_id].data;
                let y = &nodes[out_id].data;
                zip_broadcast(&shape_for_bwd, &sa, &sb, |o, ao, bo| {
                    da[ao] += g[o] * dfa(a[ao], b[bo], y[o]);
                });
            });
            scope.with_grad(b_id, |db, nodes| {
                let a = &nodes[a_id].data;
                let b = &nodes[b_id].data;
                let y = &nodes[out_id].data;
                zip_broadcast(&shape_for_bwd, &sa, &sb, |o, ao, bo| {
                    db[bo] += g[o] * dfb(a[ao], b[bo], y[o]);
                });
            });
        })
    }

    pub fn add(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary_op(rhs, "add", |a, b| a + b, |_, _, _| T::one(), |_, _, _| T::one())
    }

    pub fn sub(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary_op(rhs, "sub", |a, b| a - b, |_, _, _| T::one(), |_, _, _| -T::one())
    }

    pub fn mul(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary_op(rhs, "mul", |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    /// Division with the denominator magnitude clamped at [`DIV_EPSILON`];
    /// inside the clamp the derivative w.r.t. the denominator is zero.
    pub fn div(&self, rhs: &Var<T>) -> Result<Var<T>> {
        let eps = T::from_f64(DIV_EPSILON);
        let safe = move |b: T| {
            if b >= T::zero() {
                b.max(eps)
            } else {
                b.min(-eps)
            }
        };
        self.binary_op(
            rhs,
            "div",
            move |a, b| a / safe(b),
            move |_, b, _| T::one() / safe(b),
            move |_, b, y| {
                if b.abs() < eps {
                    T::zero()
                } else {
                    -y / b
                }
            },
        )
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary_op(
            rhs,
            "minimum",
            |a, b| a.min(b),
            |a, b, _| if a <= b { T::one() } else { T::zero() },
            |a, b, _| if a <= b { T::zero() } else { T::one() },
        )
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary_op(
            rhs,
            "maximum",
            |a, b| a.max(b),
            |a, b, _| if a >= b { T::one() } else { T::zero() },
            |a, b, _| if a >= b { T::zero() } else { T::one() },
        )
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Var<T>> {
        let (s, c) = (T::from_f64(scale), T::from_f64(shift));
        self.unary_op("affine", move |x| s * x + c, move |_, _| s)
    }

    pub fn mul_scalar(&self, scale: f64) -> Result<Var<T>> {
        self.affine(scale, 0.0)
    }

    pub fn add_scalar(&self, shift: f64) -> Result<Var<T>> {
        self.affine(1.0, shift)
    }

    pub fn neg(&self) -> Result<Var<T>> {
        self.affine(-1.0, 0.0)
    }

    /// Subgradient at 0 is 0.
    pub fn abs(&self) -> Result<Var<T>> {
        self.unary_op(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn exp(&self) -> Result<Var<T>> {
        self.unary_op("exp", |x| x.exp(), |_, y| y)
    }

    /// Natural log; non-positive inputs surface as a non-finite error.
    pub fn ln(&self) -> Result<Var<T>> {
        self.unary_op("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sq(&self) -> Result<Var<T>> {
        self.unary_op("sq", |x| x * x, |x, _| T::from_f64(2.0) * x)
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        self.unary_op(
            "sigmoid",
            |x| {
                // Split by sign for numerical stability at large |x|.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Result<Var<T>> {
        self.unary_op("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<T>> {
        let s = T::from_f64(slope);
        self.unary_op(
            "leaky_relu",
            move |x| if x > T::zero() { x } else { s * x },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        self.leaky_relu(0.0)
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<T>> {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary_op(
            "clamp",
            move |x| x.max(l).min(h),
            move |x, _| {
                if x > l && x < h {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }
}
