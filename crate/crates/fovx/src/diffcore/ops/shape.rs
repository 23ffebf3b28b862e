use crate::diffcore::{DiffError, Result, Scalar, Var};

/// Concatenates along `axis`. All inputs must share the tape, the rank,
/// and every extent except `axis`.
pub fn concat<T: Scalar>(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
    let first = parts.first().ok_or(DiffError::Invalid {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    let tape = first.tape.clone();
    let base = first.shape();
    if axis >= base.len() {
        return Err(DiffError::Invalid {
            op: "concat",
            detail: format!("axis {axis} out of range for rank {}", base.len()),
        });
    }
    let mut axis_total = 0;
    let mut needs_grad = false;
    for p in parts {
        tape.same_tape(&p.tape, "concat")?;
        let s = p.shape();
        let compatible = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(DiffError::Shape {
                op: "concat",
                detail: format!("{s:?} does not stack with {base:?} along axis {axis}"),
            });
        }
        axis_total += s[axis];
        needs_grad |= p.needs_grad();
    }
    let mut out_shape = base.clone();
    out_shape[axis] = axis_total;

    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let out_id = tape.next_id();

    let numel: usize = out_shape.iter().product();
    let data = tape.with_nodes(|nodes| {
        let mut out = Vec::with_capacity(numel);
        for o in 0..outer {
            for (&id, &ext) in ids.iter().zip(&extents) {
                let block = ext * inner;
                out.extend_from_slice(&nodes[id].data[o * block..(o + 1) * block]);
            }
        }
        out
    });
    let (ids_b, extents_b) = (ids, extents);
    tape.record("concat", out_shape, data, needs_grad, move |scope| {
        let Some(g) = scope.take_grad(out_id) else {
            return;
        };
        let stripe: usize = extents_b.iter().sum::<usize>() * inner;
        let mut start = 0;
        for (&id, &ext) in ids_b.iter().zip(&extents_b) {
            let block = ext * inner;
            scope.with_grad(id, |dx, _| {
                for o in 0..outer {
                    let src = &g[o * stripe + start..o * stripe + start + block];
                    for (d, &s) in dx[o * block..(o + 1) * block].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            });
            start += block;
        }
    })
}

impl<T: Scalar> Var<T> {
    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let in_shape = self.shape();
        if axis >= in_shape.len() || len == 0 || start + len > in_shape[axis] {
            return Err(DiffError::Invalid {
                op: "slice",
                detail: format!("range {start}..{} on axis {axis} of {in_shape:?}", start + len),
            });
        }
        let mut out_shape = in_shape.clone();
        out_shape[axis] = len;
        let outer: usize = in_shape[..axis].iter().product();
        let inner: usize = in_shape[axis + 1..].iter().product();
        let in_stripe = in_shape[axis] * inner;
        let x_id = self.id;
        let out_id = self.tape.next_id();

        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * in_stripe + start * inner;
                out.extend_from_slice(&node.data[base..base + len * inner]);
            }
            (out, node.needs_grad)
        });
        self.tape.record("slice", out_shape, data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                let block = len * inner;
                for o in 0..outer {
                    let base = o * in_stripe + start * inner;
                    for (d, &s) in dx[base..base + block].iter_mut().zip(&g[o * block..(o + 1) * block]) {
                        *d += s;
                    }
                }
            });
        })
    }

    /// Spatial shift of an NCHW tensor by `(dy, dx)` with zero fill:
    /// `out[y, x] = in[y - dy, x - dx]`.
    pub fn shift2d(&self, dy: isize, dx: isize) -> Result<Var<T>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(DiffError::Shape {
                op: "shift2d",
                detail: format!("want NCHW, got {shape:?}"),
            });
        }
        let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
        let x_id = self.id;
        let out_id = self.tape.next_id();

        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let mut out = vec![T::zero(); node.data.len()];
            for p in 0..planes {
                let src = &node.data[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * h * w..(p + 1) * h * w];
                for y in 0..h as isize {
                    let sy = y - dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w as isize {
                        let sx = x - dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y as usize * w + x as usize] = src[sy as usize * w + sx as usize];
                    }
                }
            }
            (out, node.needs_grad)
        });
        self.tape.record("shift2d", shape, data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dgrad, _| {
                // Reverse shift: out[y,x] reads in[y-dy,x-dx], so the
                // gradient scatters back by (+dy, +dx).
                for p in 0..planes {
                    let gp = &g[p * h * w..(p + 1) * h * w];
                    let dp = &mut dgrad[p * h * w..(p + 1) * h * w];
                    for y in 0..h as isize {
                        let sy = y - dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w as isize {
                            let sx = x - dx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dp[sy as usize * w + sx as usize] += gp[y as usize * w + x as usize];
                        }
                    }
                }
            });
        })
    }
}
