use crate::diffcore::{DiffError, Result, Scalar, Var};
use crate::exec;

impl<T: Scalar> Var<T> {
    /// 2D cross-correlation with zero padding and a per-output-channel
    /// bias. `self` is NCHW, `weight` is [out_c, in_c, kh, kw], `bias`
    /// is [out_c]. Output extents are `(in + 2*padding - k)/stride + 1`.
    pub fn conv2d(&self, weight: &Var<T>, bias: &Var<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        self.tape.same_tape(&weight.tape, "conv2d")?;
        self.tape.same_tape(&bias.tape, "conv2d")?;
        let xs = self.shape();
        let ws = weight.shape();
        let bs = bias.shape();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(DiffError::Shape {
                op: "conv2d",
                detail: format!("want NCHW x [O,C,kh,kw] x [O], got {xs:?} {ws:?} {bs:?}"),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wc != c || bs[0] != oc {
            return Err(DiffError::Shape {
                op: "conv2d",
                detail: format!("channel mismatch: x has {c}, weight {wc}x{oc}, bias {}", bs[0]),
            });
        }
        if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(DiffError::Invalid {
                op: "conv2d",
                detail: format!("stride {stride}, kernel {kh}x{kw} on {h}x{w} with padding {padding}"),
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;

        let (x_id, w_id, b_id) = (self.id, weight.id, bias.id);
        let out_id = self.tape.next_id();
        let needs_grad = self.tape.with_nodes(|nodes| {
            nodes[x_id].needs_grad || nodes[w_id].needs_grad || nodes[b_id].needs_grad
        });

        let data = self.tape.with_nodes(|nodes| {
            let x = &nodes[x_id].data;
            let wt = &nodes[w_id].data;
            let b = &nodes[b_id].data;
            let mut out = vec![T::zero(); n * oc * oh * ow];
            exec::for_each_chunk(&mut out, oh * ow, |plane, chunk| {
                let (ni, oi) = (plane / oc, plane % oc);
                for oy in 0..oh {
                    let iy0 = (oy * stride) as isize - padding as isize;
                    for ox in 0..ow {
                        let ix0 = (ox * stride) as isize - padding as isize;
                        let mut acc = b[oi];
                        for ci in 0..c {
                            let x_base = ((ni * c + ci) * h) as isize;
                            let w_base = ((oi * c + ci) * kh) * kw;
                            for ky in 0..kh {
                                let iy = iy0 + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let x_row = ((x_base + iy) as usize) * w;
                                let w_row = w_base + ky * kw;
                                for kx in 0..kw {
                                    let ix = ix0 + kx as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[x_row + ix as usize] * wt[w_row + kx];
                                }
                            }
                        }
                        chunk[oy * ow + ox] = acc;
                    }
                }
            });
            out
        });

        self.tape.record("conv2d", vec![n, oc, oh, ow], data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(b_id, |db, _| {
                for ni in 0..n {
                    for oi in 0..oc {
                        let base = (ni * oc + oi) * oh * ow;
                        let mut acc = T::zero();
                        for &v in &g[base..base + oh * ow] {
                            acc += v;
                        }
                        db[oi] += acc;
                    }
                }
            });
            scope.with_grad(w_id, |dw, nodes| {
                let x = &nodes[x_id].data;
                let g = &g;
                exec::for_each_chunk(dw, c * kh * kw, |oi, chunk| {
                    for ni in 0..n {
                        let g_plane = &g[(ni * oc + oi) * oh * ow..(ni * oc + oi + 1) * oh * ow];
                        for oy in 0..oh {
                            let iy0 = (oy * stride) as isize - padding as isize;
                            for ox in 0..ow {
                                let gv = g_plane[oy * ow + ox];
                                if gv == T::zero() {
                                    continue;
                                }
                                let ix0 = (ox * stride) as isize - padding as isize;
                                for ci in 0..c {
                                    let x_base = ((ni * c + ci) * h) as isize;
                                    let w_base = ci * kh * kw;
                                    for ky in 0..kh {
                                        let iy = iy0 + ky as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let x_row = ((x_base + iy) as usize) * w;
                                        let w_row = w_base + ky * kw;
                                        for kx in 0..kw {
                                            let ix = ix0 + kx as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            chunk[w_row + kx] += gv * x[x_row + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            });
            scope.with_grad(x_id, |dx, nodes| {
                let wt = &nodes[w_id].data;
                let g = &g;
                // Gather form: each input pixel collects from the output
                // positions whose window covers it, keeping chunks disjoint.
                exec::for_each_chunk(dx, h * w, |plane, chunk| {
                    let (ni, ci) = (plane / c, plane % c);
                    for iy in 0..h {
                        for ix in 0..w {
                            let mut acc = T::zero();
                            let ty = iy + padding;
                            let tx = ix + padding;
                            let ky_start = ty % stride;
                            let kx_start = tx % stride;
                            for oi in 0..oc {
                                let g_plane = (ni * oc + oi) * oh * ow;
                                let w_base = (oi * c + ci) * kh * kw;
                                let mut ky = ky_start;
                                while ky < kh {
                                    if ty >= ky {
                                        let oy = (ty - ky) / stride;
                                        if oy < oh {
                                            let mut kx = kx_start;
                                            while kx < kw {
                                                if tx >= kx {
                                                    let ox = (tx - kx) / stride;
                                                    if ox < ow {
                                                        acc += g[g_plane + oy * ow + ox] * wt[w_base + ky * kw + kx];
                                                    }
                                                }
                                                kx += stride;
                                            }
                                        }
                                    }
                                    ky += stride;
                                }
                            }
                            chunk[iy * w + ix] += acc;
                        }
                    }
                });
            });
        })
    }
}
