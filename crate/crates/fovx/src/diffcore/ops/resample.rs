use crate::diffcore::{DiffError, Result, Scalar, Var};
use crate::exec;

fn check_nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(DiffError::Shape {
            op,
            detail: format!("want NCHW, got {shape:?}"),
        });
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

impl<T: Scalar> Var<T> {
    /// Non-overlapping `k`x`k` mean pooling; extents must divide evenly.
    pub fn avg_pool(&self, k: usize) -> Result<Var<T>> {
        let (n, c, h, w) = check_nchw("avg_pool", &self.shape())?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(DiffError::Invalid {
                op: "avg_pool",
                detail: format!("window {k} does not tile {h}x{w}"),
            });
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let x = &node.data;
            let mut out = vec![T::zero(); n * c * oh * ow];
            exec::for_each_chunk(&mut out, oh * ow, |plane, chunk| {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for dy in 0..k {
                            let row = (oy * k + dy) * w + ox * k;
                            for dx in 0..k {
                                acc += src[row + dx];
                            }
                        }
                        chunk[oy * ow + ox] = acc * inv;
                    }
                }
            });
            (out, node.needs_grad)
        });
        self.tape.record("avg_pool", vec![n, c, oh, ow], data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                let g = &g;
                exec::for_each_chunk(dx, h * w, |plane, chunk| {
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    for iy in 0..h {
                        for ix in 0..w {
                            chunk[iy * w + ix] += gp[(iy / k) * ow + ix / k] * inv;
                        }
                    }
                });
            });
        })
    }

    /// Integer-factor nearest-neighbour upsampling.
    pub fn upsample_nearest(&self, f: usize) -> Result<Var<T>> {
        let (n, c, h, w) = check_nchw("upsample_nearest", &self.shape())?;
        if f == 0 {
            return Err(DiffError::Invalid {
                op: "upsample_nearest",
                detail: "factor 0".into(),
            });
        }
        let (oh, ow) = (h * f, w * f);
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let x = &node.data;
            let mut out = vec![T::zero(); n * c * oh * ow];
            exec::for_each_chunk(&mut out, oh * ow, |plane, chunk| {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        chunk[oy * ow + ox] = src[(oy / f) * w + ox / f];
                    }
                }
            });
            (out, node.needs_grad)
        });
        self.tape.record("upsample_nearest", vec![n, c, oh, ow], data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                let g = &g;
                exec::for_each_chunk(dx, h * w, |plane, chunk| {
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    for iy in 0..h {
                        for ix in 0..w {
                            let mut acc = T::zero();
                            for dy in 0..f {
                                let row = (iy * f + dy) * ow + ix * f;
                                for dx2 in 0..f {
                                    acc += gp[row + dx2];
                                }
                            }
                            chunk[iy * w + ix] += acc;
                        }
                    }
                });
            });
        })
    }

    /// Integer-factor bilinear upsampling with half-pixel alignment and
    /// replicated borders.
    pub fn upsample_bilinear(&self, f: usize) -> Result<Var<T>> {
        let (n, c, h, w) = check_nchw("upsample_bilinear", &self.shape())?;
        if f == 0 {
            return Err(DiffError::Invalid {
                op: "upsample_bilinear",
                detail: "factor 0".into(),
            });
        }
        let (oh, ow) = (h * f, w * f);
        // Precompute the 1D tap tables once per op.
        let axis_taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, T)> {
            (0..out_len)
                .map(|o| {
                    let src = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(in_len - 1);
                    (i0, i1, T::from_f64(src - i0 as f64))
                })
                .collect()
        };
        let ty = axis_taps(oh, h);
        let tx = axis_taps(ow, w);
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let (ty_b, tx_b) = (ty.clone(), tx.clone());

        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let x = &node.data;
            let mut out = vec![T::zero(); n * c * oh * ow];
            exec::for_each_chunk(&mut out, oh * ow, |plane, chunk| {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    let (y0, y1, fy) = ty[oy];
                    for ox in 0..ow {
                        let (x0, x1, fx) = tx[ox];
                        let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                        let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                        chunk[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                    }
                }
            });
            (out, node.needs_grad)
        });
        self.tape.record("upsample_bilinear", vec![n, c, oh, ow], data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                let g = &g;
                exec::for_each_chunk(dx, h * w, |plane, chunk| {
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    for oy in 0..oh {
                        let (y0, y1, fy) = ty_b[oy];
                        for ox in 0..ow {
                            let (x0, x1, fx) = tx_b[ox];
                            let gv = gp[oy * ow + ox];
                            chunk[y0 * w + x0] += gv * (T::one() - fx) * (T::one() - fy);
                            chunk[y0 * w + x1] += gv * fx * (T::one() - fy);
                            chunk[y1 * w + x0] += gv * (T::one() - fx) * fy;
                            chunk[y1 * w + x1] += gv * fx * fy;
                        }
                    }
                });
            });
        })
    }

    /// Mean filter over a `(2*radius+1)^2` window, normalized by the
    /// clipped in-image tap count so borders stay unbiased.
    pub fn box_filter(&self, radius: usize) -> Result<Var<T>> {
        let (n, c, h, w) = check_nchw("box_filter", &self.shape())?;
        let r = radius as isize;
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let window = move |y: usize, x: usize| {
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = (y as isize + r).min(h as isize - 1) as usize;
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = (x as isize + r).min(w as isize - 1) as usize;
            (y0, y1, x0, x1)
        };
        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let x = &node.data;
            let mut out = vec![T::zero(); n * c * h * w];
            exec::for_each_chunk(&mut out, h * w, |plane, chunk| {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                for y in 0..h {
                    for xx in 0..w {
                        let (y0, y1, x0, x1) = window(y, xx);
                        let mut acc = T::zero();
                        for yy in y0..=y1 {
                            for xi in x0..=x1 {
                                acc += src[yy * w + xi];
                            }
                        }
                        let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                        chunk[y * w + xx] = acc * T::from_f64(1.0 / count);
                    }
                }
            });
            (out, node.needs_grad)
        });
        self.tape.record("box_filter", vec![n, c, h, w], data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                let g = &g;
                // The window relation is symmetric: output (yy, xi) covers
                // input (y, x) exactly when (y, x)'s window covers it.
                exec::for_each_chunk(dx, h * w, |plane, chunk| {
                    let gp = &g[plane * h * w..(plane + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            let (y0, y1, x0, x1) = window(y, xx);
                            let mut acc = T::zero();
                            for yy in y0..=y1 {
                                for xi in x0..=x1 {
                                    let (wy0, wy1, wx0, wx1) = window(yy, xi);
                                    let count = ((wy1 - wy0 + 1) * (wx1 - wx0 + 1)) as f64;
                                    acc += gp[yy * w + xi] * T::from_f64(1.0 / count);
                                }
                            }
                            chunk[y * w + xx] += acc;
                        }
                    }
                });
            });
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::diffcore::{Tape, Tensor};

    #[test]
    fn pooling_a_constant_preserves_it() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(&Tensor::full([1, 2, 4, 4], 0.7));
        let y = x.avg_pool(2).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 2, 2]);
        assert!(y.value().data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn nearest_up_then_avg_pool_round_trips() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(&Tensor::from_fn([1, 1, 3, 3], |i| i as f32));
        let y = x.upsample_nearest(2).unwrap().avg_pool(2).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn bilinear_up_interpolates_between_texels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::new([1, 1, 1, 2], vec![0.0, 4.0]).unwrap());
        let y = x.upsample_bilinear(2).unwrap().value();
        // Half-pixel mapping: sources -0.25, 0.25, 0.75, 1.25 clamped;
        // both output rows read the single input row.
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn box_filter_is_exact_mean_inside_and_unbiased_at_borders() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::full([1, 1, 3, 3], 2.5));
        let y = x.box_filter(1).unwrap().value();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));

        let x2 = tape.constant(&Tensor::from_fn([1, 1, 3, 3], |i| i as f64));
        let y2 = x2.box_filter(1).unwrap().value();
        // Corner window is 2x2: mean of {0,1,3,4}.
        assert!((y2.data()[0] - 2.0).abs() < 1e-12);
        // Center window is the full 3x3: mean of 0..9.
        assert!((y2.data()[4] - 4.0).abs() < 1e-12);
    }
}
