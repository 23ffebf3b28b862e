use crate::diffcore::{DiffError, Result, Scalar, Var};
use crate::exec;

#[derive(Copy, Clone)]
struct Taps<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

fn taps_at<T: Scalar>(cx: T, cy: T) -> Taps<T> {
    let xf = cx.floor();
    let yf = cy.floor();
    Taps {
        x0: xf.to_f64() as isize,
        y0: yf.to_f64() as isize,
        fx: cx - xf,
        fy: cy - yf,
    }
}

#[inline]
fn texel<T: Scalar>(plane: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

impl<T: Scalar> Var<T> {
    /// Bilinear gather: `out[n,c,j,i]` samples `self` at the source
    /// position `coords[n,:,j,i]` (channel 0 = x column, channel 1 = y row,
    /// in source pixel units). Taps outside the source read as zero, so a
    /// sample point falling fully outside returns 0; validity is the
    /// caller's concern. Integer coordinates reproduce texels bit-exactly.
    /// Differentiable in both the source and the coordinates.
    pub fn grid_sample(&self, coords: &Var<T>) -> Result<Var<T>> {
        self.tape.same_tape(&coords.tape, "grid_sample")?;
        let xs = self.shape();
        let cs = coords.shape();
        if xs.len() != 4 || cs.len() != 4 || cs[1] != 2 || cs[0] != xs[0] {
            return Err(DiffError::Shape {
                op: "grid_sample",
                detail: format!("want x NCHW with coords [N,2,H',W'], got {xs:?} and {cs:?}"),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (cs[2], cs[3]);
        let (x_id, c_id) = (self.id, coords.id);
        let out_id = self.tape.next_id();
        let needs_grad = self
            .tape
            .with_nodes(|nodes| nodes[x_id].needs_grad || nodes[c_id].needs_grad);

        let data = self.tape.with_nodes(|nodes| {
            let x = &nodes[x_id].data;
            let co = &nodes[c_id].data;
            let mut out = vec![T::zero(); n * c * ho * wo];
            exec::for_each_chunk(&mut out, ho * wo, |plane, chunk| {
                let (ni, ci) = (plane / c, plane % c);
                let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let cx_plane = &co[ni * 2 * ho * wo..ni * 2 * ho * wo + ho * wo];
                let cy_plane = &co[ni * 2 * ho * wo + ho * wo..(ni * 2 + 2) * ho * wo];
                for p in 0..ho * wo {
                    let t = taps_at(cx_plane[p], cy_plane[p]);
                    let v00 = texel(src, h, w, t.x0, t.y0);
                    let v10 = texel(src, h, w, t.x0 + 1, t.y0);
                    let v01 = texel(src, h, w, t.x0, t.y0 + 1);
                    let v11 = texel(src, h, w, t.x0 + 1, t.y0 + 1);
                    let top = v00 * (T::one() - t.fx) + v10 * t.fx;
                    let bot = v01 * (T::one() - t.fx) + v11 * t.fx;
                    chunk[p] = top * (T::one() - t.fy) + bot * t.fy;
                }
            });
            out
        });

        self.tape.record("grid_sample", vec![n, c, ho, wo], data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, nodes| {
                let co = &nodes[c_id].data;
                let g = &g;
                exec::for_each_chunk(dx, h * w, |plane, chunk| {
                    let (ni, ci) = (plane / c, plane % c);
                    let g_plane = &g[(ni * c + ci) * ho * wo..(ni * c + ci + 1) * ho * wo];
                    let cx_plane = &co[ni * 2 * ho * wo..ni * 2 * ho * wo + ho * wo];
                    let cy_plane = &co[ni * 2 * ho * wo + ho * wo..(ni * 2 + 2) * ho * wo];
                    let mut put = |x: isize, y: isize, v: T| {
                        if x >= 0 && y >= 0 && x < w as isize && y < h as isize {
                            chunk[y as usize * w + x as usize] += v;
                        }
                    };
                    for p in 0..ho * wo {
                        let gv = g_plane[p];
                        if gv == T::zero() {
                            continue;
                        }
                        let t = taps_at(cx_plane[p], cy_plane[p]);
                        put(t.x0, t.y0, gv * (T::one() - t.fx) * (T::one() - t.fy));
                        put(t.x0 + 1, t.y0, gv * t.fx * (T::one() - t.fy));
                        put(t.x0, t.y0 + 1, gv * (T::one() - t.fx) * t.fy);
                        put(t.x0 + 1, t.y0 + 1, gv * t.fx * t.fy);
                    }
                });
            });
            scope.with_grad(c_id, |dc, nodes| {
                let x = &nodes[x_id].data;
                let co = &nodes[c_id].data;
                let g = &g;
                exec::for_each_chunk(dc, 2 * ho * wo, |ni, chunk| {
                    let cx_plane = &co[ni * 2 * ho * wo..ni * 2 * ho * wo + ho * wo];
                    let cy_plane = &co[ni * 2 * ho * wo + ho * wo..(ni * 2 + 2) * ho * wo];
                    for p in 0..ho * wo {
                        let t = taps_at(cx_plane[p], cy_plane[p]);
                        let mut dgx = T::zero();
                        let mut dgy = T::zero();
                        for ci in 0..c {
                            let gv = g[(ni * c + ci) * ho * wo + p];
                            if gv == T::zero() {
                                continue;
                            }
                            let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                            let v00 = texel(src, h, w, t.x0, t.y0);
                            let v10 = texel(src, h, w, t.x0 + 1, t.y0);
                            let v01 = texel(src, h, w, t.x0, t.y0 + 1);
                            let v11 = texel(src, h, w, t.x0 + 1, t.y0 + 1);
                            dgx += gv * ((v10 - v00) * (T::one() - t.fy) + (v11 - v01) * t.fy);
                            dgy += gv * ((v01 - v00) * (T::one() - t.fx) + (v11 - v10) * t.fx);
                        }
                        chunk[p] += dgx;
                        chunk[ho * wo + p] += dgy;
                    }
                });
            });
        })
    }
}
