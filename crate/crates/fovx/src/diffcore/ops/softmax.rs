use crate::diffcore::{DiffError, Result, Scalar, Var};

impl<T: Scalar> Var<T> {
    /// Softmax along `axis`, max-subtracted per slice so large logits
    /// (|x| in the hundreds) stay finite.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(DiffError::Invalid {
                op: "softmax",
                detail: format!("axis {axis} out of range for rank {}", shape.len()),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x_id = self.id;
        let out_id = self.tape.next_id();

        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let x = &node.data;
            let mut out = vec![T::zero(); x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let mut max = x[base];
                    for k in 1..n {
                        max = max.max(x[base + k * inner]);
                    }
                    let mut sum = T::zero();
                    for k in 0..n {
                        let e = (x[base + k * inner] - max).exp();
                        out[base + k * inner] = e;
                        sum += e;
                    }
                    for k in 0..n {
                        out[base + k * inner] = out[base + k * inner] / sum;
                    }
                }
            }
            (out, node.needs_grad)
        });
        self.tape.record("softmax", shape, data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, nodes| {
                let y = &nodes[out_id].data;
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut dot = T::zero();
                        for k in 0..n {
                            let idx = base + k * inner;
                            dot += g[idx] * y[idx];
                        }
                        for k in 0..n {
                            let idx = base + k * inner;
                            dx[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            });
        })
    }
}
