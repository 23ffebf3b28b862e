use crate::diffcore::tensor::{strides_of, walk_strided};
use crate::diffcore::{DiffError, Result, Scalar, Var};

impl<T: Scalar> Var<T> {
    pub fn sum_all(&self) -> Result<Var<T>> {
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let (total, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let mut acc = T::zero();
            for &v in &node.data {
                acc += v;
            }
            (acc, node.needs_grad)
        });
        self.tape.record("sum_all", vec![], vec![total], needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            });
        })
    }

    pub fn mean_all(&self) -> Result<Var<T>> {
        let n = self.numel();
        self.sum_all()?.mul_scalar(1.0 / n as f64)
    }

    /// Sums over `axes` (sorted, unique). With `keepdim` the reduced axes
    /// stay as size 1, which suits later broadcasting.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Var<T>> {
        let x_id = self.id;
        let out_id = self.tape.next_id();
        let in_shape = self.shape();
        let rank = in_shape.len();
        if axes.is_empty() || axes.windows(2).any(|w| w[0] >= w[1]) || axes[axes.len() - 1] >= rank {
            return Err(DiffError::Invalid {
                op: "sum_axes",
                detail: format!("axes {axes:?} invalid for rank {rank}"),
            });
        }
        let reduced = |axis: usize| axes.contains(&axis);
        let keep_shape: Vec<usize> = (0..rank)
            .map(|i| if reduced(i) { 1 } else { in_shape[i] })
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            keep_shape.clone()
        } else {
            (0..rank).filter(|&i| !reduced(i)).map(|i| in_shape[i]).collect()
        };
        // Strides that send an input index to its reduction slot. The
        // keepdim layout and the dropped layout share flat offsets.
        let keep_strides = strides_of(&keep_shape);
        let map_strides: Vec<usize> = (0..rank)
            .map(|i| if reduced(i) { 0 } else { keep_strides[i] })
            .collect();
        let out_numel: usize = keep_shape.iter().product();

        let (data, needs_grad) = self.tape.with_nodes(|nodes| {
            let node = &nodes[x_id];
            let mut out = vec![T::zero(); out_numel];
            walk_strided(&in_shape, &map_strides, |flat, off| out[off] += node.data[flat]);
            (out, node.needs_grad)
        });
        let in_shape_bwd = in_shape.clone();
        self.tape.record("sum_axes", out_shape, data, needs_grad, move |scope| {
            let Some(g) = scope.take_grad(out_id) else {
                return;
            };
            scope.with_grad(x_id, |dx, _| {
                walk_strided(&in_shape_bwd, &map_strides, |flat, off| dx[flat] += g[off]);
            });
        })
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Var<T>> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape.get(a).copied().unwrap_or(1)).product();
        self.sum_axes(axes, keepdim)?.mul_scalar(1.0 / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use crate::diffcore::{Tape, Tensor};

    #[test]
    fn sum_of_ones_counts_elements() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(&Tensor::full([13], 1.0));
        assert_eq!(x.sum_all().unwrap().item(), 13.0);
        assert_eq!(x.mean_all().unwrap().item(), 1.0);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn([2, 3], |i| i as f64));
        x.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn axis_sums_match_manual_reduction() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn([2, 3, 2], |i| i as f64));
        let y = x.sum_axes(&[1], true).unwrap();
        assert_eq!(y.shape(), vec![2, 1, 2]);
        assert_eq!(y.value().data(), &[6.0, 9.0, 24.0, 27.0]);
        let z = x.sum_axes(&[0, 2], false).unwrap();
        assert_eq!(z.shape(), vec![3]);
        assert_eq!(z.value().data(), &[14.0, 22.0, 30.0]);
    }

    #[test]
    fn mean_axes_divides_by_reduced_count() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn([2, 4], |i| i as f64));
        let y = x.mean_axes(&[1], false).unwrap();
        assert_eq!(y.value().data(), &[1.5, 5.5]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.25; 8]);
    }
}
