use super::{conv_output_size, Shape, Tensor};
use crate::error::{Error, Result};

/// Flat input offsets selected by each max-pool output, in output order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Max pooling without padding. Ties resolve to the first position in
/// row-major scan order of the window.
pub fn maxpool2d(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let s = x.shape();
    s.ensure_nonempty("maxpool2d input")?;
    if k == 0 || k > s.h || k > s.w {
        return Err(Error::shape(format!(
            "maxpool2d: window {k} larger than input {s}"
        )));
    }
    let oh = conv_output_size(s.h, k, stride, 0)
        .ok_or_else(|| Error::shape(format!("maxpool2d: invalid stride {stride}")))?;
    let ow = conv_output_size(s.w, k, stride, 0)
        .ok_or_else(|| Error::shape(format!("maxpool2d: invalid stride {stride}")))?;
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    if k == 2 && stride == 2 {
        return Ok(maxpool_2x2(x, out_shape));
    }
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.offset(n, c, 0, 0);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * s.w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * s.w + ox * stride + kx;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(out_shape, out)?,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

/// The common 2×2, stride-2 case, with the same first-wins tie rule.
fn maxpool_2x2(x: &Tensor, out_shape: Shape) -> (Tensor, PoolIndices) {
    let s = x.shape();
    let (oh, ow) = (out_shape.h, out_shape.w);
    let mut out = vec![0.0f32; out_shape.numel()];
    let mut argmax = vec![0usize; out_shape.numel()];
    let data = x.data();
    for (p, (o_plane, a_plane)) in out
        .chunks_exact_mut(oh * ow)
        .zip(argmax.chunks_exact_mut(oh * ow))
        .enumerate()
    {
        let base = p * s.plane();
        for oy in 0..oh {
            let r0 = base + 2 * oy * s.w;
            let r1 = r0 + s.w;
            for ox in 0..ow {
                let cands = [r0 + 2 * ox, r0 + 2 * ox + 1, r1 + 2 * ox, r1 + 2 * ox + 1];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if data[c] > data[best] {
                        best = c;
                    }
                }
                o_plane[oy * ow + ox] = data[best];
                a_plane[oy * ow + ox] = best;
            }
        }
    }
    (
        Tensor::from_vec(out_shape, out).expect("pool output size"),
        PoolIndices {
            input_shape: s,
            argmax,
        },
    )
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2d_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.data().len() != indices.argmax.len() {
        return Err(Error::shape(format!(
            "maxpool2d backward: {} upstream values for {} pooled outputs",
            grad_out.data().len(),
            indices.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(indices.input_shape);
    let dst = grad.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(&indices.argmax) {
        dst[i] += g;
    }
    Ok(grad)
}

/// Mean over the spatial plane of every channel: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    s.ensure_nonempty("global_avg_pool input")?;
    let inv = 1.0 / s.plane() as f32;
    let data = x
        .data()
        .chunks_exact(s.plane())
        .map(|p| p.iter().sum::<f32>() * inv)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: Shape) -> Result<Tensor> {
    let g = grad_out.shape();
    if g.n != input_shape.n || g.c != input_shape.c || g.h != 1 || g.w != 1 {
        return Err(Error::shape(format!(
            "global_avg_pool backward: upstream {g} does not match pooled {input_shape}"
        )));
    }
    let inv = 1.0 / input_shape.plane() as f32;
    let mut out = Tensor::zeros(input_shape);
    for (plane, &v) in out
        .data_mut()
        .chunks_exact_mut(input_shape.plane())
        .zip(grad_out.data())
    {
        plane.fill(v * inv);
    }
    Ok(out)
}
