use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{
    conv2d_backward, conv2d_forward, conv2d_param_grads, elementwise_mul, global_avg_pool,
    global_avg_pool_backward, maxpool2d, maxpool2d_backward, PoolIndices, Shape, Tensor,
};

/// Block indices whose outputs are exposed as regularization hook points:
/// the last two of the three conv blocks.
pub const HOOK_BLOCKS: [usize; 2] = [1, 2];

/// Layer sizes of a [`MiniCnn`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_size: usize,
    pub widths: [usize; 3],
    pub num_classes: usize,
}

impl Architecture {
    /// Three blocks of width 32/64/128 on 32×32 inputs.
    pub fn mini(in_channels: usize, num_classes: usize) -> Self {
        Architecture {
            in_channels,
            input_size: 32,
            widths: [32, 64, 128],
            num_classes,
        }
    }

    /// Spatial side length of block `i`'s output.
    pub fn block_output_size(&self, i: usize) -> usize {
        self.input_size >> (i + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes == 0 || self.widths.contains(&0) {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        if !self.input_size.is_multiple_of(8) {
            return Err(Error::invalid(format!(
                "input size {} must be divisible by 8 for three 2x2 pools",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// conv3×3 (pad 1) → ReLU → maxpool 2×2.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

/// Fully connected layer; `weight` is `out × in`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(
        in_features: usize,
        out_features: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if weight.len() != in_features * out_features || bias.len() != out_features {
            return Err(Error::shape(format!(
                "linear {in_features}->{out_features} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Linear {
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.weight[class * self.in_features..(class + 1) * self.in_features]
    }
}

/// Three conv blocks, global average pooling and a linear classifier.
///
/// The same type doubles as a container for gradients and optimizer state
/// (see [`MiniCnn::zeros_like`]).
#[derive(Clone, Debug, PartialEq)]
pub struct MiniCnn {
    arch: Architecture,
    pub blocks: Vec<ConvBlock>,
    pub classifier: Linear,
}

/// What a block's backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Tensor,
    conv_out: Tensor,
    pool: PoolIndices,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    pooled: Tensor,
    feature_shape: Shape,
}

/// Features at both hook points plus the caches needed to backpropagate
/// through them.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub block2: Tensor,
    pub block3: Tensor,
    pub caches: Vec<BlockCache>,
}

/// A recorded training forward pass.
///
/// `hook_scale[i]`, when present, is the factor by which block `i`'s output
/// was multiplied on the way forward (a keep mask, a dropout multiplier…);
/// backward multiplies the incoming gradient by it. Any additive constant
/// injected at a hook carries no gradient.
#[derive(Clone, Debug)]
pub struct Trace {
    pub blocks: Vec<BlockCache>,
    pub hook_scale: Vec<Option<Tensor>>,
    pub head: HeadCache,
    pub logits: Tensor,
}

/// Borrowed view of one named parameter.
pub struct Param<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [f32],
}

pub struct ParamMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a mut [f32],
}

impl MiniCnn {
    /// He-normal conv weights, PyTorch-style uniform classifier, zero conv biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, Stream::Init, &[]);
        let mut cin = arch.in_channels;
        let mut blocks = Vec::with_capacity(3);
        for &cout in &arch.widths {
            let std = (2.0 / (cin * 9) as f32).sqrt();
            let normal = Normal::new(0.0f32, std).expect("finite std");
            let shape = Shape::new(cout, cin, 3, 3);
            let weight = Tensor::from_fn(shape, |_, _, _, _| normal.sample(&mut rng));
            blocks.push(ConvBlock {
                weight,
                bias: vec![0.0; cout],
            });
            cin = cout;
        }
        let bound = 1.0 / (cin as f32).sqrt();
        let weight = (0..cin * arch.num_classes)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..arch.num_classes)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(MiniCnn {
            arch,
            blocks,
            classifier: Linear::new(cin, arch.num_classes, weight, bias)?,
        })
    }

    /// A model-shaped container of zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.values.fill(0.0);
        }
        z
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn params(&self) -> Vec<Param<'_>> {
        let mut out = Vec::with_capacity(8);
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(Param {
                name: format!("block{}.conv.weight", i + 1),
                dims: b.weight.shape().dims().to_vec(),
                values: b.weight.data(),
            });
            out.push(Param {
                name: format!("block{}.conv.bias", i + 1),
                dims: vec![b.bias.len()],
                values: &b.bias,
            });
        }
        let c = &self.classifier;
        out.push(Param {
            name: "classifier.weight".into(),
            dims: vec![c.out_features, c.in_features],
            values: &c.weight,
        });
        out.push(Param {
            name: "classifier.bias".into(),
            dims: vec![c.out_features],
            values: &c.bias,
        });
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::with_capacity(8);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let dims = b.weight.shape().dims().to_vec();
            let nb = b.bias.len();
            out.push(ParamMut {
                name: format!("block{}.conv.weight", i + 1),
                dims,
                values: b.weight.data_mut(),
            });
            out.push(ParamMut {
                name: format!("block{}.conv.bias", i + 1),
                dims: vec![nb],
                values: &mut b.bias,
            });
        }
        let c = &mut self.classifier;
        out.push(ParamMut {
            name: "classifier.weight".into(),
            dims: vec![c.out_features, c.in_features],
            values: &mut c.weight,
        });
        out.push(ParamMut {
            name: "classifier.bias".into(),
            dims: vec![c.out_features],
            values: &mut c.bias,
        });
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let a = &self.arch;
        if s.n == 0 || s.c != a.in_channels || s.h != a.input_size || s.w != a.input_size {
            return Err(Error::shape(format!(
                "model expects (N, {}, {}, {}) input, got {s}",
                a.in_channels, a.input_size, a.input_size
            )));
        }
        Ok(())
    }

    pub fn block_forward(&self, i: usize, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let b = &self.blocks[i];
        let conv_out = conv2d_forward(x, &b.weight, &b.bias, 1, 1)?;
        let (out, pool) = maxpool2d(&conv_out.relu(), 2, 2)?;
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                conv_out,
                pool,
            },
        ))
    }

    /// Block forward that keeps nothing for backprop.
    pub fn block_forward_detached(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let b = &self.blocks[i];
        let conv_out = conv2d_forward(x, &b.weight, &b.bias, 1, 1)?;
        Ok(maxpool2d(&conv_out.relu(), 2, 2)?.0)
    }

    /// Accumulates parameter gradients of block `i` into `grads` and returns
    /// the gradient with respect to the block input (empty for block 0).
    pub fn block_backward(
        &self,
        i: usize,
        cache: &BlockCache,
        grad_out: &Tensor,
        grads: &mut MiniCnn,
    ) -> Result<Tensor> {
        let mut g = maxpool2d_backward(grad_out, &cache.pool)?;
        for (gv, &z) in g.data_mut().iter_mut().zip(cache.conv_out.data()) {
            if z <= 0.0 {
                *gv = 0.0;
            }
        }
        // The image itself needs no gradient.
        let cg = if i == 0 {
            conv2d_param_grads(&g, &cache.input, &self.blocks[i].weight, 1, 1)?
        } else {
            conv2d_backward(&g, &cache.input, &self.blocks[i].weight, 1, 1)?
        };
        let gb = &mut grads.blocks[i];
        for (a, b) in gb.weight.data_mut().iter_mut().zip(cg.weights.data()) {
            *a += b;
        }
        for (a, b) in gb.bias.iter_mut().zip(&cg.bias) {
            *a += b;
        }
        Ok(cg.x)
    }

    /// Both hook-point feature maps for input `x` (`F_pf` at each hook).
    pub fn forward_backbone(&self, x: &Tensor) -> Result<BackboneOutput> {
        self.check_input(x)?;
        let (f1, c1) = self.block_forward(0, x)?;
        let (f2, c2) = self.block_forward(1, &f1)?;
        let (f3, c3) = self.block_forward(2, &f2)?;
        Ok(BackboneOutput {
            block2: f2,
            block3: f3,
            caches: vec![c1, c2, c3],
        })
    }

    /// Hook-point features without retaining any backprop state.
    pub fn forward_backbone_detached(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let f1 = self.block_forward_detached(0, x)?;
        let f2 = self.block_forward_detached(1, &f1)?;
        let f3 = self.block_forward_detached(2, &f2)?;
        Ok((f2, f3))
    }

    /// GAP followed by the linear classifier. Logits have shape `(N, K, 1, 1)`.
    pub fn forward_head(&self, features: &Tensor) -> Result<(Tensor, HeadCache)> {
        let s = features.shape();
        let c = &self.classifier;
        if s.c != c.in_features {
            return Err(Error::shape(format!(
                "head expects {} channels, features have {}",
                c.in_features, s.c
            )));
        }
        let pooled = global_avg_pool(features)?;
        let mut logits = Tensor::zeros(Shape::new(s.n, c.out_features, 1, 1));
        for n in 0..s.n {
            let v = pooled.item(n);
            for (k, out) in logits.item_mut(n).iter_mut().enumerate() {
                *out = c.row(k).iter().zip(v).map(|(w, x)| w * x).sum::<f32>() + c.bias[k];
            }
        }
        Ok((
            logits,
            HeadCache {
                pooled,
                feature_shape: s,
            },
        ))
    }

    pub fn head_backward(
        &self,
        cache: &HeadCache,
        grad_logits: &Tensor,
        grads: &mut MiniCnn,
    ) -> Result<Tensor> {
        let c = &self.classifier;
        let n = cache.feature_shape.n;
        if grad_logits.shape() != Shape::new(n, c.out_features, 1, 1) {
            return Err(Error::shape(format!(
                "head backward: gradient {} for {n} items and {} classes",
                grad_logits.shape(),
                c.out_features
            )));
        }
        let mut grad_pooled = Tensor::zeros(cache.pooled.shape());
        let gc = &mut grads.classifier;
        for i in 0..n {
            let g = grad_logits.item(i);
            let v = cache.pooled.item(i);
            for (k, &gk) in g.iter().enumerate() {
                gc.bias[k] += gk;
                let row = &mut gc.weight[k * c.in_features..(k + 1) * c.in_features];
                for (w, &x) in row.iter_mut().zip(v) {
                    *w += gk * x;
                }
            }
            let gp = grad_pooled.item_mut(i);
            for (j, out) in gp.iter_mut().enumerate() {
                *out = g
                    .iter()
                    .enumerate()
                    .map(|(k, &gk)| gk * c.weight[k * c.in_features + j])
                    .sum();
            }
        }
        global_avg_pool_backward(&grad_pooled, cache.feature_shape)
    }

    /// Plain forward pass. This is the only path used at inference time.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (_, f3) = self.forward_backbone_detached(x)?;
        Ok(self.forward_head(&f3)?.0)
    }

    /// An unregularized forward pass recorded for backprop.
    pub fn forward_train(&self, x: &Tensor) -> Result<Trace> {
        let out = self.forward_backbone(x)?;
        let (logits, head) = self.forward_head(&out.block3)?;
        Ok(Trace {
            blocks: out.caches,
            hook_scale: vec![None, None, None],
            head,
            logits,
        })
    }

    /// Parameter gradients of the traced pass given `∂loss/∂logits`.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<MiniCnn> {
        let mut grads = self.zeros_like();
        let mut g = self.head_backward(&trace.head, grad_logits, &mut grads)?;
        for i in (0..self.blocks.len()).rev() {
            if let Some(scale) = trace.hook_scale.get(i).and_then(Option::as_ref) {
                g = elementwise_mul(&g, scale)?;
            }
            g = self.block_backward(i, &trace.blocks[i], &g, &mut grads)?;
        }
        Ok(grads)
    }
}
