//! Small DAG executor shared by the reference architectures.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use rand_distr::{Distribution, Normal};

use super::ops::{self, Lowered, Tensor, Upsampler};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ArchSpec, LossFn, Param, SegmentationModel, MINI_DILATED, MINI_UNET};
use crate::seed::rng_for;
use crate::types::CANONICAL_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// Index of the weight tensor; the bias follows it.
    pub param: usize,
}

/// Graph node; sources always refer to earlier nodes. Node 0 is the stem
/// output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Input,
    Conv {
        src: usize,
        layer: usize,
        relu: bool,
    },
    MaxPool {
        src: usize,
    },
    Upsample {
        src: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ConvNet {
    id: &'static str,
    spec: ArchSpec,
    nodes: Vec<Node>,
    layers: Vec<ConvLayer>,
    params: Vec<Param>,
    upsampler_dims: (usize, usize),
}

enum Aux {
    None,
    Conv(Lowered),
    Pool(Vec<u32>),
}

struct Builder {
    nodes: Vec<Node>,
    layers: Vec<ConvLayer>,
    params: Vec<Param>,
    channels: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Self {
            nodes: vec![Node::Input],
            layers: Vec::new(),
            params: Vec::new(),
            channels: vec![1],
        }
    }

    fn push(&mut self, node: Node, channels: usize) -> usize {
        self.nodes.push(node);
        self.channels.push(channels);
        self.nodes.len() - 1
    }

    fn conv(
        &mut self,
        src: usize,
        out_c: usize,
        kernel: usize,
        dilation: usize,
        relu: bool,
    ) -> usize {
        let in_c = self.channels[src];
        let idx = self.layers.len();
        let param = self.params.len();
        self.params.push(Param {
            name: alloc::format!("conv{idx}.weight"),
            shape: vec![out_c, in_c, kernel, kernel],
            value: vec![0.0; out_c * in_c * kernel * kernel],
        });
        self.params.push(Param {
            name: alloc::format!("conv{idx}.bias"),
            shape: vec![out_c],
            value: vec![0.0; out_c],
        });
        self.layers.push(ConvLayer {
            in_c,
            out_c,
            kernel,
            dilation,
            param,
        });
        self.push(
            Node::Conv {
                src,
                layer: idx,
                relu,
            },
            out_c,
        )
    }

    fn pool(&mut self, src: usize) -> usize {
        let c = self.channels[src];
        self.push(Node::MaxPool { src }, c)
    }

    fn up(&mut self, src: usize) -> usize {
        let c = self.channels[src];
        self.push(Node::Upsample { src }, c)
    }

    fn concat(&mut self, a: usize, b: usize) -> usize {
        let c = self.channels[a] + self.channels[b];
        self.push(Node::Concat { a, b }, c)
    }

    fn finish(mut self, id: &'static str, spec: &ArchSpec, seed: u64) -> ConvNet {
        let mut rng = rng_for(seed, &[crate::seed::hash_str(id)]);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let fan_in = (layer.in_c * layer.kernel * layer.kernel) as f32;
            // He init for ReLU layers; the logit layer starts small
            let std = if i == last {
                0.1 / Float::sqrt(fan_in)
            } else {
                Float::sqrt(2.0 / fan_in)
            };
            let normal = Normal::new(0.0f32, std).expect("positive std");
            for w in &mut self.params[layer.param].value {
                *w = normal.sample(&mut rng);
            }
        }
        let inner = CANONICAL_SIZE / spec.stem_pool;
        ConvNet {
            id,
            spec: spec.clone(),
            nodes: self.nodes,
            layers: self.layers,
            params: self.params,
            upsampler_dims: (inner, inner),
        }
    }
}

fn check_spec(spec: &ArchSpec, levels: usize) -> Result<()> {
    let step = spec.stem_pool << levels;
    if spec.stem_pool == 0 || !CANONICAL_SIZE.is_multiple_of(step) {
        return Err(Error::InvalidConfig(alloc::format!(
            "stem_pool {} must divide {} with {} further halvings",
            spec.stem_pool,
            CANONICAL_SIZE,
            levels
        )));
    }
    if spec.base_channels == 0 {
        return Err(Error::InvalidConfig(
            "base_channels must be positive".into(),
        ));
    }
    Ok(())
}

/// Two-level encoder-decoder with skip connections.
pub fn mini_unet(spec: &ArchSpec, seed: u64) -> Result<ConvNet> {
    check_spec(spec, 2)?;
    let c = spec.base_channels;
    let mut b = Builder::new();
    let e0 = b.conv(0, c, 3, 1, true);
    let e0 = b.conv(e0, c, 3, 1, true);
    let p0 = b.pool(e0);
    let e1 = b.conv(p0, 2 * c, 3, 1, true);
    let e1 = b.conv(e1, 2 * c, 3, 1, true);
    let p1 = b.pool(e1);
    let m = b.conv(p1, 4 * c, 3, 1, true);
    let m = b.conv(m, 4 * c, 3, 1, true);
    let u1 = b.up(m);
    let j1 = b.concat(u1, e1);
    let d1 = b.conv(j1, 2 * c, 3, 1, true);
    let u0 = b.up(d1);
    let j0 = b.concat(u0, e0);
    let d0 = b.conv(j0, c, 3, 1, true);
    b.conv(d0, 1, 1, 1, false);
    Ok(b.finish(MINI_UNET, spec, seed))
}

/// Plain stack of dilated convolutions without skips or resolution changes.
pub fn mini_dilated(spec: &ArchSpec, seed: u64) -> Result<ConvNet> {
    check_spec(spec, 0)?;
    let c = spec.base_channels;
    let mut b = Builder::new();
    let mut x = b.conv(0, c, 3, 1, true);
    for d in [2, 4, 8, 1] {
        x = b.conv(x, c, 3, d, true);
    }
    b.conv(x, 1, 1, 1, false);
    Ok(b.finish(MINI_DILATED, spec, seed))
}

impl ConvNet {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    fn check_input(&self, image: &Grid) -> Result<()> {
        if image.dims() != (CANONICAL_SIZE, CANONICAL_SIZE) {
            return Err(Error::ShapeMismatch {
                expected: (CANONICAL_SIZE, CANONICAL_SIZE),
                found: image.dims(),
            });
        }
        Ok(())
    }

    fn run(&self, image: &Grid, keep: bool) -> (Vec<Tensor>, Vec<Aux>) {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let (out, a) = match *node {
                Node::Input => (ops::stem(image, self.spec.stem_pool), Aux::None),
                Node::Conv { src, layer, relu } => {
                    let l = &self.layers[layer];
                    let (mut y, low) = ops::conv_forward(
                        &values[src],
                        &self.params[l.param].value,
                        &self.params[l.param + 1].value,
                        l.out_c,
                        l.kernel,
                        l.dilation,
                    );
                    if relu {
                        ops::relu_inplace(&mut y);
                    }
                    (y, if keep { Aux::Conv(low) } else { Aux::None })
                }
                Node::MaxPool { src } => {
                    let (y, arg) = ops::maxpool2(&values[src]);
                    (y, if keep { Aux::Pool(arg) } else { Aux::None })
                }
                Node::Upsample { src } => (ops::upsample2(&values[src]), Aux::None),
                Node::Concat { a, b } => (ops::concat(&values[a], &values[b]), Aux::None),
            };
            values.push(out);
            aux.push(a);
        }
        (values, aux)
    }

    fn upsampler(&self) -> Upsampler {
        let (w, h) = self.upsampler_dims;
        Upsampler::new(w, h, CANONICAL_SIZE, CANONICAL_SIZE)
    }

    fn probabilities(&self, logits: &Tensor, up: &Upsampler) -> Grid {
        let full = up.forward(&logits.data);
        let probs = full.into_iter().map(ops::sigmoid).collect();
        Grid::new(CANONICAL_SIZE, CANONICAL_SIZE, probs).expect("canonical dims")
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl SegmentationModel for ConvNet {
    fn architecture_id(&self) -> &str {
        self.id
    }

    fn arch_spec(&self) -> &ArchSpec {
        &self.spec
    }

    fn parameters(&self) -> &[Param] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn predict(&self, image: &Grid) -> Result<Grid> {
        self.check_input(image)?;
        let (values, _) = self.run(image, false);
        let probs = self.probabilities(values.last().expect("nonempty graph"), &self.upsampler());
        Ok(if self.spec.binary_output {
            probs.map(|p| if p > 0.5 { 1.0 } else { 0.0 })
        } else {
            probs
        })
    }

    fn accumulate_gradients(
        &self,
        image: &Grid,
        loss: &mut LossFn<'_>,
        grads: &mut [Vec<f32>],
    ) -> Result<f64> {
        self.check_input(image)?;
        if grads.len() != self.params.len() {
            return Err(Error::ParameterMismatch("gradient buffer count".into()));
        }
        let up = self.upsampler();
        let (values, aux) = self.run(image, true);
        let probs = self.probabilities(values.last().expect("nonempty graph"), &up);
        let (value, dprob) = loss(&probs)?;
        probs.ensure_same_dims(&dprob)?;
        let dfull: Vec<f32> = dprob
            .as_slice()
            .iter()
            .zip(probs.as_slice())
            .map(|(&g, &p)| g * p * (1.0 - p))
            .collect();
        let out = values.last().expect("nonempty graph");
        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        *node_grads.last_mut().expect("nonempty graph") = Some(Tensor {
            c: 1,
            h: out.h,
            w: out.w,
            data: up.backward(&dfull),
        });
        for i in (1..self.nodes.len()).rev() {
            let Some(mut g) = node_grads[i].take() else {
                continue;
            };
            match self.nodes[i] {
                Node::Input => {}
                Node::Conv { src, layer, relu } => {
                    if relu {
                        ops::relu_backward_inplace(&mut g, &values[i]);
                    }
                    let l = &self.layers[layer];
                    let Aux::Conv(low) = &aux[i] else {
                        unreachable!("conv cache")
                    };
                    let (gw, rest) = grads[l.param..].split_at_mut(1);
                    let gin = ops::conv_backward(
                        &values[src],
                        low,
                        &self.params[l.param].value,
                        &g,
                        l.kernel,
                        l.dilation,
                        &mut gw[0],
                        &mut rest[0],
                        src != 0,
                    );
                    if let Some(gin) = gin {
                        accumulate(&mut node_grads[src], gin);
                    }
                }
                Node::MaxPool { src } => {
                    let Aux::Pool(arg) = &aux[i] else {
                        unreachable!("pool cache")
                    };
                    let s = &values[src];
                    accumulate(
                        &mut node_grads[src],
                        ops::maxpool2_backward(&g, arg, s.c, s.h, s.w),
                    );
                }
                Node::Upsample { src } => {
                    accumulate(&mut node_grads[src], ops::upsample2_backward(&g))
                }
                Node::Concat { a, b } => {
                    let (ga, gb) = ops::split(&g, values[a].c);
                    accumulate(&mut node_grads[a], ga);
                    accumulate(&mut node_grads[b], gb);
                }
            }
        }
        Ok(value)
    }

    fn clone_box(&self) -> Box<dyn SegmentationModel> {
        Box::new(self.clone())
    }
}

/// Shape multiset signature used to compare architectures.
pub fn shape_signature(model: &dyn SegmentationModel) -> Vec<Vec<usize>> {
    let mut shapes = model.parameter_shapes();
    shapes.sort();
    shapes
}
