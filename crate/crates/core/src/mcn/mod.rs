//! Multi-granulation cooperative networks.
//!
//! A model is a chain of single-granulation networks (SGNs): U-Net style
//! subnetworks of nine two-conv blocks ending in a sub-pixel upscaling
//! layer. Information flows forward through *cooperative connections*
//! (each SGN receives the per-block features of all earlier SGNs, plus
//! their adapted outputs fused into its input) and backward through the
//! *back connection*: a second pass of SGN-1 on the very same weights
//! that consumes every SGN output and the later SGNs' features.
//!
//! Two fusion rules are supported. Residual fusion sums its parts and
//! keeps every channel count unchanged (RMCN); dense fusion concatenates
//! them, which widens the first conv of each block (DMCN). Because SGN-1
//! runs twice on one parameter set, its layout is always sized for the
//! back-connected pass; the plain pass fills the extra slots with zeros.

pub mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ops::concat_channels;
use crate::tensor::{Scalar, Tensor};

/// Default block widths before the width divisor is applied: four encoder
/// blocks, the bottleneck, four decoder blocks.
pub const BASE_BLOCK_WIDTHS: [usize; 9] = [32, 64, 128, 256, 512, 256, 128, 64, 32];

/// Negative slope of every activation in the network.
pub const LRELU_SLOPE: f64 = 0.2;

/// How parts are fused at every connection point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Weighted sum; all parts must share a shape.
    Residual,
    /// Channel concatenation of the weighted parts.
    Dense,
}

/// Fusion rule plus the three connection weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionSpec {
    pub kind: FusionKind,
    /// Weight on adapted SGN outputs fused into a later SGN's input.
    pub alpha_out: f64,
    /// Weight on features injected through the cooperative connection.
    pub beta_coop: f64,
    /// Weight on features injected through the back connection.
    pub beta_back: f64,
}

impl FusionSpec {
    /// Residual fusion with all weights one.
    pub fn residual() -> Self {
        FusionSpec {
            kind: FusionKind::Residual,
            alpha_out: 1.0,
            beta_coop: 1.0,
            beta_back: 1.0,
        }
    }

    /// Dense fusion: weight one on the cooperative connection, zero on the
    /// back connection (the concatenated slots stay, filled with zeros).
    pub fn dense() -> Self {
        FusionSpec {
            kind: FusionKind::Dense,
            alpha_out: 1.0,
            beta_coop: 1.0,
            beta_back: 0.0,
        }
    }
}

/// Architecture of one SGN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SgnConfig {
    pub in_channels: usize,
    pub block_widths: [usize; 9],
    pub upsample_factor: usize,
    pub out_channels: usize,
}

/// Architecture of a whole cooperative network.
#[derive(Debug, Clone, PartialEq)]
pub struct McnConfig {
    pub fusion: FusionSpec,
    pub sgn_count: usize,
    pub in_channels: usize,
    pub upsample_factor: usize,
    /// Every base block width is divided by this for desk-scale models.
    pub width_divisor: usize,
    pub back_connection: bool,
}

impl McnConfig {
    /// Residual model with `n` SGNs at full width for packed Bayer input.
    pub fn rmcn(n: usize) -> Self {
        McnConfig {
            fusion: FusionSpec::residual(),
            sgn_count: n,
            in_channels: 4,
            upsample_factor: 2,
            width_divisor: 1,
            back_connection: true,
        }
    }

    /// Dense model with `n` SGNs at full width for packed Bayer input.
    pub fn dmcn(n: usize) -> Self {
        McnConfig {
            fusion: FusionSpec::dense(),
            sgn_count: n,
            in_channels: 4,
            upsample_factor: 2,
            width_divisor: 1,
            back_connection: true,
        }
    }

    pub fn with_width_divisor(mut self, d: usize) -> Self {
        self.width_divisor = d;
        self
    }

    pub fn without_back_connection(mut self) -> Self {
        self.back_connection = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sgn_count == 0 {
            return Err(Error::Parameter("sgn_count must be at least 1".into()));
        }
        if self.width_divisor == 0 {
            return Err(Error::Parameter("width_divisor must be at least 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Parameter("in_channels must be positive".into()));
        }
        if !(2..=3).contains(&self.upsample_factor) {
            return Err(Error::Parameter(format!(
                "upsample_factor {} must be 2 or 3",
                self.upsample_factor
            )));
        }
        Ok(())
    }

    pub fn sgn_config(&self) -> SgnConfig {
        let mut widths = BASE_BLOCK_WIDTHS;
        for w in &mut widths {
            *w = (*w / self.width_divisor).max(1);
        }
        SgnConfig {
            in_channels: self.in_channels,
            block_widths: widths,
            upsample_factor: self.upsample_factor,
            out_channels: 3,
        }
    }

    /// Concat arity at block outputs for the SGN at 1-based `index`:
    /// how many parts (own last or first) its fusion points combine.
    fn block_arity(&self, index: usize) -> usize {
        match self.fusion.kind {
            FusionKind::Residual => 1,
            FusionKind::Dense => {
                if index == 1 {
                    // Sized for the back pass: own + features of SGNs 2..N.
                    self.sgn_count
                } else {
                    index
                }
            }
        }
    }

    /// Parts fused into the SGN input for the SGN at 1-based `index`.
    fn input_parts(&self, index: usize) -> usize {
        match self.fusion.kind {
            FusionKind::Residual => 1,
            FusionKind::Dense => {
                if index == 1 {
                    // Back pass: all N adapted outputs plus the raw input.
                    self.sgn_count + 1
                } else {
                    index
                }
            }
        }
    }

    /// Total scalar parameter count computed from the shape plan alone;
    /// agrees with [`McnModel::count_params`] without instantiating the
    /// weights.
    pub fn param_count(&self) -> usize {
        let sgn_cfg = self.sgn_config();
        let mut total = 0;
        for i in 1..=self.sgn_count {
            let plan = sgn_plan(&sgn_cfg, self.block_arity(i), self.input_parts(i));
            for b in &plan.blocks {
                if let Some(u) = &b.up {
                    total += u.cin * u.cout * u.k * u.k;
                }
                total += b.conv1.cout * (b.conv1.cin * b.conv1.k * b.conv1.k + 1);
                total += b.conv2.cout * (b.conv2.cin * b.conv2.k * b.conv2.k + 1);
            }
            total += plan.out_conv.cout * (plan.out_conv.cin + 1);
        }
        let f2 = self.upsample_factor * self.upsample_factor;
        total += self.sgn_count * (self.in_channels * 3 * f2 + self.in_channels);
        total
    }
}

struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
}

/// Per-conv shapes of one SGN, in parameter order.
struct SgnPlan {
    blocks: Vec<BlockPlan>,
    out_conv: ConvShape,
}

struct BlockPlan {
    up: Option<ConvShape>,
    conv1: ConvShape,
    conv2: ConvShape,
}

fn sgn_plan(cfg: &SgnConfig, arity: usize, input_parts: usize) -> SgnPlan {
    let w = &cfg.block_widths;
    let mut blocks = Vec::with_capacity(9);
    for j in 0..9 {
        let wj = w[j];
        let (up, cin1) = if j == 0 {
            (None, input_parts * cfg.in_channels)
        } else if j <= 4 {
            // Encoder transition: pool the fused stream of the previous block.
            (None, arity * w[j - 1])
        } else {
            // Decoder transition: upsample the fused stream, then concat the
            // fused skip from the mirrored encoder block.
            let up = ConvShape {
                cin: arity * w[j - 1],
                cout: wj,
                k: 2,
            };
            (Some(up), wj + arity * w[8 - j])
        };
        blocks.push(BlockPlan {
            up,
            conv1: ConvShape {
                cin: cin1,
                cout: wj,
                k: 3,
            },
            conv2: ConvShape {
                cin: wj,
                cout: wj,
                k: 3,
            },
        });
    }
    let f2 = cfg.upsample_factor * cfg.upsample_factor;
    SgnPlan {
        blocks,
        out_conv: ConvShape {
            cin: arity * w[8],
            cout: cfg.out_channels * f2,
            k: 1,
        },
    }
}

struct ConvParams<T: Scalar> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

struct BlockParams<T: Scalar> {
    up: Option<Tensor<T>>,
    conv1: ConvParams<T>,
    conv2: ConvParams<T>,
}

/// Parameters of one SGN.
pub struct SgnParams<T: Scalar> {
    blocks: Vec<BlockParams<T>>,
    out_conv: ConvParams<T>,
}

/// Instantiated cooperative network. SGN-1's parameters serve both its
/// plain pass and the back-connected pass; the back connection therefore
/// contributes no parameters of its own.
pub struct McnModel<T: Scalar = f32> {
    pub config: McnConfig,
    sgns: Vec<SgnParams<T>>,
    adapters: Vec<ConvParams<T>>,
}

fn glorot_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    Tensor::param_from_vec(shape, data).expect("shape/product consistent")
}

fn init_conv<T: Scalar>(shape: &ConvShape, rng: &mut ChaCha8Rng) -> ConvParams<T> {
    let k2 = shape.k * shape.k;
    ConvParams {
        weight: glorot_uniform(
            &[shape.cout, shape.cin, shape.k, shape.k],
            shape.cin * k2,
            shape.cout * k2,
            rng,
        ),
        bias: Tensor::param_from_vec(&[shape.cout], vec![T::zero(); shape.cout]).unwrap(),
    }
}

impl<T: Scalar> McnModel<T> {
    /// Build a model with seeded Glorot-uniform weights and zero biases.
    pub fn init(config: McnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sgn_cfg = config.sgn_config();
        let mut sgns = Vec::with_capacity(config.sgn_count);
        for i in 1..=config.sgn_count {
            let plan = sgn_plan(&sgn_cfg, config.block_arity(i), config.input_parts(i));
            let mut blocks = Vec::with_capacity(9);
            for bp in &plan.blocks {
                let up = bp.up.as_ref().map(|shape| {
                    // Transposed conv weight is (Cin, Cout, k, k), no bias.
                    glorot_uniform(
                        &[shape.cin, shape.cout, shape.k, shape.k],
                        shape.cin * shape.k * shape.k,
                        shape.cout * shape.k * shape.k,
                        &mut rng,
                    )
                });
                blocks.push(BlockParams {
                    up,
                    conv1: init_conv(&bp.conv1, &mut rng),
                    conv2: init_conv(&bp.conv2, &mut rng),
                });
            }
            sgns.push(SgnParams {
                blocks,
                out_conv: init_conv(&plan.out_conv, &mut rng),
            });
        }
        let f2 = config.upsample_factor * config.upsample_factor;
        let adapter_shape = ConvShape {
            cin: 3 * f2,
            cout: config.in_channels,
            k: 1,
        };
        let adapters = (0..config.sgn_count)
            .map(|_| init_conv(&adapter_shape, &mut rng))
            .collect();
        Ok(McnModel {
            config,
            sgns,
            adapters,
        })
    }

    /// All parameters with their checkpoint names, in a stable order.
    ///
    /// Blocks are numbered 1..9; `conv0` is the transposed conv entering a
    /// decoder block (weight only), `block10.conv1` the final 1x1 conv.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (si, sgn) in self.sgns.iter().enumerate() {
            let i = si + 1;
            for (bi, block) in sgn.blocks.iter().enumerate() {
                let j = bi + 1;
                if let Some(up) = &block.up {
                    out.push((format!("sgn{i}.block{j}.conv0.weight"), up.clone()));
                }
                out.push((format!("sgn{i}.block{j}.conv1.weight"), block.conv1.weight.clone()));
                out.push((format!("sgn{i}.block{j}.conv1.bias"), block.conv1.bias.clone()));
                out.push((format!("sgn{i}.block{j}.conv2.weight"), block.conv2.weight.clone()));
                out.push((format!("sgn{i}.block{j}.conv2.bias"), block.conv2.bias.clone()));
            }
            out.push((format!("sgn{i}.block10.conv1.weight"), sgn.out_conv.weight.clone()));
            out.push((format!("sgn{i}.block10.conv1.bias"), sgn.out_conv.bias.clone()));
        }
        for (ai, adapter) in self.adapters.iter().enumerate() {
            let i = ai + 1;
            out.push((format!("adapter{i}.weight"), adapter.weight.clone()));
            out.push((format!("adapter{i}.bias"), adapter.bias.clone()));
        }
        out
    }

    /// Total scalar parameter count. SGN-1 is stored (and counted) once no
    /// matter how often the back connection re-runs it.
    pub fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrite all parameters from `(name, shape, values)` entries.
    /// Every model parameter must be present with a matching shape, and no
    /// extra entry may remain.
    pub fn load_entries(&self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &(String, Vec<usize>, Vec<f32>)> =
            entries.iter().map(|e| (e.0.as_str(), e)).collect();
        for (name, param) in self.named_params() {
            let Some((_, shape, values)) = by_name.remove(name.as_str()) else {
                return Err(Error::Parameter(format!(
                    "checkpoint is missing parameter '{name}'"
                )));
            };
            if shape != param.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                    shape,
                    param.shape()
                )));
            }
            let cast: Vec<T> = values.iter().map(|&v| T::from_f64(v as f64)).collect();
            param.set_data(&cast)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Parameter(format!(
                "checkpoint has unknown parameter '{extra}'"
            )));
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    /// Run a single SGN in isolation: no injected features, raw input.
    pub fn sgn_standalone(&self, index: usize, input: &Tensor<T>) -> Result<SgnPass<T>> {
        let cfg = self.config.sgn_config();
        sgn_forward(&self.sgns[index - 1], &cfg, input, None)
    }

    /// Map a full-resolution 3-channel SGN output back to the packed input
    /// layout: fold space into depth by the upsample factor, then a 1x1 conv
    /// down to the input channel count.
    pub fn adapt_output(&self, index: usize, out3: &Tensor<T>) -> Result<Tensor<T>> {
        let adapter = &self.adapters[index - 1];
        adapt_output_with(adapter, out3, self.config.upsample_factor)
    }
}

fn adapt_output_with<T: Scalar>(
    adapter: &ConvParams<T>,
    out3: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    if out3.shape().len() != 4 || out3.shape()[1] != 3 {
        return Err(Error::Dimension(format!(
            "adapter input must be (n,3,h,w), got {:?}",
            out3.shape()
        )));
    }
    let folded = out3.space_to_depth(factor)?;
    folded.conv2d(&adapter.weight, &adapter.bias, 1, 0)
}

/// Fuse parts with per-part weights: a weighted sum (residual) or the
/// channel concatenation of the weighted parts (dense).
pub fn fuse<T: Scalar>(parts: &[Tensor<T>], weights: &[f64], kind: FusionKind) -> Result<Tensor<T>> {
    if parts.is_empty() || parts.len() != weights.len() {
        return Err(Error::Parameter(format!(
            "fuse: {} parts with {} weights",
            parts.len(),
            weights.len()
        )));
    }
    let scaled = |t: &Tensor<T>, w: f64| if w == 1.0 { t.clone() } else { t.scale(w) };
    match kind {
        FusionKind::Residual => {
            let mut acc = scaled(&parts[0], weights[0]);
            for (p, &w) in parts.iter().zip(weights).skip(1) {
                acc = acc.add(&scaled(p, w))?;
            }
            Ok(acc)
        }
        FusionKind::Dense => {
            let weighted: Vec<Tensor<T>> = parts
                .iter()
                .zip(weights)
                .map(|(p, &w)| scaled(p, w))
                .collect();
            concat_channels(&weighted)
        }
    }
}

/// Features another pass injects into an SGN, one list per block.
pub struct SgnInjection<T: Scalar> {
    /// Injected tensors per block, nine entries. Entry `j` holds the other
    /// SGNs' block-`j+1` features, shape-aligned with this SGN's own.
    pub per_block: Vec<Vec<Tensor<T>>>,
    /// Back-connected passes fuse their own feature first; forward passes
    /// fuse it last.
    pub own_first: bool,
    /// Weight applied to every injected tensor.
    pub weight: f64,
    pub kind: FusionKind,
}

/// Result of one SGN pass.
pub struct SgnPass<T: Scalar> {
    /// Raw block outputs `h_{i,1..9}`, what cooperative connections inject.
    pub features: Vec<Tensor<T>>,
    /// Full-resolution 3-channel output.
    pub output: Tensor<T>,
}

/// Run one SGN over an already-fused input, optionally fusing injected
/// features at every block output.
pub fn sgn_forward<T: Scalar>(
    params: &SgnParams<T>,
    cfg: &SgnConfig,
    input: &Tensor<T>,
    injection: Option<&SgnInjection<T>>,
) -> Result<SgnPass<T>> {
    if input.shape().len() != 4 {
        return Err(Error::Dimension(format!(
            "SGN input must be 4-D, got {:?}",
            input.shape()
        )));
    }
    let (h, w) = (input.shape()[2], input.shape()[3]);
    if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "SGN input spatial dims must be positive multiples of 16, got {h}x{w}"
        )));
    }
    if let Some(inj) = injection {
        if inj.per_block.len() != 9 {
            return Err(Error::ShapeMismatch(format!(
                "injection must carry 9 per-block lists, got {}",
                inj.per_block.len()
            )));
        }
    }

    let mut features = Vec::with_capacity(9);
    let mut fused_streams: Vec<Tensor<T>> = Vec::with_capacity(9);
    let mut cur = input.clone();
    for (j, block) in params.blocks.iter().enumerate() {
        if (1..=4).contains(&j) {
            cur = fused_streams[j - 1].max_pool2()?;
        } else if j >= 5 {
            let up = fused_streams[j - 1].tconv2d(block.up.as_ref().expect("decoder block"), 2)?;
            let skip = &fused_streams[8 - j];
            cur = concat_channels(&[up, skip.clone()])?;
        }
        let a = cur
            .conv2d(&block.conv1.weight, &block.conv1.bias, 1, 1)?
            .lrelu(LRELU_SLOPE);
        let feat = a
            .conv2d(&block.conv2.weight, &block.conv2.bias, 1, 1)?
            .lrelu(LRELU_SLOPE);
        let fused = match injection {
            None => feat.clone(),
            Some(inj) => {
                let others = &inj.per_block[j];
                let mut parts = Vec::with_capacity(others.len() + 1);
                let mut weights = Vec::with_capacity(others.len() + 1);
                if inj.own_first {
                    parts.push(feat.clone());
                    weights.push(1.0);
                }
                for o in others {
                    if o.shape() != feat.shape() {
                        return Err(Error::ShapeMismatch(format!(
                            "injected feature at block {} has shape {:?}, own is {:?}",
                            j + 1,
                            o.shape(),
                            feat.shape()
                        )));
                    }
                    parts.push(o.clone());
                    weights.push(inj.weight);
                }
                if !inj.own_first {
                    parts.push(feat.clone());
                    weights.push(1.0);
                }
                fuse(&parts, &weights, inj.kind)?
            }
        };
        features.push(feat);
        fused_streams.push(fused);
    }
    let pre = fused_streams[8].conv2d(&params.out_conv.weight, &params.out_conv.bias, 1, 0)?;
    let output = pre.depth_to_space(cfg.upsample_factor)?;
    Ok(SgnPass { features, output })
}

/// Everything a full forward pass produces.
pub struct McnOutputs<T: Scalar> {
    /// `h_{i,out}` for i = 1..N. Index 0 is SGN-1's plain pass, which the
    /// loss does not supervise when the back connection is active.
    pub sgn_outputs: Vec<Tensor<T>>,
    /// `h'_{1,out}`, present when the model uses the back connection.
    pub back_output: Option<Tensor<T>>,
    /// Raw per-block features of each forward SGN pass.
    pub features: Vec<Vec<Tensor<T>>>,
    /// Raw per-block features of the back-connected pass.
    pub back_features: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> McnOutputs<T> {
    /// Outputs the reconstruction loss supervises: SGNs 2..N plus the back
    /// output; without a back connection, SGN-1's plain output instead.
    pub fn supervised(&self) -> Vec<Tensor<T>> {
        let mut outs: Vec<Tensor<T>> = self.sgn_outputs[1..].to_vec();
        match &self.back_output {
            Some(b) => outs.push(b.clone()),
            None => outs.insert(0, self.sgn_outputs[0].clone()),
        }
        outs
    }
}

impl<T: Scalar> McnModel<T> {
    /// Full cooperative forward pass.
    pub fn forward(&self, input: &Tensor<T>) -> Result<McnOutputs<T>> {
        let cfg = self.config.sgn_config();
        let fusion = self.config.fusion;
        let n = self.config.sgn_count;
        if input.shape().len() != 4 || input.shape()[1] != cfg.in_channels {
            return Err(Error::Dimension(format!(
                "model expects (n,{},h,w) input, got {:?}",
                cfg.in_channels,
                input.shape()
            )));
        }

        // SGN-1 plain pass. Dense layouts keep their back-pass arity, so the
        // missing parts ride along as zeros.
        let sgn1_input = match fusion.kind {
            FusionKind::Residual => input.clone(),
            FusionKind::Dense => {
                let mut parts = vec![input.zeros_like(); n];
                let mut weights = vec![fusion.alpha_out; n];
                parts.push(input.clone());
                weights.push(1.0);
                fuse(&parts, &weights, FusionKind::Dense)?
            }
        };
        let sgn1_injection = match fusion.kind {
            FusionKind::Residual => None,
            FusionKind::Dense => Some(ZeroInjection {
                slots: n - 1,
                weight: fusion.beta_back,
            }),
        };
        let first = match sgn1_injection {
            None => sgn_forward(&self.sgns[0], &cfg, &sgn1_input, None)?,
            Some(z) => sgn_forward_zero_injected(&self.sgns[0], &cfg, &sgn1_input, z)?,
        };

        let mut outputs = vec![first.output.clone()];
        let mut features = vec![first.features];
        let mut adapted = vec![self.adapt_output(1, &outputs[0])?];

        // SGN-2..N with cooperative connections.
        for i in 2..=n {
            let mut parts: Vec<Tensor<T>> = adapted.clone();
            let mut weights = vec![fusion.alpha_out; parts.len()];
            parts.push(input.clone());
            weights.push(1.0);
            let fused_input = fuse(&parts, &weights, fusion.kind)?;

            let per_block: Vec<Vec<Tensor<T>>> = (0..9)
                .map(|j| features.iter().map(|f| f[j].clone()).collect())
                .collect();
            let injection = SgnInjection {
                per_block,
                own_first: false,
                weight: fusion.beta_coop,
                kind: fusion.kind,
            };
            let pass = sgn_forward(&self.sgns[i - 1], &cfg, &fused_input, Some(&injection))?;
            adapted.push(self.adapt_output(i, &pass.output)?);
            outputs.push(pass.output);
            features.push(pass.features);
        }

        // Back connection: SGN-1 again, same weights, fed everything.
        let (back_output, back_features) = if self.config.back_connection {
            let mut parts: Vec<Tensor<T>> = adapted.clone();
            let mut weights = vec![fusion.alpha_out; parts.len()];
            parts.push(input.clone());
            weights.push(1.0);
            let fused_input = fuse(&parts, &weights, fusion.kind)?;

            // Features of SGNs 2..N only; the plain pass's own features are
            // not re-injected.
            let per_block: Vec<Vec<Tensor<T>>> = (0..9)
                .map(|j| features[1..].iter().map(|f| f[j].clone()).collect())
                .collect();
            let injection = SgnInjection {
                per_block,
                own_first: true,
                weight: fusion.beta_back,
                kind: fusion.kind,
            };
            let pass = sgn_forward(&self.sgns[0], &cfg, &fused_input, Some(&injection))?;
            (Some(pass.output), Some(pass.features))
        } else {
            (None, None)
        };

        Ok(McnOutputs {
            sgn_outputs: outputs,
            back_output,
            features,
            back_features,
        })
    }
}

/// Zero-filled injection slots for SGN-1's plain pass in dense models.
#[derive(Clone, Copy)]
struct ZeroInjection {
    slots: usize,
    weight: f64,
}

fn sgn_forward_zero_injected<T: Scalar>(
    params: &SgnParams<T>,
    cfg: &SgnConfig,
    input: &Tensor<T>,
    zeros: ZeroInjection,
) -> Result<SgnPass<T>> {
    if zeros.slots == 0 {
        return sgn_forward(params, cfg, input, None);
    }
    // Run block by block exactly like sgn_forward, injecting fresh zero
    // tensors shaped after the block's own feature. Delegating through the
    // generic path would need feature shapes up front; building them here
    // keeps one code path per block. The zero tensors are constructed lazily
    // by shape, so we reimplement the loop via the injection struct.
    let mut per_block: Vec<Vec<Tensor<T>>> = Vec::with_capacity(9);
    // Feature shapes: spatial extent of block j, width from the config.
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let batch = input.shape()[0];
    for (j, &width) in cfg.block_widths.iter().enumerate() {
        let shrink = if j <= 4 { 1 << j } else { 1 << (8 - j) };
        let shape = [batch, width, h / shrink, w / shrink];
        per_block.push(vec![Tensor::zeros(&shape); zeros.slots]);
    }
    let injection = SgnInjection {
        per_block,
        own_first: true,
        weight: zeros.weight,
        kind: FusionKind::Dense,
    };
    sgn_forward(params, cfg, input, Some(&injection))
}
