//! Inflated 3D ResNet feature extractor and the RGB classification head.
//!
//! The network follows the bottleneck layout `t x 1 x 1 -> 1 x 3 x 3 ->
//! 1 x 1 x 1` with spatial stride 2 at the entry of stages 3-5 and
//! temporal stride 1 everywhere. The temporal max pooling that usually
//! follows the stem is removed so every stage keeps the full clip length,
//! which the per-frame pose head relies on.

use std::collections::HashMap;

use ndarray::{Array2, Array5, ArrayD, Ix2, Ix5};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ops::Relu;
use crate::nn::{BatchNorm, Conv3d, Dropout, GlobalAvgPool3d, Linear, MaxPool2d, Param, Scalar, State};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    /// Bottleneck blocks per stage.
    pub stage_blocks: Vec<usize>,
    /// Channels of the stem convolution before the width divisor.
    pub base_channels: usize,
    /// Temporal kernel of the stem convolution.
    pub conv1_temporal: usize,
    /// Temporal kernel of the first convolution of each stage's blocks.
    pub stage_temporal: Vec<usize>,
    /// Divides all channel counts, for small configurations.
    pub width_divisor: usize,
    /// Expected clip length, for shape checks.
    pub clip_len: usize,
    /// Expected input height = width; must be divisible by 32.
    pub input_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_blocks: vec![3, 4, 6, 3],
            base_channels: 64,
            conv1_temporal: 5,
            stage_temporal: vec![3, 3, 3, 3],
            width_divisor: 1,
            clip_len: 8,
            input_size: 224,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_blocks.len() != 4 || self.stage_temporal.len() != 4 {
            return Err(Error::InvalidConfig(
                "backbone needs exactly 4 stages".into(),
            ));
        }
        if self.stage_blocks.iter().any(|&b| b < 1) {
            return Err(Error::InvalidConfig("stage block counts must be >= 1".into()));
        }
        if self.base_channels < 1 || self.width_divisor < 1 || self.clip_len < 1 {
            return Err(Error::InvalidConfig("counts must be >= 1".into()));
        }
        if self.input_size % 32 != 0 || self.input_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "input size must be divisible by 32, got {}",
                self.input_size
            )));
        }
        if self.conv1_temporal % 2 == 0 || self.stage_temporal.iter().any(|&t| t % 2 == 0) {
            return Err(Error::InvalidConfig(
                "temporal kernels must be odd to preserve clip length".into(),
            ));
        }
        Ok(())
    }

    fn div(&self, c: usize) -> usize {
        (c / self.width_divisor).max(1)
    }

    pub fn stem_channels(&self) -> usize {
        self.div(self.base_channels)
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.div(self.base_channels << stage)
    }

    pub fn stage_out_channels(&self, stage: usize) -> usize {
        self.stage_width(stage) * 4
    }

    /// Channels of the final feature map (2048 for the full configuration).
    pub fn feature_channels(&self) -> usize {
        self.stage_out_channels(3)
    }

    /// Spatial size of the final feature map: input / 32.
    pub fn feature_size(&self) -> usize {
        self.input_size / 32
    }
}

struct Bottleneck<F: Scalar> {
    conv1: Conv3d<F>,
    bn1: BatchNorm<F>,
    relu1: Relu<Ix5>,
    conv2: Conv3d<F>,
    bn2: BatchNorm<F>,
    relu2: Relu<Ix5>,
    conv3: Conv3d<F>,
    bn3: BatchNorm<F>,
    down: Option<(Conv3d<F>, BatchNorm<F>)>,
    relu_out: Relu<Ix5>,
    cache_skip: Option<Array5<F>>,
}

impl<F: Scalar> Bottleneck<F> {
    fn new<R: Rng>(
        name: &str,
        rng: &mut R,
        in_channels: usize,
        width: usize,
        temporal: usize,
        spatial_stride: usize,
    ) -> Self {
        let out_channels = width * 4;
        let stride = (spatial_stride, spatial_stride);
        let conv1 = Conv3d::new(
            &format!("{name}.conv1"),
            rng,
            in_channels,
            width,
            (temporal, 1, 1),
            (1, 1),
            (temporal / 2, 0, 0),
            false,
        );
        let conv2 = Conv3d::new(
            &format!("{name}.conv2"),
            rng,
            width,
            width,
            (1, 3, 3),
            stride,
            (0, 1, 1),
            false,
        );
        let conv3 = Conv3d::new(
            &format!("{name}.conv3"),
            rng,
            width,
            out_channels,
            (1, 1, 1),
            (1, 1),
            (0, 0, 0),
            false,
        );
        let down = (in_channels != out_channels || spatial_stride != 1).then(|| {
            (
                Conv3d::new(
                    &format!("{name}.down"),
                    rng,
                    in_channels,
                    out_channels,
                    (1, 1, 1),
                    stride,
                    (0, 0, 0),
                    false,
                ),
                BatchNorm::new(&format!("{name}.down_bn"), rng, out_channels),
            )
        });
        Bottleneck {
            conv1,
            bn1: BatchNorm::new(&format!("{name}.bn1"), rng, width),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm::new(&format!("{name}.bn2"), rng, width),
            relu2: Relu::new(),
            conv3,
            bn3: BatchNorm::new(&format!("{name}.bn3"), rng, out_channels),
            down,
            relu_out: Relu::new(),
            cache_skip: None,
        }
    }

    fn forward(&mut self, x: &Array5<F>, train: bool) -> Array5<F> {
        let mut y = self.conv1.forward(x, train);
        y = self.bn1.forward5(&y, train);
        y = self.relu1.forward(y, train);
        y = self.conv2.forward(&y, train);
        y = self.bn2.forward5(&y, train);
        y = self.relu2.forward(y, train);
        y = self.conv3.forward(&y, train);
        y = self.bn3.forward5(&y, train);
        let skip = match &mut self.down {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                bn.forward5(&s, train)
            }
            None => x.clone(),
        };
        y += &skip;
        if train && self.down.is_none() {
            // Identity skip: gradient passes straight through.
            self.cache_skip = None;
        }
        self.relu_out.forward(y, train)
    }

    fn backward(&mut self, dy: &Array5<F>) -> Array5<F> {
        let d = self.relu_out.backward(dy.clone());
        let mut g = self.bn3.backward5(&d);
        g = self.conv3.backward(&g);
        g = self.relu2.backward(g);
        g = self.bn2.backward5(&g);
        g = self.conv2.backward(&g);
        g = self.relu1.backward(g);
        g = self.bn1.backward5(&g);
        let dx_main = self.conv1.backward(&g);
        let dx_skip = match &mut self.down {
            Some((conv, bn)) => {
                let s = bn.backward5(&d);
                conv.backward(&s)
            }
            None => d,
        };
        dx_main + &dx_skip
    }
}

impl<F: Scalar> State<F> for Bottleneck<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        self.conv3.collect_params(out);
        self.bn3.collect_params(out);
        if let Some((conv, bn)) = &mut self.down {
            conv.collect_params(out);
            bn.collect_params(out);
        }
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        self.conv1.export_state(out);
        self.bn1.export_state(out);
        self.conv2.export_state(out);
        self.bn2.export_state(out);
        self.conv3.export_state(out);
        self.bn3.export_state(out);
        if let Some((conv, bn)) = &self.down {
            conv.export_state(out);
            bn.export_state(out);
        }
    }

    fn import_state(&mut self, map: &HashMap<String, ArrayD<F>>) -> Result<()> {
        self.conv1.import_state(map)?;
        self.bn1.import_state(map)?;
        self.conv2.import_state(map)?;
        self.bn2.import_state(map)?;
        self.conv3.import_state(map)?;
        self.bn3.import_state(map)?;
        if let Some((conv, bn)) = &mut self.down {
            conv.import_state(map)?;
            bn.import_state(map)?;
        }
        Ok(())
    }
}

pub struct Backbone<F: Scalar> {
    pub cfg: BackboneConfig,
    conv1: Conv3d<F>,
    bn1: BatchNorm<F>,
    relu1: Relu<Ix5>,
    pool1: MaxPool2d,
    stages: Vec<Vec<Bottleneck<F>>>,
    /// `(T, C, H, W)` after the stem, the pool and each stage of the most
    /// recent forward pass.
    pub stage_shapes: Vec<(usize, usize, usize, usize)>,
}

impl<F: Scalar> Backbone<F> {
    pub fn new(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let stem = cfg.stem_channels();
        let conv1 = Conv3d::new(
            "backbone.conv1",
            rng,
            3,
            stem,
            (cfg.conv1_temporal, 7, 7),
            (2, 2),
            (cfg.conv1_temporal / 2, 3, 3),
            false,
        );
        let bn1 = BatchNorm::new("backbone.bn1", rng, stem);
        let mut stages = Vec::new();
        let mut in_channels = stem;
        for stage in 0..4 {
            let width = cfg.stage_width(stage);
            let mut blocks = Vec::new();
            for block in 0..cfg.stage_blocks[stage] {
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                let name = format!("backbone.res{}.{}", stage + 2, block);
                blocks.push(Bottleneck::new(
                    &name,
                    rng,
                    in_channels,
                    width,
                    cfg.stage_temporal[stage],
                    stride,
                ));
                in_channels = width * 4;
            }
            stages.push(blocks);
        }
        Ok(Backbone {
            cfg: cfg.clone(),
            conv1,
            bn1,
            relu1: Relu::new(),
            pool1: MaxPool2d::new(3, 2, 1),
            stages,
            stage_shapes: Vec::new(),
        })
    }

    fn pool_forward(&mut self, x: &Array5<F>, train: bool) -> Array5<F> {
        let (n, t, c, h, w) = x.dim();
        let x4 = x
            .view()
            .into_shape_with_order((n * t, c, h, w))
            .expect("standard layout");
        let y = self.pool1.forward(&x4.to_owned(), train);
        let (_, _, ho, wo) = y.dim();
        y.into_shape_with_order((n, t, c, ho, wo)).expect("restore")
    }

    fn pool_backward(&mut self, dy: &Array5<F>) -> Array5<F> {
        let (n, t, c, h, w) = dy.dim();
        let dy4 = dy
            .view()
            .into_shape_with_order((n * t, c, h, w))
            .expect("standard layout")
            .to_owned();
        let dx = self.pool1.backward(&dy4);
        let (_, _, hi, wi) = dx.dim();
        dx.into_shape_with_order((n, t, c, hi, wi)).expect("restore")
    }

    /// Input `(N, T, 3, H, W)`, output `(N, T, C_feat, H/32, W/32)`.
    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Array5<F> {
        self.stage_shapes.clear();
        let mut y = self.conv1.forward(x, train);
        y = self.bn1.forward5(&y, train);
        y = self.relu1.forward(y, train);
        self.push_shape(&y);
        y = self.pool_forward(&y, train);
        self.push_shape(&y);
        for stage in 0..4 {
            for block in self.stages[stage].iter_mut() {
                y = block.forward(&y, train);
            }
            self.push_shape(&y);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array5<F>) {
        let mut g = dy.clone();
        for stage in (0..4).rev() {
            for block in self.stages[stage].iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        g = self.pool_backward(&g);
        g = self.relu1.backward(g);
        g = self.bn1.backward5(&g);
        self.conv1.backward_weights_only(&g);
    }

    fn push_shape(&mut self, y: &Array5<F>) {
        let (_, t, c, h, w) = y.dim();
        self.stage_shapes.push((t, c, h, w));
    }

    /// Temporal kernel extent of every convolution weight, keyed by tensor
    /// name. Drives 2D-to-3D weight inflation.
    pub fn temporal_extents(&self) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        out.insert("backbone.conv1.weight".to_string(), self.cfg.conv1_temporal);
        for (stage, blocks) in self.stages.iter().enumerate() {
            for block in 0..blocks.len() {
                let name = format!("backbone.res{}.{}", stage + 2, block);
                out.insert(format!("{name}.conv1.weight"), self.cfg.stage_temporal[stage]);
                out.insert(format!("{name}.conv2.weight"), 1);
                out.insert(format!("{name}.conv3.weight"), 1);
                if blocks[block].down.is_some() {
                    out.insert(format!("{name}.down.weight"), 1);
                }
            }
        }
        out
    }

    /// Initializes from a 2D checkpoint by inflating convolution kernels
    /// along time and copying everything else.
    pub fn init_from_2d(&mut self, weights_2d: &HashMap<String, ArrayD<F>>) -> Result<()> {
        let inflated = inflate_weights(weights_2d, &self.temporal_extents())?;
        self.import_state(&inflated)
    }
}

impl<F: Scalar> State<F> for Backbone<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                block.collect_params(out);
            }
        }
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        self.conv1.export_state(out);
        self.bn1.export_state(out);
        for stage in &self.stages {
            for block in stage {
                block.export_state(out);
            }
        }
    }

    fn import_state(&mut self, map: &HashMap<String, ArrayD<F>>) -> Result<()> {
        self.conv1.import_state(map)?;
        self.bn1.import_state(map)?;
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                block.import_state(map)?;
            }
        }
        Ok(())
    }
}

/// Replicates each 2D convolution kernel `kt` times along a new temporal
/// axis, dividing by `kt` so temporally constant inputs produce the same
/// activations; tensors without a temporal extent entry are copied
/// unchanged.
pub fn inflate_weights<F: Scalar>(
    weights_2d: &HashMap<String, ArrayD<F>>,
    temporal_extents: &HashMap<String, usize>,
) -> Result<HashMap<String, ArrayD<F>>> {
    let mut out = HashMap::new();
    for (name, tensor) in weights_2d {
        let Some(&kt) = temporal_extents.get(name) else {
            out.insert(name.clone(), tensor.clone());
            continue;
        };
        let shape = tensor.shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: vec![0, 0, 0, 0],
                got: shape.to_vec(),
            });
        }
        let (co, ci, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
        let scale = F::of(1.0 / kt as f64);
        let mut inflated = ArrayD::<F>::zeros(ndarray::IxDyn(&[co, ci, kt, kh, kw]));
        for t in 0..kt {
            let mut slice = inflated.index_axis_mut(ndarray::Axis(2), t);
            slice.assign(tensor);
            slice.mapv_inplace(|v| v * scale);
        }
        out.insert(name.clone(), inflated);
    }
    Ok(out)
}

/// Global-average-pooled RGB classifier: Y = softmax(W_c P_rgb + b_c) with
/// dropout on P_rgb at train time.
pub struct RgbClassifier<F: Scalar> {
    gap: GlobalAvgPool3d,
    dropout: Dropout<Ix2>,
    pub fc: Linear<F>,
}

impl<F: Scalar> RgbClassifier<F> {
    pub fn new(rng: &mut ChaCha8Rng, feature_channels: usize, num_classes: usize, dropout: f64) -> Self {
        RgbClassifier {
            gap: GlobalAvgPool3d::new(),
            dropout: Dropout::new(dropout),
            fc: Linear::new("rgb_head.fc", rng, feature_channels, num_classes, 0.01),
        }
    }

    /// Returns `(logits, P_rgb)`. `rng = Some` enables dropout (training).
    pub fn forward(
        &mut self,
        features: &Array5<F>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<F>, Array2<F>) {
        let train = rng.is_some();
        let pooled = self.gap.forward(features);
        let dropped = self.dropout.forward(pooled.clone(), rng);
        let logits = self.fc.forward(&dropped, train);
        (logits, pooled)
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) -> Array5<F> {
        let g = self.fc.backward(dlogits);
        let g = self.dropout.backward(g);
        self.gap.backward(&g)
    }

    pub fn weight_matrix(&self) -> ndarray::ArrayView2<'_, F> {
        self.fc
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight")
    }
}

impl<F: Scalar> State<F> for RgbClassifier<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.fc.collect_params(out);
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        self.fc.export_state(out);
    }

    fn import_state(&mut self, map: &HashMap<String, ArrayD<F>>) -> Result<()> {
        self.fc.import_state(map)
    }
}

/// Mean cross-entropy of the RGB logits.
pub fn rgb_loss<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> (F, Array2<F>, Array2<F>) {
    crate::nn::ops::cross_entropy(logits, labels)
}
