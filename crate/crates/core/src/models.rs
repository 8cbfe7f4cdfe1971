//! Builders for the single-channel network, the dual-channel network, and
//! the ablation variants between them.
//!
//! Every model shares a stem (`Conv -> ReLU -> BN`) and a dense head
//! (`Flatten -> Dense(32, ReLU) -> Dropout(0.5) -> Dense(1, sigmoid)`).
//! Between them sits the deep channel of seven three-conv blocks and,
//! for dual-channel variants, a seven-conv shallow channel whose second and
//! third convs can be bypassed by a pooled identity path. The two channels
//! meet through an elementwise add at `1 x 1 x filters`.
//!
//! A 64 x 64 input allows six 2x2 pools per channel, placed after deep blocks
//! 1-6 and after shallow convs 1-6. Smaller power-of-two inputs (used for
//! gradient checks) pool after as many leading blocks as the size allows.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Layer, LayerGraph, LayerKind, NodeRef};
use crate::tensor::{Element, Tensor};

pub const TAP_STEM: &str = "stem_bn";
pub const TAP_DEEP_FIRST: &str = "deep_b1_conv1";
pub const TAP_SHALLOW_FIRST: &str = "shallow_conv1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Model1,
    Model2Scnn,
    Model3,
    Model4,
    DuccNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantFlags {
    pub channel2: bool,
    pub skip_connection: bool,
    pub conv_block7: bool,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Model1,
        ModelVariant::Model2Scnn,
        ModelVariant::Model3,
        ModelVariant::Model4,
        ModelVariant::DuccNet,
    ];

    pub fn flags(self) -> VariantFlags {
        let (channel2, skip_connection, conv_block7) = match self {
            ModelVariant::Model1 => (false, false, false),
            ModelVariant::Model2Scnn => (false, false, true),
            ModelVariant::Model3 => (true, true, false),
            ModelVariant::Model4 => (true, false, true),
            ModelVariant::DuccNet => (true, true, true),
        };
        VariantFlags {
            channel2,
            skip_connection,
            conv_block7,
        }
    }

    /// Stable lowercase identifier used on the command line and in checkpoints.
    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::Model1 => "model1",
            ModelVariant::Model2Scnn => "scnn",
            ModelVariant::Model3 => "model3",
            ModelVariant::Model4 => "model4",
            ModelVariant::DuccNet => "duccnet",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Model1 => "Model 1",
            ModelVariant::Model2Scnn => "Model 2",
            ModelVariant::Model3 => "Model 3",
            ModelVariant::Model4 => "Model 4",
            ModelVariant::DuccNet => "DuCCNet",
        }
    }

    /// Published validation accuracy of this variant on the photographic
    /// corpus, for side-by-side reporting.
    pub fn reference_accuracy(self) -> f64 {
        match self {
            ModelVariant::Model1 => 79.75,
            ModelVariant::Model2Scnn => 82.50,
            ModelVariant::Model3 => 85.75,
            ModelVariant::Model4 => 89.00,
            ModelVariant::DuccNet => 92.25,
        }
    }

    /// Published trainable-parameter totals, where one was given.
    pub fn reference_params(self) -> Option<u64> {
        match self {
            ModelVariant::Model2Scnn => Some(159_201),
            ModelVariant::DuccNet => Some(233_441),
            _ => None,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace([' ', '_', '-'], "").as_str() {
            "model1" | "m1" => Ok(ModelVariant::Model1),
            "model2" | "m2" | "scnn" | "model2scnn" => Ok(ModelVariant::Model2Scnn),
            "model3" | "m3" => Ok(ModelVariant::Model3),
            "model4" | "m4" => Ok(ModelVariant::Model4),
            "duccnet" | "ducc" => Ok(ModelVariant::DuccNet),
            _ => Err(Error::Config(format!(
                "unknown model variant `{s}` (expected model1, scnn, model3, model4, duccnet)"
            ))),
        }
    }
}

/// Geometry and hyperparameters shared by all builders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square input side; must be a power of two, at least 8.
    pub input_size: usize,
    pub filters: usize,
    pub dense_units: usize,
    pub dropout: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            filters: 32,
            dense_units: 32,
            dropout: 0.5,
            bn_epsilon: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

impl ModelConfig {
    fn pools(&self) -> Result<usize> {
        let n = self.input_size;
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "input size must be a power of two >= 8, got {n}"
            )));
        }
        Ok((n.trailing_zeros() as usize).min(6))
    }
}

const KERNEL: usize = 3;
const DEEP_BLOCKS: usize = 7;
const CONVS_PER_BLOCK: usize = 3;
const SHALLOW_CONVS: usize = 7;

fn deep_channel<T: Element>(
    b: &mut GraphBuilder<T>,
    from: NodeRef,
    cfg: &ModelConfig,
    blocks: usize,
    pools: usize,
) -> Result<NodeRef> {
    let mut h = from;
    for blk in 1..=blocks {
        for c in 1..=CONVS_PER_BLOCK {
            h = b.conv(&format!("deep_b{blk}_conv{c}"), h, cfg.filters, KERNEL)?;
            h = b.relu(&format!("deep_b{blk}_relu{c}"), h)?;
        }
        if blk <= pools {
            h = b.maxpool(&format!("deep_b{blk}_pool"), h)?;
        }
    }
    Ok(h)
}

fn shallow_channel<T: Element>(
    b: &mut GraphBuilder<T>,
    from: NodeRef,
    cfg: &ModelConfig,
    skip: bool,
    pools: usize,
) -> Result<NodeRef> {
    let mut h = b.conv("shallow_conv1", from, cfg.filters, KERNEL)?;
    h = b.relu("shallow_relu1", h)?;
    h = b.batch_norm("shallow_bn", h, cfg.bn_epsilon, cfg.bn_momentum)?;
    h = b.maxpool("shallow_pool1", h)?;
    let skip_source = h;
    for j in 2..=SHALLOW_CONVS {
        h = b.conv(&format!("shallow_conv{j}"), h, cfg.filters, KERNEL)?;
        h = b.relu(&format!("shallow_relu{j}"), h)?;
        if j <= pools {
            h = b.maxpool(&format!("shallow_pool{j}"), h)?;
        }
        if j == 3 && skip {
            let k = b.maxpool("skip_pool1", skip_source)?;
            let k = b.maxpool("skip_pool2", k)?;
            h = b.add("skip_add", h, k)?;
        }
    }
    Ok(h)
}

/// Builds any of the five ablation variants.
pub fn build_variant<T: Element>(
    variant: ModelVariant,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<LayerGraph<T>> {
    let pools = cfg.pools()?;
    let flags = variant.flags();
    let n = cfg.input_size;
    let (mut b, x) = GraphBuilder::<T>::new(&[n, n, 3], seed)?;

    let h = b.conv("stem_conv", x, cfg.filters, KERNEL)?;
    let h = b.relu("stem_relu", h)?;
    let stem = b.batch_norm(TAP_STEM, h, cfg.bn_epsilon, cfg.bn_momentum)?;

    let blocks = if flags.conv_block7 { DEEP_BLOCKS } else { DEEP_BLOCKS - 1 };
    let mut features = deep_channel(&mut b, stem, cfg, blocks, pools)?;
    if flags.channel2 {
        let shallow = shallow_channel(&mut b, stem, cfg, flags.skip_connection, pools)?;
        features = b.add("merge_add", features, shallow)?;
    }

    let h = b.flatten("flatten", features)?;
    let h = b.dense("fc1", h, cfg.dense_units)?;
    let h = b.relu("fc1_relu", h)?;
    let h = b.dropout("dropout", h, cfg.dropout)?;
    let h = b.dense("fc2", h, 1)?;
    let out = b.sigmoid("sigmoid", h)?;
    b.finish(out)
}

/// The single-channel network at full size.
pub fn build_scnn(seed: u64) -> Result<LayerGraph> {
    build_variant(ModelVariant::Model2Scnn, &ModelConfig::default(), seed)
}

/// The dual-channel network at full size.
pub fn build_duccnet(seed: u64) -> Result<LayerGraph> {
    build_variant(ModelVariant::DuccNet, &ModelConfig::default(), seed)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub kind: LayerKind,
    pub shape: String,
    pub trainable: u64,
    pub non_trainable: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
    pub trainable: u64,
    pub non_trainable: u64,
    pub conv_layers: usize,
    pub batch_norm_layers: usize,
    pub add_merges: usize,
}

/// Per-layer parameter counts from layer geometry.
pub fn count_params<T: Element>(graph: &LayerGraph<T>) -> ParamReport {
    let mut rows = Vec::new();
    for node in graph.nodes() {
        let (shape, trainable, non_trainable) = match &node.layer {
            Layer::Conv2D(c) => {
                let s = c.spec;
                let k = s.kernel_size as u64;
                (
                    format!("{}x{}x{}x{} + {}", k, k, s.in_channels, s.out_channels, s.out_channels),
                    (k * k * s.in_channels as u64 + 1) * s.out_channels as u64,
                    0,
                )
            }
            Layer::BatchNorm(bn) => {
                let c = bn.channels() as u64;
                (format!("{c} (gamma, beta | mean, var)"), 2 * c, 2 * c)
            }
            Layer::Dense(d) => {
                let (i, o) = (d.inputs() as u64, d.units() as u64);
                (format!("{i}x{o} + {o}"), (i + 1) * o, 0)
            }
            _ => continue,
        };
        rows.push(ParamRow {
            name: node.id.clone(),
            kind: node.layer.kind(),
            shape,
            trainable,
            non_trainable,
        });
    }
    ParamReport {
        trainable: rows.iter().map(|r| r.trainable).sum(),
        non_trainable: rows.iter().map(|r| r.non_trainable).sum(),
        conv_layers: graph.count(LayerKind::Conv2D),
        batch_norm_layers: graph.count(LayerKind::BatchNorm),
        add_merges: graph.count(LayerKind::AddMerge),
        rows,
    }
}

impl ParamReport {
    /// `name,kind,shape,trainable,non_trainable` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,kind,shape,trainable,non_trainable\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name,
                r.kind.name(),
                r.shape,
                r.trainable,
                r.non_trainable
            ));
        }
        out
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wn = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let ws = self.rows.iter().map(|r| r.shape.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<wn$}  {:<9}  {:<ws$}  {:>9}  {:>13}", "layer", "kind", "shape", "trainable", "non-trainable")?;
        writeln!(f, "{}", "-".repeat(wn + ws + 42))?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<wn$}  {:<9}  {:<ws$}  {:>9}  {:>13}",
                r.name,
                r.kind.name(),
                r.shape,
                r.trainable,
                r.non_trainable
            )?;
        }
        writeln!(f, "{}", "-".repeat(wn + ws + 42))?;
        writeln!(f, "trainable params:     {}", self.trainable)?;
        writeln!(f, "non-trainable params: {}", self.non_trainable)?;
        writeln!(f, "conv layers:          {}", self.conv_layers)?;
        writeln!(f, "batch-norm layers:    {}", self.batch_norm_layers)?;
        write!(f, "add-merges:           {}", self.add_merges)
    }
}

/// Per-filter activations at `tap` for one `(H, W, 3)` image, each
/// min-max normalized to `[0, 1]`. A constant map normalizes to zeros.
pub fn extract_feature_maps<T: Element>(
    graph: &LayerGraph<T>,
    image: &Tensor<T>,
    tap: &str,
) -> Result<Vec<Tensor<T>>> {
    let node = graph
        .node(tap)
        .ok_or_else(|| Error::UnknownNode(tap.to_string()))?;
    let [h, w, c] = *node.output_shape.as_slice() else {
        return Err(Error::InvalidArgument(format!(
            "tap `{tap}` is not a spatial layer (output {:?})",
            node.output_shape
        )));
    };
    let batch = Tensor::stack(&[image])?;
    let out = graph.node_output(&batch, tap)?;
    let data = out.data();
    (0..c)
        .map(|ch| {
            let vals: Vec<T> = (0..h * w).map(|p| data[p * c + ch]).collect();
            let (lo, hi) = vals
                .iter()
                .fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
            let range = hi - lo;
            let norm = if range > T::zero() {
                vals.into_iter().map(|v| (v - lo) / range).collect()
            } else {
                vec![T::zero(); h * w]
            };
            Tensor::new([h, w], norm)
        })
        .collect()
}

/// Writes each `[0, 1]` map as an 8-bit grayscale PNG named
/// `<prefix>_f<index>.png`, plus `<prefix>_grid.png` tiling all maps when
/// `grid` is set. Returns the written paths.
pub fn export_feature_maps(
    maps: &[Tensor<f32>],
    dir: &Path,
    prefix: &str,
    grid: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (i, m) in maps.iter().enumerate() {
        let [h, w] = *m.shape() else {
            return Err(Error::shape("export_feature_maps", format!("map {i} is {:?}", m.shape())));
        };
        let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(m.data()[y as usize * w + x as usize])])
        });
        let path = dir.join(format!("{prefix}_f{i:02}.png"));
        img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        written.push(path);
    }
    if grid && !maps.is_empty() {
        let [h, w] = *maps[0].shape() else { unreachable!() };
        let cols = (maps.len() as f64).sqrt().ceil() as usize;
        let rows = maps.len().div_ceil(cols);
        let gap = 2;
        let gw = cols * w + (cols - 1) * gap;
        let gh = rows * h + (rows - 1) * gap;
        let mut img = image::GrayImage::from_pixel(gw as u32, gh as u32, image::Luma([255]));
        for (i, m) in maps.iter().enumerate() {
            if m.shape() != [h, w] {
                return Err(Error::shape("export_feature_maps", "maps differ in size"));
            }
            let (r, c) = (i / cols, i % cols);
            for y in 0..h {
                for x in 0..w {
                    let px = (c * (w + gap) + x) as u32;
                    let py = (r * (h + gap) + y) as u32;
                    img.put_pixel(px, py, image::Luma([to_u8(m.data()[y * w + x])]));
                }
            }
        }
        let path = dir.join(format!("{prefix}_grid.png"));
        img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}
