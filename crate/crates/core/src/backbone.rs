//! Toy siamese feature extractor: a 7x7 stride-2 stem followed by three
//! blocks of two 3x3 convolutions. Block 1 carries the remaining stride
//! (total 8), blocks 2 and 3 keep resolution, so all three block outputs
//! share one spatial size.

use std::collections::BTreeSet;

use rand::Rng;

use crate::binder::Binder;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{ConvGeom, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub block_channels: [usize; 3],
    pub total_stride: usize,
    /// Number of leading stages (stem, block1, ...) excluded from training.
    pub frozen_layers: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stem_channels: 32,
            block_channels: [64, 128, 256],
            total_stride: 8,
            frozen_layers: 2,
        }
    }
}

/// One convolution of the stack.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub name: String,
    /// 0 for the stem, `b` for block `b`.
    pub stage: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_stride != 8 {
            return Err(Error::Config(format!(
                "backbone.total_stride must be 8 (got {})",
                self.total_stride
            )));
        }
        if self.stem_channels == 0 || self.block_channels.contains(&0) {
            return Err(Error::Config("backbone channel counts must be positive".into()));
        }
        if self.frozen_layers > 4 {
            return Err(Error::Config(format!(
                "backbone.frozen_layers {} exceeds the 4 stages",
                self.frozen_layers
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let [c1, c2, c3] = self.block_channels;
        let spec = |name: &str, stage, c_in, c_out, kernel, stride, padding| LayerSpec {
            name: format!("backbone.{name}"),
            stage,
            c_in,
            c_out,
            kernel,
            geom: ConvGeom::new(stride, padding),
        };
        vec![
            spec("stem", 0, 3, self.stem_channels, 7, 2, 0),
            spec("block1.conv1", 1, self.stem_channels, c1, 3, 2, 1),
            spec("block1.conv2", 1, c1, c1, 3, 2, 0),
            spec("block2.conv1", 2, c1, c2, 3, 1, 1),
            spec("block2.conv2", 2, c2, c2, 3, 1, 1),
            spec("block3.conv1", 3, c2, c3, 3, 1, 1),
            spec("block3.conv2", 3, c3, c3, 3, 1, 1),
        ]
    }

    /// Spatial size of every pyramid level for a square input of side `input`.
    pub fn feature_size(&self, input: usize) -> Result<usize> {
        self.layers()
            .iter()
            .try_fold(input, |size, l| l.geom.output_len(size, l.kernel))
    }

    /// Zero-padded convolutions from block 1 onwards that feed level `level`;
    /// this is how many cells at each border of that level see padding.
    pub fn border_cells(&self, level: usize) -> usize {
        let padded_at_stride8 = 2 * level;
        1 + padded_at_stride8
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in self.layers() {
            store.init_conv(&l.name, l.c_out, l.c_in, l.kernel, rng);
        }
    }
}

/// Parameter names excluded from updates: every parameter of the first
/// `frozen_layers` stages.
pub fn freeze_mask(cfg: &BackboneConfig) -> BTreeSet<String> {
    cfg.layers()
        .into_iter()
        .filter(|l| l.stage < cfg.frozen_layers)
        .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
        .collect()
}

/// Outputs of blocks 1-3, identical spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 3],
}

impl FeaturePyramid {
    pub fn channels(&self) -> [usize; 3] {
        [self.levels[0].c(), self.levels[1].c(), self.levels[2].c()]
    }
}

/// Records the backbone on `g`; returns the three level outputs.
pub fn extract_on(g: &mut Graph, binder: &mut Binder, cfg: &BackboneConfig, image: Var) -> Result<[Var; 3]> {
    let shape = g.value(image).shape();
    if shape[1] != 3 {
        return Err(Error::dim("backbone", format!("expected 3 input channels, got {shape:?}")));
    }
    let mut x = image;
    let mut levels = Vec::with_capacity(3);
    for l in cfg.layers() {
        let (w, b) = binder.conv(g, &l.name)?;
        let y = g.conv2d(x, w, Some(b), l.geom)?;
        x = g.relu(y);
        if l.name.ends_with("conv2") {
            levels.push(x);
        }
    }
    Ok([levels[0], levels[1], levels[2]])
}

/// Inference-only extraction; template and search inputs go through the same
/// function and the same weights.
pub fn extract(params: &ParamStore, cfg: &BackboneConfig, image: &Tensor) -> Result<FeaturePyramid> {
    let mut g = Graph::new();
    let mut binder = Binder::frozen(params);
    let x = g.constant(image.clone());
    let [a, b, c] = extract_on(&mut g, &mut binder, cfg, x)?;
    Ok(FeaturePyramid {
        levels: [g.value(a).clone(), g.value(b).clone(), g.value(c).clone()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            stem_channels: 3,
            block_channels: [4, 5, 6],
            total_stride: 8,
            frozen_layers: 2,
        }
    }

    fn setup(cfg: &BackboneConfig) -> ParamStore {
        let mut store = ParamStore::new();
        cfg.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        store
    }

    #[test]
    fn feature_sizes_follow_conv_arithmetic() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.feature_size(127).unwrap(), 15);
        assert_eq!(cfg.feature_size(255).unwrap(), 31);
        assert_eq!(cfg.feature_size(511).unwrap(), 63);
        assert_eq!(cfg.feature_size(63).unwrap(), 7);
        assert!(cfg.feature_size(128).is_err());
    }

    #[test]
    fn extract_shapes_and_weight_sharing() {
        let cfg = tiny();
        let store = setup(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::from_fn([1, 3, 127, 127], |_, _, _, _| rng.random_range(-1.0..1.0));
        let a = extract(&store, &cfg, &img).unwrap();
        let b = extract(&store, &cfg, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.channels(), [4, 5, 6]);
        for l in &a.levels {
            assert_eq!((l.h(), l.w()), (15, 15));
        }
        assert!(extract(&store, &cfg, &Tensor::zeros([1, 4, 127, 127])).is_err());
    }

    #[test]
    fn freeze_mask_covers_stem_and_block1() {
        let mask = freeze_mask(&BackboneConfig::default());
        let expected: BTreeSet<String> = [
            "backbone.stem.weight",
            "backbone.stem.bias",
            "backbone.block1.conv1.weight",
            "backbone.block1.conv1.bias",
            "backbone.block1.conv2.weight",
            "backbone.block1.conv2.bias",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(mask, expected);
        let none = freeze_mask(&BackboneConfig {
            frozen_layers: 0,
            ..BackboneConfig::default()
        });
        assert!(none.is_empty());
    }

    #[test]
    fn translation_covariance_at_stride_granularity() {
        let cfg = tiny();
        let store = setup(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let big = Tensor::from_fn([1, 3, 127, 127 + 8], |_, _, _, _| rng.random_range(-1.0..1.0));
        let window = |dx: usize| Tensor::from_fn([1, 3, 127, 127], |_, c, y, x| big.at(0, c, y, x + dx));
        let a = extract(&store, &cfg, &window(0)).unwrap();
        let b = extract(&store, &cfg, &window(8)).unwrap();
        for (level, (fa, fb)) in a.levels.iter().zip(&b.levels).enumerate() {
            let border = cfg.border_cells(level);
            let size = fa.w();
            for c in 0..fa.c() {
                for y in border..size - border {
                    for x in border..size - border - 1 {
                        assert!((fa.at(0, c, y, x + 1) - fb.at(0, c, y, x)).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
