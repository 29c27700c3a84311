//! Shape inference: resolves a [`ModelSpec`] into concrete per-layer dimensions
//! and the flat parameter layout.

use super::{LayerSpec, Layout, LayoutEntry, ModelSpec};
use crate::error::{Error, Result};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Spatial(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

/// Resolved layer with concrete dimensions and weight offsets.
#[derive(Debug, Clone)]
pub(crate) enum PlanLayer {
    Conv {
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        out_h: usize,
        out_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        w_off: usize,
        b_off: usize,
    },
    Relu {
        len: usize,
    },
    MaxPool {
        c: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        out_h: usize,
        out_w: usize,
    },
    Flatten {
        len: usize,
    },
    Dense {
        in_f: usize,
        out_f: usize,
        w_off: usize,
        b_off: usize,
    },
}

impl PlanLayer {
    pub(crate) fn out_len(&self) -> usize {
        match *self {
            PlanLayer::Conv {
                out_c, out_h, out_w, ..
            } => out_c * out_h * out_w,
            PlanLayer::Relu { len } | PlanLayer::Flatten { len } => len,
            PlanLayer::MaxPool {
                c, out_h, out_w, ..
            } => c * out_h * out_w,
            PlanLayer::Dense { out_f, .. } => out_f,
        }
    }
}

/// A shape-checked model: concrete layer dims, parameter layout, and the
/// position of the final dense layer (whose input is the embedding).
#[derive(Debug, Clone)]
pub struct Plan {
    pub(crate) layers: Vec<PlanLayer>,
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    pub(crate) last_dense: Option<usize>,
    layout: Arc<Layout>,
    fan_ins: Vec<(String, usize)>,
}

impl Plan {
    pub fn from_spec(spec: &ModelSpec) -> Result<Plan> {
        let (c0, h0, w0) = spec.input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::InvalidConfig("input shape must be non-zero".into()));
        }
        if spec.class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be positive".into()));
        }
        let err = |layer: usize, kind: &str, reason: String| Error::ShapeInference {
            layer,
            kind: kind.to_string(),
            reason,
        };

        let mut shape = Shape::Spatial(c0, h0, w0);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut entries: Vec<LayoutEntry> = Vec::new();
        let mut fan_ins: Vec<(String, usize)> = Vec::new();
        let mut offset = 0usize;
        let mut last_dense = None;

        for (i, l) in spec.layers.iter().enumerate() {
            match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let Shape::Spatial(c, h, w) = shape else {
                        return Err(err(i, "conv", "requires spatial input, got flat".into()));
                    };
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(err(i, "conv", "out_channels, kernel, stride must be > 0".into()));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(err(
                            i,
                            "conv",
                            format!("kernel {kernel} larger than padded input {h}x{w}+{padding}"),
                        ));
                    }
                    let out_h = (h + 2 * padding - kernel) / stride + 1;
                    let out_w = (w + 2 * padding - kernel) / stride + 1;
                    let name = format!("conv{i}");
                    let w_off = offset;
                    let w_len = out_channels * c * kernel * kernel;
                    entries.push(LayoutEntry {
                        name: format!("{name}.weight"),
                        shape: vec![out_channels, c, kernel, kernel],
                        offset,
                    });
                    fan_ins.push((format!("{name}.weight"), c * kernel * kernel));
                    offset += w_len;
                    let b_off = offset;
                    entries.push(LayoutEntry {
                        name: format!("{name}.bias"),
                        shape: vec![out_channels],
                        offset,
                    });
                    offset += out_channels;
                    layers.push(PlanLayer::Conv {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: out_channels,
                        out_h,
                        out_w,
                        kernel,
                        stride,
                        padding,
                        w_off,
                        b_off,
                    });
                    shape = Shape::Spatial(out_channels, out_h, out_w);
                }
                LayerSpec::Relu => {
                    layers.push(PlanLayer::Relu { len: shape.len() });
                }
                LayerSpec::MaxPool { kernel } => {
                    let Shape::Spatial(c, h, w) = shape else {
                        return Err(err(i, "maxpool", "requires spatial input, got flat".into()));
                    };
                    if kernel == 0 || h < kernel || w < kernel {
                        return Err(err(
                            i,
                            "maxpool",
                            format!("kernel {kernel} does not fit input {h}x{w}"),
                        ));
                    }
                    let out_h = h / kernel;
                    let out_w = w / kernel;
                    layers.push(PlanLayer::MaxPool {
                        c,
                        in_h: h,
                        in_w: w,
                        kernel,
                        out_h,
                        out_w,
                    });
                    shape = Shape::Spatial(c, out_h, out_w);
                }
                LayerSpec::Flatten => {
                    let len = shape.len();
                    layers.push(PlanLayer::Flatten { len });
                    shape = Shape::Flat(len);
                }
                LayerSpec::Dense { out_features } => {
                    let Shape::Flat(in_f) = shape else {
                        return Err(err(i, "dense", "requires flattened input; insert flatten".into()));
                    };
                    if out_features == 0 {
                        return Err(err(i, "dense", "out_features must be > 0".into()));
                    }
                    let name = format!("dense{i}");
                    let w_off = offset;
                    entries.push(LayoutEntry {
                        name: format!("{name}.weight"),
                        shape: vec![out_features, in_f],
                        offset,
                    });
                    fan_ins.push((format!("{name}.weight"), in_f));
                    offset += out_features * in_f;
                    let b_off = offset;
                    entries.push(LayoutEntry {
                        name: format!("{name}.bias"),
                        shape: vec![out_features],
                        offset,
                    });
                    offset += out_features;
                    layers.push(PlanLayer::Dense {
                        in_f,
                        out_f: out_features,
                        w_off,
                        b_off,
                    });
                    last_dense = Some(layers.len() - 1);
                    shape = Shape::Flat(out_features);
                }
            }
        }

        if shape.len() != spec.class_count {
            return Err(err(
                spec.layers.len().saturating_sub(1),
                "output",
                format!(
                    "final layer width {} does not equal class_count {}",
                    shape.len(),
                    spec.class_count
                ),
            ));
        }

        let layout = Arc::new(Layout {
            entries,
            total_len: offset,
        });
        Ok(Plan {
            layers,
            input_shape: spec.input_shape,
            class_count: spec.class_count,
            last_dense,
            layout,
            fan_ins,
        })
    }

    pub fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    pub fn total_params(&self) -> usize {
        self.layout.total_len
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    /// Width of the embedding (input of the final dense layer), if any dense exists.
    pub fn embed_dim(&self) -> Option<usize> {
        self.last_dense.map(|i| match self.layers[i] {
            PlanLayer::Dense { in_f, .. } => in_f,
            _ => unreachable!(),
        })
    }

    pub(crate) fn fan_in_of(&self, entry_name: &str) -> Option<usize> {
        self.fan_ins
            .iter()
            .find(|(n, _)| n == entry_name)
            .map(|&(_, f)| f)
    }
}
