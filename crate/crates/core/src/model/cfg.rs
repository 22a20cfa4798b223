//! Darknet-style `.cfg` reader and writer.
//!
//! Only the inference subset is accepted: `[net]`, `[convolutional]`,
//! `[depthwise_separable]`, `[maxpool]`, `[upsample]`, `[route]` and `[yolo]`.
//! A grouped `[convolutional]` with `groups` equal to its input channels,
//! immediately followed by a 1×1 `[convolutional]`, is folded into one
//! depthwise-separable layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::graph::{
    Activation, ConvSpec, DscSpec, LayerSpec, MaxPoolSpec, ModelGraph, RouteSpec, Shape, UpsampleSpec, YoloSpec,
};
use super::ModelError;

#[derive(Debug)]
struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn check_keys(&self, allowed: &[&str]) -> Result<(), ModelError> {
        for (key, (_, line)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(ModelError::UnknownKey { line: *line, section: self.name.clone(), key: key.clone() });
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn usize_or(&self, key: &str, default: Option<usize>) -> Result<usize, ModelError> {
        match self.raw(key) {
            Some((v, line)) => v.parse().map_err(|_| invalid(line, key, v)),
            None => default.ok_or_else(|| ModelError::MissingKey { line: self.line, section: self.name.clone(), key: key.into() }),
        }
    }

    fn positive(&self, key: &str, default: Option<usize>) -> Result<usize, ModelError> {
        let v = self.usize_or(key, default)?;
        if v == 0 {
            let line = self.raw(key).map_or(self.line, |(_, l)| l);
            return Err(invalid(line, key, "0"));
        }
        Ok(v)
    }

    fn flag(&self, key: &str) -> Result<bool, ModelError> {
        match self.usize_or(key, Some(0))? {
            0 => Ok(false),
            1 => Ok(true),
            _ => {
                let (v, line) = self.raw(key).unwrap();
                Err(invalid(line, key, v))
            }
        }
    }

    fn activation(&self) -> Result<Activation, ModelError> {
        match self.raw("activation") {
            None => Ok(Activation::Linear),
            Some((v, line)) => Activation::parse(v).ok_or_else(|| invalid(line, "activation", v)),
        }
    }

    /// `padding` wins over the `pad` flag, which means `size / 2`.
    fn conv_padding(&self, size: usize) -> Result<usize, ModelError> {
        if self.raw("padding").is_some() {
            self.usize_or("padding", None)
        } else if self.flag("pad")? {
            Ok(size / 2)
        } else {
            Ok(0)
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ModelError> {
        let (v, line) = self
            .raw(key)
            .ok_or_else(|| ModelError::MissingKey { line: self.line, section: self.name.clone(), key: key.into() })?;
        v.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|_| invalid(line, key, v)))
            .collect()
    }
}

fn invalid(line: usize, key: &str, value: &str) -> ModelError {
    ModelError::InvalidValue { line, key: key.into(), value: value.into() }
}

fn sections(text: &str) -> Result<Vec<Section>, ModelError> {
    let mut out: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ModelError::Syntax { line, message: format!("unterminated section header `{content}`") })?
                .trim()
                .to_ascii_lowercase();
            if name.is_empty() {
                return Err(ModelError::Syntax { line, message: "empty section name".into() });
            }
            out.push(Section { name, line, entries: BTreeMap::new() });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ModelError::Syntax { line, message: format!("expected `key=value`, found `{content}`") })?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(ModelError::Syntax { line, message: "empty key".into() });
        }
        let section = out
            .last_mut()
            .ok_or_else(|| ModelError::Syntax { line, message: "key outside of any section".into() })?;
        if section.entries.insert(key.clone(), (value.trim().to_string(), line)).is_some() {
            return Err(ModelError::Syntax { line, message: format!("duplicate key `{key}`") });
        }
    }
    Ok(out)
}

const CONV_KEYS: &[&str] = &["filters", "size", "stride", "pad", "padding", "activation", "batch_normalize", "groups"];
const DSC_KEYS: &[&str] =
    &["filters", "size", "stride", "pad", "padding", "activation", "batch_normalize", "depthwise_bias"];

fn conv_spec(s: &Section) -> Result<(ConvSpec, usize), ModelError> {
    s.check_keys(CONV_KEYS)?;
    let size = s.positive("size", None)?;
    Ok((
        ConvSpec {
            filters: s.positive("filters", None)?,
            size,
            stride: s.positive("stride", Some(1))?,
            padding: s.conv_padding(size)?,
            activation: s.activation()?,
            batch_normalize: s.flag("batch_normalize")?,
        },
        s.positive("groups", Some(1))?,
    ))
}

/// Parses cfg text into an unbound graph with resolved shapes.
pub fn parse_cfg(text: &str) -> Result<ModelGraph, ModelError> {
    let secs = sections(text)?;
    let Some(net) = secs.first() else {
        return Err(ModelError::Syntax { line: 1, message: "empty cfg".into() });
    };
    if net.name != "net" && net.name != "network" {
        return Err(ModelError::Syntax { line: net.line, message: format!("first section must be [net], found [{}]", net.name) });
    }
    net.check_keys(&["height", "width", "channels"])?;
    let input = Shape::new(net.positive("height", None)?, net.positive("width", None)?, net.positive("channels", Some(3))?);
    let mut graph = ModelGraph { input, layers: Vec::new() };

    // cfg section index -> graph layer index; `None` for folded depthwise stages
    let mut index_map: Vec<Option<usize>> = Vec::new();
    let body = &secs[1..];
    let mut i = 0;
    while i < body.len() {
        let s = &body[i];
        let cfg_index = i;
        let spec = match s.name.as_str() {
            "convolutional" | "conv" => {
                let (conv, groups) = conv_spec(s)?;
                if groups == 1 {
                    LayerSpec::Convolutional(conv)
                } else {
                    let cin = graph.output_shape().channels;
                    let next = body.get(i + 1).filter(|n| n.name == "convolutional" || n.name == "conv");
                    let shape_err = |message: String| ModelError::Shape { layer: graph.layers.len(), message };
                    if groups != cin || conv.filters != cin {
                        return Err(shape_err(format!(
                            "grouped convolution needs groups == filters == input channels ({cin}), got groups={groups}, filters={}",
                            conv.filters
                        )));
                    }
                    if conv.batch_normalize || conv.activation != Activation::Linear {
                        return Err(shape_err("depthwise stage must be linear without batch_normalize".into()));
                    }
                    let Some(next) = next else {
                        return Err(shape_err("depthwise stage must be followed by a 1x1 [convolutional]".into()));
                    };
                    let (pw, pw_groups) = conv_spec(next)?;
                    if pw.size != 1 || pw.stride != 1 || pw.padding != 0 || pw_groups != 1 {
                        return Err(shape_err("pointwise stage must be size=1, stride=1, no padding, groups=1".into()));
                    }
                    index_map.push(None);
                    i += 1;
                    LayerSpec::DepthwiseSeparable(DscSpec {
                        filters: pw.filters,
                        size: conv.size,
                        stride: conv.stride,
                        padding: conv.padding,
                        activation: pw.activation,
                        batch_normalize: pw.batch_normalize,
                        depthwise_bias: true,
                    })
                }
            }
            "depthwise_separable" | "dsconv" => {
                s.check_keys(DSC_KEYS)?;
                let size = s.positive("size", None)?;
                LayerSpec::DepthwiseSeparable(DscSpec {
                    filters: s.positive("filters", None)?,
                    size,
                    stride: s.positive("stride", Some(1))?,
                    padding: s.conv_padding(size)?,
                    activation: s.activation()?,
                    batch_normalize: s.flag("batch_normalize")?,
                    depthwise_bias: s.flag("depthwise_bias")?,
                })
            }
            "maxpool" => {
                s.check_keys(&["size", "stride", "padding"])?;
                let stride = s.positive("stride", Some(1))?;
                let size = s.positive("size", Some(stride))?;
                LayerSpec::Maxpool(MaxPoolSpec { size, stride, padding: s.usize_or("padding", Some(size - 1))? })
            }
            "upsample" => {
                s.check_keys(&["stride"])?;
                LayerSpec::Upsample(UpsampleSpec { stride: s.positive("stride", Some(2))? })
            }
            "route" => {
                s.check_keys(&["layers"])?;
                let line = s.raw("layers").map_or(s.line, |(_, l)| l);
                let rel: Vec<isize> = s.list("layers")?;
                if rel.is_empty() {
                    return Err(ModelError::MissingKey { line, section: s.name.clone(), key: "layers".into() });
                }
                let mut layers = Vec::with_capacity(rel.len());
                for r in rel {
                    let target = if r < 0 { cfg_index as isize + r } else { r };
                    if target < 0 || target >= cfg_index as isize {
                        return Err(ModelError::ForwardRoute { layer: graph.layers.len(), target });
                    }
                    let mapped = index_map[target as usize].ok_or_else(|| ModelError::Shape {
                        layer: graph.layers.len(),
                        message: format!("route targets folded depthwise stage {target}"),
                    })?;
                    layers.push(mapped);
                }
                LayerSpec::Route(RouteSpec { layers })
            }
            "yolo" => {
                s.check_keys(&["mask", "anchors", "classes", "num"])?;
                let flat: Vec<f32> = s.list("anchors")?;
                let (_, line) = s.raw("anchors").unwrap();
                if flat.len() % 2 != 0 || flat.is_empty() || flat.iter().any(|v| !(*v > 0.0)) {
                    return Err(invalid(line, "anchors", "odd count or non-positive anchor"));
                }
                let anchors: Vec<(f32, f32)> = flat.chunks(2).map(|p| (p[0], p[1])).collect();
                let mask: Vec<usize> = if s.raw("mask").is_some() { s.list("mask")? } else { (0..anchors.len()).collect() };
                if mask.is_empty() || mask.iter().any(|&m| m >= anchors.len()) {
                    let (v, l) = s.raw("mask").unwrap_or(("", s.line));
                    return Err(invalid(l, "mask", v));
                }
                if let Some((v, l)) = s.raw("num") {
                    if v.parse::<usize>().ok() != Some(anchors.len()) {
                        return Err(invalid(l, "num", v));
                    }
                }
                LayerSpec::Yolo(YoloSpec { mask, anchors, classes: s.positive("classes", None)? })
            }
            other => return Err(ModelError::UnknownSection { line: s.line, name: other.to_string() }),
        };
        graph.push(spec)?;
        index_map.push(Some(graph.layers.len() - 1));
        i += 1;
    }
    Ok(graph)
}

/// Writes the normalized cfg for `g`; [`parse_cfg`] of the result reproduces `g`'s layers.
pub fn write_cfg(g: &ModelGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[net]\nheight={}\nwidth={}\nchannels={}", g.input.height, g.input.width, g.input.channels);
    for layer in &g.layers {
        out.push('\n');
        let _ = writeln!(out, "[{}]", layer.spec.kind_name());
        match &layer.spec {
            LayerSpec::Convolutional(c) => {
                let _ = writeln!(
                    out,
                    "filters={}\nsize={}\nstride={}\npadding={}\nactivation={}\nbatch_normalize={}",
                    c.filters,
                    c.size,
                    c.stride,
                    c.padding,
                    c.activation.name(),
                    c.batch_normalize as u8
                );
            }
            LayerSpec::DepthwiseSeparable(d) => {
                let _ = writeln!(
                    out,
                    "filters={}\nsize={}\nstride={}\npadding={}\nactivation={}\nbatch_normalize={}\ndepthwise_bias={}",
                    d.filters,
                    d.size,
                    d.stride,
                    d.padding,
                    d.activation.name(),
                    d.batch_normalize as u8,
                    d.depthwise_bias as u8
                );
            }
            LayerSpec::Maxpool(m) => {
                let _ = writeln!(out, "size={}\nstride={}\npadding={}", m.size, m.stride, m.padding);
            }
            LayerSpec::Upsample(u) => {
                let _ = writeln!(out, "stride={}", u.stride);
            }
            LayerSpec::Route(r) => {
                let list: Vec<String> = r.layers.iter().map(|l| l.to_string()).collect();
                let _ = writeln!(out, "layers={}", list.join(","));
            }
            LayerSpec::Yolo(y) => {
                let mask: Vec<String> = y.mask.iter().map(|m| m.to_string()).collect();
                let anchors: Vec<String> = y.anchors.iter().map(|(w, h)| format!("{w},{h}")).collect();
                let _ = writeln!(
                    out,
                    "mask={}\nanchors={}\nclasses={}\nnum={}",
                    mask.join(","),
                    anchors.join(", "),
                    y.classes,
                    y.anchors.len()
                );
            }
        }
    }
    out
}
