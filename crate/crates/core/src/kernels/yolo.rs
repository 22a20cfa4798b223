use super::KernelError;
use crate::detect::{BoundingBox, Detection};
use crate::model::YoloSpec;
use crate::tensor::Tensor;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes a YOLO head into boxes in network-input pixels.
///
/// Channel block `a·(5 + classes)` holds `tx, ty, tw, th, objectness, class
/// logits…` for masked anchor `a`. The centre is `(cell + σ(t)) · stride`, the
/// size `anchor · exp(t)`. Confidence is `σ(objectness)`, the class is the
/// arg-max logit. Boxes are clipped to the input and emitted in (row, column,
/// anchor) order; `tile` is left at 0 for the caller to fill in.
pub fn yolo_decode(
    feature: &Tensor,
    spec: &YoloSpec,
    input_size: (usize, usize),
    threshold: f32,
) -> Result<Vec<Detection>, KernelError> {
    let (h, w, c) = feature.shape();
    let expected = spec.expected_channels();
    if c != expected {
        return Err(KernelError::ChannelMismatch { expected, got: c });
    }
    let (in_w, in_h) = (input_size.0 as f32, input_size.1 as f32);
    let (sx, sy) = (in_w / w as f32, in_h / h as f32);
    let anchors = spec.masked_anchors();
    let data = feature.to_f32_vec();
    let block = 5 + spec.classes;
    let mut out = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let cell = &data[(row * w + col) * c..(row * w + col + 1) * c];
            for (a, &(aw, ah)) in anchors.iter().enumerate() {
                let v = &cell[a * block..(a + 1) * block];
                let conf = sigmoid(v[4]);
                if !(conf > threshold) {
                    continue;
                }
                let cx = (col as f32 + sigmoid(v[0])) * sx;
                let cy = (row as f32 + sigmoid(v[1])) * sy;
                let bw = aw * v[2].exp();
                let bh = ah * v[3].exp();
                let bbox = BoundingBox::new(cx - bw / 2.0, cy - bh / 2.0, bw, bh).clip(in_w, in_h);
                if !(bbox.w > 0.0 && bbox.h > 0.0) {
                    continue;
                }
                let class = v[5..]
                    .iter()
                    .enumerate()
                    .fold((0usize, f32::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
                    .0;
                out.push(Detection { class, confidence: conf, bbox, tile: 0 });
            }
        }
    }
    Ok(out)
}
