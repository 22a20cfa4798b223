//! Detections, tile-to-frame remapping and cross-tile duplicate merging.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiling::TilePlan;

pub const DEFAULT_IOU_THRESHOLD: f32 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("detection refers to tile {tile}, plan has {count} tiles")]
    UnknownTile { tile: usize, count: usize },
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BoundingBox {
    pub fn new(x: f32, y: f32, w: f32, h: f32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Intersection with `[0, width] × [0, height]`.
    pub fn clip(&self, width: f32, height: f32) -> Self {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = (self.x + self.w).clamp(0.0, width);
        let y1 = (self.y + self.h).clamp(0.0, height);
        Self { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub confidence: f32,
    pub bbox: BoundingBox,
    /// Tile the detection came from.
    pub tile: usize,
}

/// One line of the detection output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class: usize,
    pub conf: f32,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self { class: d.class, conf: d.confidence, x: d.bbox.x, y: d.bbox.y, w: d.bbox.w, h: d.bbox.h }
    }
}

/// JSON lines, one detection per line, in the given order.
pub fn to_json_lines(ds: &[Detection]) -> String {
    let mut out = String::new();
    for d in ds {
        out.push_str(&serde_json::to_string(&DetectionRecord::from(d)).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f32 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Maps a tile-frame detection into the frame: undo the tile resize, add the tile origin, clip.
pub fn to_global(d: &Detection, plan: &TilePlan) -> Result<Detection, DetectError> {
    let (ox, oy) = *plan
        .origins
        .get(d.tile)
        .ok_or(DetectError::UnknownTile { tile: d.tile, count: plan.origins.len() })?;
    let r = plan.resize_factor as f32;
    let b = BoundingBox {
        x: d.bbox.x / r + ox as f32,
        y: d.bbox.y / r + oy as f32,
        w: d.bbox.w / r,
        h: d.bbox.h / r,
    };
    Ok(Detection { bbox: b.clip(plan.frame_width as f32, plan.frame_height as f32), ..*d })
}

/// Total order used to rank detections before suppression: confidence
/// descending, then position, tile, size and class ascending.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.tile.cmp(&b.tile))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
        .then(a.class.cmp(&b.class))
}

/// Greedy same-class suppression: walk detections best first, keep one
/// unless it overlaps an already kept detection of its class with IoU ≥ `threshold`.
pub fn merge(ds: &[Detection], threshold: f32) -> Vec<Detection> {
    let mut sorted = ds.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if !kept.iter().any(|k| k.class == d.class && iou(&k.bbox, &d.bbox) >= threshold) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::{make_plan, AreaProfile};
    use proptest::prelude::*;

    fn det(class: usize, conf: f32, x: f32, y: f32, w: f32, h: f32, tile: usize) -> Detection {
        Detection { class, confidence: conf, bbox: BoundingBox::new(x, y, w, h), tile }
    }

    #[test]
    fn iou_cases() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BoundingBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BoundingBox::new(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-7);
    }

    #[test]
    fn to_global_translates_and_scales() {
        let a3 = make_plan(&AreaProfile::a3(), 1920, 1080).unwrap();
        let d = det(0, 0.9, 10.0, 10.0, 50.0, 50.0, 0);
        assert_eq!(to_global(&d, &a3).unwrap(), d);
        let idx = a3.origins.iter().position(|&o| o == (1280, 440)).unwrap();
        let g = to_global(&det(0, 0.9, 10.0, 10.0, 50.0, 50.0, idx), &a3).unwrap();
        assert_eq!(g.bbox, BoundingBox::new(1290.0, 450.0, 50.0, 50.0));
        assert!(to_global(&det(0, 0.9, 0.0, 0.0, 1.0, 1.0, 99), &a3).is_err());

        let a12 = make_plan(&AreaProfile::a1a2(), 1920, 1080).unwrap();
        let g = to_global(&det(0, 0.9, 64.0, 32.0, 64.0, 128.0, 1), &a12).unwrap();
        let k = 1080.0f32 / 640.0;
        let expect = BoundingBox::new(420.0 + 64.0 * k, 32.0 * k, 64.0 * k, 128.0 * k);
        for (u, v) in [(g.bbox.x, expect.x), (g.bbox.y, expect.y), (g.bbox.w, expect.w), (g.bbox.h, expect.h)] {
            assert!((u - v).abs() < 1e-3, "{u} vs {v}");
        }
    }

    #[test]
    fn to_global_clips_to_frame() {
        let a3 = make_plan(&AreaProfile::a3(), 1920, 1080).unwrap();
        let last = a3.origins.len() - 1;
        let g = to_global(&det(0, 0.9, 600.0, 600.0, 100.0, 100.0, last), &a3).unwrap();
        assert_eq!(g.bbox, BoundingBox::new(1880.0, 1040.0, 40.0, 40.0));
    }

    #[test]
    fn merge_basics() {
        assert!(merge(&[], 0.5).is_empty());
        let a = det(1, 0.6, 10.0, 10.0, 20.0, 20.0, 0);
        let b = det(1, 0.8, 10.0, 10.0, 20.0, 20.0, 1);
        assert_eq!(merge(&[a, b], 0.5), vec![b]);
        let c = det(2, 0.6, 10.0, 10.0, 20.0, 20.0, 0);
        assert_eq!(merge(&[c, b], 0.5).len(), 2);
    }

    #[test]
    fn json_lines_shape() {
        let s = to_json_lines(&[det(3, 0.5, 1.0, 2.0, 3.0, 4.0, 7)]);
        let v: serde_json::Value = serde_json::from_str(s.trim()).unwrap();
        assert_eq!(v["class"], 3);
        assert_eq!(v["h"], 4.0);
        assert!(v.get("tile").is_none());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (0usize..2, 1u8..10, 0u8..30, 0u8..30, 1u8..20, 1u8..20, 0usize..4).prop_map(|(c, conf, x, y, w, h, t)| {
                det(c, conf as f32 / 10.0, x as f32, y as f32, w as f32, h as f32, t)
            }),
            0..30,
        )
    }

    proptest! {
        #[test]
        fn merge_idempotent_and_permutation_invariant(ds in arb_dets(), seed in any::<u64>()) {
            let once = merge(&ds, 0.5);
            prop_assert_eq!(merge(&once, 0.5), once.clone());
            let mut shuffled = ds.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(merge(&shuffled, 0.5), once.clone());
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    prop_assert!(a.class != b.class || iou(&a.bbox, &b.bbox) < 0.5);
                }
            }
        }
    }
}
