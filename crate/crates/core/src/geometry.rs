//! Box preprocessing for building an object-centric image corpus.
//!
//! Annotated boxes are de-duplicated with class-aware NMS, filtered by size
//! and parent containment, and turned into square crop directives. No pixel
//! data is touched here.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crop side relative to the longer box edge.
pub const CROP_SCALE: f64 = 1.1;
/// Boxes with a smaller pixel area are discarded.
pub const MIN_BOX_AREA: f64 = 64.0 * 64.0;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub image_id: String,
    pub image_w: u32,
    pub image_h: u32,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class_id: Option<String>,
}

impl BoxRecord {
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Copy with coordinates clipped to the image bounds.
    pub fn clipped(&self) -> Self {
        let (w, h) = (f64::from(self.image_w), f64::from(self.image_h));
        Self {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
            ..self.clone()
        }
    }

    pub fn iou(&self, other: &BoxRecord) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// True when `self` lies entirely inside `outer`.
    pub fn contained_in(&self, outer: &BoxRecord) -> bool {
        self.x1 >= outer.x1 && self.y1 >= outer.y1 && self.x2 <= outer.x2 && self.y2 <= outer.y2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropDirective {
    pub image_id: String,
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
    pub pad_color: [u8; 3],
    /// The square extends past the image and needs `pad_color` fill.
    pub needs_padding: bool,
}

impl CropDirective {
    /// `(left, top, right, bottom)` of the square in pixel coordinates.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let half = self.side / 2.0;
        (
            self.center_x - half,
            self.center_y - half,
            self.center_x + half,
            self.center_y + half,
        )
    }
}

/// Greedy per-class suppression. Ground-truth boxes carry no scores, so
/// larger boxes win; equal areas keep input order.
pub fn nms(boxes: &[BoxRecord], iou_threshold: f64) -> Result<Vec<BoxRecord>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou threshold {iou_threshold} outside (0, 1]"
        )));
    }
    if let Some(first) = boxes.first() {
        if let Some(other) = boxes.iter().find(|b| b.image_id != first.image_id) {
            return Err(Error::InvalidArgument(format!(
                "nms over mixed images {:?} and {:?}",
                first.image_id, other.image_id
            )));
        }
    }

    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].area().total_cmp(&boxes[a].area()).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            boxes[k].class_id == boxes[i].class_id && boxes[k].iou(&boxes[i]) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| boxes[i].clone()).collect())
}

/// Applies [`nms`] separately to each image, preserving first-seen image order.
pub fn nms_by_image(boxes: &[BoxRecord], iou_threshold: f64) -> Result<Vec<BoxRecord>> {
    let mut groups: Vec<(String, Vec<BoxRecord>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for b in boxes {
        let slot = *index.entry(b.image_id.clone()).or_insert_with(|| {
            groups.push((b.image_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(b.clone());
    }
    let mut out = Vec::with_capacity(boxes.len());
    for (_, group) in groups {
        out.extend(nms(&group, iou_threshold)?);
    }
    Ok(out)
}

/// Square crop of side `1.1 * max(w, h)` centered on the box.
pub fn make_crop_directive(b: &BoxRecord, pad_color: [u8; 3]) -> Result<CropDirective> {
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate box on image {:?}",
            b.image_id
        )));
    }
    let side = CROP_SCALE * b.width().max(b.height());
    let center_x = (b.x1 + b.x2) / 2.0;
    let center_y = (b.y1 + b.y2) / 2.0;
    let half = side / 2.0;
    let needs_padding = center_x - half < 0.0
        || center_y - half < 0.0
        || center_x + half > f64::from(b.image_w)
        || center_y + half > f64::from(b.image_h);
    Ok(CropDirective {
        image_id: b.image_id.clone(),
        center_x,
        center_y,
        side,
        pad_color,
        needs_padding,
    })
}

/// Child class -> parent class.
pub type ClassHierarchy = HashMap<String, String>;

fn check_acyclic(hierarchy: &ClassHierarchy) -> Result<()> {
    for start in hierarchy.keys() {
        let mut seen = HashSet::new();
        let mut cur = start;
        while let Some(parent) = hierarchy.get(cur) {
            if !seen.insert(cur) {
                return Err(Error::CyclicHierarchy(start.clone()));
            }
            cur = parent;
        }
    }
    Ok(())
}

/// Drops boxes under 64x64 px and boxes fully inside a same-image box of
/// their parent class. The parent comes from `hierarchy`, falling back to
/// the record's own `parent_class_id`.
pub fn filter_boxes(boxes: &[BoxRecord], hierarchy: &ClassHierarchy) -> Result<Vec<BoxRecord>> {
    check_acyclic(hierarchy)?;
    let clipped: Vec<BoxRecord> = boxes.iter().map(BoxRecord::clipped).collect();
    Ok(clipped
        .iter()
        .filter(|b| b.area() >= MIN_BOX_AREA)
        .filter(|b| {
            let parent = hierarchy.get(&b.class_id).or(b.parent_class_id.as_ref());
            let Some(parent) = parent else { return true };
            !clipped.iter().any(|outer| {
                outer.image_id == b.image_id && &outer.class_id == parent && b.contained_in(outer)
            })
        })
        .cloned()
        .collect())
}

/// Full pipeline: filter, per-image NMS, then crop directives.
pub fn prepare_crops(
    boxes: &[BoxRecord],
    hierarchy: &ClassHierarchy,
    iou_threshold: f64,
    pad_color: [u8; 3],
) -> Result<Vec<CropDirective>> {
    let filtered = filter_boxes(boxes, hierarchy)?;
    nms_by_image(&filtered, iou_threshold)?
        .iter()
        .map(|b| make_crop_directive(b, pad_color))
        .collect()
}

pub fn read_boxes<R: BufRead>(reader: R) -> Result<Vec<BoxRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_directives<W: Write>(mut writer: W, directives: &[CropDirective]) -> Result<()> {
    for d in directives {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64, class: &str) -> BoxRecord {
        BoxRecord {
            image_id: "img".into(),
            image_w: 500,
            image_h: 500,
            x1,
            y1,
            x2,
            y2,
            class_id: class.into(),
            parent_class_id: None,
        }
    }

    #[test]
    fn identical_boxes_collapse() {
        let b = bx(10.0, 10.0, 100.0, 100.0, "a");
        assert_eq!(nms(&[b.clone(), b], 0.5).unwrap().len(), 1);
    }

    #[test]
    fn disjoint_boxes_survive() {
        let out = nms(
            &[
                bx(0.0, 0.0, 10.0, 10.0, "a"),
                bx(20.0, 20.0, 30.0, 30.0, "a"),
            ],
            0.5,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn nested_box_threshold() {
        // Inner covers 60% of outer: IoU = 60 * 100 / (100 * 100) = 0.6.
        let outer = bx(0.0, 0.0, 100.0, 100.0, "a");
        let inner = bx(0.0, 0.0, 60.0, 100.0, "a");
        assert!((outer.iou(&inner) - 0.6).abs() < 1e-12);
        let kept = nms(&[inner.clone(), outer.clone()], 0.5).unwrap();
        assert_eq!(kept, vec![outer.clone()]);
        assert_eq!(nms(&[inner, outer], 0.7).unwrap().len(), 2);
    }

    #[test]
    fn nms_is_class_aware() {
        let a = bx(0.0, 0.0, 100.0, 100.0, "a");
        let b = bx(0.0, 0.0, 100.0, 100.0, "b");
        assert_eq!(nms(&[a, b], 0.5).unwrap().len(), 2);
    }

    #[test]
    fn nms_threshold_validated() {
        assert!(nms(&[], 0.0).is_err());
        assert!(nms(&[], 1.5).is_err());
        assert!(nms(&[], 1.0).is_ok());
    }

    #[test]
    fn crop_examples() {
        let d = make_crop_directive(&bx(0.0, 0.0, 100.0, 100.0, "a"), [1, 2, 3]).unwrap();
        assert!((d.side - 110.0).abs() < 1e-9);
        assert_eq!((d.center_x, d.center_y), (50.0, 50.0));
        assert!(d.needs_padding);

        let d = make_crop_directive(&bx(10.0, 10.0, 110.0, 60.0, "a"), [0; 3]).unwrap();
        assert!((d.side - 110.0).abs() < 1e-9);
        assert_eq!((d.center_x, d.center_y), (60.0, 35.0));

        let inside = make_crop_directive(&bx(200.0, 200.0, 300.0, 300.0, "a"), [0; 3]).unwrap();
        assert!(!inside.needs_padding);

        assert!(make_crop_directive(&bx(5.0, 5.0, 5.0, 50.0, "a"), [0; 3]).is_err());
    }

    #[test]
    fn size_filter_boundary() {
        let small = bx(0.0, 0.0, 63.0, 63.0, "a");
        let ok = bx(100.0, 100.0, 164.0, 164.0, "a");
        let out = filter_boxes(&[small, ok.clone()], &ClassHierarchy::new()).unwrap();
        assert_eq!(out, vec![ok]);
    }

    #[test]
    fn parent_containment() {
        let face = bx(0.0, 0.0, 300.0, 300.0, "face");
        let nose = bx(100.0, 100.0, 180.0, 180.0, "nose");
        let car = bx(0.0, 0.0, 300.0, 300.0, "car");
        let hierarchy: ClassHierarchy = [("nose".to_string(), "face".to_string())].into();

        let out = filter_boxes(&[face.clone(), nose.clone()], &hierarchy).unwrap();
        assert_eq!(out, vec![face]);
        let out = filter_boxes(&[car.clone(), nose.clone()], &hierarchy).unwrap();
        assert_eq!(out, vec![car, nose.clone()]);

        let mut tagged = nose;
        tagged.parent_class_id = Some("face".into());
        let face = bx(0.0, 0.0, 300.0, 300.0, "face");
        assert_eq!(
            filter_boxes(&[tagged, face.clone()], &ClassHierarchy::new()).unwrap(),
            vec![face]
        );
    }

    #[test]
    fn cyclic_hierarchy_rejected() {
        let hierarchy: ClassHierarchy = [
            ("a".to_string(), "b".to_string()),
            ("b".to_string(), "a".to_string()),
        ]
        .into();
        assert!(matches!(
            filter_boxes(&[], &hierarchy),
            Err(Error::CyclicHierarchy(_))
        ));
    }

    #[test]
    fn boxes_clipped_before_filtering() {
        let mut b = bx(-50.0, -50.0, 60.0, 60.0, "a");
        b.image_w = 500;
        // 110x110 before clipping, 60x60 after.
        assert!(filter_boxes(&[b], &ClassHierarchy::new())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn pipeline_runs_per_image() {
        let mut other = bx(0.0, 0.0, 100.0, 100.0, "a");
        other.image_id = "img2".into();
        let boxes = vec![
            bx(0.0, 0.0, 100.0, 100.0, "a"),
            other,
            bx(0.0, 0.0, 100.0, 100.0, "a"),
        ];
        let out = prepare_crops(&boxes, &ClassHierarchy::new(), 0.5, [0; 3]).unwrap();
        assert_eq!(out.len(), 2);
        let mut buf = Vec::new();
        write_directives(&mut buf, &out).unwrap();
        assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), 2);
    }

    fn arb_box() -> impl Strategy<Value = BoxRecord> {
        (
            0.0f64..400.0,
            0.0f64..400.0,
            1.0f64..200.0,
            1.0f64..200.0,
            0u8..3,
        )
            .prop_map(|(x, y, w, h, c)| bx(x, y, x + w, y + h, &format!("c{c}")))
    }

    proptest! {
        #[test]
        fn nms_subset_and_idempotent(boxes in prop::collection::vec(arb_box(), 0..30), t in 0.05f64..1.0) {
            let once = nms(&boxes, t).unwrap();
            prop_assert!(once.iter().all(|b| boxes.contains(b)));
            prop_assert_eq!(nms(&once, t).unwrap(), once);
        }

        #[test]
        fn crops_are_square_and_cover_box(b in arb_box()) {
            let d = make_crop_directive(&b, [0; 3]).unwrap();
            prop_assert!(d.side >= b.width().max(b.height()) * CROP_SCALE - 1e-9);
            let (l, t, r, bt) = d.bounds();
            prop_assert!(l <= b.x1 && t <= b.y1 && r >= b.x2 && bt >= b.y2);
        }
    }
}
