//! Connected components, region selection, bounding boxes and overlap metrics.

use crate::error::{Error, Result};
use crate::tensor::ClipTensor;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    fn include(&mut self, y: usize, x: usize) {
        self.top = self.top.min(y);
        self.left = self.left.min(x);
        self.bottom = self.bottom.max(y);
        self.right = self.right.max(x);
    }
}

/// Intersection over union of two boxes measured in pixels.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let top = a.top.max(b.top);
    let left = a.left.max(b.left);
    let bottom = a.bottom.min(b.bottom);
    let right = a.right.min(b.right);
    if top > bottom || left > right {
        return 0.0;
    }
    let inter = (bottom - top + 1) * (right - left + 1);
    inter as f64 / (a.area() + b.area() - inter) as f64
}

/// A binary `H × W` frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Mismatch(format!("{} pixels for a {height}x{width} mask", pixels.len())));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![false; height * width] }
    }

    /// Frame `t` of channel 0, thresholded at 0.5.
    pub fn from_frame(tensor: &ClipTensor, t: usize) -> Self {
        let s = tensor.shape();
        let pixels = (0..s.h * s.w).map(|i| tensor.get(i / s.w, i % s.w, t, 0) > 0.5).collect();
        Self { height: s.h, width: s.w, pixels }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub label: usize,
    pub area: usize,
    pub bbox: BBox,
}

/// Per-pixel labels (0 = background, regions numbered from 1 in raster
/// discovery order) with a region table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub regions: Vec<Region>,
}

impl LabeledMask {
    /// Pixels of one region as a binary mask.
    pub fn region_mask(&self, label: usize) -> Mask {
        Mask { height: self.height, width: self.width, pixels: self.labels.iter().map(|&l| l == label).collect() }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Two-pass labelling with union-find over provisional labels.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> LabeledMask {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0usize; h * w];
    let mut parent = vec![0usize];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neighbours = [0usize; 4];
            let mut n = 0;
            let mut look = |yy: usize, xx: usize| {
                let l = provisional[yy * w + xx];
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                look(y, x - 1);
            }
            if y > 0 {
                look(y - 1, x);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        look(y - 1, x - 1);
                    }
                    if x + 1 < w {
                        look(y - 1, x + 1);
                    }
                }
            }
            let label = if n == 0 {
                parent.push(parent.len());
                parent.len() - 1
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..n] {
                    union(&mut parent, first, other);
                }
                first
            };
            provisional[y * w + x] = label;
        }
    }

    let mut final_of = vec![0usize; parent.len()];
    let mut regions: Vec<Region> = Vec::new();
    let mut labels = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p);
            if final_of[root] == 0 {
                regions.push(Region {
                    label: regions.len() + 1,
                    area: 0,
                    bbox: BBox { top: y, left: x, bottom: y, right: x },
                });
                final_of[root] = regions.len();
            }
            let label = final_of[root];
            labels[y * w + x] = label;
            let r = &mut regions[label - 1];
            r.area += 1;
            r.bbox.include(y, x);
        }
    }
    LabeledMask { height: h, width: w, labels, regions }
}

/// Region with the greatest area; ties go to the smaller label.
pub fn max_area_region(labeled: &LabeledMask) -> Option<&Region> {
    labeled.regions.iter().fold(None, |best: Option<&Region>, r| match best {
        Some(b) if b.area >= r.area => Some(b),
        _ => Some(r),
    })
}

/// Tightest inclusive rectangle around the set pixels.
pub fn bbox_from_mask(mask: &Mask) -> Result<BBox> {
    let mut bbox: Option<BBox> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                match &mut bbox {
                    Some(b) => b.include(y, x),
                    None => bbox = Some(BBox { top: y, left: x, bottom: y, right: x }),
                }
            }
        }
    }
    bbox.ok_or_else(|| Error::Empty("bounding box of an empty mask".into()))
}

/// `|a ∩ b| / |a ∪ b|`, or 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("masks of {} and {} pixels", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BBox,
    pub score: f64,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruth {
    pub frame: usize,
    pub bbox: BBox,
    pub class: usize,
}

/// All-point interpolated average precision of one class.
fn average_precision(dets: &[&Detection], gts: &[&GroundTruth], alpha: f64) -> f64 {
    let mut order: Vec<&Detection> = dets.to_vec();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut matched = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(order.len());
    for d in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.frame == d.frame)
            .map(|(i, g)| (i, bbox_iou(&d.bbox, &g.bbox)))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        match best {
            Some((i, iou)) if iou >= alpha && !matched[i] => {
                matched[i] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (tp + fp) as f64));
    }
    // precision envelope from the right, then sum over recall steps
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Frame-level mean average precision over classes that have ground truth.
/// Detections are matched greedily by descending score to the
/// highest-overlap box in the same frame; each box is matched at most once.
pub fn frame_map(detections: &[Detection], ground_truth: &[GroundTruth], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("overlap threshold {alpha} not in (0, 1)")));
    }
    let mut classes: Vec<usize> = ground_truth.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::Empty("no ground-truth boxes".into()));
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let dets: Vec<_> = detections.iter().filter(|d| d.class == c).collect();
            let gts: Vec<_> = ground_truth.iter().filter(|g| g.class == c).collect();
            average_precision(&dets, &gts, alpha)
        })
        .sum();
    Ok(total / classes.len() as f64)
}

/// Segmentation and detection scores over a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_iou: f64,
    pub per_sample_iou: Vec<f64>,
    pub frame_map: Option<f64>,
    /// Samples where both prediction and ground truth were empty (scored 1).
    pub both_empty: usize,
}

/// Mean IoU over `(prediction, ground truth)` pairs, with frame mAP when boxes are given.
pub fn evaluate_masks(
    pairs: &[(Vec<bool>, Vec<bool>)],
    boxes: Option<(&[Detection], &[GroundTruth], f64)>,
) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let per_sample_iou = pairs.iter().map(|(p, g)| mask_iou(p, g)).collect::<Result<Vec<_>>>()?;
    let both_empty = pairs.iter().filter(|(p, g)| !p.iter().any(|&v| v) && !g.iter().any(|&v| v)).count();
    let frame_map = boxes.map(|(d, g, a)| frame_map(d, g, a)).transpose()?;
    Ok(EvalResult {
        mean_iou: per_sample_iou.iter().sum::<f64>() / pairs.len() as f64,
        per_sample_iou,
        frame_map,
        both_empty,
    })
}
