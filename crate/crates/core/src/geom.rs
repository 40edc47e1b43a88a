//! Overlap and containment predicates for yaw-oriented boxes.

use crate::config::CollisionMetric;
use crate::error::{Error, Result};
use crate::model::Box3D;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapReport<T: Scalar = f64> {
    pub intersection_volume: T,
    pub union_volume: T,
    pub iou: T,
    /// Intersection over the volume of the first box. Not symmetric.
    pub collision_fraction: T,
}

impl<T: Scalar> OverlapReport<T> {
    fn from_intersection(a: &Box3D<T>, b: &Box3D<T>, inter: T) -> Self {
        let va = a.volume();
        let vb = b.volume();
        let inter = inter.max(T::zero()).min(va.min(vb));
        let union = va + vb - inter;
        Self {
            intersection_volume: inter,
            union_volume: union,
            iou: (inter / union).min(T::one()),
            collision_fraction: (inter / va).min(T::one()),
        }
    }
}

fn interval_overlap<T: Scalar>(a: (T, T), b: (T, T)) -> T {
    (a.1.min(b.1) - a.0.max(b.0)).max(T::zero())
}

pub fn iou_axis_aligned<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> Result<OverlapReport<T>> {
    if a.yaw != T::zero() || b.yaw != T::zero() {
        return Err(Error::YawedBox);
    }
    let half = T::lit(0.5);
    let inter = (0..3)
        .map(|ax| {
            let ha = a.size[ax] * half;
            let hb = b.size[ax] * half;
            interval_overlap(
                (a.center[ax] - ha, a.center[ax] + ha),
                (b.center[ax] - hb, b.center[ax] + hb),
            )
        })
        .fold(T::one(), |acc, d| acc * d);
    Ok(OverlapReport::from_intersection(a, b, inter))
}

/// Ground-plane polygon intersection of the two yawed rectangles times the
/// vertical interval overlap.
pub fn iou_bev_rotated<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> OverlapReport<T> {
    let dz = interval_overlap(a.z_range(), b.z_range());
    let inter = if dz > T::zero() {
        // Clip in a fixed order so that swapping the arguments gives the
        // same rounding.
        let (first, second) = if box_order(a, b).is_le() { (a, b) } else { (b, a) };
        let poly = clip_convex(&first.bev_corners(), &second.bev_corners());
        polygon_area(&poly) * dz
    } else {
        T::zero()
    };
    OverlapReport::from_intersection(a, b, inter)
}

fn box_order<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> std::cmp::Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Axis-aligned arithmetic when both yaws are zero, polygon clipping otherwise.
pub fn overlap<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> OverlapReport<T> {
    iou_axis_aligned(a, b).unwrap_or_else(|_| iou_bev_rotated(a, b))
}

pub fn iou<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    overlap(a, b).iou
}

/// Overlap of `pseudo` against a reference box under the chosen metric.
pub fn collision<T: Scalar>(pseudo: &Box3D<T>, reference: &Box3D<T>, metric: CollisionMetric) -> T {
    let r = overlap(pseudo, reference);
    match metric {
        CollisionMetric::Fraction => r.collision_fraction,
        CollisionMetric::Iou => r.iou,
    }
}

/// Closed-boundary containment of `p` in the box frame.
pub fn contains_point<T: Scalar>(b: &Box3D<T>, p: &[T; 3]) -> bool {
    let dx = p[0] - b.center[0];
    let dy = p[1] - b.center[1];
    let dz = p[2] - b.center[2];
    let (s, c) = b.yaw.sin_cos();
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    let half = T::lit(0.5);
    lx.abs() <= b.size[0] * half && ly.abs() <= b.size[1] * half && dz.abs() <= b.size[2] * half
}

fn cross<T: Scalar>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_line_intersection<T: Scalar>(s: [T; 2], e: [T; 2], p1: [T; 2], p2: [T; 2]) -> [T; 2] {
    let ds = cross(p1, p2, s);
    let de = cross(p1, p2, e);
    let t = ds / (ds - de);
    [s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]
}

/// Sutherland-Hodgman clip of `subject` against the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let p1 = clip[i];
        let p2 = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().expect("non-empty");
        for &cur in &input {
            let cur_in = cross(p1, p2, cur) >= T::zero();
            let prev_in = cross(p1, p2, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, p1, p2));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, p1, p2));
            }
            prev = cur;
        }
    }
    output
}

/// Shoelace area, absolute value.
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut twice = T::zero();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - a[1] * b[0];
    }
    (twice * T::lit(0.5)).abs()
}
