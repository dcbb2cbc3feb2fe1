// SPDX-License-Identifier: Apache-2.0

//! Ray casting against the ground plane `z = 0` and axis-aligned boxes.

use crate::geometry::Vec3;

/// Surface id of pixels that hit nothing.
pub const SKY: u32 = 0;
/// Surface id of the ground plane.
pub const GROUND: u32 = 1;

/// Surface id of face `face` (0..6: −x, +x, −y, +y, −z, +z) of box `index`
/// (static boxes first, then dynamic).
pub fn box_surface(index: usize, face: usize) -> u32 {
    2 + 6 * index as u32 + face as u32
}

/// Box index of a box surface id.
pub fn surface_box(surface: u32) -> Option<usize> {
    (surface >= 2).then(|| ((surface - 2) / 6) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center(center: Vec3, size: Vec3) -> Self {
        Self {
            min: center - size / 2.0,
            max: center + size / 2.0,
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Entry distance and entered face along a ray from outside the box.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, usize)> {
        if self.contains(o) {
            return None;
        }
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut face = 0;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (t0, t1) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            let (lo, hi, f) = if t0 < t1 {
                (t0, t1, 2 * a)
            } else {
                (t1, t0, 2 * a + 1)
            };
            if lo > t_near {
                t_near = lo;
                face = f;
            }
            t_far = t_far.min(hi);
        }
        (t_near <= t_far && t_near > 0.0).then_some((t_near, face))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub point: Vec3,
    pub surface: u32,
}

/// Nearest hit of the ray `o + s·d` (`d` need not be unit; `distance` is in
/// units of `d`).
pub fn cast(o: &Vec3, d: &Vec3, boxes: &[Aabb]) -> Option<Hit> {
    let mut best: Option<(f64, u32)> = None;
    if d.z < 0.0 && o.z > 0.0 {
        best = Some((-o.z / d.z, GROUND));
    }
    for (k, b) in boxes.iter().enumerate() {
        if let Some((t, face)) = b.intersect(o, d) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, box_surface(k, face)));
            }
        }
    }
    best.map(|(t, surface)| Hit {
        distance: t,
        point: o + d * t,
        surface,
    })
}
