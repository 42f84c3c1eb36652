use nalgebra::Vector2;

use super::kinematics::FootPositions;
use super::params::NUM_LEGS;
use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Convex ground-plane polygon, vertices in counter-clockwise order.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPolygon {
    pub vertices: Vec<Vec2>,
    pub centroid: Vec2,
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain. Collinear points are dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

impl SupportPolygon {
    /// Build from arbitrary points; fails unless the hull has positive area.
    pub fn from_points(points: &[Vec2]) -> Result<Self> {
        let vertices = convex_hull(points);
        if vertices.len() < 3 {
            return Err(Error::Degenerate(format!(
                "{} distinct non-collinear support points",
                vertices.len()
            )));
        }
        let poly = Self {
            centroid: Vec2::zeros(),
            vertices,
        };
        let area = poly.area();
        let scale = poly
            .vertices
            .iter()
            .map(|v| (v - poly.vertices[0]).norm_squared())
            .fold(0.0, f64::max);
        if area <= 1e-12 * scale.max(1e-300) {
            return Err(Error::Degenerate("collinear support points".into()));
        }
        let centroid = poly.area_centroid();
        Ok(Self { centroid, ..poly })
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
    }

    fn area_centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let o = self.vertices[0];
        let mut acc = Vec2::zeros();
        let mut twice_area = 0.0;
        for i in 1..n - 1 {
            let (a, b) = (self.vertices[i], self.vertices[i + 1]);
            let w = cross(o, a, b);
            acc += w * (o + a + b) / 3.0;
            twice_area += w;
        }
        acc / twice_area
    }

    /// Scale about the centroid so the area shrinks by `margin_fraction`.
    pub fn shrink(&self, margin_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&margin_fraction) {
            return Err(Error::BadMargin(margin_fraction));
        }
        if margin_fraction == 0.0 {
            return Ok(self.clone());
        }
        let s = (1.0 - margin_fraction).sqrt();
        let c = self.centroid;
        Ok(Self {
            vertices: self.vertices.iter().map(|v| c + s * (v - c)).collect(),
            centroid: c,
        })
    }

    /// Inclusive containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        self.signed_distance(p) >= 0.0
    }

    /// Distance from `p` to the nearest edge line, positive inside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                cross(a, b, p) / (b - a).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - self.centroid).norm())
            .fold(0.0, f64::max)
    }
}

/// Convex hull of the ground projections of the feet flagged in contact.
pub fn build_support_polygon(contact_flags: [bool; NUM_LEGS], feet: &FootPositions) -> Result<SupportPolygon> {
    let pts: Vec<Vec2> = feet
        .0
        .iter()
        .zip(contact_flags)
        .filter(|(_, c)| *c)
        .map(|(p, _)| Vec2::new(p.x, p.y))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!("{} contact feet", pts.len())));
    }
    SupportPolygon::from_points(&pts)
}

pub fn shrink_polygon(poly: &SupportPolygon, margin_fraction: f64) -> Result<SupportPolygon> {
    poly.shrink(margin_fraction)
}

pub fn point_in_polygon(point: Vec2, poly: &SupportPolygon) -> bool {
    poly.contains(point)
}
