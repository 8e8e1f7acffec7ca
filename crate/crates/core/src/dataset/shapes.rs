//! Procedural shapes with area-uniform surface sampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const MIN_DIM: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Ring,
    Chair,
    Lamp,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Ring, ShapeKind::Chair, ShapeKind::Lamp];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Ring => "ring",
            ShapeKind::Chair => "chair",
            ShapeKind::Lamp => "lamp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown shape kind {s:?}")))
    }
}

/// Dimensions of one procedural shape. All lengths are in arbitrary units;
/// sampled clouds are normalized afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeSpec {
    Box {
        size: [f64; 3],
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// Torus in the x-z plane.
    Ring {
        major: f64,
        minor: f64,
    },
    /// Seat slab, four legs and an optional back slab.
    Chair {
        seat: [f64; 3],
        leg_height: f64,
        leg_width: f64,
        back_height: Option<f64>,
    },
    /// Disk base, thin pole and an open conical shade.
    Lamp {
        base_radius: f64,
        base_height: f64,
        pole_radius: f64,
        pole_height: f64,
        shade_bottom: f64,
        shade_top: f64,
        shade_height: f64,
    },
}

/// Surface patch in shape coordinates (y up).
#[derive(Clone, Debug, PartialEq)]
enum Patch {
    /// `origin + s * u + t * v`, `s, t` in `[0, 1]`.
    Rect { origin: [f64; 3], u: [f64; 3], v: [f64; 3] },
    /// Horizontal disk.
    Disk { centre: [f64; 3], radius: f64 },
    /// Open side of a vertical frustum from `y0` (radius `r0`) to `y0 + h`
    /// (radius `r1`).
    Frustum { centre: [f64; 3], r0: f64, r1: f64, h: f64 },
    /// Torus about the y axis.
    Torus { centre: [f64; 3], major: f64, minor: f64 },
}

/// A labelled group of patches, e.g. one chair leg.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub name: String,
    patches: Vec<Patch>,
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl Patch {
    fn area(&self) -> f64 {
        match *self {
            Patch::Rect { u, v, .. } => norm(cross(u, v)),
            Patch::Disk { radius, .. } => PI * radius * radius,
            Patch::Frustum { r0, r1, h, .. } => PI * (r0 + r1) * ((r1 - r0).powi(2) + h * h).sqrt(),
            Patch::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Patch::Rect { origin, u, v } => {
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                std::array::from_fn(|k| origin[k] + s * u[k] + t * v[k])
            }
            Patch::Disk { centre, radius } => {
                let r = radius * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..2.0 * PI);
                [centre[0] + r * a.cos(), centre[1], centre[2] + r * a.sin()]
            }
            Patch::Frustum { centre, r0, r1, h } => {
                // Density along the height is proportional to the radius.
                let rmax = r0.max(r1);
                let t = loop {
                    let t: f64 = rng.gen();
                    if rng.gen::<f64>() * rmax <= r0 + (r1 - r0) * t {
                        break t;
                    }
                };
                let r = r0 + (r1 - r0) * t;
                let a = rng.gen_range(0.0..2.0 * PI);
                [centre[0] + r * a.cos(), centre[1] + t * h, centre[2] + r * a.sin()]
            }
            Patch::Torus { centre, major, minor } => {
                let phi = loop {
                    let phi = rng.gen_range(0.0..2.0 * PI);
                    if rng.gen::<f64>() * (major + minor) <= major + minor * phi.cos() {
                        break phi;
                    }
                };
                let theta = rng.gen_range(0.0..2.0 * PI);
                let ring = major + minor * phi.cos();
                [centre[0] + ring * theta.cos(), centre[1] + minor * phi.sin(), centre[2] + ring * theta.sin()]
            }
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Patch::Rect { origin, u, v } => {
                let corners = [origin, add(origin, u), add(origin, v), add(add(origin, u), v)];
                let lo = std::array::from_fn(|k| corners.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min));
                let hi = std::array::from_fn(|k| corners.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max));
                (lo, hi)
            }
            Patch::Disk { centre: c, radius: r } => ([c[0] - r, c[1], c[2] - r], [c[0] + r, c[1], c[2] + r]),
            Patch::Frustum { centre: c, r0, r1, h } => {
                let r = r0.max(r1);
                ([c[0] - r, c[1], c[2] - r], [c[0] + r, c[1] + h, c[2] + r])
            }
            Patch::Torus { centre: c, major, minor } => {
                let r = major + minor;
                ([c[0] - r, c[1] - minor, c[2] - r], [c[0] + r, c[1] + minor, c[2] + r])
            }
        }
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Six faces of the axis-aligned box `[lo, lo + size]`.
fn cuboid(lo: [f64; 3], size: [f64; 3]) -> Vec<Patch> {
    let [sx, sy, sz] = size;
    let hi = add(lo, size);
    vec![
        Patch::Rect { origin: lo, u: [0.0, sy, 0.0], v: [0.0, 0.0, sz] },
        Patch::Rect { origin: [hi[0], lo[1], lo[2]], u: [0.0, sy, 0.0], v: [0.0, 0.0, sz] },
        Patch::Rect { origin: lo, u: [sx, 0.0, 0.0], v: [0.0, 0.0, sz] },
        Patch::Rect { origin: [lo[0], hi[1], lo[2]], u: [sx, 0.0, 0.0], v: [0.0, 0.0, sz] },
        Patch::Rect { origin: lo, u: [sx, 0.0, 0.0], v: [0.0, sy, 0.0] },
        Patch::Rect { origin: [lo[0], lo[1], hi[2]], u: [sx, 0.0, 0.0], v: [0.0, sy, 0.0] },
    ]
}

fn cylinder(base: [f64; 3], radius: f64, height: f64, caps: bool) -> Vec<Patch> {
    let mut p = vec![Patch::Frustum { centre: base, r0: radius, r1: radius, h: height }];
    if caps {
        p.push(Patch::Disk { centre: base, radius });
        p.push(Patch::Disk { centre: add(base, [0.0, height, 0.0]), radius });
    }
    p
}

fn part(name: &str, patches: Vec<Patch>) -> Part {
    Part { name: name.into(), patches }
}

impl Part {
    /// Axis-aligned bounds in shape coordinates.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.patches {
            let (a, b) = p.bounds();
            for k in 0..3 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
        }
        (lo, hi)
    }

    fn area(&self) -> f64 {
        self.patches.iter().map(Patch::area).sum()
    }
}

fn check(dims: &[f64]) -> Result<()> {
    match dims.iter().find(|&&d| !(d.is_finite() && d > MIN_DIM)) {
        Some(d) => Err(Error::Degenerate(format!("dimension {d} must exceed {MIN_DIM}"))),
        None => Ok(()),
    }
}

impl ShapeSpec {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeSpec::Box { .. } => ShapeKind::Box,
            ShapeSpec::Cylinder { .. } => ShapeKind::Cylinder,
            ShapeSpec::Ring { .. } => ShapeKind::Ring,
            ShapeSpec::Chair { .. } => ShapeKind::Chair,
            ShapeSpec::Lamp { .. } => ShapeKind::Lamp,
        }
    }

    /// Random dimensions for `kind`.
    pub fn random(kind: ShapeKind, rng: &mut impl Rng) -> Self {
        match kind {
            ShapeKind::Box => ShapeSpec::Box { size: [rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0)] },
            ShapeKind::Cylinder => ShapeSpec::Cylinder { radius: rng.gen_range(0.2..0.5), height: rng.gen_range(0.4..1.0) },
            ShapeKind::Ring => {
                let major = rng.gen_range(0.3..0.5);
                ShapeSpec::Ring { major, minor: major * rng.gen_range(0.15..0.4) }
            }
            ShapeKind::Chair => ShapeSpec::Chair {
                seat: [rng.gen_range(0.4..0.6), rng.gen_range(0.04..0.08), rng.gen_range(0.4..0.6)],
                leg_height: rng.gen_range(0.3..0.5),
                leg_width: rng.gen_range(0.04..0.08),
                back_height: rng.gen_bool(0.8).then(|| rng.gen_range(0.3..0.6)),
            },
            ShapeKind::Lamp => ShapeSpec::Lamp {
                base_radius: rng.gen_range(0.15..0.25),
                base_height: rng.gen_range(0.03..0.06),
                pole_radius: rng.gen_range(0.015..0.03),
                pole_height: rng.gen_range(0.5..0.8),
                shade_bottom: rng.gen_range(0.2..0.3),
                shade_top: rng.gen_range(0.08..0.15),
                shade_height: rng.gen_range(0.15..0.3),
            },
        }
    }

    /// Labelled surface parts in shape coordinates.
    pub fn parts(&self) -> Result<Vec<Part>> {
        Ok(match *self {
            ShapeSpec::Box { size } => {
                check(&size)?;
                vec![part("box", cuboid([0.0; 3], size))]
            }
            ShapeSpec::Cylinder { radius, height } => {
                check(&[radius, height])?;
                vec![part("cylinder", cylinder([0.0; 3], radius, height, true))]
            }
            ShapeSpec::Ring { major, minor } => {
                check(&[major, minor])?;
                if minor >= major {
                    return Err(Error::Degenerate("ring minor radius must be below the major radius".into()));
                }
                vec![part("ring", vec![Patch::Torus { centre: [0.0; 3], major, minor }])]
            }
            ShapeSpec::Chair { seat, leg_height, leg_width, back_height } => {
                check(&[seat[0], seat[1], seat[2], leg_height, leg_width])?;
                if let Some(b) = back_height {
                    check(&[b])?;
                }
                if 2.0 * leg_width >= seat[0].min(seat[2]) {
                    return Err(Error::Degenerate("chair legs wider than the seat".into()));
                }
                let mut parts = vec![part("seat", cuboid([0.0, leg_height, 0.0], seat))];
                let (xs, zs) = (seat[0] - leg_width, seat[2] - leg_width);
                for (i, (x, z)) in [(0.0, 0.0), (xs, 0.0), (0.0, zs), (xs, zs)].into_iter().enumerate() {
                    parts.push(part(&format!("leg{i}"), cuboid([x, 0.0, z], [leg_width, leg_height, leg_width])));
                }
                if let Some(b) = back_height {
                    let y = leg_height + seat[1];
                    parts.push(part("back", cuboid([0.0, y, 0.0], [seat[0], b, seat[1]])));
                }
                parts
            }
            ShapeSpec::Lamp { base_radius, base_height, pole_radius, pole_height, shade_bottom, shade_top, shade_height } => {
                check(&[base_radius, base_height, pole_radius, pole_height, shade_bottom, shade_top, shade_height])?;
                let top = base_height + pole_height;
                vec![
                    part("base", cylinder([0.0; 3], base_radius, base_height, true)),
                    part("pole", cylinder([0.0, base_height, 0.0], pole_radius, pole_height, false)),
                    part(
                        "shade",
                        vec![Patch::Frustum { centre: [0.0, top - shade_height * 0.5, 0.0], r0: shade_bottom, r1: shade_top, h: shade_height }],
                    ),
                ]
            }
        })
    }
}

/// Translation and scale taking a bounding box into the unit cube centred at
/// the origin: `p' = (p - centre) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub centre: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn of_bounds(lo: [f64; 3], hi: [f64; 3]) -> Self {
        let centre = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        Normalization { centre, scale: 1.0 / extent }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (p[k] - self.centre[k]) * self.scale)
    }
}

/// Area-uniform surface samples with the index of the part each came from,
/// normalized to the unit cube by the analytic part bounds.
pub fn gen_shape_labeled(spec: &ShapeSpec, n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>, Normalization)> {
    if n == 0 {
        return Err(Error::Invalid("cannot sample zero points".into()));
    }
    let parts = spec.parts()?;
    let mut patches = Vec::new();
    for (pi, part) in parts.iter().enumerate() {
        for p in &part.patches {
            patches.push((pi, p));
        }
    }
    let mut cum = Vec::with_capacity(patches.len());
    let mut total = 0.0;
    for (_, p) in &patches {
        total += p.area();
        cum.push(total);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for part in &parts {
        let (a, b) = part.bounds();
        for k in 0..3 {
            lo[k] = lo[k].min(a[k]);
            hi[k] = hi[k].max(b[k]);
        }
    }
    let norm = Normalization::of_bounds(lo, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let i = cum.partition_point(|&c| c <= r).min(patches.len() - 1);
        let (pi, patch) = patches[i];
        points.push(norm.apply(patch.sample(&mut rng)));
        labels.push(pi);
    }
    Ok((PointCloud::new(points)?, labels, norm))
}

/// Area-uniform surface samples normalized into the unit cube at the origin.
pub fn gen_shape(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(gen_shape_labeled(spec, n, seed)?.0)
}

/// Total surface area in shape coordinates.
pub fn surface_area(spec: &ShapeSpec) -> Result<f64> {
    Ok(spec.parts()?.iter().map(Part::area).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_faces_are_balanced() {
        let (cloud, _, _) = gen_shape_labeled(&ShapeSpec::Box { size: [1.0; 3] }, 6000, 1).unwrap();
        let mut counts = [0usize; 6];
        for p in cloud.points() {
            // Each point lies on exactly one face plane (up to edges).
            let face = (0..3)
                .flat_map(|k| [(k, -0.5), (k, 0.5)])
                .position(|(k, s)| (p[k] - s).abs() < 1e-12)
                .expect("on a face");
            counts[face] += 1;
        }
        // Binomial(6000, 1/6): sigma = sqrt(6000 * 1/6 * 5/6) ~ 28.9.
        let sigma = (6000.0f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn degenerate_dimensions_are_rejected() {
        assert!(matches!(gen_shape(&ShapeSpec::Cylinder { radius: 0.0, height: 1.0 }, 10, 0), Err(Error::Degenerate(_))));
        assert!(gen_shape(&ShapeSpec::Cylinder { radius: 1e-9, height: 1.0 }, 10, 0).is_err());
        assert!(gen_shape(&ShapeSpec::Ring { major: 0.2, minor: 0.3 }, 10, 0).is_err());
        assert!(gen_shape(&ShapeSpec::Box { size: [1.0, f64::NAN, 1.0] }, 10, 0).is_err());
    }

    #[test]
    fn chair_parts_all_receive_samples_inside_their_bounds() {
        let spec = ShapeSpec::Chair { seat: [0.5, 0.06, 0.5], leg_height: 0.4, leg_width: 0.06, back_height: Some(0.45) };
        let parts = spec.parts().unwrap();
        assert_eq!(parts.len(), 6);
        let (cloud, labels, norm) = gen_shape_labeled(&spec, 16384, 3).unwrap();
        let mut counts = vec![0; parts.len()];
        for (p, &l) in cloud.points().iter().zip(&labels) {
            let (lo, hi) = parts[l].bounds();
            let (lo, hi) = (norm.apply(lo), norm.apply(hi));
            assert!((0..3).all(|k| p[k] >= lo[k] - 1e-12 && p[k] <= hi[k] + 1e-12));
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn every_kind_fits_the_unit_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in ShapeKind::ALL {
            for _ in 0..3 {
                let spec = ShapeSpec::random(kind, &mut rng);
                let cloud = gen_shape(&spec, 2000, 5).unwrap();
                let (lo, hi) = cloud.bounds();
                let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
                assert!(lo.iter().chain(&hi).all(|v| v.abs() <= 0.5 + 1e-12), "{kind:?}");
                assert!(extent > 0.9, "{kind:?} extent {extent}");
            }
            assert_eq!(ShapeKind::parse(kind.name()).unwrap(), kind);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = ShapeSpec::Lamp {
            base_radius: 0.2,
            base_height: 0.05,
            pole_radius: 0.02,
            pole_height: 0.6,
            shade_bottom: 0.25,
            shade_top: 0.1,
            shade_height: 0.2,
        };
        assert_eq!(gen_shape(&spec, 500, 9).unwrap(), gen_shape(&spec, 500, 9).unwrap());
        assert_ne!(gen_shape(&spec, 500, 9).unwrap(), gen_shape(&spec, 500, 10).unwrap());
    }

    #[test]
    fn torus_area_density() {
        // Outer half (cos phi > 0) of a torus holds (1/2 + minor / (pi * major)) of the area.
        let (major, minor) = (0.4, 0.15);
        let cloud = gen_shape(&ShapeSpec::Ring { major, minor }, 20000, 2).unwrap();
        let norm_major = major / (2.0 * (major + minor));
        let outer = cloud.points().iter().filter(|p| p[0].hypot(p[2]) > norm_major).count() as f64 / 20000.0;
        let want = 0.5 + minor / (PI * major);
        assert!((outer - want).abs() < 0.015, "{outer} vs {want}");
    }
}
