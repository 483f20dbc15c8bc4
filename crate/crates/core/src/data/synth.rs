//! Procedural point clouds: chains of linked tori and multi-object playground
//! scenes built from five primitive shapes.

use std::f64::consts::{PI, TAU};

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud3;
use crate::error::{Error, Result};

/// Fraction of a playground cell spanned by the largest object diameter.
pub const CELL_FILL: f64 = 0.8;
/// Playground cell width in model units.
pub const CELL_WIDTH: f64 = 1.0;
/// Per-object scale multiplier is drawn uniformly from this range.
pub const SCALE_JITTER: (f64, f64) = (0.75, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusSpec {
    pub genus: usize,
    pub ring_radius: f64,
    pub tube_radius: f64,
    pub points: usize,
    pub seed: u64,
}

impl TorusSpec {
    pub fn new(genus: usize, points: usize, seed: u64) -> Self {
        Self {
            genus,
            ring_radius: 1.0,
            tube_radius: 0.25,
            points,
            seed,
        }
    }

    /// Distance between consecutive torus centers along the chain axis.
    ///
    /// Halfway between the two limits that keep the chain free of surface
    /// contacts: consecutive tori must stay `2r` apart tube to tube, and
    /// every second torus (same plane) must clear its neighbor's outer rim.
    pub fn chain_offset(&self) -> f64 {
        let (r_ring, r_tube) = (self.ring_radius, self.tube_radius);
        0.5 * ((r_ring + r_tube) + (2.0 * r_ring - 2.0 * r_tube))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.genus) {
            return Err(Error::invalid(format!("genus must be 1, 2 or 3, got {}", self.genus)));
        }
        if !(self.tube_radius > 0.0 && self.tube_radius < self.ring_radius) {
            return Err(Error::invalid(format!(
                "need 0 < tube radius < ring radius, got r={} R={}",
                self.tube_radius, self.ring_radius
            )));
        }
        if self.genus > 1 && 3.0 * self.tube_radius >= self.ring_radius {
            return Err(Error::invalid(format!(
                "linked tori need tube radius < ring radius / 3, got r={} R={}",
                self.tube_radius, self.ring_radius
            )));
        }
        Ok(())
    }
}

/// Area-weighted sample of a torus around the z axis, centered at the origin.
///
/// The tube angle is drawn by rejection against the area element
/// `R + r cos(theta)`; the ring angle is uniform.
pub fn sample_torus<R: Rng>(ring: f64, tube: f64, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let theta = rng.gen_range(0.0..TAU);
        let accept: f64 = rng.gen();
        if accept * (ring + tube) > ring + tube * theta.cos() {
            continue;
        }
        let phi = rng.gen_range(0.0..TAU);
        let rho = ring + tube * theta.cos();
        out.push([rho * phi.cos(), rho * phi.sin(), tube * theta.sin()]);
    }
    out
}

/// Points of `genus` linked tori before normalization. Torus `i` is centered
/// at `(i * offset, 0, 0)`; even tori lie in the xy plane, odd ones in xz.
pub fn gen_torus_raw(spec: &TorusSpec) -> Result<PointCloud3<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset = spec.chain_offset();
    let mut points = Vec::with_capacity(spec.points);
    for (i, count) in split_counts(spec.points, spec.genus).into_iter().enumerate() {
        let cx = i as f64 * offset;
        for p in sample_torus(spec.ring_radius, spec.tube_radius, count, &mut rng) {
            // rotating 90 degrees about x maps (x, y, z) to (x, -z, y)
            let q = if i % 2 == 0 { p } else { [p[0], -p[2], p[1]] };
            points.push([q[0] + cx, q[1], q[2]]);
        }
    }
    Ok(PointCloud3::new(points))
}

/// Linked-torus cloud centered on its centroid and scaled into the unit ball.
pub fn gen_torus(spec: &TorusSpec) -> Result<PointCloud3<f64>> {
    Ok(normalize_unit_ball(gen_torus_raw(spec)?))
}

/// Translate the centroid to the origin and scale the farthest point to norm 1.
pub fn normalize_unit_ball(mut c: PointCloud3<f64>) -> PointCloud3<f64> {
    if c.is_empty() {
        return c;
    }
    let n = c.len() as f64;
    let mut mean = [0.0; 3];
    for p in &c.points {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let mut far: f64 = 0.0;
    for p in &mut c.points {
        for k in 0..3 {
            p[k] -= mean[k];
        }
        far = far.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    if far > 0.0 {
        for p in &mut c.points {
            for v in p.iter_mut() {
                *v /= far;
            }
        }
    }
    c
}

/// `n` split into `k` near-equal parts, larger parts first.
pub fn split_counts(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Cone,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Sphere, Shape::Box, Shape::Cylinder, Shape::Torus, Shape::Cone];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Box => "box",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
            Shape::Cone => "cone",
        }
    }

    /// Surface sample of the shape in its own frame (z up).
    pub fn sample<R: Rng>(self, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
        match self {
            Shape::Sphere => (0..n).map(|_| unit_vector(rng)).collect(),
            Shape::Box => sample_box([1.0, 0.7, 0.5], n, rng),
            Shape::Cylinder => sample_cylinder(0.5, 0.8, n, rng),
            Shape::Torus => sample_torus(1.0, 0.3, n, rng),
            Shape::Cone => sample_cone(0.6, 1.4, n, rng),
        }
    }
}

fn unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi = rng.gen_range(0.0..TAU);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Surface of the box `[-a, a] x [-b, b] x [-c, c]`.
fn sample_box<R: Rng>(half: [f64; 3], n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let [a, b, c] = half;
    // face pairs normal to x, y, z
    let areas = [b * c, a * c, a * b];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut t = rng.gen_range(0.0..total);
            let mut axis = 0;
            while axis < 2 && t >= areas[axis] {
                t -= areas[axis];
                axis += 1;
            }
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut p = [
                rng.gen_range(-a..a),
                rng.gen_range(-b..b),
                rng.gen_range(-c..c),
            ];
            p[axis] = side * half[axis];
            p
        })
        .collect()
}

/// Closed cylinder of radius `r` spanning `z in [-h, h]`.
fn sample_cylinder<R: Rng>(r: f64, h: f64, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let side = 2.0 * PI * r * 2.0 * h;
    let cap = PI * r * r;
    (0..n)
        .map(|_| {
            let t = rng.gen_range(0.0..side + 2.0 * cap);
            let phi = rng.gen_range(0.0..TAU);
            if t < side {
                [r * phi.cos(), r * phi.sin(), rng.gen_range(-h..h)]
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                let z = if t < side + cap { h } else { -h };
                [rho * phi.cos(), rho * phi.sin(), z]
            }
        })
        .collect()
}

/// Closed cone with base radius `r` at `z = 0` and apex at `z = h`.
fn sample_cone<R: Rng>(r: f64, h: f64, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let slant = (r * r + h * h).sqrt();
    let lateral = PI * r * slant;
    let base = PI * r * r;
    (0..n)
        .map(|_| {
            let phi = rng.gen_range(0.0..TAU);
            // radius fraction with density proportional to the radius
            let s = rng.gen::<f64>().sqrt();
            if rng.gen_range(0.0..lateral + base) < lateral {
                [r * s * phi.cos(), r * s * phi.sin(), h * (1.0 - s)]
            } else {
                [r * s * phi.cos(), r * s * phi.sin(), 0.0]
            }
        })
        .collect()
}

/// One object placed on the playground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub row: usize,
    pub col: usize,
    /// Multiplier on the nominal size (`CELL_FILL` of the cell width).
    pub scale: f64,
    /// Rotation about the vertical axis, radians.
    pub yaw: f64,
}

/// A playground scene: `objects.len()` shapes in distinct cells of a K x K grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub playground: usize,
    pub objects: Vec<ObjectSpec>,
    pub points: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// Draw `k` objects with random shapes, distinct cells, jittered scale
    /// and yaw.
    pub fn random(playground: usize, k: usize, points: usize, seed: u64) -> Result<Self> {
        Self::random_from(playground, k, &Shape::ALL, points, seed)
    }

    /// As [`SceneSpec::random`] with shapes drawn from `shapes`.
    pub fn random_from(
        playground: usize,
        k: usize,
        shapes: &[Shape],
        points: usize,
        seed: u64,
    ) -> Result<Self> {
        let cells = playground * playground;
        if k == 0 || k > cells {
            return Err(Error::invalid(format!(
                "object count must be in 1..={cells} for a {playground}x{playground} playground, got {k}"
            )));
        }
        if shapes.is_empty() {
            return Err(Error::invalid("no shapes to draw from"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, cells, k).into_vec();
        picked.sort_unstable();
        let objects = picked
            .into_iter()
            .map(|cell| ObjectSpec {
                shape: shapes[rng.gen_range(0..shapes.len())],
                row: cell / playground,
                col: cell % playground,
                scale: rng.gen_range(SCALE_JITTER.0..SCALE_JITTER.1),
                yaw: rng.gen_range(0.0..TAU),
            })
            .collect();
        Ok(Self {
            playground,
            objects,
            points,
            seed,
        })
    }

    pub fn count(&self) -> usize {
        self.objects.len()
    }

    pub fn contains(&self, shape: Shape) -> bool {
        self.objects.iter().any(|o| o.shape == shape)
    }

    /// Center of a cell; the playground spans `[-K/2, K/2]^2` in x, y.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let half = (self.playground as f64 - 1.0) / 2.0;
        [
            (col as f64 - half) * CELL_WIDTH,
            (row as f64 - half) * CELL_WIDTH,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.playground * self.playground;
        if self.objects.is_empty() || self.objects.len() > cells {
            return Err(Error::invalid(format!(
                "object count must be in 1..={cells}, got {}",
                self.objects.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if o.row >= self.playground || o.col >= self.playground {
                return Err(Error::invalid(format!("cell ({}, {}) is off the playground", o.row, o.col)));
            }
            if !seen.insert((o.row, o.col)) {
                return Err(Error::invalid(format!("cell ({}, {}) used twice", o.row, o.col)));
            }
            if !(o.scale > 0.0 && o.scale <= 1.0) {
                return Err(Error::invalid(format!("object scale must be in (0, 1], got {}", o.scale)));
            }
        }
        Ok(())
    }
}

/// Sample a scene. Returns the cloud and the object index of every point.
pub fn gen_scene(spec: &SceneSpec) -> Result<(PointCloud3<f64>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let counts = split_counts(spec.points, spec.count());
    let mut points = Vec::with_capacity(spec.points);
    let mut labels = Vec::with_capacity(spec.points);
    for (idx, (obj, &n)) in spec.objects.iter().zip(&counts).enumerate() {
        let local = normalize_unit_ball(PointCloud3::new(obj.shape.sample(n, &mut rng)));
        let radius = 0.5 * CELL_FILL * CELL_WIDTH * obj.scale;
        let (s, c) = obj.yaw.sin_cos();
        let [cx, cy] = spec.cell_center(obj.row, obj.col);
        for p in local.points {
            let x = c * p[0] - s * p[1];
            let y = s * p[0] + c * p[1];
            points.push([cx + radius * x, cy + radius * y, radius * p[2]]);
            labels.push(idx);
        }
    }
    Ok((PointCloud3::new(points), labels))
}
