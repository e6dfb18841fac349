//! Synthetic large-area point-cloud scenes with ground-truth boxes, and the
//! line-oriented scene file format.
//!
//! ```text
//! SCENE v1 <x_min> <x_max> <y_min> <y_max>
//! BOX cx cy cz w l h yaw vx vy cls      (one per box)
//! PT x y z                              (one per point)
//! ```
//!
//! Numbers are written with six fractional digits. Generated scenes are
//! quantized to that grid, so a save/load round trip is exact.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }

    pub fn bev_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Axis-aligned BEV bounds of a scene, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    /// Square extent centered on the origin.
    pub fn square(side: f64) -> Self {
        Self::new(-side / 2.0, side / 2.0, -side / 2.0, side / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.depth() <= 0.0 {
            return Err(Error::Config(format!("degenerate extent {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub center: Point3,
    pub width: f64,
    pub length: f64,
    pub height: f64,
    /// Heading of the length axis, radians in `[-π, π)`.
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub class_id: usize,
}

impl GroundTruthBox {
    /// Scene-frame point to box-local frame (x along length, y along width).
    pub fn to_local(&self, p: &Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        let d = *p - self.center;
        Point3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn to_scene(&self, local: &Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(
            self.center.x + c * local.x - s * local.y,
            self.center.y + s * local.x + c * local.y,
            self.center.z + local.z,
        )
    }

    pub fn surface_area(&self) -> f64 {
        2.0 * (self.length * self.width + self.length * self.height + self.width * self.height)
    }

    /// Distance from `p` to the box surface.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        let l = self.to_local(p);
        let q = [l.x.abs() - self.length / 2.0, l.y.abs() - self.width / 2.0, l.z.abs() - self.height / 2.0];
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0);
        outside + inside.abs()
    }

    /// True when the BEV footprint contains `(x, y)`.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let l = self.to_local(&Point3::new(x, y, self.center.z));
        l.x.abs() <= self.length / 2.0 && l.y.abs() <= self.width / 2.0
    }

    /// BEV corners, counter-clockwise.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            let p = self.to_scene(&Point3::new(a, b, 0.0));
            (p.x, p.y)
        })
    }

    /// Radius of the circle enclosing the footprint.
    pub fn footprint_radius(&self) -> f64 {
        0.5 * self.width.hypot(self.length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<Point3>,
    pub boxes: Vec<GroundTruthBox>,
    pub extent: Extent,
}

impl Scene {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        self.extent.validate()?;
        if self.points.is_empty() {
            return Err(Error::Empty("scene has no points"));
        }
        if let Some(p) = self.points.iter().find(|p| !p.is_finite() || !self.extent.contains(p.x, p.y)) {
            return Err(Error::Config(format!("point {p:?} outside extent")));
        }
        for b in &self.boxes {
            if !(b.width > 0.0 && b.length > 0.0 && b.height > 0.0) {
                return Err(Error::Config(format!("box with nonpositive size {b:?}")));
            }
            if !(-PI..PI).contains(&b.yaw) {
                return Err(Error::Config(format!("box yaw {} outside [-π, π)", b.yaw)));
            }
            if !self.extent.contains(b.center.x, b.center.y) {
                return Err(Error::Config(format!("box center {:?} outside extent", b.center)));
            }
            if num_classes.is_some_and(|c| b.class_id >= c) {
                return Err(Error::Config(format!("box class {} out of range", b.class_id)));
            }
        }
        Ok(())
    }
}

/// Mean size of one object class, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    /// Relative uniform jitter applied to each dimension.
    pub jitter: f64,
}

impl ClassSpec {
    pub fn car() -> Self {
        Self { width: 1.9, length: 4.6, height: 1.7, jitter: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub extent: Extent,
    pub min_objects: usize,
    pub max_objects: usize,
    pub classes: Vec<ClassSpec>,
    /// Points per square meter of box surface.
    pub surface_density: f64,
    pub min_points_per_box: usize,
    pub clutter_points: usize,
    pub clutter_sigma: f64,
    pub moving: bool,
    pub max_speed: f64,
    /// Base seed; scene `i` of a dataset uses `seed + i`.
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent: Extent::square(50.0),
            min_objects: 1,
            max_objects: 8,
            classes: vec![ClassSpec::car()],
            surface_density: 8.0,
            min_points_per_box: 30,
            clutter_points: 400,
            clutter_sigma: 0.05,
            moving: false,
            max_speed: 10.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects exceeds max_objects".into()));
        }
        if self.max_objects > 0 && self.classes.is_empty() {
            return Err(Error::Config("objects requested but no classes defined".into()));
        }
        let nonneg = [self.surface_density, self.clutter_sigma, self.max_speed];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("densities and noise levels must be nonnegative".into()));
        }
        for c in &self.classes {
            if !(c.width > 0.0 && c.length > 0.0 && c.height > 0.0) || !(0.0..1.0).contains(&c.jitter) {
                return Err(Error::Config(format!("invalid class size {c:?}")));
            }
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 100;
const PLACEMENT_GAP: f64 = 0.5;

pub(crate) fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

fn quantize_point(p: Point3) -> Point3 {
    Point3::new(quantize(p.x), quantize(p.y), quantize(p.z))
}

fn quantize_yaw(yaw: f64) -> f64 {
    let q = quantize(yaw);
    if q >= PI {
        quantize(q - 2.0 * PI)
    } else {
        q
    }
}

/// Number of surface points sampled for `b`.
pub fn surface_point_count(config: &SceneConfig, b: &GroundTruthBox) -> usize {
    ((config.surface_density * b.surface_area()).round() as usize).max(config.min_points_per_box)
}

/// Generates one scene. Deterministic for fixed `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = config.extent;
    let count = rng.random_range(config.min_objects..=config.max_objects);

    let mut boxes: Vec<GroundTruthBox> = Vec::with_capacity(count);
    for object in 0..count {
        let class_id = rng.random_range(0..config.classes.len());
        let spec = &config.classes[class_id];
        let mut jitter = |v: f64| quantize(v * (1.0 + rng.random_range(-spec.jitter..=spec.jitter)));
        let (width, length, height) = (jitter(spec.width), jitter(spec.length), jitter(spec.height));
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radius = 0.5 * width.hypot(length);
            if 2.0 * radius >= ext.width() || 2.0 * radius >= ext.depth() {
                break;
            }
            let cx = quantize(rng.random_range(ext.x_min + radius..ext.x_max - radius));
            let cy = quantize(rng.random_range(ext.y_min + radius..ext.y_max - radius));
            let yaw = quantize_yaw(rng.random_range(-PI..PI));
            let (vx, vy) = if config.moving {
                (
                    quantize(rng.random_range(-config.max_speed..=config.max_speed)),
                    quantize(rng.random_range(-config.max_speed..=config.max_speed)),
                )
            } else {
                (0.0, 0.0)
            };
            let candidate = GroundTruthBox {
                center: Point3::new(cx, cy, quantize(height / 2.0)),
                width,
                length,
                height,
                yaw,
                vx,
                vy,
                class_id,
            };
            let clear = boxes
                .iter()
                .all(|b| b.center.bev_distance(&candidate.center) > b.footprint_radius() + radius + PLACEMENT_GAP);
            if clear {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => return Err(Error::Placement { object, attempts: PLACEMENT_ATTEMPTS }),
        }
    }

    let mut points = Vec::new();
    for b in &boxes {
        let n = surface_point_count(config, b);
        sample_box_surface(b, n, &mut rng, &mut points);
    }

    let noise = Normal::new(0.0, config.clutter_sigma.max(1e-12)).expect("finite sigma");
    let mut placed = 0;
    let mut attempts = 0usize;
    let max_attempts = 1000 * config.clutter_points.max(1);
    while placed < config.clutter_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config("clutter cannot be placed outside the boxes".into()));
        }
        let x = rng.random_range(ext.x_min..=ext.x_max);
        let y = rng.random_range(ext.y_min..=ext.y_max);
        if boxes.iter().any(|b| b.footprint_contains(x, y)) {
            continue;
        }
        let z = if config.clutter_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let p = quantize_point(Point3::new(x, y, z));
        if ext.contains(p.x, p.y) {
            points.push(p);
            placed += 1;
        }
    }

    let scene = Scene { points, boxes, extent: ext };
    scene.validate(Some(config.classes.len()))?;
    Ok(scene)
}

fn sample_box_surface(b: &GroundTruthBox, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Point3>) {
    let (l, w, h) = (b.length, b.width, b.height);
    // faces: ±z (l·w), ±x (w·h), ±y (l·h)
    let areas = [l * w, l * w, w * h, w * h, l * h, l * h];
    let total: f64 = areas.iter().sum();
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut face = 0;
        while face < 5 && pick >= areas[face] {
            pick -= areas[face];
            face += 1;
        }
        let u: f64 = rng.random_range(-0.5..=0.5);
        let v: f64 = rng.random_range(-0.5..=0.5);
        let local = match face {
            0 => Point3::new(u * l, v * w, h / 2.0),
            1 => Point3::new(u * l, v * w, -h / 2.0),
            2 => Point3::new(l / 2.0, u * w, v * h),
            3 => Point3::new(-l / 2.0, u * w, v * h),
            4 => Point3::new(u * l, w / 2.0, v * h),
            _ => Point3::new(u * l, -w / 2.0, v * h),
        };
        out.push(quantize_point(b.to_scene(&local)));
    }
}

/// Serializes a scene into the text format.
pub fn scene_to_string(scene: &Scene) -> String {
    let e = &scene.extent;
    let mut s = String::with_capacity(32 * (scene.points.len() + scene.boxes.len() + 1));
    writeln!(s, "SCENE v1 {:.6} {:.6} {:.6} {:.6}", e.x_min, e.x_max, e.y_min, e.y_max).unwrap();
    for b in &scene.boxes {
        writeln!(
            s,
            "BOX {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
            b.center.x, b.center.y, b.center.z, b.width, b.length, b.height, b.yaw, b.vx, b.vy, b.class_id
        )
        .unwrap();
    }
    for p in &scene.points {
        writeln!(s, "PT {:.6} {:.6} {:.6}", p.x, p.y, p.z).unwrap();
    }
    s
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "SCENE" || fields[1] != "v1" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `SCENE v1 x_min x_max y_min y_max`, got `{header}`"),
        });
    }
    let nums = parse_numbers(&fields[2..], 1)?;
    let extent = Extent::new(nums[0], nums[1], nums[2], nums[3]);
    extent.validate().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;

    let mut scene = Scene { points: Vec::new(), boxes: Vec::new(), extent };
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match fields.first().copied() {
            None => continue,
            Some("BOX") => {
                if fields.len() != 11 {
                    return Err(Error::Parse {
                        line,
                        message: format!("BOX needs 10 values, got {}", fields.len() - 1),
                    });
                }
                let v = parse_numbers(&fields[1..10], line)?;
                let class_id = fields[10]
                    .parse::<usize>()
                    .map_err(|_| Error::Parse { line, message: format!("invalid class id `{}`", fields[10]) })?;
                let b = GroundTruthBox {
                    center: Point3::new(v[0], v[1], v[2]),
                    width: v[3],
                    length: v[4],
                    height: v[5],
                    yaw: v[6],
                    vx: v[7],
                    vy: v[8],
                    class_id,
                };
                let probe = Scene { points: vec![b.center], boxes: vec![b], extent };
                probe.validate(None).map_err(|e| Error::Parse { line, message: e.to_string() })?;
                scene.boxes.push(b);
            }
            Some("PT") => {
                if fields.len() != 4 {
                    return Err(Error::Parse { line, message: format!("PT needs 3 values, got {}", fields.len() - 1) });
                }
                let v = parse_numbers(&fields[1..], line)?;
                if !extent.contains(v[0], v[1]) {
                    return Err(Error::Parse { line, message: "point outside scene extent".into() });
                }
                scene.points.push(Point3::new(v[0], v[1], v[2]));
            }
            Some(tag) => return Err(Error::Parse { line, message: format!("unknown record `{tag}`") }),
        }
    }
    if scene.points.is_empty() {
        return Err(Error::Empty("scene file has no points"));
    }
    Ok(scene)
}

fn parse_numbers(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse { line, message: format!("invalid number `{f}`") }),
        })
        .collect()
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scene_to_string(scene))?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    parse_scene(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SceneConfig {
        SceneConfig { extent: Extent::square(40.0), max_objects: 3, clutter_points: 200, ..Default::default() }
    }

    #[test]
    fn no_objects_only_clutter() {
        let cfg = SceneConfig { min_objects: 0, max_objects: 0, clutter_points: 100, ..small_config() };
        let s = generate_scene(&cfg, 3).unwrap();
        assert_eq!(s.points.len(), 100);
        assert!(s.boxes.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small_config();
        assert_eq!(generate_scene(&cfg, 11).unwrap(), generate_scene(&cfg, 11).unwrap());
        assert_ne!(generate_scene(&cfg, 11).unwrap(), generate_scene(&cfg, 12).unwrap());
    }

    #[test]
    fn point_count_follows_surface_area() {
        let cfg = SceneConfig {
            min_objects: 1,
            max_objects: 1,
            classes: vec![ClassSpec { width: 2.0, length: 4.0, height: 1.5, jitter: 0.0 }],
            surface_density: 50.0,
            clutter_points: 100,
            ..small_config()
        };
        let s = generate_scene(&cfg, 5).unwrap();
        // analytic surface area of a 2 x 4 x 1.5 box
        let area = 2.0 * (2.0 * 4.0 + 2.0 * 1.5 + 4.0 * 1.5);
        let expected = 50.0 * area + 100.0;
        let n = s.points.len() as f64;
        assert!((n - expected).abs() <= 0.1 * expected, "{n} vs {expected}");
    }

    #[test]
    fn surface_points_lie_on_their_box() {
        let cfg = SceneConfig { clutter_points: 0, min_objects: 2, ..small_config() };
        for seed in 0..5 {
            let s = generate_scene(&cfg, seed).unwrap();
            let mut start = 0;
            for b in &s.boxes {
                let n = surface_point_count(&cfg, b);
                for p in &s.points[start..start + n] {
                    assert!(b.surface_distance(p) <= 1e-6, "{}", b.surface_distance(p));
                }
                start += n;
            }
        }
    }

    #[test]
    fn clutter_lies_near_ground_outside_boxes() {
        let s = generate_scene(&SceneConfig { min_objects: 3, ..small_config() }, 8).unwrap();
        let box_points: usize = s.boxes.iter().map(|b| surface_point_count(&small_config(), b)).sum();
        for p in &s.points[box_points..] {
            assert!(p.z.abs() < 0.5);
            assert!(s.boxes.iter().all(|b| !b.footprint_contains(p.x, p.y)));
        }
    }

    #[test]
    fn overcrowded_extent_is_rejected() {
        let cfg = SceneConfig { extent: Extent::square(12.0), min_objects: 30, max_objects: 30, ..Default::default() };
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::Placement { .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = SceneConfig { moving: true, ..small_config() };
        for seed in 0..4 {
            let s = generate_scene(&cfg, seed).unwrap();
            let text = scene_to_string(&s);
            let back = parse_scene(&text).unwrap();
            assert_eq!(back, s);
            assert_eq!(scene_to_string(&back), text);
        }
    }

    #[test]
    fn file_layout() {
        let cfg = SceneConfig { min_objects: 3, max_objects: 3, ..small_config() };
        let s = generate_scene(&cfg, 2).unwrap();
        let text = scene_to_string(&s);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("SCENE v1 "));
        assert!(lines[1..4].iter().all(|l| l.starts_with("BOX ")));
        assert_eq!(lines.len(), 1 + 3 + s.points.len());
        assert!(lines[4..].iter().all(|l| l.starts_with("PT ")));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "SCENE v1 0 10 0 10\nPT 1 2 3\nPT 1 abc 3\n";
        match parse_scene(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_scene("SCENE v2 0 1 0 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_scene("SCENE v1 0 10 0 10\nPT 11 0 0\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_box_scene_round_trip_via_file() {
        let cfg = SceneConfig { min_objects: 0, max_objects: 0, ..small_config() };
        let s = generate_scene(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        save_scene(&s, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), s);
    }
}
