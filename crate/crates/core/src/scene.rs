//! Synthetic urban-grid scenes, aerial rasters, pathloss and user mobility.
//!
//! Scenes are 2D: buildings are axis-aligned rectangles placed on a street
//! grid, one per occupied block, so they never overlap. Everything here is a
//! pure function of its inputs and an explicit random stream.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_from_seed, RngStream};

/// Number of planes in an aerial raster: RGB, user mask, BS mask.
pub const RASTER_CHANNELS: usize = 5;
pub const CH_USER: usize = 3;
pub const CH_BS: usize = 4;

/// Ground color drawn wherever no building is present.
pub const GROUND_RGB: [f32; 3] = [0.30, 0.45, 0.25];

const SCENE_HEADER: &str = "eiw-scene v1";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle with its minimum corner at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x && p.x <= self.x + self.w && p.y >= self.y && p.y <= self.y + self.h
    }

    /// Length of the part of segment `a`-`b` lying inside the rectangle
    /// (Liang-Barsky clipping).
    pub fn clip_length(&self, a: &Point, b: &Point) -> f64 {
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let p = [-dx, dx, -dy, dy];
        let q = [
            a.x - self.x,
            self.x + self.w - a.x,
            a.y - self.y,
            self.y + self.h - a.y,
        ];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (&pi, &qi) in p.iter().zip(q.iter()) {
            if pi == 0.0 {
                if qi < 0.0 {
                    return 0.0;
                }
            } else {
                let r = qi / pi;
                if pi < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if t0 >= t1 {
            0.0
        } else {
            (t1 - t0) * dx.hypot(dy)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightClass {
    Low,
    Mid,
    High,
}

impl HeightClass {
    fn index(self) -> u8 {
        match self {
            HeightClass::Low => 0,
            HeightClass::Mid => 1,
            HeightClass::High => 2,
        }
    }

    fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(HeightClass::Low),
            1 => Some(HeightClass::Mid),
            2 => Some(HeightClass::High),
            _ => None,
        }
    }

    fn base_gray(self) -> f32 {
        match self {
            HeightClass::Low => 0.78,
            HeightClass::Mid => 0.62,
            HeightClass::High => 0.46,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub rect: Rect,
    pub height: HeightClass,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioTag {
    LosDominated,
    NlosDominated,
}

impl ScenarioTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::LosDominated => "los",
            ScenarioTag::NlosDominated => "nlos",
        }
    }

    /// One-hot encoding `[los, nlos]`.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            ScenarioTag::LosDominated => [1.0, 0.0],
            ScenarioTag::NlosDominated => [0.0, 1.0],
        }
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "los" | "los-dominated" => Ok(ScenarioTag::LosDominated),
            "nlos" | "nlos-dominated" => Ok(ScenarioTag::NlosDominated),
            other => Err(Error::Config(format!("unknown scenario tag `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Building coverage ceiling for LoS-dominated scenes.
pub const LOS_MAX_COVERAGE: f64 = 0.10;
/// Building coverage floor for NLoS-dominated scenes.
pub const NLOS_MIN_COVERAGE: f64 = 0.30;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width_m: f64,
    pub height_m: f64,
    pub buildings: Vec<Building>,
    pub bs_pos: Point,
    pub scenario: ScenarioTag,
}

impl Scene {
    pub fn in_bounds(&self, p: &Point) -> bool {
        p.x >= 0.0 && p.x <= self.width_m && p.y >= 0.0 && p.y <= self.height_m
    }

    pub fn inside_building(&self, p: &Point) -> bool {
        self.buildings.iter().any(|b| b.rect.contains(p))
    }

    /// Points usable as user or BS positions.
    pub fn is_free(&self, p: &Point) -> bool {
        self.in_bounds(p) && !self.inside_building(p)
    }

    /// Fraction of the scene area covered by buildings, from rectangle areas.
    pub fn coverage_fraction(&self) -> f64 {
        let built: f64 = self.buildings.iter().map(|b| b.rect.area()).sum();
        built / (self.width_m * self.height_m)
    }

    /// Number of buildings whose interior the segment `a`-`b` passes through.
    pub fn blockage_count(&self, a: &Point, b: &Point) -> usize {
        self.buildings
            .iter()
            .filter(|bld| bld.rect.clip_length(a, b) > 1e-9)
            .count()
    }

    /// Checks every scene invariant.
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.buildings.iter().enumerate() {
            let r = &b.rect;
            if r.w <= 0.0 || r.h <= 0.0 {
                return Err(Error::Generation(format!("building {i} has empty extent")));
            }
            if r.x < 0.0 || r.y < 0.0 || r.x + r.w > self.width_m || r.y + r.h > self.height_m {
                return Err(Error::Generation(format!("building {i} leaves the scene bounds")));
            }
        }
        if !self.in_bounds(&self.bs_pos) {
            return Err(Error::Generation("BS outside scene bounds".into()));
        }
        if self.inside_building(&self.bs_pos) {
            return Err(Error::Generation("BS inside a building".into()));
        }
        let coverage = self.coverage_fraction();
        match self.scenario {
            ScenarioTag::LosDominated if coverage > LOS_MAX_COVERAGE => Err(Error::Generation(
                format!("LoS scene coverage {coverage:.3} exceeds {LOS_MAX_COVERAGE}"),
            )),
            ScenarioTag::NlosDominated if coverage < NLOS_MIN_COVERAGE => Err(Error::Generation(
                format!("NLoS scene coverage {coverage:.3} below {NLOS_MIN_COVERAGE}"),
            )),
            _ => Ok(()),
        }
    }

    /// Serializes to the line-oriented `eiw-scene v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(SCENE_HEADER);
        out.push('\n');
        out.push_str("# size <width_m> <height_m>\n");
        out.push_str("# building <x_m> <y_m> <w_m> <h_m> <height_class 0|1|2> <r> <g> <b>\n");
        out.push_str("# bs <x_m> <y_m>\n");
        out.push_str("# scenario <los|nlos>\n");
        let _ = writeln!(out, "size {} {}", self.width_m, self.height_m);
        for b in &self.buildings {
            let _ = writeln!(
                out,
                "building {} {} {} {} {} {} {} {}",
                b.rect.x,
                b.rect.y,
                b.rect.w,
                b.rect.h,
                b.height.index(),
                b.color[0],
                b.color[1],
                b.color[2]
            );
        }
        let _ = writeln!(out, "bs {} {}", self.bs_pos.x, self.bs_pos.y);
        let _ = writeln!(out, "scenario {}", self.scenario);
        out
    }

    /// Parses the `eiw-scene v1` format and validates the result.
    pub fn from_text(text: &str) -> Result<Scene> {
        let loc = "scene";
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == SCENE_HEADER => {}
            _ => return Err(Error::parse(loc, 1, format!("expected header `{SCENE_HEADER}`"))),
        }
        let mut size = None;
        let mut buildings = Vec::new();
        let mut bs = None;
        let mut scenario = None;
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap_or_default();
            let nums = |fields: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
                let vals: Vec<f64> = fields
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(loc, line_no, e.to_string()))?;
                if vals.len() != n {
                    return Err(Error::parse(loc, line_no, format!("expected {n} numbers, got {}", vals.len())));
                }
                Ok(vals)
            };
            match kind {
                "size" => {
                    let v = nums(fields, 2)?;
                    size = Some((v[0], v[1]));
                }
                "building" => {
                    let v = nums(fields, 8)?;
                    let height = HeightClass::from_index(v[4] as u8)
                        .filter(|_| v[4].fract() == 0.0)
                        .ok_or_else(|| Error::parse(loc, line_no, "height class must be 0, 1 or 2"))?;
                    buildings.push(Building {
                        rect: Rect { x: v[0], y: v[1], w: v[2], h: v[3] },
                        height,
                        color: [v[5] as f32, v[6] as f32, v[7] as f32],
                    });
                }
                "bs" => {
                    let v = nums(fields, 2)?;
                    bs = Some(Point::new(v[0], v[1]));
                }
                "scenario" => {
                    let tag = fields.next().unwrap_or_default();
                    scenario = Some(tag.parse::<ScenarioTag>().map_err(|e| Error::parse(loc, line_no, e.to_string()))?);
                }
                other => return Err(Error::parse(loc, line_no, format!("unknown record `{other}`"))),
            }
        }
        let (width_m, height_m) = size.ok_or_else(|| Error::parse(loc, 0, "missing size record"))?;
        let scene = Scene {
            width_m,
            height_m,
            buildings,
            bs_pos: bs.ok_or_else(|| Error::parse(loc, 0, "missing bs record"))?,
            scenario: scenario.ok_or_else(|| Error::parse(loc, 0, "missing scenario record"))?,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub scenario: ScenarioTag,
    pub size_m: f64,
    /// Block pitch of the street grid.
    pub grid_pitch_m: f64,
    /// Minimum street width separating buildings.
    pub street_m: f64,
    /// Inclusive building count range.
    pub building_count: (usize, usize),
    /// Inclusive building side length range.
    pub building_size_m: (f64, f64),
    /// Attempts before generation gives up on a constraint.
    pub max_retries: usize,
}

impl SceneConfig {
    pub fn los() -> Self {
        Self {
            scenario: ScenarioTag::LosDominated,
            size_m: 128.0,
            grid_pitch_m: 16.0,
            street_m: 2.0,
            building_count: (4, 7),
            building_size_m: (10.0, 14.0),
            max_retries: 64,
        }
    }

    pub fn nlos() -> Self {
        Self {
            scenario: ScenarioTag::NlosDominated,
            building_count: (40, 40),
            ..Self::los()
        }
    }

    pub fn for_scenario(tag: ScenarioTag) -> Self {
        match tag {
            ScenarioTag::LosDominated => Self::los(),
            ScenarioTag::NlosDominated => Self::nlos(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size_m > 0.0) || !(self.grid_pitch_m > 0.0) || self.street_m < 0.0 {
            return Err(Error::Config("scene sizes must be positive".into()));
        }
        let (lo, hi) = self.building_size_m;
        if !(lo > 0.0) || hi < lo || hi > self.grid_pitch_m - self.street_m {
            return Err(Error::Config(format!(
                "building size range [{lo}, {hi}] must fit a {} m block with {} m streets",
                self.grid_pitch_m, self.street_m
            )));
        }
        if self.building_count.0 > self.building_count.1 {
            return Err(Error::Config("building count range is inverted".into()));
        }
        let cells = self.cells_per_side().pow(2);
        if self.building_count.1 > cells {
            return Err(Error::Config(format!(
                "{} buildings do not fit on a grid of {cells} blocks",
                self.building_count.1
            )));
        }
        Ok(())
    }

    fn cells_per_side(&self) -> usize {
        (self.size_m / self.grid_pitch_m).floor() as usize
    }
}

/// Generates a scene satisfying every invariant, deterministically per seed.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = stream_from_seed(seed);
    let mut last_coverage = 0.0;
    for _ in 0..config.max_retries.max(1) {
        let buildings = place_buildings(config, &mut rng);
        let mut scene = Scene {
            width_m: config.size_m,
            height_m: config.size_m,
            buildings,
            bs_pos: Point::default(),
            scenario: config.scenario,
        };
        last_coverage = scene.coverage_fraction();
        let coverage_ok = match config.scenario {
            ScenarioTag::LosDominated => last_coverage <= LOS_MAX_COVERAGE,
            ScenarioTag::NlosDominated => last_coverage >= NLOS_MIN_COVERAGE,
        };
        if !coverage_ok {
            continue;
        }
        scene.bs_pos = random_free_point(&scene, &mut rng, config.max_retries * 16).ok_or_else(|| {
            Error::Generation(format!(
                "cannot place BS outside buildings after {} retries",
                config.max_retries * 16
            ))
        })?;
        scene.validate()?;
        return Ok(scene);
    }
    Err(Error::Generation(format!(
        "coverage constraint for {} scene unsatisfied after {} retries (last coverage {last_coverage:.3})",
        config.scenario, config.max_retries
    )))
}

fn place_buildings(config: &SceneConfig, rng: &mut RngStream) -> Vec<Building> {
    let per_side = config.cells_per_side();
    let mut cells: Vec<usize> = (0..per_side * per_side).collect();
    let count = rng.random_range(config.building_count.0..=config.building_count.1);
    // partial Fisher-Yates
    for i in 0..count {
        let j = rng.random_range(i..cells.len());
        cells.swap(i, j);
    }
    let (lo, hi) = config.building_size_m;
    let usable = config.grid_pitch_m - config.street_m;
    let mut buildings: Vec<Building> = cells[..count]
        .iter()
        .map(|&cell| {
            let (cx, cy) = ((cell % per_side) as f64, (cell / per_side) as f64);
            let w = lo + (hi - lo) * rng.random::<f64>();
            let h = lo + (hi - lo) * rng.random::<f64>();
            let x = cx * config.grid_pitch_m + config.street_m / 2.0 + (usable - w) * rng.random::<f64>();
            let y = cy * config.grid_pitch_m + config.street_m / 2.0 + (usable - h) * rng.random::<f64>();
            let height = HeightClass::from_index(rng.random_range(0..3u8)).unwrap_or(HeightClass::Mid);
            let tint = (rng.random::<f32>() - 0.5) * 0.1;
            let g = height.base_gray() + tint;
            Building {
                rect: Rect { x, y, w, h },
                height,
                color: [g, g, (g + 0.04).min(1.0)],
            }
        })
        .collect();
    buildings.sort_by(|a, b| a.rect.y.total_cmp(&b.rect.y).then(a.rect.x.total_cmp(&b.rect.x)));
    buildings
}

/// Uniformly samples a free point, or `None` after `tries` rejections.
pub fn random_free_point(scene: &Scene, rng: &mut RngStream, tries: usize) -> Option<Point> {
    (0..tries).find_map(|_| {
        let p = Point::new(
            rng.random::<f64>() * scene.width_m,
            rng.random::<f64>() * scene.height_m,
        );
        scene.is_free(&p).then_some(p)
    })
}

/// Log-distance pathloss with a per-building blockage penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathlossModel {
    pub pl0_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    pub block_loss_db: f64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            pl0_db: 40.0,
            d0_m: 1.0,
            exponent: 2.2,
            block_loss_db: 15.0,
        }
    }
}

impl PathlossModel {
    /// Pathloss for a given distance and number of blocking buildings.
    pub fn loss_db(&self, distance_m: f64, blocking: usize) -> f64 {
        let d = distance_m.max(self.d0_m);
        self.pl0_db + 10.0 * self.exponent * (d / self.d0_m).log10() + blocking as f64 * self.block_loss_db
    }
}

pub fn pathloss_db(scene: &Scene, bs: &Point, user: &Point, model: &PathlossModel) -> f64 {
    model.loss_db(bs.distance(user), scene.blockage_count(bs, user))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserState {
    pub pos: Point,
    pub waypoint: Point,
    /// Meters per second.
    pub speed: f64,
}

impl UserState {
    /// A user parked at `pos` whose next waypoint is its own position.
    pub fn at(pos: Point, speed: f64) -> Self {
        Self { pos, waypoint: pos, speed }
    }

    pub fn is_valid(&self, scene: &Scene) -> bool {
        scene.is_free(&self.pos) && scene.is_free(&self.waypoint)
    }
}

const WAYPOINT_TRIES: usize = 256;

/// Random-waypoint step. Waypoints are only accepted when the straight walk
/// towards them stays clear of buildings.
pub fn step_mobility(scene: &Scene, user: &UserState, dt: f64, rng: &mut RngStream) -> UserState {
    assert!(dt > 0.0, "mobility step needs a positive dt");
    let dx = user.waypoint.x - user.pos.x;
    let dy = user.waypoint.y - user.pos.y;
    let dist = dx.hypot(dy);
    let step = user.speed * dt;
    if step >= dist {
        let pos = user.waypoint;
        UserState {
            pos,
            waypoint: draw_waypoint(scene, &pos, rng),
            speed: user.speed,
        }
    } else {
        UserState {
            pos: Point::new(user.pos.x + dx / dist * step, user.pos.y + dy / dist * step),
            ..*user
        }
    }
}

fn draw_waypoint(scene: &Scene, from: &Point, rng: &mut RngStream) -> Point {
    for _ in 0..WAYPOINT_TRIES {
        let p = Point::new(
            rng.random::<f64>() * scene.width_m,
            rng.random::<f64>() * scene.height_m,
        );
        if scene.is_free(&p) && scene.buildings.iter().all(|b| b.rect.clip_length(from, &p) <= 0.0) {
            return p;
        }
    }
    *from
}

/// Five-plane aerial observation stored as `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AerialRaster {
    pub resolution: usize,
    pub data: Vec<f32>,
}

impl AerialRaster {
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.resolution * self.resolution;
        &self.data[channel * n..(channel + 1) * n]
    }

    fn plane_mut(&mut self, channel: usize) -> &mut [f32] {
        let n = self.resolution * self.resolution;
        &mut self.data[channel * n..(channel + 1) * n]
    }

    /// Centroid `(col, row)` of a mask plane, in pixel index units.
    pub fn mask_centroid(&self, channel: usize) -> Option<(f64, f64)> {
        let r = self.resolution;
        let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
        for (i, &v) in self.plane(channel).iter().enumerate() {
            let v = f64::from(v);
            sx += v * (i % r) as f64;
            sy += v * (i / r) as f64;
            total += v;
        }
        (total > 0.0).then(|| (sx / total, sy / total))
    }
}

/// Pixel `(col, row)` containing a scene position.
pub fn rasterize(scene: &Scene, p: &Point, resolution: usize) -> (usize, usize) {
    let col = (p.x / scene.width_m * resolution as f64).floor();
    let row = (p.y / scene.height_m * resolution as f64).floor();
    let clamp = |v: f64| (v.max(0.0) as usize).min(resolution - 1);
    (clamp(col), clamp(row))
}

pub fn render_aerial(scene: &Scene, user: &UserState, resolution: usize) -> AerialRaster {
    let r = resolution;
    let mut raster = AerialRaster {
        resolution: r,
        data: vec![0.0; RASTER_CHANNELS * r * r],
    };
    let px_w = scene.width_m / r as f64;
    let px_h = scene.height_m / r as f64;
    for c in 0..3 {
        raster.plane_mut(c).fill(GROUND_RGB[c]);
    }
    for b in &scene.buildings {
        // pixels whose centres fall inside the rectangle
        let c0 = ((b.rect.x / px_w - 0.5).ceil().max(0.0)) as usize;
        let c1 = (((b.rect.x + b.rect.w) / px_w - 0.5).floor()).min(r as f64 - 1.0);
        let r0 = ((b.rect.y / px_h - 0.5).ceil().max(0.0)) as usize;
        let r1 = (((b.rect.y + b.rect.h) / px_h - 0.5).floor()).min(r as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let (c1, r1) = (c1 as usize, r1 as usize);
        for c in 0..3 {
            let plane = raster.plane_mut(c);
            for row in r0..=r1 {
                plane[row * r + c0..=row * r + c1].fill(b.color[c]);
            }
        }
    }
    stamp_blob(raster.plane_mut(CH_USER), r, rasterize(scene, &user.pos, r));
    stamp_blob(raster.plane_mut(CH_BS), r, rasterize(scene, &scene.bs_pos, r));
    raster
}

fn stamp_blob(plane: &mut [f32], r: usize, (col, row): (usize, usize)) {
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let (rr, cc) = (row as i64 + dr, col as i64 + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < r && (cc as usize) < r {
                plane[rr as usize * r + cc as usize] = 1.0;
            }
        }
    }
}
