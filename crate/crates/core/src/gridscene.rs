//! Discretized 2-D scenes: cells, objects, poses, composite actions,
//! visibility, and procedural generation.
//!
//! Coordinates: `x` grows to the right, `y` grows "up". Heading `h = 0` faces
//! `+y` and headings increase clockwise in 45 degree steps, so `h = 2` faces
//! `+x`. Move directions use the same indexing and are allocentric.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon;
use crate::rng;

pub const NUM_HEADINGS: u8 = 8;
pub const NUM_MOVES: usize = 9;
pub const NUM_ACTIONS: usize = NUM_MOVES * NUM_HEADINGS as usize;

/// Physical size of one cell in metres. Metadata only; geometry is in cells.
pub const CELL_SIZE_M: f64 = 0.25;
pub const HEADING_STEP_DEG: f64 = 45.0;

/// Unit offsets for directions D0..D7.
const DIRECTIONS: [(i64, i64); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("infeasible action {action} at {pose}")]
    InfeasibleAction { pose: Pose, action: Action },
    #[error("scene generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("scene JSON parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scene field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl From<[usize; 2]> for Cell {
    fn from(v: [usize; 2]) -> Self {
        Cell { x: v[0], y: v[1] }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Obstacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    LivingRoom,
    Kitchen,
    Bedroom,
    Bathroom,
}

impl RoomType {
    pub const ALL: [RoomType; 4] = [
        RoomType::LivingRoom,
        RoomType::Kitchen,
        RoomType::Bedroom,
        RoomType::Bathroom,
    ];

    /// The word used for this room in captions.
    pub fn word(self) -> &'static str {
        match self {
            RoomType::LivingRoom => "living_room",
            RoomType::Kitchen => "kitchen",
            RoomType::Bedroom => "bedroom",
            RoomType::Bathroom => "bathroom",
        }
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub footprint: Vec<Cell>,
    pub salience: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
    pub h: u8,
}

impl Pose {
    pub const fn new(x: usize, y: usize, h: u8) -> Self {
        Pose { x, y, h }
    }

    pub fn cell(self) -> Cell {
        Cell::new(self.x, self.y)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, h={})", self.x, self.y, self.h)
    }
}

/// One of the 8 allocentric move directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction(u8);

impl Direction {
    pub fn new(d: u8) -> Option<Self> {
        (d < 8).then_some(Direction(d))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn offset(self) -> (i64, i64) {
        DIRECTIONS[self.0 as usize]
    }
}

/// Composite action: an optional move followed by a clockwise rotation of
/// `rot * 45` degrees. `Stop` is no move and no rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    #[serde(rename = "move")]
    pub mv: Option<Direction>,
    pub rot: u8,
}

impl Action {
    pub const STOP: Action = Action { mv: None, rot: 0 };

    pub fn new(mv: Option<u8>, rot: u8) -> Option<Self> {
        let mv = match mv {
            Some(d) => Some(Direction::new(d)?),
            None => None,
        };
        (rot < NUM_HEADINGS).then_some(Action { mv, rot })
    }

    /// Dense index in `0..72`: `move_slot * 8 + rot` where slot 0 is no move.
    pub fn index(self) -> usize {
        let slot = self.mv.map_or(0, |d| d.0 as usize + 1);
        slot * NUM_HEADINGS as usize + self.rot as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i >= NUM_ACTIONS {
            return None;
        }
        let slot = i / NUM_HEADINGS as usize;
        let rot = (i % NUM_HEADINGS as usize) as u8;
        let mv = (slot > 0).then(|| Direction(slot as u8 - 1));
        Some(Action { mv, rot })
    }

    pub fn is_stop(self) -> bool {
        self == Action::STOP
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS).filter_map(Action::from_index)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mv {
            Some(d) => write!(f, "D{}+r{}", d.0, self.rot),
            None => write!(f, "none+r{}", self.rot),
        }
    }
}

/// Boolean feasibility mask over the 72 composite actions.
pub type ActionMask = [bool; NUM_ACTIONS];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub fov_deg: f64,
    pub range: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            fov_deg: 90.0,
            range: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    objects: Vec<SceneObject>,
    /// Object index per cell, if the cell belongs to a footprint.
    owner: Vec<Option<usize>>,
    room_type: RoomType,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisibleObject<'a> {
    pub object: &'a SceneObject,
    pub index: usize,
    pub distance: f64,
    pub bearing: f64,
}

impl Scene {
    /// Builds a scene from explicit parts and checks every invariant.
    pub fn new(
        width: usize,
        height: usize,
        obstacles: &[Cell],
        objects: Vec<SceneObject>,
        room_type: RoomType,
        seed: u64,
    ) -> Result<Self, SceneError> {
        if width < 3 || height < 3 {
            return Err(invalid("width/height", format!("scene must be at least 3x3, got {width}x{height}")));
        }
        let mut cells = vec![CellKind::Free; width * height];
        for (i, c) in obstacles.iter().enumerate() {
            if c.x >= width || c.y >= height {
                return Err(invalid(format!("obstacles[{i}]"), format!("cell [{}, {}] out of bounds", c.x, c.y)));
            }
            cells[c.y * width + c.x] = CellKind::Obstacle;
        }
        let mut owner = vec![None; width * height];
        for (k, obj) in objects.iter().enumerate() {
            if obj.footprint.is_empty() {
                return Err(invalid(format!("objects[{k}].footprint"), "footprint is empty"));
            }
            if !(obj.salience > 0.0 && obj.salience <= 1.0) {
                return Err(invalid(format!("objects[{k}].salience"), format!("{} not in (0, 1]", obj.salience)));
            }
            if obj.category.is_empty() {
                return Err(invalid(format!("objects[{k}].category"), "empty category"));
            }
            if objects[..k].iter().any(|o| o.id == obj.id) {
                return Err(invalid(format!("objects[{k}].id"), format!("duplicate id {}", obj.id)));
            }
            for (j, c) in obj.footprint.iter().enumerate() {
                let field = format!("objects[{k}].footprint[{j}]");
                if c.x >= width || c.y >= height {
                    return Err(invalid(field, format!("cell [{}, {}] out of bounds", c.x, c.y)));
                }
                let idx = c.y * width + c.x;
                if let Some(other) = owner[idx] {
                    if other != k {
                        return Err(invalid(field, format!("overlaps footprint of objects[{other}]")));
                    }
                }
                owner[idx] = Some(k);
                cells[idx] = CellKind::Obstacle;
            }
        }
        let scene = Scene {
            width,
            height,
            cells,
            objects,
            owner,
            room_type,
            seed,
        };
        let free = scene.free_cells();
        if free.is_empty() {
            return Err(invalid("obstacles", "scene has no free cell"));
        }
        if scene.reachable_count(free[0]) != free.len() {
            return Err(invalid("obstacles", "free cells are not 4-connected"));
        }
        Ok(scene)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn room_type(&self) -> RoomType {
        self.room_type
    }

    /// Scene seed; doubles as the scene identifier.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn kind(&self, c: Cell) -> CellKind {
        self.cells[c.y * self.width + c.x]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height && self.kind(c) == CellKind::Free
    }

    /// Index of the object whose footprint covers `c`.
    pub fn object_at(&self, c: Cell) -> Option<usize> {
        self.owner[c.y * self.width + c.x]
    }

    /// Free cells in row-major order (y outer, x inner).
    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                if self.kind(c) == CellKind::Free {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Non-footprint obstacle cells, row-major.
    pub fn bare_obstacles(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                if self.kind(c) == CellKind::Obstacle && self.object_at(c).is_none() {
                    out.push(c);
                }
            }
        }
        out
    }

    fn reachable_count(&self, from: Cell) -> usize {
        let mut seen = vec![false; self.width * self.height];
        let mut queue = VecDeque::from([from]);
        seen[from.y * self.width + from.x] = true;
        let mut count = 0;
        while let Some(c) = queue.pop_front() {
            count += 1;
            for (dx, dy) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
                let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
                if !self.in_bounds(nx, ny) {
                    continue;
                }
                let n = Cell::new(nx as usize, ny as usize);
                let idx = n.y * self.width + n.x;
                if !seen[idx] && self.kind(n) == CellKind::Free {
                    seen[idx] = true;
                    queue.push_back(n);
                }
            }
        }
        count
    }

    pub fn is_valid_pose(&self, p: Pose) -> bool {
        p.h < NUM_HEADINGS && self.is_free(p.cell())
    }

    fn move_target(&self, pose: Pose, dir: Direction) -> Option<Cell> {
        let (dx, dy) = dir.offset();
        let (nx, ny) = (pose.x as i64 + dx, pose.y as i64 + dy);
        if !self.in_bounds(nx, ny) {
            return None;
        }
        let c = Cell::new(nx as usize, ny as usize);
        (self.kind(c) == CellKind::Free).then_some(c)
    }

    /// Moves first, then rotates.
    pub fn apply_action(&self, pose: Pose, a: Action) -> Result<Pose, SceneError> {
        let cell = match a.mv {
            None => pose.cell(),
            Some(d) => self
                .move_target(pose, d)
                .ok_or(SceneError::InfeasibleAction { pose, action: a })?,
        };
        Ok(Pose::new(cell.x, cell.y, (pose.h + a.rot) % NUM_HEADINGS))
    }

    /// Rotations are never blocked; a move is feasible iff its target cell
    /// is an in-bounds free cell.
    pub fn feasible_actions(&self, pose: Pose) -> ActionMask {
        let mut mask = [false; NUM_ACTIONS];
        mask[..NUM_HEADINGS as usize].fill(true);
        for d in 0..8u8 {
            if self.move_target(pose, Direction(d)).is_some() {
                let start = (d as usize + 1) * NUM_HEADINGS as usize;
                mask[start..start + NUM_HEADINGS as usize].fill(true);
            }
        }
        mask
    }

    /// All viewpoints: free cells in row-major order, then heading.
    pub fn enumerate_viewpoints(&self) -> Vec<Pose> {
        self.free_cells()
            .into_iter()
            .flat_map(|c| (0..NUM_HEADINGS).map(move |h| Pose::new(c.x, c.y, h)))
            .collect()
    }

    /// True iff no cell strictly between `a` and `b` on the Bresenham line is
    /// an obstacle, ignoring the footprint of the object that contains `b`.
    pub fn line_of_sight(&self, a: Cell, b: Cell) -> bool {
        let target_owner = self.object_at(b);
        bresenham(a, b).into_iter().all(|c| {
            if c == a || c == b || self.kind(c) == CellKind::Free {
                return true;
            }
            target_owner.is_some() && self.object_at(c) == target_owner
        })
    }

    /// Objects visible from `pose`, nearest first (ties by id).
    pub fn visible_objects(&self, pose: Pose, view: &ViewConfig) -> Vec<VisibleObject<'_>> {
        let half = view.fov_deg / 2.0;
        let here = pose.cell();
        let mut out: Vec<VisibleObject<'_>> = Vec::new();
        for (index, obj) in self.objects.iter().enumerate() {
            let mut best: Option<(f64, f64)> = None;
            for &c in &obj.footprint {
                let (distance, bearing) = polar(pose, c);
                if distance > view.range + 1e-9 || bearing.abs() > half + 1e-9 {
                    continue;
                }
                if !self.line_of_sight(here, c) {
                    continue;
                }
                if best.is_none_or(|(d, _)| distance < d) {
                    best = Some((distance, bearing));
                }
            }
            if let Some((distance, bearing)) = best {
                out.push(VisibleObject {
                    object: obj,
                    index,
                    distance,
                    bearing,
                });
            }
        }
        out.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.object.id.cmp(&b.object.id))
        });
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SceneDoc::from(self)).expect("scene serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&SceneDoc::from(self)).expect("scene serializes")
    }

    /// Parses and validates a scene document.
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let doc: SceneDoc = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Scene::new(
            doc.width,
            doc.height,
            &doc.obstacles,
            doc.objects,
            doc.room_type,
            doc.seed,
        )
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Distance (cells) and bearing (degrees, clockwise positive, in
/// `(-180, 180]`) from a pose to a cell centre.
pub fn polar(pose: Pose, c: Cell) -> (f64, f64) {
    let dx = c.x as f64 - pose.x as f64;
    let dy = c.y as f64 - pose.y as f64;
    let distance = dx.hypot(dy);
    if distance == 0.0 {
        return (0.0, 0.0);
    }
    let absolute = dx.atan2(dy).to_degrees();
    (distance, wrap_degrees(absolute - HEADING_STEP_DEG * pose.h as f64))
}

pub fn wrap_degrees(a: f64) -> f64 {
    let mut r = a % 360.0;
    if r <= -180.0 {
        r += 360.0;
    } else if r > 180.0 {
        r -= 360.0;
    }
    r
}

/// Cells on the Bresenham line from `a` to `b`, inclusive of both ends.
pub fn bresenham(a: Cell, b: Cell) -> Vec<Cell> {
    let (mut x0, mut y0) = (a.x as i64, a.y as i64);
    let (x1, y1) = (b.x as i64, b.y as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push(Cell::new(x0 as usize, y0 as usize));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    width: usize,
    height: usize,
    room_type: RoomType,
    seed: u64,
    obstacles: Vec<Cell>,
    objects: Vec<SceneObject>,
}

impl From<&Scene> for SceneDoc {
    fn from(s: &Scene) -> Self {
        SceneDoc {
            width: s.width,
            height: s.height,
            room_type: s.room_type,
            seed: s.seed,
            obstacles: s.bare_obstacles(),
            objects: s.objects.clone(),
        }
    }
}

/// Inclusive ranges for procedural generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub room_type: RoomType,
    pub width: [usize; 2],
    pub height: [usize; 2],
    pub objects: [usize; 2],
    pub pillars: [usize; 2],
    /// Surround the room with a ring of obstacle cells.
    pub walls: bool,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            room_type: RoomType::LivingRoom,
            width: [10, 12],
            height: [10, 12],
            objects: [4, 7],
            pillars: [0, 2],
            walls: true,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, r) in [("width", self.width), ("height", self.height)] {
            if r[0] < 3 || r[0] > r[1] {
                return Err(SceneError::InvalidConfig(format!("{name} range {r:?}")));
            }
        }
        for (name, r) in [("objects", self.objects), ("pillars", self.pillars)] {
            if r[0] > r[1] {
                return Err(SceneError::InvalidConfig(format!("{name} range {r:?}")));
            }
        }
        let profile = lexicon::room_categories(self.room_type);
        if self.objects[1] > profile.len() {
            return Err(SceneError::InvalidConfig(format!(
                "at most {} objects for {}",
                profile.len(),
                self.room_type
            )));
        }
        Ok(())
    }
}

const GEN_ATTEMPTS: usize = 32;
const PLACEMENT_TRIES: usize = 64;
const SHAPES: [(usize, usize); 4] = [(1, 1), (2, 1), (1, 2), (2, 2)];

/// Deterministic procedural scene for `(config, seed)`.
pub fn generate_scene(config: &SceneGenConfig, seed: u64) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = rng::stream(&[rng::TAG_SCENE, seed]);
    let mut last_reason = String::new();
    for _ in 0..GEN_ATTEMPTS {
        match try_generate(config, seed, &mut rng) {
            Ok(scene) => return Ok(scene),
            Err(reason) => last_reason = reason,
        }
    }
    Err(SceneError::GenerationFailed {
        attempts: GEN_ATTEMPTS,
        reason: last_reason,
    })
}

fn try_generate(config: &SceneGenConfig, seed: u64, rng: &mut impl Rng) -> Result<Scene, String> {
    let width = rng.random_range(config.width[0]..=config.width[1]);
    let height = rng.random_range(config.height[0]..=config.height[1]);
    let mut grid = Grid {
        width,
        height,
        blocked: vec![false; width * height],
    };
    if config.walls {
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    grid.blocked[y * width + x] = true;
                }
            }
        }
    }
    if !grid.connected() {
        return Err("no free interior".into());
    }

    let pillars = rng.random_range(config.pillars[0]..=config.pillars[1]);
    for _ in 0..pillars {
        for _ in 0..PLACEMENT_TRIES {
            let c = Cell::new(rng.random_range(0..width), rng.random_range(0..height));
            if grid.try_block(&[c]) {
                break;
            }
        }
    }

    let mut categories: Vec<&str> = lexicon::room_categories(config.room_type).to_vec();
    categories.shuffle(rng);
    let count = rng.random_range(config.objects[0]..=config.objects[1]);
    let mut objects = Vec::with_capacity(count);
    for (id, category) in categories.into_iter().take(count).enumerate() {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let (w, h) = SHAPES[rng.random_range(0..SHAPES.len())];
            if w > width || h > height {
                continue;
            }
            let x0 = rng.random_range(0..=width - w);
            let y0 = rng.random_range(0..=height - h);
            let footprint: Vec<Cell> = (0..h)
                .flat_map(|dy| (0..w).map(move |dx| Cell::new(x0 + dx, y0 + dy)))
                .collect();
            if grid.try_block(&footprint) {
                placed = Some(footprint);
                break;
            }
        }
        let footprint = placed.ok_or_else(|| format!("could not place {category}"))?;
        let salience = rng.random_range(0.5..=1.0);
        objects.push(SceneObject {
            id: id as u32,
            category: category.to_string(),
            footprint,
            salience,
        });
    }

    let mut obstacles: Vec<Cell> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let c = Cell::new(x, y);
            let in_object = objects.iter().any(|o| o.footprint.contains(&c));
            if grid.blocked[y * width + x] && !in_object {
                obstacles.push(c);
            }
        }
    }
    Scene::new(width, height, &obstacles, objects, config.room_type, seed).map_err(|e| e.to_string())
}

struct Grid {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

impl Grid {
    /// Blocks all cells if they are currently free and the free region stays
    /// non-empty and connected; otherwise leaves the grid unchanged.
    fn try_block(&mut self, cells: &[Cell]) -> bool {
        if cells.iter().any(|c| self.blocked[c.y * self.width + c.x]) {
            return false;
        }
        for c in cells {
            self.blocked[c.y * self.width + c.x] = true;
        }
        if self.connected() {
            true
        } else {
            for c in cells {
                self.blocked[c.y * self.width + c.x] = false;
            }
            false
        }
    }

    fn connected(&self) -> bool {
        let Some(start) = self.blocked.iter().position(|b| !b) else {
            return false;
        };
        let total = self.blocked.iter().filter(|b| !**b).count();
        let mut seen = vec![false; self.blocked.len()];
        seen[start] = true;
        let mut stack = vec![start];
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = (i % self.width, i / self.width);
            let mut visit = |j: usize| {
                if !self.blocked[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < self.width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - self.width);
            }
            if y + 1 < self.height {
                visit(i + self.width);
            }
        }
        count == total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn empty(w: usize, h: usize) -> Scene {
        Scene::new(w, h, &[], vec![], RoomType::LivingRoom, 1).unwrap()
    }

    fn object(id: u32, category: &str, cells: &[(usize, usize)]) -> SceneObject {
        SceneObject {
            id,
            category: category.into(),
            footprint: cells.iter().map(|&(x, y)| Cell::new(x, y)).collect(),
            salience: 1.0,
        }
    }

    #[test]
    fn action_indexing_roundtrips() {
        for i in 0..NUM_ACTIONS {
            assert_eq!(Action::from_index(i).unwrap().index(), i);
        }
        assert_eq!(Action::STOP.index(), 0);
        assert_eq!(Action::all().count(), 72);
    }

    #[test]
    fn move_then_rotate() {
        let s = empty(5, 5);
        let a = Action::new(Some(2), 2).unwrap();
        assert_eq!(s.apply_action(Pose::new(2, 2, 0), a).unwrap(), Pose::new(3, 2, 2));
    }

    #[test]
    fn stop_is_identity() {
        let s = empty(5, 5);
        let p = Pose::new(2, 2, 5);
        assert_eq!(s.apply_action(p, Action::STOP).unwrap(), p);
        assert!(Action::STOP.is_stop());
    }

    #[test]
    fn blocked_move_is_infeasible() {
        let s = Scene::new(5, 5, &[Cell::new(2, 3)], vec![], RoomType::Kitchen, 0).unwrap();
        let a = Action::new(Some(0), 7).unwrap();
        assert!(matches!(
            s.apply_action(Pose::new(2, 2, 0), a),
            Err(SceneError::InfeasibleAction { .. })
        ));
    }

    #[test]
    fn interior_pose_has_all_actions() {
        let s = empty(5, 5);
        let mask = s.feasible_actions(Pose::new(2, 2, 3));
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn dead_end_mask() {
        // Only the middle column is free; (1,0) has a single open neighbour.
        let obstacles: Vec<Cell> = [(0, 0), (2, 0), (0, 1), (2, 1), (0, 2), (2, 2)]
            .iter()
            .map(|&(x, y)| Cell::new(x, y))
            .collect();
        let s = Scene::new(3, 3, &obstacles, vec![], RoomType::Bathroom, 0).unwrap();
        let mask = s.feasible_actions(Pose::new(1, 0, 0));
        assert_eq!(mask.iter().filter(|&&m| m).count(), 16);
        assert!(mask[Action::STOP.index()]);
    }

    #[test]
    fn viewpoint_counts() {
        assert_eq!(empty(3, 3).enumerate_viewpoints().len(), 72);
        let s = Scene::new(3, 3, &[Cell::new(0, 0)], vec![], RoomType::Bedroom, 0).unwrap();
        assert_eq!(s.enumerate_viewpoints().len(), 64);
    }

    #[test]
    fn line_of_sight_cases() {
        let s = Scene::new(7, 3, &[Cell::new(3, 1)], vec![], RoomType::Kitchen, 0).unwrap();
        let a = Cell::new(0, 1);
        assert!(s.line_of_sight(a, a));
        assert!(s.line_of_sight(Cell::new(0, 0), Cell::new(6, 0)));
        assert!(!s.line_of_sight(a, Cell::new(6, 1)));
    }

    #[test]
    fn own_footprint_does_not_occlude() {
        let s = Scene::new(
            7,
            3,
            &[],
            vec![object(0, "couch", &[(4, 1), (5, 1)])],
            RoomType::LivingRoom,
            0,
        )
        .unwrap();
        assert!(s.line_of_sight(Cell::new(0, 1), Cell::new(5, 1)));
    }

    #[test]
    fn visibility_ahead_behind_and_range() {
        let objs = vec![object(0, "couch", &[(5, 7)]), object(1, "table", &[(5, 2)])];
        let s = Scene::new(11, 20, &[], objs, RoomType::LivingRoom, 0).unwrap();
        let view = ViewConfig::default();
        let vis = s.visible_objects(Pose::new(5, 5, 0), &view);
        assert_eq!(vis.len(), 1);
        assert_eq!(vis[0].object.category, "couch");
        assert_eq!(vis[0].distance, 2.0);
        assert_eq!(vis[0].bearing, 0.0);

        let far = vec![object(0, "couch", &[(5, 16)])];
        let s = Scene::new(11, 20, &[], far, RoomType::LivingRoom, 0).unwrap();
        assert!(s.visible_objects(Pose::new(5, 5, 0), &view).is_empty());
    }

    #[test]
    fn bearing_is_clockwise() {
        let (_, b) = polar(Pose::new(0, 0, 0), Cell::new(1, 0));
        assert!((b - 90.0).abs() < 1e-12);
        let (_, b) = polar(Pose::new(0, 0, 2), Cell::new(0, 1));
        assert!((b + 90.0).abs() < 1e-12);
        let (_, b) = polar(Pose::new(1, 1, 0), Cell::new(1, 0));
        assert_eq!(b, 180.0);
    }

    #[test]
    fn overlapping_footprints_rejected() {
        let objs = vec![object(0, "couch", &[(1, 1)]), object(1, "table", &[(1, 1)])];
        let err = Scene::new(5, 5, &[], objs, RoomType::LivingRoom, 0).unwrap_err();
        assert!(err.to_string().contains("objects[1].footprint[0]"), "{err}");
    }

    #[test]
    fn disconnected_rejected() {
        let wall: Vec<Cell> = (0..5).map(|y| Cell::new(2, y)).collect();
        assert!(Scene::new(5, 5, &wall, vec![], RoomType::Kitchen, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneGenConfig::default();
        let a = generate_scene(&cfg, 42).unwrap();
        let b = generate_scene(&cfg, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn zero_objects() {
        let cfg = SceneGenConfig {
            objects: [0, 0],
            ..Default::default()
        };
        assert!(generate_scene(&cfg, 3).unwrap().objects().is_empty());
    }

    #[test]
    fn json_roundtrip_and_diagnostics() {
        let s = generate_scene(&SceneGenConfig::default(), 9).unwrap();
        let back = Scene::from_json(&s.to_json_pretty()).unwrap();
        assert_eq!(s, back);

        let err = Scene::from_json("{\n \"width\": 3,\n \"height\": }").unwrap_err();
        assert!(matches!(err, SceneError::Parse { line: 3, .. }), "{err}");

        let bad = r#"{"width":4,"height":4,"room_type":"kitchen","seed":0,"obstacles":[],
            "objects":[{"id":0,"category":"sink","footprint":[[9,9]],"salience":0.5}]}"#;
        let err = Scene::from_json(bad).unwrap_err();
        assert!(err.to_string().contains("objects[0].footprint[0]"), "{err}");
    }
}
