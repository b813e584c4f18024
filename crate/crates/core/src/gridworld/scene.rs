//! Procedural rooms: walls, placed object instances, and the JSON scene file.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::category::{SceneType, NUM_CATEGORIES};
use super::WorldError;

pub const SCENE_FILE_VERSION: u32 = 1;
pub const DEFAULT_CELL_SIZE: f64 = 0.5;
/// Minimum number of distinct categories a scene must contain.
pub const MIN_TARGET_CATEGORIES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: usize,
    pub x: usize,
    pub y: usize,
}

/// An immutable room. Out-of-grid cells count as walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub scene_type: SceneType,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub walls: Vec<[usize; 2]>,
    pub objects: Vec<ObjectInstance>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    #[serde(flatten)]
    scene: SceneSpec,
}

impl SceneSpec {
    pub fn to_json(&self) -> String {
        let file = SceneFile {
            version: SCENE_FILE_VERSION,
            scene: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<SceneSpec, WorldError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| WorldError::SceneFile(e.to_string()))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(SCENE_FILE_VERSION as u64) {
            return Err(WorldError::SceneFile(format!(
                "unsupported scene file version {version:?}, expected {SCENE_FILE_VERSION}"
            )));
        }
        let file: SceneFile =
            serde_json::from_value(value).map_err(|e| WorldError::SceneFile(e.to_string()))?;
        file.scene.validate()?;
        Ok(file.scene)
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn wall_set(&self) -> BTreeSet<(usize, usize)> {
        self.walls.iter().map(|w| (w[0], w[1])).collect()
    }

    pub fn distinct_categories(&self) -> BTreeSet<usize> {
        self.objects.iter().map(|o| o.category).collect()
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.width == 0 || self.height == 0 {
            return Err(WorldError::InvalidScene("empty grid".into()));
        }
        if !(self.cell_size > 0.0) {
            return Err(WorldError::InvalidScene("cell size must be positive".into()));
        }
        let walls = self.wall_set();
        for w in &walls {
            if w.0 >= self.width || w.1 >= self.height {
                return Err(WorldError::InvalidScene(format!("wall {w:?} outside grid")));
            }
        }
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if o.category >= NUM_CATEGORIES {
                return Err(WorldError::InvalidScene(format!(
                    "category {} out of range",
                    o.category
                )));
            }
            if o.x >= self.width || o.y >= self.height {
                return Err(WorldError::InvalidScene(format!("object {o:?} outside grid")));
            }
            if walls.contains(&(o.x, o.y)) {
                return Err(WorldError::InvalidScene(format!("object {o:?} on a wall")));
            }
            if !seen.insert((o.x, o.y)) {
                return Err(WorldError::InvalidScene(format!("two objects share cell {o:?}")));
            }
        }
        if self.distinct_categories().len() < MIN_TARGET_CATEGORIES {
            return Err(WorldError::InvalidScene(format!(
                "fewer than {MIN_TARGET_CATEGORIES} distinct categories"
            )));
        }
        let blocked = blocked_grid(self.width, self.height, &walls, &self.objects);
        if !is_connected(self.width, self.height, &blocked) {
            return Err(WorldError::InvalidScene("free cells are not connected".into()));
        }
        Ok(())
    }
}

/// Two categories that tend to be placed near each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcurrencePair {
    pub anchor: usize,
    pub partner: usize,
    /// Chance that the partner lands within `radius` of the anchor.
    pub probability: f64,
    /// Euclidean separation limit, in cells.
    pub radius: f64,
}

/// Recipe for a family of rooms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub scene_type: SceneType,
    /// Inclusive range.
    pub width: (usize, usize),
    pub height: (usize, usize),
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Number of straight interior wall segments.
    #[serde(default)]
    pub interior_walls: usize,
    /// Inclusive range of object instances per room.
    pub object_count: (usize, usize),
    /// Categories always placed once.
    pub required: Vec<usize>,
    /// Extra instances are drawn from this pool.
    #[serde(default)]
    pub pool: Vec<usize>,
    #[serde(default)]
    pub pairs: Vec<ConcurrencePair>,
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}

impl SceneTemplate {
    pub fn from_json(text: &str) -> Result<SceneTemplate, WorldError> {
        serde_json::from_str(text).map_err(|e| WorldError::Template(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Template(m));
        if self.width.0 == 0 || self.width.0 > self.width.1 || self.height.0 == 0 || self.height.0 > self.height.1 {
            return bad("invalid room size range".into());
        }
        if self.object_count.0 > self.object_count.1 {
            return bad("invalid object count range".into());
        }
        for &c in self.required.iter().chain(&self.pool) {
            if c >= NUM_CATEGORIES {
                return bad(format!("category {c} out of range"));
            }
        }
        for p in &self.pairs {
            if p.anchor >= NUM_CATEGORIES || p.partner >= NUM_CATEGORIES || p.anchor == p.partner {
                return bad(format!("invalid pair {}-{}", p.anchor, p.partner));
            }
            if !(0.0..=1.0).contains(&p.probability) || !(p.radius >= 1.0) {
                return bad(format!("invalid pair parameters {}-{}", p.anchor, p.partner));
            }
        }
        let mut distinct: BTreeSet<usize> = self.required.iter().copied().collect();
        for p in &self.pairs {
            distinct.insert(p.anchor);
            distinct.insert(p.partner);
        }
        if distinct.len() < MIN_TARGET_CATEGORIES {
            return bad(format!(
                "template guarantees only {} distinct categories, need {MIN_TARGET_CATEGORIES}",
                distinct.len()
            ));
        }
        Ok(())
    }

    /// Built-in room recipe for each scene type, with two concurrence pairs.
    pub fn builtin(scene_type: SceneType, probability: f64) -> SceneTemplate {
        use super::category::category_by_name as c;
        let id = |n: &str| c(n).expect("builtin category");
        let pair = |a: &str, b: &str| ConcurrencePair {
            anchor: id(a),
            partner: id(b),
            probability,
            radius: 2.0,
        };
        let (required, pool, pairs): (Vec<&str>, Vec<&str>, _) = match scene_type {
            SceneType::Kitchen => (
                vec!["Fridge", "Sink", "Microwave"],
                vec!["GarbageCan", "Fridge", "Sink"],
                vec![pair("CoffeeMachine", "Toaster"), pair("StoveBurner", "Kettle")],
            ),
            SceneType::LivingRoom => (
                vec!["Laptop", "FloorLamp", "GarbageCan"],
                vec!["Book", "FloorLamp"],
                vec![pair("Television", "RemoteControl"), pair("Sofa", "Pillow")],
            ),
            SceneType::Bedroom => (
                vec!["Laptop", "GarbageCan", "FloorLamp"],
                vec!["Pillow", "Book"],
                vec![pair("Bed", "AlarmClock"), pair("Book", "DeskLamp")],
            ),
            SceneType::Bathroom => (
                vec!["Towel", "GarbageCan", "Sink"],
                vec!["Towel"],
                vec![pair("Toilet", "ToiletPaper"), pair("Sink", "SoapBottle")],
            ),
        };
        SceneTemplate {
            scene_type,
            width: (7, 10),
            height: (7, 10),
            cell_size: DEFAULT_CELL_SIZE,
            interior_walls: 1,
            object_count: (7, 9),
            required: required.into_iter().map(id).collect(),
            pool: pool.into_iter().map(id).collect(),
            pairs,
        }
    }
}

pub(crate) fn blocked_grid(
    width: usize,
    height: usize,
    walls: &BTreeSet<(usize, usize)>,
    objects: &[ObjectInstance],
) -> Vec<bool> {
    let mut blocked = vec![false; width * height];
    for &(x, y) in walls {
        blocked[y * width + x] = true;
    }
    for o in objects {
        blocked[o.y * width + o.x] = true;
    }
    blocked
}

/// Whether all unblocked cells form one 4-connected component.
pub(crate) fn is_connected(width: usize, height: usize, blocked: &[bool]) -> bool {
    let Some(start) = blocked.iter().position(|b| !b) else {
        return false;
    };
    let total = blocked.iter().filter(|b| !**b).count();
    let mut seen = vec![false; blocked.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % width) as i64, (i / width) as i64);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx as usize >= width || ny as usize >= height {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            if !blocked[j] && !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == total
}

struct Builder {
    width: usize,
    height: usize,
    walls: BTreeSet<(usize, usize)>,
    objects: Vec<ObjectInstance>,
}

impl Builder {
    fn blocked(&self) -> Vec<bool> {
        blocked_grid(self.width, self.height, &self.walls, &self.objects)
    }

    fn free_cells(&self) -> Vec<(usize, usize)> {
        let blocked = self.blocked();
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| !blocked[y * self.width + x])
            .collect()
    }

    /// Blocking `(x, y)` keeps the free cells connected and leaves room to move.
    fn can_block(&self, x: usize, y: usize) -> bool {
        let mut blocked = self.blocked();
        if blocked[y * self.width + x] {
            return false;
        }
        blocked[y * self.width + x] = true;
        blocked.iter().filter(|b| !**b).count() >= 2 && is_connected(self.width, self.height, &blocked)
    }

    fn place(
        &mut self,
        category: usize,
        rng: &mut ChaCha8Rng,
        accept: impl Fn(usize, usize) -> bool,
    ) -> Option<(usize, usize)> {
        let mut cells: Vec<_> = self.free_cells().into_iter().filter(|&(x, y)| accept(x, y)).collect();
        cells.shuffle(rng);
        let cell = cells.into_iter().find(|&(x, y)| self.can_block(x, y))?;
        self.objects.push(ObjectInstance {
            category,
            x: cell.0,
            y: cell.1,
        });
        Some(cell)
    }

    fn position_of(&self, category: usize) -> Option<(usize, usize)> {
        self.objects
            .iter()
            .find(|o| o.category == category)
            .map(|o| (o.x, o.y))
    }
}

fn cell_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Seeded procedural room from `template`. The same `(seed, template)` always
/// yields the same scene.
pub fn generate_scene(seed: u64, template: &SceneTemplate) -> Result<SceneSpec, WorldError> {
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.gen_range(template.width.0..=template.width.1);
    let height = rng.gen_range(template.height.0..=template.height.1);
    let mut b = Builder {
        width,
        height,
        walls: BTreeSet::new(),
        objects: Vec::new(),
    };

    for _ in 0..template.interior_walls {
        // A few attempts per segment; a segment that would disconnect the room
        // is dropped.
        for _ in 0..8 {
            let horizontal = rng.gen_bool(0.5);
            let span = if horizontal { width } else { height };
            if span < 4 {
                break;
            }
            let len = rng.gen_range(2..=span / 2);
            let (x0, y0) = if horizontal {
                (rng.gen_range(0..=width - len), rng.gen_range(1..height.saturating_sub(1).max(2)))
            } else {
                (rng.gen_range(1..width.saturating_sub(1).max(2)), rng.gen_range(0..=height - len))
            };
            let cells: Vec<(usize, usize)> = (0..len)
                .map(|k| if horizontal { (x0 + k, y0) } else { (x0, y0 + k) })
                .filter(|&(x, y)| x < width && y < height)
                .collect();
            let mut walls = b.walls.clone();
            walls.extend(cells.iter().copied());
            let blocked = blocked_grid(width, height, &walls, &b.objects);
            if is_connected(width, height, &blocked) {
                b.walls = walls;
                break;
            }
        }
    }

    let target_count = rng.gen_range(template.object_count.0..=template.object_count.1);
    let unsat = || WorldError::Unsatisfiable {
        width,
        height,
        objects: target_count.max(template.required.len()),
    };

    for pair in &template.pairs {
        let anchor = match b.position_of(pair.anchor) {
            Some(p) => p,
            None => b.place(pair.anchor, &mut rng, |_, _| true).ok_or_else(unsat)?,
        };
        let near = rng.gen_bool(pair.probability);
        let r = pair.radius;
        let placed = if near {
            b.place(pair.partner, &mut rng, |x, y| cell_distance((x, y), anchor) <= r)
        } else {
            b.place(pair.partner, &mut rng, |x, y| cell_distance((x, y), anchor) > r)
        };
        if placed.is_none() {
            b.place(pair.partner, &mut rng, |_, _| true).ok_or_else(unsat)?;
        }
    }
    for &c in &template.required {
        if b.position_of(c).is_none() {
            b.place(c, &mut rng, |_, _| true).ok_or_else(unsat)?;
        }
    }
    let pool: Vec<usize> = if template.pool.is_empty() {
        template.required.clone()
    } else {
        template.pool.clone()
    };
    while b.objects.len() < target_count && !pool.is_empty() {
        let c = *pool.choose(&mut rng).expect("non-empty pool");
        if b.place(c, &mut rng, |_, _| true).is_none() {
            return Err(unsat());
        }
    }

    let scene = SceneSpec {
        scene_id: format!("{}-{seed:016x}", template.scene_type),
        scene_type: template.scene_type,
        width,
        height,
        cell_size: template.cell_size,
        walls: b.walls.iter().map(|&(x, y)| [x, y]).collect(),
        objects: b.objects,
        seed,
    };
    scene.validate()?;
    Ok(scene)
}
