//! Synthetic egocentric perception: oracle detections with confidence noise,
//! per-category appearance vectors and a coarse global view descriptor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::category::{CATEGORY_HEIGHTS, NUM_CATEGORIES};
use super::state::AgentState;
use super::world::World;

pub const APPEARANCE_DIM: usize = 16;
pub const GLOBAL_DIM: usize = 64;

const WINDOW_HALF_WIDTH: i64 = 3;
const WINDOW_DEPTH: i64 = 6;
const SIGNATURE_SEED: u64 = 0x0516_7a7e_c0de_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub horizontal_fov_deg: f64,
    /// Half of the vertical field of view.
    pub vertical_half_fov_deg: f64,
    pub range_cells: f64,
    pub eye_height_m: f64,
    /// Uniform confidence noise amplitude; 0 disables noise.
    pub confidence_noise: f64,
    /// Box half-size numerator: half-size = min(0.5, k / distance_m).
    pub bbox_scale: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            horizontal_fov_deg: 90.0,
            vertical_half_fov_deg: 45.0,
            range_cells: 10.0,
            eye_height_m: 1.0,
            confidence_noise: 0.0,
            bbox_scale: 0.25,
        }
    }
}

impl SensorConfig {
    pub fn noisy() -> Self {
        Self {
            confidence_noise: 0.1,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x1, y1, x2, y2]` in normalized image coordinates.
    pub bbox: [f64; 4],
    pub confidence: f64,
}

impl Detection {
    pub fn is_detected(&self) -> bool {
        self.confidence > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub detections: [Detection; NUM_CATEGORIES],
    pub appearance: [[f64; APPEARANCE_DIM]; NUM_CATEGORIES],
    pub global: [f64; GLOBAL_DIM],
}

impl Observation {
    pub fn empty() -> Self {
        Self {
            detections: [Detection::default(); NUM_CATEGORIES],
            appearance: [[0.0; APPEARANCE_DIM]; NUM_CATEGORIES],
            global: [0.0; GLOBAL_DIM],
        }
    }

    pub fn detected_count(&self) -> usize {
        self.detections.iter().filter(|d| d.is_detected()).count()
    }
}

/// Geometry of one object relative to the agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sighting {
    pub distance_cells: f64,
    /// Positive to the agent's left, degrees in (-180, 180].
    pub bearing_deg: f64,
    /// Elevation relative to the camera axis, degrees.
    pub relative_elevation_deg: f64,
    pub visible: bool,
}

fn wrap_degrees(mut d: f64) -> f64 {
    while d > 180.0 {
        d -= 360.0;
    }
    while d <= -180.0 {
        d += 360.0;
    }
    d
}

/// Cells strictly between `a` and `b` on the Bresenham line.
pub fn line_cells(a: (usize, usize), b: (usize, usize)) -> Vec<(usize, usize)> {
    let (mut x0, mut y0) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        if (x0, y0) == (x1, y1) {
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
        if (x0, y0) != (x1, y1) {
            out.push((x0 as usize, y0 as usize));
        }
    }
    out
}

pub fn sight(world: &World, state: &AgentState, cell: (usize, usize), category: usize) -> Sighting {
    let cfg = &world.sensor;
    let dx = cell.0 as f64 - state.x as f64;
    let dy = cell.1 as f64 - state.y as f64;
    let distance_cells = (dx * dx + dy * dy).sqrt();
    if distance_cells == 0.0 {
        return Sighting {
            distance_cells,
            bearing_deg: 0.0,
            relative_elevation_deg: 0.0,
            visible: false,
        };
    }
    let bearing_deg = wrap_degrees(dy.atan2(dx).to_degrees() - state.heading.degrees() as f64);
    let distance_m = distance_cells * world.scene.cell_size;
    let elevation = (CATEGORY_HEIGHTS[category] - cfg.eye_height_m)
        .atan2(distance_m)
        .to_degrees();
    let relative_elevation_deg = elevation - state.pitch.degrees() as f64;
    let in_frustum = bearing_deg.abs() <= cfg.horizontal_fov_deg / 2.0 + 1e-9
        && relative_elevation_deg.abs() <= cfg.vertical_half_fov_deg + 1e-9;
    let visible = in_frustum
        && distance_cells <= cfg.range_cells
        && !line_cells((state.x, state.y), cell)
            .into_iter()
            .any(|c| world.is_wall(c.0, c.1));
    Sighting {
        distance_cells,
        bearing_deg,
        relative_elevation_deg,
        visible,
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pose_key(state: &AgentState) -> u64 {
    ((state.x as u64) << 24) | ((state.y as u64) << 8) | ((state.heading.index() as u64) << 2) | state.pitch.index() as u64
}

/// Uniform noise in `[-amp, amp]`, a pure function of its inputs.
fn confidence_noise(noise_seed: u64, state: &AgentState, instance: usize, amp: f64) -> f64 {
    if amp == 0.0 {
        return 0.0;
    }
    let h = mix64(noise_seed ^ mix64(pose_key(state) ^ mix64(instance as u64 + 1)));
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    (2.0 * unit - 1.0) * amp
}

/// Fixed appearance signature of each category.
pub fn category_signature(category: usize) -> [f64; APPEARANCE_DIM] {
    let mut rng = ChaCha8Rng::seed_from_u64(SIGNATURE_SEED ^ mix64(category as u64));
    let mut sig = [0.0; APPEARANCE_DIM];
    for v in &mut sig {
        *v = rng.gen_range(0.0..1.0);
    }
    sig
}

fn project_bbox(s: &Sighting, cell_size: f64, cfg: &SensorConfig) -> [f64; 4] {
    let cx = 0.5 - s.bearing_deg / cfg.horizontal_fov_deg;
    let cy = 0.5 - s.relative_elevation_deg / (2.0 * cfg.vertical_half_fov_deg);
    let half = (cfg.bbox_scale / (s.distance_cells * cell_size)).min(0.5);
    [
        (cx - half).clamp(0.0, 1.0),
        (cy - half).clamp(0.0, 1.0),
        (cx + half).clamp(0.0, 1.0),
        (cy + half).clamp(0.0, 1.0),
    ]
}

/// Renders the egocentric observation. Deterministic in
/// `(world, state, noise_seed)`; the target does not change what is seen.
pub fn render_observation(world: &World, state: &AgentState, _target: usize, noise_seed: u64) -> Observation {
    let cfg = &world.sensor;
    let mut obs = Observation::empty();
    let mut visible_counts = [0usize; NUM_CATEGORIES];
    for (i, o) in world.scene.objects.iter().enumerate() {
        let s = sight(world, state, (o.x, o.y), o.category);
        if !s.visible {
            continue;
        }
        visible_counts[o.category] += 1;
        let conf = (1.0 - s.distance_cells / cfg.range_cells
            + confidence_noise(noise_seed, state, i, cfg.confidence_noise))
        .clamp(0.0, 1.0);
        if conf <= obs.detections[o.category].confidence {
            continue;
        }
        obs.detections[o.category] = Detection {
            bbox: project_bbox(&s, world.scene.cell_size, cfg),
            confidence: conf,
        };
        let sig = category_signature(o.category);
        let bearing = s.bearing_deg.to_radians();
        let dist = s.distance_cells * world.scene.cell_size;
        for (k, v) in obs.appearance[o.category].iter_mut().enumerate() {
            let kf = (k + 1) as f64;
            *v = sig[k] + 0.05 * (kf * bearing + 0.3 * kf * dist).sin();
        }
    }

    // Egocentric occupancy window, shifted nearer when looking down.
    let (fx, fy) = state.heading.delta();
    let (lx, ly) = (-fy, fx);
    let near = 1 + state.pitch.degrees() as i64 / 30;
    let mut g = 0;
    for f in near..near + WINDOW_DEPTH {
        for l in -WINDOW_HALF_WIDTH..=WINDOW_HALF_WIDTH {
            let x = state.x as i64 + f * fx + l * lx;
            let y = state.y as i64 + f * fy + l * ly;
            obs.global[g] = if !world.scene.in_bounds(x, y) || world.is_wall(x as usize, y as usize) {
                1.0
            } else if world.is_object(x as usize, y as usize) {
                0.5
            } else {
                0.0
            };
            g += 1;
        }
    }
    for (c, &n) in visible_counts.iter().enumerate() {
        obs.global[g + c] = (n as f64 / 2.0).min(1.0);
    }
    obs
}
