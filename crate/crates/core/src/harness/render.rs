use std::fmt::Write;

use super::eval::EpisodeTrace;
use super::HarnessError;
use crate::gridworld::{category_name, AgentState, SceneSpec};

const CELL_PX: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub svg: String,
    pub ascii: String,
}

fn positions(trace: &EpisodeTrace) -> Vec<AgentState> {
    trace.steps.iter().map(|s| s.state).chain(std::iter::once(trace.final_state)).collect()
}

fn center(s: &AgentState) -> (usize, usize) {
    (s.x * CELL_PX + CELL_PX / 2, s.y * CELL_PX + CELL_PX / 2)
}

/// Top-down view: walls, objects with the target highlighted, the path
/// colored by outcome, and deadlock steps marked.
pub fn render_trajectory(scene: &SceneSpec, trace: &EpisodeTrace) -> Result<Rendering, HarnessError> {
    let walls = scene.wall_set();
    let blocked = |x: usize, y: usize| walls.contains(&(x, y)) || scene.objects.iter().any(|o| (o.x, o.y) == (x, y));
    let path = positions(trace);
    for s in &path {
        if !scene.in_bounds(s.x as i64, s.y as i64) || blocked(s.x, s.y) {
            return Err(HarnessError::Render(format!("pose ({}, {}) is not free in {}", s.x, s.y, scene.scene_id)));
        }
    }
    if !scene.objects.iter().any(|o| o.category == trace.target) {
        return Err(HarnessError::Render(format!("target {} absent from {}", trace.target, scene.scene_id)));
    }
    let outcome = if trace.success() { "success" } else { "failure" };
    let color = if trace.success() { "#2e9e44" } else { "#d0342c" };
    let (w, h) = (scene.width * CELL_PX, scene.height * CELL_PX);
    let mut svg = String::new();
    // Grid y grows downward in the image; flip so that +y points up.
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<g transform="translate(0 {h}) scale(1 -1)">"#);
    let _ = writeln!(svg, r##"<rect class="floor" x="0" y="0" width="{w}" height="{h}" fill="#f4f1ea"/>"##);
    for &(x, y) in &walls {
        let _ = writeln!(
            svg,
            r##"<rect class="wall" x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="#444"/>"##,
            x * CELL_PX,
            y * CELL_PX
        );
    }
    for o in &scene.objects {
        let is_target = o.category == trace.target;
        let (class, fill) = if is_target { ("object target", "#f2b705") } else { ("object", "#7a8ca3") };
        let _ = writeln!(
            svg,
            r#"<circle class="{class}" data-category="{}" cx="{}" cy="{}" r="{}" fill="{fill}"/>"#,
            category_name(o.category),
            o.x * CELL_PX + CELL_PX / 2,
            o.y * CELL_PX + CELL_PX / 2,
            CELL_PX * 3 / 8
        );
    }
    let points: Vec<String> = path.iter().map(|s| {
        let (x, y) = center(s);
        format!("{x},{y}")
    }).collect();
    let _ = writeln!(
        svg,
        r#"<polyline class="path {outcome}" points="{}" fill="none" stroke="{color}" stroke-width="3"/>"#,
        points.join(" ")
    );
    for step in trace.steps.iter().filter(|s| s.deadlock) {
        let (x, y) = center(&step.state);
        let _ = writeln!(svg, r##"<rect class="deadlock" x="{}" y="{}" width="8" height="8" fill="#8e3bd1"/>"##, x - 4, y - 4);
    }
    svg.push_str("</g>\n</svg>\n");

    let mut grid = vec![vec!['.'; scene.width]; scene.height];
    for &(x, y) in &walls {
        grid[y][x] = '#';
    }
    for o in &scene.objects {
        grid[o.y][o.x] = if o.category == trace.target { 'T' } else { 'o' };
    }
    for s in &path {
        grid[s.y][s.x] = '*';
    }
    for step in trace.steps.iter().filter(|s| s.deadlock) {
        grid[step.state.y][step.state.x] = '!';
    }
    let start = path[0];
    let end = trace.final_state;
    grid[start.y][start.x] = 'S';
    grid[end.y][end.x] = 'E';
    let mut ascii = String::new();
    for row in grid.iter().rev() {
        ascii.extend(row.iter());
        ascii.push('\n');
    }
    let _ = writeln!(ascii, "{outcome} in {} steps", trace.steps.len());
    Ok(Rendering { svg, ascii })
}
