//! Shortest-path expert over the discrete pose graph.
//!
//! Nodes are agent poses, edges the five motion actions with unit cost. The
//! distance field is computed once per (scene, target) by Dijkstra from the
//! set of success poses over reversed edges; the expert then reads off the
//! first action of a shortest sequence with a fixed action-order tie-break.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::state::{Action, AgentState};
use super::world::{success_check, transition, World};
use super::WorldError;

const UNREACHABLE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    target: usize,
    /// Motion steps to the nearest success pose, per state index.
    dist: Vec<u32>,
    goal: Vec<bool>,
}

impl DistanceField {
    pub fn compute(world: &World, target: usize) -> DistanceField {
        let n = world.state_count();
        let mut reverse: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut goal = vec![false; n];
        for i in 0..n {
            let s = world.state_at(i);
            if !world.is_valid_state(&s) {
                continue;
            }
            goal[i] = success_check(world, &s, target);
            for a in Action::MOTIONS {
                let (next, _) = transition(world, &s, a);
                let j = world.state_index(&next);
                if j != i {
                    reverse[j].push(i as u32);
                }
            }
        }
        let mut dist = vec![UNREACHABLE; n];
        let mut heap = BinaryHeap::new();
        for (i, &g) in goal.iter().enumerate() {
            if g {
                dist[i] = 0;
                heap.push(Reverse((0u32, i as u32)));
            }
        }
        while let Some(Reverse((d, i))) = heap.pop() {
            if d > dist[i as usize] {
                continue;
            }
            for &p in &reverse[i as usize] {
                let nd = d + 1;
                if nd < dist[p as usize] {
                    dist[p as usize] = nd;
                    heap.push(Reverse((nd, p)));
                }
            }
        }
        DistanceField { target, dist, goal }
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn has_goal(&self) -> bool {
        self.goal.iter().any(|&g| g)
    }

    pub fn is_goal(&self, world: &World, s: &AgentState) -> bool {
        self.goal[world.state_index(s)]
    }

    /// Motion steps to a success pose, `None` when unreachable.
    pub fn motion_distance(&self, world: &World, s: &AgentState) -> Option<u32> {
        let d = self.dist[world.state_index(s)];
        (d != UNREACHABLE).then_some(d)
    }
}

/// First action of a shortest successful action sequence from `state`.
pub fn expert_action(world: &World, state: &AgentState, target: usize) -> Result<Action, WorldError> {
    let field = world.distance_field(target)?;
    let d = field
        .motion_distance(world, state)
        .ok_or(WorldError::Unreachable { state: *state, target })?;
    if d == 0 {
        return Ok(Action::Done);
    }
    for a in Action::MOTIONS {
        let (next, _) = transition(world, state, a);
        if next != *state && field.motion_distance(world, &next) == Some(d - 1) {
            return Ok(a);
        }
    }
    unreachable!("distance field is consistent with transitions")
}

/// Minimal number of actions, including the final `Done`, that ends the
/// episode successfully.
pub fn optimal_length(world: &World, start: &AgentState, target: usize) -> Result<usize, WorldError> {
    let field = world.distance_field(target)?;
    field
        .motion_distance(world, start)
        .map(|d| d as usize + 1)
        .ok_or(WorldError::Unreachable { state: *start, target })
}
