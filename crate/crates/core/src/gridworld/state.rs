use serde::{Deserialize, Serialize};

/// Number of discrete actions.
pub const NUM_ACTIONS: usize = 6;

/// The agent's action set, in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    LookUp,
    LookDown,
    Done,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
        Action::Done,
    ];

    /// Everything except `Done`.
    pub const MOTIONS: [Action; 5] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveAhead => "MoveAhead",
            Action::RotateLeft => "RotateLeft",
            Action::RotateRight => "RotateRight",
            Action::LookUp => "LookUp",
            Action::LookDown => "LookDown",
            Action::Done => "Done",
        }
    }
}

/// Yaw in quarter turns counter-clockwise from +x: 0 = 0°, 1 = 90°, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Heading(u8);

impl Heading {
    pub const ALL: [Heading; 4] = [Heading(0), Heading(1), Heading(2), Heading(3)];

    pub fn from_degrees(deg: i32) -> Option<Heading> {
        match deg.rem_euclid(360) {
            0 => Some(Heading(0)),
            90 => Some(Heading(1)),
            180 => Some(Heading(2)),
            270 => Some(Heading(3)),
            _ => None,
        }
    }

    pub fn degrees(self) -> i32 {
        self.0 as i32 * 90
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn left(self) -> Heading {
        Heading((self.0 + 1) % 4)
    }

    pub fn right(self) -> Heading {
        Heading((self.0 + 3) % 4)
    }

    /// Unit cell offset for one step forward.
    pub fn delta(self) -> (i64, i64) {
        match self.0 {
            0 => (1, 0),
            1 => (0, 1),
            2 => (-1, 0),
            _ => (0, -1),
        }
    }
}

/// Camera pitch: -30°, 0° or +30° (positive looks up).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pitch(i8);

impl Pitch {
    pub const ALL: [Pitch; 3] = [Pitch(-1), Pitch(0), Pitch(1)];
    pub const LEVEL: Pitch = Pitch(0);

    pub fn from_degrees(deg: i32) -> Option<Pitch> {
        match deg {
            -30 => Some(Pitch(-1)),
            0 => Some(Pitch(0)),
            30 => Some(Pitch(1)),
            _ => None,
        }
    }

    pub fn degrees(self) -> i32 {
        self.0 as i32 * 30
    }

    pub fn index(self) -> usize {
        (self.0 + 1) as usize
    }

    /// Clamped at +30°.
    pub fn up(self) -> Pitch {
        Pitch((self.0 + 1).min(1))
    }

    /// Clamped at -30°.
    pub fn down(self) -> Pitch {
        Pitch((self.0 - 1).max(-1))
    }
}

/// Agent pose `{x, y, yaw, pitch}` on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentState {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub pitch: Pitch,
}

impl AgentState {
    pub fn new(x: usize, y: usize, heading: Heading, pitch: Pitch) -> Self {
        Self {
            x,
            y,
            heading,
            pitch,
        }
    }
}
