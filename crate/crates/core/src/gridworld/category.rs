//! The 22 object categories and their physical attributes.

use serde::{Deserialize, Serialize};

pub const NUM_CATEGORIES: usize = 22;

pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "Sink",
    "Toaster",
    "Microwave",
    "Fridge",
    "CoffeeMachine",
    "StoveBurner",
    "Kettle",
    "GarbageCan",
    "Television",
    "RemoteControl",
    "Sofa",
    "Pillow",
    "Laptop",
    "FloorLamp",
    "Bed",
    "AlarmClock",
    "Book",
    "DeskLamp",
    "Toilet",
    "ToiletPaper",
    "SoapBottle",
    "Towel",
];

/// Height (meters) of each category's visual center above the floor.
pub const CATEGORY_HEIGHTS: [f64; NUM_CATEGORIES] = [
    0.9, // Sink
    0.9, // Toaster
    1.6, // Microwave
    0.9, // Fridge
    0.9, // CoffeeMachine
    0.9, // StoveBurner
    0.9, // Kettle
    0.3, // GarbageCan
    0.9, // Television
    0.3, // RemoteControl
    0.3, // Sofa
    0.3, // Pillow
    0.9, // Laptop
    1.6, // FloorLamp
    0.3, // Bed
    0.9, // AlarmClock
    0.9, // Book
    0.9, // DeskLamp
    0.3, // Toilet
    0.3, // ToiletPaper
    0.9, // SoapBottle
    1.6, // Towel
];

pub fn category_name(id: usize) -> &'static str {
    CATEGORY_NAMES.get(id).copied().unwrap_or("?")
}

pub fn category_by_name(name: &str) -> Option<usize> {
    CATEGORY_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneType {
    Kitchen,
    LivingRoom,
    Bedroom,
    Bathroom,
}

impl SceneType {
    pub const ALL: [SceneType; 4] = [
        SceneType::Kitchen,
        SceneType::LivingRoom,
        SceneType::Bedroom,
        SceneType::Bathroom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneType::Kitchen => "kitchen",
            SceneType::LivingRoom => "living_room",
            SceneType::Bedroom => "bedroom",
            SceneType::Bathroom => "bathroom",
        }
    }
}

impl std::fmt::Display for SceneType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SceneType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown scene type `{s}`"))
    }
}
