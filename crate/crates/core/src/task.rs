use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The three classification modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Objects,
    Poses,
    Fire,
}

const OBJECT_CLASSES: [&str; 5] = ["door", "firefighter+window", "firefighter", "ladder", "window"];
const POSE_CLASSES: [&str; 3] = ["crawling", "sitting", "standing"];
const FIRE_CLASSES: [&str; 2] = ["fire", "no-fire"];

impl Task {
    pub const ALL: [Task; 3] = [Task::Objects, Task::Poses, Task::Fire];

    /// Class names; a label's index in this list is its class index.
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Task::Objects => &OBJECT_CLASSES,
            Task::Poses => &POSE_CLASSES,
            Task::Fire => &FIRE_CLASSES,
        }
    }

    pub fn num_classes(self) -> usize {
        self.classes().len()
    }

    pub fn class_index(self, label: &str) -> Option<usize> {
        self.classes().iter().position(|&c| c == label)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Objects => "objects",
            Task::Poses => "poses",
            Task::Fire => "fire",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "objects" => Ok(Task::Objects),
            "poses" => Ok(Task::Poses),
            "fire" => Ok(Task::Fire),
            other => Err(Error::InvalidConfig(format!(
                "unknown task '{other}' (expected objects, poses or fire)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_counts_per_task() {
        assert_eq!(Task::Objects.num_classes(), 5);
        assert_eq!(Task::Poses.num_classes(), 3);
        assert_eq!(Task::Fire.num_classes(), 2);
    }

    #[test]
    fn parse_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("trucks".parse::<Task>().is_err());
    }
}
