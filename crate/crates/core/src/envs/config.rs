//! Human-editable game configuration and its content digest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EnvError, EnvKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env_kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    KeyLabyrinth(LabyrinthConfig),
    DetectiveGrid(DetectiveConfig),
}

/// Position of a cell in a multi-room world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRef {
    pub room: usize,
    pub row: usize,
    pub col: usize,
}

/// One room as text rows: `#` wall, `.` empty, `H` ladder, `^` hazard,
/// `k` key, `D` door.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonsterConfig {
    pub room: usize,
    /// Patrol cells `[row, col]`; the monster walks back and forth along them.
    pub path: Vec<[usize; 2]>,
    /// Ticks per patrol move.
    pub period: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabyrinthRewards {
    pub key: f64,
    pub door: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabyrinthConfig {
    pub seed: u64,
    pub lives: u32,
    pub frame_skip: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_cap: Option<u64>,
    /// Ticks between avatar moves.
    pub move_period: u32,
    /// Longest drop, in cells, the avatar survives.
    pub max_safe_fall: u32,
    /// Ticks of invulnerability after a respawn.
    pub respawn_grace: u32,
    pub rewards: LabyrinthRewards,
    /// Rooms per row of the world map; room `i` sits at `(i / room_columns, i % room_columns)`.
    pub room_columns: usize,
    pub rooms: Vec<RoomConfig>,
    pub spawn: CellRef,
    #[serde(default)]
    pub monsters: Vec<MonsterConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectiveRewards {
    pub hazard: f64,
    pub thief: f64,
    pub item_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardConfig {
    pub row: usize,
    pub col: usize,
    /// Ticks per move.
    pub period: u32,
}

/// Single corridor: `#` wall, `.` empty, `B` building, `w` window, `$` bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectiveConfig {
    pub seed: u64,
    /// Zero means the game has no lives counter.
    pub lives: u32,
    pub frame_skip: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_cap: Option<u64>,
    pub start_score: f64,
    pub move_period: u32,
    pub rewards: DetectiveRewards,
    pub rows: Vec<String>,
    pub spawn: [usize; 2],
    pub hazards: Vec<HazardConfig>,
    /// Chance per move that a hazard reverses direction.
    pub hazard_turn_chance: f64,
    /// Ticks of immunity after a collision.
    pub hit_cooldown: u32,
    /// Chance per tick that a thief appears at a free window.
    pub thief_chance: f64,
    pub thief_lifetime: u32,
    pub max_thieves: u32,
    /// Chance a captured thief carries an item to return to the bank.
    pub item_chance: f64,
}

fn rows(lines: &[&str]) -> Vec<String> {
    lines.iter().map(|s| s.to_string()).collect()
}

impl LabyrinthConfig {
    /// Four 12×12 rooms. The key sits on a ledge in the bottom-right room,
    /// past a patrolling monster; both doors are in the start room.
    pub fn default_layout() -> Self {
        let start_room = rows(&[
            "############",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#.D.......D.",
            "########H###",
            "########H###",
        ]);
        let locked_room = rows(&[
            "############",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "#..........#",
            "...........#",
            "############",
            "############",
        ]);
        let shaft_room = rows(&[
            "########H###",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.......H..#",
            "#.^.^.......",
            "############",
        ]);
        let key_room = rows(&[
            "############",
            "#..........#",
            "#..........#",
            "#.k........#",
            "#.########H#",
            "#.........H#",
            "#.........H#",
            "#.........H#",
            "#.........H#",
            "#.........H#",
            "...........#",
            "############",
        ]);
        Self {
            seed: 0,
            lives: 5,
            frame_skip: 4,
            tick_cap: None,
            move_period: 4,
            max_safe_fall: 3,
            respawn_grace: 16,
            rewards: LabyrinthRewards { key: 100.0, door: 300.0 },
            room_columns: 2,
            rooms: vec![
                RoomConfig { rows: start_room },
                RoomConfig { rows: locked_room },
                RoomConfig { rows: shaft_room },
                RoomConfig { rows: key_room },
            ],
            spawn: CellRef { room: 0, row: 9, col: 4 },
            monsters: vec![MonsterConfig {
                room: 3,
                path: (2..=8).map(|c| [10, c]).collect(),
                period: 6,
            }],
        }
    }
}

impl DetectiveConfig {
    /// A 12×36 street: four buildings with windows, a bank at the east end,
    /// two ground hazards and one airborne hazard.
    pub fn default_layout() -> Self {
        Self {
            seed: 0,
            lives: 0,
            frame_skip: 4,
            tick_cap: Some(1080),
            start_score: 1000.0,
            move_period: 4,
            rewards: DetectiveRewards { hazard: -50.0, thief: 100.0, item_return: 500.0 },
            rows: rows(&[
                "####################################",
                "#..................................#",
                "#..................................#",
                "#..................................#",
                "#..................................#",
                "#.BBBB....BBBB....BBBB....BBBB.....#",
                "#.BBBB....BBBB....BBBB....BBBB.....#",
                "#.BBBB....BBBB....BBBB....BBBB.....#",
                "#.BwwB....BwwB....BwwB....BwwB.....#",
                "#..................................#",
                "#.................................$#",
                "####################################",
            ]),
            spawn: [10, 1],
            hazards: vec![
                HazardConfig { row: 10, col: 12, period: 6 },
                HazardConfig { row: 10, col: 27, period: 5 },
                HazardConfig { row: 9, col: 20, period: 3 },
            ],
            hazard_turn_chance: 0.15,
            hit_cooldown: 16,
            thief_chance: 0.015,
            thief_lifetime: 120,
            max_thieves: 2,
            item_chance: 0.4,
        }
    }
}

impl EnvConfig {
    pub fn default_key_labyrinth() -> Self {
        EnvConfig::KeyLabyrinth(LabyrinthConfig::default_layout())
    }

    pub fn default_detective_grid() -> Self {
        EnvConfig::DetectiveGrid(DetectiveConfig::default_layout())
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::KeyLabyrinth => Self::default_key_labyrinth(),
            EnvKind::DetectiveGrid => Self::default_detective_grid(),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::KeyLabyrinth(_) => EnvKind::KeyLabyrinth,
            EnvConfig::DetectiveGrid(_) => EnvKind::DetectiveGrid,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EnvConfig::KeyLabyrinth(c) => c.seed,
            EnvConfig::DetectiveGrid(c) => c.seed,
        }
    }

    pub fn frame_skip(&self) -> u32 {
        match self {
            EnvConfig::KeyLabyrinth(c) => c.frame_skip,
            EnvConfig::DetectiveGrid(c) => c.frame_skip,
        }
    }

    /// Canonical form: compact JSON with lexicographically sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        // serde_json's default map is ordered by key, so this is canonical.
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Lowercase hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let err = |message: String| EnvError::ConfigFile { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let config = Self::parse(&text).map_err(err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        fs::write(path, self.to_toml())
            .map_err(|e| EnvError::ConfigFile { path: path.display().to_string(), message: e.to_string() })
    }

    /// Checks layout consistency by building the game once.
    pub fn validate(&self) -> Result<(), EnvError> {
        super::Env::reset_new(self, self.seed()).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_digest() {
        for config in [EnvConfig::default_key_labyrinth(), EnvConfig::default_detective_grid()] {
            let text = config.to_toml();
            let parsed = EnvConfig::parse(&text).unwrap();
            assert_eq!(parsed, config);
            assert_eq!(parsed.digest(), config.digest());
            assert_eq!(config.digest().len(), 64);
            assert!(config.digest().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        }
    }

    #[test]
    fn digest_tracks_reward_table() {
        let a = EnvConfig::default_key_labyrinth();
        let mut b = a.clone();
        if let EnvConfig::KeyLabyrinth(c) = &mut b {
            c.rewards.key = 50.0;
        }
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn json_documents_are_accepted() {
        let config = EnvConfig::default_detective_grid();
        let json = serde_json::to_string_pretty(&config).unwrap();
        assert_eq!(EnvConfig::parse(&json).unwrap(), config);
    }
}
