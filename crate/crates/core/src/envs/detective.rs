//! Detective-grid: a single street scene with moving hazards and thieves.
//!
//! The avatar runs along the street and jumps one row up. Hazards patrol
//! their row and occasionally turn around; touching one costs points and
//! starts a short immunity window. Thieves appear at windows for a limited
//! time and are caught from directly below (Chebyshev distance one), which
//! needs a jump. A caught thief may drop an item worth a large bonus once
//! carried to the bank. The score starts positive and the game ends on a
//! tick cap.
//!
//! Checkpoint blob layout (little-endian), magic `DGB1`:
//!
//! | field | type |
//! |---|---|
//! | tick | u64 |
//! | score | f64 |
//! | lives | u32 |
//! | terminal | u8 |
//! | avatar row, col | i32, i32 |
//! | jump kind (0 none, 1 up, 2 left, 3 right), jump phase | u8, u8 |
//! | move timer | u32 |
//! | carrying item | u8 |
//! | hit cooldown | u32 |
//! | hazard count, then per hazard: col i32, direction u8 (0 west, 1 east), timer u32 | u16, … |
//! | thief count, then per thief: window index u16, remaining ticks u32 | u16, … |
//! | RNG: seed [32], stream u64, word position u128 | |

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_checkpoint, Action, BlobReader, BlobWriter, Checkpoint, DetectiveConfig, EnvConfig, EnvError, EnvKind,
    Environment, ObsShape, Observation, StepInfo, StepResult,
};

pub const CHANNELS: &[&str] = &["empty", "wall", "building", "window", "bank", "hazard", "thief", "avatar", "avatar-with-item"];

const MAGIC: &[u8; 4] = b"DGB1";

const CODE_EMPTY: u8 = 0;
const CODE_WALL: u8 = 1;
const CODE_BUILDING: u8 = 2;
const CODE_WINDOW: u8 = 3;
const CODE_BANK: u8 = 4;
const CODE_HAZARD: u8 = 5;
const CODE_THIEF: u8 = 6;
const CODE_AVATAR: u8 = 7;
const CODE_AVATAR_ITEM: u8 = 8;

/// Displacements of the three jumps, one per avatar move: up, hang, down.
const JUMPS: [[(i32, i32); 3]; 3] = [[(-1, 0), (0, 0), (1, 0)], [(-1, -1), (0, -1), (1, -1)], [(-1, 1), (0, 1), (1, 1)]];

#[derive(Debug)]
struct Layout {
    height: usize,
    width: usize,
    /// Static cell code per cell.
    base: Vec<u8>,
    windows: Vec<(i32, i32)>,
    config: DetectiveConfig,
}

impl Layout {
    fn build(config: &DetectiveConfig) -> Result<Self, EnvError> {
        let err = |m: String| EnvError::InvalidLayout(m);
        if config.frame_skip == 0 || config.move_period == 0 {
            return Err(EnvError::InvalidConfig("frame_skip and move_period must be positive".into()));
        }
        for (name, p) in [
            ("hazard_turn_chance", config.hazard_turn_chance),
            ("thief_chance", config.thief_chance),
            ("item_chance", config.item_chance),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EnvError::InvalidConfig(format!("{name} must be a probability, got {p}")));
            }
        }
        let height = config.rows.len();
        let width = config.rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(err("empty street".into()));
        }
        let mut base = Vec::with_capacity(height * width);
        let mut windows = Vec::new();
        for (y, line) in config.rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(err(format!("row {y} is not {width} cells wide")));
            }
            for (x, ch) in line.chars().enumerate() {
                base.push(match ch {
                    '.' => CODE_EMPTY,
                    '#' => CODE_WALL,
                    'B' => CODE_BUILDING,
                    'w' => {
                        windows.push((y as i32, x as i32));
                        CODE_WINDOW
                    }
                    '$' => CODE_BANK,
                    other => return Err(err(format!("row {y} col {x}: unknown cell {other:?}"))),
                });
            }
        }
        let layout = Self { height, width, base, windows, config: config.clone() };
        let [sr, sc] = config.spawn;
        if sr >= height || sc >= width || !layout.open(sr as i32, sc as i32) {
            return Err(err("spawn must be an open cell".into()));
        }
        for (i, h) in config.hazards.iter().enumerate() {
            if h.period == 0 {
                return Err(err(format!("hazard {i} needs a positive period")));
            }
            if h.row >= height || h.col >= width || !layout.open(h.row as i32, h.col as i32) {
                return Err(err(format!("hazard {i} must start on an open cell")));
            }
        }
        Ok(layout)
    }

    fn open(&self, row: i32, col: i32) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return false;
        }
        matches!(self.base[row as usize * self.width + col as usize], CODE_EMPTY | CODE_BANK)
    }

    fn is_bank(&self, row: i32, col: i32) -> bool {
        self.base[row as usize * self.width + col as usize] == CODE_BANK
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Hazard {
    col: i32,
    east: bool,
    timer: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct Thief {
    window: u16,
    remaining: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    tick: u64,
    score: f64,
    lives: u32,
    terminal: bool,
    row: i32,
    col: i32,
    jump: Option<(u8, u8)>,
    move_timer: u32,
    carrying: bool,
    cooldown: u32,
    hazards: Vec<Hazard>,
    thieves: Vec<Thief>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct DetectiveGrid {
    layout: Arc<Layout>,
    digest: String,
    seed: u64,
    state: State,
}

impl DetectiveGrid {
    pub fn new(config: &DetectiveConfig, seed: u64) -> Result<Self, EnvError> {
        let layout = Arc::new(Layout::build(config)?);
        let digest = EnvConfig::DetectiveGrid(config.clone()).digest();
        let state = Self::initial_state(&layout, seed);
        Ok(Self { layout, digest, seed, state })
    }

    fn initial_state(layout: &Layout, seed: u64) -> State {
        let c = &layout.config;
        State {
            tick: 0,
            score: c.start_score,
            lives: c.lives,
            terminal: false,
            row: c.spawn[0] as i32,
            col: c.spawn[1] as i32,
            jump: None,
            move_timer: 0,
            carrying: false,
            cooldown: 0,
            hazards: c.hazards.iter().map(|h| Hazard { col: h.col as i32, east: false, timer: 0 }).collect(),
            thieves: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &DetectiveConfig {
        &self.layout.config
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    /// `(row, col)` of the avatar.
    pub fn avatar(&self) -> (i32, i32) {
        (self.state.row, self.state.col)
    }

    pub fn carrying(&self) -> bool {
        self.state.carrying
    }

    pub fn thief_count(&self) -> usize {
        self.state.thieves.len()
    }

    /// State bytes without the tick counter and score.
    pub fn dynamics_key(&self) -> Vec<u8> {
        self.encode(false)
    }

    fn hazard_positions(&self) -> Vec<(i32, i32)> {
        self.state.hazards.iter().zip(&self.layout.config.hazards).map(|(h, c)| (c.row as i32, h.col)).collect()
    }

    fn try_move(&mut self, dr: i32, dc: i32) -> bool {
        let (row, col) = (self.state.row + dr, self.state.col + dc);
        if !self.layout.open(row, col) {
            return false;
        }
        self.state.row = row;
        self.state.col = col;
        true
    }

    fn avatar_move(&mut self, action: Action) {
        if let Some((kind, phase)) = self.state.jump {
            let path = &JUMPS[kind as usize - 1];
            let (dr, dc) = path[phase as usize];
            self.state.jump = ((phase as usize + 1) < path.len()).then_some((kind, phase + 1));
            if !self.try_move(dr, dc) && dc != 0 {
                // Blocked sideways: finish the arc vertically.
                self.try_move(dr, 0);
            }
            return;
        }
        if self.layout.open(self.state.row + 1, self.state.col) {
            self.try_move(1, 0);
            return;
        }
        match action {
            Action::Left => {
                self.try_move(0, -1);
            }
            Action::Right => {
                self.try_move(0, 1);
            }
            Action::Up | Action::Jump | Action::JumpLeft | Action::JumpRight => {
                let kind = match action {
                    Action::JumpLeft => 2,
                    Action::JumpRight => 3,
                    _ => 1,
                };
                self.state.jump = Some((kind, 0));
                self.avatar_move(action);
            }
            Action::Noop | Action::Down => {}
        }
    }

    fn advance_hazards(&mut self) {
        let turn = self.layout.config.hazard_turn_chance;
        for (h, c) in self.state.hazards.iter_mut().zip(&self.layout.config.hazards) {
            h.timer += 1;
            if h.timer < c.period {
                continue;
            }
            h.timer = 0;
            if self.state.rng.gen_bool(turn) {
                h.east = !h.east;
            }
            let row = c.row as i32;
            let step = |east: bool| if east { 1 } else { -1 };
            if !self.layout.open(row, h.col + step(h.east)) {
                h.east = !h.east;
            }
            if self.layout.open(row, h.col + step(h.east)) {
                h.col += step(h.east);
            }
        }
    }

    fn update_thieves(&mut self) {
        let c = &self.layout.config;
        self.state.thieves.retain_mut(|t| {
            t.remaining = t.remaining.saturating_sub(1);
            t.remaining > 0
        });
        if (self.state.thieves.len() as u32) < c.max_thieves && self.state.rng.gen_bool(c.thief_chance) {
            let free: Vec<u16> = (0..self.layout.windows.len() as u16)
                .filter(|w| !self.state.thieves.iter().any(|t| t.window == *w))
                .collect();
            if !free.is_empty() {
                let window = free[self.state.rng.gen_range(0..free.len())];
                self.state.thieves.push(Thief { window, remaining: c.thief_lifetime.max(1) });
            }
        }
    }

    fn tick(&mut self, action: Action) {
        let c = &self.layout.config;
        let (hit, thief_reward, item_reward, item_chance) =
            (c.rewards.hazard, c.rewards.thief, c.rewards.item_return, c.item_chance);
        self.state.tick += 1;
        let avatar_before = (self.state.row, self.state.col);
        let hazards_before = self.hazard_positions();
        self.advance_hazards();
        self.update_thieves();
        self.state.move_timer += 1;
        if self.state.move_timer >= self.layout.config.move_period {
            self.state.move_timer = 0;
            self.avatar_move(action);
        }
        let here = (self.state.row, self.state.col);

        if self.state.cooldown > 0 {
            self.state.cooldown -= 1;
        } else {
            let collided = self
                .hazard_positions()
                .iter()
                .zip(&hazards_before)
                .any(|(&now, &before)| now == here || (now == avatar_before && before == here));
            if collided {
                self.state.score += hit;
                self.state.cooldown = self.layout.config.hit_cooldown;
                if self.state.lives > 0 {
                    self.state.lives -= 1;
                    if self.state.lives == 0 {
                        self.state.terminal = true;
                    }
                }
            }
        }

        let windows = &self.layout.windows;
        let caught: Vec<usize> = (0..self.state.thieves.len())
            .filter(|&i| {
                let (wr, wc) = windows[self.state.thieves[i].window as usize];
                (wr - here.0).abs() <= 1 && (wc - here.1).abs() <= 1
            })
            .collect();
        for &i in caught.iter().rev() {
            self.state.thieves.remove(i);
            self.state.score += thief_reward;
            if self.state.rng.gen_bool(item_chance) {
                self.state.carrying = true;
            }
        }
        if self.state.carrying && self.layout.is_bank(here.0, here.1) {
            self.state.carrying = false;
            self.state.score += item_reward;
        }

        if let Some(cap) = self.layout.config.tick_cap {
            if self.state.tick >= cap {
                self.state.terminal = true;
            }
        }
    }

    fn encode(&self, with_clock: bool) -> Vec<u8> {
        let s = &self.state;
        let mut w = BlobWriter::new(MAGIC);
        if with_clock {
            w.u64(s.tick).f64(s.score);
        }
        w.u32(s.lives).bool(s.terminal).i32(s.row).i32(s.col);
        let (kind, phase) = s.jump.unwrap_or((0, 0));
        w.u8(kind).u8(phase).u32(s.move_timer).bool(s.carrying).u32(s.cooldown);
        w.u16(s.hazards.len() as u16);
        for h in &s.hazards {
            w.i32(h.col).bool(h.east).u32(h.timer);
        }
        w.u16(s.thieves.len() as u16);
        for t in &s.thieves {
            w.u16(t.window).u32(t.remaining);
        }
        w.rng(&s.rng);
        w.finish()
    }

    fn decode(&self, blob: &[u8]) -> Result<State, EnvError> {
        let bad = |m: String| EnvError::MalformedBlob(m);
        let l = &self.layout;
        let mut r = BlobReader::new(blob, MAGIC)?;
        let tick = r.u64()?;
        let score = r.f64()?;
        let lives = r.u32()?;
        let terminal = r.bool()?;
        let row = r.i32()?;
        let col = r.i32()?;
        if !l.open(row, col) {
            return Err(bad(format!("avatar at ({row}, {col}) is not an open cell")));
        }
        let kind = r.u8()?;
        let phase = r.u8()?;
        let jump = match (kind, phase) {
            (0, _) => None,
            (1..=3, 0..=2) => Some((kind, phase)),
            _ => return Err(bad(format!("bad jump state ({kind}, {phase})"))),
        };
        let move_timer = r.u32()?;
        let carrying = r.bool()?;
        let cooldown = r.u32()?;
        let n = r.u16()? as usize;
        if n != l.config.hazards.len() {
            return Err(bad(format!("{n} hazards, layout has {}", l.config.hazards.len())));
        }
        let mut hazards = Vec::with_capacity(n);
        for i in 0..n {
            let col = r.i32()?;
            if !l.open(l.config.hazards[i].row as i32, col) {
                return Err(bad(format!("hazard {i} at column {col} is not on an open cell")));
            }
            hazards.push(Hazard { col, east: r.bool()?, timer: r.u32()? });
        }
        let n = r.u16()? as usize;
        let mut thieves = Vec::with_capacity(n);
        for _ in 0..n {
            let window = r.u16()?;
            if window as usize >= l.windows.len() {
                return Err(bad(format!("thief at missing window {window}")));
            }
            thieves.push(Thief { window, remaining: r.u32()? });
        }
        let rng = r.rng()?;
        r.finish()?;
        Ok(State {
            tick,
            score,
            lives,
            terminal,
            row,
            col,
            jump,
            move_timer,
            carrying,
            cooldown,
            hazards,
            thieves,
            rng,
        })
    }
}

impl Environment for DetectiveGrid {
    fn kind(&self) -> EnvKind {
        EnvKind::DetectiveGrid
    }

    fn action_count(&self) -> usize {
        Action::COUNT
    }

    fn observation_shape(&self) -> ObsShape {
        ObsShape { channels: CHANNELS.len(), height: self.layout.height, width: self.layout.width }
    }

    fn frame_skip(&self) -> u32 {
        self.layout.config.frame_skip
    }

    fn reset(&mut self) -> Observation {
        self.state = Self::initial_state(&self.layout, self.seed);
        self.observe()
    }

    fn observe(&self) -> Observation {
        let l = &self.layout;
        let s = &self.state;
        let mut codes = l.base.clone();
        let at = |r: i32, c: i32| r as usize * l.width + c as usize;
        for t in &s.thieves {
            let (r, c) = l.windows[t.window as usize];
            codes[at(r, c)] = CODE_THIEF;
        }
        for (r, c) in self.hazard_positions() {
            codes[at(r, c)] = CODE_HAZARD;
        }
        codes[at(s.row, s.col)] = if s.carrying { CODE_AVATAR_ITEM } else { CODE_AVATAR };
        Observation::from_codes(self.observation_shape(), codes).expect("valid codes")
    }

    fn step_limited(&mut self, action: usize, max_ticks: u32) -> Result<StepResult, EnvError> {
        if self.state.terminal {
            return Err(EnvError::StepAfterTerminal);
        }
        let act = Action::from_index(action).ok_or(EnvError::InvalidAction { index: action, count: Action::COUNT })?;
        let before = self.state.score;
        let budget = self.layout.config.frame_skip.min(max_ticks);
        let mut ticks = 0;
        while ticks < budget && !self.state.terminal {
            self.tick(act);
            ticks += 1;
        }
        Ok(StepResult {
            observation: self.observe(),
            reward: self.state.score - before,
            terminal: self.state.terminal,
            ticks,
            info: self.info(),
        })
    }

    fn snapshot(&self) -> Checkpoint {
        Checkpoint { env_kind: EnvKind::DetectiveGrid, config_digest: self.digest.clone(), blob: self.encode(true) }
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<Observation, EnvError> {
        check_checkpoint(EnvKind::DetectiveGrid, &self.digest, checkpoint)?;
        self.state = self.decode(&checkpoint.blob)?;
        Ok(self.observe())
    }

    fn is_terminal(&self) -> bool {
        self.state.terminal
    }

    fn info(&self) -> StepInfo {
        let lives = (self.layout.config.lives > 0).then_some(self.state.lives);
        StepInfo { lives, raw_score: self.state.score, tick: self.state.tick }
    }
}
