//! Key-labyrinth: a small platformer over a grid of rooms.
//!
//! The avatar walks, climbs ladders and jumps; unsupported it falls one cell
//! per move and dies when a drop exceeds `max_safe_fall`. Touching a hazard
//! or a monster also costs a life; the avatar then respawns where it entered
//! the current room. A key opens one door. Dying never changes the score.
//!
//! Checkpoint blob layout (little-endian), magic `KLB1`:
//!
//! | field | type |
//! |---|---|
//! | tick | u64 |
//! | score | f64 |
//! | lives | u32 |
//! | terminal | u8 |
//! | avatar room, row, col | u16, i32, i32 |
//! | entry room, row, col | u16, i32, i32 |
//! | keys held | u32 |
//! | key count, then one taken-flag byte per key | u16, u8… |
//! | door count, then one open-flag byte per door | u16, u8… |
//! | move timer | u32 |
//! | jump kind (0 none, 1 up, 2 left, 3 right), jump phase | u8, u8 |
//! | fall distance | u32 |
//! | grace ticks | u32 |
//! | monster count, then per monster: path index u32, forward u8, timer u32 | u16, … |
//! | RNG: seed [32], stream u64, word position u128 | |

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_checkpoint, Action, BlobReader, BlobWriter, Checkpoint, EnvConfig, EnvError, EnvKind, Environment,
    LabyrinthConfig, ObsShape, Observation, StepInfo, StepResult,
};

pub const CHANNELS: &[&str] = &["empty", "wall", "ladder", "hazard", "key", "door", "monster", "avatar", "avatar-with-key"];

const MAGIC: &[u8; 4] = b"KLB1";

const CODE_EMPTY: u8 = 0;
const CODE_WALL: u8 = 1;
const CODE_LADDER: u8 = 2;
const CODE_HAZARD: u8 = 3;
const CODE_KEY: u8 = 4;
const CODE_DOOR: u8 = 5;
const CODE_MONSTER: u8 = 6;
const CODE_AVATAR: u8 = 7;
const CODE_AVATAR_KEY: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terrain {
    Empty,
    Wall,
    Ladder,
    Hazard,
}

/// Displacements of the three jumps, one per avatar move.
const JUMPS: [&[(i32, i32)]; 3] = [&[(-1, 0), (1, 0)], &[(-1, -1), (1, -1)], &[(-1, 1), (1, 1)]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pos {
    pub room: usize,
    pub row: i32,
    pub col: i32,
}

#[derive(Debug)]
struct Layout {
    height: usize,
    width: usize,
    room_columns: usize,
    terrain: Vec<Vec<Terrain>>,
    /// Per room, per cell: index into `keys` / `doors`.
    key_at: Vec<Vec<Option<usize>>>,
    door_at: Vec<Vec<Option<usize>>>,
    key_count: usize,
    door_count: usize,
    monsters: Vec<(usize, Vec<(i32, i32)>, u32)>,
    config: LabyrinthConfig,
}

#[derive(Debug, Clone, PartialEq)]
struct MonsterState {
    index: u32,
    forward: bool,
    timer: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    tick: u64,
    score: f64,
    lives: u32,
    terminal: bool,
    pos: Pos,
    entry: Pos,
    keys_held: u32,
    keys_taken: Vec<bool>,
    doors_open: Vec<bool>,
    move_timer: u32,
    /// `(kind, phase)`, kind 1..=3 indexes `JUMPS[kind - 1]`.
    jump: Option<(u8, u8)>,
    fall: u32,
    grace: u32,
    monsters: Vec<MonsterState>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct KeyLabyrinth {
    layout: Arc<Layout>,
    digest: String,
    seed: u64,
    state: State,
}

fn layout_err(msg: impl Into<String>) -> EnvError {
    EnvError::InvalidLayout(msg.into())
}

impl Layout {
    fn build(config: &LabyrinthConfig) -> Result<Self, EnvError> {
        if config.frame_skip == 0 || config.move_period == 0 {
            return Err(EnvError::InvalidConfig("frame_skip and move_period must be positive".into()));
        }
        if config.lives == 0 {
            return Err(EnvError::InvalidConfig("key-labyrinth needs at least one life".into()));
        }
        if config.rooms.is_empty() || config.room_columns == 0 {
            return Err(layout_err("at least one room and one room column required"));
        }
        let height = config.rooms[0].rows.len();
        let width = config.rooms[0].rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(layout_err("empty room"));
        }
        let mut terrain = Vec::new();
        let mut key_at = Vec::new();
        let mut door_at = Vec::new();
        let (mut key_count, mut door_count) = (0, 0);
        for (r, room) in config.rooms.iter().enumerate() {
            if room.rows.len() != height {
                return Err(layout_err(format!("room {r} has {} rows, expected {height}", room.rows.len())));
            }
            let mut t = Vec::with_capacity(height * width);
            let mut k = Vec::with_capacity(height * width);
            let mut d = Vec::with_capacity(height * width);
            for (y, line) in room.rows.iter().enumerate() {
                if line.chars().count() != width {
                    return Err(layout_err(format!("room {r} row {y} is not {width} cells wide")));
                }
                for (x, ch) in line.chars().enumerate() {
                    let (cell, key, door) = match ch {
                        '#' => (Terrain::Wall, false, false),
                        '.' => (Terrain::Empty, false, false),
                        'H' => (Terrain::Ladder, false, false),
                        '^' => (Terrain::Hazard, false, false),
                        'k' => (Terrain::Empty, true, false),
                        'D' => (Terrain::Empty, false, true),
                        other => {
                            return Err(layout_err(format!("room {r} row {y} col {x}: unknown cell {other:?}")))
                        }
                    };
                    t.push(cell);
                    k.push(key.then(|| {
                        key_count += 1;
                        key_count - 1
                    }));
                    d.push(door.then(|| {
                        door_count += 1;
                        door_count - 1
                    }));
                }
            }
            terrain.push(t);
            key_at.push(k);
            door_at.push(d);
        }
        let mut monsters = Vec::new();
        for (i, m) in config.monsters.iter().enumerate() {
            if m.room >= config.rooms.len() {
                return Err(layout_err(format!("monster {i} in missing room {}", m.room)));
            }
            if m.path.is_empty() || m.period == 0 {
                return Err(layout_err(format!("monster {i} needs a path and a positive period")));
            }
            let mut path = Vec::with_capacity(m.path.len());
            for (j, &[row, col]) in m.path.iter().enumerate() {
                if row >= height || col >= width {
                    return Err(layout_err(format!("monster {i} path cell {j} out of bounds")));
                }
                if terrain[m.room][row * width + col] == Terrain::Wall {
                    return Err(layout_err(format!("monster {i} path cell {j} is a wall")));
                }
                if let Some(&(pr, pc)) = path.last() {
                    let (pr, pc): (i32, i32) = (pr, pc);
                    if (pr - row as i32).abs() + (pc - col as i32).abs() != 1 {
                        return Err(layout_err(format!("monster {i} path cells {} and {j} are not adjacent", j - 1)));
                    }
                }
                path.push((row as i32, col as i32));
            }
            monsters.push((m.room, path, m.period));
        }
        let layout = Self {
            height,
            width,
            room_columns: config.room_columns,
            terrain,
            key_at,
            door_at,
            key_count,
            door_count,
            monsters,
            config: config.clone(),
        };
        let s = config.spawn;
        if s.room >= config.rooms.len() || s.row >= height || s.col >= width {
            return Err(layout_err("spawn out of bounds"));
        }
        let spawn_idx = s.row * width + s.col;
        if layout.terrain[s.room][spawn_idx] != Terrain::Empty && layout.terrain[s.room][spawn_idx] != Terrain::Ladder
            || layout.door_at[s.room][spawn_idx].is_some()
        {
            return Err(layout_err("spawn must be on an empty or ladder cell"));
        }
        Ok(layout)
    }

    fn idx(&self, p: Pos) -> usize {
        p.row as usize * self.width + p.col as usize
    }

    fn terrain(&self, p: Pos) -> Terrain {
        self.terrain[p.room][self.idx(p)]
    }

    /// Neighbouring cell, crossing into adjacent rooms at the edges.
    fn offset(&self, p: Pos, dr: i32, dc: i32) -> Option<Pos> {
        let rooms = self.terrain.len();
        let (mut gr, mut gc) = ((p.room / self.room_columns) as i32, (p.room % self.room_columns) as i32);
        let (mut row, mut col) = (p.row + dr, p.col + dc);
        let (h, w) = (self.height as i32, self.width as i32);
        if row < 0 {
            gr -= 1;
            row += h;
        } else if row >= h {
            gr += 1;
            row -= h;
        }
        if col < 0 {
            gc -= 1;
            col += w;
        } else if col >= w {
            gc += 1;
            col -= w;
        }
        if gr < 0 || gc < 0 || gc >= self.room_columns as i32 {
            return None;
        }
        let room = gr as usize * self.room_columns + gc as usize;
        (room < rooms).then_some(Pos { room, row, col })
    }

    fn monster_pos(&self, i: usize, m: &MonsterState) -> Pos {
        let (room, path, _) = &self.monsters[i];
        let (row, col) = path[m.index as usize];
        Pos { room: *room, row, col }
    }
}

impl KeyLabyrinth {
    pub fn new(config: &LabyrinthConfig, seed: u64) -> Result<Self, EnvError> {
        let layout = Arc::new(Layout::build(config)?);
        let digest = EnvConfig::KeyLabyrinth(config.clone()).digest();
        let state = Self::initial_state(&layout, seed);
        Ok(Self { layout, digest, seed, state })
    }

    fn initial_state(layout: &Layout, seed: u64) -> State {
        let c = &layout.config;
        let spawn = Pos { room: c.spawn.room, row: c.spawn.row as i32, col: c.spawn.col as i32 };
        State {
            tick: 0,
            score: 0.0,
            lives: c.lives,
            terminal: false,
            pos: spawn,
            entry: spawn,
            keys_held: 0,
            keys_taken: vec![false; layout.key_count],
            doors_open: vec![false; layout.door_count],
            move_timer: 0,
            jump: None,
            fall: 0,
            grace: 0,
            monsters: layout.monsters.iter().map(|_| MonsterState { index: 0, forward: true, timer: 0 }).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &LabyrinthConfig {
        &self.layout.config
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    pub fn avatar(&self) -> Pos {
        self.state.pos
    }

    pub fn keys_held(&self) -> u32 {
        self.state.keys_held
    }

    pub fn doors_open(&self) -> usize {
        self.state.doors_open.iter().filter(|&&o| o).count()
    }

    pub fn keys_taken(&self) -> usize {
        self.state.keys_taken.iter().filter(|&&t| t).count()
    }

    /// State bytes without the tick counter and score: two states with equal
    /// keys behave identically from here on.
    pub fn dynamics_key(&self) -> Vec<u8> {
        self.encode(false)
    }

    fn closed_door(&self, p: Pos) -> Option<usize> {
        self.layout.door_at[p.room][self.layout.idx(p)].filter(|&d| !self.state.doors_open[d])
    }

    fn solid(&self, p: Pos) -> bool {
        matches!(self.layout.terrain(p), Terrain::Wall | Terrain::Ladder) || self.closed_door(p).is_some()
    }

    fn supported(&self) -> bool {
        let p = self.state.pos;
        self.layout.terrain(p) == Terrain::Ladder || self.layout.offset(p, 1, 0).map_or(true, |b| self.solid(b))
    }

    /// Attempts one displacement; returns whether the avatar moved.
    fn try_move(&mut self, dr: i32, dc: i32) -> bool {
        let Some(target) = self.layout.offset(self.state.pos, dr, dc) else {
            return false;
        };
        if self.layout.terrain(target) == Terrain::Wall {
            return false;
        }
        if let Some(door) = self.closed_door(target) {
            if self.state.keys_held == 0 {
                return false;
            }
            self.state.keys_held -= 1;
            self.state.doors_open[door] = true;
            self.state.score += self.layout.config.rewards.door;
        }
        if target.room != self.state.pos.room {
            self.state.entry = target;
        }
        self.state.pos = target;
        if let Some(key) = self.layout.key_at[target.room][self.layout.idx(target)] {
            if !self.state.keys_taken[key] {
                self.state.keys_taken[key] = true;
                self.state.keys_held += 1;
                self.state.score += self.layout.config.rewards.key;
            }
        }
        true
    }

    fn lose_life(&mut self) {
        let s = &mut self.state;
        s.jump = None;
        s.fall = 0;
        if s.lives <= 1 {
            s.lives = 0;
            s.terminal = true;
        } else {
            s.lives -= 1;
            s.pos = s.entry;
            s.grace = self.layout.config.respawn_grace;
        }
    }

    fn continue_jump(&mut self) {
        let (kind, phase) = self.state.jump.expect("jumping");
        let path = JUMPS[kind as usize - 1];
        let (dr, dc) = path[phase as usize];
        self.state.jump = ((phase as usize + 1) < path.len()).then_some((kind, phase + 1));
        if !self.try_move(dr, dc) {
            self.state.jump = None;
        }
    }

    fn avatar_move(&mut self, action: Action) {
        if self.state.jump.is_some() {
            self.continue_jump();
            return;
        }
        let here = self.state.pos;
        let on_ladder = self.layout.terrain(here) == Terrain::Ladder;
        if !self.supported() {
            if self.try_move(1, 0) {
                self.state.fall += 1;
            }
            return;
        }
        if self.state.fall > self.layout.config.max_safe_fall {
            self.lose_life();
            return;
        }
        self.state.fall = 0;
        let ladder_at = |dr| self.layout.offset(here, dr, 0).is_some_and(|p| self.layout.terrain(p) == Terrain::Ladder);
        match action {
            Action::Noop => {}
            Action::Left => {
                self.try_move(0, -1);
            }
            Action::Right => {
                self.try_move(0, 1);
            }
            Action::Up => {
                if on_ladder || ladder_at(-1) {
                    self.try_move(-1, 0);
                }
            }
            Action::Down => {
                if on_ladder || ladder_at(1) {
                    self.try_move(1, 0);
                }
            }
            Action::Jump | Action::JumpLeft | Action::JumpRight => {
                if !on_ladder {
                    let kind = match action {
                        Action::Jump => 1,
                        Action::JumpLeft => 2,
                        _ => 3,
                    };
                    self.state.jump = Some((kind, 0));
                    self.continue_jump();
                }
            }
        }
    }

    fn advance_monsters(&mut self) {
        for (i, m) in self.state.monsters.iter_mut().enumerate() {
            let (_, path, period) = &self.layout.monsters[i];
            m.timer += 1;
            if m.timer < *period {
                continue;
            }
            m.timer = 0;
            let len = path.len() as u32;
            if len == 1 {
                continue;
            }
            if m.forward {
                if m.index + 1 < len {
                    m.index += 1;
                } else {
                    m.forward = false;
                    m.index -= 1;
                }
            } else if m.index > 0 {
                m.index -= 1;
            } else {
                m.forward = true;
                m.index += 1;
            }
        }
    }

    fn tick(&mut self, action: Action) {
        self.state.tick += 1;
        let avatar_before = self.state.pos;
        let monsters_before: Vec<Pos> =
            self.state.monsters.iter().enumerate().map(|(i, m)| self.layout.monster_pos(i, m)).collect();
        self.advance_monsters();
        self.state.move_timer += 1;
        let lives_before = self.state.lives;
        if self.state.move_timer >= self.layout.config.move_period {
            self.state.move_timer = 0;
            self.avatar_move(action);
        }
        let died_this_tick = self.state.lives != lives_before || self.state.terminal;
        if !died_this_tick {
            if self.state.grace > 0 {
                self.state.grace -= 1;
            } else {
                let here = self.state.pos;
                let hit_monster = self.state.monsters.iter().enumerate().any(|(i, m)| {
                    let now = self.layout.monster_pos(i, m);
                    now == here || (now == avatar_before && monsters_before[i] == here)
                });
                if hit_monster || self.layout.terrain(here) == Terrain::Hazard {
                    self.lose_life();
                }
            }
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
        w.u32(s.lives).bool(s.terminal);
        for p in [s.pos, s.entry] {
            w.u16(p.room as u16).i32(p.row).i32(p.col);
        }
        w.u32(s.keys_held);
        w.u16(s.keys_taken.len() as u16);
        for &k in &s.keys_taken {
            w.bool(k);
        }
        w.u16(s.doors_open.len() as u16);
        for &d in &s.doors_open {
            w.bool(d);
        }
        w.u32(s.move_timer);
        let (kind, phase) = s.jump.unwrap_or((0, 0));
        w.u8(kind).u8(phase).u32(s.fall).u32(s.grace);
        w.u16(s.monsters.len() as u16);
        for m in &s.monsters {
            w.u32(m.index).bool(m.forward).u32(m.timer);
        }
        w.rng(&s.rng);
        w.finish()
    }

    fn decode(&self, blob: &[u8]) -> Result<State, EnvError> {
        let bad = |m: String| EnvError::MalformedBlob(m);
        let mut r = BlobReader::new(blob, MAGIC)?;
        let tick = r.u64()?;
        let score = r.f64()?;
        let lives = r.u32()?;
        let terminal = r.bool()?;
        let read_pos = |r: &mut BlobReader| -> Result<Pos, EnvError> {
            let room = r.u16()? as usize;
            let row = r.i32()?;
            let col = r.i32()?;
            if room >= self.layout.terrain.len()
                || row < 0
                || col < 0
                || row as usize >= self.layout.height
                || col as usize >= self.layout.width
            {
                return Err(bad(format!("position ({room}, {row}, {col}) out of bounds")));
            }
            Ok(Pos { room, row, col })
        };
        let pos = read_pos(&mut r)?;
        let entry = read_pos(&mut r)?;
        let keys_held = r.u32()?;
        let n = r.u16()? as usize;
        if n != self.layout.key_count {
            return Err(bad(format!("{n} keys, layout has {}", self.layout.key_count)));
        }
        let keys_taken = (0..n).map(|_| r.bool()).collect::<Result<Vec<_>, _>>()?;
        let n = r.u16()? as usize;
        if n != self.layout.door_count {
            return Err(bad(format!("{n} doors, layout has {}", self.layout.door_count)));
        }
        let doors_open = (0..n).map(|_| r.bool()).collect::<Result<Vec<_>, _>>()?;
        let move_timer = r.u32()?;
        let kind = r.u8()?;
        let phase = r.u8()?;
        let jump = match kind {
            0 => None,
            1..=3 if (phase as usize) < JUMPS[kind as usize - 1].len() => Some((kind, phase)),
            _ => return Err(bad(format!("bad jump state ({kind}, {phase})"))),
        };
        let fall = r.u32()?;
        let grace = r.u32()?;
        let n = r.u16()? as usize;
        if n != self.layout.monsters.len() {
            return Err(bad(format!("{n} monsters, layout has {}", self.layout.monsters.len())));
        }
        let mut monsters = Vec::with_capacity(n);
        for i in 0..n {
            let index = r.u32()?;
            if index as usize >= self.layout.monsters[i].1.len() {
                return Err(bad(format!("monster {i} path index {index} out of range")));
            }
            monsters.push(MonsterState { index, forward: r.bool()?, timer: r.u32()? });
        }
        let rng = r.rng()?;
        r.finish()?;
        Ok(State {
            tick,
            score,
            lives,
            terminal,
            pos,
            entry,
            keys_held,
            keys_taken,
            doors_open,
            move_timer,
            jump,
            fall,
            grace,
            monsters,
            rng,
        })
    }
}

impl Environment for KeyLabyrinth {
    fn kind(&self) -> EnvKind {
        EnvKind::KeyLabyrinth
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
        let room = s.pos.room;
        let mut codes: Vec<u8> = l.terrain[room]
            .iter()
            .map(|t| match t {
                Terrain::Empty => CODE_EMPTY,
                Terrain::Wall => CODE_WALL,
                Terrain::Ladder => CODE_LADDER,
                Terrain::Hazard => CODE_HAZARD,
            })
            .collect();
        for (i, code) in codes.iter_mut().enumerate() {
            if let Some(k) = l.key_at[room][i] {
                if !s.keys_taken[k] {
                    *code = CODE_KEY;
                }
            }
            if let Some(d) = l.door_at[room][i] {
                if !s.doors_open[d] {
                    *code = CODE_DOOR;
                }
            }
        }
        for (i, m) in s.monsters.iter().enumerate() {
            let p = l.monster_pos(i, m);
            if p.room == room {
                codes[l.idx(p)] = CODE_MONSTER;
            }
        }
        codes[l.idx(s.pos)] = if s.keys_held > 0 { CODE_AVATAR_KEY } else { CODE_AVATAR };
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
        Checkpoint { env_kind: EnvKind::KeyLabyrinth, config_digest: self.digest.clone(), blob: self.encode(true) }
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<Observation, EnvError> {
        check_checkpoint(EnvKind::KeyLabyrinth, &self.digest, checkpoint)?;
        self.state = self.decode(&checkpoint.blob)?;
        Ok(self.observe())
    }

    fn is_terminal(&self) -> bool {
        self.state.terminal
    }

    fn info(&self) -> StepInfo {
        StepInfo { lives: Some(self.state.lives), raw_score: self.state.score, tick: self.state.tick }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> KeyLabyrinth {
        KeyLabyrinth::new(&LabyrinthConfig::default_layout(), 0).unwrap()
    }

    fn single_room(rows: &[&str], spawn: (usize, usize)) -> LabyrinthConfig {
        let mut c = LabyrinthConfig::default_layout();
        c.rooms = vec![super::super::RoomConfig { rows: rows.iter().map(|s| s.to_string()).collect() }];
        c.room_columns = 1;
        c.spawn = super::super::CellRef { room: 0, row: spawn.0, col: spawn.1 };
        c.monsters.clear();
        c
    }

    #[test]
    fn default_start_state() {
        let env = fresh();
        assert_eq!(env.avatar(), Pos { room: 0, row: 9, col: 4 });
        assert_eq!(env.info().lives, Some(5));
        assert_eq!(env.info().raw_score, 0.0);
        let obs = env.observe();
        assert_eq!(obs.code_at(9, 4), CODE_AVATAR);
        assert_eq!(obs.codes().iter().filter(|&&c| c == CODE_AVATAR).count(), 1);
    }

    #[test]
    fn idling_is_free() {
        let mut env = fresh();
        for _ in 0..50 {
            let r = env.step(Action::Noop.index()).unwrap();
            assert_eq!(r.reward, 0.0);
            assert!(!r.terminal);
            assert_eq!(r.ticks, 4);
        }
        assert_eq!(env.info().tick, 200);
    }

    #[test]
    fn key_pickup_pays_and_fills_inventory() {
        let config = single_room(&["#####", "#.k.#", "#####"], (1, 1));
        let mut env = KeyLabyrinth::new(&config, 0).unwrap();
        let r = env.step(Action::Right.index()).unwrap();
        assert_eq!(r.reward, 100.0);
        assert_eq!(env.keys_held(), 1);
        assert_eq!(r.observation.code_at(1, 2), CODE_AVATAR_KEY);
    }

    #[test]
    fn door_needs_key_and_consumes_it() {
        let config = single_room(&["######", "#k.D.#", "######"], (1, 2));
        let mut env = KeyLabyrinth::new(&config, 0).unwrap();
        assert_eq!(env.step(Action::Right.index()).unwrap().reward, 0.0);
        assert_eq!(env.avatar().col, 2);
        assert_eq!(env.step(Action::Left.index()).unwrap().reward, 100.0);
        env.step(Action::Right.index()).unwrap();
        let r = env.step(Action::Right.index()).unwrap();
        assert_eq!(r.reward, 300.0);
        assert_eq!(env.keys_held(), 0);
        assert_eq!(env.avatar().col, 3);
    }

    #[test]
    fn long_fall_costs_a_life_without_score_change() {
        let config = single_room(&["#####", "#...#", "##..#", "##..#", "##..#", "##..#", "#####"], (1, 1));
        let mut env = KeyLabyrinth::new(&config, 0).unwrap();
        let mut total = 0.0;
        for _ in 0..8 {
            total += env.step(Action::Right.index()).unwrap().reward;
            if env.info().lives == Some(4) {
                break;
            }
        }
        assert_eq!(env.info().lives, Some(4));
        assert_eq!(total, 0.0);
        assert_eq!(env.avatar(), Pos { room: 0, row: 1, col: 1 });
    }

    #[test]
    fn losing_the_last_life_ends_the_game() {
        let mut config = single_room(&["#####", "#.^.#", "#####"], (1, 1));
        config.lives = 2;
        config.respawn_grace = 0;
        let mut env = KeyLabyrinth::new(&config, 0).unwrap();
        env.step(Action::Right.index()).unwrap();
        assert_eq!(env.info().lives, Some(1));
        let r = env.step(Action::Right.index()).unwrap();
        assert!(r.terminal);
        assert_eq!(env.info().lives, Some(0));
        assert_eq!(env.step(Action::Noop.index()), Err(EnvError::StepAfterTerminal));
    }

    #[test]
    fn jump_clears_a_one_cell_gap_hazard() {
        let config = single_room(&["#######", "#.....#", "#.....#", "##^####", "#######"], (2, 1));
        let mut env = KeyLabyrinth::new(&config, 0).unwrap();
        env.step(Action::JumpRight.index()).unwrap();
        env.step(Action::Noop.index()).unwrap();
        assert_eq!(env.avatar(), Pos { room: 0, row: 2, col: 3 });
        assert_eq!(env.info().lives, Some(5));
    }

    #[test]
    fn ladders_connect_rooms_vertically() {
        let mut env = fresh();
        for _ in 0..4 {
            env.step(Action::Right.index()).unwrap();
        }
        assert_eq!(env.avatar(), Pos { room: 0, row: 9, col: 8 });
        for _ in 0..3 {
            env.step(Action::Down.index()).unwrap();
        }
        assert_eq!(env.avatar(), Pos { room: 2, row: 0, col: 8 });
    }

    #[test]
    fn right_move_shifts_avatar_channel() {
        let mut env = fresh();
        let before = env.observe();
        let after = env.step(Action::Right.index()).unwrap().observation;
        assert_eq!(before.code_at(9, 4), CODE_AVATAR);
        assert_eq!(after.code_at(9, 5), CODE_AVATAR);
        assert_eq!(after.code_at(9, 4), CODE_EMPTY);
    }

    #[test]
    fn invalid_layouts_are_rejected() {
        let mut c = LabyrinthConfig::default_layout();
        c.spawn.col = 0;
        assert!(matches!(KeyLabyrinth::new(&c, 0), Err(EnvError::InvalidLayout(_))));
        let mut c = LabyrinthConfig::default_layout();
        c.monsters[0].path = vec![[10, 2], [10, 4]];
        assert!(KeyLabyrinth::new(&c, 0).is_err());
        let mut c = LabyrinthConfig::default_layout();
        c.rooms[1].rows[3] = "#...x......#".into();
        assert!(KeyLabyrinth::new(&c, 0).is_err());
    }

    #[test]
    fn malformed_blobs_are_rejected() {
        let mut env = fresh();
        let mut cp = env.snapshot();
        cp.blob.truncate(cp.blob.len() - 3);
        assert!(matches!(env.restore(&cp), Err(EnvError::MalformedBlob(_))));
    }
}
