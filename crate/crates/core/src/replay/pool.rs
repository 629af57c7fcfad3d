use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PoolWarning, ReplayError};
use crate::envs::{Checkpoint, EnvKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Train,
    Eval,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Eval => "eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointRecord {
    pub id: String,
    pub checkpoint: Checkpoint,
    pub source_session: String,
    pub tick_index: u64,
    pub role: Role,
}

/// One line of a pool file.
#[derive(Serialize, Deserialize)]
struct PoolLine {
    id: String,
    env_kind: EnvKind,
    config_digest: String,
    role: Role,
    source_session: String,
    tick_index: u64,
    #[serde(with = "crate::envs::base64_bytes")]
    state: Vec<u8>,
}

/// Checkpoints of one game configuration, each tagged for training or
/// evaluation. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPool {
    env_kind: EnvKind,
    config_digest: String,
    records: Vec<CheckpointRecord>,
    train: Vec<usize>,
    eval: Vec<usize>,
}

impl CheckpointPool {
    pub fn new(env_kind: EnvKind, config_digest: &str, records: Vec<CheckpointRecord>) -> Result<Self, ReplayError> {
        let mut ids = HashSet::new();
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            if !ids.insert(r.id.as_str()) {
                return Err(ReplayError::DuplicateId(r.id.clone()));
            }
            if r.checkpoint.env_kind != env_kind || r.checkpoint.config_digest != config_digest {
                return Err(ReplayError::MixedPool {
                    id: r.id.clone(),
                    expected: format!("{env_kind} {config_digest}"),
                    found: format!("{} {}", r.checkpoint.env_kind, r.checkpoint.config_digest),
                });
            }
            match r.role {
                Role::Train => train.push(i),
                Role::Eval => eval.push(i),
            }
        }
        Ok(Self { env_kind, config_digest: config_digest.to_string(), records, train, eval })
    }

    pub fn env_kind(&self) -> EnvKind {
        self.env_kind
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn records(&self) -> &[CheckpointRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn indices(&self, role: Role) -> &[usize] {
        match role {
            Role::Train => &self.train,
            Role::Eval => &self.eval,
        }
    }

    pub fn count(&self, role: Role) -> usize {
        self.indices(role).len()
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &CheckpointRecord> {
        self.indices(role).iter().map(|&i| &self.records[i])
    }

    pub fn ids(&self, role: Role) -> Vec<String> {
        self.with_role(role).map(|r| r.id.clone()).collect()
    }

    /// A uniformly drawn record of `role`.
    pub fn pool_sample<R: Rng>(&self, role: Role, rng: &mut R) -> Result<&CheckpointRecord, ReplayError> {
        let idx = self.indices(role);
        if idx.is_empty() {
            return Err(ReplayError::EmptyRole(role));
        }
        Ok(&self.records[idx[rng.gen_range(0..idx.len())]])
    }

    /// Ids of `role` records that also appear in `ids`.
    pub fn overlap<'a>(&'a self, role: Role, ids: &[String]) -> Vec<&'a str> {
        let other: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.with_role(role).map(|r| r.id.as_str()).filter(|id| other.contains(id)).collect()
    }

    /// Reassigns roles: a seeded shuffle puts `eval_count` records in the
    /// evaluation role and the rest in training.
    pub fn split(&self, eval_count: usize, seed: u64) -> Result<Self, ReplayError> {
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let eval: HashSet<usize> = order.into_iter().take(eval_count).collect();
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| CheckpointRecord { role: if eval.contains(&i) { Role::Eval } else { Role::Train }, ..r.clone() })
            .collect();
        Self::new(self.env_kind, &self.config_digest, records)
    }

    /// Warning when the pool was recorded under a different configuration.
    pub fn digest_warning(&self, expected: &str) -> Option<PoolWarning> {
        (self.config_digest != expected).then(|| PoolWarning {
            message: format!(
                "pool config digest {} differs from the active config {expected}; restores will fail",
                self.config_digest
            ),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ReplayError> {
        let io = |e: std::io::Error| ReplayError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        for r in &self.records {
            let line = PoolLine {
                id: r.id.clone(),
                env_kind: r.checkpoint.env_kind,
                config_digest: r.checkpoint.config_digest.clone(),
                role: r.role,
                source_session: r.source_session.clone(),
                tick_index: r.tick_index,
                state: r.checkpoint.blob.clone(),
            };
            serde_json::to_writer(&mut out, &line).expect("pool line serializes");
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Reads a pool file. Blank lines are skipped; any malformed line is an
    /// error naming its 1-based line number.
    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let display = path.display().to_string();
        let file = fs::File::open(path).map_err(|e| ReplayError::Io { path: display.clone(), message: e.to_string() })?;
        let mut records = Vec::new();
        let mut header: Option<(EnvKind, String)> = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let parse = |message: String| ReplayError::Parse { path: display.clone(), line: n + 1, message };
            let line = line.map_err(|e| parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: PoolLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            header.get_or_insert_with(|| (l.env_kind, l.config_digest.clone()));
            records.push(CheckpointRecord {
                id: l.id,
                checkpoint: Checkpoint { env_kind: l.env_kind, config_digest: l.config_digest, blob: l.state },
                source_session: l.source_session,
                tick_index: l.tick_index,
                role: l.role,
            });
        }
        let (kind, digest) = header.ok_or(ReplayError::EmptyPool(display))?;
        Self::new(kind, &digest, records)
    }
}
