use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stored episode: `steps + 1` frames, and per agent step the action
/// taken and the (repeat-summed) reward that followed.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub env: String,
    /// Physics steps before action repeat.
    pub episode_len: usize,
    pub repeat: usize,
    pub seed: u64,
    pub image_size: usize,
    pub channels: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub observations: Vec<u8>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    /// Ground-truth simulator state per frame (empty if unavailable).
    pub states: Vec<f32>,
}

impl EpisodeRecord {
    /// Agent steps (actions) in the episode.
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn frame_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.observations[t * n..(t + 1) * n]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn state(&self, t: usize) -> Option<&[f32]> {
        (!self.states.is_empty()).then(|| &self.states[t * self.state_dim..(t + 1) * self.state_dim])
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.steps();
        let ok = self.observations.len() == (n + 1) * self.frame_len()
            && self.actions.len() == n * self.action_dim
            && (self.states.is_empty() || self.states.len() == (n + 1) * self.state_dim);
        if !ok {
            return Err(Error::dim(format!(
                "episode arrays inconsistent with {n} steps: {} obs bytes, {} actions, {} states",
                self.observations.len(),
                self.actions.len(),
                self.states.len()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Shapes {
    observations: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<usize>,
    states: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    env: String,
    #[serde(rename = "T")]
    episode_len: usize,
    #[serde(rename = "R")]
    repeat: usize,
    seed: u64,
    shapes: Shapes,
    dtypes: [String; 4],
}

const EPISODE_FORMAT: &str = "planet-episode-v1";

/// Layout: u64 LE manifest length, JSON manifest, then observations (u8),
/// actions (f32 LE), rewards (f32 LE), states (f32 LE).
pub fn write_episode(path: &Path, ep: &EpisodeRecord) -> Result<()> {
    ep.validate()?;
    let n = ep.steps();
    let s = ep.image_size;
    let manifest = Manifest {
        format: EPISODE_FORMAT.into(),
        env: ep.env.clone(),
        episode_len: ep.episode_len,
        repeat: ep.repeat,
        seed: ep.seed,
        shapes: Shapes {
            observations: vec![n + 1, s, s, ep.channels],
            actions: vec![n, ep.action_dim],
            rewards: vec![n],
            states: if ep.states.is_empty() {
                vec![0, ep.state_dim]
            } else {
                vec![n + 1, ep.state_dim]
            },
        },
        dtypes: ["u8".into(), "f32".into(), "f32".into(), "f32".into()],
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::with_capacity(8 + json.len() + ep.observations.len() + 4 * (ep.actions.len() + ep.rewards.len() + ep.states.len()));
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&ep.observations);
    for arr in [&ep.actions, &ep.rewards, &ep.states] {
        for x in arr.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord> {
    let buf = fs::read(path)?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if buf.len() < 8 {
        return Err(bad("file too short"));
    }
    let mlen = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes")) as usize;
    let body = buf.get(8..8 + mlen).ok_or_else(|| bad("manifest overruns file"))?;
    let m: Manifest = serde_json::from_slice(body)?;
    if m.format != EPISODE_FORMAT {
        return Err(bad("unknown episode format"));
    }
    let count = |s: &[usize]| s.iter().product::<usize>();
    let mut off = 8 + mlen;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(off..off + n).ok_or_else(|| bad("array overruns file"))?;
        off += n;
        Ok(s)
    };
    let f32s = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    let sh = &m.shapes;
    if sh.observations.len() != 4 || sh.actions.len() != 2 || sh.states.len() != 2 {
        return Err(bad("malformed shapes"));
    }
    let observations = take(count(&sh.observations))?.to_vec();
    let actions = f32s(take(4 * count(&sh.actions))?);
    let rewards = f32s(take(4 * count(&sh.rewards))?);
    let states = f32s(take(4 * count(&sh.states))?);
    if off != buf.len() {
        return Err(bad("trailing bytes"));
    }
    let ep = EpisodeRecord {
        env: m.env,
        episode_len: m.episode_len,
        repeat: m.repeat,
        seed: m.seed,
        image_size: sh.observations[1],
        channels: sh.observations[3],
        action_dim: sh.actions[1],
        state_dim: sh.states[1],
        observations,
        actions,
        rewards,
        states,
    };
    ep.validate()?;
    Ok(ep)
}
