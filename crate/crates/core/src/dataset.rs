//! Episode datasets: in-memory model, reward kernel, return statistics,
//! and the `.opld` binary file format.
//!
//! A dataset is a collection of fixed-length episodes over fixed state and
//! action dimensions. Every episode carries an id (stable across
//! transformations) and a provenance label. All on-disk values are f32,
//! little-endian; return arithmetic is done in f64.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, FormatError, Result};

/// Magic bytes at the start of every `.opld` file.
pub const OPLD_MAGIC: [u8; 4] = *b"OPLD";
/// Current `.opld` format version.
pub const OPLD_VERSION: u32 = 1;

/// Provenance of an episode's behavior policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// No ground truth available (the normal case for real data).
    Unknown,
    /// Known to come from a weak/degraded policy.
    Weak,
    /// Known to come from the expert policy.
    Expert,
}

impl Label {
    pub fn to_i8(self) -> i8 {
        match self {
            Label::Unknown => -1,
            Label::Weak => 0,
            Label::Expert => 1,
        }
    }

    pub fn from_i8(value: i8) -> Option<Label> {
        match value {
            -1 => Some(Label::Unknown),
            0 => Some(Label::Weak),
            1 => Some(Label::Expert),
            _ => None,
        }
    }
}

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
}

/// A fixed-length trajectory with an id and a provenance label.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub label: Label,
    pub steps: Vec<Transition>,
}

/// A collection of equally shaped episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_len: usize,
    pub episodes: Vec<Episode>,
}

/// Parameters of the logistic distance-to-reward kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardKernelParams {
    /// Sharpness; larger values concentrate reward near zero distance.
    pub a: f64,
    /// Flatness of the peak; must be positive.
    pub b: f64,
}

impl RewardKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(domain(format!("kernel sharpness a must be >= 0, got {}", self.a)));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(domain(format!("kernel flatness b must be > 0, got {}", self.b)));
        }
        Ok(())
    }
}

/// Logistic reward kernel. Peaks at exactly 1.0 for `d = 0`, is symmetric
/// in `d`, and decays monotonically with `|d|`.
pub fn logistic_reward(d: f64, params: RewardKernelParams) -> f64 {
    let RewardKernelParams { a, b } = params;
    // Evaluated on |d| so symmetry holds bit-for-bit.
    let x = a * d.abs();
    (b + 2.0) / (x.exp() + b + (-x).exp())
}

/// Sum of an episode's rewards, accumulated in f64.
pub fn episodic_return(episode: &Episode) -> f64 {
    episode.steps.iter().map(|t| f64::from(t.reward)).sum()
}

/// Histogram of episodic returns over `[min, max]`.
///
/// When all returns are equal the histogram degenerates to a single bin
/// holding every episode, regardless of the requested bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnHistogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl EpisodeDataset {
    pub fn new(state_dim: usize, action_dim: usize, episode_len: usize) -> EpisodeDataset {
        EpisodeDataset {
            state_dim,
            action_dim,
            episode_len,
            episodes: Vec::new(),
        }
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Total number of transitions across all episodes.
    pub fn n_transitions(&self) -> usize {
        self.episodes.len() * self.episode_len
    }

    /// Checks the shape invariants: positive dims, equal episode lengths,
    /// matching vector widths, finite values, unique ids.
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.episode_len == 0 {
            return Err(domain("dataset dims and episode_len must all be >= 1"));
        }
        let mut ids: Vec<u64> = self.episodes.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(domain("dataset contains duplicate episode ids"));
        }
        for ep in &self.episodes {
            if ep.steps.len() != self.episode_len {
                return Err(Error::Shape {
                    context: "episode length",
                    expected: self.episode_len,
                    found: ep.steps.len(),
                });
            }
            for (i, t) in ep.steps.iter().enumerate() {
                if t.state.len() != self.state_dim {
                    return Err(Error::Shape {
                        context: "state width",
                        expected: self.state_dim,
                        found: t.state.len(),
                    });
                }
                if t.action.len() != self.action_dim {
                    return Err(Error::Shape {
                        context: "action width",
                        expected: self.action_dim,
                        found: t.action.len(),
                    });
                }
                let finite = t.state.iter().all(|v| v.is_finite())
                    && t.action.iter().all(|v| v.is_finite())
                    && t.reward.is_finite();
                if !finite {
                    return Err(domain(format!(
                        "episode {}, step {i}: non-finite value",
                        ep.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ids of the top `ceil(frac * n)` episodes by episodic return.
    /// Return ties are broken by ascending id; the result is sorted by id.
    pub fn top_fraction(&self, frac: f64) -> Result<Vec<u64>> {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(domain(format!("fraction must be in (0, 1], got {frac}")));
        }
        let mut ranked: Vec<(f64, u64)> = self
            .episodes
            .iter()
            .map(|e| (episodic_return(e), e.id))
            .collect();
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let k = ((frac * self.episodes.len() as f64).ceil() as usize).min(ranked.len());
        let mut ids: Vec<u64> = ranked[..k].iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        Ok(ids)
    }

    /// Histogram of episodic returns.
    pub fn return_histogram(&self, n_bins: usize) -> Result<ReturnHistogram> {
        if n_bins == 0 {
            return Err(domain("histogram needs at least one bin"));
        }
        if self.episodes.is_empty() {
            return Err(domain("histogram of an empty dataset"));
        }
        let returns: Vec<f64> = self.episodes.iter().map(episodic_return).collect();
        let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Ok(ReturnHistogram {
                min,
                max,
                counts: vec![returns.len()],
            });
        }
        let mut counts = vec![0usize; n_bins];
        let width = (max - min) / n_bins as f64;
        for r in returns {
            let bin = (((r - min) / width) as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
        Ok(ReturnHistogram { min, max, counts })
    }

    /// Per-dimension `[lo, hi]` bounds over all stored actions.
    pub fn action_bounds(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.per_dim_bounds(self.action_dim, |t| &t.action)
    }

    /// Per-dimension `[lo, hi]` bounds over all stored states.
    pub fn state_bounds(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.per_dim_bounds(self.state_dim, |t| &t.state)
    }

    fn per_dim_bounds(
        &self,
        dim: usize,
        select: impl Fn(&Transition) -> &Vec<f32>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.episodes.is_empty() {
            return Err(domain("bounds of an empty dataset"));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for ep in &self.episodes {
            for t in &ep.steps {
                for (d, &v) in select(t).iter().enumerate() {
                    let v = f64::from(v);
                    lo[d] = lo[d].min(v);
                    hi[d] = hi[d].max(v);
                }
            }
        }
        Ok((lo, hi))
    }

    /// Serializes into the `.opld` byte layout.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        if self.episodes.len() > u32::MAX as usize {
            return Err(domain("too many episodes for the on-disk format"));
        }
        w.write_all(&OPLD_MAGIC)?;
        w.write_u32::<LittleEndian>(OPLD_VERSION)?;
        w.write_u32::<LittleEndian>(self.state_dim as u32)?;
        w.write_u32::<LittleEndian>(self.action_dim as u32)?;
        w.write_u32::<LittleEndian>(self.episodes.len() as u32)?;
        w.write_u32::<LittleEndian>(self.episode_len as u32)?;
        for ep in &self.episodes {
            w.write_u64::<LittleEndian>(ep.id)?;
            w.write_i8(ep.label.to_i8())?;
            for t in &ep.steps {
                for &v in &t.state {
                    w.write_f32::<LittleEndian>(v)?;
                }
                for &v in &t.action {
                    w.write_f32::<LittleEndian>(v)?;
                }
                w.write_f32::<LittleEndian>(t.reward)?;
            }
        }
        Ok(())
    }

    /// Parses the `.opld` byte layout, validating structure and values.
    pub fn read_from(bytes: &[u8]) -> Result<EpisodeDataset> {
        const HEADER_LEN: u64 = 24;
        let actual = bytes.len() as u64;
        if actual < HEADER_LEN {
            return Err(FormatError::Truncated {
                expected: HEADER_LEN,
                actual,
            }
            .into());
        }
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut r, &mut magic)?;
        if magic != OPLD_MAGIC {
            return Err(FormatError::BadMagic { found: magic }.into());
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != OPLD_VERSION {
            return Err(FormatError::BadVersion { found: version }.into());
        }
        let state_dim = r.read_u32::<LittleEndian>()?;
        let action_dim = r.read_u32::<LittleEndian>()?;
        let n_episodes = r.read_u32::<LittleEndian>()?;
        let episode_len = r.read_u32::<LittleEndian>()?;
        for (value, field) in [
            (state_dim, "state_dim"),
            (action_dim, "action_dim"),
            (episode_len, "episode_len"),
        ] {
            if value == 0 {
                return Err(FormatError::ZeroDim { field }.into());
            }
        }

        let step_len = 4 * (u64::from(state_dim) + u64::from(action_dim) + 1);
        let episode_bytes = 8 + 1 + u64::from(episode_len) * step_len;
        let expected = HEADER_LEN + u64::from(n_episodes) * episode_bytes;
        if actual < expected {
            return Err(FormatError::Truncated { expected, actual }.into());
        }
        if actual > expected {
            return Err(FormatError::TrailingBytes {
                extra: actual - expected,
            }
            .into());
        }

        let mut dataset = EpisodeDataset::new(
            state_dim as usize,
            action_dim as usize,
            episode_len as usize,
        );
        let mut seen_ids = std::collections::HashSet::with_capacity(n_episodes as usize);
        for _ in 0..n_episodes {
            let id = r.read_u64::<LittleEndian>()?;
            if !seen_ids.insert(id) {
                return Err(FormatError::DuplicateId { id }.into());
            }
            let label_byte = r.read_i8()?;
            let label = Label::from_i8(label_byte).ok_or(FormatError::BadLabel {
                episode: id,
                value: label_byte,
            })?;
            let mut steps = Vec::with_capacity(episode_len as usize);
            for step in 0..episode_len as usize {
                let mut read_vec = |n: usize, field: &'static str| -> Result<Vec<f32>> {
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        let x = r.read_f32::<LittleEndian>()?;
                        if !x.is_finite() {
                            return Err(FormatError::NonFinite {
                                episode: id,
                                step,
                                field,
                            }
                            .into());
                        }
                        v.push(x);
                    }
                    Ok(v)
                };
                let state = read_vec(state_dim as usize, "state")?;
                let action = read_vec(action_dim as usize, "action")?;
                let reward = r.read_f32::<LittleEndian>()?;
                if !reward.is_finite() {
                    return Err(FormatError::NonFinite {
                        episode: id,
                        step,
                        field: "reward",
                    }
                    .into());
                }
                steps.push(Transition {
                    state,
                    action,
                    reward,
                });
            }
            dataset.episodes.push(Episode { id, label, steps });
        }
        Ok(dataset)
    }

    /// Writes the dataset to a `.opld` file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a dataset from a `.opld` file.
    pub fn load(path: impl AsRef<Path>) -> Result<EpisodeDataset> {
        let bytes = fs::read(path)?;
        EpisodeDataset::read_from(&bytes)
    }
}
