//! Versioned iterate storage and update-schedule bookkeeping.
//!
//! Iteration `k` writes exactly one block and produces `x^{k+1}`; the written
//! value carries stamp `k + 1`. Block `j` "at stamp `t`" is the value of
//! `x_j^t`, with every stamp `t <= 0` resolving to `x_j^0`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{dist_sq, BlockVector};
use crate::error::{ApalmError, Result};

/// Extra ring slots on top of `tau + K + 2`.
pub const DEPTH_SLACK: usize = 8;

/// Ring depth able to serve delays up to `tau` and residual windows of length `k_window`.
pub fn default_depth(tau: usize, k_window: usize) -> usize {
    tau + k_window + 2 + DEPTH_SLACK
}

#[derive(Debug)]
struct BlockRing {
    /// (stamp, value), increasing stamps; the first entry is always at or below the window floor.
    writes: VecDeque<(u64, Vec<f64>)>,
}

impl BlockRing {
    fn value_at(&self, t: u64) -> &[f64] {
        // last write with stamp <= t
        let idx = self.writes.partition_point(|(s, _)| *s <= t);
        &self.writes[idx.saturating_sub(1)].1
    }

    fn prune(&mut self, floor: u64) {
        while self.writes.len() > 1 && self.writes[1].0 <= floor {
            self.writes.pop_front();
        }
    }
}

/// Ring buffer of recent iterates.
///
/// One writer per block at a time, any number of readers. Reads are
/// consistent per block; a snapshot assembled block by block may mix stamps.
#[derive(Debug)]
pub struct IterateHistory {
    initial: BlockVector,
    depth: usize,
    blocks: Vec<RwLock<BlockRing>>,
    /// Number of committed writes, i.e. the current iterate is `x^{current_k}`.
    current_k: AtomicU64,
    /// Squared step norms `|x^{t+1} - x^t|^2`, most recent last.
    steps: Mutex<VecDeque<f64>>,
}

impl IterateHistory {
    pub fn new(x0: BlockVector, depth: usize) -> Self {
        let depth = depth.max(2);
        let blocks = x0
            .blocks()
            .iter()
            .map(|b| {
                RwLock::new(BlockRing {
                    writes: VecDeque::from([(0, b.clone())]),
                })
            })
            .collect();
        IterateHistory {
            initial: x0,
            depth,
            blocks,
            current_k: AtomicU64::new(0),
            steps: Mutex::new(VecDeque::with_capacity(depth + 1)),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn initial(&self) -> &BlockVector {
        &self.initial
    }

    pub fn current_k(&self) -> u64 {
        self.current_k.load(Ordering::Acquire)
    }

    /// Oldest stamp still retrievable.
    pub fn oldest_stamp(&self) -> i64 {
        self.current_k() as i64 - self.depth as i64 + 1
    }

    fn check_stamp(&self, t: i64) -> Result<()> {
        let current = self.current_k() as i64;
        if t > current {
            return Err(ApalmError::Schedule(format!(
                "stamp {t} is in the future (current iterate {current})"
            )));
        }
        let oldest = self.oldest_stamp();
        if t > 0 && t < oldest {
            return Err(ApalmError::StalenessOverflow { requested: t, oldest });
        }
        Ok(())
    }

    /// `x_j^t`.
    pub fn block_at(&self, j: usize, t: i64) -> Result<Vec<f64>> {
        self.check_stamp(t)?;
        if t <= 0 {
            return Ok(self.initial.block(j).to_vec());
        }
        let ring = self.blocks[j].read().expect("block lock poisoned");
        Ok(ring.value_at(t as u64).to_vec())
    }

    /// The latest value of block `j` with the stamp at which it became current.
    pub fn read_latest(&self, j: usize) -> (u64, Vec<f64>) {
        let ring = self.blocks[j].read().expect("block lock poisoned");
        let (s, v) = ring.writes.back().expect("ring never empty");
        (*s, v.clone())
    }

    pub fn current_block(&self, j: usize) -> Vec<f64> {
        self.read_latest(j).1
    }

    /// Realized delay at iteration `k` of a read of block `j` that returned the
    /// version stamped `version`: zero if that version is still current,
    /// otherwise `k - (successor - 1)`. `None` when the version was evicted.
    pub fn realized_delay(&self, j: usize, version: u64, k: u64) -> Option<usize> {
        let ring = self.blocks[j].read().expect("block lock poisoned");
        let pos = ring.writes.iter().position(|(s, _)| *s == version)?;
        match ring.writes.get(pos + 1) {
            None => Some(0),
            Some((next, _)) => Some((k + 1).saturating_sub(*next) as usize),
        }
    }

    /// The delayed vector `x^{k-d}` with block `j` taken at stamp `k - d_j`.
    pub fn compose_delayed(&self, k: u64, d: &DelayRecord) -> Result<BlockVector> {
        if d.d.len() != self.blocks.len() {
            return Err(ApalmError::Dimension(format!(
                "delay record has {} entries for {} blocks",
                d.d.len(),
                self.blocks.len()
            )));
        }
        let blocks = d
            .d
            .iter()
            .enumerate()
            .map(|(j, &dj)| self.block_at(j, k as i64 - dj as i64))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockVector::from_blocks(blocks))
    }

    /// The consistent iterate `x^t`.
    pub fn iterate(&self, t: i64) -> Result<BlockVector> {
        self.check_stamp(t)?;
        let blocks = (0..self.blocks.len())
            .map(|j| self.block_at(j, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockVector::from_blocks(blocks))
    }

    pub fn current(&self) -> BlockVector {
        let blocks = (0..self.blocks.len()).map(|j| self.current_block(j)).collect();
        BlockVector::from_blocks(blocks)
    }

    /// `|x^{t+1} - x^t|^2`; zero for `t < 0`.
    pub fn step_sq(&self, t: i64) -> Result<f64> {
        if t < 0 {
            return Ok(0.0);
        }
        let current = self.current_k() as i64;
        if t >= current {
            return Err(ApalmError::Schedule(format!("step {t} has not been taken yet")));
        }
        let steps = self.steps.lock().expect("step lock poisoned");
        let back = current - 1 - t;
        if back as usize >= steps.len() {
            return Err(ApalmError::StalenessOverflow {
                requested: t,
                oldest: current - steps.len() as i64,
            });
        }
        Ok(steps[steps.len() - 1 - back as usize])
    }

    /// Writes the result of iteration `k = current_k` into block `j`; returns `k`.
    ///
    /// Callers serialize commits; concurrent readers are fine.
    pub fn commit(&self, j: usize, value: Vec<f64>) -> Result<u64> {
        if value.len() != self.initial.block(j).len() {
            return Err(ApalmError::Dimension(format!(
                "write of length {} into block {} of dimension {}",
                value.len(),
                j + 1,
                self.initial.block(j).len()
            )));
        }
        let k = self.current_k();
        let new_current = k + 1;
        let floor = (new_current + 1).saturating_sub(self.depth as u64);
        {
            let mut ring = self.blocks[j].write().expect("block lock poisoned");
            let sq = dist_sq(ring.writes.back().map(|w| w.1.as_slice()).unwrap_or(&[]), &value);
            ring.writes.push_back((new_current, value));
            ring.prune(floor);
            let mut steps = self.steps.lock().expect("step lock poisoned");
            steps.push_back(sq);
            while steps.len() > self.depth {
                steps.pop_front();
            }
        }
        self.current_k.store(new_current, Ordering::Release);
        // other blocks are pruned lazily on their own writes; retrieval checks the floor
        Ok(k)
    }
}

/// Per-block delays used at one iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayRecord {
    pub k: u64,
    pub d: Vec<usize>,
}

impl DelayRecord {
    pub fn zero(k: u64, m: usize) -> Self {
        DelayRecord { k, d: vec![0; m] }
    }

    pub fn max_delay(&self) -> usize {
        self.d.iter().copied().max().unwrap_or(0)
    }
}

/// Block indices (0-based internally) and delay records, one per iteration.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub indices: Vec<usize>,
    pub delays: Vec<DelayRecord>,
}

/// How delay vectors are produced when a schedule is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayPattern {
    Zero,
    /// Every block at the maximal delay `tau`.
    Max,
    /// Independent uniform draws in `0..=tau`, seeded.
    Random { seed: u64 },
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_blocks(&self) -> Option<usize> {
        self.delays.first().map(|d| d.d.len())
    }

    /// `j_k = k mod m`.
    pub fn cyclic_indices(m: usize, n: usize) -> Vec<usize> {
        (0..n).map(|k| k % m).collect()
    }

    /// Concatenated seeded permutations of the blocks (essentially cyclic with `K = 2m - 1`).
    pub fn shuffled_indices(m: usize, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n + m);
        let mut perm: Vec<usize> = (0..m).collect();
        while out.len() < n {
            perm.shuffle(&mut rng);
            out.extend_from_slice(&perm);
        }
        out.truncate(n);
        out
    }

    /// IID uniform block draws.
    pub fn uniform_indices(m: usize, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0..m)).collect()
    }

    pub fn with_delays(indices: Vec<usize>, m: usize, tau: usize, pattern: DelayPattern) -> Self {
        let mut rng = match pattern {
            DelayPattern::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed ^ 0x0de1_a7ed)),
            _ => None,
        };
        let delays = (0..indices.len() as u64)
            .map(|k| {
                let d = match pattern {
                    DelayPattern::Zero => vec![0; m],
                    DelayPattern::Max => vec![tau; m],
                    DelayPattern::Random { .. } => {
                        let rng = rng.as_mut().expect("seeded above");
                        (0..m).map(|_| rng.random_range(0..=tau)).collect()
                    }
                };
                DelayRecord { k, d }
            })
            .collect();
        Schedule { indices, delays }
    }

    /// `l(k, j) = max({q < k : j_q = j} U {0})`.
    pub fn last_update(&self, k: u64, j: usize) -> u64 {
        let end = (k as usize).min(self.indices.len());
        self.indices[..end]
            .iter()
            .rposition(|&i| i == j)
            .map(|q| q as u64)
            .unwrap_or(0)
    }

    /// Largest number of times one block occurs among `tau` consecutive indices.
    pub fn rho_tau(&self, tau: usize) -> usize {
        rho_tau(&self.indices, tau)
    }

    /// Every window `{j_{k+1}, ..., j_{k+K}}` lying inside the schedule covers all `m` blocks.
    pub fn check_essentially_cyclic(&self, m: usize, window: usize) -> Result<()> {
        if window < m {
            return Err(ApalmError::Schedule(format!("K = {window} is smaller than m = {m}")));
        }
        if self.indices.len() < window {
            return Ok(());
        }
        let mut counts = vec![0usize; m];
        let mut covered = 0usize;
        for (pos, &j) in self.indices.iter().enumerate() {
            if j >= m {
                return Err(ApalmError::Schedule(format!("block index {} out of range", j + 1)));
            }
            if counts[j] == 0 {
                covered += 1;
            }
            counts[j] += 1;
            if pos >= window {
                let old = self.indices[pos - window];
                counts[old] -= 1;
                if counts[old] == 0 {
                    covered -= 1;
                }
            }
            if pos + 1 >= window && covered < m {
                return Err(ApalmError::Schedule(format!(
                    "window ending at iteration {pos} misses a block (K = {window})"
                )));
            }
        }
        Ok(())
    }

    pub fn check_delays(&self, tau: usize) -> Result<()> {
        for rec in &self.delays {
            if rec.max_delay() > tau {
                return Err(ApalmError::Staleness {
                    delay: rec.max_delay(),
                    bound: tau,
                });
            }
        }
        Ok(())
    }

    pub fn max_delay(&self) -> usize {
        self.delays.iter().map(|d| d.max_delay()).max().unwrap_or(0)
    }

    /// Line format `k j_k d_1 ... d_m`, block indices 1-based.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (j, rec) in self.indices.iter().zip(&self.delays) {
            write!(out, "{} {}", rec.k, j + 1).unwrap();
            for d in &rec.d {
                write!(out, " {d}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses the line format; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, column: usize, message: String| ApalmError::Parse {
            path: origin.to_path_buf(),
            line,
            column,
            message,
        };
        let mut sched = Schedule::default();
        let mut width: Option<usize> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums = fields
                .iter()
                .enumerate()
                .map(|(c, f)| {
                    f.parse::<u64>()
                        .map_err(|_| err(line_no, c + 1, format!("expected a nonnegative integer, got {f:?}")))
                })
                .collect::<Result<Vec<u64>>>()?;
            if nums.len() < 3 {
                return Err(err(line_no, nums.len() + 1, "expected `k j d_1 ... d_m`".into()));
            }
            let m = nums.len() - 2;
            match width {
                None => width = Some(m),
                Some(w) if w != m => {
                    return Err(err(line_no, nums.len(), format!("expected {w} delays, got {m}")));
                }
                _ => {}
            }
            let k = nums[0];
            if k != sched.indices.len() as u64 {
                return Err(err(
                    line_no,
                    1,
                    format!("expected iteration {}, got {k}", sched.indices.len()),
                ));
            }
            let j = nums[1] as usize;
            if j == 0 || j > m {
                return Err(err(line_no, 2, format!("block index {j} outside 1..={m}")));
            }
            sched.indices.push(j - 1);
            sched.delays.push(DelayRecord {
                k,
                d: nums[2..].iter().map(|&d| d as usize).collect(),
            });
        }
        Ok(sched)
    }
}

/// `rho_tau` over a plain index sequence; windows are `{h : k - tau <= h <= k - 1}`.
/// Smallest `K` for which `indices` is essentially cyclic over `m` blocks:
/// one more than the longest run of positions missing some block.
/// `None` if a block never appears.
pub fn cyclicity_window(indices: &[usize], m: usize) -> Option<usize> {
    let mut last: Vec<Option<usize>> = vec![None; m];
    let mut longest = 0usize;
    for (pos, &j) in indices.iter().enumerate() {
        let run = match last[j] {
            Some(p) => pos - p - 1,
            None => pos,
        };
        longest = longest.max(run);
        last[j] = Some(pos);
    }
    for l in &last {
        let p = (*l)?;
        longest = longest.max(indices.len() - p - 1);
    }
    Some(longest + 1)
}

pub fn rho_tau(indices: &[usize], tau: usize) -> usize {
    if tau == 0 || indices.is_empty() {
        return 0;
    }
    let m = indices.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; m];
    let mut best = 0;
    for (pos, &j) in indices.iter().enumerate() {
        counts[j] += 1;
        if pos >= tau {
            counts[indices[pos - tau]] -= 1;
        }
        best = best.max(counts[j]);
    }
    best
}
