//! Seeded discrete-event machinery: activation clocks, per-channel delays,
//! output caches and staleness accounting on the global iteration index.
//!
//! Every activation gets the next global index k. A value written at index
//! g becomes visible to a reader once its delay has elapsed, measured either
//! in global iterations (`g + d < k`) or in simulated seconds
//! (`t_pub + d < t_now`). A reader keeps the newest version it has received
//! from each source.
//!
//! Staleness of a read follows the randomized block-coordinate model: the
//! value read equals the source's block of the global iterate at index
//! `k − τ`. If the reader holds the source's latest version τ = 0. Otherwise
//! τ = k − g', where g' is the index of the first write the reader has not
//! seen.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesError {
    #[error("agent {reader} read agent {writer} with staleness {tau} > chi = {chi} at k = {k}")]
    StalenessViolation { reader: usize, writer: usize, k: u64, tau: u64, chi: u64 },
    #[error("invalid activation model: {0}")]
    BadActivation(String),
    #[error("invalid delay model: {0}")]
    BadDelay(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ActivationModel {
    /// Independent Poisson clocks of equal rate: every serialized step picks
    /// an agent uniformly at random.
    UniformRandom {
        #[serde(default = "one")]
        rate_hz: f64,
    },
    /// Periodic clocks with a seeded random phase per agent.
    PerAgentRates { rates_hz: Vec<f64> },
    /// All agents tick together every `period_s`; ties are serialized by
    /// agent index.
    SynchronousRounds {
        #[serde(default = "one")]
        period_s: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ActivationModel {
    pub fn is_uniform(&self) -> bool {
        match self {
            ActivationModel::UniformRandom { .. } => true,
            ActivationModel::PerAgentRates { rates_hz } => rates_hz.windows(2).all(|w| w[0] == w[1]),
            ActivationModel::SynchronousRounds { .. } => false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), DesError> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match self {
            ActivationModel::UniformRandom { rate_hz } if !positive(*rate_hz) => {
                Err(DesError::BadActivation("rate_hz must be positive".into()))
            }
            ActivationModel::PerAgentRates { rates_hz } if rates_hz.len() != n => Err(DesError::BadActivation(
                format!("rates_hz has {} entries for {n} agents", rates_hz.len()),
            )),
            ActivationModel::PerAgentRates { rates_hz } if !rates_hz.iter().all(|r| positive(*r)) => {
                Err(DesError::BadActivation("rates must be positive".into()))
            }
            ActivationModel::SynchronousRounds { period_s } if !positive(*period_s) => {
                Err(DesError::BadActivation("period_s must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Mean activation interval of agent `i` in seconds.
    pub fn period(&self, i: usize) -> f64 {
        match self {
            ActivationModel::UniformRandom { rate_hz } => 1.0 / rate_hz,
            ActivationModel::PerAgentRates { rates_hz } => 1.0 / rates_hz[i],
            ActivationModel::SynchronousRounds { period_s } => *period_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayUnit {
    #[default]
    Iterations,
    Seconds,
}

/// Delay override for one unordered pair of agents (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDelay {
    pub agents: (usize, usize),
    pub min: f64,
    pub max: f64,
}

/// Delays drawn independently per message and receiver: integer-uniform on
/// `[min, max]` in iteration units, continuous uniform in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    #[serde(default)]
    pub unit: DelayUnit,
    #[serde(default)]
    pub min: f64,
    #[serde(default)]
    pub max: f64,
    #[serde(default)]
    pub channels: Vec<ChannelDelay>,
}

impl DelayModel {
    pub fn zero(unit: DelayUnit) -> Self {
        Self { unit, min: 0.0, max: 0.0, channels: Vec::new() }
    }

    pub fn iterations(min: u64, max: u64) -> Self {
        Self { unit: DelayUnit::Iterations, min: min as f64, max: max as f64, channels: Vec::new() }
    }

    pub fn validate(&self, n: usize) -> Result<(), DesError> {
        let ok = |lo: f64, hi: f64| lo >= 0.0 && lo <= hi && hi.is_finite();
        if !ok(self.min, self.max) {
            return Err(DesError::BadDelay(format!("range [{}, {}]", self.min, self.max)));
        }
        for c in &self.channels {
            let (a, b) = c.agents;
            if a == 0 || b == 0 || a > n || b > n || a == b {
                return Err(DesError::BadDelay(format!("channel ({a}, {b}) does not name two agents")));
            }
            if !ok(c.min, c.max) {
                return Err(DesError::BadDelay(format!("channel ({a}, {b}) range [{}, {}]", c.min, c.max)));
            }
        }
        Ok(())
    }

    /// Range for messages between 0-based agents `a` and `b`.
    pub fn range(&self, a: usize, b: usize) -> (f64, f64) {
        self.channels
            .iter()
            .rev()
            .find(|c| {
                let (x, y) = (c.agents.0 - 1, c.agents.1 - 1);
                (x, y) == (a, b) || (x, y) == (b, a)
            })
            .map_or((self.min, self.max), |c| (c.min, c.max))
    }

    /// Largest delay any channel can produce.
    pub fn max_delay(&self) -> f64 {
        self.channels.iter().map(|c| c.max).fold(self.max, f64::max)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, a: usize, b: usize) -> f64 {
        let (lo, hi) = self.range(a, b);
        match self.unit {
            DelayUnit::Iterations => {
                let (lo, hi) = (lo.round() as u64, hi.round() as u64);
                if lo == hi {
                    lo as f64
                } else {
                    rng.random_range(lo..=hi) as f64
                }
            }
            DelayUnit::Seconds => {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
        }
    }
}

/// f64 ordered by `total_cmp`, for heap keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Key(pub f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Source of activation events in simulated time order.
#[derive(Debug, Clone)]
pub struct Scheduler {
    model: ActivationModel,
    n: usize,
    t: f64,
    heap: BinaryHeap<Reverse<(Key, usize)>>,
    counts: Vec<u64>,
    phase: Vec<f64>,
}

impl Scheduler {
    pub fn new(model: &ActivationModel, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut heap = BinaryHeap::new();
        let mut phase = vec![0.0; n];
        match model {
            ActivationModel::PerAgentRates { rates_hz } => {
                for i in 0..n {
                    phase[i] = rng.random_range(0.0..1.0) / rates_hz[i];
                    heap.push(Reverse((Key(phase[i]), i)));
                }
            }
            ActivationModel::SynchronousRounds { period_s } => {
                for i in 0..n {
                    heap.push(Reverse((Key(*period_s), i)));
                }
            }
            ActivationModel::UniformRandom { .. } => {}
        }
        Self { model: model.clone(), n, t: 0.0, heap, counts: vec![0; n], phase }
    }

    /// Next `(time, agent)`.
    pub fn next_event(&mut self, rng: &mut ChaCha8Rng) -> (f64, usize) {
        match &self.model {
            ActivationModel::UniformRandom { rate_hz } => {
                let total = rate_hz * self.n as f64;
                let dt = Exp::new(total).expect("positive rate").sample(rng);
                self.t += dt;
                (self.t, rng.random_range(0..self.n))
            }
            ActivationModel::PerAgentRates { rates_hz } => {
                let Reverse((Key(t), i)) = self.heap.pop().expect("one clock per agent");
                self.counts[i] += 1;
                let next = self.phase[i] + self.counts[i] as f64 / rates_hz[i];
                self.heap.push(Reverse((Key(next), i)));
                self.t = t;
                (t, i)
            }
            ActivationModel::SynchronousRounds { period_s } => {
                let Reverse((Key(t), i)) = self.heap.pop().expect("one clock per agent");
                self.counts[i] += 1;
                let next = (self.counts[i] + 1) as f64 * period_s;
                self.heap.push(Reverse((Key(next), i)));
                self.t = t;
                (t, i)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Version<P> {
    /// Global index of the write; −1 for the initial value.
    pub g: i64,
    pub t: f64,
    pub value: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    key: Key,
    reader: usize,
    source: usize,
    version: u64,
}

/// Output caches of all agents plus the in-flight messages between them.
#[derive(Debug, Clone)]
pub struct Network<P> {
    delay: DelayModel,
    readers: Vec<Vec<usize>>,
    history: Vec<Vec<Version<P>>>,
    /// inbox[reader][source]: newest version delivered.
    inbox: Vec<Vec<u64>>,
    pending: BinaryHeap<Reverse<Pending>>,
    max_staleness: u64,
}

impl<P: Clone> Network<P> {
    /// `reads[i]` lists the sources agent `i` reads.
    pub fn new(reads: &[Vec<usize>], initial: Vec<P>, delay: DelayModel) -> Self {
        let n = reads.len();
        let mut readers = vec![Vec::new(); n];
        for (r, srcs) in reads.iter().enumerate() {
            for &s in srcs {
                readers[s].push(r);
            }
        }
        for r in &mut readers {
            r.sort_unstable();
        }
        Self {
            delay,
            readers,
            history: initial.into_iter().map(|value| vec![Version { g: -1, t: f64::NEG_INFINITY, value }]).collect(),
            inbox: vec![vec![0; n]; n],
            pending: BinaryHeap::new(),
            max_staleness: 0,
        }
    }

    pub fn unit(&self) -> DelayUnit {
        self.delay.unit
    }

    pub fn publish(&mut self, source: usize, g: u64, t: f64, value: P, rng: &mut ChaCha8Rng) {
        self.history[source].push(Version { g: g as i64, t, value });
        let version = (self.history[source].len() - 1) as u64;
        for idx in 0..self.readers[source].len() {
            let reader = self.readers[source][idx];
            let d = self.delay.draw(rng, source, reader);
            let key = match self.delay.unit {
                DelayUnit::Iterations => g as f64 + d,
                DelayUnit::Seconds => t + d,
            };
            self.pending.push(Reverse(Pending { key: Key(key), reader, source, version }));
        }
    }

    /// Move every message whose delay has elapsed before global index `k`
    /// at time `t` into the inboxes.
    pub fn deliver(&mut self, k: u64, t: f64) {
        let now = match self.delay.unit {
            DelayUnit::Iterations => k as f64,
            DelayUnit::Seconds => t,
        };
        while let Some(Reverse(p)) = self.pending.peek() {
            if p.key.0 >= now {
                break;
            }
            let p = *p;
            self.pending.pop();
            let slot = &mut self.inbox[p.reader][p.source];
            *slot = (*slot).max(p.version);
        }
    }

    /// Value of `source` as seen by `reader` at global index `k`, with its
    /// version and staleness.
    pub fn read(&mut self, reader: usize, source: usize, k: u64) -> (&P, u64, u64) {
        let v = self.inbox[reader][source];
        let hist = &self.history[source];
        let tau = if v as usize + 1 >= hist.len() { 0 } else { (k as i64 - hist[v as usize + 1].g).max(0) as u64 };
        self.max_staleness = self.max_staleness.max(tau);
        (&hist[v as usize].value, v, tau)
    }

    pub fn latest(&self, source: usize) -> &Version<P> {
        self.history[source].last().expect("initial version")
    }

    pub fn history(&self, source: usize) -> &[Version<P>] {
        &self.history[source]
    }

    pub fn max_staleness(&self) -> u64 {
        self.max_staleness
    }

    pub fn into_histories(self) -> Vec<Vec<Version<P>>> {
        self.history
    }
}
