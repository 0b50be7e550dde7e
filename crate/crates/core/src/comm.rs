//! Simulated end-of-epoch broadcast channel and communication accounting.
//!
//! The network is ideal: every broadcast reaches every agent instantly and
//! without loss. The cost metric counts messages, one per sender per epoch.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error("agent {sender} already broadcast in epoch {epoch}")]
    DuplicatePost { sender: usize, epoch: usize },
    #[error("sender {sender} is not one of the {num_agents} agents")]
    UnknownSender { sender: usize, num_agents: usize },
    #[error("broadcast for epoch {got} arrived while epoch {current} is open")]
    OutOfOrder { got: usize, current: usize },
    #[error("epoch {epoch} has {posted} of {expected} broadcasts")]
    IncompleteEpoch { epoch: usize, posted: usize, expected: usize },
}

/// What an agent sends to everyone once its epoch ends.
///
/// All per-arm vectors are aligned with `arms`, which is the sender's
/// arm-set in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochBroadcast {
    pub sender: usize,
    pub epoch: usize,
    pub arms: Vec<usize>,
    pub reward_sums: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub prev_gaps: Vec<f64>,
    pub active: Vec<usize>,
}

impl EpochBroadcast {
    /// `(p, R̃)` reported for `arm`, if the sender holds it.
    #[inline]
    pub fn report(&self, arm: usize) -> Option<(f64, f64)> {
        let j = self.arms.binary_search(&arm).ok()?;
        Some((self.probabilities[j], self.reward_sums[j]))
    }

    /// Scalars carried: three per arm plus the active-set members.
    pub fn payload_scalars(&self) -> usize {
        3 * self.arms.len() + self.active.len()
    }
}

/// Ordered record of every broadcast in a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    num_agents: usize,
    messages: Vec<EpochBroadcast>,
    /// Offset into `messages` where each epoch begins; epoch `m` is `starts[m - 1]`.
    starts: Vec<usize>,
    #[serde(skip)]
    posted: Vec<bool>,
}

impl MessageLog {
    pub fn new(num_agents: usize) -> Self {
        Self { num_agents, messages: Vec::new(), starts: Vec::new(), posted: vec![false; num_agents] }
    }

    /// Latest epoch that has received at least one broadcast (0 if none).
    pub fn current_epoch(&self) -> usize {
        self.starts.len()
    }

    fn posted_in_current(&self) -> usize {
        self.starts.last().map_or(0, |&s| self.messages.len() - s)
    }

    pub fn post(&mut self, broadcast: EpochBroadcast) -> Result<(), CommError> {
        if broadcast.sender >= self.num_agents {
            return Err(CommError::UnknownSender { sender: broadcast.sender, num_agents: self.num_agents });
        }
        let current = self.current_epoch();
        if broadcast.epoch == current + 1 {
            if current > 0 && self.posted_in_current() < self.num_agents {
                return Err(CommError::OutOfOrder { got: broadcast.epoch, current });
            }
            self.starts.push(self.messages.len());
            self.posted.iter_mut().for_each(|p| *p = false);
        } else if broadcast.epoch != current {
            return Err(CommError::OutOfOrder { got: broadcast.epoch, current });
        }
        if self.posted[broadcast.sender] {
            return Err(CommError::DuplicatePost { sender: broadcast.sender, epoch: broadcast.epoch });
        }
        self.posted[broadcast.sender] = true;
        self.messages.push(broadcast);
        Ok(())
    }

    /// All broadcasts of a fully posted epoch, in posting order.
    pub fn epoch_messages(&self, epoch: usize) -> Result<&[EpochBroadcast], CommError> {
        if epoch == 0 || epoch > self.starts.len() {
            return Err(CommError::IncompleteEpoch { epoch, posted: 0, expected: self.num_agents });
        }
        let start = self.starts[epoch - 1];
        let end = self.starts.get(epoch).copied().unwrap_or(self.messages.len());
        if end - start < self.num_agents {
            return Err(CommError::IncompleteEpoch { epoch, posted: end - start, expected: self.num_agents });
        }
        Ok(&self.messages[start..end])
    }

    pub fn completed_epochs(&self) -> usize {
        match self.posted_in_current() {
            n if n == self.num_agents => self.starts.len(),
            _ => self.starts.len().saturating_sub(1),
        }
    }

    pub fn messages(&self) -> &[EpochBroadcast] {
        &self.messages
    }

    pub fn payload_scalars(&self) -> usize {
        self.messages.iter().map(EpochBroadcast::payload_scalars).sum()
    }

    /// One JSON object per line, in posting order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for msg in &self.messages {
            serde_json::to_writer(&mut out, msg)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Total number of broadcasts, `Comm(T)` for one sample path.
pub fn comm_cost(log: &MessageLog) -> u64 {
    log.messages.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(sender: usize, epoch: usize) -> EpochBroadcast {
        EpochBroadcast {
            sender,
            epoch,
            arms: vec![0, 2],
            reward_sums: vec![1.0, 2.0],
            probabilities: vec![0.25, 0.75],
            prev_gaps: vec![1.0, 1.0],
            active: vec![2],
        }
    }

    #[test]
    fn cost_is_agents_times_epochs() {
        let mut log = MessageLog::new(3);
        assert_eq!(comm_cost(&log), 0);
        for m in 1..=5 {
            for l in 0..3 {
                log.post(msg(l, m)).unwrap();
            }
            assert_eq!(comm_cost(&log), 3 * m as u64);
        }
        assert_eq!(log.completed_epochs(), 5);
        assert_eq!(log.epoch_messages(4).unwrap().len(), 3);
    }

    #[test]
    fn single_agent_cost_is_epoch_count() {
        let mut log = MessageLog::new(1);
        for m in 1..=7 {
            log.post(msg(0, m)).unwrap();
        }
        assert_eq!(comm_cost(&log), 7);
    }

    #[test]
    fn partial_epoch_not_completed() {
        let mut log = MessageLog::new(2);
        log.post(msg(0, 1)).unwrap();
        log.post(msg(1, 1)).unwrap();
        log.post(msg(1, 2)).unwrap();
        assert_eq!(log.completed_epochs(), 1);
        assert!(log.epoch_messages(2).is_err());
        assert_eq!(log.post(msg(0, 3)), Err(CommError::OutOfOrder { got: 3, current: 2 }));
    }

    #[test]
    fn duplicate_and_unknown_rejected() {
        let mut log = MessageLog::new(2);
        log.post(msg(0, 1)).unwrap();
        assert_eq!(log.post(msg(0, 1)), Err(CommError::DuplicatePost { sender: 0, epoch: 1 }));
        assert!(matches!(log.post(msg(5, 1)), Err(CommError::UnknownSender { .. })));
        assert_eq!(comm_cost(&log), 1);
    }

    #[test]
    fn posted_messages_are_copies() {
        let mut log = MessageLog::new(1);
        let mut b = msg(0, 1);
        log.post(b.clone()).unwrap();
        b.reward_sums[0] = 99.0;
        assert_eq!(log.messages()[0].reward_sums[0], 1.0);
    }

    #[test]
    fn report_lookup_and_jsonl() {
        let b = msg(0, 1);
        assert_eq!(b.report(2), Some((0.75, 2.0)));
        assert_eq!(b.report(1), None);
        assert_eq!(b.payload_scalars(), 7);

        let mut log = MessageLog::new(1);
        log.post(b.clone()).unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back: EpochBroadcast = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, b);
    }
}
