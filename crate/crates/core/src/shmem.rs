//! Simulated shared-memory SPSC channel.
//!
//! Head and tail are monotonic counters; occupancy is their difference and
//! never exceeds capacity. A message becomes visible to the consumer one
//! hop-delay after posting, which models store propagation between cores.
//! The live-thread twin of this structure lives in `spsc`.

use std::collections::VecDeque;
use std::fmt;

use crate::ipi::CallbackId;
use crate::time::{CoreId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId(pub u32);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const DEFAULT_MAX_PAYLOAD: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelError {
    BadCapacity(u64),
    WrongEndpoint { channel: ChannelId, core: CoreId, role: &'static str },
    PayloadTooLarge { len: usize, max: usize },
}

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelError::BadCapacity(c) => {
                write!(f, "capacity {c} is not a power of two >= 2")
            }
            ChannelError::WrongEndpoint { channel, core, role } => {
                write!(f, "core {core} is not the {role} of channel {channel}")
            }
            ChannelError::PayloadTooLarge { len, max } => {
                write!(f, "payload of {len} bytes exceeds the {max}-byte limit")
            }
        }
    }
}

impl std::error::Error for ChannelError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub seq: u64,
    pub payload: Vec<u8>,
    pub posted_at: SimTime,
    pub visible_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostOutcome {
    Posted(u64),
    Full,
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub id: ChannelId,
    pub capacity: u64,
    pub producer: CoreId,
    pub consumer: CoreId,
    pub max_payload: usize,
    pub hop_delay_ns: u64,
    pub callback: Option<CallbackId>,
    /// producer == consumer is legal but worth flagging in reports.
    pub loopback: bool,
    head: u64,
    tail: u64,
    slots: VecDeque<Message>,
}

impl Channel {
    pub fn new(
        id: ChannelId,
        capacity: u64,
        producer: CoreId,
        consumer: CoreId,
        hop_delay_ns: u64,
    ) -> Result<Channel, ChannelError> {
        if capacity < 2 || !capacity.is_power_of_two() {
            return Err(ChannelError::BadCapacity(capacity));
        }
        Ok(Channel {
            id,
            capacity,
            producer,
            consumer,
            max_payload: DEFAULT_MAX_PAYLOAD,
            hop_delay_ns,
            callback: None,
            loopback: producer == consumer,
            head: 0,
            tail: 0,
            slots: VecDeque::new(),
        })
    }

    fn occupancy_ok(&self) {
        let occ = self.head - self.tail;
        assert!(occ <= self.capacity, "ring occupancy out of bounds");
        assert_eq!(occ as usize, self.slots.len(), "counters disagree with slots");
    }

    pub fn post(
        &mut self,
        from: CoreId,
        payload: Vec<u8>,
        now: SimTime,
    ) -> Result<PostOutcome, ChannelError> {
        if from != self.producer {
            return Err(ChannelError::WrongEndpoint { channel: self.id, core: from, role: "producer" });
        }
        if payload.len() > self.max_payload {
            return Err(ChannelError::PayloadTooLarge { len: payload.len(), max: self.max_payload });
        }
        self.occupancy_ok();
        if self.head - self.tail == self.capacity {
            return Ok(PostOutcome::Full);
        }
        let seq = self.head;
        self.head += 1;
        self.slots.push_back(Message {
            seq,
            payload,
            posted_at: now,
            visible_at: now.plus(self.hop_delay_ns),
        });
        self.occupancy_ok();
        Ok(PostOutcome::Posted(seq))
    }

    /// Consumer-side poll. Messages still inside the propagation window are
    /// not visible yet.
    pub fn poll(&mut self, from: CoreId, now: SimTime) -> Result<Option<Message>, ChannelError> {
        if from != self.consumer {
            return Err(ChannelError::WrongEndpoint { channel: self.id, core: from, role: "consumer" });
        }
        self.occupancy_ok();
        match self.slots.front() {
            Some(m) if m.visible_at <= now => {
                self.tail += 1;
                let m = self.slots.pop_front();
                self.occupancy_ok();
                Ok(m)
            }
            _ => Ok(None),
        }
    }

    /// Time the head message becomes visible, if any. Lets pollers compute
    /// their next useful check instead of spinning on events.
    pub fn next_visible_at(&self) -> Option<SimTime> {
        self.slots.front().map(|m| m.visible_at)
    }

    pub fn backlog(&self) -> u64 {
        self.head - self.tail
    }
}
