//! The effect collector handed to every state machine step.

use crate::crypto::Digest;
use crate::history::Event;
use crate::messages::Message;
use crate::types::NodeId;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    /// Replica: sign and release the partially filled reply batch.
    FlushBatch,
    /// Client: retransmit or give up on the current read.
    Read { seq: u64 },
    /// Client: stop waiting for a full fast quorum of Stage-1 replies.
    FastWait { txn: Digest, gen: u64 },
    /// Client: Stage 1 stalled long enough to start recovering dependencies.
    DepStall { txn: Digest, gen: u64 },
    /// Client: finish a prepared transaction that aborted one of ours, if
    /// it is still undecided.
    Blocker { txn: Digest },
    /// Client: retransmission / escalation for a coordinator phase.
    Retry { txn: Digest, gen: u64 },
    /// Client: start the next transaction (after backoff).
    NextTxn { seq: u64 },
}

/// Effects of one step: outbound messages, timers, history events.
#[derive(Debug)]
pub struct Ctx {
    pub now: u64,
    /// The node's local clock (global time plus the node's skew).
    pub clock: u64,
    pub sends: Vec<(NodeId, Message)>,
    pub timers: Vec<(u64, Timer)>,
    pub events: Vec<Event>,
}

impl Ctx {
    pub fn new(now: u64, clock: u64) -> Self {
        Ctx { now, clock, sends: Vec::new(), timers: Vec::new(), events: Vec::new() }
    }

    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.sends.push((to, msg));
    }

    pub fn broadcast(&mut self, to: impl IntoIterator<Item = NodeId>, msg: &Message) {
        for t in to {
            self.sends.push((t, msg.clone()));
        }
    }

    pub fn set_timer(&mut self, delay: u64, timer: Timer) {
        self.timers.push((delay, timer));
    }

    pub fn log(&mut self, ev: Event) {
        self.events.push(ev);
    }
}
