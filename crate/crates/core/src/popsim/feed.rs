//! Recorded per-type event feeds.
//!
//! A feed isolates, from a forward run, everything the branching-process
//! coupling needs about one type-`j` subpopulation: the individuals
//! descended from type-`j` mutations inside a time window, the events that
//! touch them, and the instantaneous rates just before each event. Feeds
//! are plain data, so coupling runs are replayable and the two simulators
//! stay single-owner.
//!
//! Members are numbered by birth order, starting from 0. For a member
//! subpopulation of size `X'` inside a population of size `N` with mean `M`:
//!
//! * pure birth (member parent, non-member victim), per-member rate
//!   `B' = (1 - X'/N)(1 + s(j - M))`;
//! * pure death (member victim, non-member parent; or a member mutating
//!   out), per-member rate `D' = 1 + mu - (X'/N)(1 + s(j - M))`;
//! * paired birth-death (member parent and member victim), per-member rate
//!   `O = (X'/N)(1 + s(j - M))` for each role;
//! * immigration (a type-(j-1) individual mutates inside the early window),
//!   total rate `mu X_{j-1}`.

use super::{EventHooks, EventRecord, PopulationState};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedEventKind {
    /// A new member appears by mutation from type j-1.
    Immigration,
    /// `parent` gives birth; the child is a new member.
    PureBirth { parent: u32 },
    /// `victim` leaves the subpopulation (death or mutation to type j+1).
    PureDeath { victim: u32 },
    /// `parent` gives birth and `victim` dies in the same replacement event;
    /// the child is a new member. `parent == victim` is possible.
    BirthDeath { parent: u32, victim: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct FeedEvent {
    /// Time since the window start.
    pub t: f64,
    pub kind: FeedEventKind,
    /// Rates just before the event (see module docs).
    pub immigration_rate: f64,
    pub pure_birth_rate: f64,
    pub pure_death_rate: f64,
    pub pair_rate: f64,
}

/// Constant-rate stretch between events, for channels that must be
/// simulated between feed events. Rates are taken at the stretch end; the
/// background quantities (`M`, `X_{j-1}`) drift only by O(1/N) per
/// population event inside a stretch.
#[derive(Debug, Clone, Copy)]
pub struct FeedSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub immigration_rate: f64,
    /// `B* = B' + O = 1 + s(j - M)` on the stretch.
    pub total_birth_rate: f64,
    /// `D* = D' + O = 1 + mu`.
    pub total_death_rate: f64,
}

/// A recorded feed over `[0, horizon]` (times relative to the window start).
#[derive(Debug, Clone)]
pub struct TypeEventFeed {
    pub horizon: f64,
    /// Elapsed time after which immigration shuts off (the early-mutation
    /// window), relative to the window start.
    pub immigration_cutoff: f64,
    pub events: Vec<FeedEvent>,
    pub segments: Vec<FeedSegment>,
    /// Member count at the end of the window.
    pub final_members: u64,
}

/// Hook recording a type-`j` feed from a live run over a fixed window,
/// typically `[tau_j, tau_{j+1}]`.
#[derive(Debug)]
pub struct FeedRecorder {
    type_j: u32,
    window_start: f64,
    window_end: f64,
    immigration_cutoff_abs: f64,
    s: f64,
    mu: f64,
    member_of_slot: HashMap<u32, u32>,
    next_member: u32,
    events: Vec<FeedEvent>,
    segments: Vec<FeedSegment>,
    seg_open_at: f64,
    done: bool,
}

impl FeedRecorder {
    /// `window` is `(start, end)` in absolute run time;
    /// `immigration_cutoff_abs` is the absolute end of the early window.
    pub fn new(
        type_j: u32,
        window: (f64, f64),
        immigration_cutoff_abs: f64,
        s: f64,
        mu: f64,
    ) -> Self {
        assert!(type_j >= 1, "feeds track mutations from type j-1, need j >= 1");
        FeedRecorder {
            type_j,
            window_start: window.0,
            window_end: window.1,
            immigration_cutoff_abs,
            s,
            mu,
            member_of_slot: HashMap::new(),
            next_member: 0,
            events: Vec::new(),
            segments: Vec::new(),
            seg_open_at: window.0,
            done: false,
        }
    }

    pub fn members(&self) -> u64 {
        self.member_of_slot.len() as u64
    }

    /// `(immigration, B', D', O)` at time `t` given the pre-event state.
    fn rates(&self, state: &PopulationState, t: f64) -> (f64, f64, f64, f64) {
        let n = state.n() as f64;
        let m = state.mean();
        let j = self.type_j as f64;
        let xp = self.member_of_slot.len() as f64;
        let fit = 1.0 + self.s * (j - m);
        let imm = if t <= self.immigration_cutoff_abs {
            self.mu * state.count(self.type_j as usize - 1) as f64
        } else {
            0.0
        };
        let pair = xp / n * fit;
        (imm, (1.0 - xp / n) * fit, 1.0 + self.mu - pair, pair)
    }

    fn close_segment(&mut self, imm: f64, total_birth: f64, t_abs: f64) {
        if t_abs > self.seg_open_at {
            self.segments.push(FeedSegment {
                t_start: self.seg_open_at - self.window_start,
                t_end: t_abs - self.window_start,
                immigration_rate: imm,
                total_birth_rate: total_birth,
                total_death_rate: 1.0 + self.mu,
            });
        }
        self.seg_open_at = t_abs;
    }

    fn finish(&mut self, state: &PopulationState, t_abs: f64) {
        if !self.done {
            let t = t_abs.min(self.window_end);
            let (imm, b_prime, _, pair) = self.rates(state, t);
            self.close_segment(imm, b_prime + pair, t);
            self.done = true;
        }
    }

    /// Finish recording and extract the feed.
    pub fn into_feed(self) -> TypeEventFeed {
        TypeEventFeed {
            horizon: self.window_end - self.window_start,
            immigration_cutoff: self.immigration_cutoff_abs - self.window_start,
            final_members: self.member_of_slot.len() as u64,
            events: self.events,
            segments: self.segments,
        }
    }
}

impl EventHooks for FeedRecorder {
    fn before_event(&mut self, state: &PopulationState, ev: &EventRecord) {
        let t = ev.time();
        if self.done || t < self.window_start {
            return;
        }
        if t > self.window_end {
            self.finish(state, self.window_end);
            return;
        }
        let (imm, b_prime, d_prime, pair) = self.rates(state, t);
        let kind = match *ev {
            EventRecord::Mutation { slot, from_type, .. } => {
                if let Some(&member) = self.member_of_slot.get(&slot) {
                    self.member_of_slot.remove(&slot);
                    Some(FeedEventKind::PureDeath { victim: member })
                } else if from_type + 1 == self.type_j && t <= self.immigration_cutoff_abs {
                    let id = self.next_member;
                    self.next_member += 1;
                    self.member_of_slot.insert(slot, id);
                    Some(FeedEventKind::Immigration)
                } else {
                    None
                }
            }
            EventRecord::DeathBirth { victim_slot, parent_slot, .. } => {
                let vm = self.member_of_slot.get(&victim_slot).copied();
                let pm = self.member_of_slot.get(&parent_slot).copied();
                match (vm, pm) {
                    (Some(v), Some(p)) => {
                        let id = self.next_member;
                        self.next_member += 1;
                        self.member_of_slot.insert(victim_slot, id);
                        Some(FeedEventKind::BirthDeath { parent: p, victim: v })
                    }
                    (Some(v), None) => {
                        self.member_of_slot.remove(&victim_slot);
                        Some(FeedEventKind::PureDeath { victim: v })
                    }
                    (None, Some(p)) => {
                        let id = self.next_member;
                        self.next_member += 1;
                        self.member_of_slot.insert(victim_slot, id);
                        Some(FeedEventKind::PureBirth { parent: p })
                    }
                    (None, None) => None,
                }
            }
        };
        if let Some(kind) = kind {
            self.close_segment(imm, b_prime + pair, t);
            self.events.push(FeedEvent {
                t: t - self.window_start,
                kind,
                immigration_rate: imm,
                pure_birth_rate: b_prime,
                pure_death_rate: d_prime,
                pair_rate: pair,
            });
        }
    }

    fn at_horizon(&mut self, state: &PopulationState, t_end: f64) {
        self.finish(state, t_end);
    }
}
