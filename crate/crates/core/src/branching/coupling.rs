//! Three-color sandwich coupling.
//!
//! A recorded type-`j` event feed (the "original population" `X'`) is
//! enveloped between two branching processes with immigration, built on a
//! shared probability space by coloring individuals red, yellow, and blue:
//!
//! * red individuals form the lower process `X^-` with rates
//!   `phi^-(t) = (1-delta) s e^{s(q-C4)t}` (until the early-window cutoff),
//!   birth `lambda^- = 1 + s(q-C4)`, death `nu^- = 1 + mu`;
//! * red and yellow together reproduce the original population exactly;
//! * everything together forms the upper process `X^+` with rates
//!   `phi^+(t) = (1+delta) s e^{s(q+C4)t}`, birth `lambda^+ = 1 + s(q+C4)`,
//!   death `nu^+ = 1 - s`.
//!
//! The construction is valid only while the feed's instantaneous rates stay
//! inside the bands (every coloring ratio must be a probability); a feed
//! that leaves the bands flags the run as coupling-invalid. While valid,
//! `X^-(t) <= X'(t) <= X^+(t)` holds pathwise up to the break time `kappa`
//! (the upper process reaching the cap `s/(2 mu)`, or the feed window
//! ending). At `kappa` yellow turns blue and both envelope processes evolve
//! autonomously.

use super::ImmigrationProfile;
use crate::error::{Error, Result};
use crate::popsim::{FeedEvent, FeedEventKind, TypeEventFeed, FeedSegment};
use crate::rng::StreamRng;
use rand::Rng;

/// Band parameters for the envelope processes. `c4` is a band half-width
/// the construction takes as configuration, not a derived constant.
#[derive(Debug, Clone, Copy)]
pub struct CouplingBands {
    pub delta: f64,
    pub c4: f64,
    pub q: f64,
    pub s: f64,
    pub mu: f64,
    /// Break cap for the upper process (`s/(2 mu)` in the model).
    pub cap: u64,
}

impl CouplingBands {
    pub fn lambda_plus(&self) -> f64 {
        1.0 + self.s * (self.q + self.c4)
    }
    pub fn lambda_minus(&self) -> f64 {
        1.0 + self.s * (self.q - self.c4)
    }
    pub fn nu_plus(&self) -> f64 {
        1.0 - self.s
    }
    pub fn nu_minus(&self) -> f64 {
        1.0 + self.mu
    }
    pub fn phi_plus(&self, t: f64, cutoff: f64) -> f64 {
        if t <= cutoff {
            (1.0 + self.delta) * self.s * (self.s * (self.q + self.c4) * t).exp()
        } else {
            0.0
        }
    }
    pub fn phi_minus(&self, t: f64, cutoff: f64) -> f64 {
        if t <= cutoff {
            (1.0 - self.delta) * self.s * (self.s * (self.q - self.c4) * t).exp()
        } else {
            0.0
        }
    }

    /// Lower-envelope process as a plain branching configuration.
    pub fn lower_bd_params(&self, cutoff: f64) -> super::BdParams {
        super::BdParams {
            birth: self.lambda_minus(),
            death: self.nu_minus(),
            immigration: Some(ImmigrationProfile {
                amp: (1.0 - self.delta) * self.s,
                growth: self.s * (self.q - self.c4),
                cutoff,
            }),
        }
    }

    /// Upper-envelope process as a plain branching configuration.
    pub fn upper_bd_params(&self, cutoff: f64) -> super::BdParams {
        super::BdParams {
            birth: self.lambda_plus(),
            death: self.nu_plus(),
            immigration: Some(ImmigrationProfile {
                amp: (1.0 + self.delta) * self.s,
                growth: self.s * (self.q + self.c4),
                cutoff,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaCause {
    /// The upper process hit the cap.
    CapHit,
    /// The feed window ended (tau_{j+1} or the recording horizon).
    FeedEnd,
}

/// One recorded state change.
#[derive(Debug, Clone, Copy)]
pub struct CouplingPoint {
    pub t: f64,
    pub x_minus: u64,
    pub x_prime: u64,
    pub x_plus: u64,
}

/// A completed coupling run.
#[derive(Debug, Clone)]
pub struct CouplingRun {
    /// State after every change up to `kappa` (sandwich territory).
    pub series: Vec<CouplingPoint>,
    pub kappa: f64,
    pub kappa_cause: KappaCause,
    /// Pathwise `X^- <= X' <= X^+` violations before `kappa`.
    pub sandwich_violations: u64,
    /// Envelope sizes at the requested final horizon.
    pub final_minus: u64,
    pub final_plus: u64,
}

impl CouplingRun {
    /// Lower-envelope size at a time before `kappa`.
    pub fn minus_at(&self, t: f64) -> u64 {
        match self.series.partition_point(|p| p.t <= t) {
            0 => 0,
            k => self.series[k - 1].x_minus,
        }
    }

    /// Upper-envelope size at a time before `kappa`.
    pub fn plus_at(&self, t: f64) -> u64 {
        match self.series.partition_point(|p| p.t <= t) {
            0 => 0,
            k => self.series[k - 1].x_plus,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum MemberColor {
    Red,
    Yellow,
    Gone,
}

struct Colony {
    color: Vec<MemberColor>, // by member id
    reds: Vec<u32>,
    red_pos: Vec<u32>,
    yellows: u64,
    blues: u64,
}

impl Colony {
    fn new() -> Self {
        Colony { color: Vec::new(), reds: Vec::new(), red_pos: Vec::new(), yellows: 0, blues: 0 }
    }

    fn add_member(&mut self, red: bool) {
        let id = self.color.len() as u32;
        if red {
            self.color.push(MemberColor::Red);
            self.red_pos.push(self.reds.len() as u32);
            self.reds.push(id);
        } else {
            self.color.push(MemberColor::Yellow);
            self.red_pos.push(u32::MAX);
            self.yellows += 1;
        }
    }

    fn remove_member(&mut self, id: u32) -> Result<MemberColor> {
        let c = self.color[id as usize];
        match c {
            MemberColor::Red => {
                let pos = self.red_pos[id as usize] as usize;
                self.reds.swap_remove(pos);
                if pos < self.reds.len() {
                    self.red_pos[self.reds[pos] as usize] = pos as u32;
                }
            }
            MemberColor::Yellow => self.yellows -= 1,
            MemberColor::Gone => {
                return Err(Error::Internal("feed member removed twice".into()));
            }
        }
        self.color[id as usize] = MemberColor::Gone;
        Ok(c)
    }

    fn demote_uniform_red(&mut self, rng: &mut StreamRng) {
        if self.reds.is_empty() {
            return;
        }
        let pos = rng.random_range(0..self.reds.len());
        let id = self.reds.swap_remove(pos);
        if pos < self.reds.len() {
            self.red_pos[self.reds[pos] as usize] = pos as u32;
        }
        self.color[id as usize] = MemberColor::Yellow;
        self.red_pos[id as usize] = u32::MAX;
        self.yellows += 1;
    }

    fn n_red(&self) -> u64 {
        self.reds.len() as u64
    }
    fn n_prime(&self) -> u64 {
        self.n_red() + self.yellows
    }
    fn total(&self) -> u64 {
        self.n_prime() + self.blues
    }
}

const RATIO_TOL: f64 = 1e-9;

fn check_prob(p: f64, what: &str, t: f64) -> Result<f64> {
    if !(-RATIO_TOL..=1.0 + RATIO_TOL).contains(&p) {
        return Err(Error::CouplingInvalid(format!(
            "{what} ratio {p} outside [0,1] at t={t}; feed rates left the bands"
        )));
    }
    Ok(p.clamp(0.0, 1.0))
}

fn check_segment(seg: &FeedSegment, bands: &CouplingBands, cutoff: f64) -> Result<()> {
    if seg.total_birth_rate > bands.lambda_plus() + RATIO_TOL {
        return Err(Error::CouplingInvalid(format!(
            "total birth rate {} above lambda+ {} on [{}, {}]",
            seg.total_birth_rate,
            bands.lambda_plus(),
            seg.t_start,
            seg.t_end
        )));
    }
    if seg.total_death_rate > bands.nu_minus() + RATIO_TOL {
        return Err(Error::CouplingInvalid(format!(
            "total death rate {} above nu- {} on [{}, {}]",
            seg.total_death_rate,
            bands.nu_minus(),
            seg.t_start,
            seg.t_end
        )));
    }
    if seg.t_start <= cutoff
        && seg.immigration_rate > bands.phi_plus(seg.t_end.min(cutoff), cutoff) + RATIO_TOL
    {
        return Err(Error::CouplingInvalid(format!(
            "immigration rate {} above phi+ on [{}, {}]",
            seg.immigration_rate, seg.t_start, seg.t_end
        )));
    }
    Ok(())
}

/// Execute the coloring rules against a recorded feed, then let the
/// envelope processes run autonomously until `horizon_final` (measured from
/// the window start; pass `feed.horizon` for no autonomous phase).
pub fn run_coupling(
    feed: &TypeEventFeed,
    bands: &CouplingBands,
    horizon_final: f64,
    rng: &mut StreamRng,
) -> Result<CouplingRun> {
    let cutoff = feed.immigration_cutoff;
    let lam_p = bands.lambda_plus();
    let lam_m = bands.lambda_minus();
    let nu_p = bands.nu_plus();
    let nu_m = bands.nu_minus();
    if lam_m <= 0.0 || nu_p <= 0.0 {
        return Err(Error::Config("band rates must stay positive".into()));
    }

    let mut colony = Colony::new();
    let mut series: Vec<CouplingPoint> = Vec::new();
    let mut violations = 0u64;
    let mut kappa: Option<(f64, KappaCause)> = None;
    let mut expected_members: u64 = 0;

    fn record(
        colony: &Colony,
        t: f64,
        violations: &mut u64,
        series: &mut Vec<CouplingPoint>,
    ) {
        let p = CouplingPoint {
            t,
            x_minus: colony.n_red(),
            x_prime: colony.n_prime(),
            x_plus: colony.total(),
        };
        if !(p.x_minus <= p.x_prime && p.x_prime <= p.x_plus) {
            *violations += 1;
        }
        series.push(p);
    }

    let mut ev_idx = 0usize;
    'feed: for seg in &feed.segments {
        check_segment(seg, bands, cutoff)?;
        let extra_birth = (lam_p - seg.total_birth_rate).max(0.0);
        let turn_yellow = (nu_m - seg.total_death_rate).max(0.0);
        let per_red = extra_birth + turn_yellow;
        let mut t = seg.t_start;

        // auxiliary channels on the stretch (everything that is not a feed
        // event): extra blue births, red demotions, blue dynamics, and blue
        // immigration thinned against the increasing envelope
        loop {
            let imm_env = if t <= cutoff {
                (bands.phi_plus(seg.t_end.min(cutoff), cutoff) - seg.immigration_rate).max(0.0)
            } else {
                0.0
            };
            let red_block = colony.n_red() as f64 * per_red;
            let yel_block = colony.yellows as f64 * extra_birth;
            let blue_block = colony.blues as f64 * (lam_p + nu_p);
            let rate = red_block + yel_block + blue_block + imm_env;
            if rate <= 0.0 {
                break;
            }
            let dt = -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln() / rate;
            if t + dt >= seg.t_end {
                break;
            }
            t += dt;
            let u = rng.random::<f64>() * rate;
            if u < red_block {
                if u % per_red < extra_birth {
                    colony.blues += 1;
                } else {
                    colony.demote_uniform_red(rng);
                }
            } else if u < red_block + yel_block {
                colony.blues += 1;
            } else if u < red_block + yel_block + blue_block {
                if (u - red_block - yel_block) % (lam_p + nu_p) < lam_p {
                    colony.blues += 1;
                } else {
                    colony.blues -= 1;
                }
            } else {
                let true_rate = (bands.phi_plus(t, cutoff) - seg.immigration_rate).max(0.0);
                if rng.random::<f64>() * imm_env < true_rate {
                    colony.blues += 1;
                }
            }
            record(&colony, t, &mut violations, &mut series);
            if colony.total() >= bands.cap {
                kappa = Some((t, KappaCause::CapHit));
                break 'feed;
            }
        }

        // feed events at (or, defensively, inside) this segment boundary
        while let Some(ev) = feed.events.get(ev_idx) {
            if ev.t > seg.t_end {
                break;
            }
            ev_idx += 1;
            apply_feed_event(ev, bands, cutoff, &mut colony, rng)?;
            match ev.kind {
                FeedEventKind::Immigration | FeedEventKind::PureBirth { .. } => {
                    expected_members += 1
                }
                FeedEventKind::PureDeath { .. } => expected_members -= 1,
                FeedEventKind::BirthDeath { .. } => {}
            }
            if colony.n_prime() != expected_members {
                return Err(Error::Internal(format!(
                    "coupled original population diverged at t={}: {} members vs {} expected",
                    ev.t,
                    colony.n_prime(),
                    expected_members
                )));
            }
            record(&colony, ev.t, &mut violations, &mut series);
            if colony.total() >= bands.cap {
                kappa = Some((ev.t, KappaCause::CapHit));
                break 'feed;
            }
        }
    }

    let (kappa, kappa_cause) = kappa.unwrap_or((feed.horizon, KappaCause::FeedEnd));
    if kappa_cause == KappaCause::FeedEnd && colony.n_prime() != feed.final_members {
        return Err(Error::Internal(format!(
            "coupled original population diverged: {} vs {} at feed end",
            colony.n_prime(),
            feed.final_members
        )));
    }

    // break the coupling: yellow turns blue, envelopes run on their own
    colony.blues += colony.yellows;
    colony.yellows = 0;
    let (final_minus, final_plus) =
        run_autonomous(&mut colony, bands, cutoff, kappa, horizon_final, rng)?;

    Ok(CouplingRun {
        series,
        kappa,
        kappa_cause,
        sandwich_violations: violations,
        final_minus,
        final_plus,
    })
}

fn apply_feed_event(
    ev: &FeedEvent,
    bands: &CouplingBands,
    cutoff: f64,
    colony: &mut Colony,
    rng: &mut StreamRng,
) -> Result<()> {
    let t = ev.t;
    match ev.kind {
        FeedEventKind::Immigration => {
            check_prob(
                ev.immigration_rate / bands.phi_plus(t, cutoff).max(f64::MIN_POSITIVE),
                "immigration envelope",
                t,
            )?;
            let p_red =
                check_prob(bands.phi_minus(t, cutoff) / ev.immigration_rate, "immigrant color", t)?;
            colony.add_member(rng.random::<f64>() < p_red);
        }
        FeedEventKind::PureBirth { parent } => {
            check_prob(
                (ev.pure_birth_rate + ev.pair_rate) / bands.lambda_plus(),
                "total birth band",
                t,
            )?;
            match colony.color[parent as usize] {
                MemberColor::Red => {
                    let p_red =
                        check_prob(bands.lambda_minus() / ev.pure_birth_rate, "red birth", t)?;
                    colony.add_member(rng.random::<f64>() < p_red);
                }
                MemberColor::Yellow => colony.add_member(false),
                MemberColor::Gone => {
                    return Err(Error::Internal("feed parent no longer alive".into()));
                }
            }
        }
        FeedEventKind::PureDeath { victim } => {
            check_prob(
                (ev.pure_death_rate + ev.pair_rate) / bands.nu_minus(),
                "total death band",
                t,
            )?;
            let p_die = check_prob(bands.nu_plus() / ev.pure_death_rate, "pure death", t)?;
            colony.remove_member(victim)?;
            if rng.random::<f64>() >= p_die {
                // survives the upper-envelope death: lives on as blue
                colony.blues += 1;
            }
        }
        FeedEventKind::BirthDeath { parent, victim } => {
            if colony.color[parent as usize] == MemberColor::Gone {
                return Err(Error::Internal("feed parent no longer alive".into()));
            }
            // the child is yellow; the dying member stays alive upstairs as blue
            colony.add_member(false);
            colony.remove_member(victim)?;
            colony.blues += 1;
        }
    }
    Ok(())
}

/// Autonomous phase after the coupling breaks: red is the lower envelope,
/// red plus blue the upper.
fn run_autonomous(
    colony: &mut Colony,
    bands: &CouplingBands,
    cutoff: f64,
    from: f64,
    until: f64,
    rng: &mut StreamRng,
) -> Result<(u64, u64)> {
    let lam_p = bands.lambda_plus();
    let lam_m = bands.lambda_minus();
    let nu_p = bands.nu_plus();
    let nu_m = bands.nu_minus();
    let mut n_red = colony.n_red();
    let mut n_blue = colony.blues;
    let mut t = from;
    let explosion_cap = super::DEFAULT_POP_CAP;
    while t < until {
        let imm_env = if t <= cutoff { bands.phi_plus(until.min(cutoff), cutoff) } else { 0.0 };
        let per_red = lam_p + nu_m; // birth (red or blue child) + removal (death or turn blue)
        let rate = n_red as f64 * per_red + n_blue as f64 * (lam_p + nu_p) + imm_env;
        if rate <= 0.0 {
            break;
        }
        let dt = -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln() / rate;
        t += dt;
        if t >= until {
            break;
        }
        let u = rng.random::<f64>() * rate;
        let red_block = n_red as f64 * per_red;
        let blue_block = n_blue as f64 * (lam_p + nu_p);
        if u < red_block {
            let which = u % per_red;
            if which < lam_m {
                n_red += 1;
            } else if which < lam_p {
                n_blue += 1; // upper-envelope-only birth
            } else if which < lam_p + nu_p {
                n_red -= 1; // death in both envelopes
            } else {
                n_red -= 1; // lower-envelope-only death: red turns blue
                n_blue += 1;
            }
        } else if u < red_block + blue_block {
            if (u - red_block) % (lam_p + nu_p) < lam_p {
                n_blue += 1;
            } else {
                n_blue -= 1;
            }
        } else {
            // immigration thinned against the envelope: red below phi^-,
            // blue between phi^- and phi^+
            let u2 = rng.random::<f64>() * imm_env;
            let lo = bands.phi_minus(t, cutoff);
            let hi = bands.phi_plus(t, cutoff);
            if u2 < lo {
                n_red += 1;
            } else if u2 < hi {
                n_blue += 1;
            }
        }
        if n_red + n_blue >= explosion_cap {
            return Err(Error::Capability("autonomous envelope exploded".into()));
        }
    }
    colony.blues = n_blue;
    Ok((n_red, n_red + n_blue))
}

/// Configuration for a synthetic "original population" feed whose rates are
/// exactly piecewise constant: immigration `imm_amp e^{imm_growth t}` up to
/// the cutoff, and constant per-member pure-birth / pure-death / pair rates.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticFeedConfig {
    pub horizon: f64,
    pub immigration_cutoff: f64,
    pub imm_amp: f64,
    pub imm_growth: f64,
    pub pure_birth: f64,
    pub pure_death: f64,
    pub pair: f64,
}

/// Simulate an original population directly and record it as a feed.
pub fn synthesize_feed(cfg: &SyntheticFeedConfig, rng: &mut StreamRng) -> TypeEventFeed {
    let imm = ImmigrationProfile {
        amp: cfg.imm_amp,
        growth: cfg.imm_growth,
        cutoff: cfg.immigration_cutoff,
    };
    let mut alive: Vec<u32> = Vec::new(); // member ids
    let mut next_id = 0u32;
    let mut t = 0.0;
    let mut events: Vec<FeedEvent> = Vec::new();
    let mut segments: Vec<FeedSegment> = Vec::new();
    let mut seg_start = 0.0;
    let per_member = cfg.pure_birth + cfg.pure_death + cfg.pair;
    loop {
        let x = alive.len() as f64;
        let next_member_ev = if alive.is_empty() {
            f64::INFINITY
        } else {
            t + -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln() / (x * per_member)
        };
        let next_imm = imm
            .next_arrival(t, -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln())
            .unwrap_or(f64::INFINITY);
        let t_next = next_member_ev.min(next_imm);
        if t_next >= cfg.horizon {
            break;
        }
        t = t_next;
        let imm_rate = imm.rate(t);
        let kind = if next_imm < next_member_ev {
            let id = next_id;
            next_id += 1;
            alive.push(id);
            FeedEventKind::Immigration
        } else {
            let u = rng.random::<f64>() * per_member;
            if u < cfg.pure_birth {
                let parent = alive[rng.random_range(0..alive.len())];
                let id = next_id;
                next_id += 1;
                alive.push(id);
                FeedEventKind::PureBirth { parent }
            } else if u < cfg.pure_birth + cfg.pure_death {
                let k = rng.random_range(0..alive.len());
                let victim = alive.swap_remove(k);
                FeedEventKind::PureDeath { victim }
            } else {
                let parent = alive[rng.random_range(0..alive.len())];
                let k = rng.random_range(0..alive.len());
                let victim = alive.swap_remove(k);
                let id = next_id;
                next_id += 1;
                alive.push(id);
                FeedEventKind::BirthDeath { parent, victim }
            }
        };
        segments.push(FeedSegment {
            t_start: seg_start,
            t_end: t,
            immigration_rate: imm_rate,
            total_birth_rate: cfg.pure_birth + cfg.pair,
            total_death_rate: cfg.pure_death + cfg.pair,
        });
        seg_start = t;
        events.push(FeedEvent {
            t,
            kind,
            immigration_rate: imm_rate,
            pure_birth_rate: cfg.pure_birth,
            pure_death_rate: cfg.pure_death,
            pair_rate: cfg.pair,
        });
    }
    segments.push(FeedSegment {
        t_start: seg_start,
        t_end: cfg.horizon,
        immigration_rate: imm.rate(cfg.horizon),
        total_birth_rate: cfg.pure_birth + cfg.pair,
        total_death_rate: cfg.pure_death + cfg.pair,
    });
    TypeEventFeed {
        horizon: cfg.horizon,
        immigration_cutoff: cfg.immigration_cutoff,
        events,
        segments,
        final_members: alive.len() as u64,
    }
}
