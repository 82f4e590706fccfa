//! Seeded synthetic wells: a simple drilling regime simulator with injected
//! pre-accident signatures and exact reference intervals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::extended_channels;
use crate::telemetry::{
    AccidentEvent, AccidentType, Dataset, Mnemonic, ReferenceInterval, TelemetryLog,
    ValidityLimits, N_CHANNELS, STEP_SECONDS,
};

const STEP: f64 = STEP_SECONDS as f64;
/// Clean drilling required before an onset, so a full hour of normal data
/// precedes every accident.
const WARMUP_SECONDS: f64 = 3600.0;
const RECOVERY_SECONDS: f64 = 1800.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Pattern {
    /// Offset growing over the window.
    Ramp,
    /// Constant offset.
    LevelShift,
    /// Two-sample pulses every `period` samples.
    SpikeTrain { period: usize },
    /// Relative change: -0.3 removes up to 30% of the value.
    Scale,
    /// Drilling progress slowed by the amplitude fraction, so the block
    /// position freezes.
    Stall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub channel: Mnemonic,
    pub pattern: Pattern,
    /// Drawn uniformly per accident.
    pub amplitude: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureSpec {
    pub kind: AccidentType,
    pub effects: Vec<Effect>,
    /// Seconds between signature onset and the accident.
    pub lead: [f64; 2],
    /// Fraction of the lead window after which the signature is at full
    /// strength.
    pub rise: f64,
}

impl SignatureSpec {
    pub fn default_for(kind: AccidentType) -> Self {
        use Mnemonic::*;
        let e = |channel, pattern, lo, hi| Effect {
            channel,
            pattern,
            amplitude: [lo, hi],
        };
        let effects = match kind {
            AccidentType::Stuck => vec![
                e(Hkla, Pattern::Ramp, 25.0, 35.0),
                e(Bpos, Pattern::Stall, 0.9, 0.97),
                e(Tqa, Pattern::SpikeTrain { period: 6 }, 10.0, 14.0),
            ],
            AccidentType::KickFlow => vec![
                e(Gasa, Pattern::Ramp, 10.0, 14.0),
                e(Tvt, Pattern::Ramp, 5.0, 7.0),
                e(Mfoa, Pattern::LevelShift, 7.0, 9.0),
            ],
            AccidentType::Mudloss => vec![
                e(Tvt, Pattern::Ramp, -9.0, -7.0),
                e(Sppa, Pattern::Scale, -0.35, -0.25),
            ],
            AccidentType::Washout => vec![
                e(Sppa, Pattern::Scale, -0.4, -0.3),
                e(Tqa, Pattern::Scale, -0.5, -0.4),
                e(Mfoa, Pattern::LevelShift, -9.0, -7.0),
            ],
        };
        SignatureSpec {
            kind,
            effects,
            lead: [1800.0, 3600.0],
            rise: 0.15,
        }
    }

    /// Channels carrying the signature, in canonical order.
    pub fn channels(&self) -> Vec<Mnemonic> {
        let mut out: Vec<Mnemonic> = self.effects.iter().map(|e| e.channel).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.effects.is_empty() {
            return Err(Error::Config(format!("{} signature has no effects", self.kind)));
        }
        let allowed = extended_channels(self.kind);
        for e in &self.effects {
            if !allowed.contains(&e.channel) {
                return Err(Error::Config(format!(
                    "{} is not a {} channel",
                    e.channel, self.kind
                )));
            }
            if !(e.amplitude[0] <= e.amplitude[1]) || e.amplitude.iter().any(|a| !a.is_finite()) {
                return Err(Error::Config(format!(
                    "bad amplitude range on {} for {}",
                    e.channel, self.kind
                )));
            }
            if let Pattern::SpikeTrain { period } = e.pattern {
                if period < 2 {
                    return Err(Error::Config("spike period must be at least 2".into()));
                }
            }
        }
        if !(self.lead[0] >= 60.0 && self.lead[0] <= self.lead[1]) {
            return Err(Error::Config(format!(
                "{} lead range must be ordered and at least one minute",
                self.kind
            )));
        }
        if !(self.rise > 0.0 && self.rise <= 1.0) {
            return Err(Error::Config("signature rise must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub kind: AccidentType,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub wells: usize,
    pub hours: f64,
    pub start_time: i64,
    pub schedule: Vec<ScheduleEntry>,
    /// Gaussian measurement noise per channel, canonical order.
    pub noise: Vec<f64>,
    pub signatures: Vec<SignatureSpec>,
    /// Seconds of rig shutdown after each accident.
    pub shutdown: [f64; 2],
}

impl Default for GenConfig {
    fn default() -> Self {
        let schedule = [
            (AccidentType::Stuck, 20),
            (AccidentType::Mudloss, 9),
            (AccidentType::KickFlow, 4),
            (AccidentType::Washout, 7),
        ]
        .into_iter()
        .map(|(kind, count)| ScheduleEntry { kind, count })
        .collect();
        GenConfig {
            seed: 0,
            wells: 20,
            hours: 12.0,
            start_time: 1_700_000_000,
            schedule,
            noise: vec![1.0, 0.4, 0.03, 0.0, 0.0, 0.5, 1.5, 2.0, 0.3, 0.5, 0.08, 0.05],
            signatures: AccidentType::ALL.iter().map(|&k| SignatureSpec::default_for(k)).collect(),
            shutdown: [1800.0, 3600.0],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.wells == 0 {
            return Err(Error::Config("at least one well is required".into()));
        }
        if !(self.hours >= 2.0) || !self.hours.is_finite() {
            return Err(Error::Config(format!("hours must be at least 2, got {}", self.hours)));
        }
        if self.start_time % STEP_SECONDS != 0 {
            return Err(Error::Config("start time must lie on the 10-s grid".into()));
        }
        if self.noise.len() != N_CHANNELS || self.noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "noise needs {N_CHANNELS} non-negative levels"
            )));
        }
        if !(self.shutdown[0] >= 0.0 && self.shutdown[0] <= self.shutdown[1]) {
            return Err(Error::Config("shutdown range must be ordered and non-negative".into()));
        }
        for s in &self.signatures {
            s.validate()?;
        }
        for entry in &self.schedule {
            if entry.count > 0 && self.signature(entry.kind).is_none() {
                return Err(Error::Config(format!("no signature for {}", entry.kind)));
            }
        }
        Ok(())
    }

    pub fn signature(&self, kind: AccidentType) -> Option<&SignatureSpec> {
        self.signatures.iter().find(|s| s.kind == kind)
    }

    pub fn n_steps(&self) -> usize {
        (self.hours * 3600.0 / STEP).round() as usize
    }

    pub fn well_id(index: usize) -> String {
        format!("well_{index:02}")
    }
}

/// One scheduled accident in step indices of its well.
#[derive(Clone, Debug)]
struct Injection {
    kind: AccidentType,
    onset: usize,
    event: usize,
    resume: usize,
    amplitudes: Vec<f64>,
}

impl Injection {
    /// Signature strength and elapsed fraction at step `i`, if inside the
    /// lead window.
    fn envelope(&self, i: usize, rise: f64) -> Option<(f64, f64)> {
        if i < self.onset || i >= self.event {
            return None;
        }
        let f = (i - self.onset) as f64 / (self.event - self.onset) as f64;
        Some(((f / rise).min(1.0), f))
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n_steps();
    let mut sched = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut kinds: Vec<AccidentType> = cfg
        .schedule
        .iter()
        .flat_map(|e| std::iter::repeat(e.kind).take(e.count))
        .collect();
    kinds.shuffle(&mut sched);
    let mut per_well: Vec<Vec<AccidentType>> = vec![Vec::new(); cfg.wells];
    for (j, k) in kinds.into_iter().enumerate() {
        per_well[j % cfg.wells].push(k);
    }

    let limits = ValidityLimits::default();
    let mut data = Dataset {
        logs: Vec::with_capacity(cfg.wells),
        events: Vec::new(),
        references: Vec::new(),
    };
    for (w, accidents) in per_well.iter().enumerate() {
        let well_id = GenConfig::well_id(w);
        let start = cfg.start_time + w as i64 * 86_400;
        let injections = schedule_well(cfg, accidents, n, &mut sched)?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(w as u64 + 1);
        let channels = simulate(cfg, n, &injections, &limits, &mut rng);

        for inj in &injections {
            let sig = cfg.signature(inj.kind).expect("validated");
            let (t0, t1) = (
                start + inj.onset as i64 * STEP_SECONDS,
                start + inj.event as i64 * STEP_SECONDS,
            );
            data.events.push(AccidentEvent {
                well_id: well_id.clone(),
                kind: inj.kind,
                event_time: t1,
                region_start: t0,
                region_end: t1,
            });
            for channel in sig.channels() {
                data.references.push(ReferenceInterval {
                    well_id: well_id.clone(),
                    event_time: t1,
                    channel,
                    start: t0,
                    end: t1,
                });
            }
        }
        data.logs
            .push(TelemetryLog::from_channels(well_id, start, STEP_SECONDS, channels)?);
    }
    Ok(data)
}

/// Places a well's accidents one per equal slot of the log.
fn schedule_well(
    cfg: &GenConfig,
    accidents: &[AccidentType],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Injection>> {
    if accidents.is_empty() {
        return Ok(Vec::new());
    }
    let slot = n as f64 * STEP / accidents.len() as f64;
    let mut out = Vec::with_capacity(accidents.len());
    for (s, &kind) in accidents.iter().enumerate() {
        let sig = cfg.signature(kind).expect("validated");
        let lead = rng.gen_range(sig.lead[0]..=sig.lead[1]);
        let shutdown = rng.gen_range(cfg.shutdown[0]..=cfg.shutdown[1]);
        let lo = s as f64 * slot + WARMUP_SECONDS;
        let hi = (s + 1) as f64 * slot - lead - shutdown - RECOVERY_SECONDS;
        if hi < lo {
            return Err(Error::Config(format!(
                "schedule infeasible: {} accidents do not fit in a {}-hour well",
                accidents.len(),
                cfg.hours
            )));
        }
        let onset = (rng.gen_range(lo..=hi) / STEP).floor() as usize;
        let event = onset + ((lead / STEP).round() as usize).max(1);
        let resume = event + (shutdown / STEP).round() as usize;
        let amplitudes = sig
            .effects
            .iter()
            .map(|e| rng.gen_range(e.amplitude[0]..=e.amplitude[1]))
            .collect();
        out.push(Injection {
            kind,
            onset,
            event,
            resume,
            amplitudes,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
enum Regime {
    Drilling,
    Circulating(usize),
    PullOff(usize),
    Slips(usize),
    RunIn(usize),
}

const LIFT_STEPS: usize = 12;
const SLIPS_STEPS: usize = 24;
const LIFT_PER_STEP: f64 = 0.5;
const STAND: f64 = 24.0;
const BLOCK_TOP: f64 = 32.0;
const BLOCK_WEIGHT: f64 = 12.0;

struct Stand {
    rop: f64,
    wob: f64,
    rpm: f64,
    flow: f64,
}

impl Stand {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Stand {
            rop: rng.gen_range(20.0..40.0) / 3600.0,
            wob: rng.gen_range(10.0..18.0),
            rpm: rng.gen_range(100.0..140.0),
            flow: rng.gen_range(35.0..42.0),
        }
    }
}

fn simulate(
    cfg: &GenConfig,
    n: usize,
    injections: &[Injection],
    limits: &ValidityLimits,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    use Mnemonic::*;
    let mut ch = vec![vec![0.0; n]; N_CHANNELS];

    let mut hole: f64 = rng.gen_range(1000.0..2500.0);
    let mut bit = hole;
    let mut bpos = rng.gen_range(4.0..BLOCK_TOP - LIFT_STEPS as f64 * LIFT_PER_STEP);
    let mut left = bpos - 2.0;
    let mut regime = Regime::Drilling;
    let mut stand = Stand::draw(rng);
    let (mut flow, mut rpm) = (stand.flow, stand.rpm);
    let mut tvt_level: f64 = rng.gen_range(195.0..205.0);
    let mut tvt_return = 0.0_f64;
    let mut gas_bump = 0.0_f64;

    // Progress multiplier from stall-type signatures.
    let stall = |i: usize| -> f64 {
        let mut scale = 1.0;
        for inj in injections {
            let sig = cfg.signature(inj.kind).expect("validated");
            if let Some((e, _)) = inj.envelope(i, sig.rise) {
                for (eff, a) in sig.effects.iter().zip(&inj.amplitudes) {
                    if eff.pattern == Pattern::Stall {
                        scale *= 1.0 - a * e;
                    }
                }
            }
        }
        scale
    };

    for i in 0..n {
        let shut = injections.iter().any(|inj| i >= inj.event && i < inj.resume);
        let (mut wob, mut target_rpm, mut target_flow, mut hook_extra) = (0.0, 0.0, 0.0, 0.0);
        let mut in_slips = false;
        let mut on_bottom = false;
        if !shut {
            match regime {
                Regime::Drilling => {
                    let adv = stand.rop * STEP * stall(i);
                    bit += adv;
                    hole = hole.max(bit);
                    bpos -= adv;
                    left -= adv;
                    wob = stand.wob;
                    target_rpm = stand.rpm;
                    target_flow = stand.flow;
                    on_bottom = true;
                    if left <= 0.0 {
                        regime = if rng.gen_bool(0.25) {
                            Regime::Circulating(rng.gen_range(60..180))
                        } else {
                            Regime::PullOff(0)
                        };
                    }
                }
                Regime::Circulating(k) => {
                    target_rpm = stand.rpm * 0.6;
                    target_flow = stand.flow;
                    regime = if k == 0 { Regime::PullOff(0) } else { Regime::Circulating(k - 1) };
                }
                Regime::PullOff(k) => {
                    bit -= LIFT_PER_STEP;
                    bpos += LIFT_PER_STEP;
                    hook_extra = 3.0;
                    target_flow = stand.flow;
                    regime = if k + 1 == LIFT_STEPS { Regime::Slips(0) } else { Regime::PullOff(k + 1) };
                }
                Regime::Slips(k) => {
                    in_slips = true;
                    bpos += (BLOCK_TOP - bpos) / (SLIPS_STEPS - k) as f64;
                    if k + 1 == SLIPS_STEPS {
                        stand = Stand::draw(rng);
                        regime = Regime::RunIn(0);
                    } else {
                        regime = Regime::Slips(k + 1);
                    }
                }
                Regime::RunIn(k) => {
                    bit += LIFT_PER_STEP;
                    bpos -= LIFT_PER_STEP;
                    hook_extra = -3.0;
                    target_flow = stand.flow;
                    target_rpm = stand.rpm * 0.6;
                    if k == 0 {
                        // Connection gas arrives when circulation resumes.
                        gas_bump = 1.5;
                    }
                    if k + 1 == LIFT_STEPS {
                        bit = hole;
                        left = STAND;
                        regime = Regime::Drilling;
                    } else {
                        regime = Regime::RunIn(k + 1);
                    }
                }
            }
        }
        flow += 0.3 * (target_flow - flow);
        rpm += 0.3 * (target_rpm - rpm);
        if flow < 0.05 {
            flow = 0.0;
        }
        if rpm < 0.05 {
            rpm = 0.0;
        }
        tvt_level += 0.02 * rng.gen::<f64>() - 0.01 + 0.001 * (200.0 - tvt_level);
        if flow < 0.5 * stand.flow {
            tvt_return = (tvt_return + 0.04).min(3.0);
        } else {
            tvt_return = (tvt_return - 0.04).max(0.0);
        }
        gas_bump *= 0.97;

        let weight = 60.0 + 0.02 * bit;
        let hook = if in_slips { BLOCK_WEIGHT } else { weight - wob + hook_extra };
        let torque = if rpm > 0.0 {
            if on_bottom {
                5.0 + 0.8 * wob * rpm / 100.0
            } else {
                3.0 + 0.01 * rpm
            }
        } else {
            0.0
        };
        ch[Hkla.index()][i] = hook;
        ch[Wob.index()][i] = wob;
        ch[Bpos.index()][i] = bpos;
        ch[Dbtm.index()][i] = bit;
        ch[Dmea.index()][i] = hole;
        ch[Tqa.index()][i] = torque;
        ch[Rpma.index()][i] = rpm;
        ch[Sppa.index()][i] = 0.09 * flow * flow;
        ch[Mfia.index()][i] = flow;
        ch[Mfoa.index()][i] = 0.97 * flow;
        ch[Tvt.index()][i] = tvt_level + tvt_return;
        ch[Gasa.index()][i] = 0.3 + gas_bump;
    }

    for (c, values) in ch.iter_mut().enumerate() {
        let sigma = cfg.noise[c];
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("validated noise");
            for v in values.iter_mut() {
                *v += normal.sample(rng);
            }
        }
    }

    for inj in injections {
        let sig = cfg.signature(inj.kind).expect("validated");
        for (eff, &a) in sig.effects.iter().zip(&inj.amplitudes) {
            let values = &mut ch[eff.channel.index()];
            for (i, v) in values.iter_mut().enumerate().take(inj.event).skip(inj.onset) {
                let (e, f) = inj.envelope(i, sig.rise).expect("inside window");
                let grow = 0.3 + 0.7 * f;
                match eff.pattern {
                    Pattern::Ramp => *v += a * e * grow,
                    Pattern::LevelShift => *v += a * e,
                    Pattern::SpikeTrain { period } => {
                        if (i - inj.onset) % period < 2 {
                            *v += a * e;
                        }
                    }
                    Pattern::Scale => *v *= 1.0 + a * e * grow,
                    Pattern::Stall => {}
                }
            }
        }
    }

    for m in Mnemonic::ALL {
        let (lo, hi) = limits.get(m);
        for v in ch[m.index()].iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
    ch
}
