//! Closed-loop scenarios and the three studies built on them: the load-step
//! comparison of the two control schemes, the PUF–VUF sweep over transformer
//! topologies, and compressed playback of a per-phase power profile.

use rayon::prelude::*;

use crate::control::{ControlConfig, Controller, OuterReference, Scheme};
use crate::plant::{build_plant, Connection, LoadSpec, NetworkConfig, PlantModel, PlantState};
use crate::sequence::{self, SequencePhasors, SlidingMean, SlidingPhasorSet, ThreePhase};
use crate::{Error, Result};

pub const DEFAULT_DT: f64 = 1.0 / 12_000.0;

/// Per-phase power base used as `P_rated` in PUF, in pu of `S/3`.
const P_RATED_PU: f64 = 1.0;

/// Every channel the simulator can record, in output order.
pub const CHANNELS: &[&str] = &[
    "v_pcc_a", "v_pcc_b", "v_pcc_c", "i_bess_a", "i_bess_b", "i_bess_c", "i_load_a", "i_load_b",
    "i_load_c", "v_cap_a", "v_cap_b", "v_cap_c", "v_inv_a", "v_inv_b", "v_inv_c", "v_rms_a",
    "v_rms_b", "v_rms_c", "i_rms_a", "i_rms_b", "i_rms_c", "v_pos", "v_neg", "v_zero", "i_pos",
    "i_neg", "i_zero", "vuf", "p_a", "p_b", "p_c", "puf", "freq_hz",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scheme: Scheme,
    pub network: NetworkConfig,
    pub control: ControlConfig,
    /// `(time_s, load)` pairs; the load before the first entry is zero.
    pub schedule: Vec<(f64, LoadSpec)>,
    pub duration_s: f64,
    pub dt: f64,
    /// Channel names to keep; empty keeps all of [`CHANNELS`].
    pub record: Vec<String>,
}

impl ScenarioSpec {
    pub fn new(scheme: Scheme, network: NetworkConfig, control: ControlConfig) -> Self {
        Self {
            scheme,
            network,
            control,
            schedule: Vec::new(),
            duration_s: 2.0,
            dt: DEFAULT_DT,
            record: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        let mut last = f64::NEG_INFINITY;
        for (t, load) in &self.schedule {
            if !(t.is_finite() && *t >= 0.0) {
                return Err(Error::Config(format!(
                    "schedule time {t} is not a valid time"
                )));
            }
            if *t <= last {
                return Err(Error::Config(format!(
                    "schedule times must be strictly increasing ({t} after {last})"
                )));
            }
            if load.p_w.iter().any(|p| !p.is_finite()) {
                return Err(Error::Config(format!("non-finite load at t = {t}")));
            }
            last = *t;
        }
        if last > self.duration_s {
            return Err(Error::Config(format!(
                "duration {} s ends before the last schedule entry at {last} s",
                self.duration_s
            )));
        }
        for name in &self.record {
            if !CHANNELS.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown channel `{name}`")));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s / self.dt).round() as usize
    }
}

/// Uniformly sampled named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub dt: f64,
    pub names: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(dt: f64, names: Vec<String>) -> Self {
        let data = vec![Vec::new(); names.len()];
        Self { dt, names, data }
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn index_at(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.len().saturating_sub(1))
    }
}

/// One-cycle estimators behind the derived channels.
#[derive(Debug, Clone)]
struct Derived {
    v_phasors: SlidingPhasorSet,
    i_phasors: SlidingPhasorSet,
    v_sq: [SlidingMean; 3],
    i_sq: [SlidingMean; 3],
    power: [SlidingMean; 3],
}

impl Derived {
    fn new(n: usize) -> Self {
        let m = SlidingMean::new(n);
        Self {
            v_phasors: SlidingPhasorSet::new(n),
            i_phasors: SlidingPhasorSet::new(n),
            v_sq: [m.clone(), m.clone(), m.clone()],
            i_sq: [m.clone(), m.clone(), m.clone()],
            power: [m.clone(), m.clone(), m],
        }
    }

    fn push(&mut self, v: ThreePhase, i_bess: ThreePhase, i_load: ThreePhase) {
        self.v_phasors.push(v);
        self.i_phasors.push(i_bess);
        let (v, ib, il) = (v.to_array(), i_bess.to_array(), i_load.to_array());
        for k in 0..3 {
            self.v_sq[k].push(v[k] * v[k]);
            self.i_sq[k].push(ib[k] * ib[k]);
            self.power[k].push(v[k] * il[k]);
        }
    }
}

/// Quantities derived over the most recent full cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleMetrics {
    pub v_seq: SequencePhasors,
    pub i_seq: SequencePhasors,
    /// Phase RMS normalized to the nominal RMS (`sqrt(2·mean(v²))`).
    pub v_rms: [f64; 3],
    pub i_rms: [f64; 3],
    /// Per-phase load power in pu of `S/3` (`2·mean(v·i)`).
    pub p: [f64; 3],
    pub vuf: f64,
    pub puf: f64,
}

/// A running closed-loop simulation: controller, plant and estimators in
/// lockstep at `dt`.
#[derive(Debug, Clone)]
pub struct Simulation {
    spec: ScenarioSpec,
    model: PlantModel,
    state: PlantState,
    controller: Controller,
    derived: Derived,
    next_event: usize,
    last_reference: Option<OuterReference>,
}

/// Instantaneous signals of one step, before the plant advances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub v_pcc: ThreePhase,
    pub i_bess: ThreePhase,
    pub i_load: ThreePhase,
    pub v_cap: ThreePhase,
    pub v_inv: ThreePhase,
    pub reference: OuterReference,
}

impl Simulation {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let n = sequence::samples_per_cycle(spec.network.bases.f_hz, spec.dt)?;
        let model = build_plant(&spec.network, &LoadSpec::default(), spec.dt)?;
        let state = PlantState::zeros(&model);
        let mut control = spec.control;
        control.scheme = spec.scheme;
        let controller = Controller::new(&control, &spec.network.bases, spec.dt, n);
        Ok(Self {
            spec,
            model,
            state,
            controller,
            derived: Derived::new(n),
            next_event: 0,
            last_reference: None,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.state.step
    }

    pub fn time(&self) -> f64 {
        self.state.step as f64 * self.spec.dt
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// Replaces the load from the current step on.
    pub fn set_load(&mut self, load: &LoadSpec) -> Result<()> {
        self.model = self.model.apply_load_step(load)?;
        Ok(())
    }

    fn apply_schedule(&mut self) -> Result<()> {
        let k = self.state.step;
        while let Some((t, load)) = self.spec.schedule.get(self.next_event) {
            if (t / self.spec.dt).round() as u64 > k {
                break;
            }
            let load = *load;
            self.next_event += 1;
            self.set_load(&load)?;
        }
        Ok(())
    }

    /// Measures, runs the controllers, updates the estimators and advances
    /// the plant by one step. The returned sample is at the pre-step time.
    pub fn step(&mut self) -> Result<StepSample> {
        self.apply_schedule()?;
        let theta = self.controller.outer.theta();
        let m = self.model.measure(&self.state, self.model.injection(theta));
        let (reference, cmd) = self.controller.step(m.v_pcc, m.i_bess, m.v_cap, m.i_filter);
        let v_inv = cmd.to_abc();
        self.derived.push(m.v_pcc, m.i_bess, m.i_load);
        let mid = reference.theta + 0.5 * reference.omega * self.spec.dt;
        let i_src = self.model.injection(mid);
        self.model.step(&mut self.state, v_inv, i_src)?;
        self.last_reference = Some(reference);
        Ok(StepSample {
            v_pcc: m.v_pcc,
            i_bess: m.i_bess,
            i_load: m.i_load,
            v_cap: m.v_cap,
            v_inv,
            reference,
        })
    }

    /// Derived quantities over the last full cycle, once one is available.
    pub fn cycle_metrics(&self) -> Option<CycleMetrics> {
        let d = &self.derived;
        let v_seq = sequence::fortescue(d.v_phasors.phasors()?);
        let i_seq = sequence::fortescue(d.i_phasors.phasors()?);
        let rms = |m: &[SlidingMean; 3]| -> Option<[f64; 3]> {
            Some([
                (2.0 * m[0].mean()?).max(0.0).sqrt(),
                (2.0 * m[1].mean()?).max(0.0).sqrt(),
                (2.0 * m[2].mean()?).max(0.0).sqrt(),
            ])
        };
        let p = [
            2.0 * d.power[0].mean()?,
            2.0 * d.power[1].mean()?,
            2.0 * d.power[2].mean()?,
        ];
        Some(CycleMetrics {
            v_seq,
            i_seq,
            v_rms: rms(&d.v_sq)?,
            i_rms: rms(&d.i_sq)?,
            p,
            vuf: sequence::vuf(&v_seq).unwrap_or(f64::NAN),
            puf: sequence::puf(p[0], p[1], p[2], P_RATED_PU).ok()?,
        })
    }

    fn row(&self, s: &StepSample) -> [f64; 33] {
        let c = self.cycle_metrics();
        let nan = f64::NAN;
        let f = |g: &dyn Fn(&CycleMetrics) -> f64| c.as_ref().map_or(nan, g);
        [
            s.v_pcc.a,
            s.v_pcc.b,
            s.v_pcc.c,
            s.i_bess.a,
            s.i_bess.b,
            s.i_bess.c,
            s.i_load.a,
            s.i_load.b,
            s.i_load.c,
            s.v_cap.a,
            s.v_cap.b,
            s.v_cap.c,
            s.v_inv.a,
            s.v_inv.b,
            s.v_inv.c,
            f(&|c| c.v_rms[0]),
            f(&|c| c.v_rms[1]),
            f(&|c| c.v_rms[2]),
            f(&|c| c.i_rms[0]),
            f(&|c| c.i_rms[1]),
            f(&|c| c.i_rms[2]),
            f(&|c| c.v_seq.pos.norm()),
            f(&|c| c.v_seq.neg.norm()),
            f(&|c| c.v_seq.zero.norm()),
            f(&|c| c.i_seq.pos.norm()),
            f(&|c| c.i_seq.neg.norm()),
            f(&|c| c.i_seq.zero.norm()),
            f(&|c| c.vuf),
            f(&|c| c.p[0]),
            f(&|c| c.p[1]),
            f(&|c| c.p[2]),
            f(&|c| c.puf),
            s.reference.omega / std::f64::consts::TAU,
        ]
    }
}

/// Runs the scenario to its duration and records the requested channels.
///
/// Derived channels are NaN until the first full cycle has been seen.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<TimeSeries> {
    let keep: Vec<usize> = if spec.record.is_empty() {
        (0..CHANNELS.len()).collect()
    } else {
        spec.record
            .iter()
            .filter_map(|r| CHANNELS.iter().position(|c| c == r))
            .collect()
    };
    let mut sim = Simulation::new(spec.clone())?;
    let names = keep.iter().map(|&i| CHANNELS[i].to_string()).collect();
    let mut ts = TimeSeries::new(spec.dt, names);
    let n = spec.samples();
    for col in &mut ts.data {
        col.reserve(n);
    }
    for _ in 0..n {
        let s = sim.step()?;
        let row = sim.row(&s);
        for (col, &i) in ts.data.iter_mut().zip(&keep) {
            col.push(row[i]);
        }
    }
    Ok(ts)
}

/// Band and window used by [`settling_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettleOptions {
    /// Relative band around the final value.
    pub band_frac: f64,
    /// Absolute floor on the band half-width, for traces settling near zero.
    pub band_abs: f64,
    /// Length of the closing window whose mean is the final value (s).
    pub final_window_s: f64,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self {
            band_frac: 0.02,
            band_abs: 0.0,
            final_window_s: 0.1,
        }
    }
}

/// Time after `t_event` from which `trace` stays inside the band around its
/// final-window mean. `None` means it never settles inside the record.
pub fn settling_time(
    trace: &[f64],
    dt: f64,
    t_event: f64,
    opts: &SettleOptions,
) -> Result<Option<f64>> {
    let start = (t_event / dt).round() as usize;
    let fin = ((opts.final_window_s / dt).round() as usize).max(1);
    if start >= trace.len() || trace.len() - start < fin {
        return Err(Error::Config(format!(
            "trace of {} samples has no post-event window after t = {t_event}",
            trace.len()
        )));
    }
    let post = &trace[start..];
    if post.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "non-finite samples after the event".into(),
        ));
    }
    let tail = &post[post.len() - fin..];
    let target = tail.iter().sum::<f64>() / tail.len() as f64;
    let band = (opts.band_frac * target.abs()).max(opts.band_abs);
    // a trace still wandering through the final window has not settled
    if tail.iter().any(|v| (v - target).abs() > band) {
        return Ok(None);
    }
    let last_out = post.iter().rposition(|v| (v - target).abs() > band);
    Ok(Some(last_out.map_or(0.0, |k| (k + 1) as f64 * dt)))
}

/// Load-step scenario settings shared by both schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub network: NetworkConfig,
    pub control: ControlConfig,
    pub dt: f64,
    /// Per-phase power before the step (pu of `S/3`).
    pub pre_pu: [f64; 3],
    pub post_pu: [f64; 3],
    pub t_step: f64,
    pub duration_s: f64,
    pub settle: SettleOptions,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            control: ControlConfig::default(),
            dt: DEFAULT_DT,
            pre_pu: [0.1, 0.6, 0.3],
            post_pu: [-0.4, 0.2, -0.1],
            t_step: 1.0,
            duration_s: 2.0,
            settle: SettleOptions {
                band_frac: 0.02,
                band_abs: 1e-3,
                final_window_s: 0.1,
            },
        }
    }
}

impl StepConfig {
    pub fn scenario(&self, scheme: Scheme) -> ScenarioSpec {
        let b = &self.network.bases;
        ScenarioSpec {
            scheme,
            network: self.network,
            control: self.control,
            schedule: vec![
                (0.0, LoadSpec::from_pu(self.pre_pu, b)),
                (self.t_step, LoadSpec::from_pu(self.post_pu, b)),
            ],
            duration_s: self.duration_s,
            dt: self.dt,
            record: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Settling time of the NS voltage magnitude after the step; `None` if it
    /// does not settle inside the record.
    pub settling_time_s: Option<f64>,
    /// Largest phase voltage RMS after the step (pu).
    pub peak_rms_pu: f64,
    pub peak_neg_pu: f64,
    pub residual_neg_pu: f64,
    pub residual_zero_pu: f64,
    /// Final-cycle PCC voltage sequence magnitudes `[pos, neg, zero]`.
    pub v_seq: [f64; 3],
    /// Final-cycle BESS current sequence magnitudes `[pos, neg, zero]`.
    pub i_seq: [f64; 3],
    /// Final-cycle per-phase load powers (pu).
    pub p: [f64; 3],
}

fn last(ts: &TimeSeries, name: &str) -> Result<f64> {
    ts.channel(name)
        .and_then(|c| c.last().copied())
        .ok_or_else(|| Error::Config(format!("channel `{name}` not recorded")))
}

pub fn step_metrics(ts: &TimeSeries, t_event: f64, opts: &SettleOptions) -> Result<StepMetrics> {
    let ch = |n: &str| {
        ts.channel(n)
            .ok_or_else(|| Error::Config(format!("channel `{n}` not recorded")))
    };
    let start = ts.index_at(t_event);
    let peak = |c: &[f64]| c[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let neg = ch("v_neg")?;
    let peak_rms = ["v_rms_a", "v_rms_b", "v_rms_c"]
        .iter()
        .map(|n| ch(n).map(peak))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StepMetrics {
        settling_time_s: settling_time(neg, ts.dt, t_event, opts)?,
        peak_rms_pu: peak_rms,
        peak_neg_pu: peak(neg),
        residual_neg_pu: last(ts, "v_neg")?,
        residual_zero_pu: last(ts, "v_zero")?,
        v_seq: [last(ts, "v_pos")?, last(ts, "v_neg")?, last(ts, "v_zero")?],
        i_seq: [last(ts, "i_pos")?, last(ts, "i_neg")?, last(ts, "i_zero")?],
        p: [last(ts, "p_a")?, last(ts, "p_b")?, last(ts, "p_c")?],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepComparison {
    pub srf: TimeSeries,
    pub rrf: TimeSeries,
    pub srf_metrics: StepMetrics,
    pub rrf_metrics: StepMetrics,
}

/// Runs the load step under both schemes on the same plant.
pub fn step_compare(cfg: &StepConfig) -> Result<StepComparison> {
    let (srf, rrf) = rayon::join(
        || run_scenario(&cfg.scenario(Scheme::Srf)),
        || run_scenario(&cfg.scenario(Scheme::Rrf)),
    );
    let (srf, rrf) = (srf?, rrf?);
    Ok(StepComparison {
        srf_metrics: step_metrics(&srf, cfg.t_step, &cfg.settle)?,
        rrf_metrics: step_metrics(&rrf, cfg.t_step, &cfg.settle)?,
        srf,
        rrf,
    })
}

/// The three transformer arrangements compared in the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topology {
    YYg,
    DeltaYg,
    YYgGt,
}

impl Topology {
    /// Canonical output order.
    pub const ALL: [Topology; 3] = [Topology::YYg, Topology::DeltaYg, Topology::YYgGt];

    pub fn name(self) -> &'static str {
        match self {
            Topology::YYg => "y-yg",
            Topology::DeltaYg => "delta-yg",
            Topology::YYgGt => "y-yg+gt",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn apply(self, net: &NetworkConfig) -> NetworkConfig {
        let mut net = *net;
        let (conn, gt) = match self {
            Topology::YYg => (Connection::YYg, false),
            Topology::DeltaYg => (Connection::DeltaYg, false),
            Topology::YYgGt => (Connection::YYg, true),
        };
        net.transformer.connection = conn;
        net.transformer.grounding_transformer = gt;
        net
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub network: NetworkConfig,
    pub control: ControlConfig,
    pub scheme: Scheme,
    pub dt: f64,
    pub puf_points: Vec<f64>,
    /// Average per-phase loading (pu of `S/3`).
    pub p_avg_pu: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Largest cycle-to-cycle VUF change accepted as steady.
    pub vuf_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            control: ControlConfig::default(),
            scheme: Scheme::Srf,
            dt: DEFAULT_DT,
            puf_points: (0..=13).map(|k| k as f64 * 0.05).collect(),
            p_avg_pu: 0.3,
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            vuf_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub puf: f64,
    pub vuf: f64,
    /// False if VUF was still moving at the maximum duration.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub topology: Topology,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub curves: Vec<SweepCurve>,
}

impl SweepResult {
    pub fn curve(&self, t: Topology) -> Option<&SweepCurve> {
        self.curves.iter().find(|c| c.topology == t)
    }
}

/// One phase up by `puf`, the other two down by half of it, around `p_avg`.
pub fn sweep_load(p_avg: f64, puf: f64) -> [f64; 3] {
    [
        p_avg + puf * P_RATED_PU,
        p_avg - 0.5 * puf * P_RATED_PU,
        p_avg - 0.5 * puf * P_RATED_PU,
    ]
}

/// Runs one load to steady state and returns the final-cycle VUF.
pub fn steady_vuf(spec: ScenarioSpec, min_s: f64, max_s: f64, tol: f64) -> Result<SweepPoint> {
    let n_cycle = sequence::samples_per_cycle(spec.network.bases.f_hz, spec.dt)?;
    let min_steps = (min_s / spec.dt).round() as u64;
    let max_steps = (max_s / spec.dt).round() as u64;
    let mut sim = Simulation::new(spec)?;
    let mut prev = f64::NAN;
    loop {
        for _ in 0..n_cycle {
            sim.step()?;
        }
        let c = sim
            .cycle_metrics()
            .ok_or_else(|| Error::Degenerate("no full cycle recorded".into()))?;
        let k = sim.step_index();
        let steady = (c.vuf - prev).abs() < tol;
        if k >= min_steps && (steady || k >= max_steps) {
            return Ok(SweepPoint {
                puf: c.puf,
                vuf: c.vuf,
                converged: steady,
            });
        }
        prev = c.vuf;
    }
}

/// VUF against PUF for each topology. Points run in parallel and are merged
/// by index, so the result does not depend on scheduling.
pub fn puf_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    for &p in &cfg.puf_points {
        if !(0.0..=0.7).contains(&p) {
            return Err(Error::Config(format!("sweep point {p} outside [0, 0.7]")));
        }
    }
    let jobs: Vec<(Topology, f64)> = Topology::ALL
        .iter()
        .flat_map(|&t| cfg.puf_points.iter().map(move |&p| (t, p)))
        .collect();
    let results: Vec<Result<SweepPoint>> = jobs
        .par_iter()
        .map(|&(t, puf)| {
            let network = t.apply(&cfg.network);
            let load = LoadSpec::from_pu(sweep_load(cfg.p_avg_pu, puf), &network.bases);
            let mut spec = ScenarioSpec::new(cfg.scheme, network, cfg.control);
            spec.dt = cfg.dt;
            spec.duration_s = cfg.max_duration_s;
            spec.schedule = vec![(0.0, load)];
            let pt = steady_vuf(
                spec,
                cfg.min_duration_s,
                cfg.max_duration_s,
                cfg.vuf_tolerance,
            )?;
            // the curve is indexed by the requested PUF; the measured one
            // differs by the voltage deviation at the loads
            Ok(SweepPoint { puf, ..pt })
        })
        .collect();
    let mut curves: Vec<SweepCurve> = Topology::ALL
        .iter()
        .map(|&t| SweepCurve {
            topology: t,
            points: Vec::new(),
        })
        .collect();
    for ((t, _), r) in jobs.iter().zip(results) {
        let i = Topology::ALL.iter().position(|x| x == t).unwrap_or(0);
        curves[i].points.push(r?);
    }
    Ok(SweepResult { curves })
}

/// One scheduling interval of a load/PV profile (W per phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileInterval {
    pub interval: u32,
    pub load_w: [f64; 3],
    pub pv_w: [f64; 3],
}

impl ProfileInterval {
    pub fn net_w(&self) -> [f64; 3] {
        [
            self.load_w[0] - self.pv_w[0],
            self.load_w[1] - self.pv_w[1],
            self.load_w[2] - self.pv_w[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub network: NetworkConfig,
    pub control: ControlConfig,
    pub scheme: Scheme,
    pub dt: f64,
    /// Simulated time per scheduling interval (s).
    pub dwell_s: f64,
    /// Largest per-phase net power magnitude accepted (pu of `S/3`).
    pub max_phase_pu: f64,
    pub record: Vec<String>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            control: ControlConfig::default(),
            scheme: Scheme::Srf,
            dt: DEFAULT_DT,
            dwell_s: 1.0,
            max_phase_pu: 1.0,
            record: [
                "v_rms_a", "v_rms_b", "v_rms_c", "v_neg", "v_zero", "vuf", "puf",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalResult {
    pub interval: u32,
    /// Net per-phase power commanded for the interval (pu).
    pub net_pu: [f64; 3],
    /// PUF and VUF over the last cycle of the dwell.
    pub puf: f64,
    pub vuf: f64,
    /// Interval exceeded the rating and was not applied.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileResult {
    pub series: TimeSeries,
    pub intervals: Vec<IntervalResult>,
}

/// Plays the profile with each interval compressed to `dwell_s`. Intervals
/// over the rating are flagged and the previous load is held through them.
pub fn profile_playback(cfg: &ProfileConfig, profile: &[ProfileInterval]) -> Result<ProfileResult> {
    if profile.is_empty() {
        return Err(Error::Config("profile has no intervals".into()));
    }
    for w in profile.windows(2) {
        if w[1].interval != w[0].interval + 1 {
            return Err(Error::Config(format!(
                "profile intervals must be consecutive ({} after {})",
                w[1].interval, w[0].interval
            )));
        }
    }
    let bases = &cfg.network.bases;
    let mut spec = ScenarioSpec::new(cfg.scheme, cfg.network, cfg.control);
    spec.dt = cfg.dt;
    spec.duration_s = cfg.dwell_s * profile.len() as f64;
    spec.record = cfg.record.clone();
    spec.validate()?;
    let keep: Vec<usize> = if spec.record.is_empty() {
        (0..CHANNELS.len()).collect()
    } else {
        spec.record
            .iter()
            .filter_map(|r| CHANNELS.iter().position(|c| c == r))
            .collect()
    };
    let dwell = (cfg.dwell_s / cfg.dt).round() as usize;
    let mut series = TimeSeries::new(
        cfg.dt,
        keep.iter().map(|&i| CHANNELS[i].to_string()).collect(),
    );
    let mut sim = Simulation::new(spec)?;
    let mut intervals = Vec::with_capacity(profile.len());
    for iv in profile {
        let load = LoadSpec { p_w: iv.net_w() };
        let net_pu = load.to_pu(bases);
        let flagged = net_pu.iter().any(|p| p.abs() > cfg.max_phase_pu);
        if !flagged {
            sim.set_load(&load)?;
        }
        for _ in 0..dwell {
            let s = sim.step()?;
            let row = sim.row(&s);
            for (col, &i) in series.data.iter_mut().zip(&keep) {
                col.push(row[i]);
            }
        }
        let c = sim
            .cycle_metrics()
            .ok_or_else(|| Error::Config("dwell shorter than one cycle".into()))?;
        intervals.push(IntervalResult {
            interval: iv.interval,
            net_pu,
            puf: c.puf,
            vuf: c.vuf,
            flagged,
        });
    }
    Ok(ProfileResult { series, intervals })
}

/// Ranks with ties given their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Degenerate(format!(
            "rank correlation needs two equal-length series of ≥ 2 samples ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "rank correlation of a constant series".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Bundled 48-interval profile (07:00 to 19:00 in 15 min steps), in the
/// profile CSV schema.
pub const SYNTHETIC_PROFILE_CSV: &str = include_str!("../data/synthetic_profile.csv");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::fortescue;
    use crate::sequence::PhasorSet;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn short_spec(scheme: Scheme) -> ScenarioSpec {
        let net = NetworkConfig::default();
        let mut spec = ScenarioSpec::new(scheme, net, ControlConfig::default());
        spec.duration_s = 0.3;
        spec.schedule = vec![
            (0.0, LoadSpec::from_pu([0.1, 0.6, 0.3], &net.bases)),
            (0.15, LoadSpec::from_pu([-0.4, 0.2, -0.1], &net.bases)),
        ];
        spec
    }

    #[test]
    fn settling_constant_is_zero() {
        let t = vec![0.7; 1000];
        let s = settling_time(&t, 1e-3, 0.2, &SettleOptions::default()).unwrap();
        assert_eq!(s, Some(0.0));
    }

    #[test]
    fn settling_exponential_is_about_3_9_tau() {
        let (dt, tau) = (1e-4, 0.05);
        let t: Vec<f64> = (0..20_000)
            .map(|k| {
                let t = k as f64 * dt - 0.5;
                if t < 0.0 {
                    0.0
                } else {
                    1.0 - (-t / tau).exp()
                }
            })
            .collect();
        let s = settling_time(&t, dt, 0.5, &SettleOptions::default())
            .unwrap()
            .unwrap();
        let expected = -(0.02f64).ln() * tau;
        assert!((s - expected).abs() < 2e-3, "{s} vs {expected}");
    }

    #[test]
    fn settling_oscillation_is_not_settled() {
        let t: Vec<f64> = (0..5000)
            .map(|k| 1.0 + 0.1 * (k as f64 * 0.05).sin())
            .collect();
        assert_eq!(
            settling_time(&t, 1e-3, 1.0, &SettleOptions::default()).unwrap(),
            None
        );
    }

    #[test]
    fn settling_rejects_short_windows_and_nan() {
        let opts = SettleOptions::default();
        assert!(settling_time(&[1.0; 10], 1e-3, 0.5, &opts).is_err());
        let mut t = vec![1.0; 1000];
        t[600] = f64::NAN;
        assert!(settling_time(&t, 1e-3, 0.5, &opts).is_err());
    }

    #[test]
    fn sweep_load_has_requested_puf() {
        for puf in [0.0, 0.1, 0.35, 0.7] {
            let p = sweep_load(0.3, puf);
            let got = sequence::puf(p[0], p[1], p[2], P_RATED_PU).unwrap();
            // one phase deviates by 2/3 of the skew from the mean
            assert!(
                (got - puf * 2.0 / 3.0).abs() < 1e-12 || (got - puf).abs() < 1e-12,
                "{got}"
            );
            assert!((p.iter().sum::<f64>() - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[2.0, 4.0, 9.0, 16.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&x, &[1.0; 5]).is_err());
        assert!(spearman(&x, &x[..3]).is_err());
    }

    proptest! {
        #[test]
        fn spearman_is_invariant_under_monotone_maps(v in prop::collection::vec(-10.0f64..10.0, 3..40)) {
            let y: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let rev: Vec<f64> = v.iter().map(|x| -x).collect();
            if let Ok(r) = spearman(&v, &y) {
                prop_assert!((r - 1.0).abs() < 1e-9);
                prop_assert!((spearman(&v, &rev).unwrap() + 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut s = short_spec(Scheme::Srf);
        s.schedule.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = short_spec(Scheme::Srf);
        s.duration_s = 0.1;
        assert!(s.validate().is_err());
        let mut s = short_spec(Scheme::Srf);
        s.record = vec!["nope".into()];
        assert!(s.validate().is_err());
        let mut s = short_spec(Scheme::Srf);
        s.dt = 0.0;
        assert!(s.validate().is_err());
        let bad = SweepConfig {
            puf_points: vec![0.8],
            ..SweepConfig::default()
        };
        assert!(puf_sweep(&bad).is_err());
    }

    #[test]
    fn topology_names_round_trip() {
        for t in Topology::ALL {
            assert_eq!(Topology::from_name(t.name()), Some(t));
        }
        let net = Topology::DeltaYg.apply(&NetworkConfig::default());
        assert_eq!(net.transformer.connection, Connection::DeltaYg);
        assert!(!net.transformer.grounding_transformer);
    }

    #[test]
    fn runs_are_bit_identical() {
        for scheme in [Scheme::Srf, Scheme::Rrf] {
            let a = run_scenario(&short_spec(scheme)).unwrap();
            let b = run_scenario(&short_spec(scheme)).unwrap();
            assert_eq!(a.names, b.names);
            for (x, y) in a.data.iter().flatten().zip(b.data.iter().flatten()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn derived_channels_match_offline_recompute() {
        let ts = run_scenario(&short_spec(Scheme::Srf)).unwrap();
        let n = sequence::samples_per_cycle(60.0, DEFAULT_DT).unwrap();
        let ch = |s: &str| ts.channel(s).unwrap();
        let (va, vb, vc) = (ch("v_pcc_a"), ch("v_pcc_b"), ch("v_pcc_c"));
        let load = [ch("i_load_a"), ch("i_load_b"), ch("i_load_c")];
        let v = [va, vb, vc];
        let w = std::f64::consts::TAU / n as f64;
        // direct DFT bin over each window, independent of the sliding sums
        let phasor = |x: &[f64], k: usize| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, s) in x[k + 1 - n..=k].iter().enumerate() {
                let m = (k + 1 - n + j) as f64;
                acc += s * Complex64::from_polar(1.0, -w * m);
            }
            acc * (2.0 / n as f64)
        };
        assert!(ch("v_rms_a")[n - 2].is_nan());
        for k in (n - 1..ts.len()).step_by(97) {
            for p in 0..3 {
                let win = &v[p][k + 1 - n..=k];
                let rms = (2.0 * win.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
                let name = ["v_rms_a", "v_rms_b", "v_rms_c"][p];
                assert!((ch(name)[k] - rms).abs() < 1e-9, "{name} at {k}");
                let pw: f64 = win
                    .iter()
                    .zip(&load[p][k + 1 - n..=k])
                    .map(|(a, b)| a * b)
                    .sum();
                let pname = ["p_a", "p_b", "p_c"][p];
                assert!(
                    (ch(pname)[k] - 2.0 * pw / n as f64).abs() < 1e-9,
                    "{pname} at {k}"
                );
            }
            let seq = fortescue(PhasorSet {
                a: phasor(va, k),
                b: phasor(vb, k),
                c: phasor(vc, k),
            });
            assert!((ch("v_pos")[k] - seq.pos.norm()).abs() < 1e-9);
            assert!((ch("v_neg")[k] - seq.neg.norm()).abs() < 1e-9);
            assert!((ch("v_zero")[k] - seq.zero.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_load_settles_balanced() {
        for scheme in [Scheme::Srf, Scheme::Rrf] {
            let mut spec =
                ScenarioSpec::new(scheme, NetworkConfig::default(), ControlConfig::default());
            spec.record = ["v_rms_a", "v_rms_b", "v_rms_c", "vuf"]
                .map(String::from)
                .to_vec();
            let ts = run_scenario(&spec).unwrap();
            for name in ["v_rms_a", "v_rms_b", "v_rms_c"] {
                let v = *ts.channel(name).unwrap().last().unwrap();
                assert!((v - 1.0).abs() < 1e-3, "{} {name} = {v}", scheme.name());
            }
            let vuf = *ts.channel("vuf").unwrap().last().unwrap();
            assert!(vuf < 1e-3, "{} vuf {vuf}", scheme.name());
        }
    }

    #[test]
    fn post_step_powers_follow_load_model() {
        let cfg = StepConfig::default();
        let ts = run_scenario(&cfg.scenario(Scheme::Srf)).unwrap();
        let m = step_metrics(&ts, cfg.t_step, &cfg.settle).unwrap();
        let rms =
            ["v_rms_a", "v_rms_b", "v_rms_c"].map(|n| *ts.channel(n).unwrap().last().unwrap());
        for (k, ((&want, &v), &p)) in cfg.post_pu.iter().zip(&rms).zip(&m.p).enumerate() {
            // conductances are sized at nominal voltage, injections at nominal current
            let expected = if want >= 0.0 { want * v * v } else { want * v };
            assert!(
                (p - expected).abs() <= 5e-3 * want.abs(),
                "phase {k}: {} vs {expected}",
                p
            );
        }
        assert!(m.peak_neg_pu >= m.residual_neg_pu);
        assert!(m.settling_time_s.unwrap() <= cfg.duration_s - cfg.t_step);
    }

    #[test]
    fn balanced_profile_stays_balanced() {
        let profile: Vec<ProfileInterval> = (0..3)
            .map(|k| ProfileInterval {
                interval: k,
                load_w: [200e3 * (k + 1) as f64; 3],
                pv_w: [50e3; 3],
            })
            .collect();
        let cfg = ProfileConfig {
            dwell_s: 0.5,
            ..ProfileConfig::default()
        };
        let r = profile_playback(&cfg, &profile).unwrap();
        assert_eq!(r.intervals.len(), 3);
        assert_eq!(r.series.len(), 3 * 6000);
        for iv in &r.intervals {
            assert!(iv.vuf < 1e-3 && iv.puf < 1e-3 && !iv.flagged, "{iv:?}");
        }
    }

    #[test]
    fn over_rating_interval_is_flagged_and_held() {
        let mk = |k: u32, p: f64| ProfileInterval {
            interval: k,
            load_w: [p, 100e3, 100e3],
            pv_w: [0.0; 3],
        };
        let profile = [mk(0, 100e3), mk(1, 5e6), mk(2, 100e3)];
        let cfg = ProfileConfig {
            dwell_s: 0.2,
            ..ProfileConfig::default()
        };
        let r = profile_playback(&cfg, &profile).unwrap();
        let flags: Vec<bool> = r.intervals.iter().map(|i| i.flagged).collect();
        assert_eq!(flags, [false, true, false]);
        assert!(r.intervals[1].puf < 1e-3);
        let gap = [mk(0, 1.0), mk(2, 1.0)];
        assert!(profile_playback(&cfg, &gap).is_err());
    }
}
