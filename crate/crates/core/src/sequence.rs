//! Three-phase signal mathematics.
//!
//! Clarke/Park transforms use the amplitude-invariant (2/3-scaled) convention,
//! so a balanced set of peak amplitude `Vm` maps to an αβ vector of length `Vm`.
//! Phasors are peak-valued and referenced to `cos(ω t)`.

use std::f64::consts::{FRAC_PI_3, PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Instantaneous phase quantities (per-unit).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhase {
    pub const ZERO: ThreePhase = ThreePhase {
        a: 0.0,
        b: 0.0,
        c: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    /// Balanced positive-sequence set `vm·cos(θ - k·2π/3)`.
    pub fn balanced(vm: f64, theta: f64) -> Self {
        Self::new(
            vm * theta.cos(),
            vm * (theta - 2.0 * FRAC_PI_3).cos(),
            vm * (theta + 2.0 * FRAC_PI_3).cos(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaBetaZero {
    pub alpha: f64,
    pub beta: f64,
    pub zero: f64,
}

impl AlphaBetaZero {
    pub fn new(alpha: f64, beta: f64, zero: f64) -> Self {
        Self { alpha, beta, zero }
    }

    pub fn magnitude(&self) -> f64 {
        self.alpha.hypot(self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq {
    pub d: f64,
    pub q: f64,
}

impl Dq {
    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }
}

/// Fundamental-frequency phasors of the three phases (peak, per-unit).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasorSet {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
}

impl PhasorSet {
    pub fn new(a: Complex64, b: Complex64, c: Complex64) -> Self {
        Self { a, b, c }
    }

    pub fn to_array(self) -> [Complex64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.a * k, self.b * k, self.c * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SequencePhasors {
    pub pos: Complex64,
    pub neg: Complex64,
    pub zero: Complex64,
}

impl SequencePhasors {
    pub fn new(pos: Complex64, neg: Complex64, zero: Complex64) -> Self {
        Self { pos, neg, zero }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnbalanceMetrics {
    pub vuf: f64,
    pub puf: f64,
}

/// The Fortescue operator `a = e^{j2π/3}`.
pub fn op_a() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * FRAC_PI_3)
}

pub fn clarke(s: ThreePhase) -> AlphaBetaZero {
    AlphaBetaZero {
        alpha: 2.0 / 3.0 * (s.a - 0.5 * s.b - 0.5 * s.c),
        beta: 2.0 / 3.0 * (SQRT3_2 * s.b - SQRT3_2 * s.c),
        zero: (s.a + s.b + s.c) / 3.0,
    }
}

pub fn inverse_clarke(v: AlphaBetaZero) -> ThreePhase {
    ThreePhase {
        a: v.alpha + v.zero,
        b: -0.5 * v.alpha + SQRT3_2 * v.beta + v.zero,
        c: -0.5 * v.alpha - SQRT3_2 * v.beta + v.zero,
    }
}

/// Rotates the αβ vector by `-theta`.
pub fn park(v: AlphaBetaZero, theta: f64) -> Dq {
    let (s, c) = theta.sin_cos();
    Dq {
        d: v.alpha * c + v.beta * s,
        q: -v.alpha * s + v.beta * c,
    }
}

/// Rotates a dq vector by `+theta` back into αβ (zero axis left at 0).
pub fn inverse_park(v: Dq, theta: f64) -> AlphaBetaZero {
    let (s, c) = theta.sin_cos();
    AlphaBetaZero {
        alpha: v.d * c - v.q * s,
        beta: v.d * s + v.q * c,
        zero: 0.0,
    }
}

pub fn fortescue(p: PhasorSet) -> SequencePhasors {
    let a = op_a();
    let a2 = a * a;
    SequencePhasors {
        zero: (p.a + p.b + p.c) / 3.0,
        pos: (p.a + a * p.b + a2 * p.c) / 3.0,
        neg: (p.a + a2 * p.b + a * p.c) / 3.0,
    }
}

pub fn recompose(s: SequencePhasors) -> PhasorSet {
    let a = op_a();
    let a2 = a * a;
    PhasorSet {
        a: s.zero + s.pos + s.neg,
        b: s.zero + a2 * s.pos + a * s.neg,
        c: s.zero + a * s.pos + a2 * s.neg,
    }
}

/// Number of samples in one period of `f0` at step `dt`, if that is an integer.
pub fn samples_per_cycle(f0: f64, dt: f64) -> Result<usize> {
    if !(f0 > 0.0 && dt > 0.0) {
        return Err(Error::Config(format!(
            "frequency and step must be positive (f0 = {f0}, dt = {dt})"
        )));
    }
    let n = 1.0 / (f0 * dt);
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "one period of {f0} Hz is {n:.4} samples at dt = {dt} s, not an integer"
        )));
    }
    Ok(rounded as usize)
}

/// Single-bin DFT of exactly one fundamental period, per phase.
///
/// The phasor angle is referenced to the first sample of the window.
pub fn extract_phasors(window: &[ThreePhase], f0: f64, dt: f64) -> Result<PhasorSet> {
    let n = samples_per_cycle(f0, dt)?;
    if window.len() != n {
        return Err(Error::Config(format!(
            "phasor window holds {} samples, one period is {n}",
            window.len()
        )));
    }
    let mut acc = [Complex64::new(0.0, 0.0); 3];
    for (k, s) in window.iter().enumerate() {
        let w = twiddle(k, n);
        for (slot, x) in acc.iter_mut().zip(s.to_array()) {
            *slot += w * x;
        }
    }
    let scale = 2.0 / n as f64;
    Ok(PhasorSet::new(
        acc[0] * scale,
        acc[1] * scale,
        acc[2] * scale,
    ))
}

fn twiddle(k: usize, n: usize) -> Complex64 {
    let phase = -TAU * (k % n) as f64 / n as f64;
    Complex64::from_polar(1.0, phase)
}

/// √(|V−|² + |V0|²) / |V+|.
pub fn vuf(s: &SequencePhasors) -> Result<f64> {
    let pos = s.pos.norm();
    if pos.is_nan() || pos <= 0.0 {
        return Err(Error::Degenerate(
            "voltage unbalance needs a non-zero positive sequence".into(),
        ));
    }
    Ok(s.neg.norm().hypot(s.zero.norm()) / pos)
}

pub fn puf(pa: f64, pb: f64, pc: f64, p_rated: f64) -> Result<f64> {
    if p_rated.is_nan() || p_rated <= 0.0 {
        return Err(Error::Degenerate(format!(
            "rated per-phase power must be positive, got {p_rated}"
        )));
    }
    let avg = (pa + pb + pc) / 3.0;
    let dev = (pa - avg).abs().max((pb - avg).abs()).max((pc - avg).abs());
    Ok(dev / p_rated)
}

pub fn rms_window(window: &[f64]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Degenerate("RMS of an empty window".into()));
    }
    let ss: f64 = window.iter().map(|x| x * x).sum();
    Ok((ss / window.len() as f64).sqrt())
}

/// Recursive one-cycle single-bin DFT.
///
/// The twiddle is indexed by the absolute sample count, so the phasor of
/// `Vm·cos(ω0·t + φ)` comes out as `Vm∠φ` with `t = 0` at the first push.
/// The running sum is rebuilt from the buffer once per cycle so rounding
/// does not accumulate.
#[derive(Debug, Clone)]
pub struct SlidingPhasor {
    twiddles: Vec<Complex64>,
    buf: Vec<f64>,
    sum: Complex64,
    count: u64,
}

impl SlidingPhasor {
    pub fn new(samples_per_cycle: usize) -> Self {
        let n = samples_per_cycle.max(1);
        Self {
            twiddles: (0..n).map(|k| twiddle(k, n)).collect(),
            buf: vec![0.0; n],
            sum: Complex64::new(0.0, 0.0),
            count: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        let n = self.buf.len();
        let slot = (self.count % n as u64) as usize;
        let old = std::mem::replace(&mut self.buf[slot], x);
        self.count += 1;
        if slot == n - 1 {
            self.sum = self
                .buf
                .iter()
                .zip(&self.twiddles)
                .map(|(x, w)| w * x)
                .sum();
        } else {
            self.sum += self.twiddles[slot] * (x - old);
        }
    }

    pub fn is_full(&self) -> bool {
        self.count >= self.buf.len() as u64
    }

    pub fn phasor(&self) -> Option<Complex64> {
        self.is_full()
            .then(|| self.sum * (2.0 / self.buf.len() as f64))
    }
}

/// Running one-cycle mean of a scalar (or of its square, for RMS).
#[derive(Debug, Clone)]
pub struct SlidingMean {
    buf: Vec<f64>,
    sum: f64,
    count: u64,
}

impl SlidingMean {
    pub fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len.max(1)],
            sum: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        let n = self.buf.len();
        let slot = (self.count % n as u64) as usize;
        let old = std::mem::replace(&mut self.buf[slot], x);
        self.count += 1;
        if slot == n - 1 {
            self.sum = self.buf.iter().sum();
        } else {
            self.sum += x - old;
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count >= self.buf.len() as u64).then(|| self.sum / self.buf.len() as f64)
    }
}

/// Per-phase sliding phasors over a three-phase stream.
#[derive(Debug, Clone)]
pub struct SlidingPhasorSet {
    phases: [SlidingPhasor; 3],
}

impl SlidingPhasorSet {
    pub fn new(samples_per_cycle: usize) -> Self {
        let p = SlidingPhasor::new(samples_per_cycle);
        Self {
            phases: [p.clone(), p.clone(), p],
        }
    }

    pub fn push(&mut self, s: ThreePhase) {
        for (p, x) in self.phases.iter_mut().zip(s.to_array()) {
            p.push(x);
        }
    }

    pub fn phasors(&self) -> Option<PhasorSet> {
        Some(PhasorSet::new(
            self.phases[0].phasor()?,
            self.phases[1].phasor()?,
            self.phases[2].phasor()?,
        ))
    }
}

/// Phasor `mag∠deg` helper used throughout the tests and the load model.
pub fn polar_deg(mag: f64, deg: f64) -> Complex64 {
    Complex64::from_polar(mag, deg * PI / 180.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const F0: f64 = 60.0;
    const DT: f64 = 1.0 / 12_000.0;

    fn assert_abz(v: AlphaBetaZero, e: (f64, f64, f64)) {
        assert_abs_diff_eq!(v.alpha, e.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.beta, e.1, epsilon = 1e-15);
        assert_abs_diff_eq!(v.zero, e.2, epsilon = 1e-15);
    }

    fn assert_abc(v: ThreePhase, e: (f64, f64, f64)) {
        assert_abs_diff_eq!(v.a, e.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.b, e.1, epsilon = 1e-15);
        assert_abs_diff_eq!(v.c, e.2, epsilon = 1e-15);
    }

    fn assert_c(z: Complex64, e: Complex64, tol: f64) {
        assert!((z - e).norm() <= tol, "{z} != {e}");
    }

    #[test]
    fn clarke_examples() {
        assert_abz(clarke(ThreePhase::new(1.0, -0.5, -0.5)), (1.0, 0.0, 0.0));
        assert_abz(clarke(ThreePhase::new(1.0, 1.0, 1.0)), (0.0, 0.0, 1.0));
        assert_abz(
            clarke(ThreePhase::new(0.0, SQRT3_2, -SQRT3_2)),
            (0.0, 1.0, 0.0),
        );
    }

    #[test]
    fn inverse_clarke_examples() {
        assert_abc(
            inverse_clarke(AlphaBetaZero::new(1.0, 0.0, 0.0)),
            (1.0, -0.5, -0.5),
        );
        assert_abc(
            inverse_clarke(AlphaBetaZero::new(0.0, 0.0, 1.0)),
            (1.0, 1.0, 1.0),
        );
        assert_abc(
            inverse_clarke(AlphaBetaZero::new(0.0, 1.0, 0.0)),
            (0.0, SQRT3_2, -SQRT3_2),
        );
    }

    #[test]
    fn park_examples() {
        let dq = park(AlphaBetaZero::new(1.0, 0.0, 0.0), 0.0);
        assert_eq!((dq.d, dq.q), (1.0, 0.0));
        for theta in [0.1f64, 1.0, 2.5, -3.0, 7.0] {
            let dq = park(AlphaBetaZero::new(theta.cos(), theta.sin(), 0.0), theta);
            assert_abs_diff_eq!(dq.d, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(dq.q, 0.0, epsilon = 1e-15);
        }
    }

    /// Magnitude of the k-th DFT bin of one period of `x`, scaled to peak amplitude.
    fn bin(x: &[f64], k: usize) -> f64 {
        let n = x.len();
        let s: Complex64 = x
            .iter()
            .enumerate()
            .map(|(i, v)| Complex64::from_polar(*v, -TAU * (k * i) as f64 / n as f64))
            .sum();
        let scale = if k == 0 { 1.0 } else { 2.0 };
        s.norm() * scale / n as f64
    }

    #[test]
    fn negative_sequence_is_double_frequency_in_dq() {
        let n = samples_per_cycle(F0, DT).unwrap();
        let w = TAU * F0;
        let (vm, phi) = (0.7, 0.4);
        let (mut d, mut q) = (Vec::new(), Vec::new());
        for k in 0..n {
            let t = k as f64 * DT;
            let s = ThreePhase::new(
                vm * (w * t + phi).cos(),
                vm * (w * t + 2.0 * FRAC_PI_3 + phi).cos(),
                vm * (w * t - 2.0 * FRAC_PI_3 + phi).cos(),
            );
            let dq = park(clarke(s), w * t);
            d.push(dq.d);
            q.push(dq.q);
            assert_abs_diff_eq!(dq.d, vm * (2.0 * w * t + phi).cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(dq.q, -vm * (2.0 * w * t + phi).sin(), epsilon = 1e-12);
        }
        for k in 0..n / 2 {
            let (bd, bq) = (bin(&d, k), bin(&q, k));
            if k == 2 {
                assert_abs_diff_eq!(bd, vm, epsilon = 1e-9);
                assert_abs_diff_eq!(bq, vm, epsilon = 1e-9);
            } else {
                assert!(bd < 1e-9 && bq < 1e-9, "bin {k}: {bd} {bq}");
            }
        }
    }

    #[test]
    fn positive_sequence_is_dc_in_dq() {
        let w = TAU * F0;
        let (vm, phi) = (1.3, -0.8);
        for k in 0..500 {
            let t = k as f64 * DT;
            let dq = park(clarke(ThreePhase::balanced(vm, w * t + phi)), w * t);
            assert_abs_diff_eq!(dq.d, vm * phi.cos(), epsilon = 1e-9);
            assert_abs_diff_eq!(dq.q, vm * phi.sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn fortescue_examples() {
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let s = fortescue(PhasorSet::new(
            one,
            polar_deg(1.0, -120.0),
            polar_deg(1.0, 120.0),
        ));
        assert_c(s.pos, one, 1e-15);
        assert_c(s.neg, z, 1e-15);
        assert_c(s.zero, z, 1e-15);

        let s = fortescue(PhasorSet::new(one, z, z));
        let third = Complex64::new(1.0 / 3.0, 0.0);
        assert_c(s.pos, third, 1e-15);
        assert_c(s.neg, third, 1e-15);
        assert_c(s.zero, third, 1e-15);

        let s = fortescue(PhasorSet::new(
            one,
            polar_deg(1.0, 120.0),
            polar_deg(1.0, -120.0),
        ));
        assert_c(s.pos, z, 1e-15);
        assert_c(s.neg, one, 1e-15);
        assert_c(s.zero, z, 1e-15);
    }

    #[test]
    fn phasor_window_must_be_integer_periodic() {
        let err = samples_per_cycle(60.0, 1e-4).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let window: Vec<_> = (0..167).map(|_| ThreePhase::ZERO).collect();
        assert!(extract_phasors(&window, 60.0, 1e-4).is_err());
        let short: Vec<_> = (0..199).map(|_| ThreePhase::ZERO).collect();
        assert!(extract_phasors(&short, F0, DT).is_err());
    }

    #[test]
    fn extract_phasor_examples() {
        let w = TAU * F0;
        let window: Vec<_> = (0..200)
            .map(|k| {
                let t = k as f64 * DT;
                ThreePhase::new((w * t).cos(), 0.5 * (w * t - PI / 2.0).cos(), 0.0)
            })
            .collect();
        let p = extract_phasors(&window, F0, DT).unwrap();
        assert_c(p.a, Complex64::new(1.0, 0.0), 1e-9);
        assert_c(p.b, polar_deg(0.5, -90.0), 1e-9);
        assert_c(p.c, Complex64::new(0.0, 0.0), 1e-9);
    }

    #[test]
    fn vuf_examples() {
        let c = |x: f64| Complex64::new(x, 0.0);
        assert_eq!(
            vuf(&SequencePhasors::new(c(1.0), c(0.0), c(0.0))).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            vuf(&SequencePhasors::new(c(1.0), c(0.03), c(0.04))).unwrap(),
            0.05,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            vuf(&SequencePhasors::new(c(0.9), c(0.027), c(0.0))).unwrap(),
            0.03,
            epsilon = 1e-15
        );
        assert!(matches!(
            vuf(&SequencePhasors::new(c(0.0), c(0.1), c(0.0))),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn puf_examples() {
        assert_eq!(puf(1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        // avg 1/3; deviations 0.2333, 0.2667, 0.0333
        assert_abs_diff_eq!(puf(0.1, 0.6, 0.3, 1.0).unwrap(), 0.8 / 3.0, epsilon = 1e-15);
        // avg -0.1; deviations 0.3, 0.3, 0.0
        assert_abs_diff_eq!(puf(-0.4, 0.2, -0.1, 1.0).unwrap(), 0.3, epsilon = 1e-15);
        assert!(puf(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(puf(1.0, 0.0, 0.0, -2.0).is_err());
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms_window(&[1.0; 200]).unwrap(), 1.0);
        assert_eq!(rms_window(&[0.0; 200]).unwrap(), 0.0);
        let cosine: Vec<f64> = (0..200).map(|k| (TAU * k as f64 / 200.0).cos()).collect();
        assert_abs_diff_eq!(rms_window(&cosine).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(rms_window(&[]).is_err());
    }

    #[test]
    fn sliding_phasor_matches_block_dft() {
        let n = 200;
        let w = TAU * F0;
        let mut sp = SlidingPhasorSet::new(n);
        let mut hist = Vec::new();
        for k in 0..1000 {
            let t = k as f64 * DT;
            let s = ThreePhase::new(
                0.9 * (w * t + 0.3).cos() + 0.1 * (3.0 * w * t).sin(),
                (w * t - 2.0).cos(),
                0.2,
            );
            hist.push(s);
            sp.push(s);
            if k + 1 < n {
                assert!(sp.phasors().is_none());
                continue;
            }
            let start = k + 1 - n;
            let block = extract_phasors(&hist[start..], F0, DT).unwrap();
            // block phasors are referenced to the window start
            let rot = Complex64::from_polar(1.0, -w * start as f64 * DT);
            let sliding = sp.phasors().unwrap();
            for (x, y) in sliding.to_array().iter().zip(block.to_array()) {
                assert_c(*x, y * rot, 1e-12);
            }
        }
        let last = sp.phasors().unwrap();
        assert_c(last.a, polar_deg(0.9, 0.3f64.to_degrees()), 1e-12);
    }

    #[test]
    fn sliding_mean_matches_direct() {
        let mut m = SlidingMean::new(4);
        for x in [1.0, 2.0, 3.0] {
            m.push(x);
            assert!(m.mean().is_none());
        }
        m.push(4.0);
        assert_eq!(m.mean(), Some(2.5));
        m.push(10.0);
        assert_eq!(m.mean(), Some(4.75));
    }

    fn rel_err(x: f64, y: f64) -> f64 {
        (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
    }

    proptest! {
        #[test]
        fn clarke_round_trip(a in -1e3..1e3f64, b in -1e3..1e3f64, c in -1e3..1e3f64) {
            let s = ThreePhase::new(a, b, c);
            let back = inverse_clarke(clarke(s));
            let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-300);
            for (x, y) in back.to_array().iter().zip(s.to_array()) {
                prop_assert!((x - y).abs() / scale < 1e-12);
            }
            prop_assert_eq!(clarke(s).zero, (a + b + c) / 3.0);
        }

        #[test]
        fn fortescue_round_trip(v in proptest::collection::vec(-10.0..10.0f64, 6)) {
            let p = PhasorSet::new(
                Complex64::new(v[0], v[1]),
                Complex64::new(v[2], v[3]),
                Complex64::new(v[4], v[5]),
            );
            let back = recompose(fortescue(p));
            let scale = p.to_array().iter().map(|z| z.norm()).fold(1e-300, f64::max);
            for (x, y) in back.to_array().iter().zip(p.to_array()) {
                prop_assert!((x - y).norm() / scale < 1e-12);
            }
        }

        #[test]
        fn metrics_are_scale_invariant(
            v in proptest::collection::vec(-10.0..10.0f64, 6),
            p in proptest::collection::vec(-5.0..5.0f64, 3),
            rated in 0.1..10.0f64,
            k in 0.01..100.0f64,
        ) {
            let set = PhasorSet::new(
                Complex64::new(1.0 + v[0].abs(), v[1]),
                Complex64::new(v[2], v[3]),
                Complex64::new(v[4], v[5]),
            );
            let s1 = fortescue(set);
            let s2 = fortescue(set.scale(k));
            if s1.pos.norm() > 1e-6 {
                prop_assert!(rel_err(vuf(&s1).unwrap(), vuf(&s2).unwrap()) < 1e-12);
            }
            let u1 = puf(p[0], p[1], p[2], rated).unwrap();
            let u2 = puf(k * p[0], k * p[1], k * p[2], k * rated).unwrap();
            prop_assert!((u1 - u2).abs() <= 1e-12 * u1.max(1.0));
        }

        #[test]
        fn single_tone_extraction_is_exact(
            vm in 0.0..5.0f64,
            phi in -PI..PI,
            n in 8usize..400,
        ) {
            let dt = 1.0 / (F0 * n as f64);
            let w = TAU * F0;
            let window: Vec<_> = (0..n)
                .map(|k| {
                    let x = vm * (w * k as f64 * dt + phi).cos();
                    ThreePhase::new(x, -x, 0.0)
                })
                .collect();
            let p = extract_phasors(&window, F0, dt).unwrap();
            prop_assert!((p.a - Complex64::from_polar(vm, phi)).norm() < 1e-9);
            prop_assert!((p.b + Complex64::from_polar(vm, phi)).norm() < 1e-9);
        }
    }
}
