//! Per-unit phase-coordinate model of the inverter output network.
//!
//! Topology, inverter side to load side:
//!
//! ```text
//! v_inv ─ r_f,L_f ─┬─ transformer series ─┬─ loads (G, injections)
//!                  C_f                    ├─ zero-path shunt (magnetizing / delta)
//!                  │                      ├─ grounding transformer (optional)
//!                                         └─ bus shunt C_pcc
//! ```
//!
//! Every branch that is not a plain diagonal element is specified by its
//! sequence impedances and realized in phase coordinates through the
//! Fortescue similarity transform. The transformer series branch carries an
//! effectively open zero-sequence path, since the inverter side is a
//! three-wire ungrounded system.
//!
//! All quantities are per-unit on one base: voltages and currents are phase
//! peak values, time is in seconds, inductances are in pu·s (`X / ω_base`)
//! and capacitances in pu·s (`B / ω_base`). Per-phase power is expressed on
//! the per-phase rating `S_base / 3`.

use std::f64::consts::{FRAC_PI_3, TAU};

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sequence::{self, PhasorSet, ThreePhase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bases {
    pub s_va: f64,
    pub v_ll_pcc: f64,
    pub v_ll_inv: f64,
    pub f_hz: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Self {
            s_va: 2.0e6,
            v_ll_pcc: 4160.0,
            v_ll_inv: 480.0,
            f_hz: 60.0,
        }
    }
}

impl Bases {
    pub fn omega(&self) -> f64 {
        TAU * self.f_hz
    }

    pub fn z_inv_ohm(&self) -> f64 {
        self.v_ll_inv * self.v_ll_inv / self.s_va
    }

    pub fn z_pcc_ohm(&self) -> f64 {
        self.v_ll_pcc * self.v_ll_pcc / self.s_va
    }

    /// Phase peak voltage base on the PCC side (V).
    pub fn v_peak_pcc(&self) -> f64 {
        self.v_ll_pcc * (2.0f64 / 3.0).sqrt()
    }

    /// Phase peak current base on the PCC side (A).
    pub fn i_peak_pcc(&self) -> f64 {
        self.s_va * 2.0f64.sqrt() / (3.0f64.sqrt() * self.v_ll_pcc)
    }

    /// Rated power of one phase (W).
    pub fn p_phase_w(&self) -> f64 {
        self.s_va / 3.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("s_base_va", self.s_va),
            ("v_pcc_ll", self.v_ll_pcc),
            ("v_inv_ll", self.v_ll_inv),
            ("f_hz", self.f_hz),
        ] {
            positive(name, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub lf_henry: f64,
    pub cf_farad: f64,
    pub rf_ohm: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            lf_henry: 350e-6,
            cf_farad: 5000e-6,
            rf_ohm: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Connection {
    YYg,
    DeltaYg,
}

impl Connection {
    pub fn name(self) -> &'static str {
        match self {
            Connection::YYg => "y-yg",
            Connection::DeltaYg => "delta-yg",
        }
    }
}

/// Output transformer and grounding transformer data.
///
/// Winding and magnetizing values are per-unit on the transformer's own
/// rating, GT data on the GT rating; `zn` is on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub connection: Connection,
    pub s_rated_va: f64,
    pub r1: f64,
    pub x1: f64,
    pub r2: f64,
    pub x2: f64,
    pub rm: f64,
    pub xm: f64,
    /// Multiplier on the magnetizing impedance in the zero-sequence path.
    pub zm0_scale: f64,
    pub zn: Complex64,
    /// Series-branch zero-sequence reactance standing in for the open path.
    pub z_open_pu: f64,
    pub grounding_transformer: bool,
    pub gt_s_rated_va: f64,
    pub gt_z0: f64,
    pub gt_x_over_r: f64,
    pub gt_rm: f64,
    pub gt_xm: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            connection: Connection::YYg,
            s_rated_va: 5.0e6,
            r1: 0.0012,
            x1: 0.03,
            r2: 0.0012,
            x2: 0.03,
            rm: 200.0,
            xm: 200.0,
            zm0_scale: 1.0,
            zn: Complex64::new(0.0, 0.0),
            z_open_pu: 1.0e6,
            grounding_transformer: true,
            gt_s_rated_va: 3.772e6,
            gt_z0: 0.6185,
            gt_x_over_r: 10.0,
            gt_rm: 200.0,
            gt_xm: 200.0,
        }
    }
}

/// Everything that defines the passive network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub bases: Bases,
    pub filter: FilterConfig,
    pub transformer: TransformerConfig,
    /// Per-phase susceptance of the PCC bus shunt (pu). Keeps the PCC
    /// voltage a state variable when no load is connected.
    pub pcc_shunt_b: f64,
    /// Per-phase conductance of a standing resistive load at the PCC (pu),
    /// standing in for the rest of the feeder. Not counted as scheduled load.
    pub pcc_shunt_g: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            bases: Bases::default(),
            filter: FilterConfig::default(),
            transformer: TransformerConfig::default(),
            pcc_shunt_b: 1e-4,
            pcc_shunt_g: 0.05,
        }
    }
}

/// Sequence impedances (pu, at the base frequency).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceImpedance {
    pub z0: Complex64,
    pub z1: Complex64,
    pub z2: Complex64,
}

impl SequenceImpedance {
    pub fn new(z0: Complex64, z1: Complex64, z2: Complex64) -> Self {
        Self { z0, z1, z2 }
    }

    /// Equal positive and negative sequence, as for any static element.
    pub fn symmetric(z0: Complex64, z1: Complex64) -> Self {
        Self::new(z0, z1, z1)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.z0 * k, self.z1 * k, self.z2 * k)
    }
}

/// Phase-domain realization of a branch: `v = R·i + L·di/dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatrix {
    pub r: Matrix3<f64>,
    /// pu·s
    pub l: Matrix3<f64>,
}

/// `A·diag(z0, z1, z2)·A⁻¹` with `A` the Fortescue matrix.
pub fn seq_to_phase_complex(z: &SequenceImpedance) -> Matrix3<Complex64> {
    let a = sequence::op_a();
    let a2 = a * a;
    let one = Complex64::new(1.0, 0.0);
    let fwd = Matrix3::new(one, one, one, one, a2, a, one, a, a2);
    let inv = Matrix3::new(one, one, one, one, a, a2, one, a2, a) / Complex64::new(3.0, 0.0);
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(z.z0, z.z1, z.z2));
    fwd * d * inv
}

/// Splits the phase-domain impedance into R and L at angular frequency `omega`.
///
/// Requires `z1 == z2`, otherwise the phase matrix is not real-symmetric and
/// has no passive R-L realization.
pub fn seq_to_phase(z: &SequenceImpedance, omega: f64) -> Result<PhaseMatrix> {
    let tol = 1e-12 * z.z1.norm().max(z.z2.norm()).max(1.0);
    if (z.z1 - z.z2).norm() > tol {
        return Err(Error::Config(format!(
            "positive ({}) and negative ({}) sequence impedances differ",
            z.z1, z.z2
        )));
    }
    let zs = (z.z0 + 2.0 * z.z1) / 3.0;
    let zm = (z.z0 - z.z1) / 3.0;
    let pick = |f: fn(Complex64) -> f64| {
        let (s, m) = (f(zs), f(zm));
        Matrix3::new(s, m, m, m, s, m, m, m, s)
    };
    Ok(PhaseMatrix {
        r: pick(|c| c.re),
        l: pick(|c| c.im) / omega,
    })
}

/// The sequence data of each network branch on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchImpedances {
    pub series: SequenceImpedance,
    pub zero_path: SequenceImpedance,
    pub grounding: Option<SequenceImpedance>,
}

impl BranchImpedances {
    pub fn from_config(t: &TransformerConfig, bases: &Bases) -> Self {
        let to_sys = bases.s_va / t.s_rated_va;
        let w1 = Complex64::new(t.r1, t.x1) * to_sys;
        let w2 = Complex64::new(t.r2, t.x2) * to_sys;
        let zm = Complex64::new(t.rm, t.xm) * to_sys;
        let zm0 = zm * t.zm0_scale;
        let winding = w1 + w2;
        let series = SequenceImpedance::symmetric(Complex64::new(winding.re, t.z_open_pu), winding);
        let zero_path_z0 = match t.connection {
            Connection::YYg => zm0 + 3.0 * t.zn,
            Connection::DeltaYg => winding + 3.0 * t.zn,
        };
        let grounding = t.grounding_transformer.then(|| {
            let to_sys = bases.s_va / t.gt_s_rated_va;
            let r = t.gt_z0 / (1.0 + t.gt_x_over_r * t.gt_x_over_r).sqrt();
            let z0 = Complex64::new(r, r * t.gt_x_over_r) * to_sys;
            let zm = Complex64::new(t.gt_rm, t.gt_xm) * to_sys;
            SequenceImpedance::symmetric(z0, zm)
        });
        Self {
            series,
            zero_path: SequenceImpedance::symmetric(zero_path_z0, zm),
            grounding,
        }
    }
}

/// Per-phase load set-points in watts at nominal voltage.
///
/// Consuming phases become grounded conductances; negative set-points become
/// fundamental-frequency current injections in phase with the reference
/// angle of that phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadSpec {
    pub p_w: [f64; 3],
}

impl LoadSpec {
    pub fn new(pa: f64, pb: f64, pc: f64) -> Self {
        Self { p_w: [pa, pb, pc] }
    }

    /// From per-phase per-unit powers (1 pu = rated power of one phase).
    pub fn from_pu(p: [f64; 3], bases: &Bases) -> Self {
        let k = bases.p_phase_w();
        Self {
            p_w: [p[0] * k, p[1] * k, p[2] * k],
        }
    }

    pub fn to_pu(&self, bases: &Bases) -> [f64; 3] {
        let k = bases.p_phase_w();
        [self.p_w[0] / k, self.p_w[1] / k, self.p_w[2] / k]
    }

    pub fn conductances(&self, bases: &Bases) -> [f64; 3] {
        self.to_pu(bases).map(|p| p.max(0.0))
    }

    pub fn injection_amplitudes(&self, bases: &Bases) -> [f64; 3] {
        self.to_pu(bases).map(|p| (-p).max(0.0))
    }

    /// Instantaneous injected currents for PCC reference angle `theta`.
    pub fn injection(&self, bases: &Bases, theta: f64) -> ThreePhase {
        let amp = self.injection_amplitudes(bases);
        ThreePhase::new(
            amp[0] * theta.cos(),
            amp[1] * (theta - 2.0 * FRAC_PI_3).cos(),
            amp[2] * (theta + 2.0 * FRAC_PI_3).cos(),
        )
    }

    pub fn injection_phasors(&self, bases: &Bases) -> PhasorSet {
        let amp = self.injection_amplitudes(bases);
        PhasorSet::new(
            Complex64::from_polar(amp[0], 0.0),
            Complex64::from_polar(amp[1], -2.0 * FRAC_PI_3),
            Complex64::from_polar(amp[2], 2.0 * FRAC_PI_3),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.p_w.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "non-finite load set-point {:?}",
                self.p_w
            )))
        }
    }
}

/// Offsets of each state group in the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub i_filter: usize,
    pub v_cap: usize,
    pub i_series: usize,
    pub i_zero_path: usize,
    pub i_grounding: Option<usize>,
    pub v_pcc: usize,
    pub len: usize,
}

impl StateLayout {
    fn new(with_gt: bool) -> Self {
        let i_grounding = with_gt.then_some(12);
        let v_pcc = if with_gt { 15 } else { 12 };
        Self {
            i_filter: 0,
            v_cap: 3,
            i_series: 6,
            i_zero_path: 9,
            i_grounding,
            v_pcc,
            len: v_pcc + 3,
        }
    }
}

/// Element values of the assembled network on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkElements {
    pub rf: f64,
    pub lf: f64,
    pub cf: f64,
    pub series: PhaseMatrix,
    pub zero_path: PhaseMatrix,
    pub grounding: Option<PhaseMatrix>,
    pub c_pcc: f64,
    pub g_bus: f64,
    pub g_load: [f64; 3],
}

/// Linear state-space network `ẋ = A·x + B_v·v_inv + B_s·i_src`, with its
/// exact zero-order-hold discretization at the simulation step.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub net: NetworkConfig,
    pub load: LoadSpec,
    pub layout: StateLayout,
    pub elements: NetworkElements,
    pub dt: f64,
    a: DMatrix<f64>,
    b_v: DMatrix<f64>,
    b_s: DMatrix<f64>,
    phi: DMatrix<f64>,
    gamma_v: DMatrix<f64>,
    gamma_s: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub step: u64,
}

impl PlantState {
    pub fn zeros(model: &PlantModel) -> Self {
        Self {
            x: DVector::zeros(model.layout.len),
            step: 0,
        }
    }
}

/// Signals available to the controllers and the recorder after a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurements {
    /// Filter inductor current.
    pub i_filter: ThreePhase,
    /// Filter capacitor (inverter output) voltage.
    pub v_cap: ThreePhase,
    pub v_pcc: ThreePhase,
    /// Transformer secondary current, i.e. the BESS output current at the PCC.
    pub i_bess: ThreePhase,
    /// Current drawn by the loads (conductance current minus injections).
    pub i_load: ThreePhase,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "`{name}` must be non-negative, got {v}"
        )))
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.bases.validate()?;
        let f = &self.filter;
        positive("lf_henry", f.lf_henry)?;
        positive("cf_farad", f.cf_farad)?;
        non_negative("rf_ohm", f.rf_ohm)?;
        positive("pcc_shunt_b_pu", self.pcc_shunt_b)?;
        non_negative("pcc_shunt_g_pu", self.pcc_shunt_g)?;
        let t = &self.transformer;
        positive("s_rated_va", t.s_rated_va)?;
        non_negative("r1", t.r1)?;
        non_negative("r2", t.r2)?;
        positive("x1", t.x1)?;
        positive("x2", t.x2)?;
        non_negative("rm", t.rm)?;
        positive("xm", t.xm)?;
        positive("zm0_scale", t.zm0_scale)?;
        non_negative("zn_r", t.zn.re)?;
        non_negative("zn_x", t.zn.im)?;
        positive("z_open_pu", t.z_open_pu)?;
        if t.grounding_transformer {
            positive("gt_s_rated_va", t.gt_s_rated_va)?;
            positive("gt_z0_pu", t.gt_z0)?;
            positive("gt_x_over_r", t.gt_x_over_r)?;
            non_negative("gt_rm", t.gt_rm)?;
            positive("gt_xm", t.gt_xm)?;
        }
        Ok(())
    }

    pub fn elements(&self, load: &LoadSpec) -> Result<NetworkElements> {
        self.validate()?;
        load.validate()?;
        let b = &self.bases;
        let w = b.omega();
        let zb = b.z_inv_ohm();
        let br = BranchImpedances::from_config(&self.transformer, b);
        let grounding = br.grounding.map(|g| seq_to_phase(&g, w)).transpose()?;
        Ok(NetworkElements {
            rf: self.filter.rf_ohm / zb,
            lf: self.filter.lf_henry / zb,
            cf: self.filter.cf_farad * zb,
            series: seq_to_phase(&br.series, w)?,
            zero_path: seq_to_phase(&br.zero_path, w)?,
            grounding,
            c_pcc: self.pcc_shunt_b / w,
            g_bus: self.pcc_shunt_g,
            g_load: load.conductances(b),
        })
    }
}

fn inverse3(m: &Matrix3<f64>, what: &str) -> Result<Matrix3<f64>> {
    m.try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} inductance matrix")))
}

fn put3(dst: &mut DMatrix<f64>, row: usize, col: usize, m: &Matrix3<f64>) {
    dst.view_mut((row, col), (3, 3)).copy_from(m);
}

/// Assembles the network for `load` and discretizes it at step `dt`.
pub fn build_plant(net: &NetworkConfig, load: &LoadSpec, dt: f64) -> Result<PlantModel> {
    positive("dt", dt)?;
    let el = net.elements(load)?;
    let layout = StateLayout::new(el.grounding.is_some());
    let n = layout.len;
    let eye = Matrix3::<f64>::identity();
    let mut a = DMatrix::zeros(n, n);
    let mut b_v = DMatrix::zeros(n, 3);
    let mut b_s = DMatrix::zeros(n, 3);
    let (f, c, s, z, p) = (
        layout.i_filter,
        layout.v_cap,
        layout.i_series,
        layout.i_zero_path,
        layout.v_pcc,
    );

    // L_f di_f/dt = v_inv - r_f i_f - v_c
    put3(&mut a, f, f, &(eye * (-el.rf / el.lf)));
    put3(&mut a, f, c, &(eye * (-1.0 / el.lf)));
    put3(&mut b_v, f, 0, &(eye / el.lf));
    // C_f dv_c/dt = i_f - i_s
    put3(&mut a, c, f, &(eye / el.cf));
    put3(&mut a, c, s, &(eye * (-1.0 / el.cf)));
    // L_s di_s/dt = v_c - R_s i_s - v_p
    let ls_inv = inverse3(&el.series.l, "series branch")?;
    put3(&mut a, s, c, &ls_inv);
    put3(&mut a, s, s, &(-ls_inv * el.series.r));
    put3(&mut a, s, p, &(-ls_inv));
    // shunt branches at the PCC: L di/dt = v_p - R i
    let mut shunts = vec![(z, el.zero_path, "zero-path")];
    if let (Some(g), Some(gm)) = (layout.i_grounding, el.grounding) {
        shunts.push((g, gm, "grounding transformer"));
    }
    let cp_inv = 1.0 / el.c_pcc;
    for (row, m, what) in &shunts {
        let l_inv = inverse3(&m.l, what)?;
        put3(&mut a, *row, p, &l_inv);
        put3(&mut a, *row, *row, &(-l_inv * m.r));
        put3(&mut a, p, *row, &(eye * -cp_inv));
    }
    // C_p dv_p/dt = i_s - Σ i_shunt - G v_p + i_src
    put3(&mut a, p, s, &(eye * cp_inv));
    let g = Matrix3::from_diagonal(&nalgebra::Vector3::from(el.g_load.map(|g| g + el.g_bus)));
    put3(&mut a, p, p, &(-g * cp_inv));
    put3(&mut b_s, p, 0, &(eye * cp_inv));

    let (phi, gamma) = discretize(&a, &[&b_v, &b_s], dt);
    Ok(PlantModel {
        net: *net,
        load: *load,
        layout,
        elements: el,
        dt,
        a,
        b_v,
        b_s,
        phi,
        gamma_v: gamma.columns(0, 3).into_owned(),
        gamma_s: gamma.columns(3, 3).into_owned(),
    })
}

/// Exact ZOH discretization via the exponential of the augmented matrix
/// `[[A, B], [0, 0]]·dt`, whose top blocks are `e^{A·dt}` and `∫e^{Aτ}dτ·B`.
fn discretize(a: &DMatrix<f64>, inputs: &[&DMatrix<f64>], dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m: usize = inputs.iter().map(|b| b.ncols()).sum();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    let mut col = n;
    for b in inputs {
        aug.view_mut((0, col), (n, b.ncols())).copy_from(&(*b * dt));
        col += b.ncols();
    }
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

fn three(x: &DVector<f64>, at: usize) -> ThreePhase {
    ThreePhase::new(x[at], x[at + 1], x[at + 2])
}

impl PlantModel {
    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Swaps the load at a step boundary; the state carries over unchanged.
    pub fn apply_load_step(&self, new_load: &LoadSpec) -> Result<PlantModel> {
        if *new_load == self.load {
            return Ok(self.clone());
        }
        build_plant(&self.net, new_load, self.dt)
    }

    /// Injected source currents for PCC reference angle `theta`.
    pub fn injection(&self, theta: f64) -> ThreePhase {
        self.load.injection(&self.net.bases, theta)
    }

    /// Advances one step with `v_inv` and `i_src` held over the interval.
    pub fn step(&self, state: &mut PlantState, v_inv: ThreePhase, i_src: ThreePhase) -> Result<()> {
        let u_v = nalgebra::Vector3::from(v_inv.to_array());
        let u_s = nalgebra::Vector3::from(i_src.to_array());
        let next = &self.phi * &state.x + &self.gamma_v * u_v + &self.gamma_s * u_s;
        state.step += 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: state.step,
                time_s: state.step as f64 * self.dt,
            });
        }
        state.x = next;
        Ok(())
    }

    pub fn measure(&self, state: &PlantState, i_src: ThreePhase) -> Measurements {
        let l = &self.layout;
        let x = &state.x;
        let v_pcc = three(x, l.v_pcc);
        let g = self.elements.g_load;
        Measurements {
            i_filter: three(x, l.i_filter),
            v_cap: three(x, l.v_cap),
            v_pcc,
            i_bess: three(x, l.i_series),
            i_load: ThreePhase::new(
                g[0] * v_pcc.a - i_src.a,
                g[1] * v_pcc.b - i_src.b,
                g[2] * v_pcc.c - i_src.c,
            ),
        }
    }

    /// Magnetic plus electric stored energy `½ xᵀ M x`.
    pub fn stored_energy(&self, state: &PlantState) -> f64 {
        let el = &self.elements;
        let l = &self.layout;
        let x = &state.x;
        let seg = |at: usize| nalgebra::Vector3::new(x[at], x[at + 1], x[at + 2]);
        let quad = |m: &Matrix3<f64>, v: nalgebra::Vector3<f64>| (v.transpose() * m * v)[0];
        let mut e = el.lf * seg(l.i_filter).norm_squared()
            + el.cf * seg(l.v_cap).norm_squared()
            + quad(&el.series.l, seg(l.i_series))
            + quad(&el.zero_path.l, seg(l.i_zero_path))
            + el.c_pcc * seg(l.v_pcc).norm_squared();
        if let (Some(g), Some(m)) = (l.i_grounding, &el.grounding) {
            e += quad(&m.l, seg(g));
        }
        0.5 * e
    }

    /// Sinusoidal steady state at `omega` for given inverter-voltage and
    /// source-current phasors. Returns the state phasor vector.
    pub fn steady_state(
        &self,
        v_inv: &PhasorSet,
        i_src: &PhasorSet,
        omega: f64,
    ) -> Result<DVector<Complex64>> {
        let n = self.layout.len;
        let jw = Complex64::new(0.0, omega);
        let lhs = DMatrix::<Complex64>::from_fn(n, n, |r, c| {
            let d = if r == c { jw } else { Complex64::new(0.0, 0.0) };
            d - Complex64::new(self.a[(r, c)], 0.0)
        });
        let uv = nalgebra::Vector3::from(v_inv.to_array());
        let us = nalgebra::Vector3::from(i_src.to_array());
        let rhs = self.b_v.map(|v| Complex64::new(v, 0.0)) * uv
            + self.b_s.map(|v| Complex64::new(v, 0.0)) * us;
        lhs.lu()
            .solve(&rhs)
            .filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
            .ok_or_else(|| Error::Singular(format!("steady-state solve at ω = {omega}")))
    }

    pub fn pcc_phasors(&self, x: &DVector<Complex64>) -> PhasorSet {
        let p = self.layout.v_pcc;
        PhasorSet::new(x[p], x[p + 1], x[p + 2])
    }

    pub fn phasors_at(&self, x: &DVector<Complex64>, at: usize) -> PhasorSet {
        PhasorSet::new(x[at], x[at + 1], x[at + 2])
    }
}

/// Zero-sequence impedance seen from the PCC into the BESS side, with loads
/// disconnected and the inverter voltage source shorted.
pub fn thevenin_z0_at_pcc(model: &PlantModel) -> Result<Complex64> {
    let net = NetworkConfig {
        pcc_shunt_g: 0.0,
        ..model.net
    };
    let bare = build_plant(&net, &LoadSpec::default(), model.dt)?;
    let i0 = Complex64::new(1e-3, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let x = bare.steady_state(
        &PhasorSet::new(zero, zero, zero),
        &PhasorSet::new(i0, i0, i0),
        model.net.bases.omega(),
    )?;
    let v0 = sequence::fortescue(bare.pcc_phasors(&x)).zero;
    Ok(v0 / i0)
}

impl PlantModel {
    /// Steady state with the capacitor voltage held at `v_cap`, the fixed
    /// point an ideal inner voltage loop reaches. Returns the state phasors.
    pub fn steady_state_regulated(
        &self,
        v_cap: &PhasorSet,
        i_src: &PhasorSet,
        omega: f64,
    ) -> Result<DVector<Complex64>> {
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let c = self.layout.v_cap;
        let from_src = self.steady_state(&PhasorSet::new(zero, zero, zero), i_src, omega)?;
        let mut h = Matrix3::<Complex64>::zeros();
        let mut cols = Vec::with_capacity(3);
        for k in 0..3 {
            let mut u = [zero; 3];
            u[k] = one;
            let x = self.steady_state(
                &PhasorSet::new(u[0], u[1], u[2]),
                &PhasorSet::default(),
                omega,
            )?;
            for r in 0..3 {
                h[(r, k)] = x[c + r];
            }
            cols.push(x);
        }
        let target = nalgebra::Vector3::from(v_cap.to_array())
            - nalgebra::Vector3::new(from_src[c], from_src[c + 1], from_src[c + 2]);
        let v_inv = h
            .lu()
            .solve(&target)
            .ok_or_else(|| Error::Singular("capacitor-voltage regulation".into()))?;
        let mut x = from_src;
        for (k, col) in cols.iter().enumerate() {
            x += col * v_inv[k];
        }
        Ok(x)
    }
}
