//! Config files, CSV tables and SVG charts.
//!
//! The config format is INI-like: `[section]` headers, `key = value` lines
//! and `#` comments. Every key has a default, so an empty file is a valid
//! config.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::control::{ControlConfig, FrameAngle, GainUnits, Scheme};
use crate::experiments::{
    IntervalResult, ProfileConfig, ProfileInterval, ProfileResult, SettleOptions, StepComparison,
    StepConfig, StepMetrics, SweepConfig, SweepCurve, SweepPoint, SweepResult, TimeSeries,
    Topology, DEFAULT_DT,
};
use crate::plant::{Connection, NetworkConfig};
use crate::{Error, Result};

/// Everything a run needs, with defaults from the simulation parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub network: NetworkConfig,
    /// `control.scheme` selects the scheme for the sweep and the profile;
    /// the step comparison always runs both.
    pub control: ControlConfig,
    pub dt: f64,
    pub step: StepSettings,
    pub sweep: SweepSettings,
    pub profile: ProfileSettings,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub pre_pu: [f64; 3],
    pub post_pu: [f64; 3],
    pub t_step: f64,
    pub duration_s: f64,
    pub settle: SettleOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub puf_points: Vec<f64>,
    pub p_avg_pu: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub vuf_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSettings {
    /// Profile CSV; `None` plays the bundled profile.
    pub path: Option<PathBuf>,
    pub dwell_s: f64,
    pub max_phase_pu: f64,
}

impl Default for Config {
    fn default() -> Self {
        let step = StepConfig::default();
        let sweep = SweepConfig::default();
        let profile = ProfileConfig::default();
        Self {
            network: NetworkConfig::default(),
            control: ControlConfig::default(),
            dt: DEFAULT_DT,
            step: StepSettings {
                pre_pu: step.pre_pu,
                post_pu: step.post_pu,
                t_step: step.t_step,
                duration_s: step.duration_s,
                settle: step.settle,
            },
            sweep: SweepSettings {
                puf_points: sweep.puf_points,
                p_avg_pu: sweep.p_avg_pu,
                min_duration_s: sweep.min_duration_s,
                max_duration_s: sweep.max_duration_s,
                vuf_tolerance: sweep.vuf_tolerance,
            },
            profile: ProfileSettings {
                path: None,
                dwell_s: profile.dwell_s,
                max_phase_pu: profile.max_phase_pu,
            },
            output_dir: None,
        }
    }
}

impl Config {
    pub fn step_config(&self) -> StepConfig {
        let s = &self.step;
        StepConfig {
            network: self.network,
            control: self.control,
            dt: self.dt,
            pre_pu: s.pre_pu,
            post_pu: s.post_pu,
            t_step: s.t_step,
            duration_s: s.duration_s,
            settle: s.settle,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let s = &self.sweep;
        SweepConfig {
            network: self.network,
            control: self.control,
            scheme: self.control.scheme,
            dt: self.dt,
            puf_points: s.puf_points.clone(),
            p_avg_pu: s.p_avg_pu,
            min_duration_s: s.min_duration_s,
            max_duration_s: s.max_duration_s,
            vuf_tolerance: s.vuf_tolerance,
        }
    }

    pub fn profile_config(&self) -> ProfileConfig {
        ProfileConfig {
            network: self.network,
            control: self.control,
            scheme: self.control.scheme,
            dt: self.dt,
            dwell_s: self.profile.dwell_s,
            max_phase_pu: self.profile.max_phase_pu,
            ..ProfileConfig::default()
        }
    }

    /// The config as a file that parses back to an equal value.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut scratch = self.clone();
        let mut section = None;
        for e in entries() {
            if e.section.is_empty() {
                continue;
            }
            if section != Some(e.section) {
                if section.is_some() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", e.section);
                section = Some(e.section);
            }
            match e.kind.render(&mut scratch) {
                Some(v) => {
                    let _ = writeln!(out, "{} = {v}", e.key);
                }
                None => {
                    let _ = writeln!(out, "# {} =", e.key);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Check {
    Positive,
    NonNegative,
}

impl Check {
    fn apply(self, v: f64) -> std::result::Result<(), String> {
        let ok = v.is_finite()
            && match self {
                Check::Positive => v > 0.0,
                Check::NonNegative => v >= 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(match self {
                Check::Positive => format!("must be positive, got {v}"),
                Check::NonNegative => format!("must be non-negative, got {v}"),
            })
        }
    }
}

type Setter = fn(&mut Config, &str) -> std::result::Result<(), String>;
type Getter = fn(&Config) -> Option<String>;

enum Kind {
    Num(fn(&mut Config) -> &mut f64, Check),
    Bool(fn(&mut Config) -> &mut bool),
    Triple(fn(&mut Config) -> &mut [f64; 3]),
    Text(Setter, Getter),
}

impl Kind {
    fn set(&self, c: &mut Config, raw: &str) -> std::result::Result<(), String> {
        match self {
            Kind::Num(f, check) => {
                let v = parse_f64(raw)?;
                check.apply(v)?;
                *f(c) = v;
            }
            Kind::Bool(f) => {
                *f(c) = match raw {
                    "true" | "yes" | "on" | "1" => true,
                    "false" | "no" | "off" | "0" => false,
                    _ => return Err(format!("expected true or false, got `{raw}`")),
                };
            }
            Kind::Triple(f) => {
                let v = parse_list(raw)?;
                *f(c) = <[f64; 3]>::try_from(v.as_slice())
                    .map_err(|_| format!("expected three values, got {}", v.len()))?;
            }
            Kind::Text(set, _) => set(c, raw)?,
        }
        Ok(())
    }

    fn render(&self, c: &mut Config) -> Option<String> {
        match self {
            Kind::Num(f, _) => Some(format!("{}", *f(c))),
            Kind::Bool(f) => Some(format!("{}", *f(c))),
            Kind::Triple(f) => Some(join(f(c).as_slice())),
            Kind::Text(_, get) => get(c),
        }
    }
}

struct Entry {
    section: &'static str,
    key: &'static str,
    kind: Kind,
}

fn parse_f64(raw: &str) -> std::result::Result<f64, String> {
    raw.parse::<f64>()
        .map_err(|_| format!("expected a number, got `{raw}`"))
}

fn parse_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|s| parse_f64(s.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn set_scheme(c: &mut Config, raw: &str) -> std::result::Result<(), String> {
    c.control.scheme = match raw {
        "srf" => Scheme::Srf,
        "rrf" => Scheme::Rrf,
        _ => return Err(format!("expected srf or rrf, got `{raw}`")),
    };
    Ok(())
}

fn entries() -> Vec<Entry> {
    use Check::*;
    macro_rules! num {
        ($s:literal, $k:literal, $check:expr, |$c:ident| $field:expr) => {
            Entry {
                section: $s,
                key: $k,
                kind: Kind::Num(|$c| &mut $field, $check),
            }
        };
    }
    macro_rules! flag {
        ($s:literal, $k:literal, |$c:ident| $field:expr) => {
            Entry {
                section: $s,
                key: $k,
                kind: Kind::Bool(|$c| &mut $field),
            }
        };
    }
    macro_rules! text {
        ($s:literal, $k:literal, $set:expr, $get:expr) => {
            Entry {
                section: $s,
                key: $k,
                kind: Kind::Text($set, $get),
            }
        };
    }
    vec![
        text!("", "scheme", set_scheme, |c| Some(
            c.control.scheme.name().into()
        )),
        num!("system", "s_base_va", Positive, |c| c.network.bases.s_va),
        num!("system", "v_pcc_ll", Positive, |c| c.network.bases.v_ll_pcc),
        num!("system", "v_inv_ll", Positive, |c| c.network.bases.v_ll_inv),
        num!("system", "f_hz", Positive, |c| c.network.bases.f_hz),
        num!("system", "dt_s", Positive, |c| c.dt),
        num!("filter", "lf_henry", Positive, |c| c
            .network
            .filter
            .lf_henry),
        num!("filter", "cf_farad", Positive, |c| c
            .network
            .filter
            .cf_farad),
        num!("filter", "rf_ohm", NonNegative, |c| c.network.filter.rf_ohm),
        text!(
            "transformer",
            "connection",
            |c, raw| {
                c.network.transformer.connection = match raw {
                    "y-yg" => Connection::YYg,
                    "delta-yg" => Connection::DeltaYg,
                    _ => return Err(format!("expected y-yg or delta-yg, got `{raw}`")),
                };
                Ok(())
            },
            |c| Some(c.network.transformer.connection.name().into())
        ),
        num!("transformer", "s_rated_va", Positive, |c| c
            .network
            .transformer
            .s_rated_va),
        num!("transformer", "r1_pu", NonNegative, |c| c
            .network
            .transformer
            .r1),
        num!("transformer", "x1_pu", Positive, |c| c
            .network
            .transformer
            .x1),
        num!("transformer", "r2_pu", NonNegative, |c| c
            .network
            .transformer
            .r2),
        num!("transformer", "x2_pu", Positive, |c| c
            .network
            .transformer
            .x2),
        num!("transformer", "rm_pu", NonNegative, |c| c
            .network
            .transformer
            .rm),
        num!("transformer", "xm_pu", Positive, |c| c
            .network
            .transformer
            .xm),
        num!("transformer", "zm0_scale", Positive, |c| c
            .network
            .transformer
            .zm0_scale),
        num!("transformer", "zn_r_pu", NonNegative, |c| c
            .network
            .transformer
            .zn
            .re),
        num!("transformer", "zn_x_pu", NonNegative, |c| c
            .network
            .transformer
            .zn
            .im),
        num!("transformer", "z_open_pu", Positive, |c| c
            .network
            .transformer
            .z_open_pu),
        flag!("transformer", "grounding_transformer", |c| c
            .network
            .transformer
            .grounding_transformer),
        num!("transformer", "gt_s_rated_va", Positive, |c| c
            .network
            .transformer
            .gt_s_rated_va),
        num!("transformer", "gt_z0_pu", Positive, |c| c
            .network
            .transformer
            .gt_z0),
        num!("transformer", "gt_x_over_r", Positive, |c| c
            .network
            .transformer
            .gt_x_over_r),
        num!("transformer", "gt_rm_pu", NonNegative, |c| c
            .network
            .transformer
            .gt_rm),
        num!("transformer", "gt_xm_pu", Positive, |c| c
            .network
            .transformer
            .gt_xm),
        num!("network", "pcc_shunt_b_pu", Positive, |c| c
            .network
            .pcc_shunt_b),
        num!("network", "pcc_shunt_g_pu", NonNegative, |c| c
            .network
            .pcc_shunt_g),
        text!("controller", "scheme", set_scheme, |c| Some(
            c.control.scheme.name().into()
        )),
        text!(
            "controller",
            "gain_units",
            |c, raw| {
                c.control.gain_units = match raw {
                    "si" => GainUnits::Si,
                    "pu" => GainUnits::PerUnit,
                    _ => return Err(format!("expected si or pu, got `{raw}`")),
                };
                Ok(())
            },
            |c| Some(
                match c.control.gain_units {
                    GainUnits::Si => "si",
                    GainUnits::PerUnit => "pu",
                }
                .into()
            )
        ),
        num!("controller", "kpv", NonNegative, |c| c.control.kpv),
        num!("controller", "krv", NonNegative, |c| c.control.krv),
        num!("controller", "kpi", NonNegative, |c| c.control.kpi),
        num!("controller", "kri", NonNegative, |c| c.control.kri),
        num!("controller", "rrf_kpv", NonNegative, |c| c.control.rrf_kpv),
        num!("controller", "rrf_kiv", NonNegative, |c| c.control.rrf_kiv),
        num!("controller", "rrf_kpi", NonNegative, |c| c.control.rrf_kpi),
        num!("controller", "rrf_kii", NonNegative, |c| c.control.rrf_kii),
        num!("controller", "notch_q", Positive, |c| c.control.notch_q),
        text!(
            "controller",
            "frame_angle",
            |c, raw| {
                c.control.frame_angle = match raw {
                    "reference" => FrameAngle::Reference,
                    "pll" => FrameAngle::Pll,
                    _ => return Err(format!("expected reference or pll, got `{raw}`")),
                };
                Ok(())
            },
            |c| Some(
                match c.control.frame_angle {
                    FrameAngle::Reference => "reference",
                    FrameAngle::Pll => "pll",
                }
                .into()
            )
        ),
        num!("controller", "pll_kp", NonNegative, |c| c.control.pll_kp),
        num!("controller", "pll_ki", NonNegative, |c| c.control.pll_ki),
        num!("controller", "np", NonNegative, |c| c.control.np),
        num!("controller", "nq", NonNegative, |c| c.control.nq),
        num!("controller", "k2pf", NonNegative, |c| c.control.k2pf),
        num!("controller", "k2if", NonNegative, |c| c.control.k2if),
        num!("controller", "k2pv", NonNegative, |c| c.control.k2pv),
        num!("controller", "k2iv", NonNegative, |c| c.control.k2iv),
        num!("controller", "power_lpf_hz", Positive, |c| c
            .control
            .power_lpf_hz),
        num!("controller", "v_nom_pu", Positive, |c| c.control.v_nom),
        flag!("controller", "current_feedforward", |c| c
            .control
            .current_feedforward),
        num!("controller", "current_limit_pu", Positive, |c| c
            .control
            .current_limit),
        num!("controller", "voltage_limit_pu", Positive, |c| c
            .control
            .voltage_limit),
        Entry {
            section: "step",
            key: "pre_p_pu",
            kind: Kind::Triple(|c| &mut c.step.pre_pu),
        },
        Entry {
            section: "step",
            key: "post_p_pu",
            kind: Kind::Triple(|c| &mut c.step.post_pu),
        },
        num!("step", "t_step_s", Positive, |c| c.step.t_step),
        num!("step", "duration_s", Positive, |c| c.step.duration_s),
        num!("step", "settle_band", Positive, |c| c.step.settle.band_frac),
        num!("step", "settle_floor_pu", NonNegative, |c| c
            .step
            .settle
            .band_abs),
        num!("step", "settle_window_s", Positive, |c| c
            .step
            .settle
            .final_window_s),
        text!(
            "sweep",
            "puf_points",
            |c, raw| {
                let v = parse_list(raw)?;
                if let Some(p) = v.iter().find(|p| !(0.0..=0.7).contains(*p)) {
                    return Err(format!("sweep point {p} outside [0, 0.7]"));
                }
                if v.windows(2).any(|w| w[1] <= w[0]) {
                    return Err("sweep points must be strictly increasing".into());
                }
                c.sweep.puf_points = v;
                Ok(())
            },
            |c| Some(join(&c.sweep.puf_points))
        ),
        num!("sweep", "p_avg_pu", NonNegative, |c| c.sweep.p_avg_pu),
        num!("sweep", "min_duration_s", Positive, |c| c
            .sweep
            .min_duration_s),
        num!("sweep", "max_duration_s", Positive, |c| c
            .sweep
            .max_duration_s),
        num!("sweep", "vuf_tolerance", Positive, |c| c
            .sweep
            .vuf_tolerance),
        text!(
            "profile",
            "path",
            |c, raw| {
                c.profile.path = Some(PathBuf::from(raw));
                Ok(())
            },
            |c| c.profile.path.as_ref().map(|p| p.display().to_string())
        ),
        num!("profile", "dwell_s", Positive, |c| c.profile.dwell_s),
        num!("profile", "max_phase_pu", Positive, |c| c
            .profile
            .max_phase_pu),
        text!(
            "output",
            "dir",
            |c, raw| {
                c.output_dir = Some(PathBuf::from(raw));
                Ok(())
            },
            |c| c.output_dir.as_ref().map(|p| p.display().to_string())
        ),
    ]
}

/// Reads and validates a config file. Relative paths inside it are resolved
/// against the file's directory.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cfg = parse_config_str(&text, path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [cfg.profile.path.as_mut(), cfg.output_dir.as_mut()]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

/// Parses config text; `origin` only labels diagnostics.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<Config> {
    let table = entries();
    let mut cfg = Config::default();
    let mut section = String::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let err = |line: usize, key: &str, message: String| Error::ConfigEntry {
        path: origin.to_path_buf(),
        line,
        key: key.to_string(),
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, line, "unterminated section header".into()))?
                .trim();
            if !table.iter().any(|e| e.section == name) || name.is_empty() {
                return Err(err(line_no, name, "unknown section".into()));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, line, "expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let entry = table
            .iter()
            .find(|e| e.section == section && e.key == key)
            .ok_or_else(|| {
                let msg = if section.is_empty() {
                    "unknown key outside any section".to_string()
                } else {
                    format!("unknown key in [{section}]")
                };
                err(line_no, key, msg)
            })?;
        if let Some(prev) = seen.insert((section.clone(), key.to_string()), line_no) {
            return Err(err(
                line_no,
                key,
                format!("duplicate key (first set on line {prev})"),
            ));
        }
        entry
            .kind
            .set(&mut cfg, value)
            .map_err(|m| err(line_no, key, m))?;
    }
    let line_of = |s: &str, k: &str| {
        seen.get(&(s.to_string(), k.to_string()))
            .copied()
            .unwrap_or(0)
    };
    if cfg.sweep.min_duration_s > cfg.sweep.max_duration_s {
        return Err(err(
            line_of("sweep", "min_duration_s").max(line_of("sweep", "max_duration_s")),
            "min_duration_s",
            "must not exceed max_duration_s".into(),
        ));
    }
    if cfg.step.t_step > cfg.step.duration_s {
        return Err(err(
            line_of("step", "t_step_s").max(line_of("step", "duration_s")),
            "t_step_s",
            "must not exceed duration_s".into(),
        ));
    }
    if let Err(e) = crate::sequence::samples_per_cycle(cfg.network.bases.f_hz, cfg.dt) {
        return Err(err(line_of("system", "dt_s"), "dt_s", e.to_string()));
    }
    cfg.network.validate()?;
    Ok(cfg)
}

/// Writes `contents` next to `path` and renames it into place, so readers
/// never see a half-written file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(format!("renaming into {}", path.display()), e)
    })
}

/// 17 significant digits; parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn csv_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    let header = r
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn field_f64(rec: &csv::StringRecord, i: usize, what: &str) -> Result<f64> {
    let s = rec
        .get(i)
        .ok_or_else(|| Error::Format(format!("missing column {i} ({what})")))?;
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("`{s}` is not a number ({what})")))
}

/// `t_s` then every channel in order.
pub fn write_timeseries(ts: &TimeSeries, path: &Path) -> Result<()> {
    let mut header = vec!["t_s"];
    header.extend(ts.names.iter().map(String::as_str));
    let rows = (0..ts.len()).map(|k| {
        std::iter::once(fmt_f64(ts.time(k)))
            .chain(ts.data.iter().map(|c| fmt_f64(c[k])))
            .collect()
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn read_timeseries(path: &Path) -> Result<TimeSeries> {
    let (header, rows) = csv_records(path)?;
    if header.first().map(String::as_str) != Some("t_s") {
        return Err(Error::Format(format!(
            "{}: first column must be t_s",
            path.display()
        )));
    }
    let names: Vec<String> = header[1..].to_vec();
    let mut ts = TimeSeries::new(0.0, names);
    let mut t = Vec::with_capacity(rows.len());
    for rec in &rows {
        t.push(field_f64(rec, 0, "t_s")?);
        for (i, col) in ts.data.iter_mut().enumerate() {
            col.push(field_f64(rec, i + 1, &header[i + 1])?);
        }
    }
    ts.dt = if t.len() > 1 { t[1] - t[0] } else { 0.0 };
    Ok(ts)
}

/// `config,puf,vuf` in canonical topology order. Convergence flags are not
/// written; read-back points are marked converged.
pub fn write_sweep(sr: &SweepResult, path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for t in Topology::ALL {
        if let Some(c) = sr.curve(t) {
            for p in &c.points {
                rows.push(vec![
                    t.name().to_string(),
                    format!("{}", p.puf),
                    fmt_f64(p.vuf),
                ]);
            }
        }
    }
    write_atomic(path, &csv_bytes(&["config", "puf", "vuf"], rows)?)
}

pub fn read_sweep(path: &Path) -> Result<SweepResult> {
    let (_, rows) = csv_records(path)?;
    let mut curves: Vec<SweepCurve> = Vec::new();
    for rec in &rows {
        let name = rec.get(0).unwrap_or("");
        let t = Topology::from_name(name)
            .ok_or_else(|| Error::Format(format!("unknown configuration `{name}`")))?;
        let point = SweepPoint {
            puf: field_f64(rec, 1, "puf")?,
            vuf: field_f64(rec, 2, "vuf")?,
            converged: true,
        };
        match curves.iter_mut().find(|c| c.topology == t) {
            Some(c) => c.points.push(point),
            None => curves.push(SweepCurve {
                topology: t,
                points: vec![point],
            }),
        }
    }
    Ok(SweepResult { curves })
}

const NOT_SETTLED: &str = "not-settled";

pub fn write_step_metrics(rows: &[(Scheme, StepMetrics)], path: &Path) -> Result<()> {
    let header = [
        "scheme",
        "settling_time_s",
        "peak_rms_pu",
        "peak_neg_pu",
        "residual_neg_pu",
        "residual_zero_pu",
        "v_pos_pu",
        "v_neg_pu",
        "v_zero_pu",
        "i_pos_pu",
        "i_neg_pu",
        "i_zero_pu",
        "p_a_pu",
        "p_b_pu",
        "p_c_pu",
    ];
    let rows = rows.iter().map(|(s, m)| {
        let mut r = vec![
            s.name().to_string(),
            m.settling_time_s.map_or(NOT_SETTLED.to_string(), fmt_f64),
        ];
        r.extend(
            [
                m.peak_rms_pu,
                m.peak_neg_pu,
                m.residual_neg_pu,
                m.residual_zero_pu,
            ]
            .into_iter()
            .chain(m.v_seq)
            .chain(m.i_seq)
            .chain(m.p)
            .map(fmt_f64),
        );
        r
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn write_profile_results(rows: &[IntervalResult], path: &Path) -> Result<()> {
    let header = [
        "interval",
        "net_p_a_pu",
        "net_p_b_pu",
        "net_p_c_pu",
        "puf",
        "vuf",
        "flagged",
    ];
    let rows = rows.iter().map(|r| {
        let mut v = vec![r.interval.to_string()];
        v.extend(r.net_pu.iter().map(|x| fmt_f64(*x)));
        v.extend([fmt_f64(r.puf), fmt_f64(r.vuf), r.flagged.to_string()]);
        v
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

const PROFILE_COLUMNS: [&str; 7] = [
    "interval",
    "load_p_a_w",
    "load_p_b_w",
    "load_p_c_w",
    "pv_p_a_w",
    "pv_p_b_w",
    "pv_p_c_w",
];

pub fn parse_profile(text: &str) -> Result<Vec<ProfileInterval>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != PROFILE_COLUMNS {
        return Err(Error::Format(format!(
            "profile header must be `{}`",
            PROFILE_COLUMNS.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let interval = rec[0]
            .parse::<u32>()
            .map_err(|_| Error::Format(format!("`{}` is not an interval index", &rec[0])))?;
        let mut v = [0.0; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = field_f64(&rec, k + 1, PROFILE_COLUMNS[k + 1])?;
            if !slot.is_finite() {
                return Err(Error::Format(format!(
                    "non-finite power in interval {interval}"
                )));
            }
        }
        out.push(ProfileInterval {
            interval,
            load_w: [v[0], v[1], v[2]],
            pv_w: [v[3], v[4], v[5]],
        });
    }
    Ok(out)
}

pub fn read_profile(path: &Path) -> Result<Vec<ProfileInterval>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_profile(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Trace {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }

    /// Pairs `x` and `y`, skipping samples where either is NaN.
    pub fn from_xy(name: impl Into<String>, x: &[f64], y: &[f64]) -> Self {
        Self::new(
            name,
            x.iter()
                .zip(y)
                .filter(|(a, b)| !a.is_nan() && !b.is_nan())
                .map(|(a, b)| (*a, *b))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    /// Draw markers at every point as well as the line.
    pub markers: bool,
}

impl Default for ChartStyle {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "x".into(),
            y_label: "y".into(),
            width: 800,
            height: 480,
            markers: false,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Round tick step covering `span` in about five intervals.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let n = raw / mag;
    let m = if n < 1.5 {
        1.0
    } else if n < 3.5 {
        2.0
    } else if n < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn axis_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        (lo - pad, hi + pad)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders the chart as SVG text.
pub fn chart_svg(traces: &[Trace], style: &ChartStyle) -> Result<String> {
    if traces.is_empty() || traces.iter().all(|t| t.points.is_empty()) {
        return Err(Error::Format("chart has no data".into()));
    }
    for t in traces {
        if t.points
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::Format(format!(
                "trace `{}` has non-finite data",
                t.name
            )));
        }
    }
    let pts = traces.iter().flat_map(|t| t.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = axis_range(x0, x1);
    let (y0, y1) = axis_range(y0, y1);
    let (w, h) = (style.width as f64, style.height as f64);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !style.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            xml_escape(&style.title)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let ticks = |lo: f64, hi: f64, horizontal: bool, s: &mut String| {
        let step = tick_step(hi - lo);
        let mut k = (lo / step).ceil();
        while k * step <= hi + step * 1e-9 {
            let v = k * step;
            let label = format!("{}", (v / step).round() * step);
            let label = if label.len() > 10 {
                format!("{v:.3e}")
            } else {
                label
            };
            if horizontal {
                let x = sx(v);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
                    top + ph,
                    top + ph + 5.0,
                    top + ph + 18.0
                );
            } else {
                let y = sy(v);
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{label}</text>"#,
                    left - 5.0,
                    left - 8.0,
                    y + 4.0
                );
            }
            k += 1.0;
        }
    };
    ticks(x0, x1, true, &mut s);
    ticks(y0, y1, false, &mut s);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        xml_escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        xml_escape(&style.y_label)
    );
    for (i, t) in traces.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = t
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        if style.markers {
            for c in &coords {
                let (cx, cy) = c.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
            }
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            xml_escape(&t.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders and writes the chart; nothing is written if rendering fails.
pub fn render_chart(traces: &[Trace], style: &ChartStyle, path: &Path) -> Result<()> {
    let svg = chart_svg(traces, style)?;
    write_atomic(path, svg.as_bytes())
}

/// Keeps every `every`-th sample so charts stay small.
fn decimated(ts: &TimeSeries, name: &str, every: usize) -> Result<Trace> {
    let y = ts
        .channel(name)
        .ok_or_else(|| Error::Config(format!("channel `{name}` not recorded")))?;
    let t = ts.times();
    let idx = (0..y.len()).step_by(every.max(1));
    let (x, y): (Vec<f64>, Vec<f64>) = idx.map(|k| (t[k], y[k])).unzip();
    Ok(Trace::from_xy(name, &x, &y))
}

fn renamed(mut t: Trace, name: String) -> Trace {
    t.name = name;
    t
}

/// `srf.csv`, `rrf.csv`, `metrics.csv` and, with `svg`, `step_neg.svg` and
/// `step_rms.svg`. Returns the files written.
pub fn write_step_outputs(cmp: &StepComparison, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (name, ts) in [("srf.csv", &cmp.srf), ("rrf.csv", &cmp.rrf)] {
        let p = dir.join(name);
        write_timeseries(ts, &p)?;
        out.push(p);
    }
    let p = dir.join("metrics.csv");
    write_step_metrics(
        &[
            (Scheme::Srf, cmp.srf_metrics),
            (Scheme::Rrf, cmp.rrf_metrics),
        ],
        &p,
    )?;
    out.push(p);
    if svg {
        let every = 10;
        let runs = [(Scheme::Srf, &cmp.srf), (Scheme::Rrf, &cmp.rrf)];
        let mut neg = Vec::new();
        let mut rms = Vec::new();
        for (scheme, ts) in runs {
            neg.push(renamed(
                decimated(ts, "v_neg", every)?,
                format!("{} |V-|", scheme.name()),
            ));
            for ph in ["a", "b", "c"] {
                let t = decimated(ts, &format!("v_rms_{ph}"), every)?;
                rms.push(renamed(t, format!("{} V{ph} rms", scheme.name())));
            }
        }
        let charts = [
            (
                "step_neg.svg",
                neg,
                "Negative-sequence PCC voltage",
                "|V-| (pu)",
            ),
            ("step_rms.svg", rms, "PCC phase voltage RMS", "RMS (pu)"),
        ];
        for (file, traces, title, y) in charts {
            let p = dir.join(file);
            let style = ChartStyle {
                title: title.into(),
                x_label: "time (s)".into(),
                y_label: y.into(),
                ..ChartStyle::default()
            };
            render_chart(&traces, &style, &p)?;
            out.push(p);
        }
    }
    Ok(out)
}

/// `sweep.csv` and, with `svg`, `sweep.svg`.
pub fn write_sweep_outputs(sr: &SweepResult, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let p = dir.join("sweep.csv");
    write_sweep(sr, &p)?;
    let mut out = vec![p];
    if svg {
        let traces: Vec<Trace> = Topology::ALL
            .iter()
            .filter_map(|&t| sr.curve(t))
            .map(|c| {
                Trace::new(
                    c.topology.name(),
                    c.points
                        .iter()
                        .map(|p| (p.puf * 100.0, p.vuf * 100.0))
                        .collect(),
                )
            })
            .collect();
        let style = ChartStyle {
            title: "VUF against PUF".into(),
            x_label: "PUF (%)".into(),
            y_label: "VUF (%)".into(),
            markers: true,
            ..ChartStyle::default()
        };
        let p = dir.join("sweep.svg");
        render_chart(&traces, &style, &p)?;
        out.push(p);
    }
    Ok(out)
}

/// `profile.csv` (one row per interval) and, with `svg`, `profile.svg`.
pub fn write_profile_outputs(res: &ProfileResult, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let p = dir.join("profile.csv");
    write_profile_results(&res.intervals, &p)?;
    let mut out = vec![p];
    if svg {
        let pts = |f: fn(&IntervalResult) -> f64| {
            res.intervals
                .iter()
                .map(|r| (r.interval as f64, f(r) * 100.0))
                .collect()
        };
        let traces = [
            Trace::new("PUF", pts(|r| r.puf)),
            Trace::new("VUF", pts(|r| r.vuf)),
        ];
        let style = ChartStyle {
            title: "Interval-end PUF and VUF".into(),
            x_label: "interval".into(),
            y_label: "%".into(),
            markers: true,
            ..ChartStyle::default()
        };
        let p = dir.join("profile.svg");
        render_chart(&traces, &style, &p)?;
        out.push(p);
    }
    Ok(out)
}
