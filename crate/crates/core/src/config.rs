//! Run configuration: a flat `key = value` file with `[section]` headers.
//! Unknown keys, duplicate keys and malformed values are errors carrying
//! the line they came from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{ConfigError, SolverError};
use crate::geometry::{build_layered_mesh, CellCounts, DomainLayout, Mesh};
use crate::lifespan::{lifespan_pipeline, AprioriParams, LifespanReport};
use crate::parabolic::{halving_schedule, SimulationConfig, SolverSettings};
use crate::params::{
    validate, HField, InitialConcentration, KappaModel, PhysParams, RegionValues, ValidatedParams,
};
use crate::reaction::KineticsMode;

/// The configuration shipped with the crate.
pub const DEMO_CONFIG: &str = include_str!("../configs/demo.cfg");

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Raw sections in file order of first appearance.
#[derive(Debug, Clone, Default)]
struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const SECTIONS: [&str; 7] = [
    "domain",
    "params",
    "regularization",
    "time",
    "solver",
    "apriori",
    "output",
];

fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig::default();
    let mut current: Option<String> = None;
    for (idx, full) in text.lines().enumerate() {
        let line = idx + 1;
        let body = full.split(['#', ';']).next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: "unterminated section header".into(),
                })?
                .trim()
                .to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("unknown section [{name}]"),
                });
            }
            raw.sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, got `{body}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax {
                line,
                message: format!("bad key `{key}`"),
            });
        }
        let section = current.as_ref().ok_or_else(|| ConfigError::Syntax {
            line,
            message: "key outside of any section".into(),
        })?;
        let map = raw.sections.get_mut(section).expect("section registered");
        if let Some(prev) = map.get(key) {
            return Err(ConfigError::Syntax {
                line,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        }
        map.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
                used: false,
            },
        );
    }
    Ok(raw)
}

/// Typed access that records which keys were read and collects errors.
struct Reader {
    raw: RawConfig,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn entry(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.raw.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.raw
            .sections
            .get(section)
            .is_some_and(|s| s.contains_key(key))
    }

    fn opt<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let (value, line) = self.entry(section, key)?;
        match value.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    message: e.to_string(),
                });
                None
            }
        }
    }

    fn get_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> T
    where
        T::Err: fmt::Display,
    {
        self.opt(section, key).unwrap_or(default)
    }

    fn required<T: FromStr>(&mut self, section: &str, key: &str, fallback: T) -> T
    where
        T::Err: fmt::Display,
    {
        if !self.has(section, key) {
            self.errors
                .push(ConfigError::Missing(format!("{section}.{key}")));
            return fallback;
        }
        self.get_or(section, key, fallback)
    }

    fn bad(&mut self, section: &str, key: &str, message: String) {
        let line = self
            .raw
            .sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|e| e.line)
            .unwrap_or(0);
        self.errors.push(ConfigError::BadValue {
            line,
            key: key.to_string(),
            message,
        });
    }

    /// A per-region value: `name` sets all three, `name_anode` etc. override.
    fn region_values(&mut self, section: &str, name: &str, default: f64) -> RegionValues {
        let base = self.get_or(section, name, default);
        RegionValues {
            anode: self.get_or(section, &format!("{name}_anode"), base),
            separator: self.get_or(section, &format!("{name}_separator"), base),
            cathode: self.get_or(section, &format!("{name}_cathode"), base),
        }
    }

    fn unknown_keys(&mut self) {
        for (section, map) in &self.raw.sections {
            for (key, e) in map {
                if !e.used {
                    self.errors.push(ConfigError::UnknownKey {
                        line: e.line,
                        section: section.clone(),
                        key: key.clone(),
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndTime {
    Fixed(f64),
    /// The T_max of the [apriori] section.
    Lifespan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// t_end divided into this many steps.
    Steps(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpec {
    pub t_end: EndTime,
    pub step: StepSize,
    pub output_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub fields: bool,
    pub diagnostics: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub layout: DomainLayout,
    pub counts: CellCounts,
    pub params: ValidatedParams,
    pub h_anode: f64,
    pub h_cathode: f64,
    pub tau: f64,
    pub mode: KineticsMode,
    pub continuation_levels: usize,
    pub time: TimeSpec,
    pub settings: SolverSettings,
    pub apriori: Option<AprioriParams>,
    pub output: OutputSpec,
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

/// `s:k, s:k, ...` nodes of a tabulated conductivity.
fn parse_table(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected s:k, got `{}`", pair.trim()))?;
            let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            Ok((a, b))
        })
        .collect()
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }

    pub fn demo() -> Self {
        DEMO_CONFIG
            .parse()
            .expect("bundled demo configuration is valid")
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut r = Reader {
            raw,
            errors: Vec::new(),
        };

        let layout = DomainLayout {
            anode: r.required("domain", "anode", 1.0),
            separator: r.required("domain", "separator", 1.0),
            cathode: r.required("domain", "cathode", 1.0),
            transverse: r.opt("domain", "width"),
        };
        let mut counts = CellCounts::new(
            r.required("domain", "cells_anode", 2),
            r.required("domain", "cells_separator", 2),
            r.required("domain", "cells_cathode", 2),
        );
        if let Some(ny) = r.opt::<usize>("domain", "cells_transverse") {
            counts = counts.with_transverse(ny);
        }

        let mut params = PhysParams {
            alpha1: r.get_or("params", "alpha1", 1.0),
            alpha2: r.get_or("params", "alpha2", 1.0),
            alpha3: r.get_or("params", "alpha3", 1.0),
            alpha4: r.get_or("params", "alpha4", 1.0),
            k_bound: r.get_or("params", "k_bound", 1.0),
            u: r.get_or("params", "u", 1.0),
            sigma_anode: r.get_or("params", "sigma_anode", 1.0),
            sigma_cathode: r.get_or("params", "sigma_cathode", 1.0),
            eps_e: r.region_values("params", "eps_e", 1.0),
            diffusivity: r.region_values("params", "diffusivity", 1.0),
            kappa: KappaModel::power_law(1.0, 1.0, 1.0),
            c0: InitialConcentration::PerRegion(r.region_values("params", "c0", 1.0)),
            require_positivity: true,
        };
        if let Some(d) = r.opt::<f64>("params", "d") {
            if r.has("params", "alpha1") {
                r.bad("params", "d", "give either d or alpha1, not both".into());
            } else {
                params.alpha1 = d / params.alpha2;
            }
        }
        if let Some(s) = r.entry("params", "require_positivity") {
            match parse_bool(&s.0) {
                Ok(b) => params.require_positivity = b,
                Err(m) => r.bad("params", "require_positivity", m),
            }
        }
        let kc0 = r.get_or("params", "kappa_c0", 1.0);
        let ka0 = r.get_or("params", "kappa_alpha0", 1.0);
        let knee = r.get_or("params", "kappa_knee", 1.0);
        params.kappa = KappaModel::power_law(kc0, ka0, knee);
        if let Some((text, _)) = r.entry("params", "kappa_table") {
            match parse_table(&text)
                .map_err(ConfigError::from_message)
                .and_then(|pts| KappaModel::table(&pts, kc0, ka0, knee).map_err(ConfigError::from))
            {
                Ok(k) => params.kappa = k,
                Err(e) => r.bad("params", "kappa_table", e.to_string()),
            }
        }
        let h_anode = r.get_or("params", "h_anode", 1.0);
        let h_cathode = r.get_or("params", "h_cathode", 1.0);

        let tau = r.required("regularization", "tau", 1e-3);
        let mut mode = KineticsMode::Regularized;
        if let Some((text, _)) = r.entry("regularization", "kinetics") {
            match text.as_str() {
                "regularized" => {}
                "exact" => mode = KineticsMode::Exact,
                other => r.bad(
                    "regularization",
                    "kinetics",
                    format!("expected regularized or exact, got `{other}`"),
                ),
            }
        }
        let continuation_levels = r.get_or("regularization", "continuation_levels", 3usize);

        let t_end = match r.entry("time", "t_end") {
            Some((v, _)) if v == "tmax" => EndTime::Lifespan,
            Some(_) => EndTime::Fixed(r.get_or("time", "t_end", 1.0)),
            None => {
                r.errors.push(ConfigError::Missing("time.t_end".into()));
                EndTime::Fixed(1.0)
            }
        };
        let step = match (r.opt::<f64>("time", "dt"), r.opt::<usize>("time", "steps")) {
            (Some(_), Some(_)) => {
                r.bad("time", "steps", "give either dt or steps, not both".into());
                StepSize::Steps(1)
            }
            (Some(dt), None) => StepSize::Fixed(dt),
            (None, Some(n)) => StepSize::Steps(n),
            (None, None) => {
                r.errors
                    .push(ConfigError::Missing("time.dt or time.steps".into()));
                StepSize::Steps(1)
            }
        };
        let time = TimeSpec {
            t_end,
            step,
            output_stride: r.get_or("time", "output_stride", 1usize),
        };

        let mut settings = SolverSettings::default();
        let e = &mut settings.elliptic;
        e.tolerance = r.get_or("solver", "potential_tolerance", e.tolerance);
        e.max_iterations = r.get_or("solver", "potential_max_iterations", e.max_iterations);
        e.damping = r.get_or("solver", "damping", e.damping);
        e.linear_tolerance = r.get_or("solver", "linear_tolerance", e.linear_tolerance);
        let c = &mut settings.concentration;
        c.tolerance = r.get_or("solver", "concentration_tolerance", c.tolerance);
        c.max_iterations = r.get_or("solver", "concentration_max_iterations", c.max_iterations);
        settings.outer_tolerance = r.get_or("solver", "outer_tolerance", settings.outer_tolerance);
        settings.max_outer = r.get_or("solver", "max_outer", settings.max_outer);
        settings.relaxation = r.get_or("solver", "relaxation", settings.relaxation);

        let apriori = if r.raw.sections.contains_key("apriori") {
            let n = r.required("apriori", "N", 3u32);
            let q = r.required("apriori", "q", 4.0);
            let d = r.get_or("apriori", "d", params.d());
            let alpha0 = r.get_or("apriori", "alpha0", params.kappa.alpha0);
            let cc = r.required("apriori", "c", 1.0);
            let mut p = AprioriParams::new(n, q, d, alpha0, cc);
            p.m = r.opt("apriori", "m");
            Some(p)
        } else {
            None
        };

        let output = OutputSpec {
            directory: PathBuf::from(r.get_or("output", "directory", String::from("out"))),
            fields: true,
            diagnostics: true,
        };
        let mut output = output;
        for (key, slot) in [
            ("fields", &mut output.fields),
            ("diagnostics", &mut output.diagnostics),
        ] {
            if let Some((text, _)) = r.entry("output", key) {
                match parse_bool(&text) {
                    Ok(b) => *slot = b,
                    Err(m) => r.bad("output", key, m),
                }
            }
        }

        r.unknown_keys();
        if !r.errors.is_empty() {
            return Err(ConfigError::from_list(r.errors));
        }

        layout.validate()?;
        let params = validate(&params, &layout)?;
        if let Some(p) = &apriori {
            p.validate()?;
        }
        let config = RunConfig {
            layout,
            counts,
            params,
            h_anode,
            h_cathode,
            tau,
            mode,
            continuation_levels,
            time,
            settings,
            apriori,
            output,
        };
        config.check_numerics()?;
        Ok(config)
    }

    fn check_numerics(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError::BadValue {
            line: 0,
            key: key.into(),
            message,
        };
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(bad("tau", format!("must lie in (0, 1), got {}", self.tau)));
        }
        let k = self.params.k_bound;
        for (key, h) in [("h_anode", self.h_anode), ("h_cathode", self.h_cathode)] {
            if !(h >= 1.0 / k && h <= k) {
                return Err(bad(key, format!("{h} outside [1/K, K] with K = {k}")));
            }
        }
        match self.time.step {
            StepSize::Fixed(dt) if !(dt > 0.0) => {
                return Err(bad("dt", format!("must be positive, got {dt}")))
            }
            StepSize::Steps(0) => return Err(bad("steps", "must be at least 1".into())),
            _ => {}
        }
        if let EndTime::Fixed(t) = self.time.t_end {
            if !(t > 0.0) {
                return Err(bad("t_end", format!("must be positive, got {t}")));
            }
        }
        if self.time.t_end == EndTime::Lifespan && self.apriori.is_none() {
            return Err(ConfigError::Missing(
                "[apriori] section for t_end = tmax".into(),
            ));
        }
        if self.time.output_stride == 0 {
            return Err(bad("output_stride", "must be at least 1".into()));
        }
        self.settings
            .validate()
            .map_err(|e| bad("solver", e.to_string()))?;
        Ok(())
    }

    pub fn mesh(&self) -> Result<Mesh, ConfigError> {
        Ok(build_layered_mesh(&self.layout, self.counts)?)
    }

    pub fn lifespan(&self) -> Result<LifespanReport, ConfigError> {
        let p = self
            .apriori
            .as_ref()
            .ok_or_else(|| ConfigError::Missing("[apriori] section".into()))?;
        Ok(lifespan_pipeline(p)?)
    }

    pub fn end_time(&self) -> Result<f64, ConfigError> {
        match self.time.t_end {
            EndTime::Fixed(t) => Ok(t),
            EndTime::Lifespan => Ok(self.lifespan()?.tmax),
        }
    }

    pub fn simulation(&self) -> Result<SimulationConfig, ConfigError> {
        let mesh = self.mesh()?;
        let h = HField::per_region(&mesh, self.h_anode, self.h_cathode);
        let t_end = self.end_time()?;
        let dt = match self.time.step {
            StepSize::Fixed(dt) => dt,
            StepSize::Steps(n) => t_end / n as f64,
        };
        Ok(SimulationConfig {
            mesh: Arc::new(mesh),
            params: self.params.inner().clone(),
            h,
            tau: self.tau,
            mode: self.mode,
            dt,
            t_end,
            output_stride: self.time.output_stride,
            settings: self.settings,
            initial: None,
        })
    }

    pub fn continuation_taus(&self) -> Vec<f64> {
        halving_schedule(self.tau, self.continuation_levels.max(2))
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        RunConfig::from_raw(parse_raw(text)?)
    }
}

impl ConfigError {
    fn from_message(message: String) -> Self {
        ConfigError::Syntax { line: 0, message }
    }

    fn from_list(mut errors: Vec<ConfigError>) -> Self {
        if errors.len() == 1 {
            errors.pop().expect("one error")
        } else {
            ConfigError::Several(errors)
        }
    }
}

impl From<SolverError> for ConfigError {
    fn from(e: SolverError) -> Self {
        ConfigError::Syntax {
            line: 0,
            message: e.to_string(),
        }
    }
}
