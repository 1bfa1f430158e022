use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Anchor, Schedule, ScheduleSpec};

/// Loose schedule parameters as they arrive from a CLI or config file.
/// Unset fields fall back to the synthetic-experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleArgs {
    pub q: Option<f64>,
    pub mu: Option<f64>,
    pub t_lm: Option<f64>,
    pub m_th: Option<f64>,
    pub c: Option<f64>,
    pub zeta: Option<f64>,
    pub anchor: Option<Anchor>,
}

impl ScheduleArgs {
    pub const DEFAULT_Q: f64 = 3e-4;
    pub const DEFAULT_MU_UNIFORM: f64 = 0.6;
    pub const DEFAULT_T_LM: f64 = 5.0;
    pub const DEFAULT_MU_LAST_MINUTE: f64 = 2.38;
    pub const DEFAULT_M_TH: f64 = 0.7;
    pub const DEFAULT_C: f64 = 5.0;
    pub const DEFAULT_ZETA: f64 = 5.0;
}

pub type ScheduleCtor = fn(&ScheduleArgs) -> Result<Box<dyn Schedule>>;

/// Name → constructor table for schedules.
#[derive(Clone)]
pub struct ScheduleRegistry {
    ctors: BTreeMap<String, ScheduleCtor>,
}

impl std::fmt::Debug for ScheduleRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.ctors.keys()).finish()
    }
}

fn memorize(a: &ScheduleArgs) -> Result<Box<dyn Schedule>> {
    ScheduleSpec::Memorize {
        q: a.q.unwrap_or(ScheduleArgs::DEFAULT_Q),
    }
    .build()
}

fn uniform(a: &ScheduleArgs) -> Result<Box<dyn Schedule>> {
    ScheduleSpec::Uniform {
        mu: a.mu.unwrap_or(ScheduleArgs::DEFAULT_MU_UNIFORM),
    }
    .build()
}

fn last_minute(a: &ScheduleArgs) -> Result<Box<dyn Schedule>> {
    ScheduleSpec::LastMinute {
        t_lm: a.t_lm.unwrap_or(ScheduleArgs::DEFAULT_T_LM),
        mu: a.mu.unwrap_or(ScheduleArgs::DEFAULT_MU_LAST_MINUTE),
    }
    .build()
}

fn threshold(a: &ScheduleArgs) -> Result<Box<dyn Schedule>> {
    ScheduleSpec::Threshold {
        m_th: a.m_th.unwrap_or(ScheduleArgs::DEFAULT_M_TH),
        c: a.c.unwrap_or(ScheduleArgs::DEFAULT_C),
        zeta: a.zeta.unwrap_or(ScheduleArgs::DEFAULT_ZETA),
        anchor: a.anchor.unwrap_or_default(),
    }
    .build()
}

impl Default for ScheduleRegistry {
    fn default() -> Self {
        let mut r = ScheduleRegistry::empty();
        r.register("memorize", memorize);
        r.register("uniform", uniform);
        r.register("last_minute", last_minute);
        r.register("threshold", threshold);
        r
    }
}

impl ScheduleRegistry {
    pub fn empty() -> Self {
        ScheduleRegistry {
            ctors: BTreeMap::new(),
        }
    }

    fn key(name: &str) -> String {
        name.trim().to_ascii_lowercase().replace('-', "_")
    }

    /// Registers (or replaces) a constructor under `name`.
    pub fn register(&mut self, name: &str, ctor: ScheduleCtor) {
        self.ctors.insert(Self::key(name), ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ctors.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ctors.contains_key(&Self::key(name))
    }

    pub fn create(&self, name: &str, args: &ScheduleArgs) -> Result<Box<dyn Schedule>> {
        let ctor = self
            .ctors
            .get(&Self::key(name))
            .ok_or_else(|| Error::UnknownSchedule(name.to_string()))?;
        ctor(args)
    }
}
