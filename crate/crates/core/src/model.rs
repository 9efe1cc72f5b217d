//! Appliances, households, and demand profiles.
//!
//! A household owns one or more appliances, each of which must run exactly
//! once inside its own window of slots. Interruptible appliances occupy any
//! `duration`-sized subset of the window at constant power; non-interruptible
//! appliances run a fixed consecutive power profile from a chosen start slot.
//! A joint choice over all appliances yields the household's demand profile
//! across the horizon. The household feasible set is the Cartesian product of
//! the per-appliance choice sets: there are no inter-appliance constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Consecutive scheduling slots `start_slot ..= start_slot + num_slots - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeHorizon {
    pub start_slot: usize,
    pub num_slots: usize,
    /// Wall-clock length of one slot in hours. Informational only; no
    /// computation depends on it.
    pub slot_hours: f64,
}

impl TimeHorizon {
    pub fn new(start_slot: usize, num_slots: usize, slot_hours: f64) -> Self {
        TimeHorizon { start_slot, num_slots, slot_hours }
    }

    pub fn last_slot(&self) -> usize {
        self.start_slot + self.num_slots - 1
    }

    pub fn contains(&self, slot: usize) -> bool {
        slot >= self.start_slot && slot <= self.last_slot()
    }

    /// Index of `slot` within the horizon's value vectors.
    pub fn offset_of(&self, slot: usize) -> usize {
        debug_assert!(self.contains(slot));
        slot - self.start_slot
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_slots == 0 {
            return Err(ModelError::InvalidHorizon("horizon must have at least one slot".into()));
        }
        if !(self.slot_hours.is_finite() && self.slot_hours > 0.0) {
            return Err(ModelError::InvalidHorizon(format!(
                "slot_hours must be finite and positive, got {}",
                self.slot_hours
            )));
        }
        Ok(())
    }
}

/// Inclusive range of slots an appliance may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRange {
    pub first: usize,
    pub last: usize,
}

impl SlotRange {
    pub fn new(first: usize, last: usize) -> Self {
        SlotRange { first, last }
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    pub fn contains(&self, slot: usize) -> bool {
        slot >= self.first && slot <= self.last
    }
}

/// How an appliance consumes energy once started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ApplianceKind {
    /// Runs a fixed consecutive per-slot energy profile from a chosen start
    /// slot; cannot be paused (dishwasher, washing machine).
    NonInterruptible { profile: Vec<f64> },
    /// Runs for `duration` slots anywhere in the window, `power` energy per
    /// active slot; may pause and resume freely (EV charging, pool pump).
    Interruptible { duration: usize, power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appliance {
    pub id: u32,
    pub window: SlotRange,
    pub kind: ApplianceKind,
}

impl Appliance {
    /// Number of slots the appliance is active.
    pub fn duration(&self) -> usize {
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => profile.len(),
            ApplianceKind::Interruptible { duration, .. } => *duration,
        }
    }

    /// Total energy drawn over the horizon, identical for every valid choice.
    pub fn total_energy(&self) -> f64 {
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => profile.iter().sum(),
            ApplianceKind::Interruptible { duration, power } => *duration as f64 * power,
        }
    }

    /// Largest per-slot energy the appliance can draw.
    pub fn peak_power(&self) -> f64 {
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => {
                profile.iter().copied().fold(0.0, f64::max)
            }
            ApplianceKind::Interruptible { power, .. } => *power,
        }
    }

    /// Squared norm of the appliance's own demand vector, identical for every
    /// valid choice (slots shift, values do not).
    pub fn norm_sq(&self) -> f64 {
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => {
                profile.iter().map(|q| q * q).sum()
            }
            ApplianceKind::Interruptible { duration, power } => {
                *duration as f64 * power * power
            }
        }
    }

    /// Number of distinct choices, saturating instead of overflowing.
    pub fn choice_count(&self) -> u128 {
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => {
                (self.window.len() - profile.len() + 1) as u128
            }
            ApplianceKind::Interruptible { duration, .. } => {
                binomial(self.window.len() as u128, *duration as u128)
            }
        }
    }

    /// All choices in lexicographic encoding order (ascending start slots;
    /// slot subsets in ascending lexicographic order). Intended for capped
    /// exhaustive enumeration; callers must check `choice_count` first.
    pub fn choices(&self) -> Vec<ChoiceDecision> {
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => {
                (self.window.first..=self.window.last + 1 - profile.len())
                    .map(ChoiceDecision::Start)
                    .collect()
            }
            ApplianceKind::Interruptible { duration, .. } => {
                use itertools::Itertools;
                (self.window.first..=self.window.last)
                    .combinations(*duration)
                    .map(ChoiceDecision::Slots)
                    .collect()
            }
        }
    }

    pub fn validate(&self, horizon: &TimeHorizon) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidAppliance {
            appliance_id: self.id,
            reason,
        };
        if self.window.is_empty() {
            return Err(invalid(format!(
                "window [{}, {}] is empty",
                self.window.first, self.window.last
            )));
        }
        if !horizon.contains(self.window.first) || !horizon.contains(self.window.last) {
            return Err(invalid(format!(
                "window [{}, {}] extends outside horizon [{}, {}]",
                self.window.first,
                self.window.last,
                horizon.start_slot,
                horizon.last_slot()
            )));
        }
        match &self.kind {
            ApplianceKind::NonInterruptible { profile } => {
                if profile.is_empty() {
                    return Err(invalid("profile must not be empty".into()));
                }
                if profile.len() > self.window.len() {
                    return Err(invalid(format!(
                        "profile length {} exceeds window length {}",
                        profile.len(),
                        self.window.len()
                    )));
                }
                if let Some(q) = profile.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
                    return Err(invalid(format!("profile entries must be positive, got {q}")));
                }
            }
            ApplianceKind::Interruptible { duration, power } => {
                if *duration == 0 || *duration > self.window.len() {
                    return Err(invalid(format!(
                        "duration {} must lie in [1, {}]",
                        duration,
                        self.window.len()
                    )));
                }
                if !(power.is_finite() && *power > 0.0) {
                    return Err(invalid(format!("power must be positive, got {power}")));
                }
            }
        }
        Ok(())
    }
}

/// A household and the appliances it must schedule exactly once each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSpec {
    pub id: u32,
    pub appliances: Vec<Appliance>,
}

impl HouseholdSpec {
    /// Size of the joint choice space, saturating instead of overflowing.
    pub fn joint_choice_count(&self) -> u128 {
        self.appliances
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.choice_count()))
    }

    pub fn validate(&self, horizon: &TimeHorizon) -> Result<(), ModelError> {
        if self.appliances.is_empty() {
            return Err(ModelError::InvalidHousehold {
                household_id: self.id,
                reason: "household must own at least one appliance".into(),
            });
        }
        for (i, appliance) in self.appliances.iter().enumerate() {
            appliance.validate(horizon)?;
            if self.appliances[..i].iter().any(|other| other.id == appliance.id) {
                return Err(ModelError::InvalidHousehold {
                    household_id: self.id,
                    reason: format!("duplicate appliance id {}", appliance.id),
                });
            }
        }
        Ok(())
    }
}

/// Per-slot energy over the horizon; entries are nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandProfile(Vec<f64>);

impl DemandProfile {
    pub fn zeros(num_slots: usize) -> Self {
        DemandProfile(vec![0.0; num_slots])
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ModelError::NegativeDemand(*v));
        }
        Ok(DemandProfile(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise accumulate; lengths must agree.
    pub fn add_assign(&mut self, other: &DemandProfile) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(self.0.len(), other.len());
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        DemandProfile(values)
    }
}

/// A concrete decision for one appliance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceDecision {
    /// Start slot for a non-interruptible appliance.
    Start(usize),
    /// Strictly increasing active slots for an interruptible appliance.
    Slots(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplianceChoice {
    pub appliance_id: u32,
    pub decision: ChoiceDecision,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid choice for appliance {appliance_id}: {reason}")]
    InvalidChoice { appliance_id: u32, reason: String },
    #[error("missing choice{}", fmt_missing(.appliance_id))]
    MissingChoice { appliance_id: Option<u32> },
    #[error("more than one choice provided for appliance {appliance_id}")]
    DuplicateChoice { appliance_id: u32 },
    #[error("choice references unknown appliance {appliance_id}")]
    UnknownAppliance { appliance_id: u32 },
    #[error("invalid appliance {appliance_id}: {reason}")]
    InvalidAppliance { appliance_id: u32, reason: String },
    #[error("invalid household {household_id}: {reason}")]
    InvalidHousehold { household_id: u32, reason: String },
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),
    #[error("demand entries must be finite and nonnegative, got {0}")]
    NegativeDemand(f64),
}

fn fmt_missing(appliance_id: &Option<u32>) -> String {
    match appliance_id {
        Some(id) => format!(" for appliance {id}"),
        None => " (household has no appliances)".to_string(),
    }
}

/// Demand profile produced by one appliance under one choice: the appliance's
/// power placed at the chosen slots, zero elsewhere.
pub fn choice_demand(
    appliance: &Appliance,
    choice: &ApplianceChoice,
    horizon: &TimeHorizon,
) -> Result<DemandProfile, ModelError> {
    if choice.appliance_id != appliance.id {
        return Err(ModelError::UnknownAppliance {
            appliance_id: choice.appliance_id,
        });
    }
    let invalid = |reason: String| ModelError::InvalidChoice {
        appliance_id: appliance.id,
        reason,
    };
    let mut values = vec![0.0; horizon.num_slots];
    match (&appliance.kind, &choice.decision) {
        (ApplianceKind::NonInterruptible { profile }, ChoiceDecision::Start(start)) => {
            let end = start + profile.len() - 1;
            if *start < appliance.window.first || end > appliance.window.last {
                return Err(invalid(format!(
                    "start {} runs through slot {}, outside window [{}, {}]",
                    start, end, appliance.window.first, appliance.window.last
                )));
            }
            for (j, q) in profile.iter().enumerate() {
                values[horizon.offset_of(start + j)] = *q;
            }
        }
        (ApplianceKind::Interruptible { duration, power }, ChoiceDecision::Slots(slots)) => {
            if slots.len() != *duration {
                return Err(invalid(format!(
                    "{} slots chosen, appliance needs exactly {}",
                    slots.len(),
                    duration
                )));
            }
            for (i, &slot) in slots.iter().enumerate() {
                if i > 0 && slots[i - 1] >= slot {
                    return Err(invalid(format!(
                        "slots must be strictly increasing, got {slot} after {}",
                        slots[i - 1]
                    )));
                }
                if !appliance.window.contains(slot) {
                    return Err(invalid(format!(
                        "slot {} outside window [{}, {}]",
                        slot, appliance.window.first, appliance.window.last
                    )));
                }
                values[horizon.offset_of(slot)] = *power;
            }
        }
        _ => {
            return Err(invalid("decision kind does not match appliance kind".into()));
        }
    }
    Ok(DemandProfile(values))
}

/// Household demand under a joint choice: the elementwise sum of each
/// appliance's contribution. Requires exactly one choice per appliance.
pub fn household_demand(
    spec: &HouseholdSpec,
    choices: &[ApplianceChoice],
    horizon: &TimeHorizon,
) -> Result<DemandProfile, ModelError> {
    if spec.appliances.is_empty() {
        return Err(ModelError::MissingChoice { appliance_id: None });
    }
    for choice in choices {
        if !spec.appliances.iter().any(|a| a.id == choice.appliance_id) {
            return Err(ModelError::UnknownAppliance {
                appliance_id: choice.appliance_id,
            });
        }
    }
    let mut total = DemandProfile::zeros(horizon.num_slots);
    for appliance in &spec.appliances {
        let mut matched = choices.iter().filter(|c| c.appliance_id == appliance.id);
        let choice = matched.next().ok_or(ModelError::MissingChoice {
            appliance_id: Some(appliance.id),
        })?;
        if matched.next().is_some() {
            return Err(ModelError::DuplicateChoice {
                appliance_id: appliance.id,
            });
        }
        total.add_assign(&choice_demand(appliance, choice, horizon)?);
    }
    Ok(total)
}

/// Smallest achievable ½‖x‖² over the household's joint choices. This scales
/// the proximal smoothing weight: the exact solver is run with zero prices
/// and unit smoothing, whose objective is exactly ½‖x‖² at the optimum.
pub fn prox_constant(spec: &HouseholdSpec, horizon: &TimeHorizon) -> f64 {
    let zeros = vec![0.0; horizon.num_slots];
    crate::solver::solve_household_exact(spec, &zeros, 1.0, horizon).objective
}

pub(crate) fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // Saturate rather than overflow; callers only compare against caps
        // far below this range.
        if acc > u128::MAX / (n - i) {
            return u128::MAX;
        }
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
