//! Core types of the assistance-planning formalism: fluents, world states,
//! ground actions, beliefs, the sensor model and the observer belief update.
//!
//! Everything here is an immutable value after construction and every
//! operation is a pure function, so callers may evaluate them concurrently
//! without coordination.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

/// Exact action/plan cost. Rationals keep objective comparisons exact.
pub type Cost = Rational64;

/// Parses an integer, decimal, or fraction literal ("3", "0.25", "3/4")
/// into an exact cost.
pub fn parse_cost(text: &str) -> Option<Cost> {
    let text = text.trim();
    if let Some((numer, denom)) = text.split_once('/') {
        let numer: i64 = numer.trim().parse().ok()?;
        let denom: i64 = denom.trim().parse().ok()?;
        if denom == 0 {
            return None;
        }
        return Some(Cost::new(numer, denom));
    }
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut numer: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut denom: i64 = 1;
    for c in frac_part.chars() {
        numer = numer.checked_mul(10)?.checked_add(c.to_digit(10)? as i64)?;
        denom = denom.checked_mul(10)?;
    }
    if neg {
        numer = -numer;
    }
    Some(Cost::new(numer, denom))
}

/// Renders a cost as "15" or "7/2".
pub fn format_cost(cost: Cost) -> String {
    if cost.is_integer() {
        cost.numer().to_string()
    } else {
        format!("{}/{}", cost.numer(), cost.denom())
    }
}

pub fn cost_to_f64(cost: Cost) -> f64 {
    cost.to_f64().unwrap_or(f64::NAN)
}

/// A ground atom: predicate name plus object arguments.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fluent {
    pub name: String,
    pub args: Vec<String>,
}

impl Fluent {
    pub fn new(name: impl Into<String>, args: &[&str]) -> Self {
        Fluent {
            name: name.into(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }
}

impl fmt::Display for Fluent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {}", a)?;
        }
        write!(f, ")")
    }
}

/// Interned handle for a ground fluent within one problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FluentId(pub u32);

/// Interner mapping ground fluents to dense ids.
#[derive(Clone, Debug, Default)]
pub struct FluentTable {
    fluents: Vec<Fluent>,
    index: HashMap<Fluent, FluentId>,
}

impl FluentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, fluent: Fluent) -> FluentId {
        if let Some(&id) = self.index.get(&fluent) {
            return id;
        }
        let id = FluentId(self.fluents.len() as u32);
        self.index.insert(fluent.clone(), id);
        self.fluents.push(fluent);
        id
    }

    pub fn get(&self, fluent: &Fluent) -> Option<FluentId> {
        self.index.get(fluent).copied()
    }

    pub fn resolve(&self, id: FluentId) -> &Fluent {
        &self.fluents[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.fluents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FluentId, &Fluent)> {
        self.fluents
            .iter()
            .enumerate()
            .map(|(i, f)| (FluentId(i as u32), f))
    }
}

/// Closed-world state: the set of fluents that are true.
///
/// The backing `BTreeSet` gives a canonical ordering, so equal fluent sets
/// compare and hash identically.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorldState(BTreeSet<FluentId>);

impl WorldState {
    pub fn new(fluents: impl IntoIterator<Item = FluentId>) -> Self {
        WorldState(fluents.into_iter().collect())
    }

    pub fn contains(&self, id: FluentId) -> bool {
        self.0.contains(&id)
    }

    /// All fluents in `set` hold in this state.
    pub fn satisfies(&self, set: &BTreeSet<FluentId>) -> bool {
        set.iter().all(|f| self.0.contains(f))
    }

    pub fn iter(&self) -> impl Iterator<Item = FluentId> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn insert(&mut self, id: FluentId) {
        self.0.insert(id);
    }

    fn remove(&mut self, id: FluentId) {
        self.0.remove(&id);
    }
}

/// The observer's epistemic state: a non-empty canonical set of world states.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Belief(BTreeSet<WorldState>);

impl Belief {
    pub fn singleton(state: WorldState) -> Self {
        let mut set = BTreeSet::new();
        set.insert(state);
        Belief(set)
    }

    pub fn from_states(states: impl IntoIterator<Item = WorldState>) -> Result<Self, ModelError> {
        let set: BTreeSet<WorldState> = states.into_iter().collect();
        if set.is_empty() {
            return Err(ModelError::EmptyBelief);
        }
        Ok(Belief(set))
    }

    pub fn contains(&self, state: &WorldState) -> bool {
        self.0.contains(state)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// A singleton belief means full observability at that step.
    pub fn is_singleton(&self) -> bool {
        self.0.len() == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorldState> {
        self.0.iter()
    }
}

/// One `when` clause: condition evaluated against the pre-transition state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionalEffect {
    pub condition: BTreeSet<FluentId>,
    pub add: BTreeSet<FluentId>,
    pub del: BTreeSet<FluentId>,
}

/// Preconditions and effects of one action variant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EffectSpec {
    pub pre: BTreeSet<FluentId>,
    pub add: BTreeSet<FluentId>,
    pub del: BTreeSet<FluentId>,
    pub conditional: Vec<ConditionalEffect>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Actor {
    Robot,
    Human,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Robot => write!(f, "robot"),
            Actor::Human => write!(f, "human"),
        }
    }
}

/// Which effect specification of a ground action to apply: the regular one
/// driving the true state, or the belief-annotated one driving the observer's
/// belief progression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Base,
    Belief,
}

/// An actor-tagged ground action. `belief` equals `base` when the domain
/// declares no belief-annotated variant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundAction {
    pub actor: Actor,
    pub name: String,
    pub args: Vec<String>,
    pub base: EffectSpec,
    pub belief: EffectSpec,
    pub cost: Cost,
}

impl GroundAction {
    pub fn effects(&self, variant: Variant) -> &EffectSpec {
        match variant {
            Variant::Base => &self.base,
            Variant::Belief => &self.belief,
        }
    }

    /// Deterministic ordering key: name, then arguments.
    pub fn signature(&self) -> (&str, &[String]) {
        (&self.name, &self.args)
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {}", a)?;
        }
        write!(f, ")")
    }
}

/// Applies the regular (true-state) variant of an action.
///
/// The result is `state ∪ add \ del`, then each conditional effect whose
/// condition holds in the original state contributes its add/del.
pub fn apply(state: &WorldState, action: &GroundAction) -> Result<WorldState, ModelError> {
    apply_variant(state, action, Variant::Base)
}

pub fn apply_variant(
    state: &WorldState,
    action: &GroundAction,
    variant: Variant,
) -> Result<WorldState, ModelError> {
    let spec = action.effects(variant);
    if !state.satisfies(&spec.pre) {
        return Err(ModelError::Inapplicable {
            action: action.to_string(),
        });
    }
    let mut result = state.clone();
    for &f in &spec.add {
        result.insert(f);
    }
    for &f in &spec.del {
        result.remove(f);
    }
    for cond in &spec.conditional {
        if state.satisfies(&cond.condition) {
            for &f in &cond.add {
                result.insert(f);
            }
            for &f in &cond.del {
                result.remove(f);
            }
        }
    }
    Ok(result)
}

/// Interned handle for an observation symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ObsId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationSymbol {
    pub token: String,
    pub is_null: bool,
}

/// One sensor rule. `args = None` matches any grounding of the named action;
/// `Some` requires the exact argument tuple. The state condition is checked
/// against the resulting (post-transition) state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorRule {
    pub action_name: String,
    pub args: Option<Vec<String>>,
    pub condition: BTreeSet<FluentId>,
    pub symbol: ObsId,
}

impl SensorRule {
    fn matches(&self, action: &GroundAction, resulting_state: &WorldState) -> bool {
        if action.name != self.action_name {
            return false;
        }
        if let Some(args) = &self.args {
            if args != &action.args {
                return false;
            }
        }
        resulting_state.satisfies(&self.condition)
    }
}

/// Total mapping from (action, resulting state) pairs to observation symbols:
/// first matching rule wins, otherwise the default symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorModel {
    symbols: Vec<ObservationSymbol>,
    rules: Vec<SensorRule>,
    default: ObsId,
    null: ObsId,
}

impl SensorModel {
    pub fn new(
        symbols: Vec<ObservationSymbol>,
        rules: Vec<SensorRule>,
        default: ObsId,
    ) -> Result<Self, ModelError> {
        let nulls: Vec<ObsId> = symbols
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_null)
            .map(|(i, _)| ObsId(i as u32))
            .collect();
        let null = match nulls.as_slice() {
            [one] => *one,
            [] => return Err(ModelError::NoNullSymbol),
            _ => return Err(ModelError::MultipleNullSymbols),
        };
        if default.0 as usize >= symbols.len() {
            return Err(ModelError::UnknownSymbol(default));
        }
        for rule in &rules {
            if rule.symbol.0 as usize >= symbols.len() {
                return Err(ModelError::UnknownSymbol(rule.symbol));
            }
        }
        Ok(SensorModel {
            symbols,
            rules,
            default,
            null,
        })
    }

    pub fn null_id(&self) -> ObsId {
        self.null
    }

    pub fn default_id(&self) -> ObsId {
        self.default
    }

    pub fn is_null(&self, id: ObsId) -> bool {
        id == self.null
    }

    pub fn symbol(&self, id: ObsId) -> &ObservationSymbol {
        &self.symbols[id.0 as usize]
    }

    pub fn symbols(&self) -> &[ObservationSymbol] {
        &self.symbols
    }

    pub fn rules(&self) -> &[SensorRule] {
        &self.rules
    }

    /// Drops every rule for the named action. Used by ablation experiments
    /// that silence a legible action.
    pub fn without_rules_for(&self, action_name: &str) -> SensorModel {
        let mut copy = self.clone();
        copy.rules.retain(|r| r.action_name != action_name);
        copy
    }
}

/// The observer's sensor reading for an action and the state it produced.
pub fn observe(action: &GroundAction, resulting_state: &WorldState, sensor: &SensorModel) -> ObsId {
    for rule in &sensor.rules {
        if rule.matches(action, resulting_state) {
            return rule.symbol;
        }
    }
    sensor.default
}

/// Progresses a belief through one observed step.
///
/// A null observation leaves the belief unchanged. Otherwise the result is
/// exactly the set of successors `apply_belief(s, a)` over `s` in the belief
/// and `a` in the acting set whose observation matches; an empty result is a
/// hard error because it signals a sensor-model/trace mismatch.
pub fn belief_update(
    belief: &Belief,
    acting_set: &[GroundAction],
    observed: ObsId,
    sensor: &SensorModel,
) -> Result<Belief, ModelError> {
    if sensor.is_null(observed) {
        return Ok(belief.clone());
    }
    let mut next = BTreeSet::new();
    for state in belief.iter() {
        for action in acting_set {
            if !state.satisfies(&action.effects(Variant::Belief).pre) {
                continue;
            }
            let successor = apply_variant(state, action, Variant::Belief)
                .expect("precondition checked above");
            if observe(action, &successor, sensor) == observed {
                next.insert(successor);
            }
        }
    }
    if next.is_empty() {
        return Err(ModelError::InconsistentObservation {
            observed: sensor.symbol(observed).token.clone(),
        });
    }
    Ok(Belief(next))
}

/// True iff every state of the belief satisfies every goal fluent.
pub fn entails_goal(belief: &Belief, goal: &BTreeSet<FluentId>) -> bool {
    belief.iter().all(|s| s.satisfies(goal))
}

/// A fully grounded problem instance.
#[derive(Clone, Debug)]
pub struct MaCoppProblem {
    pub name: String,
    pub table: FluentTable,
    pub robot_actions: Vec<GroundAction>,
    pub human_actions: Vec<GroundAction>,
    pub initial_state: WorldState,
    pub initial_belief: Belief,
    pub human_goal: BTreeSet<FluentId>,
    pub sensor: SensorModel,
}

impl MaCoppProblem {
    /// Checks the structural invariants: the true initial state belongs to
    /// the initial belief, actor tags partition the action sets, action costs
    /// are non-negative, and the sensor model is coarse-grained on robot
    /// (action, state) pairs.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.initial_belief.contains(&self.initial_state) {
            return Err(ModelError::InitialStateNotInBelief);
        }
        for a in &self.robot_actions {
            if a.actor != Actor::Robot {
                return Err(ModelError::ActorMismatch {
                    action: a.to_string(),
                });
            }
        }
        for a in &self.human_actions {
            if a.actor != Actor::Human {
                return Err(ModelError::ActorMismatch {
                    action: a.to_string(),
                });
            }
        }
        for a in self.robot_actions.iter().chain(&self.human_actions) {
            if a.cost.is_negative() {
                return Err(ModelError::NegativeCost {
                    action: a.to_string(),
                });
            }
            for spec in [&a.base, &a.belief] {
                if spec.add.intersection(&spec.del).next().is_some() {
                    return Err(ModelError::OverlappingEffects {
                        action: a.to_string(),
                    });
                }
            }
        }
        self.check_coarse_graining()
    }

    /// Rejects sensor models under which all robot (action, state) pairs are
    /// pairwise distinguishable. Probed over the initial belief and its
    /// one-step robot successors.
    fn check_coarse_graining(&self) -> Result<(), ModelError> {
        let mut states: BTreeSet<WorldState> = self.initial_belief.iter().cloned().collect();
        for state in self.initial_belief.iter() {
            for action in &self.robot_actions {
                if let Ok(next) = apply(state, action) {
                    states.insert(next);
                }
            }
        }
        let mut seen: HashMap<ObsId, (usize, &WorldState)> = HashMap::new();
        for (ai, action) in self.robot_actions.iter().enumerate() {
            for state in &states {
                let obs = observe(action, state, &self.sensor);
                match seen.get(&obs) {
                    Some(&(prev_ai, prev_state)) if prev_ai != ai || prev_state != state => {
                        return Ok(());
                    }
                    Some(_) => {}
                    None => {
                        seen.insert(obs, (ai, state));
                    }
                }
            }
        }
        Err(ModelError::SensorNotCoarse)
    }
}

/// Tunable parameters of the tree search and plan extraction.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Trade-off between prefix length and human suffix cost in the objective.
    pub alpha: Cost,
    /// Maximum tolerated robot prefix length (strict bound: k < budget).
    pub budget: u32,
    /// Number of tree-search iterations.
    pub iterations: u32,
    /// Reward granted when a simulation finds cheaper-than-solo assistance.
    pub reward_const: f64,
    /// Cost charged when a simulation fails.
    pub cost_const: f64,
    /// UCT exploration constant.
    pub exploration: f64,
    /// Small constant in the UCT exploitation denominator.
    pub uct_epsilon: f64,
    /// Multiplier on the simulation cost during backpropagation.
    pub backprop_cost_scale: f64,
    /// Children kept per node during joint-plan extraction.
    pub n_best: usize,
    pub seed: u64,
    /// Count only steps with non-null observations towards k.
    pub count_observable_only: bool,
    /// Use the global iteration count instead of parent visits in UCT.
    pub global_iteration_uct: bool,
    /// Cap on the expanded initial belief size.
    pub belief_cap: usize,
    /// Node budget for each inner conformant search.
    pub node_budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            alpha: Cost::new(1, 2),
            budget: 15,
            iterations: 10_000,
            reward_const: 100.0,
            cost_const: 50.0,
            exploration: std::f64::consts::SQRT_2,
            uct_epsilon: 1e-6,
            backprop_cost_scale: 1.0,
            n_best: 3,
            seed: 0,
            count_observable_only: false,
            global_iteration_uct: false,
            belief_cap: 100_000,
            node_budget: 1_000_000,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.alpha < Cost::zero() || self.alpha > Cost::from_integer(1) {
            return Err(ModelError::BadConfig("alpha must be in [0, 1]".into()));
        }
        if self.budget < 1 {
            return Err(ModelError::BadConfig("budget must be >= 1".into()));
        }
        if self.n_best < 1 {
            return Err(ModelError::BadConfig("n-best must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("action {action} is not applicable in this state")]
    Inapplicable { action: String },
    #[error("observation {observed} is inconsistent with the tracked belief")]
    InconsistentObservation { observed: String },
    #[error("a belief must contain at least one state")]
    EmptyBelief,
    #[error("sensor model declares no null observation symbol")]
    NoNullSymbol,
    #[error("sensor model declares more than one null observation symbol")]
    MultipleNullSymbols,
    #[error("sensor rule references undeclared symbol id {0:?}")]
    UnknownSymbol(ObsId),
    #[error("sensor model distinguishes every robot (action, state) pair; coarse-graining required")]
    SensorNotCoarse,
    #[error("the true initial state is not a member of the initial belief")]
    InitialStateNotInBelief,
    #[error("action {action} is filed under the wrong actor")]
    ActorMismatch { action: String },
    #[error("action {action} has a negative cost")]
    NegativeCost { action: String },
    #[error("action {action} adds and deletes the same fluent")]
    OverlappingEffects { action: String },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}
