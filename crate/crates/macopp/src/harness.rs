//! Run harness: loads an instance from its four input files, runs the
//! utility-tree search, extracts the joint plan, and renders machine-readable
//! reports. Also hosts the exhaustive prefix-enumeration oracle used to
//! cross-check the tree search and a seeded random-instance generator for
//! batch evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_traits::{One, Zero};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::conformant::{progress, CachedPlanner, ConformantPlan, PlanOutcome};
use crate::mcts::{extract_joint_plan, JointPlan, SearchError, UtilityTree};
use crate::model::{
    apply, belief_update, entails_goal, format_cost, observe, parse_cost, Actor, Belief, Cost,
    MaCoppProblem, ModelError, SearchConfig,
};
use crate::pddl::{self, DomainContext, FrontendError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// One full run as requested on the command line.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub domain_r: PathBuf,
    pub domain_h: PathBuf,
    pub problem: PathBuf,
    pub sensors: PathBuf,
    pub search: SearchConfig,
    pub format: ReportFormat,
    pub oracle: bool,
    pub oracle_depth: Option<u32>,
    pub dump_tree: Option<PathBuf>,
}

pub struct RunOutcome {
    pub tree: UtilityTree,
    pub plan: Option<JointPlan>,
    pub wall_time_s: f64,
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses the four input texts into a validated ground problem. Schemas
/// without an explicit actor annotation default to the role of the file they
/// came from.
pub fn load_from_texts(
    domain_r: &str,
    domain_h: &str,
    problem: &str,
    sensors: &str,
    belief_cap: usize,
) -> Result<MaCoppProblem, HarnessError> {
    let mut robot_domain = pddl::parse_domain(domain_r).map_err(FrontendError::from)?;
    let mut human_domain = pddl::parse_domain(domain_h).map_err(FrontendError::from)?;
    robot_domain.apply_default_actor(Actor::Robot);
    human_domain.apply_default_actor(Actor::Human);
    let ctx = DomainContext::from_domains(&[&robot_domain, &human_domain])?;
    let problem = pddl::parse_problem(problem, &ctx).map_err(FrontendError::from)?;
    let sensor = pddl::parse_sensor(sensors, &ctx).map_err(FrontendError::from)?;
    let grounded = pddl::ground(&[&robot_domain, &human_domain], &problem, &sensor, belief_cap)?;
    grounded.validate()?;
    Ok(grounded)
}

pub fn load_problem(config: &RunConfig) -> Result<MaCoppProblem, HarnessError> {
    load_from_texts(
        &read(&config.domain_r)?,
        &read(&config.domain_h)?,
        &read(&config.problem)?,
        &read(&config.sensors)?,
        config.search.belief_cap,
    )
}

/// Builds the utility tree and extracts the joint plan, timing only the
/// search itself (not parsing or grounding).
pub fn execute(
    problem: &MaCoppProblem,
    search: &SearchConfig,
) -> Result<RunOutcome, HarnessError> {
    search.validate()?;
    let start = Instant::now();
    let tree = UtilityTree::build(problem, search)?;
    let plan = extract_joint_plan(&tree, problem, search);
    Ok(RunOutcome {
        tree,
        plan,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn run(config: &RunConfig) -> Result<(MaCoppProblem, RunOutcome), HarnessError> {
    let problem = load_problem(config)?;
    let outcome = execute(&problem, &config.search)?;
    if let Some(path) = &config.dump_tree {
        let dump = outcome.tree.dump_json(&problem);
        fs::write(path, serde_json::to_string_pretty(&dump).expect("valid json")).map_err(
            |source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            },
        )?;
    }
    Ok((problem, outcome))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str =
    "problem,alpha,solo_cost,joint_human_cost,pct_decrease,joint_length,iterations,time_s,status";

/// Relative reduction of the human's cost, in percent.
pub fn percent_decrease(solo: Cost, suffix: Cost) -> Cost {
    (solo - suffix) / solo * Cost::from_integer(100)
}

fn status(plan: &Option<JointPlan>) -> &'static str {
    if plan.is_some() {
        "assisted"
    } else {
        "no-assistance"
    }
}

/// Deterministic report: contains no wall-clock timing, so identical inputs
/// (including the seed) render byte-identical output.
pub fn json_report(
    problem: &MaCoppProblem,
    config: &SearchConfig,
    outcome: &RunOutcome,
) -> serde_json::Value {
    let plan = outcome.plan.as_ref().map(|p| {
        json!({
            "robot_prefix": p.robot_prefix
                .iter()
                .map(|&i| problem.robot_actions[i].to_string())
                .collect::<Vec<_>>(),
            "observations": p.prefix_observations
                .iter()
                .map(|&o| problem.sensor.symbol(o).token.clone())
                .collect::<Vec<_>>(),
            "belief_sizes": p.belief_sizes,
            "human_suffix": p.human_suffix
                .resolve(&problem.human_actions)
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>(),
            "k": p.k,
            "prefix_len": p.prefix_len,
            "total_steps": p.total_steps,
            "suffix_cost": format_cost(p.suffix_cost),
            "differential": format_cost(p.differential),
            "objective": format_cost(p.objective),
            "pct_decrease": format_cost(percent_decrease(p.solo_cost, p.suffix_cost)),
        })
    });
    json!({
        "problem": problem.name,
        "alpha": format_cost(config.alpha),
        "seed": config.seed,
        "iterations": outcome.tree.iterations_run,
        "solo_cost": format_cost(outcome.tree.solo_cost),
        "status": status(&outcome.plan),
        "plan": plan,
    })
}

/// Header plus one data row. Unlike the JSON report the CSV row carries the
/// measured wall time, so it is not byte-reproducible across runs.
pub fn csv_report(
    problem: &MaCoppProblem,
    config: &SearchConfig,
    outcome: &RunOutcome,
) -> String {
    let (joint_cost, pct, length) = match &outcome.plan {
        Some(p) => (
            format_cost(p.suffix_cost),
            format_cost(percent_decrease(p.solo_cost, p.suffix_cost)),
            p.total_steps.to_string(),
        ),
        None => (String::new(), String::new(), String::new()),
    };
    format!(
        "{}\n{},{},{},{},{},{},{},{:.3},{}\n",
        CSV_HEADER,
        problem.name,
        format_cost(config.alpha),
        format_cost(outcome.tree.solo_cost),
        joint_cost,
        pct,
        length,
        outcome.tree.iterations_run,
        outcome.wall_time_s,
        status(&outcome.plan),
    )
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct OraclePlan {
    /// Indices into the problem's robot actions.
    pub robot_prefix: Vec<usize>,
    pub k: u32,
    pub suffix: ConformantPlan,
    pub solo_cost: Cost,
    pub objective: Cost,
}

const ORACLE_EXPANSION_CAP: usize = 1_000_000;

/// Independent reference: enumerates every robot prefix up to
/// `min(max_len, budget - 1)` actions, evaluates the human's optimal
/// conformant suffix after each, and returns the exact minimizer of the
/// blended objective (ties broken by lexicographically smaller prefix).
/// `None` is the no-assistance answer.
pub fn brute_force_oracle(
    problem: &MaCoppProblem,
    config: &SearchConfig,
    max_len: u32,
) -> Option<OraclePlan> {
    let mut planner =
        CachedPlanner::new(&problem.human_actions, &problem.human_goal, config.node_budget);
    let solo_cost = planner.plan(&problem.initial_belief).plan()?.cost;
    let depth_limit = max_len.min(config.budget.saturating_sub(1)) as usize;

    struct Search<'a> {
        problem: &'a MaCoppProblem,
        config: &'a SearchConfig,
        planner: CachedPlanner<'a>,
        solo_cost: Cost,
        depth_limit: usize,
        expansions: usize,
        best: Option<OraclePlan>,
    }

    impl Search<'_> {
        fn prefix_key(&self, prefix: &[usize]) -> Vec<(&str, &[String])> {
            prefix
                .iter()
                .map(|&i| self.problem.robot_actions[i].signature())
                .collect()
        }

        fn consider(&mut self, prefix: &[usize], k: u32, suffix: &ConformantPlan) {
            if k == 0 || k >= self.config.budget || suffix.cost >= self.solo_cost {
                return;
            }
            let alpha = self.config.alpha;
            let objective =
                alpha * Cost::from_integer(k as i64) + (Cost::one() - alpha) * suffix.cost;
            let better = match &self.best {
                None => true,
                Some(best) => {
                    objective < best.objective
                        || (objective == best.objective
                            && self.prefix_key(prefix) < self.prefix_key(&best.robot_prefix))
                }
            };
            if better {
                self.best = Some(OraclePlan {
                    robot_prefix: prefix.to_vec(),
                    k,
                    suffix: suffix.clone(),
                    solo_cost: self.solo_cost,
                    objective,
                });
            }
        }

        fn recurse(
            &mut self,
            state: &crate::model::WorldState,
            belief: &Belief,
            k: u32,
            prefix: &mut Vec<usize>,
        ) {
            if prefix.len() >= self.depth_limit || self.expansions >= ORACLE_EXPANSION_CAP {
                return;
            }
            for idx in 0..self.problem.robot_actions.len() {
                let action = &self.problem.robot_actions[idx];
                if !state.satisfies(&action.base.pre) {
                    continue;
                }
                self.expansions += 1;
                let next_state = apply(state, action).expect("precondition checked");
                let obs = observe(action, &next_state, &self.problem.sensor);
                let next_belief = match belief_update(
                    belief,
                    &self.problem.robot_actions,
                    obs,
                    &self.problem.sensor,
                ) {
                    Ok(b) => b,
                    Err(_) => continue,
                };
                let next_k = if self.config.count_observable_only {
                    k + u32::from(!self.problem.sensor.is_null(obs))
                } else {
                    k + 1
                };
                prefix.push(idx);
                if let PlanOutcome::Plan(suffix) = self.planner.plan(&next_belief) {
                    if suffix_reaches_goal(&next_belief, &suffix, self.problem) {
                        self.consider(prefix, next_k, &suffix);
                    }
                }
                self.recurse(&next_state, &next_belief, next_k, prefix);
                prefix.pop();
            }
        }
    }

    let mut search = Search {
        problem,
        config,
        planner,
        solo_cost,
        depth_limit,
        expansions: 0,
        best: None,
    };
    let mut prefix = Vec::new();
    search.recurse(
        &problem.initial_state,
        &problem.initial_belief,
        0,
        &mut prefix,
    );
    search.best
}

/// Progresses the belief through the whole suffix and checks that the result
/// entails the goal.
pub fn suffix_reaches_goal(
    belief: &Belief,
    suffix: &ConformantPlan,
    problem: &MaCoppProblem,
) -> bool {
    let mut current = belief.clone();
    for &step in &suffix.steps {
        match progress(&current, &problem.human_actions[step]) {
            Ok(next) => current = next,
            Err(_) => return false,
        }
    }
    entails_goal(&current, &problem.human_goal)
}

// ---------------------------------------------------------------------------
// Config-file overrides
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TomlOverrides {
    alpha: Option<String>,
    budget: Option<u32>,
    iterations: Option<u32>,
    reward_const: Option<f64>,
    cost_const: Option<f64>,
    exploration: Option<f64>,
    uct_epsilon: Option<f64>,
    backprop_cost_scale: Option<f64>,
    n_best: Option<usize>,
    seed: Option<u64>,
    count_observable_only: Option<bool>,
    global_iteration_uct: Option<bool>,
    belief_cap: Option<usize>,
    node_budget: Option<usize>,
}

/// Applies a TOML config file (e.g. the one named by `MACOPP_CONFIG`) on top
/// of the defaults; command-line flags are applied after this and win.
pub fn apply_toml_overrides(search: &mut SearchConfig, text: &str) -> Result<(), HarnessError> {
    let overrides: TomlOverrides =
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(alpha) = overrides.alpha {
        search.alpha = parse_cost(&alpha)
            .ok_or_else(|| HarnessError::Config(format!("invalid alpha {}", alpha)))?;
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = overrides.$field {
                search.$field = v;
            }
        };
    }
    set!(budget);
    set!(iterations);
    set!(reward_const);
    set!(cost_const);
    set!(exploration);
    set!(uct_epsilon);
    set!(backprop_cost_scale);
    set!(n_best);
    set!(seed);
    set!(count_observable_only);
    set!(global_iteration_uct);
    set!(belief_cap);
    set!(node_budget);
    Ok(())
}

// ---------------------------------------------------------------------------
// Random-instance battery
// ---------------------------------------------------------------------------

/// Seeded generator of search-and-retrieve instances used for batch
/// evaluation. Every instance is solvable by the human alone and uses a
/// sound sensor map: state-changing robot actions share one coarse symbol,
/// and only the state-preserving show-wagon action can stay silent.
pub mod battery {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub struct InstanceFiles {
        pub name: String,
        pub domain_r: String,
        pub domain_h: String,
        pub problem: String,
        pub sensors: String,
    }

    pub const ROBOT_DOMAIN: &str = r#"
(define (domain rescue-robot)
  (:types loc)
  (:predicates (hat ?l - loc) (rat ?l - loc) (medkit-at ?l - loc)
               (in-wagon) (holding) (adjacent ?a - loc ?b - loc) (room ?l - loc))
  (:action rmove
    :parameters (?from - loc ?to - loc)
    :precondition (and (rat ?from) (adjacent ?from ?to))
    :effect (and (rat ?to) (not (rat ?from))))
  (:action pickup
    :parameters (?l - loc)
    :precondition (and (rat ?l) (medkit-at ?l) (room ?l))
    :effect (and (in-wagon) (not (medkit-at ?l))))
  (:action dropoff
    :parameters (?l - loc)
    :precondition (and (rat ?l) (in-wagon) (room ?l))
    :effect (and (medkit-at ?l) (not (in-wagon))))
  (:action show-wagon
    :parameters (?l - loc)
    :precondition (and (rat ?l))
    :effect (and))
)
"#;

    pub const HUMAN_DOMAIN: &str = r#"
(define (domain rescue-human)
  (:types loc)
  (:predicates (hat ?l - loc) (rat ?l - loc) (medkit-at ?l - loc)
               (in-wagon) (holding) (adjacent ?a - loc ?b - loc) (room ?l - loc))
  (:action hmove
    :parameters (?from - loc ?to - loc)
    :precondition (and (hat ?from) (adjacent ?from ?to))
    :effect (and (hat ?to) (not (hat ?from))))
  (:action search
    :parameters (?l - loc)
    :precondition (and (hat ?l) (room ?l))
    :effect (and (when (medkit-at ?l) (and (holding) (not (medkit-at ?l)))))
  )
  (:action take-from-wagon
    :parameters (?l - loc)
    :precondition (and (hat ?l) (rat ?l) (in-wagon))
    :effect (and (holding) (not (in-wagon))))
)
"#;

    /// Generates a random instance: a star map (start - corridor - rooms)
    /// with 3 to 5 rooms, the medkit location drawn from a random oneof
    /// group, and random start positions for both agents.
    pub fn random_instance(seed: u64) -> InstanceFiles {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_rooms: usize = rng.gen_range(3..=5);
        let rooms: Vec<String> = (1..=n_rooms).map(|i| format!("room{}", i)).collect();

        let mut candidates = rooms.clone();
        candidates.shuffle(&mut rng);
        let group_size = rng.gen_range(2..=n_rooms);
        let mut group: Vec<String> = candidates[..group_size].to_vec();
        group.sort();
        let true_room = group[rng.gen_range(0..group.len())].clone();

        let human_start = if rng.gen_bool(0.5) { "start" } else { "corridor" };
        let robot_start = rooms[rng.gen_range(0..n_rooms)].clone();

        let mut init = String::new();
        init.push_str(&format!("(hat {})\n         (rat {})\n", human_start, robot_start));
        init.push_str("         (adjacent start corridor) (adjacent corridor start)\n");
        for room in &rooms {
            init.push_str(&format!(
                "         (room {r}) (adjacent corridor {r}) (adjacent {r} corridor)\n",
                r = room
            ));
        }
        let oneof: Vec<String> = group.iter().map(|r| format!("(medkit-at {})", r)).collect();
        init.push_str(&format!("         (oneof {})", oneof.join(" ")));

        let name = format!("rescue-seed{}", seed);
        let problem = format!(
            "(define (problem {name})\n  (:domain rescue-human)\n  (:objects start corridor {rooms} - loc)\n  (:init {init})\n  (:true-init (medkit-at {true_room}))\n  (:goal (and (holding))))\n",
            name = name,
            rooms = rooms.join(" "),
            init = init,
            true_room = true_room,
        );

        let mut sensors = String::from(
            "(sensors\n  (default none null)\n  (rule rmove robot-step)\n  (rule pickup robot-step)\n  (rule dropoff robot-step)\n",
        );
        for room in &rooms {
            sensors.push_str(&format!(
                "  (rule (show-wagon {r}) (condition (in-wagon)) shown-{r})\n",
                r = room
            ));
        }
        sensors.push_str(
            "  (rule hmove human-step)\n  (rule search human-search)\n  (rule take-from-wagon human-take)\n)\n",
        );

        InstanceFiles {
            name,
            domain_r: ROBOT_DOMAIN.to_string(),
            domain_h: HUMAN_DOMAIN.to_string(),
            problem,
            sensors,
        }
    }

    pub fn load_instance(
        files: &InstanceFiles,
        belief_cap: usize,
    ) -> Result<MaCoppProblem, HarnessError> {
        load_from_texts(
            &files.domain_r,
            &files.domain_h,
            &files.problem,
            &files.sensors,
            belief_cap,
        )
    }
}

/// The acceptance checks recompute every constraint of a reported plan from
/// first principles; this helper shares that logic with unit tests.
pub fn plan_respects_constraints(
    problem: &MaCoppProblem,
    config: &SearchConfig,
    plan: &JointPlan,
) -> bool {
    // Replay the prefix through the transition and observation model.
    let mut state = problem.initial_state.clone();
    let mut belief = problem.initial_belief.clone();
    let mut k = 0u32;
    for (step, &idx) in plan.robot_prefix.iter().enumerate() {
        let action = &problem.robot_actions[idx];
        if !state.satisfies(&action.base.pre) {
            return false;
        }
        state = apply(&state, action).expect("precondition checked");
        let obs = observe(action, &state, &problem.sensor);
        if obs != plan.prefix_observations[step] {
            return false;
        }
        belief = match belief_update(&belief, &problem.robot_actions, obs, &problem.sensor) {
            Ok(b) => b,
            Err(_) => return false,
        };
        if belief.len() != plan.belief_sizes[step] {
            return false;
        }
        k += if config.count_observable_only {
            u32::from(!problem.sensor.is_null(obs))
        } else {
            1
        };
    }
    if k != plan.k || k >= config.budget {
        return false;
    }
    // The suffix must be executable from the final belief and reach the goal.
    if !suffix_reaches_goal(&belief, &plan.human_suffix, problem) {
        return false;
    }
    // The suffix must cost exactly what the human's own planner would pay
    // from the final belief.
    let replan = crate::conformant::conformant_plan(
        &belief,
        &problem.human_goal,
        &problem.human_actions,
        config.node_budget,
    );
    match replan.plan() {
        Some(optimal) if optimal.cost == plan.suffix_cost => {}
        _ => return false,
    }
    // Cost accounting: differential strictly negative, exact objective.
    let recomputed_cost: Cost = plan
        .human_suffix
        .steps
        .iter()
        .map(|&i| problem.human_actions[i].cost)
        .fold(Cost::zero(), |a, b| a + b);
    if recomputed_cost != plan.suffix_cost {
        return false;
    }
    if plan.differential != plan.suffix_cost - plan.solo_cost
        || plan.differential >= Cost::zero()
    {
        return false;
    }
    let alpha = config.alpha;
    plan.objective
        == alpha * Cost::from_integer(k as i64) + (Cost::one() - alpha) * plan.suffix_cost
}
