//! The human's decision algorithm: cost-optimal conformant planning over
//! belief space via uniform-cost search with strong applicability.
//!
//! A conformant plan must be applicable and goal-achieving from every state
//! of its source belief; it never relies on sensing during execution.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use num_traits::Zero;

use crate::model::{
    apply_variant, entails_goal, Belief, Cost, FluentId, GroundAction, ModelError, Variant,
};

/// An ordered sequence of human actions with its summed cost. Steps are
/// indices into the action slice the planner was given.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConformantPlan {
    pub steps: Vec<usize>,
    pub cost: Cost,
}

impl ConformantPlan {
    pub fn empty() -> Self {
        ConformantPlan {
            steps: vec![],
            cost: Cost::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn resolve<'a>(&self, actions: &'a [GroundAction]) -> Vec<&'a GroundAction> {
        self.steps.iter().map(|&i| &actions[i]).collect()
    }
}

/// Search result. Budget exhaustion is distinguished from proven
/// unsolvability so callers can log it separately, though both mean
/// "no plan" for feasibility purposes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanOutcome {
    Plan(ConformantPlan),
    Unsolvable,
    BudgetExhausted,
}

impl PlanOutcome {
    pub fn plan(&self) -> Option<&ConformantPlan> {
        match self {
            PlanOutcome::Plan(p) => Some(p),
            _ => None,
        }
    }
}

/// Progresses a belief through one action under conformant semantics:
/// the action must be strongly applicable (its precondition holds in every
/// state), and its belief-variant effects are applied per state.
pub fn progress(belief: &Belief, action: &GroundAction) -> Result<Belief, ModelError> {
    let pre = &action.effects(Variant::Belief).pre;
    for state in belief.iter() {
        if !state.satisfies(pre) {
            return Err(ModelError::Inapplicable {
                action: action.to_string(),
            });
        }
    }
    Belief::from_states(
        belief
            .iter()
            .map(|s| apply_variant(s, action, Variant::Belief).expect("strong applicability")),
    )
}

struct SearchNode {
    g: Cost,
    // Positions in the name-sorted action order; lexicographic comparison of
    // this sequence is the deterministic tie-break among equal-cost plans.
    seq: Vec<u32>,
    belief: Belief,
}

impl PartialEq for SearchNode {
    fn eq(&self, other: &Self) -> bool {
        self.g == other.g && self.seq == other.seq
    }
}
impl Eq for SearchNode {}
impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SearchNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.g.cmp(&other.g).then_with(|| self.seq.cmp(&other.seq))
    }
}

/// Minimum-cost conformant plan from `belief` to `goal` over `actions`.
///
/// Uniform-cost search over canonical beliefs with a closed list; ties among
/// equal-cost plans break lexicographically by action name sequence, so the
/// result is deterministic. Returns `BudgetExhausted` once more than
/// `node_budget` belief nodes have been expanded.
pub fn conformant_plan(
    belief: &Belief,
    goal: &BTreeSet<FluentId>,
    actions: &[GroundAction],
    node_budget: usize,
) -> PlanOutcome {
    // Iterate actions in name order regardless of the caller's slice order.
    let mut order: Vec<usize> = (0..actions.len()).collect();
    order.sort_by(|&a, &b| actions[a].signature().cmp(&actions[b].signature()));

    let mut open: BinaryHeap<Reverse<SearchNode>> = BinaryHeap::new();
    let mut closed: HashSet<Belief> = HashSet::new();
    open.push(Reverse(SearchNode {
        g: Cost::zero(),
        seq: vec![],
        belief: belief.clone(),
    }));
    let mut expanded = 0usize;
    while let Some(Reverse(node)) = open.pop() {
        if !closed.insert(node.belief.clone()) {
            continue;
        }
        if entails_goal(&node.belief, goal) {
            let steps = node.seq.iter().map(|&p| order[p as usize]).collect();
            return PlanOutcome::Plan(ConformantPlan {
                steps,
                cost: node.g,
            });
        }
        expanded += 1;
        if expanded > node_budget {
            return PlanOutcome::BudgetExhausted;
        }
        for (pos, &idx) in order.iter().enumerate() {
            let action = &actions[idx];
            let Ok(next) = progress(&node.belief, action) else {
                continue;
            };
            if closed.contains(&next) {
                continue;
            }
            let mut seq = node.seq.clone();
            seq.push(pos as u32);
            open.push(Reverse(SearchNode {
                g: node.g + action.cost,
                seq,
                belief: next,
            }));
        }
    }
    PlanOutcome::Unsolvable
}

/// Independent checker: the plan is strongly applicable step by step from
/// `belief` and its final belief entails `goal`.
pub fn validate_plan(
    plan: &ConformantPlan,
    belief: &Belief,
    goal: &BTreeSet<FluentId>,
    actions: &[GroundAction],
) -> bool {
    let mut current = belief.clone();
    let mut cost = Cost::zero();
    for &step in &plan.steps {
        let Some(action) = actions.get(step) else {
            return false;
        };
        match progress(&current, action) {
            Ok(next) => current = next,
            Err(_) => return false,
        }
        cost += action.cost;
    }
    cost == plan.cost && entails_goal(&current, goal)
}

/// Memoizing wrapper around [`conformant_plan`], keyed by canonical belief.
/// One logical map; wrap it in a lock if simulations ever run concurrently.
pub struct CachedPlanner<'a> {
    actions: &'a [GroundAction],
    goal: &'a BTreeSet<FluentId>,
    node_budget: usize,
    cache: HashMap<Belief, PlanOutcome>,
    pub budget_hits: usize,
}

impl<'a> CachedPlanner<'a> {
    pub fn new(actions: &'a [GroundAction], goal: &'a BTreeSet<FluentId>, node_budget: usize) -> Self {
        CachedPlanner {
            actions,
            goal,
            node_budget,
            cache: HashMap::new(),
            budget_hits: 0,
        }
    }

    pub fn plan(&mut self, belief: &Belief) -> PlanOutcome {
        if let Some(hit) = self.cache.get(belief) {
            return hit.clone();
        }
        let outcome = conformant_plan(belief, self.goal, self.actions, self.node_budget);
        if matches!(outcome, PlanOutcome::BudgetExhausted) {
            self.budget_hits += 1;
        }
        self.cache.insert(belief.clone(), outcome.clone());
        outcome
    }

    pub fn actions(&self) -> &'a [GroundAction] {
        self.actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        apply, Actor, Belief, ConditionalEffect, EffectSpec, Fluent, FluentTable, WorldState,
    };

    struct MedkitWorld {
        actions: Vec<GroundAction>,
        goal: BTreeSet<FluentId>,
        belief: Belief,
    }

    fn act(name: &str, args: &[&str], spec: EffectSpec) -> GroundAction {
        GroundAction {
            actor: Actor::Human,
            name: name.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
            belief: spec.clone(),
            base: spec,
            cost: Cost::from_integer(1),
        }
    }

    // Rooms A and B on either side of a corridor; the medkit is in one of
    // them; searching a room picks the medkit up if it is there.
    fn medkit_world() -> MedkitWorld {
        let mut t = FluentTable::new();
        let at = |t: &mut FluentTable, loc: &str| t.intern(Fluent::new("at", &[loc]));
        let medkit = |t: &mut FluentTable, loc: &str| t.intern(Fluent::new("medkit-at", &[loc]));
        let holding = t.intern(Fluent::new("holding", &[]));

        let locs = ["corridor", "roomA", "roomB"];
        let adjacent = [("corridor", "roomA"), ("corridor", "roomB")];
        let mut actions = Vec::new();
        for (x, y) in adjacent
            .iter()
            .flat_map(|&(x, y)| [(x, y), (y, x)])
        {
            let from = at(&mut t, x);
            let to = at(&mut t, y);
            actions.push(act(
                "move",
                &[x, y],
                EffectSpec {
                    pre: [from].into(),
                    add: [to].into(),
                    del: [from].into(),
                    conditional: vec![],
                },
            ));
        }
        for room in &locs[1..] {
            let here = at(&mut t, room);
            let kit = medkit(&mut t, room);
            actions.push(act(
                "search",
                &[room],
                EffectSpec {
                    pre: [here].into(),
                    add: [].into(),
                    del: [].into(),
                    conditional: vec![ConditionalEffect {
                        condition: [kit].into(),
                        add: [holding].into(),
                        del: [kit].into(),
                    }],
                },
            ));
        }
        let at_corr = at(&mut t, "corridor");
        let kit_a = medkit(&mut t, "roomA");
        let kit_b = medkit(&mut t, "roomB");
        let belief = Belief::from_states([
            WorldState::new([at_corr, kit_a]),
            WorldState::new([at_corr, kit_b]),
        ])
        .unwrap();
        MedkitWorld {
            actions,
            goal: [holding].into(),
            belief,
        }
    }

    // Exhaustive enumeration of all action sequences up to `max_len`,
    // independent of the search implementation.
    fn brute_force_optimum(world: &MedkitWorld, max_len: usize) -> Option<Cost> {
        let mut best: Option<Cost> = None;
        let mut stack: Vec<(Belief, Cost, usize)> = vec![(world.belief.clone(), Cost::zero(), 0)];
        while let Some((belief, cost, len)) = stack.pop() {
            if let Some(b) = best {
                if cost >= b {
                    continue;
                }
            }
            if entails_goal(&belief, &world.goal) {
                best = Some(cost);
                continue;
            }
            if len == max_len {
                continue;
            }
            for action in &world.actions {
                if let Ok(next) = progress(&belief, action) {
                    stack.push((next, cost + action.cost, len + 1));
                }
            }
        }
        best
    }

    #[test]
    fn empty_plan_when_goal_already_entailed() {
        let world = medkit_world();
        let goal_fluent = *world.goal.iter().next().unwrap();
        let belief = Belief::singleton(WorldState::new([goal_fluent]));
        let outcome = conformant_plan(&belief, &world.goal, &world.actions, 1000);
        let plan = outcome.plan().unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.cost, Cost::zero());
    }

    #[test]
    fn optimal_cost_matches_brute_force() {
        let world = medkit_world();
        let expected = brute_force_optimum(&world, 10).unwrap();
        let outcome = conformant_plan(&world.belief, &world.goal, &world.actions, 100_000);
        let plan = outcome.plan().unwrap();
        assert_eq!(plan.cost, expected);
        // Visit and search both rooms: 3 moves + 2 searches with unit costs.
        assert_eq!(plan.cost, Cost::from_integer(5));
        assert!(validate_plan(plan, &world.belief, &world.goal, &world.actions));
    }

    #[test]
    fn unreachable_goal_is_unsolvable() {
        let world = medkit_world();
        // A fluent no action adds and no state contains.
        let unreachable: BTreeSet<FluentId> = [FluentId(9999)].into();
        let outcome = conformant_plan(&world.belief, &unreachable, &world.actions, 100_000);
        assert_eq!(outcome, PlanOutcome::Unsolvable);
    }

    #[test]
    fn budget_exhaustion_is_distinguished() {
        let world = medkit_world();
        let outcome = conformant_plan(&world.belief, &world.goal, &world.actions, 1);
        assert_eq!(outcome, PlanOutcome::BudgetExhausted);
    }

    #[test]
    fn progress_degenerate_singleton() {
        let world = medkit_world();
        let state = world.belief.iter().next().unwrap().clone();
        let singleton = Belief::singleton(state.clone());
        let action = &world.actions[0];
        assert_eq!(
            progress(&singleton, action).unwrap(),
            Belief::singleton(apply(&state, action).unwrap())
        );
    }

    #[test]
    fn progress_branches_on_conditional_pickup() {
        let world = medkit_world();
        // move into room A, then search it: one branch holds the medkit, the
        // other still has it in room B.
        let move_a = world
            .actions
            .iter()
            .find(|a| a.name == "move" && a.args == ["corridor", "roomA"])
            .unwrap();
        let search_a = world
            .actions
            .iter()
            .find(|a| a.name == "search" && a.args == ["roomA"])
            .unwrap();
        let b1 = progress(&world.belief, move_a).unwrap();
        let b2 = progress(&b1, search_a).unwrap();
        assert_eq!(b2.len(), 2);
        let goal_fluent = *world.goal.iter().next().unwrap();
        let holding: Vec<bool> = b2.iter().map(|s| s.contains(goal_fluent)).collect();
        assert_eq!(holding.iter().filter(|&&h| h).count(), 1);
    }

    #[test]
    fn progress_requires_strong_applicability() {
        let world = medkit_world();
        let search_a = world
            .actions
            .iter()
            .find(|a| a.name == "search" && a.args == ["roomA"])
            .unwrap();
        // Human is in the corridor in every belief state: search is not
        // applicable anywhere, and certainly not strongly.
        assert!(progress(&world.belief, search_a).is_err());
    }

    #[test]
    fn uniform_delete_clears_fluent_everywhere() {
        let mut t = FluentTable::new();
        let shared = t.intern(Fluent::new("shared", &[]));
        let a = t.intern(Fluent::new("a", &[]));
        let b = t.intern(Fluent::new("b", &[]));
        let clear = act(
            "clear",
            &[],
            EffectSpec {
                del: [shared].into(),
                ..Default::default()
            },
        );
        let belief = Belief::from_states([
            WorldState::new([shared, a]),
            WorldState::new([shared, b]),
        ])
        .unwrap();
        let next = progress(&belief, &clear).unwrap();
        assert!(next.iter().all(|s| !s.contains(shared)));
    }

    #[test]
    fn validate_rejects_mutated_plan() {
        let world = medkit_world();
        let outcome = conformant_plan(&world.belief, &world.goal, &world.actions, 100_000);
        let plan = outcome.plan().unwrap().clone();
        assert!(validate_plan(&plan, &world.belief, &world.goal, &world.actions));
        for drop_idx in 0..plan.steps.len() {
            let mut mutated = plan.clone();
            mutated.steps.remove(drop_idx);
            mutated.cost = mutated
                .steps
                .iter()
                .map(|&i| world.actions[i].cost)
                .sum();
            assert!(
                !validate_plan(&mutated, &world.belief, &world.goal, &world.actions),
                "dropping step {} should invalidate the plan",
                drop_idx
            );
        }
    }

    #[test]
    fn sub_belief_plans_are_never_costlier() {
        let world = medkit_world();
        let full = conformant_plan(&world.belief, &world.goal, &world.actions, 100_000)
            .plan()
            .unwrap()
            .cost;
        for state in world.belief.iter() {
            let sub = Belief::singleton(state.clone());
            let cost = conformant_plan(&sub, &world.goal, &world.actions, 100_000)
                .plan()
                .unwrap()
                .cost;
            assert!(cost <= full);
        }
    }

    #[test]
    fn identical_inputs_identical_plans() {
        let world = medkit_world();
        let a = conformant_plan(&world.belief, &world.goal, &world.actions, 100_000);
        let b = conformant_plan(&world.belief, &world.goal, &world.actions, 100_000);
        assert_eq!(a, b);
    }

    #[test]
    fn cached_planner_agrees_with_direct_search() {
        let world = medkit_world();
        let mut cached = CachedPlanner::new(&world.actions, &world.goal, 100_000);
        let direct = conformant_plan(&world.belief, &world.goal, &world.actions, 100_000);
        assert_eq!(cached.plan(&world.belief), direct);
        assert_eq!(cached.plan(&world.belief), direct);
    }
}
