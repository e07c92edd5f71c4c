//! Front end for the dual-version planning domains: parsers for domain,
//! problem and sensor files, initial-belief expansion, and grounding of
//! action schemas into a [`MaCoppProblem`].
//!
//! The file formats are documented with a grammar in `docs/formats.md`.
//! Domains use a STRIPS subset with `:cost`, `when` conditional effects,
//! a `:belief` flag marking the belief-update variant of an action, and an
//! `:actor` annotation. Problems mark uncertainty with `unknown`/`oneof`
//! inside `:init` and designate the true initial state with `:true-init`.
//! Sensor files are ordered first-match-wins rule lists with an explicit
//! default symbol.

pub mod lexer;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_traits::One;
use thiserror::Error;

use crate::model::{
    parse_cost, Actor, Belief, ConditionalEffect, Cost, EffectSpec, Fluent, FluentId,
    FluentTable, GroundAction, MaCoppProblem, ModelError, ObsId, ObservationSymbol, SensorModel,
    SensorRule, WorldState,
};
use lexer::{read_one, ParseError, SExpr, Span};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypedParam {
    pub name: String,
    pub ty: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<TypedParam>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Const(String),
}

/// A fluent template over schema parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomTemplate {
    pub pred: String,
    pub args: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CondEffectTemplate {
    pub condition: Vec<AtomTemplate>,
    pub add: Vec<AtomTemplate>,
    pub del: Vec<AtomTemplate>,
}

/// A lifted action. `belief_variant` marks the copy annotated with the
/// `:belief` keyword; it pairs with the base schema of the same name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub belief_variant: bool,
    pub actor: Option<Actor>,
    pub params: Vec<TypedParam>,
    pub pre: Vec<AtomTemplate>,
    pub add: Vec<AtomTemplate>,
    pub del: Vec<AtomTemplate>,
    pub conditional: Vec<CondEffectTemplate>,
    pub cost: Cost,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    pub types: Vec<String>,
    pub predicates: Vec<PredicateDecl>,
    pub schemas: Vec<ActionSchema>,
}

impl Domain {
    /// Assigns `actor` to every schema that carries no explicit annotation.
    /// The harness uses the file role (robot vs human domain) as the default.
    pub fn apply_default_actor(&mut self, actor: Actor) {
        for schema in &mut self.schemas {
            if schema.actor.is_none() {
                schema.actor = Some(actor);
            }
        }
    }
}

/// Initial-state specification: certain fluents, free (unknown) fluents and
/// exclusive-choice groups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InitSpec {
    pub known: Vec<Fluent>,
    pub unknown: Vec<Fluent>,
    pub oneof: Vec<Vec<Fluent>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    /// (object, type) pairs in declaration order.
    pub objects: Vec<(String, String)>,
    pub init: InitSpec,
    /// Uncertain fluents that are true in the designated initial state.
    pub true_init: Vec<Fluent>,
    pub goal: Vec<Fluent>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorRuleSpec {
    pub action: String,
    pub args: Option<Vec<String>>,
    pub condition: Vec<Fluent>,
    pub token: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorSpec {
    pub default_token: String,
    pub default_is_null: bool,
    pub rules: Vec<SensorRuleSpec>,
}

/// Declarations shared by parsed domains; the problem and sensor parsers
/// check references against it.
#[derive(Clone, Debug, Default)]
pub struct DomainContext {
    pub types: BTreeSet<String>,
    /// Predicate name to arity.
    pub predicates: BTreeMap<String, usize>,
    pub action_names: BTreeSet<String>,
}

impl DomainContext {
    pub fn from_domains(domains: &[&Domain]) -> Result<Self, FrontendError> {
        let mut ctx = DomainContext::default();
        for domain in domains {
            for ty in &domain.types {
                ctx.types.insert(ty.clone());
            }
            for pred in &domain.predicates {
                match ctx.predicates.get(&pred.name) {
                    Some(&arity) if arity != pred.params.len() => {
                        return Err(FrontendError::PredicateMismatch {
                            name: pred.name.clone(),
                        })
                    }
                    _ => {
                        ctx.predicates.insert(pred.name.clone(), pred.params.len());
                    }
                }
            }
            for schema in &domain.schemas {
                ctx.action_names.insert(schema.name.clone());
            }
        }
        Ok(ctx)
    }
}

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("predicate {name} is declared with conflicting arities")]
    PredicateMismatch { name: String },
    #[error("belief variant of action {name} has no base schema")]
    MissingBaseSchema { name: String },
    #[error("belief variant of action {name} declares different parameters")]
    VariantParamMismatch { name: String },
    #[error("action {name} carries no actor annotation")]
    MissingActor { name: String },
    #[error("constant {name} is not a declared object")]
    UnknownObject { name: String },
    #[error("initial belief would contain {size} states, exceeding the cap of {cap}")]
    BeliefCapExceeded { size: u128, cap: usize },
    #[error("the :true-init state is not a member of the expanded initial belief")]
    TrueInitNotInBelief,
    #[error("ground action {action} adds and deletes the same fluent")]
    ConflictingEffects { action: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

fn expect_list<'a>(expr: &'a SExpr, what: &str) -> Result<&'a [SExpr], ParseError> {
    expr.as_list()
        .ok_or_else(|| ParseError::at(expr.span(), format!("expected {}", what)))
}

fn expect_atom<'a>(expr: &'a SExpr, what: &str) -> Result<&'a str, ParseError> {
    expr.as_atom()
        .ok_or_else(|| ParseError::at(expr.span(), format!("expected {}", what)))
}

fn parse_typed_list(items: &[SExpr], span: Span) -> Result<Vec<TypedParam>, ParseError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Span)> = Vec::new();
    let mut iter = items.iter();
    while let Some(item) = iter.next() {
        let text = expect_atom(item, "a name in a typed list")?;
        if text == "-" {
            let ty_expr = iter.next().ok_or_else(|| {
                ParseError::at(item.span(), "expected a type after '-'")
            })?;
            let ty = expect_atom(ty_expr, "a type name")?;
            if pending.is_empty() {
                return Err(ParseError::at(item.span(), "type without names"));
            }
            for (name, _) in pending.drain(..) {
                out.push(TypedParam {
                    name,
                    ty: ty.to_string(),
                });
            }
        } else {
            let name = text.strip_prefix('?').unwrap_or(text);
            pending.push((name.to_string(), item.span()));
        }
    }
    if let Some((name, span)) = pending.first() {
        return Err(ParseError::at(
            *span,
            format!("{} is missing a type annotation", name),
        ));
    }
    let _ = span;
    Ok(out)
}

fn parse_atom_template(expr: &SExpr, ctx: Option<&DomainContext>) -> Result<AtomTemplate, ParseError> {
    let items = expect_list(expr, "an atom")?;
    let (head, rest) = items
        .split_first()
        .ok_or_else(|| ParseError::at(expr.span(), "empty atom"))?;
    let pred = expect_atom(head, "a predicate name")?.to_string();
    let mut args = Vec::new();
    for arg in rest {
        let text = expect_atom(arg, "an atom argument")?;
        if let Some(stripped) = text.strip_prefix('?') {
            args.push(Term::Var(stripped.to_string()));
        } else {
            args.push(Term::Const(text.to_string()));
        }
    }
    if let Some(ctx) = ctx {
        match ctx.predicates.get(&pred) {
            None => {
                return Err(ParseError::at(
                    expr.span(),
                    format!("undeclared predicate {}", pred),
                ))
            }
            Some(&arity) if arity != args.len() => {
                return Err(ParseError::at(
                    expr.span(),
                    format!(
                        "predicate {} expects {} arguments, found {}",
                        pred,
                        arity,
                        args.len()
                    ),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(AtomTemplate { pred, args })
}

fn parse_ground_atom(expr: &SExpr, ctx: &DomainContext) -> Result<Fluent, ParseError> {
    let template = parse_atom_template(expr, Some(ctx))?;
    let mut args = Vec::new();
    for term in &template.args {
        match term {
            Term::Const(c) => args.push(c.clone()),
            Term::Var(v) => {
                return Err(ParseError::at(
                    expr.span(),
                    format!("variable ?{} not allowed in a ground atom", v),
                ))
            }
        }
    }
    Ok(Fluent {
        name: template.pred,
        args,
    })
}

/// `(and atom*)`, a single atom, or `(and)`.
fn parse_conjunction(
    expr: &SExpr,
    ctx: Option<&DomainContext>,
) -> Result<Vec<AtomTemplate>, ParseError> {
    let items = expect_list(expr, "a condition")?;
    if items.first().and_then(|e| e.as_atom()) == Some("and") {
        items[1..]
            .iter()
            .map(|e| parse_atom_template(e, ctx))
            .collect()
    } else {
        Ok(vec![parse_atom_template(expr, ctx)?])
    }
}

struct EffectBody {
    add: Vec<AtomTemplate>,
    del: Vec<AtomTemplate>,
    conditional: Vec<CondEffectTemplate>,
}

fn parse_effect(expr: &SExpr, ctx: Option<&DomainContext>) -> Result<EffectBody, ParseError> {
    let mut body = EffectBody {
        add: vec![],
        del: vec![],
        conditional: vec![],
    };
    let items = expect_list(expr, "an effect")?;
    let entries: Vec<&SExpr> = if items.first().and_then(|e| e.as_atom()) == Some("and") {
        items[1..].iter().collect()
    } else {
        vec![expr]
    };
    for entry in entries {
        let entry_items = expect_list(entry, "an effect entry")?;
        match entry_items.first().and_then(|e| e.as_atom()) {
            Some("not") => {
                if entry_items.len() != 2 {
                    return Err(ParseError::at(entry.span(), "(not ...) takes one atom"));
                }
                body.del.push(parse_atom_template(&entry_items[1], ctx)?);
            }
            Some("when") => {
                if entry_items.len() != 3 {
                    return Err(ParseError::at(
                        entry.span(),
                        "(when ...) takes a condition and an effect",
                    ));
                }
                let condition = parse_conjunction(&entry_items[1], ctx)?;
                let inner = parse_effect(&entry_items[2], ctx)?;
                if !inner.conditional.is_empty() {
                    return Err(ParseError::at(
                        entry_items[2].span(),
                        "nested (when ...) effects are not supported",
                    ));
                }
                body.conditional.push(CondEffectTemplate {
                    condition,
                    add: inner.add,
                    del: inner.del,
                });
            }
            _ => body.add.push(parse_atom_template(entry, ctx)?),
        }
    }
    Ok(body)
}

// ---------------------------------------------------------------------------
// Domain parsing
// ---------------------------------------------------------------------------

/// Parses a domain file: type and predicate declarations plus all action
/// schemas including their `:belief` variants.
pub fn parse_domain(text: &str) -> Result<Domain, ParseError> {
    let top = read_one(text)?;
    let items = expect_list(&top, "(define ...)")?;
    if items.first().and_then(|e| e.as_atom()) != Some("define") {
        return Err(ParseError::at(top.span(), "expected (define ...)"));
    }
    let header = expect_list(
        items
            .get(1)
            .ok_or_else(|| ParseError::at(top.span(), "missing (domain NAME)"))?,
        "(domain NAME)",
    )?;
    if header.first().and_then(|e| e.as_atom()) != Some("domain") || header.len() != 2 {
        return Err(ParseError::at(items[1].span(), "expected (domain NAME)"));
    }
    let name = expect_atom(&header[1], "a domain name")?.to_string();

    let mut domain = Domain {
        name,
        types: vec![],
        predicates: vec![],
        schemas: vec![],
    };
    for section in &items[2..] {
        let section_items = expect_list(section, "a domain section")?;
        match section_items.first().and_then(|e| e.as_atom()) {
            Some(":types") => {
                for ty in &section_items[1..] {
                    domain.types.push(expect_atom(ty, "a type name")?.to_string());
                }
            }
            Some(":predicates") => {
                for decl in &section_items[1..] {
                    let decl_items = expect_list(decl, "a predicate declaration")?;
                    let (head, rest) = decl_items
                        .split_first()
                        .ok_or_else(|| ParseError::at(decl.span(), "empty predicate"))?;
                    let pred_name = expect_atom(head, "a predicate name")?.to_string();
                    let params = parse_typed_list(rest, decl.span())?;
                    domain.predicates.push(PredicateDecl {
                        name: pred_name,
                        params,
                    });
                }
            }
            Some(":action") => {
                let schema = parse_action(section_items, section.span())?;
                if domain
                    .schemas
                    .iter()
                    .any(|s| s.name == schema.name && s.belief_variant == schema.belief_variant)
                {
                    return Err(ParseError::at(
                        section.span(),
                        format!("duplicate schema for action {}", schema.name),
                    ));
                }
                domain.schemas.push(schema);
            }
            Some(other) => {
                return Err(ParseError::at(
                    section.span(),
                    format!("unsupported domain section {}", other),
                ))
            }
            None => return Err(ParseError::at(section.span(), "empty domain section")),
        }
    }
    check_domain(&domain)?;
    Ok(domain)
}

fn parse_action(items: &[SExpr], span: Span) -> Result<ActionSchema, ParseError> {
    let name = expect_atom(
        items
            .get(1)
            .ok_or_else(|| ParseError::at(span, "missing action name"))?,
        "an action name",
    )?
    .to_string();
    let mut schema = ActionSchema {
        name,
        belief_variant: false,
        actor: None,
        params: vec![],
        pre: vec![],
        add: vec![],
        del: vec![],
        conditional: vec![],
        cost: Cost::one(),
    };
    let mut i = 2;
    while i < items.len() {
        let key = expect_atom(&items[i], "an action keyword")?;
        match key {
            ":belief" => {
                schema.belief_variant = true;
                i += 1;
            }
            ":actor" => {
                let value = items
                    .get(i + 1)
                    .ok_or_else(|| ParseError::at(items[i].span(), ":actor needs a value"))?;
                schema.actor = match expect_atom(value, "robot or human")? {
                    "robot" => Some(Actor::Robot),
                    "human" => Some(Actor::Human),
                    other => {
                        return Err(ParseError::at(
                            value.span(),
                            format!("unknown actor {}", other),
                        ))
                    }
                };
                i += 2;
            }
            ":parameters" => {
                let value = items.get(i + 1).ok_or_else(|| {
                    ParseError::at(items[i].span(), ":parameters needs a value")
                })?;
                let list = expect_list(value, "a parameter list")?;
                schema.params = parse_typed_list(list, value.span())?;
                i += 2;
            }
            ":precondition" => {
                let value = items.get(i + 1).ok_or_else(|| {
                    ParseError::at(items[i].span(), ":precondition needs a value")
                })?;
                schema.pre = parse_conjunction(value, None)?;
                i += 2;
            }
            ":effect" => {
                let value = items
                    .get(i + 1)
                    .ok_or_else(|| ParseError::at(items[i].span(), ":effect needs a value"))?;
                let body = parse_effect(value, None)?;
                schema.add = body.add;
                schema.del = body.del;
                schema.conditional = body.conditional;
                i += 2;
            }
            ":cost" => {
                let value = items
                    .get(i + 1)
                    .ok_or_else(|| ParseError::at(items[i].span(), ":cost needs a value"))?;
                let text = expect_atom(value, "a cost literal")?;
                schema.cost = parse_cost(text).ok_or_else(|| {
                    ParseError::at(value.span(), format!("invalid cost literal {}", text))
                })?;
                i += 2;
            }
            other => {
                return Err(ParseError::at(
                    items[i].span(),
                    format!("unsupported action keyword {}", other),
                ))
            }
        }
    }
    Ok(schema)
}

/// Declaration checks that only need the domain itself: predicates exist with
/// the right arity and every variable is bound by the parameter list.
fn check_domain(domain: &Domain) -> Result<(), ParseError> {
    let arities: HashMap<&str, usize> = domain
        .predicates
        .iter()
        .map(|p| (p.name.as_str(), p.params.len()))
        .collect();
    let err = |msg: String| ParseError {
        message: msg,
        line: 0,
        col: 0,
    };
    for schema in &domain.schemas {
        let bound: BTreeSet<&str> = schema.params.iter().map(|p| p.name.as_str()).collect();
        let check_atoms = |atoms: &[AtomTemplate], role: &str| -> Result<(), ParseError> {
            for atom in atoms {
                match arities.get(atom.pred.as_str()) {
                    None => {
                        return Err(err(format!(
                            "action {} references undeclared predicate {}",
                            schema.name, atom.pred
                        )))
                    }
                    Some(&arity) if arity != atom.args.len() => {
                        return Err(err(format!(
                            "action {}: predicate {} expects {} arguments, found {}",
                            schema.name,
                            atom.pred,
                            arity,
                            atom.args.len()
                        )))
                    }
                    Some(_) => {}
                }
                for term in &atom.args {
                    if let Term::Var(v) = term {
                        if !bound.contains(v.as_str()) {
                            return Err(err(format!(
                                "action {}: unbound variable ?{} in {}",
                                schema.name, v, role
                            )));
                        }
                    }
                }
            }
            Ok(())
        };
        check_atoms(&schema.pre, "precondition")?;
        check_atoms(&schema.add, "effect")?;
        check_atoms(&schema.del, "effect")?;
        for cond in &schema.conditional {
            check_atoms(&cond.condition, "when-condition")?;
            check_atoms(&cond.add, "effect")?;
            check_atoms(&cond.del, "effect")?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Problem parsing
// ---------------------------------------------------------------------------

/// Parses a problem file against the declarations of the parsed domains.
pub fn parse_problem(text: &str, ctx: &DomainContext) -> Result<Problem, ParseError> {
    let top = read_one(text)?;
    let items = expect_list(&top, "(define ...)")?;
    if items.first().and_then(|e| e.as_atom()) != Some("define") {
        return Err(ParseError::at(top.span(), "expected (define ...)"));
    }
    let header = expect_list(
        items
            .get(1)
            .ok_or_else(|| ParseError::at(top.span(), "missing (problem NAME)"))?,
        "(problem NAME)",
    )?;
    if header.first().and_then(|e| e.as_atom()) != Some("problem") || header.len() != 2 {
        return Err(ParseError::at(items[1].span(), "expected (problem NAME)"));
    }
    let mut problem = Problem {
        name: expect_atom(&header[1], "a problem name")?.to_string(),
        domain: String::new(),
        objects: vec![],
        init: InitSpec::default(),
        true_init: vec![],
        goal: vec![],
    };
    for section in &items[2..] {
        let section_items = expect_list(section, "a problem section")?;
        match section_items.first().and_then(|e| e.as_atom()) {
            Some(":domain") => {
                problem.domain = expect_atom(
                    section_items
                        .get(1)
                        .ok_or_else(|| ParseError::at(section.span(), ":domain needs a name"))?,
                    "a domain name",
                )?
                .to_string();
            }
            Some(":objects") => {
                let typed = parse_typed_list(&section_items[1..], section.span())?;
                for param in typed {
                    if !ctx.types.contains(&param.ty) {
                        return Err(ParseError::at(
                            section.span(),
                            format!("unknown object type {}", param.ty),
                        ));
                    }
                    problem.objects.push((param.name, param.ty));
                }
            }
            Some(":init") => {
                for entry in &section_items[1..] {
                    let entry_items = expect_list(entry, "an init entry")?;
                    match entry_items.first().and_then(|e| e.as_atom()) {
                        Some("known") => {
                            for atom in &entry_items[1..] {
                                problem.init.known.push(parse_ground_atom(atom, ctx)?);
                            }
                        }
                        Some("unknown") => {
                            if entry_items.len() != 2 {
                                return Err(ParseError::at(
                                    entry.span(),
                                    "(unknown ...) takes one fluent",
                                ));
                            }
                            problem
                                .init
                                .unknown
                                .push(parse_ground_atom(&entry_items[1], ctx)?);
                        }
                        Some("oneof") => {
                            let group: Vec<Fluent> = entry_items[1..]
                                .iter()
                                .map(|a| parse_ground_atom(a, ctx))
                                .collect::<Result<_, _>>()?;
                            if group.len() < 2 {
                                return Err(ParseError::at(
                                    entry.span(),
                                    "(oneof ...) needs at least two fluents",
                                ));
                            }
                            problem.init.oneof.push(group);
                        }
                        _ => problem.init.known.push(parse_ground_atom(entry, ctx)?),
                    }
                }
            }
            Some(":true-init") => {
                for atom in &section_items[1..] {
                    problem.true_init.push(parse_ground_atom(atom, ctx)?);
                }
            }
            Some(":goal") => {
                let value = section_items
                    .get(1)
                    .ok_or_else(|| ParseError::at(section.span(), ":goal needs a formula"))?;
                for atom in parse_conjunction(value, Some(ctx))? {
                    let mut args = Vec::new();
                    for term in &atom.args {
                        match term {
                            Term::Const(c) => args.push(c.clone()),
                            Term::Var(_) => {
                                return Err(ParseError::at(
                                    value.span(),
                                    "goal atoms must be ground",
                                ))
                            }
                        }
                    }
                    problem.goal.push(Fluent {
                        name: atom.pred,
                        args,
                    });
                }
            }
            Some(other) => {
                return Err(ParseError::at(
                    section.span(),
                    format!("unsupported problem section {}", other),
                ))
            }
            None => return Err(ParseError::at(section.span(), "empty problem section")),
        }
    }
    let declared: BTreeSet<&str> = problem.objects.iter().map(|(n, _)| n.as_str()).collect();
    let all_atoms = problem
        .init
        .known
        .iter()
        .chain(&problem.init.unknown)
        .chain(problem.init.oneof.iter().flatten())
        .chain(&problem.true_init)
        .chain(&problem.goal);
    for fluent in all_atoms {
        for arg in &fluent.args {
            if !declared.contains(arg.as_str()) {
                return Err(ParseError {
                    message: format!("{} references undeclared object {}", fluent, arg),
                    line: 0,
                    col: 0,
                });
            }
        }
    }
    for group in &problem.init.oneof {
        for member in group {
            if problem.init.known.contains(member) {
                return Err(ParseError {
                    message: format!("oneof member {} is already known", member),
                    line: 0,
                    col: 0,
                });
            }
        }
    }
    for fluent in &problem.init.unknown {
        if problem.init.known.contains(fluent) {
            return Err(ParseError {
                message: format!("unknown fluent {} is already known", fluent),
                line: 0,
                col: 0,
            });
        }
    }
    Ok(problem)
}

// ---------------------------------------------------------------------------
// Sensor parsing
// ---------------------------------------------------------------------------

/// Parses a sensor file: `(sensors (default TOKEN [null]) (rule ...)*)`.
pub fn parse_sensor(text: &str, ctx: &DomainContext) -> Result<SensorSpec, ParseError> {
    let top = read_one(text)?;
    let items = expect_list(&top, "(sensors ...)")?;
    if items.first().and_then(|e| e.as_atom()) != Some("sensors") {
        return Err(ParseError::at(top.span(), "expected (sensors ...)"));
    }
    let mut default: Option<(String, bool)> = None;
    let mut rules = Vec::new();
    for entry in &items[1..] {
        let entry_items = expect_list(entry, "a sensor entry")?;
        match entry_items.first().and_then(|e| e.as_atom()) {
            Some("default") => {
                if default.is_some() {
                    return Err(ParseError::at(entry.span(), "duplicate default"));
                }
                let token = expect_atom(
                    entry_items
                        .get(1)
                        .ok_or_else(|| ParseError::at(entry.span(), "default needs a token"))?,
                    "a token",
                )?
                .to_string();
                let is_null = match entry_items.get(2) {
                    None => false,
                    Some(flag) => {
                        if expect_atom(flag, "null")? != "null" {
                            return Err(ParseError::at(
                                flag.span(),
                                "only the null flag may follow the default token",
                            ));
                        }
                        true
                    }
                };
                default = Some((token, is_null));
            }
            Some("rule") => {
                let pattern = entry_items
                    .get(1)
                    .ok_or_else(|| ParseError::at(entry.span(), "rule needs an action"))?;
                let (action, args) = match pattern {
                    SExpr::Atom { text, .. } => (text.clone(), None),
                    SExpr::List { items, span } => {
                        let (head, rest) = items
                            .split_first()
                            .ok_or_else(|| ParseError::at(*span, "empty action pattern"))?;
                        let name = expect_atom(head, "an action name")?.to_string();
                        let bound: Vec<String> = rest
                            .iter()
                            .map(|a| expect_atom(a, "an argument").map(str::to_string))
                            .collect::<Result<_, _>>()?;
                        (name, Some(bound))
                    }
                };
                if !ctx.action_names.contains(&action) {
                    return Err(ParseError::at(
                        pattern.span(),
                        format!("rule references unknown action {}", action),
                    ));
                }
                let mut condition = Vec::new();
                let mut token_idx = 2;
                if let Some(SExpr::List { items: cond_items, .. }) = entry_items.get(2) {
                    if cond_items.first().and_then(|e| e.as_atom()) == Some("condition") {
                        for atom in &cond_items[1..] {
                            condition.push(parse_ground_atom(atom, ctx)?);
                        }
                        token_idx = 3;
                    }
                }
                let token = expect_atom(
                    entry_items
                        .get(token_idx)
                        .ok_or_else(|| ParseError::at(entry.span(), "rule needs a token"))?,
                    "a token",
                )?
                .to_string();
                if entry_items.len() > token_idx + 1 {
                    return Err(ParseError::at(
                        entry_items[token_idx + 1].span(),
                        "unexpected trailing form in rule",
                    ));
                }
                rules.push(SensorRuleSpec {
                    action,
                    args,
                    condition,
                    token,
                });
            }
            _ => return Err(ParseError::at(entry.span(), "expected (default ...) or (rule ...)")),
        }
    }
    let (default_token, default_is_null) =
        default.ok_or_else(|| ParseError::at(top.span(), "sensor file declares no default"))?;
    Ok(SensorSpec {
        default_token,
        default_is_null,
        rules,
    })
}

// ---------------------------------------------------------------------------
// Initial-belief expansion
// ---------------------------------------------------------------------------

/// Number of combinations before duplicate elimination:
/// 2^(#unknown) * product of oneof group sizes.
pub fn expansion_count(init: &InitSpec) -> u128 {
    let mut count: u128 = 1u128 << init.unknown.len().min(100);
    for group in &init.oneof {
        count = count.saturating_mul(group.len() as u128);
    }
    count
}

/// Cartesian expansion of the initial-state specification: one state per
/// combination of oneof choices and unknown valuations, each unioned with
/// the known fluents.
pub fn expand_initial_belief(
    init: &InitSpec,
    table: &mut FluentTable,
    cap: usize,
) -> Result<Belief, FrontendError> {
    let count = expansion_count(init);
    if count > cap as u128 {
        return Err(FrontendError::BeliefCapExceeded { size: count, cap });
    }
    let known: Vec<FluentId> = init.known.iter().map(|f| table.intern(f.clone())).collect();
    let unknown: Vec<FluentId> = init
        .unknown
        .iter()
        .map(|f| table.intern(f.clone()))
        .collect();
    let oneof: Vec<Vec<FluentId>> = init
        .oneof
        .iter()
        .map(|g| g.iter().map(|f| table.intern(f.clone())).collect())
        .collect();

    let mut states = BTreeSet::new();
    let unknown_combos = 1usize << unknown.len();
    let mut choice = vec![0usize; oneof.len()];
    loop {
        for mask in 0..unknown_combos {
            let mut fluents: Vec<FluentId> = known.clone();
            for (i, &f) in unknown.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    fluents.push(f);
                }
            }
            for (g, &c) in choice.iter().enumerate() {
                fluents.push(oneof[g][c]);
            }
            states.insert(WorldState::new(fluents));
        }
        // Advance the mixed-radix oneof counter.
        let mut g = 0;
        loop {
            if g == oneof.len() {
                let belief = Belief::from_states(states)?;
                return Ok(belief);
            }
            choice[g] += 1;
            if choice[g] < oneof[g].len() {
                break;
            }
            choice[g] = 0;
            g += 1;
        }
    }
}

/// The designated true initial state: known fluents plus the uncertain
/// fluents listed in `:true-init`.
pub fn true_initial_state(problem: &Problem, table: &mut FluentTable) -> WorldState {
    WorldState::new(
        problem
            .init
            .known
            .iter()
            .chain(&problem.true_init)
            .map(|f| table.intern(f.clone())),
    )
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

struct VariantPair<'a> {
    base: &'a ActionSchema,
    belief: Option<&'a ActionSchema>,
}

fn pair_variants<'a>(schemas: &[&'a ActionSchema]) -> Result<Vec<VariantPair<'a>>, FrontendError> {
    let mut pairs: Vec<VariantPair<'a>> = Vec::new();
    let mut index: HashMap<(&str, Actor), usize> = HashMap::new();
    for schema in schemas {
        let actor = schema.actor.ok_or_else(|| FrontendError::MissingActor {
            name: schema.name.clone(),
        })?;
        if schema.belief_variant {
            continue;
        }
        index.insert((schema.name.as_str(), actor), pairs.len());
        pairs.push(VariantPair {
            base: schema,
            belief: None,
        });
    }
    for schema in schemas {
        if !schema.belief_variant {
            continue;
        }
        let actor = schema.actor.expect("checked above");
        let slot = index
            .get(&(schema.name.as_str(), actor))
            .ok_or_else(|| FrontendError::MissingBaseSchema {
                name: schema.name.clone(),
            })?;
        let pair = &mut pairs[*slot];
        if pair.base.params != schema.params {
            return Err(FrontendError::VariantParamMismatch {
                name: schema.name.clone(),
            });
        }
        pair.belief = Some(schema);
    }
    Ok(pairs)
}

fn instantiate_fluent(
    atom: &AtomTemplate,
    binding: &HashMap<&str, &str>,
    objects: &BTreeSet<&str>,
) -> Result<Fluent, FrontendError> {
    let mut args = Vec::with_capacity(atom.args.len());
    for term in &atom.args {
        match term {
            Term::Var(v) => args.push(
                binding
                    .get(v.as_str())
                    .expect("binding covers all parameters")
                    .to_string(),
            ),
            Term::Const(c) => {
                if !objects.contains(c.as_str()) {
                    return Err(FrontendError::UnknownObject { name: c.clone() });
                }
                args.push(c.clone());
            }
        }
    }
    Ok(Fluent {
        name: atom.pred.clone(),
        args,
    })
}

fn instantiate_spec(
    schema: &ActionSchema,
    binding: &HashMap<&str, &str>,
    objects: &BTreeSet<&str>,
    table: &mut FluentTable,
) -> Result<EffectSpec, FrontendError> {
    let intern_all = |atoms: &[AtomTemplate],
                          table: &mut FluentTable|
     -> Result<BTreeSet<FluentId>, FrontendError> {
        atoms
            .iter()
            .map(|a| Ok(table.intern(instantiate_fluent(a, binding, objects)?)))
            .collect()
    };
    let pre = intern_all(&schema.pre, table)?;
    let add = intern_all(&schema.add, table)?;
    let del = intern_all(&schema.del, table)?;
    let mut conditional = Vec::new();
    for cond in &schema.conditional {
        conditional.push(ConditionalEffect {
            condition: intern_all(&cond.condition, table)?,
            add: intern_all(&cond.add, table)?,
            del: intern_all(&cond.del, table)?,
        });
    }
    Ok(EffectSpec {
        pre,
        add,
        del,
        conditional,
    })
}

/// All type-consistent parameter bindings of a schema, in object declaration
/// order.
fn bindings<'a>(
    schema: &'a ActionSchema,
    objects_by_type: &'a BTreeMap<&'a str, Vec<&'a str>>,
) -> Vec<Vec<&'a str>> {
    let mut result: Vec<Vec<&'a str>> = vec![vec![]];
    for param in &schema.params {
        let candidates: &[&str] = objects_by_type
            .get(param.ty.as_str())
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        let mut next = Vec::with_capacity(result.len() * candidates.len());
        for partial in &result {
            for &obj in candidates {
                let mut extended = partial.clone();
                extended.push(obj);
                next.push(extended);
            }
        }
        result = next;
    }
    result
}

/// Grounds the parsed inputs into a validated-ready problem instance.
///
/// Belief-variant schemas supply the belief-progression effects of their
/// ground actions; base schemas drive the true-state transition. Ground
/// actions whose precondition mentions a static fluent that no initial
/// state can satisfy are pruned.
pub fn ground(
    domains: &[&Domain],
    problem: &Problem,
    sensor_spec: &SensorSpec,
    cap: usize,
) -> Result<MaCoppProblem, FrontendError> {
    let schemas: Vec<&ActionSchema> = domains.iter().flat_map(|d| d.schemas.iter()).collect();
    let pairs = pair_variants(&schemas)?;

    let mut objects_by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, ty) in &problem.objects {
        objects_by_type.entry(ty.as_str()).or_default().push(name);
    }
    let object_names: BTreeSet<&str> = problem.objects.iter().map(|(n, _)| n.as_str()).collect();

    // Fluents whose predicate never appears in any effect are static: a
    // precondition on a static fluent outside every possible initial state
    // can never be satisfied.
    let mut effect_preds: BTreeSet<&str> = BTreeSet::new();
    for schema in &schemas {
        for atom in schema.add.iter().chain(&schema.del) {
            effect_preds.insert(&atom.pred);
        }
        for cond in &schema.conditional {
            for atom in cond.add.iter().chain(&cond.del) {
                effect_preds.insert(&atom.pred);
            }
        }
    }
    let possible_init: BTreeSet<&Fluent> = problem
        .init
        .known
        .iter()
        .chain(&problem.init.unknown)
        .chain(problem.init.oneof.iter().flatten())
        .chain(&problem.true_init)
        .collect();

    let mut table = FluentTable::new();
    let initial_belief = expand_initial_belief(&problem.init, &mut table, cap)?;
    let initial_state = true_initial_state(problem, &mut table);
    if !initial_belief.contains(&initial_state) {
        return Err(FrontendError::TrueInitNotInBelief);
    }

    let mut robot_actions = Vec::new();
    let mut human_actions = Vec::new();
    for pair in &pairs {
        let actor = pair.base.actor.expect("checked in pair_variants");
        'binding: for binding_values in bindings(pair.base, &objects_by_type) {
            let binding: HashMap<&str, &str> = pair
                .base
                .params
                .iter()
                .map(|p| p.name.as_str())
                .zip(binding_values.iter().copied())
                .collect();

            // Static pruning before interning anything.
            for schema in [Some(pair.base), pair.belief].into_iter().flatten() {
                for atom in &schema.pre {
                    if effect_preds.contains(atom.pred.as_str()) {
                        continue;
                    }
                    let fluent = instantiate_fluent(atom, &binding, &object_names)?;
                    if !possible_init.contains(&fluent) {
                        continue 'binding;
                    }
                }
            }

            let base = instantiate_spec(pair.base, &binding, &object_names, &mut table)?;
            let belief = match pair.belief {
                Some(schema) => instantiate_spec(schema, &binding, &object_names, &mut table)?,
                None => base.clone(),
            };
            let action = GroundAction {
                actor,
                name: pair.base.name.clone(),
                args: binding_values.iter().map(|s| s.to_string()).collect(),
                base,
                belief,
                cost: pair.base.cost,
            };
            for spec in [&action.base, &action.belief] {
                if spec.add.intersection(&spec.del).next().is_some() {
                    return Err(FrontendError::ConflictingEffects {
                        action: action.to_string(),
                    });
                }
            }
            match actor {
                Actor::Robot => robot_actions.push(action),
                Actor::Human => human_actions.push(action),
            }
        }
    }
    robot_actions.sort_by(|a, b| a.signature().cmp(&b.signature()).then(a.args.cmp(&b.args)));
    human_actions.sort_by(|a, b| a.signature().cmp(&b.signature()).then(a.args.cmp(&b.args)));

    // Observation symbols: the default first, then rule tokens in order of
    // appearance.
    let mut symbols = vec![ObservationSymbol {
        token: sensor_spec.default_token.clone(),
        is_null: sensor_spec.default_is_null,
    }];
    let mut token_ids: HashMap<&str, ObsId> = HashMap::new();
    token_ids.insert(sensor_spec.default_token.as_str(), ObsId(0));
    let mut rules = Vec::new();
    for rule in &sensor_spec.rules {
        let symbol = match token_ids.get(rule.token.as_str()) {
            Some(&id) => id,
            None => {
                let id = ObsId(symbols.len() as u32);
                symbols.push(ObservationSymbol {
                    token: rule.token.clone(),
                    is_null: false,
                });
                token_ids.insert(rule.token.as_str(), id);
                id
            }
        };
        let mut condition = BTreeSet::new();
        for fluent in &rule.condition {
            for arg in &fluent.args {
                if !object_names.contains(arg.as_str()) {
                    return Err(FrontendError::UnknownObject { name: arg.clone() });
                }
            }
            condition.insert(table.intern(fluent.clone()));
        }
        rules.push(SensorRule {
            action_name: rule.action.clone(),
            args: rule.args.clone(),
            condition,
            symbol,
        });
    }
    let sensor = SensorModel::new(symbols, rules, ObsId(0))?;

    let human_goal: BTreeSet<FluentId> = problem
        .goal
        .iter()
        .map(|f| table.intern(f.clone()))
        .collect();

    Ok(MaCoppProblem {
        name: problem.name.clone(),
        table,
        robot_actions,
        human_actions,
        initial_state,
        initial_belief,
        human_goal,
        sensor,
    })
}

// ---------------------------------------------------------------------------
// Pretty-printing (round-trip support)
// ---------------------------------------------------------------------------

fn write_typed_list(f: &mut fmt::Formatter<'_>, params: &[TypedParam], var: bool) -> fmt::Result {
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            write!(f, " ")?;
        }
        if var {
            write!(f, "?{} - {}", p.name, p.ty)?;
        } else {
            write!(f, "{} - {}", p.name, p.ty)?;
        }
    }
    Ok(())
}

impl fmt::Display for AtomTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.pred)?;
        for arg in &self.args {
            match arg {
                Term::Var(v) => write!(f, " ?{}", v)?,
                Term::Const(c) => write!(f, " {}", c)?,
            }
        }
        write!(f, ")")
    }
}

fn write_conjunction(f: &mut fmt::Formatter<'_>, atoms: &[AtomTemplate]) -> fmt::Result {
    write!(f, "(and")?;
    for atom in atoms {
        write!(f, " {}", atom)?;
    }
    write!(f, ")")
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(define (domain {})", self.name)?;
        if !self.types.is_empty() {
            writeln!(f, "  (:types {})", self.types.join(" "))?;
        }
        if !self.predicates.is_empty() {
            write!(f, "  (:predicates")?;
            for pred in &self.predicates {
                write!(f, " ({}", pred.name)?;
                if !pred.params.is_empty() {
                    write!(f, " ")?;
                    write_typed_list(f, &pred.params, true)?;
                }
                write!(f, ")")?;
            }
            writeln!(f, ")")?;
        }
        for schema in &self.schemas {
            write!(f, "  (:action {}", schema.name)?;
            if schema.belief_variant {
                write!(f, " :belief")?;
            }
            if let Some(actor) = schema.actor {
                write!(f, " :actor {}", actor)?;
            }
            write!(f, " :parameters (")?;
            write_typed_list(f, &schema.params, true)?;
            write!(f, ") :precondition ")?;
            write_conjunction(f, &schema.pre)?;
            write!(f, " :effect (and")?;
            for atom in &schema.add {
                write!(f, " {}", atom)?;
            }
            for atom in &schema.del {
                write!(f, " (not {})", atom)?;
            }
            for cond in &schema.conditional {
                write!(f, " (when ")?;
                write_conjunction(f, &cond.condition)?;
                write!(f, " (and")?;
                for atom in &cond.add {
                    write!(f, " {}", atom)?;
                }
                for atom in &cond.del {
                    write!(f, " (not {})", atom)?;
                }
                write!(f, "))")?;
            }
            writeln!(f, ") :cost {})", crate::model::format_cost(schema.cost))?;
        }
        write!(f, ")")
    }
}
