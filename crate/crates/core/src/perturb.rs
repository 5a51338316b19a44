//! Contrastive perturbation engine: apply exactly one typed physical
//! violation to a valid trace to build chosen/rejected preference pairs.
//!
//! 25 perturbations across the 9 failure labels, split 15 seen / 10 held-out.
//! Every function works on a deep copy and returns a change description;
//! unchanged output is filtered as a no-op. The lookup tables are published
//! in docs/perturbations.md.

use crate::prompts::{build_prompt, Condition, Message};
use crate::scenario::rule_text;
use crate::trace::{value_as_f64, Family, Relation, Split, State0, Trace};
use crate::verifier::{key_has_nonnegative_bound, Label};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Seen,
    HeldOut,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Seen => "seen",
            Partition::HeldOut => "held_out",
        }
    }
}

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("trace {trace_id} admits only {got} applicable perturbations, need {need}")]
    InsufficientPerturbations {
        trace_id: String,
        need: usize,
        got: usize,
    },
}

type ApplyFn = fn(&mut Trace, &mut dyn RngCore) -> Option<String>;

pub struct Perturbation {
    pub name: &'static str,
    pub label: Label,
    pub partition: Partition,
    apply: ApplyFn,
}

/// The 18 direction-opposite pairs, matched longest-first on word boundaries.
pub const DIRECTION_OPPOSITES: [(&str, &str); 18] = [
    ("down the incline", "up the incline"),
    ("toward the center", "away from the center"),
    ("toward center", "away from center"),
    ("away from the surface", "into the surface"),
    ("into the page", "out of the page"),
    ("toward each other", "away from each other"),
    ("counterclockwise", "clockwise"),
    ("ascending", "descending"),
    ("attracting", "repelling"),
    ("compressed", "stretched"),
    ("rightward", "leftward"),
    ("downward", "upward"),
    ("backward", "forward"),
    ("rising", "sinking"),
    ("inward", "outward"),
    ("right", "left"),
    ("down", "up"),
    ("east", "west"),
];

/// Sign-bearing word pairs used to flip the qualitative direction of
/// transition effects and predicted changes.
const SIGN_WORD_PAIRS: [(&str, &str); 6] = [
    ("accelerates", "decelerates"),
    ("increases", "decreases"),
    ("speeds up", "slows down"),
    ("rightward", "leftward"),
    ("upward", "downward"),
    ("forward", "backward"),
];

/// Fixed relation swap table (one entry per relation type).
const RELATION_SWAPS: [(&str, &str); 14] = [
    ("on", "above"),
    ("above", "below"),
    ("below", "above"),
    ("under", "on"),
    ("contact", "separated"),
    ("separated", "contact"),
    ("left_of", "right_of"),
    ("right_of", "left_of"),
    ("inside", "contains"),
    ("contains", "inside"),
    ("attached", "separated"),
    ("aligned", "left_of"),
    ("before", "after"),
    ("after", "before"),
];

/// Partner that directly contradicts a relation on the same ordered args.
const CONTRADICTION_PARTNERS: [(&str, &str); 10] = [
    ("on", "under"),
    ("under", "on"),
    ("above", "below"),
    ("below", "above"),
    ("contact", "separated"),
    ("separated", "contact"),
    ("left_of", "right_of"),
    ("right_of", "left_of"),
    ("inside", "contains"),
    ("contains", "inside"),
];

const RESCALE_FACTORS: [(f64, &str); 4] = [
    (100.0, "a cm reading recorded as m"),
    (1000.0, "a km reading recorded as m"),
    (0.01, "an m reading recorded as cm"),
    (0.001, "an m reading recorded as mm"),
];

/// The fixed registry: 25 perturbations, 15 seen and 10 held-out, covering
/// all 9 taxonomy labels.
pub fn registry() -> &'static [Perturbation] {
    const REGISTRY: &[Perturbation] = &[
        Perturbation { name: "reverse_force_direction", label: Label::Force, partition: Partition::Seen, apply: reverse_force_direction },
        Perturbation { name: "reverse_gravity_direction", label: Label::Force, partition: Partition::Seen, apply: reverse_gravity_direction },
        Perturbation { name: "reverse_normal_direction", label: Label::Force, partition: Partition::HeldOut, apply: reverse_normal_direction },
        Perturbation { name: "swap_relation", label: Label::Relation, partition: Partition::Seen, apply: swap_relation },
        Perturbation { name: "add_contradictory_relation", label: Label::Relation, partition: Partition::Seen, apply: add_contradictory_relation },
        Perturbation { name: "rescale_variable", label: Label::UnitScale, partition: Partition::Seen, apply: rescale_variable },
        Perturbation { name: "swap_answer_unit", label: Label::UnitScale, partition: Partition::Seen, apply: swap_answer_unit },
        Perturbation { name: "rescale_new_variable", label: Label::UnitScale, partition: Partition::HeldOut, apply: rescale_new_variable },
        Perturbation { name: "swap_temporal_state", label: Label::Temporal, partition: Partition::Seen, apply: swap_temporal_state },
        Perturbation { name: "inject_pre_marker", label: Label::Temporal, partition: Partition::HeldOut, apply: inject_pre_marker },
        Perturbation { name: "corrupt_answer_value", label: Label::Faithfulness, partition: Partition::Seen, apply: corrupt_answer_value },
        Perturbation { name: "amplify_answer", label: Label::Faithfulness, partition: Partition::HeldOut, apply: amplify_answer },
        Perturbation { name: "reassign_force_target", label: Label::Object, partition: Partition::Seen, apply: reassign_force_target },
        Perturbation { name: "reassign_relation_arg", label: Label::Object, partition: Partition::Seen, apply: reassign_relation_arg },
        Perturbation { name: "rename_object_dangling", label: Label::Object, partition: Partition::HeldOut, apply: rename_object_dangling },
        Perturbation { name: "merge_objects", label: Label::Object, partition: Partition::HeldOut, apply: merge_objects },
        Perturbation { name: "perturb_state_variable", label: Label::State, partition: Partition::Seen, apply: perturb_state_variable },
        Perturbation { name: "misstate_motion", label: Label::State, partition: Partition::Seen, apply: misstate_motion },
        Perturbation { name: "negative_variable", label: Label::State, partition: Partition::HeldOut, apply: negative_variable },
        Perturbation { name: "reverse_effect_sign", label: Label::Transition, partition: Partition::Seen, apply: reverse_effect_sign },
        Perturbation { name: "inject_foreign_rule", label: Label::Transition, partition: Partition::Seen, apply: inject_foreign_rule },
        Perturbation { name: "corrupt_equation", label: Label::Transition, partition: Partition::HeldOut, apply: corrupt_equation },
        Perturbation { name: "reword_rule_vague", label: Label::Transition, partition: Partition::HeldOut, apply: reword_rule_vague },
        Perturbation { name: "reverse_predicted_change_sign", label: Label::Intervention, partition: Partition::Seen, apply: reverse_predicted_change_sign },
        Perturbation { name: "flip_outcome_sign", label: Label::Intervention, partition: Partition::HeldOut, apply: flip_outcome_sign },
    ];
    REGISTRY
}

pub fn find_perturbation(name: &str) -> Option<&'static Perturbation> {
    registry().iter().find(|p| p.name == name)
}

/// Apply one perturbation to a deep copy. Returns the modified trace plus a
/// human-readable change description, or `None` when nothing changed.
pub fn apply_perturbation(
    trace: &Trace,
    perturbation: &Perturbation,
    rng: &mut impl Rng,
) -> Option<(Trace, String)> {
    let mut copy = trace.clone();
    let description = (perturbation.apply)(&mut copy, rng)?;
    if &copy == trace {
        return None;
    }
    Some((copy, description))
}

/// Reverse a direction phrase via the opposite table (word-boundary,
/// longest-first). `None` when no entry applies.
pub fn opposite_direction(direction: &str) -> Option<String> {
    let mut keys: Vec<(&str, &str)> = Vec::with_capacity(36);
    for (a, b) in DIRECTION_OPPOSITES {
        keys.push((a, b));
        keys.push((b, a));
    }
    keys.sort_by(|x, y| y.0.len().cmp(&x.0.len()).then(x.0.cmp(y.0)));
    replace_first_bounded(direction, &keys)
}

fn swap_sign_words(text: &str) -> Option<String> {
    let mut keys: Vec<(&str, &str)> = Vec::with_capacity(12);
    for (a, b) in SIGN_WORD_PAIRS {
        keys.push((a, b));
        keys.push((b, a));
    }
    keys.sort_by(|x, y| y.0.len().cmp(&x.0.len()).then(x.0.cmp(y.0)));
    replace_first_bounded(text, &keys)
}

/// Replace the first word-boundary occurrence of any key with its partner.
fn replace_first_bounded(text: &str, keys: &[(&str, &str)]) -> Option<String> {
    for (key, partner) in keys {
        if let Some(pos) = find_bounded(text, key) {
            let mut out = String::with_capacity(text.len());
            out.push_str(&text[..pos]);
            out.push_str(partner);
            out.push_str(&text[pos + key.len()..]);
            return Some(out);
        }
    }
    None
}

fn find_bounded(text: &str, key: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(rel) = text[start..].find(key) {
        let pos = start + rel;
        let end = pos + key.len();
        let left_ok = pos == 0 || !bytes[pos - 1].is_ascii_alphanumeric();
        let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if left_ok && right_ok {
            return Some(pos);
        }
        start = pos + 1;
    }
    None
}

fn state0_mut(trace: &mut Trace) -> Option<&mut State0> {
    trace.state_0.as_mut()
}

fn pick(rng: &mut dyn RngCore, len: usize) -> usize {
    rng.gen_range(0..len)
}

fn reverse_force_direction(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let candidates: Vec<usize> = (0..s0.forces.len())
        .filter(|&i| opposite_direction(&s0.forces[i].direction).is_some())
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let idx = candidates[pick(rng, candidates.len())];
    let old = s0.forces[idx].direction.clone();
    let new = opposite_direction(&old)?;
    s0.forces[idx].direction = new.clone();
    Some(format!(
        "reversed force '{}' direction: '{old}' -> '{new}'",
        s0.forces[idx].name
    ))
}

fn reverse_named_force(trace: &mut Trace, needle: &str) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let idx = s0
        .forces
        .iter()
        .position(|f| f.name.to_lowercase().contains(needle))?;
    let old = s0.forces[idx].direction.clone();
    let new = opposite_direction(&old)?;
    s0.forces[idx].direction = new.clone();
    Some(format!(
        "reversed force '{}' direction: '{old}' -> '{new}'",
        s0.forces[idx].name
    ))
}

fn reverse_gravity_direction(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    reverse_named_force(trace, "gravity")
}

fn reverse_normal_direction(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    reverse_named_force(trace, "normal")
}

fn swap_relation(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let candidates: Vec<(usize, &str)> = s0
        .relations
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            RELATION_SWAPS
                .iter()
                .find(|(from, to)| *from == r.rel_type && *to != r.rel_type)
                .map(|(_, to)| (i, *to))
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let (idx, new_type) = candidates[pick(rng, candidates.len())];
    let old = s0.relations[idx].rel_type.clone();
    s0.relations[idx].rel_type = new_type.to_string();
    Some(format!(
        "swapped relation '{old}' -> '{new_type}' on {:?}",
        s0.relations[idx].args
    ))
}

fn add_contradictory_relation(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let candidates: Vec<(usize, &str)> = s0
        .relations
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            CONTRADICTION_PARTNERS
                .iter()
                .find(|(from, _)| *from == r.rel_type)
                .map(|(_, to)| (i, *to))
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let (idx, partner) = candidates[pick(rng, candidates.len())];
    let args = s0.relations[idx].args.clone();
    if args.len() != 2 {
        return None;
    }
    s0.relations.push(Relation::new(partner, &args[0], &args[1]));
    Some(format!(
        "added '{partner}' on {args:?}, contradicting '{}'",
        s0.relations[idx].rel_type
    ))
}

fn rescale_variable(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let keys: Vec<String> = s0
        .variables
        .iter()
        .filter(|(_, v)| value_as_f64(v).map(|x| x != 0.0).unwrap_or(false))
        .map(|(k, _)| k.clone())
        .collect();
    if keys.is_empty() {
        return None;
    }
    let key = keys[pick(rng, keys.len())].clone();
    let (factor, blurb) = RESCALE_FACTORS[pick(rng, RESCALE_FACTORS.len())];
    let old = value_as_f64(&s0.variables[&key])?;
    s0.variables.insert(key.clone(), json!(old * factor));
    Some(format!(
        "rescaled state_0.variables.{key} by {factor} ({blurb})"
    ))
}

fn swap_answer_unit(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let answer = trace.answer.as_mut()?;
    let unit = answer.unit.clone()?;
    let partner = crate::units::confusion_partner(&unit)?;
    answer.unit = Some(partner.to_string());
    Some(format!("confused answer unit '{unit}' with '{partner}'"))
}

fn rescale_new_variable(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s1 = trace.state_1.as_mut()?;
    let keys: Vec<String> = s1
        .new_variables
        .iter()
        .filter(|(_, v)| value_as_f64(v).map(|x| x != 0.0).unwrap_or(false))
        .map(|(k, _)| k.clone())
        .collect();
    if keys.is_empty() {
        return None;
    }
    let key = keys[pick(rng, keys.len())].clone();
    let old = value_as_f64(&s1.new_variables[&key])?;
    s1.new_variables.insert(key.clone(), json!(old * 1000.0));
    Some(format!(
        "rescaled state_1.new_variables.{key} by 1000 (a kJ-for-J style confusion)"
    ))
}

fn swap_temporal_state(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let s1 = trace.state_1.as_mut()?;
    let s0 = trace.state_0.as_mut()?;
    if s0.variables.is_empty() && s1.new_variables.is_empty() {
        return None;
    }
    std::mem::swap(&mut s0.variables, &mut s1.new_variables);
    s0.assumptions
        .push("describes the post-collision final state".to_string());
    Some("swapped state_0.variables with state_1.new_variables and marked s0 as the final state"
        .to_string())
}

fn inject_pre_marker(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let s1 = trace.state_1.as_mut()?;
    if s1.predicted_change.is_empty() {
        return None;
    }
    s1.predicted_change = format!("pre-collision framing: {}", s1.predicted_change);
    Some("prefixed state_1.predicted_change with pre-transition language".to_string())
}

fn scale_answer(trace: &mut Trace, factor: f64) -> Option<String> {
    let answer = trace.answer.as_mut()?;
    let old = answer.value_f64()?;
    let new = if old == 0.0 { factor } else { old * factor };
    answer.value = json!(new);
    Some(format!("changed answer value {old} -> {new} (x{factor:.2})"))
}

fn corrupt_answer_value(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    if trace.answer.as_ref()?.value_f64().is_some() {
        let factor = rng.gen_range(3.0..=50.0);
        return scale_answer(trace, factor);
    }
    // Multiple-choice answers flip to the next letter instead.
    let answer = trace.answer.as_mut()?;
    let text = answer.value_text();
    let letter = text.trim().chars().next().filter(|c| c.is_ascii_alphabetic())?;
    let flipped = if letter.to_ascii_uppercase() == 'A' { 'B' } else { 'A' };
    answer.value = json!(flipped.to_string());
    Some(format!("flipped choice letter '{letter}' -> '{flipped}'"))
}

fn amplify_answer(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let factor = rng.gen_range(200.0..=1000.0);
    scale_answer(trace, factor)
}

fn reassign_force_target(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    if s0.forces.is_empty() {
        return None;
    }
    let fi = pick(rng, s0.forces.len());
    let current = s0.forces[fi].target.clone();
    let others: Vec<String> = s0
        .objects
        .iter()
        .map(|o| o.name.clone())
        .filter(|n| *n != current)
        .collect();
    if others.is_empty() {
        return None;
    }
    let new = others[pick(rng, others.len())].clone();
    s0.forces[fi].target = new.clone();
    Some(format!(
        "reassigned force '{}' target: '{current}' -> '{new}'",
        s0.forces[fi].name
    ))
}

fn reassign_relation_arg(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    if s0.relations.is_empty() {
        return None;
    }
    let ri = pick(rng, s0.relations.len());
    let arg_idx = pick(rng, 2.min(s0.relations[ri].args.len().max(1)));
    let args = s0.relations[ri].args.clone();
    let others: Vec<String> = s0
        .objects
        .iter()
        .map(|o| o.name.clone())
        .filter(|n| !args.contains(n))
        .collect();
    if others.is_empty() || arg_idx >= args.len() {
        return None;
    }
    let new = others[pick(rng, others.len())].clone();
    let old = s0.relations[ri].args[arg_idx].clone();
    s0.relations[ri].args[arg_idx] = new.clone();
    Some(format!(
        "relation '{}' arg[{arg_idx}]: '{old}' -> '{new}'",
        s0.relations[ri].rel_type
    ))
}

fn rename_object_dangling(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let referenced: Vec<usize> = (0..s0.objects.len())
        .filter(|&i| {
            let name = &s0.objects[i].name;
            s0.forces.iter().any(|f| &f.target == name)
                || s0.relations.iter().any(|r| r.args.contains(name))
        })
        .collect();
    if referenced.is_empty() {
        return None;
    }
    let idx = referenced[pick(rng, referenced.len())];
    let old = s0.objects[idx].name.clone();
    let mut new = "unlabeled_item".to_string();
    while s0.objects.iter().any(|o| o.name == new) {
        new.push('2');
    }
    s0.objects[idx].name = new.clone();
    Some(format!(
        "renamed object '{old}' -> '{new}' leaving stale references behind"
    ))
}

fn merge_objects(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    if s0.objects.len() < 2 {
        return None;
    }
    let victim_idx = pick(rng, s0.objects.len());
    let survivor_idx = (victim_idx + 1) % s0.objects.len();
    let victim = s0.objects[victim_idx].name.clone();
    let survivor = s0.objects[survivor_idx].name.clone();
    s0.objects.remove(victim_idx);
    for force in &mut s0.forces {
        if force.target == victim {
            force.target = survivor.clone();
        }
    }
    for rel in &mut s0.relations {
        for arg in &mut rel.args {
            if *arg == victim {
                *arg = survivor.clone();
            }
        }
    }
    Some(format!("merged object '{victim}' into '{survivor}'"))
}

fn perturb_state_variable(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let keys: Vec<String> = s0
        .variables
        .iter()
        .filter(|(_, v)| value_as_f64(v).map(|x| x != 0.0).unwrap_or(false))
        .map(|(k, _)| k.clone())
        .collect();
    if keys.is_empty() {
        return None;
    }
    let key = keys[pick(rng, keys.len())].clone();
    let factor = rng.gen_range(1.5..=2.5);
    let old = value_as_f64(&s0.variables[&key])?;
    s0.variables.insert(key.clone(), json!(old * factor));
    Some(format!(
        "misstated state_0.variables.{key}: {old} -> {}",
        old * factor
    ))
}

fn misstate_motion(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let flips = [("at rest", "in motion"), ("in motion", "at rest")];
    let candidates: Vec<usize> = (0..s0.objects.len())
        .filter(|&i| {
            s0.objects[i]
                .attributes
                .get("motion")
                .and_then(|v| v.as_str())
                .map(|m| flips.iter().any(|(from, _)| *from == m))
                .unwrap_or(false)
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let idx = candidates[pick(rng, candidates.len())];
    let current = s0.objects[idx].attributes["motion"].as_str()?.to_string();
    let (_, flipped) = flips.iter().find(|(from, _)| *from == current)?;
    s0.objects[idx]
        .attributes
        .insert("motion".to_string(), json!(flipped));
    Some(format!(
        "misstated '{}' motion: '{current}' -> '{flipped}'",
        s0.objects[idx].name
    ))
}

fn negative_variable(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let s0 = state0_mut(trace)?;
    let keys: Vec<String> = s0
        .variables
        .iter()
        .filter(|(k, v)| {
            key_has_nonnegative_bound(k)
                && value_as_f64(v).map(|x| x > 0.0).unwrap_or(false)
        })
        .map(|(k, _)| k.clone())
        .collect();
    if keys.is_empty() {
        return None;
    }
    let key = keys[pick(rng, keys.len())].clone();
    let old = value_as_f64(&s0.variables[&key])?;
    s0.variables.insert(key.clone(), json!(-old));
    Some(format!("negated state_0.variables.{key}: {old} -> {}", -old))
}

fn reverse_effect_sign(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let transition = trace.transition.as_mut()?;
    let new = swap_sign_words(&transition.effect)?;
    let old = std::mem::replace(&mut transition.effect, new);
    Some(format!(
        "reversed transition effect sign: '{old}' -> '{}'",
        transition.effect
    ))
}

fn inject_foreign_rule(trace: &mut Trace, rng: &mut dyn RngCore) -> Option<String> {
    let home = trace.family();
    let donors: Vec<Family> = Family::ALL
        .into_iter()
        .filter(|f| Some(*f) != home)
        .collect();
    let donor = donors[pick(rng, donors.len())];
    let transition = trace.transition.as_mut()?;
    let old = std::mem::replace(&mut transition.rule, rule_text(donor).to_string());
    Some(format!(
        "replaced rule '{old}' with the {donor} rule '{}'",
        transition.rule
    ))
}

fn corrupt_equation(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let transition = trace.transition.as_mut()?;
    let equation = transition.equation.as_mut()?;
    if equation.is_empty() {
        return None;
    }
    if let Some(pos) = equation.rfind(')') {
        equation.remove(pos);
        Some("removed a closing parenthesis from the equation".to_string())
    } else {
        equation.push_str(" [perturbed]");
        Some("appended a perturbation marker to the equation".to_string())
    }
}

fn reword_rule_vague(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let transition = trace.transition.as_mut()?;
    let old = std::mem::replace(
        &mut transition.rule,
        "things happen and the system settles over time".to_string(),
    );
    if old == transition.rule {
        return None;
    }
    Some(format!("replaced rule '{old}' with vague filler text"))
}

fn reverse_predicted_change_sign(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let s1 = trace.state_1.as_mut()?;
    let new = swap_sign_words(&s1.predicted_change)?;
    let old = std::mem::replace(&mut s1.predicted_change, new);
    Some(format!(
        "reversed predicted change sign: '{old}' -> '{}'",
        s1.predicted_change
    ))
}

fn flip_outcome_sign(trace: &mut Trace, _rng: &mut dyn RngCore) -> Option<String> {
    let requested = trace
        .metadata
        .as_ref()
        .and_then(|m| m.parameter_keys.last().cloned());
    let s1 = trace.state_1.as_mut()?;
    let key = match requested.filter(|k| s1.new_variables.contains_key(k)) {
        Some(k) => k,
        None => s1
            .new_variables
            .iter()
            .find(|(_, v)| value_as_f64(v).map(|x| x != 0.0).unwrap_or(false))
            .map(|(k, _)| k.clone())?,
    };
    let old = value_as_f64(s1.new_variables.get(&key)?)?;
    if old == 0.0 {
        return None;
    }
    s1.new_variables.insert(key.clone(), json!(-old));
    Some(format!(
        "flipped outcome sign: state_1.new_variables.{key} {old} -> {}",
        -old
    ))
}

/// One chosen/rejected pair differing by exactly one typed perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub source_trace_id: String,
    pub label: Label,
    pub perturbation_name: String,
    pub perturbation_family: Partition,
    pub description: String,
    pub chosen: Trace,
    pub rejected: Trace,
}

/// Build `per_trace` pairs per trace, sampling distinct non-no-op
/// perturbations deterministically from the seed.
pub fn build_pairs(
    traces: &[Trace],
    per_trace: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>, PerturbError> {
    let mut pairs = Vec::with_capacity(traces.len() * per_trace);
    for (ti, trace) in traces.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x9A15 + ti as u64);
        let mut order: Vec<usize> = (0..registry().len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut collected = 0usize;
        for &pi in &order {
            if collected == per_trace {
                break;
            }
            let perturbation = &registry()[pi];
            if let Some((rejected, description)) =
                apply_perturbation(trace, perturbation, &mut rng)
            {
                pairs.push(PreferencePair {
                    pair_id: format!("{}-p{:02}", trace.id_str(), collected),
                    source_trace_id: trace.id_str().to_string(),
                    label: perturbation.label,
                    perturbation_name: perturbation.name.to_string(),
                    perturbation_family: perturbation.partition,
                    description,
                    chosen: trace.clone(),
                    rejected,
                });
                collected += 1;
            }
        }
        if collected < per_trace {
            return Err(PerturbError::InsufficientPerturbations {
                trace_id: trace.id_str().to_string(),
                need: per_trace,
                got: collected,
            });
        }
    }
    Ok(pairs)
}

/// One record of the preference-training export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoRecord {
    pub pair_id: String,
    pub prompt: Vec<Message>,
    pub chosen: String,
    pub rejected: String,
}

/// Compact JSON of the five completion fields a model is asked to produce.
pub fn completion_json(trace: &Trace) -> String {
    let doc = json!({
        "state_0": trace.state_0,
        "transition": trace.transition,
        "state_1": trace.state_1,
        "derivation": trace.derivation,
        "answer": trace.answer,
    });
    doc.to_string()
}

/// Export pairs of one split in preference-training format. The train export
/// excludes held-out perturbation families.
pub fn export_dpo(
    pairs: &[PreferencePair],
    split: Split,
    splits: &crate::scenario::SplitsDocument,
) -> Vec<DpoRecord> {
    let member_ids: std::collections::BTreeSet<&str> = match split {
        Split::Train => splits
            .train_pairs_seen_only
            .iter()
            .map(String::as_str)
            .collect(),
        Split::Val => splits.pairs.val.iter().map(String::as_str).collect(),
        Split::Test => splits.pairs.test.iter().map(String::as_str).collect(),
    };
    pairs
        .iter()
        .filter(|p| member_ids.contains(p.pair_id.as_str()))
        .map(|p| DpoRecord {
            pair_id: p.pair_id.clone(),
            prompt: build_prompt(&p.chosen, Condition::FullTrace, None)
                .expect("full-trace prompts need no feedback"),
            chosen: completion_json(&p.chosen),
            rejected: completion_json(&p.rejected),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_with_params, generate_bank};
    use crate::trace::Force;
    use serde_json::Value;
    use std::collections::BTreeSet;

    fn incline() -> Trace {
        build_with_params(
            Family::InclinedPlane,
            "ip-t",
            vec![("theta", 30.0), ("g", 9.8)],
        )
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(4242)
    }

    #[test]
    fn registry_shape_matches_the_design() {
        let all = registry();
        assert_eq!(all.len(), 25);
        let seen = all.iter().filter(|p| p.partition == Partition::Seen).count();
        assert_eq!(seen, 15);
        assert_eq!(all.len() - seen, 10);
        let labels: BTreeSet<Label> = all.iter().map(|p| p.label).collect();
        assert_eq!(labels.len(), 9, "all 9 taxonomy labels covered");
        let names: BTreeSet<&str> = all.iter().map(|p| p.name).collect();
        assert_eq!(names.len(), 25, "names unique");
    }

    #[test]
    fn incline_force_reversal_uses_the_direction_table() {
        let mut trace = incline();
        trace.state_0.as_mut().unwrap().forces = vec![Force {
            name: "net force".to_string(),
            target: "block".to_string(),
            direction: "down the incline".to_string(),
            magnitude: None,
            unit: None,
        }];
        let p = find_perturbation("reverse_force_direction").unwrap();
        let (rejected, desc) = apply_perturbation(&trace, p, &mut rng()).unwrap();
        assert_eq!(
            rejected.state_0.unwrap().forces[0].direction,
            "up the incline"
        );
        assert!(desc.contains("down the incline"));
    }

    #[test]
    fn untabled_direction_is_a_noop() {
        let mut trace = incline();
        trace.state_0.as_mut().unwrap().forces = vec![Force {
            name: "push".to_string(),
            target: "block".to_string(),
            direction: "diagonal".to_string(),
            magnitude: None,
            unit: None,
        }];
        let p = find_perturbation("reverse_force_direction").unwrap();
        assert!(apply_perturbation(&trace, p, &mut rng()).is_none());
    }

    #[test]
    fn relation_swap_follows_the_fixed_table() {
        let mut trace = incline();
        trace.state_0.as_mut().unwrap().relations =
            vec![Relation::new("on", "block", "incline")];
        let p = find_perturbation("swap_relation").unwrap();
        let (rejected, _) = apply_perturbation(&trace, p, &mut rng()).unwrap();
        assert_eq!(rejected.state_0.unwrap().relations[0].rel_type, "above");
    }

    #[test]
    fn direction_opposites_respect_word_boundaries() {
        assert_eq!(opposite_direction("upward"), Some("downward".to_string()));
        assert_eq!(
            opposite_direction("perpendicular to the incline, away from the surface"),
            Some("perpendicular to the incline, into the surface".to_string())
        );
        // "supported" must not match the short "up"/"right" keys.
        assert_eq!(opposite_direction("supported"), None);
        assert_eq!(opposite_direction("counterclockwise"), Some("clockwise".to_string()));
    }

    #[test]
    fn vague_rule_has_no_family_keywords() {
        let mut trace = incline();
        let p = find_perturbation("reword_rule_vague").unwrap();
        let (rejected, _) = apply_perturbation(&trace, p, &mut rng()).unwrap();
        let rule = rejected.transition.unwrap().rule.to_lowercase();
        let config = crate::verifier::VerifierConfig::default();
        for family in Family::ALL {
            for keyword in config.keywords_for(family) {
                assert!(!rule.contains(keyword), "vague rule contains '{keyword}'");
            }
        }
        trace.transition.as_mut().unwrap().rule = rule;
        assert!(apply_perturbation(&trace, p, &mut rng()).is_none(), "idempotent -> noop");
    }

    fn diff_paths(a: &Value, b: &Value, prefix: &str, out: &mut BTreeSet<String>) {
        match (a, b) {
            (Value::Object(ma), Value::Object(mb)) => {
                let keys: BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
                for key in keys {
                    let next = if prefix.is_empty() {
                        key.to_string()
                    } else {
                        format!("{prefix}.{key}")
                    };
                    match (ma.get(key), mb.get(key)) {
                        (Some(va), Some(vb)) => diff_paths(va, vb, &next, out),
                        _ => {
                            out.insert(next);
                        }
                    }
                }
            }
            (Value::Array(xa), Value::Array(xb)) => {
                if xa.len() != xb.len() {
                    out.insert(prefix.to_string());
                } else {
                    for (i, (va, vb)) in xa.iter().zip(xb).enumerate() {
                        diff_paths(va, vb, &format!("{prefix}[{i}]"), out);
                    }
                }
            }
            _ => {
                if a != b {
                    out.insert(prefix.to_string());
                }
            }
        }
    }

    fn footprint(name: &str) -> &'static [&'static str] {
        match name {
            "reverse_force_direction" | "reverse_gravity_direction"
            | "reverse_normal_direction" | "reassign_force_target" => &["state_0.forces"],
            "swap_relation" | "add_contradictory_relation" | "reassign_relation_arg" => {
                &["state_0.relations"]
            }
            "rescale_variable" | "perturb_state_variable" | "negative_variable" => {
                &["state_0.variables"]
            }
            "swap_answer_unit" => &["answer.unit"],
            "rescale_new_variable" | "flip_outcome_sign" => &["state_1.new_variables"],
            "swap_temporal_state" => &[
                "state_0.variables",
                "state_1.new_variables",
                "state_0.assumptions",
            ],
            "inject_pre_marker" | "reverse_predicted_change_sign" => {
                &["state_1.predicted_change"]
            }
            "corrupt_answer_value" | "amplify_answer" => &["answer.value"],
            "rename_object_dangling" | "misstate_motion" => &["state_0.objects"],
            "merge_objects" => &["state_0.objects", "state_0.forces", "state_0.relations"],
            "reverse_effect_sign" => &["transition.effect"],
            "inject_foreign_rule" | "reword_rule_vague" => &["transition.rule"],
            "corrupt_equation" => &["transition.equation"],
            other => panic!("no footprint declared for {other}"),
        }
    }

    #[test]
    fn every_perturbation_touches_only_its_documented_footprint() {
        // Independent oracle: a recursive JSON field diff between the chosen
        // and rejected documents.
        let (traces, _) = generate_bank(17, 17).unwrap();
        let mut seen_applied: BTreeSet<&str> = BTreeSet::new();
        for trace in &traces {
            for p in registry() {
                let mut r = rng();
                let Some((rejected, _)) = apply_perturbation(trace, p, &mut r) else {
                    continue;
                };
                seen_applied.insert(p.name);
                let a = serde_json::to_value(trace).unwrap();
                let b = serde_json::to_value(&rejected).unwrap();
                let mut paths = BTreeSet::new();
                diff_paths(&a, &b, "", &mut paths);
                assert!(!paths.is_empty(), "{}: no-op leaked through", p.name);
                let allowed = footprint(p.name);
                for path in &paths {
                    assert!(
                        allowed.iter().any(|prefix| path.starts_with(prefix)),
                        "{}: touched {path}, footprint {allowed:?}",
                        p.name
                    );
                }
            }
        }
        assert_eq!(
            seen_applied.len(),
            registry().len(),
            "every perturbation applied somewhere in the bank"
        );
    }

    #[test]
    fn every_bank_trace_admits_sixteen_perturbations() {
        let (traces, _) = generate_bank(123, 17).unwrap();
        let pairs = build_pairs(&traces, 16, 123).unwrap();
        assert_eq!(pairs.len(), 17 * 16);
        for pair in &pairs {
            assert_eq!(&pair.chosen, traces.iter().find(|t| t.id_str() == pair.source_trace_id).unwrap());
            assert_ne!(pair.chosen, pair.rejected);
        }
    }

    #[test]
    fn pair_building_is_deterministic() {
        let (traces, _) = generate_bank(9, 17).unwrap();
        let a = build_pairs(&traces, 8, 77).unwrap();
        let b = build_pairs(&traces, 8, 77).unwrap();
        let ser_a: Vec<String> = a.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
        let ser_b: Vec<String> = b.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
        assert_eq!(ser_a, ser_b);
    }

    #[test]
    fn asking_for_too_many_perturbations_errors() {
        let (traces, _) = generate_bank(3, 17).unwrap();
        let err = build_pairs(&traces[..1], 26, 3).unwrap_err();
        assert!(matches!(err, PerturbError::InsufficientPerturbations { .. }));
    }

    #[test]
    fn dpo_chosen_completion_reparses_to_the_chosen_trace() {
        let (traces, _) = generate_bank(31, 17).unwrap();
        let pairs = build_pairs(&traces, 4, 31).unwrap();
        let splits = crate::scenario::make_splits(&traces, &pairs, 31);
        for split in [Split::Train, Split::Val, Split::Test] {
            for record in export_dpo(&pairs, split, &splits) {
                let pair = pairs.iter().find(|p| p.pair_id == record.pair_id).unwrap();
                let reparsed = crate::trace::parse_trace(&record.chosen).unwrap();
                assert_eq!(reparsed.state_0, pair.chosen.state_0);
                assert_eq!(reparsed.answer, pair.chosen.answer);
                assert!(record.prompt[1]
                    .text_content()
                    .contains("Respond ONLY with a JSON object"));
            }
        }
        // Train export excludes held-out perturbation families.
        let train = export_dpo(&pairs, Split::Train, &splits);
        for record in &train {
            let pair = pairs.iter().find(|p| p.pair_id == record.pair_id).unwrap();
            assert_eq!(pair.perturbation_family, Partition::Seen);
        }
    }
}
