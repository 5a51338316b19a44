//! Per-family scenario templates: sampling grids, formulas, scene text,
//! trace fields, and the family-specific recomputation checks.

use crate::trace::{
    Answer, AnswerType, Family, Force, Metadata, Object, Relation, Source, State0, State1, Trace,
    Transition,
};
use rand::Rng;
use serde_json::{json, Value};
use std::collections::BTreeMap;

pub const GRAVITY: f64 = 9.8;

/// Canonical variable descriptor: key, unit, and sampling range.
#[derive(Debug, Clone)]
pub struct VariableSpec {
    pub key: &'static str,
    pub unit: &'static str,
    pub lo: f64,
    pub hi: f64,
}

/// Static description of one scenario family.
#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub family: Family,
    pub canonical_variables: Vec<VariableSpec>,
    pub assumptions: Vec<&'static str>,
    pub rule_keywords: Vec<String>,
}

pub fn family_spec(family: Family) -> FamilySpec {
    let config = crate::verifier::VerifierConfig::default();
    FamilySpec {
        family,
        canonical_variables: variable_specs(family),
        assumptions: base_assumptions(family),
        rule_keywords: config.keywords_for(family).to_vec(),
    }
}

fn variable_specs(family: Family) -> Vec<VariableSpec> {
    let v = |key, unit, lo, hi| VariableSpec { key, unit, lo, hi };
    match family {
        Family::InclinedPlane => vec![
            v("theta", "°", 20.0, 60.0),
            v("g", "m/s²", GRAVITY, GRAVITY),
            v("mu_k", "", 0.0, 0.25),
        ],
        Family::Projectile => vec![
            v("launch_speed", "m/s", 5.0, 30.0),
            v("theta", "°", 15.0, 75.0),
            v("g", "m/s²", GRAVITY, GRAVITY),
        ],
        Family::Collision => vec![
            v("mass_1", "kg", 1.0, 10.0),
            v("mass_2", "kg", 1.0, 10.0),
            v("speed_1", "m/s", 1.0, 10.0),
            v("restitution", "", 0.0, 1.0),
        ],
        Family::Pulley => vec![
            v("mass_1", "kg", 1.5, 12.0),
            v("mass_2", "kg", 1.0, 8.0),
            v("g", "m/s²", GRAVITY, GRAVITY),
        ],
        Family::Spring => vec![
            v("spring_constant", "N/m", 20.0, 300.0),
            v("displacement", "m", 0.05, 0.3),
        ],
        Family::Circuit => vec![
            v("voltage", "V", 6.0, 24.0),
            v("resistance_1", "Ω", 2.0, 50.0),
            v("resistance_2", "Ω", 2.0, 50.0),
        ],
        Family::Fluid => vec![
            v("density", "kg/m³", 600.0, 1400.0),
            v("depth", "m", 0.5, 10.0),
            v("g", "m/s²", GRAVITY, GRAVITY),
        ],
        Family::Thermal => vec![
            v("mass", "kg", 0.2, 5.0),
            v("specific_heat", "J/(kg·K)", 390.0, 4186.0),
            v("delta_temp", "°C", 5.0, 60.0),
        ],
        Family::FreeFall => vec![
            v("g", "m/s²", GRAVITY, GRAVITY),
            v("time", "s", 0.5, 6.0),
        ],
        Family::Friction => vec![
            v("mu_k", "", 0.1, 0.8),
            v("mass", "kg", 1.0, 20.0),
            v("g", "m/s²", GRAVITY, GRAVITY),
        ],
        Family::CircularMotion => vec![
            v("speed", "m/s", 1.0, 20.0),
            v("radius", "m", 0.5, 10.0),
        ],
        Family::Wave => vec![
            v("frequency", "Hz", 0.5, 8.0),
            v("wavelength", "m", 0.5, 10.0),
        ],
        Family::Lever => vec![
            v("mass_1", "kg", 1.0, 10.0),
            v("distance_1", "m", 0.2, 2.0),
            v("mass_2", "kg", 1.0, 10.0),
        ],
        Family::Buoyancy => vec![
            v("fluid_density", "kg/m³", 600.0, 1400.0),
            v("volume", "m³", 0.001, 0.02),
            v("g", "m/s²", GRAVITY, GRAVITY),
        ],
        Family::Optics => vec![
            v("focal_length", "m", 0.05, 0.5),
            v("object_distance", "m", 0.075, 2.0),
        ],
        Family::Pendulum => vec![
            v("length", "m", 0.2, 3.0),
            v("g", "m/s²", GRAVITY, GRAVITY),
        ],
        Family::EmInduction => vec![
            v("turns", "", 10.0, 200.0),
            v("delta_phi", "Wb", 0.02, 1.0),
            v("delta_time", "s", 0.1, 2.0),
        ],
    }
}

fn base_assumptions(family: Family) -> Vec<&'static str> {
    match family {
        Family::InclinedPlane => vec!["air resistance is negligible"],
        Family::Projectile => vec!["air resistance is negligible", "the ground is level"],
        Family::Collision => vec!["the track is frictionless"],
        Family::Pulley => vec![
            "the rope is massless and inextensible",
            "the pulley is frictionless",
        ],
        Family::Spring => vec![
            "the spring obeys Hooke's law within this range",
            "the surface is frictionless",
        ],
        Family::Circuit => vec!["wires have negligible resistance", "the battery is ideal"],
        Family::Fluid => vec![
            "the liquid is incompressible",
            "the reading is gauge pressure",
        ],
        Family::Thermal => vec![
            "no heat is lost to the surroundings",
            "the specific heat is constant over this range",
        ],
        Family::FreeFall => vec!["air resistance is negligible", "the stone starts from rest"],
        Family::Friction => vec![
            "the coefficient of kinetic friction is constant",
            "the floor is horizontal",
        ],
        Family::CircularMotion => vec![
            "the speed is constant around the circle",
            "air resistance is negligible",
        ],
        Family::Wave => vec!["the rope tension is uniform", "the medium is non-dispersive"],
        Family::Lever => vec!["the beam is rigid and weightless", "the pivot is ideal"],
        Family::Buoyancy => vec!["the ball is fully submerged", "the liquid density is uniform"],
        Family::Optics => vec!["the thin lens approximation holds", "rays are paraxial"],
        Family::Pendulum => vec![
            "the swing amplitude is small",
            "air resistance is negligible",
        ],
        Family::EmInduction => vec![
            "the flux change is uniform over the interval",
            "coil resistance is ignored",
        ],
    }
}

/// Family rule text; also the donor text for foreign-rule perturbations.
pub fn rule_text(family: Family) -> &'static str {
    match family {
        Family::InclinedPlane => "Newton's second law resolved along the incline",
        Family::Projectile => "Projectile range equation for parabolic flight",
        Family::Collision => "Conservation of linear momentum through the collision",
        Family::Pulley => "Atwood machine: the mass imbalance over the pulley sets the motion",
        Family::Spring => "Hooke's law for the restoring action of a spring",
        Family::Circuit => "Ohm's law applied to the whole circuit",
        Family::Fluid => "Hydrostatic relation for a fluid column",
        Family::Thermal => "Calorimetry with constant specific heat",
        Family::FreeFall => "Free-fall kinematics under uniform acceleration",
        Family::Friction => "Kinetic friction proportional to the normal load via the coefficient",
        Family::CircularMotion => "Centripetal acceleration in uniform circular motion",
        Family::Wave => "The wave speed relation ties frequency to wavelength",
        Family::Lever => "Torque balance about the lever's pivot",
        Family::Buoyancy => "Archimedes' principle for the buoyant push of displaced liquid",
        Family::Optics => "Thin lens equation relating object and image distance",
        Family::Pendulum => "Small-angle pendulum oscillation",
        Family::EmInduction => "Faraday's law of induction from changing flux",
    }
}

/// The requested quantity and its canonical unit, given the sampled params.
pub fn answer_key(family: Family, params: &BTreeMap<String, f64>) -> (&'static str, &'static str) {
    match family {
        Family::InclinedPlane => ("acceleration", "m/s²"),
        Family::Projectile => ("range", "m"),
        Family::Collision => ("final_speed", "m/s"),
        Family::Pulley => ("acceleration", "m/s²"),
        Family::Spring => ("spring_force", "N"),
        Family::Circuit => ("current", "A"),
        Family::Fluid => ("pressure", "Pa"),
        Family::Thermal => ("heat", "J"),
        Family::FreeFall => {
            if params.contains_key("ask_distance") {
                ("distance", "m")
            } else {
                ("final_speed", "m/s")
            }
        }
        Family::Friction => ("friction_force", "N"),
        Family::CircularMotion => ("centripetal_acceleration", "m/s²"),
        Family::Wave => ("wave_speed", "m/s"),
        Family::Lever => ("distance_2", "m"),
        Family::Buoyancy => ("buoyant_force", "N"),
        Family::Optics => ("image_distance", "m"),
        Family::Pendulum => ("period", "s"),
        Family::EmInduction => ("emf", "V"),
    }
}

/// The family-specific recomputation check: recover the requested quantity
/// from the trace variables. `None` when required keys are missing.
pub fn recompute(
    family: Family,
    vars: &BTreeMap<String, f64>,
    requested: &str,
) -> Option<f64> {
    let get = |key: &str| vars.get(key).copied();
    match family {
        Family::InclinedPlane => {
            let theta = get("theta")?.to_radians();
            let g = get("g")?;
            let mu = get("mu_k").unwrap_or(0.0);
            Some(g * (theta.sin() - mu * theta.cos()))
        }
        Family::Projectile => {
            let v = get("launch_speed")?;
            let theta = get("theta")?.to_radians();
            Some(v * v * (2.0 * theta).sin() / get("g")?)
        }
        Family::Collision => {
            let m1 = get("mass_1")?;
            let m2 = get("mass_2")?;
            let v1 = get("speed_1")?;
            let e = get("restitution")?;
            Some(m1 * v1 * (1.0 + e) / (m1 + m2))
        }
        Family::Pulley => {
            let m1 = get("mass_1")?;
            let m2 = get("mass_2")?;
            Some((m1 - m2) * get("g")? / (m1 + m2))
        }
        Family::Spring => Some(get("spring_constant")? * get("displacement")?),
        Family::Circuit => Some(get("voltage")? / get("total_resistance")?),
        Family::Fluid => Some(get("density")? * get("g")? * get("depth")?),
        Family::Thermal => Some(get("mass")? * get("specific_heat")? * get("delta_temp")?),
        Family::FreeFall => {
            let g = get("g")?;
            let t = get("time")?;
            if requested == "distance" {
                Some(0.5 * g * t * t)
            } else {
                Some(g * t)
            }
        }
        Family::Friction => Some(get("mu_k")? * get("mass")? * get("g")?),
        Family::CircularMotion => {
            let v = get("speed")?;
            Some(v * v / get("radius")?)
        }
        Family::Wave => Some(get("frequency")? * get("wavelength")?),
        Family::Lever => Some(get("mass_1")? * get("distance_1")? / get("mass_2")?),
        Family::Buoyancy => Some(get("fluid_density")? * get("volume")? * get("g")?),
        Family::Optics => {
            let f = get("focal_length")?;
            let d_o = get("object_distance")?;
            Some(f * d_o / (d_o - f))
        }
        Family::Pendulum => {
            Some(2.0 * std::f64::consts::PI * (get("length")? / get("g")?).sqrt())
        }
        Family::EmInduction => Some(get("turns")? * get("delta_phi")? / get("delta_time")?),
    }
}

/// Everything a family template produces before assembly into a `Trace`.
struct Blueprint {
    params: Vec<(&'static str, f64)>,
    question: String,
    scene: String,
    objects: Vec<Object>,
    relations: Vec<Relation>,
    forces: Vec<Force>,
    extra_assumptions: Vec<String>,
    effect: String,
    equation: String,
    evidence: String,
    predicted_change: String,
}

fn grid(rng: &mut impl Rng, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as u64;
    let k = rng.gen_range(0..=n);
    round6(lo + k as f64 * step)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - mag);
    (x * factor).round() / factor
}

fn object(name: &str, motion: Option<&str>) -> Object {
    let mut attributes = BTreeMap::new();
    if let Some(motion) = motion {
        attributes.insert("motion".to_string(), json!(motion));
    }
    Object {
        name: name.to_string(),
        attributes,
    }
}

fn force(name: &str, target: &str, direction: &str) -> Force {
    Force {
        name: name.to_string(),
        target: target.to_string(),
        direction: direction.to_string(),
        magnitude: None,
        unit: None,
    }
}

fn gravity(target: &str) -> Force {
    force("gravity", target, "downward")
}

fn normal(target: &str) -> Force {
    force("normal force", target, "upward")
}

/// Sample parameters and build one gold trace for the family.
pub fn build(family: Family, id: &str, rng: &mut impl Rng) -> Trace {
    let bp = blueprint(family, rng);
    assemble(family, id, bp)
}

/// Build deterministically from explicit parameters (used by tests and by
/// counterfactual editing).
pub fn build_with_params(family: Family, id: &str, params: Vec<(&'static str, f64)>) -> Trace {
    let bp = blueprint_from_params(family, params);
    assemble(family, id, bp)
}

fn blueprint(family: Family, rng: &mut impl Rng) -> Blueprint {
    let params = sample_params(family, rng);
    blueprint_from_params(family, params)
}

fn sample_params(family: Family, rng: &mut impl Rng) -> Vec<(&'static str, f64)> {
    match family {
        Family::InclinedPlane => {
            let theta = grid(rng, 20.0, 60.0, 5.0);
            if rng.gen_range(0..2) == 0 {
                vec![("theta", theta), ("g", GRAVITY)]
            } else {
                let mu_k = grid(rng, 0.1, 0.25, 0.05);
                vec![("theta", theta), ("g", GRAVITY), ("mu_k", mu_k)]
            }
        }
        Family::Projectile => vec![
            ("launch_speed", grid(rng, 5.0, 30.0, 2.5)),
            ("theta", grid(rng, 15.0, 75.0, 5.0)),
            ("g", GRAVITY),
        ],
        Family::Collision => {
            let restitution = if rng.gen_range(0..2) == 0 { 0.0 } else { 1.0 };
            vec![
                ("mass_1", grid(rng, 1.0, 10.0, 0.5)),
                ("mass_2", grid(rng, 1.0, 10.0, 0.5)),
                ("speed_1", grid(rng, 1.0, 10.0, 0.5)),
                ("restitution", restitution),
            ]
        }
        Family::Pulley => {
            let m2 = grid(rng, 1.0, 8.0, 0.5);
            let m1 = round6(m2 + grid(rng, 0.5, 4.0, 0.5));
            vec![("mass_1", m1), ("mass_2", m2), ("g", GRAVITY)]
        }
        Family::Spring => vec![
            ("spring_constant", grid(rng, 20.0, 300.0, 10.0)),
            ("displacement", grid(rng, 0.05, 0.3, 0.05)),
        ],
        Family::Circuit => {
            let r1 = grid(rng, 2.0, 50.0, 2.0);
            let r2 = grid(rng, 2.0, 50.0, 2.0);
            let series = rng.gen_range(0..2) == 0;
            let total = if series {
                round6(r1 + r2)
            } else {
                round6(r1 * r2 / (r1 + r2))
            };
            vec![
                ("voltage", grid(rng, 6.0, 24.0, 2.0)),
                ("resistance_1", r1),
                ("resistance_2", r2),
                ("total_resistance", total),
            ]
        }
        Family::Fluid => vec![
            ("density", grid(rng, 600.0, 1400.0, 50.0)),
            ("depth", grid(rng, 0.5, 10.0, 0.5)),
            ("g", GRAVITY),
        ],
        Family::Thermal => {
            let heats = [390.0, 450.0, 900.0, 2400.0, 4186.0];
            vec![
                ("mass", grid(rng, 0.2, 5.0, 0.2)),
                ("specific_heat", heats[rng.gen_range(0..heats.len())]),
                ("delta_temp", grid(rng, 5.0, 60.0, 5.0)),
            ]
        }
        Family::FreeFall => {
            let mut params = vec![("g", GRAVITY), ("time", grid(rng, 0.5, 6.0, 0.5))];
            if rng.gen_range(0..2) == 0 {
                params.push(("ask_distance", 1.0));
            }
            params
        }
        Family::Friction => vec![
            ("mu_k", grid(rng, 0.1, 0.8, 0.05)),
            ("mass", grid(rng, 1.0, 20.0, 1.0)),
            ("g", GRAVITY),
        ],
        Family::CircularMotion => vec![
            ("speed", grid(rng, 1.0, 20.0, 1.0)),
            ("radius", grid(rng, 0.5, 10.0, 0.5)),
        ],
        Family::Wave => vec![
            ("frequency", grid(rng, 0.5, 8.0, 0.5)),
            ("wavelength", grid(rng, 0.5, 10.0, 0.5)),
        ],
        Family::Lever => vec![
            ("mass_1", grid(rng, 1.0, 10.0, 0.5)),
            ("distance_1", grid(rng, 0.2, 2.0, 0.1)),
            ("mass_2", grid(rng, 1.0, 10.0, 0.5)),
        ],
        Family::Buoyancy => vec![
            ("fluid_density", grid(rng, 600.0, 1400.0, 50.0)),
            ("volume", grid(rng, 0.001, 0.02, 0.001)),
            ("g", GRAVITY),
        ],
        Family::Optics => {
            let f = grid(rng, 0.05, 0.5, 0.05);
            let mult = grid(rng, 1.5, 4.0, 0.5);
            vec![("focal_length", f), ("object_distance", round6(f * mult))]
        }
        Family::Pendulum => vec![("length", grid(rng, 0.2, 3.0, 0.1)), ("g", GRAVITY)],
        Family::EmInduction => vec![
            ("turns", grid(rng, 10.0, 200.0, 10.0)),
            ("delta_phi", grid(rng, 0.02, 1.0, 0.02)),
            ("delta_time", grid(rng, 0.1, 2.0, 0.1)),
        ],
    }
}

fn blueprint_from_params(family: Family, params: Vec<(&'static str, f64)>) -> Blueprint {
    let p: BTreeMap<&str, f64> = params.iter().copied().collect();
    let v = |key: &str| p.get(key).copied().unwrap_or(0.0);
    match family {
        Family::InclinedPlane => {
            let with_friction = p.contains_key("mu_k");
            let question = if with_friction {
                format!(
                    "A block slides on an incline tilted at theta = {} deg with coefficient of \
                     kinetic friction mu_k = {} and g = {} m/s^2. What is the magnitude of the \
                     block's acceleration down the slope? Report acceleration in m/s^2.",
                    v("theta"), v("mu_k"), v("g")
                )
            } else {
                format!(
                    "A block rests on a frictionless incline tilted at theta = {} deg, with \
                     g = {} m/s^2. What is the magnitude of the block's acceleration down the \
                     slope? Report acceleration in m/s^2.",
                    v("theta"), v("g")
                )
            };
            let mut extra = vec![if with_friction {
                "kinetic friction acts with a constant coefficient".to_string()
            } else {
                "the incline surface is frictionless".to_string()
            }];
            extra.extend(base_assumptions(family).iter().map(|s| s.to_string()));
            Blueprint {
                params,
                question,
                scene: format!(
                    "Diagram: a block on a straight incline raised {} degrees from the \
                     horizontal; arrows mark gravity and the normal force.",
                    v("theta")
                ),
                objects: vec![object("block", Some("at rest")), object("incline", None)],
                relations: vec![
                    Relation::new("on", "block", "incline"),
                    Relation::new("above", "block", "incline"),
                ],
                forces: vec![
                    gravity("block"),
                    force(
                        "normal force",
                        "block",
                        "perpendicular to the incline, away from the surface",
                    ),
                ],
                extra_assumptions: extra,
                effect: "the block accelerates down the incline".to_string(),
                equation: if with_friction {
                    "acceleration = g * (sin(theta) - mu_k * cos(theta))".to_string()
                } else {
                    "acceleration = g * sin(theta)".to_string()
                },
                evidence: "the gravity component along the slope is unbalanced".to_string(),
                predicted_change:
                    "the block slides down the slope; its speed increases from rest".to_string(),
            }
        }
        Family::Projectile => Blueprint {
            question: format!(
                "A ball is launched at launch_speed = {} m/s at theta = {} deg above the \
                 horizontal, with g = {} m/s^2. Ignoring air resistance, what horizontal range \
                 does it cover before landing? Report range in m.",
                v("launch_speed"), v("theta"), v("g")
            ),
            scene: format!(
                "Diagram: a launcher on level ground fires a ball at {} degrees; a dashed \
                 parabolic arc marks the flight path.",
                v("theta")
            ),
            objects: vec![object("ball", Some("in motion")), object("launcher", None)],
            relations: vec![
                Relation::new("on", "ball", "launcher"),
                Relation::new("above", "ball", "launcher"),
            ],
            forces: vec![gravity("ball")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the ball travels forward along a parabolic arc".to_string(),
            equation: "range = (launch_speed * launch_speed) * sin(2 * theta) / g".to_string(),
            evidence: "only gravity acts after launch".to_string(),
            predicted_change: format!(
                "the ball lands forward of the launch point at range = {} m",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Collision => {
            let elastic = v("restitution") == 1.0;
            let kind = if elastic { "perfectly elastic" } else { "perfectly inelastic" };
            let question = format!(
                "On a frictionless track, cart_a with mass_1 = {} kg moving at speed_1 = {} m/s \
                 strikes stationary cart_b with mass_2 = {} kg in a {kind} collision \
                 (restitution = {}). What is final_speed, the post-impact speed of \
                 {}? Report final_speed in m/s.",
                v("mass_1"), v("speed_1"), v("mass_2"), v("restitution"),
                if elastic { "cart_b" } else { "the joined carts" }
            );
            let mut extra = vec![format!("the collision is {kind}")];
            extra.extend(base_assumptions(family).iter().map(|s| s.to_string()));
            Blueprint {
                question,
                scene: format!(
                    "Diagram: cart_a approaches cart_b from the left on a straight track at \
                     {} m/s.",
                    v("speed_1")
                ),
                objects: vec![
                    object("cart_a", Some("in motion")),
                    object("cart_b", Some("at rest")),
                    object("track", None),
                ],
                relations: vec![
                    Relation::new("on", "cart_a", "track"),
                    Relation::new("above", "cart_a", "track"),
                    Relation::new("left_of", "cart_a", "cart_b"),
                ],
                forces: vec![gravity("cart_a"), normal("cart_a")],
                extra_assumptions: extra,
                effect: if elastic {
                    "cart_b is knocked rightward".to_string()
                } else {
                    "the carts lock together and move rightward".to_string()
                },
                equation: "final_speed = mass_1 * speed_1 * (1 + restitution) / (mass_1 + mass_2)"
                    .to_string(),
                evidence: "no external horizontal impulse acts on the pair".to_string(),
                predicted_change: format!(
                    "after the collision, {} rightward at final_speed = {} m/s",
                    if elastic { "cart_b moves" } else { "the carts move together" },
                    display_answer(family, &p)
                ),
                params,
            }
        }
        Family::Pulley => Blueprint {
            question: format!(
                "Two blocks hang from an ideal frictionless pulley: mass_1 = {} kg and \
                 mass_2 = {} kg, with g = {} m/s^2. What is the magnitude of the system's \
                 acceleration? Report acceleration in m/s^2.",
                v("mass_1"), v("mass_2"), v("g")
            ),
            scene: format!(
                "Diagram: a rope over a wheel; the heavier {} kg block hangs on the left, the \
                 {} kg block on the right.",
                v("mass_1"), v("mass_2")
            ),
            objects: vec![
                object("block_1", Some("at rest")),
                object("block_2", Some("at rest")),
                object("pulley_wheel", None),
            ],
            relations: vec![
                Relation::new("attached", "block_1", "pulley_wheel"),
                Relation::new("attached", "block_2", "pulley_wheel"),
                Relation::new("above", "pulley_wheel", "block_1"),
            ],
            forces: vec![
                gravity("block_1"),
                force("tension", "block_1", "upward along the rope"),
                force("net force", "block_1", "downward"),
            ],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the heavier block_1 moves downward, pulling the rope".to_string(),
            equation: "acceleration = (mass_1 - mass_2) * g / (mass_1 + mass_2)".to_string(),
            evidence: "the weight difference is unbalanced".to_string(),
            predicted_change: format!(
                "block_1 moves downward with acceleration = {} m/s^2",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Spring => Blueprint {
            question: format!(
                "A block on a frictionless surface is held against a spring of \
                 spring_constant = {} N/m compressed by displacement = {} m. What is the \
                 magnitude of spring_force on the block? Report spring_force in N.",
                v("spring_constant"), v("displacement")
            ),
            scene: format!(
                "Diagram: a coil spring compressed {} m against a block on a flat surface.",
                v("displacement")
            ),
            objects: vec![object("block", Some("at rest")), object("spring", None)],
            relations: vec![
                Relation::new("on", "block", "surface"),
                Relation::new("above", "block", "surface"),
                Relation::new("attached", "block", "spring"),
            ],
            forces: vec![
                gravity("block"),
                normal("block"),
                force("net force", "block", "forward"),
            ],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the compressed spring pushes the block forward".to_string(),
            equation: "spring_force = spring_constant * displacement".to_string(),
            evidence: "the spring is compressed from its natural length".to_string(),
            predicted_change: format!(
                "the block is pushed forward once released; spring_force = {} N",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Circuit => {
            let series = v("total_resistance") >= v("resistance_1").max(v("resistance_2"));
            let wiring = if series { "in series" } else { "in parallel" };
            Blueprint {
                question: format!(
                    "A battery of voltage = {} V drives resistance_1 = {} ohm and \
                     resistance_2 = {} ohm wired {wiring}, giving total_resistance = {} ohm. \
                     What current does the battery supply? Report current in A.",
                    v("voltage"), v("resistance_1"), v("resistance_2"), v("total_resistance")
                ),
                scene: format!(
                    "Diagram: a battery connected to two resistors {wiring}; an ammeter sits \
                     next to the battery."
                ),
                objects: vec![
                    object("battery", Some("at rest")),
                    object("resistor_1", None),
                    object("resistor_2", None),
                ],
                relations: vec![
                    Relation::new("on", "battery", "surface"),
                    Relation::new("above", "battery", "surface"),
                    Relation::new("attached", "resistor_1", "battery"),
                ],
                forces: vec![gravity("battery"), normal("battery")],
                extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
                effect: "charge flows around the loop at a steady rate".to_string(),
                equation: "current = voltage / (total_resistance)".to_string(),
                evidence: "the battery maintains a fixed potential difference".to_string(),
                predicted_change: format!(
                    "a steady current = {} A is established",
                    display_answer(family, &p)
                ),
                params,
            }
        }
        Family::Fluid => Blueprint {
            question: format!(
                "A pressure probe sits at depth = {} m in a tank of liquid with \
                 density = {} kg/m^3, with g = {} m/s^2. What gauge pressure does it read? \
                 Report pressure in Pa.",
                v("depth"), v("density"), v("g")
            ),
            scene: format!(
                "Diagram: an open tank of liquid with a probe suspended {} m below the surface.",
                v("depth")
            ),
            objects: vec![object("tank", Some("at rest")), object("probe", None)],
            relations: vec![
                Relation::new("on", "tank", "ground"),
                Relation::new("above", "tank", "ground"),
                Relation::new("inside", "probe", "tank"),
            ],
            forces: vec![gravity("tank"), normal("tank")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the liquid column presses harder with depth".to_string(),
            equation: "pressure = density * g * depth".to_string(),
            evidence: "the liquid column above the probe has weight".to_string(),
            predicted_change: format!(
                "the probe reads pressure = {} Pa",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Thermal => Blueprint {
            question: format!(
                "A sample of mass = {} kg with specific_heat = {} J/(kg K) is warmed by \
                 delta_temp = {} degrees C. How much heat was absorbed? Report heat in J.",
                v("mass"), v("specific_heat"), v("delta_temp")
            ),
            scene: format!(
                "Diagram: a sample on a burner with a thermometer showing a {} degree rise.",
                v("delta_temp")
            ),
            objects: vec![object("sample", Some("at rest")), object("burner", None)],
            relations: vec![
                Relation::new("on", "sample", "burner"),
                Relation::new("above", "sample", "burner"),
            ],
            forces: vec![gravity("sample"), normal("sample")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the sample's temperature increases as heat flows in".to_string(),
            equation: "heat = mass * specific_heat * delta_temp".to_string(),
            evidence: "the burner transfers energy into the sample".to_string(),
            predicted_change: format!(
                "the temperature increases by delta_temp; heat = {} J absorbed",
                display_answer(family, &p)
            ),
            params,
        },
        Family::FreeFall => {
            let ask_distance = p.contains_key("ask_distance");
            let (key, unit) = if ask_distance { ("distance", "m") } else { ("final_speed", "m/s") };
            Blueprint {
                question: format!(
                    "A stone is dropped from rest off a cliff and falls for time = {} s with \
                     g = {} m/s^2, ignoring air resistance. What is its {key} at that moment? \
                     Report {key} in {unit}.",
                    v("time"), v("g")
                ),
                scene: format!(
                    "Diagram: a stone below a cliff edge with a stopwatch reading {} s.",
                    v("time")
                ),
                objects: vec![object("stone", Some("in motion")), object("cliff", None)],
                relations: vec![Relation::new("above", "stone", "ground")],
                forces: vec![gravity("stone")],
                extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
                effect: "the stone accelerates downward".to_string(),
                equation: if ask_distance {
                    "distance = 0.5 * g * (time * time)".to_string()
                } else {
                    "final_speed = g * time".to_string()
                },
                evidence: "gravity is the only force acting".to_string(),
                predicted_change: format!(
                    "the stone falls farther; its speed increases until impact; {key} = {} {unit}",
                    display_answer(family, &p)
                ),
                params,
            }
        }
        Family::Friction => Blueprint {
            question: format!(
                "A crate of mass = {} kg slides across a horizontal floor with coefficient of \
                 kinetic friction mu_k = {} and g = {} m/s^2. What is the magnitude of \
                 friction_force on the crate? Report friction_force in N.",
                v("mass"), v("mu_k"), v("g")
            ),
            scene: format!(
                "Diagram: a crate sliding right across a rough floor; mu_k = {}.",
                v("mu_k")
            ),
            objects: vec![object("crate", Some("in motion")), object("floor", None)],
            relations: vec![
                Relation::new("on", "crate", "floor"),
                Relation::new("above", "crate", "floor"),
                Relation::new("contact", "crate", "floor"),
            ],
            forces: vec![
                gravity("crate"),
                normal("crate"),
                force("applied force", "crate", "rightward"),
                force("kinetic friction", "crate", "leftward"),
            ],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the crate slides rightward at constant speed".to_string(),
            equation: "friction_force = mu_k * (mass * g)".to_string(),
            evidence: "the normal load equals the crate's weight on level ground".to_string(),
            predicted_change: format!(
                "the crate keeps sliding rightward; friction_force = {} N resists the motion",
                display_answer(family, &p)
            ),
            params,
        },
        Family::CircularMotion => Blueprint {
            question: format!(
                "A ball on a string moves in a horizontal circle at constant speed = {} m/s \
                 with radius = {} m. Ignore air resistance. What is centripetal_acceleration? \
                 Report centripetal_acceleration in m/s^2.",
                v("speed"), v("radius")
            ),
            scene: format!(
                "Diagram: a ball tracing a circle of radius {} m around a central post.",
                v("radius")
            ),
            objects: vec![object("ball", Some("in motion")), object("string", None)],
            relations: vec![
                Relation::new("attached", "ball", "string"),
                Relation::new("above", "ball", "ground"),
            ],
            forces: vec![gravity("ball"), force("tension", "ball", "toward the center")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the ball is pulled toward the center of the circle".to_string(),
            equation: "centripetal_acceleration = (speed * speed) / radius".to_string(),
            evidence: "the string turns the velocity without changing its magnitude".to_string(),
            predicted_change: format!(
                "the velocity direction keeps turning; centripetal_acceleration = {} m/s^2",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Wave => Blueprint {
            question: format!(
                "A rope is shaken at frequency = {} Hz producing waves of wavelength = {} m. \
                 What is wave_speed along the rope? Report wave_speed in m/s.",
                v("frequency"), v("wavelength")
            ),
            scene: format!(
                "Diagram: a rope with {} m between crests, driven by an oscillator.",
                v("wavelength")
            ),
            objects: vec![object("rope", Some("in motion")), object("oscillator", None)],
            relations: vec![
                Relation::new("attached", "rope", "oscillator"),
                Relation::new("on", "oscillator", "surface"),
                Relation::new("above", "oscillator", "surface"),
            ],
            forces: vec![gravity("oscillator"), normal("oscillator")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "crests travel along the rope at a steady rate".to_string(),
            equation: "wave_speed = frequency * wavelength".to_string(),
            evidence: "one wavelength passes per period".to_string(),
            predicted_change: format!(
                "crests advance at wave_speed = {} m/s along the rope",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Lever => Blueprint {
            question: format!(
                "A beam balances on a pivot. weight_a of mass_1 = {} kg sits distance_1 = {} m \
                 left of the pivot; weight_b has mass_2 = {} kg. At what distance_2 right of \
                 the pivot must weight_b sit to balance the beam? Report distance_2 in m.",
                v("mass_1"), v("distance_1"), v("mass_2")
            ),
            scene: format!(
                "Diagram: a beam on a pivot with a {} kg weight {} m to the left.",
                v("mass_1"), v("distance_1")
            ),
            objects: vec![
                object("beam", Some("at rest")),
                object("pivot", None),
                object("weight_a", Some("at rest")),
                object("weight_b", Some("at rest")),
            ],
            relations: vec![
                Relation::new("on", "weight_a", "beam"),
                Relation::new("above", "weight_a", "beam"),
                Relation::new("on", "beam", "pivot"),
            ],
            forces: vec![gravity("weight_a"), normal("beam")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the beam stays level when the moments match".to_string(),
            equation: "distance_2 = mass_1 * distance_1 / mass_2".to_string(),
            evidence: "opposing moments about the pivot cancel".to_string(),
            predicted_change: format!(
                "balance requires weight_b at distance_2 = {} m",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Buoyancy => Blueprint {
            question: format!(
                "A ball of volume = {} m^3 is fully submerged in liquid of \
                 fluid_density = {} kg/m^3, with g = {} m/s^2. What buoyant_force acts on it? \
                 Report buoyant_force in N.",
                v("volume"), v("fluid_density"), v("g")
            ),
            scene: format!(
                "Diagram: a ball held under the surface of a beaker of liquid of density {}.",
                v("fluid_density")
            ),
            objects: vec![object("ball", Some("at rest")), object("beaker", None)],
            relations: vec![
                Relation::new("inside", "ball", "beaker"),
                Relation::new("on", "beaker", "surface"),
                Relation::new("above", "beaker", "surface"),
            ],
            forces: vec![gravity("ball"), force("buoyant force", "ball", "upward")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the submerged ball is pushed upward by the liquid".to_string(),
            equation: "buoyant_force = fluid_density * volume * g".to_string(),
            evidence: "the displaced liquid's weight acts on the ball".to_string(),
            predicted_change: format!(
                "the ball tends upward; buoyant_force = {} N",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Optics => Blueprint {
            question: format!(
                "A candle stands at object_distance = {} m from a thin converging lens of \
                 focal_length = {} m. Where does the sharp image form? Report image_distance \
                 in m.",
                v("object_distance"), v("focal_length")
            ),
            scene: format!(
                "Diagram: a candle, a thin lens of focal length {} m, and a screen on an \
                 optical bench.",
                v("focal_length")
            ),
            objects: vec![
                object("lens", Some("at rest")),
                object("candle", None),
                object("bench", None),
            ],
            relations: vec![
                Relation::new("on", "lens", "bench"),
                Relation::new("above", "lens", "bench"),
                Relation::new("left_of", "candle", "lens"),
            ],
            forces: vec![gravity("lens"), normal("lens")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "refracted rays converge to form a real image".to_string(),
            equation: "image_distance = focal_length * object_distance / (object_distance - focal_length)"
                .to_string(),
            evidence: "the object sits outside the focal length".to_string(),
            predicted_change: format!(
                "a sharp image forms at image_distance = {} m",
                display_answer(family, &p)
            ),
            params,
        },
        Family::Pendulum => Blueprint {
            question: format!(
                "A simple pendulum has length = {} m, with g = {} m/s^2. Ignoring air \
                 resistance, what is the period of one small swing? Report period in s.",
                v("length"), v("g")
            ),
            scene: format!(
                "Diagram: a bob on a {} m string displaced slightly from vertical.",
                v("length")
            ),
            objects: vec![object("bob", Some("at rest")), object("string", None)],
            relations: vec![
                Relation::new("attached", "bob", "string"),
                Relation::new("above", "bob", "ground"),
            ],
            forces: vec![gravity("bob"), force("tension", "bob", "upward along the string")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "the bob swings back and forth about the lowest point".to_string(),
            equation: "period = 2 * pi * sqrt(length / g)".to_string(),
            evidence: "the restoring pull grows with the small displacement".to_string(),
            predicted_change: format!(
                "one full swing takes period = {} s",
                display_answer(family, &p)
            ),
            params,
        },
        Family::EmInduction => Blueprint {
            question: format!(
                "A coil of turns = {} loops sees its magnetic flux change by delta_phi = {} Wb \
                 over delta_time = {} s. What is the magnitude of the induced emf? Report emf \
                 in V.",
                v("turns"), v("delta_phi"), v("delta_time")
            ),
            scene: format!(
                "Diagram: a bar magnet moving toward a {}-turn coil wired to a voltmeter.",
                v("turns")
            ),
            objects: vec![object("coil", Some("at rest")), object("magnet", Some("in motion"))],
            relations: vec![
                Relation::new("left_of", "magnet", "coil"),
                Relation::new("on", "coil", "surface"),
                Relation::new("above", "coil", "surface"),
            ],
            forces: vec![gravity("coil"), normal("coil")],
            extra_assumptions: base_assumptions(family).iter().map(|s| s.to_string()).collect(),
            effect: "a voltage is induced across the coil while the flux changes".to_string(),
            equation: "emf = turns * (delta_phi / delta_time)".to_string(),
            evidence: "the flux through the coil is changing".to_string(),
            predicted_change: format!(
                "the meter reads emf = {} V during the change",
                display_answer(family, &p)
            ),
            params,
        },
    }
}

fn display_answer(family: Family, p: &BTreeMap<&str, f64>) -> f64 {
    let owned: BTreeMap<String, f64> = p.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let (key, _) = answer_key(family, &owned);
    round_sig(recompute(family, &owned, key).unwrap_or(0.0), 6)
}

fn assemble(family: Family, id: &str, bp: Blueprint) -> Trace {
    let vars: BTreeMap<String, f64> = bp
        .params
        .iter()
        .filter(|(k, _)| *k != "ask_distance")
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    let full_params: BTreeMap<String, f64> = bp
        .params
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    let (key, unit) = answer_key(family, &full_params);
    let answer_value = round_sig(
        recompute(family, &full_params, key).expect("family recompute is defined"),
        6,
    );

    let variables: BTreeMap<String, Value> =
        vars.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let mut new_variables = BTreeMap::new();
    new_variables.insert(key.to_string(), json!(answer_value));

    let mut parameter_keys: Vec<String> = bp
        .params
        .iter()
        .filter(|(k, _)| *k != "ask_distance")
        .map(|(k, _)| k.to_string())
        .collect();
    parameter_keys.push(key.to_string());

    let scene_params: BTreeMap<String, Value> = vars
        .iter()
        .map(|(k, v)| (format!("diagram_{k}"), json!(v)))
        .collect();

    let answer = Answer::numeric(answer_value, unit, format!("{key} = {answer_value} {unit}"));

    Trace {
        id: Some(id.to_string()),
        scenario_family: Some(family.as_str().to_string()),
        state_0: Some(State0 {
            objects: bp.objects,
            relations: bp.relations,
            forces: bp.forces,
            variables,
            assumptions: bp.extra_assumptions,
        }),
        transition: Some(Transition {
            rule: rule_text(family).to_string(),
            effect: bp.effect,
            equation: Some(bp.equation),
            evidence: vec![bp.evidence],
        }),
        state_1: Some(State1 {
            predicted_change: bp.predicted_change,
            new_variables,
        }),
        derivation: Some(format!(
            "Apply {}: {key} = {answer_value} {unit}.",
            rule_text(family).to_lowercase()
        )),
        answer: Some(answer.clone()),
        metadata: Some(Metadata {
            gold_answer: Some(answer),
            gold_variables: Some(vars),
            parameter_keys,
            split: None,
            source: Source::Synthetic,
            question: Some(bp.question),
            options: None,
            answer_type: Some(AnswerType::UnitBearing),
            scene_description: Some(bp.scene),
            scene_params: Some(scene_params),
        }),
    }
}
