//! Unit spelling canonicalization and conversion to canonical units.
//!
//! Canonical tokens are plain SI-style strings (`m`, `kg`, `m/s²`, `Ω`, ...).
//! `canonical_spelling` normalizes common ASCII spellings to those tokens;
//! `convert_to_canonical` additionally rescales the value (affine for °F).

/// Spelling aliases applied before any conversion lookup.
/// The full table is published in docs/canonicalization.md.
const SPELLING_ALIASES: &[(&str, &str)] = &[
    ("m/s^2", "m/s²"),
    ("m/s/s", "m/s²"),
    ("m/sec^2", "m/s²"),
    ("cm/s^2", "cm/s²"),
    ("ohm", "Ω"),
    ("ohms", "Ω"),
    ("Ohm", "Ω"),
    ("kohm", "kΩ"),
    ("kilo-ohm", "kΩ"),
    ("degC", "°C"),
    ("deg C", "°C"),
    ("celsius", "°C"),
    ("Celsius", "°C"),
    ("degF", "°F"),
    ("deg F", "°F"),
    ("fahrenheit", "°F"),
    ("deg", "°"),
    ("degree", "°"),
    ("degrees", "°"),
    ("sec", "s"),
    ("second", "s"),
    ("seconds", "s"),
    ("meter", "m"),
    ("meters", "m"),
    ("metre", "m"),
    ("metres", "m"),
    ("kilogram", "kg"),
    ("kilograms", "kg"),
    ("gram", "g"),
    ("grams", "g"),
    ("newton", "N"),
    ("newtons", "N"),
    ("joule", "J"),
    ("joules", "J"),
    ("watt", "W"),
    ("watts", "W"),
    ("pascal", "Pa"),
    ("pascals", "Pa"),
    ("hertz", "Hz"),
    ("volt", "V"),
    ("volts", "V"),
    ("amp", "A"),
    ("ampere", "A"),
    ("amperes", "A"),
    ("tesla", "T"),
    ("liter", "L"),
    ("litre", "L"),
    ("liters", "L"),
    ("km/hr", "km/h"),
    ("kph", "km/h"),
    ("kg/m^3", "kg/m³"),
    ("g/cm^3", "g/cm³"),
];

/// (unit, canonical, factor, pre_offset): canonical_value = (value + pre_offset) * factor
const CONVERSIONS: &[(&str, &str, f64, f64)] = &[
    ("m", "m", 1.0, 0.0),
    ("cm", "m", 0.01, 0.0),
    ("mm", "m", 0.001, 0.0),
    ("km", "m", 1000.0, 0.0),
    ("kg", "kg", 1.0, 0.0),
    ("g", "kg", 0.001, 0.0),
    ("mg", "kg", 1e-6, 0.0),
    ("s", "s", 1.0, 0.0),
    ("ms", "s", 0.001, 0.0),
    ("min", "s", 60.0, 0.0),
    ("h", "s", 3600.0, 0.0),
    ("N", "N", 1.0, 0.0),
    ("kN", "N", 1000.0, 0.0),
    ("J", "J", 1.0, 0.0),
    ("kJ", "J", 1000.0, 0.0),
    ("W", "W", 1.0, 0.0),
    ("kW", "W", 1000.0, 0.0),
    ("Pa", "Pa", 1.0, 0.0),
    ("kPa", "Pa", 1000.0, 0.0),
    ("Hz", "Hz", 1.0, 0.0),
    ("kHz", "Hz", 1000.0, 0.0),
    ("Ω", "Ω", 1.0, 0.0),
    ("kΩ", "Ω", 1000.0, 0.0),
    ("V", "V", 1.0, 0.0),
    ("kV", "V", 1000.0, 0.0),
    ("A", "A", 1.0, 0.0),
    ("mA", "A", 0.001, 0.0),
    ("T", "T", 1.0, 0.0),
    ("mT", "T", 0.001, 0.0),
    ("L", "L", 1.0, 0.0),
    ("mL", "L", 0.001, 0.0),
    ("m/s", "m/s", 1.0, 0.0),
    ("cm/s", "m/s", 0.01, 0.0),
    ("km/h", "m/s", 1.0 / 3.6, 0.0),
    ("m/s²", "m/s²", 1.0, 0.0),
    ("cm/s²", "m/s²", 0.01, 0.0),
    ("kg/m³", "kg/m³", 1.0, 0.0),
    ("g/cm³", "kg/m³", 1000.0, 0.0),
    ("°C", "°C", 1.0, 0.0),
    ("°F", "°C", 5.0 / 9.0, -32.0),
    ("°", "°", 1.0, 0.0),
    ("rad", "°", 180.0 / std::f64::consts::PI, 0.0),
];

/// The 22 commonly confused unit pairs used by the contrastive perturbations.
/// Published in docs/perturbations.md.
pub const UNIT_CONFUSION_PAIRS: &[(&str, &str)] = &[
    ("m", "cm"),
    ("m", "km"),
    ("m", "mm"),
    ("N", "kN"),
    ("J", "kJ"),
    ("°C", "°F"),
    ("s", "ms"),
    ("s", "min"),
    ("kg", "g"),
    ("g", "mg"),
    ("m/s", "km/h"),
    ("m/s", "cm/s"),
    ("Ω", "kΩ"),
    ("Hz", "kHz"),
    ("Pa", "kPa"),
    ("V", "kV"),
    ("A", "mA"),
    ("W", "kW"),
    ("L", "mL"),
    ("rad", "°"),
    ("m/s²", "cm/s²"),
    ("T", "mT"),
];

/// Normalize a unit spelling to its canonical token. Unknown spellings are
/// returned trimmed but otherwise unchanged.
pub fn canonical_spelling(unit: &str) -> String {
    let trimmed = unit.trim();
    let expanded = trimmed.replace("^2", "²").replace("^3", "³");
    for (alias, canon) in SPELLING_ALIASES {
        if trimmed == *alias || expanded == *alias {
            return (*canon).to_string();
        }
    }
    expanded
}

/// Convert a value in `unit` to the canonical unit of its dimension.
/// Returns `None` when the unit is not in the conversion table.
pub fn convert_to_canonical(value: f64, unit: &str) -> Option<(f64, &'static str)> {
    let spelled = canonical_spelling(unit);
    CONVERSIONS
        .iter()
        .find(|(u, _, _, _)| *u == spelled)
        .map(|(_, canon, factor, pre_offset)| ((value + pre_offset) * factor, *canon))
}

/// True when the token is already a canonical unit.
pub fn is_canonical(unit: &str) -> bool {
    CONVERSIONS
        .iter()
        .any(|(u, canon, factor, off)| u == canon && *factor == 1.0 && *off == 0.0 && *u == unit)
}

/// Confusion partner of a canonical unit, if the table has one.
pub fn confusion_partner(unit: &str) -> Option<&'static str> {
    for (a, b) in UNIT_CONFUSION_PAIRS {
        if *a == unit {
            return Some(b);
        }
        if *b == unit {
            return Some(a);
        }
    }
    None
}
