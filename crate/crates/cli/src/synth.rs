//! Seeded Gaussian-blob CSV generator. Produces a multiclass flow-style
//! table with headers f00..fNN plus a Label column, used by the test suite
//! in place of a captured traffic dataset.

use ddhm_core::rng::Xorshift64Star;

use crate::CliError;

/// Class labels in the style of flow-capture attack families. "BENIGN"
/// sorts first, matching the label codec's lexicographic class ids.
pub const CLASS_NAMES: [&str; 8] = [
    "BENIGN", "DrDoS_DNS", "LDAP", "MSSQL", "NetBIOS", "Portmap", "Syn", "UDP",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub rows: usize,
    pub dims: usize,
    pub classes: usize,
    /// Distance of each class's marker features from zero, in units of the
    /// unit-variance noise.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rows: 2000,
            dims: 20,
            classes: 4,
            separation: 4.0,
            seed: 7,
        }
    }
}

/// Generate the CSV text. Class c's blob center is `separation` on every
/// feature j with j mod classes == c and 0 elsewhere, so classes are
/// axis-separable and a shallow tree can tell them apart. Rows cycle
/// through the classes; all noise is unit Gaussian from one seeded stream.
pub fn generate(spec: &SynthSpec) -> Result<String, CliError> {
    if spec.classes < 2 || spec.classes > CLASS_NAMES.len() {
        return Err(CliError::Usage(format!(
            "classes must be 2..={}, got {}",
            CLASS_NAMES.len(),
            spec.classes
        )));
    }
    if spec.rows < spec.classes || spec.dims < spec.classes {
        return Err(CliError::Usage(format!(
            "need rows >= classes and dims >= classes, got rows={} dims={} classes={}",
            spec.rows, spec.dims, spec.classes
        )));
    }
    if !(spec.separation.is_finite() && spec.separation > 0.0) {
        return Err(CliError::Usage(format!(
            "separation must be positive and finite, got {}",
            spec.separation
        )));
    }

    let mut rng = Xorshift64Star::new(spec.seed);
    let mut out = String::new();
    for j in 0..spec.dims {
        out.push_str(&format!("f{j:02},"));
    }
    out.push_str("Label\n");
    for i in 0..spec.rows {
        let class = i % spec.classes;
        for j in 0..spec.dims {
            let center = if j % spec.classes == class {
                spec.separation
            } else {
                0.0
            };
            out.push_str(&format!("{:.6},", center + rng.next_gaussian()));
        }
        out.push_str(CLASS_NAMES[class]);
        out.push('\n');
    }
    Ok(out)
}
