//! Equations of motion solved for the accelerations, with analytic
//! derivatives with respect to the identified coefficients.
//!
//! Every model is written as `M q̈ + R(q, q̇; λ) = F(t)` with a diagonal,
//! known mass matrix. `R` collects the internal damping and restoring forces,
//! so `q̈ = M⁻¹ (F − R)`.
//!
//! The generator emits raw values that [`ParamLayout`] turns into physical
//! coefficients. Raw slots follow the declaration order of
//! [`ModelSpec::coefficients`]: one slot for a `direct` coefficient, two
//! consecutive slots `(a, b)` for a `sci_notation` coefficient decoded as
//! `a · 10^b`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `|b|` above this in a `sci_notation` slot is refused instead of overflowing.
pub const MAX_DECIMAL_EXPONENT: f64 = 300.0;

/// Lower clamp on `|q_i − q_j|` inside the logarithm of power-law derivatives.
pub const LOG_FLOOR: f64 = 1e-12;

/// Magnitude above which [`Encoding::for_magnitude`] picks scientific notation.
pub const SCI_NOTATION_THRESHOLD: f64 = 1e3;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("expected {expected} values for {what}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("mass {index} must be strictly positive, found {value}")]
    Mass { index: usize, value: f64 },
    #[error("exponent {exponent} of coefficient `{name}` exceeds the decode guard")]
    ExponentOverflow { name: String, exponent: f64 },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Direct,
    SciNotation,
}

impl Encoding {
    pub fn slots(self) -> usize {
        match self {
            Encoding::Direct => 1,
            Encoding::SciNotation => 2,
        }
    }

    pub fn for_magnitude(expected: f64) -> Self {
        if expected.abs() > SCI_NOTATION_THRESHOLD {
            Encoding::SciNotation
        } else {
            Encoding::Direct
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub name: String,
    pub unit: String,
    pub encoding: Encoding,
    /// Rough expected value (order of magnitude and sign). When set, the
    /// generator starts out emitting it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_magnitude: Option<f64>,
}

impl CoefficientSpec {
    pub fn new(name: &str, unit: &str, encoding: Encoding) -> Self {
        Self {
            name: name.to_owned(),
            unit: unit.to_owned(),
            encoding,
            prior_magnitude: None,
        }
    }

    pub fn with_prior(mut self, magnitude: f64) -> Self {
        self.prior_magnitude = Some(magnitude);
        self
    }
}

/// One factor of a state monomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    /// `q_dof^power`
    Disp { dof: usize, power: u32 },
    /// `q̇_dof^power`
    Vel { dof: usize, power: u32 },
    /// `(q_i − q_j)^power`
    RelDisp { i: usize, j: usize, power: u32 },
    /// `(q̇_i − q̇_j)^power`
    RelVel { i: usize, j: usize, power: u32 },
}

impl Factor {
    #[inline]
    pub fn eval(&self, q: &[f64], qdot: &[f64]) -> f64 {
        match *self {
            Factor::Disp { dof, power } => q[dof].powi(power as i32),
            Factor::Vel { dof, power } => qdot[dof].powi(power as i32),
            Factor::RelDisp { i, j, power } => (q[i] - q[j]).powi(power as i32),
            Factor::RelVel { i, j, power } => (qdot[i] - qdot[j]).powi(power as i32),
        }
    }

    fn max_index(&self) -> usize {
        match *self {
            Factor::Disp { dof, .. } | Factor::Vel { dof, .. } => dof,
            Factor::RelDisp { i, j, .. } | Factor::RelVel { i, j, .. } => i.max(j),
        }
    }

    /// Human-readable form using `q1, q2, …` and `dq1, dq2, …`.
    pub fn label(&self) -> String {
        let pow = |p: u32| if p == 1 { String::new() } else { format!("^{p}") };
        match *self {
            Factor::Disp { dof, power } => format!("q{}{}", dof + 1, pow(power)),
            Factor::Vel { dof, power } => format!("dq{}{}", dof + 1, pow(power)),
            Factor::RelDisp { i, j, power } => format!("(q{}-q{}){}", i + 1, j + 1, pow(power)),
            Factor::RelVel { i, j, power } => format!("(dq{}-dq{}){}", i + 1, j + 1, pow(power)),
        }
    }
}

/// Product of factors; the empty product is 1.
pub fn monomial(factors: &[Factor], q: &[f64], qdot: &[f64]) -> f64 {
    factors.iter().map(|f| f.eval(q, qdot)).product()
}

/// `|q_i − q_j|^λ[exponent]`, defined as 0 when `q_i == q_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub i: usize,
    pub j: usize,
    pub exponent: usize,
}

/// `sign · λ[coefficient] · Π factors · (optional power law)`, added to the
/// internal force of equation `equation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTerm {
    pub equation: usize,
    pub sign: f64,
    pub coefficient: usize,
    #[serde(default)]
    pub factors: Vec<Factor>,
    #[serde(default)]
    pub power_law: Option<PowerLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `m ẍ + b ẋ + b_nl x² ẋ + k x + k_nl x³ = F`, coefficients `[b, b_nl, k, k_nl]`.
    DuffingSdof,
    /// Grounded linear oscillator coupled to a nonlinear one:
    ///
    /// `m₁ ẍ + b₁ ẋ + b₂ (ẋ − ẏ) + k₁ x + k₂ (x − y) + α (x − y)|x − y|^β = F₁`
    /// `m₂ ÿ − b₂ (ẋ − ẏ) − k₂ (x − y) − α (x − y)|x − y|^β = F₂`
    ///
    /// with coefficients `[b1, b2, k1, k2, alpha, beta]`.
    CoupledLoNo,
    GenericTerms { terms: Vec<ForceTerm> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub masses_kg: Vec<f64>,
    pub kind: ModelKind,
    pub coefficients: Vec<CoefficientSpec>,
    /// Identify mass-normalised coefficients: the masses are taken as 1.
    #[serde(default)]
    pub mass_scaled: bool,
}

/// Named coefficient values in the declaration order of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ParameterSet {
    pub fn new(model: &ModelSpec, values: Vec<f64>) -> Result<Self, PhysicsError> {
        if values.len() != model.coefficients.len() {
            return Err(PhysicsError::Length {
                what: "coefficients",
                expected: model.coefficients.len(),
                found: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(PhysicsError::NonFinite("coefficient value"));
        }
        Ok(Self {
            names: model.coefficients.iter().map(|c| c.name.clone()).collect(),
            values,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl ModelSpec {
    pub fn duffing(mass_kg: f64, encodings: [Encoding; 4]) -> Self {
        let [eb, ebn, ek, ekn] = encodings;
        Self {
            masses_kg: vec![mass_kg],
            kind: ModelKind::DuffingSdof,
            coefficients: vec![
                CoefficientSpec::new("b", "N*s/m", eb),
                CoefficientSpec::new("b_nl", "N*s/m^3", ebn),
                CoefficientSpec::new("k", "N/m", ek),
                CoefficientSpec::new("k_nl", "N/m^3", ekn),
            ],
            mass_scaled: false,
        }
    }

    pub fn coupled_lo_no(mass_lo_kg: f64, mass_no_kg: f64, encodings: [Encoding; 6]) -> Self {
        let names = [
            ("b1", "N*s/m"),
            ("b2", "N*s/m"),
            ("k1", "N/m"),
            ("k2", "N/m"),
            ("alpha", "N/m^(beta+1)"),
            ("beta", "-"),
        ];
        Self {
            masses_kg: vec![mass_lo_kg, mass_no_kg],
            kind: ModelKind::CoupledLoNo,
            coefficients: names
                .iter()
                .zip(encodings)
                .map(|(&(n, u), e)| CoefficientSpec::new(n, u, e))
                .collect(),
            mass_scaled: false,
        }
    }

    pub fn dof(&self) -> usize {
        match self.kind {
            ModelKind::DuffingSdof => 1,
            ModelKind::CoupledLoNo => 2,
            ModelKind::GenericTerms { .. } => self.masses_kg.len(),
        }
    }

    pub fn coefficient_count(&self) -> usize {
        self.coefficients.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            names: self.coefficients.iter().map(|c| c.name.clone()).collect(),
            encodings: self.coefficients.iter().map(|c| c.encoding).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if let Some(c) = self.coefficients.iter().find(|c| c.prior_magnitude.is_some_and(|m| !(m.is_finite() && m != 0.0))) {
            return Err(PhysicsError::Invalid(format!("prior magnitude of `{}` must be finite and non-zero", c.name)));
        }
        let dof = self.dof();
        if dof == 0 {
            return Err(PhysicsError::Invalid("model has no degrees of freedom".into()));
        }
        if self.masses_kg.len() != dof {
            return Err(PhysicsError::Length {
                what: "masses",
                expected: dof,
                found: self.masses_kg.len(),
            });
        }
        for (index, &value) in self.masses_kg.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PhysicsError::Mass { index, value });
            }
        }
        let expected = match self.kind {
            ModelKind::DuffingSdof => Some(4),
            ModelKind::CoupledLoNo => Some(6),
            ModelKind::GenericTerms { .. } => None,
        };
        if let Some(expected) = expected {
            if self.coefficients.len() != expected {
                return Err(PhysicsError::Length {
                    what: "coefficients",
                    expected,
                    found: self.coefficients.len(),
                });
            }
        }
        if let ModelKind::GenericTerms { terms } = &self.kind {
            if terms.is_empty() {
                return Err(PhysicsError::Invalid("generic model has no terms".into()));
            }
            let ncoef = self.coefficients.len();
            for (t, term) in terms.iter().enumerate() {
                let bad_state = term.factors.iter().any(|f| f.max_index() >= dof)
                    || term.power_law.is_some_and(|p| p.i >= dof || p.j >= dof);
                if term.equation >= dof || bad_state {
                    return Err(PhysicsError::Invalid(format!("term {t} references a state outside 0..{dof}")));
                }
                if term.coefficient >= ncoef || term.power_law.is_some_and(|p| p.exponent >= ncoef) {
                    return Err(PhysicsError::Invalid(format!("term {t} references a coefficient outside 0..{ncoef}")));
                }
                if !term.sign.is_finite() {
                    return Err(PhysicsError::Invalid(format!("term {t} has a non-finite sign")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn inv_mass(&self, d: usize) -> f64 {
        if self.mass_scaled {
            1.0
        } else {
            1.0 / self.masses_kg[d]
        }
    }

    /// Accelerations for one state sample. No validation; see [`eval_accel`].
    pub fn accel_into(&self, params: &[f64], q: &[f64], qdot: &[f64], force: &[f64], out: &mut [f64]) {
        match &self.kind {
            ModelKind::DuffingSdof => {
                let [b, b_nl, k, k_nl] = [params[0], params[1], params[2], params[3]];
                let (x, v) = (q[0], qdot[0]);
                let restoring = b * v + b_nl * x * x * v + k * x + k_nl * x * x * x;
                out[0] = (force[0] - restoring) * self.inv_mass(0);
            }
            ModelKind::CoupledLoNo => {
                let [b1, b2, k1, k2, alpha, beta] = [params[0], params[1], params[2], params[3], params[4], params[5]];
                let s = q[0] - q[1];
                let sd = qdot[0] - qdot[1];
                let coupling = b2 * sd + k2 * s + alpha * s * abs_pow(s, beta);
                out[0] = (force[0] - b1 * qdot[0] - k1 * q[0] - coupling) * self.inv_mass(0);
                out[1] = (force[1] + coupling) * self.inv_mass(1);
            }
            ModelKind::GenericTerms { terms } => {
                out.copy_from_slice(force);
                for term in terms {
                    let mut value = term.sign * params[term.coefficient] * monomial(&term.factors, q, qdot);
                    if let Some(pl) = term.power_law {
                        value *= abs_pow(q[pl.i] - q[pl.j], params[pl.exponent]);
                    }
                    out[term.equation] -= value;
                }
                for (d, a) in out.iter_mut().enumerate() {
                    *a *= self.inv_mass(d);
                }
            }
        }
    }

    /// `∂q̈/∂λ` for one state sample, row-major `dof × coefficients`.
    /// `out` is overwritten.
    pub fn jacobian_into(&self, params: &[f64], q: &[f64], qdot: &[f64], out: &mut [f64]) {
        let n = self.coefficients.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            ModelKind::DuffingSdof => {
                let w = -self.inv_mass(0);
                let (x, v) = (q[0], qdot[0]);
                out[0] = w * v;
                out[1] = w * x * x * v;
                out[2] = w * x;
                out[3] = w * x * x * x;
            }
            ModelKind::CoupledLoNo => {
                let (alpha, beta) = (params[4], params[5]);
                let s = q[0] - q[1];
                let sd = qdot[0] - qdot[1];
                let p = s * abs_pow(s, beta);
                let dbeta = alpha * p * s.abs().max(LOG_FLOOR).ln();
                let w0 = -self.inv_mass(0);
                let w1 = self.inv_mass(1);
                out[..6].copy_from_slice(&[w0 * qdot[0], w0 * sd, w0 * q[0], w0 * s, w0 * p, w0 * dbeta]);
                out[n..n + 6].copy_from_slice(&[0.0, w1 * sd, 0.0, w1 * s, w1 * p, w1 * dbeta]);
            }
            ModelKind::GenericTerms { terms } => {
                for term in terms {
                    let w = -term.sign * self.inv_mass(term.equation);
                    let row = term.equation * n;
                    let mono = monomial(&term.factors, q, qdot);
                    match term.power_law {
                        None => out[row + term.coefficient] += w * mono,
                        Some(pl) => {
                            let s = q[pl.i] - q[pl.j];
                            let powered = mono * abs_pow(s, params[pl.exponent]);
                            out[row + term.coefficient] += w * powered;
                            out[row + pl.exponent] +=
                                w * params[term.coefficient] * powered * s.abs().max(LOG_FLOOR).ln();
                        }
                    }
                }
            }
        }
    }

    /// The same equations expressed as generic terms.
    pub fn to_generic(&self) -> ModelSpec {
        let terms = match &self.kind {
            ModelKind::GenericTerms { terms } => terms.clone(),
            ModelKind::DuffingSdof => vec![
                term(0, 1.0, 0, vec![Factor::Vel { dof: 0, power: 1 }], None),
                term(0, 1.0, 1, vec![Factor::Disp { dof: 0, power: 2 }, Factor::Vel { dof: 0, power: 1 }], None),
                term(0, 1.0, 2, vec![Factor::Disp { dof: 0, power: 1 }], None),
                term(0, 1.0, 3, vec![Factor::Disp { dof: 0, power: 3 }], None),
            ],
            ModelKind::CoupledLoNo => {
                let rel_v = Factor::RelVel { i: 0, j: 1, power: 1 };
                let rel_x = Factor::RelDisp { i: 0, j: 1, power: 1 };
                let pl = Some(PowerLaw { i: 0, j: 1, exponent: 5 });
                let mut terms = vec![
                    term(0, 1.0, 0, vec![Factor::Vel { dof: 0, power: 1 }], None),
                    term(0, 1.0, 2, vec![Factor::Disp { dof: 0, power: 1 }], None),
                ];
                for (eq, sign) in [(0, 1.0), (1, -1.0)] {
                    terms.push(term(eq, sign, 1, vec![rel_v], None));
                    terms.push(term(eq, sign, 3, vec![rel_x], None));
                    terms.push(term(eq, sign, 4, vec![rel_x], pl));
                }
                terms
            }
        };
        ModelSpec {
            masses_kg: self.masses_kg.clone(),
            kind: ModelKind::GenericTerms { terms },
            coefficients: self.coefficients.clone(),
            mass_scaled: self.mass_scaled,
        }
    }

    fn check_sample(&self, params: &ParameterSet, q: &[f64], qdot: &[f64], force: Option<&[f64]>) -> Result<(), PhysicsError> {
        self.validate()?;
        let dof = self.dof();
        let checks = [
            ("coefficients", self.coefficients.len(), params.values.len()),
            ("displacements", dof, q.len()),
            ("velocities", dof, qdot.len()),
            ("forces", dof, force.map_or(dof, <[f64]>::len)),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(PhysicsError::Length { what, expected, found });
            }
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(q) || !finite(qdot) || !force.is_none_or(finite) {
            return Err(PhysicsError::NonFinite("state"));
        }
        if !finite(&params.values) {
            return Err(PhysicsError::NonFinite("coefficient value"));
        }
        Ok(())
    }
}

fn term(equation: usize, sign: f64, coefficient: usize, factors: Vec<Factor>, power_law: Option<PowerLaw>) -> ForceTerm {
    ForceTerm {
        equation,
        sign,
        coefficient,
        factors,
        power_law,
    }
}

/// `|s|^p` with `0^p := 0` for every `p`.
#[inline]
pub fn abs_pow(s: f64, p: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.abs().powf(p)
    }
}

/// Validated single-sample acceleration evaluation. The time argument is
/// accepted for interface symmetry; forcing enters through `external_force`.
pub fn eval_accel(
    model: &ModelSpec,
    params: &ParameterSet,
    q: &[f64],
    qdot: &[f64],
    external_force: &[f64],
    _t: f64,
) -> Result<Vec<f64>, PhysicsError> {
    model.check_sample(params, q, qdot, Some(external_force))?;
    let mut out = vec![0.0; model.dof()];
    model.accel_into(&params.values, q, qdot, external_force, &mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(PhysicsError::NonFinite("acceleration"));
    }
    Ok(out)
}

/// Validated single-sample Jacobian, `dof` rows of `coefficients` entries.
pub fn accel_param_jacobian(model: &ModelSpec, params: &ParameterSet, q: &[f64], qdot: &[f64]) -> Result<Vec<Vec<f64>>, PhysicsError> {
    model.check_sample(params, q, qdot, None)?;
    let n = model.coefficient_count();
    let mut flat = vec![0.0; model.dof() * n];
    model.jacobian_into(&params.values, q, qdot, &mut flat);
    Ok(flat.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Mapping between raw generator outputs and physical coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub encodings: Vec<Encoding>,
}

impl ParamLayout {
    pub fn raw_len(&self) -> usize {
        self.encodings.iter().map(|e| e.slots()).sum()
    }

    pub fn coefficient_count(&self) -> usize {
        self.encodings.len()
    }

    /// Decodes one raw row into `out`, returning the offending coefficient on
    /// overflow.
    pub fn decode_into(&self, raw: &[f64], out: &mut [f64]) -> Result<(), PhysicsError> {
        if raw.len() != self.raw_len() {
            return Err(PhysicsError::Length {
                what: "raw generator outputs",
                expected: self.raw_len(),
                found: raw.len(),
            });
        }
        let mut slot = 0;
        for (c, enc) in self.encodings.iter().enumerate() {
            out[c] = match enc {
                Encoding::Direct => raw[slot],
                Encoding::SciNotation => {
                    let (a, b) = (raw[slot], raw[slot + 1]);
                    if !(b.abs() <= MAX_DECIMAL_EXPONENT) {
                        return Err(PhysicsError::ExponentOverflow {
                            name: self.names[c].clone(),
                            exponent: b,
                        });
                    }
                    a * 10f64.powf(b)
                }
            };
            if !out[c].is_finite() {
                return Err(PhysicsError::NonFinite("decoded coefficient"));
            }
            slot += enc.slots();
        }
        Ok(())
    }

    /// Chain rule through the decode: given `∂L/∂λ`, accumulate `∂L/∂raw`.
    pub fn backprop_row(&self, raw: &[f64], d_values: &[f64], d_raw: &mut [f64]) {
        let mut slot = 0;
        for (c, enc) in self.encodings.iter().enumerate() {
            match enc {
                Encoding::Direct => d_raw[slot] = d_values[c],
                Encoding::SciNotation => {
                    let (a, b) = (raw[slot], raw[slot + 1]);
                    let scale = 10f64.powf(b);
                    d_raw[slot] = d_values[c] * scale;
                    d_raw[slot + 1] = d_values[c] * a * scale * std::f64::consts::LN_10;
                }
            }
            slot += enc.slots();
        }
    }
}

pub fn decode_params(raw_outputs: &[f64], layout: &ParamLayout) -> Result<ParameterSet, PhysicsError> {
    let mut values = vec![0.0; layout.coefficient_count()];
    layout.decode_into(raw_outputs, &mut values)?;
    Ok(ParameterSet {
        names: layout.names.clone(),
        values,
    })
}
