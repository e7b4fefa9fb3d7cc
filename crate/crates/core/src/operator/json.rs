//! JSON operator documents: catalog references or expression-language specs.
//!
//! ```json
//! {"family": "section5", "variant": "general", "params": {"dim": 1, "k": 2, "m": 2}}
//! {"family": "ornstein_uhlenbeck", "params": {"dim": 1, "rate": 1}}
//! {"family": "heat", "params": {"dim": 1, "c": 0}}
//! {"dim": 1, "diffusion": [["1"]], "drift": ["-x1"], "potential": "0",
//!  "eta": "1", "r": "-1", "constants": {...}, "scalars": {"a": "1 + 0.5*sin(t)"}}
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::catalog::{self, Family, PredictedConstants, Section5Params};
use super::spec::{Coefficients, Constants, OperatorSpec, ScalarFn, Structure, MAX_DIM};
use super::OperatorError;
use crate::expr::{Expr, ScalarTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CatalogRef {
    Section5 {
        #[serde(default = "default_variant")]
        variant: Family,
        #[serde(default)]
        params: Section5Params,
    },
    OrnsteinUhlenbeck {
        #[serde(default)]
        params: OuParams,
    },
    Heat {
        #[serde(default)]
        params: HeatParams,
    },
}

fn default_variant() -> Family {
    Family::General
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuParams {
    pub dim: usize,
    pub rate: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        OuParams { dim: 1, rate: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatParams {
    pub dim: usize,
    pub c: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams { dim: 1, c: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub scalars: BTreeMap<String, String>,
    pub diffusion: Vec<Vec<String>>,
    pub drift: Vec<String>,
    pub potential: String,
    pub eta: String,
    pub r: String,
    #[serde(default)]
    pub beta: Option<String>,
    pub constants: Constants,
}

fn default_name() -> String {
    "expression".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecDocument {
    Catalog(CatalogRef),
    Expression(ExpressionSpec),
}

impl SpecDocument {
    /// Parses a document; objects carrying `family` are catalog references.
    pub fn from_value(v: &Value) -> Result<Self, OperatorError> {
        let doc_err = |e: serde_json::Error| OperatorError::Document(e.to_string());
        if v.get("family").is_some() {
            Ok(SpecDocument::Catalog(serde_json::from_value(v.clone()).map_err(doc_err)?))
        } else {
            Ok(SpecDocument::Expression(serde_json::from_value(v.clone()).map_err(doc_err)?))
        }
    }

    pub fn from_str(s: &str) -> Result<Self, OperatorError> {
        let v: Value = serde_json::from_str(s).map_err(|e| OperatorError::Document(e.to_string()))?;
        Self::from_value(&v)
    }

    pub fn build(&self) -> Result<(OperatorSpec, Option<PredictedConstants>), OperatorError> {
        match self {
            SpecDocument::Catalog(CatalogRef::Section5 { variant, params }) => {
                let (s, p) = catalog::catalog_example(*variant, params)?;
                Ok((s, Some(p)))
            }
            SpecDocument::Catalog(CatalogRef::OrnsteinUhlenbeck { params }) => {
                check_dim(params.dim)?;
                if !(params.rate > 0.0) {
                    return Err(OperatorError::CatalogConstraint("rate > 0".into()));
                }
                let (s, p) = catalog::ornstein_uhlenbeck(params.dim, params.rate);
                Ok((s, Some(p)))
            }
            SpecDocument::Catalog(CatalogRef::Heat { params }) => {
                check_dim(params.dim)?;
                if params.c < 0.0 {
                    return Err(OperatorError::CatalogConstraint("c >= 0".into()));
                }
                let (s, p) = catalog::heat(params.dim, params.c);
                Ok((s, Some(p)))
            }
            SpecDocument::Expression(e) => Ok((e.build()?, None)),
        }
    }
}

fn check_dim(dim: usize) -> Result<(), OperatorError> {
    if dim == 0 || dim > MAX_DIM {
        return Err(OperatorError::Document(format!("dim must be in 1..={MAX_DIM}, got {dim}")));
    }
    Ok(())
}

impl ExpressionSpec {
    pub fn build(&self) -> Result<OperatorSpec, OperatorError> {
        let d = self.dim;
        check_dim(d)?;
        let table = Arc::new(ScalarTable::new(&self.scalars).map_err(|e| OperatorError::Expression {
            field: "scalars".into(),
            source: e,
        })?);
        let parse = |field: String, src: &str| {
            Expr::parse_with(src, d, table.clone()).map_err(|e| OperatorError::Expression { field, source: e })
        };
        if self.diffusion.len() != d || self.diffusion.iter().any(|row| row.len() != d) {
            return Err(OperatorError::Document(format!("diffusion must be a {d}x{d} array")));
        }
        if self.drift.len() != d {
            return Err(OperatorError::Document(format!("drift must have {d} entries")));
        }
        let mut q = Vec::with_capacity(d * d);
        for (i, row) in self.diffusion.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                q.push(parse(format!("diffusion[{i}][{j}]"), src)?);
            }
        }
        let b: Vec<Expr> = self
            .drift
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("drift[{i}]"), s))
            .collect::<Result<_, _>>()?;
        let c = parse("potential".into(), &self.potential)?;
        let eta = parse("eta".into(), &self.eta)?;
        let r = parse("r".into(), &self.r)?;
        let beta = self.beta.as_ref().map(|s| parse("beta".into(), s)).transpose()?;

        let mut all: Vec<&Expr> = q.iter().chain(&b).collect();
        all.extend([&c, &eta, &r]);
        all.extend(beta.iter());
        let structure = Structure {
            autonomous: all.iter().all(|e| !e.depends_on_time()),
            diffusion_x_independent: q.iter().all(|e| !e.depends_on_space()),
            potential_zero: c.is_zero(),
        };

        let scalar = |e: Expr| -> ScalarFn { Arc::new(move |t, x: &[f64]| e.eval(t, x)) };
        let coeffs = Coefficients {
            dim: d,
            diffusion: Arc::new(move |t, x: &[f64], out: &mut [f64]| {
                for (o, e) in out.iter_mut().zip(&q) {
                    *o = e.eval(t, x);
                }
            }),
            drift: Arc::new(move |t, x: &[f64], out: &mut [f64]| {
                for (o, e) in out.iter_mut().zip(&b) {
                    *o = e.eval(t, x);
                }
            }),
            potential: scalar(c),
            eta: scalar(eta),
            r: scalar(r),
            beta: beta.map(scalar),
        };
        Ok(OperatorSpec {
            name: self.name.clone(),
            coeffs,
            constants: self.constants.clone(),
            structure,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU_EXPR: &str = r#"{
        "name": "ou-expr", "dim": 1,
        "diffusion": [["1"]], "drift": ["-x"], "potential": "0",
        "eta": "1", "r": "-1",
        "constants": {"c0": 0, "eta0": 1, "k1": 0, "k2": 0, "l0": 1, "l1": 0, "r0": 1}
    }"#;

    #[test]
    fn expression_spec_matches_catalog() {
        let (spec, pred) = SpecDocument::from_str(OU_EXPR).unwrap().build().unwrap();
        assert!(pred.is_none());
        let (cat, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        for &x in &[0.0, 0.5, 3.0] {
            assert_eq!(spec.coeffs.b(0.0, &[x]), cat.coeffs.b(0.0, &[x]));
            assert_eq!(spec.coeffs.q(1.0, &[x]), cat.coeffs.q(1.0, &[x]));
        }
        assert!(spec.structure.autonomous && spec.structure.potential_zero && spec.structure.diffusion_x_independent);
    }

    #[test]
    fn time_dependent_scalars() {
        let doc = r#"{
            "dim": 2, "scalars": {"a": "1 + 0.5*sin(t)"},
            "diffusion": [["1 + x1^2", "0"], ["0", "1"]], "drift": ["-a*x1", "-a*x2"],
            "potential": "0", "eta": "1", "r": "-0.5",
            "constants": {"c0": 0, "eta0": 1, "k1": 2, "k2": 0, "l0": 0.5, "l1": 0, "r0": 1}
        }"#;
        let (spec, _) = SpecDocument::from_str(doc).unwrap().build().unwrap();
        assert!(!spec.structure.autonomous);
        assert!(!spec.structure.diffusion_x_independent);
        let t = 1.0f64;
        assert!((spec.coeffs.b(t, &[2.0, 1.0])[0] + 2.0 * (1.0 + 0.5 * t.sin())).abs() < 1e-14);
    }

    #[test]
    fn catalog_reference() {
        let doc = r#"{"family": "section5", "variant": "general", "params": {"dim": 1, "k": 2, "m": 2, "b0": 1}}"#;
        let (spec, pred) = SpecDocument::from_str(doc).unwrap().build().unwrap();
        assert_eq!(spec.name, "section5-general");
        assert!((pred.unwrap().cp(2.0).unwrap() + 1.0).abs() < 1e-12);
        let bad = r#"{"family": "section5", "params": {"k": 3, "m": 2}}"#;
        assert!(matches!(
            SpecDocument::from_str(bad).unwrap().build(),
            Err(OperatorError::CatalogConstraint(_))
        ));
    }

    #[test]
    fn errors_name_the_field() {
        let doc = OU_EXPR.replace("\"-x\"", "\"-y\"");
        match SpecDocument::from_str(&doc).unwrap().build() {
            Err(OperatorError::Expression { field, .. }) => assert_eq!(field, "drift[0]"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(SpecDocument::from_str("{\"dim\": 1}"), Err(OperatorError::Document(_))));
    }
}
