use serde::de::{DeserializeOwned, Error as _};
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

use super::family::{
    BlackScholesParams, Family, HestonParams, MprParams, TabulatedCoefficients, VasicekParams,
};
use super::{DiffusionModel, RegimeModel};

/// Parameter records as they appear on disk: family parameters plus `R`
/// and an optional `rho` (default 0).
#[derive(Clone, Debug, PartialEq)]
pub struct WithPreferences<P> {
    pub risk_aversion: f64,
    pub rho: f64,
    pub params: P,
}

impl<'de, P: DeserializeOwned> Deserialize<'de> for WithPreferences<P> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let mut map = Map::<String, Value>::deserialize(de)?;
        let number = |key: &str, v: Value| {
            f64::deserialize(v).map_err(|e| D::Error::custom(format!("field `{key}`: {e}")))
        };
        let risk_aversion = match map.remove("R") {
            Some(v) => number("R", v)?,
            None => return Err(D::Error::missing_field("R")),
        };
        let rho = match map.remove("rho") {
            Some(v) => number("rho", v)?,
            None => 0.0,
        };
        let params = P::deserialize(Value::Object(map)).map_err(D::Error::custom)?;
        Ok(WithPreferences { risk_aversion, rho, params })
    }
}

impl<P: Serialize> Serialize for WithPreferences<P> {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut value = serde_json::to_value(&self.params).map_err(S::Error::custom)?;
        let map = value.as_object_mut().ok_or_else(|| S::Error::custom("params not a map"))?;
        map.insert("R".into(), self.risk_aversion.into());
        map.insert("rho".into(), self.rho.into());
        value.serialize(ser)
    }
}

/// On-disk model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFile {
    Regime {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        r: Vec<f64>,
        lambda: Vec<f64>,
        sigma: Vec<f64>,
        delta: Vec<f64>,
        #[serde(rename = "R")]
        risk_aversion: f64,
    },
    BlackScholes { params: WithPreferences<BlackScholesParams> },
    Mpr { params: WithPreferences<MprParams> },
    Heston { params: WithPreferences<HestonParams> },
    Vasicek { params: WithPreferences<VasicekParams> },
    Tabulated {
        y: Vec<f64>,
        r: Vec<f64>,
        lambda: Vec<f64>,
        sigma: Vec<f64>,
        delta: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        rho: f64,
        #[serde(rename = "R")]
        risk_aversion: f64,
    },
}

/// Either kind of market model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Regime(RegimeModel),
    Diffusion(DiffusionModel),
}

impl Model {
    pub fn from_json_str(text: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidModel(format!("malformed model JSON: {e}")))?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<Model> {
        fn diffusion(family: Family, big_r: f64, rho: f64) -> Result<Model> {
            DiffusionModel::new(family, big_r, rho).map(Model::Diffusion)
        }
        match self {
            ModelFile::Regime { q, r, lambda, sigma, delta, risk_aversion } => {
                let q = DenseMatrix::from_rows(q)
                    .map_err(|e| Error::InvalidModel(format!("`Q`: {e}")))?;
                RegimeModel::new(q, r, lambda, sigma, delta, risk_aversion).map(Model::Regime)
            }
            ModelFile::BlackScholes { params: p } => {
                diffusion(Family::BlackScholes(p.params), p.risk_aversion, p.rho)
            }
            ModelFile::Mpr { params: p } => diffusion(Family::Mpr(p.params), p.risk_aversion, p.rho),
            ModelFile::Heston { params: p } => {
                diffusion(Family::Heston(p.params), p.risk_aversion, p.rho)
            }
            ModelFile::Vasicek { params: p } => {
                diffusion(Family::Vasicek(p.params), p.risk_aversion, p.rho)
            }
            ModelFile::Tabulated { y, r, lambda, sigma, delta, a, b, rho, risk_aversion } => {
                let table = TabulatedCoefficients { y, r, lambda, sigma, delta, a, b };
                diffusion(Family::Tabulated(table), risk_aversion, rho)
            }
        }
    }
}

impl From<&Model> for ModelFile {
    fn from(model: &Model) -> Self {
        match model {
            Model::Regime(m) => ModelFile::Regime {
                q: m.generator().rows(),
                r: m.r().to_vec(),
                lambda: m.lambda().to_vec(),
                sigma: m.sigma().to_vec(),
                delta: m.delta().to_vec(),
                risk_aversion: m.risk_aversion(),
            },
            Model::Diffusion(m) => {
                let big_r = m.base_risk_aversion();
                let rho = m.rho();
                fn wrap<P>(params: P, risk_aversion: f64, rho: f64) -> WithPreferences<P> {
                    WithPreferences { risk_aversion, rho, params }
                }
                match m.family().clone() {
                    Family::BlackScholes(p) => ModelFile::BlackScholes { params: wrap(p, big_r, rho) },
                    Family::Mpr(p) => ModelFile::Mpr { params: wrap(p, big_r, rho) },
                    Family::Heston(p) => ModelFile::Heston { params: wrap(p, big_r, rho) },
                    Family::Vasicek(p) => ModelFile::Vasicek { params: wrap(p, big_r, rho) },
                    Family::Tabulated(t) => ModelFile::Tabulated {
                        y: t.y,
                        r: t.r,
                        lambda: t.lambda,
                        sigma: t.sigma,
                        delta: t.delta,
                        a: t.a,
                        b: t.b,
                        rho,
                        risk_aversion: big_r,
                    },
                }
            }
        }
    }
}
