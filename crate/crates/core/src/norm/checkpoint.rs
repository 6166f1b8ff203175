//! Flat JSON checkpoints for normalization state.
//!
//! Floating-point fields are written with 17 significant digits, which is
//! enough for `f64` to survive a decimal round trip bit-exactly.

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mixture::Affine;
use super::{BnState, UanMode, UanState};

struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        debug_assert!(value.is_finite());
        write!(writer, "{value:.16e}")
    }
}

/// Serializes any value to JSON with 17-significant-digit floats.
pub fn to_json_17<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UanJson {
    k: usize,
    d: usize,
    weight_logits: Vec<f64>,
    means: Vec<Vec<f64>>,
    log_vars: Vec<Vec<f64>>,
    mode: String,
    momentum: f64,
    epsilon: f64,
    gamma: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BnJson {
    d: usize,
    momentum: f64,
    epsilon: f64,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl UanState {
    pub fn to_json(&self) -> String {
        let d = self.dim();
        let rows = |flat: &[f64]| flat.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let doc = UanJson {
            k: self.k(),
            d,
            weight_logits: self.weight_logits.clone(),
            means: rows(&self.means),
            log_vars: rows(&self.log_vars),
            mode: match self.mode {
                UanMode::Weight => "weight".into(),
                UanMode::MovingAverage => "moving_average".into(),
            },
            momentum: self.momentum,
            epsilon: self.epsilon,
            gamma: self.affine.as_ref().map(|a| a.gamma.clone()),
            beta: self.affine.as_ref().map(|a| a.beta.clone()),
        };
        to_json_17(&doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: UanJson = serde_json::from_str(text)?;
        let flat = |rows: Vec<Vec<f64>>| rows.into_iter().flatten().collect::<Vec<f64>>();
        let mut state = UanState::new(
            doc.k,
            doc.d,
            doc.weight_logits,
            flat(doc.means),
            flat(doc.log_vars),
        )?;
        state.mode = match doc.mode.as_str() {
            "weight" => UanMode::Weight,
            "moving_average" => UanMode::MovingAverage,
            other => return Err(Error::InvalidParams(format!("unknown mode {other:?}"))),
        };
        state.momentum = doc.momentum;
        state.epsilon = doc.epsilon;
        state.affine = match (doc.gamma, doc.beta) {
            (Some(gamma), Some(beta)) => {
                if gamma.len() != doc.d || beta.len() != doc.d {
                    return Err(Error::InvalidParams("affine length mismatch".into()));
                }
                Some(Affine { gamma, beta })
            }
            (None, None) => None,
            _ => return Err(Error::InvalidParams("gamma/beta must come together".into())),
        };
        Ok(state)
    }
}

impl BnState {
    pub fn to_json(&self) -> String {
        let doc = BnJson {
            d: self.channels(),
            momentum: self.momentum,
            epsilon: self.epsilon,
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
        };
        to_json_17(&doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BnJson = serde_json::from_str(text)?;
        for field in [&doc.gamma, &doc.beta, &doc.running_mean, &doc.running_var] {
            if field.len() != doc.d {
                return Err(Error::InvalidParams("channel count mismatch".into()));
            }
        }
        let mut state = BnState::new(doc.d);
        state.momentum = doc.momentum;
        state.epsilon = doc.epsilon;
        state.gamma = doc.gamma;
        state.beta = doc.beta;
        state.running_mean = doc.running_mean;
        state.running_var = doc.running_var;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::uan_init;

    #[test]
    fn uan_round_trip_is_bit_exact() {
        let mut state = uan_init(3, 5, 42).with_mode(UanMode::MovingAverage).with_momentum(0.97);
        state.means[2] = 1.0 / 3.0;
        state.log_vars[7] = -0.123456789123456789;
        let text = state.to_json();
        let back = UanState::from_json(&text).unwrap();
        assert_eq!(state, back);
        // Serializing again reproduces the identical document.
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn uan_with_affine_round_trips() {
        let state = uan_init(2, 3, 7).with_affine();
        let back = UanState::from_json(&state.to_json()).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn bn_round_trip_is_bit_exact() {
        let mut state = BnState::new(4).with_momentum(0.2).with_epsilon(1e-3);
        state.running_mean = vec![0.1, -0.25, 1.0 / 7.0, 3.7e-13];
        state.running_var = vec![1.5, 0.9, 2.0 / 3.0, 1.0 + 1e-15];
        state.gamma[1] = -0.75;
        state.beta[3] = 12.125;
        let text = state.to_json();
        let back = BnState::from_json(&text).unwrap();
        assert_eq!(state, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"d":1,"momentum":0.1,"epsilon":1e-5,"gamma":[1.0],"beta":[0.0],
                       "running_mean":[0.0],"running_var":[1.0],"extra":3}"#;
        assert!(BnState::from_json(text).is_err());
    }

    #[test]
    fn field_names_are_stable() {
        let text = uan_init(2, 2, 0).to_json();
        for field in
            ["\"k\":", "\"d\":", "\"weight_logits\":", "\"means\":", "\"log_vars\":", "\"mode\":", "\"momentum\":", "\"epsilon\":", "\"gamma\":", "\"beta\":"]
        {
            assert!(text.contains(field), "missing {field} in {text}");
        }
    }
}
