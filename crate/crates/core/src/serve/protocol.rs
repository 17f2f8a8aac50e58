use serde::{Deserialize, Serialize};

/// Client to server messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Predict {
        id: u64,
        obs: Vec<f64>,
        instruction: String,
    },
    Info,
    Reset,
}

/// Server to client messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Action {
        id: u64,
        action: Vec<f64>,
        tokens: Vec<u32>,
        latency_us: u64,
    },
    Info {
        n_dims: usize,
        decode_mode: String,
        profile: String,
    },
    Reset {
        ok: bool,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Request {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("requests always serialize")
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(payload)
    }
}

impl Response {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("responses always serialize")
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(payload)
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self::Error {
            id,
            message: message.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_payloads() {
        assert_eq!(Request::Info.to_bytes(), br#"{"type":"info"}"#);
        assert_eq!(Request::Reset.to_bytes(), br#"{"type":"reset"}"#);
        let p = Request::Predict {
            id: 7,
            obs: vec![0.5, -1.0],
            instruction: "pick".into(),
        };
        assert_eq!(
            String::from_utf8(p.to_bytes()).unwrap(),
            r#"{"type":"predict","id":7,"obs":[0.5,-1.0],"instruction":"pick"}"#
        );
        let a = Response::Action {
            id: 7,
            action: vec![0.0],
            tokens: vec![31872],
            latency_us: 12,
        };
        assert_eq!(
            String::from_utf8(a.to_bytes()).unwrap(),
            r#"{"type":"action","id":7,"action":[0.0],"tokens":[31872],"latency_us":12}"#
        );
        assert_eq!(
            String::from_utf8(Response::error(None, "bad").to_bytes()).unwrap(),
            r#"{"type":"error","message":"bad"}"#
        );
    }

    #[test]
    fn rejects_untyped_and_unknown() {
        assert!(Request::from_bytes(br#"{"id":1}"#).is_err());
        assert!(Request::from_bytes(br#"{"type":"launch"}"#).is_err());
        assert!(Request::from_bytes(b"not json").is_err());
    }

    #[test]
    fn floats_roundtrip_exactly() {
        let obs = vec![0.1, 1.0 / 3.0, -2.5e-308, f64::MAX, 5e-324];
        let r = Request::Predict {
            id: 1,
            obs: obs.clone(),
            instruction: String::new(),
        };
        match Request::from_bytes(&r.to_bytes()).unwrap() {
            Request::Predict { obs: back, .. } => {
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&back), bits(&obs));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
