//! Wire and storage encoding: JSON inside a small versioned envelope.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported format version {0}")]
    UnsupportedFormat(u32),
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    format: u32,
    body: &'a T,
}

#[derive(Deserialize)]
struct Envelope<T> {
    format: u32,
    body: T,
}

#[derive(Deserialize)]
struct Header {
    format: u32,
}

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(&EnvelopeRef {
        format: FORMAT_VERSION,
        body: value,
    })
    .expect("in-memory JSON serialization does not fail")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    match serde_json::from_slice::<Envelope<T>>(bytes) {
        Ok(env) if env.format == FORMAT_VERSION => Ok(env.body),
        Ok(env) => Err(CodecError::UnsupportedFormat(env.format)),
        Err(e) => match serde_json::from_slice::<Header>(bytes) {
            Ok(h) if h.format != FORMAT_VERSION => Err(CodecError::UnsupportedFormat(h.format)),
            _ => Err(CodecError::Malformed(e.to_string())),
        },
    }
}
