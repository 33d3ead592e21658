//! Serde adapter writing `None` as the string `"N/A"`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const NA: &str = "N/A";

pub fn serialize<T: Serialize, S: Serializer>(value: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => v.serialize(s),
        None => s.serialize_str(NA),
    }
}

pub fn deserialize<'de, T, D>(d: D) -> Result<Option<T>, D::Error>
where
    T: DeserializeOwned,
    D: Deserializer<'de>,
{
    let raw = serde_json::Value::deserialize(d)?;
    if raw.as_str() == Some(NA) {
        return Ok(None);
    }
    T::deserialize(raw).map(Some).map_err(serde::de::Error::custom)
}
