//! Typed field access over decoded JSON objects, shared by both dialects.

use serde_json::{Map, Value};

use super::CodecError;
use crate::frames::Vec3;

/// Borrowed view of a JSON object that reports missing or mistyped keys as
/// `MalformedRecord` at a fixed byte offset.
pub(super) struct Fields<'a> {
    map: &'a Map<String, Value>,
    path: String,
    offset: usize,
}

impl<'a> Fields<'a> {
    pub fn root(value: &'a Value, offset: usize) -> Result<Self, CodecError> {
        match value {
            Value::Object(map) => Ok(Self { map, path: String::new(), offset }),
            _ => Err(CodecError::malformed(offset, "record is not a JSON object")),
        }
    }

    fn err(&self, key: &str, what: &str) -> CodecError {
        CodecError::malformed(self.offset, format!("field `{}{key}` {what}", self.path))
    }

    pub fn get(&self, key: &str) -> Result<&'a Value, CodecError> {
        self.map.get(key).ok_or_else(|| self.err(key, "missing"))
    }

    pub fn object(&self, key: &str) -> Result<Fields<'a>, CodecError> {
        match self.get(key)? {
            Value::Object(map) => Ok(Fields {
                map,
                path: format!("{}{key}.", self.path),
                offset: self.offset,
            }),
            _ => Err(self.err(key, "is not an object")),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, CodecError> {
        self.get(key)?.as_f64().ok_or_else(|| self.err(key, "is not a number"))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CodecError> {
        self.get(key)?.as_u64().ok_or_else(|| self.err(key, "is not an unsigned integer"))
    }

    pub fn u32(&self, key: &str) -> Result<u32, CodecError> {
        let v = self.u64(key)?;
        u32::try_from(v).map_err(|_| self.err(key, "does not fit in 32 bits"))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CodecError> {
        self.get(key)?.as_bool().ok_or_else(|| self.err(key, "is not a boolean"))
    }

    pub fn str(&self, key: &str) -> Result<&'a str, CodecError> {
        self.get(key)?.as_str().ok_or_else(|| self.err(key, "is not a string"))
    }

    pub fn array(&self, key: &str) -> Result<&'a Vec<Value>, CodecError> {
        self.get(key)?.as_array().ok_or_else(|| self.err(key, "is not an array"))
    }

    /// `[x, y, z]`
    pub fn vec3_array(&self, key: &str) -> Result<Vec3, CodecError> {
        let arr = self.array(key)?;
        if arr.len() != 3 {
            return Err(self.err(key, "must have exactly 3 elements"));
        }
        let mut out = [0.0; 3];
        for (slot, v) in out.iter_mut().zip(arr) {
            *slot = v.as_f64().ok_or_else(|| self.err(key, "has a non-numeric element"))?;
        }
        Ok(Vec3::from_array(out))
    }

    /// `{"x":..,"y":..,"z":..}`
    pub fn vec3_object(&self, key: &str) -> Result<Vec3, CodecError> {
        let o = self.object(key)?;
        Ok(Vec3::new(o.f64("x")?, o.f64("y")?, o.f64("z")?))
    }

    pub fn enum_str<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T, CodecError> {
        let s = self.str(key)?;
        parse(s).ok_or_else(|| self.err(key, &format!("has unknown value `{s}`")))
    }

    pub fn element(&self, value: &'a Value, index: usize, key: &str) -> Result<Fields<'a>, CodecError> {
        match value {
            Value::Object(map) => Ok(Fields {
                map,
                path: format!("{}{key}[{index}].", self.path),
                offset: self.offset,
            }),
            _ => Err(self.err(key, "contains a non-object element")),
        }
    }
}

pub(super) fn vec3_to_array(v: Vec3) -> Value {
    Value::Array(vec![v.x.into(), v.y.into(), v.z.into()])
}

pub(super) fn vec3_to_object(v: Vec3) -> Value {
    let mut m = Map::new();
    m.insert("x".into(), v.x.into());
    m.insert("y".into(), v.y.into());
    m.insert("z".into(), v.z.into());
    Value::Object(m)
}

/// Byte offset of a serde_json syntax error inside `text`.
pub(super) fn error_offset(text: &[u8], err: &serde_json::Error, base: usize) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return base + text.len();
    }
    let mut offset = 0;
    for (i, l) in text.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return base + offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    base + text.len()
}

/// Builds a JSON object from key/value pairs; keys end up sorted.
pub(super) fn obj<const N: usize>(pairs: [(&str, Value); N]) -> Value {
    Value::Object(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}
