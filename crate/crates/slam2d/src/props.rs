//! Named, typed, introspectable property cells and the dynamic property
//! container, plus the JSON-lines codec shared by configs, datasets and
//! graph files.
//!
//! One serialized object per line: `{"class": ..., "id": N, "fields": {...}}`.
//! Nested containers are emitted before the object that references them, so
//! every reference points at an earlier id.

use crate::geometry::{Pose2, PointCloud2};
use nalgebra::Vector2;
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyKind {
    Bool,
    Int,
    Float,
    Str,
    FloatVec,
    Pose2,
    PointCloud2,
    ConfigRef,
    Container,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    FloatVec(Vec<f64>),
    Pose2(Pose2),
    PointCloud2(PointCloud2),
    ConfigRef(u64),
    Container(PropertyContainer),
}

impl PropertyValue {
    pub fn kind(&self) -> PropertyKind {
        match self {
            PropertyValue::Bool(_) => PropertyKind::Bool,
            PropertyValue::Int(_) => PropertyKind::Int,
            PropertyValue::Float(_) => PropertyKind::Float,
            PropertyValue::Str(_) => PropertyKind::Str,
            PropertyValue::FloatVec(_) => PropertyKind::FloatVec,
            PropertyValue::Pose2(_) => PropertyKind::Pose2,
            PropertyValue::PointCloud2(_) => PropertyKind::PointCloud2,
            PropertyValue::ConfigRef(_) => PropertyKind::ConfigRef,
            PropertyValue::Container(_) => PropertyKind::Container,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PropsError {
    #[error("property '{0}' not found")]
    NotFound(String),
    #[error("property '{name}': stored kind {stored:?}, requested {requested:?}")]
    KindMismatch {
        name: String,
        stored: PropertyKind,
        requested: PropertyKind,
    },
    #[error("property '{name}' already exists with kind {stored:?}, refusing {new:?}")]
    DuplicateKindMismatch {
        name: String,
        stored: PropertyKind,
        new: PropertyKind,
    },
    #[error("empty property name")]
    EmptyName,
    #[error("line {0}: malformed JSON object: {1}")]
    Parse(usize, String),
    #[error("line {line}: unknown class '{class}'")]
    UnknownClass { line: usize, class: String },
    #[error("reference to id {0} which is not defined earlier in the file")]
    DanglingReference(u64),
}

/// Ordered, name-keyed property collection. Iteration order is insertion
/// order, which keeps serialization deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PropertyContainer {
    entries: Vec<(String, PropertyValue)>,
}

impl PropertyContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PropertyValue)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Inserts or replaces a value; replacement is only allowed kind-stable.
    pub fn put(&mut self, name: &str, value: PropertyValue) -> Result<(), PropsError> {
        if name.is_empty() {
            return Err(PropsError::EmptyName);
        }
        if let Some((_, existing)) = self.entries.iter_mut().find(|(n, _)| n == name) {
            if existing.kind() != value.kind() {
                return Err(PropsError::DuplicateKindMismatch {
                    name: name.to_string(),
                    stored: existing.kind(),
                    new: value.kind(),
                });
            }
            *existing = value;
            return Ok(());
        }
        self.entries.push((name.to_string(), value));
        debug_assert!(self.names().collect::<std::collections::HashSet<_>>().len() == self.len());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&PropertyValue, PropsError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| PropsError::NotFound(name.to_string()))
    }

    fn get_kind(&self, name: &str, kind: PropertyKind) -> Result<&PropertyValue, PropsError> {
        let v = self.get(name)?;
        if v.kind() != kind {
            return Err(PropsError::KindMismatch {
                name: name.to_string(),
                stored: v.kind(),
                requested: kind,
            });
        }
        Ok(v)
    }

    pub fn get_bool(&self, name: &str) -> Result<bool, PropsError> {
        match self.get_kind(name, PropertyKind::Bool)? {
            PropertyValue::Bool(b) => Ok(*b),
            _ => unreachable!(),
        }
    }

    pub fn get_int(&self, name: &str) -> Result<i64, PropsError> {
        match self.get_kind(name, PropertyKind::Int)? {
            PropertyValue::Int(i) => Ok(*i),
            _ => unreachable!(),
        }
    }

    pub fn get_float(&self, name: &str) -> Result<f64, PropsError> {
        match self.get_kind(name, PropertyKind::Float)? {
            PropertyValue::Float(f) => Ok(*f),
            _ => unreachable!(),
        }
    }

    pub fn get_str(&self, name: &str) -> Result<&str, PropsError> {
        match self.get_kind(name, PropertyKind::Str)? {
            PropertyValue::Str(s) => Ok(s),
            _ => unreachable!(),
        }
    }

    pub fn get_float_vec(&self, name: &str) -> Result<&[f64], PropsError> {
        match self.get_kind(name, PropertyKind::FloatVec)? {
            PropertyValue::FloatVec(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    pub fn get_pose2(&self, name: &str) -> Result<Pose2, PropsError> {
        match self.get_kind(name, PropertyKind::Pose2)? {
            PropertyValue::Pose2(p) => Ok(*p),
            _ => unreachable!(),
        }
    }

    pub fn get_cloud(&self, name: &str) -> Result<&PointCloud2, PropsError> {
        match self.get_kind(name, PropertyKind::PointCloud2)? {
            PropertyValue::PointCloud2(c) => Ok(c),
            _ => unreachable!(),
        }
    }

    pub fn get_config_ref(&self, name: &str) -> Result<u64, PropsError> {
        match self.get_kind(name, PropertyKind::ConfigRef)? {
            PropertyValue::ConfigRef(id) => Ok(*id),
            _ => unreachable!(),
        }
    }

    pub fn get_container(&self, name: &str) -> Result<&PropertyContainer, PropsError> {
        match self.get_kind(name, PropertyKind::Container)? {
            PropertyValue::Container(c) => Ok(c),
            _ => unreachable!(),
        }
    }
}

/// One line of a JSON-lines file.
#[derive(Debug, Clone, PartialEq)]
pub struct SerializedObject {
    pub class_name: String,
    pub id: u64,
    pub fields: Map<String, Value>,
}

impl SerializedObject {
    pub fn to_line(&self) -> String {
        let obj = json!({
            "class": self.class_name,
            "id": self.id,
            "fields": Value::Object(self.fields.clone()),
        });
        serde_json::to_string(&obj).expect("json encoding cannot fail")
    }

    pub fn from_line(line_no: usize, line: &str) -> Result<Self, PropsError> {
        let v: Value = serde_json::from_str(line)
            .map_err(|e| PropsError::Parse(line_no, e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| PropsError::Parse(line_no, "not a JSON object".into()))?;
        let class_name = obj
            .get("class")
            .and_then(Value::as_str)
            .ok_or_else(|| PropsError::Parse(line_no, "missing 'class'".into()))?
            .to_string();
        let id = obj
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| PropsError::Parse(line_no, "missing non-negative 'id'".into()))?;
        let fields = obj
            .get("fields")
            .and_then(Value::as_object)
            .ok_or_else(|| PropsError::Parse(line_no, "missing 'fields' object".into()))?
            .clone();
        Ok(SerializedObject {
            class_name,
            id,
            fields,
        })
    }
}

pub const CONTAINER_CLASS: &str = "PropertyContainer";

/// Encodes a single property value as a JSON field. Nested containers are
/// flattened by the caller and referenced by id.
pub(crate) fn value_to_json(value: &PropertyValue, nested_id: impl FnOnce() -> u64) -> Value {
    match value {
        PropertyValue::Bool(b) => json!(b),
        PropertyValue::Int(i) => json!(i),
        PropertyValue::Float(f) => json!(f),
        PropertyValue::Str(s) => json!(s),
        PropertyValue::FloatVec(v) => json!(v),
        PropertyValue::Pose2(p) => json!({"pose2": [p.x, p.y, p.theta]}),
        PropertyValue::PointCloud2(c) => {
            let points: Vec<Value> = c.points.iter().map(|p| json!([p.x, p.y])).collect();
            let normals: Value = match &c.normals {
                None => Value::Null,
                Some(ns) => Value::Array(
                    ns.iter()
                        .map(|n| match n {
                            None => Value::Null,
                            Some(n) => json!([n.x, n.y]),
                        })
                        .collect(),
                ),
            };
            json!({"cloud": {"points": points, "normals": normals}})
        }
        PropertyValue::ConfigRef(id) => json!({ "ref": id }),
        PropertyValue::Container(_) => json!({"container": nested_id()}),
    }
}

pub(crate) fn emit_container(
    container: &PropertyContainer,
    out: &mut Vec<SerializedObject>,
    next_id: &mut u64,
) -> u64 {
    let mut fields = Map::new();
    for (name, value) in container.iter() {
        let encoded = match value {
            PropertyValue::Container(inner) => {
                let id = emit_container(inner, out, next_id);
                json!({"container": id})
            }
            other => value_to_json(other, || unreachable!()),
        };
        fields.insert(name.to_string(), encoded);
    }
    let id = *next_id;
    *next_id += 1;
    out.push(SerializedObject {
        class_name: CONTAINER_CLASS.to_string(),
        id,
        fields,
    });
    id
}

/// JSON-lines text: nested containers first, the root container last.
pub fn serialize_container(container: &PropertyContainer) -> String {
    let mut objects = Vec::new();
    let mut next_id = 0;
    emit_container(container, &mut objects, &mut next_id);
    let mut text = String::new();
    for obj in objects {
        text.push_str(&obj.to_line());
        text.push('\n');
    }
    text
}

pub(crate) fn value_from_json(
    v: &Value,
    defined: &std::collections::BTreeMap<u64, PropertyContainer>,
) -> Result<PropertyValue, PropsError> {
    let bad = |what: &str| PropsError::Parse(0, format!("unsupported field value: {what}"));
    match v {
        Value::Bool(b) => Ok(PropertyValue::Bool(*b)),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                if !n.is_f64() {
                    return Ok(PropertyValue::Int(i));
                }
            }
            Ok(PropertyValue::Float(n.as_f64().ok_or_else(|| bad("number"))?))
        }
        Value::String(s) => Ok(PropertyValue::Str(s.clone())),
        Value::Array(items) => {
            let mut floats = Vec::with_capacity(items.len());
            for item in items {
                floats.push(item.as_f64().ok_or_else(|| bad("non-numeric vector entry"))?);
            }
            Ok(PropertyValue::FloatVec(floats))
        }
        Value::Object(obj) => {
            if let Some(p) = obj.get("pose2") {
                let arr = p.as_array().filter(|a| a.len() == 3).ok_or_else(|| bad("pose2"))?;
                let f = |i: usize| arr[i].as_f64().ok_or_else(|| bad("pose2 component"));
                return Ok(PropertyValue::Pose2(Pose2::new(f(0)?, f(1)?, f(2)?)));
            }
            if let Some(c) = obj.get("cloud") {
                let c = c.as_object().ok_or_else(|| bad("cloud"))?;
                let points_json = c
                    .get("points")
                    .and_then(Value::as_array)
                    .ok_or_else(|| bad("cloud points"))?;
                let mut points = Vec::with_capacity(points_json.len());
                for p in points_json {
                    let a = p.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("point"))?;
                    points.push(Vector2::new(
                        a[0].as_f64().ok_or_else(|| bad("point x"))?,
                        a[1].as_f64().ok_or_else(|| bad("point y"))?,
                    ));
                }
                let normals = match c.get("normals") {
                    None | Some(Value::Null) => None,
                    Some(Value::Array(ns)) => {
                        let mut out = Vec::with_capacity(ns.len());
                        for n in ns {
                            match n {
                                Value::Null => out.push(None),
                                Value::Array(a) if a.len() == 2 => out.push(Some(Vector2::new(
                                    a[0].as_f64().ok_or_else(|| bad("normal x"))?,
                                    a[1].as_f64().ok_or_else(|| bad("normal y"))?,
                                ))),
                                _ => return Err(bad("normal")),
                            }
                        }
                        Some(out)
                    }
                    _ => return Err(bad("normals")),
                };
                return Ok(PropertyValue::PointCloud2(PointCloud2 { points, normals }));
            }
            if let Some(r) = obj.get("ref") {
                return Ok(PropertyValue::ConfigRef(r.as_u64().ok_or_else(|| bad("ref id"))?));
            }
            if let Some(r) = obj.get("container") {
                let id = r.as_u64().ok_or_else(|| bad("container id"))?;
                let inner = defined.get(&id).ok_or(PropsError::DanglingReference(id))?;
                return Ok(PropertyValue::Container(inner.clone()));
            }
            Err(bad("object with no recognized tag"))
        }
        Value::Null => Err(bad("null")),
    }
}

pub fn container_from_fields(
    fields: &Map<String, Value>,
    defined: &std::collections::BTreeMap<u64, PropertyContainer>,
) -> Result<PropertyContainer, PropsError> {
    let mut container = PropertyContainer::new();
    for (name, v) in fields {
        container.put(name, value_from_json(v, defined)?)?;
    }
    Ok(container)
}

/// Inverse of [`serialize_container`]: parses JSON-lines and returns the
/// container described by the last line.
pub fn deserialize_container(text: &str) -> Result<PropertyContainer, PropsError> {
    let mut defined = std::collections::BTreeMap::new();
    let mut last = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj = SerializedObject::from_line(i + 1, line)?;
        if obj.class_name != CONTAINER_CLASS {
            return Err(PropsError::UnknownClass {
                line: i + 1,
                class: obj.class_name,
            });
        }
        let container = container_from_fields(&obj.fields, &defined)?;
        defined.insert(obj.id, container.clone());
        last = Some(container);
    }
    last.ok_or_else(|| PropsError::Parse(0, "empty input".into()))
}
