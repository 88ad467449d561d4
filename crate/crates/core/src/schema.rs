//! Versioned node and link schemas.
//!
//! Every schema is identified by a `(name, version)` tag. A new version of a
//! node type may inherit from an older version of the same name, adding
//! fields and link slots without touching data that was written against the
//! older version. The registry is append-only: once a tag is declared its
//! effective shape never changes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{Value, ValueKind};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SchemaTag {
    pub name: String,
    /// Ordinal starting at 1.
    pub version: u32,
}

impl SchemaTag {
    pub fn new(name: impl Into<String>, version: u32) -> Self {
        Self { name: name.into(), version }
    }
}

impl fmt::Display for SchemaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

impl FromStr for SchemaTag {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, version) = s.split_once('@').ok_or_else(|| SchemaError::BadTag(s.to_string()))?;
        let version =
            version.trim_start_matches(['V', 'v']).parse::<u32>().map_err(|_| SchemaError::BadTag(s.to_string()))?;
        if name.is_empty() || version == 0 {
            return Err(SchemaError::BadTag(s.to_string()));
        }
        Ok(SchemaTag::new(name, version))
    }
}

impl Serialize for SchemaTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SchemaTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDecl {
    pub name: String,
    pub kind: ValueKind,
}

impl FieldDecl {
    pub fn new(name: impl Into<String>, kind: ValueKind) -> Self {
        Self { name: name.into(), kind }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSlot {
    pub slot: String,
    pub target: SchemaTag,
}

impl LinkSlot {
    pub fn new(slot: impl Into<String>, target: SchemaTag) -> Self {
        Self { slot: slot.into(), target }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSchema {
    pub tag: SchemaTag,
    pub fields: Vec<FieldDecl>,
    pub parent: Option<SchemaTag>,
    pub link_slots: Vec<LinkSlot>,
}

impl NodeSchema {
    pub fn new(tag: SchemaTag) -> Self {
        Self { tag, fields: Vec::new(), parent: None, link_slots: Vec::new() }
    }

    pub fn field(mut self, name: &str, kind: ValueKind) -> Self {
        self.fields.push(FieldDecl::new(name, kind));
        self
    }

    pub fn parent(mut self, parent: SchemaTag) -> Self {
        self.parent = Some(parent);
        self
    }

    pub fn link(mut self, slot: &str, target: SchemaTag) -> Self {
        self.link_slots.push(LinkSlot::new(slot, target));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkSchema {
    pub tag: SchemaTag,
    pub source: SchemaTag,
    pub target: SchemaTag,
    pub fields: Vec<FieldDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchemaDecl {
    Node(NodeSchema),
    Link(LinkSchema),
}

impl SchemaDecl {
    pub fn tag(&self) -> &SchemaTag {
        match self {
            SchemaDecl::Node(n) => &n.tag,
            SchemaDecl::Link(l) => &l.tag,
        }
    }
}

/// Flattened view of a schema: inherited fields first, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EffectiveSchema {
    pub tag: SchemaTag,
    pub fields: Vec<FieldDecl>,
    pub link_slots: Vec<LinkSlot>,
    /// `(source, target)` for link schemas.
    pub endpoints: Option<(SchemaTag, SchemaTag)>,
}

impl EffectiveSchema {
    pub fn field_kind(&self, name: &str) -> Option<ValueKind> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.kind)
    }

    pub fn slot(&self, slot: &str) -> Option<&LinkSlot> {
        self.link_slots.iter().find(|s| s.slot == slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    MissingField(String),
    ExtraField(String),
    KindMismatch { field: String, expected: ValueKind, found: ValueKind },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingField(n) => write!(f, "missing field {n:?}"),
            Violation::ExtraField(n) => write!(f, "extra field {n:?}"),
            Violation::KindMismatch { field, expected, found } => {
                write!(f, "field {field:?} expects {expected}, got {found}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("DuplicateTag: {0} is already declared")]
    DuplicateTag(SchemaTag),
    #[error("UnknownParent: parent {parent} of {tag} is not declared")]
    UnknownParent { tag: SchemaTag, parent: SchemaTag },
    #[error("NonContiguousVersion: {tag} declared but next version of {} is {expected}", tag.name)]
    NonContiguousVersion { tag: SchemaTag, expected: u32 },
    #[error("CyclicInheritance: {tag} cannot inherit from {parent}")]
    CyclicInheritance { tag: SchemaTag, parent: SchemaTag },
    #[error("ParentNameMismatch: {tag} cannot inherit from differently named {parent}")]
    ParentNameMismatch { tag: SchemaTag, parent: SchemaTag },
    #[error("DuplicateField: {name:?} appears twice in the inheritance chain of {tag}")]
    DuplicateField { tag: SchemaTag, name: String },
    #[error("UnknownLinkTarget: {tag} links to undeclared {target}")]
    UnknownLinkTarget { tag: SchemaTag, target: SchemaTag },
    #[error("UnknownTag: {0} is not declared")]
    UnknownTag(SchemaTag),
    #[error("NotANodeSchema: {0} is a link schema")]
    NotANodeSchema(SchemaTag),
    #[error("BadTag: {0:?} is not a `name@version` literal")]
    BadTag(String),
    #[error("BadDeclaration: {0}")]
    BadDeclaration(String),
}

/// Append-only registry of schema declarations.
#[derive(Clone, Debug, Default)]
pub struct SchemaRegistry {
    // Index `i` of each vector holds version `i + 1`.
    by_name: BTreeMap<String, Vec<SchemaDecl>>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, tag: &SchemaTag) -> Option<&SchemaDecl> {
        let idx = usize::try_from(tag.version).ok()?.checked_sub(1)?;
        self.by_name.get(&tag.name)?.get(idx)
    }

    pub fn contains(&self, tag: &SchemaTag) -> bool {
        self.get(tag).is_some()
    }

    pub fn declare(&mut self, decl: SchemaDecl) -> Result<SchemaTag, SchemaError> {
        match decl {
            SchemaDecl::Node(n) => self.declare_node_schema(n),
            SchemaDecl::Link(l) => self.declare_link_schema(l),
        }
    }

    fn check_tag(&self, tag: &SchemaTag) -> Result<(), SchemaError> {
        if self.contains(tag) {
            return Err(SchemaError::DuplicateTag(tag.clone()));
        }
        let expected = self.by_name.get(&tag.name).map_or(0, Vec::len) as u32 + 1;
        if tag.version != expected {
            return Err(SchemaError::NonContiguousVersion { tag: tag.clone(), expected });
        }
        Ok(())
    }

    pub fn declare_node_schema(&mut self, decl: NodeSchema) -> Result<SchemaTag, SchemaError> {
        let tag = decl.tag.clone();
        self.check_tag(&tag)?;

        let mut seen_fields = BTreeSet::new();
        let mut seen_slots = BTreeSet::new();
        if let Some(parent) = &decl.parent {
            if parent.name != tag.name {
                return Err(SchemaError::ParentNameMismatch { tag, parent: parent.clone() });
            }
            if parent.version >= tag.version {
                return Err(SchemaError::CyclicInheritance { tag, parent: parent.clone() });
            }
            let inherited = match self.get(parent) {
                Some(SchemaDecl::Node(_)) => self.resolve_effective(parent)?,
                Some(SchemaDecl::Link(_)) => return Err(SchemaError::NotANodeSchema(parent.clone())),
                None => return Err(SchemaError::UnknownParent { tag, parent: parent.clone() }),
            };
            seen_fields.extend(inherited.fields.into_iter().map(|f| f.name));
            seen_slots.extend(inherited.link_slots.into_iter().map(|s| s.slot));
        }
        for field in &decl.fields {
            if !seen_fields.insert(field.name.clone()) {
                return Err(SchemaError::DuplicateField { tag, name: field.name.clone() });
            }
        }
        for slot in &decl.link_slots {
            if !seen_slots.insert(slot.slot.clone()) {
                return Err(SchemaError::DuplicateField { tag, name: slot.slot.clone() });
            }
            // Self-reference is allowed: papers cite papers.
            if slot.target != tag && !self.contains(&slot.target) {
                return Err(SchemaError::UnknownLinkTarget { tag, target: slot.target.clone() });
            }
        }

        self.by_name.entry(tag.name.clone()).or_default().push(SchemaDecl::Node(decl));
        Ok(tag)
    }

    pub fn declare_link_schema(&mut self, decl: LinkSchema) -> Result<SchemaTag, SchemaError> {
        let tag = decl.tag.clone();
        self.check_tag(&tag)?;
        for endpoint in [&decl.source, &decl.target] {
            if !self.contains(endpoint) {
                return Err(SchemaError::UnknownLinkTarget { tag, target: endpoint.clone() });
            }
        }
        let mut seen = BTreeSet::new();
        for field in &decl.fields {
            if !seen.insert(&field.name) {
                return Err(SchemaError::DuplicateField { tag, name: field.name.clone() });
            }
        }
        self.by_name.entry(tag.name.clone()).or_default().push(SchemaDecl::Link(decl));
        Ok(tag)
    }

    /// Flattens the inheritance chain of `tag`, ancestors first.
    pub fn resolve_effective(&self, tag: &SchemaTag) -> Result<EffectiveSchema, SchemaError> {
        match self.get(tag) {
            None => Err(SchemaError::UnknownTag(tag.clone())),
            Some(SchemaDecl::Link(l)) => Ok(EffectiveSchema {
                tag: tag.clone(),
                fields: l.fields.clone(),
                link_slots: Vec::new(),
                endpoints: Some((l.source.clone(), l.target.clone())),
            }),
            Some(SchemaDecl::Node(_)) => {
                let mut chain = Vec::new();
                let mut cursor = Some(tag);
                while let Some(t) = cursor {
                    let Some(SchemaDecl::Node(n)) = self.get(t) else {
                        return Err(SchemaError::UnknownTag(t.clone()));
                    };
                    chain.push(n);
                    cursor = n.parent.as_ref();
                }
                let mut fields = Vec::new();
                let mut link_slots = Vec::new();
                for n in chain.iter().rev() {
                    fields.extend(n.fields.iter().cloned());
                    link_slots.extend(n.link_slots.iter().cloned());
                }
                Ok(EffectiveSchema { tag: tag.clone(), fields, link_slots, endpoints: None })
            }
        }
    }

    /// Checks that `payload` supplies exactly the effective fields of `tag`
    /// with matching kinds. An empty result means the payload is valid.
    pub fn validate_payload(
        &self,
        tag: &SchemaTag,
        payload: &BTreeMap<String, Value>,
    ) -> Result<Vec<Violation>, SchemaError> {
        let schema = self.resolve_effective(tag)?;
        let mut out = Vec::new();
        for field in &schema.fields {
            match payload.get(&field.name) {
                None => out.push(Violation::MissingField(field.name.clone())),
                Some(v) if v.kind() != field.kind => out.push(Violation::KindMismatch {
                    field: field.name.clone(),
                    expected: field.kind,
                    found: v.kind(),
                }),
                Some(_) => {}
            }
        }
        for name in payload.keys() {
            if schema.field_kind(name).is_none() {
                out.push(Violation::ExtraField(name.clone()));
            }
        }
        Ok(out)
    }

    /// Like [`validate_payload`](Self::validate_payload) but for partial
    /// updates: absent fields are fine, unknown or mistyped ones are not.
    pub fn validate_partial(
        &self,
        tag: &SchemaTag,
        payload: &BTreeMap<String, Value>,
    ) -> Result<Vec<Violation>, SchemaError> {
        let schema = self.resolve_effective(tag)?;
        let mut out = Vec::new();
        for (name, v) in payload {
            match schema.field_kind(name) {
                None => out.push(Violation::ExtraField(name.clone())),
                Some(kind) if kind != v.kind() => {
                    out.push(Violation::KindMismatch { field: name.clone(), expected: kind, found: v.kind() })
                }
                Some(_) => {}
            }
        }
        Ok(out)
    }

    /// All declared versions of `name`, ascending.
    pub fn versions_of(&self, name: &str) -> Vec<SchemaTag> {
        self.by_name.get(name).map(|v| v.iter().map(|d| d.tag().clone()).collect()).unwrap_or_default()
    }

    pub fn tags(&self) -> impl Iterator<Item = &SchemaTag> {
        self.by_name.values().flatten().map(SchemaDecl::tag)
    }
}

/// One line of a schema declaration file.
///
/// ```json
/// {"kind":"node","name":"author","version":2,"parent":1,"fields":[],"links":[{"slot":"belongs_to","target":"school@1"}]}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaLine {
    pub kind: DeclKind,
    pub name: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<u32>,
    #[serde(default)]
    pub fields: Vec<FieldDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SchemaTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SchemaTag>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclKind {
    Node,
    Link,
}

impl TryFrom<SchemaLine> for SchemaDecl {
    type Error = SchemaError;

    fn try_from(line: SchemaLine) -> Result<Self, Self::Error> {
        let tag = SchemaTag::new(line.name.clone(), line.version);
        match line.kind {
            DeclKind::Node => Ok(SchemaDecl::Node(NodeSchema {
                parent: line.parent.map(|p| SchemaTag::new(line.name.clone(), p)),
                tag,
                fields: line.fields,
                link_slots: line.links,
            })),
            DeclKind::Link => {
                let (Some(source), Some(target)) = (line.source, line.target) else {
                    return Err(SchemaError::BadDeclaration(format!("link schema {tag} needs `source` and `target`")));
                };
                Ok(SchemaDecl::Link(LinkSchema { tag, source, target, fields: line.fields }))
            }
        }
    }
}

impl From<&SchemaDecl> for SchemaLine {
    fn from(decl: &SchemaDecl) -> Self {
        match decl {
            SchemaDecl::Node(n) => SchemaLine {
                kind: DeclKind::Node,
                name: n.tag.name.clone(),
                version: n.tag.version,
                parent: n.parent.as_ref().map(|p| p.version),
                fields: n.fields.clone(),
                links: n.link_slots.clone(),
                source: None,
                target: None,
            },
            SchemaDecl::Link(l) => SchemaLine {
                kind: DeclKind::Link,
                name: l.tag.name.clone(),
                version: l.tag.version,
                parent: None,
                fields: l.fields.clone(),
                links: Vec::new(),
                source: Some(l.source.clone()),
                target: Some(l.target.clone()),
            },
        }
    }
}

/// Loads a JSON-lines schema declaration file into `registry`.
pub fn load_declarations(registry: &mut SchemaRegistry, text: &str) -> Result<Vec<SchemaTag>, SchemaError> {
    let mut tags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SchemaLine =
            serde_json::from_str(line).map_err(|e| SchemaError::BadDeclaration(format!("line {}: {e}", i + 1)))?;
        tags.push(registry.declare(parsed.try_into()?)?);
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ValueKind::*;

    fn tag(s: &str) -> SchemaTag {
        s.parse().unwrap()
    }

    fn citation_registry() -> SchemaRegistry {
        let mut r = SchemaRegistry::new();
        r.declare_node_schema(NodeSchema::new(tag("author@1")).field("name", String)).unwrap();
        r.declare_node_schema(NodeSchema::new(tag("school@1")).field("name", String)).unwrap();
        r.declare_node_schema(
            NodeSchema::new(tag("author@2")).parent(tag("author@1")).link("belongs_to", tag("school@1")),
        )
        .unwrap();
        r
    }

    fn payload(pairs: &[(&str, Value)]) -> BTreeMap<std::string::String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn declares_and_inherits() {
        let r = citation_registry();
        let eff = r.resolve_effective(&tag("author@2")).unwrap();
        assert_eq!(eff.fields, vec![FieldDecl::new("name", String)]);
        assert_eq!(eff.link_slots, vec![LinkSlot::new("belongs_to", tag("school@1"))]);
        assert_eq!(r.versions_of("author"), vec![tag("author@1"), tag("author@2")]);
        assert_eq!(r.versions_of("school"), vec![tag("school@1")]);
        assert!(r.versions_of("nobody").is_empty());
    }

    #[test]
    fn root_schema_resolves_to_its_own_fields() {
        let r = citation_registry();
        let eff = r.resolve_effective(&tag("school@1")).unwrap();
        assert_eq!(eff.fields, vec![FieldDecl::new("name", String)]);
        assert!(eff.link_slots.is_empty());
        assert_eq!(r.resolve_effective(&tag("ghost@1")), Err(SchemaError::UnknownTag(tag("ghost@1"))));
    }

    #[test]
    fn contiguity_and_skipping_parents() {
        let mut r = citation_registry();
        let v3 = r.declare_node_schema(NodeSchema::new(tag("author@3")).parent(tag("author@1"))).unwrap();
        assert_eq!(v3, tag("author@3"));
        let err = r.declare_node_schema(NodeSchema::new(tag("author@5"))).unwrap_err();
        assert_eq!(err, SchemaError::NonContiguousVersion { tag: tag("author@5"), expected: 4 });
    }

    #[test]
    fn declaration_errors() {
        let mut r = citation_registry();
        assert_eq!(
            r.declare_node_schema(NodeSchema::new(tag("author@1"))),
            Err(SchemaError::DuplicateTag(tag("author@1")))
        );
        assert!(matches!(
            r.declare_node_schema(NodeSchema::new(tag("author@3")).parent(tag("author@2")).field("name", Integer)),
            Err(SchemaError::DuplicateField { .. })
        ));
        assert!(matches!(
            r.declare_node_schema(NodeSchema::new(tag("author@3")).parent(tag("author@3"))),
            Err(SchemaError::CyclicInheritance { .. })
        ));
        assert!(matches!(
            r.declare_node_schema(NodeSchema::new(tag("author@3")).parent(tag("school@1"))),
            Err(SchemaError::ParentNameMismatch { .. })
        ));
        assert!(matches!(
            r.declare_node_schema(NodeSchema::new(tag("paper@1")).link("in", tag("venue@1"))),
            Err(SchemaError::UnknownLinkTarget { .. })
        ));
        // Failed declarations leave no trace.
        assert_eq!(r.versions_of("author").len(), 2);
        assert!(r.versions_of("paper").is_empty());
    }

    #[test]
    fn self_referencing_link_slot() {
        let mut r = SchemaRegistry::new();
        r.declare_node_schema(NodeSchema::new(tag("paper@1")).field("title", String).link("cites", tag("paper@1")))
            .unwrap();
        assert_eq!(r.resolve_effective(&tag("paper@1")).unwrap().link_slots.len(), 1);
    }

    #[test]
    fn link_schemas_need_declared_endpoints() {
        let mut r = citation_registry();
        let link = LinkSchema {
            tag: tag("member@1"),
            source: tag("author@2"),
            target: tag("school@1"),
            fields: vec![FieldDecl::new("since", Integer)],
        };
        r.declare_link_schema(link.clone()).unwrap();
        let eff = r.resolve_effective(&tag("member@1")).unwrap();
        assert_eq!(eff.endpoints, Some((tag("author@2"), tag("school@1"))));
        let bad = LinkSchema { tag: tag("x@1"), target: tag("venue@1"), ..link };
        assert!(matches!(r.declare_link_schema(bad), Err(SchemaError::UnknownLinkTarget { .. })));
    }

    #[test]
    fn payload_validation() {
        let r = citation_registry();
        let ok = r.validate_payload(&tag("author@1"), &payload(&[("name", "Ada".into())])).unwrap();
        assert!(ok.is_empty());
        let missing = r.validate_payload(&tag("author@1"), &payload(&[])).unwrap();
        assert_eq!(missing, vec![Violation::MissingField("name".into())]);
        let extra =
            r.validate_payload(&tag("author@2"), &payload(&[("name", "Ada".into()), ("age", 3.into())])).unwrap();
        assert_eq!(extra, vec![Violation::ExtraField("age".into())]);
        let kind = r.validate_payload(&tag("author@1"), &payload(&[("name", 3.into())])).unwrap();
        assert!(matches!(kind[0], Violation::KindMismatch { .. }));
        let partial = r.validate_partial(&tag("author@2"), &payload(&[])).unwrap();
        assert!(partial.is_empty());
    }

    #[test]
    fn json_lines_declarations() {
        let text = r#"
{"kind":"node","name":"school","version":1,"fields":[{"name":"name","kind":"string"}]}
{"kind":"node","name":"author","version":1,"fields":[{"name":"name","kind":"string"}]}
{"kind":"node","name":"author","version":2,"parent":1,"fields":[],"links":[{"slot":"belongs_to","target":"school@1"}]}
"#;
        let mut r = SchemaRegistry::new();
        let tags = load_declarations(&mut r, text).unwrap();
        assert_eq!(tags, vec![tag("school@1"), tag("author@1"), tag("author@2")]);
        let line = SchemaLine::from(r.get(&tag("author@2")).unwrap());
        assert_eq!(line.parent, Some(1));
        assert_eq!(
            serde_json::to_string(&line).unwrap(),
            r#"{"kind":"node","name":"author","version":2,"parent":1,"fields":[],"links":[{"slot":"belongs_to","target":"school@1"}]}"#
        );
    }
}
