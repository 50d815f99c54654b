//! Attribute schema, predicates, the full-predicate space, and geographic
//! identifiers.
//!
//! A schema is an ordered list of categorical attributes. A predicate assigns
//! labels to a subset of those attributes; a predicate that fixes every
//! attribute is "full" and identifies one cell of the underlying contingency
//! table. Full predicates are enumerated in a canonical order (lexicographic
//! by attribute position, then by label position within the attribute) so
//! that matrices and serialized outputs are reproducible byte for byte.

use serde::Deserialize;

use crate::error::{Error, Result};

/// Default cap on the number of full predicates.
pub const DEFAULT_SPACE_CAP: usize = 1_000_000;

/// Attribute names that would collide with fixed CSV column headers.
const RESERVED_NAMES: &[&str] = &["person_id", "block", "weight"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    name: String,
    labels: Vec<String>,
}

impl Attribute {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Census geography levels, largest to smallest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GeoLevel {
    County,
    Tract,
    BlockGroup,
    Block,
}

impl GeoLevel {
    pub fn name(self) -> &'static str {
        match self {
            GeoLevel::County => "county",
            GeoLevel::Tract => "tract",
            GeoLevel::BlockGroup => "block_group",
            GeoLevel::Block => "block",
        }
    }

    /// True if `self` strictly contains `other` in the hierarchy.
    pub fn is_ancestor_of(self, other: GeoLevel) -> bool {
        self < other
    }
}

/// Code-prefix lengths for each geography level. Defaults mirror US FIPS
/// codes (5/11/12/15), but any strictly increasing lengths are accepted so
/// toy geographies can use short codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPrefixLengths {
    pub county: usize,
    pub tract: usize,
    pub block_group: usize,
    pub block: usize,
}

impl Default for GeoPrefixLengths {
    fn default() -> Self {
        Self {
            county: 5,
            tract: 11,
            block_group: 12,
            block: 15,
        }
    }
}

impl GeoPrefixLengths {
    pub fn length_of(&self, level: GeoLevel) -> usize {
        match level {
            GeoLevel::County => self.county,
            GeoLevel::Tract => self.tract,
            GeoLevel::BlockGroup => self.block_group,
            GeoLevel::Block => self.block,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.county == 0
            || self.county >= self.tract
            || self.tract >= self.block_group
            || self.block_group >= self.block
        {
            return Err(Error::Schema(format!(
                "geo prefix lengths must be strictly increasing and positive, got \
                 county={} tract={} block_group={} block={}",
                self.county, self.tract, self.block_group, self.block
            )));
        }
        Ok(())
    }
}

/// A geographic identifier: a code string plus the level it names.
///
/// Codes are hierarchically prefixed; the ancestor at a coarser level is the
/// code truncated to that level's configured prefix length.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeoId {
    code: String,
    level: GeoLevel,
}

impl GeoId {
    pub fn new(code: impl Into<String>, level: GeoLevel) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::Geo("empty geography code".into()));
        }
        if code.chars().any(|c| c == ',' || c == '\n' || c == '\r') {
            return Err(Error::Geo(format!(
                "geography code {code:?} contains a comma or line break"
            )));
        }
        Ok(Self { code, level })
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn level(&self) -> GeoLevel {
        self.level
    }
}

impl std::fmt::Display for GeoId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.code)
    }
}

/// Prefix-derived ancestor of `geo` at the requested coarser level.
pub fn geo_parent(geo: &GeoId, level: GeoLevel, lengths: &GeoPrefixLengths) -> Result<GeoId> {
    if !level.is_ancestor_of(geo.level) {
        return Err(Error::Geo(format!(
            "{} is not an ancestor level of {}",
            level.name(),
            geo.level.name()
        )));
    }
    let want = lengths.length_of(level);
    if geo.code.len() < want {
        return Err(Error::Geo(format!(
            "code {:?} is too short for a {} prefix of length {want}",
            geo.code,
            level.name()
        )));
    }
    GeoId::new(&geo.code[..want], level)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    attributes: Vec<AttributeFile>,
    #[serde(default)]
    geo_prefix_lengths: Option<GeoPrefixLengths>,
    #[serde(default)]
    max_predicate_space: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeFile {
    name: String,
    labels: Vec<String>,
}

/// The ordered list of categorical attributes, their domains, and the
/// geography configuration. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    geo: GeoPrefixLengths,
    space_cap: usize,
}

impl AttributeSchema {
    pub fn new(
        attributes: Vec<(String, Vec<String>)>,
        geo: GeoPrefixLengths,
        space_cap: usize,
    ) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema must define at least one attribute".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut built = Vec::with_capacity(attributes.len());
        for (name, labels) in attributes {
            validate_token(&name, "attribute name")?;
            if RESERVED_NAMES.contains(&name.as_str()) {
                return Err(Error::Schema(format!(
                    "attribute name {name:?} is reserved for CSV headers"
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate attribute name {name:?}")));
            }
            if labels.len() < 2 {
                return Err(Error::Schema(format!(
                    "attribute {name:?} needs at least 2 labels, got {}",
                    labels.len()
                )));
            }
            let mut label_seen = std::collections::HashSet::new();
            for label in &labels {
                validate_token(label, "label")?;
                if !label_seen.insert(label.clone()) {
                    return Err(Error::Schema(format!(
                        "duplicate label {label:?} in attribute {name:?}"
                    )));
                }
            }
            built.push(Attribute { name, labels });
        }
        geo.validate()?;
        if space_cap == 0 {
            return Err(Error::Schema("predicate-space cap must be positive".into()));
        }
        let schema = Self {
            attributes: built,
            geo,
            space_cap,
        };
        schema.checked_space_size()?;
        Ok(schema)
    }

    /// Number of attributes (d).
    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn geo(&self) -> &GeoPrefixLengths {
        &self.geo
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn label_index(&self, attr: usize, label: &str) -> Option<usize> {
        self.attributes[attr].labels.iter().position(|l| l == label)
    }

    /// Size of the full-predicate space, verified against the cap.
    pub fn checked_space_size(&self) -> Result<usize> {
        let mut size = 1usize;
        for a in &self.attributes {
            size = size.checked_mul(a.labels.len()).ok_or_else(|| {
                Error::Schema("full-predicate space size overflows".into())
            })?;
            if size > self.space_cap {
                return Err(Error::Schema(format!(
                    "full-predicate space exceeds the cap of {}",
                    self.space_cap
                )));
            }
        }
        Ok(size)
    }
}

fn validate_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Schema(format!("empty {what}")));
    }
    if s.chars()
        .any(|c| matches!(c, ',' | ';' | '=' | '\n' | '\r'))
    {
        return Err(Error::Schema(format!(
            "{what} {s:?} contains a character reserved by the file formats (, ; = or line break)"
        )));
    }
    Ok(())
}

/// Parse and validate a JSON schema file.
pub fn parse_schema(text: &str) -> Result<AttributeSchema> {
    let file: SchemaFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("schema file: {e}")))?;
    AttributeSchema::new(
        file.attributes
            .into_iter()
            .map(|a| (a.name, a.labels))
            .collect(),
        file.geo_prefix_lengths.unwrap_or_default(),
        file.max_predicate_space.unwrap_or(DEFAULT_SPACE_CAP),
    )
}

/// A partial assignment of labels to attributes, stored index-resolved and
/// sorted by attribute position.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Predicate {
    assignments: Vec<(usize, usize)>,
}

impl Predicate {
    /// The predicate with no assignments; matches every individual.
    pub fn universal() -> Self {
        Self {
            assignments: Vec::new(),
        }
    }

    pub fn new(schema: &AttributeSchema, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut assignments = Vec::with_capacity(pairs.len());
        for (name, label) in pairs {
            let attr = schema.attribute_index(name).ok_or_else(|| {
                Error::Schema(format!("unknown attribute {name:?} in predicate"))
            })?;
            let label_idx = schema.label_index(attr, label).ok_or_else(|| {
                Error::Schema(format!("unknown label {label:?} for attribute {name:?}"))
            })?;
            assignments.push((attr, label_idx));
        }
        assignments.sort_unstable();
        for w in assignments.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Schema(format!(
                    "attribute {:?} assigned twice in predicate",
                    schema.attributes[w[0].0].name
                )));
            }
        }
        Ok(Self { assignments })
    }

    /// Parse the `attr=label;attr=label` form; the empty string is the
    /// universal predicate.
    pub fn parse(text: &str, schema: &AttributeSchema) -> Result<Self> {
        if text.is_empty() {
            return Ok(Self::universal());
        }
        let mut pairs = Vec::new();
        for part in text.split(';') {
            let (name, label) = part.split_once('=').ok_or_else(|| {
                Error::Parse(format!("predicate clause {part:?} is not attr=label"))
            })?;
            pairs.push((name, label));
        }
        Self::new(schema, &pairs)
    }

    /// `(attribute index, label index)` pairs sorted by attribute.
    pub fn assignments(&self) -> &[(usize, usize)] {
        &self.assignments
    }

    /// Number of assigned attributes (d').
    pub fn arity(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_full(&self, schema: &AttributeSchema) -> bool {
        self.arity() == schema.attribute_count()
    }

    pub fn is_universal(&self) -> bool {
        self.assignments.is_empty()
    }

    /// True if every assignment of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &Predicate) -> bool {
        self.assignments
            .iter()
            .all(|a| other.assignments.binary_search(a).is_ok())
    }

    /// True if every assignment matches the given full label vector
    /// (one label index per attribute, in schema order).
    pub fn matches_labels(&self, labels: &[usize]) -> bool {
        self.assignments
            .iter()
            .all(|&(attr, label)| labels[attr] == label)
    }

    /// Canonical text form, clauses in schema attribute order.
    pub fn render(&self, schema: &AttributeSchema) -> String {
        self.assignments
            .iter()
            .map(|&(attr, label)| {
                format!(
                    "{}={}",
                    schema.attributes[attr].name, schema.attributes[attr].labels[label]
                )
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// True iff `marginal`'s assignments all appear identically in `full`.
pub fn subsumes(marginal: &Predicate, full: &Predicate, schema: &AttributeSchema) -> Result<bool> {
    if !full.is_full(schema) {
        return Err(Error::Schema(format!(
            "subsumption target assigns {} of {} attributes; a full predicate is required",
            full.arity(),
            schema.attribute_count()
        )));
    }
    Ok(marginal.is_subset_of(full))
}

/// The canonically ordered space of full predicates.
///
/// Index `k` encodes label indices in mixed radix with the first attribute
/// most significant, which realizes the lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateSpace {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl PredicateSpace {
    pub fn new(schema: &AttributeSchema) -> Result<Self> {
        let len = schema.checked_space_size()?;
        let sizes: Vec<usize> = schema.attributes().iter().map(|a| a.labels().len()).collect();
        let mut strides = vec![1usize; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        Ok(Self { sizes, strides, len })
    }

    /// Number of full predicates (K).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Row index of the full predicate with the given label vector.
    pub fn index_of_labels(&self, labels: &[usize]) -> usize {
        debug_assert_eq!(labels.len(), self.sizes.len());
        labels
            .iter()
            .zip(&self.strides)
            .map(|(&l, &s)| l * s)
            .sum()
    }

    /// Label vector (one label index per attribute) of full predicate `k`.
    pub fn labels_of(&self, k: usize) -> Vec<usize> {
        debug_assert!(k < self.len);
        self.strides
            .iter()
            .zip(&self.sizes)
            .map(|(&stride, &size)| (k / stride) % size)
            .collect()
    }

    /// Row index of a full `Predicate`.
    pub fn index_of(&self, predicate: &Predicate, schema: &AttributeSchema) -> Result<usize> {
        if !predicate.is_full(schema) {
            return Err(Error::Schema(
                "only full predicates have a row in the predicate space".into(),
            ));
        }
        let mut labels = vec![0usize; self.sizes.len()];
        for &(attr, label) in predicate.assignments() {
            labels[attr] = label;
        }
        Ok(self.index_of_labels(&labels))
    }

    /// The full `Predicate` at row `k`.
    pub fn predicate_of(&self, k: usize) -> Predicate {
        let labels = self.labels_of(k);
        Predicate {
            assignments: labels.into_iter().enumerate().collect(),
        }
    }
}

/// Enumerate the full-predicate space of a schema.
pub fn build_predicate_space(schema: &AttributeSchema) -> Result<PredicateSpace> {
    PredicateSpace::new(schema)
}
