use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AlgebraError;

/// Default bound on type nesting depth.
pub const MAX_TYPE_DEPTH: usize = 10;

const PLACEHOLDER_PREFIX: &str = "ps(";

/// A source name: either a placeholder `ps(<node-id>)` tied to the graph node
/// that fills the slot, or a reusable name such as `s1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceName(String);

impl SourceName {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "source names are nonempty");
        SourceName(name)
    }

    pub fn placeholder(node: &str) -> Self {
        SourceName(format!("{PLACEHOLDER_PREFIX}{node})"))
    }

    pub fn is_placeholder(&self) -> bool {
        self.placeholder_target().is_some()
    }

    /// Node id referenced by a placeholder name.
    pub fn placeholder_target(&self) -> Option<&str> {
        self.0.strip_prefix(PLACEHOLDER_PREFIX)?.strip_suffix(')')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SourceName {
    fn from(s: &str) -> Self {
        SourceName::new(s)
    }
}

/// An AM type: a map from source names to the request (itself a type) at
/// each source. The empty map is the empty type `[]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmType(BTreeMap<SourceName, AmType>);

impl AmType {
    pub fn empty() -> Self {
        AmType(BTreeMap::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, name: &SourceName) -> bool {
        self.0.contains_key(name)
    }

    /// Request at a top-level source.
    pub fn request(&self, name: &SourceName) -> Option<&AmType> {
        self.0.get(name)
    }

    pub fn request_mut(&mut self, name: &SourceName) -> Option<&mut AmType> {
        self.0.get_mut(name)
    }

    pub fn insert(&mut self, name: SourceName, request: AmType) -> Option<AmType> {
        self.0.insert(name, request)
    }

    pub fn remove(&mut self, name: &SourceName) -> Option<AmType> {
        self.0.remove(name)
    }

    pub fn without(&self, name: &SourceName) -> AmType {
        let mut t = self.clone();
        t.0.remove(name);
        t
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SourceName, &AmType)> {
        self.0.iter()
    }

    /// Top-level source names.
    pub fn names(&self) -> impl Iterator<Item = &SourceName> {
        self.0.keys()
    }

    /// Every source name occurring at any depth.
    pub fn all_names(&self) -> BTreeSet<SourceName> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut BTreeSet<SourceName>) {
        for (n, r) in &self.0 {
            out.insert(n.clone());
            r.collect_names(out);
        }
    }

    /// Nesting depth; `[]` has depth 0, `[a]` depth 1, `[a[b]]` depth 2.
    pub fn depth(&self) -> usize {
        self.0.values().map(|r| 1 + r.depth()).max().unwrap_or(0)
    }

    pub fn check_depth(&self, bound: usize) -> Result<(), AlgebraError> {
        let d = self.depth();
        if d > bound {
            Err(AlgebraError::TypeTooDeep { depth: d, bound })
        } else {
            Ok(())
        }
    }

    /// True if `name` occurs anywhere inside the request of another top-level source.
    pub fn is_requested(&self, name: &SourceName) -> bool {
        self.0.iter().any(|(n, r)| n != name && r.occurs(name))
    }

    fn occurs(&self, name: &SourceName) -> bool {
        self.0.iter().any(|(n, r)| n == name || r.occurs(name))
    }

    /// Union of top-level sources; shared names must carry equivalent requests.
    pub fn unify(&self, other: &AmType) -> Result<AmType, AlgebraError> {
        let mut out = self.clone();
        for (n, r) in &other.0 {
            match out.0.get(n) {
                Some(existing) if !existing.equiv(r) => {
                    return Err(AlgebraError::RequestClash(n.clone()));
                }
                Some(_) => {}
                None => {
                    out.0.insert(n.clone(), r.clone());
                }
            }
        }
        Ok(out)
    }

    /// True if every top-level source of `self` occurs in `other` with an equivalent request.
    pub fn is_submap_of(&self, other: &AmType) -> bool {
        self.0
            .iter()
            .all(|(n, r)| other.0.get(n).is_some_and(|q| q.equiv(r)))
    }

    /// Renames every occurrence of every name through `map`; unmapped names are kept.
    pub fn rename(&self, map: &BTreeMap<SourceName, SourceName>) -> AmType {
        AmType(
            self.0
                .iter()
                .map(|(n, r)| (map.get(n).unwrap_or(n).clone(), r.rename(map)))
                .collect(),
        )
    }

    /// Form in which every name nested anywhere also stands at top level with
    /// its request. Equal saturations mean the same type: a nested name can
    /// only be filled once whatever requests it has been filled.
    pub fn saturated(&self) -> AmType {
        let inner: BTreeMap<SourceName, AmType> = self
            .0
            .iter()
            .map(|(n, r)| (n.clone(), r.saturated()))
            .collect();
        let mut out = inner.clone();
        for r in inner.values() {
            for (m, q) in &r.0 {
                out.entry(m.clone()).or_insert_with(|| q.clone());
            }
        }
        AmType(out)
    }

    /// Equality up to saturation.
    pub fn equiv(&self, other: &AmType) -> bool {
        self == other || self.saturated() == other.saturated()
    }

    /// Rendering with all names replaced by `_` and children sorted, so that
    /// types differing only in naming render identically.
    pub fn skeleton(&self) -> String {
        let mut parts: Vec<String> = self
            .0
            .values()
            .map(|r| {
                if r.is_empty() {
                    "_".to_string()
                } else {
                    format!("_{}", r.skeleton())
                }
            })
            .collect();
        parts.sort();
        format!("[{}]", parts.join(", "))
    }
}

impl fmt::Display for AmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (n, r)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}")?;
            if !r.is_empty() {
                write!(f, "{r}")?;
            }
        }
        f.write_str("]")
    }
}

impl FromIterator<(SourceName, AmType)> for AmType {
    fn from_iter<I: IntoIterator<Item = (SourceName, AmType)>>(iter: I) -> Self {
        AmType(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse type {text:?} at byte {pos}: {msg}")]
pub struct TypeParseError {
    pub text: String,
    pub pos: usize,
    pub msg: &'static str,
}

/// Parses the bracket notation used by `Display`, e.g. `[s1, s2[s1]]`.
impl FromStr for AmType {
    type Err = TypeParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bytes = text.as_bytes();
        let mut pos = 0;
        let err = |pos, msg| TypeParseError {
            text: text.to_string(),
            pos,
            msg,
        };
        fn skip_ws(b: &[u8], pos: &mut usize) {
            while *pos < b.len() && b[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        }
        fn parse(
            text: &str,
            b: &[u8],
            pos: &mut usize,
            err: &dyn Fn(usize, &'static str) -> TypeParseError,
        ) -> Result<AmType, TypeParseError> {
            skip_ws(b, pos);
            if b.get(*pos) != Some(&b'[') {
                return Err(err(*pos, "expected '['"));
            }
            *pos += 1;
            let mut out = BTreeMap::new();
            loop {
                skip_ws(b, pos);
                match b.get(*pos) {
                    Some(b']') => {
                        *pos += 1;
                        return Ok(AmType(out));
                    }
                    Some(b',') if !out.is_empty() => {
                        *pos += 1;
                        continue;
                    }
                    None => return Err(err(*pos, "unterminated type")),
                    _ => {}
                }
                let start = *pos;
                // names may contain parentheses, as in ps(f)
                let mut paren = 0i32;
                while *pos < b.len() {
                    let c = b[*pos];
                    if c == b'(' {
                        paren += 1;
                    } else if c == b')' {
                        paren -= 1;
                    } else if paren == 0
                        && (c == b'[' || c == b']' || c == b',' || c.is_ascii_whitespace())
                    {
                        break;
                    }
                    *pos += 1;
                }
                if *pos == start {
                    return Err(err(*pos, "expected a source name"));
                }
                let name = SourceName::new(&text[start..*pos]);
                skip_ws(b, pos);
                let req = if b.get(*pos) == Some(&b'[') {
                    parse(text, b, pos, err)?
                } else {
                    AmType::empty()
                };
                if out.insert(name, req).is_some() {
                    return Err(err(start, "duplicate source at one level"));
                }
            }
        }
        let t = parse(text, bytes, &mut pos, &err)?;
        skip_ws(bytes, &mut pos);
        if pos != bytes.len() {
            return Err(err(pos, "trailing input"));
        }
        Ok(t)
    }
}

/// Shorthand for tests and examples: `ty("[s, o[s]]")`.
pub fn ty(text: &str) -> AmType {
    text.parse().unwrap_or_else(|e| panic!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unify_examples() {
        assert_eq!(ty("[s[f]]").unify(&ty("[f]")).unwrap(), ty("[s[f], f]"));
        assert_eq!(
            AmType::empty().unify(&ty("[a[b], c]")).unwrap(),
            ty("[a[b], c]")
        );
        assert_eq!(
            ty("[f[s]]").unify(&ty("[f]")),
            Err(AlgebraError::RequestClash("f".into()))
        );
    }

    #[test]
    fn display_and_parse() {
        let t = ty("[ps(s)[ps(f)], ps(g)[ps(f)]]");
        assert_eq!(t.to_string(), "[ps(g)[ps(f)], ps(s)[ps(f)]]");
        assert_eq!(t.depth(), 2);
        assert_eq!(AmType::empty().to_string(), "[]");
        assert!("[a, a]".parse::<AmType>().is_err());
        assert!("[a".parse::<AmType>().is_err());
    }

    #[test]
    fn placeholder_names() {
        let p = SourceName::placeholder("f");
        assert_eq!(p.as_str(), "ps(f)");
        assert_eq!(p.placeholder_target(), Some("f"));
        assert!(!SourceName::new("s1").is_placeholder());
    }

    #[test]
    fn requested_sources() {
        let t = ty("[s, o[s]]");
        assert!(t.is_requested(&"s".into()));
        assert!(!t.is_requested(&"o".into()));
        assert!(ty("[a[b[c]], c]").is_requested(&"c".into()));
    }

    #[test]
    fn depth_bound() {
        assert!(ty("[a[b[c]]]").check_depth(2).is_err());
        assert!(ty("[a[b[c]]]").check_depth(3).is_ok());
    }

    #[test]
    fn skeleton_ignores_names() {
        assert_eq!(ty("[s1, s2[s1]]").skeleton(), ty("[s2, s3[s2]]").skeleton());
        assert_ne!(ty("[s1, s2[s1]]").skeleton(), ty("[s1, s2]").skeleton());
    }

    fn arb_type() -> impl Strategy<Value = AmType> {
        let leaf = Just(AmType::empty());
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop::collection::btree_map(
                prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(SourceName::new),
                inner,
                0..3,
            )
            .prop_map(AmType)
        })
    }

    proptest! {
        #[test]
        fn unify_laws(x in arb_type(), y in arb_type(), z in arb_type()) {
            prop_assert_eq!(x.unify(&AmType::empty()).unwrap(), x.clone());
            if let (Ok(xy), Ok(yx)) = (x.unify(&y), y.unify(&x)) {
                prop_assert_eq!(&xy, &yx);
                if let (Ok(l), Ok(yz)) = (xy.unify(&z), y.unify(&z)) {
                    prop_assert_eq!(l, x.unify(&yz).unwrap());
                }
            } else {
                prop_assert!(x.unify(&y).is_err() && y.unify(&x).is_err());
            }
        }

        #[test]
        fn display_round_trips(x in arb_type()) {
            prop_assert_eq!(x.to_string().parse::<AmType>().unwrap(), x);
        }
    }
}
