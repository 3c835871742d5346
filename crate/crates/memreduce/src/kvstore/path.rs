//! Canonical absolute paths for the hierarchical store.

use std::fmt;

use serde::{Deserialize, Serialize};

/// An absolute path in canonical form: starts with `/`, no empty components,
/// no `.` or `..`, no trailing slash. Root is `/`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StorePath(String);

impl StorePath {
    pub fn root() -> StorePath {
        StorePath("/".to_string())
    }

    /// Parses and canonicalizes. Empty components and `.` are dropped;
    /// relative paths and `..` are rejected. Canonicalization is idempotent.
    pub fn parse(s: &str) -> Result<StorePath, String> {
        if !s.starts_with('/') {
            return Err(format!("path must be absolute: {s:?}"));
        }
        let mut parts = Vec::new();
        for comp in s.split('/') {
            match comp {
                "" | "." => {}
                ".." => return Err(format!("path may not contain '..': {s:?}")),
                c => parts.push(c),
            }
        }
        if parts.is_empty() {
            Ok(StorePath::root())
        } else {
            Ok(StorePath(format!("/{}", parts.join("/"))))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0 == "/"
    }

    pub fn components(&self) -> Vec<&str> {
        if self.is_root() {
            Vec::new()
        } else {
            self.0[1..].split('/').collect()
        }
    }

    /// Number of components; root has depth 0.
    pub fn depth(&self) -> usize {
        self.components().len()
    }

    /// Final component; empty for root.
    pub fn name(&self) -> &str {
        if self.is_root() {
            ""
        } else {
            self.0.rsplit('/').next().unwrap()
        }
    }

    pub fn parent(&self) -> Option<StorePath> {
        if self.is_root() {
            return None;
        }
        match self.0.rfind('/') {
            Some(0) => Some(StorePath::root()),
            Some(i) => Some(StorePath(self.0[..i].to_string())),
            None => None,
        }
    }

    /// Appends a relative suffix (one or more components).
    pub fn join(&self, suffix: &str) -> Result<StorePath, String> {
        StorePath::parse(&format!("{}/{}", self.0, suffix))
    }

    /// True iff `self` is an ancestor of `other` (strict: a path is not its
    /// own ancestor).
    pub fn is_ancestor_of(&self, other: &StorePath) -> bool {
        if self == other {
            return false;
        }
        if self.is_root() {
            return true;
        }
        other.0.starts_with(&self.0) && other.0.as_bytes().get(self.0.len()) == Some(&b'/')
    }

    /// The path of `self` relative to ancestor `base`, as a suffix string.
    pub fn strip_ancestor(&self, base: &StorePath) -> Option<&str> {
        if base.is_root() {
            if self.is_root() {
                None
            } else {
                Some(&self.0[1..])
            }
        } else if base.is_ancestor_of(self) {
            Some(&self.0[base.0.len() + 1..])
        } else {
            None
        }
    }

    /// Canonical lock-acquisition order: shallower paths first, then
    /// lexicographic on the canonical string.
    pub fn cmp_depth_lex(&self, other: &StorePath) -> std::cmp::Ordering {
        self.depth()
            .cmp(&other.depth())
            .then_with(|| self.0.cmp(&other.0))
    }
}

/// Least common ancestor of a nonempty path set.
pub fn least_common_ancestor(paths: &[StorePath]) -> StorePath {
    assert!(!paths.is_empty());
    let mut prefix: Vec<&str> = paths[0].components();
    for p in &paths[1..] {
        let comps = p.components();
        let mut keep = 0;
        while keep < prefix.len() && keep < comps.len() && prefix[keep] == comps[keep] {
            keep += 1;
        }
        prefix.truncate(keep);
    }
    if prefix.is_empty() {
        StorePath::root()
    } else {
        StorePath::parse(&format!("/{}", prefix.join("/"))).unwrap()
    }
}

impl fmt::Display for StorePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization_is_idempotent() {
        for (raw, want) in [
            ("/", "/"),
            ("//", "/"),
            ("/a", "/a"),
            ("/a/", "/a"),
            ("/a//b", "/a/b"),
            ("/a/./b", "/a/b"),
        ] {
            let p = StorePath::parse(raw).unwrap();
            assert_eq!(p.as_str(), want);
            assert_eq!(StorePath::parse(p.as_str()).unwrap(), p);
        }
        assert!(StorePath::parse("relative/x").is_err());
        assert!(StorePath::parse("/a/../b").is_err());
        assert!(StorePath::parse("").is_err());
    }

    #[test]
    fn parent_name_depth() {
        let p = StorePath::parse("/a/b/c").unwrap();
        assert_eq!(p.depth(), 3);
        assert_eq!(p.name(), "c");
        assert_eq!(p.parent().unwrap().as_str(), "/a/b");
        assert_eq!(StorePath::parse("/a").unwrap().parent().unwrap(), StorePath::root());
        assert_eq!(StorePath::root().parent(), None);
    }

    #[test]
    fn ancestry_and_relative_suffix() {
        let a = StorePath::parse("/a").unwrap();
        let ab = StorePath::parse("/a/b").unwrap();
        assert!(a.is_ancestor_of(&ab));
        // String prefix alone is not ancestry: "/ab" is a sibling of "/a".
        let sibling = StorePath::parse("/ab").unwrap();
        assert!(!a.is_ancestor_of(&sibling));
        assert!(StorePath::root().is_ancestor_of(&a));
        assert!(!a.is_ancestor_of(&a));
        assert_eq!(ab.strip_ancestor(&a), Some("b"));
        assert_eq!(ab.strip_ancestor(&StorePath::root()), Some("a/b"));
    }

    #[test]
    fn lca_of_siblings_is_their_parent() {
        let f = StorePath::parse("/a/f").unwrap();
        let g = StorePath::parse("/a/g").unwrap();
        assert_eq!(least_common_ancestor(&[f.clone(), g]).as_str(), "/a");
        assert_eq!(least_common_ancestor(&[f.clone()]).as_str(), "/a/f");
        let other = StorePath::parse("/b").unwrap();
        assert_eq!(least_common_ancestor(&[f, other]), StorePath::root());
    }

    #[test]
    fn depth_then_lex_order() {
        let mut v = vec![
            StorePath::parse("/a/f").unwrap(),
            StorePath::parse("/b").unwrap(),
            StorePath::parse("/a").unwrap(),
            StorePath::parse("/a/e").unwrap(),
        ];
        v.sort_by(|x, y| x.cmp_depth_lex(y));
        let got: Vec<&str> = v.iter().map(|p| p.as_str()).collect();
        assert_eq!(got, vec!["/a", "/b", "/a/e", "/a/f"]);
    }
}
