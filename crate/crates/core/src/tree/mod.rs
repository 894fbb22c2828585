//! Transform composition by family trees.
//!
//! A root category names a tree of eight primitive lists. The four
//! upstream lists apply to the input column; offspring-bearing entries
//! (parents, siblings) then have their own category's downstream lists
//! inspected, where children, niecesnephews, coworkers and friends take the
//! roles of parents, siblings, auntsuncles and cousins for the next
//! generation.

pub mod catalog;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{Catalog, ProcessEntry, ResolvedCategory, TransformKind};
pub use params::{resolve_params, AssignParam};

pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyTree {
    pub parents: Vec<String>,
    pub siblings: Vec<String>,
    pub auntsuncles: Vec<String>,
    pub cousins: Vec<String>,
    pub children: Vec<String>,
    pub niecesnephews: Vec<String>,
    pub coworkers: Vec<String>,
    pub friends: Vec<String>,
}

/// Behaviour shared by a primitive and its downstream counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Role {
    pub replaces: bool,
    pub offspring: bool,
}

const PARENTS: Role = Role {
    replaces: true,
    offspring: true,
};
const SIBLINGS: Role = Role {
    replaces: false,
    offspring: true,
};
const AUNTSUNCLES: Role = Role {
    replaces: true,
    offspring: false,
};
const COUSINS: Role = Role {
    replaces: false,
    offspring: false,
};

impl FamilyTree {
    pub fn upstream(&self) -> [(Role, &[String]); 4] {
        [
            (PARENTS, &self.parents),
            (SIBLINGS, &self.siblings),
            (AUNTSUNCLES, &self.auntsuncles),
            (COUSINS, &self.cousins),
        ]
    }

    pub fn downstream(&self) -> [(Role, &[String]); 4] {
        [
            (PARENTS, &self.children),
            (SIBLINGS, &self.niecesnephews),
            (AUNTSUNCLES, &self.coworkers),
            (COUSINS, &self.friends),
        ]
    }

    pub fn is_empty(&self) -> bool {
        self == &FamilyTree::default()
    }
}

/// Runs a root category's tree over `input`.
///
/// `apply(category, column)` executes one tree category on a column and
/// returns the names of its output columns. The returned list holds the
/// columns that survive: an input is kept only when no replace-action
/// primitive of its generation had entries.
pub fn traverse<F>(catalog: &Catalog, root: &str, input: &str, mut apply: F) -> Result<Vec<String>>
where
    F: FnMut(&str, &str) -> Result<Vec<String>>,
{
    let tree = catalog
        .tree(root)
        .ok_or_else(|| Error::UnknownCategory(root.to_string()))?;
    generation(catalog, tree.upstream(), input, 0, &mut apply)
}

fn generation<F>(
    catalog: &Catalog,
    lists: [(Role, &[String]); 4],
    input: &str,
    depth: usize,
    apply: &mut F,
) -> Result<Vec<String>>
where
    F: FnMut(&str, &str) -> Result<Vec<String>>,
{
    if depth > MAX_DEPTH {
        return Err(Error::TreeDepth(MAX_DEPTH));
    }
    let replaced = lists.iter().any(|(role, cats)| role.replaces && !cats.is_empty());
    let mut out = Vec::new();
    if !replaced {
        out.push(input.to_string());
    }
    for (role, cats) in lists {
        for cat in cats {
            for produced in apply(cat, input)? {
                if role.offspring {
                    let tree = catalog.tree(cat).unwrap_or_default();
                    out.extend(generation(catalog, tree.downstream(), &produced, depth + 1, apply)?);
                } else {
                    out.push(produced);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::suffixed_name;
    use std::collections::{BTreeMap, HashSet};

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    /// Output columns and the (category, input) calls made.
    type Traversal = (Vec<String>, Vec<(String, String)>);

    fn run(catalog: &Catalog, root: &str, input: &str) -> Result<Traversal> {
        let mut seen: HashSet<String> = HashSet::new();
        let mut calls = Vec::new();
        let out = traverse(catalog, root, input, |cat, col| {
            catalog.resolve(cat)?;
            calls.push((cat.to_string(), col.to_string()));
            let name = suffixed_name(col, cat, &seen);
            seen.insert(name.clone());
            Ok(vec![name])
        })?;
        Ok((out, calls))
    }

    fn newt_catalog() -> Catalog {
        let transformdict: BTreeMap<String, FamilyTree> = [(
            "newt".to_string(),
            FamilyTree {
                parents: names(&["newt"]),
                cousins: names(&["NArw"]),
                friends: names(&["bsor"]),
                ..FamilyTree::default()
            },
        )]
        .into_iter()
        .collect();
        let processdict: BTreeMap<String, ProcessEntry> = [("newt".to_string(), ProcessEntry::pointer("nmbr"))]
            .into_iter()
            .collect();
        Catalog::builtin().with_user(transformdict, processdict).unwrap()
    }

    #[test]
    fn newt_example() {
        let (out, _) = run(&newt_catalog(), "newt", "column").unwrap();
        assert_eq!(out, names(&["column_newt", "column_newt_bsor", "column_NArw"]));
    }

    #[test]
    fn cousins_only_supplements() {
        let mut td = BTreeMap::new();
        td.insert(
            "mark".to_string(),
            FamilyTree {
                cousins: names(&["NArw"]),
                ..FamilyTree::default()
            },
        );
        let cat = Catalog::builtin().with_user(td, BTreeMap::new()).unwrap();
        let (out, _) = run(&cat, "mark", "x").unwrap();
        assert_eq!(out, names(&["x", "x_NArw"]));
    }

    #[test]
    fn encoding_replaced_by_noise() {
        let (out, calls) = run(&Catalog::builtin(), "DPnb", "x").unwrap();
        assert_eq!(out, names(&["x_DPn3_DPnb", "x_NArw"]));
        assert_eq!(calls[1], ("DPnb".to_string(), "x_DPn3".to_string()));
    }

    #[test]
    fn composed_noise_profiles() {
        // two stacked gaussian profiles downstream of one normalization
        let mut td = BTreeMap::new();
        td.insert(
            "DPnb".to_string(),
            FamilyTree {
                parents: names(&["DPn3"]),
                cousins: names(&["NArw"]),
                coworkers: names(&["DPnb2"]),
                ..FamilyTree::default()
            },
        );
        td.insert(
            "DPn3".to_string(),
            FamilyTree {
                parents: names(&["DPn3"]),
                children: names(&["DPnb"]),
                ..FamilyTree::default()
            },
        );
        let mut pd = BTreeMap::new();
        pd.insert("DPnb2".to_string(), ProcessEntry::pointer("DPnb"));
        pd.insert("DPn3".to_string(), ProcessEntry::pointer("nmbr"));
        let cat = Catalog::builtin().with_user(td, pd).unwrap();
        let (out, _) = run(&cat, "DPnb", "x").unwrap();
        assert_eq!(out, names(&["x_DPn3_DPnb_DPnb2", "x_NArw"]));
    }

    #[test]
    fn cycles_hit_the_depth_limit() {
        let mut td = BTreeMap::new();
        td.insert(
            "loop".to_string(),
            FamilyTree {
                parents: names(&["loop"]),
                children: names(&["loop"]),
                ..FamilyTree::default()
            },
        );
        let mut pd = BTreeMap::new();
        pd.insert("loop".to_string(), ProcessEntry::pointer("nmbr"));
        let cat = Catalog::builtin().with_user(td, pd).unwrap();
        assert!(matches!(run(&cat, "loop", "x"), Err(Error::TreeDepth(32))));
    }

    #[test]
    fn unknown_categories() {
        assert!(matches!(run(&Catalog::builtin(), "nope", "x"), Err(Error::UnknownCategory(c)) if c == "nope"));
        let mut td = BTreeMap::new();
        td.insert(
            "bad".to_string(),
            FamilyTree {
                auntsuncles: names(&["missing_cat"]),
                ..FamilyTree::default()
            },
        );
        let cat = Catalog::builtin().with_user(td, BTreeMap::new()).unwrap();
        assert!(matches!(run(&cat, "bad", "x"), Err(Error::UnknownCategory(c)) if c == "missing_cat"));
    }

    #[test]
    fn traversal_is_deterministic() {
        let cat = Catalog::builtin();
        for root in cat.root_names() {
            let a = run(&cat, &root, "c").unwrap();
            let b = run(&cat, &root, "c").unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn input_kept_iff_only_supplements() {
        let cat = Catalog::builtin();
        for root in cat.root_names() {
            let tree = cat.tree(&root).unwrap();
            let (out, _) = run(&cat, &root, "c").unwrap();
            let replaced = tree.upstream().iter().any(|(r, l)| r.replaces && !l.is_empty());
            assert_eq!(out.contains(&"c".to_string()), !replaced, "{root}");
        }
    }
}
