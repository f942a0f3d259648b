//! Finite groups given by composition tables, and their coset structures.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// JSON form of a composition table: `{"order": n, "mul": [[...]], "identity": i}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GroupTable {
    pub order: usize,
    pub mul: Vec<Vec<usize>>,
    pub identity: usize,
}

/// A finite group on the element indices `0..order`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroup {
    order: usize,
    mul: Vec<usize>,
    identity: usize,
    inverse: Vec<usize>,
}

impl FiniteGroup {
    /// Validates the table exhaustively: shape, Latin square, identity,
    /// associativity. Inverses are derived from the table.
    pub fn new(mul: Vec<Vec<usize>>, identity: usize) -> Result<Self> {
        let n = mul.len();
        if n == 0 {
            return Err(Error::InvalidGroup("empty table".into()));
        }
        if identity >= n {
            return Err(Error::InvalidGroup(format!(
                "identity index {identity} out of range for order {n}"
            )));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in mul.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGroup(format!(
                    "row {i} has length {} but the order is {n}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&x| x >= n) {
                return Err(Error::InvalidGroup(format!(
                    "entry {bad} in row {i} out of range"
                )));
            }
            flat.extend_from_slice(row);
        }
        let at = |a: usize, b: usize| flat[a * n + b];

        for i in 0..n {
            let row: BTreeSet<_> = (0..n).map(|j| at(i, j)).collect();
            let col: BTreeSet<_> = (0..n).map(|j| at(j, i)).collect();
            if row.len() != n || col.len() != n {
                return Err(Error::InvalidGroup(format!(
                    "not a Latin square: row or column {i} repeats an element"
                )));
            }
        }
        for g in 0..n {
            if at(identity, g) != g || at(g, identity) != g {
                return Err(Error::InvalidGroup(format!(
                    "{identity} is not a two-sided identity (fails on {g})"
                )));
            }
        }
        for a in 0..n {
            for b in 0..n {
                let ab = at(a, b);
                for c in 0..n {
                    if at(ab, c) != at(a, at(b, c)) {
                        return Err(Error::InvalidGroup(format!(
                            "associativity fails on ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
        // Latin rows guarantee a unique right inverse; associativity makes it two-sided.
        let inverse = (0..n)
            .map(|g| (0..n).find(|&h| at(g, h) == identity).expect("Latin row"))
            .collect();
        Ok(Self {
            order: n,
            mul: flat,
            identity,
            inverse,
        })
    }

    pub fn from_table(table: &GroupTable) -> Result<Self> {
        if table.order != table.mul.len() {
            return Err(Error::InvalidGroup(format!(
                "declared order {} but table has {} rows",
                table.order,
                table.mul.len()
            )));
        }
        Self::new(table.mul.clone(), table.identity)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let table: GroupTable = serde_json::from_str(json)?;
        Self::from_table(&table)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_table(&self) -> GroupTable {
        GroupTable {
            order: self.order,
            mul: self.mul.chunks(self.order).map(<[_]>::to_vec).collect(),
            identity: self.identity,
        }
    }

    /// Z/n under addition.
    pub fn cyclic(n: usize) -> Result<Self> {
        let mul = (0..n)
            .map(|a| (0..n).map(|b| (a + b) % n).collect())
            .collect();
        Self::new(mul, 0)
    }

    /// The symmetric group on `k` letters. Elements are permutations in
    /// lexicographic order; composition is `(a * b)(i) = a(b(i))`.
    pub fn symmetric(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidGroup("S_0 is not supported".into()));
        }
        let perms = permutations(k);
        let index = |p: &[usize]| perms.iter().position(|q| q == p).expect("closed");
        let mul = perms
            .iter()
            .map(|a| {
                perms
                    .iter()
                    .map(|b| index(&b.iter().map(|&i| a[i]).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        Self::new(mul, 0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.mul[a * self.order + b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }

    /// Smallest subgroup containing `generators`.
    pub fn generated_subgroup(&self, generators: &[usize]) -> Vec<usize> {
        let mut members = BTreeSet::from([self.identity]);
        let mut frontier: Vec<usize> = vec![self.identity];
        while let Some(x) = frontier.pop() {
            for &g in generators {
                let y = self.mul(x, g);
                if members.insert(y) {
                    frontier.push(y);
                }
            }
        }
        members.into_iter().collect()
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let x = left.remove(i);
            prefix.push(x);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..k).collect(), &mut out);
    out
}

/// Left cosets of a normal subgroup and the induced quotient group.
///
/// Cosets are numbered by their smallest element; that element is the
/// default section (representative) of the coset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CosetStructure {
    subgroup: Vec<usize>,
    cosets: Vec<Vec<usize>>,
    coset_of: Vec<usize>,
    quotient: FiniteGroup,
    section: Vec<usize>,
}

impl CosetStructure {
    pub fn new(group: &FiniteGroup, subgroup: &[usize]) -> Result<Self> {
        let n = group.order();
        let members: BTreeSet<usize> = subgroup.iter().copied().collect();
        if members.len() != subgroup.len() {
            return Err(Error::NotSubgroup("repeated element".into()));
        }
        if let Some(&bad) = members.iter().find(|&&h| h >= n) {
            return Err(Error::NotSubgroup(format!("element {bad} out of range")));
        }
        if !members.contains(&group.identity()) {
            return Err(Error::NotSubgroup("identity missing".into()));
        }
        for &a in &members {
            if !members.contains(&group.inverse(a)) {
                return Err(Error::NotSubgroup(format!("inverse of {a} missing")));
            }
            for &b in &members {
                if !members.contains(&group.mul(a, b)) {
                    return Err(Error::NotSubgroup(format!(
                        "not closed: {a} * {b} = {}",
                        group.mul(a, b)
                    )));
                }
            }
        }
        let subgroup: Vec<usize> = members.into_iter().collect();

        let mut coset_of = vec![usize::MAX; n];
        let mut cosets = Vec::new();
        for g in 0..n {
            if coset_of[g] != usize::MAX {
                continue;
            }
            let mut coset: Vec<usize> = subgroup.iter().map(|&h| group.mul(g, h)).collect();
            coset.sort_unstable();
            for &x in &coset {
                coset_of[x] = cosets.len();
            }
            cosets.push(coset);
        }
        let section: Vec<usize> = cosets.iter().map(|c| c[0]).collect();

        // gH * g'H is well defined iff coset(a * b) depends only on the cosets of a and b.
        let m = cosets.len();
        let mut table = vec![vec![usize::MAX; m]; m];
        for a in 0..n {
            for b in 0..n {
                let (i, j) = (coset_of[a], coset_of[b]);
                let k = coset_of[group.mul(a, b)];
                if table[i][j] == usize::MAX {
                    table[i][j] = k;
                } else if table[i][j] != k {
                    return Err(Error::NotNormal(format!(
                        "coset product depends on representatives ({a} * {b} lands in coset {k}, expected {})",
                        table[i][j]
                    )));
                }
            }
        }
        let quotient = FiniteGroup::new(table, coset_of[group.identity()])?;
        Ok(Self {
            subgroup,
            cosets,
            coset_of,
            quotient,
            section,
        })
    }

    pub fn subgroup(&self) -> &[usize] {
        &self.subgroup
    }

    pub fn cosets(&self) -> &[Vec<usize>] {
        &self.cosets
    }

    pub fn coset_of(&self, g: usize) -> usize {
        self.coset_of[g]
    }

    pub fn quotient(&self) -> &FiniteGroup {
        &self.quotient
    }

    pub fn section(&self) -> &[usize] {
        &self.section
    }

    /// Image of the subgroup under `h -> g * h`, in subgroup order.
    pub fn inclusion_image(&self, group: &FiniteGroup, g: usize) -> Vec<usize> {
        self.subgroup.iter().map(|&h| group.mul(g, h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z6_mod_order_two_subgroup() {
        let g = FiniteGroup::cyclic(6).unwrap();
        let cs = CosetStructure::new(&g, &[0, 3]).unwrap();
        assert_eq!(cs.cosets(), &[vec![0, 3], vec![1, 4], vec![2, 5]]);
        assert_eq!(cs.quotient().order(), 3);
        // Z/3: coset 1 generates, and has order 3.
        let q = cs.quotient();
        assert_eq!(q.mul(1, 1), 2);
        assert_eq!(q.mul(1, q.mul(1, 1)), q.identity());
        assert_eq!(cs.section(), &[0, 1, 2]);
    }

    #[test]
    fn trivial_subgroup_gives_singletons() {
        let g = FiniteGroup::symmetric(3).unwrap();
        let cs = CosetStructure::new(&g, &[g.identity()]).unwrap();
        assert_eq!(cs.cosets().len(), 6);
        assert!(cs.cosets().iter().all(|c| c.len() == 1));
        assert_eq!(cs.quotient(), &g);
    }

    #[test]
    fn transposition_subgroup_of_s3_is_not_normal() {
        let g = FiniteGroup::symmetric(3).unwrap();
        // Lexicographic index 1 is the permutation [0, 2, 1], a transposition.
        let h = g.generated_subgroup(&[1]);
        assert_eq!(h.len(), 2);
        let err = CosetStructure::new(&g, &h).unwrap_err();
        assert!(matches!(err, Error::NotNormal(_)), "{err}");
        let a3 = g.generated_subgroup(&[3]);
        assert_eq!(a3.len(), 3);
        assert_eq!(CosetStructure::new(&g, &a3).unwrap().quotient().order(), 2);
    }

    #[test]
    fn rejects_non_subgroups() {
        let g = FiniteGroup::cyclic(6).unwrap();
        assert!(matches!(
            CosetStructure::new(&g, &[0, 1]),
            Err(Error::NotSubgroup(_))
        ));
        assert!(matches!(
            CosetStructure::new(&g, &[3]),
            Err(Error::NotSubgroup(_))
        ));
        assert!(matches!(
            CosetStructure::new(&g, &[0, 9]),
            Err(Error::NotSubgroup(_))
        ));
    }

    #[test]
    fn table_validation() {
        let latin_fail = vec![vec![0, 1], vec![1, 1]];
        let err = FiniteGroup::new(latin_fail, 0).unwrap_err();
        assert!(err.to_string().contains("Latin square"), "{err}");

        // A Latin square with identity 0 that is not associative (order-5 loop).
        let loop5 = vec![
            vec![0, 1, 2, 3, 4],
            vec![1, 0, 3, 4, 2],
            vec![2, 4, 0, 1, 3],
            vec![3, 2, 4, 0, 1],
            vec![4, 3, 1, 2, 0],
        ];
        let err = FiniteGroup::new(loop5, 0).unwrap_err();
        assert!(err.to_string().contains("associativity"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let g = FiniteGroup::symmetric(3).unwrap();
        let json = serde_json::to_string(&g.to_table()).unwrap();
        assert_eq!(FiniteGroup::from_json(&json).unwrap(), g);
        let bad = r#"{"order": 3, "mul": [[0,1],[1,0]], "identity": 0}"#;
        assert!(FiniteGroup::from_json(bad).is_err());
    }

    #[test]
    fn coset_partition_sizes() {
        let g = FiniteGroup::cyclic(12).unwrap();
        for gen in [1usize, 2, 3, 4, 6] {
            let h = g.generated_subgroup(&[gen]);
            let cs = CosetStructure::new(&g, &h).unwrap();
            let total: usize = cs.cosets().iter().map(Vec::len).sum();
            assert_eq!(total, 12);
            assert!(cs.cosets().iter().all(|c| c.len() == h.len()));
            assert_eq!(cs.quotient().order(), 12 / h.len());
        }
    }
}
