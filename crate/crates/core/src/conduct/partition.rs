use std::fmt;

use crate::error::{Error, Result};

/// Largest firm count accepted by [`enumerate_partitions`] (Bell(8) = 4140).
pub const MAX_FIRMS: usize = 8;

/// A set partition of firms `0..J` into colluding groups.
///
/// Canonical form: each group sorted, groups ordered by smallest member.
/// Displayed one-based, e.g. `{1,2}{3}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(mut groups: Vec<Vec<usize>>) -> Result<Self> {
        let j: usize = groups.iter().map(Vec::len).sum();
        let mut seen = vec![false; j];
        for g in &mut groups {
            if g.is_empty() {
                return Err(Error::config("partition groups must be nonempty"));
            }
            g.sort_unstable();
            for &f in g.iter() {
                if f >= j || std::mem::replace(&mut seen[f], true) {
                    return Err(Error::config(format!("groups do not partition 0..{j}")));
                }
            }
        }
        groups.sort_by_key(|g| g[0]);
        Ok(Self { groups })
    }

    /// Every firm on its own.
    pub fn competitive(j: usize) -> Self {
        Self {
            groups: (0..j).map(|f| vec![f]).collect(),
        }
    }

    /// One group with every firm.
    pub fn collusive(j: usize) -> Self {
        Self {
            groups: vec![(0..j).collect()],
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_firms(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Parses the one-based display form, e.g. `{1,2}{3}`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse partition {s:?}"));
        let mut groups = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            let body = rest.strip_prefix('{').ok_or_else(bad)?;
            let end = body.find('}').ok_or_else(bad)?;
            let group = body[..end]
                .split(',')
                .map(|f| match f.trim().parse::<usize>() {
                    Ok(n) if n >= 1 => Ok(n - 1),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(group);
            rest = body[end + 1..].trim_start();
        }
        if groups.is_empty() {
            return Err(bad());
        }
        Self::new(groups)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            f.write_str("{")?;
            for (i, firm) in g.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", firm + 1)?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

/// All set partitions of `J` firms, `Bell(J)` of them.
///
/// Ordered by number of groups, then by restricted-growth string, except for
/// `J = 3` where the conventional listing
/// `{1,2,3}, {1,2}{3}, {1}{2,3}, {1,3}{2}, {1}{2}{3}` is used.
pub fn enumerate_partitions(j: usize) -> Result<Vec<Partition>> {
    if j == 0 || j > MAX_FIRMS {
        return Err(Error::config(format!("J must be in 1..={MAX_FIRMS}, got {j}")));
    }
    if j == 3 {
        return ["{1,2,3}", "{1,2}{3}", "{1}{2,3}", "{1,3}{2}", "{1}{2}{3}"]
            .iter()
            .map(|s| Partition::parse(s))
            .collect();
    }
    let mut strings = Vec::new();
    let mut a = vec![0usize; j];
    restricted_growth(&mut a, 1, 0, &mut strings);
    strings.sort_by_key(|rgs| rgs.iter().max().copied().unwrap_or(0));
    Ok(strings
        .into_iter()
        .map(|rgs| {
            let n = rgs.iter().max().map_or(0, |m| m + 1);
            let mut groups = vec![Vec::new(); n];
            for (firm, &g) in rgs.iter().enumerate() {
                groups[g].push(firm);
            }
            Partition { groups }
        })
        .collect())
}

fn restricted_growth(a: &mut Vec<usize>, pos: usize, max: usize, out: &mut Vec<Vec<usize>>) {
    if pos == a.len() {
        out.push(a.clone());
        return;
    }
    for v in 0..=max + 1 {
        a[pos] = v;
        restricted_growth(a, pos + 1, max.max(v), out);
    }
}
