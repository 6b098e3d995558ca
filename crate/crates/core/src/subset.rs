//! Sorted index sets and the combinatorial helpers built on them.

use std::fmt;
use std::ops::Deref;

/// A set of unit indices stored as a sorted, duplicate-free list.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    /// Builds a subset from arbitrary indices, sorting and removing duplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Subset(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &[usize]) -> bool {
        is_sorted_subset(&self.0, other)
    }
}

impl Deref for Subset {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for Subset {
    fn from(v: Vec<usize>) -> Self {
        Subset::new(v)
    }
}

impl<const N: usize> From<[usize; N]> for Subset {
    fn from(v: [usize; N]) -> Self {
        Subset::new(v.to_vec())
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for (k, j) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        Ok(())
    }
}

/// True when every element of sorted `a` occurs in sorted `b`.
pub fn is_sorted_subset(a: &[usize], b: &[usize]) -> bool {
    let mut it = b.iter();
    'outer: for x in a {
        for y in it.by_ref() {
            if y == x {
                continue 'outer;
            }
            if y > x {
                return false;
            }
        }
        return false;
    }
    true
}

/// Intersection of two sorted lists.
pub fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Elements of sorted `a` that are not in sorted `b`.
pub fn difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.binary_search(x).is_err()).collect()
}

/// Whether two sorted lists share an element.
pub fn overlaps(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// All subsets of the sorted list `items` with at most `max_size` elements,
/// ordered by size and then lexicographically.
pub fn bounded_subsets(items: &[usize], max_size: usize) -> Vec<Subset> {
    let mut out = vec![Subset::empty()];
    let top = max_size.min(items.len());
    let mut combo: Vec<usize> = Vec::with_capacity(top);
    for k in 1..=top {
        combo.clear();
        combo.extend(0..k);
        loop {
            out.push(Subset(combo.iter().map(|&c| items[c]).collect()));
            // Advance to the next k-combination in lexicographic order.
            let mut pos = k;
            while pos > 0 && combo[pos - 1] == items.len() - k + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            combo[pos - 1] += 1;
            for q in pos..k {
                combo[q] = combo[q - 1] + 1;
            }
        }
    }
    out
}

/// Calls `f` on every subset (as a sorted slice) of `items` with at most
/// `max_size` elements, without allocating a list of all of them.
pub fn for_each_bounded_subset(items: &[usize], max_size: usize, mut f: impl FnMut(&[usize])) {
    fn rec(items: &[usize], start: usize, left: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        f(cur);
        if left == 0 {
            return;
        }
        for k in start..items.len() {
            cur.push(items[k]);
            rec(items, k + 1, left - 1, cur, f);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(max_size);
    rec(items, 0, max_size, &mut cur, &mut f);
}

/// Elementary symmetric sums `e_0, ..., e_k` of `values`.
pub fn elementary_symmetric(values: impl IntoIterator<Item = f64>, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for v in values {
        for m in (1..=k).rev() {
            e[m] += e[m - 1] * v;
        }
    }
    e
}

/// Binomial coefficient as `u64` (saturating).
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}
