//! Brute-force reference implementations the pipeline is checked against.
//! Written from the definitions, without reusing library internals.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

/// Textbook dynamic-programming edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Shared tokens (with multiplicity) over the smaller token count.
pub fn overlap(a: &str, b: &str) -> f64 {
    let mut ta: Vec<&str> = a.split(' ').filter(|t| !t.is_empty()).collect();
    let mut tb: Vec<&str> = b.split(' ').filter(|t| !t.is_empty()).collect();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    ta.sort_unstable();
    tb.sort_unstable();
    let (mut i, mut j, mut shared) = (0, 0, 0usize);
    while i < ta.len() && j < tb.len() {
        match ta[i].cmp(tb[j]) {
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    shared as f64 / ta.len().min(tb.len()) as f64
}

pub fn name_sim(a: &str, b: &str) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let longest = a.chars().count().max(b.chars().count());
    let edit = 1.0 - levenshtein(a, b) as f64 / longest as f64;
    overlap(a, b).max(edit)
}

pub fn department(zip: &str) -> Option<String> {
    if zip.len() != 5 || !zip.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n = if zip.starts_with("97") || zip.starts_with("98") { 3 } else { 2 };
    Some(zip[..n].to_string())
}

#[derive(Debug, Clone, Default)]
pub struct Addr {
    pub street: Option<String>,
    pub zip: Option<String>,
    pub city: Option<String>,
}

/// Weighted agreement over the parts present on both sides, and whether any
/// part was present.
pub fn address(a: &Addr, b: &Addr, w: (f64, f64, f64)) -> (f64, bool) {
    let mut total = 0.0;
    let mut acc = 0.0;
    if let (Some(x), Some(y)) = (&a.street, &b.street) {
        total += w.0;
        acc += w.0 * name_sim(x, y);
    }
    if let (Some(x), Some(y)) = (&a.zip, &b.zip) {
        let s = if x == y {
            1.0
        } else if department(x).is_some() && department(x) == department(y) {
            0.5
        } else {
            0.0
        };
        total += w.1;
        acc += w.1 * s;
    }
    if let (Some(x), Some(y)) = (&a.city, &b.city) {
        total += w.2;
        acc += w.2 * name_sim(x, y);
    }
    if total == 0.0 {
        (0.0, false)
    } else {
        ((acc / total).clamp(0.0, 1.0), true)
    }
}

/// Exact weight normalization in hundredths: each share rounded half up,
/// the residual added to the first largest weight.
pub fn normalized_cents(weights: &[BigRational]) -> Vec<i64> {
    let total: BigRational = weights.iter().cloned().fold(BigRational::zero(), |a, b| a + b);
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let mut cents: Vec<i64> = weights
        .iter()
        .map(|w| {
            let share = BigRational::from_integer(BigInt::from(10_000)) * w / &total;
            (share + &half).floor().to_integer().to_i64().unwrap()
        })
        .collect();
    let residual = 10_000 - cents.iter().sum::<i64>();
    let mut largest = 0;
    for i in 1..weights.len() {
        if weights[i] > weights[largest] {
            largest = i;
        }
    }
    cents[largest] += residual;
    cents
}

/// Connected components of the graph on `0..n`, each sorted, as a set.
pub fn components(n: usize, edges: &[(usize, usize)]) -> BTreeSet<Vec<usize>> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(x) = stack.pop() {
            comp.push(x);
            for &y in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        comp.sort_unstable();
        out.insert(comp);
    }
    out
}
