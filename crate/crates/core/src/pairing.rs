//! Comparison pairs (CPs) between symmetric LUT paths.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::write_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingSource {
    RmseMatched,
    Structural,
}

impl fmt::Display for PairingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairingSource::RmseMatched => "rmse_matched",
            PairingSource::Structural => "structural",
        })
    }
}

/// A perfect matching of paths `1..=P` into `P/2` pairs, each stored as
/// `(a, b)` with `a < b`, sorted by `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryPairing {
    pub source: PairingSource,
    pub pairs: Vec<(usize, usize)>,
    /// `|rmse_a - rmse_b|` per pair in MHz, `None` where no RMSE backs the pair.
    #[serde(rename = "margins_mhz")]
    pub margins: Vec<Option<f64>>,
}

impl SymmetryPairing {
    fn from_pairs(
        source: PairingSource,
        mut pairs: Vec<(usize, usize)>,
        margin: impl Fn(usize, usize) -> Option<f64>,
    ) -> Self {
        for p in pairs.iter_mut() {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        pairs.sort_unstable();
        let margins = pairs.iter().map(|&(a, b)| margin(a, b)).collect();
        SymmetryPairing {
            source,
            pairs,
            margins,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.pairs.len() * 2
    }

    /// Replaces margins with those implied by `rmse` (indexed by path - 1).
    pub fn with_margins(mut self, rmse: &[f64]) -> Self {
        self.margins = self
            .pairs
            .iter()
            .map(|&(a, b)| match (rmse.get(a - 1), rmse.get(b - 1)) {
                (Some(x), Some(y)) => Some((x - y).abs()),
                _ => None,
            })
            .collect();
        self
    }

    /// Partner of every path, indexed by `path - 1`.
    pub fn partners(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_paths()];
        for &(a, b) in &self.pairs {
            out[a - 1] = b;
            out[b - 1] = a;
        }
        out
    }

    /// Checks the perfect-matching and ordering invariants against `p` paths.
    pub fn check(&self, p: usize) -> Result<()> {
        if self.pairs.len() * 2 != p {
            return Err(Error::Pairing(format!(
                "{} pairs cannot cover {p} paths",
                self.pairs.len()
            )));
        }
        if self.margins.len() != self.pairs.len() {
            return Err(Error::Pairing("margins and pairs differ in length".into()));
        }
        let mut seen = vec![false; p];
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            if a == 0 || b == 0 || a > p || b > p {
                return Err(Error::Pairing(format!("pair ({a},{b}) is outside 1..={p}")));
            }
            if a >= b {
                return Err(Error::Pairing(format!("pair ({a},{b}) is not ordered a < b")));
            }
            if i > 0 && self.pairs[i - 1].0 >= a {
                return Err(Error::Pairing("pairs are not sorted by first index".into()));
            }
            for x in [a, b] {
                if std::mem::replace(&mut seen[x - 1], true) {
                    return Err(Error::Pairing(format!("path {x} appears more than once")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pairing serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pairing: SymmetryPairing = serde_json::from_str(text).map_err(|e| Error::Schema {
            location: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        pairing.check(pairing.n_paths())?;
        Ok(pairing)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn require_even(p: usize) -> Result<()> {
    if p == 0 || p % 2 != 0 {
        return Err(Error::Pairing(format!("P must be even and positive, got {p}")));
    }
    Ok(())
}

/// Minimum-total-margin perfect matching of paths by their RMSE.
///
/// In one dimension the optimum pairs consecutive ranks: any crossing pair
/// of matches can be uncrossed without raising the cost. Equal RMSE values
/// rank by path index.
pub fn pair_by_rmse(rmse: &[f64]) -> Result<SymmetryPairing> {
    require_even(rmse.len())?;
    if let Some(i) = rmse.iter().position(|v| !v.is_finite()) {
        return Err(Error::Pairing(format!("rmse of path {} is not finite", i + 1)));
    }
    let mut order: Vec<usize> = (0..rmse.len()).collect();
    order.sort_by(|&i, &j| rmse[i].total_cmp(&rmse[j]).then(i.cmp(&j)));
    let pairs = order.chunks_exact(2).map(|c| (c[0] + 1, c[1] + 1)).collect();
    Ok(SymmetryPairing::from_pairs(PairingSource::RmseMatched, pairs, |a, b| {
        Some((rmse[a - 1] - rmse[b - 1]).abs())
    }))
}

/// Table-style pairing `(p, p + P/2)`.
pub fn structural_pairing(p: usize) -> Result<SymmetryPairing> {
    require_even(p)?;
    let half = p / 2;
    let pairs = (1..=half).map(|a| (a, a + half)).collect();
    Ok(SymmetryPairing::from_pairs(PairingSource::Structural, pairs, |_, _| None))
}

/// Majority vote across per-device pairings.
///
/// Each path takes the partner it was matched with most often (lower index
/// on ties). If those choices do not form a perfect matching, pairs are
/// instead taken greedily by descending vote count with the same tie-break,
/// and any paths left over are paired in index order.
pub fn consensus_pairing(per_device: &[SymmetryPairing]) -> Result<SymmetryPairing> {
    let first = per_device
        .first()
        .ok_or_else(|| Error::parameter("per_device", "no pairings to combine"))?;
    let p = first.n_paths();
    for (i, pairing) in per_device.iter().enumerate() {
        if pairing.n_paths() != p {
            return Err(Error::Pairing(format!(
                "pairing {i} covers {} paths, expected {p}",
                pairing.n_paths()
            )));
        }
        pairing.check(p)?;
    }

    // votes[(a, b)] with a < b -> (count, margin sum, margins seen)
    let mut votes: BTreeMap<(usize, usize), (usize, f64, usize)> = BTreeMap::new();
    for pairing in per_device {
        for (&pair, margin) in pairing.pairs.iter().zip(&pairing.margins) {
            let e = votes.entry(pair).or_insert((0, 0.0, 0));
            e.0 += 1;
            if let Some(m) = margin {
                e.1 += m;
                e.2 += 1;
            }
        }
    }
    let count = |a: usize, b: usize| votes.get(&(a.min(b), a.max(b))).map_or(0, |v| v.0);

    let mode: Vec<usize> = (1..=p)
        .map(|x| {
            let mut best = 0;
            let mut best_n = 0;
            for y in (1..=p).filter(|&y| y != x) {
                let n = count(x, y);
                if n > best_n {
                    best_n = n;
                    best = y;
                }
            }
            best
        })
        .collect();
    let mutual = (1..=p).all(|x| mode[x - 1] != 0 && mode[mode[x - 1] - 1] == x);

    let pairs: Vec<(usize, usize)> = if mutual {
        (1..=p).filter(|&x| x < mode[x - 1]).map(|x| (x, mode[x - 1])).collect()
    } else {
        let mut edges: Vec<(&(usize, usize), usize)> = votes.iter().map(|(k, v)| (k, v.0)).collect();
        edges.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut taken = vec![false; p];
        let mut pairs = Vec::with_capacity(p / 2);
        for (&(a, b), _) in edges {
            if !taken[a - 1] && !taken[b - 1] {
                taken[a - 1] = true;
                taken[b - 1] = true;
                pairs.push((a, b));
            }
        }
        let rest: Vec<usize> = (1..=p).filter(|&x| !taken[x - 1]).collect();
        pairs.extend(rest.chunks_exact(2).map(|c| (c[0], c[1])));
        pairs
    };

    Ok(SymmetryPairing::from_pairs(PairingSource::RmseMatched, pairs, |a, b| {
        votes
            .get(&(a, b))
            .filter(|v| v.2 > 0)
            .map(|v| v.1 / v.2 as f64)
    }))
}
