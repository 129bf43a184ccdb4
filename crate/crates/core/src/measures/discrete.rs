use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::best_response::AdaptedMap;
use crate::error::{Error, Result};
use crate::measures::tree::ScenarioTree;

/// Tolerance on the total mass of a measure.
pub const MASS_TOL: f64 = 1e-12;
/// Per-coordinate tolerance under which two atoms are the same point.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "y")]
    pub point: Vec<f64>,
    #[serde(rename = "w")]
    pub weight: f64,
}

/// Finitely supported probability measure on R^N.
///
/// Atoms are kept sorted lexicographically with coincident points merged, so
/// two measures built from the same mass in any order compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDocument", into = "MeasureDocument")]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureDocument {
    dim: usize,
    atoms: Vec<Atom>,
}

impl TryFrom<MeasureDocument> for DiscreteMeasure {
    type Error = Error;

    fn try_from(doc: MeasureDocument) -> Result<Self> {
        DiscreteMeasure::new(doc.dim, doc.atoms)
    }
}

impl From<DiscreteMeasure> for MeasureDocument {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureDocument { dim: m.dim, atoms: m.atoms }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= MERGE_TOL)
}

impl DiscreteMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structure("measure dimension must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::Structure("measure has no atoms".into()));
        }
        for (i, atom) in atoms.iter().enumerate() {
            if atom.point.len() != dim {
                return Err(Error::Structure(format!(
                    "atom {i}: point has length {}, expected {dim}",
                    atom.point.len()
                )));
            }
            if atom.point.iter().any(|v| !v.is_finite()) {
                return Err(Error::Structure(format!("atom {i}: non-finite coordinate")));
            }
            if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                return Err(Error::Structure(format!("atom {i}: weight {} is not positive", atom.weight)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Structure(format!("weights sum to {total}, expected 1")));
        }
        Ok(DiscreteMeasure { dim, atoms: merge_atoms(atoms) })
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        let dim = point.len();
        DiscreteMeasure::new(dim, vec![Atom { point, weight: 1.0 }])
    }

    /// Convenience constructor from `(point, weight)` pairs.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Result<Self> {
        let atoms = pairs.into_iter().map(|(point, weight)| Atom { point, weight }).collect();
        DiscreteMeasure::new(dim, atoms)
    }

    /// The type law viewed as a measure on action space (identity map).
    pub fn from_tree(tree: &ScenarioTree) -> Self {
        let atoms = tree.leaf_paths().into_iter().map(|p| Atom { point: p.path, weight: p.weight }).collect();
        DiscreteMeasure { dim: tree.horizon(), atoms: merge_atoms(atoms) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Mean of each marginal: `m_k = sum_atoms w * y_k`.
    pub fn marginal_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.dim];
        for atom in &self.atoms {
            for (m, y) in means.iter_mut().zip(&atom.point) {
                *m += atom.weight * y;
            }
        }
        means
    }

    /// Expectation of `f` under the measure.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(&a.point)).sum()
    }

    /// Shift every atom by `offset`.
    pub fn translate(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: offset.len() });
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { point: a.point.iter().zip(offset).map(|(y, o)| y + o).collect(), weight: a.weight })
            .collect();
        Ok(DiscreteMeasure { dim: self.dim, atoms: merge_atoms(atoms) })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MeasureDocument =
            serde_json::from_str(text).map_err(|e| Error::Structure(format!("measure JSON: {e}")))?;
        DiscreteMeasure::try_from(doc)
    }
}

fn merge_atoms(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.sort_by(|a, b| lex_cmp(&a.point, &b.point));
    let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
    for atom in atoms {
        // Points within MERGE_TOL share a first coordinate up to MERGE_TOL, so
        // only the tail of the sorted list can hold a match.
        let hit = merged
            .iter_mut()
            .rev()
            .take_while(|m| atom.point[0] - m.point[0] <= MERGE_TOL)
            .find(|m| same_point(&m.point, &atom.point));
        match hit {
            Some(m) => m.weight += atom.weight,
            None => merged.push(atom),
        }
    }
    merged
}

/// Image of the type law under an adapted map: each leaf path contributes
/// its weight at the action path read off the map node by node.
pub fn pushforward(tree: &ScenarioTree, map: &AdaptedMap) -> Result<DiscreteMeasure> {
    if map.len() != tree.len() {
        return Err(Error::Structure(format!("map defines {} node actions, tree has {} nodes", map.len(), tree.len())));
    }
    let atoms = tree
        .leaves()
        .map(|leaf| {
            let point = tree.ancestry(leaf).into_iter().map(|n| map.action(n)).collect::<Vec<_>>();
            Atom { point, weight: tree.path_weight(leaf) }
        })
        .collect::<Vec<_>>();
    if atoms.iter().flat_map(|a| &a.point).any(|y| !y.is_finite()) {
        return Err(Error::Structure("map has non-finite actions".into()));
    }
    Ok(DiscreteMeasure { dim: tree.horizon(), atoms: merge_atoms(atoms) })
}
