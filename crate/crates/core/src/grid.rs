//! Discretized latent domains and densities on them.
//!
//! A [`MixingGrid`] carries the dominating measure ν as per-node masses:
//! quadrature weights for the continuous part and unit masses for discrete
//! atoms. A [`MixingDensity`] is a vector of nonnegative values on a grid
//! that integrates to one under ν.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;

/// Normalization is skipped when the mass is already this close to one, so
/// that normalizing twice returns bit-identical values.
const NORMALIZED_SLACK: f64 = 1e-13;

/// How the continuous part of `[lo, hi]` is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadratureRule {
    /// `m` equal cells, one node at each cell center.
    #[default]
    Midpoint,
    /// `m` equally spaced nodes including both endpoints.
    Trapezoid,
    /// `m` cells equally spaced in `ln u`, node at the geometric cell center
    /// and weight equal to the cell length. Requires `lo > 0`.
    LogMidpoint,
}

impl QuadratureRule {
    pub fn name(self) -> &'static str {
        match self {
            QuadratureRule::Midpoint => "midpoint",
            QuadratureRule::Trapezoid => "trapezoid",
            QuadratureRule::LogMidpoint => "log-midpoint",
        }
    }
}

impl FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid" | "midpoint" => Ok(QuadratureRule::Midpoint),
            "trap" | "trapezoid" => Ok(QuadratureRule::Trapezoid),
            "log" | "log-midpoint" => Ok(QuadratureRule::LogMidpoint),
            other => Err(Error::InvalidGrid(format!("unknown quadrature rule `{other}`"))),
        }
    }
}

/// Latent-variable domain with its dominating measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    atom: Vec<bool>,
    lo: f64,
    hi: f64,
}

impl MixingGrid {
    /// `m` continuous nodes on `[lo, hi]` under `rule`, plus one unit-mass node
    /// per entry of `atoms`.
    pub fn build(lo: f64, hi: f64, m: usize, rule: QuadratureRule, atoms: &[f64]) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidGrid(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if m == 0 {
            return Err(Error::InvalidGrid("grid needs at least one continuous node".into()));
        }
        let (cnodes, cweights) = continuous_nodes(lo, hi, m, rule)?;
        let mut entries: Vec<(f64, f64, bool)> = cnodes.into_iter().zip(cweights).map(|(u, w)| (u, w, false)).collect();
        entries.extend(atoms.iter().map(|&a| (a, 1.0, true)));
        Self::from_entries(entries, lo, hi)
    }

    /// Purely discrete domain: unit mass at each atom.
    pub fn atoms(atoms: &[f64]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidGrid("no atoms given".into()));
        }
        let lo = atoms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::from_entries(atoms.iter().map(|&a| (a, 1.0, true)).collect(), lo, hi)
    }

    /// Reassemble a grid from its stored parts (e.g. after deserialization).
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>, atom: Vec<bool>, lo: f64, hi: f64) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::Shape {
                expected: nodes.len(),
                got: weights.len(),
            });
        }
        if nodes.len() != atom.len() {
            return Err(Error::Shape {
                expected: nodes.len(),
                got: atom.len(),
            });
        }
        let grid = MixingGrid {
            nodes,
            weights,
            atom,
            lo,
            hi,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn from_entries(mut entries: Vec<(f64, f64, bool)>, lo: f64, hi: f64) -> Result<Self> {
        // atoms sort ahead of a continuous node at the same location
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.2.cmp(&a.2)));
        let grid = MixingGrid {
            nodes: entries.iter().map(|e| e.0).collect(),
            weights: entries.iter().map(|e| e.1).collect(),
            atom: entries.iter().map(|e| e.2).collect(),
            lo,
            hi,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidGrid("empty grid".into()));
        }
        if !(self.lo <= self.hi) {
            return Err(Error::InvalidGrid("support has lo > hi".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidGrid(format!("node weight {w} is not positive")));
        }
        if self.nodes.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        let mut last_cont = f64::NEG_INFINITY;
        let mut atoms: Vec<f64> = Vec::new();
        for (&u, &is_atom) in self.nodes.iter().zip(&self.atom) {
            if is_atom {
                atoms.push(u);
            } else {
                if u <= last_cont {
                    return Err(Error::InvalidGrid("continuous nodes not strictly increasing".into()));
                }
                if u < self.lo || u > self.hi {
                    return Err(Error::InvalidGrid(format!(
                        "continuous node {u} outside [{}, {}]",
                        self.lo, self.hi
                    )));
                }
                last_cont = u;
            }
        }
        atoms.sort_by(f64::total_cmp);
        if atoms.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGrid("duplicate atoms".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// ν-mass carried by each node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom_flags(&self) -> &[bool] {
        &self.atom
    }

    pub fn is_atom(&self, i: usize) -> bool {
        self.atom[i]
    }

    pub fn atom_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.atom.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Total ν-mass of the grid.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ values_j ν_j`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(values.iter().zip(&self.weights).map(|(v, w)| v * w).sum())
    }

    /// Rescale `values` by one positive constant so they integrate to one.
    pub fn normalize(self: &Arc<Self>, values: Vec<f64>) -> Result<MixingDensity> {
        MixingDensity::from_values(Arc::clone(self), values)
    }
}

fn continuous_nodes(lo: f64, hi: f64, m: usize, rule: QuadratureRule) -> Result<(Vec<f64>, Vec<f64>)> {
    let mf = m as f64;
    match rule {
        QuadratureRule::Midpoint => {
            let h = (hi - lo) / mf;
            let nodes = (0..m).map(|j| lo + (j as f64 + 0.5) * h).collect();
            Ok((nodes, alloc::vec![h; m]))
        }
        QuadratureRule::Trapezoid => {
            if m < 2 {
                return Err(Error::InvalidGrid("trapezoid rule needs at least two nodes".into()));
            }
            let h = (hi - lo) / (mf - 1.0);
            let mut nodes: Vec<f64> = (0..m).map(|j| lo + j as f64 * h).collect();
            nodes[m - 1] = hi;
            let mut weights = alloc::vec![h; m];
            weights[0] = 0.5 * h;
            weights[m - 1] = 0.5 * h;
            Ok((nodes, weights))
        }
        QuadratureRule::LogMidpoint => {
            if lo <= 0.0 {
                return Err(Error::InvalidGrid("log-spaced grid needs lo > 0".into()));
            }
            let (a, b) = (math::ln(lo), math::ln(hi));
            let h = (b - a) / mf;
            let edge = |j: usize| if j == m { hi } else { math::exp(a + j as f64 * h) };
            let nodes = (0..m).map(|j| math::exp(a + (j as f64 + 0.5) * h)).collect();
            let weights = (0..m).map(|j| edge(j + 1) - edge(j)).collect();
            Ok((nodes, weights))
        }
    }
}

/// Nonnegative values on a grid integrating to one under ν.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDensity {
    grid: Arc<MixingGrid>,
    values: Vec<f64>,
}

impl MixingDensity {
    /// Normalize arbitrary nonnegative values into a density.
    pub fn from_values(grid: Arc<MixingGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("density value {v} is negative or not finite")));
        }
        let mass = grid.integrate(&values)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::DegenerateDensity(mass));
        }
        let mut values = values;
        if (mass - 1.0).abs() > NORMALIZED_SLACK {
            let scale = 1.0 / mass;
            values.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(MixingDensity { grid, values })
    }

    /// Constant density with respect to ν.
    pub fn uniform(grid: Arc<MixingGrid>) -> Self {
        let c = 1.0 / grid.total_mass();
        let values = alloc::vec![c; grid.len()];
        MixingDensity { grid, values }
    }

    /// All mass on node `index`.
    pub fn point_mass(grid: Arc<MixingGrid>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::Range(format!("node {index} outside grid of {}", grid.len())));
        }
        let mut values = alloc::vec![0.0; grid.len()];
        values[index] = 1.0 / grid.weights()[index];
        Ok(MixingDensity { grid, values })
    }

    /// Density built from per-node masses `π_j` (so `values_j = π_j / ν_j`).
    pub fn from_masses(grid: Arc<MixingGrid>, masses: &[f64]) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: masses.len(),
            });
        }
        let values = masses.iter().zip(grid.weights()).map(|(p, w)| p / w).collect();
        Self::from_values(grid, values)
    }

    /// Pointwise average of densities sharing one grid.
    ///
    /// The result does not depend on the order of `densities`, bit for bit.
    pub fn average(densities: &[MixingDensity]) -> Result<Self> {
        let first = densities
            .first()
            .ok_or_else(|| Error::Data("nothing to average".into()))?;
        if densities.iter().any(|d| d.grid != first.grid) {
            return Err(Error::InvalidGrid("averaged densities live on different grids".into()));
        }
        let mut column = alloc::vec![0.0; densities.len()];
        let acc = (0..first.values.len())
            .map(|j| {
                column.iter_mut().zip(densities).for_each(|(c, d)| *c = d.values[j]);
                math::order_free_mean(&mut column)
            })
            .collect();
        Self::from_values(Arc::clone(&first.grid), acc)
    }

    pub(crate) fn from_normalized_unchecked(grid: Arc<MixingGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        MixingDensity { grid, values }
    }

    pub fn grid(&self) -> &Arc<MixingGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Probability mass `p(u_j) ν_j` at each node.
    pub fn masses(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * w)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    /// Mass carried by discrete atoms.
    pub fn atom_mass(&self) -> f64 {
        self.grid
            .atom_indices()
            .map(|i| self.values[i] * self.grid.weights()[i])
            .sum()
    }

    /// Mean of `g(u)` under the density.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(self.masses())
            .map(|(&u, m)| g(u) * m)
            .sum()
    }
}

/// Parsed form of `lo:hi:m[:rule][+atom@x,...]`.
///
/// ```
/// use predrec_core::GridSpec;
/// let spec: GridSpec = "-1:1:200+atom@0".parse().unwrap();
/// assert_eq!(spec.atoms, vec![0.0]);
/// assert_eq!(spec.build().unwrap().len(), 201);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
    pub rule: QuadratureRule,
    pub atoms: Vec<f64>,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, m: usize) -> Self {
        GridSpec {
            lo,
            hi,
            m,
            rule: QuadratureRule::Midpoint,
            atoms: Vec::new(),
        }
    }

    pub fn build(&self) -> Result<MixingGrid> {
        MixingGrid::build(self.lo, self.hi, self.m, self.rule, &self.atoms)
    }
}

impl core::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.m)?;
        if self.rule != QuadratureRule::Midpoint {
            write!(f, ":{}", self.rule.name())?;
        }
        for (i, a) in self.atoms.iter().enumerate() {
            write!(f, "{}atom@{a}", if i == 0 { "+" } else { "," })?;
        }
        Ok(())
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidGrid(format!("`{s}`: {msg}"));
        let mut parts = s.trim().split('+');
        let body = parts.next().unwrap_or_default();
        let fields: Vec<&str> = body.split(':').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad("expected lo:hi:m[:rule]".to_string()));
        }
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{t}`")));
        let lo = num(fields[0])?;
        let hi = num(fields[1])?;
        let m = fields[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(format!("bad node count `{}`", fields[2])))?;
        let rule = match fields.get(3) {
            Some(r) => r.trim().parse()?,
            None => QuadratureRule::Midpoint,
        };
        let mut atoms = Vec::new();
        for group in parts {
            for item in group.split(',') {
                let loc = item
                    .trim()
                    .strip_prefix("atom@")
                    .ok_or_else(|| bad(format!("expected atom@x, got `{item}`")))?;
                atoms.push(num(loc)?);
            }
        }
        Ok(GridSpec { lo, hi, m, rule, atoms })
    }
}
