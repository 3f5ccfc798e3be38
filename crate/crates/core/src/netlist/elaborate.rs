use std::collections::HashMap;

use thiserror::Error;

use super::circuit::{Circuit, ElementKind, Limit, SourceSpec, GROUND};
use crate::device::{DeviceError, MosParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElaborateError {
    #[error("floating node `{0}`: no DC path to ground")]
    FloatingNode(String),
    #[error("element `{element}` references undeclared model `{model}`")]
    UndeclaredModel { element: String, model: String },
    #[error("element `{element}`: {source}")]
    Device { element: String, source: DeviceError },
}

/// Element with node names resolved to dense indices (0 = ground).
#[derive(Debug, Clone, PartialEq)]
pub enum FlatKind {
    Resistor { a: usize, b: usize, g: f64 },
    Capacitor { a: usize, b: usize, c: f64 },
    Vsource { p: usize, n: usize, branch: usize, src: SourceSpec },
    Isource { p: usize, n: usize, src: SourceSpec },
    Mos { d: usize, g: usize, s: usize, params: MosParams<f64> },
    Vcvs { p: usize, n: usize, cp: usize, cn: usize, gain: f64, limit: Option<Limit>, branch: usize },
    Vccs { p: usize, n: usize, cp: usize, cn: usize, gm: f64, limit: Option<Limit> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatElement {
    pub name: String,
    pub kind: FlatKind,
}

/// Index-resolved circuit ready for MNA stamping.
///
/// Unknown vector layout: node voltages for nodes `1..num_nodes()`, followed
/// by one branch current per voltage-defined element.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatCircuit {
    pub title: String,
    pub elements: Vec<FlatElement>,
    node_names: Vec<String>,
    node_lookup: HashMap<String, usize>,
    branch_names: Vec<String>,
}

impl FlatCircuit {
    /// Number of nodes including ground.
    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn num_branches(&self) -> usize {
        self.branch_names.len()
    }

    pub fn num_unknowns(&self) -> usize {
        self.num_nodes().saturating_sub(1) + self.num_branches()
    }

    /// Unknown index of node `node`, `None` for ground.
    #[inline]
    pub fn node_unknown(&self, node: usize) -> Option<usize> {
        node.checked_sub(1)
    }

    #[inline]
    pub fn branch_unknown(&self, branch: usize) -> usize {
        self.num_nodes() - 1 + branch
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn branch_names(&self) -> &[String] {
        &self.branch_names
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_lookup.get(&name.to_ascii_lowercase()).copied()
    }

    pub fn branch_index(&self, element: &str) -> Option<usize> {
        self.branch_names.iter().position(|b| b.eq_ignore_ascii_case(element))
    }

    pub fn element_index(&self, name: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn is_linear(&self) -> bool {
        self.elements.iter().all(|e| match e.kind {
            FlatKind::Mos { .. } => false,
            FlatKind::Vcvs { limit, .. } | FlatKind::Vccs { limit, .. } => limit.is_none(),
            _ => true,
        })
    }

    /// Per non-ground node: whether a MOS terminal connects to it.
    pub fn device_nodes(&self) -> Vec<bool> {
        let mut on = vec![false; self.num_nodes().saturating_sub(1)];
        for e in &self.elements {
            if let FlatKind::Mos { d, g, s, .. } = e.kind {
                for n in [d, g, s] {
                    if let Some(r) = n.checked_sub(1) {
                        on[r] = true;
                    }
                }
            }
        }
        on
    }

    /// Mutable access to the value record of an independent source.
    pub fn source_mut(&mut self, name: &str) -> Option<&mut SourceSpec> {
        self.elements.iter_mut().find(|e| e.name.eq_ignore_ascii_case(name)).and_then(|e| match &mut e.kind {
            FlatKind::Vsource { src, .. } | FlatKind::Isource { src, .. } => Some(src),
            _ => None,
        })
    }

    /// Names of the unknowns in vector order: `v(node)` then `i(element)`.
    pub fn unknown_names(&self) -> Vec<String> {
        self.node_names[1..]
            .iter()
            .map(|n| format!("v({n})"))
            .chain(self.branch_names.iter().map(|b| format!("i({b})")))
            .collect()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Resolves node names to indices and checks that every node has a DC path
/// to ground.
///
/// Nodes are numbered in order of first appearance; branch currents are
/// numbered in element order.
pub fn elaborate(c: &Circuit) -> Result<FlatCircuit, ElaborateError> {
    let mut flat = FlatCircuit { title: c.title.clone(), ..Default::default() };
    flat.node_names.push(GROUND.to_string());
    flat.node_lookup.insert(GROUND.to_string(), 0);
    if c.elements.is_empty() {
        return Ok(flat);
    }
    for e in &c.elements {
        for n in e.nodes() {
            if !flat.node_lookup.contains_key(n) {
                flat.node_lookup.insert(n.to_string(), flat.node_names.len());
                flat.node_names.push(n.to_string());
            }
        }
    }

    let idx = |n: &str| flat.node_lookup[n];
    let mut uf = UnionFind((0..flat.node_names.len()).collect());
    let mut elements = Vec::with_capacity(c.elements.len());
    let mut branches = Vec::new();
    for e in &c.elements {
        let kind = match &e.kind {
            ElementKind::Resistor { a, b, ohms } => {
                uf.union(idx(a), idx(b));
                FlatKind::Resistor { a: idx(a), b: idx(b), g: 1.0 / ohms }
            }
            ElementKind::Capacitor { a, b, farads } => FlatKind::Capacitor { a: idx(a), b: idx(b), c: *farads },
            ElementKind::VoltageSource { pos, neg, source } => {
                uf.union(idx(pos), idx(neg));
                branches.push(e.name.clone());
                FlatKind::Vsource { p: idx(pos), n: idx(neg), branch: branches.len() - 1, src: *source }
            }
            ElementKind::CurrentSource { pos, neg, source } => {
                FlatKind::Isource { p: idx(pos), n: idx(neg), src: *source }
            }
            ElementKind::Mosfet { drain, gate, source, model, w, l } => {
                let card = c.models.get(model).ok_or_else(|| ElaborateError::UndeclaredModel {
                    element: e.name.clone(),
                    model: model.clone(),
                })?;
                let params = card
                    .with_geometry(*w, *l)
                    .map_err(|source| ElaborateError::Device { element: e.name.clone(), source })?;
                uf.union(idx(drain), idx(source));
                FlatKind::Mos { d: idx(drain), g: idx(gate), s: idx(source), params }
            }
            ElementKind::Vcvs { pos, neg, cpos, cneg, gain, limit } => {
                uf.union(idx(pos), idx(neg));
                branches.push(e.name.clone());
                FlatKind::Vcvs {
                    p: idx(pos),
                    n: idx(neg),
                    cp: idx(cpos),
                    cn: idx(cneg),
                    gain: *gain,
                    limit: *limit,
                    branch: branches.len() - 1,
                }
            }
            ElementKind::Vccs { pos, neg, cpos, cneg, gm, limit } => FlatKind::Vccs {
                p: idx(pos),
                n: idx(neg),
                cp: idx(cpos),
                cn: idx(cneg),
                gm: *gm,
                limit: *limit,
            },
        };
        elements.push(FlatElement { name: e.name.clone(), kind });
    }

    let ground_root = uf.find(0);
    for i in 1..flat.node_names.len() {
        if uf.find(i) != ground_root {
            return Err(ElaborateError::FloatingNode(flat.node_names[i].clone()));
        }
    }
    flat.elements = elements;
    flat.branch_names = branches;
    Ok(flat)
}
