//! Overlapping domain decomposition of a fine mesh driven by a coarse
//! mesh.
//!
//! Every coarse element spawns one subdomain: the fine elements it
//! contains, grown by a number of overlap layers. A layer adds all fine
//! elements incident to an interior node of the current set; growth never
//! passes through Dirichlet boundary nodes, so subdomains cannot leak
//! around re-entrant corners. The local dof set of a subdomain contains
//! the free nodes completely surrounded by its elements, which imposes a
//! homogeneous Dirichlet condition on the subdomain boundary.

use crate::assembly::FeProblem;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{ancestor_element, StructuredMesh};

/// Overlapping decomposition of a fine mesh into coarse-element
/// subdomains.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Number of subdomains (= number of coarse elements).
    pub n_sub: usize,
    /// Owning subdomain of each fine element (by coarse ancestry).
    pub owner: Vec<usize>,
    /// Fine elements of each subdomain after overlap growth, ascending.
    pub local_elems: Vec<Vec<usize>>,
    /// Free dofs interior to each subdomain, ascending.
    pub local_dofs: Vec<Vec<usize>>,
    /// Number of growth layers applied.
    pub overlap_layers: usize,
    /// Largest coarse element diameter.
    pub h_coarse: f64,
    /// Geometric overlap width: layers times the fine grid spacing.
    pub delta: f64,
    /// Greedy coloring of the subdomain intersection graph.
    pub colors: Vec<usize>,
    /// Number of colors used.
    pub n_colors: usize,
}

fn min_cell_width(mesh: &StructuredMesh) -> f64 {
    (0..mesh.spec.dim)
        .map(|a| mesh.spec.extents[a] / mesh.n_axis[a] as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Number of overlap layers realizing a target overlap-to-coarse ratio:
/// the ratio times the coarse-to-fine width quotient, rounded, and at
/// least one layer.
pub fn overlap_layers_for_ratio(
    coarse: &StructuredMesh,
    fine: &StructuredMesh,
    ratio: f64,
) -> usize {
    let layers = (ratio * min_cell_width(coarse) / min_cell_width(fine)).round();
    (layers as usize).max(1)
}

fn element_diameter(mesh: &StructuredMesh, el: &[usize]) -> f64 {
    let mut d2 = 0.0f64;
    for (i, &a) in el.iter().enumerate() {
        for &b in &el[i + 1..] {
            let pa = mesh.nodes[a];
            let pb = mesh.nodes[b];
            let dist2 = (0..3).map(|c| (pa[c] - pb[c]) * (pa[c] - pb[c])).sum();
            d2 = f64::max(d2, dist2);
        }
    }
    d2.sqrt()
}

/// Builds the overlapping decomposition of `fine` induced by the elements
/// of `coarse`, with the given number of overlap layers.
pub fn build_decomposition(
    coarse: &StructuredMesh,
    fine: &StructuredMesh,
    overlap_layers: usize,
) -> Result<Decomposition> {
    if coarse.spec != fine.spec {
        return Err(Error::NonNested(
            "decomposition needs nested meshes of the same domain".to_string(),
        ));
    }
    if fine.level < coarse.level {
        return Err(Error::NonNested(format!(
            "fine level {} is below coarse level {}",
            fine.level, coarse.level
        )));
    }
    let gap = fine.level - coarse.level;
    for a in 0..coarse.spec.dim {
        if coarse.n_axis[a] << gap != fine.n_axis[a] {
            return Err(Error::NonNested(format!(
                "cell counts {} and {} on axis {a} differ by other than 2^{gap}",
                coarse.n_axis[a], fine.n_axis[a]
            )));
        }
    }
    let dim = coarse.spec.dim;
    let n_sub = coarse.elements.len();

    let owner: Vec<usize> = fine
        .elem_cell
        .iter()
        .map(|&(cell, child)| {
            let (ac, ach) = ancestor_element(dim, cell, child, gap);
            coarse
                .element_at(ac, ach)
                .expect("nested meshes share every ancestor cell")
        })
        .collect();

    // Node-to-element incidence on the fine mesh.
    let mut node_elems: Vec<Vec<usize>> = vec![Vec::new(); fine.nodes.len()];
    for (e, el) in fine.elements.iter().enumerate() {
        for &n in el {
            node_elems[n].push(e);
        }
    }

    let mut local_elems = Vec::with_capacity(n_sub);
    let mut base: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
    for (e, &o) in owner.iter().enumerate() {
        base[o].push(e);
    }
    let mut in_set = vec![false; fine.elements.len()];
    for l in 0..n_sub {
        let mut members = base[l].clone();
        for &e in &members {
            in_set[e] = true;
        }
        let mut frontier = members.clone();
        for _layer in 0..overlap_layers {
            // Interior nodes of the current set admit growth; boundary
            // nodes do not.
            let mut added = Vec::new();
            for &e in &frontier {
                for &n in &fine.elements[e] {
                    if fine.boundary_node[n] {
                        continue;
                    }
                    for &ne in &node_elems[n] {
                        if !in_set[ne] {
                            in_set[ne] = true;
                            added.push(ne);
                        }
                    }
                }
            }
            members.extend_from_slice(&added);
            frontier = added;
        }
        members.sort_unstable();
        for &e in &members {
            in_set[e] = false;
        }
        local_elems.push(members);
    }

    // Local dofs: free nodes whose every incident element lies inside the
    // subdomain.
    let mut local_dofs = Vec::with_capacity(n_sub);
    for members in &local_elems {
        for &e in members {
            in_set[e] = true;
        }
        let mut dofs = Vec::new();
        let mut seen = vec![false; fine.nodes.len()];
        for &e in members {
            for &n in &fine.elements[e] {
                if seen[n] {
                    continue;
                }
                seen[n] = true;
                if fine.boundary_node[n] {
                    continue;
                }
                if node_elems[n].iter().all(|&ne| in_set[ne]) {
                    dofs.push(fine.free_dof_map[n].expect("free node has a dof"));
                }
            }
        }
        for &e in members {
            in_set[e] = false;
        }
        dofs.sort_unstable();
        local_dofs.push(dofs);
    }

    let h_coarse = coarse
        .elements
        .iter()
        .map(|el| element_diameter(coarse, el))
        .fold(0.0f64, f64::max);
    let delta = overlap_layers as f64 * min_cell_width(fine);

    // Greedy coloring of the dof-sharing graph: subdomains whose local
    // dof sets intersect receive different colors, so same-colored local
    // solves touch disjoint unknowns.
    let mut dof_subs: Vec<Vec<usize>> = vec![Vec::new(); fine.n_free];
    for (l, dofs) in local_dofs.iter().enumerate() {
        for &d in dofs {
            dof_subs[d].push(l);
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
    for subs in &dof_subs {
        for (i, &a) in subs.iter().enumerate() {
            for &b in &subs[i + 1..] {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    let mut colors = vec![usize::MAX; n_sub];
    let mut n_colors = 0usize;
    for l in 0..n_sub {
        adj[l].sort_unstable();
        adj[l].dedup();
        let mut used: Vec<bool> = vec![false; n_colors + 1];
        for &nb in &adj[l] {
            if colors[nb] != usize::MAX && colors[nb] < used.len() {
                used[colors[nb]] = true;
            }
        }
        let c = (0..).find(|&c| c >= used.len() || !used[c]).unwrap();
        colors[l] = c;
        n_colors = n_colors.max(c + 1);
    }

    Ok(Decomposition {
        n_sub,
        owner,
        local_elems,
        local_dofs,
        overlap_layers,
        h_coarse,
        delta,
        colors,
        n_colors,
    })
}

/// Shifted local operator `K_l - shift * M_l` on the interior dofs of
/// subdomain `l`.
///
/// Fails with `ShiftSafety` when the shifted matrix has a non-positive
/// diagonal entry: the local solves require positive definiteness, and a
/// non-positive diagonal proves it is lost at this shift.
pub fn local_shifted_operator(
    p: &FeProblem,
    d: &Decomposition,
    l: usize,
    shift: f64,
) -> Result<CsrMatrix> {
    let dofs = &d.local_dofs[l];
    let kl = p.k.extract_principal(dofs);
    let ml = p.m.extract_principal(dofs);
    let a = kl.add_scaled(-shift, &ml);
    if a.diagonal().iter().any(|&di| di <= 0.0) {
        return Err(Error::ShiftSafety {
            component: format!("subdomain {l}"),
            shift,
        });
    }
    Ok(a)
}

/// Gathers the local-dof entries of a global vector for subdomain `l`.
pub fn restrict(d: &Decomposition, l: usize, global: &[f64]) -> Vec<f64> {
    d.local_dofs[l].iter().map(|&i| global[i]).collect()
}

/// Scatter-adds a local vector of subdomain `l` into a global vector.
pub fn extend(d: &Decomposition, l: usize, local: &[f64], global: &mut [f64]) {
    assert_eq!(local.len(), d.local_dofs[l].len(), "local length mismatch");
    for (&i, &v) in d.local_dofs[l].iter().zip(local) {
        global[i] += v;
    }
}
