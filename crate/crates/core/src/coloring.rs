//! Conflict graph construction and first-fit greedy coloring.
//!
//! Two devices conflict when they share at least one non-ground unknown,
//! which is exactly when their stamp plans alias a matrix slot or RHS row.
//! Devices with the same color can therefore be stamped concurrently.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColoringError {
    #[error("devices {u} and {v} are adjacent but share color {color}")]
    Conflict { u: usize, v: usize, color: usize },
    #[error("visit order is not a permutation of {n} vertices")]
    BadOrder { n: usize },
}

/// Undirected graph with sorted adjacency lists; vertices are device indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    adjacency: Vec<Vec<u32>>,
}

impl ConflictGraph {
    /// Build from each device's non-ground unknowns by inverting the
    /// node-to-device incidence map.
    pub fn from_device_nodes<N: AsRef<[usize]>>(devices: &[N]) -> Self {
        let n_nodes = devices
            .iter()
            .flat_map(|d| d.as_ref().iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        let mut incident: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for (dev, nodes) in devices.iter().enumerate() {
            let mut nodes = nodes.as_ref().to_vec();
            nodes.sort_unstable();
            nodes.dedup();
            for n in nodes {
                incident[n].push(dev as u32);
            }
        }
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); devices.len()];
        for devs in &incident {
            for (k, &a) in devs.iter().enumerate() {
                for &b in &devs[k + 1..] {
                    adjacency[a as usize].push(b);
                    adjacency[b as usize].push(a);
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                adjacency[a].push(b as u32);
                adjacency[b].push(a as u32);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&(v as u32)).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| {
                list.iter()
                    .filter(move |&&v| v as usize > u)
                    .map(move |&v| (u, v as usize))
            })
            .collect()
    }
}

/// Vertex visit order for greedy coloring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorOrder {
    /// Device (netlist) order.
    #[default]
    Netlist,
    /// Highest degree first; ties by device index.
    DegreeDescending,
}

impl ColorOrder {
    pub fn sequence(self, graph: &ConflictGraph) -> Vec<usize> {
        let mut order: Vec<usize> = (0..graph.vertex_count()).collect();
        if self == Self::DegreeDescending {
            order.sort_by_key(|&v| std::cmp::Reverse(graph.neighbors(v).len()));
        }
        order
    }
}

impl FromStr for ColorOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "netlist" => Ok(Self::Netlist),
            "degree" => Ok(Self::DegreeDescending),
            other => Err(format!(
                "unknown color order '{other}' (expected netlist|degree)"
            )),
        }
    }
}

impl fmt::Display for ColorOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Netlist => "netlist",
            Self::DegreeDescending => "degree",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorSchedule {
    color_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl ColorSchedule {
    /// Build from an explicit assignment. Colors are compacted to `0..C`
    /// preserving their relative order; group members are in device order.
    pub fn from_colors(colors: &[usize]) -> Self {
        let mut used: Vec<usize> = colors.to_vec();
        used.sort_unstable();
        used.dedup();
        let color_of: Vec<usize> = colors
            .iter()
            .map(|c| used.binary_search(c).unwrap())
            .collect();
        let mut groups = vec![Vec::new(); used.len()];
        for (v, &c) in color_of.iter().enumerate() {
            groups[c].push(v);
        }
        Self { color_of, groups }
    }

    pub fn color_of(&self, v: usize) -> usize {
        self.color_of[v]
    }

    pub fn colors(&self) -> &[usize] {
        &self.color_of
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn color_count(&self) -> usize {
        self.groups.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.color_of.len()
    }

    /// Exhaustive edge scan: every edge must join different colors.
    pub fn validate(&self, graph: &ConflictGraph) -> Result<(), ColoringError> {
        for (u, v) in graph.edges() {
            if self.color_of[u] == self.color_of[v] {
                return Err(ColoringError::Conflict {
                    u,
                    v,
                    color: self.color_of[u],
                });
            }
        }
        Ok(())
    }
}

/// First-fit greedy coloring: each vertex gets the smallest color not used by
/// its already-colored neighbors.
pub fn greedy_color(
    graph: &ConflictGraph,
    order: &[usize],
) -> Result<ColorSchedule, ColoringError> {
    let n = graph.vertex_count();
    let mut seen = vec![false; n];
    if order.len() != n
        || order
            .iter()
            .any(|&v| v >= n || std::mem::replace(&mut seen[v], true))
    {
        return Err(ColoringError::BadOrder { n });
    }
    const UNCOLORED: usize = usize::MAX;
    let mut color = vec![UNCOLORED; n];
    // forbidden[c] == v marks color c as taken while coloring v
    let mut forbidden: Vec<usize> = Vec::new();
    for &v in order {
        for &u in graph.neighbors(v) {
            let c = color[u as usize];
            if c != UNCOLORED {
                if c >= forbidden.len() {
                    forbidden.resize(c + 1, UNCOLORED);
                }
                forbidden[c] = v;
            }
        }
        color[v] = (0..).find(|&c| forbidden.get(c) != Some(&v)).unwrap();
    }
    Ok(ColorSchedule::from_colors(&color))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorStats {
    pub colors: usize,
    pub group_sizes: Vec<usize>,
    pub max_degree: usize,
    pub edges: usize,
}

impl ColorStats {
    /// `(group size, number of groups with that size)`, ascending by size.
    pub fn histogram(&self) -> Vec<(usize, usize)> {
        let mut sizes = self.group_sizes.clone();
        sizes.sort_unstable();
        let mut out: Vec<(usize, usize)> = Vec::new();
        for s in sizes {
            match out.last_mut() {
                Some((size, count)) if *size == s => *count += 1,
                _ => out.push((s, 1)),
            }
        }
        out
    }
}

pub fn color_stats(schedule: &ColorSchedule, graph: &ConflictGraph) -> ColorStats {
    ColorStats {
        colors: schedule.color_count(),
        group_sizes: schedule.groups().iter().map(Vec::len).collect(),
        max_degree: graph.max_degree(),
        edges: graph.edge_count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn netlist_order(g: &ConflictGraph) -> Vec<usize> {
        ColorOrder::Netlist.sequence(g)
    }

    #[test]
    fn edgeless() {
        let g = ConflictGraph::from_edges(1000, &[]);
        let s = greedy_color(&g, &netlist_order(&g)).unwrap();
        let st = color_stats(&s, &g);
        assert_eq!(st.colors, 1);
        assert_eq!(st.histogram(), vec![(1000, 1)]);
    }

    #[test]
    fn clique_needs_n_colors() {
        let n = 7;
        let edges: Vec<_> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        let g = ConflictGraph::from_edges(n, &edges);
        for order in [netlist_order(&g), vec![3, 6, 0, 1, 5, 2, 4]] {
            let s = greedy_color(&g, &order).unwrap();
            assert_eq!(s.color_count(), n);
            s.validate(&g).unwrap();
        }
    }

    #[test]
    fn path_first_fit() {
        let g = ConflictGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let s = greedy_color(&g, &[0, 1, 2]).unwrap();
        assert_eq!(s.colors(), &[0, 1, 0]);
        assert_eq!(s.groups(), &[vec![0, 2], vec![1]]);
    }

    #[test]
    fn shared_node_is_an_edge_ground_is_not() {
        // devices list their non-ground unknowns only
        let g = ConflictGraph::from_device_nodes(&[vec![0, 1], vec![0, 2], vec![3]]);
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn bad_order_rejected() {
        let g = ConflictGraph::from_edges(3, &[]);
        assert!(greedy_color(&g, &[0, 0, 1]).is_err());
        assert!(greedy_color(&g, &[0, 1]).is_err());
    }

    #[test]
    fn validate_detects_conflict() {
        let g = ConflictGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let bad = ColorSchedule::from_colors(&[0, 0, 1]);
        assert_eq!(
            bad.validate(&g),
            Err(ColoringError::Conflict {
                u: 0,
                v: 1,
                color: 0
            })
        );
    }

    #[test]
    fn disjoint_cliques() {
        let (groups, c) = (10, 4);
        let devices: Vec<Vec<usize>> = (0..groups * c).map(|i| vec![i / c]).collect();
        let g = ConflictGraph::from_device_nodes(&devices);
        let s = greedy_color(&g, &netlist_order(&g)).unwrap();
        let st = color_stats(&s, &g);
        assert_eq!(st.colors, c);
        assert!(st.group_sizes.iter().all(|&n| n == groups));
    }

    fn random_graph() -> impl Strategy<Value = ConflictGraph> {
        (1usize..60).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n), 0..n * 3)
                .prop_map(move |e| ConflictGraph::from_edges(n, &e))
        })
    }

    proptest! {
        #[test]
        fn greedy_is_valid_bounded_and_deterministic(g in random_graph(), degree in any::<bool>()) {
            let order = if degree { ColorOrder::DegreeDescending } else { ColorOrder::Netlist }.sequence(&g);
            let s = greedy_color(&g, &order).unwrap();
            prop_assert!(s.validate(&g).is_ok());
            prop_assert!(s.color_count() <= g.max_degree() + 1);
            prop_assert_eq!(s.groups().iter().map(Vec::len).sum::<usize>(), g.vertex_count());
            prop_assert!(s.groups().iter().all(|grp| !grp.is_empty()));
            prop_assert_eq!(greedy_color(&g, &order).unwrap(), s);
        }
    }
}
