//! Mixed-dimensional meshes: triangulated rock-matrix sub-domains, branch-wise
//! fracture grids, mortar grids and intersection points.
//!
//! Every fracture is split at its intersection points into *branches*. A
//! branch separates exactly two sub-domains and carries its own 1D grid; the
//! mortar grid of a branch doubles as its fracture grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-12;

pub type Point = [f64; 2];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

/// Outer side of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    /// Side of the unit square containing `p`, if any.
    pub fn of_point(p: Point) -> Option<Side> {
        if p[0].abs() < GEOM_TOL {
            Some(Side::Left)
        } else if (p[0] - 1.0).abs() < GEOM_TOL {
            Some(Side::Right)
        } else if p[1].abs() < GEOM_TOL {
            Some(Side::Bottom)
        } else if (p[1] - 1.0).abs() < GEOM_TOL {
            Some(Side::Top)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }

    pub fn tangent(&self) -> Point {
        let l = self.length();
        [(self.b[0] - self.a[0]) / l, (self.b[1] - self.a[1]) / l]
    }

    /// Arc-length coordinate of the orthogonal projection of `p`.
    pub fn param(&self, p: Point) -> f64 {
        let t = self.tangent();
        let d = sub(p, self.a);
        d[0] * t[0] + d[1] * t[1]
    }

    pub fn at(&self, s: f64) -> Point {
        let t = self.tangent();
        [self.a[0] + s * t[0], self.a[1] + s * t[1]]
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        let s = self.param(p).clamp(0.0, self.length());
        dist(self.at(s), p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub point: Point,
    pub fractures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractureNetwork {
    pub fractures: Vec<Segment>,
    pub intersections: Vec<Intersection>,
    pub aperture: f64,
}

impl FractureNetwork {
    /// Builds a network and computes all pairwise intersection points,
    /// including T-junctions where one fracture ends on another.
    pub fn new(fractures: Vec<Segment>, aperture: f64) -> Self {
        let mut points: Vec<Intersection> = Vec::new();
        for i in 0..fractures.len() {
            for j in i + 1..fractures.len() {
                let Some(p) = segment_intersection(&fractures[i], &fractures[j]) else {
                    continue;
                };
                match points.iter_mut().find(|q| dist(q.point, p) < 1e-10) {
                    Some(q) => {
                        for id in [i, j] {
                            if !q.fractures.contains(&id) {
                                q.fractures.push(id);
                            }
                        }
                    }
                    None => points.push(Intersection {
                        point: p,
                        fractures: vec![i, j],
                    }),
                }
            }
        }
        for q in &mut points {
            q.fractures.sort_unstable();
        }
        points.sort_by(|a, b| {
            a.point[0]
                .total_cmp(&b.point[0])
                .then(a.point[1].total_cmp(&b.point[1]))
        });
        Self {
            fractures,
            intersections: points,
            aperture,
        }
    }

    /// The regular six-fracture network of the benchmark.
    pub fn benchmark() -> Self {
        let s = |a: Point, b: Point| Segment::new(a, b);
        Self::new(
            vec![
                s([0.5, 0.0], [0.5, 1.0]),
                s([0.0, 0.5], [1.0, 0.5]),
                s([0.75, 0.5], [0.75, 1.0]),
                s([0.5, 0.75], [1.0, 0.75]),
                s([0.625, 0.5], [0.625, 0.75]),
                s([0.5, 0.625], [0.75, 0.625]),
            ],
            1e-4,
        )
    }

    /// One horizontal fracture through the middle of the unit square.
    pub fn single() -> Self {
        Self::new(vec![Segment::new([0.0, 0.5], [1.0, 0.5])], 1e-4)
    }
}

fn segment_intersection(s: &Segment, t: &Segment) -> Option<Point> {
    let r = sub(s.b, s.a);
    let q = sub(t.b, t.a);
    let denom = cross(r, q);
    if denom.abs() < GEOM_TOL {
        return None;
    }
    let w = sub(t.a, s.a);
    let u = cross(w, q) / denom;
    let v = cross(w, r) / denom;
    let eps = 1e-12;
    if (-eps..=1.0 + eps).contains(&u) && (-eps..=1.0 + eps).contains(&v) {
        Some([s.a[0] + u * r[0], s.a[1] + u * r[1]])
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MortarMode {
    Coarser,
    Conforming,
    Finer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MortarSpec {
    pub mode: MortarMode,
    pub ratio: usize,
}

impl MortarSpec {
    pub const CONFORMING: MortarSpec = MortarSpec {
        mode: MortarMode::Conforming,
        ratio: 1,
    };
}

/// Mortar grid layout, with optional per-fracture overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortarConfig {
    pub default: MortarSpec,
    pub overrides: BTreeMap<usize, MortarSpec>,
}

impl Default for MortarConfig {
    fn default() -> Self {
        Self::conforming()
    }
}

impl MortarConfig {
    pub fn conforming() -> Self {
        Self::uniform(MortarMode::Conforming, 1)
    }

    pub fn uniform(mode: MortarMode, ratio: usize) -> Self {
        Self {
            default: MortarSpec { mode, ratio },
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_fracture(mut self, fracture: usize, mode: MortarMode, ratio: usize) -> Self {
        self.overrides.insert(fracture, MortarSpec { mode, ratio });
        self
    }

    pub fn spec(&self, fracture: usize) -> MortarSpec {
        self.overrides.get(&fracture).copied().unwrap_or(self.default)
    }
}

/// Ordered 1D grid given by arc-length node coordinates starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1d {
    pub nodes: Vec<f64>,
}

impl Grid1d {
    pub fn uniform(length: f64, cells: usize) -> Self {
        let h = length / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        nodes[cells] = length;
        Self { nodes }
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn length(&self) -> f64 {
        self.nodes.last().copied().unwrap_or(0.0) - self.nodes.first().copied().unwrap_or(0.0)
    }

    pub fn cell_length(&self, c: usize) -> f64 {
        self.nodes[c + 1] - self.nodes[c]
    }

    pub fn cell_lengths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn midpoint(&self, c: usize) -> f64 {
        0.5 * (self.nodes[c] + self.nodes[c + 1])
    }

    /// Derives a mortar grid from a trace grid.
    pub fn derive_mortar(&self, spec: MortarSpec, branch: usize) -> Result<Grid1d> {
        let n = self.n_cells();
        let ratio = spec.ratio.max(1);
        match spec.mode {
            MortarMode::Conforming => Ok(self.clone()),
            MortarMode::Coarser => {
                if spec.ratio == 0 || !n.is_multiple_of(ratio) {
                    return Err(Error::MortarRatio {
                        branch,
                        cells: n,
                        ratio: spec.ratio,
                    });
                }
                Ok(Grid1d {
                    nodes: self.nodes.iter().step_by(ratio).copied().collect(),
                })
            }
            MortarMode::Finer => {
                if spec.ratio == 0 {
                    return Err(Error::MortarRatio {
                        branch,
                        cells: n,
                        ratio: 0,
                    });
                }
                let mut nodes = Vec::with_capacity(n * ratio + 1);
                for c in 0..n {
                    let (a, b) = (self.nodes[c], self.nodes[c + 1]);
                    for k in 0..ratio {
                        nodes.push(a + (b - a) * k as f64 / ratio as f64);
                    }
                }
                nodes.push(self.nodes[n]);
                Ok(Grid1d { nodes })
            }
        }
    }
}

/// What a fracture branch meets at one of its two ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchEnd {
    Intersection(usize),
    Boundary(Side),
    Free,
}

/// A piece of a fracture between consecutive intersection or end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub fracture: usize,
    pub segment: Segment,
    pub ends: [BranchEnd; 2],
    /// Sub-domains on the left (`+ν`) and right (`−ν`) of the tangent.
    pub sides: [usize; 2],
    pub trace: Grid1d,
    pub mortar: Grid1d,
}

impl Branch {
    pub fn length(&self) -> f64 {
        self.segment.length()
    }

    /// Left-pointing unit normal of the branch tangent.
    pub fn normal(&self) -> Point {
        let t = self.segment.tangent();
        [-t[1], t[0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeTag {
    Interior,
    Boundary(Side),
    Fracture { branch: usize },
}

/// Triangle edge. The edge normal points out of `triangles[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshEdge {
    pub vertices: [usize; 2],
    pub triangles: (usize, Option<usize>),
    pub tag: EdgeTag,
    pub length: f64,
    pub midpoint: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainMesh {
    pub id: usize,
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<MeshEdge>,
    /// `triangle_edges[t][k]` is the edge opposite local vertex `k`.
    pub triangle_edges: Vec<[usize; 3]>,
}

impl SubdomainMesh {
    /// Builds edge adjacency with deterministic numbering: triangles sorted by
    /// centroid, edges by midpoint. `classify` tags boundary edges.
    pub fn from_triangles(
        id: usize,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        classify: impl Fn(Point, Point) -> Result<EdgeTag>,
    ) -> Result<Self> {
        let mut triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .map(|t| {
                if signed_area(&vertices, t) < 0.0 {
                    [t[0], t[2], t[1]]
                } else {
                    t
                }
            })
            .collect();
        let centroid = |t: &[usize; 3]| {
            let c = t
                .iter()
                .fold([0.0, 0.0], |acc, &v| [acc[0] + vertices[v][0], acc[1] + vertices[v][1]]);
            [c[0] / 3.0, c[1] / 3.0]
        };
        triangles.sort_by(|a, b| {
            let (ca, cb) = (centroid(a), centroid(b));
            ca[0].total_cmp(&cb[0]).then(ca[1].total_cmp(&cb[1]))
        });

        let mut map: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push((ti, k));
            }
        }
        let mut keyed: Vec<_> = map.into_iter().collect();
        let mid = |k: &(usize, usize)| {
            let (a, b) = (vertices[k.0], vertices[k.1]);
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        };
        keyed.sort_by(|a, b| {
            let (ma, mb) = (mid(&a.0), mid(&b.0));
            ma[0].total_cmp(&mb[0]).then(ma[1].total_cmp(&mb[1]))
        });

        let mut triangle_edges = vec![[usize::MAX; 3]; triangles.len()];
        let mut edges = Vec::with_capacity(keyed.len());
        for (ei, (key, owners)) in keyed.into_iter().enumerate() {
            if owners.len() > 2 {
                return Err(Error::Geometry(format!(
                    "sub-domain {id}: edge ({}, {}) shared by {} triangles",
                    key.0,
                    key.1,
                    owners.len()
                )));
            }
            for &(ti, k) in &owners {
                triangle_edges[ti][k] = ei;
            }
            let (pa, pb) = (vertices[key.0], vertices[key.1]);
            let tag = if owners.len() == 2 {
                EdgeTag::Interior
            } else {
                classify(pa, pb)?
            };
            edges.push(MeshEdge {
                vertices: [key.0, key.1],
                triangles: (owners[0].0, owners.get(1).map(|o| o.0)),
                tag,
                length: dist(pa, pb),
                midpoint: mid(&key),
            });
        }
        Ok(Self {
            id,
            vertices,
            triangles,
            edges,
            triangle_edges,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, self.triangles[t])
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Orientation sign of edge `triangle_edges[t][k]` relative to triangle `t`.
    pub fn edge_sign(&self, t: usize, k: usize) -> f64 {
        if self.edges[self.triangle_edges[t][k]].triangles.0 == t {
            1.0
        } else {
            -1.0
        }
    }
}

fn signed_area(vertices: &[Point], t: [usize; 3]) -> f64 {
    let [a, b, c] = t.map(|v| vertices[v]);
    0.5 * cross(sub(b, a), sub(c, a))
}

/// Boundary edges of one sub-domain lying on one branch, ordered along the
/// branch tangent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMap {
    pub subdomain: usize,
    pub branch: usize,
    pub edges: Vec<usize>,
    /// Trace grid in branch arc length, built from the edge endpoints.
    pub grid: Grid1d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDimMesh {
    pub network: FractureNetwork,
    pub subdomains: Vec<SubdomainMesh>,
    pub branches: Vec<Branch>,
    /// `traces[i]` lists the trace maps of sub-domain `i`, sorted by branch.
    pub traces: Vec<Vec<TraceMap>>,
    pub mortar: MortarConfig,
}

impl MixedDimMesh {
    pub fn n_mortar(&self) -> usize {
        self.branches.iter().map(|b| b.mortar.n_cells()).sum()
    }

    pub fn n_intersections(&self) -> usize {
        self.network.intersections.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.subdomains.iter().map(|s| s.n_cells()).sum()
    }

    /// First global mortar index of each branch, plus the total at the end.
    pub fn mortar_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.branches.len() + 1);
        let mut acc = 0;
        for b in &self.branches {
            offsets.push(acc);
            acc += b.mortar.n_cells();
        }
        offsets.push(acc);
        offsets
    }

    /// Mortar cell lengths in global mortar order.
    pub fn mortar_widths(&self) -> Vec<f64> {
        self.branches.iter().flat_map(|b| b.mortar.cell_lengths()).collect()
    }

    pub fn trace(&self, subdomain: usize, branch: usize) -> Option<&TraceMap> {
        self.traces[subdomain].iter().find(|t| t.branch == branch)
    }
}

/// Interior point spacing used for each benchmark level.
pub fn benchmark_spacing(level: u8) -> Result<f64> {
    match level {
        1 => Ok(0.13),
        2 => Ok(0.0345),
        3 => Ok(0.0224),
        other => Err(Error::InvalidLevel(other)),
    }
}

/// Builds the six-fracture benchmark mesh at refinement `level` (1, 2 or 3).
pub fn build_benchmark_geometry(level: u8, mortar: &MortarConfig) -> Result<MixedDimMesh> {
    build_benchmark_geometry_with_spacing(level, mortar, benchmark_spacing(level)?)
}

/// As [`build_benchmark_geometry`] with an explicit interior spacing `h`.
pub fn build_benchmark_geometry_with_spacing(level: u8, mortar: &MortarConfig, h: f64) -> Result<MixedDimMesh> {
    if !(1..=3).contains(&level) {
        return Err(Error::InvalidLevel(level));
    }
    let network = FractureNetwork::benchmark();
    let cells = |fracture: usize, length: f64| -> usize {
        let class = if (length - 0.5).abs() < 1e-9 {
            0
        } else if (length - 0.25).abs() < 1e-9 {
            1
        } else {
            2
        };
        match (level, fracture, class) {
            (1, _, 0) => 3,
            (1, _, 1) => 2,
            (1, _, _) => 1,
            (2, 0 | 1, 0) => 6,
            (2, 0 | 1, _) => 4,
            (2, 2 | 3, _) => 4,
            (2, _, _) => 6,
            (_, _, 0) => 19,
            (_, _, 1) => 10,
            _ => 5,
        }
    };
    build_network_mesh(network, mortar, h, cells)
}

/// Triangulates the regions cut out by `network`. `cells(fracture, length)`
/// fixes the trace resolution per branch; `h` is the interior spacing.
pub fn build_network_mesh(
    network: FractureNetwork,
    mortar: &MortarConfig,
    h: f64,
    cells: impl Fn(usize, f64) -> usize,
) -> Result<MixedDimMesh> {
    let regions = discover_regions(&network)?;
    let mut branches = split_branches(&network, &regions)?;
    for b in &mut branches {
        b.trace = Grid1d::uniform(b.length(), cells(b.fracture, b.length()));
        b.mortar = b.trace.derive_mortar(mortar.spec(b.fracture), b.id)?;
    }

    let mut subdomains = Vec::with_capacity(regions.len());
    for (id, r) in regions.iter().enumerate() {
        subdomains.push(triangulate_region(id, r, &branches, h)?);
    }
    finish_mesh(network, subdomains, branches, mortar.clone())
}

/// Two sub-domains separated by the midline fracture, each meshed with `n × n`
/// crossed rectangles.
pub fn build_single_fracture_geometry(n: usize, mortar: &MortarConfig) -> Result<MixedDimMesh> {
    if n == 0 {
        return Err(Error::Geometry("single-fracture mesh needs n >= 1".into()));
    }
    let network = FractureNetwork::single();
    let segment = network.fractures[0];
    let trace = Grid1d::uniform(1.0, n);
    let branch = Branch {
        id: 0,
        fracture: 0,
        segment,
        ends: [BranchEnd::Boundary(Side::Left), BranchEnd::Boundary(Side::Right)],
        // The left normal of a left-to-right tangent points up.
        sides: [1, 0],
        mortar: trace.derive_mortar(mortar.spec(0), 0)?,
        trace,
    };
    let mut subdomains = Vec::with_capacity(2);
    for (id, (y0, y1)) in [(0.0, 0.5), (0.5, 1.0)].into_iter().enumerate() {
        let (dx, dy) = (1.0 / n as f64, (y1 - y0) / n as f64);
        let mut vertices = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * dx, y0 + j as f64 * dy]);
            }
        }
        let corner = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let c = vertices.len();
                vertices.push([(i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy]);
                let q = [corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1)];
                for k in 0..4 {
                    triangles.push([q[k], q[(k + 1) % 4], c]);
                }
            }
        }
        let fracture_y = 0.5;
        let mesh = SubdomainMesh::from_triangles(id, vertices, triangles, |a, b| {
            if (a[1] - fracture_y).abs() < GEOM_TOL && (b[1] - fracture_y).abs() < GEOM_TOL {
                return Ok(EdgeTag::Fracture { branch: 0 });
            }
            side_tag(a, b)
        })?;
        subdomains.push(mesh);
    }
    finish_mesh(network, subdomains, vec![branch], mortar.clone())
}

fn side_tag(a: Point, b: Point) -> Result<EdgeTag> {
    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    match (Side::of_point(a), Side::of_point(b), Side::of_point(m)) {
        (Some(_), Some(_), Some(s)) => Ok(EdgeTag::Boundary(s)),
        _ => Err(Error::Geometry(format!(
            "boundary edge at ({:.6}, {:.6}) is neither on a fracture nor on the outer boundary",
            m[0], m[1]
        ))),
    }
}

fn finish_mesh(
    network: FractureNetwork,
    subdomains: Vec<SubdomainMesh>,
    branches: Vec<Branch>,
    mortar: MortarConfig,
) -> Result<MixedDimMesh> {
    let mut traces = Vec::with_capacity(subdomains.len());
    for sd in &subdomains {
        let mut per_branch: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
        for (ei, e) in sd.edges.iter().enumerate() {
            if let EdgeTag::Fracture { branch } = e.tag {
                let s = branches[branch].segment.param(e.midpoint);
                per_branch.entry(branch).or_default().push((s, ei));
            }
        }
        let mut list = Vec::new();
        for (branch, mut items) in per_branch {
            items.sort_by(|a, b| a.0.total_cmp(&b.0));
            let seg = &branches[branch].segment;
            let mut nodes = Vec::with_capacity(items.len() + 1);
            for (k, &(_, ei)) in items.iter().enumerate() {
                let e = &sd.edges[ei];
                let (s0, s1) = {
                    let p = seg.param(sd.vertices[e.vertices[0]]);
                    let q = seg.param(sd.vertices[e.vertices[1]]);
                    (p.min(q), p.max(q))
                };
                if k == 0 {
                    nodes.push(snap(s0, seg.length()));
                }
                nodes.push(snap(s1, seg.length()));
            }
            list.push(TraceMap {
                subdomain: sd.id,
                branch,
                edges: items.into_iter().map(|(_, e)| e).collect(),
                grid: Grid1d { nodes },
            });
        }
        traces.push(list);
    }
    Ok(MixedDimMesh {
        network,
        subdomains,
        branches,
        traces,
        mortar,
    })
}

fn snap(s: f64, length: f64) -> f64 {
    if s.abs() < GEOM_TOL {
        0.0
    } else if (s - length).abs() < GEOM_TOL {
        length
    } else {
        s
    }
}

/// Axis-aligned rectangular region `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn contains_strict(&self, p: Point) -> bool {
        p[0] > self.x0 && p[0] < self.x1 && p[1] > self.y0 && p[1] < self.y1
    }
}

/// Flood-fills the coordinate grid spanned by the fracture endpoints; cells
/// connected without crossing a fracture form one region. Regions must be
/// rectangles.
fn discover_regions(network: &FractureNetwork) -> Result<Vec<Rect>> {
    let mut xs = vec![0.0, 1.0];
    let mut ys = vec![0.0, 1.0];
    for f in &network.fractures {
        for p in [f.a, f.b] {
            xs.push(p[0]);
            ys.push(p[1]);
        }
    }
    let dedup = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    };
    dedup(&mut xs);
    dedup(&mut ys);
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let blocked = |p: Point, q: Point| {
        let m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        network.fractures.iter().any(|f| f.distance_to(m) < 1e-10)
    };
    let mut label = vec![usize::MAX; nx * ny];
    let mut regions = Vec::new();
    for start in 0..nx * ny {
        if label[start] != usize::MAX {
            continue;
        }
        let id = regions.len();
        let mut stack = vec![start];
        label[start] = id;
        let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
        let mut count = 0;
        while let Some(c) = stack.pop() {
            count += 1;
            let (i, j) = (c % nx, c / nx);
            i0 = i0.min(i);
            i1 = i1.max(i);
            j0 = j0.min(j);
            j1 = j1.max(j);
            // Shared side between neighbouring grid cells, as two endpoints.
            let mut neighbours = Vec::with_capacity(4);
            if i > 0 {
                neighbours.push((c - 1, [xs[i], ys[j]], [xs[i], ys[j + 1]]));
            }
            if i + 1 < nx {
                neighbours.push((c + 1, [xs[i + 1], ys[j]], [xs[i + 1], ys[j + 1]]));
            }
            if j > 0 {
                neighbours.push((c - nx, [xs[i], ys[j]], [xs[i + 1], ys[j]]));
            }
            if j + 1 < ny {
                neighbours.push((c + nx, [xs[i], ys[j + 1]], [xs[i + 1], ys[j + 1]]));
            }
            for (n, p, q) in neighbours {
                if label[n] == usize::MAX && !blocked(p, q) {
                    label[n] = id;
                    stack.push(n);
                }
            }
        }
        if count != (i1 - i0 + 1) * (j1 - j0 + 1) {
            return Err(Error::Geometry(format!(
                "region {id} discovered by flood-fill is not a rectangle"
            )));
        }
        regions.push(Rect {
            x0: xs[i0],
            x1: xs[i1 + 1],
            y0: ys[j0],
            y1: ys[j1 + 1],
        });
    }
    Ok(regions)
}

fn split_branches(network: &FractureNetwork, regions: &[Rect]) -> Result<Vec<Branch>> {
    let mut branches = Vec::new();
    for (fi, seg) in network.fractures.iter().enumerate() {
        let len = seg.length();
        let mut cuts: Vec<(f64, Option<usize>)> = vec![(0.0, None), (len, None)];
        for (ti, x) in network.intersections.iter().enumerate() {
            if x.fractures.contains(&fi) {
                let s = snap(seg.param(x.point), len);
                match cuts.iter_mut().find(|c| (c.0 - s).abs() < 1e-10) {
                    Some(c) => c.1 = Some(ti),
                    None => cuts.push((s, Some(ti))),
                }
            }
        }
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let end_kind = |s: f64, t: Option<usize>| match t {
            Some(ti) => BranchEnd::Intersection(ti),
            None => match Side::of_point(seg.at(s)) {
                Some(side) => BranchEnd::Boundary(side),
                None => BranchEnd::Free,
            },
        };
        for w in cuts.windows(2) {
            let (a, b) = (seg.at(w[0].0), seg.at(w[1].0));
            let sub_seg = Segment::new(a, b);
            let t = sub_seg.tangent();
            let nu = [-t[1], t[0]];
            let m = sub_seg.at(0.5 * sub_seg.length());
            let probe = |sign: f64| {
                let p = [m[0] + sign * 1e-7 * nu[0], m[1] + sign * 1e-7 * nu[1]];
                regions.iter().position(|r| r.contains_strict(p)).ok_or_else(|| {
                    Error::Geometry(format!(
                        "fracture {fi}: no region next to branch midpoint ({:.4}, {:.4})",
                        m[0], m[1]
                    ))
                })
            };
            let sides = [probe(1.0)?, probe(-1.0)?];
            if sides[0] == sides[1] {
                return Err(Error::Geometry(format!(
                    "fracture {fi}: branch at ({:.4}, {:.4}) does not separate two regions",
                    m[0], m[1]
                )));
            }
            branches.push(Branch {
                id: branches.len(),
                fracture: fi,
                segment: sub_seg,
                ends: [end_kind(w[0].0, w[0].1), end_kind(w[1].0, w[1].1)],
                sides,
                trace: Grid1d {
                    nodes: vec![0.0, sub_seg.length()],
                },
                mortar: Grid1d {
                    nodes: vec![0.0, sub_seg.length()],
                },
            });
        }
    }
    Ok(branches)
}

fn triangulate_region(id: usize, r: &Rect, branches: &[Branch], h: f64) -> Result<SubdomainMesh> {
    let on_branch = |p: Point| {
        branches
            .iter()
            .position(|b| b.segment.distance_to(p) < 1e-10 && (b.sides[0] == id || b.sides[1] == id))
    };
    let corners = [[r.x0, r.y0], [r.x1, r.y0], [r.x1, r.y1], [r.x0, r.y1]];
    let mut points: Vec<Point> = Vec::new();
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        let side = Segment::new(a, b);
        let len = side.length();
        let mid = side.at(0.5 * len);
        let mut params: Vec<f64> = vec![0.0];
        if Side::of_point(mid).is_some() {
            let n = (len / h).ceil().max(1.0) as usize;
            params.extend((1..n).map(|i| len * i as f64 / n as f64));
        } else {
            // Side made of branches: take their trace nodes.
            for b in branches.iter().filter(|b| b.sides.contains(&id)) {
                let (pa, pb) = (b.segment.a, b.segment.b);
                if side.distance_to(pa) < 1e-10 && side.distance_to(pb) < 1e-10 {
                    for &s in &b.trace.nodes {
                        params.push(side.param(b.segment.at(s)));
                    }
                }
            }
            params.sort_by(f64::total_cmp);
            params.dedup_by(|x, y| (*x - *y).abs() < 1e-10);
            params.retain(|&s| s < len - 1e-10);
        }
        for s in params {
            let p = if s == 0.0 { a } else { side.at(s) };
            points.push(p);
        }
    }
    let (w, hgt) = (r.x1 - r.x0, r.y1 - r.y0);
    let (nx, ny) = ((w / h).round().max(1.0) as usize, (hgt / h).round().max(1.0) as usize);
    let (dx, dy) = (w / nx as f64, hgt / ny as f64);
    for j in 1..ny {
        for i in 1..nx {
            // Staggered rows avoid cocircular squares.
            let shift = if j % 2 == 0 { 0.0 } else { 0.25 * dx };
            let p = [r.x0 + i as f64 * dx + shift, r.y0 + j as f64 * dy];
            if p[0] < r.x1 - 0.5 * dx {
                points.push(p);
            }
        }
    }

    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    for p in &points {
        tri.insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::Geometry(format!("sub-domain {id}: {e:?}")))?;
    }
    let vertices: Vec<Point> = tri
        .vertices()
        .map(|v| {
            let p = v.position();
            [p.x, p.y]
        })
        .collect();
    let triangles: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| f.vertices().map(|v| v.fix().index()))
        .filter(|t| signed_area(&vertices, *t).abs() > 1e-14)
        .collect();

    SubdomainMesh::from_triangles(id, vertices, triangles, |a, b| {
        let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        match on_branch(m) {
            Some(branch) if on_branch(a).is_some() && on_branch(b).is_some() => Ok(EdgeTag::Fracture { branch }),
            _ => side_tag(a, b),
        }
    })
}

/// One finding of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NonPositiveArea {
        subdomain: usize,
        triangle: usize,
        area: f64,
    },
    DuplicateVertex {
        subdomain: usize,
        vertex: usize,
    },
    NonConforming {
        subdomain: usize,
        edge: usize,
    },
    Disconnected {
        subdomain: usize,
        components: usize,
    },
    TraceTiling {
        subdomain: usize,
        branch: usize,
        covered: f64,
        length: f64,
    },
    TraceGap {
        subdomain: usize,
        branch: usize,
        at: f64,
    },
    MissingTrace {
        subdomain: usize,
        branch: usize,
    },
    IntersectionOffFracture {
        intersection: usize,
        fracture: usize,
        distance: f64,
    },
    MortarExtent {
        branch: usize,
    },
    SubdomainCount {
        found: usize,
        expected: usize,
    },
}

/// Checks the mesh invariants; an empty list means the mesh is valid.
pub fn validate(mesh: &MixedDimMesh) -> Vec<Violation> {
    let mut out = Vec::new();
    for (ti, x) in mesh.network.intersections.iter().enumerate() {
        for &f in &x.fractures {
            let d = mesh.network.fractures[f].distance_to(x.point);
            if d >= GEOM_TOL {
                out.push(Violation::IntersectionOffFracture {
                    intersection: ti,
                    fracture: f,
                    distance: d,
                });
            }
        }
    }
    for sd in &mesh.subdomains {
        for t in 0..sd.n_cells() {
            let a = sd.area(t);
            if a <= 0.0 {
                out.push(Violation::NonPositiveArea {
                    subdomain: sd.id,
                    triangle: t,
                    area: a,
                });
            }
        }
        let mut sorted: Vec<(usize, Point)> = sd.vertices.iter().copied().enumerate().collect();
        sorted.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]).then(a.1[1].total_cmp(&b.1[1])));
        for w in sorted.windows(2) {
            if dist(w[0].1, w[1].1) < GEOM_TOL {
                out.push(Violation::DuplicateVertex {
                    subdomain: sd.id,
                    vertex: w[1].0,
                });
            }
        }
        // Edge-to-triangle incidence recomputed from the triangle list.
        let mut incidence: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &sd.triangles {
            for k in 0..3 {
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                *incidence.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for (ei, e) in sd.edges.iter().enumerate() {
            let key = (e.vertices[0].min(e.vertices[1]), e.vertices[0].max(e.vertices[1]));
            let n = incidence.get(&key).copied().unwrap_or(0);
            let expected = if e.triangles.1.is_some() { 2 } else { 1 };
            if n != expected || (n == 1 && e.tag == EdgeTag::Interior) {
                out.push(Violation::NonConforming {
                    subdomain: sd.id,
                    edge: ei,
                });
            }
        }
        let components = count_components(sd);
        if components != 1 {
            out.push(Violation::Disconnected {
                subdomain: sd.id,
                components,
            });
        }
    }
    for b in &mesh.branches {
        if (b.mortar.length() - b.length()).abs() > 1e-12 * b.length().max(1.0) {
            out.push(Violation::MortarExtent { branch: b.id });
        }
        for &side in &b.sides {
            let Some(sd) = mesh.subdomains.get(side) else {
                out.push(Violation::MissingTrace {
                    subdomain: side,
                    branch: b.id,
                });
                continue;
            };
            let Some(trace) = mesh.trace(side, b.id) else {
                out.push(Violation::MissingTrace {
                    subdomain: side,
                    branch: b.id,
                });
                continue;
            };
            let covered: f64 = trace.edges.iter().map(|&e| sd.edges[e].length).sum();
            if (covered - b.length()).abs() > 1e-12 * b.length() {
                out.push(Violation::TraceTiling {
                    subdomain: side,
                    branch: b.id,
                    covered,
                    length: b.length(),
                });
            }
            let mut cursor = 0.0;
            for &e in &trace.edges {
                let edge = &sd.edges[e];
                let p = b.segment.param(sd.vertices[edge.vertices[0]]);
                let q = b.segment.param(sd.vertices[edge.vertices[1]]);
                let (s0, s1) = (p.min(q), p.max(q));
                if (s0 - cursor).abs() > 1e-12 {
                    out.push(Violation::TraceGap {
                        subdomain: side,
                        branch: b.id,
                        at: cursor,
                    });
                }
                cursor = s1;
            }
            if (cursor - b.length()).abs() > 1e-12 {
                out.push(Violation::TraceGap {
                    subdomain: side,
                    branch: b.id,
                    at: cursor,
                });
            }
        }
    }
    out
}

fn count_components(sd: &SubdomainMesh) -> usize {
    let n = sd.n_cells();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            for &e in &sd.triangle_edges[t] {
                let (a, b) = sd.edges[e].triangles;
                for other in [Some(a), b].into_iter().flatten() {
                    if !seen[other] {
                        seen[other] = true;
                        stack.push(other);
                    }
                }
            }
        }
    }
    components
}

/// Number of sub-domains found by flood-filling the network's regions.
pub fn count_regions(network: &FractureNetwork) -> Result<usize> {
    discover_regions(network).map(|r| r.len())
}
