//! Exact nearest-neighbor index over 3D points.
//!
//! A plain kd-tree with median splits. Queries are exact: the returned
//! neighbor is the true closest point within the distance bound, which keeps
//! registration results deterministic across runs.

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree3 {
    nodes: Vec<Node>,
    points: Vec<[f64; 3]>,
    /// Index of each stored point in the original input slice.
    payload: Vec<u32>,
    root: usize,
}

impl KdTree3 {
    /// Builds from a point slice; payload `i` refers back to `points[i]`.
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut pts = points.to_vec();
        let mut payload: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = pts.len();
        let root = if n == 0 {
            nodes.push(Node::Leaf { start: 0, end: 0 });
            0
        } else {
            build_recursive(&mut pts, &mut payload, 0, n, &mut nodes)
        };
        Self {
            nodes,
            points: pts,
            payload,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest stored point within `max_dist` of `query`, as
    /// `(original index, squared distance)`.
    pub fn nearest(&self, query: &[f64; 3], max_dist: f64) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = max_dist * max_dist;
        let mut best_idx = None;
        self.nearest_recursive(self.root, query, &mut best, &mut best_idx);
        best_idx.map(|i| (i, best))
    }

    /// Original indices of all stored points within `radius` of `query`.
    pub fn within_radius(&self, query: &[f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_recursive(self.root, query, radius * radius, &mut out);
        }
        out
    }

    fn nearest_recursive(
        &self,
        node: usize,
        query: &[f64; 3],
        best: &mut f64,
        best_idx: &mut Option<usize>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d = dist2(&self.points[i], query);
                    if d < *best || (d == *best && best_idx.is_none()) {
                        *best = d;
                        *best_idx = Some(self.payload[i] as usize);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_recursive(near, query, best, best_idx);
                if diff * diff <= *best {
                    self.nearest_recursive(far, query, best, best_idx);
                }
            }
        }
    }

    fn radius_recursive(&self, node: usize, query: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    if dist2(&self.points[i], query) <= r2 {
                        out.push(self.payload[i] as usize);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_recursive(near, query, r2, out);
                if diff * diff <= r2 {
                    self.radius_recursive(far, query, r2, out);
                }
            }
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build_recursive(
    pts: &mut [[f64; 3]],
    payload: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    // Split on the axis with the greatest extent in this block.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pts[start..end] {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[axis] - lo[axis] {
            axis = a;
        }
    }
    let mid = start + count / 2;
    select_by_axis(pts, payload, start, end, mid, axis);
    let value = pts[mid][axis];

    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_recursive(pts, payload, start, mid, nodes);
    let right = build_recursive(pts, payload, mid, end, nodes);
    nodes[placeholder] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    placeholder
}

/// Partial sort placing the `k`-th element (by the given axis) at position
/// `k`, keeping the payload slice in lockstep. Lomuto partition with a
/// median-of-three pivot; the pivot lands on its final index every round, so
/// the range strictly shrinks.
fn select_by_axis(
    pts: &mut [[f64; 3]],
    payload: &mut [u32],
    mut start: usize,
    mut end: usize,
    k: usize,
    axis: usize,
) {
    debug_assert!(start <= k && k < end);
    while end - start > 1 {
        let mid = start + (end - start) / 2;
        let last = end - 1;
        // Median of three into `last`.
        if pts[mid][axis] < pts[start][axis] {
            pts.swap(mid, start);
            payload.swap(mid, start);
        }
        if pts[last][axis] < pts[start][axis] {
            pts.swap(last, start);
            payload.swap(last, start);
        }
        if pts[mid][axis] < pts[last][axis] {
            pts.swap(mid, last);
            payload.swap(mid, last);
        }
        let pivot = pts[last][axis];
        let mut store = start;
        for i in start..last {
            if pts[i][axis] < pivot {
                pts.swap(i, store);
                payload.swap(i, store);
                store += 1;
            }
        }
        pts.swap(store, last);
        payload.swap(store, last);
        match k.cmp(&store) {
            std::cmp::Ordering::Equal => return,
            std::cmp::Ordering::Less => end = store,
            std::cmp::Ordering::Greater => start = store + 1,
        }
    }
}
