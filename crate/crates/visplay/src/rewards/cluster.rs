//! Single-linkage duplicate clustering within a sampled group.

use super::similarity;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index wins so cluster ids are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the graph whose edges join pairs with
/// similarity >= threshold. Returns per-element (cluster_id, cluster_size);
/// the id of a cluster is the smallest member index, so assignments are
/// independent of comparison order.
pub fn cluster_group(group: &[Vec<usize>], threshold: f64) -> Vec<(usize, usize)> {
    let n = group.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if similarity(&group[i], &group[j]) >= threshold {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let mut sizes = vec![0usize; n];
    for &r in &roots {
        sizes[r] += 1;
    }
    roots.iter().map(|&r| (r, sizes[r])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_identical_one_cluster() {
        let g: Vec<Vec<usize>> = (0..8).map(|_| vec![1, 2, 3, 4]).collect();
        let c = cluster_group(&g, 0.6);
        for &(id, size) in &c {
            assert_eq!(id, 0);
            assert_eq!(size, 8);
        }
    }

    #[test]
    fn all_distinct_singletons() {
        let g: Vec<Vec<usize>> = (0..5).map(|i| vec![10 * i, 10 * i + 1]).collect();
        let c = cluster_group(&g, 0.99);
        for (i, &(id, size)) in c.iter().enumerate() {
            assert_eq!(id, i);
            assert_eq!(size, 1);
        }
    }

    #[test]
    fn chain_merges_transitively() {
        // a~b and b~c above threshold, a vs c below: single linkage puts all
        // three in one cluster.
        let a = vec![1, 2, 3, 4, 5, 6];
        let b = vec![1, 2, 3, 4, 9, 10];
        let c = vec![9, 10, 11, 12, 3, 4];
        let t = 0.3;
        assert!(super::similarity(&a, &b) >= t);
        assert!(super::similarity(&b, &c) >= t);
        assert!(super::similarity(&a, &c) < t);
        let assign = cluster_group(&[a, b, c], t);
        assert_eq!(assign, vec![(0, 3), (0, 3), (0, 3)]);
    }

    #[test]
    fn sizes_partition_group() {
        let g: Vec<Vec<usize>> = vec![
            vec![1, 2, 3],
            vec![1, 2, 3],
            vec![7, 8, 9],
            vec![4, 5],
            vec![7, 8, 9],
        ];
        let assign = cluster_group(&g, 0.9);
        let total: usize = {
            let mut seen = std::collections::BTreeMap::new();
            for &(id, size) in &assign {
                seen.insert(id, size);
            }
            seen.values().sum()
        };
        assert_eq!(total, g.len());
    }
}
