//! Reference implementations the acceptance suite compares the runtime
//! against. They share no code with the runtime and favour obviousness
//! over speed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Shortest 4-neighbour path length on a `width` × `height` grid, or `None`
/// when `to` cannot be reached.
pub fn bfs_distance(
    width: i64,
    height: i64,
    blocked: &BTreeSet<(i64, i64)>,
    from: (i64, i64),
    to: (i64, i64),
) -> Option<u64> {
    let inside = |(x, y): (i64, i64)| x >= 0 && y >= 0 && x < width && y < height;
    let mut dist = BTreeMap::from([(from, 0u64)]);
    let mut queue = VecDeque::from([from]);
    while let Some(cell) = queue.pop_front() {
        if cell == to {
            return dist.get(&to).copied();
        }
        let d = dist[&cell];
        let (x, y) = cell;
        for next in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if inside(next) && !blocked.contains(&next) && !dist.contains_key(&next) {
                dist.insert(next, d + 1);
                queue.push_back(next);
            }
        }
    }
    None
}

/// Keys of `members` whose kind set contains every kind in `required`,
/// in key order.
pub fn membership_filter<K: Ord + Copy>(members: &BTreeMap<K, BTreeSet<String>>, required: &[&str]) -> Vec<K> {
    members.iter().filter(|(_, kinds)| required.iter().all(|r| kinds.contains(*r))).map(|(k, _)| *k).collect()
}

/// Whether `rate` lies within `tolerance` of `target`.
pub fn within(rate: f64, target: f64, tolerance: f64) -> bool {
    (rate - target).abs() <= tolerance
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_grids_need_manhattan_steps() {
        let none = BTreeSet::new();
        assert_eq!(bfs_distance(5, 5, &none, (0, 0), (4, 4)), Some(8));
        assert_eq!(bfs_distance(5, 5, &none, (2, 2), (2, 2)), Some(0));
    }

    #[test]
    fn walls_lengthen_or_cut_paths() {
        let wall: BTreeSet<_> = [(0, 1), (1, 1), (2, 1), (3, 1)].into();
        assert_eq!(bfs_distance(5, 3, &wall, (0, 0), (0, 2)), Some(10));
        let closed: BTreeSet<_> = (0..5).map(|x| (x, 1)).collect();
        assert_eq!(bfs_distance(5, 3, &closed, (0, 0), (0, 2)), None);
    }

    #[test]
    fn filter_keeps_supersets_only() {
        let members = BTreeMap::from([
            (1, BTreeSet::from(["a".to_string(), "b".to_string()])),
            (2, BTreeSet::from(["a".to_string()])),
            (3, BTreeSet::new()),
        ]);
        assert_eq!(membership_filter(&members, &["a"]), [1, 2]);
        assert_eq!(membership_filter(&members, &["a", "b"]), [1]);
        assert_eq!(membership_filter(&members, &[]), [1, 2, 3]);
    }

    #[test]
    fn tolerance_is_inclusive() {
        assert!(within(0.4, 0.3, 0.1 + 1e-12));
        assert!(!within(0.41, 0.3, 0.1));
    }
}
