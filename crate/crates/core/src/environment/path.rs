use std::collections::{HashMap, VecDeque};

use super::{GridEnvironment, Position};

/// Shortest 4-neighbour path from `from` to `to`, both ends included.
/// Neighbours are expanded in the grid's fixed order, so among equally
/// short paths the result is always the same one.
pub fn shortest_path(grid: &GridEnvironment, from: Position, to: Position) -> Option<Vec<Position>> {
    if !grid.is_passable(from) || !grid.is_passable(to) {
        return None;
    }
    let mut parent: HashMap<Position, Position> = HashMap::new();
    let mut frontier = VecDeque::from([from]);
    parent.insert(from, from);
    while let Some(cell) = frontier.pop_front() {
        if cell == to {
            let mut path = vec![to];
            let mut at = to;
            while at != from {
                at = parent[&at];
                path.push(at);
            }
            path.reverse();
            return Some(path);
        }
        for next in grid.neighbors(cell) {
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(next) {
                e.insert(cell);
                frontier.push_back(next);
            }
        }
    }
    None
}

/// The `(dx, dy)` unit step that starts a shortest path towards `to`.
/// `Some((0, 0))` when already there, `None` when unreachable.
pub fn next_step_toward(grid: &GridEnvironment, from: Position, to: Position) -> Option<(i64, i64)> {
    let path = shortest_path(grid, from, to)?;
    Some(match path.get(1) {
        Some(next) => (next.x - from.x, next.y - from.y),
        None => (0, 0),
    })
}
