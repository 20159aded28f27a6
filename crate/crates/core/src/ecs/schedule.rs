use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemDescriptor {
    pub name: String,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    pub dependencies: BTreeSet<String>,
    /// Registration sequence number, assigned by the world.
    pub order: usize,
}

impl SystemDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            reads: BTreeSet::new(),
            writes: BTreeSet::new(),
            dependencies: BTreeSet::new(),
            order: 0,
        }
    }

    pub fn reads<I, S>(mut self, kinds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.reads.extend(kinds.into_iter().map(Into::into));
        self
    }

    pub fn writes<I, S>(mut self, kinds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.writes.extend(kinds.into_iter().map(Into::into));
        self
    }

    pub fn after<I, S>(mut self, systems: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.dependencies.extend(systems.into_iter().map(Into::into));
        self
    }
}

/// Topological order of `descriptors` (given in registration order),
/// breaking ties by registration order. Returns positions into the slice,
/// or the names left unscheduled when the graph has a cycle.
pub(crate) fn topological_order(descriptors: &[SystemDescriptor]) -> Result<Vec<usize>, Vec<String>> {
    let position: BTreeMap<&str, usize> = descriptors.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();

    let mut indegree = vec![0usize; descriptors.len()];
    let mut dependents = vec![Vec::new(); descriptors.len()];
    for (i, desc) in descriptors.iter().enumerate() {
        for dep in &desc.dependencies {
            if let Some(&d) = position.get(dep.as_str()) {
                indegree[i] += 1;
                dependents[d].push(i);
            }
        }
    }

    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, deg)| **deg == 0)
        .map(|(i, _)| Reverse((descriptors[i].order, i)))
        .collect();

    let mut out = Vec::with_capacity(descriptors.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        out.push(i);
        for &next in &dependents[i] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(Reverse((descriptors[next].order, next)));
            }
        }
    }

    if out.len() == descriptors.len() {
        Ok(out)
    } else {
        let scheduled: BTreeSet<usize> = out.into_iter().collect();
        Err(descriptors
            .iter()
            .enumerate()
            .filter(|(i, _)| !scheduled.contains(i))
            .map(|(_, d)| d.name.clone())
            .collect())
    }
}
