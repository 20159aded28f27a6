use std::any::Any;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

const EMPTY: u32 = u32::MAX;

/// Component data kept by kind.
///
/// `Component` types get a typed store; kinds registered by name only
/// (see [`World::register_kind`](crate::ecs::World::register_kind)) store
/// raw JSON values.
pub trait Component: Serialize + DeserializeOwned + Clone + Send + Sync + 'static {
    const KIND: &'static str;
}

/// Sparse-set storage for one component kind.
///
/// `dense` holds the component records contiguously, `owners` holds the
/// entity index for each dense slot, and `sparse` maps an entity index to
/// its dense slot. Removal swaps the last record into the hole.
#[derive(Debug, Clone)]
pub struct SparseSet<T> {
    dense: Vec<T>,
    owners: Vec<u32>,
    sparse: Vec<u32>,
}

impl<T> SparseSet<T> {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { dense: Vec::with_capacity(capacity), owners: Vec::with_capacity(capacity), sparse: Vec::new() }
    }

    fn slot(&self, index: u32) -> Option<usize> {
        match self.sparse.get(index as usize) {
            Some(&pos) if pos != EMPTY => Some(pos as usize),
            _ => None,
        }
    }

    pub fn contains(&self, index: u32) -> bool {
        self.slot(index).is_some()
    }

    /// Inserts or replaces. Returns the previous value, if any.
    pub fn insert(&mut self, index: u32, value: T) -> Option<T> {
        if let Some(pos) = self.slot(index) {
            return Some(std::mem::replace(&mut self.dense[pos], value));
        }
        let i = index as usize;
        if self.sparse.len() <= i {
            self.sparse.resize(i + 1, EMPTY);
        }
        self.sparse[i] = self.dense.len() as u32;
        self.dense.push(value);
        self.owners.push(index);
        None
    }

    pub fn remove(&mut self, index: u32) -> Option<T> {
        let pos = self.slot(index)?;
        let value = self.dense.swap_remove(pos);
        self.owners.swap_remove(pos);
        if let Some(&moved) = self.owners.get(pos) {
            self.sparse[moved as usize] = pos as u32;
        }
        self.sparse[index as usize] = EMPTY;
        Some(value)
    }

    pub fn get(&self, index: u32) -> Option<&T> {
        self.slot(index).map(|pos| &self.dense[pos])
    }

    pub fn get_mut(&mut self, index: u32) -> Option<&mut T> {
        self.slot(index).map(move |pos| &mut self.dense[pos])
    }

    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.dense.capacity()
    }

    /// Contiguous component records, in dense (not entity) order.
    pub fn dense(&self) -> &[T] {
        &self.dense
    }

    pub fn dense_mut(&mut self) -> &mut [T] {
        &mut self.dense
    }

    /// Entity index owning each dense slot.
    pub fn owners(&self) -> &[u32] {
        &self.owners
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &T)> {
        self.owners.iter().copied().zip(self.dense.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (u32, &mut T)> {
        self.owners.iter().copied().zip(self.dense.iter_mut())
    }

    /// Checks the sparse/dense cross-links. Used by tests and debug asserts.
    pub fn is_consistent(&self) -> bool {
        if self.owners.len() != self.dense.len() {
            return false;
        }
        let linked = self.owners.iter().enumerate().all(|(pos, &owner)| self.slot(owner) == Some(pos));
        let occupied = self.sparse.iter().filter(|&&p| p != EMPTY).count();
        linked && occupied == self.dense.len()
    }
}

pub(crate) trait ErasedStore: Send + Sync {
    fn contains(&self, index: u32) -> bool;
    fn remove(&mut self, index: u32) -> bool;
    fn len(&self) -> usize;
    fn owners(&self) -> &[u32];
    fn to_value(&self, index: u32) -> Option<Result<Value, serde_json::Error>>;
    fn insert_value(&mut self, index: u32, value: Value) -> Result<(), serde_json::Error>;
    fn clear(&mut self);
    fn is_consistent(&self) -> bool;
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

impl<T> ErasedStore for SparseSet<T>
where
    T: Serialize + DeserializeOwned + Send + Sync + 'static,
{
    fn contains(&self, index: u32) -> bool {
        SparseSet::contains(self, index)
    }

    fn remove(&mut self, index: u32) -> bool {
        SparseSet::remove(self, index).is_some()
    }

    fn len(&self) -> usize {
        SparseSet::len(self)
    }

    fn owners(&self) -> &[u32] {
        SparseSet::owners(self)
    }

    fn to_value(&self, index: u32) -> Option<Result<Value, serde_json::Error>> {
        self.get(index).map(serde_json::to_value)
    }

    fn insert_value(&mut self, index: u32, value: Value) -> Result<(), serde_json::Error> {
        let typed: T = serde_json::from_value(value)?;
        self.insert(index, typed);
        Ok(())
    }

    fn clear(&mut self) {
        self.dense.clear();
        self.owners.clear();
        self.sparse.clear();
    }

    fn is_consistent(&self) -> bool {
        SparseSet::is_consistent(self)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
