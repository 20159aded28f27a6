use std::any::{Any, TypeId};
use std::collections::{BTreeMap, HashMap};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Type-keyed singletons owned by the world.
#[derive(Default)]
pub(crate) struct Resources {
    items: HashMap<TypeId, Box<dyn Any + Send>>,
    persistent: BTreeMap<String, PersistHooks>,
}

#[derive(Clone, Copy)]
pub(crate) struct PersistHooks {
    pub save: fn(&Resources) -> Option<Result<Value, serde_json::Error>>,
    pub load: fn(&mut Resources, Value) -> Result<(), serde_json::Error>,
}

fn save_as<T: Serialize + 'static>(res: &Resources) -> Option<Result<Value, serde_json::Error>> {
    res.get::<T>().map(serde_json::to_value)
}

fn load_as<T: DeserializeOwned + Send + 'static>(res: &mut Resources, value: Value) -> Result<(), serde_json::Error> {
    res.insert::<T>(serde_json::from_value(value)?);
    Ok(())
}

impl Resources {
    pub fn insert<T: Send + 'static>(&mut self, value: T) -> Option<T> {
        self.items.insert(TypeId::of::<T>(), Box::new(value)).and_then(|old| old.downcast().ok().map(|b| *b))
    }

    pub fn get<T: 'static>(&self) -> Option<&T> {
        self.items.get(&TypeId::of::<T>()).and_then(|b| b.downcast_ref())
    }

    pub fn get_mut<T: 'static>(&mut self) -> Option<&mut T> {
        self.items.get_mut(&TypeId::of::<T>()).and_then(|b| b.downcast_mut())
    }

    pub fn remove<T: 'static>(&mut self) -> Option<T> {
        self.items.remove(&TypeId::of::<T>()).and_then(|b| b.downcast().ok().map(|b| *b))
    }

    pub fn register_persistent<T>(&mut self, name: &str)
    where
        T: Serialize + DeserializeOwned + Send + 'static,
    {
        self.persistent.insert(name.to_owned(), PersistHooks { save: save_as::<T>, load: load_as::<T> });
    }

    pub fn register_hooks(&mut self, name: &str, hooks: PersistHooks) {
        self.persistent.insert(name.to_owned(), hooks);
    }

    pub fn persistent(&self) -> impl Iterator<Item = (&String, PersistHooks)> {
        self.persistent.iter().map(|(k, v)| (k, *v))
    }

    pub fn hooks(&self, name: &str) -> Option<PersistHooks> {
        self.persistent.get(name).copied()
    }
}
