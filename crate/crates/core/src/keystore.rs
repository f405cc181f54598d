//! Agreed keys awaiting use. Each key can be fetched exactly once.

use std::collections::HashMap;

use crate::ids::KeyId;

#[derive(Default)]
pub struct Keystore {
    keys: HashMap<KeyId, Vec<u8>>,
}

impl std::fmt::Debug for Keystore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keystore").field("keys", &self.keys.len()).finish()
    }
}

impl Keystore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `key`, replacing (and wiping) any key already under `id`.
    pub fn insert(&mut self, id: KeyId, key: Vec<u8>) {
        if let Some(mut old) = self.keys.insert(id, key) {
            old.fill(0);
        }
    }

    /// Removes and returns the key; a second fetch returns `None`.
    pub fn take(&mut self, id: &KeyId) -> Option<Vec<u8>> {
        self.keys.remove(id)
    }

    pub fn contains(&self, id: &KeyId) -> bool {
        self.keys.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl Drop for Keystore {
    fn drop(&mut self) {
        for key in self.keys.values_mut() {
            key.fill(0);
        }
    }
}
