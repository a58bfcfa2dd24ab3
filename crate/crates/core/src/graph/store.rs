//! Reader-writer wrapper around the committed graph.
//!
//! Readers take a cheap `Arc` lease on the last committed graph and are never
//! blocked by a running ingest. Writers are serialized; each transaction runs
//! against a private copy that replaces the committed graph only on success.

use std::sync::{Arc, Mutex, RwLock};

use super::MemoryGraph;

pub struct MemoryStore {
    committed: RwLock<Arc<MemoryGraph>>,
    writer: Mutex<()>,
}

impl MemoryStore {
    pub fn new(graph: MemoryGraph) -> Self {
        Self {
            committed: RwLock::new(Arc::new(graph)),
            writer: Mutex::new(()),
        }
    }

    /// Read lease on the current committed graph.
    pub fn read(&self) -> Arc<MemoryGraph> {
        self.committed.read().expect("store lock poisoned").clone()
    }

    /// Runs `f` on a copy of the graph and commits the copy if `f` succeeds.
    /// On error the committed graph is left untouched.
    pub fn transaction<T, E>(&self, f: impl FnOnce(&mut MemoryGraph) -> Result<T, E>) -> Result<T, E> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut draft = (*self.read()).clone();
        let out = f(&mut draft)?;
        *self.committed.write().expect("store lock poisoned") = Arc::new(draft);
        Ok(out)
    }

    /// Replaces the committed graph wholesale, e.g. after loading a snapshot.
    pub fn replace(&self, graph: MemoryGraph) {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        *self.committed.write().expect("store lock poisoned") = Arc::new(graph);
    }
}
