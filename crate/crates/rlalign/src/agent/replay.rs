//! Fixed-capacity FIFO transition store with uniform batch sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer { items: Vec::new(), capacity, cursor: 0 })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest record once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Uniform sample of `batch` distinct records.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&T>> {
        if batch == 0 {
            return Err(Error::Input("empty batch requested".into()));
        }
        if batch > self.items.len() {
            return Err(Error::State(format!(
                "buffer holds {} records, batch needs {}",
                self.items.len(),
                batch
            )));
        }
        let n = self.items.len();
        let mut picked = Vec::with_capacity(batch);
        // Rejection sampling keeps the draw uniform over distinct index
        // sets; batches are far smaller than the buffer in practice, so
        // collisions are rare.
        let mut chosen = std::collections::HashSet::with_capacity(batch * 2);
        while picked.len() < batch {
            let i = rng.gen_range(0..n);
            if chosen.insert(i) {
                picked.push(&self.items[i]);
            }
        }
        Ok(picked)
    }

    /// Iterates records in storage order (not insertion order once the
    /// buffer has wrapped).
    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }
}
