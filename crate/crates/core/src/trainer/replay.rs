use std::sync::Arc;

use rand::Rng;

use crate::dialogue::Turn;

/// One agent action. `turns` is the transcript after the action, so the
/// state is every turn but the last and the next state is all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub turns: Arc<[Turn]>,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

impl Transition {
    pub fn state(&self) -> &[Turn] {
        &self.turns[..self.turns.len() - 1]
    }

    pub fn next_state(&self) -> &[Turn] {
        &self.turns
    }
}

/// Fixed-capacity FIFO ring.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform draws with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R, n: usize) -> Vec<&'a Transition> {
        (0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Storage in slot order plus the next write slot; sampling indexes slots.
    pub(crate) fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.items, self.next)
    }

    pub(crate) fn from_raw_parts(
        capacity: usize,
        items: Vec<Transition>,
        next: usize,
    ) -> Option<Self> {
        if items.len() > capacity
            || next >= capacity
            || (items.len() < capacity && next != items.len() % capacity)
        {
            return None;
        }
        Some(Self {
            capacity,
            items,
            next,
        })
    }
}
