//! Bounded hand-off between two stage workers.
//!
//! Lossy hand-offs never block the producer: when full, the oldest queued
//! item is evicted. Lossless hand-offs block the producer until there is
//! room. Closing wakes every waiter; consumers drain what is left, then see
//! `None`.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

pub const HANDOFF_CAPACITY: usize = 2;

pub(crate) enum Push<T> {
    Accepted,
    /// Accepted after evicting this older item.
    Evicted(T),
    /// The hand-off was closed; the item is returned.
    Closed(T),
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
}

pub(crate) struct Handoff<T> {
    state: Mutex<State<T>>,
    cv: Condvar,
    capacity: usize,
    lossy: bool,
}

impl<T> Handoff<T> {
    pub fn new(capacity: usize, lossy: bool) -> Self {
        Handoff {
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            cv: Condvar::new(),
            capacity: capacity.max(1),
            lossy,
        }
    }

    pub fn push(&self, item: T) -> Push<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if s.closed {
                return Push::Closed(item);
            }
            if s.items.len() < self.capacity {
                s.items.push_back(item);
                self.cv.notify_all();
                return Push::Accepted;
            }
            if self.lossy {
                let old = s.items.pop_front().expect("full queue");
                s.items.push_back(item);
                self.cv.notify_all();
                return Push::Evicted(old);
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    /// Blocks until an item is available or the hand-off is closed and empty.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(item) = s.items.pop_front() {
                self.cv.notify_all();
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    /// Marks the end of input. Queued items stay available to `pop`.
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.cv.notify_all();
    }

    /// Closes and returns everything still queued.
    pub fn abort(&self) -> Vec<T> {
        let mut s = self.state.lock().unwrap();
        s.closed = true;
        self.cv.notify_all();
        s.items.drain(..).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn lossy_evicts_oldest() {
        let h = Handoff::new(2, true);
        assert!(matches!(h.push(1), Push::Accepted));
        assert!(matches!(h.push(2), Push::Accepted));
        assert!(matches!(h.push(3), Push::Evicted(1)));
        assert_eq!(h.pop(), Some(2));
        assert_eq!(h.pop(), Some(3));
    }

    #[test]
    fn close_drains_then_ends() {
        let h = Handoff::new(2, true);
        h.push(7);
        h.close();
        assert!(matches!(h.push(8), Push::Closed(8)));
        assert_eq!(h.pop(), Some(7));
        assert_eq!(h.pop(), None);
    }

    #[test]
    fn lossless_blocks_until_room() {
        let h = Arc::new(Handoff::new(1, false));
        h.push(1);
        let producer = {
            let h = h.clone();
            thread::spawn(move || matches!(h.push(2), Push::Accepted))
        };
        thread::sleep(Duration::from_millis(20));
        assert_eq!(h.pop(), Some(1));
        assert!(producer.join().unwrap());
        assert_eq!(h.pop(), Some(2));
    }

    #[test]
    fn abort_wakes_blocked_producer() {
        let h = Arc::new(Handoff::new(1, false));
        h.push(1);
        let producer = {
            let h = h.clone();
            thread::spawn(move || matches!(h.push(2), Push::Closed(2)))
        };
        thread::sleep(Duration::from_millis(20));
        assert_eq!(h.abort(), vec![1]);
        assert!(producer.join().unwrap());
    }
}
