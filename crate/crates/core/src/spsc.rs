//! Single-producer single-consumer ring buffer, the live counterpart of
//! the simulated channel. Same contract: power-of-two capacity of at least
//! two, FIFO order, bounded occupancy, rejection when full.
//!
//! Indexes grow monotonically and are reduced modulo capacity at slot
//! access, so `head - tail` is always the exact occupancy. The producer
//! owns `head`, the consumer owns `tail`; each side reads the other's
//! counter with acquire ordering and publishes its own with release
//! ordering, which is all the synchronization a SPSC queue needs.

use std::cell::UnsafeCell;
use std::fmt;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Capacity must be a power of two and at least two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BadRingCapacity(pub u64);

impl fmt::Display for BadRingCapacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ring capacity {} is not a power of two >= 2", self.0)
    }
}

impl std::error::Error for BadRingCapacity {}

// Keep the hot counters on separate cache lines; 128 covers adjacent-line
// prefetchers too.
#[repr(align(128))]
struct Counter(AtomicU64);

pub struct SpscRing<T> {
    mask: u64,
    head: Counter,
    tail: Counter,
    slots: Box<[UnsafeCell<MaybeUninit<T>>]>,
}

unsafe impl<T: Send> Send for SpscRing<T> {}
unsafe impl<T: Send> Sync for SpscRing<T> {}

impl<T> SpscRing<T> {
    pub fn new(capacity: u64) -> Result<(Producer<T>, Consumer<T>), BadRingCapacity> {
        if capacity < 2 || !capacity.is_power_of_two() {
            return Err(BadRingCapacity(capacity));
        }
        let slots = (0..capacity)
            .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
            .collect::<Vec<_>>()
            .into_boxed_slice();
        let ring = Arc::new(SpscRing {
            mask: capacity - 1,
            head: Counter(AtomicU64::new(0)),
            tail: Counter(AtomicU64::new(0)),
            slots,
        });
        Ok((Producer { ring: ring.clone() }, Consumer { ring }))
    }

    fn capacity(&self) -> u64 {
        self.mask + 1
    }
}

impl<T> Drop for SpscRing<T> {
    fn drop(&mut self) {
        // Last Arc owner; plain loads are fine.
        let head = self.head.0.load(Ordering::Relaxed);
        let mut tail = self.tail.0.load(Ordering::Relaxed);
        while tail < head {
            let slot = &self.slots[(tail & self.mask) as usize];
            unsafe { (*slot.get()).assume_init_drop() };
            tail += 1;
        }
    }
}

pub struct Producer<T> {
    ring: Arc<SpscRing<T>>,
}

pub struct Consumer<T> {
    ring: Arc<SpscRing<T>>,
}

impl<T> Producer<T> {
    /// Returns the value back when the ring is full.
    pub fn push(&mut self, v: T) -> Result<(), T> {
        let r = &*self.ring;
        let head = r.head.0.load(Ordering::Relaxed);
        let tail = r.tail.0.load(Ordering::Acquire);
        if head - tail == r.capacity() {
            return Err(v);
        }
        let slot = &r.slots[(head & r.mask) as usize];
        unsafe { (*slot.get()).write(v) };
        r.head.0.store(head + 1, Ordering::Release);
        Ok(())
    }
}

impl<T> Consumer<T> {
    pub fn pop(&mut self) -> Option<T> {
        let r = &*self.ring;
        let tail = r.tail.0.load(Ordering::Relaxed);
        let head = r.head.0.load(Ordering::Acquire);
        if tail == head {
            return None;
        }
        let slot = &r.slots[(tail & r.mask) as usize];
        let v = unsafe { (*slot.get()).assume_init_read() };
        r.tail.0.store(tail + 1, Ordering::Release);
        Some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_capacities() {
        for c in [0u64, 1, 3, 6, 100] {
            assert!(SpscRing::<u32>::new(c).is_err(), "capacity {c}");
        }
        assert!(SpscRing::<u32>::new(2).is_ok());
        assert!(SpscRing::<u32>::new(64).is_ok());
    }

    #[test]
    fn fifo_through_wraparound() {
        let (mut p, mut c) = SpscRing::new(4).unwrap();
        for round in 0u64..10 {
            for i in 0..4 {
                p.push(round * 4 + i).unwrap();
            }
            assert!(p.push(999).is_err(), "full ring must reject");
            for i in 0..4 {
                assert_eq!(c.pop(), Some(round * 4 + i));
            }
            assert_eq!(c.pop(), None);
        }
    }

    #[test]
    fn threaded_handoff_preserves_order() {
        let (mut p, mut c) = SpscRing::new(8).unwrap();
        let n = 10_000u64;
        let producer = std::thread::spawn(move || {
            for i in 0..n {
                let mut v = i;
                loop {
                    match p.push(v) {
                        Ok(()) => break,
                        Err(back) => {
                            v = back;
                            std::thread::yield_now();
                        }
                    }
                }
            }
        });
        let mut expected = 0u64;
        while expected < n {
            match c.pop() {
                Some(v) => {
                    assert_eq!(v, expected);
                    expected += 1;
                }
                None => std::thread::yield_now(),
            }
        }
        producer.join().unwrap();
    }

    #[test]
    fn drops_undelivered_items() {
        let item = Arc::new(());
        let (mut p, c) = SpscRing::new(4).unwrap();
        p.push(item.clone()).unwrap();
        p.push(item.clone()).unwrap();
        assert_eq!(Arc::strong_count(&item), 3);
        drop(p);
        drop(c);
        assert_eq!(Arc::strong_count(&item), 1);
    }
}
