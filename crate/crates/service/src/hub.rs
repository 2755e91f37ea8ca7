//! Multi-subscriber event fan-out with bounded per-subscriber queues.
//!
//! When a queue is full the oldest heartbeat is discarded, then the oldest
//! status update that a newer one for the same channel supersedes. Region
//! events are never dropped.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};

use tokio::sync::Notify;

use crate::protocol::ServerEvent;

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub event: ServerEvent,
}

struct Queue {
    items: Mutex<VecDeque<Envelope>>,
    notify: Notify,
    closed: AtomicBool,
}

pub struct Hub {
    capacity: usize,
    seq: AtomicU64,
    subscribers: Mutex<Vec<Weak<Queue>>>,
    closed: AtomicBool,
}

pub struct Subscriber {
    queue: Arc<Queue>,
}

impl Hub {
    pub fn new(capacity: usize) -> Self {
        Hub {
            capacity: capacity.max(1),
            seq: AtomicU64::new(0),
            subscribers: Mutex::new(Vec::new()),
            closed: AtomicBool::new(false),
        }
    }

    pub fn subscribe(&self) -> Subscriber {
        let queue = Arc::new(Queue {
            items: Mutex::new(VecDeque::new()),
            notify: Notify::new(),
            closed: Default::default(),
        });
        let mut subs = self.subscribers.lock().unwrap();
        queue.closed.store(self.closed.load(Ordering::Acquire), Ordering::Release);
        subs.push(Arc::downgrade(&queue));
        drop(subs);
        Subscriber { queue }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|s| s.strong_count() > 0);
        subs.len()
    }

    pub fn publish(&self, events: impl IntoIterator<Item = ServerEvent>) {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|s| s.strong_count() > 0);
        let queues: Vec<Arc<Queue>> = subs.iter().filter_map(Weak::upgrade).collect();
        drop(subs);
        let envelopes: Vec<Envelope> = events
            .into_iter()
            .map(|event| Envelope {
                seq: self.seq.fetch_add(1, Ordering::Relaxed) + 1,
                event,
            })
            .collect();
        if envelopes.is_empty() {
            return;
        }
        for q in queues {
            let mut items = q.items.lock().unwrap();
            for e in &envelopes {
                items.push_back(e.clone());
                if items.len() > self.capacity {
                    shed(&mut items);
                }
            }
            drop(items);
            q.notify.notify_one();
        }
    }

    /// Wakes every subscriber and ends their streams once drained.
    pub fn close(&self) {
        let subs = self.subscribers.lock().unwrap();
        self.closed.store(true, Ordering::Release);
        for q in subs.iter().filter_map(Weak::upgrade) {
            q.closed.store(true, Ordering::Release);
            q.notify.notify_one();
        }
    }
}

fn shed(items: &mut VecDeque<Envelope>) {
    if let Some(i) = items.iter().position(|e| matches!(e.event, ServerEvent::Heartbeat(_))) {
        items.remove(i);
        return;
    }
    let superseded = items.iter().enumerate().position(|(i, e)| match &e.event {
        ServerEvent::ChannelUpdate(u) => items
            .iter()
            .skip(i + 1)
            .any(|later| matches!(&later.event, ServerEvent::ChannelUpdate(v) if v.channel == u.channel)),
        _ => false,
    });
    if let Some(i) = superseded {
        items.remove(i);
    }
}

impl Subscriber {
    /// Next event, or `None` once the hub is closed and the queue drained.
    pub async fn recv(&self) -> Option<Envelope> {
        loop {
            let notified = self.queue.notify.notified();
            if let Some(e) = self.try_recv() {
                return Some(e);
            }
            if self.queue.closed.load(Ordering::Acquire) {
                return self.try_recv();
            }
            notified.await;
        }
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.items.lock().unwrap().pop_front()
    }

    pub fn pending(&self) -> usize {
        self.queue.items.lock().unwrap().len()
    }
}
