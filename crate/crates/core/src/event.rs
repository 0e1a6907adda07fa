//! Event data model, the per-pixel spatial index and the background-activity filter.

use crate::error::{Error, Result};

/// A single address-event: pixel column `x`, row `y`, timestamp `t` in
/// microseconds and polarity `p`. Polarity is carried through I/O only;
/// no feature computation reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: bool,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: bool) -> Self {
        Event { x, y, t, p }
    }
}

/// Time-ordered events from a `width` x `height` sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u32,
    height: u32,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, checking sensor bounds and stably sorting by time.
    pub fn new(width: u32, height: u32, mut events: Vec<Event>) -> Result<Self> {
        if width > u16::MAX as u32 + 1 || height > u16::MAX as u32 + 1 {
            return Err(Error::param(
                "width/height",
                format!("{width}x{height} exceeds the 16-bit coordinate range"),
            ));
        }
        if let Some(e) = events
            .iter()
            .find(|e| e.x as u32 >= width || e.y as u32 >= height)
        {
            return Err(Error::OutOfBounds {
                x: e.x as u32,
                y: e.y as u32,
                width,
                height,
            });
        }
        // stable: equal timestamps keep their input order
        events.sort_by_key(|e| e.t);
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Time of the first and last event, if any.
    pub fn time_span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// Per-pixel index over a stream: for each pixel, the timestamps (ascending)
/// and stream positions of its events. Neighborhood queries become a binary
/// search per pixel of the box instead of a scan over the whole stream.
#[derive(Debug, Clone)]
pub struct EventIndex<'a> {
    stream: &'a EventStream,
    offsets: Vec<usize>,
    times: Vec<u64>,
    ids: Vec<u32>,
}

impl<'a> EventIndex<'a> {
    pub fn new(stream: &'a EventStream) -> Self {
        let w = stream.width as usize;
        let n_pix = w * stream.height as usize;
        let mut offsets = vec![0usize; n_pix + 1];
        for e in &stream.events {
            offsets[e.y as usize * w + e.x as usize + 1] += 1;
        }
        for p in 0..n_pix {
            offsets[p + 1] += offsets[p];
        }
        let mut fill = offsets.clone();
        let mut times = vec![0u64; stream.events.len()];
        let mut ids = vec![0u32; stream.events.len()];
        for (id, e) in stream.events.iter().enumerate() {
            let p = e.y as usize * w + e.x as usize;
            times[fill[p]] = e.t;
            ids[fill[p]] = id as u32;
            fill[p] += 1;
        }
        EventIndex {
            stream,
            offsets,
            times,
            ids,
        }
    }

    pub fn stream(&self) -> &'a EventStream {
        self.stream
    }

    pub fn width(&self) -> u32 {
        self.stream.width
    }

    pub fn height(&self) -> u32 {
        self.stream.height
    }

    fn pixel_range(&self, x: i64, y: i64) -> Option<std::ops::Range<usize>> {
        if !self.stream.contains_pixel(x, y) {
            return None;
        }
        let p = y as usize * self.stream.width as usize + x as usize;
        Some(self.offsets[p]..self.offsets[p + 1])
    }

    /// Timestamps of all events at pixel (x, y), ascending. Empty off-sensor.
    pub fn pixel_times(&self, x: i64, y: i64) -> &[u64] {
        match self.pixel_range(x, y) {
            Some(r) => &self.times[r],
            None => &[],
        }
    }

    /// Stream positions of the events at pixel (x, y), ordered like [`pixel_times`](Self::pixel_times).
    pub fn pixel_ids(&self, x: i64, y: i64) -> &[u32] {
        match self.pixel_range(x, y) {
            Some(r) => &self.ids[r],
            None => &[],
        }
    }
}

/// Index range of `times` (ascending) whose values lie in the half-open
/// interval `(start, end]`, with `start` allowed to be fractional or negative.
pub(crate) fn trailing_window(times: &[u64], start: f64, end: u64) -> std::ops::Range<usize> {
    let lo = times.partition_point(|&t| (t as f64) <= start);
    let hi = times.partition_point(|&t| t <= end);
    lo..hi.max(lo)
}

/// Removes background activity: an event survives iff some *other* event lies
/// within `half_width` pixels on both axes and within `window` microseconds
/// (either direction). Order of the surviving events is preserved.
pub fn filter_noise(stream: &EventStream, half_width: u32, window: u64) -> EventStream {
    let index = EventIndex::new(stream);
    let hw = half_width as i64;
    let kept = stream
        .events
        .iter()
        .filter(|e| {
            let lo_t = e.t.saturating_sub(window);
            let hi_t = e.t.saturating_add(window);
            let mut count = 0usize;
            for y in e.y as i64 - hw..=e.y as i64 + hw {
                for x in e.x as i64 - hw..=e.x as i64 + hw {
                    let times = index.pixel_times(x, y);
                    let a = times.partition_point(|&t| t < lo_t);
                    let b = times.partition_point(|&t| t <= hi_t);
                    count += b - a;
                    if count >= 2 {
                        return true;
                    }
                }
            }
            false
        })
        .copied()
        .collect();
    EventStream {
        width: stream.width,
        height: stream.height,
        events: kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(x: u16, y: u16, t: u64) -> Event {
        Event::new(x, y, t, true)
    }

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(32, 32, events).unwrap()
    }

    #[test]
    fn new_sorts_stably_by_time() {
        let s = stream(vec![ev(1, 1, 2000), ev(2, 2, 1000), ev(3, 3, 1000)]);
        let xs: Vec<u16> = s.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![2, 3, 1]);
    }

    #[test]
    fn new_rejects_out_of_bounds() {
        let err = EventStream::new(4, 4, vec![ev(4, 0, 0)]).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { x: 4, .. }));
    }

    #[test]
    fn isolated_event_is_removed() {
        let s = stream(vec![ev(5, 5, 1000)]);
        assert!(filter_noise(&s, 2, 30_000).is_empty());
    }

    #[test]
    fn close_pair_is_kept() {
        let s = stream(vec![ev(5, 5, 1000), ev(6, 5, 2000)]);
        assert_eq!(filter_noise(&s, 2, 30_000).len(), 2);
    }

    #[test]
    fn pair_separated_in_time_is_removed() {
        let s = stream(vec![ev(5, 5, 0), ev(5, 5, 100_000)]);
        assert!(filter_noise(&s, 2, 30_000).is_empty());
    }

    #[test]
    fn window_edges_are_inclusive() {
        let s = stream(vec![ev(5, 5, 0), ev(7, 3, 30_000)]);
        assert_eq!(filter_noise(&s, 2, 30_000).len(), 2);
        let s = stream(vec![ev(5, 5, 0), ev(8, 5, 0)]);
        assert!(filter_noise(&s, 2, 30_000).is_empty());
    }

    #[test]
    fn empty_stream_filters_to_empty() {
        let s = EventStream::empty(8, 8);
        let f = filter_noise(&s, 2, 30_000);
        assert!(f.is_empty());
        assert_eq!((f.width(), f.height()), (8, 8));
    }

    #[test]
    fn index_groups_times_per_pixel() {
        let s = stream(vec![ev(1, 2, 30), ev(1, 2, 10), ev(0, 0, 20)]);
        let idx = EventIndex::new(&s);
        assert_eq!(idx.pixel_times(1, 2), &[10, 30]);
        assert_eq!(idx.pixel_times(0, 0), &[20]);
        assert!(idx.pixel_times(-1, 0).is_empty());
        assert!(idx.pixel_times(32, 0).is_empty());
        let ids = idx.pixel_ids(1, 2);
        assert_eq!(s.events()[ids[0] as usize].t, 10);
    }

    #[test]
    fn trailing_window_is_half_open() {
        let times = [0, 10, 20, 30];
        assert_eq!(trailing_window(&times, 10.0, 30), 2..4);
        assert_eq!(trailing_window(&times, -5.0, 0), 0..1);
        assert_eq!(trailing_window(&times, 9.5, 20), 1..3);
        assert_eq!(trailing_window(&times, 30.0, 30), 4..4);
    }
}
