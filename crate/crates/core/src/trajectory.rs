//! Point trajectories shared by the scene generator, the trackers and the evaluation harness.

/// One trajectory sample; sub-pixel coordinates are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub t: u64,
}

impl TrackPoint {
    pub fn new(x: f64, y: f64, t: u64) -> Self {
        TrackPoint { x, y, t }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub samples: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn new(id: u32, samples: Vec<TrackPoint>) -> Self {
        Trajectory { id, samples }
    }

    pub fn first(&self) -> Option<&TrackPoint> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&TrackPoint> {
        self.samples.last()
    }

    /// Time between the first and last sample, in microseconds.
    pub fn span(&self) -> u64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t.saturating_sub(a.t),
            _ => 0,
        }
    }

    pub fn is_time_sorted(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].t <= w[1].t)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectorySet {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        TrajectorySet { trajectories }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }
}

impl FromIterator<Trajectory> for TrajectorySet {
    fn from_iter<I: IntoIterator<Item = Trajectory>>(iter: I) -> Self {
        TrajectorySet::new(iter.into_iter().collect())
    }
}
