//! Road, vehicle and lane-cluster geometry of a single super cluster.
//!
//! Vehicles drive left to right along `x`. Lane `k` is centred at
//! `(k + 0.5) * lane_width`. Every vehicle carries a single omnidirectional
//! antenna at the centre of its roof.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid road configuration: {0}")]
    InvalidRoad(String),
    #[error("invalid vehicle dimensions: {0}")]
    InvalidDims(String),
    #[error("a super cluster needs at least 2 lane clusters, got {0}")]
    TooFewClusters(usize),
    #[error("lane cluster {lc} requests lane {lane} but the road has {num_lanes} lanes")]
    LaneOutOfRange {
        lc: usize,
        lane: usize,
        num_lanes: usize,
    },
    #[error("two lane clusters share lane {0}")]
    DuplicateLane(usize),
    #[error("lane cluster {0} has no vehicles")]
    EmptyCluster(usize),
    #[error("platoon of {span_m:.2} m does not fit on a {length_m:.2} m road segment")]
    PlacementOverflow { span_m: f64, length_m: f64 },
    #[error("vehicle {member} of lane cluster {lc} overlaps its predecessor")]
    Overlap { lc: usize, member: usize },
    #[error("CH selection has {got} entries for {expected} lane clusters")]
    SelectionLength { expected: usize, got: usize },
    #[error("CH index {index} is out of range for lane cluster {lc} of size {size}")]
    SelectionIndex {
        lc: usize,
        index: usize,
        size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadConfig {
    pub length_m: f64,
    pub width_m: f64,
    pub num_lanes: usize,
}

impl RoadConfig {
    pub fn new(length_m: f64, width_m: f64, num_lanes: usize) -> Result<Self, TopologyError> {
        if !(length_m > 0.0) || !(width_m > 0.0) {
            return Err(TopologyError::InvalidRoad(format!(
                "length {length_m} m and width {width_m} m must be positive"
            )));
        }
        if num_lanes == 0 {
            return Err(TopologyError::InvalidRoad(
                "at least one lane required".into(),
            ));
        }
        Ok(Self {
            length_m,
            width_m,
            num_lanes,
        })
    }

    /// 60 m x 12 m four-lane highway segment.
    pub fn highway() -> Self {
        Self {
            length_m: 60.0,
            width_m: 12.0,
            num_lanes: 4,
        }
    }

    pub fn lane_width_m(&self) -> f64 {
        self.width_m / self.num_lanes as f64
    }

    pub fn lane_center_m(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width_m()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleDims {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub antenna_height_m: f64,
}

impl VehicleDims {
    pub fn new(
        length_m: f64,
        width_m: f64,
        height_m: f64,
        antenna_height_m: f64,
    ) -> Result<Self, TopologyError> {
        let all_positive = [length_m, width_m, height_m, antenna_height_m]
            .iter()
            .all(|v| *v > 0.0);
        if !all_positive {
            return Err(TopologyError::InvalidDims(
                "all dimensions must be positive".into(),
            ));
        }
        if antenna_height_m > height_m + 0.5 {
            return Err(TopologyError::InvalidDims(format!(
                "antenna at {antenna_height_m} m is more than 0.5 m above a {height_m} m roof"
            )));
        }
        Ok(Self {
            length_m,
            width_m,
            height_m,
            antenna_height_m,
        })
    }

    /// Standard sedan, antenna on the roof.
    pub fn sedan() -> Self {
        Self {
            length_m: 4.5,
            width_m: 1.7,
            height_m: 1.7,
            antenna_height_m: 1.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    /// Longitudinal position of the vehicle centre.
    pub x_m: f64,
    pub lane: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneCluster {
    pub lane_index: usize,
    /// Front vehicle first.
    pub members: Vec<Vehicle>,
}

impl LaneCluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Reference to a vehicle by (lane cluster, member) index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VehicleRef {
    pub lc: usize,
    pub member: usize,
}

impl VehicleRef {
    pub fn new(lc: usize, member: usize) -> Self {
        Self { lc, member }
    }
}

/// A vehicle that stands between two antennas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstruction {
    pub vehicle: VehicleRef,
    /// Roof height above the line of sight at the crossing point. Zero for a
    /// roof level with both antennas.
    pub clearance_m: f64,
    pub distance_from_tx_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScTopology {
    pub road: RoadConfig,
    pub dims: VehicleDims,
    pub clusters: Vec<LaneCluster>,
    pub inter_vehicle_gap_m: f64,
    offsets: Vec<usize>,
}

/// CH selection vector: one member index per lane cluster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChSelection(pub Vec<usize>);

impl ChSelection {
    pub fn front(topology: &ScTopology) -> Self {
        ChSelection(vec![0; topology.num_clusters()])
    }

    pub fn get(&self, lc: usize) -> usize {
        self.0[lc]
    }

    pub fn validate(&self, topology: &ScTopology) -> Result<(), TopologyError> {
        if self.0.len() != topology.num_clusters() {
            return Err(TopologyError::SelectionLength {
                expected: topology.num_clusters(),
                got: self.0.len(),
            });
        }
        for (lc, &index) in self.0.iter().enumerate() {
            let size = topology.clusters[lc].size();
            if index >= size {
                return Err(TopologyError::SelectionIndex { lc, index, size });
            }
        }
        Ok(())
    }

    /// Iterates all `prod N_k` selections, last lane cluster varying fastest.
    pub fn enumerate(topology: &ScTopology) -> impl Iterator<Item = ChSelection> + '_ {
        let sizes: Vec<usize> = topology.clusters.iter().map(|c| c.size()).collect();
        let total = topology.ch_combinations();
        (0..total).map(move |mut flat| {
            let mut idx = vec![0; sizes.len()];
            for lc in (0..sizes.len()).rev() {
                idx[lc] = flat % sizes[lc];
                flat /= sizes[lc];
            }
            ChSelection(idx)
        })
    }
}

/// Programmatic construction of a super cluster.
#[derive(Debug, Clone)]
pub struct TopologyBuilder {
    road: RoadConfig,
    dims: VehicleDims,
    gap_m: f64,
    lanes: Vec<usize>,
    sizes: Vec<usize>,
    offsets_m: Vec<f64>,
}

impl TopologyBuilder {
    pub fn new(road: RoadConfig, dims: VehicleDims) -> Self {
        Self {
            road,
            dims,
            gap_m: 5.0,
            lanes: Vec::new(),
            sizes: Vec::new(),
            offsets_m: Vec::new(),
        }
    }

    pub fn gap_m(mut self, gap_m: f64) -> Self {
        self.gap_m = gap_m;
        self
    }

    /// Adds a platoon of `size` vehicles in `lane`, shifted `offset_m`
    /// forward from the common lead position.
    pub fn cluster(mut self, lane: usize, size: usize, offset_m: f64) -> Self {
        self.lanes.push(lane);
        self.sizes.push(size);
        self.offsets_m.push(offset_m);
        self
    }

    pub fn build(self) -> Result<ScTopology, TopologyError> {
        let n_lc = self.lanes.len();
        if n_lc < 2 {
            return Err(TopologyError::TooFewClusters(n_lc));
        }
        if !(self.gap_m >= 0.0) {
            return Err(TopologyError::InvalidRoad(format!(
                "gap {} m must be >= 0",
                self.gap_m
            )));
        }
        for (lc, &lane) in self.lanes.iter().enumerate() {
            if lane >= self.road.num_lanes {
                return Err(TopologyError::LaneOutOfRange {
                    lc,
                    lane,
                    num_lanes: self.road.num_lanes,
                });
            }
            if self.lanes[..lc].contains(&lane) {
                return Err(TopologyError::DuplicateLane(lane));
            }
            if self.sizes[lc] == 0 {
                return Err(TopologyError::EmptyCluster(lc));
            }
        }

        let len = self.dims.length_m;
        let span = |n: usize| n as f64 * len + (n as f64 - 1.0) * self.gap_m;
        let longest = self.sizes.iter().map(|&n| span(n)).fold(0.0, f64::max);
        // Lead vehicles share a common front position that centres the
        // longest platoon on the segment.
        let lead_front = 0.5 * (self.road.length_m + longest);

        let mut clusters = Vec::with_capacity(n_lc);
        for lc in 0..n_lc {
            let front = lead_front + self.offsets_m[lc];
            let members: Vec<Vehicle> = (0..self.sizes[lc])
                .map(|j| Vehicle {
                    x_m: front - 0.5 * len - j as f64 * (len + self.gap_m),
                    lane: self.lanes[lc],
                })
                .collect();
            let rear = members.last().map(|v| v.x_m - 0.5 * len).unwrap_or(front);
            if front > self.road.length_m + 1e-9 || rear < -1e-9 {
                let span_m = if self.offsets_m[lc] == 0.0 {
                    longest
                } else {
                    front - rear
                };
                return Err(TopologyError::PlacementOverflow {
                    span_m,
                    length_m: self.road.length_m,
                });
            }
            clusters.push(LaneCluster {
                lane_index: self.lanes[lc],
                members,
            });
        }
        ScTopology::from_clusters(self.road, self.dims, clusters, self.gap_m)
    }
}

/// One lane cluster per lane starting at lane 0, on the default highway with
/// sedans, lead vehicles aligned.
pub fn build_aligned_topology(
    n_lc: usize,
    vehicles_per_lc: usize,
    gap_m: f64,
) -> Result<ScTopology, TopologyError> {
    let road = RoadConfig::highway();
    if n_lc < 2 {
        return Err(TopologyError::TooFewClusters(n_lc));
    }
    let mut builder = TopologyBuilder::new(road, VehicleDims::sedan()).gap_m(gap_m);
    for lane in 0..n_lc {
        builder = builder.cluster(lane, vehicles_per_lc, 0.0);
    }
    builder.build()
}

impl ScTopology {
    /// Validates explicitly placed clusters.
    pub fn from_clusters(
        road: RoadConfig,
        dims: VehicleDims,
        clusters: Vec<LaneCluster>,
        inter_vehicle_gap_m: f64,
    ) -> Result<Self, TopologyError> {
        if clusters.len() < 2 {
            return Err(TopologyError::TooFewClusters(clusters.len()));
        }
        for (lc, cluster) in clusters.iter().enumerate() {
            if cluster.members.is_empty() {
                return Err(TopologyError::EmptyCluster(lc));
            }
            if cluster.lane_index >= road.num_lanes {
                return Err(TopologyError::LaneOutOfRange {
                    lc,
                    lane: cluster.lane_index,
                    num_lanes: road.num_lanes,
                });
            }
            for (member, v) in cluster.members.iter().enumerate() {
                if v.lane != cluster.lane_index {
                    return Err(TopologyError::LaneOutOfRange {
                        lc,
                        lane: v.lane,
                        num_lanes: road.num_lanes,
                    });
                }
                if v.x_m - 0.5 * dims.length_m < -1e-9
                    || v.x_m + 0.5 * dims.length_m > road.length_m + 1e-9
                {
                    return Err(TopologyError::PlacementOverflow {
                        span_m: v.x_m + 0.5 * dims.length_m,
                        length_m: road.length_m,
                    });
                }
                if member > 0 {
                    let ahead = cluster.members[member - 1].x_m;
                    if ahead - v.x_m < dims.length_m - 1e-9 {
                        return Err(TopologyError::Overlap { lc, member });
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(clusters.len());
        let mut acc = 0;
        for c in &clusters {
            offsets.push(acc);
            acc += c.size();
        }
        Ok(Self {
            road,
            dims,
            clusters,
            inter_vehicle_gap_m,
            offsets,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_vehicles(&self) -> usize {
        self.clusters.iter().map(|c| c.size()).sum()
    }

    /// Number of distinct CH selection vectors.
    pub fn ch_combinations(&self) -> usize {
        self.clusters.iter().map(|c| c.size()).product()
    }

    /// Flat vehicle id used by channel matrices.
    pub fn flat_index(&self, v: VehicleRef) -> usize {
        self.offsets[v.lc] + v.member
    }

    pub fn vehicle_ref(&self, flat: usize) -> VehicleRef {
        let lc = self.offsets.iter().rposition(|&o| o <= flat).unwrap_or(0);
        VehicleRef {
            lc,
            member: flat - self.offsets[lc],
        }
    }

    pub fn vehicle(&self, v: VehicleRef) -> &Vehicle {
        &self.clusters[v.lc].members[v.member]
    }

    /// Antenna position `(x, y, z)`.
    pub fn antenna(&self, v: VehicleRef) -> [f64; 3] {
        let veh = self.vehicle(v);
        [
            veh.x_m,
            self.road.lane_center_m(veh.lane),
            self.dims.antenna_height_m,
        ]
    }

    pub fn all_vehicles(&self) -> impl Iterator<Item = VehicleRef> + '_ {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(lc, c)| (0..c.size()).map(move |m| VehicleRef::new(lc, m)))
    }

    pub fn distance(&self, a: VehicleRef, b: VehicleRef) -> f64 {
        let pa = self.antenna(a);
        let pb = self.antenna(b);
        let dx = pa[0] - pb[0];
        let dy = pa[1] - pb[1];
        let dz = pa[2] - pb[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Vehicles whose footprint crosses the ground projection of the a-b
    /// path. Clearance is evaluated at the midpoint of the crossed chord.
    pub fn obstructors(&self, a: VehicleRef, b: VehicleRef) -> Vec<Obstruction> {
        if a == b {
            return Vec::new();
        }
        let pa = self.antenna(a);
        let pb = self.antenna(b);
        let total = self.distance(a, b);
        let half_len = 0.5 * self.dims.length_m;
        let half_wid = 0.5 * self.dims.width_m;
        let mut out = Vec::new();
        for v in self.all_vehicles() {
            if v == a || v == b {
                continue;
            }
            let veh = self.vehicle(v);
            let cy = self.road.lane_center_m(veh.lane);
            let rect = [
                veh.x_m - half_len,
                veh.x_m + half_len,
                cy - half_wid,
                cy + half_wid,
            ];
            if let Some((t0, t1)) = clip_segment(pa, pb, rect) {
                let t = 0.5 * (t0 + t1);
                let los_height = pa[2] + t * (pb[2] - pa[2]);
                out.push(Obstruction {
                    vehicle: v,
                    clearance_m: self.dims.height_m - los_height,
                    distance_from_tx_m: t * total,
                });
            }
        }
        out
    }
}

/// Liang-Barsky clip of the ground projection of `p -> q` against an
/// axis-aligned rectangle `[xmin, xmax, ymin, ymax]`. Returns the parameter
/// interval of the chord when it has positive length.
fn clip_segment(p: [f64; 3], q: [f64; 3], rect: [f64; 4]) -> Option<(f64, f64)> {
    let dx = q[0] - p[0];
    let dy = q[1] - p[1];
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    let checks = [
        (-dx, p[0] - rect[0]),
        (dx, rect[1] - p[0]),
        (-dy, p[1] - rect[2]),
        (dy, rect[3] - p[1]),
    ];
    for (denom, num) in checks {
        if denom == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / denom;
            if denom < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t1 - t0 > 1e-12).then_some((t0, t1))
}

/// Minimum-distance CH selection: the joint selection with the smallest sum
/// of pairwise CH-CH distances. Ties go to the first selection in scan order.
pub fn md_chs(topology: &ScTopology) -> ChSelection {
    let n = topology.num_clusters();
    let mut best: Option<(f64, ChSelection)> = None;
    for sel in ChSelection::enumerate(topology) {
        let mut total = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                total += topology.distance(
                    VehicleRef::new(a, sel.get(a)),
                    VehicleRef::new(b, sel.get(b)),
                );
            }
        }
        let better = match &best {
            None => true,
            Some((d, _)) => total < *d - 1e-9 * d.max(1.0),
        };
        if better {
            best = Some((total, sel));
        }
    }
    best.map(|(_, s)| s)
        .expect("topology has at least one selection")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn aligned_span_fits_road() {
        let topo = build_aligned_topology(4, 6, 5.0).unwrap();
        assert_eq!(topo.num_clusters(), 4);
        assert_eq!(topo.num_vehicles(), 24);
        let c = &topo.clusters[0];
        let front = c.members[0].x_m + 2.25;
        let rear = c.members[5].x_m - 2.25;
        assert_abs_diff_eq!(front - rear, 6.0 * 4.5 + 5.0 * 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(front - rear, 52.0, epsilon = 1e-12);
        for (k, c) in topo.clusters.iter().enumerate() {
            assert_eq!(c.lane_index, k);
            assert!(c.members.windows(2).all(|w| w[0].x_m > w[1].x_m));
        }
    }

    #[test]
    fn aligned_rejects_single_cluster() {
        assert_eq!(
            build_aligned_topology(1, 6, 5.0),
            Err(TopologyError::TooFewClusters(1))
        );
    }

    #[test]
    fn aligned_overflow_with_seven_vehicles() {
        match build_aligned_topology(4, 7, 5.0) {
            Err(TopologyError::PlacementOverflow { span_m, length_m }) => {
                assert_abs_diff_eq!(span_m, 61.5, epsilon = 1e-12);
                assert_eq!(length_m, 60.0);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn too_many_lanes_rejected() {
        assert!(matches!(
            build_aligned_topology(5, 2, 5.0),
            Err(TopologyError::LaneOutOfRange { .. })
        ));
    }

    #[test]
    fn distances() {
        let topo = build_aligned_topology(4, 6, 5.0).unwrap();
        let a = VehicleRef::new(0, 0);
        assert_eq!(topo.distance(a, a), 0.0);
        assert_abs_diff_eq!(
            topo.distance(a, VehicleRef::new(0, 1)),
            9.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            topo.distance(a, VehicleRef::new(1, 0)),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn obstruction_cases() {
        let topo = build_aligned_topology(4, 6, 5.0).unwrap();
        assert!(topo
            .obstructors(VehicleRef::new(0, 0), VehicleRef::new(0, 1))
            .is_empty());
        let obs = topo.obstructors(VehicleRef::new(0, 0), VehicleRef::new(0, 2));
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].vehicle, VehicleRef::new(0, 1));
        assert_abs_diff_eq!(obs[0].clearance_m, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(obs[0].distance_from_tx_m, 9.5, epsilon = 1e-9);

        // lane 0 -> lane 2, same column: crosses the lane-1 vehicle of that column
        let obs = topo.obstructors(VehicleRef::new(0, 3), VehicleRef::new(2, 3));
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].vehicle, VehicleRef::new(1, 3));
        // lane 0 -> lane 1, same column: adjacent, empty
        assert!(topo
            .obstructors(VehicleRef::new(0, 3), VehicleRef::new(1, 3))
            .is_empty());
    }

    #[test]
    fn md_chs_aligned_columns() {
        let topo = build_aligned_topology(4, 6, 5.0).unwrap();
        let sel = md_chs(&topo);
        let x0 = topo.vehicle(VehicleRef::new(0, sel.get(0))).x_m;
        for lc in 0..4 {
            assert_eq!(topo.vehicle(VehicleRef::new(lc, sel.get(lc))).x_m, x0);
        }
    }

    #[test]
    fn md_chs_matches_brute_force_two_by_two() {
        let topo = TopologyBuilder::new(RoadConfig::highway(), VehicleDims::sedan())
            .cluster(0, 2, 0.0)
            .cluster(1, 2, -7.0)
            .build()
            .unwrap();
        let mut best = (f64::INFINITY, (0, 0));
        for i in 0..2 {
            for j in 0..2 {
                let d = topo.distance(VehicleRef::new(0, i), VehicleRef::new(1, j));
                if d < best.0 {
                    best = (d, (i, j));
                }
            }
        }
        assert_eq!(md_chs(&topo), ChSelection(vec![best.1 .0, best.1 .1]));
        assert_eq!(md_chs(&topo), ChSelection(vec![1, 0]));
    }

    #[test]
    fn selection_enumeration_order() {
        let topo = build_aligned_topology(2, 2, 5.0).unwrap();
        let all: Vec<_> = ChSelection::enumerate(&topo).collect();
        assert_eq!(
            all,
            vec![
                ChSelection(vec![0, 0]),
                ChSelection(vec![0, 1]),
                ChSelection(vec![1, 0]),
                ChSelection(vec![1, 1])
            ]
        );
        assert!(ChSelection(vec![0, 2]).validate(&topo).is_err());
    }

    #[test]
    fn flat_index_round_trip() {
        let topo = build_aligned_topology(3, 4, 5.0).unwrap();
        for (flat, v) in topo.all_vehicles().enumerate() {
            assert_eq!(topo.flat_index(v), flat);
            assert_eq!(topo.vehicle_ref(flat), v);
        }
    }
}
