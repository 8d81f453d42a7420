//! Seeded check-in generators with known next-POI rules.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::haversine_km;
use crate::ingest::CheckIn;

pub const NYC: (f64, f64) = (40.75, -73.98);
pub const TOKYO: (f64, f64) = (35.68, 139.76);

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Random point within roughly `radius_km` of `center`.
fn scatter<R: Rng>(rng: &mut R, center: (f64, f64), radius_km: f64) -> (f64, f64) {
    let dlat = radius_km / 111.0;
    let dlon = radius_km / (111.0 * center.0.to_radians().cos());
    (
        center.0 + rng.random_range(-dlat..dlat),
        center.1 + rng.random_range(-dlon..dlon),
    )
}

#[derive(Clone, Debug)]
pub struct CycleSpec {
    pub pois: usize,
    pub users: usize,
    pub events: usize,
    pub center: (f64, f64),
    pub seed: u64,
}

impl Default for CycleSpec {
    fn default() -> Self {
        Self {
            pois: 20,
            users: 50,
            events: 200,
            center: NYC,
            seed: 0,
        }
    }
}

/// Every user walks POI `i → i+1 (mod n)` hourly from a random start POI and
/// start hour. POIs are scattered at random, so location says nothing about
/// the order.
pub fn transition_cycle(spec: &CycleSpec) -> Vec<CheckIn> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coords: Vec<(f64, f64)> = (0..spec.pois).map(|_| scatter(&mut rng, spec.center, 8.0)).collect();
    let mut out = Vec::with_capacity(spec.users * spec.events);
    for u in 0..spec.users {
        let mut poi = rng.random_range(0..spec.pois);
        let mut t = epoch() + Duration::hours(rng.random_range(0..168));
        for _ in 0..spec.events {
            out.push(CheckIn {
                user_id: format!("u{u:03}"),
                poi_id: format!("c{poi:03}"),
                category: format!("cat{}", poi % 4),
                timestamp: t,
                lat: coords[poi].0,
                lon: coords[poi].1,
            });
            poi = (poi + 1) % spec.pois;
            t += Duration::hours(1);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub users: usize,
    pub events: usize,
    pub center: (f64, f64),
    /// POI ids are `{prefix}{index}`.
    pub prefix: String,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            clusters: 5,
            per_cluster: 4,
            users: 50,
            events: 200,
            center: NYC,
            prefix: "g".into(),
            seed: 0,
        }
    }
}

/// POIs in tight clusters. Within a cluster the next POI is the nearest one
/// not yet visited on this pass; once a cluster is exhausted the user jumps
/// to a random POI of another cluster. Categories are drawn independently
/// of location.
pub fn geo_clustered(spec: &ClusterSpec) -> Vec<CheckIn> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<(f64, f64)> = (0..spec.clusters).map(|_| scatter(&mut rng, spec.center, 10.0)).collect();
    let coords: Vec<(f64, f64)> = (0..spec.clusters * spec.per_cluster)
        .map(|p| scatter(&mut rng, centers[p / spec.per_cluster], 0.5))
        .collect();
    let categories: Vec<usize> = (0..coords.len()).map(|_| rng.random_range(0..4)).collect();
    let cluster_of = |p: usize| p / spec.per_cluster;
    let mut out = Vec::with_capacity(spec.users * spec.events);
    for u in 0..spec.users {
        let mut poi = rng.random_range(0..coords.len());
        let mut visited = vec![poi];
        let mut t = epoch() + Duration::hours(rng.random_range(0..168));
        for _ in 0..spec.events {
            out.push(CheckIn {
                user_id: format!("u{u:03}"),
                poi_id: format!("{}{poi:03}", spec.prefix),
                category: format!("cat{}", categories[poi]),
                timestamp: t,
                lat: coords[poi].0,
                lon: coords[poi].1,
            });
            t += Duration::hours(1);
            let c = cluster_of(poi);
            let next = (c * spec.per_cluster..(c + 1) * spec.per_cluster)
                .filter(|q| !visited.contains(q))
                .min_by(|&a, &b| haversine_km(coords[poi], coords[a]).total_cmp(&haversine_km(coords[poi], coords[b])));
            poi = match next {
                Some(q) => q,
                None => {
                    let mut others: Vec<usize> = (0..spec.clusters).filter(|&k| k != c || spec.clusters == 1).collect();
                    others.shuffle(&mut rng);
                    others[0] * spec.per_cluster + rng.random_range(0..spec.per_cluster)
                }
            };
            if cluster_of(poi) != c {
                visited.clear();
            }
            visited.push(poi);
        }
    }
    out
}

/// Two clustered cities under the same proximity rule with disjoint POI ids.
pub fn two_cities(seed: u64) -> (Vec<CheckIn>, Vec<CheckIn>) {
    let a = geo_clustered(&ClusterSpec {
        center: NYC,
        prefix: "nyc".into(),
        seed,
        ..ClusterSpec::default()
    });
    let b = geo_clustered(&ClusterSpec {
        center: TOKYO,
        prefix: "tky".into(),
        seed: seed.wrapping_add(1),
        ..ClusterSpec::default()
    });
    (a, b)
}
