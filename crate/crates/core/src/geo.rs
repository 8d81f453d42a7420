//! Web-Mercator pixel projection, quadkeys, quadkey n-grams and haversine
//! distance.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

pub const TILE_SIZE: f64 = 256.0;
pub const MAX_LATITUDE: f64 = 85.05112878;
pub const MAX_LEVEL: u32 = 30;
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Pixel and tile position of a point at one zoom level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPosition {
    pub level: u32,
    pub x: f64,
    pub y: f64,
    pub tile_x: u32,
    pub tile_y: u32,
}

/// Wraps longitudes outside `[-180, 180]` back into range. `180` itself is
/// kept so that it lands in the last pixel column instead of wrapping west.
fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    }
}

/// Projects `(lat, lon)` onto the pixel grid of `level`.
pub fn project(lat: f64, lon: f64, level: u32) -> Result<GridPosition> {
    if !lat.is_finite() || !lon.is_finite() {
        return Err(Error::InvalidCoordinate { lat, lon });
    }
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(Error::InvalidLevel(level));
    }
    let lat = lat.clamp(-MAX_LATITUDE, MAX_LATITUDE);
    let lon = normalize_lon(lon);
    let size = TILE_SIZE * 2f64.powi(level as i32);
    let sin_lat = (lat * PI / 180.0).sin();
    let x = (lon + 180.0) / 360.0 * size;
    let y = (0.5 - 1.0 / (4.0 * PI) * ((1.0 + sin_lat) / (1.0 - sin_lat)).ln()) * size;
    let x = x.clamp(0.0, size - 1.0);
    let y = y.clamp(0.0, size - 1.0);
    Ok(GridPosition {
        level,
        x,
        y,
        tile_x: (x / TILE_SIZE).floor() as u32,
        tile_y: (y / TILE_SIZE).floor() as u32,
    })
}

/// Base-4 tile path; digit `i` names the quadrant chosen at level `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuadKey {
    digits: Vec<u8>,
}

impl QuadKey {
    pub fn from_digits(digits: Vec<u8>) -> Result<Self> {
        if digits.iter().any(|d| *d > 3) {
            return Err(Error::Config("quadkey digits must be in 0..=3".into()));
        }
        Ok(Self { digits })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let digits = s
            .bytes()
            .map(|b| match b {
                b'0'..=b'3' => Ok(b - b'0'),
                _ => Err(Error::Config(format!("`{s}` is not a quadkey"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { digits })
    }

    pub fn level(&self) -> usize {
        self.digits.len()
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    /// Digits as reals, the `S` vector fed to the Fourier features.
    pub fn digit_vector(&self) -> Vec<f64> {
        self.digits.iter().map(|d| *d as f64).collect()
    }
}

impl fmt::Display for QuadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.digits {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Interleaves tile bits, most significant level first.
pub fn quadkey(pos: &GridPosition) -> QuadKey {
    let digits = (1..=pos.level)
        .rev()
        .map(|i| {
            let mask = 1u32 << (i - 1);
            let mut d = 0u8;
            if pos.tile_x & mask != 0 {
                d += 1;
            }
            if pos.tile_y & mask != 0 {
                d += 2;
            }
            d
        })
        .collect();
    QuadKey { digits }
}

pub fn quadkey_for(lat: f64, lon: f64, level: u32) -> Result<QuadKey> {
    Ok(quadkey(&project(lat, lon, level)?))
}

/// Overlapping substrings of a quadkey.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramSequence {
    pub n: usize,
    pub grams: Vec<String>,
}

impl NGramSequence {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Each gram read as a base-4 number, i.e. its row in a `4^n` table.
    pub fn indices(&self) -> Vec<usize> {
        self.grams.iter().map(|g| gram_index(g)).collect()
    }
}

pub fn gram_index(gram: &str) -> usize {
    gram.bytes().fold(0, |acc, b| acc * 4 + (b - b'0') as usize)
}

/// Number of grams produced for a key of length `level`.
pub fn ngram_count(level: usize, n: usize) -> usize {
    if level >= n {
        level - n + 1
    } else {
        1
    }
}

/// Width-`n`, stride-1 windows over the digit string. Keys shorter than `n`
/// yield one gram right-padded with `0`.
pub fn ngrams(key: &QuadKey, n: usize) -> NGramSequence {
    assert!(n >= 1, "gram width must be at least 1");
    let s = key.to_string();
    let grams = if s.len() >= n {
        (0..=s.len() - n).map(|i| s[i..i + n].to_string()).collect()
    } else {
        vec![format!("{s:0<n$}")]
    };
    NGramSequence { n, grams }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equator_prime_meridian_is_grid_centre() {
        let p = project(0.0, 0.0, 1).unwrap();
        assert_eq!((p.x, p.y, p.tile_x, p.tile_y), (256.0, 256.0, 1, 1));
        assert_eq!(quadkey(&p).to_string(), "3");
    }

    #[test]
    fn west_edge_and_east_edge() {
        let p = project(0.0, -180.0, 1).unwrap();
        assert_eq!((p.x, p.tile_x), (0.0, 0));
        let p = project(0.0, 180.0, 1).unwrap();
        assert_eq!((p.x, p.tile_x), (511.0, 1));
        let p = project(0.0, 190.0, 3).unwrap();
        let q = project(0.0, -170.0, 3).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn quadkey_examples() {
        let p = GridPosition {
            level: 5,
            x: 0.0,
            y: 0.0,
            tile_x: 0,
            tile_y: 0,
        };
        assert_eq!(quadkey(&p).to_string(), "00000");
        let p = project(0.0, 0.0, 3).unwrap();
        assert_eq!((p.tile_x, p.tile_y), (4, 4));
        assert_eq!(quadkey(&p).to_string(), "300");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(project(f64::NAN, 0.0, 3).is_err());
        assert!(project(0.0, f64::INFINITY, 3).is_err());
        assert!(project(0.0, 0.0, 0).is_err());
        assert!(project(0.0, 0.0, 31).is_err());
        assert!(QuadKey::parse("0124").is_err());
    }

    #[test]
    fn ngram_examples() {
        let k = QuadKey::parse("03201").unwrap();
        assert_eq!(ngrams(&k, 3).grams, vec!["032", "320", "201"]);
        let k = QuadKey::parse("0000000").unwrap();
        assert_eq!(ngrams(&k, 3).grams, vec!["000"; 5]);
        let k = QuadKey::parse("03").unwrap();
        assert_eq!(ngrams(&k, 3).grams, vec!["030"]);
        assert_eq!(gram_index("321"), 3 * 16 + 2 * 4 + 1);
    }

    #[test]
    fn haversine_fixed_points() {
        assert_eq!(haversine_km((12.5, -40.0), (12.5, -40.0)), 0.0);
        let half = haversine_km((0.0, 0.0), (0.0, 180.0));
        assert!((half - PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((half - 20015.1).abs() < 0.1);
    }
}
