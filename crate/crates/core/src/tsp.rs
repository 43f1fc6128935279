//! TSPLIB ingestion and the integer tour objective.
//!
//! Only the symmetric `EUC_2D` subset of TSPLIB is accepted. Distances follow
//! the TSPLIB nearest-integer rule, so the well-known optima (7542 for
//! berlin52) are reproduced exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Largest instance `brute_force_optimum` accepts.
pub const BRUTE_FORCE_MAX_CITIES: usize = 10;

#[derive(Debug, Error)]
pub enum TspError {
    #[error("missing header field `{0}`")]
    MissingField(&'static str),
    #[error("unsupported metric `{0}` (only EUC_2D is supported)")]
    UnsupportedMetric(String),
    #[error("unsupported problem type `{0}` (only TSP is supported)")]
    UnsupportedType(String),
    #[error("DIMENSION is {declared} but {found} coordinate lines were read")]
    DimensionMismatch { declared: usize, found: usize },
    #[error("malformed line {line}: `{content}`")]
    Malformed { line: usize, content: String },
    #[error("instance needs at least 3 cities, got {0}")]
    TooFewCities(usize),
    #[error("path is not a permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("brute force is limited to {BRUTE_FORCE_MAX_CITIES} cities, got {0}")]
    TooLarge(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct City {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euc2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub cities: Vec<City>,
    pub metric: Metric,
}

impl Instance {
    /// Builds an instance from raw coordinates, ids assigned in order.
    pub fn from_coords(name: impl Into<String>, coords: &[(f64, f64)]) -> Result<Self, TspError> {
        if coords.len() < 3 {
            return Err(TspError::TooFewCities(coords.len()));
        }
        let cities = coords
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| City { id, x, y })
            .collect();
        Ok(Self {
            name: name.into(),
            cities,
            metric: Metric::Euc2d,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TspError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TspError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_tsplib(&text)
    }

    pub fn n(&self) -> usize {
        self.cities.len()
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::from_instance(self)
    }
}

/// Dense symmetric matrix of integer edge lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<u32>,
}

impl DistanceMatrix {
    pub fn from_instance(inst: &Instance) -> Self {
        let n = inst.n();
        let mut d = vec![0u32; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let w = euc2d_distance(&inst.cities[i], &inst.cities[j]);
                d[i * n + j] = w;
                d[j * n + i] = w;
            }
        }
        Self { n, d }
    }

    /// Builds a matrix from a full row-major table. The caller guarantees
    /// symmetry and a zero diagonal.
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let n = rows.len();
        let mut d = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "distance rows must be square");
            d.extend_from_slice(row);
        }
        Self { n, d }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.d[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    pub path: Vec<usize>,
    pub length: u64,
}

/// TSPLIB `nint(sqrt(dx^2 + dy^2))`.
pub fn euc2d_distance(a: &City, b: &City) -> u32 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    ((dx * dx + dy * dy).sqrt() + 0.5).floor() as u32
}

pub fn is_permutation(path: &[usize], n: usize) -> bool {
    if path.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &c in path {
        if c >= n || seen[c] {
            return false;
        }
        seen[c] = true;
    }
    true
}

/// Closed tour length, including the edge back to `path[0]`.
pub fn tour_length(path: &[usize], d: &DistanceMatrix) -> Result<u64, TspError> {
    if !is_permutation(path, d.n()) {
        return Err(TspError::InvalidPermutation(d.n()));
    }
    Ok(closed_length(path, d))
}

/// Unchecked variant for callers that already hold a valid permutation.
pub(crate) fn closed_length(path: &[usize], d: &DistanceMatrix) -> u64 {
    let n = path.len();
    (0..n)
        .map(|i| u64::from(d.get(path[i], path[(i + 1) % n])))
        .sum()
}

/// Exhaustive search over all tours starting at city 0.
pub fn brute_force_optimum(inst: &Instance) -> Result<Tour, TspError> {
    let n = inst.n();
    if n > BRUTE_FORCE_MAX_CITIES {
        return Err(TspError::TooLarge(n));
    }
    let d = inst.distance_matrix();
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best_len = u64::MAX;
    let mut best = Vec::new();
    permute(&mut rest, 0, &mut |perm| {
        let mut len = u64::from(d.get(0, perm[0]));
        for w in perm.windows(2) {
            len += u64::from(d.get(w[0], w[1]));
        }
        len += u64::from(d.get(perm[perm.len() - 1], 0));
        if len < best_len {
            best_len = len;
            best = perm.to_vec();
        }
    });
    let mut path = Vec::with_capacity(n);
    path.push(0);
    path.extend(best);
    Ok(Tour {
        path,
        length: best_len,
    })
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn split_header(line: &str) -> Option<(String, String)> {
    let (key, value) = line.split_once(':')?;
    Some((key.trim().to_ascii_uppercase(), value.trim().to_string()))
}

pub fn parse_tsplib(text: &str) -> Result<Instance, TspError> {
    let mut name = None;
    let mut dimension = None;
    let mut metric = None;
    let mut in_coords = false;
    let mut saw_coords = false;
    let mut coords: Vec<(usize, usize, f64, f64)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let upper = line.to_ascii_uppercase();
        if upper == "EOF" {
            break;
        }
        if upper.starts_with("NODE_COORD_SECTION") {
            in_coords = true;
            saw_coords = true;
            continue;
        }
        if in_coords {
            if let Some((id, x, y)) = parse_coord(line) {
                coords.push((lineno + 1, id, x, y));
                continue;
            }
            // A keyword line ends the section; anything else is garbage.
            if line.contains(':') || upper.ends_with("_SECTION") {
                in_coords = false;
            } else {
                return Err(TspError::Malformed {
                    line: lineno + 1,
                    content: raw.to_string(),
                });
            }
        }
        if upper.ends_with("_SECTION") {
            // DISPLAY_DATA_SECTION and friends are not consumed
            continue;
        }
        let Some((key, value)) = split_header(line) else {
            return Err(TspError::Malformed {
                line: lineno + 1,
                content: raw.to_string(),
            });
        };
        match key.as_str() {
            "NAME" => name = Some(value),
            "TYPE" => {
                if !value.eq_ignore_ascii_case("TSP") {
                    return Err(TspError::UnsupportedType(value));
                }
            }
            "DIMENSION" => {
                let dim = value.parse::<usize>().map_err(|_| TspError::Malformed {
                    line: lineno + 1,
                    content: raw.to_string(),
                })?;
                dimension = Some(dim);
            }
            "EDGE_WEIGHT_TYPE" => {
                if !value.eq_ignore_ascii_case("EUC_2D") {
                    return Err(TspError::UnsupportedMetric(value));
                }
                metric = Some(Metric::Euc2d);
            }
            _ => {}
        }
    }

    let name = name.ok_or(TspError::MissingField("NAME"))?;
    let dimension = dimension.ok_or(TspError::MissingField("DIMENSION"))?;
    let metric = metric.ok_or(TspError::MissingField("EDGE_WEIGHT_TYPE"))?;
    if !saw_coords {
        return Err(TspError::MissingField("NODE_COORD_SECTION"));
    }
    if coords.len() != dimension {
        return Err(TspError::DimensionMismatch {
            declared: dimension,
            found: coords.len(),
        });
    }
    if dimension < 3 {
        return Err(TspError::TooFewCities(dimension));
    }

    let mut cities: Vec<Option<City>> = vec![None; dimension];
    for (line, tsplib_id, x, y) in coords {
        let slot = tsplib_id
            .checked_sub(1)
            .filter(|&id| id < dimension)
            .ok_or_else(|| TspError::Malformed {
                line,
                content: format!("node id {tsplib_id} outside 1..={dimension}"),
            })?;
        if cities[slot].is_some() {
            return Err(TspError::Malformed {
                line,
                content: format!("duplicate node id {tsplib_id}"),
            });
        }
        cities[slot] = Some(City { id: slot, x, y });
    }
    let cities = cities
        .into_iter()
        .map(|c| c.expect("ids are dense"))
        .collect();
    Ok(Instance {
        name,
        cities,
        metric,
    })
}

fn parse_coord(line: &str) -> Option<(usize, f64, f64)> {
    let mut it = line.split_whitespace();
    let id = it.next()?.parse().ok()?;
    let x = it.next()?.parse().ok()?;
    let y = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((id, x, y))
}

/// Reads a TSPLIB `.opt.tour` file into a 0-based path.
pub fn parse_opt_tour(text: &str) -> Result<Vec<usize>, TspError> {
    let mut in_tour = false;
    let mut path = Vec::new();
    let mut dimension = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if !in_tour {
            if line.eq_ignore_ascii_case("TOUR_SECTION") {
                in_tour = true;
            } else if let Some((key, value)) = split_header(line) {
                if key == "DIMENSION" {
                    dimension = value.parse::<usize>().ok();
                }
            }
            continue;
        }
        for tok in line.split_whitespace() {
            let id: i64 = tok.parse().map_err(|_| TspError::Malformed {
                line: lineno + 1,
                content: raw.to_string(),
            })?;
            if id == -1 {
                return finish_tour(path, dimension);
            }
            if id < 1 {
                return Err(TspError::Malformed {
                    line: lineno + 1,
                    content: raw.to_string(),
                });
            }
            path.push(id as usize - 1);
        }
    }
    if !in_tour {
        return Err(TspError::MissingField("TOUR_SECTION"));
    }
    finish_tour(path, dimension)
}

fn finish_tour(path: Vec<usize>, dimension: Option<usize>) -> Result<Vec<usize>, TspError> {
    if let Some(dim) = dimension {
        if dim != path.len() {
            return Err(TspError::DimensionMismatch {
                declared: dim,
                found: path.len(),
            });
        }
    }
    if !is_permutation(&path, path.len()) {
        return Err(TspError::InvalidPermutation(path.len()));
    }
    Ok(path)
}

pub fn read_opt_tour(path: impl AsRef<Path>) -> Result<Vec<usize>, TspError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TspError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_opt_tour(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "NAME: tri\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\n\
                            NODE_COORD_SECTION\n1 0 0\n2 3 0\n3 0 4\nEOF\n";

    fn city(x: f64, y: f64) -> City {
        City { id: 0, x, y }
    }

    #[test]
    fn parses_triangle() {
        let inst = parse_tsplib(TRIANGLE).unwrap();
        assert_eq!(inst.n(), 3);
        assert_eq!(inst.name, "tri");
        assert_eq!(
            inst.cities[2],
            City {
                id: 2,
                x: 0.0,
                y: 4.0
            }
        );
    }

    #[test]
    fn header_whitespace_is_tolerated() {
        let text = TRIANGLE.replace("DIMENSION: 3", "  DIMENSION :   3 ");
        assert_eq!(parse_tsplib(&text).unwrap().n(), 3);
    }

    #[test]
    fn geo_metric_is_rejected() {
        let text = TRIANGLE.replace("EUC_2D", "GEO");
        let err = parse_tsplib(&text).unwrap_err();
        assert!(matches!(err, TspError::UnsupportedMetric(ref m) if m == "GEO"));
        assert!(err.to_string().contains("unsupported metric"));
    }

    #[test]
    fn parse_errors_are_distinct() {
        let no_dim = TRIANGLE.replace("DIMENSION: 3\n", "");
        assert!(matches!(
            parse_tsplib(&no_dim),
            Err(TspError::MissingField("DIMENSION"))
        ));
        let no_name = TRIANGLE.replace("NAME: tri\n", "");
        assert!(matches!(
            parse_tsplib(&no_name),
            Err(TspError::MissingField("NAME"))
        ));
        let mismatch = TRIANGLE.replace("DIMENSION: 3", "DIMENSION: 4");
        assert!(matches!(
            parse_tsplib(&mismatch),
            Err(TspError::DimensionMismatch {
                declared: 4,
                found: 3
            })
        ));
        let bad = TRIANGLE.replace("2 3 0", "2 three 0");
        assert!(matches!(
            parse_tsplib(&bad),
            Err(TspError::Malformed { line: 7, .. })
        ));
        let atsp = TRIANGLE.replace("TYPE: TSP", "TYPE: ATSP");
        assert!(matches!(
            parse_tsplib(&atsp),
            Err(TspError::UnsupportedType(_))
        ));
    }

    #[test]
    fn euc2d_rounding() {
        assert_eq!(euc2d_distance(&city(0.0, 0.0), &city(3.0, 4.0)), 5);
        assert_eq!(euc2d_distance(&city(0.0, 0.0), &city(0.0, 0.0)), 0);
        assert_eq!(euc2d_distance(&city(0.0, 0.0), &city(1.0, 1.0)), 1);
        // 1.5 rounds up under nint
        assert_eq!(euc2d_distance(&city(0.0, 0.0), &city(1.5, 0.0)), 2);
    }

    #[test]
    fn triangle_tour_length() {
        let d = parse_tsplib(TRIANGLE).unwrap().distance_matrix();
        assert_eq!(tour_length(&[0, 1, 2], &d).unwrap(), 12);
        assert!(matches!(
            tour_length(&[0, 1, 1], &d),
            Err(TspError::InvalidPermutation(3))
        ));
        assert!(tour_length(&[0, 1], &d).is_err());
    }

    #[test]
    fn zero_matrix_gives_zero_length() {
        let d = DistanceMatrix::from_rows(&vec![vec![0; 5]; 5]);
        assert_eq!(tour_length(&[3, 1, 4, 0, 2], &d).unwrap(), 0);
    }

    #[test]
    fn brute_force_small_cases() {
        let tri = parse_tsplib(TRIANGLE).unwrap();
        assert_eq!(brute_force_optimum(&tri).unwrap().length, 12);

        let square =
            Instance::from_coords("sq", &[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        let t = brute_force_optimum(&square).unwrap();
        assert_eq!(t.length, 4);
        assert_eq!(t.path[0], 0);
        assert_eq!(tour_length(&t.path, &square.distance_matrix()).unwrap(), 4);

        let big: Vec<(f64, f64)> = (0..11).map(|i| (i as f64, 0.0)).collect();
        let big = Instance::from_coords("line", &big).unwrap();
        assert!(matches!(
            brute_force_optimum(&big),
            Err(TspError::TooLarge(11))
        ));
    }

    #[test]
    fn opt_tour_parsing() {
        let text = "NAME : t\nTYPE : TOUR\nDIMENSION : 3\nTOUR_SECTION\n1\n3\n2\n-1\nEOF\n";
        assert_eq!(parse_opt_tour(text).unwrap(), vec![0, 2, 1]);
        let short = text.replace("DIMENSION : 3", "DIMENSION : 4");
        assert!(parse_opt_tour(&short).is_err());
        assert!(parse_opt_tour("NAME : t\n").is_err());
    }
}
