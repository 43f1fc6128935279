//! Low-discrepancy parameter sweeps: Sobol points, the Saltelli design built on
//! them, and the tuple CSV exchanged between stages.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamSeed;

/// Dimensions covered by the embedded direction-number table.
pub const MAX_SOBOL_DIMS: usize = 8;

const BITS: usize = 32;

/// Joe & Kuo (new-joe-kuo-6.21201) primitive-polynomial data for dimensions
/// 2..=8 as `(degree s, coefficient bits a, initial m_1..m_s)`. Dimension 1 is
/// the van der Corput sequence.
const JOE_KUO: [(u32, u32, &[u32]); MAX_SOBOL_DIMS - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

pub const TUPLE_CSV_HEADER: &str = "index,alpha,beta,rho,ants";

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("sobol dimension {0} outside 1..={MAX_SOBOL_DIMS}")]
    DimensionOutOfRange(usize),
    #[error("saltelli base sample count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("tuple csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Gray-code Sobol generator, unscrambled.
#[derive(Debug, Clone)]
pub struct SobolGenerator {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolGenerator {
    pub fn new(dims: usize) -> Result<Self, SamplingError> {
        if dims == 0 || dims > MAX_SOBOL_DIMS {
            return Err(SamplingError::DimensionOutOfRange(dims));
        }
        let mut directions = Vec::with_capacity(dims);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(s, a, m) in JOE_KUO.iter().take(dims - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..s {
                v[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for l in 1..s {
                    if (a >> (s - 1 - l)) & 1 == 1 {
                        x ^= v[k - l];
                    }
                }
                v[k] = x;
            }
            directions.push(v);
        }
        Ok(Self {
            directions,
            state: vec![0; dims],
            index: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Emits the point at the current index (the first call yields the origin).
    pub fn next_point(&mut self) -> Vec<f64> {
        if self.index > 0 {
            let c = (self.index - 1).trailing_ones() as usize;
            assert!(c < BITS, "sobol sequence exhausted");
            for (x, v) in self.state.iter_mut().zip(&self.directions) {
                *x ^= v[c];
            }
        }
        self.index += 1;
        const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
        self.state.iter().map(|&x| f64::from(x) * SCALE).collect()
    }
}

/// The first `n` Sobol points after the all-zeros point.
pub fn sobol_points(dims: usize, n: usize) -> Result<Vec<Vec<f64>>, SamplingError> {
    let mut gen = SobolGenerator::new(dims)?;
    gen.next_point();
    Ok((0..n).map(|_| gen.next_point()).collect())
}

/// Plain pseudo-random points, kept only as a discrepancy baseline.
pub fn uniform_points(dims: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StreamSeed::new(seed).rng();
    (0..n)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Alpha,
    Beta,
    Rho,
    Ants,
}

impl Param {
    pub fn is_integer(self) -> bool {
        matches!(self, Param::Ants)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::Alpha => "alpha",
            Param::Beta => "beta",
            Param::Rho => "rho",
            Param::Ants => "ants",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub param: Param,
    pub low: f64,
    pub high: f64,
}

impl Dimension {
    pub fn new(param: Param, low: f64, high: f64) -> Self {
        Self { param, low, high }
    }
}

/// Affine map of a unit coordinate into a dimension's range. Integer
/// dimensions round half away from zero and clamp to the range.
pub fn scale_unit(u: f64, dim: &Dimension) -> f64 {
    let v = dim.low + u * (dim.high - dim.low);
    if dim.param.is_integer() {
        v.round().clamp(dim.low, dim.high)
    } else {
        v
    }
}

/// Sampled dimensions plus fixed values for parameters that are not swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub dims: Vec<Dimension>,
    pub fixed: ParameterTuple,
}

impl ParameterSpace {
    /// alpha in [0.5, 2], beta in [1, 5], rho in [0.1, 0.9], ants in [50, 250].
    pub fn case_study() -> Self {
        Self {
            dims: vec![
                Dimension::new(Param::Alpha, 0.5, 2.0),
                Dimension::new(Param::Beta, 1.0, 5.0),
                Dimension::new(Param::Rho, 0.1, 0.9),
                Dimension::new(Param::Ants, 50.0, 250.0),
            ],
            fixed: ParameterTuple {
                index: 0,
                alpha: 1.0,
                beta: 3.0,
                rho: 0.5,
                ants: 150,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |msg: String| Err(SamplingError::InvalidSpace(msg));
        if self.dims.is_empty() {
            return bad("no dimensions".into());
        }
        let mut seen = BTreeSet::new();
        for d in &self.dims {
            if !seen.insert(d.param as u8) {
                return bad(format!("{} listed twice", d.param));
            }
            if !(d.low < d.high) {
                return bad(format!(
                    "{}: low {} must be below high {}",
                    d.param, d.low, d.high
                ));
            }
            match d.param {
                Param::Alpha | Param::Beta if d.low <= 0.0 => {
                    return bad(format!("{} must be positive", d.param));
                }
                Param::Rho if d.low < 0.0 || d.high >= 1.0 => {
                    return bad("rho range must lie within [0, 1)".into());
                }
                Param::Ants if d.low < 1.0 => return bad("ants must be at least 1".into()),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    /// Reject non-power-of-two base counts.
    Strict,
    /// Log a warning and continue.
    Warn,
}

/// Saltelli design without second-order rows: `N * (D + 2)` tuples.
///
/// Rows are emitted per base point `j` as `A_j`, then `A_B^(1)_j ..
/// A_B^(D)_j` (column `i` of `B` substituted into `A`), then `B_j`, so
/// consecutive tuples differ in exactly one parameter.
pub fn saltelli_sample(
    space: &ParameterSpace,
    n: usize,
    strictness: Strictness,
) -> Result<Vec<ParameterTuple>, SamplingError> {
    space.validate()?;
    if !n.is_power_of_two() {
        match strictness {
            Strictness::Strict => return Err(SamplingError::NotPowerOfTwo(n)),
            Strictness::Warn => {
                log::warn!("saltelli base count {n} is not a power of two; balance is lost")
            }
        }
    }
    let d = space.dims.len();
    let base = sobol_points(2 * d, n)?;
    let mut out = Vec::with_capacity(n * (d + 2));
    for row in &base {
        let (a, b) = row.split_at(d);
        out.push(space.tuple_from_unit(out.len(), a));
        for i in 0..d {
            let mut ab = a.to_vec();
            ab[i] = b[i];
            out.push(space.tuple_from_unit(out.len(), &ab));
        }
        out.push(space.tuple_from_unit(out.len(), b));
    }
    Ok(out)
}

impl ParameterSpace {
    fn tuple_from_unit(&self, index: usize, unit: &[f64]) -> ParameterTuple {
        let mut t = ParameterTuple {
            index,
            ..self.fixed
        };
        for (dim, &u) in self.dims.iter().zip(unit) {
            let v = scale_unit(u, dim);
            match dim.param {
                Param::Alpha => t.alpha = v,
                Param::Beta => t.beta = v,
                Param::Rho => t.rho = v,
                Param::Ants => t.ants = v as usize,
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterTuple {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub ants: usize,
}

/// Reals are written in shortest round-trip form so reading back is exact.
pub fn write_tuples_csv<W: Write>(tuples: &[ParameterTuple], out: W) -> Result<(), SamplingError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| SamplingError::Csv(e.to_string());
    w.write_record(TUPLE_CSV_HEADER.split(','))
        .map_err(csv_err)?;
    for t in tuples {
        w.write_record([
            t.index.to_string(),
            t.alpha.to_string(),
            t.beta.to_string(),
            t.rho.to_string(),
            t.ants.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SamplingError::Csv(e.to_string()))
}

pub fn read_tuples_csv<R: Read>(input: R) -> Result<Vec<ParameterTuple>, SamplingError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| SamplingError::Csv(e.to_string()))?,
        None => return Err(SamplingError::Csv("empty file, header missing".into())),
    };
    let header: Vec<&str> = header.iter().collect();
    if header.join(",") != TUPLE_CSV_HEADER {
        return Err(SamplingError::Csv(format!(
            "expected header `{TUPLE_CSV_HEADER}`, found `{}`",
            header.join(",")
        )));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (lineno, rec) in records.enumerate() {
        let rec = rec.map_err(|e| SamplingError::Csv(e.to_string()))?;
        let line = lineno + 2;
        if rec.len() != 5 {
            return Err(SamplingError::Csv(format!(
                "line {line}: expected 5 fields"
            )));
        }
        let num = |i: usize| -> Result<f64, SamplingError> {
            rec[i].parse::<f64>().map_err(|_| {
                SamplingError::Csv(format!("line {line}: non-numeric field `{}`", &rec[i]))
            })
        };
        let int = |i: usize| -> Result<usize, SamplingError> {
            rec[i].parse::<usize>().map_err(|_| {
                SamplingError::Csv(format!(
                    "line {line}: expected an integer, found `{}`",
                    &rec[i]
                ))
            })
        };
        let t = ParameterTuple {
            index: int(0)?,
            alpha: num(1)?,
            beta: num(2)?,
            rho: num(3)?,
            ants: int(4)?,
        };
        if !seen.insert(t.index) {
            return Err(SamplingError::Csv(format!(
                "line {line}: duplicate index {}",
                t.index
            )));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_tuples(path: impl AsRef<Path>, tuples: &[ParameterTuple]) -> Result<(), SamplingError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_tuples_csv(tuples, &mut buf)?;
    fs::write(path, buf).map_err(|source| SamplingError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_tuples(path: impl AsRef<Path>) -> Result<Vec<ParameterTuple>, SamplingError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| SamplingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_tuples_csv(file)
}
