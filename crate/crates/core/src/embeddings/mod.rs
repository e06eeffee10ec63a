//! Embedding records, centre-token pooling, feature composition and the
//! on-disk embedding store.

mod store;

pub use store::{export_jsonl, store_read, store_write, STORE_MAGIC};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::Magnification;

/// A `side x side` grid of `dim`-dimensional token embeddings, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    side: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    pub fn new(side: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || dim == 0 {
            return Err(Error::invalid("token grid needs a positive side and dimension"));
        }
        if data.len() != side * side * dim {
            return Err(Error::DimensionMismatch {
                expected: side * side * dim,
                actual: data.len(),
            });
        }
        Ok(Self { side, dim, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.side + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Mean over all tokens.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim];
        for tok in self.data.chunks_exact(self.dim) {
            for (a, &v) in acc.iter_mut().zip(tok) {
                *a += f64::from(v);
            }
        }
        let n = (self.side * self.side) as f64;
        acc.into_iter().map(|a| a / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub patch_id: String,
    pub slide_id: String,
    pub case_id: String,
    pub magnification: Magnification,
    pub cls: Vec<f32>,
    pub tokens: Option<TokenGrid>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.cls.len()
    }
}

/// How a probe feature vector is built from a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureMode {
    ClsOnly,
    /// Class embedding followed by the mean of the centre `n x n` tokens.
    ConcatCenter(usize),
    /// Mean of the centre `n x n` tokens only.
    CenterOnly(usize),
}

impl FeatureMode {
    pub fn needs_tokens(&self) -> bool {
        !matches!(self, FeatureMode::ClsOnly)
    }

    pub fn feature_len(&self, d: usize) -> usize {
        match self {
            FeatureMode::ConcatCenter(_) => 2 * d,
            _ => d,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::ClsOnly => write!(f, "cls_only"),
            FeatureMode::ConcatCenter(n) => write!(f, "concat_center:{n}"),
            FeatureMode::CenterOnly(n) => write!(f, "center_only:{n}"),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    /// Parses `cls_only`, `concat_center:N` or `center_only:N`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown feature mode {s:?}; expected cls_only, concat_center:N or center_only:N"));
        if s == "cls_only" {
            return Ok(FeatureMode::ClsOnly);
        }
        let (tag, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        if n < 2 || n % 2 != 0 {
            return Err(Error::invalid(format!("centre block size must be even and at least 2, got {n}")));
        }
        match tag {
            "concat_center" => Ok(FeatureMode::ConcatCenter(n)),
            "center_only" => Ok(FeatureMode::CenterOnly(n)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for FeatureMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureMode> for String {
    fn from(m: FeatureMode) -> String {
        m.to_string()
    }
}

/// Mean of the tokens whose row and column lie in
/// `[side/2 - n/2, side/2 + n/2)`.
pub fn center_pool(tokens: &TokenGrid, n: usize) -> Result<Vec<f64>> {
    let g = tokens.side;
    if n < 2 || n % 2 != 0 || n > g {
        return Err(Error::invalid(format!(
            "centre block size must be even and in [2, {g}], got {n}"
        )));
    }
    let lo = g / 2 - n / 2;
    let mut acc = vec![0.0f64; tokens.dim];
    for r in lo..lo + n {
        for c in lo..lo + n {
            for (a, &v) in acc.iter_mut().zip(tokens.token(r, c)) {
                *a += f64::from(v);
            }
        }
    }
    let count = (n * n) as f64;
    Ok(acc.into_iter().map(|a| a / count).collect())
}

/// Builds the probe feature vector for `record`.
pub fn compose_feature(record: &EmbeddingRecord, mode: FeatureMode) -> Result<Vec<f64>> {
    let tokens = || {
        record.tokens.as_ref().ok_or_else(|| {
            Error::invalid(format!("record {} has no token grid, required by {mode}", record.patch_id))
        })
    };
    let cls = || record.cls.iter().map(|&v| f64::from(v));
    Ok(match mode {
        FeatureMode::ClsOnly => cls().collect(),
        FeatureMode::ConcatCenter(n) => {
            let center = center_pool(tokens()?, n)?;
            cls().chain(center).collect()
        }
        FeatureMode::CenterOnly(n) => center_pool(tokens()?, n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grid(g: usize, d: usize, s: u64) -> TokenGrid {
        let mut rng = seed::rng(s);
        TokenGrid::new(g, d, (0..g * g * d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    fn record(d: usize, tokens: Option<TokenGrid>) -> EmbeddingRecord {
        EmbeddingRecord {
            patch_id: "p".into(),
            slide_id: "s".into(),
            case_id: "c".into(),
            magnification: Magnification::X20,
            cls: (0..d).map(|i| i as f32 * 0.5).collect(),
            tokens,
        }
    }

    #[test]
    fn full_block_is_grid_mean() {
        let t = random_grid(14, 3, 1);
        let pooled = center_pool(&t, 14).unwrap();
        for (a, b) in pooled.iter().zip(t.mean()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn center_block_only() {
        let mut data = vec![0.0f32; 14 * 14 * 2];
        for r in 6..8 {
            for c in 6..8 {
                let i = (r * 14 + c) * 2;
                data[i] = 3.0;
                data[i + 1] = -1.5;
            }
        }
        let t = TokenGrid::new(14, 2, data).unwrap();
        assert_eq!(center_pool(&t, 2).unwrap(), vec![3.0, -1.5]);
    }

    #[test]
    fn nested_loop_oracle() {
        let t = random_grid(14, 3, 2);
        let got = center_pool(&t, 4).unwrap();
        for k in 0..3 {
            let mut s = 0.0;
            for r in 5..9 {
                for c in 5..9 {
                    s += f64::from(t.data()[(r * 14 + c) * 3 + k]);
                }
            }
            assert!((got[k] - s / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_block_sizes() {
        let t = random_grid(14, 3, 2);
        for n in [0, 1, 3, 16] {
            assert!(center_pool(&t, n).is_err());
        }
        assert!("center_only:3".parse::<FeatureMode>().is_err());
        assert!("middle:2".parse::<FeatureMode>().is_err());
    }

    #[test]
    fn feature_layouts() {
        let r = record(4, Some(random_grid(14, 4, 3)));
        let cls = compose_feature(&r, FeatureMode::ClsOnly).unwrap();
        assert_eq!(cls, r.cls.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let cat = compose_feature(&r, FeatureMode::ConcatCenter(2)).unwrap();
        assert_eq!(cat.len(), 8);
        assert_eq!(&cat[..4], &cls[..]);
        let center = compose_feature(&r, FeatureMode::CenterOnly(2)).unwrap();
        assert_eq!(&cat[4..], &center[..]);
        assert!(compose_feature(&record(4, None), FeatureMode::CenterOnly(2)).is_err());
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in [FeatureMode::ClsOnly, FeatureMode::ConcatCenter(2), FeatureMode::CenterOnly(14)] {
            assert_eq!(m.to_string().parse::<FeatureMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<FeatureMode>(&json).unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn center_pool_is_linear(s in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, half in 1usize..=7) {
            let x = random_grid(14, 3, s);
            let y = random_grid(14, 3, s ^ 0xabc);
            let mixed: Vec<f32> = x.data().iter().zip(y.data()).map(|(p, q)| (a * f64::from(*p) + b * f64::from(*q)) as f32).collect();
            let z = TokenGrid::new(14, 3, mixed).unwrap();
            let n = 2 * half;
            let (px, py, pz) = (center_pool(&x, n).unwrap(), center_pool(&y, n).unwrap(), center_pool(&z, n).unwrap());
            for k in 0..3 {
                // f32 storage of the mixed grid bounds the achievable precision.
                prop_assert!((pz[k] - (a * px[k] + b * py[k])).abs() < 1e-6);
            }
        }
    }
}
