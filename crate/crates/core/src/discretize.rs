//! Depth-interval quantization into `K` sub-intervals, either uniform (UD) or
//! spacing-increasing (SID, uniform in log-depth).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "UD")]
    Uniform,
    #[serde(rename = "SID")]
    SpacingIncreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationScheme {
    pub mode: Mode,
    /// Lower depth bound `a` in meters.
    pub min_depth: f64,
    /// Upper depth bound `b` in meters.
    pub max_depth: f64,
    /// Number of sub-intervals `K`.
    pub bins: usize,
}

/// Bin map with [`DiscretizationScheme::ignore_index`] marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDepthMap {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<usize>,
    pub scheme: DiscretizationScheme,
}

impl DiscretizationScheme {
    pub fn new(mode: Mode, min_depth: f64, max_depth: f64, bins: usize) -> Result<Self> {
        let s = DiscretizationScheme {
            mode,
            min_depth,
            max_depth,
            bins,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("discretization needs at least one bin".into()));
        }
        if !self.min_depth.is_finite() || !self.max_depth.is_finite() || self.max_depth <= self.min_depth {
            return Err(Error::Config(format!(
                "depth range [{}, {}] must be finite with a < b",
                self.min_depth, self.max_depth
            )));
        }
        match self.mode {
            Mode::Uniform if self.min_depth < 0.0 => {
                Err(Error::Config("UD requires a >= 0".into()))
            }
            Mode::SpacingIncreasing if self.min_depth <= 0.0 => Err(Error::Config(
                "SID requires a > 0 (logarithm undefined otherwise)".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Sentinel bin value for pixels excluded from losses and metrics.
    pub fn ignore_index(&self) -> usize {
        self.bins
    }

    /// The `K + 1` edges `l_0 = a < l_1 < ... < l_K = b`.
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let (a, b, k) = (self.min_depth, self.max_depth, self.bins as f64);
        let mut edges: Vec<f64> = (0..=self.bins)
            .map(|j| {
                let j = j as f64;
                match self.mode {
                    Mode::Uniform => a + (b - a) * j / k,
                    Mode::SpacingIncreasing => (a.ln() + (b / a).ln() * j / k).exp(),
                }
            })
            .collect();
        edges[0] = a;
        edges[self.bins] = b;
        Ok(edges)
    }

    pub fn encode(&self, depth: f64) -> Result<usize> {
        let edges = self.thresholds()?;
        encode_with(&edges, depth)
    }

    pub fn decode(&self, bin: usize) -> Result<f64> {
        if bin >= self.bins {
            return Err(Error::Config(format!("bin {bin} outside [0, {})", self.bins)));
        }
        let edges = self.thresholds()?;
        Ok(self.representative(&edges, bin))
    }

    /// All `K` representative depths, indexed by bin.
    pub fn representatives(&self) -> Result<Vec<f64>> {
        let edges = self.thresholds()?;
        Ok((0..self.bins).map(|j| self.representative(&edges, j)).collect())
    }

    fn representative(&self, edges: &[f64], j: usize) -> f64 {
        match self.mode {
            Mode::Uniform => 0.5 * (edges[j] + edges[j + 1]),
            Mode::SpacingIncreasing => (edges[j] * edges[j + 1]).sqrt(),
        }
    }

    /// Encodes a row-major depth map; pixels with `mask == false` get the
    /// ignore sentinel.
    pub fn encode_map(&self, depth: &[f64], mask: &[bool], height: usize, width: usize) -> Result<DiscreteDepthMap> {
        if depth.len() != height * width || mask.len() != depth.len() {
            return Err(Error::shape(
                "encode_map",
                format!("{height}×{width} map with {} depths and {} mask entries", depth.len(), mask.len()),
            ));
        }
        let edges = self.thresholds()?;
        let bins = depth
            .iter()
            .zip(mask)
            .map(|(&d, &valid)| if valid { encode_with(&edges, d) } else { Ok(self.ignore_index()) })
            .collect::<Result<_>>()?;
        Ok(DiscreteDepthMap {
            height,
            width,
            bins,
            scheme: *self,
        })
    }

    /// Root-mean-square log error of `decode ∘ encode` over the given depths:
    /// the best RMSE_log any predictor restricted to this scheme's
    /// representative depths can reach on them.
    pub fn quantization_rmse_log(&self, depths: &[f64]) -> Result<f64> {
        if depths.is_empty() {
            return Err(Error::Config("no depths to quantize".into()));
        }
        let edges = self.thresholds()?;
        let mut sum = 0.0;
        for &d in depths {
            let q = self.representative(&edges, encode_with(&edges, d)?);
            sum += (q.ln() - d.ln()).powi(2);
        }
        Ok((sum / depths.len() as f64).sqrt())
    }
}

fn encode_with(edges: &[f64], depth: f64) -> Result<usize> {
    if !depth.is_finite() {
        return Err(Error::NonFinite(format!("depth {depth} passed to encode")));
    }
    let k = edges.len() - 1;
    let d = depth.clamp(edges[0], edges[k]);
    // Number of edges <= d, minus one, is the largest j with l_j <= d.
    let j = edges.partition_point(|&e| e <= d).saturating_sub(1);
    Ok(j.min(k - 1))
}

impl DiscreteDepthMap {
    /// Representative depths per pixel; ignored pixels decode to NaN.
    pub fn decode_map(&self) -> Result<Vec<f64>> {
        let reps = self.scheme.representatives()?;
        let ignore = self.scheme.ignore_index();
        self.bins
            .iter()
            .map(|&b| match b {
                b if b == ignore => Ok(f64::NAN),
                b if b < ignore => Ok(reps[b]),
                b => Err(Error::Config(format!("bin {b} outside scheme"))),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn ud(a: f64, b: f64, k: usize) -> DiscretizationScheme {
        DiscretizationScheme::new(Mode::Uniform, a, b, k).unwrap()
    }

    fn sid(a: f64, b: f64, k: usize) -> DiscretizationScheme {
        DiscretizationScheme::new(Mode::SpacingIncreasing, a, b, k).unwrap()
    }

    #[test]
    fn uniform_edges() {
        assert_eq!(ud(0.0, 10.0, 5).thresholds().unwrap(), vec![0., 2., 4., 6., 8., 10.]);
    }

    #[test]
    fn sid_edges_are_powers_of_e() {
        let edges = sid(1.0, 5f64.exp(), 5).thresholds().unwrap();
        for (j, e) in edges.iter().enumerate() {
            let want = (j as f64).exp();
            assert!((e - want).abs() <= 1e-12 * want, "{j}: {e} vs {want}");
        }
    }

    #[test]
    fn sid_first_edge_for_kitti_range() {
        // 80^(1/80) evaluated with 50-digit arithmetic (mpmath).
        const L1: f64 = 1.056_303_271_457_476_8;
        let edges = sid(1.0, 80.0, 80).thresholds().unwrap();
        assert!((edges[1] - L1).abs() < 1e-14, "{}", edges[1]);
    }

    #[test]
    fn sid_rejects_nonpositive_min() {
        assert!(DiscretizationScheme::new(Mode::SpacingIncreasing, 0.0, 10.0, 4).is_err());
        assert!(DiscretizationScheme::new(Mode::Uniform, 0.0, 10.0, 4).is_ok());
        assert!(DiscretizationScheme::new(Mode::Uniform, 1.0, 10.0, 0).is_err());
        assert!(DiscretizationScheme::new(Mode::Uniform, 3.0, 2.0, 3).is_err());
    }

    #[test]
    fn encode_examples() {
        let s = ud(0.0, 10.0, 5);
        assert_eq!(s.encode(3.5).unwrap(), 1);
        assert_eq!(s.encode(10.0).unwrap(), 4);
        assert_eq!(s.encode(1e9).unwrap(), 4);
        assert_eq!(s.encode(-3.0).unwrap(), 0);
        assert!(s.encode(f64::NAN).is_err());
        assert!(s.encode(f64::INFINITY).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(ud(0.0, 10.0, 5).decode(0).unwrap(), 1.0);
        let s = sid(1.0, E * E, 2);
        assert!((s.decode(0).unwrap() - 0.5f64.exp()).abs() < 1e-15);
        assert!(s.decode(2).is_err());
    }

    #[test]
    fn sid_decode_is_log_midpoint() {
        let s = sid(0.5, 120.0, 37);
        let edges = s.thresholds().unwrap();
        for j in 0..37 {
            let mid = 0.5 * (edges[j].ln() + edges[j + 1].ln());
            assert!((s.decode(j).unwrap().ln() - mid).abs() < 1e-12);
        }
    }

    #[test]
    fn map_roundtrip_constant_and_masked() {
        let s = sid(1.0, 80.0, 16);
        let depth = vec![7.3; 12];
        let m = s.encode_map(&depth, &[true; 12], 3, 4).unwrap();
        let b0 = s.encode(7.3).unwrap();
        assert!(m.bins.iter().all(|&b| b == b0));
        let masked = s.encode_map(&depth, &[false; 12], 3, 4).unwrap();
        assert!(masked.bins.iter().all(|&b| b == s.ignore_index()));
        assert!(masked.decode_map().unwrap().iter().all(|v| v.is_nan()));
        assert!(s.encode_map(&depth, &[true; 12], 4, 4).is_err());
    }
}
