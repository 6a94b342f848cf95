use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::operators::{AnalysisOperator, SiteRule};
use crate::rng::SeededRng;

/// One part of a layer's analysis operator, as written in configs:
/// `dense:P`, `fQsNnS` (Q x Q windows, stride N, S filters per site), or
/// `fQsNnS:truncated` for the truncated site count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisSpec {
    Dense {
        rows: usize,
    },
    Block {
        q: usize,
        stride: usize,
        filters_per_site: usize,
        rule: SiteRule,
    },
}

impl AnalysisSpec {
    /// Builds the operator with i.i.d. `Normal(0, stddev^2)` coefficients.
    pub fn build(&self, side: usize, seed: u64, stddev: f64) -> Result<AnalysisOperator> {
        match *self {
            AnalysisSpec::Dense { rows } => {
                AnalysisOperator::random_dense(rows, side * side, seed, stddev)
            }
            AnalysisSpec::Block {
                q,
                stride,
                filters_per_site,
                rule,
            } => AnalysisOperator::random_block_sparse(
                q,
                stride,
                filters_per_site,
                side,
                rule,
                seed,
                stddev,
            ),
        }
    }

    /// Checks the spec against an image side without building anything.
    pub fn validate(&self, side: usize) -> Result<()> {
        match *self {
            AnalysisSpec::Dense { rows } if rows == 0 => {
                Err(Error::InvalidArgument("dense operator needs P >= 1".into()))
            }
            AnalysisSpec::Block { q, .. } if q > side => Err(Error::InvalidArgument(format!(
                "window {self} exceeds the image side {side}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Fuses the parts, each drawn from its own seeded stream.
pub fn build_fused(specs: &[AnalysisSpec], side: usize, seed: u64, stddev: f64) -> Result<AnalysisOperator> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("at least one analysis spec is required".into()));
    }
    let parts = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let part_seed = SeededRng::stream(seed, i as u64).next_u64();
            s.build(side, part_seed, stddev)
        })
        .collect::<Result<Vec<_>>>()?;
    AnalysisOperator::fuse(parts)
}

impl fmt::Display for AnalysisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AnalysisSpec::Dense { rows } => write!(f, "dense:{rows}"),
            AnalysisSpec::Block {
                q,
                stride,
                filters_per_site,
                rule,
            } => {
                write!(f, "f{q}s{stride}n{filters_per_site}")?;
                if rule == SiteRule::Truncated {
                    write!(f, ":truncated")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for AnalysisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("invalid analysis spec `{s}` (expected `dense:P` or `fQsNnS`)"));
        if let Some(rows) = s.strip_prefix("dense:") {
            let rows: usize = rows.parse().map_err(|_| bad())?;
            if rows == 0 {
                return Err(bad());
            }
            return Ok(AnalysisSpec::Dense { rows });
        }
        let (body, rule) = match s.split_once(':') {
            Some((body, "truncated")) => (body, SiteRule::Truncated),
            Some((body, "fit")) => (body, SiteRule::Fit),
            Some(_) => return Err(bad()),
            None => (s, SiteRule::Fit),
        };
        let rest = body.strip_prefix('f').ok_or_else(bad)?;
        let (q, rest) = rest.split_once('s').ok_or_else(bad)?;
        let (stride, filters) = rest.split_once('n').ok_or_else(bad)?;
        let parse = |t: &str| t.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
        Ok(AnalysisSpec::Block {
            q: parse(q)?,
            stride: parse(stride)?,
            filters_per_site: parse(filters)?,
            rule,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_notations() {
        assert_eq!("dense:100".parse::<AnalysisSpec>().unwrap(), AnalysisSpec::Dense { rows: 100 });
        assert_eq!(
            "f5s2n10".parse::<AnalysisSpec>().unwrap(),
            AnalysisSpec::Block {
                q: 5,
                stride: 2,
                filters_per_site: 10,
                rule: SiteRule::Fit
            }
        );
        let t: AnalysisSpec = "f7s3n10:truncated".parse().unwrap();
        assert_eq!(t.to_string(), "f7s3n10:truncated");
        for bad in ["dense:", "dense:0", "f5s2", "g5s2n10", "f0s2n10", "f5s2n10:odd", ""] {
            assert!(bad.parse::<AnalysisSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn validation_rejects_oversized_windows() {
        let s: AnalysisSpec = "f29s1n1".parse().unwrap();
        assert!(s.validate(28).is_err());
        assert!(s.validate(29).is_ok());
    }

    #[test]
    fn reference_fusion_has_1800_rows() {
        let specs: Vec<AnalysisSpec> = ["f5s2n10:truncated", "f7s3n10:truncated", "f14s7n10", "f28s28n10"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let l = build_fused(&specs, 28, 1, 1e-2).unwrap();
        let rows: Vec<usize> = l.parts().iter().map(|p| p.rows).collect();
        assert_eq!(rows, vec![1210, 490, 90, 10]);
        assert_eq!(l.rows(), 1800);
    }
}
