use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::datasets::{gen_example1, gen_planted_sparse, load_csv, load_idx, DataKind, Dataset, PlantedSpec};
use crate::error::{FansError, Result};
use crate::perturb::{default_baseline, Baseline};

fn bad(flag: &str, value: &str, expected: &str) -> FansError {
    FansError::config(format!("{flag} `{value}`: expected {expected}"))
}

fn numbers(flag: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| bad(flag, s, "comma-separated finite numbers"))
        })
        .collect()
}

macro_rules! display_serialize {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
    };
}

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Csv(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
    Example1 { n: usize, seed: u64 },
    Planted { n: usize, d: usize, k: usize, seed: u64 },
}

impl FromStr for DataSpec {
    type Err = FansError;

    fn from_str(s: &str) -> Result<Self> {
        let ints = |rest: &str, min: usize, max: usize, expected: &str| -> Result<Vec<u64>> {
            let v: Vec<u64> = rest
                .split(':')
                .map(|p| p.parse::<u64>().map_err(|_| bad("--data", s, expected)))
                .collect::<Result<_>>()?;
            if (min..=max).contains(&v.len()) {
                Ok(v)
            } else {
                Err(bad("--data", s, expected))
            }
        };
        if let Some(rest) = s.strip_prefix("example1:") {
            let v = ints(rest, 1, 2, "example1:N[:SEED]")?;
            return Ok(DataSpec::Example1 {
                n: v[0] as usize,
                seed: v.get(1).copied().unwrap_or(0),
            });
        }
        if let Some(rest) = s.strip_prefix("planted:") {
            let v = ints(rest, 3, 4, "planted:N:D:K[:SEED]")?;
            return Ok(DataSpec::Planted {
                n: v[0] as usize,
                d: v[1] as usize,
                k: v[2] as usize,
                seed: v.get(3).copied().unwrap_or(0),
            });
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let (images, labels) = rest
                .split_once(',')
                .ok_or_else(|| bad("--data", s, "idx:IMAGES,LABELS"))?;
            return Ok(DataSpec::Idx {
                images: images.into(),
                labels: labels.into(),
            });
        }
        if s.is_empty() {
            return Err(bad("--data", s, "a path or generator spec"));
        }
        Ok(DataSpec::Csv(s.into()))
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSpec::Csv(p) => write!(f, "{}", p.display()),
            DataSpec::Idx { images, labels } => write!(f, "idx:{},{}", images.display(), labels.display()),
            DataSpec::Example1 { n, seed } => write!(f, "example1:{n}:{seed}"),
            DataSpec::Planted { n, d, k, seed } => write!(f, "planted:{n}:{d}:{k}:{seed}"),
        }
    }
}

display_serialize!(DataSpec);

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        let loaded = match self {
            DataSpec::Csv(p) => load_csv(p, None),
            DataSpec::Idx { images, labels } => load_idx(images, labels, None),
            DataSpec::Example1 { n, seed } => gen_example1(*n, *seed),
            DataSpec::Planted { n, d, k, seed } => {
                gen_planted_sparse(PlantedSpec::new(*n, *d, *k), *seed).map(|t| t.dataset)
            }
        };
        let ds = loaded.map_err(|e| FansError::config(format!("--data {self}: {e}")))?;
        if ds.is_empty() {
            return Err(FansError::config(format!("--data {self}: no rows")));
        }
        Ok(ds)
    }
}

/// A dataset row or an explicit input vector.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Row(usize),
    Vector(Vec<f64>),
}

impl FromStr for TargetSpec {
    type Err = FansError;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(row) = s.trim().parse::<usize>() {
            return Ok(TargetSpec::Row(row));
        }
        numbers("--target", s).map(TargetSpec::Vector)
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Row(r) => write!(f, "{r}"),
            TargetSpec::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

display_serialize!(TargetSpec);

impl TargetSpec {
    pub fn resolve(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let x = match self {
            TargetSpec::Row(r) => ds
                .inputs
                .get(*r)
                .cloned()
                .ok_or_else(|| FansError::config(format!("--target {r}: data has only {} rows", ds.len())))?,
            TargetSpec::Vector(v) => v.clone(),
        };
        if x.len() != ds.dim() {
            return Err(FansError::config(format!(
                "--target has {} entries but the data has {} features",
                x.len(),
                ds.dim()
            )));
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineSpec {
    Auto,
    Zeros,
    Uniform,
    Values(Vec<f64>),
}

impl FromStr for BaselineSpec {
    type Err = FansError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(BaselineSpec::Auto),
            "zeros" => Ok(BaselineSpec::Zeros),
            "uniform" => Ok(BaselineSpec::Uniform),
            _ => numbers("--baseline", s).map(BaselineSpec::Values),
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::Auto => f.write_str("auto"),
            BaselineSpec::Zeros => f.write_str("zeros"),
            BaselineSpec::Uniform => f.write_str("uniform"),
            BaselineSpec::Values(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

display_serialize!(BaselineSpec);

impl BaselineSpec {
    pub fn build(&self, kind: DataKind, d: usize, seed: u64) -> Result<Baseline> {
        let b = match self {
            BaselineSpec::Auto => default_baseline(kind, d, seed)?,
            BaselineSpec::Zeros => Baseline::zeros(d),
            BaselineSpec::Uniform => Baseline::uniform(d, seed),
            BaselineSpec::Values(v) => Baseline::user(v.clone())?,
        };
        if b.dim() != d {
            return Err(FansError::config(format!(
                "--baseline has {} entries, expected {d}",
                b.dim()
            )));
        }
        Ok(b)
    }
}

/// `HxW` image shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
}

impl FromStr for Shape {
    type Err = FansError;

    fn from_str(s: &str) -> Result<Self> {
        let parsed = s
            .split_once(['x', 'X'])
            .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
        match parsed {
            Some((h, w)) if h > 0 && w > 0 => Ok(Shape { h, w }),
            _ => Err(bad("shape", s, "HxW with positive sides")),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

display_serialize!(Shape);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_specs() {
        assert_eq!(
            "example1:500".parse::<DataSpec>().unwrap(),
            DataSpec::Example1 { n: 500, seed: 0 }
        );
        assert_eq!(
            "planted:100:20:3:7".parse::<DataSpec>().unwrap(),
            DataSpec::Planted {
                n: 100,
                d: 20,
                k: 3,
                seed: 7
            }
        );
        assert!(matches!("idx:a,b".parse::<DataSpec>().unwrap(), DataSpec::Idx { .. }));
        assert!("planted:1:2".parse::<DataSpec>().is_err());
        assert_eq!("x.csv".parse::<DataSpec>().unwrap(), DataSpec::Csv("x.csv".into()));
    }

    #[test]
    fn missing_file_names_the_flag() {
        let e = DataSpec::Csv("/nonexistent/data.csv".into()).load().unwrap_err();
        assert!(e.to_string().contains("--data"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn targets_and_baselines() {
        assert_eq!("3".parse::<TargetSpec>().unwrap(), TargetSpec::Row(3));
        assert_eq!("1,1,1".parse::<TargetSpec>().unwrap(), TargetSpec::Vector(vec![1.0; 3]));
        assert_eq!("0.2".parse::<TargetSpec>().unwrap(), TargetSpec::Vector(vec![0.2]));
        assert_eq!(TargetSpec::Vector(vec![1.0, 0.5]).to_string(), "1.0,0.5");
        assert_eq!("zeros".parse::<BaselineSpec>().unwrap(), BaselineSpec::Zeros);
        assert!("a,b".parse::<BaselineSpec>().is_err());
        let b = BaselineSpec::Values(vec![1.0]).build(DataKind::Tabular, 2, 0);
        assert!(b.is_err());
    }

    #[test]
    fn shapes() {
        assert_eq!("28x28".parse::<Shape>().unwrap(), Shape { h: 28, w: 28 });
        assert!("0x3".parse::<Shape>().is_err());
        assert!("28".parse::<Shape>().is_err());
    }
}
