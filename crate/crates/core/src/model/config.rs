use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channel widths of the three convolutions in every column.
pub const COLUMN_CHANNELS: [usize; 3] = [64, 128, 1024];
/// Channel widths of the head convolutions before the class layer.
pub const HEAD_CHANNELS: [usize; 4] = [1024, 512, 256, 128];
/// Kernel lengths of the three default columns.
pub const DEFAULT_KERNEL_LENGTHS: [usize; 3] = [1, 3, 5];

/// Uniform rational scaling of every channel width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WidthFactor {
    num: u32,
    den: u32,
}

impl WidthFactor {
    pub const ONE: Self = Self { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidConfig(format!(
                "width factor {num}/{den} must be positive"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    /// `floor(channels * num / den)`.
    pub fn scale(self, channels: usize) -> usize {
        channels * self.num as usize / self.den as usize
    }
}

impl Default for WidthFactor {
    fn default() -> Self {
        Self::ONE
    }
}

impl fmt::Display for WidthFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthFactor {
    type Err = Error;

    /// Accepts `"n"` or `"n/d"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::InvalidConfig(format!("width factor {s:?} is not of the form n or n/d"));
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Self::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnConfig {
    pub kernel_length: usize,
    pub channels: [usize; 3],
}

impl ColumnConfig {
    pub fn new(kernel_length: usize) -> Self {
        Self {
            kernel_length,
            channels: COLUMN_CHANNELS,
        }
    }
}

/// Architecture hyperparameters. Channel counts are stored unscaled; the
/// width factor is applied when layers are built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MCPNetConfig {
    pub columns: Vec<ColumnConfig>,
    pub head_channels: [usize; 4],
    pub num_classes: usize,
    pub n_points: usize,
    pub width_factor: WidthFactor,
}

/// Expected feature-map shapes for one sample of `n` points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeChain {
    pub input: Vec<usize>,
    pub columns: Vec<ColumnShapes>,
    pub aggregated: Vec<usize>,
    pub head: Vec<Vec<usize>>,
    pub logits: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnShapes {
    pub f_c1: Vec<usize>,
    pub f_c2: Vec<usize>,
    pub f_c3: Vec<usize>,
    pub f_g: Vec<usize>,
    pub f_p: Vec<usize>,
}

impl MCPNetConfig {
    pub fn new(kernel_lengths: &[usize], num_classes: usize, n_points: usize) -> Self {
        Self {
            columns: kernel_lengths
                .iter()
                .map(|&k| ColumnConfig::new(k))
                .collect(),
            head_channels: HEAD_CHANNELS,
            num_classes,
            n_points,
            width_factor: WidthFactor::ONE,
        }
    }

    /// The first `columns` of the default kernel lengths (1, 3, 5).
    pub fn with_columns(columns: usize, num_classes: usize, n_points: usize) -> Self {
        let ks: Vec<usize> = DEFAULT_KERNEL_LENGTHS
            .iter()
            .copied()
            .take(columns)
            .collect();
        Self::new(&ks, num_classes, n_points)
    }

    pub fn with_width_factor(mut self, wf: WidthFactor) -> Self {
        self.width_factor = wf;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.columns.is_empty() {
            return bad("at least one column is required".into());
        }
        if self.num_classes < 2 {
            return bad(format!("{} classes, need at least 2", self.num_classes));
        }
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        for (i, col) in self.columns.iter().enumerate() {
            if col.kernel_length % 2 == 0 {
                return bad(format!(
                    "column {i} kernel length {} is even",
                    col.kernel_length
                ));
            }
            if self.column_widths(i).contains(&0) {
                return bad(format!(
                    "column {i} has a zero-width layer at width factor {}",
                    self.width_factor
                ));
            }
        }
        if self.head_widths().contains(&0) {
            return bad(format!(
                "head has a zero-width layer at width factor {}",
                self.width_factor
            ));
        }
        Ok(())
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_widths(&self, col: usize) -> [usize; 3] {
        self.columns[col]
            .channels
            .map(|c| self.width_factor.scale(c))
    }

    pub fn head_widths(&self) -> [usize; 4] {
        self.head_channels.map(|c| self.width_factor.scale(c))
    }

    /// Width of one column's output: first layer plus pooled global feature.
    pub fn column_output_width(&self, col: usize) -> usize {
        let w = self.column_widths(col);
        w[0] + w[2]
    }

    pub fn aggregated_width(&self) -> usize {
        (0..self.columns.len())
            .map(|c| self.column_output_width(c))
            .sum()
    }

    pub fn shape_chain(&self, n: usize) -> ShapeChain {
        let columns = (0..self.columns.len())
            .map(|c| {
                let w = self.column_widths(c);
                ColumnShapes {
                    f_c1: vec![n, w[0]],
                    f_c2: vec![n, w[1]],
                    f_c3: vec![n, w[2]],
                    f_g: vec![w[2]],
                    f_p: vec![n, w[0] + w[2]],
                }
            })
            .collect();
        ShapeChain {
            input: vec![n, 2],
            columns,
            aggregated: vec![n, self.aggregated_width()],
            head: self.head_widths().iter().map(|&h| vec![n, h]).collect(),
            logits: vec![n, self.num_classes],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_factor_parsing_and_scaling() {
        let wf: WidthFactor = "1/16".parse().unwrap();
        assert_eq!(COLUMN_CHANNELS.map(|c| wf.scale(c)), [4, 8, 64]);
        assert_eq!("2".parse::<WidthFactor>().unwrap().scale(64), 128);
        assert!("0/3".parse::<WidthFactor>().is_err());
        assert!("a/b".parse::<WidthFactor>().is_err());
        assert_eq!(wf.to_string(), "1/16");
    }

    #[test]
    fn default_chain_matches_architecture() {
        let cfg = MCPNetConfig::with_columns(3, 4, 512);
        cfg.validate().unwrap();
        let chain = cfg.shape_chain(512);
        for col in &chain.columns {
            assert_eq!(col.f_c1, [512, 64]);
            assert_eq!(col.f_c2, [512, 128]);
            assert_eq!(col.f_c3, [512, 1024]);
            assert_eq!(col.f_g, [1024]);
            assert_eq!(col.f_p, [512, 1088]);
        }
        assert_eq!(chain.aggregated, [512, 3264]);
        assert_eq!(
            chain.head,
            vec![
                vec![512, 1024],
                vec![512, 512],
                vec![512, 256],
                vec![512, 128]
            ]
        );
        assert_eq!(chain.logits, [512, 4]);
    }

    #[test]
    fn validation() {
        assert!(MCPNetConfig::new(&[], 3, 8).validate().is_err());
        assert!(MCPNetConfig::new(&[2], 3, 8).validate().is_err());
        assert!(MCPNetConfig::new(&[1], 1, 8).validate().is_err());
        assert!(MCPNetConfig::new(&[1], 3, 0).validate().is_err());
        let tiny =
            MCPNetConfig::new(&[1], 3, 8).with_width_factor(WidthFactor::new(1, 128).unwrap());
        assert!(matches!(tiny.validate(), Err(Error::InvalidConfig(_))));
        assert_eq!(MCPNetConfig::with_columns(2, 3, 8).columns.len(), 2);
    }
}
