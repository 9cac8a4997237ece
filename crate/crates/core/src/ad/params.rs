use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat, deterministically ordered view of trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn empty() -> Self {
        ParamVector {
            segments: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn new(segments: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for s in &segments {
            if s.offset != expected {
                return Err(Error::invalid(format!(
                    "segment `{}` starts at {} but previous segments end at {expected}",
                    s.name, s.offset
                )));
            }
            expected += s.len();
        }
        if expected != values.len() {
            return Err(Error::invalid(format!(
                "segments cover {expected} values, got {}",
                values.len()
            )));
        }
        Ok(ParamVector { segments, values })
    }

    /// Append a segment at the end.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f64]) {
        let seg = Segment {
            name: name.into(),
            offset: self.values.len(),
            shape,
        };
        assert_eq!(seg.len(), values.len(), "segment `{}` length", seg.name);
        self.values.extend_from_slice(values);
        self.segments.push(seg);
    }

    /// Concatenate, prefixing every segment name with `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamVector) {
        for s in &other.segments {
            self.push(
                format!("{prefix}.{}", s.name),
                s.shape.clone(),
                &other.values[s.range()],
            );
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(self.segments.clone(), values)
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamVector {
            segments: self.segments.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Little-endian `f64` blob with no header.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn values_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Format(format!(
                "parameter blob length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_gaps() {
        let segs = vec![
            Segment { name: "a".into(), offset: 0, shape: vec![2] },
            Segment { name: "b".into(), offset: 3, shape: vec![1] },
        ];
        assert!(ParamVector::new(segs, vec![0.0; 4]).is_err());
    }

    #[test]
    fn prefixing_keeps_contiguity() {
        let mut inner = ParamVector::empty();
        inner.push("w", vec![2, 2], &[1.0, 2.0, 3.0, 4.0]);
        inner.push("b", vec![2], &[5.0, 6.0]);
        let mut outer = ParamVector::empty();
        outer.push("x", vec![1], &[0.0]);
        outer.extend_prefixed("net", &inner);
        assert_eq!(outer.segment("net.b"), Some(&[5.0, 6.0][..]));
        assert_eq!(outer.segments()[2].offset, 5);
        assert!(ParamVector::new(outer.segments().to_vec(), outer.values().to_vec()).is_ok());
    }

    proptest! {
        #[test]
        fn blob_round_trip_is_bit_exact(values in proptest::collection::vec(proptest::num::f64::ANY, 0..64)) {
            let mut p = ParamVector::empty();
            p.push("all", vec![values.len()], &values);
            let back = ParamVector::values_from_le_bytes(&p.to_le_bytes()).unwrap();
            prop_assert_eq!(back.len(), values.len());
            for (a, b) in back.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
