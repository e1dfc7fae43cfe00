//! Layer-indexed hidden states with a per-token modality label.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Text,
}

/// Which tokens to stack when probing a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TokenGroup {
    Visual,
    Text,
    All,
}

impl TokenGroup {
    pub fn name(self) -> &'static str {
        match self {
            TokenGroup::Visual => "visual",
            TokenGroup::Text => "text",
            TokenGroup::All => "all",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "visual" => Some(TokenGroup::Visual),
            "text" => Some(TokenGroup::Text),
            "all" => Some(TokenGroup::All),
            _ => None,
        }
    }

    pub fn contains(self, m: Modality) -> bool {
        match self {
            TokenGroup::Visual => m == Modality::Visual,
            TokenGroup::Text => m == Modality::Text,
            TokenGroup::All => true,
        }
    }
}

/// Hidden states for every layer of one prefill pass.
///
/// `states[0]` is the embedding output and `states[l]` the output of decoder
/// layer `l` (equivalently, the input to 0-based decoder layer `l`). Visual
/// tokens form a contiguous prefix and at least one text token exists.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    modality: Vec<Modality>,
    states: Vec<DenseMatrix>,
}

impl LayerTrace {
    pub fn new(modality: Vec<Modality>, states: Vec<DenseMatrix>) -> Result<Self> {
        let n = modality.len();
        if !modality.contains(&Modality::Text) {
            bail!(Validation, "trace has no text token");
        }
        let first_text = modality.iter().position(|m| *m == Modality::Text).unwrap_or(n);
        if modality[first_text..].contains(&Modality::Visual) {
            bail!(Validation, "visual tokens must form a prefix before all text tokens");
        }
        if states.is_empty() {
            bail!(Validation, "trace has no layers");
        }
        let dim = states[0].cols();
        for (l, s) in states.iter().enumerate() {
            if s.rows() != n || s.cols() != dim {
                bail!(Shape, "layer {l} is {}x{}, expected {n}x{dim}", s.rows(), s.cols());
            }
        }
        Ok(Self { modality, states })
    }

    pub fn num_layers(&self) -> usize {
        self.states.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.modality.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].cols()
    }

    pub fn num_visual(&self) -> usize {
        self.modality.iter().take_while(|m| **m == Modality::Visual).count()
    }

    pub fn modality(&self) -> &[Modality] {
        &self.modality
    }

    pub fn states(&self) -> &[DenseMatrix] {
        &self.states
    }

    pub fn layer(&self, l: usize) -> &DenseMatrix {
        &self.states[l]
    }

    /// Token indices belonging to `group`, ascending.
    pub fn group_indices(&self, group: TokenGroup) -> Vec<usize> {
        self.modality.iter().enumerate().filter(|(_, m)| group.contains(**m)).map(|(i, _)| i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use alloc::vec;

    #[test]
    fn validation() {
        use Modality::*;
        let m = DenseMatrix::zeros(3, 2);
        assert!(LayerTrace::new(vec![Visual, Visual, Text], vec![m.clone()]).is_ok());
        assert!(matches!(LayerTrace::new(vec![Visual, Visual, Visual], vec![m.clone()]), Err(Error::Validation(_))));
        assert!(matches!(LayerTrace::new(vec![Visual, Text, Visual], vec![m.clone()]), Err(Error::Validation(_))));
        assert!(matches!(
            LayerTrace::new(vec![Visual, Text, Text], vec![m, DenseMatrix::zeros(2, 2)]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn groups() {
        use Modality::*;
        let t = LayerTrace::new(vec![Visual, Visual, Text], vec![DenseMatrix::zeros(3, 1)]).unwrap();
        assert_eq!(t.group_indices(TokenGroup::Visual), vec![0, 1]);
        assert_eq!(t.group_indices(TokenGroup::Text), vec![2]);
        assert_eq!(t.group_indices(TokenGroup::All), vec![0, 1, 2]);
        assert_eq!(t.num_visual(), 2);
    }
}
