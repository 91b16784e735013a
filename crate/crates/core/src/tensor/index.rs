use super::memory::TrackedVec;
use crate::error::{Error, Result};

/// Marker stored in unused (padding) slots of a ragged row.
pub const PAD_INDEX: u32 = u32::MAX;

/// Per-row key indices in canonical form: each row holds `len(r) <= cols`
/// pairwise distinct indices sorted ascending, followed by [`PAD_INDEX`]
/// padding.
#[derive(Debug, Clone)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    data: TrackedVec<u32>,
    lens: TrackedVec<u32>,
}

impl IndexMatrix {
    /// All rows empty.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: TrackedVec::filled(PAD_INDEX, (rows, cols)),
            lens: TrackedVec::filled(0, (rows, 1)),
        }
    }

    /// Builds from explicit rows, validating canonical form.
    pub fn from_rows<R: AsRef<[usize]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut m = Self::empty(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() > cols {
                return Err(Error::shape(
                    "IndexMatrix::from_rows",
                    format!("row {r} has {} indices, capacity {cols}", row.len()),
                ));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "row {r} indices must be strictly ascending"
                )));
            }
            let dst = m.row_slots_mut(r);
            for (slot, &i) in dst.iter_mut().zip(row) {
                *slot = u32::try_from(i).map_err(|_| Error::InvalidIndex {
                    index: i,
                    width: u32::MAX as usize,
                })?;
            }
            m.lens.as_mut_slice()[r] = row.len() as u32;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Slot capacity per row (the requested k, clipped to the key count).
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.lens.as_slice()[r] as usize
    }

    /// The valid (non-padding) indices of row `r`.
    pub fn row(&self, r: usize) -> &[u32] {
        let start = r * self.cols;
        &self.data.as_slice()[start..start + self.row_len(r)]
    }

    pub fn row_vec(&self, r: usize) -> Vec<usize> {
        self.row(r).iter().map(|&i| i as usize).collect()
    }

    pub fn byte_len(&self) -> usize {
        self.data.byte_len() + self.lens.byte_len()
    }

    pub(crate) fn row_slots_mut(&mut self, r: usize) -> &mut [u32] {
        let start = r * self.cols;
        &mut self.data.as_mut_slice()[start..start + self.cols]
    }

    pub(crate) fn set_row_len(&mut self, r: usize, len: usize) {
        debug_assert!(len <= self.cols);
        self.lens.as_mut_slice()[r] = len as u32;
    }

    /// Raw slot storage including padding, row-major `[rows, cols]`.
    pub fn slots(&self) -> &[u32] {
        self.data.as_slice()
    }

    /// Checks distinctness, ascending order and padding of every row.
    pub fn is_canonical(&self) -> bool {
        (0..self.rows).all(|r| {
            let start = r * self.cols;
            let slots = &self.data.as_slice()[start..start + self.cols];
            let len = self.row_len(r);
            slots[..len].windows(2).all(|w| w[0] < w[1])
                && slots[..len].iter().all(|&i| i != PAD_INDEX)
                && slots[len..].iter().all(|&i| i == PAD_INDEX)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_keep_padding() {
        let m = IndexMatrix::from_rows(&[vec![1, 4], vec![0]], 3).unwrap();
        assert_eq!(m.row(0), &[1, 4]);
        assert_eq!(m.row(1), &[0]);
        assert_eq!(m.slots()[2], PAD_INDEX);
        assert!(m.is_canonical());
    }

    #[test]
    fn unsorted_rows_are_rejected() {
        assert!(IndexMatrix::from_rows(&[vec![3, 1]], 2).is_err());
        assert!(IndexMatrix::from_rows(&[vec![1, 1]], 2).is_err());
    }
}
