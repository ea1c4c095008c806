use crate::error::AdError;

/// Compressed list of index groups: group `g` is
/// `indices[offsets[g]..offsets[g + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Segments {
    pub fn new(offsets: Vec<usize>, indices: Vec<usize>) -> Result<Self, AdError> {
        if offsets.first() != Some(&0) {
            return Err(AdError::BadSegments("offsets must start at 0".into()));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(AdError::BadSegments("offsets must be non-decreasing".into()));
        }
        if *offsets.last().unwrap() != indices.len() {
            return Err(AdError::BadSegments(format!(
                "last offset {} != index count {}",
                offsets.last().unwrap(),
                indices.len()
            )));
        }
        Ok(Self { offsets, indices })
    }

    pub fn from_groups<G: AsRef<[usize]>>(groups: &[G]) -> Self {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for g in groups {
            indices.extend_from_slice(g.as_ref());
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    /// A single group holding `0..n`.
    pub fn single_range(n: usize) -> Self {
        Self {
            offsets: vec![0, n],
            indices: (0..n).collect(),
        }
    }

    /// Groups each of `len` items by `key`, preserving input order within a
    /// group (stable counting sort).
    pub fn group_by_key(num_groups: usize, keys: &[usize], values: &[usize]) -> Self {
        debug_assert_eq!(keys.len(), values.len());
        let mut offsets = vec![0usize; num_groups + 1];
        for &k in keys {
            offsets[k + 1] += 1;
        }
        for g in 0..num_groups {
            offsets[g + 1] += offsets[g];
        }
        let mut cursor = offsets.clone();
        let mut indices = vec![0usize; keys.len()];
        for (&k, &v) in keys.iter().zip(values) {
            indices[cursor[k]] = v;
            cursor[k] += 1;
        }
        Self { offsets, indices }
    }

    #[inline]
    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn group(&self, g: usize) -> &[usize] {
        &self.indices[self.offsets[g]..self.offsets[g + 1]]
    }

    #[inline]
    pub fn group_len(&self, g: usize) -> usize {
        self.offsets[g + 1] - self.offsets[g]
    }

    pub fn num_indices(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.num_groups()).map(move |g| self.group(g))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}
