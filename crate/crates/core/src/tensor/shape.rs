//! Shape arithmetic and broadcasting index maps.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes, aligned on trailing axes.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps each flat index of a broadcast output onto the flat index of one input.
pub(crate) enum IndexMap {
    Identity,
    Table(Vec<usize>),
}

impl IndexMap {
    /// `input` must broadcast to `output`.
    pub(crate) fn new(input: &[usize], output: &[usize]) -> IndexMap {
        if input == output {
            return IndexMap::Identity;
        }
        let n_out = numel(output);
        let n_in = numel(input);
        let trailing = output.len() >= input.len() && output[output.len() - input.len()..] == *input;
        if trailing {
            return IndexMap::Table((0..n_out).map(|i| i % n_in.max(1)).collect());
        }
        let rank = output.len();
        let pad = rank - input.len();
        let in_strides = strides(input);
        // stride of each output axis inside the input (0 where broadcast)
        let eff: Vec<usize> = (0..rank)
            .map(|ax| {
                if ax < pad || input[ax - pad] == 1 {
                    0
                } else {
                    in_strides[ax - pad]
                }
            })
            .collect();
        let mut table = Vec::with_capacity(n_out);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..n_out {
            table.push(off);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += eff[ax];
                if idx[ax] < output[ax] {
                    break;
                }
                off -= eff[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        IndexMap::Table(table)
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Identity => i,
            IndexMap::Table(t) => t[i],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast_shapes(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shapes(&[], &[2]), Some(vec![2]));
    }

    #[test]
    fn index_map_handles_inner_broadcast() {
        let m = IndexMap::new(&[2, 1], &[2, 3]);
        let got: Vec<usize> = (0..6).map(|i| m.get(i)).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1]);
        let m = IndexMap::new(&[1, 3], &[2, 3]);
        let got: Vec<usize> = (0..6).map(|i| m.get(i)).collect();
        assert_eq!(got, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }
}
