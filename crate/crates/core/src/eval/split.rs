use rand::seq::SliceRandom;

use super::EvalError;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `n_per_class` training nodes from every class, then `n_val`
/// validation and `n_test` test nodes from the remaining pool, all uniformly
/// without replacement. Index lists are returned sorted.
pub fn make_split(
    labels: &[usize],
    n_per_class: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<LabeledSplit, EvalError> {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    if num_classes == 0 {
        return Err(EvalError::Empty);
    }
    let mut in_train = vec![false; labels.len()];
    let mut train = Vec::with_capacity(n_per_class * num_classes);
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < n_per_class.max(1) {
            return Err(EvalError::InsufficientClass {
                class,
                available: members.len(),
                requested: n_per_class.max(1),
            });
        }
        members.shuffle(&mut stream_rng(seed, Stream::Split, 0, class as u64));
        for &i in &members[..n_per_class] {
            in_train[i] = true;
            train.push(i);
        }
    }
    let mut rest: Vec<usize> = (0..labels.len()).filter(|&i| !in_train[i]).collect();
    if rest.len() < n_val + n_test {
        return Err(EvalError::InsufficientRemainder {
            available: rest.len(),
            requested: n_val + n_test,
        });
    }
    rest.shuffle(&mut stream_rng(seed, Stream::Split, 1, 0));
    let mut val = rest[..n_val].to_vec();
    let mut test = rest[n_val..n_val + n_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(LabeledSplit {
        labels: labels.to_vec(),
        num_classes,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn balanced(k: usize, per: usize) -> Vec<usize> {
        (0..k * per).map(|i| i % k).collect()
    }

    #[test]
    fn cardinalities_and_disjointness() {
        let labels = balanced(3, 100);
        let s = make_split(&labels, 20, 100, 100, 4).unwrap();
        assert_eq!(s.train.len(), 60);
        assert_eq!(s.val.len(), 100);
        assert_eq!(s.test.len(), 100);
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 260);
        for c in 0..3 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
    }

    #[test]
    fn too_few_nodes() {
        let labels = balanced(3, 10);
        assert!(matches!(
            make_split(&labels, 20, 0, 0, 1),
            Err(EvalError::InsufficientClass { available: 10, requested: 20, .. })
        ));
        assert!(matches!(
            make_split(&labels, 5, 10, 10, 1),
            Err(EvalError::InsufficientRemainder { available: 15, .. })
        ));
    }

    #[test]
    fn seeded_and_reproducible() {
        let labels = balanced(3, 50);
        assert_eq!(make_split(&labels, 5, 20, 20, 9), make_split(&labels, 5, 20, 20, 9));
        assert_ne!(make_split(&labels, 5, 20, 20, 9), make_split(&labels, 5, 20, 20, 10));
    }
}
