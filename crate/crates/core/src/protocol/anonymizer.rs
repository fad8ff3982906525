use crate::error::{Error, Result};
use crate::rng::{Domain, SeedStream};

/// Per-client relabeling `y -> π(y)`. Lives on the client; only the
/// anonymized values ever reach the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anonymizer {
    client_id: u32,
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Anonymizer {
    /// Fisher–Yates shuffle of `0..classes` drawn from the stream keyed by
    /// `(seed, client_id)`.
    pub fn new(seed: u64, client_id: u32, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidDimension("anonymizer needs at least one class".into()));
        }
        let mut stream = SeedStream::new(seed, Domain::Anonymizer, client_id as u64);
        let forward = stream.permutation(classes);
        let mut inverse = vec![0; classes];
        for (y, &a) in forward.iter().enumerate() {
            inverse[a] = y;
        }
        Ok(Self { client_id, forward, inverse })
    }

    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn classes(&self) -> usize {
        self.forward.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.forward
    }

    pub fn apply(&self, y: usize) -> usize {
        self.forward[y]
    }

    pub fn invert(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn apply_all(&self, ys: &[usize]) -> Vec<usize> {
        ys.iter().map(|&y| self.apply(y)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_identity() {
        assert_eq!(Anonymizer::new(5, 0, 1).unwrap().permutation(), &[0]);
    }

    #[test]
    fn invert_undoes_apply() {
        let a = Anonymizer::new(11, 3, 10).unwrap();
        for y in 0..10 {
            assert_eq!(a.invert(a.apply(y)), y);
            assert_eq!(a.apply(a.invert(y)), y);
        }
    }

    #[test]
    fn clients_get_different_permutations() {
        let perms: Vec<_> = (0..4).map(|k| Anonymizer::new(1, k, 8).unwrap().permutation().to_vec()).collect();
        assert!(perms.windows(2).any(|w| w[0] != w[1]));
    }
}
