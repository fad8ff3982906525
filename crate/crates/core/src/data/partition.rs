use rand::Rng;
use rand_distr::Gamma;

use super::{Dataset, Shard};
use crate::error::{Error, Result};
use crate::rng::{Domain, SeedStream};

/// Label-skewed horizontal split: for every class, Dirichlet(`alpha`)
/// proportions over `k` clients decide how that class's samples are dealt.
/// Empty shards are repaired by moving one sample from the largest shard.
pub fn partition_noniid(ds: &Dataset, k: usize, alpha: f64, seed: u64) -> Result<Vec<Shard>> {
    check_k(ds, k)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Partition(format!("alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Partition(e.to_string()))?;
    let mut stream = SeedStream::new(seed, Domain::Partition, 0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];

    for class in 0..ds.class_count() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        stream.shuffle(&mut idx);
        let mut weights: Vec<f64> = (0..k).map(|_| stream.rng_mut().sample(gamma)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            weights = vec![1.0; k];
        }
        let total: f64 = weights.iter().sum();
        let n = idx.len();
        let mut acc = 0.0;
        let mut start = 0;
        for (client, w) in weights.iter().enumerate() {
            acc += w;
            let end = if client + 1 == k { n } else { (((acc / total) * n as f64).floor() as usize).clamp(start, n) };
            members[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }

    while let Some(empty) = members.iter().position(Vec::is_empty) {
        // Largest shard, lowest id on ties.
        let donor = (0..k).fold(0, |best, c| if members[c].len() > members[best].len() { c } else { best });
        members[donor].sort_unstable();
        let moved = members[donor].pop().expect("donor is nonempty since k <= n");
        members[empty].push(moved);
    }
    Ok(build_shards(ds, members))
}

/// Class-blind split into `k` shards whose sizes differ by at most one.
pub fn partition_equal(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Shard>> {
    check_k(ds, k)?;
    let mut stream = SeedStream::new(seed, Domain::Partition, 1);
    let perm = stream.permutation(ds.len());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, i) in perm.into_iter().enumerate() {
        members[pos % k].push(i);
    }
    Ok(build_shards(ds, members))
}

fn check_k(ds: &Dataset, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    if k > ds.len() {
        return Err(Error::Partition(format!("{k} clients for {} samples", ds.len())));
    }
    Ok(())
}

fn build_shards(ds: &Dataset, members: Vec<Vec<usize>>) -> Vec<Shard> {
    members
        .into_iter()
        .enumerate()
        .map(|(client, mut origin)| {
            origin.sort_unstable();
            Shard::new(client as u32, ds.subset(&origin), origin).expect("indices unique by construction")
        })
        .collect()
}
