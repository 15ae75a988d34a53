use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A uniformly random permutation of `len` spatial positions.
pub fn spatial_permutation<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    perm
}

/// Gathers spatial positions per image: `out[n, c, p] = f[n, c, perms[n][p]]`
/// for every channel `c`, so each spatial column moves as a unit.
pub fn apply_spatial_permutation(f: &Tensor, perms: &[Vec<usize>]) -> Result<Tensor> {
    let s = f.shape();
    if perms.len() != s.n {
        return Err(Error::shape(format!(
            "{} permutations for {} images",
            perms.len(),
            s.n
        )));
    }
    let plane = s.plane();
    for p in perms {
        let mut seen = vec![false; plane];
        if p.len() != plane
            || !p
                .iter()
                .all(|&i| i < plane && !std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::invalid(format!(
                "not a permutation of {plane} positions"
            )));
        }
    }
    let mut out = Tensor::zeros(s);
    for (n, perm) in perms.iter().enumerate() {
        for c in 0..s.c {
            let src = f.plane(n, c);
            for (dst, &i) in out.plane_mut(n, c).iter_mut().zip(perm) {
                *dst = src[i];
            }
        }
    }
    Ok(out)
}

/// Shuffles the spatial positions of every image with one permutation per
/// image, drawn in batch order from `rng`.
pub fn spatial_shuffle<R: Rng + ?Sized>(f: &Tensor, rng: &mut R) -> Result<Tensor> {
    let s = f.shape();
    let perms: Vec<_> = (0..s.n)
        .map(|_| spatial_permutation(s.plane(), rng))
        .collect();
    apply_spatial_permutation(f, &perms)
}
